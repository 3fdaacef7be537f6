use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use super::kernels::{gemm, MatRef};
use super::{Float, Mask, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        rows: usize,
        inner: usize,
        cols: usize,
    },
    BatchMatMul {
        a: usize,
        b: usize,
        batch: usize,
        rows: usize,
        inner: usize,
        cols: usize,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
        bcast: Bcast,
    },
    Scale {
        a: usize,
        factor: T,
    },
    Relu {
        a: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Transpose {
        a: usize,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Reshape {
        a: usize,
    },
    Concat {
        parts: Vec<(usize, usize)>,
        rows: usize,
        width: usize,
    },
    Slice {
        a: usize,
        start: usize,
        end: usize,
        width: usize,
    },
    Softmax {
        a: usize,
        cols: usize,
    },
    RmsNorm {
        a: usize,
        cols: usize,
        inv_rms: Vec<T>,
    },
    AddTiled {
        a: usize,
        b: usize,
    },
    MulTiled {
        a: usize,
        b: usize,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    generation: u64,
}

/// Records primitive operations for one backward pass.
///
/// A tape is single-threaded. After [`Var::backward`] the recorded nodes are
/// dropped and every outstanding [`Var`] becomes stale.
#[derive(Clone)]
pub struct Tape<T: Float = f64> {
    inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                generation: 0,
            })),
        }
    }

    /// Binds a tensor as a leaf; it is differentiable iff the tensor requires grad.
    pub fn leaf(&self, tensor: &Tensor<T>) -> Var<T> {
        self.push(
            tensor.shape().to_vec(),
            Arc::clone(tensor.shared()),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Binds a tensor as a non-differentiable constant.
    pub fn constant(&self, tensor: &Tensor<T>) -> Var<T> {
        self.push(
            tensor.shape().to_vec(),
            Arc::clone(tensor.shared()),
            Op::Leaf,
            false,
        )
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all recorded nodes without computing gradients.
    pub fn clear(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.generation += 1;
    }

    fn push(&self, shape: Vec<usize>, value: Arc<Vec<T>>, op: Op<T>, requires_grad: bool) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: Rc::clone(&self.inner),
            id,
            generation: inner.generation,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var<T: Float = f64> {
    tape: Rc<RefCell<Inner<T>>>,
    id: usize,
    generation: u64,
}

impl<T: Float> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn is_scalar_shape(shape: &[usize]) -> bool {
    shape.is_empty() || shape == [1]
}

impl<T: Float> Var<T> {
    pub fn tape(&self) -> Tape<T> {
        Tape {
            inner: Rc::clone(&self.tape),
        }
    }

    fn live(&self) -> Result<()> {
        let inner = self.tape.borrow();
        if inner.generation != self.generation || self.id >= inner.nodes.len() {
            return Err(TensorError::StaleVar);
        }
        Ok(())
    }

    fn same_tape(&self, other: &Var<T>) -> Result<()> {
        if !Rc::ptr_eq(&self.tape, &other.tape) {
            return Err(TensorError::StaleVar);
        }
        other.live()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.borrow().nodes[self.id].shape.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.borrow().nodes[self.id].requires_grad
    }

    /// Current value as a detached tensor.
    pub fn value(&self) -> Tensor<T> {
        let inner = self.tape.borrow();
        let node = &inner.nodes[self.id];
        Tensor::from_shared(node.shape.clone(), Arc::clone(&node.value))
    }

    fn meta(&self) -> (Vec<usize>, Arc<Vec<T>>, bool) {
        let inner = self.tape.borrow();
        let node = &inner.nodes[self.id];
        (node.shape.clone(), Arc::clone(&node.value), node.requires_grad)
    }

    fn emit(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var<T> {
        self.tape().push(shape, Arc::new(value), op, requires_grad)
    }

    /// `a[..., m, k] · b[k, n] -> [..., m, n]`.
    pub fn matmul(&self, b: &Var<T>) -> Result<Var<T>> {
        self.live()?;
        self.same_tape(b)?;
        let (sa, va, ra) = self.meta();
        let (sb, vb, rb) = b.meta();
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let inner = sb[0];
        let cols = sb[1];
        let rows = va.len() / inner;
        let mut out = vec![T::zero(); rows * cols];
        gemm(
            MatRef::row_major(&va, rows, inner),
            MatRef::row_major(&vb, inner, cols),
            T::zero(),
            &mut out,
        );
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = cols;
        Ok(self.emit(
            shape,
            out,
            Op::MatMul {
                a: self.id,
                b: b.id,
                rows,
                inner,
                cols,
            },
            ra || rb,
        ))
    }

    /// Batched product `a[..., m, k] · b[..., k, n]` with identical leading dims.
    pub fn bmm(&self, b: &Var<T>) -> Result<Var<T>> {
        self.live()?;
        self.same_tape(b)?;
        let (sa, va, ra) = self.meta();
        let (sb, vb, rb) = b.meta();
        let r = sa.len();
        if r < 3 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (rows, inner, cols) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![T::zero(); batch * rows * cols];
        for bi in 0..batch {
            gemm(
                MatRef::row_major(&va[bi * rows * inner..(bi + 1) * rows * inner], rows, inner),
                MatRef::row_major(&vb[bi * inner * cols..(bi + 1) * inner * cols], inner, cols),
                T::zero(),
                &mut out[bi * rows * cols..(bi + 1) * rows * cols],
            );
        }
        let mut shape = sa.clone();
        shape[r - 1] = cols;
        Ok(self.emit(
            shape,
            out,
            Op::BatchMatMul {
                a: self.id,
                b: b.id,
                batch,
                rows,
                inner,
                cols,
            },
            ra || rb,
        ))
    }

    fn binary(&self, b: &Var<T>, kind: BinaryKind, name: &'static str) -> Result<Var<T>> {
        self.live()?;
        self.same_tape(b)?;
        let (sa, va, ra) = self.meta();
        let (sb, vb, rb) = b.meta();
        let (bcast, shape) = if sa == sb {
            (Bcast::Same, sa)
        } else if is_scalar_shape(&sa) {
            (Bcast::LhsScalar, sb)
        } else if is_scalar_shape(&sb) {
            (Bcast::RhsScalar, sa)
        } else {
            return Err(mismatch(name, &sa, &sb));
        };
        let len = va.len().max(vb.len());
        let at = |i: usize| if va.len() == 1 { va[0] } else { va[i] };
        let bt = |i: usize| if vb.len() == 1 { vb[0] } else { vb[i] };
        let out: Vec<T> = (0..len)
            .map(|i| match kind {
                BinaryKind::Add => at(i) + bt(i),
                BinaryKind::Sub => at(i) - bt(i),
                BinaryKind::Mul => at(i) * bt(i),
            })
            .collect();
        Ok(self.emit(
            shape,
            out,
            Op::Binary {
                kind,
                a: self.id,
                b: b.id,
                bcast,
            },
            ra || rb,
        ))
    }

    pub fn add(&self, b: &Var<T>) -> Result<Var<T>> {
        self.binary(b, BinaryKind::Add, "add")
    }

    pub fn sub(&self, b: &Var<T>) -> Result<Var<T>> {
        self.binary(b, BinaryKind::Sub, "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, b: &Var<T>) -> Result<Var<T>> {
        self.binary(b, BinaryKind::Mul, "mul")
    }

    pub fn scale(&self, factor: f64) -> Result<Var<T>> {
        self.live()?;
        let (shape, va, ra) = self.meta();
        let f = T::of(factor);
        let out = va.iter().map(|&v| v * f).collect();
        Ok(self.emit(shape, out, Op::Scale { a: self.id, factor: f }, ra))
    }

    pub fn relu(&self) -> Result<Var<T>> {
        self.live()?;
        let (shape, va, ra) = self.meta();
        let out = va.iter().map(|&v| v.max(T::zero())).collect();
        Ok(self.emit(shape, out, Op::Relu { a: self.id }, ra))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Result<Var<T>> {
        self.live()?;
        let (_, va, ra) = self.meta();
        let total = va.iter().copied().sum();
        Ok(self.emit(Vec::new(), vec![total], Op::Sum { a: self.id }, ra))
    }

    /// Mean of all elements as a rank-0 tensor.
    pub fn mean(&self) -> Result<Var<T>> {
        self.live()?;
        let (_, va, ra) = self.meta();
        let total: T = va.iter().copied().sum();
        let mean = total / T::of(va.len() as f64);
        Ok(self.emit(Vec::new(), vec![mean], Op::Mean { a: self.id }, ra))
    }

    pub fn transpose_last2(&self) -> Result<Var<T>> {
        self.live()?;
        let (sa, va, ra) = self.meta();
        let r = sa.len();
        if r < 2 {
            return Err(mismatch("transpose_last2", &sa, &[]));
        }
        let (rows, cols) = (sa[r - 2], sa[r - 1]);
        let batch = va.len() / (rows * cols);
        let mut out = vec![T::zero(); va.len()];
        for b in 0..batch {
            let off = b * rows * cols;
            for i in 0..rows {
                for j in 0..cols {
                    out[off + j * rows + i] = va[off + i * cols + j];
                }
            }
        }
        let mut shape = sa.clone();
        shape.swap(r - 2, r - 1);
        Ok(self.emit(
            shape,
            out,
            Op::Transpose {
                a: self.id,
                batch,
                rows,
                cols,
            },
            ra,
        ))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        self.live()?;
        let shape = shape.into();
        let (sa, va, ra) = self.meta();
        if shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != va.len() {
            return Err(mismatch("reshape", &sa, &shape));
        }
        Ok(self.tape().push(shape, va, Op::Reshape { a: self.id }, ra))
    }

    /// Concatenates along the last dimension; leading dims must agree.
    pub fn concat_lastdim(parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat_lastdim",
            reason: "no inputs".into(),
        })?;
        first.live()?;
        let (s0, _, _) = first.meta();
        if s0.is_empty() {
            return Err(mismatch("concat_lastdim", &s0, &[]));
        }
        let lead = &s0[..s0.len() - 1];
        let rows: usize = lead.iter().product();
        let mut metas = Vec::with_capacity(parts.len());
        let mut width = 0;
        let mut requires = false;
        for p in parts {
            first.same_tape(p)?;
            let (s, v, r) = p.meta();
            if s.len() != s0.len() || &s[..s.len() - 1] != lead {
                return Err(mismatch("concat_lastdim", &s0, &s));
            }
            let w = s[s.len() - 1];
            width += w;
            requires |= r;
            metas.push((p.id, w, v));
        }
        let mut out = Vec::with_capacity(rows * width);
        for row in 0..rows {
            for (_, w, v) in &metas {
                out.extend_from_slice(&v[row * w..(row + 1) * w]);
            }
        }
        let mut shape = s0.clone();
        *shape.last_mut().unwrap() = width;
        let parts = metas.iter().map(|(id, w, _)| (*id, *w)).collect();
        Ok(first.emit(shape, out, Op::Concat { parts, rows, width }, requires))
    }

    /// Columns `start..end` of the last dimension.
    pub fn slice_lastdim(&self, start: usize, end: usize) -> Result<Var<T>> {
        self.live()?;
        let (sa, va, ra) = self.meta();
        let width = *sa.last().ok_or_else(|| mismatch("slice_lastdim", &sa, &[]))?;
        if start >= end || end > width {
            return Err(TensorError::InvalidArgument {
                op: "slice_lastdim",
                reason: format!("range {start}..{end} outside last extent {width}"),
            });
        }
        let rows = va.len() / width;
        let mut out = Vec::with_capacity(rows * (end - start));
        for row in 0..rows {
            out.extend_from_slice(&va[row * width + start..row * width + end]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = end - start;
        Ok(self.emit(
            shape,
            out,
            Op::Slice {
                a: self.id,
                start,
                end,
                width,
            },
            ra,
        ))
    }

    /// Max-stabilised softmax over the last dimension.
    ///
    /// `mask`, when given, must match the trailing dimensions of `self` and is
    /// tiled over the leading ones. Disallowed positions come out exactly zero.
    pub fn softmax_lastdim(&self, mask: Option<&Mask>) -> Result<Var<T>> {
        self.live()?;
        let (sa, va, ra) = self.meta();
        let cols = *sa.last().ok_or_else(|| mismatch("softmax_lastdim", &sa, &[]))?;
        if let Some(m) = mask {
            let ms = m.shape();
            if ms.len() > sa.len() || ms != &sa[sa.len() - ms.len()..] {
                return Err(mismatch("softmax_lastdim", &sa, ms));
            }
        }
        let rows = va.len() / cols;
        let mask_rows = mask.map(|m| m.allowed().len() / cols).unwrap_or(1);
        let mut out = vec![T::zero(); va.len()];
        for row in 0..rows {
            let x = &va[row * cols..(row + 1) * cols];
            let allowed = mask.map(|m| {
                let mr = row % mask_rows;
                &m.allowed()[mr * cols..(mr + 1) * cols]
            });
            let ok = |j: usize| allowed.is_none_or(|a| a[j]);
            let mut max = T::neg_infinity();
            for (j, &v) in x.iter().enumerate() {
                if ok(j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                return Err(TensorError::DegenerateRow { row });
            }
            let y = &mut out[row * cols..(row + 1) * cols];
            let mut total = T::zero();
            for j in 0..cols {
                if ok(j) {
                    y[j] = (x[j] - max).exp();
                    total += y[j];
                }
            }
            let inv = T::one() / total;
            y.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.emit(sa, out, Op::Softmax { a: self.id, cols }, ra))
    }

    /// `x / sqrt(mean(x²) + eps)` over the last dimension, without gain.
    pub fn rms_norm_lastdim(&self, eps: f64) -> Result<Var<T>> {
        self.live()?;
        let (sa, va, ra) = self.meta();
        let cols = *sa.last().ok_or_else(|| mismatch("rms_norm_lastdim", &sa, &[]))?;
        let rows = va.len() / cols;
        let eps = T::of(eps);
        let n = T::of(cols as f64);
        let mut out = vec![T::zero(); va.len()];
        let mut inv_rms = Vec::with_capacity(rows);
        for row in 0..rows {
            let x = &va[row * cols..(row + 1) * cols];
            let ms = x.iter().map(|&v| v * v).sum::<T>() / n;
            let r = T::one() / (ms + eps).sqrt();
            for (o, &v) in out[row * cols..(row + 1) * cols].iter_mut().zip(x) {
                *o = v * r;
            }
            inv_rms.push(r);
        }
        Ok(self.emit(
            sa,
            out,
            Op::RmsNorm {
                a: self.id,
                cols,
                inv_rms,
            },
            ra,
        ))
    }

    fn tiled_shapes(&self, b: &Var<T>, op: &'static str) -> Result<(Vec<usize>, Arc<Vec<T>>, bool, Arc<Vec<T>>, bool)> {
        self.live()?;
        self.same_tape(b)?;
        let (sa, va, ra) = self.meta();
        let (sb, vb, rb) = b.meta();
        if sb.is_empty() || sb.len() > sa.len() || sb[..] != sa[sa.len() - sb.len()..] {
            return Err(mismatch(op, &sa, &sb));
        }
        Ok((sa, va, ra, vb, rb))
    }

    /// `a + b` where `b` matches the trailing dims of `a` and repeats over the rest.
    pub fn add_tiled(&self, b: &Var<T>) -> Result<Var<T>> {
        let (sa, va, ra, vb, rb) = self.tiled_shapes(b, "add_tiled")?;
        let n = vb.len();
        let out = va.iter().enumerate().map(|(i, &v)| v + vb[i % n]).collect();
        Ok(self.emit(sa, out, Op::AddTiled { a: self.id, b: b.id }, ra || rb))
    }

    /// `a * b` where `b` matches the trailing dims of `a` and repeats over the rest.
    pub fn mul_tiled(&self, b: &Var<T>) -> Result<Var<T>> {
        let (sa, va, ra, vb, rb) = self.tiled_shapes(b, "mul_tiled")?;
        let n = vb.len();
        let out = va.iter().enumerate().map(|(i, &v)| v * vb[i % n]).collect();
        Ok(self.emit(sa, out, Op::MulTiled { a: self.id, b: b.id }, ra || rb))
    }

    /// Reverse pass from this scalar. Clears the tape.
    ///
    /// Every differentiable leaf on the tape receives a gradient, zero when the
    /// loss does not depend on it.
    pub fn backward(&self) -> Result<Gradients<T>> {
        self.live()?;
        let mut inner = self.tape.borrow_mut();
        if inner.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let loss = &inner.nodes[self.id];
        if loss.value.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape.clone(),
            });
        }
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if loss.requires_grad {
            grads[self.id] = Some(vec![T::one()]);
        }
        let mut leaves = HashMap::new();
        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                leaves.insert(id, g);
            } else {
                propagate(nodes, node, &g, &mut grads);
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                leaves
                    .entry(id)
                    .or_insert_with(|| vec![T::zero(); node.value.len()]);
            }
        }
        let shapes = leaves
            .keys()
            .map(|&id| (id, nodes[id].shape.clone()))
            .collect();
        let generation = inner.generation;
        inner.nodes.clear();
        inner.generation += 1;
        if leaves.values().flatten().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { what: "gradient" });
        }
        Ok(Gradients {
            tape: Rc::as_ptr(&self.tape) as usize,
            generation,
            grads: leaves,
            shapes,
        })
    }
}

fn slot<'g, T: Float>(
    grads: &'g mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    id: usize,
) -> Option<&'g mut Vec<T>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
}

fn propagate<T: Float>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul {
            a,
            b,
            rows,
            inner,
            cols,
        } => {
            let dc = MatRef::row_major(g, rows, cols);
            if let Some(ga) = slot(grads, nodes, a) {
                let bv = MatRef::row_major(&nodes[b].value, inner, cols);
                gemm(dc, bv.t(), T::one(), ga);
            }
            if let Some(gb) = slot(grads, nodes, b) {
                let av = MatRef::row_major(&nodes[a].value, rows, inner);
                gemm(av.t(), dc, T::one(), gb);
            }
        }
        &Op::BatchMatMul {
            a,
            b,
            batch,
            rows,
            inner,
            cols,
        } => {
            let (sa, sb, sc) = (rows * inner, inner * cols, rows * cols);
            if let Some(ga) = slot(grads, nodes, a) {
                let bv = &nodes[b].value;
                for bi in 0..batch {
                    let dc = MatRef::row_major(&g[bi * sc..(bi + 1) * sc], rows, cols);
                    let bm = MatRef::row_major(&bv[bi * sb..(bi + 1) * sb], inner, cols);
                    gemm(dc, bm.t(), T::one(), &mut ga[bi * sa..(bi + 1) * sa]);
                }
            }
            if let Some(gb) = slot(grads, nodes, b) {
                let av = &nodes[a].value;
                for bi in 0..batch {
                    let dc = MatRef::row_major(&g[bi * sc..(bi + 1) * sc], rows, cols);
                    let am = MatRef::row_major(&av[bi * sa..(bi + 1) * sa], rows, inner);
                    gemm(am.t(), dc, T::one(), &mut gb[bi * sb..(bi + 1) * sb]);
                }
            }
        }
        &Op::Binary { kind, a, b, bcast } => {
            let av = Arc::clone(&nodes[a].value);
            let bv = Arc::clone(&nodes[b].value);
            let at = |i: usize| if av.len() == 1 { av[0] } else { av[i] };
            let bt = |i: usize| if bv.len() == 1 { bv[0] } else { bv[i] };
            // d(out)/d(lhs), d(out)/d(rhs) at element i
            let dl = |i: usize| match kind {
                BinaryKind::Add | BinaryKind::Sub => T::one(),
                BinaryKind::Mul => bt(i),
            };
            let dr = |i: usize| match kind {
                BinaryKind::Add => T::one(),
                BinaryKind::Sub => -T::one(),
                BinaryKind::Mul => at(i),
            };
            if let Some(ga) = slot(grads, nodes, a) {
                match bcast {
                    Bcast::LhsScalar => {
                        ga[0] += g.iter().enumerate().map(|(i, &d)| d * dl(i)).sum::<T>();
                    }
                    _ => ga.iter_mut().enumerate().for_each(|(i, v)| *v += g[i] * dl(i)),
                }
            }
            if let Some(gb) = slot(grads, nodes, b) {
                match bcast {
                    Bcast::RhsScalar => {
                        gb[0] += g.iter().enumerate().map(|(i, &d)| d * dr(i)).sum::<T>();
                    }
                    _ => gb.iter_mut().enumerate().for_each(|(i, v)| *v += g[i] * dr(i)),
                }
            }
        }
        &Op::Scale { a, factor } => {
            if let Some(ga) = slot(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(v, &d)| *v += d * factor);
            }
        }
        &Op::Relu { a } => {
            let av = Arc::clone(&nodes[a].value);
            if let Some(ga) = slot(grads, nodes, a) {
                for ((v, &d), &x) in ga.iter_mut().zip(g).zip(av.iter()) {
                    if x > T::zero() {
                        *v += d;
                    }
                }
            }
        }
        &Op::Sum { a } => {
            if let Some(ga) = slot(grads, nodes, a) {
                ga.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        &Op::Mean { a } => {
            if let Some(ga) = slot(grads, nodes, a) {
                let d = g[0] / T::of(ga.len() as f64);
                ga.iter_mut().for_each(|v| *v += d);
            }
        }
        &Op::Transpose {
            a,
            batch,
            rows,
            cols,
        } => {
            if let Some(ga) = slot(grads, nodes, a) {
                for b in 0..batch {
                    let off = b * rows * cols;
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[off + i * cols + j] += g[off + j * rows + i];
                        }
                    }
                }
            }
        }
        &Op::Reshape { a } => {
            if let Some(ga) = slot(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(v, &d)| *v += d);
            }
        }
        Op::Concat { parts, rows, width } => {
            let mut offset = 0;
            for &(id, w) in parts {
                if let Some(gp) = slot(grads, nodes, id) {
                    for row in 0..*rows {
                        let src = &g[row * width + offset..row * width + offset + w];
                        for (v, &d) in gp[row * w..(row + 1) * w].iter_mut().zip(src) {
                            *v += d;
                        }
                    }
                }
                offset += w;
            }
        }
        &Op::Slice {
            a,
            start,
            end,
            width,
        } => {
            if let Some(ga) = slot(grads, nodes, a) {
                let w = end - start;
                let rows = g.len() / w;
                for row in 0..rows {
                    let dst = &mut ga[row * width + start..row * width + end];
                    for (v, &d) in dst.iter_mut().zip(&g[row * w..(row + 1) * w]) {
                        *v += d;
                    }
                }
            }
        }
        &Op::Softmax { a, cols } => {
            let y = &node.value;
            if let Some(ga) = slot(grads, nodes, a) {
                for row in 0..y.len() / cols {
                    let r = row * cols..(row + 1) * cols;
                    let (yr, gr) = (&y[r.clone()], &g[r.clone()]);
                    let dot: T = yr.iter().zip(gr).map(|(&p, &d)| p * d).sum();
                    for ((v, &p), &d) in ga[r].iter_mut().zip(yr).zip(gr) {
                        *v += p * (d - dot);
                    }
                }
            }
        }
        Op::RmsNorm { a, cols, inv_rms } => {
            let (a, cols) = (*a, *cols);
            let xv = Arc::clone(&nodes[a].value);
            if let Some(ga) = slot(grads, nodes, a) {
                let n = T::of(cols as f64);
                for (row, &r) in inv_rms.iter().enumerate() {
                    let range = row * cols..(row + 1) * cols;
                    let (x, gr) = (&xv[range.clone()], &g[range.clone()]);
                    let dot: T = x.iter().zip(gr).map(|(&xi, &d)| xi * d).sum();
                    let coef = r * r * r * dot / n;
                    for ((v, &xi), &d) in ga[range].iter_mut().zip(x).zip(gr) {
                        *v += r * d - coef * xi;
                    }
                }
            }
        }
        &Op::AddTiled { a, b } => {
            if let Some(ga) = slot(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(v, &d)| *v += d);
            }
            if let Some(gb) = slot(grads, nodes, b) {
                let n = gb.len();
                for (i, &d) in g.iter().enumerate() {
                    gb[i % n] += d;
                }
            }
        }
        &Op::MulTiled { a, b } => {
            let av = Arc::clone(&nodes[a].value);
            let bv = Arc::clone(&nodes[b].value);
            let n = bv.len();
            if let Some(ga) = slot(grads, nodes, a) {
                for (i, (v, &d)) in ga.iter_mut().zip(g).enumerate() {
                    *v += d * bv[i % n];
                }
            }
            if let Some(gb) = slot(grads, nodes, b) {
                for (i, &d) in g.iter().enumerate() {
                    gb[i % n] += d * av[i];
                }
            }
        }
    }
}

/// Leaf gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T: Float = f64> {
    tape: usize,
    generation: u64,
    grads: HashMap<usize, Vec<T>>,
    shapes: HashMap<usize, Vec<usize>>,
}

impl<T: Float> Gradients<T> {
    fn key(&self, var: &Var<T>) -> Option<usize> {
        (Rc::as_ptr(&var.tape) as usize == self.tape && var.generation == self.generation)
            .then_some(var.id)
    }

    pub fn slice(&self, var: &Var<T>) -> Option<&[T]> {
        self.key(var).and_then(|id| self.grads.get(&id)).map(Vec::as_slice)
    }

    pub fn get(&self, var: &Var<T>) -> Option<Tensor<T>> {
        let id = self.key(var)?;
        let g = self.grads.get(&id)?;
        Tensor::new(self.shapes[&id].clone(), g.clone()).ok()
    }

    /// Adds the gradient of `var` into `tensor`'s accumulator.
    pub fn accumulate_into(&self, var: &Var<T>, tensor: &mut Tensor<T>) -> Result<()> {
        let g = self.slice(var).ok_or(TensorError::StaleVar)?;
        tensor.accumulate_grad(g)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
