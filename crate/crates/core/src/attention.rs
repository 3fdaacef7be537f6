//! Grouped multi-query attention with per-head additive bias.
//!
//! Heads are split into `g` groups of `n`. Every group owns one key and one
//! value projection; its `n` query heads are folded into the row dimension so
//! the whole group runs as a single batched product.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bias::BiasStack;
use crate::tensor::{Float, Mask, Result, Tape, Tensor, TensorError, Var};

/// Projection weights of one attention layer, already bound to a tape.
///
/// The per-head width is `d_h = ⌊d / h⌋`, so `h·d_h` may fall short of `d`.
///
/// `w_q` and `w_o` cover all `h` heads. `w_k` and `w_v` are `d × kv·d_h`
/// where `kv` is the number of key/value heads: `g` for grouped attention
/// and `h` for the multi-head reference.
pub struct AttnWeights<'a, T: Float> {
    pub w_q: &'a Var<T>,
    pub w_k: &'a Var<T>,
    pub w_v: &'a Var<T>,
    pub w_o: &'a Var<T>,
}

/// Bias and mask tensors prepared once per layer geometry.
#[derive(Clone, Debug)]
pub struct AttentionBias<T: Float> {
    tokens: usize,
    heads: usize,
    groups: usize,
    /// Per group, `[N·n, N]`; row `i·n + k` is head `k` of the group at query `i`.
    group_bias: Vec<Tensor<T>>,
    group_mask: Option<Mask>,
    head_bias: Vec<Tensor<T>>,
    head_mask: Option<Mask>,
}

impl<T: Float> AttentionBias<T> {
    pub fn new(stack: &BiasStack, causal: bool) -> Result<Self> {
        let (rows, cols) = (stack.rows(), stack.cols());
        if rows != cols {
            return Err(TensorError::InvalidArgument {
                op: "attention bias",
                reason: format!("self-attention needs a square bias, got {rows}x{cols}"),
            });
        }
        let n = stack.heads_per_group();
        let group_bias = (0..stack.groups())
            .map(|r| {
                let heads = stack.group(r);
                let mut data = Vec::with_capacity(rows * n * cols);
                for i in 0..rows {
                    for hb in heads {
                        data.extend(hb.matrix.row(i).iter().map(|&v| T::of(v)));
                    }
                }
                Tensor::new(vec![rows * n, cols], data)
            })
            .collect::<Result<Vec<_>>>()?;
        let head_bias = stack
            .heads()
            .iter()
            .map(|hb| Tensor::from_f64(vec![rows, cols], hb.matrix.data()))
            .collect::<Result<Vec<_>>>()?;
        let (group_mask, head_mask) = if causal {
            (
                Some(Mask::from_fn(rows * n, cols, |r, j| j <= r / n)?),
                Some(Mask::from_fn(rows, cols, |i, j| j <= i)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            tokens: rows,
            heads: stack.len(),
            groups: stack.groups(),
            group_bias,
            group_mask,
            head_bias,
            head_mask,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn heads_per_group(&self) -> usize {
        self.heads / self.groups
    }

    pub fn is_causal(&self) -> bool {
        self.group_mask.is_some()
    }
}

/// Inverted dropout on attention weights. Probability 0 is a no-op.
#[derive(Clone, Debug)]
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("probability {p} outside [0, 1)"),
            });
        }
        Ok(Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn apply<T: Float>(&mut self, w: Var<T>) -> Result<Var<T>> {
        if self.p == 0.0 {
            return Ok(w);
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let shape = w.shape();
        let n: usize = shape.iter().product();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.random::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        w.mul(&w.tape().constant(&Tensor::new(shape, mask)?))
    }
}

/// Post-softmax weights kept for inspection, one entry per group.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace<T: Float> {
    groups: Vec<Tensor<T>>,
    heads_per_group: usize,
}

impl<T: Float> AttentionTrace<T> {
    pub fn heads(&self) -> usize {
        self.groups.len() * self.heads_per_group
    }

    /// `N × N` weights of global head `head` (1-based) for batch element `sample`.
    pub fn head_weights(&self, sample: usize, head: usize) -> Option<Vec<Vec<f64>>> {
        if head == 0 || head > self.heads() {
            return None;
        }
        let n = self.heads_per_group;
        let (r, k) = ((head - 1) / n, (head - 1) % n);
        let w = &self.groups[r];
        let (rows, cols) = (w.shape()[1], w.shape()[2]);
        if sample >= w.shape()[0] {
            return None;
        }
        let base = &w.data()[sample * rows * cols..(sample + 1) * rows * cols];
        let tokens = rows / n;
        Some(
            (0..tokens)
                .map(|i| {
                    let row = (i * n + k) * cols;
                    base[row..row + cols].iter().map(|v| v.as_f64()).collect()
                })
                .collect(),
        )
    }

    /// Writes `{prefix}_head{H}.csv` for every head of batch element `sample`.
    pub fn write_csv(&self, dir: &Path, prefix: &str, sample: usize) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for head in 1..=self.heads() {
            let Some(rows) = self.head_weights(sample, head) else {
                continue;
            };
            let path = dir.join(format!("{prefix}_head{head}.csv"));
            let body: String = rows
                .iter()
                .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
                .collect();
            std::fs::write(&path, body)?;
            out.push(path);
        }
        Ok(out)
    }
}

fn check_weights<T: Float>(x: &Var<T>, w: &AttnWeights<'_, T>, heads: usize, kv: usize) -> Result<(usize, usize)> {
    let xs = x.shape();
    let d = *xs.last().unwrap_or(&0);
    let bad = |what: &str| TensorError::InvalidArgument {
        op: "attention",
        reason: what.to_string(),
    };
    if xs.len() != 3 {
        return Err(bad("input must be [batch, tokens, width]"));
    }
    if d < heads {
        return Err(bad("width must be at least the head count"));
    }
    let dh = d / heads;
    let expect = [
        (w.w_q.shape(), [d, heads * dh]),
        (w.w_k.shape(), [d, kv * dh]),
        (w.w_v.shape(), [d, kv * dh]),
        (w.w_o.shape(), [heads * dh, d]),
    ];
    for (got, want) in expect {
        if got != want {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: got,
                rhs: want.to_vec(),
            });
        }
    }
    Ok((d, dh))
}

/// Grouped attention over `x: [B, N, d]`, returning `[B, N, d]`.
pub fn penguin_attention<T: Float>(
    x: &Var<T>,
    w: &AttnWeights<'_, T>,
    bias: &AttentionBias<T>,
    dropout: Option<&mut Dropout>,
) -> Result<Var<T>> {
    grouped(x, w, bias, dropout, None)
}

/// As [`penguin_attention`], also recording the post-softmax weights.
pub fn penguin_attention_traced<T: Float>(
    x: &Var<T>,
    w: &AttnWeights<'_, T>,
    bias: &AttentionBias<T>,
) -> Result<(Var<T>, AttentionTrace<T>)> {
    let mut trace = AttentionTrace {
        groups: Vec::new(),
        heads_per_group: bias.heads_per_group(),
    };
    let out = grouped(x, w, bias, None, Some(&mut trace))?;
    Ok((out, trace))
}

fn grouped<T: Float>(
    x: &Var<T>,
    w: &AttnWeights<'_, T>,
    bias: &AttentionBias<T>,
    mut dropout: Option<&mut Dropout>,
    mut trace: Option<&mut AttentionTrace<T>>,
) -> Result<Var<T>> {
    let (g, n) = (bias.groups, bias.heads_per_group());
    let (_, dh) = check_weights(x, w, bias.heads, g)?;
    let xs = x.shape();
    let (b, tokens) = (xs[0], xs[1]);
    if tokens != bias.tokens {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            lhs: xs,
            rhs: vec![bias.tokens, bias.tokens],
        });
    }
    let tape = x.tape();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.matmul(w.w_q)?;
    let k = x.matmul(w.w_k)?;
    let v = x.matmul(w.w_v)?;
    let mut outs = Vec::with_capacity(g);
    for r in 0..g {
        let qr = q.slice_lastdim(r * n * dh, (r + 1) * n * dh)?.reshape(vec![b, tokens * n, dh])?;
        let kr = k.slice_lastdim(r * dh, (r + 1) * dh)?;
        let vr = v.slice_lastdim(r * dh, (r + 1) * dh)?;
        let scores = qr
            .bmm(&kr.transpose_last2()?)?
            .scale(scale)?
            .add_tiled(&tape.constant(&bias.group_bias[r]))?;
        let mut weights = scores.softmax_lastdim(bias.group_mask.as_ref())?;
        if let Some(t) = trace.as_deref_mut() {
            t.groups.push(weights.value());
        }
        if let Some(d) = dropout.as_deref_mut() {
            weights = d.apply(weights)?;
        }
        outs.push(weights.bmm(&vr)?.reshape(vec![b, tokens, n * dh])?);
    }
    let refs: Vec<&Var<T>> = outs.iter().collect();
    Var::concat_lastdim(&refs)?.matmul(w.w_o)
}

/// Plain multi-head attention, one head at a time, each with its own key and
/// value projection (`w_k`, `w_v` are `d × h·d_h`).
pub fn mha_reference<T: Float>(x: &Var<T>, w: &AttnWeights<'_, T>, bias: &AttentionBias<T>) -> Result<Var<T>> {
    let h = bias.heads;
    let (_, dh) = check_weights(x, w, h, h)?;
    let tokens = x.shape()[1];
    if tokens != bias.tokens {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            lhs: x.shape(),
            rhs: vec![bias.tokens, bias.tokens],
        });
    }
    let tape = x.tape();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(h);
    for head in 0..h {
        let cols = (head * dh, (head + 1) * dh);
        let q = x.matmul(&w.w_q.slice_lastdim(cols.0, cols.1)?)?;
        let k = x.matmul(&w.w_k.slice_lastdim(cols.0, cols.1)?)?;
        let v = x.matmul(&w.w_v.slice_lastdim(cols.0, cols.1)?)?;
        let weights = q
            .bmm(&k.transpose_last2()?)?
            .scale(scale)?
            .add_tiled(&tape.constant(&bias.head_bias[head]))?
            .softmax_lastdim(bias.head_mask.as_ref())?;
        outs.push(weights.bmm(&v)?);
    }
    let refs: Vec<&Var<T>> = outs.iter().collect();
    Var::concat_lastdim(&refs)?.matmul(w.w_o)
}

/// Expand grouped `d × g·d_h` key/value weights to `d × h·d_h` by repeating
/// each group's block for its `n` heads.
pub fn replicate_kv<T: Float>(w: &Tensor<T>, groups: usize, heads: usize) -> Result<Tensor<T>> {
    let s = w.shape();
    if s.len() != 2 || groups == 0 || heads % groups != 0 || s[1] % groups != 0 {
        return Err(TensorError::InvalidArgument {
            op: "replicate_kv",
            reason: format!("cannot spread {s:?} over {groups} groups and {heads} heads"),
        });
    }
    let (d, dh, n) = (s[0], s[1] / groups, heads / groups);
    let mut out = Vec::with_capacity(d * heads * dh);
    for row in w.data().chunks(s[1]) {
        for r in 0..groups {
            for _ in 0..n {
                out.extend_from_slice(&row[r * dh..(r + 1) * dh]);
            }
        }
    }
    Tensor::new(vec![d, heads * dh], out)
}

/// Convenience for tests and tools: run attention on plain tensors.
pub fn attention_forward<T: Float>(
    x: &Tensor<T>,
    weights: [&Tensor<T>; 4],
    bias: &AttentionBias<T>,
    reference: bool,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let xv = tape.constant(x);
    let [q, k, v, o] = weights.map(|t| tape.constant(t));
    let w = AttnWeights {
        w_q: &q,
        w_k: &k,
        w_v: &v,
        w_o: &o,
    };
    let out = if reference {
        mha_reference(&xv, &w, bias)?
    } else {
        penguin_attention(&xv, &w, bias, None)?
    };
    Ok(out.value())
}
