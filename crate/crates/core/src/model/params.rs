use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

use super::config::PenguinConfig;

/// Parameters of one encoder layer, in storage order.
pub const LAYER_PARAMS: [&str; 10] = [
    "attn.w_q",
    "attn.w_k",
    "attn.w_v",
    "attn.w_o",
    "norm1.gamma",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
    "norm2.gamma",
];

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Uniform,
    Normal(f64),
    Zeros,
    Ones,
}

/// Names and shapes of every parameter, in storage order.
pub fn param_layout(c: &PenguinConfig) -> Result<Vec<(String, Vec<usize>)>> {
    Ok(layout(c)?.into_iter().map(|(n, s, _)| (n, s)).collect())
}

fn layout(c: &PenguinConfig) -> Result<Vec<(String, Vec<usize>, Init)>> {
    let (d, n, dh) = (c.d_model, c.n_patches(), c.head_dim());
    let hd = c.heads * dh;
    let kv = c.kv_heads()? * dh;
    let mut out = vec![
        ("embed.w".to_string(), vec![c.patch_len, d], Init::Uniform),
        ("embed.b".to_string(), vec![d], Init::Zeros),
        ("pos".to_string(), vec![n, d], Init::Normal(0.02)),
    ];
    for l in 0..c.layers {
        let shapes = [
            (vec![d, hd], Init::Uniform),
            (vec![d, kv], Init::Uniform),
            (vec![d, kv], Init::Uniform),
            (vec![hd, d], Init::Uniform),
            (vec![d], Init::Ones),
            (vec![d, c.d_ff], Init::Uniform),
            (vec![c.d_ff], Init::Zeros),
            (vec![c.d_ff, d], Init::Uniform),
            (vec![d], Init::Zeros),
            (vec![d], Init::Ones),
        ];
        for (name, (shape, init)) in LAYER_PARAMS.iter().zip(shapes) {
            out.push((format!("layers.{l}.{name}"), shape, init));
        }
    }
    out.push(("head.w".to_string(), vec![n * d, c.horizon], Init::Uniform));
    out.push(("head.b".to_string(), vec![c.horizon], Init::Zeros));
    Ok(out)
}

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Float = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Float> ParamStore<T> {
    /// Fresh parameters: uniform ±1/√fan_in weights, N(0, 0.02) positions,
    /// zero biases, unit gains.
    pub fn init(config: &PenguinConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(config)? {
            let len: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Uniform => {
                    let bound = 1.0 / (shape[0] as f64).sqrt();
                    let u = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::Config(e.to_string()))?;
                    (0..len).map(|_| T::of(u.sample(&mut rng))).collect()
                }
                Init::Normal(sd) => {
                    let nd = Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))?;
                    (0..len).map(|_| T::of(nd.sample(&mut rng))).collect()
                }
                Init::Zeros => vec![T::zero(); len],
                Init::Ones => vec![T::one(); len],
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?.with_grad());
        }
        Ok(Self { names, tensors })
    }

    /// Assemble from named tensors, checking names and shapes against `config`.
    pub fn from_named(config: &PenguinConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let want = layout(config)?;
        if want.len() != named.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                want.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for ((wn, ws, _), (name, t)) in want.into_iter().zip(named) {
            if wn != name || ws != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match expected {wn} {ws:?}",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t.with_grad());
        }
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast::<U>().with_grad()).collect(),
        }
    }
}
