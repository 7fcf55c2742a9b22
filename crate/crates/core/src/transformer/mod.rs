//! Decoder-only causal transformer (GPT-2 layout) with hand-written backward pass.
//!
//! All parameters live in one flat buffer. The order, which is also the
//! checkpoint order, is:
//!
//! 1. `wte` token embedding, `[vocab_size, d_model]` (also the output head)
//! 2. `wpe` positional embedding, `[max_seq_len, d_model]`
//! 3. per layer: `ln1.g`, `ln1.b` `[d_model]`; `attn.w_qkv` `[d_model, 3*d_model]`;
//!    `attn.b_qkv` `[3*d_model]`; `attn.w_o` `[d_model, d_model]`; `attn.b_o`;
//!    `ln2.g`, `ln2.b`; `mlp.w_fc` `[d_model, d_ff]`; `mlp.b_fc` `[d_ff]`;
//!    `mlp.w_proj` `[d_ff, d_model]`; `mlp.b_proj` `[d_model]`
//! 4. `lnf.g`, `lnf.b` `[d_model]`
//!
//! Blocks are pre-norm with tanh-GELU MLPs; matrices are stored input-major
//! (`y = x · W`).

mod checkpoint;
mod generate;
mod model;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::Range;

use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use generate::{generate, SamplingParams};
pub use model::{cross_entropy, softmax_in_place, ForwardStats};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("expected {expected} targets, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least 2 tokens, got {0}")]
    SequenceTooShort(usize),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Floating-point type the model is instantiated over (f32 for training, f64 for checks).
pub trait Scalar: Float + FromPrimitive + Sum + Send + Sync + Debug + Default + 'static {}
impl<T: Float + FromPrimitive + Sum + Send + Sync + Debug + Default + 'static> Scalar for T {}

#[inline]
pub(crate) fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("literal fits the scalar type")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 2 layers, width 16: fast enough for tests and desk-scale experiments.
    Tiny,
    /// 6 layers, width 384, about 12M parameters at a 2048-token vocabulary.
    #[serde(rename = "mingpt12m")]
    MinGpt12M,
}

impl std::str::FromStr for Preset {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Self::Tiny),
            "mingpt12m" => Ok(Self::MinGpt12M),
            other => Err(ModelError::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset, vocab_size: usize, seed: u64) -> Self {
        match preset {
            Preset::Tiny => Self {
                n_layers: 2,
                n_heads: 2,
                d_model: 16,
                d_ff: 64,
                max_seq_len: 64,
                vocab_size,
                dropout: 0.0,
                seed,
            },
            Preset::MinGpt12M => Self {
                n_layers: 6,
                n_heads: 6,
                d_model: 384,
                d_ff: 1536,
                max_seq_len: 256,
                vocab_size,
                dropout: 0.1,
                seed,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("layer, head and width counts must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// `V·D + T·D + L·(4D² + 2·D·F + 9D + F) + 2D` (output head tied to `wte`).
    pub fn param_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        self.vocab_size * d
            + self.max_seq_len * d
            + self.n_layers * (4 * d * d + 2 * d * f + 9 * d + f)
            + 2 * d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let (d, f) = (c.d_model, c.d_ff);
        let wte = take(c.vocab_size * d);
        let wpe = take(c.max_seq_len * d);
        let layers = (0..c.n_layers)
            .map(|_| LayerLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * f),
                b_fc: take(f),
                w_proj: take(f * d),
                b_proj: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Self { wte, wpe, layers, lnf_g, lnf_b, total: off }
    }

    /// Named parameter groups in storage order.
    fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut g = vec![("wte".to_string(), self.wte.clone()), ("wpe".to_string(), self.wpe.clone())];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, r) in [
                ("ln1.g", &l.ln1_g),
                ("ln1.b", &l.ln1_b),
                ("attn.w_qkv", &l.w_qkv),
                ("attn.b_qkv", &l.b_qkv),
                ("attn.w_o", &l.w_o),
                ("attn.b_o", &l.b_o),
                ("ln2.g", &l.ln2_g),
                ("ln2.b", &l.ln2_b),
                ("mlp.w_fc", &l.w_fc),
                ("mlp.b_fc", &l.b_fc),
                ("mlp.w_proj", &l.w_proj),
                ("mlp.b_proj", &l.b_proj),
            ] {
                g.push((format!("h{i}.{name}"), r.clone()));
            }
        }
        g.push(("lnf.g".into(), self.lnf_g.clone()));
        g.push(("lnf.b".into(), self.lnf_b.clone()));
        g
    }
}

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![F::zero(); n] }
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[F] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }
}

/// Gradient (or any per-parameter quantity) laid out like [`Model::weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<F>(pub Vec<F>);

impl<F: Scalar> GradientSet<F> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![F::zero(); n])
    }

    /// Global L2 norm over all parameter groups, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|v| {
                let x = v.to_f64().unwrap_or(f64::NAN);
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: F) {
        self.0.iter_mut().for_each(|v| *v = *v * s);
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a = *a + *b;
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    config: ModelConfig,
    layout: Layout,
    weights: Vec<F>,
}

impl<F: Scalar> Model<F> {
    /// Weights ~ N(0, 0.02²) from a ChaCha stream seeded by `config.seed`;
    /// layer-norm gains 1, biases 0.
    pub fn init(config: ModelConfig) -> Result<Self> {
        Self::init_with_std(config, 0.02)
    }

    pub fn init_with_std(config: ModelConfig, std: f64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, std).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        let mut weights = vec![F::zero(); layout.total];
        for (name, range) in layout.groups() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf == "g" {
                weights[range].iter_mut().for_each(|w| *w = F::one());
            } else if leaf.starts_with('w') {
                weights[range].iter_mut().for_each(|w| *w = lit(normal.sample(&mut rng)));
            }
        }
        Ok(Self { config, layout, weights })
    }

    pub fn from_weights(config: ModelConfig, weights: Vec<F>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if weights.len() != layout.total {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} weights, got {}",
                layout.total,
                weights.len()
            )));
        }
        Ok(Self { config, layout, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [F] {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        self.layout.groups()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// `w ← w − lr · g`
    pub fn apply_update(&mut self, grad: &GradientSet<F>, lr: F) {
        for (w, g) in self.weights.iter_mut().zip(&grad.0) {
            *w = *w - lr * *g;
        }
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            weights: self.weights.iter().map(|w| G::from_f64(w.to_f64().unwrap()).unwrap()).collect(),
        }
    }
}
