//! The denoiser: row-column separable attention, feature cross-attention,
//! and timestep-conditioned adaptive layer norms stacked into GDiT blocks.

mod attention;
mod model;

pub use attention::{mha, rcs_cross, rcsa_flop_estimate, rcsa_self};
pub use model::{encode_features, gdit_block, model_forward, timestep_embedding};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{Graph, NumericError, Scalar, Tensor, Var};

#[derive(Debug, Error)]
pub enum GditError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("bad model config: {0}")]
    Config(String),
    #[error("feature width mismatch: expected {expected}, got {got}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("timestep embedding dim must be even, got {0}")]
    OddEmbeddingDim(usize),
    #[error("checkpoint/config mismatch: {0}")]
    ConfigMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GDiTConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    /// MLP hidden width as a multiple of `d_model`.
    pub mlp_ratio: usize,
    pub d_user_in: usize,
    pub d_item_in: usize,
}

impl GDiTConfig {
    pub fn validate(&self) -> Result<(), GditError> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_blocks == 0 || self.mlp_ratio == 0 {
            return Err(GditError::Config("all dimensions must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(GditError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(GditError::Config(format!(
                "d_model {} must be even for the sinusoidal embedding",
                self.d_model
            )));
        }
        if self.d_user_in == 0 || self.d_item_in == 0 {
            return Err(GditError::Config("feature widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone)]
pub struct ParamSet<F> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Rebuild from named tensors, e.g. a checkpoint payload.
    pub fn from_named(entries: Vec<(String, Tensor<F>)>) -> Self {
        Self { entries }
    }

    fn add(&mut self, name: String, tensor: Tensor<F>) -> ParamId {
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> Vec<Tensor<F>> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Graph bindings for every parameter, aligned with [`ParamSet`] order.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// All bound variables in parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearP {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnP {
    pub q: LinearP,
    pub k: LinearP,
    pub v: LinearP,
    pub o: LinearP,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpP {
    pub fc1: LinearP,
    pub fc2: LinearP,
}

/// Feature-encoder side: projection, one self-attention + MLP block with
/// post-norms carrying learned gain/bias.
#[derive(Debug, Clone, Copy)]
pub struct EncoderP {
    pub proj: LinearP,
    pub attn: AttnP,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub mlp: MlpP,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockP {
    pub self_row: AttnP,
    pub self_col: AttnP,
    pub cross_row: AttnP,
    pub cross_col: AttnP,
    pub mlp: MlpP,
    /// `d -> 9d` adaLN modulation: scale/shift/gate per sub-layer, zero-init.
    pub modulation: LinearP,
}

#[derive(Debug, Clone)]
pub struct ModelP {
    pub input_proj: LinearP,
    pub time_mlp: MlpP,
    pub user_enc: EncoderP,
    pub item_enc: EncoderP,
    pub blocks: Vec<BlockP>,
    pub out_proj: LinearP,
}

enum Init {
    Xavier,
    Zero,
    One,
}

struct LayoutBuilder<'r, F: Scalar> {
    params: ParamSet<F>,
    rng: Option<&'r mut ChaCha12Rng>,
    expect: Option<ParamSet<F>>,
    error: Option<GditError>,
}

impl<'r, F: Scalar> LayoutBuilder<'r, F> {
    fn tensor(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        if let Some(expect) = &self.expect {
            // Validating a loaded checkpoint against this config's layout.
            let idx = self.params.len();
            let ok = expect
                .entries
                .get(idx)
                .filter(|(n, t)| *n == name && t.shape() == shape.as_slice());
            if ok.is_none() && self.error.is_none() {
                let found = expect
                    .entries
                    .get(idx)
                    .map(|(n, t)| format!("{n} {:?}", t.shape()))
                    .unwrap_or_else(|| "nothing".into());
                self.error = Some(GditError::ConfigMismatch(format!(
                    "expected parameter {name} {shape:?}, found {found}"
                )));
            }
            let tensor = expect
                .entries
                .get(idx)
                .map(|(_, t)| t.clone())
                .unwrap_or_else(|| Tensor::zeros(shape));
            return self.params.add(name, tensor);
        }

        let rng = self.rng.as_deref_mut().expect("init mode carries an rng");
        let tensor = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::One => Tensor::full(shape, F::one()),
            Init::Xavier => {
                let (fan_in, fan_out) = match shape.as_slice() {
                    [i, o] => (*i, *o),
                    [o] => (*o, *o),
                    _ => (shape[0], shape[shape.len() - 1]),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(shape, |_| F::from_f64(rng.random_range(-a..a)))
            }
        };
        self.params.add(name, tensor)
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize, zero: bool) -> LinearP {
        let init = if zero { Init::Zero } else { Init::Xavier };
        let w = self.tensor(format!("{name}.w"), vec![d_in, d_out], init);
        let b = self.tensor(format!("{name}.b"), vec![d_out], Init::Zero);
        LinearP { w, b }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnP {
        AttnP {
            q: self.linear(&format!("{name}.q"), d, d, false),
            k: self.linear(&format!("{name}.k"), d, d, false),
            v: self.linear(&format!("{name}.v"), d, d, false),
            o: self.linear(&format!("{name}.o"), d, d, false),
        }
    }

    fn mlp(&mut self, name: &str, d: usize, hidden: usize) -> MlpP {
        MlpP {
            fc1: self.linear(&format!("{name}.fc1"), d, hidden, false),
            fc2: self.linear(&format!("{name}.fc2"), hidden, d, false),
        }
    }

    fn encoder(&mut self, name: &str, d_in: usize, d: usize, hidden: usize) -> EncoderP {
        EncoderP {
            proj: self.linear(&format!("{name}.proj"), d_in, d, false),
            attn: self.attn(&format!("{name}.attn"), d),
            ln1_gain: self.tensor(format!("{name}.ln1.gain"), vec![d], Init::One),
            ln1_bias: self.tensor(format!("{name}.ln1.bias"), vec![d], Init::Zero),
            mlp: self.mlp(&format!("{name}.mlp"), d, hidden),
            ln2_gain: self.tensor(format!("{name}.ln2.gain"), vec![d], Init::One),
            ln2_bias: self.tensor(format!("{name}.ln2.bias"), vec![d], Init::Zero),
        }
    }

    fn build(mut self, config: &GDiTConfig) -> Result<(ModelP, ParamSet<F>), GditError> {
        let d = config.d_model;
        let hidden = d * config.mlp_ratio;

        let input_proj = self.linear("input_proj", 1, d, false);
        let time_mlp = MlpP {
            fc1: self.linear("time_mlp.fc1", d, d, false),
            fc2: self.linear("time_mlp.fc2", d, d, false),
        };
        let user_enc = self.encoder("user_enc", config.d_user_in, d, hidden);
        let item_enc = self.encoder("item_enc", config.d_item_in, d, hidden);
        let blocks = (0..config.n_blocks)
            .map(|b| {
                let p = format!("blocks.{b}");
                BlockP {
                    self_row: self.attn(&format!("{p}.self_row"), d),
                    self_col: self.attn(&format!("{p}.self_col"), d),
                    cross_row: self.attn(&format!("{p}.cross_row"), d),
                    cross_col: self.attn(&format!("{p}.cross_col"), d),
                    mlp: self.mlp(&format!("{p}.mlp"), d, hidden),
                    modulation: self.linear(&format!("{p}.mod"), d, 9 * d, true),
                }
            })
            .collect();
        let out_proj = self.linear("out_proj", d, 1, false);

        if let Some(err) = self.error {
            return Err(err);
        }
        if let Some(expect) = &self.expect {
            if expect.len() != self.params.len() {
                return Err(GditError::ConfigMismatch(format!(
                    "checkpoint has {} parameters, config wants {}",
                    expect.len(),
                    self.params.len()
                )));
            }
        }

        Ok((
            ModelP {
                input_proj,
                time_mlp,
                user_enc,
                item_enc,
                blocks,
                out_proj,
            },
            self.params,
        ))
    }
}

/// The denoiser's learnable state plus its configuration.
#[derive(Debug, Clone)]
pub struct GDiTModel<F> {
    pub config: GDiTConfig,
    params: ParamSet<F>,
    layout: ModelP,
}

impl<F: Scalar> GDiTModel<F> {
    /// Fresh model. Attention/MLP weights are Xavier-uniform, biases zero,
    /// and every adaLN modulation layer is zeroed so each block starts as
    /// the identity.
    pub fn init(config: GDiTConfig, seed: u64) -> Result<Self, GditError> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let builder = LayoutBuilder {
            params: ParamSet::new(),
            rng: Some(&mut rng),
            expect: None,
            error: None,
        };
        let (layout, params) = builder.build(&config)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Rebuild from checkpointed parameters, verifying that names and shapes
    /// match what `config` implies.
    pub fn from_params(config: GDiTConfig, params: ParamSet<F>) -> Result<Self, GditError> {
        config.validate()?;
        let builder = LayoutBuilder {
            params: ParamSet::new(),
            rng: None,
            expect: Some(params),
            error: None,
        };
        let (layout, params) = builder.build(&config)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn layout(&self) -> &ModelP {
        &self.layout
    }

    /// Bind every parameter as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<F>) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .entries
                .iter()
                .map(|(_, t)| g.leaf(t.clone()))
                .collect(),
        }
    }

    /// Bind every parameter as a constant (inference).
    pub fn bind_const(&self, g: &mut Graph<F>) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .entries
                .iter()
                .map(|(_, t)| g.constant(t.clone()))
                .collect(),
        }
    }

    /// Inference convenience: predicted noise for one patch, no gradients.
    pub fn forward_eval(
        &self,
        x_t: &Tensor<F>,
        t: usize,
        u_raw: &Tensor<F>,
        i_raw: &Tensor<F>,
    ) -> Result<Tensor<F>, GditError> {
        let mut g = Graph::new();
        let bp = self.bind_const(&mut g);
        let x = g.constant(x_t.clone());
        let u = g.constant(u_raw.clone());
        let i = g.constant(i_raw.clone());
        let out = model_forward(&mut g, &bp, self, x, t, u, i)?;
        Ok(g.value(out).clone())
    }
}

/// Fresh RNG stream for a given purpose, decorrelated from the seed by
/// splitmix64 steps.
pub(crate) fn derive_rng(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha12Rng {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mixed = splitmix(seed ^ splitmix(tag ^ splitmix(a ^ splitmix(b))));
    ChaCha12Rng::seed_from_u64(mixed)
}
