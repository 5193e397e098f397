//! Training loop: patch batching, timestep sampling, the regularized noise
//! loss, optimizer updates, and checkpointing.

mod adamw;
mod checkpoint;
mod loss;

pub use adamw::AdamW;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LoadedCheckpoint};
pub use loss::{diffusion_loss, sample_bpr_pairs, LossConfig, LossParts, LossValues};

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{forward_sample, NoiseSchedule, ScheduleSpec};
use crate::gdit::{derive_rng, model_forward, GDiTConfig, GDiTModel};
use crate::ingest::{sample_patch_bounded, FeatureTable, IngestError, InteractionMatrix, Patch};
use crate::numeric::{Graph, Scalar, Tensor};
use crate::xform::RatingScaler;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Numeric(#[from] crate::numeric::NumericError),
    #[error(transparent)]
    Gdit(#[from] crate::gdit::GditError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("non-finite loss at iteration {iteration} (timesteps {t_values:?})")]
    NonFiniteLoss {
        iteration: u64,
        t_values: Vec<usize>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("train config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub patch_n: usize,
    pub patch_m: usize,
    pub min_density: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub bpr_weight: f64,
    pub bpr_pairs_per_user: usize,
    pub mask_unknown_in_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 16,
            patch_n: 50,
            patch_m: 50,
            min_density: 0.0,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            bpr_weight: 0.1,
            bpr_pairs_per_user: 4,
            mask_unknown_in_loss: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations < 1 {
            return Err(TrainError::Config("iterations must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.bpr_weight < 0.0 {
            return Err(TrainError::Config("bpr_weight must be >= 0".into()));
        }
        Ok(())
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig {
            bpr_weight: self.bpr_weight,
            bpr_pairs_per_user: self.bpr_pairs_per_user,
            mask_unknown: self.mask_unknown_in_loss,
        }
    }
}

/// Data the training loop draws from.
pub struct TrainInputs<'a> {
    pub matrix: &'a InteractionMatrix,
    pub features: &'a FeatureTable,
    pub schedule_spec: ScheduleSpec,
    /// Optional dense-corner restriction for patch sampling.
    pub region_rows: Option<usize>,
    pub region_cols: Option<usize>,
}

/// One optimizer update over a batch of patches.
///
/// Per patch: a timestep uniform on `{1..T}`, fresh Gaussian noise, forward
/// corruption, the model's noise prediction, and the regularized loss.
/// Patches fan out across threads; gradients accumulate in batch order, so a
/// fixed seed gives bitwise-identical updates regardless of thread count.
#[allow(clippy::too_many_arguments)]
pub fn train_step<F: Scalar>(
    model: &mut GDiTModel<F>,
    opt: &mut AdamW<F>,
    patches: &[Patch],
    features: &FeatureTable,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut ChaCha12Rng,
    iteration: u64,
) -> Result<LossValues, TrainError> {
    assert!(!patches.is_empty(), "train_step needs a nonempty batch");
    let loss_cfg = cfg.loss_config();
    let sub_seeds: Vec<u64> = patches.iter().map(|_| rng.random()).collect();

    struct PatchOutcome<F> {
        grads: Vec<Option<Tensor<F>>>,
        values: LossValues,
        t: usize,
    }

    let frozen = &*model;
    let outcomes: Vec<Result<PatchOutcome<F>, TrainError>> = patches
        .par_iter()
        .zip(&sub_seeds)
        .map(|(patch, &sub_seed)| {
            let mut prng = ChaCha12Rng::seed_from_u64(sub_seed);
            let t = prng.random_range(1..=schedule.t_max());

            let x0 = Tensor::<F>::from_f64_slice(vec![patch.n, patch.m], &patch.values)
                .expect("patch shape");
            let eps = Tensor::<F>::randn(vec![patch.n, patch.m], &mut prng);
            let x_t = forward_sample(&x0, t, &eps, schedule)?;

            let u_raw = Tensor::<F>::from_f64_slice(
                vec![patch.n, features.d_user],
                &features.user_rows(&patch.user_rows),
            )
            .expect("feature shape");
            let i_raw = Tensor::<F>::from_f64_slice(
                vec![patch.m, features.d_item],
                &features.item_rows(&patch.item_cols),
            )
            .expect("feature shape");

            let mut g = Graph::new();
            let bp = frozen.bind(&mut g);
            let x_t_var = g.constant(x_t);
            let eps_var = g.constant(eps);
            let u_var = g.constant(u_raw);
            let i_var = g.constant(i_raw);
            let eps_hat = model_forward(&mut g, &bp, frozen, x_t_var, t, u_var, i_var)?;
            let parts = diffusion_loss(
                &mut g, eps_var, eps_hat, x_t_var, t, patch, schedule, &loss_cfg, &mut prng,
            )?;
            let values = parts.values(&g);

            let mut grads = g.backward(parts.total)?;
            let collected = bp.vars().iter().map(|&v| grads.take(v)).collect();
            Ok(PatchOutcome {
                grads: collected,
                values,
                t,
            })
        })
        .collect();

    let mut batch_grads: Vec<Tensor<F>> = model
        .params()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let mut total = LossValues {
        total: 0.0,
        mse: 0.0,
        bpr: 0.0,
    };
    let mut t_values = Vec::with_capacity(patches.len());
    let scale = F::from_f64(1.0 / patches.len() as f64);
    for outcome in outcomes {
        let outcome = outcome?;
        t_values.push(outcome.t);
        total.total += outcome.values.total;
        total.mse += outcome.values.mse;
        total.bpr += outcome.values.bpr;
        for (acc, g) in batch_grads.iter_mut().zip(outcome.grads) {
            if let Some(g) = g {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
    }
    let b = patches.len() as f64;
    total.total /= b;
    total.mse /= b;
    total.bpr /= b;

    if !total.total.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            iteration,
            t_values,
        });
    }

    opt.step(model.params_mut(), &batch_grads);
    Ok(total)
}

/// Full training run plus coverage bookkeeping.
pub struct TrainRun<F: Scalar> {
    pub model: GDiTModel<F>,
    pub loss_trace: Vec<(u64, LossValues)>,
    pub visited_users: Vec<bool>,
    pub visited_items: Vec<bool>,
}

impl<F: Scalar> TrainRun<F> {
    pub fn coverage(&self) -> (f64, f64) {
        let frac = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len().max(1) as f64;
        (frac(&self.visited_users), frac(&self.visited_items))
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,total,mse,bpr\n");
        for (it, v) in &self.loss_trace {
            out.push_str(&format!("{it},{},{},{}\n", v.total, v.mse, v.bpr));
        }
        out
    }
}

const CHECKPOINT_EVERY: u64 = 1000;

/// Train a fresh model: `iterations` optimizer updates over freshly sampled
/// patch batches, periodic checkpoints plus a final one, and a loss trace.
pub fn run_training<F: Scalar>(
    inputs: &TrainInputs,
    model_config: GDiTConfig,
    cfg: &TrainConfig,
    scaler: &RatingScaler,
    out_dir: Option<&Path>,
) -> Result<TrainRun<F>, TrainError> {
    cfg.validate()?;
    let schedule = inputs.schedule_spec.build()?;
    let region_rows = inputs.region_rows.unwrap_or(inputs.matrix.n_users);
    let region_cols = inputs.region_cols.unwrap_or(inputs.matrix.n_items);

    let mut model = GDiTModel::<F>::init(model_config, cfg.seed)?;
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut rng = derive_rng(cfg.seed, 0x7261_696e, 0, 0);

    let mut visited_users = vec![false; inputs.matrix.n_users];
    let mut visited_items = vec![false; inputs.matrix.n_items];
    let mut loss_trace = Vec::with_capacity(cfg.iterations as usize);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }

    for iteration in 1..=cfg.iterations {
        let mut patches = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let patch = sample_patch_bounded(
                inputs.matrix,
                region_rows,
                region_cols,
                cfg.patch_n,
                cfg.patch_m,
                cfg.min_density,
                &mut rng,
            )?;
            for &u in &patch.user_rows {
                visited_users[u] = true;
            }
            for &i in &patch.item_cols {
                visited_items[i] = true;
            }
            patches.push(patch);
        }

        let values = train_step(
            &mut model,
            &mut opt,
            &patches,
            inputs.features,
            &schedule,
            cfg,
            &mut rng,
            iteration,
        )?;
        loss_trace.push((iteration, values));

        if let Some(dir) = out_dir {
            if iteration % CHECKPOINT_EVERY == 0 {
                let ckpt = Checkpoint {
                    model: model.clone(),
                    schedule: inputs.schedule_spec.clone(),
                    scaler: scaler.clone(),
                    iteration,
                    seed: cfg.seed,
                };
                save_checkpoint(&ckpt, dir.join(format!("iter-{iteration:06}")))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        let ckpt = Checkpoint {
            model: model.clone(),
            schedule: inputs.schedule_spec.clone(),
            scaler: scaler.clone(),
            iteration: cfg.iterations,
            seed: cfg.seed,
        };
        save_checkpoint(&ckpt, dir.join("final"))?;

        let csv_path = dir.join("loss.csv");
        let mut f = std::fs::File::create(&csv_path).map_err(|e| TrainError::Io {
            path: csv_path.display().to_string(),
            source: e,
        })?;
        let run = TrainRun {
            model,
            loss_trace,
            visited_users,
            visited_items,
        };
        f.write_all(run.loss_csv().as_bytes())
            .map_err(|e| TrainError::Io {
                path: csv_path.display().to_string(),
                source: e,
            })?;
        return Ok(run);
    }

    Ok(TrainRun {
        model,
        loss_trace,
        visited_users,
        visited_items,
    })
}
