//! Noise-prediction MSE with single-step BPR ranking regularization.

use rand::Rng;

use super::TrainError;
use crate::diffusion::NoiseSchedule;
use crate::ingest::Patch;
use crate::numeric::{Graph, Scalar, Tensor, Var};

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub bpr_weight: f64,
    pub bpr_pairs_per_user: usize,
    /// Restrict the MSE to known cells; off by default so the model also
    /// learns the neutral prior for unknown interactions.
    pub mask_unknown: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            bpr_weight: 0.1,
            bpr_pairs_per_user: 4,
            mask_unknown: false,
        }
    }
}

/// Loss graph nodes, so callers can backprop the total and log the parts.
pub struct LossParts {
    pub total: Var,
    pub mse: Var,
    pub bpr: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub mse: f64,
    pub bpr: f64,
}

impl LossParts {
    pub fn values<F: Scalar>(&self, g: &Graph<F>) -> LossValues {
        LossValues {
            total: g.value(self.total).item().to_f64(),
            mse: g.value(self.mse).item().to_f64(),
            bpr: g.value(self.bpr).item().to_f64(),
        }
    }
}

/// Oriented preference pairs `(user_row, preferred_col, other_col)` over the
/// patch's known cells: strictly higher true value first, never an unknown
/// cell, never a tie.
pub fn sample_bpr_pairs<R: Rng + ?Sized>(
    patch: &Patch,
    pairs_per_user: usize,
    rng: &mut R,
) -> Vec<(usize, usize, usize)> {
    let mut pairs = Vec::new();
    for u in 0..patch.n {
        let known: Vec<usize> = (0..patch.m).filter(|&i| patch.is_known(u, i)).collect();
        if known.len() < 2 {
            continue;
        }
        let mut found = 0;
        for _ in 0..(8 * pairs_per_user) {
            if found == pairs_per_user {
                break;
            }
            let a = known[rng.random_range(0..known.len())];
            let b = known[rng.random_range(0..known.len())];
            let (va, vb) = (patch.value(u, a), patch.value(u, b));
            if va > vb {
                pairs.push((u, a, b));
                found += 1;
            } else if vb > va {
                pairs.push((u, b, a));
                found += 1;
            }
        }
    }
    pairs
}

/// Build the training loss on the graph.
///
/// The MSE term covers all cells (or known cells only when masked); the BPR
/// term scores the clean-signal reconstruction
/// `x0_hat = predict_x0(x_t, eps_hat, t)` on sampled preference pairs with
/// `-log sigmoid(x0_hat[i+] - x0_hat[i-])`. Total is `mse + weight * bpr`.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss<F: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<F>,
    eps: Var,
    eps_hat: Var,
    x_t: Var,
    t: usize,
    patch: &Patch,
    schedule: &NoiseSchedule,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossParts, TrainError> {
    let diff = g.sub(eps, eps_hat)?;
    let sq = g.mul(diff, diff)?;
    let mse = if cfg.mask_unknown {
        let known_count = patch.known.iter().filter(|&&k| k).count();
        if known_count == 0 {
            g.constant(Tensor::scalar(F::zero()))
        } else {
            let mask = Tensor::from_f64_slice(
                vec![patch.n, patch.m],
                &patch
                    .known
                    .iter()
                    .map(|&k| f64::from(u8::from(k)))
                    .collect::<Vec<_>>(),
            )
            .expect("mask shape");
            let mask = g.constant(mask);
            let masked = g.mul(sq, mask)?;
            let sum = g.sum_all(masked);
            g.scale(sum, 1.0 / known_count as f64)
        }
    } else {
        g.mean_all(sq)
    };

    let pairs = sample_bpr_pairs(patch, cfg.bpr_pairs_per_user, rng);
    let bpr = if pairs.is_empty() {
        g.constant(Tensor::scalar(F::zero()))
    } else {
        // x0_hat = (x_t - sqrt(1 - abar) eps_hat) / sqrt(abar), clamped
        let abar = schedule.alpha_bar(t);
        let xs = g.scale(x_t, 1.0 / abar.sqrt());
        let es = g.scale(eps_hat, (1.0 - abar).sqrt() / abar.sqrt());
        let x0_hat = g.sub(xs, es)?;
        let x0_hat = g.clamp(x0_hat, -1.0, 1.0);

        let plus: Vec<usize> = pairs.iter().map(|&(u, p, _)| u * patch.m + p).collect();
        let minus: Vec<usize> = pairs.iter().map(|&(u, _, q)| u * patch.m + q).collect();
        let sp = g.gather(x0_hat, plus)?;
        let sm = g.gather(x0_hat, minus)?;
        let margin = g.sub(sp, sm)?;
        let ls = g.log_sigmoid(margin);
        let mean = g.mean_all(ls);
        g.scale(mean, -1.0)
    };

    let weighted = g.scale(bpr, cfg.bpr_weight);
    let total = g.add(mse, weighted)?;
    Ok(LossParts { total, mse, bpr })
}
