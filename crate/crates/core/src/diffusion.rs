//! Noise-schedule construction and the closed-form DDPM quantities: forward
//! sampling, posterior parameters, and reconstruction of the clean signal
//! from predicted noise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("schedule parameters out of range: {0}")]
    BadParameters(String),
    #[error("timestep {t} outside [1, {t_max}]")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Serializable description of a schedule, recorded in checkpoint manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleSpec {
    Linear {
        t_steps: usize,
        beta_start: f64,
        beta_end: f64,
    },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule, DiffusionError> {
        match *self {
            ScheduleSpec::Linear {
                t_steps,
                beta_start,
                beta_end,
            } => NoiseSchedule::linear(t_steps, beta_start, beta_end),
        }
    }

    pub fn t_steps(&self) -> usize {
        match *self {
            ScheduleSpec::Linear { t_steps, .. } => t_steps,
        }
    }
}

/// Per-step noise tables for t = 1..T.
///
/// `beta_tilde[t]` is the posterior variance `(1 - abar_{t-1}) / (1 - abar_t) * beta_t`
/// with `abar_0 = 1`, so `beta_tilde[1] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas interpolated linearly from `beta_start` (t=1) to `beta_end` (t=T).
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if t_steps < 1 {
            return Err(DiffusionError::BadParameters("T must be >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::BadParameters(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = if t_steps == 1 {
            vec![beta_start]
        } else {
            (0..t_steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Direct construction from a beta sequence.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::BadParameters("empty beta sequence".into()));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(DiffusionError::BadParameters(format!(
                    "beta_{} = {b} outside (0, 1)",
                    i + 1
                )));
            }
        }
        let alpha: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let mut beta_tilde = Vec::with_capacity(betas.len());
        for t in 0..betas.len() {
            let abar_prev = if t == 0 { 1.0 } else { alpha_bar[t - 1] };
            beta_tilde.push((1.0 - abar_prev) / (1.0 - alpha_bar[t]) * betas[t]);
        }
        Ok(Self {
            beta: betas,
            alpha,
            alpha_bar,
            beta_tilde,
        })
    }

    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<(), DiffusionError> {
        if t < 1 || t > self.t_max() {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                t_max: self.t_max(),
            });
        }
        Ok(())
    }

    /// All accessors take the 1-based step index.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `abar_{t-1}`, defined as 1 at t = 1.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    /// Step whose cumulative signal level is closest to `target`.
    pub fn step_with_alpha_bar_near(&self, target: f64) -> usize {
        let mut best = 1;
        let mut best_dist = f64::INFINITY;
        for t in 1..=self.t_max() {
            let d = (self.alpha_bar(t) - target).abs();
            if d < best_dist {
                best_dist = d;
                best = t;
            }
        }
        best
    }
}

/// Closed-form forward corruption: `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_sample<F: Scalar>(
    x0: &Tensor<F>,
    t: usize,
    eps: &Tensor<F>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>, DiffusionError> {
    schedule.check_t(t)?;
    if x0.shape() != eps.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "x0 {:?} vs eps {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let abar = schedule.alpha_bar(t);
    let signal = F::from_f64(abar.sqrt());
    let noise = F::from_f64((1.0 - abar).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| signal * x + noise * e)
        .collect();
    Ok(Tensor::new(x0.shape().to_vec(), data).expect("same length"))
}

/// Posterior `p(x_{t-1} | x_t, x0)`: elementwise mean and scalar variance.
pub fn posterior_params<F: Scalar>(
    x0: &Tensor<F>,
    x_t: &Tensor<F>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<(Tensor<F>, f64), DiffusionError> {
    schedule.check_t(t)?;
    if x0.shape() != x_t.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "x0 {:?} vs x_t {:?}",
            x0.shape(),
            x_t.shape()
        )));
    }
    let abar = schedule.alpha_bar(t);
    let abar_prev = schedule.alpha_bar_prev(t);
    let beta = schedule.beta(t);
    let alpha = schedule.alpha(t);
    let c0 = F::from_f64(abar_prev.sqrt() * beta / (1.0 - abar));
    let ct = F::from_f64(alpha.sqrt() * (1.0 - abar_prev) / (1.0 - abar));
    let data = x0
        .data()
        .iter()
        .zip(x_t.data())
        .map(|(&a, &b)| c0 * a + ct * b)
        .collect();
    let mean = Tensor::new(x0.shape().to_vec(), data).expect("same length");
    Ok((mean, schedule.beta_tilde(t)))
}

/// Invert the forward closed form: `(x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)`,
/// without clamping.
pub fn predict_x0_unclamped<F: Scalar>(
    x_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>, DiffusionError> {
    schedule.check_t(t)?;
    if x_t.shape() != eps_hat.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "x_t {:?} vs eps_hat {:?}",
            x_t.shape(),
            eps_hat.shape()
        )));
    }
    let abar = schedule.alpha_bar(t);
    let inv_signal = F::from_f64(1.0 / abar.sqrt());
    let noise = F::from_f64((1.0 - abar).sqrt());
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&x, &e)| (x - noise * e) * inv_signal)
        .collect();
    Ok(Tensor::new(x_t.shape().to_vec(), data).expect("same length"))
}

/// As [`predict_x0_unclamped`] but clamped into the given value range.
pub fn predict_x0_in<F: Scalar>(
    x_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    t: usize,
    schedule: &NoiseSchedule,
    range: (f64, f64),
) -> Result<Tensor<F>, DiffusionError> {
    let (lo, hi) = (F::from_f64(range.0), F::from_f64(range.1));
    Ok(predict_x0_unclamped(x_t, eps_hat, t, schedule)?.map(|v| v.maximum(lo).minimum(hi)))
}

/// Reconstruction clamped to `[-1, 1]`, the interaction-strength range.
pub fn predict_x0<F: Scalar>(
    x_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>, DiffusionError> {
    predict_x0_in(x_t, eps_hat, t, schedule, (-1.0, 1.0))
}
