//! Rating-to-value-space transforms: linear scaling onto `[-1, 1]` and an
//! optional invertible quantile-to-Gaussian transform.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum XformError {
    #[error("rating {rating} outside scale [{min}, {max}]")]
    OutOfRange { rating: f64, min: f64, max: f64 },
    #[error("rating scale requires min < max, got [{min}, {max}]")]
    BadScale { min: f64, max: f64 },
    #[error("quantile transform needs at least 2 distinct rating levels, got {0}")]
    DegenerateDistribution(usize),
    #[error("rating {0} is not a fitted quantile level")]
    UnfittedLevel(f64),
    #[error("scaler in quantile mode has no fitted map")]
    MissingQuantileMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    Linear,
    Quantile,
}

/// Invertible map from discrete rating levels to standard-Gaussian values via
/// midpoint-rank empirical CDF and the probit function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    pub levels: Vec<f64>,
    pub midpoint_ranks: Vec<f64>,
    pub gaussian_values: Vec<f64>,
}

impl QuantileMap {
    /// Fit from observed (training) ratings.
    pub fn fit(ratings: &[f64]) -> Result<Self, XformError> {
        let mut sorted: Vec<f64> = ratings.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ratings"));
        let n = sorted.len();

        let mut levels = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for &r in &sorted {
            match levels.last() {
                Some(&last) if last == r => *counts.last_mut().expect("paired") += 1,
                _ => {
                    levels.push(r);
                    counts.push(1);
                }
            }
        }
        if levels.len() < 2 {
            return Err(XformError::DegenerateDistribution(levels.len()));
        }

        let mut cumulative = 0usize;
        let mut midpoint_ranks = Vec::with_capacity(levels.len());
        for &c in &counts {
            cumulative += c;
            midpoint_ranks.push((cumulative as f64 - c as f64 / 2.0) / n as f64);
        }
        let gaussian_values = midpoint_ranks.iter().map(|&p| probit(p)).collect();
        Ok(Self {
            levels,
            midpoint_ranks,
            gaussian_values,
        })
    }

    /// Fitted lookup; the rating must be one of the fitted levels.
    pub fn apply(&self, rating: f64) -> Result<f64, XformError> {
        match self.levels.iter().position(|&l| l == rating) {
            Some(i) => Ok(self.gaussian_values[i]),
            None => Err(XformError::UnfittedLevel(rating)),
        }
    }

    /// Level whose Gaussian value is nearest to `z`; ties go to the lower
    /// level, values beyond the fitted range saturate.
    pub fn invert(&self, z: f64) -> f64 {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (i, &g) in self.gaussian_values.iter().enumerate() {
            let d = (z - g).abs();
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        self.levels[best]
    }

    pub fn gaussian_range(&self) -> (f64, f64) {
        (
            *self.gaussian_values.first().expect("fitted map nonempty"),
            *self.gaussian_values.last().expect("fitted map nonempty"),
        )
    }
}

/// Maps raw ratings to and from the diffusion value space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingScaler {
    pub r_min: f64,
    pub r_max: f64,
    pub mode: ScaleMode,
    pub quantile_map: Option<QuantileMap>,
}

impl RatingScaler {
    pub fn linear(r_min: f64, r_max: f64) -> Result<Self, XformError> {
        if !(r_min < r_max) {
            return Err(XformError::BadScale {
                min: r_min,
                max: r_max,
            });
        }
        Ok(Self {
            r_min,
            r_max,
            mode: ScaleMode::Linear,
            quantile_map: None,
        })
    }

    pub fn quantile(r_min: f64, r_max: f64, map: QuantileMap) -> Result<Self, XformError> {
        if !(r_min < r_max) {
            return Err(XformError::BadScale {
                min: r_min,
                max: r_max,
            });
        }
        Ok(Self {
            r_min,
            r_max,
            mode: ScaleMode::Quantile,
            quantile_map: Some(map),
        })
    }

    /// Rating on the original scale -> diffusion value space.
    pub fn scale(&self, rating: f64) -> Result<f64, XformError> {
        if rating < self.r_min || rating > self.r_max || !rating.is_finite() {
            return Err(XformError::OutOfRange {
                rating,
                min: self.r_min,
                max: self.r_max,
            });
        }
        match self.mode {
            ScaleMode::Linear => Ok(2.0 * (rating - self.r_min) / (self.r_max - self.r_min) - 1.0),
            ScaleMode::Quantile => self
                .quantile_map
                .as_ref()
                .ok_or(XformError::MissingQuantileMap)?
                .apply(rating),
        }
    }

    /// Diffusion value space -> original rating scale. Values from sampling
    /// may slightly overshoot the legal range; they are clamped first.
    pub fn unscale(&self, value: f64) -> f64 {
        let (lo, hi) = self.value_range();
        let w = value.clamp(lo, hi);
        match self.mode {
            ScaleMode::Linear => (w + 1.0) / 2.0 * (self.r_max - self.r_min) + self.r_min,
            ScaleMode::Quantile => self
                .quantile_map
                .as_ref()
                .expect("quantile scaler carries its map")
                .invert(w),
        }
    }

    /// Legal value-space interval: `[-1, 1]` for the linear map, the fitted
    /// Gaussian range for the quantile transform.
    pub fn value_range(&self) -> (f64, f64) {
        match self.mode {
            ScaleMode::Linear => (-1.0, 1.0),
            ScaleMode::Quantile => self
                .quantile_map
                .as_ref()
                .expect("quantile scaler carries its map")
                .gaussian_range(),
        }
    }
}

/// Nearest legal rating level, for display.
pub fn snap_to_level(rating: f64, levels: &[f64]) -> f64 {
    let mut best = rating;
    let mut best_dist = f64::INFINITY;
    for &l in levels {
        let d = (rating - l).abs();
        if d < best_dist {
            best_dist = d;
            best = l;
        }
    }
    best
}

/// Inverse standard-normal CDF.
///
/// Acklam's rational approximation refined with one Halley step against the
/// erfc-based CDF, giving near machine precision on (0, 1).
pub fn probit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probit requires p in (0,1), got {p}");

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement against Phi(x) = erfc(-x/sqrt(2)) / 2.
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x -= u / (1.0 + x * u / 2.0);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent normal-quantile oracle: bisection on the erfc-based CDF.
    fn probit_oracle(p: f64) -> f64 {
        let phi = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn scaler() -> RatingScaler {
        RatingScaler::linear(1.0, 5.0).unwrap()
    }

    #[test]
    fn linear_endpoints_and_midpoint() {
        let s = scaler();
        assert_eq!(s.scale(5.0).unwrap(), 1.0);
        assert_eq!(s.scale(1.0).unwrap(), -1.0);
        assert_eq!(s.scale(3.0).unwrap(), 0.0);
        assert_eq!(s.scale(2.5).unwrap(), -0.25);
    }

    #[test]
    fn linear_unscale_inverts() {
        let s = scaler();
        assert_eq!(s.unscale(1.0), 5.0);
        assert_eq!(s.unscale(-0.25), 2.5);
        // overshoot clamps before inverting
        assert_eq!(s.unscale(1.3), 5.0);
    }

    #[test]
    fn out_of_range_rating_is_an_error() {
        let s = scaler();
        assert!(s.scale(5.5).is_err());
        assert!(s.scale(0.0).is_err());
    }

    #[test]
    fn degenerate_scale_rejected() {
        assert!(RatingScaler::linear(3.0, 3.0).is_err());
    }

    #[test]
    fn quantile_fit_three_levels() {
        let map = QuantileMap::fit(&[1.0, 3.0, 5.0]).unwrap();
        assert_eq!(map.levels, vec![1.0, 3.0, 5.0]);
        let expect = [1.0 / 6.0, 0.5, 5.0 / 6.0];
        for (r, e) in map.midpoint_ranks.iter().zip(expect) {
            assert!((r - e).abs() < 1e-12);
        }
        for (g, p) in map.gaussian_values.iter().zip(expect) {
            let oracle = probit_oracle(p);
            assert!((g - oracle).abs() < 1e-9, "probit({p}) = {g} vs {oracle}");
        }
        assert!((map.gaussian_values[0] + 0.9674).abs() < 1e-4);
        assert!(map.gaussian_values[1].abs() < 1e-12);
        assert!((map.gaussian_values[2] - 0.9674).abs() < 1e-4);
    }

    #[test]
    fn quantile_fit_ranks_match_counting_oracle() {
        // five-level rating data: ranks must equal (cum - count/2) / n
        let ratings = crate::fixture::synthetic_rank_one(15, 15, 9).ratings();
        let map = QuantileMap::fit(&ratings).unwrap();
        assert_eq!(map.levels, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let n = ratings.len() as f64;
        let mut cumulative = 0.0;
        for (level, rank) in map.levels.iter().zip(&map.midpoint_ranks) {
            let count = ratings.iter().filter(|&&r| r == *level).count() as f64;
            let want = (cumulative + count / 2.0) / n;
            assert!(
                (rank - want).abs() < 1e-12,
                "level {level}: {rank} vs {want}"
            );
            cumulative += count;
        }
    }

    #[test]
    fn quantile_symmetric_multiset_is_antisymmetric() {
        let map = QuantileMap::fit(&[1.0, 2.0, 2.0, 4.0, 4.0, 5.0]).unwrap();
        let g = &map.gaussian_values;
        assert_eq!(g.len(), 4);
        assert!((g[0] + g[3]).abs() < 1e-9);
        assert!((g[1] + g[2]).abs() < 1e-9);
    }

    #[test]
    fn quantile_roundtrip_on_fitted_levels() {
        let map = QuantileMap::fit(&[1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0]).unwrap();
        for &l in &map.levels {
            let z = map.apply(l).unwrap();
            assert_eq!(map.invert(z), l);
        }
    }

    #[test]
    fn quantile_invert_zero_and_saturation() {
        let map = QuantileMap::fit(&[1.0, 3.0, 5.0]).unwrap();
        assert_eq!(map.invert(0.0), 3.0);
        assert_eq!(map.invert(10.0), 5.0);
        assert_eq!(map.invert(-10.0), 1.0);
    }

    #[test]
    fn quantile_unfitted_level_is_an_error() {
        let map = QuantileMap::fit(&[1.0, 3.0, 5.0]).unwrap();
        assert!(map.apply(2.0).is_err());
    }

    #[test]
    fn quantile_single_level_is_degenerate() {
        assert!(QuantileMap::fit(&[4.0, 4.0, 4.0]).is_err());
    }

    #[test]
    fn probit_matches_oracle_across_range() {
        for &p in &[1e-6, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0 - 1e-6] {
            let got = probit(p);
            let want = probit_oracle(p);
            assert!((got - want).abs() < 1e-8, "p={p}: {got} vs {want}");
        }
    }

    #[test]
    fn snap_picks_nearest() {
        let levels = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(snap_to_level(4.2, &levels), 4.0);
        assert_eq!(snap_to_level(4.8, &levels), 5.0);
    }

    proptest! {
        #[test]
        fn scale_unscale_roundtrip_exact(w in -1.0f64..=1.0) {
            let s = scaler();
            let r = s.unscale(w);
            let back = s.scale(r).unwrap();
            prop_assert!((back - w).abs() < 4.0 * f64::EPSILON);
        }

        #[test]
        fn quantile_apply_monotone(raw in proptest::collection::vec(1u8..=5, 8..64)) {
            let ratings: Vec<f64> = raw.iter().map(|&r| r as f64).collect();
            if let Ok(map) = QuantileMap::fit(&ratings) {
                for pair in map.levels.windows(2) {
                    let (a, b) = (map.apply(pair[0]).unwrap(), map.apply(pair[1]).unwrap());
                    prop_assert!(a < b);
                }
            }
        }

        #[test]
        fn quantile_invert_monotone(z1 in -3.0f64..3.0, z2 in -3.0f64..3.0) {
            let map = QuantileMap::fit(&[1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 5.0]).unwrap();
            let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
            prop_assert!(map.invert(lo) <= map.invert(hi));
        }
    }
}
