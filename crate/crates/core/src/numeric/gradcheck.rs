use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{Dtype, Graph, NumericError, Scalar, Tensor, Var};

fn unit_direction<R: Rng + ?Sized>(point: &[Tensor<f64>], rng: &mut R) -> Option<Vec<Vec<f64>>> {
    let mut dir: Vec<Vec<f64>> = point
        .iter()
        .map(|t| {
            (0..t.len())
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    let norm: f64 = dir
        .iter()
        .flat_map(|d| d.iter().map(|v| v * v))
        .sum::<f64>()
        .sqrt();
    if norm < 1e-12 {
        return None;
    }
    for d in dir.iter_mut().flat_map(|d| d.iter_mut()) {
        *d /= norm;
    }
    Some(dir)
}

fn evaluate<F, B>(
    build: &B,
    tensors: &[Tensor<F>],
) -> Result<(f64, Vec<Option<Tensor<F>>>), NumericError>
where
    F: Scalar,
    B: Fn(&mut Graph<F>, &[Var]) -> Result<Var, NumericError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    if g.value(loss).len() != 1 {
        return Err(NumericError::InvalidArgument(
            "gradient_check requires a scalar-valued function".into(),
        ));
    }
    let value = g.value(loss).item().to_f64();
    if !value.is_finite() {
        return Err(NumericError::NonFinite("gradient_check forward pass"));
    }
    let mut grads = g.backward(loss)?;
    let out = vars.iter().map(|&v| grads.take(v)).collect();
    Ok((value, out))
}

fn cast_point<F: Scalar>(point: &[Tensor<f64>]) -> Vec<Tensor<F>> {
    point
        .iter()
        .map(|t| Tensor::from_f64_slice(t.shape().to_vec(), t.data()).expect("same length"))
        .collect()
}

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences along random directions; returns the largest relative
/// error seen.
///
/// The difference quotients always run in double precision: checking a
/// single-precision build therefore measures its analytic backward pass
/// against a trustworthy reference instead of drowning it in f32 truncation
/// noise. The relative error denominates by the larger of the two
/// directional derivatives and the gradient's RMS directional magnitude;
/// directions where everything sits below measurement resolution count as
/// error 0, so a constant function reports exactly 0.
pub fn gradient_check<F, BF, B64>(
    build: BF,
    build_ref: B64,
    point: &[Tensor<f64>],
    direction_count: usize,
    rng: &mut impl Rng,
) -> Result<f64, NumericError>
where
    F: Scalar,
    BF: Fn(&mut Graph<F>, &[Var]) -> Result<Var, NumericError>,
    B64: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericError>,
{
    // Round the probe point into F so both precisions evaluate the exact
    // same representable inputs (f32 -> f64 is lossless).
    let point_f: Vec<Tensor<F>> = cast_point::<F>(point);
    let point64: Vec<Tensor<f64>> = point_f
        .iter()
        .map(|t| Tensor::from_f64_slice(t.shape().to_vec(), &t.to_f64_vec()).expect("same length"))
        .collect();

    let (f0, analytic) = evaluate(&build, &point_f)?;

    let dim: usize = point64.iter().map(|t| t.len()).sum();
    let grad_norm: f64 = analytic
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter().map(|v| v.to_f64() * v.to_f64()))
        .sum::<f64>()
        .sqrt();
    let rms_directional = grad_norm / (dim.max(1) as f64).sqrt();

    let scale = point64.iter().map(|t| t.max_abs()).fold(0.0, f64::max);
    let h = f64::EPSILON.cbrt() * (1.0 + scale);
    let floor = F::EPSILON.powf(2.0 / 3.0) * (1.0 + f0.abs());

    let mut max_rel = 0.0f64;
    for _ in 0..direction_count {
        let Some(dir) = unit_direction(&point64, rng) else {
            continue;
        };

        let mut directional = 0.0;
        for (g, d) in analytic.iter().zip(&dir) {
            if let Some(g) = g {
                directional += g
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(gv, dv)| gv.to_f64() * dv)
                    .sum::<f64>();
            }
        }

        let shift = |sign: f64| -> Vec<Tensor<f64>> {
            point64
                .iter()
                .zip(&dir)
                .map(|(t, d)| {
                    let data = t
                        .data()
                        .iter()
                        .zip(d)
                        .map(|(&v, dv)| v + sign * h * dv)
                        .collect();
                    Tensor::new(t.shape().to_vec(), data).expect("same length")
                })
                .collect()
        };
        let (f_plus, _) = evaluate(&build_ref, &shift(1.0))?;
        let (f_minus, _) = evaluate(&build_ref, &shift(-1.0))?;
        let numeric = (f_plus - f_minus) / (2.0 * h);

        let denom = directional.abs().max(numeric.abs()).max(rms_directional);
        let rel = if denom <= floor {
            0.0
        } else {
            (directional - numeric).abs() / denom
        };
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// All differentiable primitives, as probe functions buildable at any
/// precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveCase {
    Affine,
    BatchMatmul,
    Softmax,
    LayerNorm,
    LayerNormAffine,
    Gelu,
    AddMul,
    TransposeReshape,
    Attention,
    MeanSquare,
    LogSigmoid,
    ClampScale,
    Gather,
}

impl PrimitiveCase {
    pub const ALL: [PrimitiveCase; 13] = [
        PrimitiveCase::Affine,
        PrimitiveCase::BatchMatmul,
        PrimitiveCase::Softmax,
        PrimitiveCase::LayerNorm,
        PrimitiveCase::LayerNormAffine,
        PrimitiveCase::Gelu,
        PrimitiveCase::AddMul,
        PrimitiveCase::TransposeReshape,
        PrimitiveCase::Attention,
        PrimitiveCase::MeanSquare,
        PrimitiveCase::LogSigmoid,
        PrimitiveCase::ClampScale,
        PrimitiveCase::Gather,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveCase::Affine => "affine",
            PrimitiveCase::BatchMatmul => "batch_matmul",
            PrimitiveCase::Softmax => "softmax",
            PrimitiveCase::LayerNorm => "layer_norm",
            PrimitiveCase::LayerNormAffine => "layer_norm_affine",
            PrimitiveCase::Gelu => "gelu",
            PrimitiveCase::AddMul => "add_mul",
            PrimitiveCase::TransposeReshape => "transpose_reshape",
            PrimitiveCase::Attention => "attention",
            PrimitiveCase::MeanSquare => "mean_square",
            PrimitiveCase::LogSigmoid => "log_sigmoid",
            PrimitiveCase::ClampScale => "clamp_scale",
            PrimitiveCase::Gather => "gather",
        }
    }

    fn shapes(self) -> Vec<Vec<usize>> {
        match self {
            PrimitiveCase::Affine => vec![vec![4, 3], vec![3, 5], vec![5]],
            PrimitiveCase::BatchMatmul => vec![vec![2, 3, 4], vec![2, 4, 3]],
            PrimitiveCase::Softmax => vec![vec![3, 6]],
            PrimitiveCase::LayerNorm => vec![vec![4, 8]],
            PrimitiveCase::LayerNormAffine => vec![vec![4, 8], vec![8], vec![8]],
            PrimitiveCase::Gelu => vec![vec![5, 5]],
            PrimitiveCase::AddMul => vec![vec![4, 4], vec![4, 4]],
            PrimitiveCase::TransposeReshape => vec![vec![3, 4, 2]],
            PrimitiveCase::Attention => vec![vec![4, 6], vec![4, 6], vec![4, 6]],
            PrimitiveCase::MeanSquare => vec![vec![6, 6], vec![6, 6]],
            PrimitiveCase::LogSigmoid => vec![vec![10]],
            PrimitiveCase::ClampScale => vec![vec![8]],
            PrimitiveCase::Gather => vec![vec![3, 4]],
        }
    }

    fn build<F: Scalar>(self, g: &mut Graph<F>, v: &[Var]) -> Result<Var, NumericError> {
        match self {
            PrimitiveCase::Affine => {
                let y = g.matmul(v[0], v[1])?;
                let y = g.broadcast_add_last(y, v[2])?;
                Ok(g.mean_all(y))
            }
            PrimitiveCase::BatchMatmul => {
                let y = g.batch_matmul(v[0], v[1])?;
                Ok(g.mean_all(y))
            }
            PrimitiveCase::Softmax => {
                let y = g.softmax_last(v[0]);
                let w = g.mul(y, y)?;
                Ok(g.mean_all(w))
            }
            PrimitiveCase::LayerNorm => {
                let y = g.layer_norm_last(v[0], 1e-6)?;
                let w = g.mul(y, y)?;
                let w = g.gelu(w);
                Ok(g.mean_all(w))
            }
            PrimitiveCase::LayerNormAffine => {
                let y = g.layer_norm_last(v[0], 1e-6)?;
                let y = g.broadcast_mul_last(y, v[1])?;
                let y = g.broadcast_add_last(y, v[2])?;
                let w = g.mul(y, y)?;
                Ok(g.mean_all(w))
            }
            PrimitiveCase::Gelu => {
                let y = g.gelu(v[0]);
                Ok(g.mean_all(y))
            }
            PrimitiveCase::AddMul => {
                let s = g.add(v[0], v[1])?;
                let p = g.mul(s, v[0])?;
                let d = g.sub(p, v[1])?;
                Ok(g.mean_all(d))
            }
            PrimitiveCase::TransposeReshape => {
                let p = g.permute(v[0], &[2, 0, 1])?;
                let r = g.reshape(p, vec![8, 3])?;
                let q = g.mul(r, r)?;
                Ok(g.mean_all(q))
            }
            PrimitiveCase::Attention => {
                // scaled dot-product attention composed from the primitives
                let kt = g.permute(v[1], &[1, 0])?;
                let scores = g.matmul(v[0], kt)?;
                let scores = g.scale(scores, 1.0 / (6f64).sqrt());
                let attn = g.softmax_last(scores);
                let out = g.matmul(attn, v[2])?;
                Ok(g.mean_all(out))
            }
            PrimitiveCase::MeanSquare => {
                let d = g.sub(v[0], v[1])?;
                let sq = g.mul(d, d)?;
                Ok(g.mean_all(sq))
            }
            PrimitiveCase::LogSigmoid => {
                let y = g.log_sigmoid(v[0]);
                Ok(g.mean_all(y))
            }
            PrimitiveCase::ClampScale => {
                let y = g.clamp(v[0], -1.0, 1.0);
                let y = g.scale(y, 0.7);
                let y = g.add_scalar(y, 0.1);
                let sq = g.mul(y, y)?;
                Ok(g.sum_all(sq))
            }
            PrimitiveCase::Gather => {
                let picked = g.gather(v[0], vec![0, 5, 5, 11])?;
                let sq = g.mul(picked, picked)?;
                Ok(g.mean_all(sq))
            }
        }
    }
}

/// Finite-difference verification of every differentiable primitive at the
/// given precision. Returns `(name, max relative error)` per primitive; also
/// feeds the CLI `gradcheck` subcommand.
pub fn primitive_suite<F: Scalar>(
    points_per_op: usize,
    directions: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>, NumericError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    for case in PrimitiveCase::ALL {
        let mut worst = 0.0f64;
        for _ in 0..points_per_op {
            let point: Vec<Tensor<f64>> = case
                .shapes()
                .into_iter()
                .map(|s| {
                    // spread values away from clamp kinks and softmax ties
                    Tensor::from_fn(s, |_| {
                        0.8 * rng.sample::<f64, _>(rand_distr::StandardNormal)
                    })
                })
                .collect();
            let err = gradient_check::<F, _, _>(
                |g, v| case.build(g, v),
                |g, v| case.build(g, v),
                &point,
                directions,
                &mut rng,
            )?;
            worst = worst.max(err);
        }
        results.push((case.name().to_string(), worst));
    }
    Ok(results)
}

/// Tolerance matching the checked precision: 1e-6 in double, 1e-4 in single.
pub fn expected_tolerance(dtype: Dtype) -> f64 {
    match dtype {
        Dtype::F64 => 1e-6,
        Dtype::F32 => 1e-4,
    }
}
