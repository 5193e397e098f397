//! Timestep embedding, feature encoding, the GDiT block, and the full
//! denoiser forward pass.

use super::attention::{linear, mha, mlp, rcs_cross, rcsa_self};
use super::{BlockP, BoundParams, EncoderP, GDiTModel, GditError};
use crate::numeric::{Graph, Scalar, Tensor, Var};

const LN_EPS: f64 = 1e-6;

/// Sinusoidal embedding: `[sin(t w_k) .. , cos(t w_k) ..]` with
/// `w_k = 10000^(-2k/dim)`.
pub fn timestep_embedding<F: Scalar>(t: usize, dim: usize) -> Result<Tensor<F>, GditError> {
    if dim == 0 || dim % 2 != 0 {
        return Err(GditError::OddEmbeddingDim(dim));
    }
    let half = dim / 2;
    let mut data = vec![F::zero(); dim];
    for k in 0..half {
        let omega = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        let angle = t as f64 * omega;
        data[k] = F::from_f64(angle.sin());
        data[half + k] = F::from_f64(angle.cos());
    }
    Ok(Tensor::new(vec![dim], data).expect("length dim"))
}

fn layer_norm_affine<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    gain: Var,
    bias: Var,
) -> Result<Var, GditError> {
    let h = g.layer_norm_last(x, LN_EPS)?;
    let h = g.broadcast_mul_last(h, gain)?;
    Ok(g.broadcast_add_last(h, bias)?)
}

/// One encoder side: projection to model width, then self-attention and MLP
/// with residuals and post-norms.
fn encode_side<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    enc: &EncoderP,
    heads: usize,
    raw: Var,
) -> Result<Var, GditError> {
    let s = g.shape(raw)[0];
    let t0 = linear(g, bp, &enc.proj, raw)?;
    let d = g.shape(t0)[1];
    let t0 = g.reshape(t0, vec![1, s, d])?;

    let a = mha(g, bp, &enc.attn, heads, t0, t0)?;
    let sum = g.add(t0, a)?;
    let t1 = layer_norm_affine(g, sum, bp.var(enc.ln1_gain), bp.var(enc.ln1_bias))?;

    let m = mlp(g, bp, &enc.mlp, t1)?;
    let sum = g.add(t1, m)?;
    let t2 = layer_norm_affine(g, sum, bp.var(enc.ln2_gain), bp.var(enc.ln2_bias))?;
    Ok(g.reshape(t2, vec![s, d])?)
}

/// Encode raw user/item attribute rows into conditioning tokens. Users
/// attend users, items attend items.
pub fn encode_features<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    model: &GDiTModel<F>,
    u_raw: Var,
    i_raw: Var,
) -> Result<(Var, Var), GditError> {
    let cfg = &model.config;
    let du = *g.shape(u_raw).last().expect("rank 2");
    if du != cfg.d_user_in {
        return Err(GditError::FeatureWidth {
            expected: cfg.d_user_in,
            got: du,
        });
    }
    let di = *g.shape(i_raw).last().expect("rank 2");
    if di != cfg.d_item_in {
        return Err(GditError::FeatureWidth {
            expected: cfg.d_item_in,
            got: di,
        });
    }
    let u = encode_side(g, bp, &model.layout().user_enc, cfg.n_heads, u_raw)?;
    let i = encode_side(g, bp, &model.layout().item_enc, cfg.n_heads, i_raw)?;
    Ok((u, i))
}

/// One GDiT block: three sub-layers (RCSA self-attention, feature
/// cross-attention, MLP), each wrapped as
/// `LN -> shift/scale -> sub-layer -> gate -> residual`, with the
/// scale/shift/gate triples produced from the timestep embedding.
pub fn gdit_block<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    blk: &BlockP,
    heads: usize,
    x: Var,
    t_emb: Var,
    user_tokens: Var,
    item_tokens: Var,
) -> Result<Var, GditError> {
    let d = *g.shape(x).last().expect("rank 3");

    let mod_in = g.gelu(t_emb);
    let mod_in = g.reshape(mod_in, vec![1, d])?;
    let modulation = linear(g, bp, &blk.modulation, mod_in)?;
    let modulation = g.reshape(modulation, vec![9 * d])?;
    let slice = |g: &mut Graph<F>, k: usize| -> Result<Var, GditError> {
        Ok(g.gather(modulation, (k * d..(k + 1) * d).collect())?)
    };

    let mut x = x;
    for sub in 0..3 {
        let scale = slice(g, 3 * sub)?;
        let shift = slice(g, 3 * sub + 1)?;
        let gate = slice(g, 3 * sub + 2)?;

        let h = g.layer_norm_last(x, LN_EPS)?;
        let one_plus_scale = g.add_scalar(scale, 1.0);
        let h = g.broadcast_mul_last(h, one_plus_scale)?;
        let h = g.broadcast_add_last(h, shift)?;
        let h = match sub {
            0 => rcsa_self(g, bp, &blk.self_row, &blk.self_col, heads, h)?,
            1 => rcs_cross(
                g,
                bp,
                &blk.cross_row,
                &blk.cross_col,
                heads,
                h,
                user_tokens,
                item_tokens,
            )?,
            _ => mlp(g, bp, &blk.mlp, h)?,
        };
        let h = g.broadcast_mul_last(h, gate)?;
        x = g.add(x, h)?;
    }
    Ok(x)
}

/// Full denoiser: input projection, L blocks, final norm, output projection.
/// `x_t` is `[n, m]`, raw features are `[n, d_user_in]` and `[m, d_item_in]`,
/// the result is the `[n, m]` noise prediction.
pub fn model_forward<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    model: &GDiTModel<F>,
    x_t: Var,
    t: usize,
    u_raw: Var,
    i_raw: Var,
) -> Result<Var, GditError> {
    let cfg = &model.config;
    let shape = g.shape(x_t).to_vec();
    let (n, m) = (shape[0], shape[1]);
    let d = cfg.d_model;

    let cells = g.reshape(x_t, vec![n * m, 1])?;
    let tokens = linear(g, bp, &model.layout().input_proj, cells)?;
    let mut x = g.reshape(tokens, vec![n, m, d])?;

    let t_sin = g.constant(timestep_embedding::<F>(t, d)?);
    let t_sin = g.reshape(t_sin, vec![1, d])?;
    let h = linear(g, bp, &model.layout().time_mlp.fc1, t_sin)?;
    let h = g.gelu(h);
    let h = linear(g, bp, &model.layout().time_mlp.fc2, h)?;
    let t_emb = g.reshape(h, vec![d])?;

    let (user_tokens, item_tokens) = encode_features(g, bp, model, u_raw, i_raw)?;

    for blk in &model.layout().blocks {
        x = gdit_block(g, bp, blk, cfg.n_heads, x, t_emb, user_tokens, item_tokens)?;
    }

    let x = g.layer_norm_last(x, LN_EPS)?;
    let flat = g.reshape(x, vec![n * m, d])?;
    let out = linear(g, bp, &model.layout().out_proj, flat)?;
    Ok(g.reshape(out, vec![n, m])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdit::GDiTConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn config() -> GDiTConfig {
        GDiTConfig {
            d_model: 8,
            n_heads: 2,
            n_blocks: 1,
            mlp_ratio: 2,
            d_user_in: 3,
            d_item_in: 5,
        }
    }

    fn forward(
        model: &GDiTModel<f64>,
        x: &Tensor<f64>,
        t: usize,
        u: &Tensor<f64>,
        i: &Tensor<f64>,
    ) -> Tensor<f64> {
        model.forward_eval(x, t, u, i).unwrap()
    }

    #[test]
    fn timestep_embedding_at_zero() {
        let e = timestep_embedding::<f64>(0, 4).unwrap();
        assert_eq!(e.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn timestep_embedding_matches_formula() {
        let dim = 64;
        let e = timestep_embedding::<f64>(25, dim).unwrap();
        for k in 0..dim / 2 {
            let omega = 10000f64.powf(-2.0 * k as f64 / dim as f64);
            assert!((e.data()[k] - (25.0 * omega).sin()).abs() < 1e-15);
            assert!((e.data()[dim / 2 + k] - (25.0 * omega).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn timestep_embeddings_distinct() {
        let a = timestep_embedding::<f64>(17, 64).unwrap();
        let b = timestep_embedding::<f64>(18, 64).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn timestep_embedding_rejects_odd_dim() {
        assert!(timestep_embedding::<f64>(1, 5).is_err());
    }

    #[test]
    fn output_shape_matches_input() {
        let model = GDiTModel::<f64>::init(config(), 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for &(n, m) in &[(1usize, 1usize), (2, 5), (7, 3)] {
            let x = Tensor::<f64>::randn(vec![n, m], &mut rng);
            let u = Tensor::<f64>::randn(vec![n, 3], &mut rng);
            let i = Tensor::<f64>::randn(vec![m, 5], &mut rng);
            let out = forward(&model, &x, 10, &u, &i);
            assert_eq!(out.shape(), &[n, m]);
            assert!(out.all_finite());
        }
    }

    #[test]
    fn fresh_model_ignores_features() {
        // zero-initialized gates make every block the identity, so the
        // output is a function of the input/output projections alone
        let model = GDiTModel::<f64>::init(config(), 5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let x = Tensor::<f64>::randn(vec![3, 4], &mut rng);
        let u1 = Tensor::<f64>::randn(vec![3, 3], &mut rng);
        let u2 = Tensor::<f64>::randn(vec![3, 3], &mut rng);
        let i1 = Tensor::<f64>::randn(vec![4, 5], &mut rng);
        let out1 = forward(&model, &x, 3, &u1, &i1);
        let out2 = forward(&model, &x, 3, &u2, &i1);
        assert_eq!(out1, out2);
        // and of the timestep
        let out3 = forward(&model, &x, 900, &u1, &i1);
        assert_eq!(out1, out3);
    }

    #[test]
    fn block_is_identity_at_init() {
        let model = GDiTModel::<f64>::init(config(), 7).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x = Tensor::<f64>::randn(vec![2, 3, 8], &mut rng);
        let u_tok = Tensor::<f64>::randn(vec![2, 8], &mut rng);
        let i_tok = Tensor::<f64>::randn(vec![3, 8], &mut rng);
        let temb = Tensor::<f64>::randn(vec![8], &mut rng);

        let mut g = Graph::new();
        let bp = model.bind_const(&mut g);
        let xv = g.constant(x.clone());
        let tv = g.constant(temb);
        let uv = g.constant(u_tok);
        let iv = g.constant(i_tok);
        let out = gdit_block(&mut g, &bp, &model.layout().blocks[0], 2, xv, tv, uv, iv).unwrap();
        assert_eq!(g.value(out), &x);
    }

    #[test]
    fn feature_width_mismatch_is_an_error() {
        let model = GDiTModel::<f64>::init(config(), 9).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let x = Tensor::<f64>::randn(vec![2, 2], &mut rng);
        let u_bad = Tensor::<f64>::randn(vec![2, 4], &mut rng);
        let i = Tensor::<f64>::randn(vec![2, 5], &mut rng);
        match model.forward_eval(&x, 1, &u_bad, &i) {
            Err(GditError::FeatureWidth { expected, got }) => {
                assert_eq!((expected, got), (3, 4));
            }
            other => panic!("expected feature-width error, got {other:?}"),
        }
    }

    #[test]
    fn encoder_gives_duplicates_identical_tokens() {
        let model = GDiTModel::<f64>::init(config(), 11).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let row: Vec<f64> = (0..3).map(|_| rand::Rng::random(&mut rng)).collect();
        let mut u_data = row.clone();
        u_data.extend_from_slice(&row);
        let u = Tensor::<f64>::from_f64_slice(vec![2, 3], &u_data).unwrap();
        let i = Tensor::<f64>::randn(vec![2, 5], &mut rng);

        let mut g = Graph::new();
        let bp = model.bind_const(&mut g);
        let uv = g.constant(u);
        let iv = g.constant(i);
        let (u_tok, _) = encode_features(&mut g, &bp, &model, uv, iv).unwrap();
        let t = g.value(u_tok);
        for c in 0..8 {
            assert!((t.at2(0, c) - t.at2(1, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_features_give_equal_tokens() {
        let model = GDiTModel::<f64>::init(config(), 13).unwrap();
        let mut g = Graph::new();
        let bp = model.bind_const(&mut g);
        let uv = g.constant(Tensor::<f64>::zeros(vec![3, 3]));
        let iv = g.constant(Tensor::<f64>::zeros(vec![2, 5]));
        let (u_tok, _) = encode_features(&mut g, &bp, &model, uv, iv).unwrap();
        let t = g.value(u_tok);
        for r in 1..3 {
            for c in 0..8 {
                assert!((t.at2(0, c) - t.at2(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_permutation_equivariance() {
        let model = GDiTModel::<f64>::init(config(), 14).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let (n, m) = (4usize, 3usize);
        let x = Tensor::<f64>::randn(vec![n, m], &mut rng);
        let u = Tensor::<f64>::randn(vec![n, 3], &mut rng);
        let i = Tensor::<f64>::randn(vec![m, 5], &mut rng);
        let base = forward(&model, &x, 5, &u, &i);

        let p = [3usize, 0, 2, 1]; // row permutation
        let q = [1usize, 2, 0]; // column permutation
        let permute2 = |t: &Tensor<f64>, rows: &[usize], cols: Option<&[usize]>| {
            let (r, c) = (t.shape()[0], t.shape()[1]);
            Tensor::<f64>::from_fn(vec![r, c], |idx| {
                let (i, j) = (idx / c, idx % c);
                let src_r = rows[i];
                let src_c = cols.map_or(j, |q| q[j]);
                t.at2(src_r, src_c)
            })
        };
        let xp = permute2(&x, &p, Some(&q));
        let up = permute2(&u, &p, None);
        let ip = permute2(&i, &q, None);
        let got = forward(&model, &xp, 5, &up, &ip);
        let want = permute2(&base, &p, Some(&q));
        assert!(got.max_abs_diff(&want) < 1e-10);
    }
}
