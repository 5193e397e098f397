//! Multi-head attention and the row-column separable composition.

use super::{AttnP, BoundParams, GditError, LinearP};
use crate::numeric::{Graph, Scalar, Var};

/// `x[..., d_in] @ w + b`, flattening leading dimensions around the matmul.
pub(crate) fn linear<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    lin: &LinearP,
    x: Var,
) -> Result<Var, GditError> {
    let shape = g.shape(x).to_vec();
    let d_in = *shape.last().expect("linear input has rank >= 1");
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let flat = g.reshape(x, vec![rows, d_in])?;
    let y = g.matmul(flat, bp.var(lin.w))?;
    let y = g.broadcast_add_last(y, bp.var(lin.b))?;
    let d_out = g.shape(y)[1];
    let mut out_shape = shape;
    *out_shape.last_mut().expect("rank >= 1") = d_out;
    Ok(g.reshape(y, out_shape)?)
}

pub(crate) fn mlp<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    p: &super::MlpP,
    x: Var,
) -> Result<Var, GditError> {
    let h = linear(g, bp, &p.fc1, x)?;
    let h = g.gelu(h);
    linear(g, bp, &p.fc2, h)
}

/// Replicate `x[s, d]` into `[copies, s, d]`.
fn repeat_rows<F: Scalar>(g: &mut Graph<F>, x: Var, copies: usize) -> Result<Var, GditError> {
    let shape = g.shape(x).to_vec();
    let len: usize = shape.iter().product();
    let indices: Vec<usize> = (0..copies * len).map(|i| i % len).collect();
    let flat = g.gather(x, indices)?;
    let mut out_shape = vec![copies];
    out_shape.extend(shape);
    Ok(g.reshape(flat, out_shape)?)
}

fn split_heads<F: Scalar>(g: &mut Graph<F>, x: Var, heads: usize) -> Result<Var, GditError> {
    let s = g.shape(x).to_vec(); // [b, t, d]
    let (b, t, d) = (s[0], s[1], s[2]);
    let dh = d / heads;
    let x = g.reshape(x, vec![b, t, heads, dh])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    Ok(g.reshape(x, vec![b * heads, t, dh])?)
}

fn merge_heads<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    b: usize,
    heads: usize,
) -> Result<Var, GditError> {
    let s = g.shape(x).to_vec(); // [b*heads, t, dh]
    let (t, dh) = (s[1], s[2]);
    let x = g.reshape(x, vec![b, heads, t, dh])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    Ok(g.reshape(x, vec![b, t, heads * dh])?)
}

/// Multi-head scaled-dot-product attention over a batch of sequences:
/// queries from `q_in [b, s, d]`, keys/values from `kv_in [b, t, d]`.
pub fn mha<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    p: &AttnP,
    heads: usize,
    q_in: Var,
    kv_in: Var,
) -> Result<Var, GditError> {
    let b = g.shape(q_in)[0];
    let d = *g.shape(q_in).last().expect("rank 3");
    let dh = d / heads;

    let q = linear(g, bp, &p.q, q_in)?;
    let k = linear(g, bp, &p.k, kv_in)?;
    let v = linear(g, bp, &p.v, kv_in)?;

    let q = split_heads(g, q, heads)?;
    let k = split_heads(g, k, heads)?;
    let v = split_heads(g, v, heads)?;

    let kt = g.permute(k, &[0, 2, 1])?;
    let scores = g.batch_matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let attn = g.softmax_last(scores);
    let ctx = g.batch_matmul(attn, v)?;
    let ctx = merge_heads(g, ctx, b, heads)?;
    linear(g, bp, &p.o, ctx)
}

/// Row-column separable self-attention on `x [n, m, d]`: each cell attends
/// its row first (sequence length m), then its column (the same attention on
/// the transpose), each pass with its own projections.
pub fn rcsa_self<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    row: &AttnP,
    col: &AttnP,
    heads: usize,
    x: Var,
) -> Result<Var, GditError> {
    let y = mha(g, bp, row, heads, x, x)?;
    let yt = g.permute(y, &[1, 0, 2])?;
    let zt = mha(g, bp, col, heads, yt, yt)?;
    Ok(g.permute(zt, &[1, 0, 2])?)
}

/// Row-column cross-attention conditioned on node features: along each row
/// the m cell tokens query the m item tokens; along each column the n cell
/// tokens query the n user tokens.
pub fn rcs_cross<F: Scalar>(
    g: &mut Graph<F>,
    bp: &BoundParams,
    row: &AttnP,
    col: &AttnP,
    heads: usize,
    x: Var,
    user_tokens: Var,
    item_tokens: Var,
) -> Result<Var, GditError> {
    let (n, m) = (g.shape(x)[0], g.shape(x)[1]);
    let item_kv = repeat_rows(g, item_tokens, n)?; // [n, m, d]
    let y = mha(g, bp, row, heads, x, item_kv)?;

    let yt = g.permute(y, &[1, 0, 2])?; // [m, n, d]
    let user_kv = repeat_rows(g, user_tokens, m)?; // [m, n, d]
    let zt = mha(g, bp, col, heads, yt, user_kv)?;
    Ok(g.permute(zt, &[1, 0, 2])?)
}

/// Multiply-accumulate estimate of one RCSA pass pair: projections plus the
/// score and context products. The row pass is quadratic in m, the column
/// pass in n.
pub fn rcsa_flop_estimate(n: usize, m: usize, d: usize) -> (u64, u64) {
    let (n, m, d) = (n as u64, m as u64, d as u64);
    let row = n * (4 * m * d * d + 2 * m * m * d);
    let col = m * (4 * n * d * d + 2 * n * n * d);
    (row, col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdit::{GDiTConfig, GDiTModel};
    use crate::numeric::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn config(d: usize, heads: usize) -> GDiTConfig {
        GDiTConfig {
            d_model: d,
            n_heads: heads,
            n_blocks: 1,
            mlp_ratio: 2,
            d_user_in: 3,
            d_item_in: 3,
        }
    }

    /// Weight matrices as plain f64 for the oracle.
    fn mat(model: &GDiTModel<f64>, lin: LinearP) -> (Vec<f64>, Vec<f64>) {
        (
            model.params().get(lin.w).to_f64_vec(),
            model.params().get(lin.b).to_f64_vec(),
        )
    }

    /// Dense masked multi-head attention, written with explicit loops and
    /// independent of the graph machinery.
    #[allow(clippy::too_many_arguments)]
    fn dense_masked_attention(
        model: &GDiTModel<f64>,
        p: &AttnP,
        heads: usize,
        q_tokens: &[f64],
        n_q: usize,
        kv_tokens: &[f64],
        n_kv: usize,
        d: usize,
        allowed: impl Fn(usize, usize) -> bool,
    ) -> Vec<f64> {
        let (wq, bq) = mat(model, p.q);
        let (wk, bk) = mat(model, p.k);
        let (wv, bv) = mat(model, p.v);
        let (wo, bo) = mat(model, p.o);
        let project = |tokens: &[f64], n: usize, w: &[f64], b: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                for o in 0..d {
                    let mut acc = b[o];
                    for k in 0..d {
                        acc += tokens[i * d + k] * w[k * d + o];
                    }
                    out[i * d + o] = acc;
                }
            }
            out
        };
        let q = project(q_tokens, n_q, &wq, &bq);
        let k = project(kv_tokens, n_kv, &wk, &bk);
        let v = project(kv_tokens, n_kv, &wv, &bv);

        let dh = d / heads;
        let mut ctx = vec![0.0; n_q * d];
        for i in 0..n_q {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let mut scores = Vec::new();
                for j in 0..n_kv {
                    if !allowed(i, j) {
                        continue;
                    }
                    let mut s = 0.0;
                    for c in cols.clone() {
                        s += q[i * d + c] * k[j * d + c];
                    }
                    scores.push((j, s / (dh as f64).sqrt()));
                }
                let max = scores
                    .iter()
                    .map(|&(_, s)| s)
                    .fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = scores.iter().map(|&(_, s)| (s - max).exp()).sum();
                for &(j, s) in &scores {
                    let w = (s - max).exp() / total;
                    for c in cols.clone() {
                        ctx[i * d + c] += w * v[j * d + c];
                    }
                }
            }
        }
        project(&ctx, n_q, &wo, &bo)
    }

    fn rcsa_oracle(
        model: &GDiTModel<f64>,
        n: usize,
        m: usize,
        d: usize,
        heads: usize,
        x: &[f64],
    ) -> Vec<f64> {
        let blk = &model.layout().blocks[0];
        // row pass: same-row cells only
        let after_row = dense_masked_attention(
            model,
            &blk.self_row,
            heads,
            x,
            n * m,
            x,
            n * m,
            d,
            |i, j| i / m == j / m,
        );
        // column pass: same-column cells only
        dense_masked_attention(
            model,
            &blk.self_col,
            heads,
            &after_row,
            n * m,
            &after_row,
            n * m,
            d,
            |i, j| i % m == j % m,
        )
    }

    fn run_rcsa(model: &GDiTModel<f64>, n: usize, m: usize, x: &Tensor<f64>) -> Vec<f64> {
        let mut g = Graph::new();
        let bp = model.bind_const(&mut g);
        let xv = g.constant(x.clone());
        let blk = &model.layout().blocks[0];
        let out = rcsa_self(
            &mut g,
            &bp,
            &blk.self_row,
            &blk.self_col,
            model.config.n_heads,
            xv,
        )
        .unwrap();
        assert_eq!(g.shape(out), &[n, m, model.config.d_model]);
        g.value(out).to_f64_vec()
    }

    #[test]
    fn rcsa_matches_masked_dense_oracle() {
        let d = 8;
        let heads = 2;
        let model = GDiTModel::<f64>::init(config(d, heads), 5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for &(n, m) in &[(1usize, 1usize), (3, 4), (2, 7), (5, 2)] {
            let x = Tensor::<f64>::randn(vec![n, m, d], &mut rng);
            let got = run_rcsa(&model, n, m, &x);
            let want = rcsa_oracle(&model, n, m, d, heads, &x.to_f64_vec());
            let diff = got
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-10, "{n}x{m}: max abs diff {diff}");
        }
    }

    #[test]
    fn rcs_cross_matches_dense_oracle() {
        let d = 8;
        let heads = 2;
        let model = GDiTModel::<f64>::init(config(d, heads), 6).unwrap();
        let blk = &model.layout().blocks[0];
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let (n, m) = (3usize, 4usize);
        let x = Tensor::<f64>::randn(vec![n, m, d], &mut rng);
        let u_tok = Tensor::<f64>::randn(vec![n, d], &mut rng);
        let i_tok = Tensor::<f64>::randn(vec![m, d], &mut rng);

        let mut g = Graph::new();
        let bp = model.bind_const(&mut g);
        let xv = g.constant(x.clone());
        let uv = g.constant(u_tok.clone());
        let iv = g.constant(i_tok.clone());
        let out = rcs_cross(
            &mut g,
            &bp,
            &blk.cross_row,
            &blk.cross_col,
            heads,
            xv,
            uv,
            iv,
        )
        .unwrap();
        let got = g.value(out).to_f64_vec();

        // row pass: every cell may attend every item token
        let after_row = dense_masked_attention(
            &model,
            &blk.cross_row,
            heads,
            &x.to_f64_vec(),
            n * m,
            &i_tok.to_f64_vec(),
            m,
            d,
            |_, _| true,
        );
        // column pass: every cell may attend every user token
        let want = dense_masked_attention(
            &model,
            &blk.cross_col,
            heads,
            &after_row,
            n * m,
            &u_tok.to_f64_vec(),
            n,
            d,
            |_, _| true,
        );
        let diff = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-10, "max abs diff {diff}");
    }

    #[test]
    fn singleton_rcsa_is_double_value_projection() {
        // with one token the softmax weight is 1 and each pass reduces to
        // out = Wo (Wv x + bv) + bo
        let d = 4;
        let model = GDiTModel::<f64>::init(config(d, 1), 7).unwrap();
        let blk = &model.layout().blocks[0];
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let x = Tensor::<f64>::randn(vec![1, 1, d], &mut rng);
        let got = run_rcsa(&model, 1, 1, &x);

        let pass = |p: &AttnP, inp: &[f64]| -> Vec<f64> {
            let (wv, bv) = mat(&model, p.v);
            let (wo, bo) = mat(&model, p.o);
            let mut mid = bv.clone();
            for o in 0..d {
                for k in 0..d {
                    mid[o] += inp[k] * wv[k * d + o];
                }
            }
            let mut out = bo.clone();
            for o in 0..d {
                for k in 0..d {
                    out[o] += mid[k] * wo[k * d + o];
                }
            }
            out
        };
        let want = pass(&blk.self_col, &pass(&blk.self_row, &x.to_f64_vec()));
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_with_single_item_token_attends_it_fully() {
        let d = 4;
        let model = GDiTModel::<f64>::init(config(d, 2), 8).unwrap();
        let blk = &model.layout().blocks[0];
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let (n, m) = (3usize, 1usize);
        let x = Tensor::<f64>::randn(vec![n, m, d], &mut rng);
        let u_tok = Tensor::<f64>::randn(vec![n, d], &mut rng);
        let i_tok = Tensor::<f64>::randn(vec![m, d], &mut rng);

        let mut g = Graph::new();
        let bp = model.bind_const(&mut g);
        let xv = g.constant(x.clone());
        let uv = g.constant(u_tok.clone());
        let iv = g.constant(i_tok.clone());
        let out = rcs_cross(&mut g, &bp, &blk.cross_row, &blk.cross_col, 2, xv, uv, iv).unwrap();

        // row pass output must ignore the queries' values entirely: with one
        // key the attention weight is 1 regardless of the score
        let after_row = dense_masked_attention(
            &model,
            &blk.cross_row,
            2,
            &x.to_f64_vec(),
            n * m,
            &i_tok.to_f64_vec(),
            m,
            d,
            |_, _| true,
        );
        let (wv, bv) = mat(&model, blk.cross_row.v);
        let (wo, bo) = mat(&model, blk.cross_row.o);
        let mut mid = bv.clone();
        for o in 0..d {
            for k in 0..d {
                mid[o] += i_tok.to_f64_vec()[k] * wv[k * d + o];
            }
        }
        let mut want_row = bo.clone();
        for o in 0..d {
            for k in 0..d {
                want_row[o] += mid[k] * wo[k * d + o];
            }
        }
        for cell in 0..n {
            for c in 0..d {
                assert!((after_row[cell * d + c] - want_row[c]).abs() < 1e-12);
            }
        }
        assert_eq!(g.shape(out), &[n, m, d]);
    }

    #[test]
    fn rcsa_is_permutation_equivariant() {
        let d = 8;
        let model = GDiTModel::<f64>::init(config(d, 2), 9).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let (n, m) = (4usize, 3usize);
        let x = Tensor::<f64>::randn(vec![n, m, d], &mut rng);
        let base = run_rcsa(&model, n, m, &x);

        let row_perm = [2usize, 0, 3, 1];
        let mut permuted = vec![0.0; n * m * d];
        for (r, &src) in row_perm.iter().enumerate() {
            permuted[r * m * d..(r + 1) * m * d]
                .copy_from_slice(&x.to_f64_vec()[src * m * d..(src + 1) * m * d]);
        }
        let xp = Tensor::<f64>::from_f64_slice(vec![n, m, d], &permuted).unwrap();
        let got = run_rcsa(&model, n, m, &xp);
        for (r, &src) in row_perm.iter().enumerate() {
            for k in 0..m * d {
                assert!((got[r * m * d + k] - base[src * m * d + k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn flop_estimate_scaling_ratios() {
        // attention-dominated sizes: doubling m quadruples the row pass and
        // doubles the column pass
        let (n, m, d) = (64, 256, 4);
        let (r1, c1) = rcsa_flop_estimate(n, m, d);
        let (r2, c2) = rcsa_flop_estimate(n, 2 * m, d);
        let row_ratio = r2 as f64 / r1 as f64;
        let col_ratio = c2 as f64 / c1 as f64;
        assert!((row_ratio - 4.0).abs() < 0.15, "row ratio {row_ratio}");
        assert!((col_ratio - 2.0).abs() < 1e-9, "col ratio {col_ratio}");
    }

    #[test]
    #[ignore = "wall-clock measurement; too noisy for CI boxes"]
    fn rcsa_wall_time_scaling_on_m() {
        // the row pass works on n sequences of length m (quadratic in m),
        // the column pass on m sequences of length n (linear in m)
        let d = 8;
        let model = GDiTModel::<f64>::init(config(d, 2), 99).unwrap();
        let blk = &model.layout().blocks[0];
        let time_pass = |p: &AttnP, b: usize, s: usize| -> f64 {
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            let x = Tensor::<f64>::randn(vec![b, s, d], &mut rng);
            let start = std::time::Instant::now();
            for _ in 0..20 {
                let mut g = Graph::new();
                let bp = model.bind_const(&mut g);
                let xv = g.constant(x.clone());
                let _ = mha(&mut g, &bp, p, 2, xv, xv).unwrap();
            }
            start.elapsed().as_secs_f64()
        };
        let (n, m) = (48usize, 192usize);
        let row_1 = time_pass(&blk.self_row, n, m);
        let row_2 = time_pass(&blk.self_row, n, 2 * m);
        let col_1 = time_pass(&blk.self_col, m, n);
        let col_2 = time_pass(&blk.self_col, 2 * m, n);
        let row_ratio = row_2 / row_1;
        let col_ratio = col_2 / col_1;
        println!("row pass x{row_ratio:.2}, col pass x{col_ratio:.2} on doubling m");
        assert!(
            row_ratio > 2.5,
            "row pass should scale ~4x, got {row_ratio:.2}"
        );
        assert!(
            col_ratio < 3.0,
            "col pass should scale ~2x, got {col_ratio:.2}"
        );
    }
}
