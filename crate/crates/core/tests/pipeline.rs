//! End-to-end integration: synthetic data through training, checkpointing,
//! sampling, and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use edge_rec_core::diffusion::{forward_sample, ScheduleSpec};
use edge_rec_core::eval::{evaluate_model, EvalConfig};
use edge_rec_core::fixture;
use edge_rec_core::gdit::{model_forward, BoundParams, GDiTConfig, GDiTModel, ParamSet};
use edge_rec_core::ingest::{build_matrix, featurize, sample_patch, time_split};
use edge_rec_core::numeric::{gradient_check, Graph, NumericError, Scalar, Tensor, Var};
use edge_rec_core::train::{
    diffusion_loss, load_checkpoint, run_training, save_checkpoint, Checkpoint, LoadedCheckpoint,
    LossConfig, TrainConfig, TrainInputs,
};
use edge_rec_core::xform::RatingScaler;

fn schedule_spec() -> ScheduleSpec {
    ScheduleSpec::Linear {
        t_steps: 40,
        beta_start: 1e-4,
        beta_end: 0.05,
    }
}

#[test]
fn train_checkpoint_evaluate_roundtrip() {
    let ds = fixture::synthetic_rank_one(16, 16, 21);
    let (train, test) = time_split(&ds, 0.2).unwrap();
    let scaler = RatingScaler::linear(1.0, 5.0).unwrap();
    let matrix = build_matrix(&train, &scaler).unwrap();
    let features = featurize(&ds).unwrap();

    let inputs = TrainInputs {
        matrix: &matrix,
        features: &features,
        schedule_spec: schedule_spec(),
        region_rows: None,
        region_cols: None,
    };
    let model_config = GDiTConfig {
        d_model: 8,
        n_heads: 2,
        n_blocks: 1,
        mlp_ratio: 2,
        d_user_in: features.d_user,
        d_item_in: features.d_item,
    };
    let train_config = TrainConfig {
        iterations: 12,
        batch_size: 2,
        patch_n: 6,
        patch_m: 6,
        min_density: 0.3,
        learning_rate: 1e-3,
        seed: 22,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let run = run_training::<f64>(
        &inputs,
        model_config,
        &train_config,
        &scaler,
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(run.loss_trace.len(), 12);

    // reload the final checkpoint and check it predicts identically
    let ckpt = match load_checkpoint(dir.path().join("final")).unwrap() {
        LoadedCheckpoint::Double(c) => c,
        LoadedCheckpoint::Single(_) => panic!("trained in double"),
    };
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let x = Tensor::<f64>::randn(vec![5, 5], &mut rng);
    let u = Tensor::<f64>::from_f64_slice(
        vec![5, features.d_user],
        &features.user_rows(&[0, 1, 2, 3, 4]),
    )
    .unwrap();
    let i = Tensor::<f64>::from_f64_slice(
        vec![5, features.d_item],
        &features.item_rows(&[0, 1, 2, 3, 4]),
    )
    .unwrap();
    let before = run.model.forward_eval(&x, 7, &u, &i).unwrap();
    let after = ckpt.model.forward_eval(&x, 7, &u, &i).unwrap();
    assert_eq!(before, after);

    // evaluation is deterministic given (checkpoint, seed)
    let schedule = schedule_spec().build().unwrap();
    let eval_config = EvalConfig {
        k_values: vec![1, 3, 5],
        num_patches: 3,
        patch_n: 8,
        patch_m: 8,
        min_density: 0.0,
        relevance_threshold: 4.0,
        seed: 24,
        value_range: scaler.value_range(),
    };
    let r1 = evaluate_model(
        &ckpt.model,
        &matrix,
        &test.records,
        &features,
        &schedule,
        &eval_config,
        None,
        None,
    )
    .unwrap();
    let r2 = evaluate_model(
        &ckpt.model,
        &matrix,
        &test.records,
        &features,
        &schedule,
        &eval_config,
        None,
        None,
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r2).unwrap()
    );
    assert!(r1.users_evaluated > 0);
    for m in &r1.mean {
        for v in [m.precision, m.recall, m.ndcg, m.mrr, m.hitrate] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn timestep_conditioning_live_after_one_step() {
    // fresh models ignore t (gates are zero); one optimizer step makes the
    // conditioning pathway live
    let ds = fixture::synthetic_rank_one(12, 12, 31);
    let scaler = RatingScaler::linear(1.0, 5.0).unwrap();
    let matrix = build_matrix(&ds, &scaler).unwrap();
    let features = featurize(&ds).unwrap();
    let inputs = TrainInputs {
        matrix: &matrix,
        features: &features,
        schedule_spec: schedule_spec(),
        region_rows: None,
        region_cols: None,
    };
    let model_config = GDiTConfig {
        d_model: 8,
        n_heads: 2,
        n_blocks: 1,
        mlp_ratio: 2,
        d_user_in: features.d_user,
        d_item_in: features.d_item,
    };
    let train_config = TrainConfig {
        iterations: 1,
        batch_size: 2,
        patch_n: 6,
        patch_m: 6,
        learning_rate: 1e-2,
        seed: 32,
        ..Default::default()
    };
    let run = run_training::<f64>(&inputs, model_config, &train_config, &scaler, None).unwrap();

    let mut rng = ChaCha12Rng::seed_from_u64(33);
    let x = Tensor::<f64>::randn(vec![4, 4], &mut rng);
    let u =
        Tensor::<f64>::from_f64_slice(vec![4, features.d_user], &features.user_rows(&[0, 1, 2, 3]))
            .unwrap();
    let i =
        Tensor::<f64>::from_f64_slice(vec![4, features.d_item], &features.item_rows(&[0, 1, 2, 3]))
            .unwrap();
    let at_t1 = run.model.forward_eval(&x, 1, &u, &i).unwrap();
    let at_t30 = run.model.forward_eval(&x, 30, &u, &i).unwrap();
    assert!(
        at_t1.max_abs_diff(&at_t30) > 1e-12,
        "timestep conditioning is dead after a training step"
    );
}

#[test]
fn total_loss_gradient_passes_finite_differences_on_4x4_patch() {
    // the full training objective (noise MSE + BPR on the reconstruction),
    // differentiated through the model
    let ds = fixture::synthetic_rank_one(8, 8, 41);
    let scaler = RatingScaler::linear(1.0, 5.0).unwrap();
    let matrix = build_matrix(&ds, &scaler).unwrap();
    let features = featurize(&ds).unwrap();
    let schedule = schedule_spec().build().unwrap();

    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let patch = sample_patch(&matrix, 4, 4, 0.5, &mut rng).unwrap();
    let t = 11usize;
    let x0 = Tensor::<f64>::from_f64_slice(vec![4, 4], &patch.values).unwrap();
    let eps = Tensor::<f64>::randn(vec![4, 4], &mut rng);
    let x_t = forward_sample(&x0, t, &eps, &schedule).unwrap();
    let u_raw = Tensor::<f64>::from_f64_slice(
        vec![4, features.d_user],
        &features.user_rows(&patch.user_rows),
    )
    .unwrap();
    let i_raw = Tensor::<f64>::from_f64_slice(
        vec![4, features.d_item],
        &features.item_rows(&patch.item_cols),
    )
    .unwrap();

    let config = GDiTConfig {
        d_model: 8,
        n_heads: 2,
        n_blocks: 1,
        mlp_ratio: 2,
        d_user_in: features.d_user,
        d_item_in: features.d_item,
    };
    let model32 = GDiTModel::<f32>::init(config, 43).unwrap();
    let entries = model32
        .params()
        .iter()
        .map(|(n, t)| {
            (
                n.to_string(),
                Tensor::<f64>::from_f64_slice(t.shape().to_vec(), &t.to_f64_vec()).unwrap(),
            )
        })
        .collect();
    let model64 = GDiTModel::<f64>::from_params(config, ParamSet::from_named(entries)).unwrap();

    let loss_cfg = LossConfig {
        bpr_weight: 0.5,
        bpr_pairs_per_user: 2,
        mask_unknown: false,
    };

    fn build<F: Scalar>(
        g: &mut Graph<F>,
        v: &[Var],
        model: &GDiTModel<F>,
        patch: &edge_rec_core::ingest::Patch,
        x_t: &Tensor<f64>,
        eps: &Tensor<f64>,
        u_raw: &Tensor<f64>,
        i_raw: &Tensor<f64>,
        schedule: &edge_rec_core::diffusion::NoiseSchedule,
        t: usize,
        loss_cfg: &LossConfig,
    ) -> Result<Var, NumericError> {
        let n_params = model.params().len();
        let bp = BoundParams::from_vars(v[..n_params].to_vec());
        let cast = |t: &Tensor<f64>| {
            Tensor::<F>::from_f64_slice(t.shape().to_vec(), t.data()).expect("same length")
        };
        let x_t_var = g.constant(cast(x_t));
        let eps_var = g.constant(cast(eps));
        let u = g.constant(cast(u_raw));
        let i = g.constant(cast(i_raw));
        let eps_hat = model_forward(g, &bp, model, x_t_var, t, u, i)
            .map_err(|e| NumericError::InvalidArgument(e.to_string()))?;
        // fixed rng per build: the same BPR pairs on every re-evaluation
        let mut pair_rng = ChaCha12Rng::seed_from_u64(44);
        let parts = diffusion_loss(
            g,
            eps_var,
            eps_hat,
            x_t_var,
            t,
            patch,
            schedule,
            loss_cfg,
            &mut pair_rng,
        )
        .map_err(|e| NumericError::InvalidArgument(e.to_string()))?;
        Ok(parts.total)
    }

    let point: Vec<Tensor<f64>> = model64.params().tensors();
    let err64 = gradient_check::<f64, _, _>(
        |g, v| {
            build(
                g, v, &model64, &patch, &x_t, &eps, &u_raw, &i_raw, &schedule, t, &loss_cfg,
            )
        },
        |g, v| {
            build(
                g, v, &model64, &patch, &x_t, &eps, &u_raw, &i_raw, &schedule, t, &loss_cfg,
            )
        },
        &point,
        6,
        &mut rng,
    )
    .unwrap();
    assert!(err64 <= 1e-6, "double-precision rel-err {err64}");

    let err32 = gradient_check::<f32, _, _>(
        |g, v| {
            build(
                g, v, &model32, &patch, &x_t, &eps, &u_raw, &i_raw, &schedule, t, &loss_cfg,
            )
        },
        |g, v| {
            build(
                g, v, &model64, &patch, &x_t, &eps, &u_raw, &i_raw, &schedule, t, &loss_cfg,
            )
        },
        &point,
        6,
        &mut rng,
    )
    .unwrap();
    assert!(err32 <= 1e-4, "single-precision rel-err {err32}");
}

#[test]
fn checkpoint_scaler_state_follows_quantile_transform() {
    // quantile-fitted scalers ride along in the checkpoint so sampling-time
    // inversion matches training-time scaling
    let ds = fixture::synthetic_rank_one(10, 10, 51);
    let map = edge_rec_core::xform::QuantileMap::fit(&ds.ratings()).unwrap();
    let scaler = RatingScaler::quantile(1.0, 5.0, map).unwrap();
    let ckpt = Checkpoint {
        model: GDiTModel::<f64>::init(
            GDiTConfig {
                d_model: 8,
                n_heads: 2,
                n_blocks: 1,
                mlp_ratio: 2,
                d_user_in: 10,
                d_item_in: 10,
            },
            52,
        )
        .unwrap(),
        schedule: schedule_spec(),
        scaler: scaler.clone(),
        iteration: 0,
        seed: 52,
    };
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path().join("q")).unwrap();
    let loaded = match load_checkpoint(dir.path().join("q")).unwrap() {
        LoadedCheckpoint::Double(c) => c,
        LoadedCheckpoint::Single(_) => panic!("double expected"),
    };
    assert_eq!(loaded.scaler, scaler);
    // round-trip through the loaded scaler stays exact on fitted levels
    for level in [1.0, 2.0, 3.0, 4.0, 5.0] {
        if ds.records.iter().any(|r| r.rating == level) {
            let z = loaded.scaler.scale(level).unwrap();
            assert_eq!(loaded.scaler.unscale(z), level);
        }
    }
}
