//! `edge-rec`: train, sample, and evaluate the interaction-matrix diffusion
//! model from the command line.

mod pipeline;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;
use serde_json::json;

use edge_rec_core::diffusion::ScheduleSpec;
use edge_rec_core::eval::{evaluate_model, EvalConfig};
use edge_rec_core::gdit::GDiTConfig;
use edge_rec_core::ingest::{sample_patch_bounded, write_dataset_cache, Patch};
use edge_rec_core::numeric::{primitive_suite, Scalar, Tensor};
use edge_rec_core::sample::{predictions_csv, tiled_sample, SampleConfig};
use edge_rec_core::train::{
    load_checkpoint, run_training, Checkpoint, LoadedCheckpoint, TrainConfig, TrainInputs,
};

use pipeline::{
    content_hash, dataset_files, prepare, unix_now, write_manifest, DatasetArg, PrecisionArg,
    PreparedData, RunManifest, TransformArg,
};

#[derive(Parser)]
#[command(
    name = "edge-rec",
    version,
    about = "Diffusion over weighted user-item interaction matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file; explicit flags take precedence over its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset and write the cached matrix/feature arrays.
    Ingest(IngestArgs),
    /// Train a model and write checkpoints plus a loss trace.
    Train(TrainArgs),
    /// Sample or inpaint a patch (or tile a whole region) from a checkpoint.
    Sample(SampleArgs),
    /// Top-K evaluation of a checkpoint against held-out test edges.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Build the toy rating graph used in tests and demos.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "ml-100k")]
    dataset: DatasetArg,
    /// Directory with the raw dataset files (default: $EDGE_REC_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    transform: Option<TransformArg>,
    /// Held-out fraction of the time-ordered records.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Output directory for the dataset cache.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Patch shape, e.g. 50x50.
    #[arg(long)]
    patch: Option<String>,
    #[arg(long)]
    min_density: Option<f64>,
    /// Restrict sampling to the dense corner at this label density.
    #[arg(long)]
    label_density: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    bpr_weight: Option<f64>,
    #[arg(long)]
    bpr_pairs: Option<usize>,
    /// Mask unknown cells out of the noise loss.
    #[arg(long)]
    mask_unknown: bool,
    #[arg(long, value_enum)]
    transform: Option<TransformArg>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    t_steps: Option<usize>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    mlp_ratio: Option<usize>,
    /// Output directory for checkpoints, loss.csv and the run manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint to sample from.
    #[arg(long)]
    ckpt: PathBuf,
    /// Patch shape to inpaint, e.g. 64x64.
    #[arg(long)]
    patch: Option<String>,
    /// Tile shape: denoise the whole eligible region tile by tile.
    #[arg(long)]
    tile: Option<String>,
    #[arg(long)]
    min_density: Option<f64>,
    #[arg(long)]
    label_density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Predictions CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    patch: Option<String>,
    #[arg(long)]
    num_patches: Option<usize>,
    /// Top-K cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    relevance_threshold: Option<f64>,
    #[arg(long)]
    min_density: Option<f64>,
    #[arg(long)]
    label_density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Output directory for metrics.csv, report.json and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random probe points per primitive.
    #[arg(long, default_value_t = 25)]
    points: usize,
    /// Random directions per point.
    #[arg(long, default_value_t = 2)]
    dirs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FixtureArgs {
    /// Write the fixture's dataset cache here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Entries a `--config` JSON file may provide; flags override them.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    precision: Option<String>,
    iters: Option<u64>,
    batch: Option<usize>,
    patch: Option<String>,
    tile: Option<String>,
    min_density: Option<f64>,
    label_density: Option<f64>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    bpr_weight: Option<f64>,
    bpr_pairs: Option<usize>,
    mask_unknown: Option<bool>,
    transform: Option<String>,
    test_fraction: Option<f64>,
    t_steps: Option<usize>,
    beta_start: Option<f64>,
    beta_end: Option<f64>,
    d_model: Option<usize>,
    heads: Option<usize>,
    blocks: Option<usize>,
    mlp_ratio: Option<usize>,
    k: Option<Vec<usize>>,
    num_patches: Option<usize>,
    relevance_threshold: Option<f64>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    fn transform_arg(&self) -> Result<Option<TransformArg>> {
        Ok(match self.transform.as_deref() {
            None => None,
            Some("linear") => Some(TransformArg::Linear),
            Some("quantile") => Some(TransformArg::Quantile),
            Some(other) => bail!("config transform `{other}` is not linear|quantile"),
        })
    }

    fn precision_arg(&self) -> Result<Option<PrecisionArg>> {
        Ok(match self.precision.as_deref() {
            None => None,
            Some("single") => Some(PrecisionArg::Single),
            Some("double") => Some(PrecisionArg::Double),
            Some(other) => bail!("config precision `{other}` is not single|double"),
        })
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn parse_shape(text: &str) -> Result<(usize, usize)> {
    let (n, m) = text
        .split_once(['x', 'X'])
        .with_context(|| format!("shape `{text}` is not NxM"))?;
    Ok((
        n.trim()
            .parse()
            .with_context(|| format!("bad shape `{text}`"))?,
        m.trim()
            .parse()
            .with_context(|| format!("bad shape `{text}`"))?,
    ))
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            let _ = Cli::command();
            return 1;
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: configuring {threads} threads: {e}");
            return 2;
        }
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, &file),
        Command::Train(args) => cmd_train(args, &file),
        Command::Sample(args) => cmd_sample(args, &file),
        Command::Evaluate(args) => cmd_evaluate(args, &file),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Fixture(args) => cmd_fixture(args),
    }
}

fn cmd_ingest(args: IngestArgs, file: &FileConfig) -> Result<()> {
    let started = unix_now();
    let transform = pick(args.transform, file.transform_arg()?, TransformArg::Linear);
    let test_fraction = pick(args.test_fraction, file.test_fraction, 0.1);

    let data = prepare(
        args.data.dataset,
        args.data.data_dir.as_deref(),
        transform,
        test_fraction,
        None,
        None,
    )?;
    write_dataset_cache(
        &args.out,
        data.kind,
        data.train.rating_scale,
        &data.scaler,
        &data.matrix,
        &data.features,
    )?;

    let resolved = json!({
        "dataset": format!("{:?}", args.data.dataset),
        "transform": format!("{transform:?}"),
        "test_fraction": test_fraction,
        "n_users": data.matrix.n_users,
        "n_items": data.matrix.n_items,
        "train_records": data.train.records.len(),
        "test_records": data.test.records.len(),
    });
    let files = args
        .data
        .data_dir
        .as_deref()
        .map(|d| dataset_files(args.data.dataset, d))
        .unwrap_or_default();
    let manifest = RunManifest {
        command: "ingest".into(),
        input_hash: content_hash(&files, &resolved.to_string())?,
        resolved_config: resolved,
        seed: 0,
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_manifest(&args.out, &manifest)?;
    println!(
        "ingested {} users x {} items ({} train / {} test records) -> {}",
        data.matrix.n_users,
        data.matrix.n_items,
        data.train.records.len(),
        data.test.records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, file: &FileConfig) -> Result<()> {
    let started = unix_now();
    let transform = pick(args.transform, file.transform_arg()?, TransformArg::Linear);
    let precision = pick(args.precision, file.precision_arg()?, PrecisionArg::Single);
    let test_fraction = pick(args.test_fraction, file.test_fraction, 0.1);
    let label_density = args.label_density.or(file.label_density);
    let (patch_n, patch_m) = parse_shape(&pick(args.patch, file.patch.clone(), "50x50".into()))?;

    let train_config = TrainConfig {
        iterations: pick(args.iters, file.iters, 10_000),
        batch_size: pick(args.batch, file.batch, 16),
        patch_n,
        patch_m,
        min_density: pick(args.min_density, file.min_density, 0.0),
        learning_rate: pick(args.lr, file.lr, 1e-4),
        weight_decay: pick(args.weight_decay, file.weight_decay, 0.0),
        bpr_weight: pick(args.bpr_weight, file.bpr_weight, 0.1),
        bpr_pairs_per_user: pick(args.bpr_pairs, file.bpr_pairs, 4),
        mask_unknown_in_loss: args.mask_unknown || file.mask_unknown.unwrap_or(false),
        seed: pick(args.seed, file.seed, 0),
    };
    let schedule_spec = ScheduleSpec::Linear {
        t_steps: pick(args.t_steps, file.t_steps, 1000),
        beta_start: pick(args.beta_start, file.beta_start, 1e-4),
        beta_end: pick(args.beta_end, file.beta_end, 0.02),
    };

    let data = prepare(
        args.data.dataset,
        args.data.data_dir.as_deref(),
        transform,
        test_fraction,
        label_density,
        None,
    )?;
    let model_config = GDiTConfig {
        d_model: pick(args.d_model, file.d_model, 64),
        n_heads: pick(args.heads, file.heads, 4),
        n_blocks: pick(args.blocks, file.blocks, 1),
        mlp_ratio: pick(args.mlp_ratio, file.mlp_ratio, 4),
        d_user_in: data.features.d_user,
        d_item_in: data.features.d_item,
    };

    let resolved = json!({
        "dataset": format!("{:?}", args.data.dataset),
        "transform": format!("{transform:?}"),
        "precision": format!("{precision:?}"),
        "test_fraction": test_fraction,
        "label_density": label_density,
        "region": data.region,
        "schedule": schedule_spec,
        "model": model_config,
        "train": train_config,
    });
    let files = args
        .data
        .data_dir
        .as_deref()
        .map(|d| dataset_files(args.data.dataset, d))
        .unwrap_or_default();
    let input_hash = content_hash(&files, &resolved.to_string())?;

    let inputs = TrainInputs {
        matrix: &data.matrix,
        features: &data.features,
        schedule_spec,
        region_rows: data.region,
        region_cols: data.region,
    };
    let (final_loss, coverage) = match precision {
        PrecisionArg::Single => {
            let run = run_training::<f32>(
                &inputs,
                model_config,
                &train_config,
                &data.scaler,
                Some(&args.out),
            )?;
            (run.loss_trace.last().map(|(_, v)| v.total), run.coverage())
        }
        PrecisionArg::Double => {
            let run = run_training::<f64>(
                &inputs,
                model_config,
                &train_config,
                &data.scaler,
                Some(&args.out),
            )?;
            (run.loss_trace.last().map(|(_, v)| v.total), run.coverage())
        }
    };

    let manifest = RunManifest {
        command: "train".into(),
        resolved_config: resolved,
        input_hash,
        seed: train_config.seed,
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_manifest(&args.out, &manifest)?;
    println!(
        "trained {} iterations (final loss {:?}); coverage users {:.1}% items {:.1}%; \
         checkpoints in {}",
        train_config.iterations,
        final_loss,
        100.0 * coverage.0,
        100.0 * coverage.1,
        args.out.display()
    );
    Ok(())
}

fn cmd_sample(args: SampleArgs, file: &FileConfig) -> Result<()> {
    let started = unix_now();
    let seed = pick(args.seed, file.seed, 0);
    let test_fraction = pick(args.test_fraction, file.test_fraction, 0.1);
    let label_density = args.label_density.or(file.label_density);
    let min_density = pick(args.min_density, file.min_density, 0.0);
    let tile = match args.tile.clone().or(file.tile.clone()) {
        Some(t) => Some(parse_shape(&t)?),
        None => None,
    };
    let (patch_n, patch_m) = parse_shape(&pick(
        args.patch.clone(),
        file.patch.clone(),
        "64x64".into(),
    ))?;

    let loaded = load_checkpoint(&args.ckpt)?;
    match loaded {
        LoadedCheckpoint::Single(ckpt) => sample_with(
            args,
            ckpt,
            seed,
            test_fraction,
            label_density,
            min_density,
            tile,
            patch_n,
            patch_m,
            started,
        ),
        LoadedCheckpoint::Double(ckpt) => sample_with(
            args,
            ckpt,
            seed,
            test_fraction,
            label_density,
            min_density,
            tile,
            patch_n,
            patch_m,
            started,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_with<F: Scalar>(
    args: SampleArgs,
    ckpt: Checkpoint<F>,
    seed: u64,
    test_fraction: f64,
    label_density: Option<f64>,
    min_density: f64,
    tile: Option<(usize, usize)>,
    patch_n: usize,
    patch_m: usize,
    started: u64,
) -> Result<()> {
    let data = prepare(
        args.data.dataset,
        args.data.data_dir.as_deref(),
        TransformArg::Linear,
        test_fraction,
        label_density,
        Some(ckpt.scaler.clone()),
    )?;
    let schedule = ckpt.schedule.build()?;
    let sample_cfg = SampleConfig {
        seed,
        clamp_x0: true,
        tile,
        value_range: ckpt.scaler.value_range(),
    };

    // tiled mode denoises the whole eligible region; patch mode inpaints one
    // randomly sampled patch
    let (patch, predicted) = if let Some((tn, tm)) = tile {
        let side_rows = data.region.unwrap_or(data.matrix.n_users);
        let side_cols = data.region.unwrap_or(data.matrix.n_items);
        let patch = Patch::from_matrix(
            &data.matrix,
            &(0..side_rows).collect::<Vec<_>>(),
            &(0..side_cols).collect::<Vec<_>>(),
        )?;
        let known = Tensor::<F>::from_f64_slice(vec![patch.n, patch.m], &patch.values)?;
        let u_raw = Tensor::<F>::from_f64_slice(
            vec![patch.n, data.features.d_user],
            &data.features.user_rows(&patch.user_rows),
        )?;
        let i_raw = Tensor::<F>::from_f64_slice(
            vec![patch.m, data.features.d_item],
            &data.features.item_rows(&patch.item_cols),
        )?;
        let out = tiled_sample(
            &ckpt.model,
            &known,
            &patch.known,
            &u_raw,
            &i_raw,
            tn,
            tm,
            &schedule,
            &sample_cfg,
        )?;
        (patch, out)
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let region_rows = data.region.unwrap_or(data.matrix.n_users);
        let region_cols = data.region.unwrap_or(data.matrix.n_items);
        let patch = sample_patch_bounded(
            &data.matrix,
            region_rows,
            region_cols,
            patch_n,
            patch_m,
            min_density,
            &mut rng,
        )?;
        let known = Tensor::<F>::from_f64_slice(vec![patch.n, patch.m], &patch.values)?;
        let u_raw = Tensor::<F>::from_f64_slice(
            vec![patch.n, data.features.d_user],
            &data.features.user_rows(&patch.user_rows),
        )?;
        let i_raw = Tensor::<F>::from_f64_slice(
            vec![patch.m, data.features.d_item],
            &data.features.item_rows(&patch.item_cols),
        )?;
        let out = edge_rec_core::sample::inpaint_patch(
            &ckpt.model,
            &known,
            &patch.known,
            &u_raw,
            &i_raw,
            &schedule,
            &sample_cfg,
        )?;
        (patch, out)
    };

    let row_ids: Vec<u32> = patch
        .user_rows
        .iter()
        .map(|&u| data.matrix.row_ids[u])
        .collect();
    let col_ids: Vec<u32> = patch
        .item_cols
        .iter()
        .map(|&i| data.matrix.col_ids[i])
        .collect();
    let csv = predictions_csv(&predicted, &row_ids, &col_ids, &ckpt.scaler);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, csv).with_context(|| format!("writing {}", args.out.display()))?;

    let resolved = json!({
        "ckpt": args.ckpt.display().to_string(),
        "dataset": format!("{:?}", args.data.dataset),
        "tile": tile,
        "patch": [patch.n, patch.m],
        "min_density": min_density,
        "label_density": label_density,
        "seed": seed,
    });
    let manifest = RunManifest {
        command: "sample".into(),
        input_hash: content_hash(std::slice::from_ref(&args.ckpt), &resolved.to_string())?,
        resolved_config: resolved,
        seed,
        started_unix: started,
        finished_unix: unix_now(),
    };
    let manifest_dir = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    write_manifest(manifest_dir, &manifest)?;
    println!(
        "sampled {}x{} cells -> {}",
        patch.n,
        patch.m,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, file: &FileConfig) -> Result<()> {
    let started = unix_now();
    let seed = pick(args.seed, file.seed, 0);
    let test_fraction = pick(args.test_fraction, file.test_fraction, 0.1);
    let label_density = args.label_density.or(file.label_density);
    let (patch_n, patch_m) = parse_shape(&pick(
        args.patch.clone(),
        file.patch.clone(),
        "64x64".into(),
    ))?;
    let eval_config = EvalConfig {
        k_values: pick(args.k.clone(), file.k.clone(), vec![1, 5, 10, 20, 50]),
        num_patches: pick(args.num_patches, file.num_patches, 10),
        patch_n,
        patch_m,
        min_density: pick(args.min_density, file.min_density, 0.0),
        relevance_threshold: pick(args.relevance_threshold, file.relevance_threshold, 4.0),
        seed,
        value_range: (-1.0, 1.0),
    };

    let loaded = load_checkpoint(&args.ckpt)?;
    let report = match loaded {
        LoadedCheckpoint::Single(ckpt) => {
            let cfg = EvalConfig {
                value_range: ckpt.scaler.value_range(),
                ..eval_config.clone()
            };
            evaluate_with(&args, ckpt, test_fraction, label_density, &cfg)?
        }
        LoadedCheckpoint::Double(ckpt) => {
            let cfg = EvalConfig {
                value_range: ckpt.scaler.value_range(),
                ..eval_config.clone()
            };
            evaluate_with(&args, ckpt, test_fraction, label_density, &cfg)?
        }
    };

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("metrics.csv"), report.to_csv())?;
    std::fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    let resolved = json!({
        "ckpt": args.ckpt.display().to_string(),
        "dataset": format!("{:?}", args.data.dataset),
        "test_fraction": test_fraction,
        "label_density": label_density,
        "k": report.k_values,
        "num_patches": eval_config.num_patches,
        "patch": [eval_config.patch_n, eval_config.patch_m],
        "min_density": eval_config.min_density,
        "relevance_threshold": eval_config.relevance_threshold,
        "seed": seed,
    });
    let manifest = RunManifest {
        command: "evaluate".into(),
        input_hash: content_hash(std::slice::from_ref(&args.ckpt), &resolved.to_string())?,
        resolved_config: resolved,
        seed,
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_manifest(&args.out, &manifest)?;

    print!("{}", report.to_csv());
    println!(
        "evaluated {} users across {} patches -> {}",
        report.users_evaluated,
        report.per_patch.len(),
        args.out.display()
    );
    Ok(())
}

fn evaluate_with<F: Scalar>(
    args: &EvaluateArgs,
    ckpt: Checkpoint<F>,
    test_fraction: f64,
    label_density: Option<f64>,
    eval_config: &EvalConfig,
) -> Result<edge_rec_core::eval::EvalReport> {
    let data: PreparedData = prepare(
        args.data.dataset,
        args.data.data_dir.as_deref(),
        TransformArg::Linear,
        test_fraction,
        label_density,
        Some(ckpt.scaler.clone()),
    )?;
    let schedule = ckpt.schedule.build()?;
    Ok(evaluate_model(
        &ckpt.model,
        &data.matrix,
        &data.test.records,
        &data.features,
        &schedule,
        eval_config,
        data.region,
        data.region,
    )?)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut failed = false;
    println!(
        "finite-difference suite: {} points x {} directions per primitive",
        args.points, args.dirs
    );
    for (name, err) in primitive_suite::<f64>(args.points, args.dirs, args.seed)? {
        let ok = err <= 1e-6;
        failed |= !ok;
        println!(
            "  double {name:<18} max rel-err {err:.3e} {}",
            if ok { "ok" } else { "FAIL (tol 1e-6)" }
        );
    }
    for (name, err) in primitive_suite::<f32>(args.points, args.dirs, args.seed)? {
        let ok = err <= 1e-4;
        failed |= !ok;
        println!(
            "  single {name:<18} max rel-err {err:.3e} {}",
            if ok { "ok" } else { "FAIL (tol 1e-4)" }
        );
    }
    if failed {
        bail!("gradient checks failed");
    }
    println!("all gradient checks passed");
    Ok(())
}

fn cmd_fixture(args: FixtureArgs) -> Result<()> {
    let fx = edge_rec_core::fixture::figure_graph();
    let scaler = edge_rec_core::xform::RatingScaler::linear(1.0, 5.0)?;
    let matrix = edge_rec_core::ingest::build_matrix(&fx.dataset, &scaler)?;
    let features = edge_rec_core::ingest::featurize(&fx.dataset)?;

    println!("      {}", fx.item_names.join("  "));
    for (r, name) in fx.user_names.iter().enumerate() {
        let cells: Vec<String> = (0..matrix.n_items)
            .map(|c| {
                if matrix.is_known(r, c) {
                    format!("{:>4.1}", scaler.unscale(matrix.value(r, c)))
                } else {
                    " ---".to_string()
                }
            })
            .collect();
        println!("{name:>4}  {}", cells.join("  "));
    }

    if let Some(out) = args.out {
        write_dataset_cache(
            &out,
            fx.dataset.kind,
            fx.dataset.rating_scale,
            &scaler,
            &matrix,
            &features,
        )?;
        println!("fixture cache written to {}", out.display());
    }
    Ok(())
}
