//! Shared dataset-loading and run-manifest plumbing for the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use edge_rec_core::fixture;
use edge_rec_core::ingest::{
    self, build_matrix, featurize, time_split, DatasetKind, FeatureTable, InteractionMatrix,
    RatingDataset,
};
use edge_rec_core::xform::{QuantileMap, RatingScaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DatasetArg {
    #[value(name = "ml-100k")]
    Ml100k,
    #[value(name = "ml-1m")]
    Ml1m,
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TransformArg {
    Linear,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PrecisionArg {
    Single,
    Double,
}

/// Files a dataset flavor reads, for loading and input hashing.
pub fn dataset_files(dataset: DatasetArg, data_dir: &Path) -> Vec<PathBuf> {
    match dataset {
        DatasetArg::Ml100k => ["u.data", "u.user", "u.item"]
            .iter()
            .map(|f| data_dir.join(f))
            .collect(),
        DatasetArg::Ml1m => ["ratings.dat", "users.dat", "movies.dat"]
            .iter()
            .map(|f| data_dir.join(f))
            .collect(),
        DatasetArg::Fixture => Vec::new(),
    }
}

pub fn load_dataset(dataset: DatasetArg, data_dir: Option<&Path>) -> Result<RatingDataset> {
    let resolve_dir = || -> Result<PathBuf> {
        if let Some(d) = data_dir {
            return Ok(d.to_path_buf());
        }
        if let Ok(d) = std::env::var("EDGE_REC_DATA_DIR") {
            return Ok(PathBuf::from(d));
        }
        bail!("no --data-dir given and EDGE_REC_DATA_DIR is unset")
    };
    match dataset {
        DatasetArg::Ml100k => {
            let dir = resolve_dir()?;
            let files = dataset_files(dataset, &dir);
            Ok(ingest::parse_ml100k(&files[0], &files[1], &files[2])?)
        }
        DatasetArg::Ml1m => {
            let dir = resolve_dir()?;
            let files = dataset_files(dataset, &dir);
            Ok(ingest::parse_ml1m(&files[0], &files[1], &files[2])?)
        }
        DatasetArg::Fixture => Ok(fixture::figure_graph().dataset),
    }
}

pub fn build_scaler(transform: TransformArg, train: &RatingDataset) -> Result<RatingScaler> {
    let (lo, hi) = train.rating_scale;
    Ok(match transform {
        TransformArg::Linear => RatingScaler::linear(lo, hi)?,
        TransformArg::Quantile => {
            let map = QuantileMap::fit(&train.ratings())?;
            RatingScaler::quantile(lo, hi, map)?
        }
    })
}

/// Everything the train/evaluate/sample commands need from a dataset.
pub struct PreparedData {
    pub kind: DatasetKind,
    pub train: RatingDataset,
    pub test: RatingDataset,
    pub matrix: InteractionMatrix,
    pub features: FeatureTable,
    pub scaler: RatingScaler,
    /// Dense-corner side length when a label density is requested.
    pub region: Option<usize>,
}

/// Parse, split, scale, featurize; optionally density-sort and restrict to
/// the dense corner at the requested label density (test records are
/// remapped into the sorted coordinates).
pub fn prepare(
    dataset: DatasetArg,
    data_dir: Option<&Path>,
    transform: TransformArg,
    test_fraction: f64,
    label_density: Option<f64>,
    scaler_override: Option<RatingScaler>,
) -> Result<PreparedData> {
    let ds = load_dataset(dataset, data_dir)?;
    let (train, mut test) = time_split(&ds, test_fraction)?;
    let scaler = match scaler_override {
        Some(s) => s,
        None => build_scaler(transform, &train)?,
    };
    let mut matrix = build_matrix(&train, &scaler)?;
    let mut features = featurize(&ds)?;

    let mut region = None;
    if let Some(p) = label_density {
        let sorted = ingest::density_sort(&matrix);
        let corner = ingest::dense_corner_size(&sorted.matrix, p)
            .with_context(|| format!("no corner region reaches label density {p}"))?;
        features = features.permuted(&sorted.row_perm, &sorted.col_perm);
        let inv_row = sorted.inverse_row_perm();
        let inv_col = sorted.inverse_col_perm();
        for r in &mut test.records {
            r.user_id = inv_row[r.user_id];
            r.item_id = inv_col[r.item_id];
        }
        matrix = sorted.matrix;
        region = Some(corner);
    }

    Ok(PreparedData {
        kind: ds.kind,
        train,
        test,
        matrix,
        features,
        scaler,
        region,
    })
}

/// FNV-1a over the given files plus the resolved-config JSON, hex encoded.
pub fn content_hash(files: &[PathBuf], config_json: &str) -> Result<String> {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for f in files {
        let bytes = std::fs::read(f).with_context(|| format!("hashing input {}", f.display()))?;
        eat(f.display().to_string().as_bytes());
        eat(&bytes);
    }
    eat(config_json.as_bytes());
    Ok(format!("{h:016x}"))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub resolved_config: serde_json::Value,
    pub input_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("run-manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
