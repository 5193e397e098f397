//! Cached-dataset files: a JSON manifest plus little-endian IEEE-754 arrays
//! for the matrix, mask, and feature tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetKind, FeatureTable, IngestError, InteractionMatrix};
use crate::xform::RatingScaler;

const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    file: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    kind: DatasetKind,
    n_users: usize,
    n_items: usize,
    rating_scale: (f64, f64),
    scaler: RatingScaler,
    row_ids: Vec<u32>,
    col_ids: Vec<u32>,
    user_encodings: Vec<String>,
    item_encodings: Vec<String>,
    arrays: std::collections::BTreeMap<String, ArrayEntry>,
}

#[derive(Debug)]
pub struct DatasetCache {
    pub kind: DatasetKind,
    pub rating_scale: (f64, f64),
    pub scaler: RatingScaler,
    pub matrix: InteractionMatrix,
    pub features: FeatureTable,
}

fn write_f64_array(path: &Path, values: &[f64]) -> Result<(), IngestError> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_f64_array(path: &Path, expect_len: usize) -> Result<Vec<f64>, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() != expect_len * 8 {
        return Err(IngestError::Cache(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expect_len * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunks")))
        .collect())
}

/// Write matrix, mask, and feature tables beside a JSON manifest.
pub fn write_dataset_cache(
    dir: impl AsRef<Path>,
    kind: DatasetKind,
    rating_scale: (f64, f64),
    scaler: &RatingScaler,
    matrix: &InteractionMatrix,
    features: &FeatureTable,
) -> Result<(), IngestError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.display().to_string(),
        source,
    })?;

    let mask: Vec<f64> = matrix
        .known
        .iter()
        .map(|&k| f64::from(u8::from(k)))
        .collect();
    let mut arrays = std::collections::BTreeMap::new();
    let mut emit = |name: &str, file: &str, shape: Vec<usize>, values: &[f64]| {
        write_f64_array(&dir.join(file), values)?;
        arrays.insert(
            name.to_string(),
            ArrayEntry {
                file: file.to_string(),
                shape,
                dtype: "f64".into(),
            },
        );
        Ok::<(), IngestError>(())
    };
    emit(
        "matrix",
        "matrix.f64le",
        vec![matrix.n_users, matrix.n_items],
        &matrix.values,
    )?;
    emit(
        "mask",
        "mask.f64le",
        vec![matrix.n_users, matrix.n_items],
        &mask,
    )?;
    emit(
        "user_features",
        "user_features.f64le",
        vec![features.n_users, features.d_user],
        &features.user_features,
    )?;
    emit(
        "item_features",
        "item_features.f64le",
        vec![features.n_items, features.d_item],
        &features.item_features,
    )?;

    let manifest = Manifest {
        kind,
        n_users: matrix.n_users,
        n_items: matrix.n_items,
        rating_scale,
        scaler: scaler.clone(),
        row_ids: matrix.row_ids.clone(),
        col_ids: matrix.col_ids.clone(),
        user_encodings: features.user_encodings.clone(),
        item_encodings: features.item_encodings.clone(),
        arrays,
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| IngestError::Cache(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), json).map_err(|source| IngestError::Io {
        path: dir.join(MANIFEST_FILE).display().to_string(),
        source,
    })
}

pub fn read_dataset_cache(dir: impl AsRef<Path>) -> Result<DatasetCache, IngestError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = std::fs::read_to_string(&manifest_path).map_err(|source| IngestError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| IngestError::Cache(e.to_string()))?;

    let load = |name: &str| -> Result<(Vec<f64>, Vec<usize>), IngestError> {
        let entry = manifest
            .arrays
            .get(name)
            .ok_or_else(|| IngestError::Cache(format!("manifest missing array `{name}`")))?;
        if entry.dtype != "f64" {
            return Err(IngestError::Cache(format!(
                "array `{name}` has unsupported dtype {}",
                entry.dtype
            )));
        }
        let len = entry.shape.iter().product();
        Ok((
            read_f64_array(&dir.join(&entry.file), len)?,
            entry.shape.clone(),
        ))
    };

    let (values, mshape) = load("matrix")?;
    let (mask, _) = load("mask")?;
    let (user_features, ushape) = load("user_features")?;
    let (item_features, ishape) = load("item_features")?;

    if mshape != [manifest.n_users, manifest.n_items] {
        return Err(IngestError::Cache(
            "matrix shape disagrees with counts".into(),
        ));
    }

    let matrix = InteractionMatrix {
        n_users: manifest.n_users,
        n_items: manifest.n_items,
        values,
        known: mask.iter().map(|&v| v != 0.0).collect(),
        row_ids: manifest.row_ids,
        col_ids: manifest.col_ids,
    };
    let features = FeatureTable::from_parts(
        user_features,
        ushape[1],
        item_features,
        ishape[1],
        manifest.user_encodings,
        manifest.item_encodings,
    )?;

    Ok(DatasetCache {
        kind: manifest.kind,
        rating_scale: manifest.rating_scale,
        scaler: manifest.scaler,
        matrix,
        features,
    })
}
