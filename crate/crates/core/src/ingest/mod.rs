//! MovieLens-format ingestion: the weighted interaction matrix, feature
//! tables, the time-aware split, density scoring, and patch sampling.

mod cache;
mod density;
mod features;
mod parse;
mod patch;

pub use cache::{read_dataset_cache, write_dataset_cache, DatasetCache};
pub use density::{dense_corner_size, density_score, density_sort, DensitySorted};
pub use features::{featurize, FeatureTable, GENRES, ML100K_OCCUPATIONS};
pub use parse::{parse_ml100k, parse_ml1m};
pub use patch::{sample_patch, sample_patch_bounded, Patch, DEFAULT_RETRY_CAP};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::xform::{RatingScaler, XformError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("unknown {kind} label: {label}")]
    UnknownLabel { kind: &'static str, label: String },
    #[error("time split needs at least 2 records, got {0}")]
    TooFewRecords(usize),
    #[error("test fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("patch density {wanted} infeasible after {attempts} attempts; best found {best:.4}")]
    DensityInfeasible {
        wanted: f64,
        best: f64,
        attempts: usize,
    },
    #[error("patch request {0}")]
    BadPatchRequest(String),
    #[error(transparent)]
    Xform(#[from] XformError),
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Ml100k,
    Ml1m,
    Fixture,
    Synthetic,
}

/// One timestamped rating. Ids are dense indices into the dataset's id maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingRecord {
    pub user_id: usize,
    pub item_id: usize,
    pub rating: f64,
    pub timestamp: i64,
}

/// Raw per-user attributes as parsed from the dataset distribution.
#[derive(Debug, Clone, Default)]
pub struct UserAttrs {
    pub age: Option<f64>,
    pub gender: Option<String>,
    pub occupation: Option<String>,
    pub zip: Option<String>,
}

/// Raw per-item attributes; genres are names resolved against [`GENRES`]
/// during featurization.
#[derive(Debug, Clone, Default)]
pub struct ItemAttrs {
    pub title: Option<String>,
    pub year: Option<i32>,
    pub genres: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RatingDataset {
    pub kind: DatasetKind,
    pub records: Vec<RatingRecord>,
    pub num_users: usize,
    pub num_items: usize,
    /// Dense index -> raw dataset id.
    pub user_raw_ids: Vec<u32>,
    pub item_raw_ids: Vec<u32>,
    pub user_attrs: Vec<UserAttrs>,
    pub item_attrs: Vec<ItemAttrs>,
    pub rating_scale: (f64, f64),
}

impl RatingDataset {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.user_raw_ids.len() != self.num_users || self.user_attrs.len() != self.num_users {
            return Err(IngestError::Integrity(format!(
                "user tables disagree with num_users = {}",
                self.num_users
            )));
        }
        if self.item_raw_ids.len() != self.num_items || self.item_attrs.len() != self.num_items {
            return Err(IngestError::Integrity(format!(
                "item tables disagree with num_items = {}",
                self.num_items
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if r.user_id >= self.num_users || r.item_id >= self.num_items {
                return Err(IngestError::Integrity(format!(
                    "record ({}, {}) outside declared counts ({}, {})",
                    r.user_id, r.item_id, self.num_users, self.num_items
                )));
            }
            if r.rating < self.rating_scale.0 || r.rating > self.rating_scale.1 {
                return Err(IngestError::Integrity(format!(
                    "rating {} outside scale {:?}",
                    r.rating, self.rating_scale
                )));
            }
            if !seen.insert((r.user_id, r.item_id)) {
                return Err(IngestError::Integrity(format!(
                    "duplicate (user, item) pair ({}, {})",
                    r.user_id, r.item_id
                )));
            }
        }
        Ok(())
    }

    pub fn ratings(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rating).collect()
    }
}

/// Dense user x item array of scaled interaction strengths plus a known-entry
/// mask. Cells without a training interaction hold exactly 0.0 (neutral) and
/// `known = false`, so neutral-by-rating and unknown stay distinguishable.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub n_users: usize,
    pub n_items: usize,
    /// Row-major, `n_users * n_items`.
    pub values: Vec<f64>,
    pub known: Vec<bool>,
    pub row_ids: Vec<u32>,
    pub col_ids: Vec<u32>,
}

impl InteractionMatrix {
    pub fn idx(&self, u: usize, i: usize) -> usize {
        debug_assert!(u < self.n_users && i < self.n_items);
        u * self.n_items + i
    }

    pub fn value(&self, u: usize, i: usize) -> f64 {
        self.values[self.idx(u, i)]
    }

    pub fn is_known(&self, u: usize, i: usize) -> bool {
        self.known[self.idx(u, i)]
    }

    /// Fraction of known cells.
    pub fn density(&self) -> f64 {
        if self.known.is_empty() {
            return 0.0;
        }
        self.known.iter().filter(|&&k| k).count() as f64 / self.known.len() as f64
    }
}

/// Global time-aware split: records sorted by timestamp (ties broken by
/// ascending (user, item)), first `1 - test_fraction` of them to train.
pub fn time_split(
    dataset: &RatingDataset,
    test_fraction: f64,
) -> Result<(RatingDataset, RatingDataset), IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::BadFraction(test_fraction));
    }
    if dataset.records.len() < 2 {
        return Err(IngestError::TooFewRecords(dataset.records.len()));
    }
    let mut sorted = dataset.records.clone();
    sorted.sort_by_key(|r| (r.timestamp, r.user_id, r.item_id));
    let n = sorted.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let n_train = n - n_test;

    let test = sorted.split_off(n_train);
    let mut train_ds = dataset.clone();
    train_ds.records = sorted;
    let mut test_ds = dataset.clone();
    test_ds.records = test;
    Ok((train_ds, test_ds))
}

/// Build the weighted interaction matrix from training records.
pub fn build_matrix(
    train: &RatingDataset,
    scaler: &RatingScaler,
) -> Result<InteractionMatrix, IngestError> {
    let (n, m) = (train.num_users, train.num_items);
    let mut values = vec![0.0f64; n * m];
    let mut known = vec![false; n * m];
    for r in &train.records {
        let idx = r.user_id * m + r.item_id;
        values[idx] = scaler.scale(r.rating)?;
        known[idx] = true;
    }
    Ok(InteractionMatrix {
        n_users: n,
        n_items: m,
        values,
        known,
        row_ids: train.user_raw_ids.clone(),
        col_ids: train.item_raw_ids.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use proptest::prelude::*;

    fn tiny_dataset(records: Vec<RatingRecord>, n_users: usize, n_items: usize) -> RatingDataset {
        RatingDataset {
            kind: DatasetKind::Synthetic,
            records,
            num_users: n_users,
            num_items: n_items,
            user_raw_ids: (0..n_users as u32).collect(),
            item_raw_ids: (0..n_items as u32).collect(),
            user_attrs: vec![UserAttrs::default(); n_users],
            item_attrs: vec![ItemAttrs::default(); n_items],
            rating_scale: (1.0, 5.0),
        }
    }

    fn rec(u: usize, i: usize, r: f64, ts: i64) -> RatingRecord {
        RatingRecord {
            user_id: u,
            item_id: i,
            rating: r,
            timestamp: ts,
        }
    }

    #[test]
    fn time_split_puts_latest_in_test() {
        let records = (0..10).map(|k| rec(k, 0, 3.0, 100 + k as i64)).collect();
        let ds = tiny_dataset(records, 10, 1);
        let (train, test) = time_split(&ds, 0.1).unwrap();
        assert_eq!(train.records.len(), 9);
        assert_eq!(test.records.len(), 1);
        assert_eq!(test.records[0].timestamp, 109);
        let max_train = train.records.iter().map(|r| r.timestamp).max().unwrap();
        assert!(max_train <= test.records[0].timestamp);
    }

    #[test]
    fn time_split_tie_break_is_deterministic_and_exhaustive() {
        // all records share one timestamp: split is decided by (user, item)
        let records: Vec<_> = (0..8).map(|k| rec(7 - k, k, 2.0, 55)).collect();
        let ds = tiny_dataset(records, 8, 8);
        let (train, test) = time_split(&ds, 0.5).unwrap();
        assert_eq!(train.records.len(), 4);
        assert_eq!(test.records.len(), 4);
        for r in &train.records {
            assert!(r.user_id < 4);
        }
        for r in &test.records {
            assert!(r.user_id >= 4);
        }
    }

    #[test]
    fn time_split_rejects_tiny_or_bad_inputs() {
        let ds = tiny_dataset(vec![rec(0, 0, 3.0, 1)], 1, 1);
        assert!(time_split(&ds, 0.1).is_err());
        let ds2 = tiny_dataset(vec![rec(0, 0, 3.0, 1), rec(1, 0, 3.0, 2)], 2, 1);
        assert!(time_split(&ds2, 0.0).is_err());
        assert!(time_split(&ds2, 1.0).is_err());
    }

    #[test]
    fn build_matrix_fixture_values() {
        let fx = fixture::figure_graph();
        let scaler = RatingScaler::linear(1.0, 5.0).unwrap();
        let m = build_matrix(&fx.dataset, &scaler).unwrap();
        // user 342 rated TGM 5.0 -> scaled 1.0, known
        assert_eq!(m.value(0, 0), 1.0);
        assert!(m.is_known(0, 0));
        // user 254 never rated TGM -> neutral 0.0, unknown
        assert_eq!(m.value(1, 0), 0.0);
        assert!(!m.is_known(1, 0));
    }

    #[test]
    fn build_matrix_empty_train() {
        let ds = tiny_dataset(vec![], 3, 4);
        let scaler = RatingScaler::linear(1.0, 5.0).unwrap();
        let m = build_matrix(&ds, &scaler).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(m.known.iter().all(|&k| !k));
    }

    #[test]
    fn nonzero_value_implies_known() {
        let fx = fixture::figure_graph();
        let scaler = RatingScaler::linear(1.0, 5.0).unwrap();
        let m = build_matrix(&fx.dataset, &scaler).unwrap();
        for (v, k) in m.values.iter().zip(&m.known) {
            if *v != 0.0 {
                assert!(*k);
            }
        }
        // the converse fails: a known rating of 3.0 scales to exactly 0.0
        let mid = m.idx(0, 2); // user 342 rated AVG 3.0
        assert_eq!(m.values[mid], 0.0);
        assert!(m.known[mid]);
    }

    proptest! {
        #[test]
        fn time_split_preserves_multiset(
            raw in proptest::collection::vec((0usize..6, 0usize..6, 1u8..=5, 0i64..50), 2..40),
            frac in 0.05f64..0.95,
        ) {
            // dedup (user, item) so the dataset invariant holds
            let mut seen = std::collections::HashSet::new();
            let records: Vec<RatingRecord> = raw
                .into_iter()
                .filter(|(u, i, _, _)| seen.insert((*u, *i)))
                .map(|(u, i, r, ts)| rec(u, i, r as f64, ts))
                .collect();
            prop_assume!(records.len() >= 2);
            let ds = tiny_dataset(records.clone(), 6, 6);
            let (train, test) = time_split(&ds, frac).unwrap();

            let mut merged: Vec<_> = train.records.iter().chain(&test.records).cloned().collect();
            merged.sort_by_key(|r| (r.user_id, r.item_id));
            let mut original = records;
            original.sort_by_key(|r| (r.user_id, r.item_id));
            prop_assert_eq!(merged, original);

            if let (Some(max_train), Some(min_test)) = (
                train.records.iter().map(|r| r.timestamp).max(),
                test.records.iter().map(|r| r.timestamp).min(),
            ) {
                prop_assert!(max_train <= min_test);
            }
        }
    }
}
