//! Top-K recommendation metrics over inpainted patches against held-out
//! test edges.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::diffusion::NoiseSchedule;
use crate::gdit::{derive_rng, GDiTModel};
use crate::ingest::{
    sample_patch_bounded, FeatureTable, IngestError, InteractionMatrix, Patch, RatingRecord,
};
use crate::numeric::{Scalar, Tensor};
use crate::sample::{inpaint_patch, SampleConfig, SampleError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("relevant set is empty; callers must filter users first")]
    EmptyRelevantSet,
    #[error("ranking contains duplicate item {0}")]
    DuplicateItem(usize),
    #[error("k must be >= 1")]
    ZeroK,
    #[error(
        "no evaluable user in any patch; try larger patches, more patches, or a lower relevance threshold"
    )]
    NoEvaluableUsers,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub k_values: Vec<usize>,
    pub num_patches: usize,
    pub patch_n: usize,
    pub patch_m: usize,
    pub min_density: f64,
    /// Relevance cutoff on the original rating scale.
    pub relevance_threshold: f64,
    pub seed: u64,
    /// Legal value interval of the scaler in use.
    pub value_range: (f64, f64),
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_values: vec![1, 5, 10, 20, 50],
            num_patches: 10,
            patch_n: 64,
            patch_m: 64,
            min_density: 0.0,
            relevance_threshold: 4.0,
            seed: 0,
            value_range: (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopKMetrics {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub hitrate: f64,
}

impl TopKMetrics {
    fn zero() -> Self {
        Self {
            precision: 0.0,
            recall: 0.0,
            ndcg: 0.0,
            mrr: 0.0,
            hitrate: 0.0,
        }
    }

    fn add(&mut self, other: &TopKMetrics) {
        self.precision += other.precision;
        self.recall += other.recall;
        self.ndcg += other.ndcg;
        self.mrr += other.mrr;
        self.hitrate += other.hitrate;
    }

    fn scale(&mut self, f: f64) {
        self.precision *= f;
        self.recall *= f;
        self.ndcg *= f;
        self.mrr *= f;
        self.hitrate *= f;
    }
}

/// Standard top-K metrics for one ranked candidate list.
///
/// `ranked_items` is the full ranking, best first and duplicate-free;
/// `relevant` must be nonempty. NDCG uses binary gains with the ideal DCG
/// over `min(k, |relevant|)` hits.
pub fn topk_metrics(
    ranked_items: &[usize],
    relevant: &HashSet<usize>,
    k: usize,
) -> Result<TopKMetrics, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    let mut seen = HashSet::with_capacity(ranked_items.len());
    for &item in ranked_items {
        if !seen.insert(item) {
            return Err(EvalError::DuplicateItem(item));
        }
    }

    let top_k = &ranked_items[..k.min(ranked_items.len())];
    let mut hits = 0usize;
    let mut dcg = 0.0;
    let mut first_hit_rank = None;
    for (pos, item) in top_k.iter().enumerate() {
        if relevant.contains(item) {
            hits += 1;
            let rank = pos + 1;
            dcg += 1.0 / ((rank + 1) as f64).log2();
            first_hit_rank.get_or_insert(rank);
        }
    }
    let ideal_hits = k.min(relevant.len());
    let idcg: f64 = (1..=ideal_hits)
        .map(|r| 1.0 / ((r + 1) as f64).log2())
        .sum();

    Ok(TopKMetrics {
        precision: hits as f64 / k as f64,
        recall: hits as f64 / relevant.len() as f64,
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
        mrr: first_hit_rank.map_or(0.0, |r| 1.0 / r as f64),
        hitrate: f64::from(u8::from(hits > 0)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PatchEval {
    pub patch_index: usize,
    pub users_evaluated: usize,
    /// Per `k_values` entry, the mean over this patch's evaluable users.
    pub per_k: Vec<TopKMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub k_values: Vec<usize>,
    /// Mean over all (patch, user) pairs with a nonempty relevant set.
    pub mean: Vec<TopKMetrics>,
    pub per_patch: Vec<PatchEval>,
    pub users_evaluated: usize,
}

impl EvalReport {
    /// `k,precision,recall,ndcg,mrr,hitrate,n_users` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,precision,recall,ndcg,mrr,hitrate,n_users\n");
        for (k, m) in self.k_values.iter().zip(&self.mean) {
            out.push_str(&format!(
                "{k},{},{},{},{},{},{}\n",
                m.precision, m.recall, m.ndcg, m.mrr, m.hitrate, self.users_evaluated
            ));
        }
        out
    }
}

/// Per-user rankings and metrics for one patch given its predictions.
///
/// Candidates for a user are the patch items without a train-known
/// interaction; relevant candidates carry a test rating at or above the
/// threshold. Ranking is by predicted value descending, ties by item index
/// ascending. Returns one metrics row per evaluable user and k.
pub fn evaluate_patch_predictions(
    patch: &Patch,
    predicted: &[f64],
    test_lookup: &HashMap<(usize, usize), f64>,
    k_values: &[usize],
    relevance_threshold: f64,
) -> Result<Vec<Vec<TopKMetrics>>, EvalError> {
    let mut per_user = Vec::new();
    for r in 0..patch.n {
        let user = patch.user_rows[r];
        let mut candidates: Vec<usize> = Vec::new();
        let mut relevant: HashSet<usize> = HashSet::new();
        for (c, &item) in patch.item_cols.iter().enumerate() {
            if patch.is_known(r, c) {
                continue;
            }
            candidates.push(c);
            if let Some(&rating) = test_lookup.get(&(user, item)) {
                if rating >= relevance_threshold {
                    relevant.insert(item);
                }
            }
        }
        if relevant.is_empty() {
            continue;
        }
        candidates.sort_by(|&a, &b| {
            predicted[r * patch.m + b]
                .partial_cmp(&predicted[r * patch.m + a])
                .expect("finite predictions")
                .then(patch.item_cols[a].cmp(&patch.item_cols[b]))
        });
        let ranked: Vec<usize> = candidates.iter().map(|&c| patch.item_cols[c]).collect();
        let rows: Result<Vec<TopKMetrics>, EvalError> = k_values
            .iter()
            .map(|&k| topk_metrics(&ranked, &relevant, k))
            .collect();
        per_user.push(rows?);
    }
    Ok(per_user)
}

/// Protocol: sample seeded patches from the train matrix, inpaint each one
/// conditioned on its train-known cells, rank the remaining items per user,
/// and average the metrics over all evaluable (patch, user) pairs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model<F: Scalar>(
    model: &GDiTModel<F>,
    train_matrix: &InteractionMatrix,
    test_records: &[RatingRecord],
    features: &FeatureTable,
    schedule: &NoiseSchedule,
    cfg: &EvalConfig,
    region_rows: Option<usize>,
    region_cols: Option<usize>,
) -> Result<EvalReport, EvalError> {
    let test_lookup: HashMap<(usize, usize), f64> = test_records
        .iter()
        .map(|r| ((r.user_id, r.item_id), r.rating))
        .collect();
    let region_rows = region_rows.unwrap_or(train_matrix.n_users);
    let region_cols = region_cols.unwrap_or(train_matrix.n_items);

    let outcomes: Vec<Result<(Patch, Vec<Vec<TopKMetrics>>), EvalError>> = (0..cfg.num_patches)
        .into_par_iter()
        .map(|p| {
            let mut rng = derive_rng(cfg.seed, 0x6576_616c, p as u64, 0);
            let patch = sample_patch_bounded(
                train_matrix,
                region_rows,
                region_cols,
                cfg.patch_n,
                cfg.patch_m,
                cfg.min_density,
                &mut rng,
            )?;
            let known = Tensor::<F>::from_f64_slice(vec![patch.n, patch.m], &patch.values)
                .expect("patch shape");
            let u_raw = Tensor::<F>::from_f64_slice(
                vec![patch.n, features.d_user],
                &features.user_rows(&patch.user_rows),
            )
            .expect("feature shape");
            let i_raw = Tensor::<F>::from_f64_slice(
                vec![patch.m, features.d_item],
                &features.item_rows(&patch.item_cols),
            )
            .expect("feature shape");
            let sample_cfg = SampleConfig {
                seed: rng.random(),
                value_range: cfg.value_range,
                ..SampleConfig::default()
            };
            let predicted = inpaint_patch(
                model,
                &known,
                &patch.known,
                &u_raw,
                &i_raw,
                schedule,
                &sample_cfg,
            )?;
            let per_user = evaluate_patch_predictions(
                &patch,
                &predicted.to_f64_vec(),
                &test_lookup,
                &cfg.k_values,
                cfg.relevance_threshold,
            )?;
            Ok((patch, per_user))
        })
        .collect();

    let mut mean = vec![TopKMetrics::zero(); cfg.k_values.len()];
    let mut per_patch = Vec::with_capacity(cfg.num_patches);
    let mut users_evaluated = 0usize;
    for (p, outcome) in outcomes.into_iter().enumerate() {
        let (_, per_user) = outcome?;
        let mut patch_mean = vec![TopKMetrics::zero(); cfg.k_values.len()];
        for user_rows in &per_user {
            for (kc, m) in user_rows.iter().enumerate() {
                mean[kc].add(m);
                patch_mean[kc].add(m);
            }
        }
        let n_users = per_user.len();
        if n_users > 0 {
            for m in &mut patch_mean {
                m.scale(1.0 / n_users as f64);
            }
        }
        users_evaluated += n_users;
        per_patch.push(PatchEval {
            patch_index: p,
            users_evaluated: n_users,
            per_k: patch_mean,
        });
    }
    if users_evaluated == 0 {
        return Err(EvalError::NoEvaluableUsers);
    }
    for m in &mut mean {
        m.scale(1.0 / users_evaluated as f64);
    }
    Ok(EvalReport {
        k_values: cfg.k_values.clone(),
        mean,
        per_patch,
        users_evaluated,
    })
}
