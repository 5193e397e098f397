//! Built-in toy data: the four-user, three-movie rating graph used across
//! tests and demos, plus a synthetic rank-one rating matrix generator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::ingest::{
    DatasetKind, InteractionMatrix, ItemAttrs, RatingDataset, RatingRecord, UserAttrs,
};

/// The toy graph with named users and movies.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub dataset: RatingDataset,
    pub user_names: Vec<&'static str>,
    pub item_names: Vec<&'static str>,
}

/// Four users (342, 254, 436, 974) rating three movies (TGM, TTN, AVG):
///
/// ```text
///       TGM  TTN  AVG
///  342  5.0  2.5  3.0
///  254   -   1.0  4.0
///  436   -    -   4.5
///  974  1.5   -   3.5
/// ```
pub fn figure_graph() -> Fixture {
    let ratings: [(usize, usize, f64); 8] = [
        (0, 0, 5.0),
        (0, 1, 2.5),
        (0, 2, 3.0),
        (1, 1, 1.0),
        (1, 2, 4.0),
        (2, 2, 4.5),
        (3, 0, 1.5),
        (3, 2, 3.5),
    ];
    let records = ratings
        .iter()
        .enumerate()
        .map(|(k, &(u, i, r))| RatingRecord {
            user_id: u,
            item_id: i,
            rating: r,
            timestamp: 100 + k as i64,
        })
        .collect();
    let dataset = RatingDataset {
        kind: DatasetKind::Fixture,
        records,
        num_users: 4,
        num_items: 3,
        user_raw_ids: vec![342, 254, 436, 974],
        item_raw_ids: vec![1, 2, 3],
        user_attrs: vec![UserAttrs::default(); 4],
        item_attrs: vec![ItemAttrs::default(); 3],
        rating_scale: (1.0, 5.0),
    };
    dataset.validate().expect("fixture is self-consistent");
    Fixture {
        dataset,
        user_names: vec!["342", "254", "436", "974"],
        item_names: vec!["TGM", "TTN", "AVG"],
    }
}

/// Fully-rated synthetic dataset: the outer product of random user and item
/// affinities, quantile-binned to the five rating levels. Monotone binning
/// keeps the rank-one preference structure.
pub fn synthetic_rank_one(n_users: usize, n_items: usize, seed: u64) -> RatingDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..n_users).map(|_| rng.random::<f64>()).collect();
    let v: Vec<f64> = (0..n_items).map(|_| rng.random::<f64>()).collect();

    let mut scores: Vec<f64> = Vec::with_capacity(n_users * n_items);
    for &a in &u {
        for &b in &v {
            scores.push(a * b);
        }
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let level_of = |s: f64| -> f64 {
        let rank = sorted.partition_point(|&x| x < s);
        (1 + (rank * 5) / n).min(5) as f64
    };

    let mut records = Vec::with_capacity(n);
    for user_id in 0..n_users {
        for item_id in 0..n_items {
            records.push(RatingRecord {
                user_id,
                item_id,
                rating: level_of(scores[user_id * n_items + item_id]),
                timestamp: (user_id * n_items + item_id) as i64,
            });
        }
    }

    let dataset = RatingDataset {
        kind: DatasetKind::Synthetic,
        records,
        num_users: n_users,
        num_items: n_items,
        user_raw_ids: (0..n_users as u32).collect(),
        item_raw_ids: (0..n_items as u32).collect(),
        user_attrs: vec![UserAttrs::default(); n_users],
        item_attrs: vec![ItemAttrs::default(); n_items],
        rating_scale: (1.0, 5.0),
    };
    dataset
        .validate()
        .expect("synthetic data is self-consistent");
    dataset
}

/// Hide a fraction of the known cells, returning the reduced matrix and the
/// held-out `(row, col, true_scaled_value)` triples.
pub fn hold_out_cells<R: Rng + ?Sized>(
    matrix: &InteractionMatrix,
    fraction: f64,
    rng: &mut R,
) -> (InteractionMatrix, Vec<(usize, usize, f64)>) {
    let known_cells: Vec<usize> = (0..matrix.known.len())
        .filter(|&i| matrix.known[i])
        .collect();
    let n_hold = ((known_cells.len() as f64) * fraction).round() as usize;
    let chosen = rand::seq::index::sample(rng, known_cells.len(), n_hold.min(known_cells.len()));

    let mut reduced = matrix.clone();
    let mut held = Vec::with_capacity(chosen.len());
    for pick in chosen.iter() {
        let flat = known_cells[pick];
        let (u, i) = (flat / matrix.n_items, flat % matrix.n_items);
        held.push((u, i, matrix.values[flat]));
        reduced.values[flat] = 0.0;
        reduced.known[flat] = false;
    }
    held.sort_unstable_by_key(|&(u, i, _)| (u, i));
    (reduced, held)
}
