//! Graph-density heuristics over the bipartite interaction graph: two-hop
//! node scores, density sorting, and dense-corner selection.

use super::InteractionMatrix;

/// Count, for every node, the distinct same-side nodes reachable in exactly
/// two hops through the known-interaction graph.
///
/// A user's score is the number of other users sharing at least one known
/// item; symmetrically for items.
pub fn density_score(matrix: &InteractionMatrix) -> (Vec<usize>, Vec<usize>) {
    let (n, m) = (matrix.n_users, matrix.n_items);

    let mut users_of_item: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut items_of_user: Vec<Vec<usize>> = vec![Vec::new(); n];
    for u in 0..n {
        for i in 0..m {
            if matrix.is_known(u, i) {
                users_of_item[i].push(u);
                items_of_user[u].push(i);
            }
        }
    }

    let mut user_scores = vec![0usize; n];
    let mut stamp = vec![usize::MAX; n];
    for u in 0..n {
        let mut count = 0;
        for &i in &items_of_user[u] {
            for &v in &users_of_item[i] {
                if v != u && stamp[v] != u {
                    stamp[v] = u;
                    count += 1;
                }
            }
        }
        user_scores[u] = count;
    }

    let mut item_scores = vec![0usize; m];
    let mut stamp = vec![usize::MAX; m];
    for i in 0..m {
        let mut count = 0;
        for &u in &users_of_item[i] {
            for &j in &items_of_user[u] {
                if j != i && stamp[j] != i {
                    stamp[j] = i;
                    count += 1;
                }
            }
        }
        item_scores[i] = count;
    }

    (user_scores, item_scores)
}

/// A density-sorted matrix along with the permutations that produced it;
/// `row_perm[k]` is the original row index now at row `k`.
#[derive(Debug, Clone)]
pub struct DensitySorted {
    pub matrix: InteractionMatrix,
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
}

impl DensitySorted {
    /// Original row index -> position in the sorted matrix.
    pub fn inverse_row_perm(&self) -> Vec<usize> {
        invert(&self.row_perm)
    }

    pub fn inverse_col_perm(&self) -> Vec<usize> {
        invert(&self.col_perm)
    }
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (pos, &orig) in perm.iter().enumerate() {
        inv[orig] = pos;
    }
    inv
}

/// Independently permute rows and columns by descending two-hop density,
/// stable on ties (original index ascending). The dense sub-region collects
/// in the top-left corner; sub-matrix selection uses the same corner.
pub fn density_sort(matrix: &InteractionMatrix) -> DensitySorted {
    let (user_scores, item_scores) = density_score(matrix);

    let mut row_perm: Vec<usize> = (0..matrix.n_users).collect();
    row_perm.sort_by_key(|&u| (std::cmp::Reverse(user_scores[u]), u));
    let mut col_perm: Vec<usize> = (0..matrix.n_items).collect();
    col_perm.sort_by_key(|&i| (std::cmp::Reverse(item_scores[i]), i));

    let (n, m) = (matrix.n_users, matrix.n_items);
    let mut values = vec![0.0f64; n * m];
    let mut known = vec![false; n * m];
    for (r, &u) in row_perm.iter().enumerate() {
        for (c, &i) in col_perm.iter().enumerate() {
            values[r * m + c] = matrix.value(u, i);
            known[r * m + c] = matrix.is_known(u, i);
        }
    }

    DensitySorted {
        matrix: InteractionMatrix {
            n_users: n,
            n_items: m,
            values,
            known,
            row_ids: row_perm.iter().map(|&u| matrix.row_ids[u]).collect(),
            col_ids: col_perm.iter().map(|&i| matrix.col_ids[i]).collect(),
        },
        row_perm,
        col_perm,
    }
}

/// Largest square corner region of a density-sorted matrix whose known-cell
/// fraction still meets `label_density`. `None` when even the single top
/// corner cell falls short.
pub fn dense_corner_size(sorted: &InteractionMatrix, label_density: f64) -> Option<usize> {
    let limit = sorted.n_users.min(sorted.n_items);
    if limit == 0 {
        return None;
    }
    // prefix[r][c] = known cells in the r x c corner
    let m = sorted.n_items;
    let mut prefix = vec![0u64; (sorted.n_users + 1) * (m + 1)];
    for u in 0..sorted.n_users {
        for i in 0..m {
            let k = u64::from(sorted.known[u * m + i]);
            prefix[(u + 1) * (m + 1) + (i + 1)] =
                k + prefix[u * (m + 1) + (i + 1)] + prefix[(u + 1) * (m + 1) + i]
                    - prefix[u * (m + 1) + i];
        }
    }
    let mut best = None;
    for s in 1..=limit {
        let known = prefix[s * (m + 1) + s] as f64;
        if known / (s * s) as f64 >= label_density {
            best = Some(s);
        }
    }
    best
}
