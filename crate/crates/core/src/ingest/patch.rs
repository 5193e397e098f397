//! Patch extraction and rejection sampling to a minimum density.

use rand::Rng;

use super::{IngestError, InteractionMatrix};

/// Attempts before a density request is declared infeasible.
pub const DEFAULT_RETRY_CAP: usize = 1000;

/// An `n x m` sub-matrix: the object the diffusion acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub n: usize,
    pub m: usize,
    /// Row-major `n x m` scaled strengths.
    pub values: Vec<f64>,
    pub known: Vec<bool>,
    /// Indices into the parent matrix, duplicate-free.
    pub user_rows: Vec<usize>,
    pub item_cols: Vec<usize>,
}

impl Patch {
    pub fn from_matrix(
        matrix: &InteractionMatrix,
        rows: &[usize],
        cols: &[usize],
    ) -> Result<Self, IngestError> {
        if rows.is_empty() || cols.is_empty() {
            return Err(IngestError::BadPatchRequest(
                "patch dimensions must be >= 1".into(),
            ));
        }
        let check_unique = |idx: &[usize], limit: usize, what: &str| {
            let mut seen = std::collections::HashSet::new();
            for &v in idx {
                if v >= limit {
                    return Err(IngestError::BadPatchRequest(format!(
                        "{what} index {v} out of range {limit}"
                    )));
                }
                if !seen.insert(v) {
                    return Err(IngestError::BadPatchRequest(format!(
                        "duplicate {what} index {v}"
                    )));
                }
            }
            Ok(())
        };
        check_unique(rows, matrix.n_users, "row")?;
        check_unique(cols, matrix.n_items, "column")?;

        let (n, m) = (rows.len(), cols.len());
        let mut values = Vec::with_capacity(n * m);
        let mut known = Vec::with_capacity(n * m);
        for &u in rows {
            for &i in cols {
                values.push(matrix.value(u, i));
                known.push(matrix.is_known(u, i));
            }
        }
        Ok(Self {
            n,
            m,
            values,
            known,
            user_rows: rows.to_vec(),
            item_cols: cols.to_vec(),
        })
    }

    pub fn value(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.m + c]
    }

    pub fn is_known(&self, r: usize, c: usize) -> bool {
        self.known[r * self.m + c]
    }

    /// Fraction of known cells.
    pub fn density(&self) -> f64 {
        self.known.iter().filter(|&&k| k).count() as f64 / (self.n * self.m) as f64
    }
}

/// Uniform without-replacement patch from the full matrix, rejection-sampled
/// until the known-cell fraction reaches `min_density`.
pub fn sample_patch<R: Rng + ?Sized>(
    matrix: &InteractionMatrix,
    n: usize,
    m: usize,
    min_density: f64,
    rng: &mut R,
) -> Result<Patch, IngestError> {
    sample_patch_bounded(
        matrix,
        matrix.n_users,
        matrix.n_items,
        n,
        m,
        min_density,
        rng,
    )
}

/// As [`sample_patch`] but drawing only from the first `region_rows` rows and
/// `region_cols` columns — the dense corner of a density-sorted matrix.
pub fn sample_patch_bounded<R: Rng + ?Sized>(
    matrix: &InteractionMatrix,
    region_rows: usize,
    region_cols: usize,
    n: usize,
    m: usize,
    min_density: f64,
    rng: &mut R,
) -> Result<Patch, IngestError> {
    if region_rows > matrix.n_users || region_cols > matrix.n_items {
        return Err(IngestError::BadPatchRequest(format!(
            "region {region_rows}x{region_cols} exceeds matrix {}x{}",
            matrix.n_users, matrix.n_items
        )));
    }
    if n == 0 || m == 0 || n > region_rows || m > region_cols {
        return Err(IngestError::BadPatchRequest(format!(
            "patch {n}x{m} does not fit eligible region {region_rows}x{region_cols}"
        )));
    }
    if !(0.0..=1.0).contains(&min_density) {
        return Err(IngestError::BadPatchRequest(format!(
            "min_density {min_density} outside [0, 1]"
        )));
    }

    let mut best = -1.0f64;
    for attempt in 1..=DEFAULT_RETRY_CAP {
        let mut rows = rand::seq::index::sample(rng, region_rows, n).into_vec();
        let mut cols = rand::seq::index::sample(rng, region_cols, m).into_vec();
        rows.sort_unstable();
        cols.sort_unstable();
        let patch = Patch::from_matrix(matrix, &rows, &cols)?;
        let density = patch.density();
        if density >= min_density {
            return Ok(patch);
        }
        best = best.max(density);
        if attempt == DEFAULT_RETRY_CAP {
            return Err(IngestError::DensityInfeasible {
                wanted: min_density,
                best,
                attempts: attempt,
            });
        }
    }
    unreachable!("retry loop always returns")
}
