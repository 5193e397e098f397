//! Raw attribute tables -> fixed-width real feature vectors for conditioning.

use super::{DatasetKind, IngestError, RatingDataset};

/// ML-100k `u.occupation` labels; ML-1M occupation codes index the same
/// 21-slot one-hot block.
pub const ML100K_OCCUPATIONS: [&str; 21] = [
    "administrator",
    "artist",
    "doctor",
    "educator",
    "engineer",
    "entertainment",
    "executive",
    "healthcare",
    "homemaker",
    "lawyer",
    "librarian",
    "marketing",
    "none",
    "other",
    "programmer",
    "retired",
    "salesman",
    "scientist",
    "student",
    "technician",
    "writer",
];

/// ML-100k `u.genre` order; ML-1M genre names resolve into the same table
/// (slot 0, "unknown", is simply never set there).
pub const GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

/// Per-side conditioning features plus documentation of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub n_users: usize,
    pub n_items: usize,
    pub d_user: usize,
    pub d_item: usize,
    /// Row-major `n_users x d_user`.
    pub user_features: Vec<f64>,
    /// Row-major `n_items x d_item`.
    pub item_features: Vec<f64>,
    pub user_encodings: Vec<String>,
    pub item_encodings: Vec<String>,
}

impl FeatureTable {
    pub fn user_row(&self, u: usize) -> &[f64] {
        &self.user_features[u * self.d_user..(u + 1) * self.d_user]
    }

    pub fn item_row(&self, i: usize) -> &[f64] {
        &self.item_features[i * self.d_item..(i + 1) * self.d_item]
    }

    /// Rows gathered for a patch, row-major.
    pub fn user_rows(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .flat_map(|&u| self.user_row(u))
            .copied()
            .collect()
    }

    pub fn item_rows(&self, cols: &[usize]) -> Vec<f64> {
        cols.iter()
            .flat_map(|&i| self.item_row(i))
            .copied()
            .collect()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.user_features.len() != self.n_users * self.d_user
            || self.item_features.len() != self.n_items * self.d_item
        {
            return Err(IngestError::Integrity("feature table dims disagree".into()));
        }
        if self
            .user_features
            .iter()
            .chain(&self.item_features)
            .any(|v| !v.is_finite())
        {
            return Err(IngestError::Integrity("non-finite feature entry".into()));
        }
        Ok(())
    }

    /// Reorder rows to match a permuted matrix: entry `k` of each
    /// permutation names the original index now at position `k`.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> FeatureTable {
        FeatureTable {
            n_users: self.n_users,
            n_items: self.n_items,
            d_user: self.d_user,
            d_item: self.d_item,
            user_features: self.user_rows(row_perm),
            item_features: self.item_rows(col_perm),
            user_encodings: self.user_encodings.clone(),
            item_encodings: self.item_encodings.clone(),
        }
    }

    /// Direct construction for synthetic datasets.
    pub fn from_parts(
        user_features: Vec<f64>,
        d_user: usize,
        item_features: Vec<f64>,
        d_item: usize,
        user_encodings: Vec<String>,
        item_encodings: Vec<String>,
    ) -> Result<Self, IngestError> {
        let t = Self {
            n_users: user_features.len() / d_user.max(1),
            n_items: item_features.len() / d_item.max(1),
            d_user,
            d_item,
            user_features,
            item_features,
            user_encodings,
            item_encodings,
        };
        t.validate()?;
        Ok(t)
    }
}

fn occupation_index(kind: DatasetKind, label: &str) -> Result<usize, IngestError> {
    match kind {
        DatasetKind::Ml100k => ML100K_OCCUPATIONS
            .iter()
            .position(|&o| o == label)
            .ok_or_else(|| IngestError::UnknownLabel {
                kind: "occupation",
                label: label.to_string(),
            }),
        // ML-1M codes occupations as integers 0..=20
        _ => label
            .parse::<usize>()
            .ok()
            .filter(|&i| i < ML100K_OCCUPATIONS.len())
            .ok_or_else(|| IngestError::UnknownLabel {
                kind: "occupation",
                label: label.to_string(),
            }),
    }
}

fn genre_index(label: &str) -> Result<usize, IngestError> {
    GENRES
        .iter()
        .position(|&g| g == label)
        .ok_or_else(|| IngestError::UnknownLabel {
            kind: "genre",
            label: label.to_string(),
        })
}

/// Encode user and item attributes.
///
/// Users: `[age / 100, gender one-hot (M, F), occupation one-hot (21)]`.
/// Items: `[genre multi-hot (19), release year min-max normalized to [0,1]]`.
/// A missing attribute leaves its sub-block all zero; zip codes are dropped.
/// Fixture and synthetic datasets get identity one-hot features per side.
pub fn featurize(dataset: &RatingDataset) -> Result<FeatureTable, IngestError> {
    match dataset.kind {
        DatasetKind::Ml100k | DatasetKind::Ml1m => featurize_movielens(dataset),
        DatasetKind::Fixture | DatasetKind::Synthetic => Ok(one_hot_features(dataset)),
    }
}

fn featurize_movielens(dataset: &RatingDataset) -> Result<FeatureTable, IngestError> {
    let d_user = 1 + 2 + ML100K_OCCUPATIONS.len();
    let d_item = GENRES.len() + 1;

    let mut user_features = vec![0.0f64; dataset.num_users * d_user];
    for (u, attrs) in dataset.user_attrs.iter().enumerate() {
        let row = &mut user_features[u * d_user..(u + 1) * d_user];
        if let Some(age) = attrs.age {
            row[0] = age / 100.0;
        }
        match attrs.gender.as_deref() {
            Some("M") => row[1] = 1.0,
            Some("F") => row[2] = 1.0,
            _ => {}
        }
        if let Some(occ) = &attrs.occupation {
            row[3 + occupation_index(dataset.kind, occ)?] = 1.0;
        }
    }

    let years: Vec<i32> = dataset.item_attrs.iter().filter_map(|a| a.year).collect();
    let (y_min, y_max) = (
        years.iter().copied().min().unwrap_or(0),
        years.iter().copied().max().unwrap_or(0),
    );
    let y_span = (y_max - y_min).max(0) as f64;

    let mut item_features = vec![0.0f64; dataset.num_items * d_item];
    for (i, attrs) in dataset.item_attrs.iter().enumerate() {
        let row = &mut item_features[i * d_item..(i + 1) * d_item];
        for g in &attrs.genres {
            row[genre_index(g)?] = 1.0;
        }
        if let Some(y) = attrs.year {
            if y_span > 0.0 {
                row[GENRES.len()] = (y - y_min) as f64 / y_span;
            }
        }
    }

    let mut user_encodings = vec!["age / 100".to_string()];
    user_encodings.push("gender = M".to_string());
    user_encodings.push("gender = F".to_string());
    for occ in ML100K_OCCUPATIONS {
        user_encodings.push(format!("occupation = {occ}"));
    }
    let mut item_encodings: Vec<String> = GENRES.iter().map(|g| format!("genre = {g}")).collect();
    item_encodings.push(format!(
        "release year min-max normalized over [{y_min}, {y_max}]"
    ));

    let table = FeatureTable {
        n_users: dataset.num_users,
        n_items: dataset.num_items,
        d_user,
        d_item,
        user_features,
        item_features,
        user_encodings,
        item_encodings,
    };
    table.validate()?;
    Ok(table)
}

fn one_hot_features(dataset: &RatingDataset) -> FeatureTable {
    let (n, m) = (dataset.num_users, dataset.num_items);
    let mut user_features = vec![0.0f64; n * n];
    for u in 0..n {
        user_features[u * n + u] = 1.0;
    }
    let mut item_features = vec![0.0f64; m * m];
    for i in 0..m {
        item_features[i * m + i] = 1.0;
    }
    FeatureTable {
        n_users: n,
        n_items: m,
        d_user: n,
        d_item: m,
        user_features,
        item_features,
        user_encodings: (0..n)
            .map(|u| format!("user index one-hot [{u}]"))
            .collect(),
        item_encodings: (0..m)
            .map(|i| format!("item index one-hot [{i}]"))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ItemAttrs, UserAttrs};

    fn dataset_with(users: Vec<UserAttrs>, items: Vec<ItemAttrs>) -> RatingDataset {
        RatingDataset {
            kind: DatasetKind::Ml100k,
            records: vec![],
            num_users: users.len(),
            num_items: items.len(),
            user_raw_ids: (0..users.len() as u32).collect(),
            item_raw_ids: (0..items.len() as u32).collect(),
            user_attrs: users,
            item_attrs: items,
            rating_scale: (1.0, 5.0),
        }
    }

    #[test]
    fn user_row_from_readme_example() {
        // "1|24|M|technician|85711"
        let ds = dataset_with(
            vec![UserAttrs {
                age: Some(24.0),
                gender: Some("M".into()),
                occupation: Some("technician".into()),
                zip: Some("85711".into()),
            }],
            vec![ItemAttrs::default()],
        );
        let t = featurize(&ds).unwrap();
        let row = t.user_row(0);
        assert_eq!(t.d_user, 24);
        assert_eq!(row[0], 0.24);
        assert_eq!(row[1], 1.0); // M
        assert_eq!(row[2], 0.0); // F
        let tech = 3 + ML100K_OCCUPATIONS
            .iter()
            .position(|&o| o == "technician")
            .unwrap();
        for (i, &v) in row.iter().enumerate().skip(3) {
            assert_eq!(v, if i == tech { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn item_with_nothing_is_zero_vector() {
        let ds = dataset_with(vec![UserAttrs::default()], vec![ItemAttrs::default()]);
        let t = featurize(&ds).unwrap();
        assert_eq!(t.d_item, 20);
        assert!(t.item_row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zip_code_is_dropped() {
        let mk = |zip: &str| UserAttrs {
            age: Some(30.0),
            gender: Some("F".into()),
            occupation: Some("writer".into()),
            zip: Some(zip.into()),
        };
        let ds = dataset_with(vec![mk("11111"), mk("99999")], vec![ItemAttrs::default()]);
        let t = featurize(&ds).unwrap();
        assert_eq!(t.user_row(0), t.user_row(1));
    }

    #[test]
    fn unknown_occupation_is_listed_in_error() {
        let ds = dataset_with(
            vec![UserAttrs {
                occupation: Some("astronaut".into()),
                ..Default::default()
            }],
            vec![ItemAttrs::default()],
        );
        match featurize(&ds) {
            Err(IngestError::UnknownLabel { kind, label }) => {
                assert_eq!(kind, "occupation");
                assert_eq!(label, "astronaut");
            }
            other => panic!("expected unknown-label error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_genre_is_listed_in_error() {
        let ds = dataset_with(
            vec![UserAttrs::default()],
            vec![ItemAttrs {
                genres: vec!["Mockumentary".into()],
                ..Default::default()
            }],
        );
        match featurize(&ds) {
            Err(IngestError::UnknownLabel { kind, label }) => {
                assert_eq!(kind, "genre");
                assert_eq!(label, "Mockumentary");
            }
            other => panic!("expected unknown-label error, got {other:?}"),
        }
    }

    #[test]
    fn year_is_min_max_normalized() {
        let item = |year: i32| ItemAttrs {
            year: Some(year),
            ..Default::default()
        };
        let ds = dataset_with(
            vec![UserAttrs::default()],
            vec![item(1980), item(1990), item(2000)],
        );
        let t = featurize(&ds).unwrap();
        assert_eq!(t.item_row(0)[19], 0.0);
        assert_eq!(t.item_row(1)[19], 0.5);
        assert_eq!(t.item_row(2)[19], 1.0);
    }
}
