//! Parsers for the ML-100k (tab / pipe separated) and ML-1M (`::` separated)
//! dataset distributions.

use std::collections::HashMap;
use std::path::Path;

use super::{DatasetKind, IngestError, ItemAttrs, RatingDataset, RatingRecord, UserAttrs};
use crate::ingest::features::GENRES;

/// Attribute files ship in latin-1; decode lossily rather than reject.
fn read_lines(path: &Path) -> Result<Vec<String>, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Dense remap: raw ids sorted ascending take indices 0..n.
fn id_map(raw_ids: &[u32]) -> HashMap<u32, usize> {
    let mut sorted = raw_ids.to_vec();
    sorted.sort_unstable();
    sorted
        .into_iter()
        .enumerate()
        .map(|(idx, id)| (id, idx))
        .collect()
}

struct RawRating {
    user: u32,
    item: u32,
    rating: f64,
    timestamp: i64,
}

/// Re-ratings keep the latest timestamp; ties keep the later line.
fn dedup_latest(raw: Vec<RawRating>) -> Vec<RawRating> {
    let mut latest: HashMap<(u32, u32), RawRating> = HashMap::new();
    for r in raw {
        match latest.get(&(r.user, r.item)) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            _ => {
                latest.insert((r.user, r.item), r);
            }
        }
    }
    let mut out: Vec<RawRating> = latest.into_values().collect();
    out.sort_by_key(|r| (r.user, r.item));
    out
}

fn assemble(
    kind: DatasetKind,
    raw_ratings: Vec<RawRating>,
    users: Vec<(u32, UserAttrs)>,
    items: Vec<(u32, ItemAttrs)>,
    ratings_path: &Path,
) -> Result<RatingDataset, IngestError> {
    let user_ids: Vec<u32> = users.iter().map(|(id, _)| *id).collect();
    let item_ids: Vec<u32> = items.iter().map(|(id, _)| *id).collect();
    let umap = id_map(&user_ids);
    let imap = id_map(&item_ids);
    if umap.len() != user_ids.len() {
        return Err(IngestError::Integrity(
            "duplicate user id in attribute file".into(),
        ));
    }
    if imap.len() != item_ids.len() {
        return Err(IngestError::Integrity(
            "duplicate item id in attribute file".into(),
        ));
    }

    let mut user_raw_ids = user_ids.clone();
    user_raw_ids.sort_unstable();
    let mut item_raw_ids = item_ids.clone();
    item_raw_ids.sort_unstable();

    let mut user_attrs = vec![UserAttrs::default(); users.len()];
    for (id, attrs) in users {
        user_attrs[umap[&id]] = attrs;
    }
    let mut item_attrs = vec![ItemAttrs::default(); items.len()];
    for (id, attrs) in items {
        item_attrs[imap[&id]] = attrs;
    }

    let mut records = Vec::with_capacity(raw_ratings.len());
    for r in dedup_latest(raw_ratings) {
        let user_id = *umap.get(&r.user).ok_or_else(|| {
            IngestError::Integrity(format!(
                "rating references user {} absent from {}",
                r.user,
                ratings_path.display()
            ))
        })?;
        let item_id = *imap.get(&r.item).ok_or_else(|| {
            IngestError::Integrity(format!(
                "rating references item {} absent from {}",
                r.item,
                ratings_path.display()
            ))
        })?;
        records.push(RatingRecord {
            user_id,
            item_id,
            rating: r.rating,
            timestamp: r.timestamp,
        });
    }

    let ds = RatingDataset {
        kind,
        records,
        num_users: user_raw_ids.len(),
        num_items: item_raw_ids.len(),
        user_raw_ids,
        item_raw_ids,
        user_attrs,
        item_attrs,
        rating_scale: (1.0, 5.0),
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_ratings_file(path: &Path, sep: &str) -> Result<Vec<RawRating>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let user: u32 = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad user id `{}`", fields[0])))?;
        let item: u32 = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad item id `{}`", fields[1])))?;
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad rating `{}`", fields[2])))?;
        let timestamp: i64 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad timestamp `{}`", fields[3])))?;
        out.push(RawRating {
            user,
            item,
            rating,
            timestamp,
        });
    }
    Ok(out)
}

fn year_from_date(date: &str) -> Option<i32> {
    // "01-Jan-1995" -> 1995
    date.rsplit('-').next()?.parse().ok()
}

fn year_from_title(title: &str) -> Option<i32> {
    // "Toy Story (1995)" -> 1995
    let open = title.rfind('(')?;
    let close = title.rfind(')')?;
    title.get(open + 1..close)?.parse().ok()
}

/// ML-100k: `u.data` (tab separated), `u.user` and `u.item` (pipe separated).
pub fn parse_ml100k(
    data_path: impl AsRef<Path>,
    user_path: impl AsRef<Path>,
    item_path: impl AsRef<Path>,
) -> Result<RatingDataset, IngestError> {
    let (data_path, user_path, item_path) =
        (data_path.as_ref(), user_path.as_ref(), item_path.as_ref());

    let mut users = Vec::new();
    for (i, line) in read_lines(user_path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 5 {
            return Err(parse_err(
                user_path,
                line_no,
                format!("expected 5 fields, got {}", f.len()),
            ));
        }
        let id: u32 = f[0]
            .parse()
            .map_err(|_| parse_err(user_path, line_no, format!("bad user id `{}`", f[0])))?;
        users.push((
            id,
            UserAttrs {
                age: f[1].parse().ok(),
                gender: (!f[2].is_empty()).then(|| f[2].to_string()),
                occupation: (!f[3].is_empty()).then(|| f[3].to_string()),
                zip: (!f[4].is_empty()).then(|| f[4].to_string()),
            },
        ));
    }

    let mut items = Vec::new();
    for (i, line) in read_lines(item_path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 5 + GENRES.len() {
            return Err(parse_err(
                item_path,
                line_no,
                format!("expected {} fields, got {}", 5 + GENRES.len(), f.len()),
            ));
        }
        let id: u32 = f[0]
            .parse()
            .map_err(|_| parse_err(item_path, line_no, format!("bad item id `{}`", f[0])))?;
        let mut genres = Vec::new();
        for (g, &flag) in GENRES.iter().zip(&f[5..]) {
            match flag {
                "1" => genres.push((*g).to_string()),
                "0" => {}
                other => {
                    return Err(parse_err(
                        item_path,
                        line_no,
                        format!("genre flag `{other}` is not 0/1"),
                    ))
                }
            }
        }
        items.push((
            id,
            ItemAttrs {
                title: (!f[1].is_empty()).then(|| f[1].to_string()),
                year: year_from_date(f[2]),
                genres,
            },
        ));
    }

    let raw = parse_ratings_file(data_path, "\t")?;
    assemble(DatasetKind::Ml100k, raw, users, items, data_path)
}

/// ML-1M: `ratings.dat`, `users.dat`, `movies.dat`, all `::` separated.
pub fn parse_ml1m(
    ratings_path: impl AsRef<Path>,
    users_path: impl AsRef<Path>,
    movies_path: impl AsRef<Path>,
) -> Result<RatingDataset, IngestError> {
    let (ratings_path, users_path, movies_path) = (
        ratings_path.as_ref(),
        users_path.as_ref(),
        movies_path.as_ref(),
    );

    let mut users = Vec::new();
    for (i, line) in read_lines(users_path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        // UserID::Gender::Age::Occupation::Zip-code
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 5 {
            return Err(parse_err(
                users_path,
                line_no,
                format!("expected 5 fields, got {}", f.len()),
            ));
        }
        let id: u32 = f[0]
            .parse()
            .map_err(|_| parse_err(users_path, line_no, format!("bad user id `{}`", f[0])))?;
        users.push((
            id,
            UserAttrs {
                age: f[2].parse().ok(),
                gender: (!f[1].is_empty()).then(|| f[1].to_string()),
                occupation: (!f[3].is_empty()).then(|| f[3].to_string()),
                zip: (!f[4].is_empty()).then(|| f[4].to_string()),
            },
        ));
    }

    let mut items = Vec::new();
    for (i, line) in read_lines(movies_path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        // MovieID::Title::Genres (genres pipe separated)
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 3 {
            return Err(parse_err(
                movies_path,
                line_no,
                format!("expected 3 fields, got {}", f.len()),
            ));
        }
        let id: u32 = f[0]
            .parse()
            .map_err(|_| parse_err(movies_path, line_no, format!("bad movie id `{}`", f[0])))?;
        let genres = if f[2].is_empty() {
            Vec::new()
        } else {
            f[2].split('|').map(|s| s.to_string()).collect()
        };
        items.push((
            id,
            ItemAttrs {
                title: (!f[1].is_empty()).then(|| f[1].to_string()),
                year: year_from_title(f[1]),
                genres,
            },
        ));
    }

    let raw = parse_ratings_file(ratings_path, "::")?;
    assemble(DatasetKind::Ml1m, raw, users, items, ratings_path)
}
