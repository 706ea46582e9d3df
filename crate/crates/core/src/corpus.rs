//! Interaction datasets: loading, indexing and concentration statistics.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index for one identifier space (users or items).
///
/// Identifiers are kept in canonical order: integer-looking ids sort
/// numerically and come before all other ids, which sort lexicographically.
/// Dense index order therefore equals id order, so "ties broken by ascending
/// item id" is the same as ties broken by ascending dense index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

fn id_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

impl IdIndex {
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        ids.sort_by(|a, b| id_cmp(a, b));
        ids.dedup();
        let lookup = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        IdIndex { ids, lookup }
    }

    /// Index over `"0", "1", ..., "n-1"`.
    pub fn sequential(n: usize) -> Self {
        Self::from_ids((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, idx: u32) -> &str {
        &self.ids[idx as usize]
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// One user-item interaction, stored against dense indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub value: Option<f64>,
    pub timestamp: Option<i64>,
}

/// Immutable sparse interaction table, sorted by `(user, item)` with no
/// duplicate pairs.
#[derive(Debug, Clone)]
pub struct InteractionSet {
    users: Arc<IdIndex>,
    items: Arc<IdIndex>,
    records: Vec<Interaction>,
    user_offsets: Vec<usize>,
}

impl InteractionSet {
    /// Builds a set from records in arrival order. Duplicate `(user, item)`
    /// pairs collapse to the last occurrence.
    pub fn new(users: Arc<IdIndex>, items: Arc<IdIndex>, mut records: Vec<Interaction>) -> Result<Self> {
        for r in &records {
            if r.user as usize >= users.len() {
                return Err(Error::invalid(format!("user index {} out of range", r.user)));
            }
            if r.item as usize >= items.len() {
                return Err(Error::invalid(format!("item index {} out of range", r.item)));
            }
        }
        // stable sort keeps arrival order inside each (user, item) group
        records.sort_by_key(|r| (r.user, r.item));
        let mut deduped: Vec<Interaction> = Vec::with_capacity(records.len());
        for r in records {
            match deduped.last_mut() {
                Some(last) if last.user == r.user && last.item == r.item => *last = r,
                _ => deduped.push(r),
            }
        }
        let mut user_offsets = vec![0usize; users.len() + 1];
        for r in &deduped {
            user_offsets[r.user as usize + 1] += 1;
        }
        for u in 0..users.len() {
            user_offsets[u + 1] += user_offsets[u];
        }
        Ok(InteractionSet {
            users,
            items,
            records: deduped,
            user_offsets,
        })
    }

    /// Builds a set from `(user id, item id, value)` triples, indexing the ids seen.
    pub fn from_triples<U, I>(triples: impl IntoIterator<Item = (U, I, Option<f64>)>) -> Result<Self>
    where
        U: Into<String>,
        I: Into<String>,
    {
        let raw: Vec<(String, String, Option<f64>)> = triples
            .into_iter()
            .map(|(u, i, v)| (u.into(), i.into(), v))
            .collect();
        let users = Arc::new(IdIndex::from_ids(raw.iter().map(|r| r.0.clone())));
        let items = Arc::new(IdIndex::from_ids(raw.iter().map(|r| r.1.clone())));
        let records = raw
            .iter()
            .map(|(u, i, v)| Interaction {
                user: users.get(u).expect("indexed"),
                item: items.get(i).expect("indexed"),
                value: *v,
                timestamp: None,
            })
            .collect();
        InteractionSet::new(users, items, records)
    }

    /// A new set over the same indices.
    pub fn with_records(&self, records: Vec<Interaction>) -> Result<Self> {
        InteractionSet::new(self.users.clone(), self.items.clone(), records)
    }

    pub fn users(&self) -> &Arc<IdIndex> {
        &self.users
    }

    pub fn items(&self) -> &Arc<IdIndex> {
        &self.items
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn user_records(&self, user: u32) -> &[Interaction] {
        let u = user as usize;
        &self.records[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// The user's items in ascending index order.
    pub fn user_items(&self, user: u32) -> impl Iterator<Item = u32> + '_ {
        self.user_records(user).iter().map(|r| r.item)
    }

    pub fn user_len(&self, user: u32) -> usize {
        let u = user as usize;
        self.user_offsets[u + 1] - self.user_offsets[u]
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.user_records(user)
            .binary_search_by_key(&item, |r| r.item)
            .is_ok()
    }

    /// Users with at least one interaction, ascending.
    pub fn active_users(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.n_users() as u32).filter(|&u| self.user_len(u) > 0)
    }

    /// Number of interactions per item, indexed by dense item index.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_items()];
        for r in &self.records {
            counts[r.item as usize] += 1;
        }
        counts
    }

    /// Item-major view: for each item, the `(user, value)` pairs, users ascending.
    pub fn by_item(&self) -> Vec<Vec<(u32, Option<f64>)>> {
        let mut cols = vec![Vec::new(); self.n_items()];
        for r in &self.records {
            cols[r.item as usize].push((r.user, r.value));
        }
        cols
    }
}

/// Column layout of a delimited interaction file (zero-based column positions).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Format {
    pub delimiter: char,
    #[serde(default)]
    pub header: bool,
    pub user_col: usize,
    pub item_col: usize,
    #[serde(default)]
    pub rating_col: Option<usize>,
    #[serde(default)]
    pub timestamp_col: Option<usize>,
}

impl Format {
    /// MovieLens 100K `u.data`: tab separated `user item rating timestamp`.
    pub fn ml100k() -> Self {
        Format {
            delimiter: '\t',
            header: false,
            user_col: 0,
            item_col: 1,
            rating_col: Some(2),
            timestamp_col: Some(3),
        }
    }

    /// Comma separated `user,item,rating`, no header.
    pub fn csv() -> Self {
        Format {
            delimiter: ',',
            header: false,
            user_col: 0,
            item_col: 1,
            rating_col: Some(2),
            timestamp_col: None,
        }
    }

    /// Comma separated `user,item,rating,timestamp` with a header row
    /// (MovieLens 20M/25M `ratings.csv`).
    pub fn csv_header() -> Self {
        Format {
            header: true,
            timestamp_col: Some(3),
            ..Format::csv()
        }
    }

    /// Comma separated `user,item` pairs, no header.
    pub fn implicit() -> Self {
        Format {
            rating_col: None,
            ..Format::csv()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ml100k" => Some(Format::ml100k()),
            "csv" => Some(Format::csv()),
            "csv-header" => Some(Format::csv_header()),
            "implicit" => Some(Format::implicit()),
            _ => None,
        }
    }

    pub const PRESETS: &'static [&'static str] = &["ml100k", "csv", "csv-header", "implicit"];
}

/// Loads and validates a delimited interaction file.
pub fn load_interactions(path: &Path, format: &Format) -> Result<InteractionSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(BufReader::new(file), path, format)
}

pub(crate) fn read_interactions<R: Read>(reader: R, path: &Path, format: &Format) -> Result<InteractionSet> {
    if !format.delimiter.is_ascii() {
        return Err(Error::invalid("delimiter must be a single ASCII character"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(format.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let needed = [
        Some(format.user_col),
        Some(format.item_col),
        format.rating_col,
        format.timestamp_col,
    ]
    .into_iter()
    .flatten()
    .max()
    .unwrap_or(0);

    let mut raw: Vec<(String, String, Option<f64>, Option<i64>)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                path: path.to_owned(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() <= needed {
            return Err(bad(format!("expected at least {} fields, found {}", needed + 1, row.len())));
        }
        let user = &row[format.user_col];
        let item = &row[format.item_col];
        if user.is_empty() || item.is_empty() {
            return Err(bad("empty user or item id".into()));
        }
        let value = match format.rating_col {
            Some(c) => Some(
                row[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("invalid rating {:?}", &row[c])))?,
            ),
            None => None,
        };
        let timestamp = match format.timestamp_col {
            Some(c) => Some(
                row[c]
                    .parse::<i64>()
                    .map_err(|_| bad(format!("invalid timestamp {:?}", &row[c])))?,
            ),
            None => None,
        };
        raw.push((user.to_owned(), item.to_owned(), value, timestamp));
    }
    if raw.is_empty() {
        return Err(Error::Empty(format!("{} has no interactions", path.display())));
    }

    let users = Arc::new(IdIndex::from_ids(raw.iter().map(|r| r.0.as_str())));
    let items = Arc::new(IdIndex::from_ids(raw.iter().map(|r| r.1.as_str())));
    let records = raw
        .iter()
        .map(|(u, i, v, t)| Interaction {
            user: users.get(u).expect("indexed"),
            item: items.get(i).expect("indexed"),
            value: *v,
            timestamp: *t,
        })
        .collect();
    InteractionSet::new(users, items, records)
}

/// Size, density and concentration of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_ratings: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub density: f64,
    pub gini: f64,
}

impl DatasetSummary {
    pub const CSV_HEADER: &'static str = "dataset,n_ratings,n_users,n_items,density,gini";

    pub fn csv_row(&self, dataset: &str) -> String {
        format!(
            "{},{},{},{},{},{}",
            dataset, self.n_ratings, self.n_users, self.n_items, self.density, self.gini
        )
    }
}

/// Summarizes a dataset. Users and items are counted over the set's indices, so
/// indexed items without interactions contribute zero counts to the Gini index.
pub fn summarize(data: &InteractionSet) -> Result<DatasetSummary> {
    if data.is_empty() {
        return Err(Error::Empty("cannot summarize an empty dataset".into()));
    }
    let counts: Vec<f64> = data.item_counts().into_iter().map(|c| c as f64).collect();
    let n_users = data.n_users();
    let n_items = data.n_items();
    let gini = if n_items >= 2 { gini_index(&counts)? } else { 0.0 };
    Ok(DatasetSummary {
        n_ratings: data.len(),
        n_users,
        n_items,
        density: data.len() as f64 / (n_users as f64 * n_items as f64),
        gini,
    })
}

/// Gini index of non-negative counts, via the sorted-vector form
/// `G = 2·Σ i·x_(i) / (n·Σx) − (n+1)/n` with `x_(i)` ascending.
pub fn gini_index(counts: &[f64]) -> Result<f64> {
    if counts.len() < 2 {
        return Err(Error::invalid("gini index needs at least 2 counts"));
    }
    if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::invalid("gini index needs finite non-negative counts"));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("gini index of all-zero counts is undefined"));
    }
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (i as f64 + 1.0) * x)
        .sum();
    let g = 2.0 * weighted / (n * total) - (n + 1.0) / n;
    Ok(g.max(0.0))
}

/// Per-item interaction counts and popularity ranks (1 = least popular,
/// ties share their midrank).
#[derive(Debug, Clone, PartialEq)]
pub struct ItemPopularity {
    pub counts: Vec<usize>,
    pub ranks: Vec<f64>,
}

pub fn item_popularity(data: &InteractionSet) -> ItemPopularity {
    let counts = data.item_counts();
    let ranks = midranks(&counts);
    ItemPopularity { counts, ranks }
}

pub(crate) fn midranks(counts: &[usize]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| counts[i]);
    let mut ranks = vec![0.0; counts.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && counts[order[end + 1]] == counts[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end+1 share their average
        let mid = (start + end + 2) as f64 / 2.0;
        for &i in &order[start..=end] {
            ranks[i] = mid;
        }
        start = end + 1;
    }
    ranks
}
