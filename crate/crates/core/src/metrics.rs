//! Top-N ranking metrics with binary relevance, and popularity diagnostics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::IdIndex;
use crate::error::{Error, Result};

pub type ItemSet = HashSet<u32>;

fn hits_in(list: &[u32], relevant: &ItemSet, k: usize) -> usize {
    list.iter().take(k).filter(|i| relevant.contains(i)).count()
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Binary-gain nDCG at cutoff `k`; 0 when `relevant` is empty.
pub fn ndcg_at(list: &[u32], relevant: &ItemSet, k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be at least 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = list
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| discount(r + 1))
        .sum();
    let ideal: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    dcg / ideal
}

/// Hits in the top `k` divided by `k` (not by the list length).
pub fn precision_at(list: &[u32], relevant: &ItemSet, k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be at least 1");
    hits_in(list, relevant, k) as f64 / k as f64
}

pub fn recall_at(list: &[u32], relevant: &ItemSet, k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be at least 1");
    if relevant.is_empty() {
        return 0.0;
    }
    hits_in(list, relevant, k) as f64 / relevant.len() as f64
}

pub fn hit_at(list: &[u32], relevant: &ItemSet, k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be at least 1");
    if hits_in(list, relevant, k) > 0 {
        1.0
    } else {
        0.0
    }
}

/// `1/r` for the first relevant position `r` in the list, 0 if none.
pub fn reciprocal_rank(list: &[u32], relevant: &ItemSet) -> f64 {
    list.iter()
        .position(|i| relevant.contains(i))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Mean popularity rank (1 = least popular) over the whole list.
pub fn mean_popularity_rank(list: &[u32], ranks: &[f64]) -> Result<f64> {
    if list.is_empty() {
        return Err(Error::Empty("mean popularity rank of an empty list".into()));
    }
    let mut total = 0.0;
    for &i in list {
        total += *ranks
            .get(i as usize)
            .ok_or_else(|| Error::UnknownItem(i.to_string()))?;
    }
    Ok(total / list.len() as f64)
}

/// Mean over lists of their mean popularity rank.
pub fn popularity_tendency<'a>(lists: impl IntoIterator<Item = &'a [u32]>, ranks: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for list in lists {
        total += mean_popularity_rank(list, ranks)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("popularity tendency needs at least one list".into()));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ndcg,
    Precision,
    Recall,
    Hit,
    RecipRank,
    MeanPopRank,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Ndcg,
        Metric::Precision,
        Metric::Recall,
        Metric::Hit,
        Metric::RecipRank,
        Metric::MeanPopRank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::Hit => "hit",
            Metric::RecipRank => "recip_rank",
            Metric::MeanPopRank => "mean_pop_rank",
        }
    }

    /// Whether the metric depends on a relevance set.
    pub fn uses_relevance(self) -> bool {
        self != Metric::MeanPopRank
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

/// Evaluates one list. Reciprocal rank only looks at the first `k` positions;
/// mean popularity rank uses the full list.
pub fn evaluate(metric: Metric, list: &[u32], relevant: &ItemSet, k: usize, pop_ranks: &[f64]) -> Result<f64> {
    Ok(match metric {
        Metric::Ndcg => ndcg_at(list, relevant, k),
        Metric::Precision => precision_at(list, relevant, k),
        Metric::Recall => recall_at(list, relevant, k),
        Metric::Hit => hit_at(list, relevant, k),
        Metric::RecipRank => reciprocal_rank(&list[..list.len().min(k)], relevant),
        Metric::MeanPopRank => mean_popularity_rank(list, pop_ranks)?,
    })
}

/// One per-user metric value.
#[derive(Debug, Clone, PartialEq)]
pub struct UserValue {
    pub user: String,
    pub metric: Metric,
    pub value: f64,
    /// The user had no relevant items; relevance metrics are 0 by convention.
    pub empty_relevant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricAggregate {
    pub metric: Metric,
    pub mean: f64,
    pub n_users: usize,
    /// Users left out because their relevant set was empty.
    pub n_excluded: usize,
}

/// Per-metric arithmetic means. The reduction runs in canonical user-id
/// order so results do not depend on how rows were produced.
pub fn aggregate(rows: &[UserValue], exclude_empty: bool) -> Vec<MetricAggregate> {
    let mut by_metric: BTreeMap<Metric, Vec<&UserValue>> = BTreeMap::new();
    for row in rows {
        by_metric.entry(row.metric).or_default().push(row);
    }
    by_metric
        .into_iter()
        .map(|(metric, mut vals)| {
            let order = IdIndex::from_ids(vals.iter().map(|v| v.user.as_str()));
            vals.sort_by_key(|v| order.get(&v.user));
            let (kept, excluded): (Vec<&UserValue>, Vec<&UserValue>) = vals
                .into_iter()
                .partition(|v| !(exclude_empty && v.empty_relevant && metric.uses_relevance()));
            let mean = if kept.is_empty() {
                0.0
            } else {
                kept.iter().map(|v| v.value).sum::<f64>() / kept.len() as f64
            };
            MetricAggregate {
                metric,
                mean,
                n_users: kept.len(),
                n_excluded: excluded.len(),
            }
        })
        .collect()
}
