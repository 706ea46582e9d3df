//! Item-based and user-based neighborhood collaborative filtering.
//!
//! Explicit mode mean-centers ratings (by item for item-kNN, by user for
//! user-kNN), uses cosine similarity of the centered vectors, and predicts a
//! rating as the mean plus the similarity-weighted average deviation of the
//! `k` most similar neighbors. Implicit item-kNN uses cosine over binary
//! vectors and scores by the sum of the top-`k` neighbor similarities.

use crate::corpus::InteractionSet;
use crate::error::{Error, Result};

use super::RecommenderSpec;

/// Above this many items the item-item similarities are stored sparsely.
const DENSE_ITEM_LIMIT: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    pub k: usize,
    pub min_neighbors: usize,
    /// Neighbors need similarity strictly greater than this.
    pub min_sim: f64,
}

impl KnnParams {
    pub(super) fn item_defaults(spec: &RecommenderSpec) -> Self {
        KnnParams {
            k: spec.param("k", 20.0) as usize,
            min_neighbors: spec.param("min_neighbors", 1.0) as usize,
            min_sim: spec.param("min_sim", 1e-6),
        }
    }

    pub(super) fn user_defaults(spec: &RecommenderSpec) -> Self {
        KnnParams {
            k: spec.param("k", 30.0) as usize,
            min_neighbors: spec.param("min_neighbors", 1.0) as usize,
            min_sim: spec.param("min_sim", 0.0),
        }
    }
}

fn require_ratings(data: &InteractionSet) -> Result<()> {
    if data.records().iter().any(|r| r.value.is_none()) {
        return Err(Error::invalid("explicit-mode neighborhood models need rating values"));
    }
    Ok(())
}

/// Keeps the `k` entries with the largest similarity (ties: smaller index),
/// returned in ascending index order so sums are order-stable.
fn top_k(mut nbrs: Vec<(u32, f64, f64)>, k: usize) -> Vec<(u32, f64, f64)> {
    let order = |a: &(u32, f64, f64), b: &(u32, f64, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < nbrs.len() {
        nbrs.select_nth_unstable_by(k, order);
        nbrs.truncate(k);
    }
    nbrs.sort_unstable_by_key(|n| n.0);
    nbrs
}

fn aggregate(nbrs: &[(u32, f64, f64)], mean: f64, params: &KnnParams, sum_only: bool) -> f64 {
    if nbrs.len() < params.min_neighbors.max(1) {
        return f64::NEG_INFINITY;
    }
    if sum_only {
        return nbrs.iter().map(|n| n.1).sum();
    }
    let num: f64 = nbrs.iter().map(|n| n.1 * n.2).sum();
    let den: f64 = nbrs.iter().map(|n| n.1.abs()).sum();
    if den == 0.0 {
        return f64::NEG_INFINITY;
    }
    mean + num / den
}

#[derive(Debug, Clone)]
enum Similarities {
    Dense { n: usize, sims: Vec<f32> },
    Sparse(Vec<Vec<(u32, f32)>>),
}

impl Similarities {
    fn get(&self, i: u32, j: u32) -> f64 {
        match self {
            Similarities::Dense { n, sims } => f64::from(sims[i as usize * n + j as usize]),
            Similarities::Sparse(rows) => {
                let row = &rows[i as usize];
                row.binary_search_by_key(&j, |e| e.0)
                    .map_or(0.0, |p| f64::from(row[p].1))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ItemKnn {
    params: KnnParams,
    implicit: bool,
    item_means: Vec<f64>,
    sims: Similarities,
    /// Per user: (item, centered value) in ascending item order.
    user_rows: Vec<Vec<(u32, f64)>>,
}

impl ItemKnn {
    pub fn train(data: &InteractionSet, params: KnnParams, implicit: bool) -> Result<Self> {
        if !implicit {
            require_ratings(data)?;
        }
        let n_items = data.n_items();
        let columns = data.by_item();
        let item_means: Vec<f64> = columns
            .iter()
            .map(|col| {
                if implicit || col.is_empty() {
                    0.0
                } else {
                    col.iter().map(|(_, v)| v.unwrap_or(0.0)).sum::<f64>() / col.len() as f64
                }
            })
            .collect();
        let value = |item: u32, v: Option<f64>| -> f64 {
            if implicit {
                1.0
            } else {
                v.unwrap_or(0.0) - item_means[item as usize]
            }
        };

        let user_rows: Vec<Vec<(u32, f64)>> = (0..data.n_users() as u32)
            .map(|u| data.user_records(u).iter().map(|r| (r.item, value(r.item, r.value))).collect())
            .collect();
        let norms: Vec<f64> = columns
            .iter()
            .enumerate()
            .map(|(i, col)| {
                col.iter()
                    .map(|(_, v)| value(i as u32, *v).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();

        let row_of = |i: usize| -> Vec<(u32, f32)> {
            let mut acc = vec![0.0f64; n_items];
            if norms[i] == 0.0 {
                return Vec::new();
            }
            for &(u, v) in &columns[i] {
                let vi = value(i as u32, v);
                for &(j, vj) in &user_rows[u as usize] {
                    acc[j as usize] += vi * vj;
                }
            }
            acc.iter()
                .enumerate()
                .filter(|&(j, _)| j != i && norms[j] > 0.0)
                .map(|(j, dot)| (j as u32, dot / (norms[i] * norms[j])))
                .filter(|&(_, s)| s > params.min_sim)
                .map(|(j, s)| (j, s as f32))
                .collect()
        };
        let rows = crate::par::map_range(crate::par::Execution::Parallel, n_items, row_of);
        let sims = if n_items <= DENSE_ITEM_LIMIT {
            let mut dense = vec![0.0f32; n_items * n_items];
            for (i, row) in rows.iter().enumerate() {
                for &(j, s) in row {
                    dense[i * n_items + j as usize] = s;
                }
            }
            Similarities::Dense { n: n_items, sims: dense }
        } else {
            Similarities::Sparse(rows)
        };
        Ok(ItemKnn {
            params,
            implicit,
            item_means,
            sims,
            user_rows,
        })
    }

    pub(super) fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        let history = &self.user_rows[user as usize];
        items
            .iter()
            .map(|&i| {
                let nbrs: Vec<(u32, f64, f64)> = history
                    .iter()
                    .filter(|&&(j, _)| j != i)
                    .map(|&(j, dev)| (j, self.sims.get(i, j), dev))
                    .filter(|n| n.1 > self.params.min_sim)
                    .collect();
                let nbrs = top_k(nbrs, self.params.k);
                aggregate(&nbrs, self.item_means[i as usize], &self.params, self.implicit)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct UserKnn {
    params: KnnParams,
    user_means: Vec<f64>,
    norms: Vec<f64>,
    /// Per user: (item, centered rating), items ascending.
    user_rows: Vec<Vec<(u32, f64)>>,
    /// Per item: (user, centered rating), users ascending.
    item_cols: Vec<Vec<(u32, f64)>>,
}

impl UserKnn {
    pub fn train(data: &InteractionSet, params: KnnParams) -> Result<Self> {
        require_ratings(data)?;
        let user_means: Vec<f64> = (0..data.n_users() as u32)
            .map(|u| {
                let recs = data.user_records(u);
                if recs.is_empty() {
                    0.0
                } else {
                    recs.iter().map(|r| r.value.unwrap_or(0.0)).sum::<f64>() / recs.len() as f64
                }
            })
            .collect();
        let user_rows: Vec<Vec<(u32, f64)>> = (0..data.n_users() as u32)
            .map(|u| {
                data.user_records(u)
                    .iter()
                    .map(|r| (r.item, r.value.unwrap_or(0.0) - user_means[u as usize]))
                    .collect()
            })
            .collect();
        let norms = user_rows
            .iter()
            .map(|row| row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt())
            .collect();
        let mut item_cols = vec![Vec::new(); data.n_items()];
        for (u, row) in user_rows.iter().enumerate() {
            for &(i, v) in row {
                item_cols[i as usize].push((u as u32, v));
            }
        }
        Ok(UserKnn {
            params,
            user_means,
            norms,
            user_rows,
            item_cols,
        })
    }

    fn similarities(&self, user: u32) -> Vec<f64> {
        let mut dots = vec![0.0; self.user_rows.len()];
        for &(i, vu) in &self.user_rows[user as usize] {
            for &(v, vv) in &self.item_cols[i as usize] {
                dots[v as usize] += vu * vv;
            }
        }
        let nu = self.norms[user as usize];
        dots.iter()
            .zip(&self.norms)
            .map(|(d, nv)| if nu > 0.0 && *nv > 0.0 { d / (nu * nv) } else { 0.0 })
            .collect()
    }

    pub(super) fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        let sims = self.similarities(user);
        items
            .iter()
            .map(|&i| {
                let nbrs: Vec<(u32, f64, f64)> = self.item_cols[i as usize]
                    .iter()
                    .filter(|&&(v, _)| v != user)
                    .map(|&(v, dev)| (v, sims[v as usize], dev))
                    .filter(|n| n.1 > self.params.min_sim)
                    .collect();
                let nbrs = top_k(nbrs, self.params.k);
                aggregate(&nbrs, self.user_means[user as usize], &self.params, false)
            })
            .collect()
    }
}
