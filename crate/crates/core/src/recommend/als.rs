//! Implicit-feedback matrix factorization by alternating least squares.
//!
//! Minimizes `Σ_{u,i} c_ui (p_ui − x_u·y_i)² + reg (‖X‖² + ‖Y‖²)` over all
//! user-item pairs, where `p_ui = 1` for observed pairs (0 otherwise) and
//! `c_ui = 1 + weight` for observed pairs (1 otherwise). Each half-step solves
//! one side exactly, so the objective never increases.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::InteractionSet;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng;

use super::RecommenderSpec;

const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsParams {
    pub features: usize,
    pub iterations: usize,
    pub reg: f64,
    pub weight: f64,
}

impl Default for AlsParams {
    fn default() -> Self {
        AlsParams {
            features: 50,
            iterations: 20,
            reg: 0.1,
            weight: 40.0,
        }
    }
}

impl AlsParams {
    pub(super) fn from_spec(spec: &RecommenderSpec) -> Result<Self> {
        let d = AlsParams::default();
        let p = AlsParams {
            features: spec.param("features", d.features as f64) as usize,
            iterations: spec.param("iterations", d.iterations as f64) as usize,
            reg: spec.param("reg", d.reg),
            weight: spec.param("weight", d.weight),
        };
        if p.features == 0 || p.iterations == 0 {
            return Err(Error::invalid("implicit-mf needs at least one feature and one iteration"));
        }
        Ok(p)
    }
}

/// Row-major factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Factors {
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// `FᵀF`.
    fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.rows {
            let row = self.row(r);
            for a in 0..self.dim {
                for b in 0..self.dim {
                    g[(a, b)] += row[a] * row[b];
                }
            }
        }
        g
    }

    fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn random(rows: usize, dim: usize, rng: &mut rng::StreamRng) -> Self {
        let data = (0..rows * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * INIT_SCALE
            })
            .collect();
        Factors { rows, dim, data }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves every row of one side given the other side's factors.
fn solve_side(lists: &[Vec<u32>], other: &Factors, params: &AlsParams) -> Result<Factors> {
    let dim = other.dim;
    let mut base = other.gram();
    for a in 0..dim {
        base[(a, a)] += params.reg;
    }
    let conf = 1.0 + params.weight;
    let solved = par::map(Execution::Parallel, lists, |cols| -> Result<Vec<f64>> {
        if cols.is_empty() {
            return Ok(vec![0.0; dim]);
        }
        let mut a = base.clone();
        let mut b = DVector::zeros(dim);
        for &c in cols {
            let y = other.row(c as usize);
            for p in 0..dim {
                b[p] += conf * y[p];
                let yp = (conf - 1.0) * y[p];
                for q in 0..dim {
                    a[(p, q)] += yp * y[q];
                }
            }
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Numerical("ALS normal equations are not positive definite".into()))?;
        Ok(chol.solve(&b).iter().copied().collect())
    });
    let mut data = Vec::with_capacity(lists.len() * dim);
    for row in solved {
        data.extend(row?);
    }
    Ok(Factors {
        rows: lists.len(),
        dim,
        data,
    })
}

/// Full objective value, computed without materializing the dense matrix.
pub(crate) fn objective(user_lists: &[Vec<u32>], users: &Factors, items: &Factors, params: &AlsParams) -> f64 {
    let gu = users.gram();
    let gi = items.gram();
    let all_pairs: f64 = gu.component_mul(&gi).sum();
    let conf = 1.0 + params.weight;
    let mut observed = 0.0;
    for (u, cols) in user_lists.iter().enumerate() {
        let x = users.row(u);
        for &i in cols {
            let s = dot(x, items.row(i as usize));
            observed += conf * (1.0 - s).powi(2) - s * s;
        }
    }
    all_pairs + observed + params.reg * (users.sq_norm() + items.sq_norm())
}

#[derive(Debug, Clone)]
pub struct ImplicitMf {
    pub(crate) users: Factors,
    pub(crate) items: Factors,
    /// Objective at initialization and after every half-step.
    pub objective_trace: Vec<f64>,
}

fn adjacency(data: &InteractionSet) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let user_lists: Vec<Vec<u32>> = (0..data.n_users() as u32)
        .map(|u| data.user_items(u).collect())
        .collect();
    let mut item_lists = vec![Vec::new(); data.n_items()];
    for (u, items) in user_lists.iter().enumerate() {
        for &i in items {
            item_lists[i as usize].push(u as u32);
        }
    }
    (user_lists, item_lists)
}

impl ImplicitMf {
    pub fn train(data: &InteractionSet, params: AlsParams, seed: u64) -> Result<Self> {
        let mut r = rng::stream("als.init", seed, &[]);
        let users = Factors::random(data.n_users(), params.features, &mut r);
        let items = Factors::random(data.n_items(), params.features, &mut r);
        Self::train_from(data, params, users, items)
    }

    /// Runs ALS from the given initial factors.
    pub fn train_from(data: &InteractionSet, params: AlsParams, mut users: Factors, mut items: Factors) -> Result<Self> {
        if users.rows != data.n_users() || items.rows != data.n_items() || users.dim != items.dim {
            return Err(Error::invalid("initial factor shapes do not match the data"));
        }
        let (user_lists, item_lists) = adjacency(data);
        let mut trace = vec![objective(&user_lists, &users, &items, &params)];
        for it in 0..params.iterations {
            users = solve_side(&user_lists, &items, &params)?;
            trace.push(objective(&user_lists, &users, &items, &params));
            items = solve_side(&item_lists, &users, &params)?;
            trace.push(objective(&user_lists, &users, &items, &params));
            log::trace!("als iteration {it}: objective {}", trace.last().unwrap());
        }
        Ok(ImplicitMf {
            users,
            items,
            objective_trace: trace,
        })
    }

    pub fn user_factors(&self) -> &Factors {
        &self.users
    }

    pub fn item_factors(&self) -> &Factors {
        &self.items
    }

    pub(super) fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        let x = self.users.row(user as usize);
        items.iter().map(|&i| dot(x, self.items.row(i as usize))).collect()
    }
}
