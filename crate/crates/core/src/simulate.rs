//! Synthetic complete-preference data from an LDA-style generative model,
//! and a popularity-biased observation process over it.
//!
//! Generation:
//! 1. draw `K` feature-item distributions `φ_k ~ Dirichlet(β)`;
//! 2. for each user draw `θ_u ~ Dirichlet(α)` and `n_u ~ Poisson(λ)`, then
//!    `n_u` items, each by picking a feature `k ~ θ_u` and an item `i ~ φ_k`;
//! 3. de-duplicate the user-item pairs.
//!
//! Streams: `φ_k` uses `("lda.phi", seed, k)` and user `u` uses
//! `("lda.user", seed, u)`, so generation is identical sequential or parallel.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{summarize, DatasetSummary, IdIndex, Interaction, InteractionSet};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng;
use crate::sampling::weighted_sample;

/// Dirichlet concentration: one shared value or one per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Concentration {
    Symmetric(f64),
    Vector(Vec<f64>),
}

impl Concentration {
    fn validate(&self, len: usize, name: &str) -> Result<()> {
        let ok = match self {
            Concentration::Symmetric(a) => a.is_finite() && *a > 0.0,
            Concentration::Vector(v) => v.len() == len && v.iter().all(|a| a.is_finite() && *a > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("{name} must be positive with {len} components")))
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            Concentration::Symmetric(a) => *a,
            Concentration::Vector(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdaParams {
    /// Number of latent features.
    pub k: usize,
    pub alpha: Concentration,
    pub beta: Concentration,
    /// Poisson mean of items drawn per user.
    pub lambda: f64,
    pub n_users: usize,
    pub n_items: usize,
    pub seed: u64,
}

impl Default for LdaParams {
    fn default() -> Self {
        LdaParams {
            k: 50,
            alpha: Concentration::Symmetric(0.1),
            beta: Concentration::Symmetric(0.05),
            lambda: 165.0,
            n_users: 6040,
            n_items: 3706,
            seed: 0,
        }
    }
}

impl LdaParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.n_items < 2 {
            return Err(Error::invalid("the simulated catalog needs at least 2 items"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        self.alpha.validate(self.k, "alpha")?;
        self.beta.validate(self.n_items, "beta")
    }
}

/// Draws one Dirichlet vector by normalizing independent Gamma draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(conc: &Concentration, len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if len == 1 {
        return Ok(vec![1.0]);
    }
    let gammas = (0..len)
        .map(|i| Gamma::new(conc.get(i), 1.0).map_err(|e| Error::invalid(format!("gamma shape: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    // tiny concentrations can underflow every component; redraw in that case
    for _ in 0..64 {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|x| x / total).collect());
        }
    }
    Err(Error::Numerical("Dirichlet draw underflowed repeatedly".into()))
}

/// Complete implicit preferences plus the latent state that generated them.
#[derive(Debug, Clone)]
pub struct TruePreferences {
    users: Arc<IdIndex>,
    items: Arc<IdIndex>,
    liked: Vec<Vec<u32>>,
    /// Pre-deduplication draw count `n_u` per user.
    pub drawn: Vec<usize>,
    pub k: usize,
    /// `n_users × k`, row-major.
    pub theta: Vec<f64>,
    /// `k × n_items`, row-major.
    pub phi: Vec<f64>,
}

impl TruePreferences {
    pub fn users(&self) -> &Arc<IdIndex> {
        &self.users
    }

    pub fn items(&self) -> &Arc<IdIndex> {
        &self.items
    }

    /// Liked items of dense user `u`, ascending.
    pub fn liked(&self, user: u32) -> &[u32] {
        &self.liked[user as usize]
    }

    pub fn n_pairs(&self) -> usize {
        self.liked.iter().map(Vec::len).sum()
    }

    /// Number of users who like each item.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.items.len()];
        for list in &self.liked {
            for &i in list {
                counts[i as usize] += 1;
            }
        }
        counts
    }

    pub fn to_interactions(&self) -> InteractionSet {
        let records = self
            .liked
            .iter()
            .enumerate()
            .flat_map(|(u, list)| {
                list.iter().map(move |&i| Interaction {
                    user: u as u32,
                    item: i,
                    value: None,
                    timestamp: None,
                })
            })
            .collect();
        InteractionSet::new(self.users.clone(), self.items.clone(), records).expect("indices are in range")
    }
}

/// One user's feature mixture and raw (not de-duplicated) item draws.
pub(crate) fn draw_user(
    params: &LdaParams,
    item_samplers: &[WeightedAliasIndex<f64>],
    poisson: &Poisson<f64>,
    user: usize,
) -> Result<(Vec<f64>, Vec<u32>)> {
    let mut r = rng::stream("lda.user", params.seed, &[user.into()]);
    let theta = sample_dirichlet(&params.alpha, params.k, &mut r)?;
    let n_u = poisson.sample(&mut r) as usize;
    let features = WeightedIndex::new(&theta).map_err(|e| Error::Numerical(format!("theta: {e}")))?;
    let items = (0..n_u)
        .map(|_| {
            let f = features.sample(&mut r);
            item_samplers[f].sample(&mut r) as u32
        })
        .collect();
    Ok((theta, items))
}

pub fn generate_preferences(params: &LdaParams) -> Result<TruePreferences> {
    generate_preferences_with(params, Execution::Parallel)
}

pub fn generate_preferences_with(params: &LdaParams, exec: Execution) -> Result<TruePreferences> {
    params.validate()?;
    let k = params.k;
    let phi_rows = par::map_range(exec, k, |f| {
        sample_dirichlet(&params.beta, params.n_items, &mut rng::stream("lda.phi", params.seed, &[f.into()]))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let item_samplers = phi_rows
        .iter()
        .map(|row| WeightedAliasIndex::new(row.clone()).map_err(|e| Error::Numerical(format!("alias table: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let poisson = Poisson::new(params.lambda).map_err(|e| Error::invalid(format!("lambda: {e}")))?;

    let users = par::map_range(exec, params.n_users, |u| -> Result<(Vec<f64>, usize, Vec<u32>)> {
        let (theta, mut items) = draw_user(params, &item_samplers, &poisson, u)?;
        let n_u = items.len();
        items.sort_unstable();
        items.dedup();
        Ok((theta, n_u, items))
    });

    let mut theta = Vec::with_capacity(params.n_users * k);
    let mut drawn = Vec::with_capacity(params.n_users);
    let mut liked = Vec::with_capacity(params.n_users);
    for row in users {
        let (t, n, items) = row?;
        theta.extend(t);
        drawn.push(n);
        liked.push(items);
    }
    Ok(TruePreferences {
        users: Arc::new(IdIndex::sequential(params.n_users)),
        items: Arc::new(IdIndex::sequential(params.n_items)),
        liked,
        drawn,
        k,
        theta,
        phi: phi_rows.concat(),
    })
}

/// Observes `round(fraction · |I_u|)` of each user's liked items, drawn
/// without replacement with weight `(global like count)^gamma`.
pub fn observe_popularity(truth: &TruePreferences, observe_fraction: f64, gamma: f64, seed: u64) -> Result<InteractionSet> {
    if !(observe_fraction > 0.0 && observe_fraction <= 1.0) {
        return Err(Error::invalid("observe fraction must be in (0, 1]"));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::invalid("gamma must be non-negative"));
    }
    let weights: Vec<f64> = truth
        .item_counts()
        .into_iter()
        .map(|c| (c.max(1) as f64).powf(gamma))
        .collect();
    let mut records = Vec::new();
    for (u, list) in truth.liked.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let m = (observe_fraction * list.len() as f64).round() as usize;
        let w: Vec<f64> = list.iter().map(|&i| weights[i as usize]).collect();
        let mut r = rng::stream("observe", seed, &[truth.users.id(u as u32).into()]);
        let mut picked: Vec<u32> = weighted_sample(&mut r, &w, m).into_iter().map(|p| list[p]).collect();
        picked.sort_unstable();
        records.extend(picked.into_iter().map(|i| Interaction {
            user: u as u32,
            item: i,
            value: None,
            timestamp: None,
        }));
    }
    InteractionSet::new(truth.users.clone(), truth.items.clone(), records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub statistic: &'static str,
    pub generated: f64,
    pub target: f64,
    pub delta: f64,
}

/// Side-by-side comparison of generated data with a target dataset summary.
pub fn fit_diagnostics(observed: &InteractionSet, target: &DatasetSummary) -> Result<Vec<DiagnosticRow>> {
    let got = summarize(observed)?;
    let activity = |s: &DatasetSummary| s.n_ratings as f64 / s.n_users as f64;
    let row = |statistic, generated: f64, target: f64| DiagnosticRow {
        statistic,
        generated,
        target,
        delta: generated - target,
    };
    Ok(vec![
        row("gini", got.gini, target.gini),
        row("density", got.density, target.density),
        row("mean_user_activity", activity(&got), activity(target)),
    ])
}

/// Writes `user,item` pairs with a header.
pub fn write_implicit_csv(data: &InteractionSet, path: &Path) -> Result<()> {
    let mut out = String::from("user,item\n");
    for r in data.records() {
        out.push_str(data.users().id(r.user));
        out.push(',');
        out.push_str(data.items().id(r.item));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const LATENT_MAGIC: &[u8; 8] = b"DLLATENT";
const LATENT_VERSION: u32 = 1;

/// Latent state sidecar: magic, version, `k`, `n_users`, `n_items` (u64),
/// then θ and φ as little-endian f64, row-major.
pub fn write_latent(truth: &TruePreferences, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(36 + 8 * (truth.theta.len() + truth.phi.len()));
    buf.extend_from_slice(LATENT_MAGIC);
    buf.extend_from_slice(&LATENT_VERSION.to_le_bytes());
    for n in [truth.k, truth.users.len(), truth.items.len()] {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in truth.theta.iter().chain(&truth.phi) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub k: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

pub fn read_latent(path: &Path) -> Result<LatentState> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        path: path.to_owned(),
        line: 0,
        message: m.to_owned(),
    };
    if bytes.len() < 36 || &bytes[..8] != LATENT_MAGIC {
        return Err(bad("not a latent-state file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != LATENT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    let (k, n_users, n_items) = (word(12), word(20), word(28));
    let floats: Vec<f64> = bytes[36..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if floats.len() != k * (n_users + n_items) || (bytes.len() - 36) % 8 != 0 {
        return Err(bad("payload length does not match header"));
    }
    let (theta, phi) = floats.split_at(n_users * k);
    Ok(LatentState {
        k,
        n_users,
        n_items,
        theta: theta.to_vec(),
        phi: phi.to_vec(),
    })
}
