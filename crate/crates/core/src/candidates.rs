//! Per-user candidate sets: the user's test items plus decoys.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sampling::{uniform_sample, weighted_sample};
use crate::splitting::Fold;

/// Pseudo-count given to items with no training interactions under
/// popularity weighting, so they stay sampleable.
pub const ZERO_COUNT_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Full,
    Uniform,
    PopularityWeighted,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Full => "full",
            StrategyKind::Uniform => "uniform",
            StrategyKind::PopularityWeighted => "popularity-weighted",
        }
    }

    pub fn is_sampled(self) -> bool {
        self != StrategyKind::Full
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(StrategyKind::Full),
            "uniform" => Ok(StrategyKind::Uniform),
            "popularity-weighted" | "pop-weighted" => Ok(StrategyKind::PopularityWeighted),
            other => Err(Error::invalid(format!("unknown candidate strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateStrategy {
    pub kind: StrategyKind,
    pub n_decoys: Option<usize>,
}

impl CandidateStrategy {
    pub fn full() -> Self {
        CandidateStrategy {
            kind: StrategyKind::Full,
            n_decoys: None,
        }
    }

    pub fn sampled(kind: StrategyKind, n_decoys: usize) -> Result<Self> {
        if !kind.is_sampled() {
            return Err(Error::invalid("the full strategy takes no decoy size"));
        }
        Ok(CandidateStrategy {
            kind,
            n_decoys: Some(n_decoys),
        })
    }

    /// Decoy size as written to CSV (empty for the full strategy).
    pub fn n_decoys_label(&self) -> String {
        self.n_decoys.map(|n| n.to_string()).unwrap_or_default()
    }

    /// Stable label, e.g. `uniform-100` or `full`.
    pub fn label(&self) -> String {
        match self.n_decoys {
            Some(n) => format!("{}-{}", self.kind, n),
            None => self.kind.to_string(),
        }
    }
}

/// `C_u = test_items ∪ decoys`, both sorted ascending and disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub user: u32,
    pub test_items: Vec<u32>,
    pub decoys: Vec<u32>,
    /// Requested decoy count for sampled strategies.
    pub requested_decoys: Option<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.test_items.len() + self.decoys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All candidates, ascending.
    pub fn items(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.test_items.iter().chain(&self.decoys).copied().collect();
        all.sort_unstable();
        all
    }

    /// True when fewer decoys were available than requested.
    pub fn clamped(&self) -> bool {
        self.requested_decoys.is_some_and(|n| n > self.decoys.len())
    }
}

/// Builds candidate sets for the test users of one fold.
///
/// Sampled decoys come from `I \ I_u^train \ I_u^test`, drawn from a stream
/// keyed by `(strategy kind, seed, fold id, user id)`, so results do not
/// depend on the order users are visited in.
#[derive(Debug)]
pub struct CandidateBuilder<'a> {
    fold: &'a Fold,
    seed: u64,
    weights: Vec<f64>,
}

impl<'a> CandidateBuilder<'a> {
    pub fn new(fold: &'a Fold, seed: u64) -> Self {
        let weights = fold
            .train
            .item_counts()
            .into_iter()
            .map(|c| if c == 0 { ZERO_COUNT_WEIGHT } else { c as f64 })
            .collect();
        CandidateBuilder { fold, seed, weights }
    }

    fn check_user(&self, user: u32) -> Result<()> {
        if self.fold.test_users.contains(&user) {
            Ok(())
        } else {
            let id = if (user as usize) < self.fold.train.n_users() {
                self.fold.train.users().id(user).to_owned()
            } else {
                user.to_string()
            };
            Err(Error::invalid(format!("user {id} is not a test user of fold {}", self.fold.fold_id)))
        }
    }

    /// Test items and the decoy pool, both ascending.
    fn test_and_pool(&self, user: u32) -> (Vec<u32>, Vec<u32>) {
        let n_items = self.fold.train.n_items();
        let mut excluded = vec![false; n_items];
        for i in self.fold.train.user_items(user) {
            excluded[i as usize] = true;
        }
        let test = self.fold.test_items(user);
        for &i in &test {
            excluded[i as usize] = true;
        }
        let pool = (0..n_items as u32).filter(|&i| !excluded[i as usize]).collect();
        (test, pool)
    }

    fn stream(&self, kind: StrategyKind, user: u32) -> rng::StreamRng {
        let label = match kind {
            StrategyKind::Uniform => "candidates.uniform",
            _ => "candidates.popularity-weighted",
        };
        rng::stream(
            label,
            self.seed,
            &[self.fold.fold_id.into(), self.fold.train.users().id(user).into()],
        )
    }

    pub fn full(&self, user: u32) -> Result<CandidateSet> {
        self.check_user(user)?;
        let (test_items, decoys) = self.test_and_pool(user);
        Ok(CandidateSet {
            user,
            test_items,
            decoys,
            requested_decoys: None,
        })
    }

    pub fn uniform(&self, user: u32, n_decoys: usize) -> Result<CandidateSet> {
        self.check_user(user)?;
        let (test_items, pool) = self.test_and_pool(user);
        let picked = uniform_sample(&mut self.stream(StrategyKind::Uniform, user), pool.len(), n_decoys);
        let mut decoys: Vec<u32> = picked.into_iter().map(|p| pool[p]).collect();
        decoys.sort_unstable();
        Ok(CandidateSet {
            user,
            test_items,
            decoys,
            requested_decoys: Some(n_decoys),
        })
    }

    pub fn popularity_weighted(&self, user: u32, n_decoys: usize) -> Result<CandidateSet> {
        self.check_user(user)?;
        let (test_items, pool) = self.test_and_pool(user);
        let weights: Vec<f64> = pool.iter().map(|&i| self.weights[i as usize]).collect();
        let picked = weighted_sample(
            &mut self.stream(StrategyKind::PopularityWeighted, user),
            &weights,
            n_decoys,
        );
        let mut decoys: Vec<u32> = picked.into_iter().map(|p| pool[p]).collect();
        decoys.sort_unstable();
        Ok(CandidateSet {
            user,
            test_items,
            decoys,
            requested_decoys: Some(n_decoys),
        })
    }

    pub fn build(&self, user: u32, strategy: &CandidateStrategy) -> Result<CandidateSet> {
        match (strategy.kind, strategy.n_decoys) {
            (StrategyKind::Full, _) => self.full(user),
            (StrategyKind::Uniform, Some(n)) => self.uniform(user, n),
            (StrategyKind::PopularityWeighted, Some(n)) => self.popularity_weighted(user, n),
            (kind, None) => Err(Error::invalid(format!("{kind} strategy needs a decoy size"))),
        }
    }
}

pub fn build_full(user: u32, fold: &Fold) -> Result<CandidateSet> {
    CandidateBuilder::new(fold, 0).full(user)
}

pub fn build_uniform(user: u32, fold: &Fold, n_decoys: usize, seed: u64) -> Result<CandidateSet> {
    CandidateBuilder::new(fold, seed).uniform(user, n_decoys)
}

pub fn build_popularity_weighted(user: u32, fold: &Fold, n_decoys: usize, seed: u64) -> Result<CandidateSet> {
    CandidateBuilder::new(fold, seed).popularity_weighted(user, n_decoys)
}

/// Cross product of the sampled kinds with `sizes`, plus one full strategy
/// when `Full` is among `kinds`.
pub fn sweep_sizes(kinds: &[StrategyKind], sizes: &[usize]) -> Result<Vec<CandidateStrategy>> {
    let mut out = Vec::new();
    if kinds.contains(&StrategyKind::Full) {
        out.push(CandidateStrategy::full());
    }
    let mut sampled: Vec<StrategyKind> = kinds.iter().copied().filter(|k| k.is_sampled()).collect();
    sampled.dedup();
    if !sampled.is_empty() && sizes.is_empty() {
        return Err(Error::invalid("sampled strategies need at least one decoy size"));
    }
    for kind in sampled {
        for &n in sizes {
            out.push(CandidateStrategy::sampled(kind, n)?);
        }
    }
    Ok(out)
}

pub const CANDIDATE_CSV_HEADER: &str = "fold,user,item,role";

/// Audit dump of candidate sets.
pub fn write_candidates<W: Write>(out: &mut W, fold: &Fold, sets: &[CandidateSet]) -> std::io::Result<()> {
    writeln!(out, "{CANDIDATE_CSV_HEADER}")?;
    let users = fold.train.users();
    let items = fold.train.items();
    for set in sets {
        for (role, list) in [("test", &set.test_items), ("decoy", &set.decoys)] {
            for &i in list {
                writeln!(out, "{},{},{},{}", fold.fold_id, users.id(set.user), items.id(i), role)?;
            }
        }
    }
    Ok(())
}
