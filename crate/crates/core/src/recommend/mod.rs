//! Recommenders: neighborhood models, implicit ALS, and baselines.

mod als;
mod baseline;
mod knn;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use als::{AlsParams, ImplicitMf};
pub use baseline::{Oracle, Popular, RandomRec};
pub use knn::{ItemKnn, KnnParams, UserKnn};

use crate::candidates::CandidateSet;
use crate::corpus::InteractionSet;
use crate::error::{Error, Result};
use crate::simulate::TruePreferences;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecommenderKind {
    ItemKnn,
    UserKnn,
    ImplicitMf,
    Popular,
    Random,
    Oracle,
}

impl RecommenderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecommenderKind::ItemKnn => "item-knn",
            RecommenderKind::UserKnn => "user-knn",
            RecommenderKind::ImplicitMf => "implicit-mf",
            RecommenderKind::Popular => "popular",
            RecommenderKind::Random => "random",
            RecommenderKind::Oracle => "oracle",
        }
    }

    pub fn is_personalized(self) -> bool {
        matches!(
            self,
            RecommenderKind::ItemKnn | RecommenderKind::UserKnn | RecommenderKind::ImplicitMf
        )
    }

    fn default_mode(self) -> Option<Mode> {
        match self {
            RecommenderKind::ItemKnn | RecommenderKind::UserKnn => Some(Mode::Explicit),
            RecommenderKind::ImplicitMf => Some(Mode::Implicit),
            _ => None,
        }
    }

    fn allowed_modes(self) -> &'static [Mode] {
        match self {
            RecommenderKind::ItemKnn => &[Mode::Explicit, Mode::Implicit],
            RecommenderKind::UserKnn => &[Mode::Explicit],
            RecommenderKind::ImplicitMf => &[Mode::Implicit],
            _ => &[],
        }
    }

    fn param_names(self) -> &'static [&'static str] {
        match self {
            RecommenderKind::ItemKnn | RecommenderKind::UserKnn => &["k", "min_neighbors", "min_sim"],
            RecommenderKind::ImplicitMf => &["features", "iterations", "reg", "weight"],
            _ => &[],
        }
    }
}

impl fmt::Display for RecommenderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecommenderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use RecommenderKind::*;
        [ItemKnn, UserKnn, ImplicitMf, Popular, Random, Oracle]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown recommender {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Explicit,
    Implicit,
}

/// Which recommender to train, with overrides of its default hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommenderSpec {
    pub kind: RecommenderKind,
    /// Output label; defaults to the kind plus any non-default mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl RecommenderSpec {
    pub fn new(kind: RecommenderKind) -> Self {
        RecommenderSpec {
            kind,
            label: None,
            mode: None,
            params: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Some(label.to_owned());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn effective_mode(&self) -> Option<Mode> {
        self.mode.or(self.kind.default_mode())
    }

    /// Output label: the kind, suffixed with the mode when it is not the default.
    pub fn name(&self) -> String {
        if let Some(label) = &self.label {
            return label.clone();
        }
        match self.mode {
            Some(m) if Some(m) != self.kind.default_mode() => {
                format!("{}-{}", self.kind, format!("{m:?}").to_lowercase())
            }
            _ => self.kind.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(label) = &self.label {
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::invalid(format!("label {label:?} must be non-empty [A-Za-z0-9_-]")));
            }
        }
        if let Some(mode) = self.mode {
            if !self.kind.allowed_modes().contains(&mode) {
                return Err(Error::invalid(format!("{} does not support {mode:?} mode", self.kind)));
            }
        }
        let allowed = self.kind.param_names();
        for (key, value) in &self.params {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::invalid(format!("{} has no parameter {key:?}", self.kind)));
            }
            if !value.is_finite() || *value < 0.0 {
                return Err(Error::invalid(format!("{}.{key} must be finite and non-negative", self.kind)));
            }
        }
        Ok(())
    }

    pub(crate) fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }
}

/// A ranked recommendation list; scores are non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: u32,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
enum State {
    ItemKnn(ItemKnn),
    UserKnn(UserKnn),
    ImplicitMf(ImplicitMf),
    Popular(Popular),
    Random(RandomRec),
    Oracle(Oracle),
}

/// A trained recommender. Scoring is pure and thread-safe.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    spec: RecommenderSpec,
    state: State,
    n_users: usize,
    n_items: usize,
    has_history: Vec<bool>,
}

/// Trains `spec` on `train_data`. `truth` is required by the oracle and
/// ignored by everything else.
pub fn train(spec: &RecommenderSpec, train_data: &InteractionSet, truth: Option<&TruePreferences>) -> Result<TrainedModel> {
    spec.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training data has no interactions".into()));
    }
    let implicit = spec.effective_mode() == Some(Mode::Implicit);
    let state = match spec.kind {
        RecommenderKind::ItemKnn => State::ItemKnn(ItemKnn::train(train_data, KnnParams::item_defaults(spec), implicit)?),
        RecommenderKind::UserKnn => State::UserKnn(UserKnn::train(train_data, KnnParams::user_defaults(spec))?),
        RecommenderKind::ImplicitMf => State::ImplicitMf(ImplicitMf::train(train_data, AlsParams::from_spec(spec)?, spec.seed)?),
        RecommenderKind::Popular => State::Popular(Popular::train(train_data)),
        RecommenderKind::Random => State::Random(RandomRec::new(train_data, spec.seed)),
        RecommenderKind::Oracle => {
            let truth = truth.ok_or_else(|| Error::invalid("the oracle needs true preferences"))?;
            State::Oracle(Oracle::train(train_data, truth))
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        state,
        n_users: train_data.n_users(),
        n_items: train_data.n_items(),
        has_history: (0..train_data.n_users() as u32)
            .map(|u| train_data.user_len(u) > 0)
            .collect(),
    })
}

impl TrainedModel {
    pub fn spec(&self) -> &RecommenderSpec {
        &self.spec
    }

    /// Raw scores for `items`; unscorable items get `f64::NEG_INFINITY`.
    pub fn score_items(&self, user: u32, items: &[u32]) -> Result<Vec<f64>> {
        if let Some(&bad) = items.iter().find(|&&i| i as usize >= self.n_items) {
            return Err(Error::UnknownItem(bad.to_string()));
        }
        let known = (user as usize) < self.n_users && self.has_history[user as usize];
        if self.spec.kind.is_personalized() && !known {
            return Err(Error::UnknownUser(user.to_string()));
        }
        Ok(match &self.state {
            State::ItemKnn(m) => m.score(user, items),
            State::UserKnn(m) => m.score(user, items),
            State::ImplicitMf(m) => m.score(user, items),
            State::Popular(m) => m.score(items),
            State::Random(m) => m.score(user, items),
            State::Oracle(m) => m.score(user, items),
        })
    }

    /// Scores every candidate and sorts descending, ties by ascending item.
    pub fn score_candidates(&self, user: u32, candidates: &CandidateSet) -> Result<RankedList> {
        self.recommend_top_n(user, candidates, usize::MAX)
    }

    /// The first `min(n, |candidates|)` entries of [`Self::score_candidates`].
    pub fn recommend_top_n(&self, user: u32, candidates: &CandidateSet, n: usize) -> Result<RankedList> {
        if candidates.is_empty() {
            return Err(Error::Empty("candidate set is empty".into()));
        }
        if n == 0 {
            return Err(Error::invalid("list length must be at least 1"));
        }
        let items = candidates.items();
        let scores = self.score_items(user, &items)?;
        Ok(rank_top(user, items, scores, n))
    }
}

/// Top `n` of `(item, score)` by descending score, then ascending item.
pub(crate) fn rank_top(user: u32, items: Vec<u32>, scores: Vec<f64>, n: usize) -> RankedList {
    let mut pairs: Vec<(u32, f64)> = items.into_iter().zip(scores).collect();
    let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if n < pairs.len() {
        pairs.select_nth_unstable_by(n, order);
        pairs.truncate(n);
    }
    pairs.sort_unstable_by(order);
    let (items, scores) = pairs.into_iter().unzip();
    RankedList { user, items, scores }
}
