use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateBuilder, CandidateStrategy, StrategyKind};
use crate::corpus::item_popularity;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, ItemSet, Metric};
use crate::par::{self, Execution};
use crate::recommend::{train, Mode, RecommenderKind, RecommenderSpec};
use crate::rng;
use crate::simulate::{generate_preferences_with, observe_popularity, LdaParams, TruePreferences};
use crate::splitting::{holdout_users, Fold};

use super::{fmt_opt, split_comments, write_file, RunHeader};

pub const BIAS_TRIALS_HEADER: &str = "trial,algo,strategy,metric,m_obs,m_truth,bias";
pub const BIAS_REPORT_HEADER: &str = "algo,strategy,metric,mean_bias,std_err,n_trials,n_failed,frac_negative";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasConfig {
    pub lda: LdaParams,
    pub observe_fraction: f64,
    pub gamma: f64,
    pub test_fraction: f64,
    pub min_ratings: usize,
    pub algorithms: Vec<RecommenderSpec>,
    pub strategies: Vec<StrategyKind>,
    pub n_decoys: usize,
    pub depth: usize,
    pub cutoff: usize,
    pub metrics: Vec<Metric>,
    pub trials: usize,
    /// Score M_truth on each strategy's own list instead of the full-candidate list.
    pub truth_on_sampled: bool,
    pub seed: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            lda: LdaParams::default(),
            observe_fraction: 0.2,
            gamma: 1.0,
            test_fraction: 0.2,
            min_ratings: 5,
            algorithms: default_algorithms(),
            strategies: vec![StrategyKind::Full, StrategyKind::Uniform, StrategyKind::PopularityWeighted],
            n_decoys: 1000,
            depth: 50,
            cutoff: 50,
            metrics: vec![Metric::Ndcg, Metric::RecipRank],
            trials: 500,
            truth_on_sampled: false,
            seed: 0,
        }
    }
}

fn default_algorithms() -> Vec<RecommenderSpec> {
    vec![
        RecommenderSpec::new(RecommenderKind::ImplicitMf),
        RecommenderSpec::new(RecommenderKind::ItemKnn).with_mode(Mode::Implicit),
        RecommenderSpec::new(RecommenderKind::Popular),
        RecommenderSpec::new(RecommenderKind::Oracle),
        RecommenderSpec::new(RecommenderKind::Random),
    ]
}

impl BiasConfig {
    /// Small preset used for quick desk runs and CI.
    pub fn desk() -> Self {
        BiasConfig {
            lda: LdaParams {
                n_users: 2000,
                n_items: 1500,
                lambda: 60.0,
                ..LdaParams::default()
            },
            trials: 20,
            ..BiasConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lda.validate().map_err(|e| Error::Config(format!("simulation: {e}")))?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.algorithms.is_empty() || self.strategies.is_empty() || self.metrics.is_empty() {
            return Err(Error::Config("algorithms, strategies and metrics must be non-empty".into()));
        }
        let mut names = HashSet::new();
        for spec in &self.algorithms {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            if !names.insert(spec.name()) {
                return Err(Error::Config(format!("duplicate algorithm name {:?}", spec.name())));
            }
        }
        if self.depth == 0 || self.cutoff == 0 {
            return Err(Error::Config("depth and cutoff must be at least 1".into()));
        }
        if self.strategies.iter().any(|k| k.is_sampled()) && self.n_decoys == 0 {
            return Err(Error::Config("n_decoys must be at least 1".into()));
        }
        Ok(())
    }

    fn strategy_list(&self) -> Result<Vec<CandidateStrategy>> {
        let mut out = Vec::new();
        for &k in &self.strategies {
            let s = if k.is_sampled() {
                CandidateStrategy::sampled(k, self.n_decoys)?
            } else {
                CandidateStrategy::full()
            };
            if !out.contains(&s) {
                out.push(s);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub trial: usize,
    pub algo: String,
    pub strategy: String,
    pub metric: Metric,
    pub m_obs: f64,
    pub m_truth: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasTrialResult {
    pub trial: usize,
    pub rows: Vec<BiasRow>,
    /// Test users that no model could score.
    pub dropped_users: usize,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasStudy {
    pub trials: Vec<BiasTrialResult>,
    pub failures: Vec<TrialFailure>,
}

impl BiasStudy {
    pub fn rows(&self) -> impl Iterator<Item = &BiasRow> {
        self.trials.iter().flat_map(|t| &t.rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReportRow {
    pub algo: String,
    pub strategy: String,
    pub metric: Metric,
    pub mean_bias: f64,
    /// Absent with a single trial.
    pub std_err: Option<f64>,
    pub n_trials: usize,
    pub n_failed: usize,
    pub frac_negative: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BiasReport {
    pub rows: Vec<BiasReportRow>,
}

impl BiasReport {
    pub fn get(&self, algo: &str, strategy: &str, metric: Metric) -> Option<&BiasReportRow> {
        self.rows
            .iter()
            .find(|r| r.algo == algo && r.strategy == strategy && r.metric == metric)
    }
}

fn truth_relevant(truth: &TruePreferences, fold: &Fold, user: u32) -> ItemSet {
    let users = fold.train.users();
    let items = fold.train.items();
    let Some(tu) = truth.users().get(users.id(user)) else {
        return ItemSet::new();
    };
    truth
        .liked(tu)
        .iter()
        .filter_map(|&ti| items.get(truth.items().id(ti)))
        .filter(|&i| !fold.train.contains(user, i))
        .collect()
}

/// Accumulates per-user metric sums for one (algorithm, strategy, metric) cell.
#[derive(Default, Clone, Copy)]
struct Sums {
    obs: f64,
    truth: f64,
}

/// One repetition: generate, observe, split, train, recommend, and compare
/// observed metrics against the complete preferences.
pub fn run_bias_trial(cfg: &BiasConfig, trial: usize, exec: Execution) -> Result<BiasTrialResult> {
    let derive = |what: &str| rng::derive_seed("bias.trial", cfg.seed, &[trial.into(), what.into()]);
    let lda = LdaParams {
        seed: derive("lda"),
        ..cfg.lda.clone()
    };
    let truth = generate_preferences_with(&lda, exec)?;
    let observed = observe_popularity(&truth, cfg.observe_fraction, cfg.gamma, derive("observe"))?;
    let fold = holdout_users(&observed, cfg.test_fraction, cfg.min_ratings, derive("split"))?;
    let builder = CandidateBuilder::new(&fold, derive("candidates"));
    let pop_ranks = item_popularity(&fold.train).ranks;
    let strategies = cfg.strategy_list()?;
    let users: Vec<u32> = fold.test_users.iter().copied().collect();

    let models = cfg
        .algorithms
        .iter()
        .map(|spec| {
            let mut spec = spec.clone();
            spec.seed = rng::derive_seed("bias.model", derive("model"), &[spec.name().as_str().into(), spec.seed.into()]);
            train(&spec, &fold.train, Some(&truth))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_cells = models.len() * strategies.len() * cfg.metrics.len();
    let cell = |a: usize, s: usize, m: usize| (a * strategies.len() + s) * cfg.metrics.len() + m;

    // Per user: `Some(values)` indexed by cell, or `None` when dropped.
    let per_user = par::map(exec, &users, |&u| -> Result<Option<Vec<Sums>>> {
        let relevant_obs: ItemSet = fold.test_items(u).into_iter().collect();
        let relevant_truth = truth_relevant(&truth, &fold, u);
        let sets = strategies
            .iter()
            .map(|s| builder.build(u, s))
            .collect::<Result<Vec<_>>>()?;
        let full = builder.full(u)?;
        let mut out = vec![Sums::default(); n_cells];
        for (a, model) in models.iter().enumerate() {
            let full_list = match model.recommend_top_n(u, &full, cfg.depth) {
                Ok(l) => l,
                Err(Error::UnknownUser(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            for (s, cands) in sets.iter().enumerate() {
                let list = if cands.decoys == full.decoys {
                    full_list.clone()
                } else {
                    model.recommend_top_n(u, cands, cfg.depth)?
                };
                let truth_list = if cfg.truth_on_sampled { &list } else { &full_list };
                let truth_rel: ItemSet = if cfg.truth_on_sampled {
                    let in_set: HashSet<u32> = cands.items().into_iter().collect();
                    relevant_truth.iter().copied().filter(|i| in_set.contains(i)).collect()
                } else {
                    relevant_truth.clone()
                };
                for (m, &metric) in cfg.metrics.iter().enumerate() {
                    let slot = &mut out[cell(a, s, m)];
                    slot.obs = evaluate(metric, &list.items, &relevant_obs, cfg.cutoff, &pop_ranks)?;
                    slot.truth = evaluate(metric, &truth_list.items, &truth_rel, cfg.cutoff, &pop_ranks)?;
                }
            }
        }
        Ok(Some(out))
    });

    let mut totals = vec![Sums::default(); n_cells];
    let mut n_users = 0usize;
    let mut dropped = 0usize;
    for r in per_user {
        match r? {
            Some(vals) => {
                n_users += 1;
                for (t, v) in totals.iter_mut().zip(vals) {
                    t.obs += v.obs;
                    t.truth += v.truth;
                }
            }
            None => dropped += 1,
        }
    }
    if n_users == 0 {
        return Err(Error::invalid(format!("trial {trial}: no evaluable test users")));
    }
    if dropped > 0 {
        log::warn!("trial {trial}: {dropped} test users dropped");
    }
    let mut rows = Vec::with_capacity(n_cells);
    for (a, spec) in cfg.algorithms.iter().enumerate() {
        for (s, strategy) in strategies.iter().enumerate() {
            for (m, &metric) in cfg.metrics.iter().enumerate() {
                let t = totals[cell(a, s, m)];
                let m_obs = t.obs / n_users as f64;
                let m_truth = t.truth / n_users as f64;
                rows.push(BiasRow {
                    trial,
                    algo: spec.name(),
                    strategy: strategy.label(),
                    metric,
                    m_obs,
                    m_truth,
                    bias: m_obs - m_truth,
                });
            }
        }
    }
    Ok(BiasTrialResult {
        trial,
        rows,
        dropped_users: dropped,
        n_users,
    })
}

/// Runs every trial; failed trials are recorded and the rest continue.
pub fn run_bias_study(cfg: &BiasConfig, exec: Execution) -> Result<BiasStudy> {
    cfg.validate()?;
    let results = par::map_range(exec, cfg.trials, |t| {
        let r = run_bias_trial(cfg, t, exec);
        match &r {
            Ok(_) => log::info!("trial {t} done"),
            Err(e) => log::error!("trial {t} failed: {e}"),
        }
        r
    });
    let mut study = BiasStudy {
        trials: Vec::new(),
        failures: Vec::new(),
    };
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) => study.trials.push(res),
            Err(e) => study.failures.push(TrialFailure {
                trial: t,
                message: e.to_string(),
            }),
        }
    }
    Ok(study)
}

/// Mean, standard error and sign summary per (algorithm, strategy, metric),
/// in first-appearance order.
pub fn aggregate_bias<'a>(rows: impl IntoIterator<Item = &'a BiasRow>, n_failed: usize) -> Result<BiasReport> {
    let mut order: Vec<(String, String, Metric)> = Vec::new();
    let mut groups: BTreeMap<(String, String, Metric), Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        let key = (r.algo.clone(), r.strategy.clone(), r.metric);
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        entry.push((r.trial, r.bias));
    }
    if order.is_empty() {
        return Err(Error::Empty("no completed trials to aggregate".into()));
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let mut vals = groups.remove(&key).expect("grouped");
            // trial order makes the floating-point sum independent of input order
            vals.sort_by_key(|(t, _)| *t);
            let n = vals.len();
            let mean = vals.iter().map(|(_, b)| b).sum::<f64>() / n as f64;
            let std_err = (n > 1).then(|| {
                let var = vals.iter().map(|(_, b)| (b - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            });
            let negative = vals.iter().filter(|(_, b)| *b < 0.0).count();
            BiasReportRow {
                algo: key.0,
                strategy: key.1,
                metric: key.2,
                mean_bias: mean,
                std_err,
                n_trials: n,
                n_failed,
                frac_negative: negative as f64 / n as f64,
            }
        })
        .collect();
    Ok(BiasReport { rows })
}

fn failure_note(failures: &[TrialFailure]) -> String {
    let ids: Vec<String> = failures.iter().map(|f| f.trial.to_string()).collect();
    ids.join(" ")
}

pub fn write_bias_trials(study: &BiasStudy, header: &RunHeader, path: &Path) -> Result<()> {
    let mut out = header.render();
    out.push_str(&format!("# failed_trials: {}\n", failure_note(&study.failures)));
    out.push_str(BIAS_TRIALS_HEADER);
    out.push('\n');
    for r in study.rows() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.trial, r.algo, r.strategy, r.metric, r.m_obs, r.m_truth, r.bias
        ));
    }
    write_file(path, &out)
}

pub fn write_bias_report(report: &BiasReport, header: &RunHeader, path: &Path) -> Result<()> {
    let mut out = header.render();
    out.push_str(BIAS_REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.algo,
            r.strategy,
            r.metric,
            r.mean_bias,
            fmt_opt(r.std_err),
            r.n_trials,
            r.n_failed,
            r.frac_negative
        ));
    }
    write_file(path, &out)
}

/// Reads `bias_trials.csv` back: the rows, the number of failed trials, and
/// the header it was written with.
pub fn read_bias_trials(path: &Path) -> Result<(Vec<BiasRow>, usize, RunHeader)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (meta, body) = split_comments(&text);
    let lookup = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let seed = lookup("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::invalid(format!("{}: missing seed header", path.display())))?;
    let header = RunHeader {
        seed,
        config_json: lookup("config").unwrap_or("{}").to_owned(),
    };
    let n_failed = lookup("failed_trials").map_or(0, |v| v.split_whitespace().count());
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + meta.len() as u64;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m.to_owned(),
        };
        if rec.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad("invalid number"));
        rows.push(BiasRow {
            trial: rec[0].parse().map_err(|_| bad("invalid trial id"))?,
            algo: rec[1].to_owned(),
            strategy: rec[2].to_owned(),
            metric: rec[3].parse()?,
            m_obs: num(4)?,
            m_truth: num(5)?,
            bias: num(6)?,
        });
    }
    Ok((rows, n_failed, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize, bias: f64) -> BiasRow {
        BiasRow {
            trial,
            algo: "popular".into(),
            strategy: "full".into(),
            metric: Metric::Ndcg,
            m_obs: bias,
            m_truth: 0.0,
            bias,
        }
    }

    #[test]
    fn two_trial_aggregate() {
        let rows = [row(0, -0.1), row(1, -0.3)];
        let rep = aggregate_bias(&rows, 0).unwrap();
        let r = &rep.rows[0];
        assert!((r.mean_bias + 0.2).abs() < 1e-12);
        assert!((r.std_err.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(r.frac_negative, 1.0);
    }

    #[test]
    fn single_trial_has_no_std_err() {
        let rep = aggregate_bias(&[row(0, 0.2)], 3).unwrap();
        assert_eq!(rep.rows[0].std_err, None);
        assert_eq!(rep.rows[0].n_failed, 3);
        assert_eq!(rep.rows[0].frac_negative, 0.0);
    }

    #[test]
    fn aggregate_ignores_input_order() {
        let a = [row(0, 0.1), row(1, -0.7), row(2, 0.33)];
        let b = [a[2].clone(), a[0].clone(), a[1].clone()];
        assert_eq!(aggregate_bias(&a, 0).unwrap(), aggregate_bias(&b, 0).unwrap());
    }

    #[test]
    fn bias_is_difference() {
        let cfg = tiny();
        let res = run_bias_trial(&cfg, 0, Execution::Sequential).unwrap();
        for r in &res.rows {
            assert_eq!(r.bias, r.m_obs - r.m_truth);
        }
    }

    fn tiny() -> BiasConfig {
        BiasConfig {
            lda: LdaParams {
                k: 5,
                n_users: 120,
                n_items: 90,
                lambda: 40.0,
                ..LdaParams::default()
            },
            observe_fraction: 0.5,
            min_ratings: 3,
            algorithms: vec![
                RecommenderSpec::new(RecommenderKind::ImplicitMf)
                    .with_param("features", 4.0)
                    .with_param("iterations", 3.0),
                RecommenderSpec::new(RecommenderKind::Popular),
                RecommenderSpec::new(RecommenderKind::Oracle),
            ],
            n_decoys: 30,
            depth: 10,
            cutoff: 10,
            trials: 3,
            seed: 9,
            ..BiasConfig::default()
        }
    }

    #[test]
    fn trials_round_trip_through_csv() {
        let cfg = tiny();
        let study = run_bias_study(&cfg, Execution::Sequential).unwrap();
        let header = RunHeader::new(cfg.seed, &cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("decoylab-bias-{}", std::process::id()));
        let path = dir.join("bias_trials.csv");
        write_bias_trials(&study, &header, &path).unwrap();
        let (rows, failed, back) = read_bias_trials(&path).unwrap();
        assert_eq!(failed, 0);
        assert_eq!(back, header);
        let orig: Vec<BiasRow> = study.rows().cloned().collect();
        assert_eq!(rows, orig);
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn schedule_does_not_change_results() {
        let cfg = tiny();
        let a = run_bias_study(&cfg, Execution::Sequential).unwrap();
        let b = run_bias_study(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_truth_is_perfect_on_full_candidates() {
        let cfg = tiny();
        let res = run_bias_trial(&cfg, 1, Execution::Sequential).unwrap();
        let r = res
            .rows
            .iter()
            .find(|r| r.algo == "oracle" && r.strategy == "full" && r.metric == Metric::Ndcg)
            .unwrap();
        assert!((r.m_truth - 1.0).abs() < 1e-12, "{}", r.m_truth);
        assert!(r.bias <= 0.0);
    }
}
