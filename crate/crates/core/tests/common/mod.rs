//! Checks shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use decoylab::candidates::{CandidateBuilder, CandidateStrategy, StrategyKind};
use decoylab::corpus::{gini_index, InteractionSet};
use decoylab::metrics::{hit_at, ndcg_at, precision_at, recall_at, reciprocal_rank, ItemSet};
use decoylab::recommend::{AlsParams, ImplicitMf};
use decoylab::rng;
use decoylab::simulate::{generate_preferences, observe_popularity, sample_dirichlet, Concentration, LdaParams};
use decoylab::splitting::{crossfold_users, external_test_split, holdout_count, holdout_users, Fold};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub type Pairs = Vec<(u8, u8)>;

/// Small random implicit datasets: up to 12 users, 16 items.
pub fn pairs() -> impl Strategy<Value = Pairs> {
    prop::collection::vec((0u8..12, 0u8..16), 1..90)
}

pub fn dataset(pairs: &Pairs) -> InteractionSet {
    InteractionSet::from_triples(pairs.iter().map(|(u, i)| (format!("u{u}"), format!("i{i}"), None))).unwrap()
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn check_candidates(pairs: &Pairs, seed: u64, n_decoys: usize) -> Result<(), TestCaseError> {
    let data = dataset(pairs);
    let Ok(fold) = holdout_users(&data, 0.3, 2, seed) else {
        return Ok(());
    };
    let builder = CandidateBuilder::new(&fold, seed);
    for &u in &fold.test_users {
        let train: HashSet<u32> = fold.train_items(u).into_iter().collect();
        let full = builder.full(u).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let full_items: HashSet<u32> = full.items().into_iter().collect();
        ensure(full.len() == data.n_items() - train.len(), || "full set size".into())?;
        for kind in [StrategyKind::Uniform, StrategyKind::PopularityWeighted] {
            let s = CandidateStrategy::sampled(kind, n_decoys).unwrap();
            let set = builder.build(u, &s).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let again = builder.build(u, &s).unwrap();
            ensure(set == again, || "not deterministic".into())?;
            let items = set.items();
            let uniq: HashSet<u32> = items.iter().copied().collect();
            ensure(uniq.len() == items.len(), || "duplicate candidates".into())?;
            ensure(set.test_items == fold.test_items(u), || "test items missing".into())?;
            ensure(items.iter().all(|i| !train.contains(i)), || "train item among candidates".into())?;
            ensure(set.decoys.iter().all(|d| !set.test_items.contains(d)), || "decoy is a test item".into())?;
            ensure(uniq.is_subset(&full_items), || "sampled set not inside full set".into())?;
            let pool = full.decoys.len();
            ensure(set.decoys.len() == n_decoys.min(pool), || {
                format!("{} decoys, expected min({n_decoys}, {pool})", set.decoys.len())
            })?;
        }
    }
    Ok(())
}

pub fn check_split(pairs: &Pairs, seed: u64, n_folds: usize, frac: f64) -> Result<(), TestCaseError> {
    let data = dataset(pairs);
    let Ok(plan) = crossfold_users(&data, n_folds, frac, 2, seed) else {
        return Ok(());
    };
    let eligible: BTreeSet<u32> = data.active_users().filter(|&u| data.user_len(u) >= 2).collect();
    let mut seen = BTreeSet::new();
    for fold in &plan.folds {
        for &u in &fold.test_users {
            ensure(seen.insert(u), || format!("user {u} in two folds"))?;
        }
        ensure(fold.train.len() + fold.test.len() == data.len(), || "train + test != data".into())?;
        for r in fold.test.records() {
            ensure(!fold.train.contains(r.user, r.item), || "pair in train and test".into())?;
            ensure(data.contains(r.user, r.item), || "test pair not in data".into())?;
        }
        for u in 0..data.n_users() as u32 {
            let n = data.user_len(u);
            let expect = if fold.test_users.contains(&u) { holdout_count(n, frac) } else { 0 };
            ensure(fold.test.user_len(u) == expect, || format!("user {u}: holdout size"))?;
        }
    }
    ensure(seen == eligible, || "folds do not cover the eligible users".into())
}

pub fn check_dirichlet(alpha: f64, len: usize, seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng::stream("prop.dirichlet", seed, &[]);
    let v = sample_dirichlet(&Concentration::Symmetric(alpha), len, &mut r).unwrap();
    ensure(v.len() == len, || "length".into())?;
    ensure(v.iter().all(|x| *x >= 0.0 && x.is_finite()), || format!("{v:?}"))?;
    let s: f64 = v.iter().sum();
    ensure((s - 1.0).abs() < 1e-9, || format!("sum {s}"))
}

pub fn check_observation(seed: u64, frac: f64, gamma: f64) -> Result<(), TestCaseError> {
    let params = LdaParams {
        k: 3,
        n_users: 15,
        n_items: 25,
        lambda: 8.0,
        seed,
        ..LdaParams::default()
    };
    let truth = generate_preferences(&params).unwrap();
    let obs = observe_popularity(&truth, frac, gamma, seed ^ 0x5a5a).unwrap();
    for u in 0..15u32 {
        let liked: HashSet<u32> = truth.liked(u).iter().copied().collect();
        let got: Vec<u32> = obs.user_items(u).collect();
        ensure(got.iter().all(|i| liked.contains(i)), || "observed pair not in truth".into())?;
        let want = (frac * liked.len() as f64).round() as usize;
        ensure(got.len() == want, || format!("user {u}: {} observed, want {want}", got.len()))?;
    }
    Ok(())
}

pub fn check_als_monotone(pairs: &Pairs, seed: u64, features: usize) -> Result<(), TestCaseError> {
    let data = dataset(pairs);
    let params = AlsParams {
        features,
        iterations: 4,
        reg: 0.1,
        weight: 10.0,
    };
    let m = ImplicitMf::train(&data, params, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for w in m.objective_trace.windows(2) {
        ensure(w[1] <= w[0] * (1.0 + 1e-9) + 1e-9, || format!("{:?}", m.objective_trace))?;
    }
    Ok(())
}

pub fn check_metric_bounds(list: &[u32], relevant: &ItemSet, k: usize) -> Result<(), TestCaseError> {
    for v in [
        ndcg_at(list, relevant, k),
        precision_at(list, relevant, k),
        recall_at(list, relevant, k),
        reciprocal_rank(&list[..list.len().min(k)], relevant),
    ] {
        ensure((0.0..=1.0 + 1e-12).contains(&v), || format!("metric {v} out of range"))?;
    }
    let h = hit_at(list, relevant, k);
    ensure(h == 0.0 || h == 1.0, || "hit not binary".into())?;
    // moving a relevant item up one place never hurts
    for p in 1..list.len() {
        if relevant.contains(&list[p]) && !relevant.contains(&list[p - 1]) {
            let mut up = list.to_vec();
            up.swap(p, p - 1);
            ensure(ndcg_at(&up, relevant, k) >= ndcg_at(list, relevant, k) - 1e-12, || "nDCG dropped".into())?;
            ensure(reciprocal_rank(&up, relevant) >= reciprocal_rank(list, relevant), || "RR dropped".into())?;
        }
    }
    if !relevant.is_empty() {
        let mut ideal: Vec<u32> = relevant.iter().copied().collect();
        ideal.sort_unstable();
        ensure((ndcg_at(&ideal, relevant, k) - 1.0).abs() < 1e-12, || "ideal nDCG != 1".into())?;
    }
    Ok(())
}

fn list_and_relevant() -> impl Strategy<Value = (Vec<u32>, ItemSet, usize)> {
    (prop::collection::btree_set(0u32..30, 0..15), prop::collection::btree_set(0u32..30, 0..10), 1usize..20)
        .prop_flat_map(|(l, r, k)| {
            let list: Vec<u32> = l.into_iter().collect();
            (Just(list).prop_shuffle(), Just(r.into_iter().collect::<ItemSet>()), Just(k))
        })
}

pub fn check_gini(counts: &[u32]) -> Result<(), TestCaseError> {
    let x: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
    let Ok(g) = gini_index(&x) else {
        return Ok(());
    };
    ensure((0.0..1.0).contains(&g), || format!("gini {g}"))?;
    let mut rev = x.clone();
    rev.reverse();
    let g2 = gini_index(&rev).unwrap();
    ensure((g - g2).abs() < 1e-12, || "gini depends on order".into())
}

/// Name and runner of every property in the invariant suite.
pub type Invariant = (&'static str, fn(u32) -> Result<(), String>);

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

pub fn invariant_suite() -> Vec<Invariant> {
    vec![
        ("candidate sets", |n| {
            report(runner(n).run(&(pairs(), any::<u64>(), 0usize..20), |(p, s, d)| check_candidates(&p, s, d)))
        }),
        ("cross-fold splits", |n| {
            report(
                runner(n).run(&(pairs(), any::<u64>(), 2usize..5, 0.05f64..0.9), |(p, s, f, t)| {
                    check_split(&p, s, f, t)
                }),
            )
        }),
        ("dirichlet normalization", |n| {
            report(runner(n).run(&(0.01f64..5.0, 1usize..60, any::<u64>()), |(a, l, s)| check_dirichlet(a, l, s)))
        }),
        ("observation subset", |n| {
            report(
                runner(n).run(&(any::<u64>(), 0.05f64..=1.0, 0.0f64..3.0), |(s, f, g)| check_observation(s, f, g)),
            )
        }),
        ("als objective monotone", |n| {
            report(runner(n).run(&(pairs(), any::<u64>(), 1usize..4), |(p, s, f)| check_als_monotone(&p, s, f)))
        }),
        ("metric bounds and monotonicity", |n| {
            report(runner(n).run(&list_and_relevant(), |(l, r, k)| check_metric_bounds(&l, &r, k)))
        }),
        ("gini range and order", |n| {
            report(runner(n).run(&prop::collection::vec(0u32..50, 2..40), |c| check_gini(&c)))
        }),
    ]
}

// ---- exhaustive metric oracle ----

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn dcg(list: &[u32], relevant: &ItemSet, k: usize) -> f64 {
    list.iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum()
}

/// Compares every metric against direct definitions over all orderings of
/// every candidate set up to `max_n` items, all relevant subsets, and all
/// cutoffs. IDCG is the maximum DCG over all orderings. Returns
/// `(cases checked, mismatches)`.
/// Absolute tolerance between oracle and library metric values.
pub const METRIC_TOL: f64 = 1e-12;

pub fn metric_oracle(max_n: usize) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    for n in 1..=max_n {
        let items: Vec<u32> = (0..n as u32).collect();
        let perms = permutations(&items);
        for mask in 0u32..(1 << n) {
            let relevant: ItemSet = items.iter().copied().filter(|i| mask & (1 << i) != 0).collect();
            for k in 1..=n + 1 {
                let idcg = perms.iter().map(|p| dcg(p, &relevant, k)).fold(0.0, f64::max);
                for p in &perms {
                    checked += 1;
                    let hits = p.iter().take(k).filter(|i| relevant.contains(i)).count();
                    let first = p.iter().take(k).position(|i| relevant.contains(i));
                    let expect = [
                        ("ndcg", if idcg > 0.0 { dcg(p, &relevant, k) / idcg } else { 0.0 }, ndcg_at(p, &relevant, k)),
                        ("precision", hits as f64 / k as f64, precision_at(p, &relevant, k)),
                        (
                            "recall",
                            if relevant.is_empty() { 0.0 } else { hits as f64 / relevant.len() as f64 },
                            recall_at(p, &relevant, k),
                        ),
                        ("hit", if hits > 0 { 1.0 } else { 0.0 }, hit_at(p, &relevant, k)),
                        (
                            "recip_rank",
                            first.map_or(0.0, |r| 1.0 / (r + 1) as f64),
                            reciprocal_rank(&p[..k.min(p.len())], &relevant),
                        ),
                    ];
                    for (name, want, got) in expect {
                        if (want - got).abs() > METRIC_TOL && bad.len() < 10 {
                            bad.push(format!("{name}: list {p:?} rel {relevant:?} k {k}: want {want}, got {got}"));
                        }
                    }
                }
            }
        }
    }
    (checked, bad)
}

// ---- sampler Monte Carlo ----

/// A fold whose test user `u0` has the decoy pool `pool` with the given
/// training counts (count 0 items exist in the index with no ratings).
pub fn fold_with_pool(counts: &[usize]) -> (Fold, u32) {
    let mut train: Vec<(String, String, Option<f64>)> = Vec::new();
    train.push(("u0".into(), "own".into(), None));
    let mut next_user = 1;
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            train.push((format!("u{next_user}"), format!("d{i}"), None));
            next_user += 1;
        }
    }
    let mut test = vec![("u0".to_string(), "held".to_string(), None)];
    // items with count 0 only enter the index through another user's test row
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            test.push(("zz".into(), format!("d{i}"), None));
        }
    }
    let train = InteractionSet::from_triples(train).unwrap();
    let test = InteractionSet::from_triples(test).unwrap();
    let split = external_test_split(&train, &test).unwrap();
    let u0 = split.fold.train.users().get("u0").unwrap();
    (split.fold, u0)
}

/// Empirical first-decoy frequencies for `n_draws` single-decoy candidate
/// sets, indexed like `counts`.
pub fn decoy_frequencies(counts: &[usize], kind: StrategyKind, n_draws: u64) -> Vec<f64> {
    let (fold, u0) = fold_with_pool(counts);
    let items = fold.train.items().clone();
    let strategy = CandidateStrategy::sampled(kind, 1).unwrap();
    let mut hits = vec![0u64; counts.len()];
    for seed in 0..n_draws {
        let set = CandidateBuilder::new(&fold, seed).build(u0, &strategy).unwrap();
        let id = items.id(set.decoys[0]);
        let pos: usize = id.trim_start_matches('d').parse().unwrap();
        hits[pos] += 1;
    }
    hits.into_iter().map(|h| h as f64 / n_draws as f64).collect()
}

/// Pearson chi-square p-value of observed frequencies against uniform.
pub fn chi_square_uniform_p(freqs: &[f64], n: u64) -> f64 {
    let k = freqs.len() as f64;
    let expected = n as f64 / k;
    let stat: f64 = freqs.iter().map(|f| (f * n as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new(k - 1.0).unwrap();
    1.0 - dist.cdf(stat)
}

/// Largest deviation, in binomial standard deviations, of `freqs` from
/// `probs` over `n` trials.
pub fn max_binomial_z(freqs: &[f64], probs: &[f64], n: u64) -> f64 {
    freqs
        .iter()
        .zip(probs)
        .map(|(f, p)| (f - p).abs() / (p * (1.0 - p) / n as f64).sqrt())
        .fold(0.0, f64::max)
}
