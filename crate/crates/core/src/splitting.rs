//! User-partitioned train/test splits.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpus::{IdIndex, Interaction, InteractionSet};
use crate::error::{Error, Result};
use crate::rng;

/// One train/test partition. `train` and `test` share index maps.
#[derive(Debug, Clone)]
pub struct Fold {
    pub fold_id: usize,
    pub train: InteractionSet,
    pub test: InteractionSet,
    pub test_users: BTreeSet<u32>,
}

impl Fold {
    /// The user's held-out items, ascending.
    pub fn test_items(&self, user: u32) -> Vec<u32> {
        self.test.user_items(user).collect()
    }

    pub fn train_items(&self, user: u32) -> Vec<u32> {
        self.train.user_items(user).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitParams {
    pub n_folds: usize,
    pub test_fraction: f64,
    pub min_ratings: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            n_folds: 5,
            test_fraction: 0.2,
            min_ratings: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
    pub n_folds: usize,
    pub test_fraction: f64,
}

/// Number of held-out interactions for a user with `n` interactions:
/// `ceil(fraction · n)`, capped so at least one stays in training.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    // tolerance absorbs products like 0.2 * 15 = 3.0000000000000004
    let k = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n - 1)
}

fn validate(test_fraction: f64, min_ratings: usize) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    if min_ratings < 2 {
        return Err(Error::invalid("min_ratings must be at least 2"));
    }
    Ok(())
}

fn eligible_users(data: &InteractionSet, min_ratings: usize) -> Vec<u32> {
    data.active_users()
        .filter(|&u| data.user_len(u) >= min_ratings)
        .collect()
}

/// Splits `data` for the given test users: each contributes
/// `holdout_count(|I_u|)` uniformly chosen interactions to test.
/// The holdout stream is keyed by `(seed, user id)` only.
fn hold_out(
    data: &InteractionSet,
    fold_id: usize,
    test_users: BTreeSet<u32>,
    test_fraction: f64,
    seed: u64,
) -> Result<Fold> {
    let mut train = Vec::with_capacity(data.len());
    let mut test = Vec::new();
    for u in data.active_users() {
        let recs = data.user_records(u);
        if !test_users.contains(&u) {
            train.extend_from_slice(recs);
            continue;
        }
        let k = holdout_count(recs.len(), test_fraction);
        let mut rng = rng::stream("split.holdout", seed, &[data.users().id(u).into()]);
        let mut chosen = vec![false; recs.len()];
        for i in index::sample(&mut rng, recs.len(), k) {
            chosen[i] = true;
        }
        for (r, held) in recs.iter().zip(chosen) {
            if held {
                test.push(*r);
            } else {
                train.push(*r);
            }
        }
    }
    Ok(Fold {
        fold_id,
        train: data.with_records(train)?,
        test: data.with_records(test)?,
        test_users,
    })
}

/// Partitions users with at least `min_ratings` interactions into `n_folds`
/// disjoint test-user groups and holds out a fraction of each test user's
/// interactions.
pub fn crossfold_users(
    data: &InteractionSet,
    n_folds: usize,
    test_fraction: f64,
    min_ratings: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if n_folds < 2 {
        return Err(Error::invalid("n_folds must be at least 2"));
    }
    validate(test_fraction, min_ratings)?;
    let mut users = eligible_users(data, min_ratings);
    if users.len() < n_folds {
        return Err(Error::invalid(format!(
            "{} eligible users cannot fill {} folds",
            users.len(),
            n_folds
        )));
    }
    users.shuffle(&mut rng::stream("split.users", seed, &[]));
    let mut groups = vec![BTreeSet::new(); n_folds];
    for (pos, u) in users.into_iter().enumerate() {
        groups[pos % n_folds].insert(u);
    }
    let folds = groups
        .into_iter()
        .enumerate()
        .map(|(f, group)| hold_out(data, f, group, test_fraction, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitPlan {
        folds,
        seed,
        n_folds,
        test_fraction,
    })
}

/// Single holdout where every eligible user is a test user.
pub fn holdout_users(data: &InteractionSet, test_fraction: f64, min_ratings: usize, seed: u64) -> Result<Fold> {
    validate(test_fraction, min_ratings)?;
    let users: BTreeSet<u32> = eligible_users(data, min_ratings).into_iter().collect();
    if users.is_empty() {
        return Err(Error::invalid("no user has enough interactions for a holdout"));
    }
    hold_out(data, 0, users, test_fraction, seed)
}

#[derive(Debug, Clone)]
pub struct ExternalSplit {
    pub fold: Fold,
    /// Test users dropped because they have no training interactions.
    pub dropped_users: usize,
}

/// Pairs a training set with an externally supplied test set (e.g. a
/// missing-at-random sample), re-indexing both over the union of their ids.
pub fn external_test_split(train_data: &InteractionSet, test_data: &InteractionSet) -> Result<ExternalSplit> {
    let users = Arc::new(IdIndex::from_ids(
        train_data.users().ids().iter().chain(test_data.users().ids()).cloned(),
    ));
    let items = Arc::new(IdIndex::from_ids(
        train_data.items().ids().iter().chain(test_data.items().ids()).cloned(),
    ));
    let remap = |src: &InteractionSet| -> Vec<Interaction> {
        src.records()
            .iter()
            .map(|r| Interaction {
                user: users.get(src.users().id(r.user)).expect("merged"),
                item: items.get(src.items().id(r.item)).expect("merged"),
                ..*r
            })
            .collect()
    };
    let train = InteractionSet::new(users.clone(), items.clone(), remap(train_data))?;
    let test_all = InteractionSet::new(users.clone(), items.clone(), remap(test_data))?;

    let candidates: BTreeSet<u32> = test_all.active_users().collect();
    let test_users: BTreeSet<u32> = candidates
        .iter()
        .copied()
        .filter(|&u| train.user_len(u) > 0)
        .collect();
    if test_users.is_empty() {
        return Err(Error::invalid("no test user has training interactions"));
    }
    let dropped_users = candidates.len() - test_users.len();
    let kept = test_all
        .records()
        .iter()
        .filter(|r| test_users.contains(&r.user))
        .copied()
        .collect();
    let test = test_all.with_records(kept)?;
    Ok(ExternalSplit {
        fold: Fold {
            fold_id: 0,
            train,
            test,
            test_users,
        },
        dropped_users,
    })
}

pub const FOLD_CSV_HEADER: &str = "fold,user,item,value,part";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanMeta {
    seed: u64,
    n_folds: usize,
    test_fraction: f64,
}

fn fold_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold_{fold}.csv"))
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one `fold_<k>.csv` per fold plus `split_meta.json`.
pub fn write_plan(plan: &SplitPlan, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for fold in &plan.folds {
        let path = fold_path(dir, fold.fold_id);
        let mut out = String::new();
        out.push_str(FOLD_CSV_HEADER);
        out.push('\n');
        for (part, set) in [("train", &fold.train), ("test", &fold.test)] {
            for r in set.records() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fold.fold_id,
                    set.users().id(r.user),
                    set.items().id(r.item),
                    fmt_value(r.value),
                    part
                ));
            }
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    let meta = PlanMeta {
        seed: plan.seed,
        n_folds: plan.n_folds,
        test_fraction: plan.test_fraction,
    };
    let path = dir.join("split_meta.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &meta).map_err(|e| Error::invalid(e.to_string()))?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn read_fold(path: &Path, expected_fold: usize) -> Result<Fold> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: 0,
            message: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: &str| Error::Parse {
            path: path.to_owned(),
            line,
            message: m.to_owned(),
        };
        if row.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        if row[0].parse::<usize>().ok() != Some(expected_fold) {
            return Err(bad("fold column does not match file"));
        }
        let value = if row[3].is_empty() {
            None
        } else {
            Some(row[3].parse::<f64>().map_err(|_| bad("invalid value"))?)
        };
        let is_test = match &row[4] {
            "train" => false,
            "test" => true,
            _ => return Err(bad("part must be train or test")),
        };
        rows.push((row[1].to_owned(), row[2].to_owned(), value, is_test));
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} has no rows", path.display())));
    }
    let users = Arc::new(IdIndex::from_ids(rows.iter().map(|r| r.0.clone())));
    let items = Arc::new(IdIndex::from_ids(rows.iter().map(|r| r.1.clone())));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (u, i, value, is_test) in rows {
        let rec = Interaction {
            user: users.get(&u).expect("indexed"),
            item: items.get(&i).expect("indexed"),
            value,
            timestamp: None,
        };
        if is_test {
            test.push(rec);
        } else {
            train.push(rec);
        }
    }
    let test = InteractionSet::new(users.clone(), items.clone(), test)?;
    let test_users = test.active_users().collect();
    Ok(Fold {
        fold_id: expected_fold,
        train: InteractionSet::new(users, items, train)?,
        test,
        test_users,
    })
}

/// Reloads a plan written by [`write_plan`].
pub fn read_plan(dir: &Path) -> Result<SplitPlan> {
    let meta_path = dir.join("split_meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: PlanMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let folds = (0..meta.n_folds)
        .map(|f| read_fold(&fold_path(dir, f), f))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitPlan {
        folds,
        seed: meta.seed,
        n_folds: meta.n_folds,
        test_fraction: meta.test_fraction,
    })
}
