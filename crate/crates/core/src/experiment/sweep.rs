use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::candidates::{sweep_sizes, CandidateBuilder, CandidateStrategy, StrategyKind};
use crate::corpus::{item_popularity, Format, InteractionSet};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate, ItemSet, Metric, UserValue};
use crate::par::{self, Execution};
use crate::recommend::{train, RecommenderKind, RecommenderSpec, TrainedModel};
use crate::rng;
use crate::splitting::{crossfold_users, Fold, SplitParams};

use super::{sha256_hex, split_comments, write_file, RunHeader};

pub const PER_USER_HEADER: &str = "algo,strategy,n_decoys,metric,user,value";
pub const AGGREGATE_HEADER: &str = "algo,strategy,n_decoys,metric,mean,n_users";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SWEEP_CONFIG_FILE: &str = "sweep_config.json";
const CELL_HEADER: &str = "algo,strategy,n_decoys,metric,user,value,empty_relevant";
const MANIFEST_HEADER: &str = "cell,status,sha256,message";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyGrid {
    pub kinds: Vec<StrategyKind>,
    pub sizes: Vec<usize>,
}

impl Default for StrategyGrid {
    fn default() -> Self {
        StrategyGrid {
            kinds: vec![StrategyKind::Full, StrategyKind::Uniform, StrategyKind::PopularityWeighted],
            sizes: vec![10, 20, 50, 100, 200, 500, 1000, 2000],
        }
    }
}

impl StrategyGrid {
    pub fn strategies(&self) -> Result<Vec<CandidateStrategy>> {
        sweep_sizes(&self.kinds, &self.sizes)
    }
}

/// Everything that determines sweep results. Thread counts and output
/// locations live in [`SweepOptions`] so they never affect output bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dataset: String,
    pub format: Format,
    pub split: SplitParams,
    pub algorithms: Vec<RecommenderSpec>,
    pub strategies: StrategyGrid,
    pub metrics: Vec<Metric>,
    pub cutoff: usize,
    /// Recommendation list length.
    pub depth: usize,
    pub exclude_empty_relevant: bool,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("at least one algorithm is required".into()));
        }
        let mut names = BTreeSet::new();
        for spec in &self.algorithms {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            if spec.kind == RecommenderKind::Oracle {
                return Err(Error::Config("the oracle needs true preferences and only runs in simulations".into()));
            }
            if !names.insert(spec.name()) {
                return Err(Error::Config(format!("duplicate algorithm name {:?}", spec.name())));
            }
        }
        if self.strategies.strategies()?.is_empty() {
            return Err(Error::Config("at least one candidate strategy is required".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("at least one metric is required".into()));
        }
        if self.cutoff == 0 || self.depth == 0 {
            return Err(Error::Config("cutoff and depth must be at least 1".into()));
        }
        if self.split.n_folds < 2 {
            return Err(Error::Config("split.n_folds must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    pub execution: Execution,
    pub dry_run: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub fold: usize,
    pub algo: String,
    pub algo_idx: usize,
    pub strategy: CandidateStrategy,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("f{}_{}_{}", self.fold, self.algo, self.strategy.label())
    }

    fn path(&self, out: &Path) -> PathBuf {
        out.join("cells").join(format!("{}.csv", self.id()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Done { sha256: String },
    Failed { message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutcome {
    pub planned: usize,
    pub computed: usize,
    pub skipped: usize,
    /// `(cell id, error)` for every failed cell.
    pub failed: Vec<(String, String)>,
}

/// The cell grid in execution order: fold, then algorithm, then strategy.
pub fn plan_cells(cfg: &SweepConfig) -> Result<Vec<Cell>> {
    let strategies = cfg.strategies.strategies()?;
    let mut cells = Vec::new();
    for fold in 0..cfg.split.n_folds {
        for (algo_idx, spec) in cfg.algorithms.iter().enumerate() {
            for s in &strategies {
                cells.push(Cell {
                    fold,
                    algo: spec.name(),
                    algo_idx,
                    strategy: *s,
                });
            }
        }
    }
    Ok(cells)
}

fn header_for(cfg: &SweepConfig) -> Result<RunHeader> {
    RunHeader::new(cfg.seed, cfg)
}

fn read_manifest(out: &Path, fingerprint: &str) -> HashMap<String, CellStatus> {
    let path = out.join(MANIFEST_FILE);
    let Ok(text) = fs::read_to_string(&path) else {
        return HashMap::new();
    };
    let (meta, body) = split_comments(&text);
    if !meta.iter().any(|(k, v)| k == "config_sha256" && v == fingerprint) {
        log::info!("manifest belongs to a different configuration; recomputing everything");
        return HashMap::new();
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut entries = HashMap::new();
    for row in rdr.records().flatten() {
        if row.len() != 4 {
            continue;
        }
        let status = match &row[1] {
            "ok" => CellStatus::Done {
                sha256: row[2].to_owned(),
            },
            _ => CellStatus::Failed {
                message: row[3].to_owned(),
            },
        };
        entries.insert(row[0].to_owned(), status);
    }
    entries
}

fn write_manifest(out: &Path, fingerprint: &str, plan: &[Cell], status: &HashMap<String, CellStatus>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for cell in plan {
        let id = cell.id();
        match status.get(&id) {
            Some(CellStatus::Done { sha256 }) => w.write_record([id.as_str(), "ok", sha256, ""])?,
            Some(CellStatus::Failed { message }) => w.write_record([id.as_str(), "failed", "", message])?,
            None => {}
        }
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)
        .expect("csv output is utf-8");
    let text = format!("# config_sha256: {fingerprint}\n{MANIFEST_HEADER}\n{body}");
    write_file(&out.join(MANIFEST_FILE), &text)
}

fn cell_is_current(cell: &Cell, out: &Path, status: Option<&CellStatus>) -> bool {
    let Some(CellStatus::Done { sha256 }) = status else {
        return false;
    };
    fs::read(cell.path(out)).is_ok_and(|bytes| &sha256_hex(&bytes) == sha256)
}

struct FoldContext<'a> {
    fold: &'a Fold,
    builder: CandidateBuilder<'a>,
    pop_ranks: Vec<f64>,
    users: Vec<u32>,
}

fn evaluate_cell(ctx: &FoldContext<'_>, model: &TrainedModel, cell: &Cell, cfg: &SweepConfig, exec: Execution) -> Result<String> {
    let per_user = par::map(exec, &ctx.users, |&u| -> Result<Option<Vec<UserValue>>> {
        let cands = ctx.builder.build(u, &cell.strategy)?;
        let list = match model.recommend_top_n(u, &cands, cfg.depth) {
            Ok(l) => l,
            Err(Error::UnknownUser(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let relevant: ItemSet = cands.test_items.iter().copied().collect();
        let user = ctx.fold.train.users().id(u).to_owned();
        cfg.metrics
            .iter()
            .map(|&m| {
                Ok(UserValue {
                    user: user.clone(),
                    metric: m,
                    value: evaluate(m, &list.items, &relevant, cfg.cutoff, &ctx.pop_ranks)?,
                    empty_relevant: relevant.is_empty(),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    });
    let mut out = String::from(CELL_HEADER);
    out.push('\n');
    let mut skipped = 0;
    for rows in per_user {
        let Some(rows) = rows? else {
            skipped += 1;
            continue;
        };
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                cell.algo,
                cell.strategy.kind,
                cell.strategy.n_decoys_label(),
                r.metric,
                r.user,
                r.value,
                u8::from(r.empty_relevant)
            ));
        }
    }
    if skipped > 0 {
        log::warn!("{}: {skipped} cold-start users skipped", cell.id());
    }
    Ok(out)
}

/// Every planned cell with whether a current result for it already exists.
pub fn plan_status(cfg: &SweepConfig, out: &Path) -> Result<Vec<(Cell, bool)>> {
    let plan = plan_cells(cfg)?;
    let status = read_manifest(out, &header_for(cfg)?.fingerprint());
    Ok(plan
        .into_iter()
        .map(|c| {
            let done = cell_is_current(&c, out, status.get(&c.id()));
            (c, done)
        })
        .collect())
}

/// Runs (or resumes) the sweep, writing cell files, the manifest, and the
/// consolidated `sweep_per_user.csv` / `sweep_results.csv`.
pub fn run_sweep(cfg: &SweepConfig, data: &InteractionSet, out: &Path, opts: SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let plan = plan_cells(cfg)?;
    let header = header_for(cfg)?;
    let fingerprint = header.fingerprint();
    let mut status = read_manifest(out, &fingerprint);
    let mut outcome = SweepOutcome {
        planned: plan.len(),
        ..SweepOutcome::default()
    };
    let pending: Vec<bool> = plan.iter().map(|c| !cell_is_current(c, out, status.get(&c.id()))).collect();
    if opts.dry_run {
        outcome.skipped = pending.iter().filter(|p| !**p).count();
        outcome.computed = 0;
        return Ok(outcome);
    }

    let json = serde_json::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join(SWEEP_CONFIG_FILE), &(json + "\n"))?;
    let exec = opts.execution;
    let split_seed = rng::derive_seed("sweep.split", cfg.seed, &[]);
    let needs_split = pending.iter().any(|p| *p);
    let split = if needs_split {
        Some(crossfold_users(
            data,
            cfg.split.n_folds,
            cfg.split.test_fraction,
            cfg.split.min_ratings,
            split_seed,
        )?)
    } else {
        None
    };

    for fold_id in 0..cfg.split.n_folds {
        let fold_cells: Vec<(usize, &Cell)> = plan
            .iter()
            .enumerate()
            .filter(|(i, c)| c.fold == fold_id && pending[*i])
            .collect();
        outcome.skipped += plan.iter().enumerate().filter(|(i, c)| c.fold == fold_id && !pending[*i]).count();
        if fold_cells.is_empty() {
            continue;
        }
        let fold = &split.as_ref().expect("split computed when cells are pending").folds[fold_id];
        let ctx = FoldContext {
            fold,
            builder: CandidateBuilder::new(fold, cfg.seed),
            pop_ranks: item_popularity(&fold.train).ranks,
            users: fold.test_users.iter().copied().collect(),
        };
        for (algo_idx, spec) in cfg.algorithms.iter().enumerate() {
            let cells: Vec<&Cell> = fold_cells.iter().filter(|(_, c)| c.algo_idx == algo_idx).map(|(_, c)| *c).collect();
            if cells.is_empty() {
                continue;
            }
            let mut spec = spec.clone();
            spec.seed = rng::derive_seed("sweep.model", cfg.seed, &[fold_id.into(), spec.name().as_str().into(), spec.seed.into()]);
            let model = train(&spec, &fold.train, None);
            for cell in cells {
                let result = model
                    .as_ref()
                    .map_err(|e| Error::invalid(format!("training failed: {e}")))
                    .and_then(|m| evaluate_cell(&ctx, m, cell, cfg, exec));
                let st = match result.and_then(|text| {
                    write_file(&cell.path(out), &text)?;
                    Ok(sha256_hex(text.as_bytes()))
                }) {
                    Ok(sha256) => {
                        log::info!("cell {} done", cell.id());
                        outcome.computed += 1;
                        CellStatus::Done { sha256 }
                    }
                    Err(e) => {
                        log::error!("cell {} failed: {e}", cell.id());
                        outcome.failed.push((cell.id(), e.to_string()));
                        CellStatus::Failed { message: e.to_string() }
                    }
                };
                status.insert(cell.id(), st);
            }
            write_manifest(out, &fingerprint, &plan, &status)?;
        }
    }
    write_manifest(out, &fingerprint, &plan, &status)?;
    rebuild_sweep_results(cfg, out)?;
    Ok(outcome)
}

/// Reads the configuration a previous sweep stored in `dir`.
pub fn read_sweep_config(dir: &Path) -> Result<SweepConfig> {
    let path = dir.join(SWEEP_CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Rebuilds the consolidated per-user and aggregate files from completed
/// cell files listed in the manifest.
pub fn rebuild_sweep_results(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let plan = plan_cells(cfg)?;
    let header = header_for(cfg)?;
    let status = read_manifest(out, &header.fingerprint());
    let mut per_user = header.render();
    per_user.push_str(PER_USER_HEADER);
    per_user.push('\n');

    // (algo_idx, strategy, metric) -> rows, in plan order
    let mut groups: BTreeMap<(usize, usize, Metric), Vec<UserValue>> = BTreeMap::new();
    let strategies = cfg.strategies.strategies()?;
    let strategy_pos = |s: &CandidateStrategy| strategies.iter().position(|x| x == s).expect("planned strategy");
    for cell in &plan {
        if !cell_is_current(cell, out, status.get(&cell.id())) {
            continue;
        }
        let path = cell.path(out);
        let mut rdr = csv::Reader::from_path(&path)?;
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let bad = |m: &str| Error::Parse {
                path: path.clone(),
                line,
                message: m.to_owned(),
            };
            if row.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            per_user.push_str(&row.iter().take(6).collect::<Vec<_>>().join(","));
            per_user.push('\n');
            let metric: Metric = row[3].parse()?;
            let value: f64 = row[5].parse().map_err(|_| bad("invalid value"))?;
            groups
                .entry((cell.algo_idx, strategy_pos(&cell.strategy), metric))
                .or_default()
                .push(UserValue {
                    user: row[4].to_owned(),
                    metric,
                    value,
                    empty_relevant: &row[6] == "1",
                });
        }
    }
    let mut agg = header.render();
    agg.push_str(AGGREGATE_HEADER);
    agg.push('\n');
    for ((algo_idx, s_idx, metric), rows) in &groups {
        let algo = cfg.algorithms[*algo_idx].name();
        let s = strategies[*s_idx];
        for a in aggregate(rows, cfg.exclude_empty_relevant) {
            if a.n_excluded > 0 {
                log::info!("{algo}/{}/{metric}: {} users with no relevant items excluded", s.label(), a.n_excluded);
            }
            agg.push_str(&format!(
                "{},{},{},{},{},{}\n",
                algo,
                s.kind,
                s.n_decoys_label(),
                metric,
                a.mean,
                a.n_users
            ));
        }
    }
    write_file(&out.join("sweep_per_user.csv"), &per_user)?;
    write_file(&out.join("sweep_results.csv"), &agg)
}
