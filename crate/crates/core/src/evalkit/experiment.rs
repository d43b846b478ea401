//! Fold/budget transfer experiments.
//!
//! Each corpus is shuffled once and split into an evaluation half and a
//! training pool. For every fold and budget a fixed draw of `budget` lines
//! is taken from the pool and split into train and test parts; every init
//! mode trains on the same draw with the same seed, picks its best
//! checkpoint on the test part and is scored on the evaluation half.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{corpus_cer, display_gain, gain, EvalError};
use crate::codec::Codec;
use crate::dataset::Sample;
use crate::linenet::{NetError, Network};
use crate::synthgen::derive_seed;
use crate::trainer::{reconcile_codec, test_split_size, train_best, TrainError, TrainingConfig};

pub const EXPERIMENT_CSV: &str = "experiment.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
/// Corpus name of the rows averaging over all corpora.
pub const AVG: &str = "AVG";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("corpus {corpus}: {need} pool lines needed, {have} available")]
    InsufficientGt { corpus: String, need: usize, have: usize },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Fresh,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpec {
    pub name: String,
    pub init: InitKind,
    /// Base model for pretrained modes.
    pub model: Option<PathBuf>,
    pub whitelist: BTreeSet<char>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub budgets: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
    /// Share of each corpus reserved for evaluation.
    pub eval_fraction: f64,
    /// The first fresh mode is the baseline for gains.
    pub modes: Vec<ModeSpec>,
}

pub struct CorpusData {
    pub name: String,
    pub samples: Vec<Sample>,
}

/// One training run of the experiment grid.
#[derive(Debug, Clone)]
pub struct CellSpec<'a> {
    pub corpus: &'a str,
    pub budget: usize,
    pub fold: usize,
    pub mode: &'a ModeSpec,
    /// Shared by all modes of one (corpus, budget, fold).
    pub seed: u64,
}

/// Trains one cell and returns its evaluation CER as a fraction.
pub trait CellRunner: Sync {
    fn run(&self, cell: &CellSpec, train: &[Sample], test: &[Sample], eval: &[Sample]) -> Result<f64, ExperimentError>;
}

/// Real training through [`train_best`].
pub struct TrainingRunner {
    /// Iterations, learning rate, momentum, checkpoint interval and hidden
    /// size; seed, init mode and whitelist come from the cell.
    pub training: TrainingConfig,
    pub pretrained: BTreeMap<PathBuf, Network>,
}

impl TrainingRunner {
    /// The network a cell starts from.
    pub fn initial(&self, cell: &CellSpec, train: &[Sample]) -> Result<Network, ExperimentError> {
        let texts: Vec<&str> = train.iter().map(|s| s.text.as_str()).collect();
        let height = train.first().map(|s| s.image.height()).unwrap_or(0);
        Ok(match cell.mode.init {
            InitKind::Fresh => Network::init(
                height,
                self.training.hidden_size,
                Codec::build(&texts, &cell.mode.whitelist),
                cell.seed,
            )?,
            InitKind::Pretrained => {
                let key = cell.mode.model.as_ref().ok_or_else(|| {
                    ExperimentError::Config(format!("mode {} has no base model", cell.mode.name))
                })?;
                let base = self.pretrained.get(key).ok_or_else(|| {
                    ExperimentError::Config(format!("base model {} is not loaded", key.display()))
                })?;
                reconcile_codec(base, &texts, &cell.mode.whitelist, derive_seed(cell.seed, &[1]))?
            }
        })
    }
}

impl CellRunner for TrainingRunner {
    fn run(&self, cell: &CellSpec, train: &[Sample], test: &[Sample], eval: &[Sample]) -> Result<f64, ExperimentError> {
        let net = self.initial(cell, train)?;
        let config = TrainingConfig {
            seed: cell.seed,
            ..self.training.clone()
        };
        let (best, _) = train_best(net, train, test, &config)?;
        Ok(corpus_cer(&best, eval)?)
    }
}

/// Plumbing stand-in: a CER derived by hashing the cell's line draw, so
/// the output depends on every split decision but no training happens.
/// Fresh modes land in [5%, 15%), pretrained modes at 60% of that.
pub struct StubRunner;

impl CellRunner for StubRunner {
    fn run(&self, cell: &CellSpec, train: &[Sample], test: &[Sample], _eval: &[Sample]) -> Result<f64, ExperimentError> {
        let tags: Vec<u64> = train
            .iter()
            .chain(test)
            .flat_map(|s| s.id.bytes().map(u64::from).chain([u64::MAX]))
            .collect();
        let base = 5.0 + (derive_seed(cell.seed, &tags) % 1000) as f64 / 100.0;
        let pct = match cell.mode.init {
            InitKind::Fresh => base,
            InitKind::Pretrained => (base * 60.0).round() / 100.0,
        };
        Ok(pct / 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub corpus: String,
    pub budget: usize,
    pub mode: String,
    pub fold: usize,
    /// Percent.
    pub eval_cer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub corpus: String,
    pub budget: usize,
    pub mode: String,
    /// Percent, mean over folds.
    pub mean_cer: f64,
    /// Percent, full precision; absent for the baseline.
    pub gain_vs_default: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub folds: Vec<FoldResult>,
    /// Per corpus rows sorted by corpus then budget, followed by the `AVG`
    /// rows per budget.
    pub summary: Vec<SummaryRow>,
}

fn name_tag(name: &str) -> Vec<u64> {
    name.bytes().map(u64::from).collect()
}

/// `(train, test)` sizes for a budget.
pub fn budget_split(budget: usize) -> (usize, usize) {
    let test = test_split_size(budget);
    (budget - test, test)
}

struct Split {
    eval: Vec<Sample>,
    draws: BTreeMap<(usize, usize), (Vec<Sample>, Vec<Sample>, u64)>,
}

fn split_corpus(corpus: &CorpusData, config: &ExperimentConfig) -> Result<Split, ExperimentError> {
    let tag = name_tag(&corpus.name);
    let n = corpus.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &tag)));
    let n_eval = (n as f64 * config.eval_fraction).round() as usize;
    let (eval_idx, pool) = order.split_at(n_eval.min(n));
    let need = config.budgets.iter().copied().max().unwrap_or(0);
    if pool.len() < need || eval_idx.is_empty() {
        return Err(ExperimentError::InsufficientGt {
            corpus: corpus.name.clone(),
            need,
            have: pool.len(),
        });
    }
    let pick = |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| corpus.samples[i].clone()).collect() };
    let mut draws = BTreeMap::new();
    for fold in 1..=config.folds {
        for &budget in &config.budgets {
            let mut key = tag.clone();
            key.extend([fold as u64, budget as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &key));
            let drawn: Vec<usize> = pool.choose_multiple(&mut rng, budget).copied().collect();
            let (n_train, _) = budget_split(budget);
            key.push(7);
            draws.insert(
                (fold, budget),
                (
                    pick(&drawn[..n_train]),
                    pick(&drawn[n_train..]),
                    derive_seed(config.seed, &key),
                ),
            );
        }
    }
    Ok(Split {
        eval: pick(eval_idx),
        draws,
    })
}

/// Run every (corpus, budget, fold, mode) cell and aggregate. Cells run on
/// the current rayon pool.
pub fn run_experiment(
    corpora: &[CorpusData],
    config: &ExperimentConfig,
    runner: &dyn CellRunner,
) -> Result<ExperimentReport, ExperimentError> {
    if config.folds == 0 || config.budgets.is_empty() || config.modes.is_empty() {
        return Err(ExperimentError::Config("folds, budgets and modes must be nonempty".into()));
    }
    if config.budgets.iter().any(|&b| b < 2) {
        return Err(ExperimentError::Config("every budget needs at least 2 lines".into()));
    }
    let names: BTreeSet<&str> = config.modes.iter().map(|m| m.name.as_str()).collect();
    if names.len() != config.modes.len() {
        return Err(ExperimentError::Config("mode names must be unique".into()));
    }
    if !(0.0..1.0).contains(&config.eval_fraction) {
        return Err(ExperimentError::Config("eval fraction must lie in [0, 1)".into()));
    }
    let mut corpora: Vec<&CorpusData> = corpora.iter().collect();
    corpora.sort_by(|a, b| a.name.cmp(&b.name));
    let splits = corpora
        .iter()
        .map(|c| split_corpus(c, config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut budgets = config.budgets.clone();
    budgets.sort_unstable();
    budgets.dedup();

    let mut cells = Vec::new();
    for ci in 0..corpora.len() {
        for &budget in &budgets {
            for mi in 0..config.modes.len() {
                for fold in 1..=config.folds {
                    cells.push((ci, budget, mi, fold));
                }
            }
        }
    }
    let folds = cells
        .par_iter()
        .map(|&(ci, budget, mi, fold)| {
            let (train, test, seed) = &splits[ci].draws[&(fold, budget)];
            let mode = &config.modes[mi];
            let spec = CellSpec {
                corpus: &corpora[ci].name,
                budget,
                fold,
                mode,
                seed: *seed,
            };
            let cer = runner.run(&spec, train, test, &splits[ci].eval)?;
            log::info!(
                "{} budget {budget} fold {fold} {}: {:.2}%",
                corpora[ci].name,
                mode.name,
                cer * 100.0
            );
            Ok(FoldResult {
                corpus: corpora[ci].name.clone(),
                budget,
                mode: mode.name.clone(),
                fold,
                eval_cer: cer * 100.0,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let summary = summarize(&folds, config, &budgets);
    Ok(ExperimentReport { folds, summary })
}

fn summarize(folds: &[FoldResult], config: &ExperimentConfig, budgets: &[usize]) -> Vec<SummaryRow> {
    let baseline = config.modes.iter().find(|m| m.init == InitKind::Fresh).map(|m| m.name.as_str());
    let corpora: BTreeSet<&str> = folds.iter().map(|f| f.corpus.as_str()).collect();
    let mean = |corpus: &str, budget: usize, mode: &str| {
        let v: Vec<f64> = folds
            .iter()
            .filter(|f| f.corpus == corpus && f.budget == budget && f.mode == mode)
            .map(|f| f.eval_cer)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut rows = Vec::new();
    for &corpus in &corpora {
        for &budget in budgets {
            let base = baseline.map(|b| mean(corpus, budget, b));
            for m in &config.modes {
                let mean_cer = mean(corpus, budget, &m.name);
                let gain_vs_default = match (baseline, base) {
                    (Some(b), Some(d)) if b != m.name => gain(d, mean_cer).ok(),
                    _ => None,
                };
                rows.push(SummaryRow {
                    corpus: corpus.to_string(),
                    budget,
                    mode: m.name.clone(),
                    mean_cer,
                    gain_vs_default,
                });
            }
        }
    }
    // averages of the per-corpus values, gains included
    let mut avg = Vec::new();
    for &budget in budgets {
        for m in &config.modes {
            let of: Vec<&SummaryRow> = rows.iter().filter(|r| r.budget == budget && r.mode == m.name).collect();
            let n = of.len() as f64;
            let gains: Vec<f64> = of.iter().filter_map(|r| r.gain_vs_default).collect();
            avg.push(SummaryRow {
                corpus: AVG.to_string(),
                budget,
                mode: m.name.clone(),
                mean_cer: of.iter().map(|r| r.mean_cer).sum::<f64>() / n,
                gain_vs_default: (gains.len() == of.len() && !gains.is_empty())
                    .then(|| gains.iter().sum::<f64>() / gains.len() as f64),
            });
        }
    }
    rows.extend(avg);
    rows
}

impl ExperimentReport {
    /// Write `experiment.csv` and `summary.csv`.
    pub fn write_csvs(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(EXPERIMENT_CSV))?;
        w.write_record(["corpus", "budget", "mode", "fold", "eval_cer"])?;
        for f in &self.folds {
            w.write_record([
                f.corpus.clone(),
                f.budget.to_string(),
                f.mode.clone(),
                f.fold.to_string(),
                f.eval_cer.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(SUMMARY_CSV))?;
        w.write_record(["corpus", "budget", "mode", "mean_cer", "gain_vs_default"])?;
        for r in &self.summary {
            w.write_record([
                r.corpus.clone(),
                r.budget.to_string(),
                r.mode.clone(),
                r.mean_cer.to_string(),
                r.gain_vs_default.map(|g| g.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary table with CERs to two decimals and integer gains.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12} {:>6} {:<16} {:>8} {:>6}\n", "corpus", "budget", "mode", "CER %", "gain");
        for r in &self.summary {
            out.push_str(&format!(
                "{:<12} {:>6} {:<16} {:>8.2} {:>6}\n",
                r.corpus,
                r.budget,
                r.mode,
                r.mean_cer,
                r.gain_vs_default.map(|g| display_gain(g).to_string()).unwrap_or_else(|| "-".into())
            ));
        }
        out
    }

    pub fn row(&self, corpus: &str, budget: usize, mode: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.corpus == corpus && r.budget == budget && r.mode == mode)
    }
}
