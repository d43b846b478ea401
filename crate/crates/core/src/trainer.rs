//! Momentum SGD on the CTC loss with periodic checkpoints scored on a
//! held-out test set.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Codec, CodecError};
use crate::ctc::{ctc_loss_grad, CtcError};
use crate::dataset::Sample;
use crate::evalkit::{corpus_cer, EvalError};
use crate::linenet::{LineImage, NetError, Network, Params, DEFAULT_HIDDEN_SIZE};
use crate::modelstore::{self, ModelError, Provenance};
use crate::synthgen::derive_seed;

/// Elementwise bound applied to every gradient component.
pub const GRAD_CLIP: f64 = 10.0;
pub const CHECKPOINTS_CSV: &str = "checkpoints.csv";
pub const BEST_MODEL: &str = "best.ocrm";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("sample {id}: {source}")]
    Encode { id: String, source: CodecError },
    #[error("sample {id}: {source}")]
    Infeasible { id: String, source: CtcError },
    #[error("sample {id}: {source}")]
    Line { id: String, source: NetError },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("checkpoint series is empty")]
    NoCheckpoints,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "model")]
pub enum InitMode {
    Fresh,
    Pretrained(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub iterations: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub whitelist: BTreeSet<char>,
    pub init_mode: InitMode,
    /// Width of the concatenated LSTM state for fresh networks.
    pub hidden_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            iterations: 10_000,
            learning_rate: 1e-4,
            momentum: 0.9,
            checkpoint_every: 1000,
            seed: 0,
            whitelist: BTreeSet::new(),
            init_mode: InitMode::Fresh,
            hidden_size: DEFAULT_HIDDEN_SIZE,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(TrainError::Config("checkpoint_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub path: PathBuf,
    /// Fraction of reference characters in error on the test set.
    pub test_cer: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckpointSeries {
    pub checkpoints: Vec<Checkpoint>,
}

/// Extend the pretrained codec by the missing GT characters, then reduce it
/// to the GT characters plus the immune set (blank, space, `whitelist`).
pub fn reconcile_codec<S: AsRef<str>>(
    pretrained: &Network,
    gt_texts: &[S],
    whitelist: &BTreeSet<char>,
    seed: u64,
) -> Result<Network, NetError> {
    let gt: BTreeSet<char> = Codec::build(gt_texts, &BTreeSet::new()).charset();
    let (_, grow) = pretrained.codec().extend(&gt)?;
    let extended = pretrained.resize_output(&grow, seed)?;
    let keep: BTreeSet<char> = gt.union(whitelist).copied().collect();
    let (_, shrink) = extended.codec().reduce(&keep);
    extended.resize_output(&shrink, seed)
}

/// Encode every sample and check CTC feasibility against its width.
pub fn prepare_targets(net: &Network, samples: &[Sample]) -> Result<Vec<Vec<usize>>, TrainError> {
    samples
        .iter()
        .map(|s| {
            if s.image.height() != net.input_height() {
                return Err(TrainError::Line {
                    id: s.id.clone(),
                    source: NetError::HeightMismatch {
                        expected: net.input_height(),
                        got: s.image.height(),
                    },
                });
            }
            let labels = net.codec().encode(&s.text).map_err(|source| TrainError::Encode {
                id: s.id.clone(),
                source,
            })?;
            let required = crate::ctc::required_steps(&labels).max(1);
            if s.image.width() < required {
                return Err(TrainError::Infeasible {
                    id: s.id.clone(),
                    source: CtcError::Infeasible {
                        target_len: labels.len(),
                        required,
                        steps: s.image.width(),
                    },
                });
            }
            Ok(labels)
        })
        .collect()
}

/// Momentum SGD: `v <- momentum * v - lr * clip(g)`, `theta <- theta + v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Params,
}

impl MomentumSgd {
    pub fn new(net: &Network, learning_rate: f64, momentum: f64) -> Self {
        MomentumSgd {
            learning_rate,
            momentum,
            velocity: net.params().zeros_like(),
        }
    }

    /// One update on one line; returns the loss before the update.
    pub fn step(&mut self, net: &mut Network, line: &LineImage, labels: &[usize]) -> Result<f64, TrainError> {
        let (trace, tape) = net.forward_with_tape(line)?;
        let ctc = ctc_loss_grad(trace.posteriors.view(), labels).map_err(|source| TrainError::Infeasible {
            id: String::from("<step>"),
            source,
        })?;
        let grad = net.backward(&tape, &ctc.logit_grad);
        let (lr, mu) = (self.learning_rate, self.momentum);
        self.velocity
            .zip_apply(&grad, |v, g| *v = mu * *v - lr * g.clamp(-GRAD_CLIP, GRAD_CLIP));
        net.params_mut().zip_apply(&self.velocity, |p, v| *p += v);
        Ok(ctc.loss)
    }
}

/// The network training starts from: a fresh one over the GT alphabet plus
/// whitelist, or a loaded model reconciled with the GT.
pub fn initial_network(train_set: &[Sample], config: &TrainingConfig) -> Result<(Network, Provenance), TrainError> {
    let texts: Vec<&str> = train_set.iter().map(|s| s.text.as_str()).collect();
    let height = train_set
        .first()
        .map(|s| s.image.height())
        .ok_or(TrainError::EmptySet("training"))?;
    match &config.init_mode {
        InitMode::Fresh => {
            let codec = Codec::build(&texts, &config.whitelist);
            let net = Network::init(height, config.hidden_size, codec, config.seed)?;
            Ok((
                net,
                Provenance {
                    init: "fresh".into(),
                    training_seed: config.seed,
                    ..Default::default()
                },
            ))
        }
        InitMode::Pretrained(path) => {
            let base = modelstore::load(path)?;
            let net = reconcile_codec(&base, &texts, &config.whitelist, derive_seed(config.seed, &[1]))?;
            Ok((
                net,
                Provenance {
                    init: "pretrained".into(),
                    base_model: path.file_name().map(|n| n.to_string_lossy().into_owned()),
                    training_seed: config.seed,
                    ..Default::default()
                },
            ))
        }
    }
}

/// Run `config.iterations` updates starting from `net`. Every
/// `checkpoint_every` iterations the test CER is measured and
/// `on_checkpoint(iteration, test_cer, &net)` is called. Returns the final
/// network.
pub fn fit<F>(
    mut net: Network,
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainingConfig,
    mut on_checkpoint: F,
) -> Result<Network, TrainError>
where
    F: FnMut(u64, f64, &Network) -> Result<(), TrainError>,
{
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if test_set.is_empty() {
        return Err(TrainError::EmptySet("test"));
    }
    let targets = prepare_targets(&net, train_set)?;
    for s in test_set {
        if s.image.height() != net.input_height() {
            return Err(TrainError::Line {
                id: s.id.clone(),
                source: NetError::HeightMismatch {
                    expected: net.input_height(),
                    got: s.image.height(),
                },
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0]));
    let mut opt = MomentumSgd::new(&net, config.learning_rate, config.momentum);
    let mut recent_loss = 0.0;
    for iteration in 1..=config.iterations {
        let i = rng.gen_range(0..train_set.len());
        let loss = opt
            .step(&mut net, &train_set[i].image, &targets[i])
            .map_err(|e| match e {
                TrainError::Infeasible { source, .. } => TrainError::Infeasible {
                    id: train_set[i].id.clone(),
                    source,
                },
                other => other,
            })?;
        recent_loss += loss;
        if iteration % config.checkpoint_every == 0 {
            let test_cer = corpus_cer(&net, test_set)?;
            log::info!(
                "iteration {iteration}: mean loss {:.4}, test CER {:.2}%",
                recent_loss / config.checkpoint_every as f64,
                test_cer * 100.0
            );
            recent_loss = 0.0;
            on_checkpoint(iteration, test_cer, &net)?;
        }
    }
    Ok(net)
}

/// Train and write `model-<iteration>.ocrm` checkpoints, `checkpoints.csv`
/// and a copy of the best checkpoint as `best.ocrm` into `out_dir`.
pub fn train(
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainingConfig,
    out_dir: &Path,
) -> Result<CheckpointSeries, TrainError> {
    config.validate()?;
    let (net, provenance) = initial_network(train_set, config)?;
    std::fs::create_dir_all(out_dir)?;
    let mut series = CheckpointSeries::default();
    fit(net, train_set, test_set, config, |iteration, test_cer, net| {
        let path = out_dir.join(format!("model-{iteration}.ocrm"));
        let p = Provenance {
            iteration,
            ..provenance.clone()
        };
        modelstore::save(net, &p, &path)?;
        series.checkpoints.push(Checkpoint {
            iteration,
            path,
            test_cer,
        });
        Ok(())
    })?;
    let mut csv = csv::Writer::from_path(out_dir.join(CHECKPOINTS_CSV))?;
    csv.write_record(["iteration", "test_cer"])?;
    for c in &series.checkpoints {
        csv.write_record([c.iteration.to_string(), c.test_cer.to_string()])?;
    }
    csv.flush()?;
    let best = best_index(&series)?;
    std::fs::copy(&series.checkpoints[best].path, out_dir.join(BEST_MODEL))?;
    Ok(series)
}

fn best_index(series: &CheckpointSeries) -> Result<usize, TrainError> {
    let mut best: Option<usize> = None;
    for (i, c) in series.checkpoints.iter().enumerate() {
        if best.is_none_or(|b| c.test_cer < series.checkpoints[b].test_cer) {
            best = Some(i);
        }
    }
    best.ok_or(TrainError::NoCheckpoints)
}

/// The checkpoint with the lowest test CER, earliest on ties.
pub fn best_checkpoint(series: &CheckpointSeries) -> Result<&Checkpoint, TrainError> {
    best_index(series).map(|i| &series.checkpoints[i])
}

/// Load the best checkpoint's model.
pub fn select_best_checkpoint(series: &CheckpointSeries) -> Result<Network, TrainError> {
    Ok(modelstore::load(&best_checkpoint(series)?.path)?)
}

/// Train in memory and return the network of the best checkpoint with its
/// test CER.
pub fn train_best(
    net: Network,
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainingConfig,
) -> Result<(Network, f64), TrainError> {
    let mut best: Option<(Network, f64)> = None;
    fit(net, train_set, test_set, config, |_, cer, net| {
        if best.as_ref().is_none_or(|(_, b)| cer < *b) {
            best = Some((net.clone(), cer));
        }
        Ok(())
    })?;
    best.ok_or(TrainError::NoCheckpoints)
}

/// Number of lines held out as test set from `n` training lines.
pub fn test_split_size(n: usize) -> usize {
    ((n as f64 * 2.0 / 15.0).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}
