//! Episodic training with best-validation model selection, evaluation with 95%
//! confidence intervals, shot sweeps and result CSVs.

mod checkpoint;
mod config;

use std::io::Write;
use std::time::Instant;

use fskws_core::features::{FeatureMatrix, Layout};
use fskws_core::nets::Network;
use fskws_core::protonet::{episode_accuracy, episode_forward, Episode, Role};
use fskws_core::rng::{stream_rng, sub_stream_rng, Stream};
use fskws_core::tensor::{adam_step, AdamConfig, Mode};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, EpisodeSource, EpisodeSpec, Phase};

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use config::{lr_at, Case, Profile, TrainConfig};

/// Background-mix stream indices for validation and test episodes start here,
/// clear of the indices used by training episodes.
const VAL_MIX_BASE: u64 = 1 << 40;
const TEST_MIX_BASE: u64 = 2 << 40;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, episode {episode}; {dump}")]
    NanLoss { epoch: usize, episode: usize, dump: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(DatasetError),
    #[error(transparent)]
    Core(#[from] fskws_core::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<DatasetError> for TrainError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InsufficientClasses { .. } | DatasetError::InsufficientSamples { .. } => {
                TrainError::InsufficientData(e.to_string())
            }
            other => TrainError::Dataset(other),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation accuracy.
    pub best: Checkpoint,
    /// Parameters after the last epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochLog>,
    /// Accuracy of every training episode, in order.
    pub train_episode_accuracies: Vec<f64>,
    /// Loss of every training episode, in order.
    pub train_episode_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_accuracy: f64,
    /// `1.96 · σ / √n` over the per-episode accuracies (population σ).
    pub ci95_halfwidth: f64,
    pub per_episode_accuracies: Vec<f64>,
    /// Mean accuracy over queries of core categories only.
    pub core_only_accuracy: f64,
}

impl EvalResult {
    pub fn from_episodes(per_episode_accuracies: Vec<f64>, core_only: &[f64]) -> Self {
        let n = per_episode_accuracies.len().max(1) as f64;
        let mean = per_episode_accuracies.iter().sum::<f64>() / n;
        let var = per_episode_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_accuracy: mean,
            ci95_halfwidth: 1.96 * var.sqrt() / n.sqrt(),
            per_episode_accuracies,
            core_only_accuracy: core_only.iter().sum::<f64>() / core_only.len().max(1) as f64,
        }
    }
}

fn to_layout(episode: Episode<FeatureMatrix>, layout: Layout) -> Episode<FeatureMatrix> {
    let Episode { categories, support, query } = episode;
    let convert = |items: Vec<_>| {
        items
            .into_iter()
            .map(|l: fskws_core::protonet::Labeled<FeatureMatrix>| fskws_core::protonet::Labeled {
                item: l.item.with_layout(layout),
                label: l.label,
            })
            .collect()
    };
    Episode { categories, support: convert(support), query: convert(query) }
}

fn dump(episode: &Episode<FeatureMatrix>) -> String {
    let names: Vec<&str> = episode.categories.iter().map(|c| c.name.as_str()).collect();
    let bad = episode.support.iter().chain(&episode.query).filter(|l| !l.item.is_finite()).count();
    format!(
        "categories {names:?}, {} support / {} query items, {bad} with non-finite features",
        episode.support.len(),
        episode.query.len()
    )
}

/// Accuracy over all queries and over core-category queries of one episode.
fn episode_scores(episode: &Episode<FeatureMatrix>, preds: &[usize]) -> (f64, f64) {
    let labels = episode.query_labels();
    let core: Vec<(usize, usize)> = preds
        .iter()
        .zip(&labels)
        .filter(|(_, l)| episode.categories[**l].role == Role::Core)
        .map(|(p, l)| (*p, *l))
        .collect();
    let core_acc = core.iter().filter(|(p, l)| p == l).count() as f64 / core.len().max(1) as f64;
    (episode_accuracy(preds, &labels), core_acc)
}

/// Runs `episodes` eval-mode episodes; episode `e` is drawn from
/// `(seed, sample_stream, e)` and mixed with `(seed, BackgroundMix, mix_base + e)`.
fn run_eval(
    net: &Network<f32>,
    source: &dyn EpisodeSource,
    spec: &EpisodeSpec,
    episodes: usize,
    seed: u64,
    sample_stream: Stream,
    mix_base: u64,
) -> Result<EvalResult, TrainError> {
    let mut net = net.clone();
    let mut accs = Vec::with_capacity(episodes);
    let mut core = Vec::with_capacity(episodes);
    for e in 0..episodes as u64 {
        let mut srng = sub_stream_rng(seed, sample_stream, e);
        let mut mrng = sub_stream_rng(seed, Stream::BackgroundMix, mix_base + e);
        let ep = to_layout(source.episode(spec, &mut srng, &mut mrng)?, net.layout());
        let fwd = episode_forward(&mut net, &ep, Mode::Eval)?;
        let (acc, core_acc) = episode_scores(&ep, &fwd.predictions());
        accs.push(acc);
        core.push(core_acc);
    }
    Ok(EvalResult::from_episodes(accs, &core))
}

/// Episodic training. Each epoch runs the training episodes (forward in train
/// mode, mean query NLL, backward, Adam) and then the validation episodes in
/// eval mode; the epoch with the best validation accuracy is kept.
pub fn train(
    source: &dyn EpisodeSource,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let init_seed = stream_rng(cfg.seed, Stream::Init).next_u64();
    let mut net = Network::build_kind(cfg.arch, init_seed)?;
    let train_spec = cfg.episode_spec(Phase::Train);
    let val_spec = cfg.episode_spec(Phase::Val);
    let start = Instant::now();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut train_episode_accuracies = Vec::new();
    let mut train_episode_losses = Vec::new();
    let mut best: Option<Checkpoint> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let adam = AdamConfig::with_lr(lr);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        for e in 0..cfg.train_episodes_per_epoch {
            let index = (epoch * cfg.train_episodes_per_epoch + e) as u64;
            let mut srng = sub_stream_rng(cfg.seed, Stream::EpisodeSampling, index);
            let mut mrng = sub_stream_rng(cfg.seed, Stream::BackgroundMix, index);
            let ep = to_layout(source.episode(&train_spec, &mut srng, &mut mrng)?, net.layout());
            let fwd = episode_forward(&mut net, &ep, Mode::Train)?;
            let loss = fwd.loss_value();
            if !loss.is_finite() {
                return Err(TrainError::NanLoss { epoch, episode: e, dump: dump(&ep) });
            }
            let acc = episode_accuracy(&fwd.predictions(), &ep.query_labels());
            fwd.tape.backward(fwd.loss, net.params_mut())?;
            adam_step(net.params_mut(), &adam)?;
            loss_sum += loss;
            acc_sum += acc;
            train_episode_accuracies.push(acc);
            train_episode_losses.push(loss);
        }
        let val = run_eval(&net, source, &val_spec, cfg.val_episodes_per_epoch, cfg.seed, Stream::Validation, VAL_MIX_BASE)?;
        let n = cfg.train_episodes_per_epoch as f64;
        let record = EpochLog {
            epoch,
            train_loss: loss_sum / n,
            train_acc: acc_sum / n,
            val_acc: val.mean_accuracy,
            lr,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} val acc {:.4} lr {lr:.3e}",
            record.train_loss,
            record.train_acc,
            record.val_acc
        );
        on_epoch(&record);
        if best.as_ref().is_none_or(|b| val.mean_accuracy > b.val_accuracy) {
            best = Some(Checkpoint { network: net.clone(), train_config: cfg.clone(), epoch, val_accuracy: val.mean_accuracy });
        }
        history.push(record);
    }
    let last_val = history.last().map_or(0.0, |h| h.val_acc);
    let last = Checkpoint { network: net, train_config: cfg.clone(), epoch: cfg.epochs - 1, val_accuracy: last_val };
    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        last,
        history,
        train_episode_accuracies,
        train_episode_losses,
    })
}

/// Test-phase evaluation of a network with the shape and case in `cfg`.
pub fn evaluate(net: &Network<f32>, source: &dyn EpisodeSource, cfg: &TrainConfig) -> Result<EvalResult, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let spec = cfg.episode_spec(Phase::Test);
    run_eval(net, source, &spec, cfg.test_episodes, cfg.seed, Stream::Evaluation, TEST_MIX_BASE)
}

/// Evaluates the same network with each support size in `shots`.
pub fn sweep_shots(
    net: &Network<f32>,
    source: &dyn EpisodeSource,
    cfg: &TrainConfig,
    shots: &[usize],
) -> Result<Vec<(usize, EvalResult)>, TrainError> {
    shots
        .iter()
        .map(|&k| {
            let cfg = TrainConfig { k_shot: k, ..cfg.clone() };
            Ok((k, evaluate(net, source, &cfg)?))
        })
        .collect()
}

/// One row of a results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case: String,
    pub architecture: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub mean_acc: f64,
    pub ci95: f64,
    pub core_only_acc: f64,
    pub episodes: usize,
}

impl ResultRow {
    pub fn new(cfg: &TrainConfig, result: &EvalResult) -> Self {
        Self {
            case: cfg.case.name().into(),
            architecture: cfg.arch.name().into(),
            n_way: cfg.n_way,
            k_shot: cfg.k_shot,
            mean_acc: result.mean_accuracy,
            ci95: result.ci95_halfwidth,
            core_only_acc: result.core_only_accuracy,
            episodes: result.per_episode_accuracies.len(),
        }
    }
}

/// CSV text: a `# ` line carrying `provenance` as JSON, a header, then the rows.
pub fn results_csv(provenance: &serde_json::Value, rows: &[ResultRow]) -> String {
    let mut out = Vec::new();
    writeln!(out, "# {provenance}").expect("writing to a Vec");
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("flush to a Vec")).expect("CSV is UTF-8")
}
