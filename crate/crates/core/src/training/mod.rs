//! Dataset splitting, BPTT losses, Adam training and error statistics.

mod adam;
mod finetune;
pub mod gradcheck;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LayerTrace;
use crate::models::{
    self, model_init_with, rollout, Arch, LogLogModel, ModelParams, NormStats, NARX_HIDDEN,
};
use crate::plant::{ProcessInput, ProcessOutput};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use finetune::{fine_tune, FineTuneConfig, FineTuneOutcome};

/// Which side of the split a trace belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub traces: Vec<LayerTrace>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &LayerTrace> + Clone {
        self.part(Split::Train)
    }

    pub fn validation(&self) -> impl Iterator<Item = &LayerTrace> + Clone {
        self.part(Split::Validation)
    }

    pub fn part(&self, which: Split) -> impl Iterator<Item = &LayerTrace> + Clone {
        self.traces
            .iter()
            .zip(&self.split)
            .filter(move |(_, s)| **s == which)
            .map(|(t, _)| t)
    }
}

/// Random permutation by seed; the first `ceil(ratio * N)` traces (at most
/// `N - 1`) go to training.
pub fn split_dataset(traces: Vec<LayerTrace>, ratio: f64, seed: u64) -> Result<Dataset> {
    let n = traces.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 traces to split, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid("split ratio must lie in (0, 1)"));
    }
    let n_train = ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Validation; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    Ok(Dataset { traces, split })
}

/// Per-epoch record of training progress.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<usize>,
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl LossHistory {
    pub fn push(&mut self, epoch: usize, train: f64, val: f64) {
        self.epochs.push(epoch);
        self.train_mse.push(train);
        self.val_mse.push(val);
    }

    pub fn best_val(&self) -> Option<f64> {
        self.epochs
            .iter()
            .position(|e| *e == self.best_epoch)
            .map(|i| self.val_mse[i])
    }
}

/// One trace in normalized units, in time order.
#[derive(Debug, Clone)]
pub(crate) struct Sequence {
    pub id: usize,
    pub inputs: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
}

pub(crate) fn prepare<'a>(
    norm: &NormStats,
    traces: impl IntoIterator<Item = &'a LayerTrace>,
) -> Vec<Sequence> {
    traces
        .into_iter()
        .enumerate()
        .map(|(id, t)| {
            let (inputs, targets) = t
                .time_order()
                .map(|x| (norm.normalize_input(x.u), norm.normalize_output(x.y)))
                .unzip();
            Sequence { id, inputs, targets }
        })
        .collect()
}

fn sample_count(seqs: &[Sequence]) -> usize {
    seqs.iter().map(|s| s.inputs.len()).sum()
}

/// Mean squared normalized error, `sum / (2 N)`, and its gradient.
pub(crate) fn sequences_loss_grad(
    p: &ModelParams,
    seqs: &[&Sequence],
    truncation: usize,
) -> Result<(f64, Vec<f64>)> {
    let total: usize = seqs.iter().map(|s| s.inputs.len()).sum();
    if total == 0 {
        return Err(Error::invalid("no samples to evaluate the loss on"));
    }
    let scale = 1.0 / (2.0 * total as f64);
    let mut grad = vec![0.0; p.theta.len()];
    let mut sse = 0.0;
    for s in seqs {
        let part = models::sequence_gradient(p, &s.inputs, &s.targets, scale, truncation, &mut grad);
        if !part.is_finite() {
            return Err(Error::numeric(format!("non-finite loss on trace {}", s.id)));
        }
        sse += part;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("non-finite gradient"));
    }
    Ok((sse * scale, grad))
}

pub(crate) fn sequences_mse(p: &ModelParams, seqs: &[Sequence]) -> Result<f64> {
    let total = sample_count(seqs);
    if total == 0 {
        return Err(Error::invalid("no samples to evaluate the loss on"));
    }
    let mut sse = 0.0;
    for s in seqs {
        let part = models::sequence_sse(p, &s.inputs, &s.targets);
        if !part.is_finite() {
            return Err(Error::numeric(format!("non-finite loss on trace {}", s.id)));
        }
        sse += part;
    }
    Ok(sse / (2.0 * total as f64))
}

/// MSE over all normalized output samples of `traces` (each rolled out from
/// the zero state) and its gradient with respect to `p.theta`.
pub fn loss_and_gradients<'a>(
    p: &ModelParams,
    traces: impl IntoIterator<Item = &'a LayerTrace>,
    truncation: usize,
) -> Result<(f64, Vec<f64>)> {
    if !p.arch.is_recurrent() && p.arch != Arch::Narx {
        return Err(Error::Unsupported(format!("{} is not trained by gradient", p.arch)));
    }
    let seqs = prepare(&p.norm, traces);
    if seqs.is_empty() {
        return Err(Error::invalid("loss needs at least one trace"));
    }
    let refs: Vec<&Sequence> = seqs.iter().collect();
    sequences_loss_grad(p, &refs, truncation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "traces")]
pub enum BatchStrategy {
    /// Every training trace in every update.
    Full,
    /// Shuffled mini-batches of this many traces.
    Traces(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub batch: BatchStrategy,
    pub seed: u64,
    /// BPTT window in steps; 0 back-propagates through the full sequence.
    pub truncation: usize,
    /// Epochs between validation evaluations (and checkpoint decisions).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            adam: AdamConfig::default(),
            batch: BatchStrategy::Full,
            seed: 0,
            truncation: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        if self.batch == BatchStrategy::Traces(0) {
            return Err(Error::invalid("mini-batch size must be positive"));
        }
        self.adam.validate()
    }
}

/// Trains a fresh model of the given family and size. Normalization is fit
/// on the training split; the returned parameters are those with the lowest
/// validation MSE seen.
pub fn train(arch: Arch, n: usize, data: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, LossHistory)> {
    cfg.validate()?;
    let norm = NormStats::fit(data.train().flat_map(|t| t.time_order()).map(|x| (x.u, x.y)))?;
    let hidden = if arch == Arch::Narx { NARX_HIDDEN } else { n };
    let mut p = model_init_with(arch, n, hidden, cfg.seed)?;
    p.norm = norm;
    train_from(p, data, cfg)
}

/// Continues training from given parameters (normalization kept).
pub fn train_from(mut p: ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, LossHistory)> {
    cfg.validate()?;
    p.validate()?;
    let train_seqs = prepare(&p.norm, data.train());
    let val_seqs = prepare(&p.norm, data.validation());
    if train_seqs.is_empty() || val_seqs.is_empty() {
        return Err(Error::invalid("training needs nonempty train and validation splits"));
    }
    let mut history = LossHistory::default();
    let mut adam = AdamState::new(p.theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let diverged = |epoch: usize, reason: String, history: &LossHistory| Error::Diverged {
        epoch,
        reason,
        history: history.clone(),
    };

    for epoch in 1..=cfg.epochs {
        let evaluate = epoch % cfg.eval_every == 0 || epoch == 1 || epoch == cfg.epochs;
        let mut train_loss = None;
        match cfg.batch {
            BatchStrategy::Full => {
                let refs: Vec<&Sequence> = train_seqs.iter().collect();
                let (loss, grad) = sequences_loss_grad(&p, &refs, cfg.truncation)
                    .map_err(|e| diverged(epoch, e.to_string(), &history))?;
                train_loss = Some(loss);
                if evaluate {
                    record(&p, loss, &val_seqs, epoch, &mut history, &mut best)
                        .map_err(|e| diverged(epoch, e.to_string(), &history))?;
                }
                adam_step(&mut p.theta, &grad, &mut adam, &cfg.adam);
            }
            BatchStrategy::Traces(size) => {
                if evaluate {
                    let loss = sequences_mse(&p, &train_seqs)
                        .map_err(|e| diverged(epoch, e.to_string(), &history))?;
                    train_loss = Some(loss);
                    record(&p, loss, &val_seqs, epoch, &mut history, &mut best)
                        .map_err(|e| diverged(epoch, e.to_string(), &history))?;
                }
                order.shuffle(&mut rng);
                for chunk in order.chunks(size) {
                    let refs: Vec<&Sequence> = chunk.iter().map(|&i| &train_seqs[i]).collect();
                    let (_, grad) = sequences_loss_grad(&p, &refs, cfg.truncation)
                        .map_err(|e| diverged(epoch, e.to_string(), &history))?;
                    adam_step(&mut p.theta, &grad, &mut adam, &cfg.adam);
                }
            }
        }
        if let Some(loss) = train_loss {
            if !loss.is_finite() {
                return Err(diverged(epoch, "non-finite training loss".into(), &history));
            }
        }
        if p.theta.iter().any(|v| !v.is_finite()) {
            return Err(diverged(epoch, "non-finite parameters".into(), &history));
        }
    }
    // Parameters after the final update have not been scored yet.
    let final_train = sequences_mse(&p, &train_seqs).map_err(|e| diverged(cfg.epochs, e.to_string(), &history))?;
    record(&p, final_train, &val_seqs, cfg.epochs + 1, &mut history, &mut best)
        .map_err(|e| diverged(cfg.epochs, e.to_string(), &history))?;
    if let Some((_, theta)) = best {
        p.theta = theta;
    }
    Ok((p, history))
}

fn record(
    p: &ModelParams,
    train_loss: f64,
    val_seqs: &[Sequence],
    epoch: usize,
    history: &mut LossHistory,
    best: &mut Option<(f64, Vec<f64>)>,
) -> Result<()> {
    let val = sequences_mse(p, val_seqs)?;
    history.push(epoch, train_loss, val);
    if best.as_ref().is_none_or(|(b, _)| val < *b) {
        *best = Some((val, p.theta.clone()));
        history.best_epoch = epoch;
    }
    Ok(())
}

/// Mean and 95th-percentile absolute errors per channel `(dh, w)`, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: [f64; 2],
    pub p95: [f64; 2],
    pub count: usize,
}

/// Nearest-rank percentile: the `ceil(q N)`-th smallest value.
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

pub fn error_stats(pairs: impl IntoIterator<Item = (ProcessOutput, ProcessOutput)>) -> Result<ErrorStats> {
    let (dh, w): (Vec<f64>, Vec<f64>) = pairs
        .into_iter()
        .map(|(pred, truth)| ((pred.dh - truth.dh).abs(), (pred.w - truth.w).abs()))
        .unzip();
    if dh.is_empty() {
        return Err(Error::invalid("error statistics need at least one sample"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ErrorStats {
        mae: [mean(&dh), mean(&w)],
        p95: [percentile_nearest_rank(&dh, 0.95)?, percentile_nearest_rank(&w, 0.95)?],
        count: dh.len(),
    })
}

/// Free-run prediction errors of a neural model, each trace rolled out from
/// the zero state, in denormalized units.
pub fn evaluate_errors<'a>(
    p: &ModelParams,
    traces: impl IntoIterator<Item = &'a LayerTrace>,
) -> Result<ErrorStats> {
    let mut pairs = Vec::new();
    for t in traces {
        let samples: Vec<_> = t.time_order().collect();
        let inputs: Vec<ProcessInput> = samples.iter().map(|x| x.u).collect();
        let pred = rollout(p, &inputs)?;
        pairs.extend(pred.into_iter().zip(samples.iter().map(|x| x.y)));
    }
    error_stats(pairs)
}

pub fn evaluate_loglog<'a>(
    m: &LogLogModel,
    traces: impl IntoIterator<Item = &'a LayerTrace>,
) -> Result<ErrorStats> {
    let mut pairs = Vec::new();
    for t in traces {
        for x in t.iter() {
            pairs.push((m.predict(x.u)?, x.y));
        }
    }
    error_stats(pairs)
}

#[cfg(test)]
mod tests;
