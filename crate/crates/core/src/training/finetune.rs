use serde::{Deserialize, Serialize};

use super::{adam_step, prepare, sequences_loss_grad, AdamConfig, AdamState, Sequence};
use crate::error::{Error, Result};
use crate::geometry::LayerTrace;
use crate::models::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    /// Weight of the `||theta - theta_i||^2` drift penalty.
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Number of most recent layers used as fine-tuning data.
    pub window: usize,
    pub truncation: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 200,
            learning_rate: 1e-4,
            window: 1,
            truncation: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("fine-tune lambda must be finite and >= 0"));
        }
        if self.window == 0 {
            return Err(Error::invalid("fine-tune window must be at least 1"));
        }
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
        .validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome {
    pub params: ModelParams,
    /// Regularized objective at the starting parameters.
    pub initial_loss: f64,
    /// Regularized objective at the returned parameters.
    pub final_loss: f64,
}

/// Minimizes `MSE(theta) + lambda ||theta - theta_i||^2` over the given
/// layers by Adam from `theta_i`, with normalization frozen. Layers are
/// replayed in deposition order. The iterate with the lowest objective is
/// returned, so the result never scores worse than the starting point.
pub fn fine_tune<'a>(
    start: &ModelParams,
    layers: impl IntoIterator<Item = &'a LayerTrace>,
    cfg: &FineTuneConfig,
) -> Result<FineTuneOutcome> {
    cfg.validate()?;
    start.validate()?;
    let seqs = prepare(&start.norm, layers);
    if seqs.iter().all(|s| s.inputs.is_empty()) {
        return Err(Error::invalid("fine-tuning needs a nonempty layer"));
    }
    let refs: Vec<&Sequence> = seqs.iter().collect();
    let anchor = &start.theta;
    let objective = |p: &ModelParams| -> Result<(f64, Vec<f64>)> {
        let (mse, mut grad) = sequences_loss_grad(p, &refs, cfg.truncation)?;
        let mut drift = 0.0;
        for ((g, t), a) in grad.iter_mut().zip(&p.theta).zip(anchor) {
            let d = t - a;
            drift += d * d;
            *g += 2.0 * cfg.lambda * d;
        }
        Ok((mse + cfg.lambda * drift, grad))
    };

    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut p = start.clone();
    let mut adam = AdamState::new(p.theta.len());
    let (initial_loss, mut grad) = objective(&p)?;
    let mut best = (initial_loss, p.theta.clone());
    for _ in 0..cfg.epochs {
        adam_step(&mut p.theta, &grad, &mut adam, &adam_cfg);
        let (loss, g) = objective(&p)?;
        if loss < best.0 {
            best = (loss, p.theta.clone());
        }
        grad = g;
    }
    p.theta = best.1;
    Ok(FineTuneOutcome {
        params: p,
        initial_loss,
        final_loss: best.0,
    })
}
