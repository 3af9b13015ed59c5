//! Layer targets and the constrained one-step-ahead predictive controller.

mod closed_loop;
pub mod qp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HeightProfile;
use crate::models::{input_jacobian, predict, ModelParams, ModelState};
use crate::plant::{ProcessInput, ProcessOutput, NOMINAL_INPUT, NOMINAL_OUTPUT};
use crate::training::FineTuneConfig;

pub use closed_loop::{
    run_closed_loop, run_closed_loop_with_target, BuildRecord, ControlModel, LayerRecord, Mode,
    StepRecord, LOGLOG_MIN_TARGET,
};
pub use qp::{Activity, BoxQp, QpSolution};

/// Admissible process inputs, mm/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputBounds {
    pub v_t_min: f64,
    pub v_t_max: f64,
    pub v_w_min: f64,
    pub v_w_max: f64,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self {
            v_t_min: 2.0,
            v_t_max: 15.0,
            v_w_min: 21.2,
            v_w_max: 105.8,
        }
    }
}

impl InputBounds {
    pub fn lower(&self) -> [f64; 2] {
        [self.v_t_min, self.v_w_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.v_t_max, self.v_w_max]
    }

    pub fn contains(&self, u: ProcessInput) -> bool {
        (self.v_t_min..=self.v_t_max).contains(&u.v_t) && (self.v_w_min..=self.v_w_max).contains(&u.v_w)
    }

    pub fn clamp(&self, u: ProcessInput) -> ProcessInput {
        ProcessInput::new(
            u.v_t.clamp(self.v_t_min, self.v_t_max),
            u.v_w.clamp(self.v_w_min, self.v_w_max),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.v_t_min, self.v_t_max, self.v_w_min, self.v_w_max];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite input bound"));
        }
        if !(0.0 < self.v_t_min && self.v_t_min < self.v_t_max) {
            return Err(Error::invalid("need 0 < v_t_min < v_t_max"));
        }
        if !(0.0 <= self.v_w_min && self.v_w_min < self.v_w_max) {
            return Err(Error::invalid("need 0 <= v_w_min < v_w_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Nominal bead geometry `(dh*, w*)`.
    pub target: ProcessOutput,
    /// Diagonal of the output weight `W`.
    pub output_weight: [f64; 2],
    /// Diagonal of the increment penalty `Lambda` on `(d v_T, d v_W)`.
    pub regularization: [f64; 2],
    /// Largest admissible `|d v_T|`, `|d v_W|` per step, mm/s.
    pub rate_limit: [f64; 2],
    pub bounds: InputBounds,
    /// Step size `alpha` in `u_k = u_{k-1} + alpha d u`.
    pub step_size: f64,
    pub rate_hz: f64,
    pub wait_s: f64,
    /// Input used by the constant baseline and at every layer start.
    pub nominal_input: ProcessInput,
    /// Optional wire-feed command resolution, mm/s.
    pub wire_quantum: Option<f64>,
    /// Between-layer model update used by the adaptive mode.
    pub fine_tune: FineTuneConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            target: NOMINAL_OUTPUT,
            output_weight: [1.0, 1.0],
            regularization: [0.01, 0.1],
            rate_limit: [2.0, 4.23],
            bounds: InputBounds::default(),
            step_size: 0.3,
            rate_hz: 10.0,
            wait_s: 45.0,
            nominal_input: NOMINAL_INPUT,
            wire_quantum: None,
            fine_tune: FineTuneConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        let nonneg = self.output_weight.iter().chain(&self.regularization);
        if nonneg.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("weights and regularization must be finite and >= 0"));
        }
        if self.rate_limit.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("rate limits must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::invalid("step size must lie in (0, 1]"));
        }
        if !(self.rate_hz > 0.0 && self.wait_s >= 0.0 && self.wait_s.is_finite()) {
            return Err(Error::invalid("need a positive rate and a non-negative wait"));
        }
        if !self.bounds.contains(self.nominal_input) {
            return Err(Error::invalid("nominal input lies outside the bounds"));
        }
        if let Some(q) = self.wire_quantum {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::invalid("wire quantum must be positive"));
            }
        }
        if !(self.target.dh.is_finite() && self.target.w.is_finite()) {
            return Err(Error::invalid("non-finite target"));
        }
        Ok(())
    }

    /// Box on `d u` at `u_prev`: the rate box intersected with the input box
    /// shifted by `u_prev`.
    pub fn increment_box(&self, u_prev: ProcessInput) -> Result<([f64; 2], [f64; 2])> {
        if !self.bounds.contains(u_prev) {
            return Err(Error::invalid(format!(
                "previous input ({}, {}) outside the bounds",
                u_prev.v_t, u_prev.v_w
            )));
        }
        let (lo_u, hi_u, prev) = (self.bounds.lower(), self.bounds.upper(), u_prev.to_array());
        let lo = [
            (-self.rate_limit[0]).max(lo_u[0] - prev[0]),
            (-self.rate_limit[1]).max(lo_u[1] - prev[1]),
        ];
        let hi = [
            self.rate_limit[0].min(hi_u[0] - prev[0]),
            self.rate_limit[1].min(hi_u[1] - prev[1]),
        ];
        Ok((lo, hi))
    }

    /// `u_prev + alpha du`, re-clamped to the bounds and quantized if
    /// configured. Quantization never leaves the bounds or the scaled rate
    /// box.
    pub fn apply_increment(&self, u_prev: ProcessInput, du: [f64; 2]) -> ProcessInput {
        let a = self.step_size;
        let u = self.bounds.clamp(ProcessInput::new(u_prev.v_t + a * du[0], u_prev.v_w + a * du[1]));
        match self.wire_quantum {
            None => u,
            Some(q) => {
                let reach = a * self.rate_limit[1];
                let lo = (u_prev.v_w - reach).max(self.bounds.v_w_min);
                let hi = (u_prev.v_w + reach).min(self.bounds.v_w_max);
                let nearest = (u.v_w / q).round() * q;
                let v_w = [nearest, nearest - q, nearest + q]
                    .into_iter()
                    .filter(|v| (lo..=hi).contains(v))
                    .min_by(|a, b| (a - u.v_w).abs().total_cmp(&(b - u.v_w).abs()))
                    .unwrap_or(u.v_w);
                ProcessInput::new(u.v_t, v_w)
            }
        }
    }
}

/// Target build height per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetProfile {
    /// Layer `i` targets `i * layer_height` everywhere.
    Uniform { layer_height: f64 },
    /// Explicit wall-frame target profile per layer, starting at layer 1.
    Sliced(Vec<HeightProfile>),
}

impl TargetProfile {
    pub fn uniform(layer_height: f64) -> Self {
        TargetProfile::Uniform { layer_height }
    }

    /// Target height of layer `layer` at wall-frame position `s_wall`.
    pub fn height(&self, layer: usize, s_wall: f64) -> Result<f64> {
        match self {
            TargetProfile::Uniform { layer_height } => Ok(layer as f64 * layer_height),
            TargetProfile::Sliced(profiles) => profiles
                .get(layer.wrapping_sub(1))
                .ok_or_else(|| Error::invalid(format!("no target slice for layer {layer}")))?
                .interpolate(s_wall),
        }
    }
}

/// `y*_k = (h*_i(s_k) - h_{i-1}(s_k), w*)`, with `prev` already expressed in
/// the traversal frame of layer `layer` and `s` a traversal-frame position.
pub fn compute_target(
    layer: usize,
    s: f64,
    target: &TargetProfile,
    prev: &HeightProfile,
    width: f64,
    direction: crate::geometry::Direction,
) -> Result<ProcessOutput> {
    let below = prev.interpolate(s)?;
    let s_wall = direction.to_wall(s, prev.length());
    Ok(ProcessOutput::new(target.height(layer, s_wall)? - below, width))
}

/// Result of one controller update.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub du: [f64; 2],
    pub u: ProcessInput,
    /// Prediction at `u_prev`, around which the model was linearized.
    pub y_bar: ProcessOutput,
    /// Prediction at the chosen `u`.
    pub y_hat: ProcessOutput,
    /// Model state after applying `u`.
    pub next_state: ModelState,
    pub jacobian: [[f64; 2]; 2],
    /// The QP was singular and `du = 0` was used.
    pub degenerate: bool,
    pub kkt_residual: f64,
}

/// Linearizes the model at `(state, u_prev)`, solves the box-constrained
/// weighted least-squares increment and applies the damped update.
pub fn one_step_control(
    p: &ModelParams,
    state: &ModelState,
    u_prev: ProcessInput,
    target: ProcessOutput,
    cfg: &ControllerConfig,
) -> Result<ControlStep> {
    let (_, y_bar) = predict(p, state, u_prev)?;
    let jacobian = input_jacobian(p, state, u_prev)?;
    let (lo, hi) = cfg.increment_box(u_prev)?;
    let e = [y_bar.dh - target.dh, y_bar.w - target.w];
    let qp = BoxQp::from_least_squares(jacobian, e, cfg.output_weight, cfg.regularization, lo, hi);
    let sol = qp.solve()?;
    let u = cfg.apply_increment(u_prev, sol.d);
    let (next_state, y_hat) = predict(p, state, u)?;
    Ok(ControlStep {
        du: sol.d,
        u,
        y_bar,
        y_hat,
        next_state,
        jacobian,
        degenerate: sol.degenerate,
        kkt_residual: qp.kkt_residual(sol.d),
    })
}

#[cfg(test)]
mod tests;
