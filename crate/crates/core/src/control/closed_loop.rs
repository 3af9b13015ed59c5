//! Closed-loop builds on the synthetic plant.

use serde::{Deserialize, Serialize};

use super::{compute_target, one_step_control, ControllerConfig, TargetProfile};
use crate::error::{Error, Result};
use crate::geometry::{accumulate_layer, flip_trace, Direction, HeightProfile, LayerTrace};
use crate::linalg::norm;
use crate::models::{LogLogModel, ModelParams, ModelState};
use crate::plant::{
    interlayer_wait, run_layer_with_truth, InputSource, PlantConfig, PlantState, ProcessInput,
    ProcessOutput, StepContext,
};
use crate::training::fine_tune;

/// Smallest height target handed to the log-log inversion, mm. The power
/// law has no preimage for non-positive increments.
pub const LOGLOG_MIN_TARGET: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    BaselineConstant,
    LoglogInverse,
    RnnOnestep,
    RnnAdaptive,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::BaselineConstant,
        Mode::LoglogInverse,
        Mode::RnnOnestep,
        Mode::RnnAdaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::BaselineConstant => "baseline-constant",
            Mode::LoglogInverse => "loglog-inverse",
            Mode::RnnOnestep => "rnn-onestep",
            Mode::RnnAdaptive => "rnn-adaptive",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline-constant" | "baseline" => Ok(Mode::BaselineConstant),
            "loglog-inverse" | "loglog" => Ok(Mode::LoglogInverse),
            "rnn-onestep" | "rnn" => Ok(Mode::RnnOnestep),
            "rnn-adaptive" | "adaptive" => Ok(Mode::RnnAdaptive),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected baseline-constant, loglog-inverse, rnn-onestep or rnn-adaptive)"
            ))),
        }
    }
}

/// The model a closed-loop mode acts on.
#[derive(Debug, Clone, Copy)]
pub enum ControlModel<'a> {
    None,
    LogLog(&'a LogLogModel),
    Neural(&'a ModelParams),
}

/// Per-step controller bookkeeping alongside the plant samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub target: ProcessOutput,
    /// Model prediction of this step's output at the applied input.
    pub predicted: Option<ProcessOutput>,
    /// Norm of the model's hidden state after the step.
    pub state_norm: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub layer: usize,
    /// Sensor record (noisy, possibly delayed).
    pub measured: LayerTrace,
    /// Noise-free deposit.
    pub truth: LayerTrace,
    pub steps: Vec<StepRecord>,
    /// Parameters the controller used during this layer (adaptive mode).
    pub theta: Option<Vec<f64>>,
    /// Fine-tuning objective before and after the update that followed
    /// this layer.
    pub fine_tune_loss: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildRecord {
    pub mode: Mode,
    pub seed: u64,
    pub requested_layers: usize,
    pub layers: Vec<LayerRecord>,
    /// Set when a layer aborted; `layers` holds the completed ones.
    pub failure: Option<String>,
    /// True height profile of the finished build.
    pub profile: HeightProfile,
}

impl BuildRecord {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.layers.len() == self.requested_layers
    }
}

/// [`run_closed_loop_with_target`] with uniform slicing at the configured
/// height target.
pub fn run_closed_loop(
    plant_cfg: &PlantConfig,
    model: ControlModel<'_>,
    ctrl: &ControllerConfig,
    n_layers: usize,
    mode: Mode,
) -> Result<BuildRecord> {
    let target = TargetProfile::uniform(ctrl.target.dh);
    run_closed_loop_with_target(plant_cfg, model, ctrl, n_layers, mode, &target)
}

/// Deposits `n_layers` layers under `mode`.
///
/// Every layer starts from the zero model state and the nominal input. The
/// height target of each step comes from the measured profile of the layers
/// below. In adaptive mode the model is fine-tuned between layers on the
/// most recent measured layers, each update starting from the previous one.
pub fn run_closed_loop_with_target(
    plant_cfg: &PlantConfig,
    model: ControlModel<'_>,
    ctrl: &ControllerConfig,
    n_layers: usize,
    mode: Mode,
    target: &TargetProfile,
) -> Result<BuildRecord> {
    ctrl.validate()?;
    if n_layers == 0 {
        return Err(Error::invalid("a build needs at least one layer"));
    }
    let wanted_rate = 1.0 / plant_cfg.t_s;
    if (wanted_rate - ctrl.rate_hz).abs() > 1e-9 * wanted_rate {
        return Err(Error::invalid(format!(
            "controller rate {} Hz does not match the plant sampling period {} s",
            ctrl.rate_hz, plant_cfg.t_s
        )));
    }
    let mut neural = match (mode, model) {
        (Mode::BaselineConstant, _) => None,
        (Mode::LoglogInverse, ControlModel::LogLog(_)) => None,
        (Mode::RnnOnestep | Mode::RnnAdaptive, ControlModel::Neural(p)) => {
            p.validate()?;
            Some(p.clone())
        }
        (mode, _) => {
            return Err(Error::invalid(format!(
                "mode {mode} needs a {} model",
                if mode == Mode::LoglogInverse { "log-log" } else { "neural" }
            )))
        }
    };
    if mode == Mode::RnnAdaptive {
        ctrl.fine_tune.validate()?;
    }

    let mut plant = PlantState::new(plant_cfg)?;
    let mut measured_profile = HeightProfile::substrate(plant_cfg.length, plant_cfg.grid_spacing)?;
    let mut record = BuildRecord {
        mode,
        seed: plant_cfg.seed,
        requested_layers: n_layers,
        layers: Vec::with_capacity(n_layers),
        failure: None,
        profile: plant.profile.clone(),
    };

    for layer in 1..=n_layers {
        let direction = Direction::for_layer(layer);
        let below = measured_profile.in_path_frame(direction);
        let mut steps = Vec::new();
        let mut u_prev = ctrl.nominal_input;
        let mut state = neural.as_ref().map(ModelState::zero);

        let mut controller = |ctx: &StepContext| -> Result<ProcessInput> {
            let y_star = compute_target(layer, ctx.s, target, &below, ctrl.target.w, direction)?;
            let (u, step) = match (mode, model) {
                (Mode::BaselineConstant, _) => (
                    ctrl.nominal_input,
                    StepRecord {
                        target: y_star,
                        predicted: None,
                        state_norm: None,
                        degenerate: false,
                    },
                ),
                (Mode::LoglogInverse, ControlModel::LogLog(m)) => {
                    let aim = ProcessOutput::new(y_star.dh.max(LOGLOG_MIN_TARGET), y_star.w);
                    let u_inv = m.invert_unclamped(aim)?;
                    let (lo, hi) = ctrl.increment_box(u_prev)?;
                    let du = [
                        (u_inv.v_t - u_prev.v_t).clamp(lo[0], hi[0]),
                        (u_inv.v_w - u_prev.v_w).clamp(lo[1], hi[1]),
                    ];
                    let u = ctrl.apply_increment(u_prev, du);
                    let step = StepRecord {
                        target: y_star,
                        predicted: Some(m.predict(u)?),
                        state_norm: None,
                        degenerate: false,
                    };
                    (u, step)
                }
                _ => {
                    let p = neural.as_ref().expect("neural mode has parameters");
                    let st = state.as_mut().expect("neural mode has a state");
                    let out = one_step_control(p, st, u_prev, y_star, ctrl)?;
                    *st = out.next_state;
                    let step = StepRecord {
                        target: y_star,
                        predicted: Some(out.y_hat),
                        state_norm: Some(norm(st.hidden())),
                        degenerate: out.degenerate,
                    };
                    (out.u, step)
                }
            };
            if !(u.v_t.is_finite() && u.v_w.is_finite()) {
                return Err(Error::numeric(format!("non-finite command at step {}", ctx.k)));
            }
            u_prev = u;
            steps.push(step);
            Ok(u)
        };

        let run = run_layer_with_truth(&mut plant, plant_cfg, InputSource::Controller(&mut controller));
        let (measured, truth) = match run {
            Ok(traces) => traces,
            Err(e) => {
                record.failure = Some(format!("layer {layer} aborted: {e}"));
                break;
            }
        };
        measured_profile = accumulate_layer(&measured_profile, &measured)?;
        interlayer_wait(&mut plant, plant_cfg, ctrl.wait_s)?;

        let theta = (mode == Mode::RnnAdaptive).then(|| neural.as_ref().map(|p| p.theta.clone())).flatten();
        record.layers.push(LayerRecord {
            layer,
            measured,
            truth,
            steps,
            theta,
            fine_tune_loss: None,
        });

        if mode == Mode::RnnAdaptive && layer < n_layers {
            let p = neural.as_mut().expect("adaptive mode has parameters");
            let window = ctrl.fine_tune.window.min(record.layers.len());
            let recent: Vec<LayerTrace> = record.layers[record.layers.len() - window..]
                .iter()
                .map(|l| flip_trace(&l.measured))
                .collect();
            match fine_tune(p, &recent, &ctrl.fine_tune) {
                Ok(out) => {
                    record.layers.last_mut().expect("layer just pushed").fine_tune_loss =
                        Some((out.initial_loss, out.final_loss));
                    *p = out.params;
                }
                Err(e) => {
                    record.failure = Some(format!("fine-tuning after layer {layer} failed: {e}"));
                    break;
                }
            }
        }
    }
    record.profile = plant.profile.clone();
    Ok(record)
}
