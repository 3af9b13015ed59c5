//! Deposition quality metrics and model diagnostics.

use serde::{Deserialize, Serialize};

use crate::control::{BuildRecord, Mode};
use crate::error::{Error, Result};
use crate::geometry::{accumulate_layer, edge_mask, HeightProfile, LayerTrace};
use crate::linalg::{norm, spectral_radius};
use crate::models::{predict, rollout_states, state_matrix, ModelParams, ModelState};
use crate::plant::{ProcessInput, ProcessOutput};

/// Population standard deviation by the corrected two-pass algorithm.
fn population_sd(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let rough = sum / n;
    let mean = rough + values.clone().map(|v| v - rough).sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(var.sqrt())
}

/// `(height SD, width SD)` of a layer, optionally ignoring samples within
/// `margin` of either wall end.
pub fn layer_sd(trace: &LayerTrace, length: f64, margin: f64, exclude_edges: bool) -> Result<(f64, f64)> {
    let positions = trace.positions();
    let mask = if exclude_edges {
        edge_mask(&positions, length, margin)
    } else {
        vec![false; positions.len()]
    };
    let kept: Vec<ProcessOutput> = trace
        .iter()
        .zip(mask)
        .filter(|(_, edge)| !edge)
        .map(|(x, _)| x.y)
        .collect();
    let h = population_sd(kept.iter().map(|y| y.dh)).ok_or(Error::EmptyAfterMask)?;
    let w = population_sd(kept.iter().map(|y| y.w)).ok_or(Error::EmptyAfterMask)?;
    Ok((h, w))
}

/// Which height signal the report scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeightMetric {
    /// Top-surface height after the layer, `h_{i-1}(s_k) + dh_k`.
    #[default]
    Surface,
    /// The layer's own height increment `dh_k`.
    Increment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Edge region excluded from the `_ex` statistics, mm.
    pub margin: f64,
    pub height_metric: HeightMetric,
    /// Score the sensor record instead of the noise-free deposit.
    pub use_measured: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            margin: 5.0,
            height_metric: HeightMetric::Surface,
            use_measured: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerQuality {
    pub layer: usize,
    pub height_sd: f64,
    pub width_sd: f64,
    pub height_sd_ex: f64,
    pub width_sd_ex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub mode: Mode,
    pub seed: u64,
    pub layers: Vec<LayerQuality>,
    /// Across-layer means; `layer` is 0.
    pub average: LayerQuality,
}

/// Replaces each sample's height increment by the surface height it leaves
/// behind on top of `below` (wall frame).
pub fn surface_trace(trace: &LayerTrace, below: &HeightProfile) -> Result<LayerTrace> {
    let mut out = LayerTrace::new(trace.layer, trace.t_s, trace.length, trace.direction);
    for mut x in trace.iter() {
        let h = below.interpolate(trace.direction.to_wall(x.s, trace.length))?;
        x.y.dh += h;
        out.push(x);
    }
    Ok(out)
}

/// Per-layer and build-average height and width SDs, with and without
/// the edge regions.
pub fn build_report(build: &BuildRecord, cfg: &ReportConfig) -> Result<BuildReport> {
    let first = build
        .layers
        .first()
        .ok_or_else(|| Error::invalid("build has no completed layer"))?;
    let length = first.truth.length;
    let mut below = HeightProfile::substrate(length, build.profile.spacing())?;
    let mut layers = Vec::with_capacity(build.layers.len());
    for rec in &build.layers {
        let trace = if cfg.use_measured { &rec.measured } else { &rec.truth };
        let scored = match cfg.height_metric {
            HeightMetric::Surface => surface_trace(trace, &below)?,
            HeightMetric::Increment => trace.clone(),
        };
        below = accumulate_layer(&below, trace)?;
        let (height_sd, width_sd) = layer_sd(&scored, length, cfg.margin, false)?;
        let (height_sd_ex, width_sd_ex) = layer_sd(&scored, length, cfg.margin, true)?;
        layers.push(LayerQuality {
            layer: rec.layer,
            height_sd,
            width_sd,
            height_sd_ex,
            width_sd_ex,
        });
    }
    let m = layers.len() as f64;
    let mean = |f: fn(&LayerQuality) -> f64| layers.iter().map(f).sum::<f64>() / m;
    let average = LayerQuality {
        layer: 0,
        height_sd: mean(|q| q.height_sd),
        width_sd: mean(|q| q.width_sd),
        height_sd_ex: mean(|q| q.height_sd_ex),
        width_sd_ex: mean(|q| q.width_sd_ex),
    };
    Ok(BuildReport {
        mode: build.mode,
        seed: build.seed,
        layers,
        average,
    })
}

/// Spectral radius of the state matrix at each `(x_k, u_k)`.
pub fn spectral_radius_trace(
    p: &ModelParams,
    states: &[ModelState],
    inputs: &[ProcessInput],
) -> Result<Vec<f64>> {
    if states.len() != inputs.len() {
        return Err(Error::invalid("state and input trajectories differ in length"));
    }
    states
        .iter()
        .zip(inputs)
        .map(|(x, u)| spectral_radius(&state_matrix(p, x, *u)?))
        .collect()
}

/// Spectral radii along the model's own trajectory under a layer's applied
/// inputs, from the zero state.
pub fn layer_spectral_radii(p: &ModelParams, trace: &LayerTrace) -> Result<Vec<f64>> {
    let inputs: Vec<ProcessInput> = trace.time_order().map(|x| x.u).collect();
    let (_, states) = rollout_states(p, &inputs)?;
    spectral_radius_trace(p, &states, &inputs)
}

/// Hidden-state norm after each step, per layer, as logged by the
/// controller. Layers of modes without a neural model yield empty vectors.
pub fn state_norm_trace(build: &BuildRecord) -> Vec<Vec<f64>> {
    build
        .layers
        .iter()
        .map(|l| l.steps.iter().filter_map(|s| s.state_norm).collect())
        .collect()
}

/// `‖x_{k+1}‖` along the model's trajectory under the given inputs.
pub fn rollout_state_norms(p: &ModelParams, inputs: &[ProcessInput]) -> Result<Vec<f64>> {
    let mut st = ModelState::zero(p);
    let mut out = Vec::with_capacity(inputs.len());
    for u in inputs {
        st = predict(p, &st, *u)?.0;
        out.push(norm(st.hidden()));
    }
    Ok(out)
}

/// Smallest `k >= 1` such that every later step-to-step change is below
/// `tol`; `diffs[j]` is the change into step `j + 2`.
fn settle_index(diffs: &[f64], tol: f64) -> usize {
    diffs.iter().rposition(|d| *d >= tol).map_or(1, |j| j + 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub y_inf: ProcessOutput,
    pub converged: bool,
    /// Step after which every output change stays below the tolerance.
    pub settle_step: usize,
}

/// Drives the model from the zero state with constant `u` for `horizon`
/// steps. Converged iff `‖y_k - y_{k-1}‖ < tol` over the final 10%.
pub fn steady_state_check(p: &ModelParams, u: ProcessInput, horizon: usize, tol: f64) -> Result<SteadyState> {
    if horizon < 100 {
        return Err(Error::invalid("steady-state horizon must be at least 100 steps"));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let mut st = ModelState::zero(p);
    let mut ys = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (next, y) = predict(p, &st, u)?;
        st = next;
        ys.push(y);
    }
    let diffs: Vec<f64> = ys
        .windows(2)
        .map(|w| (w[1].dh - w[0].dh).hypot(w[1].w - w[0].w))
        .collect();
    let tail = horizon.div_ceil(10);
    let converged = diffs[diffs.len() - tail.min(diffs.len())..].iter().all(|d| *d < tol);
    Ok(SteadyState {
        y_inf: *ys.last().expect("horizon is positive"),
        converged,
        settle_step: settle_index(&diffs, tol),
    })
}
