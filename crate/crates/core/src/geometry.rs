//! Spatial bookkeeping of a thin-wall build.
//!
//! Positions along a layer are measured in the layer's own traversal frame:
//! `s = 0` at arc-on and `s = L` at arc-off. Height profiles live in the
//! wall frame, which coincides with the traversal frame of forward layers
//! and is mirrored for reverse layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{ProcessInput, ProcessOutput};

/// Default spacing of height-profile grids, mm.
pub const DEFAULT_GRID_SPACING: f64 = 0.5;

/// Default wall length, mm.
pub const DEFAULT_WALL_LENGTH: f64 = 110.0;

/// Tolerance for kinematic consistency of recorded positions, mm.
pub const POSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    /// Back-and-forth printing: odd layers run forward, even layers reverse.
    pub fn for_layer(layer: usize) -> Self {
        if layer % 2 == 1 {
            Direction::Forward
        } else {
            Direction::Reverse
        }
    }

    pub fn toggled(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }

    /// Maps a traversal-frame position onto the wall frame.
    pub fn to_wall(self, s: f64, length: f64) -> f64 {
        match self {
            Direction::Forward => s,
            Direction::Reverse => length - s,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            other => Err(Error::invalid(format!("unknown direction `{other}`"))),
        }
    }
}

/// `s + v_T * t_s`. Clamping at the wall end is the caller's job.
pub fn advance_position(s: f64, v_t: f64, t_s: f64) -> Result<f64> {
    if !(s.is_finite() && v_t.is_finite() && t_s.is_finite()) {
        return Err(Error::invalid("non-finite position, speed or period"));
    }
    if s < 0.0 || v_t < 0.0 || t_s <= 0.0 {
        return Err(Error::invalid(format!(
            "advance_position requires s >= 0, v_T >= 0, t_s > 0 (got {s}, {v_t}, {t_s})"
        )));
    }
    Ok(s + v_t * t_s)
}

/// Layer height on a uniform grid over `[0, L]` in the wall frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightProfile {
    spacing: f64,
    length: f64,
    heights: Vec<f64>,
    layer: usize,
}

impl HeightProfile {
    /// The all-zero layer-0 profile.
    pub fn substrate(length: f64, spacing: f64) -> Result<Self> {
        let points = grid_points(length, spacing)?;
        Ok(Self {
            spacing,
            length,
            heights: vec![0.0; points],
            layer: 0,
        })
    }

    pub fn from_heights(length: f64, spacing: f64, layer: usize, heights: Vec<f64>) -> Result<Self> {
        let points = grid_points(length, spacing)?;
        if heights.len() != points {
            return Err(Error::invalid(format!(
                "expected {points} heights for the grid, got {}",
                heights.len()
            )));
        }
        if heights.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(Error::invalid("heights must be finite and non-negative"));
        }
        Ok(Self {
            spacing,
            length,
            heights,
            layer,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    /// Grid position of point `i`; the last point is exactly `L`.
    pub fn grid_position(&self, i: usize) -> f64 {
        if i + 1 == self.heights.len() {
            self.length
        } else {
            i as f64 * self.spacing
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.heights.len()).map(|i| self.grid_position(i)).collect()
    }

    /// Linear interpolation; exact at grid points.
    pub fn interpolate(&self, s: f64) -> Result<f64> {
        if !s.is_finite() || s < 0.0 || s > self.length {
            return Err(Error::invalid(format!(
                "position {s} outside [0, {}]",
                self.length
            )));
        }
        let last = self.heights.len() - 1;
        let mut i = ((s / self.spacing).floor() as usize).min(last);
        while i > 0 && self.grid_position(i) > s {
            i -= 1;
        }
        while i < last && self.grid_position(i + 1) <= s {
            i += 1;
        }
        let x0 = self.grid_position(i);
        if s == x0 || i == last {
            return Ok(self.heights[i]);
        }
        let x1 = self.grid_position(i + 1);
        let frac = (s - x0) / (x1 - x0);
        Ok(self.heights[i] + frac * (self.heights[i + 1] - self.heights[i]))
    }

    /// The same profile seen from a layer traversed in `direction`.
    pub fn in_path_frame(&self, direction: Direction) -> Self {
        match direction {
            Direction::Forward => self.clone(),
            Direction::Reverse => {
                let mut out = self.clone();
                out.heights.reverse();
                out
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.heights.iter().sum::<f64>() / self.heights.len() as f64
    }
}

fn grid_points(length: f64, spacing: f64) -> Result<usize> {
    if !(length.is_finite() && spacing.is_finite()) || length <= 0.0 || spacing <= 0.0 {
        return Err(Error::invalid("grid length and spacing must be positive"));
    }
    let intervals = (length / spacing).round();
    if ((intervals * spacing) - length).abs() > 1e-9 * length.max(1.0) {
        return Err(Error::invalid(format!(
            "spacing {spacing} does not divide wall length {length}"
        )));
    }
    Ok(intervals as usize + 1)
}

/// One recorded timestep of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Step index within the layer.
    pub k: usize,
    /// Time since arc-on, s.
    pub t: f64,
    /// Traversal-frame position at the start of the step, mm.
    pub s: f64,
    pub u: ProcessInput,
    pub y: ProcessOutput,
}

/// The synchronized input/output record of one deposited layer.
///
/// Samples are stored in deposition order. A flipped trace keeps the same
/// storage and only changes how it is read back, so flipping twice returns
/// a bit-identical trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub t_s: f64,
    pub length: f64,
    pub direction: Direction,
    reflected: bool,
    samples: Vec<Sample>,
}

impl LayerTrace {
    pub fn new(layer: usize, t_s: f64, length: f64, direction: Direction) -> Self {
        Self {
            layer,
            t_s,
            length,
            direction,
            reflected: false,
            samples: Vec::new(),
        }
    }

    /// Builds a trace from samples listed in traversal order and checks the
    /// position invariants.
    pub fn from_samples(
        layer: usize,
        t_s: f64,
        length: f64,
        direction: Direction,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let trace = Self {
            layer,
            t_s,
            length,
            direction,
            reflected: false,
            samples,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn push(&mut self, sample: Sample) {
        debug_assert!(!self.reflected, "cannot append to a flipped trace");
        self.samples.push(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_flipped(&self) -> bool {
        self.reflected
    }

    /// Sample `i` in traversal order.
    pub fn get(&self, i: usize) -> Sample {
        if self.reflected {
            let mut sample = self.samples[self.samples.len() - 1 - i];
            sample.s = self.length - sample.s;
            sample
        } else {
            self.samples[i]
        }
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = Sample> + ExactSizeIterator + '_ {
        (0..self.samples.len()).map(move |i| self.get(i))
    }

    /// Samples in the order they were deposited (time order), with
    /// positions in the trace's current frame.
    pub fn time_order(&self) -> Box<dyn Iterator<Item = Sample> + '_> {
        if self.reflected {
            Box::new(self.iter().rev())
        } else {
            Box::new(self.iter())
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        self.iter().map(|x| x.s).collect()
    }

    pub fn inputs(&self) -> Vec<ProcessInput> {
        self.iter().map(|x| x.u).collect()
    }

    pub fn outputs(&self) -> Vec<ProcessOutput> {
        self.iter().map(|x| x.y).collect()
    }

    /// Wall-frame positions of the samples, in traversal order.
    pub fn wall_positions(&self) -> Vec<f64> {
        self.iter()
            .map(|x| self.direction.to_wall(x.s, self.length))
            .collect()
    }

    /// Finite values, positions inside `[0, L]` and strictly increasing in
    /// traversal order.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0 && self.length > 0.0) {
            return Err(Error::invalid("trace needs t_s > 0 and L > 0"));
        }
        let mut prev: Option<f64> = None;
        for (i, x) in self.iter().enumerate() {
            let values = [x.t, x.s, x.u.v_t, x.u.v_w, x.y.dh, x.y.w];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite value in sample {i}")));
            }
            if x.s < 0.0 || x.s > self.length {
                return Err(Error::invalid(format!(
                    "sample {i}: position {} outside [0, {}]",
                    x.s, self.length
                )));
            }
            if let Some(p) = prev {
                if x.s <= p {
                    return Err(Error::invalid(format!(
                        "sample {i}: positions not strictly increasing ({p} then {})",
                        x.s
                    )));
                }
            }
            prev = Some(x.s);
        }
        Ok(())
    }

    /// Checks `s_{k+1} - s_k = v_T,k * t_s` on the deposition-order record.
    pub fn check_kinematics(&self) -> Result<()> {
        for pair in self.samples.windows(2) {
            let step = pair[0].u.v_t * self.t_s;
            if ((pair[1].s - pair[0].s) - step).abs() > POSITION_TOLERANCE {
                return Err(Error::invalid(format!(
                    "step {}: position increment {} differs from v_T*t_s = {step}",
                    pair[0].k,
                    pair[1].s - pair[0].s
                )));
            }
        }
        Ok(())
    }
}

/// Mirrors a trace into the opposite traversal direction: `s -> L - s`,
/// order reversed, direction toggled.
pub fn flip_trace(trace: &LayerTrace) -> LayerTrace {
    let mut out = trace.clone();
    out.reflected = !trace.reflected;
    out.direction = trace.direction.toggled();
    out
}

/// Resamples a trace's height increments onto a profile grid (wall frame).
/// Positions beyond the sampled span take the nearest sampled value.
pub fn resample_increment(trace: &LayerTrace, profile: &HeightProfile) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot resample an empty trace"));
    }
    let mut pts: Vec<(f64, f64)> = trace
        .iter()
        .map(|x| (trace.direction.to_wall(x.s, trace.length), x.y.dh))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let grid = profile.grid();
    let mut out = Vec::with_capacity(grid.len());
    let mut j = 0;
    for &g in &grid {
        let value = if g <= pts[0].0 {
            pts[0].1
        } else if g >= pts[pts.len() - 1].0 {
            pts[pts.len() - 1].1
        } else {
            while pts[j + 1].0 < g {
                j += 1;
            }
            let (x0, y0) = pts[j];
            let (x1, y1) = pts[j + 1];
            if x1 == x0 {
                y1
            } else {
                y0 + (g - x0) / (x1 - x0) * (y1 - y0)
            }
        };
        out.push(value);
    }
    Ok(out)
}

/// `h_i(s) = h_{i-1}(s) + dh_i(s)` on the profile grid.
pub fn accumulate_layer(prev: &HeightProfile, trace: &LayerTrace) -> Result<HeightProfile> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot accumulate an empty trace"));
    }
    if trace.layer != prev.layer + 1 {
        return Err(Error::invalid(format!(
            "trace layer {} does not follow profile layer {}",
            trace.layer, prev.layer
        )));
    }
    let dh = resample_increment(trace, prev)?;
    let heights = prev
        .heights
        .iter()
        .zip(&dh)
        .map(|(h, d)| (h + d).max(0.0))
        .collect();
    Ok(HeightProfile {
        spacing: prev.spacing,
        length: prev.length,
        heights,
        layer: prev.layer + 1,
    })
}

/// `true` marks samples within `margin` of arc-on or arc-off.
pub fn edge_mask(positions: &[f64], length: f64, margin: f64) -> Vec<bool> {
    positions
        .iter()
        .map(|&s| s < margin || s > length - margin)
        .collect()
}
