//! Input schedules for identification data.
//!
//! Each build holds its wire feed fixed and sweeps the torch speed
//! piecewise-constant along every layer, so one build covers a band of
//! VPD values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{interlayer_wait, run_layer, InputSource, PlantConfig, PlantState, ProcessInput};
use crate::control::InputBounds;
use crate::error::{Error, Result};
use crate::geometry::LayerTrace;

/// Constant torch speed until the traversal position reaches `until_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedSegment {
    pub until_mm: f64,
    pub v_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildSchedule {
    pub v_w: f64,
    pub layers: Vec<Vec<SpeedSegment>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSpec {
    pub wait_s: f64,
    pub builds: Vec<BuildSchedule>,
}

impl CoverageSpec {
    pub fn validate(&self, bounds: &InputBounds, length: f64) -> Result<()> {
        if self.builds.is_empty() {
            return Err(Error::invalid("coverage spec lists no builds"));
        }
        if !(self.wait_s.is_finite() && self.wait_s >= 0.0) {
            return Err(Error::invalid("wait_s must be finite and non-negative"));
        }
        for (b, build) in self.builds.iter().enumerate() {
            if !(bounds.v_w_min..=bounds.v_w_max).contains(&build.v_w) {
                return Err(Error::invalid(format!(
                    "build {b}: wire feed {} outside [{}, {}]",
                    build.v_w, bounds.v_w_min, bounds.v_w_max
                )));
            }
            if build.layers.is_empty() {
                return Err(Error::invalid(format!("build {b} has no layers")));
            }
            for (l, segments) in build.layers.iter().enumerate() {
                if segments.is_empty() {
                    return Err(Error::invalid(format!("build {b} layer {l}: no segments")));
                }
                let mut prev = 0.0;
                for seg in segments {
                    if !(bounds.v_t_min..=bounds.v_t_max).contains(&seg.v_t) {
                        return Err(Error::invalid(format!(
                            "build {b} layer {l}: torch speed {} outside [{}, {}]",
                            seg.v_t, bounds.v_t_min, bounds.v_t_max
                        )));
                    }
                    if !(seg.until_mm > prev) {
                        return Err(Error::invalid(format!(
                            "build {b} layer {l}: segment ends must increase"
                        )));
                    }
                    prev = seg.until_mm;
                }
                if prev < length {
                    return Err(Error::invalid(format!(
                        "build {b} layer {l}: segments end at {prev} before the wall end {length}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the default randomized coverage design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageGrid {
    /// Number of distinct wire feed levels, evenly spaced over the bounds.
    pub levels: usize,
    pub layers_per_build: usize,
    pub segments_per_layer: usize,
    /// VPD band the torch speed is drawn from, clipped to the speed bounds.
    pub vpd_min: f64,
    pub vpd_max: f64,
    pub wait_s: f64,
    pub seed: u64,
}

impl Default for CoverageGrid {
    fn default() -> Self {
        Self {
            levels: 21,
            layers_per_build: 6,
            segments_per_layer: 4,
            vpd_min: 3.5,
            vpd_max: 16.0,
            wait_s: 45.0,
            seed: 0,
        }
    }
}

impl CoverageGrid {
    pub fn spec(&self, bounds: &InputBounds, length: f64) -> Result<CoverageSpec> {
        if self.levels == 0 || self.layers_per_build == 0 || self.segments_per_layer == 0 {
            return Err(Error::invalid("coverage grid needs levels, layers and segments"));
        }
        if !(self.vpd_min > 0.0 && self.vpd_max > self.vpd_min) {
            return Err(Error::invalid("need 0 < vpd_min < vpd_max"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut builds = Vec::with_capacity(self.levels);
        for level in 0..self.levels {
            let v_w = if self.levels == 1 {
                0.5 * (bounds.v_w_min + bounds.v_w_max)
            } else {
                bounds.v_w_min
                    + (bounds.v_w_max - bounds.v_w_min) * level as f64 / (self.levels - 1) as f64
            };
            let lo = (v_w / self.vpd_max).max(bounds.v_t_min);
            let hi = (v_w / self.vpd_min).min(bounds.v_t_max);
            if lo > hi {
                return Err(Error::invalid(format!(
                    "no torch speed in bounds reaches the VPD band at v_W = {v_w}"
                )));
            }
            let layers = (0..self.layers_per_build)
                .map(|_| {
                    let mut cuts: Vec<f64> = (1..self.segments_per_layer)
                        .map(|_| rng.random_range(0.1..0.9) * length)
                        .collect();
                    cuts.sort_by(f64::total_cmp);
                    cuts.dedup();
                    cuts.push(length);
                    cuts.into_iter()
                        .map(|until_mm| SpeedSegment {
                            until_mm,
                            v_t: if hi > lo { rng.random_range(lo..=hi) } else { lo },
                        })
                        .collect()
                })
                .collect();
            builds.push(BuildSchedule { v_w, layers });
        }
        Ok(CoverageSpec {
            wait_s: self.wait_s,
            builds,
        })
    }
}

/// Runs every build of the spec on the plant. Build `b` uses plant seed
/// `cfg.seed + b`.
pub fn generate_builds(cfg: &PlantConfig, spec: &CoverageSpec) -> Result<Vec<Vec<LayerTrace>>> {
    spec.validate(&InputBounds::default(), cfg.length)?;
    let mut out = Vec::with_capacity(spec.builds.len());
    for (b, build) in spec.builds.iter().enumerate() {
        let build_cfg = cfg.clone().with_seed(cfg.seed.wrapping_add(b as u64));
        let mut state = PlantState::new(&build_cfg)?;
        let mut traces = Vec::with_capacity(build.layers.len());
        for segments in &build.layers {
            let mut schedule = |ctx: &super::StepContext| {
                let seg = segments
                    .iter()
                    .find(|seg| ctx.s < seg.until_mm)
                    .unwrap_or(&segments[segments.len() - 1]);
                Ok(ProcessInput::new(seg.v_t, build.v_w))
            };
            traces.push(run_layer(
                &mut state,
                &build_cfg,
                InputSource::Controller(&mut schedule),
            )?);
            interlayer_wait(&mut state, &build_cfg, spec.wait_s)?;
        }
        out.push(traces);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_covers_21_feed_levels_within_bounds() {
        let bounds = InputBounds::default();
        let spec = CoverageGrid::default().spec(&bounds, 110.0).unwrap();
        assert_eq!(spec.builds.len(), 21);
        assert_eq!(spec.builds[0].v_w, 21.2);
        assert!((spec.builds[20].v_w - 105.8).abs() < 1e-12);
        let mut cfg = PlantConfig::default();
        cfg.seed = 5;
        let small = CoverageSpec {
            wait_s: 45.0,
            builds: spec.builds[..3].to_vec(),
        };
        let builds = generate_builds(&cfg, &small).unwrap();
        for x in builds.iter().flatten().flat_map(|t| t.iter()) {
            assert!(bounds.contains(x.u));
        }
    }

    #[test]
    fn empty_or_out_of_bounds_specs_are_rejected() {
        let cfg = PlantConfig::default();
        let empty = CoverageSpec {
            wait_s: 45.0,
            builds: vec![],
        };
        assert!(matches!(
            generate_builds(&cfg, &empty),
            Err(Error::InvalidArgument(_))
        ));
        let bad = CoverageSpec {
            wait_s: 45.0,
            builds: vec![BuildSchedule {
                v_w: 50.0,
                layers: vec![vec![SpeedSegment {
                    until_mm: 110.0,
                    v_t: 20.0,
                }]],
            }],
        };
        assert!(generate_builds(&cfg, &bad).is_err());
    }
}
