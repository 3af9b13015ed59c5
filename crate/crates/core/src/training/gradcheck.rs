//! Central finite-difference checks of the analytic parameter gradients and
//! input Jacobians.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradients, prepare, sequences_mse};
use crate::error::Result;
use crate::geometry::{Direction, LayerTrace, Sample};
use crate::models::{input_jacobian, model_init, predict, rollout_states, Arch, ModelParams, ModelState, NormStats};
use crate::plant::{ProcessInput, ProcessOutput};

/// Absolute differences at or below this count as agreement.
pub const ABSOLUTE_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|)`, or 0 when `|a - b|` is within the absolute
/// floor.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= ABSOLUTE_FLOOR {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// Central differences of the full-sequence MSE with step `h`.
pub fn finite_difference_gradient(p: &ModelParams, traces: &[LayerTrace], h: f64) -> Result<Vec<f64>> {
    let seqs = prepare(&p.norm, traces);
    let mut q = p.clone();
    let mut out = Vec::with_capacity(p.theta.len());
    for i in 0..p.theta.len() {
        q.theta[i] = p.theta[i] + h;
        let plus = sequences_mse(&q, &seqs)?;
        q.theta[i] = p.theta[i] - h;
        let minus = sequences_mse(&q, &seqs)?;
        q.theta[i] = p.theta[i];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Central differences of the next output with respect to the input, with a
/// step of `rel_h` relative to each input's magnitude.
pub fn finite_difference_jacobian(
    p: &ModelParams,
    st: &ModelState,
    u: ProcessInput,
    rel_h: f64,
) -> Result<[[f64; 2]; 2]> {
    let mut j = [[0.0; 2]; 2];
    for c in 0..2 {
        let base = u.to_array();
        let h = rel_h * base[c].abs().max(1.0);
        let mut up = base;
        let mut down = base;
        up[c] += h;
        down[c] -= h;
        let (_, yp) = predict(p, st, ProcessInput::from_array(up))?;
        let (_, ym) = predict(p, st, ProcessInput::from_array(down))?;
        j[0][c] = (yp.dh - ym.dh) / (2.0 * h);
        j[1][c] = (yp.w - ym.w) / (2.0 * h);
    }
    Ok(j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub arch: Arch,
    pub n: usize,
    pub instances: usize,
    /// Worst relative error over all parameter-gradient entries.
    pub worst_gradient: f64,
    /// Worst relative error over all input-Jacobian entries.
    pub worst_jacobian: f64,
    /// Largest absolute analytic-vs-numeric differences, before the floor.
    pub max_gradient_gap: f64,
    pub max_jacobian_gap: f64,
}

fn random_instance(arch: Arch, n: usize, rng: &mut ChaCha8Rng) -> Result<(ModelParams, Vec<LayerTrace>)> {
    let mut p = model_init(arch, n, rng.random())?;
    for v in &mut p.theta {
        *v += rng.random_range(-0.2..0.2);
    }
    p.norm = NormStats {
        u_mean: [rng.random_range(6.0..9.0), rng.random_range(50.0..70.0)],
        u_std: [rng.random_range(2.5..4.5), rng.random_range(15.0..30.0)],
        y_mean: [rng.random_range(1.5..2.0), rng.random_range(4.8..5.6)],
        y_std: [rng.random_range(0.3..0.6), rng.random_range(0.4..0.9)],
    };
    let traces = (1..=2)
        .map(|layer| {
            let mut s = 0.0;
            let samples: Vec<Sample> = (0..20)
                .map(|k| {
                    let u = ProcessInput::new(rng.random_range(2.0..15.0), rng.random_range(21.2..105.8));
                    let x = Sample {
                        k,
                        t: k as f64 * 0.1,
                        s,
                        u,
                        y: ProcessOutput::new(rng.random_range(1.0..2.6), rng.random_range(4.0..6.5)),
                    };
                    s += u.v_t * 0.1;
                    x
                })
                .collect();
            LayerTrace::from_samples(layer, 0.1, s + 1.0, Direction::for_layer(layer), samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((p, traces))
}

/// Compares analytic gradients and input Jacobians with central differences
/// on `instances` random models with two 20-step traces each.
pub fn check_gradients(arch: Arch, n: usize, instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        arch,
        n,
        instances,
        worst_gradient: 0.0,
        worst_jacobian: 0.0,
        max_gradient_gap: 0.0,
        max_jacobian_gap: 0.0,
    };
    for _ in 0..instances {
        let (p, traces) = random_instance(arch, n, &mut rng)?;
        let (_, grad) = loss_and_gradients(&p, &traces, 0)?;
        let fd = finite_difference_gradient(&p, &traces, 1e-6)?;
        for (a, b) in grad.iter().zip(&fd) {
            report.worst_gradient = report.worst_gradient.max(relative_error(*a, *b));
            report.max_gradient_gap = report.max_gradient_gap.max((a - b).abs());
        }
        let inputs = traces[0].inputs();
        let (_, states) = rollout_states(&p, &inputs)?;
        for k in [0, 7, 19] {
            let exact = input_jacobian(&p, &states[k], inputs[k])?;
            let fd = finite_difference_jacobian(&p, &states[k], inputs[k], 1e-5)?;
            for (ra, rb) in exact.iter().zip(&fd) {
                for (a, b) in ra.iter().zip(rb) {
                    report.worst_jacobian = report.worst_jacobian.max(relative_error(*a, *b));
                    report.max_jacobian_gap = report.max_jacobian_gap.max((a - b).abs());
                }
            }
        }
    }
    Ok(report)
}
