//! Static power-law baseline:
//! `ln dh = a0 ln vT + a1 ln vW + a2`, `ln w = b0 ln vT + b1 ln vW + b2`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::control::InputBounds;
use crate::error::{Error, Result};
use crate::plant::{ProcessInput, ProcessOutput, NOMINAL_INPUT};

/// Relative singular-value cutoff for rank decisions.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLogModel {
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
}

fn positive_input(u: ProcessInput) -> Result<()> {
    if u.v_t > 0.0 && u.v_w > 0.0 && u.v_t.is_finite() && u.v_w.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "log-log model needs positive inputs, got ({}, {})",
            u.v_t, u.v_w
        )))
    }
}

fn positive_output(y: ProcessOutput) -> Result<()> {
    if y.dh > 0.0 && y.w > 0.0 && y.dh.is_finite() && y.w.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "log-log model needs positive outputs, got ({}, {})",
            y.dh, y.w
        )))
    }
}

impl LogLogModel {
    /// Ordinary least squares in log space, solved through an SVD of the
    /// design matrix.
    pub fn fit(samples: impl IntoIterator<Item = (ProcessInput, ProcessOutput)>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut lh = Vec::new();
        let mut lw = Vec::new();
        for (u, y) in samples {
            positive_input(u)?;
            positive_output(y)?;
            rows.extend([u.v_t.ln(), u.v_w.ln(), 1.0]);
            lh.push(y.dh.ln());
            lw.push(y.w.ln());
        }
        let n = lh.len();
        if n < 3 {
            return Err(Error::DegenerateFit(format!(
                "need at least 3 samples, got {n}"
            )));
        }
        let x = DMatrix::from_row_slice(n, 3, &rows);
        let svd = x.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > RANK_TOL * smax) {
            return Err(Error::DegenerateFit(
                "log-space design matrix is rank deficient".into(),
            ));
        }
        let solve = |rhs: Vec<f64>| -> Result<[f64; 3]> {
            let c = svd
                .solve(&DVector::from_vec(rhs), 0.0)
                .map_err(|e| Error::numeric(format!("least-squares solve failed: {e}")))?;
            Ok([c[0], c[1], c[2]])
        };
        Ok(Self {
            alpha: solve(lh)?,
            beta: solve(lw)?,
        })
    }

    pub fn predict(&self, u: ProcessInput) -> Result<ProcessOutput> {
        positive_input(u)?;
        let (a, b) = (self.alpha, self.beta);
        let (lt, lw) = (u.v_t.ln(), u.v_w.ln());
        Ok(ProcessOutput::new(
            (a[0] * lt + a[1] * lw + a[2]).exp(),
            (b[0] * lt + b[1] * lw + b[2]).exp(),
        ))
    }

    /// Input that reproduces `target` under the model, before clamping.
    ///
    /// A singular exponent matrix is accepted when the target is still
    /// consistent with it; the solution closest (in log space) to the
    /// nominal operating point is returned. An inconsistent target on a
    /// singular model is a degenerate-model error.
    pub fn invert_unclamped(&self, target: ProcessOutput) -> Result<ProcessInput> {
        positive_output(target)?;
        let (a, b) = (self.alpha, self.beta);
        let m = Matrix2::new(a[0], a[1], b[0], b[1]);
        let rhs = Vector2::new(target.dh.ln() - a[2], target.w.ln() - b[2]);
        let svd = m.svd(true, true);
        let smax = svd.singular_values.max();
        let z = if smax > 0.0 && svd.singular_values.min() > RANK_TOL * smax {
            m.lu()
                .solve(&rhs)
                .ok_or_else(|| Error::DegenerateModel("exponent matrix is singular".into()))?
        } else {
            let z_ref = Vector2::new(NOMINAL_INPUT.v_t.ln(), NOMINAL_INPUT.v_w.ln());
            let pinv = svd
                .pseudo_inverse(RANK_TOL * smax.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::DegenerateModel(e.to_string()))?;
            let z = z_ref + pinv * (rhs - m * z_ref);
            let resid = (m * z - rhs).norm();
            if resid > 1e-9 * (1.0 + rhs.norm()) {
                return Err(Error::DegenerateModel(format!(
                    "exponent matrix is singular and target ({}, {}) is unreachable",
                    target.dh, target.w
                )));
            }
            z
        };
        let u = ProcessInput::new(z[0].exp(), z[1].exp());
        if !(u.v_t.is_finite() && u.v_w.is_finite()) {
            return Err(Error::numeric("log-log inversion overflowed"));
        }
        Ok(u)
    }

    /// [`invert_unclamped`](Self::invert_unclamped) clamped to the input box.
    pub fn invert(&self, target: ProcessOutput, bounds: &InputBounds) -> Result<ProcessInput> {
        Ok(bounds.clamp(self.invert_unclamped(target)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().chain(&self.beta).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("non-finite log-log coefficient"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn power_law_data(alpha: [f64; 3], beta: [f64; 3], n: usize, seed: u64) -> Vec<(ProcessInput, ProcessOutput)> {
        let truth = LogLogModel { alpha, beta };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u = ProcessInput::new(rng.random_range(2.0..15.0), rng.random_range(21.2..105.8));
                (u, truth.predict(u).unwrap())
            })
            .collect()
    }

    fn fit(data: &[(ProcessInput, ProcessOutput)]) -> Result<LogLogModel> {
        LogLogModel::fit(data.iter().copied())
    }

    #[test]
    fn recovers_exact_power_law() {
        let data = power_law_data([-1.0, 1.0, 0.5], [-0.3, 0.45, 0.2], 50, 1);
        let m = fit(&data).unwrap();
        for (got, want) in m.alpha.iter().zip([-1.0, 1.0, 0.5]) {
            assert!((got - want).abs() < 1e-6);
        }
        for (got, want) in m.beta.iter().zip([-0.3, 0.45, 0.2]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicating_samples_leaves_fit_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<_> = power_law_data([-0.8, 0.9, 0.1], [-0.2, 0.3, 1.0], 40, 2)
            .into_iter()
            .map(|(u, y)| {
                let noisy = ProcessOutput::new(
                    y.dh * rng.random_range(0.9..1.1),
                    y.w * rng.random_range(0.9..1.1),
                );
                (u, noisy)
            })
            .collect();
        let once = fit(&data).unwrap();
        let twice: Vec<_> = data.iter().chain(&data).copied().collect();
        let twice = fit(&twice).unwrap();
        for (a, b) in once.alpha.iter().chain(&once.beta).zip(twice.alpha.iter().chain(&twice.beta)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<_> = (0..60)
            .map(|_| {
                let u = ProcessInput::new(rng.random_range(2.0..15.0), rng.random_range(21.2..105.8));
                let y = ProcessOutput::new(rng.random_range(0.5..3.0), rng.random_range(3.0..8.0));
                (u, y)
            })
            .collect();
        let m = fit(&data).unwrap();
        let x = DMatrix::from_fn(data.len(), 3, |r, c| match c {
            0 => data[r].0.v_t.ln(),
            1 => data[r].0.v_w.ln(),
            _ => 1.0,
        });
        for (coef, pick) in [(m.alpha, 0), (m.beta, 1)] {
            let r = DVector::from_fn(data.len(), |i, _| {
                let y = if pick == 0 { data[i].1.dh } else { data[i].1.w };
                y.ln() - (coef[0] * x[(i, 0)] + coef[1] * x[(i, 1)] + coef[2])
            });
            let xtr = x.transpose() * &r;
            assert!(xtr.norm() <= 1e-8 * x.norm() * r.norm());
        }
    }

    #[test]
    fn rejects_nonpositive_and_collinear_data() {
        let bad = [(ProcessInput::new(5.0, 50.0), ProcessOutput::new(0.0, 5.0))];
        assert!(matches!(fit(&bad), Err(Error::InvalidArgument(_))));
        // Constant VPD direction: ln vW - ln vT fixed, so the columns are collinear.
        let line: Vec<_> = (1..10)
            .map(|i| {
                let vt = i as f64;
                (ProcessInput::new(vt, 8.0 * vt), ProcessOutput::new(1.0, 5.0))
            })
            .collect();
        assert!(matches!(fit(&line), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn invert_round_trips_predict() {
        let m = LogLogModel {
            alpha: [-0.9, 0.8, 0.3],
            beta: [-0.25, 0.5, -0.2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let u = ProcessInput::new(rng.random_range(1.0..20.0), rng.random_range(10.0..150.0));
            let back = m.invert_unclamped(m.predict(u).unwrap()).unwrap();
            assert!((back.v_t - u.v_t).abs() <= 1e-9 * u.v_t.max(1.0));
            assert!((back.v_w - u.v_w).abs() <= 1e-9 * u.v_w.max(1.0));
        }
    }

    #[test]
    fn separable_singular_model_keeps_vpd_ratio() {
        let m = LogLogModel {
            alpha: [-1.0, 1.0, 0.0],
            beta: [0.0, 0.0, 5.2f64.ln()],
        };
        for dh in [0.8, 1.8, 2.5] {
            let u = m.invert_unclamped(ProcessOutput::new(dh, 5.2)).unwrap();
            assert!((u.v_w / u.v_t - dh).abs() < 1e-9);
        }
        assert!(matches!(
            m.invert_unclamped(ProcessOutput::new(1.8, 6.0)),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn inversion_is_clamped_to_bounds() {
        let m = LogLogModel {
            alpha: [-1.0, 1.0, -3.0],
            beta: [-0.3, 0.5, 0.0],
        };
        let bounds = InputBounds::default();
        let u = m.invert(ProcessOutput::new(50.0, 40.0), &bounds).unwrap();
        assert!(bounds.contains(u));
    }
}
