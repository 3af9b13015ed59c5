//! Two-variable box-constrained least squares by active-set enumeration.
//!
//! Minimizes `f(d) = |W (J d + e)|^2 + d' L d` over `lo <= d <= hi`, i.e.
//! `d' H d + 2 g' d + c` with `H = J' W^2 J + L`, `g = J' W^2 e`.

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which `H` counts as singular.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxQp {
    pub h: [[f64; 2]; 2],
    pub g: [f64; 2],
    pub c: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

/// Per-coordinate activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Free,
    Lower,
    Upper,
}

const PATTERNS: [[Activity; 2]; 9] = {
    use Activity::*;
    [
        [Free, Free],
        [Free, Lower],
        [Free, Upper],
        [Lower, Free],
        [Lower, Lower],
        [Lower, Upper],
        [Upper, Free],
        [Upper, Lower],
        [Upper, Upper],
    ]
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSolution {
    pub d: [f64; 2],
    pub objective: f64,
    pub pattern: [Activity; 2],
    /// `H` was singular; `d` is the zero fallback.
    pub degenerate: bool,
}

impl BoxQp {
    /// Builds the problem from the weighted least-squares data. `w` and
    /// `lambda` are the diagonals of `W` and `L`.
    pub fn from_least_squares(
        j: [[f64; 2]; 2],
        e: [f64; 2],
        w: [f64; 2],
        lambda: [f64; 2],
        lo: [f64; 2],
        hi: [f64; 2],
    ) -> Self {
        let w2 = [w[0] * w[0], w[1] * w[1]];
        let mut h = [[0.0; 2]; 2];
        let mut g = [0.0; 2];
        for a in 0..2 {
            for b in 0..2 {
                h[a][b] = (0..2).map(|r| j[r][a] * w2[r] * j[r][b]).sum();
            }
            h[a][a] += lambda[a];
            g[a] = (0..2).map(|r| j[r][a] * w2[r] * e[r]).sum();
        }
        let c = w2[0] * e[0] * e[0] + w2[1] * e[1] * e[1];
        Self { h, g, c, lo, hi }
    }

    pub fn objective(&self, d: [f64; 2]) -> f64 {
        let h = &self.h;
        d[0] * (h[0][0] * d[0] + h[0][1] * d[1])
            + d[1] * (h[1][0] * d[0] + h[1][1] * d[1])
            + 2.0 * (self.g[0] * d[0] + self.g[1] * d[1])
            + self.c
    }

    /// `grad f(d) = 2 (H d + g)`.
    pub fn gradient(&self, d: [f64; 2]) -> [f64; 2] {
        let h = &self.h;
        [
            2.0 * (h[0][0] * d[0] + h[0][1] * d[1] + self.g[0]),
            2.0 * (h[1][0] * d[0] + h[1][1] * d[1] + self.g[1]),
        ]
    }

    fn is_singular(&self) -> bool {
        let h = &self.h;
        let tr = h[0][0] + h[1][1];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let disc = ((h[0][0] - h[1][1]).powi(2) + 4.0 * h[0][1] * h[1][0]).max(0.0).sqrt();
        let lmin = 0.5 * (tr - disc);
        let lmax = 0.5 * (tr + disc);
        lmax <= 0.0 || lmin <= SINGULAR_TOL * lmax || det <= 0.0
    }

    fn candidate(&self, pattern: [Activity; 2]) -> Option<[f64; 2]> {
        let mut d = [0.0; 2];
        let mut free = Vec::with_capacity(2);
        for i in 0..2 {
            match pattern[i] {
                Activity::Free => free.push(i),
                Activity::Lower => d[i] = self.lo[i],
                Activity::Upper => d[i] = self.hi[i],
            }
        }
        let h = &self.h;
        match free.as_slice() {
            [] => {}
            [i] => {
                let i = *i;
                let o = 1 - i;
                if h[i][i] <= 0.0 {
                    return None;
                }
                d[i] = -(self.g[i] + h[i][o] * d[o]) / h[i][i];
            }
            _ => {
                let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
                if det <= 0.0 {
                    return None;
                }
                d[0] = (-h[1][1] * self.g[0] + h[0][1] * self.g[1]) / det;
                d[1] = (h[1][0] * self.g[0] - h[0][0] * self.g[1]) / det;
            }
        }
        let slack = |i: usize| 1e-12 * (1.0 + self.lo[i].abs().max(self.hi[i].abs()));
        for &i in &free {
            if d[i] < self.lo[i] - slack(i) || d[i] > self.hi[i] + slack(i) {
                return None;
            }
            d[i] = d[i].clamp(self.lo[i], self.hi[i]);
        }
        Some(d)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.h[0][0], self.h[0][1], self.h[1][0], self.h[1][1], self.g[0], self.g[1], self.c];
        if all.iter().chain(&self.lo).chain(&self.hi).any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite QP data"));
        }
        for i in 0..2 {
            if self.lo[i] > self.hi[i] {
                return Err(Error::invalid(format!(
                    "empty box on coordinate {i}: [{}, {}]",
                    self.lo[i], self.hi[i]
                )));
            }
        }
        Ok(())
    }

    /// Exact minimizer over the box. Ties within rounding go to the smaller
    /// step, then to the earlier activity pattern.
    pub fn solve(&self) -> Result<QpSolution> {
        self.validate()?;
        if self.is_singular() {
            return Ok(QpSolution {
                d: [0.0; 2],
                objective: self.objective([0.0; 2]),
                pattern: [Activity::Free; 2],
                degenerate: true,
            });
        }
        let mut best: Option<QpSolution> = None;
        for pattern in PATTERNS {
            let Some(d) = self.candidate(pattern) else { continue };
            let objective = self.objective(d);
            let better = match &best {
                None => true,
                Some(b) => {
                    let tol = 1e-14 * (1.0 + b.objective.abs());
                    objective < b.objective - tol
                        || (objective <= b.objective + tol && norm2(d) < norm2(b.d))
                }
            };
            if better {
                best = Some(QpSolution {
                    d,
                    objective,
                    pattern,
                    degenerate: false,
                });
            }
        }
        best.ok_or_else(|| Error::numeric("no feasible active-set candidate"))
    }

    /// Largest violation of the box-QP optimality conditions at `d`: the
    /// gradient must vanish on free coordinates and point into the box on
    /// active ones.
    pub fn kkt_residual(&self, d: [f64; 2]) -> f64 {
        let grad = self.gradient(d);
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            let r = if self.lo[i] == self.hi[i] {
                0.0
            } else if d[i] <= self.lo[i] {
                (-grad[i]).max(0.0)
            } else if d[i] >= self.hi[i] {
                grad[i].max(0.0)
            } else {
                grad[i].abs()
            };
            worst = worst.max(r);
        }
        worst
    }
}

fn norm2(d: [f64; 2]) -> f64 {
    d[0] * d[0] + d[1] * d[1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over a uniform grid covering the box.
    fn grid_min(qp: &BoxQp, points: usize) -> f64 {
        let axis = |i: usize| -> Vec<f64> {
            (0..points)
                .map(|k| qp.lo[i] + (qp.hi[i] - qp.lo[i]) * k as f64 / (points - 1) as f64)
                .collect()
        };
        let (a, b) = (axis(0), axis(1));
        let mut best = f64::INFINITY;
        for x in &a {
            for y in &b {
                best = best.min(qp.objective([*x, *y]));
            }
        }
        best
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> BoxQp {
        let j = [
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        ];
        let e = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let w = [rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)];
        let lambda = [rng.random_range(0.0..0.2), rng.random_range(0.0..0.2)];
        let lo = [-rng.random_range(0.1..3.0), -rng.random_range(0.1..5.0)];
        let hi = [rng.random_range(0.1..3.0), rng.random_range(0.1..5.0)];
        BoxQp::from_least_squares(j, e, w, lambda, lo, hi)
    }

    #[test]
    fn identity_geometry() {
        let qp = BoxQp::from_least_squares(
            [[1.0, 0.0], [0.0, 1.0]],
            [-0.1, 0.0],
            [1.0, 1.0],
            [0.0, 0.0],
            [-2.0, -4.23],
            [2.0, 4.23],
        );
        let s = qp.solve().unwrap();
        assert!((s.d[0] - 0.1).abs() < 1e-15 && s.d[1].abs() < 1e-15);
        assert_eq!(s.pattern, [Activity::Free, Activity::Free]);
    }

    #[test]
    fn active_rate_bound_reoptimizes_the_other_coordinate() {
        // Unconstrained optimum has d0 = 5; with d0 pinned at 2 the second
        // coordinate solves H11 d1 = -(g1 + H10 * 2).
        let j = [[1.0, 0.5], [0.2, 1.0]];
        let lambda = [0.01, 0.1];
        let free = BoxQp::from_least_squares(j, [0.0, 0.0], [1.0, 1.0], lambda, [-1e9; 2], [1e9; 2]);
        // Choose e so the unconstrained minimizer is (5, 0.3).
        let target = [5.0, 0.3];
        let g = [
            -(free.h[0][0] * target[0] + free.h[0][1] * target[1]),
            -(free.h[1][0] * target[0] + free.h[1][1] * target[1]),
        ];
        let qp = BoxQp {
            g,
            lo: [-2.0, -4.23],
            hi: [2.0, 4.23],
            ..free
        };
        let s = qp.solve().unwrap();
        assert_eq!(s.d[0], 2.0);
        let want = -(g[1] + qp.h[1][0] * 2.0) / qp.h[1][1];
        assert!((s.d[1] - want).abs() < 1e-12);
        assert_eq!(s.pattern, [Activity::Upper, Activity::Free]);
    }

    #[test]
    fn matches_grid_oracle_and_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let qp = random_instance(&mut rng);
            let s = qp.solve().unwrap();
            assert!(!s.degenerate);
            let g = grid_min(&qp, 201);
            assert!(s.objective <= g + 1e-6 * (1.0 + g), "{} vs {g}", s.objective);
            assert!(qp.kkt_residual(s.d) <= 1e-8, "kkt {}", qp.kkt_residual(s.d));
            for i in 0..2 {
                assert!(qp.lo[i] <= s.d[i] && s.d[i] <= qp.hi[i]);
            }
        }
    }

    #[test]
    fn zero_error_gives_zero_step() {
        let qp = BoxQp::from_least_squares(
            [[0.3, -0.2], [0.1, 0.4]],
            [0.0, 0.0],
            [1.0, 1.0],
            [0.01, 0.1],
            [-2.0, -4.0],
            [2.0, 4.0],
        );
        assert_eq!(qp.solve().unwrap().d, [0.0, 0.0]);
    }

    #[test]
    fn weight_scaling_leaves_argmin_unchanged_without_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let j = [
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            ];
            let e = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let w = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            let scale = rng.random_range(0.1..10.0);
            let (lo, hi) = ([-2.0, -4.23], [2.0, 4.23]);
            let a = BoxQp::from_least_squares(j, e, w, [0.0; 2], lo, hi).solve().unwrap();
            let b = BoxQp::from_least_squares(j, e, [w[0] * scale, w[1] * scale], [0.0; 2], lo, hi)
                .solve()
                .unwrap();
            for i in 0..2 {
                assert!((a.d[i] - b.d[i]).abs() <= 1e-9 * (1.0 + a.d[i].abs()));
            }
        }
    }

    #[test]
    fn rank_deficient_unregularized_problem_falls_back_to_zero() {
        let qp = BoxQp::from_least_squares(
            [[1.0, 2.0], [0.5, 1.0]],
            [0.3, -0.1],
            [1.0, 1.0],
            [0.0, 0.0],
            [-2.0, -4.0],
            [2.0, 4.0],
        );
        let s = qp.solve().unwrap();
        assert!(s.degenerate);
        assert_eq!(s.d, [0.0, 0.0]);
    }

    #[test]
    fn empty_box_is_rejected() {
        let qp = BoxQp {
            h: [[1.0, 0.0], [0.0, 1.0]],
            g: [0.0; 2],
            c: 0.0,
            lo: [1.0, 0.0],
            hi: [0.0, 1.0],
        };
        assert!(matches!(qp.solve(), Err(Error::InvalidArgument(_))));
    }
}
