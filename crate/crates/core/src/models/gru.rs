//! Gated recurrent unit with the reset gate applied before the recurrent
//! candidate weights: `h~ = tanh(W_ih u + W_hh (r * x) + b_h)`,
//! `x' = (1 - z) x + z h~`, `y = W_yh x' + b_y`.

use nalgebra::DMatrix;

use super::{cuts_before, split, split_mut, ModelParams};
use crate::linalg::{matvec_add, matvec_t_add, outer_add, sigmoid};

fn lens(n: usize) -> [usize; 11] {
    let (a, b) = (2 * n, n * n);
    [a, a, a, b, b, b, n, n, n, 2 * n, 2]
}

struct Gates {
    z: Vec<f64>,
    r: Vec<f64>,
    /// Reset-gated state `r * x`.
    rx: Vec<f64>,
    cand: Vec<f64>,
}

fn gates(p: &ModelParams, x: &[f64], u: [f64; 2]) -> Gates {
    let n = p.n;
    let t = split(&p.theta, lens(n));
    let pre = |wi: &[f64], wh: &[f64], b: &[f64], v: &[f64]| {
        let mut a = b.to_vec();
        matvec_add(wi, n, 2, &u, &mut a);
        matvec_add(wh, n, n, v, &mut a);
        a
    };
    let z: Vec<f64> = pre(t[0], t[3], t[6], x).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = pre(t[1], t[4], t[7], x).into_iter().map(sigmoid).collect();
    let rx: Vec<f64> = r.iter().zip(x).map(|(r, x)| r * x).collect();
    let cand = pre(t[2], t[5], t[8], &rx).into_iter().map(f64::tanh).collect();
    Gates { z, r, rx, cand }
}

fn output(p: &ModelParams, x: &[f64]) -> [f64; 2] {
    let t = split(&p.theta, lens(p.n));
    let mut y = [t[10][0], t[10][1]];
    matvec_add(t[9], 2, p.n, x, &mut y);
    y
}

pub(crate) fn step(p: &ModelParams, x: &mut [f64], u: [f64; 2]) -> [f64; 2] {
    let gt = gates(p, x, u);
    for j in 0..p.n {
        x[j] = (1.0 - gt.z[j]) * x[j] + gt.z[j] * gt.cand[j];
    }
    output(p, x)
}

pub(crate) fn input_jacobian(p: &ModelParams, x: &[f64], u: [f64; 2]) -> [[f64; 2]; 2] {
    let n = p.n;
    let t = split(&p.theta, lens(n));
    let gt = gates(p, x, u);
    // d(r * x)/du, n x 2.
    let drx: Vec<[f64; 2]> = (0..n)
        .map(|j| {
            let s = x[j] * gt.r[j] * (1.0 - gt.r[j]);
            [s * t[1][2 * j], s * t[1][2 * j + 1]]
        })
        .collect();
    let mut j = [[0.0; 2]; 2];
    for unit in 0..n {
        let (z, h) = (gt.z[unit], gt.cand[unit]);
        let dz = (h - x[unit]) * z * (1.0 - z);
        let dh = z * (1.0 - h * h);
        for col in 0..2 {
            let mut a = t[2][2 * unit + col];
            for (m, d) in drx.iter().enumerate() {
                a += t[5][unit * n + m] * d[col];
            }
            let dx = dz * t[0][2 * unit + col] + dh * a;
            for (r, row) in j.iter_mut().enumerate() {
                row[col] += t[9][r * n + unit] * dx;
            }
        }
    }
    j
}

pub(crate) fn state_matrix(p: &ModelParams, x: &[f64], u: [f64; 2]) -> DMatrix<f64> {
    let n = p.n;
    let t = split(&p.theta, lens(n));
    let gt = gates(p, x, u);
    let w_hz = DMatrix::from_row_slice(n, n, t[3]);
    let w_hr = DMatrix::from_row_slice(n, n, t[4]);
    let w_hh = DMatrix::from_row_slice(n, n, t[5]);
    // d(r * x)/dx = diag(r) + diag(x r (1 - r)) W_hr
    let mut drx = w_hr;
    for row in 0..n {
        let s = x[row] * gt.r[row] * (1.0 - gt.r[row]);
        drx.row_mut(row).scale_mut(s);
        drx[(row, row)] += gt.r[row];
    }
    let mut a = w_hh * drx;
    for row in 0..n {
        let (z, h) = (gt.z[row], gt.cand[row]);
        a.row_mut(row).scale_mut(z * (1.0 - h * h));
        let dz = (h - x[row]) * z * (1.0 - z);
        for col in 0..n {
            a[(row, col)] += dz * w_hz[(row, col)];
        }
        a[(row, row)] += 1.0 - z;
    }
    a
}

pub(crate) fn sequence_gradient(
    p: &ModelParams,
    inputs: &[[f64; 2]],
    targets: &[[f64; 2]],
    scale: f64,
    truncation: usize,
    grad: &mut [f64],
) -> f64 {
    let n = p.n;
    let len = inputs.len();
    let t = split(&p.theta, lens(n));

    let mut xs = vec![vec![0.0; n]];
    let mut acts = Vec::with_capacity(len);
    let mut gys = Vec::with_capacity(len);
    let mut sse = 0.0;
    for k in 0..len {
        let x = &xs[k];
        let gt = gates(p, x, inputs[k]);
        let next: Vec<f64> = (0..n)
            .map(|j| (1.0 - gt.z[j]) * x[j] + gt.z[j] * gt.cand[j])
            .collect();
        let y = output(p, &next);
        let e = [y[0] - targets[k][0], y[1] - targets[k][1]];
        sse += e[0] * e[0] + e[1] * e[1];
        gys.push([2.0 * scale * e[0], 2.0 * scale * e[1]]);
        xs.push(next);
        acts.push(gt);
    }

    let [g_iz, g_ir, g_ih, g_hz, g_hr, g_hh, g_bz, g_br, g_bh, g_yh, g_by] = split_mut(grad, lens(n));
    let mut dx = vec![0.0; n];
    let mut da_z = vec![0.0; n];
    let mut da_r = vec![0.0; n];
    let mut da_h = vec![0.0; n];
    let mut drx = vec![0.0; n];
    let mut carry = vec![0.0; n];
    for k in (0..len).rev() {
        let gy = gys[k];
        let (x, next, gt) = (&xs[k], &xs[k + 1], &acts[k]);
        outer_add(g_yh, 2, n, &gy, next);
        g_by[0] += gy[0];
        g_by[1] += gy[1];
        matvec_t_add(t[9], 2, n, &gy, &mut dx);
        for j in 0..n {
            let (z, h) = (gt.z[j], gt.cand[j]);
            da_z[j] = dx[j] * (h - x[j]) * z * (1.0 - z);
            da_h[j] = dx[j] * z * (1.0 - h * h);
        }
        drx.fill(0.0);
        matvec_t_add(t[5], n, n, &da_h, &mut drx);
        for j in 0..n {
            let r = gt.r[j];
            da_r[j] = drx[j] * x[j] * r * (1.0 - r);
        }
        let u = &inputs[k];
        outer_add(g_iz, n, 2, &da_z, u);
        outer_add(g_ir, n, 2, &da_r, u);
        outer_add(g_ih, n, 2, &da_h, u);
        outer_add(g_hz, n, n, &da_z, x);
        outer_add(g_hr, n, n, &da_r, x);
        outer_add(g_hh, n, n, &da_h, &gt.rx);
        for j in 0..n {
            g_bz[j] += da_z[j];
            g_br[j] += da_r[j];
            g_bh[j] += da_h[j];
        }
        if cuts_before(k, truncation) {
            dx.fill(0.0);
        } else {
            for j in 0..n {
                carry[j] = dx[j] * (1.0 - gt.z[j]) + drx[j] * gt.r[j];
            }
            matvec_t_add(t[3], n, n, &da_z, &mut carry);
            matvec_t_add(t[4], n, n, &da_r, &mut carry);
            std::mem::swap(&mut dx, &mut carry);
        }
    }
    sse
}
