//! Simple recurrent network: `x' = tanh(W_ih u + W_hh x + b_h)`,
//! `y = W_ho x' + b_o`.

use nalgebra::DMatrix;

use super::{cuts_before, split, split_mut, ModelParams};
use crate::linalg::{matvec_add, matvec_t_add, outer_add};

fn lens(n: usize) -> [usize; 5] {
    [2 * n, n * n, n, 2 * n, 2]
}

fn pre_activation(p: &ModelParams, x: &[f64], u: [f64; 2], z: &mut [f64]) {
    let n = p.n;
    let [w_ih, w_hh, b_h, _, _] = split(&p.theta, lens(n));
    z.copy_from_slice(b_h);
    matvec_add(w_ih, n, 2, &u, z);
    matvec_add(w_hh, n, n, x, z);
}

fn output(p: &ModelParams, x: &[f64]) -> [f64; 2] {
    let [_, _, _, w_ho, b_o] = split(&p.theta, lens(p.n));
    let mut y = [b_o[0], b_o[1]];
    matvec_add(w_ho, 2, p.n, x, &mut y);
    y
}

pub(crate) fn step(p: &ModelParams, x: &mut [f64], u: [f64; 2]) -> [f64; 2] {
    let mut z = vec![0.0; p.n];
    pre_activation(p, x, u, &mut z);
    for (xi, zi) in x.iter_mut().zip(&z) {
        *xi = zi.tanh();
    }
    output(p, x)
}

pub(crate) fn input_jacobian(p: &ModelParams, x: &[f64], u: [f64; 2]) -> [[f64; 2]; 2] {
    let n = p.n;
    let [w_ih, _, _, w_ho, _] = split(&p.theta, lens(n));
    let mut z = vec![0.0; n];
    pre_activation(p, x, u, &mut z);
    let mut j = [[0.0; 2]; 2];
    for i in 0..n {
        let d = 1.0 - z[i].tanh().powi(2);
        for (r, row) in j.iter_mut().enumerate() {
            let c = w_ho[r * n + i] * d;
            row[0] += c * w_ih[2 * i];
            row[1] += c * w_ih[2 * i + 1];
        }
    }
    j
}

pub(crate) fn state_matrix(p: &ModelParams, x: &[f64], u: [f64; 2]) -> DMatrix<f64> {
    let n = p.n;
    let [_, w_hh, _, _, _] = split(&p.theta, lens(n));
    let mut z = vec![0.0; n];
    pre_activation(p, x, u, &mut z);
    DMatrix::from_fn(n, n, |r, c| (1.0 - z[r].tanh().powi(2)) * w_hh[r * n + c])
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
    let [_, w_hh, _, w_ho, _] = split(&p.theta, lens(n));

    // xs[k] is the state entering step k; xs[len] is the final state.
    let mut xs = vec![0.0; (len + 1) * n];
    let mut gys = Vec::with_capacity(len);
    let mut sse = 0.0;
    let mut z = vec![0.0; n];
    for k in 0..len {
        let (head, tail) = xs.split_at_mut((k + 1) * n);
        let x = &head[k * n..];
        pre_activation(p, x, inputs[k], &mut z);
        let next = &mut tail[..n];
        for (xi, zi) in next.iter_mut().zip(&z) {
            *xi = zi.tanh();
        }
        let y = output(p, next);
        let e = [y[0] - targets[k][0], y[1] - targets[k][1]];
        sse += e[0] * e[0] + e[1] * e[1];
        gys.push([2.0 * scale * e[0], 2.0 * scale * e[1]]);
    }

    let [g_ih, g_hh, g_bh, g_ho, g_bo] = split_mut(grad, lens(n));
    let mut dx = vec![0.0; n];
    let mut dz = vec![0.0; n];
    for k in (0..len).rev() {
        let x = &xs[k * n..(k + 1) * n];
        let next = &xs[(k + 1) * n..(k + 2) * n];
        let gy = gys[k];
        outer_add(g_ho, 2, n, &gy, next);
        g_bo[0] += gy[0];
        g_bo[1] += gy[1];
        matvec_t_add(w_ho, 2, n, &gy, &mut dx);
        for i in 0..n {
            dz[i] = dx[i] * (1.0 - next[i] * next[i]);
        }
        outer_add(g_ih, n, 2, &dz, &inputs[k]);
        outer_add(g_hh, n, n, &dz, x);
        for (g, d) in g_bh.iter_mut().zip(&dz) {
            *g += d;
        }
        dx.fill(0.0);
        if !cuts_before(k, truncation) {
            matvec_t_add(w_hh, n, n, &dz, &mut dx);
        }
    }
    sse
}
