//! Feed-forward NARX model run in free-run mode.
//!
//! The regressor is `[y_{k-1}, ..., y_{k-n}, u_k, ..., u_{k-n+1}]` (each a
//! pair), passed through two tanh layers and an affine output. Past outputs
//! are the model's own predictions, so gradients flow back through them.

use super::{split, split_mut, ModelParams};
use crate::linalg::{matvec_add, matvec_t_add, outer_add};

fn lens(n: usize, m: usize) -> [usize; 6] {
    [m * 4 * n, m, m * m, m, 2 * m, 2]
}

fn regressor(inputs: &[[f64; 2]], outputs: &[[f64; 2]]) -> Vec<f64> {
    outputs
        .iter()
        .chain(inputs)
        .flat_map(|v| v.iter().copied())
        .collect()
}

/// Hidden activations and output for one regressor.
fn forward(p: &ModelParams, reg: &[f64]) -> (Vec<f64>, Vec<f64>, [f64; 2]) {
    let (n, m) = (p.n, p.hidden);
    let [w1, b1, w2, b2, w3, b3] = split(&p.theta, lens(n, m));
    let mut x1 = b1.to_vec();
    matvec_add(w1, m, 4 * n, reg, &mut x1);
    x1.iter_mut().for_each(|v| *v = v.tanh());
    let mut x2 = b2.to_vec();
    matvec_add(w2, m, m, &x1, &mut x2);
    x2.iter_mut().for_each(|v| *v = v.tanh());
    let mut y = [b3[0], b3[1]];
    matvec_add(w3, 2, m, &x2, &mut y);
    (x1, x2, y)
}

fn push_front(buf: &mut [[f64; 2]], v: [f64; 2]) {
    if !buf.is_empty() {
        buf.rotate_right(1);
        buf[0] = v;
    }
}

pub(crate) fn step(
    p: &ModelParams,
    inputs: &mut [[f64; 2]],
    outputs: &mut [[f64; 2]],
    u: [f64; 2],
) -> [f64; 2] {
    push_front(inputs, u);
    let (_, _, y) = forward(p, &regressor(inputs, outputs));
    push_front(outputs, y);
    y
}

pub(crate) fn input_jacobian(
    p: &ModelParams,
    inputs: &[[f64; 2]],
    outputs: &[[f64; 2]],
    u: [f64; 2],
) -> [[f64; 2]; 2] {
    let (n, m) = (p.n, p.hidden);
    let [w1, _, w2, _, w3, _] = split(&p.theta, lens(n, m));
    let mut window = inputs.to_vec();
    push_front(&mut window, u);
    let (x1, x2, _) = forward(p, &regressor(&window, outputs));
    let mut j = [[0.0; 2]; 2];
    for r in 0..2 {
        // Row r of W_3 diag(1 - x2^2) W_2 diag(1 - x1^2), then the u_k columns of W_1.
        let d2: Vec<f64> = (0..m).map(|a| w3[r * m + a] * (1.0 - x2[a] * x2[a])).collect();
        let mut d1 = vec![0.0; m];
        matvec_t_add(w2, m, m, &d2, &mut d1);
        for (b, v) in d1.iter_mut().enumerate() {
            *v *= 1.0 - x1[b] * x1[b];
        }
        for col in 0..2 {
            j[r][col] = (0..m).map(|b| d1[b] * w1[b * 4 * n + 2 * n + col]).sum();
        }
    }
    j
}

pub(crate) fn sequence_gradient(
    p: &ModelParams,
    inputs: &[[f64; 2]],
    targets: &[[f64; 2]],
    scale: f64,
    truncation: usize,
    grad: &mut [f64],
) -> f64 {
    let (n, m) = (p.n, p.hidden);
    let len = inputs.len();
    let [w1, _, w2, _, w3, _] = split(&p.theta, lens(n, m));

    let mut u_buf = vec![[0.0; 2]; n];
    let mut y_buf = vec![[0.0; 2]; n];
    let mut regs = Vec::with_capacity(len);
    let mut hidden = Vec::with_capacity(len);
    let mut gys = Vec::with_capacity(len);
    let mut sse = 0.0;
    for k in 0..len {
        push_front(&mut u_buf, inputs[k]);
        let reg = regressor(&u_buf, &y_buf);
        let (x1, x2, y) = forward(p, &reg);
        push_front(&mut y_buf, y);
        let e = [y[0] - targets[k][0], y[1] - targets[k][1]];
        sse += e[0] * e[0] + e[1] * e[1];
        gys.push([2.0 * scale * e[0], 2.0 * scale * e[1]]);
        regs.push(reg);
        hidden.push((x1, x2));
    }

    let [g1, gb1, g2, gb2, g3, gb3] = split_mut(grad, lens(n, m));
    let mut d1 = vec![0.0; m];
    let mut d2 = vec![0.0; m];
    let mut dreg = vec![0.0; 4 * n];
    for k in (0..len).rev() {
        let gy = gys[k];
        let (x1, x2) = &hidden[k];
        outer_add(g3, 2, m, &gy, x2);
        gb3[0] += gy[0];
        gb3[1] += gy[1];
        d2.fill(0.0);
        matvec_t_add(w3, 2, m, &gy, &mut d2);
        for (d, x) in d2.iter_mut().zip(x2) {
            *d *= 1.0 - x * x;
        }
        outer_add(g2, m, m, &d2, x1);
        for (g, d) in gb2.iter_mut().zip(&d2) {
            *g += d;
        }
        d1.fill(0.0);
        matvec_t_add(w2, m, m, &d2, &mut d1);
        for (d, x) in d1.iter_mut().zip(x1) {
            *d *= 1.0 - x * x;
        }
        outer_add(g1, m, 4 * n, &d1, &regs[k]);
        for (g, d) in gb1.iter_mut().zip(&d1) {
            *g += d;
        }
        // Route the regressor gradient into the earlier predictions it holds.
        dreg.fill(0.0);
        matvec_t_add(w1, m, 4 * n, &d1, &mut dreg);
        for lag in 1..=n.min(k) {
            let src = k - lag;
            if truncation > 0 && src / truncation != k / truncation {
                break;
            }
            gys[src][0] += dreg[2 * (lag - 1)];
            gys[src][1] += dreg[2 * (lag - 1) + 1];
        }
    }
    sse
}
