//! Long short-term memory cell with an affine read-out of the hidden state.
//!
//! Gates `i, f, o` are sigmoids and the candidate `g` a tanh of
//! `W_i* u + W_h* h + b_*`; `c' = f c + i g`, `h' = o tanh(c')`,
//! `y = W_yh h' + b_y`.

use nalgebra::DMatrix;

use super::{cuts_before, split, split_mut, ModelParams};
use crate::linalg::{matvec_add, matvec_t_add, outer_add, sigmoid};

fn lens(n: usize) -> [usize; 14] {
    let (a, b) = (2 * n, n * n);
    [a, a, a, a, b, b, b, b, n, n, n, n, 2 * n, 2]
}

/// Activated gates in the order `i, f, g, o`.
struct Gates {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
}

fn gates(p: &ModelParams, h: &[f64], u: [f64; 2]) -> Gates {
    let n = p.n;
    let t = split(&p.theta, lens(n));
    let pre = |wi: &[f64], wh: &[f64], b: &[f64]| {
        let mut a = b.to_vec();
        matvec_add(wi, n, 2, &u, &mut a);
        matvec_add(wh, n, n, h, &mut a);
        a
    };
    let sig = |v: Vec<f64>| v.into_iter().map(sigmoid).collect::<Vec<_>>();
    Gates {
        i: sig(pre(t[0], t[4], t[8])),
        f: sig(pre(t[1], t[5], t[9])),
        g: pre(t[2], t[6], t[10]).into_iter().map(f64::tanh).collect(),
        o: sig(pre(t[3], t[7], t[11])),
    }
}

fn output(p: &ModelParams, h: &[f64]) -> [f64; 2] {
    let t = split(&p.theta, lens(p.n));
    let mut y = [t[13][0], t[13][1]];
    matvec_add(t[12], 2, p.n, h, &mut y);
    y
}

pub(crate) fn step(p: &ModelParams, h: &mut [f64], c: &mut [f64], u: [f64; 2]) -> [f64; 2] {
    let gt = gates(p, h, u);
    for j in 0..p.n {
        c[j] = gt.f[j] * c[j] + gt.i[j] * gt.g[j];
        h[j] = gt.o[j] * c[j].tanh();
    }
    output(p, h)
}

/// Derivative coefficients of `c'` and `h'` with respect to the four gate
/// pre-activations, per unit.
struct Local {
    /// dc'/da for a in (i, f, g).
    dc_da: [Vec<f64>; 3],
    /// dh'/da_o.
    dh_dao: Vec<f64>,
    /// dh'/dc'.
    dh_dc: Vec<f64>,
    f: Vec<f64>,
}

fn local(p: &ModelParams, h: &[f64], c: &[f64], u: [f64; 2]) -> Local {
    let gt = gates(p, h, u);
    let n = p.n;
    let mut out = Local {
        dc_da: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        dh_dao: vec![0.0; n],
        dh_dc: vec![0.0; n],
        f: gt.f.clone(),
    };
    for j in 0..n {
        let (i, f, g, o) = (gt.i[j], gt.f[j], gt.g[j], gt.o[j]);
        let cn = f * c[j] + i * g;
        let tc = cn.tanh();
        out.dc_da[0][j] = g * i * (1.0 - i);
        out.dc_da[1][j] = c[j] * f * (1.0 - f);
        out.dc_da[2][j] = i * (1.0 - g * g);
        out.dh_dao[j] = tc * o * (1.0 - o);
        out.dh_dc[j] = o * (1.0 - tc * tc);
    }
    out
}

pub(crate) fn input_jacobian(p: &ModelParams, h: &[f64], c: &[f64], u: [f64; 2]) -> [[f64; 2]; 2] {
    let n = p.n;
    let t = split(&p.theta, lens(n));
    let l = local(p, h, c, u);
    let mut j = [[0.0; 2]; 2];
    for unit in 0..n {
        for col in 0..2 {
            let dc = l.dc_da[0][unit] * t[0][2 * unit + col]
                + l.dc_da[1][unit] * t[1][2 * unit + col]
                + l.dc_da[2][unit] * t[2][2 * unit + col];
            let dh = l.dh_dao[unit] * t[3][2 * unit + col] + l.dh_dc[unit] * dc;
            for (r, row) in j.iter_mut().enumerate() {
                row[col] += t[12][r * n + unit] * dh;
            }
        }
    }
    j
}

/// Jacobian of `[h'; c']` with respect to `[h; c]`.
pub(crate) fn state_matrix(p: &ModelParams, h: &[f64], c: &[f64], u: [f64; 2]) -> DMatrix<f64> {
    let n = p.n;
    let t = split(&p.theta, lens(n));
    let l = local(p, h, c, u);
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for col in 0..n {
            let dc = l.dc_da[0][r] * t[4][r * n + col]
                + l.dc_da[1][r] * t[5][r * n + col]
                + l.dc_da[2][r] * t[6][r * n + col];
            a[(n + r, col)] = dc;
            a[(r, col)] = l.dh_dao[r] * t[7][r * n + col] + l.dh_dc[r] * dc;
        }
        a[(n + r, n + r)] = l.f[r];
        a[(r, n + r)] = l.dh_dc[r] * l.f[r];
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

    // hs/cs[k] enter step k; gate activations of step k in `acts[k]`.
    let mut hs = vec![vec![0.0; n]];
    let mut cs = vec![vec![0.0; n]];
    let mut acts = Vec::with_capacity(len);
    let mut gys = Vec::with_capacity(len);
    let mut sse = 0.0;
    for k in 0..len {
        let gt = gates(p, &hs[k], inputs[k]);
        let mut c = cs[k].clone();
        let mut h = vec![0.0; n];
        for j in 0..n {
            c[j] = gt.f[j] * c[j] + gt.i[j] * gt.g[j];
            h[j] = gt.o[j] * c[j].tanh();
        }
        let y = output(p, &h);
        let e = [y[0] - targets[k][0], y[1] - targets[k][1]];
        sse += e[0] * e[0] + e[1] * e[1];
        gys.push([2.0 * scale * e[0], 2.0 * scale * e[1]]);
        hs.push(h);
        cs.push(c);
        acts.push(gt);
    }

    let g = split_mut(grad, lens(n));
    let [g_ii, g_if, g_ig, g_io, g_hi, g_hf, g_hg, g_ho, g_bi, g_bf, g_bg, g_bo, g_yh, g_by] = g;
    let mut dh = vec![0.0; n];
    let mut dc = vec![0.0; n];
    let mut da = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in (0..len).rev() {
        let gy = gys[k];
        let (h_prev, c_prev) = (&hs[k], &cs[k]);
        let (h_new, c_new) = (&hs[k + 1], &cs[k + 1]);
        let gt = &acts[k];
        outer_add(g_yh, 2, n, &gy, h_new);
        g_by[0] += gy[0];
        g_by[1] += gy[1];
        matvec_t_add(t[12], 2, n, &gy, &mut dh);
        for j in 0..n {
            let tc = c_new[j].tanh();
            let (i, f, gg, o) = (gt.i[j], gt.f[j], gt.g[j], gt.o[j]);
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            da[0][j] = dct * gg * i * (1.0 - i);
            da[1][j] = dct * c_prev[j] * f * (1.0 - f);
            da[2][j] = dct * i * (1.0 - gg * gg);
            da[3][j] = dh[j] * tc * o * (1.0 - o);
            dc[j] = dct * f;
        }
        let u = &inputs[k];
        for (gw, d) in [(&mut *g_ii, &da[0]), (&mut *g_if, &da[1]), (&mut *g_ig, &da[2]), (&mut *g_io, &da[3])] {
            outer_add(gw, n, 2, d, u);
        }
        for (gw, d) in [(&mut *g_hi, &da[0]), (&mut *g_hf, &da[1]), (&mut *g_hg, &da[2]), (&mut *g_ho, &da[3])] {
            outer_add(gw, n, n, d, h_prev);
        }
        for (gb, d) in [(&mut *g_bi, &da[0]), (&mut *g_bf, &da[1]), (&mut *g_bg, &da[2]), (&mut *g_bo, &da[3])] {
            for (b, v) in gb.iter_mut().zip(d) {
                *b += v;
            }
        }
        dh.fill(0.0);
        if cuts_before(k, truncation) {
            dc.fill(0.0);
        } else {
            for (w, d) in [t[4], t[5], t[6], t[7]].into_iter().zip(&da) {
                matvec_t_add(w, n, n, d, &mut dh);
            }
        }
    }
    sse
}
