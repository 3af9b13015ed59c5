//! Sequence models of the deposition process.
//!
//! All recurrent families share the state-space form
//! `x_{k+1} = f(x_k, u_k)`, `y_{k+1} = C x_{k+1} + d`: a step consumes the
//! current state and input and emits the output of the updated state. The
//! NARX model keeps a window of past inputs and its own past outputs
//! instead of a hidden vector.
//!
//! Parameters live in one flat vector per model (see [`ModelParams::layout`])
//! so the optimizer and the fine-tuning penalty can treat them uniformly.
//! Inputs and outputs are z-scored with [`NormStats`] before entering the
//! networks.

pub(crate) mod gru;
pub mod loglog;
pub(crate) mod lstm;
pub(crate) mod narx;
pub(crate) mod rnn;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{ProcessInput, ProcessOutput};

pub use loglog::LogLogModel;

/// Width of both NARX hidden layers.
pub const NARX_HIDDEN: usize = 16;

/// Hidden sizes and history lengths of the capacity ablation.
pub const ABLATION_SIZES: [usize; 4] = [3, 8, 16, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Rnn,
    Lstm,
    Gru,
    Narx,
    Loglog,
}

impl Arch {
    pub const TRAINABLE: [Arch; 4] = [Arch::Rnn, Arch::Lstm, Arch::Gru, Arch::Narx];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Rnn => "rnn",
            Arch::Lstm => "lstm",
            Arch::Gru => "gru",
            Arch::Narx => "narx",
            Arch::Loglog => "loglog",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Arch::Rnn | Arch::Lstm | Arch::Gru)
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(Arch::Rnn),
            "lstm" => Ok(Arch::Lstm),
            "gru" => Ok(Arch::Gru),
            "narx" => Ok(Arch::Narx),
            "loglog" => Ok(Arch::Loglog),
            other => Err(Error::invalid(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub u_mean: [f64; 2],
    pub u_std: [f64; 2],
    pub y_mean: [f64; 2],
    pub y_std: [f64; 2],
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            u_mean: [0.0; 2],
            u_std: [1.0; 2],
            y_mean: [0.0; 2],
            y_std: [1.0; 2],
        }
    }
}

impl NormStats {
    /// Mean and population standard deviation per channel. Degenerate
    /// channels get unit scale.
    pub fn fit(pairs: impl IntoIterator<Item = (ProcessInput, ProcessOutput)>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for (u, y) in pairs {
            for (i, v) in [u.v_t, u.v_w, y.dh, y.w].into_iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::invalid("cannot fit normalization on no samples"));
        }
        let n = count as f64;
        let mut mean = [0.0; 4];
        let mut std = [1.0; 4];
        for i in 0..4 {
            mean[i] = sum[i] / n;
            let var = (sq[i] / n - mean[i] * mean[i]).max(0.0);
            let s = var.sqrt();
            std[i] = if s > 1e-12 * mean[i].abs().max(1.0) { s } else { 1.0 };
        }
        Ok(Self {
            u_mean: [mean[0], mean[1]],
            u_std: [std[0], std[1]],
            y_mean: [mean[2], mean[3]],
            y_std: [std[2], std[3]],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .u_mean
            .iter()
            .chain(&self.u_std)
            .chain(&self.y_mean)
            .chain(&self.y_std);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite normalization statistics"));
        }
        if self.u_std.iter().chain(&self.y_std).any(|s| *s <= 0.0) {
            return Err(Error::invalid("normalization std must be positive"));
        }
        Ok(())
    }

    pub fn normalize_input(&self, u: ProcessInput) -> [f64; 2] {
        [
            (u.v_t - self.u_mean[0]) / self.u_std[0],
            (u.v_w - self.u_mean[1]) / self.u_std[1],
        ]
    }

    pub fn denormalize_input(&self, u: [f64; 2]) -> ProcessInput {
        ProcessInput::new(
            u[0] * self.u_std[0] + self.u_mean[0],
            u[1] * self.u_std[1] + self.u_mean[1],
        )
    }

    pub fn normalize_output(&self, y: ProcessOutput) -> [f64; 2] {
        [
            (y.dh - self.y_mean[0]) / self.y_std[0],
            (y.w - self.y_mean[1]) / self.y_std[1],
        ]
    }

    pub fn denormalize_output(&self, y: [f64; 2]) -> ProcessOutput {
        ProcessOutput::new(
            y[0] * self.y_std[0] + self.y_mean[0],
            y[1] * self.y_std[1] + self.y_mean[1],
        )
    }
}

/// One named tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub bias: bool,
}

impl TensorSpec {
    const fn weight(name: &'static str, rows: usize, cols: usize) -> Self {
        Self { name, rows, cols, bias: false }
    }

    const fn bias(name: &'static str, rows: usize) -> Self {
        Self { name, rows, cols: 1, bias: true }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tensor layout of an architecture, in storage order.
pub fn layout(arch: Arch, n: usize, hidden: usize) -> Result<Vec<TensorSpec>> {
    use TensorSpec as T;
    Ok(match arch {
        Arch::Rnn => vec![
            T::weight("W_ih", n, 2),
            T::weight("W_hh", n, n),
            T::bias("b_h", n),
            T::weight("W_ho", 2, n),
            T::bias("b_o", 2),
        ],
        Arch::Lstm => vec![
            T::weight("W_ii", n, 2),
            T::weight("W_if", n, 2),
            T::weight("W_ig", n, 2),
            T::weight("W_io", n, 2),
            T::weight("W_hi", n, n),
            T::weight("W_hf", n, n),
            T::weight("W_hg", n, n),
            T::weight("W_ho", n, n),
            T::bias("b_i", n),
            T::bias("b_f", n),
            T::bias("b_g", n),
            T::bias("b_o", n),
            T::weight("W_yh", 2, n),
            T::bias("b_y", 2),
        ],
        Arch::Gru => vec![
            T::weight("W_iz", n, 2),
            T::weight("W_ir", n, 2),
            T::weight("W_ih", n, 2),
            T::weight("W_hz", n, n),
            T::weight("W_hr", n, n),
            T::weight("W_hh", n, n),
            T::bias("b_z", n),
            T::bias("b_r", n),
            T::bias("b_h", n),
            T::weight("W_yh", 2, n),
            T::bias("b_y", 2),
        ],
        Arch::Narx => vec![
            T::weight("W_1", hidden, 4 * n),
            T::bias("b_1", hidden),
            T::weight("W_2", hidden, hidden),
            T::bias("b_2", hidden),
            T::weight("W_3", 2, hidden),
            T::bias("b_3", 2),
        ],
        Arch::Loglog => {
            return Err(Error::Unsupported(
                "the log-log model has no neural parameter layout".into(),
            ))
        }
    })
}

/// Splits a flat vector into consecutive slices of the given lengths.
pub(crate) fn split<'a, const K: usize>(mut v: &'a [f64], lens: [usize; K]) -> [&'a [f64]; K] {
    let mut out: [&[f64]; K] = [&[]; K];
    for (slot, len) in out.iter_mut().zip(lens) {
        let (head, tail) = v.split_at(len);
        *slot = head;
        v = tail;
    }
    out
}

pub(crate) fn split_mut<'a, const K: usize>(
    mut v: &'a mut [f64],
    lens: [usize; K],
) -> [&'a mut [f64]; K] {
    let mut out: [&mut [f64]; K] = std::array::from_fn(|_| <&mut [f64]>::default());
    for (slot, len) in out.iter_mut().zip(lens) {
        let (head, tail) = std::mem::take(&mut v).split_at_mut(len);
        *slot = head;
        v = tail;
    }
    out
}

/// Architecture tag, dimensions, flat weights and normalization of one
/// trained (or freshly initialized) model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    /// Hidden size (recurrent) or history length (NARX).
    pub n: usize,
    /// NARX hidden-layer width; equal to `n` for recurrent models.
    pub hidden: usize,
    pub theta: Vec<f64>,
    pub norm: NormStats,
}

impl ModelParams {
    pub fn layout(&self) -> Vec<TensorSpec> {
        layout(self.arch, self.n, self.hidden).expect("neural architecture")
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Builds parameters from explicit values, checking dimensions.
    pub fn from_parts(arch: Arch, n: usize, hidden: usize, theta: Vec<f64>, norm: NormStats) -> Result<Self> {
        let p = Self { arch, n, hidden, theta, norm };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("model size must be positive"));
        }
        let want: usize = layout(self.arch, self.n, self.hidden)?.iter().map(|t| t.len()).sum();
        if self.theta.len() != want {
            return Err(Error::invalid(format!(
                "{} with n = {} needs {want} parameters, got {}",
                self.arch,
                self.n,
                self.theta.len()
            )));
        }
        if self.arch.is_recurrent() && self.hidden != self.n {
            return Err(Error::invalid("recurrent models use hidden = n"));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        self.norm.validate()
    }

    /// Named view of one tensor.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let mut offset = 0;
        for spec in self.layout() {
            if spec.name == name {
                return Some(&self.theta[offset..offset + spec.len()]);
            }
            offset += spec.len();
        }
        None
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let mut offset = 0;
        for spec in self.layout() {
            if spec.name == name {
                return Some(&mut self.theta[offset..offset + spec.len()]);
            }
            offset += spec.len();
        }
        None
    }

    /// Mask of bias entries in `theta`.
    pub fn bias_mask(&self) -> Vec<bool> {
        self.layout()
            .iter()
            .flat_map(|t| std::iter::repeat_n(t.bias, t.len()))
            .collect()
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
pub fn model_init(arch: Arch, n: usize, seed: u64) -> Result<ModelParams> {
    let hidden = if arch == Arch::Narx { NARX_HIDDEN } else { n };
    model_init_with(arch, n, hidden, seed)
}

pub fn model_init_with(arch: Arch, n: usize, hidden: usize, seed: u64) -> Result<ModelParams> {
    if arch == Arch::Loglog {
        return Err(Error::invalid(
            "the log-log baseline is fitted, not initialized",
        ));
    }
    if n == 0 || hidden == 0 {
        return Err(Error::invalid("model size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = Vec::new();
    for spec in layout(arch, n, hidden)? {
        if spec.bias {
            theta.extend(std::iter::repeat_n(0.0, spec.len()));
        } else {
            let bound = 1.0 / (spec.cols as f64).sqrt();
            theta.extend((0..spec.len()).map(|_| rng.random_range(-bound..=bound)));
        }
    }
    Ok(ModelParams {
        arch,
        n,
        hidden,
        theta,
        norm: NormStats::default(),
    })
}

/// Recurrent state of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelState {
    /// Hidden vector of the simple RNN or GRU.
    Hidden(Vec<f64>),
    Lstm { h: Vec<f64>, c: Vec<f64> },
    /// Newest-first windows of normalized inputs `u_k, u_{k-1}, ...` and
    /// past outputs `y_{k-1}, y_{k-2}, ...`.
    Narx {
        inputs: Vec<[f64; 2]>,
        outputs: Vec<[f64; 2]>,
    },
}

impl ModelState {
    /// The zero initial state used at the start of every layer.
    pub fn zero(p: &ModelParams) -> Self {
        match p.arch {
            Arch::Rnn | Arch::Gru => ModelState::Hidden(vec![0.0; p.n]),
            Arch::Lstm => ModelState::Lstm {
                h: vec![0.0; p.n],
                c: vec![0.0; p.n],
            },
            Arch::Narx | Arch::Loglog => ModelState::Narx {
                inputs: vec![[0.0; 2]; p.n],
                outputs: vec![[0.0; 2]; p.n],
            },
        }
    }

    /// The vector `x` whose norm is tracked by the diagnostics; empty for
    /// NARX.
    pub fn hidden(&self) -> &[f64] {
        match self {
            ModelState::Hidden(x) => x,
            ModelState::Lstm { h, .. } => h,
            ModelState::Narx { .. } => &[],
        }
    }

    /// Full state vector as seen by [`state_matrix`]: `x` for RNN/GRU,
    /// `[h; c]` for LSTM.
    pub fn flat(&self) -> Vec<f64> {
        match self {
            ModelState::Hidden(x) => x.clone(),
            ModelState::Lstm { h, c } => h.iter().chain(c).copied().collect(),
            ModelState::Narx { inputs, outputs } => outputs
                .iter()
                .chain(inputs)
                .flat_map(|v| v.iter().copied())
                .collect(),
        }
    }

    fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }

    fn matches(&self, p: &ModelParams) -> bool {
        match (self, p.arch) {
            (ModelState::Hidden(x), Arch::Rnn | Arch::Gru) => x.len() == p.n,
            (ModelState::Lstm { h, c }, Arch::Lstm) => h.len() == p.n && c.len() == p.n,
            (ModelState::Narx { inputs, outputs }, Arch::Narx) => {
                inputs.len() == p.n && outputs.len() == p.n
            }
            _ => false,
        }
    }

    /// Advances in place under normalized input `u`; returns the normalized
    /// output.
    pub fn advance(&mut self, p: &ModelParams, u: [f64; 2]) -> [f64; 2] {
        match self {
            ModelState::Hidden(x) if p.arch == Arch::Rnn => rnn::step(p, x, u),
            ModelState::Hidden(x) => gru::step(p, x, u),
            ModelState::Lstm { h, c } => lstm::step(p, h, c, u),
            ModelState::Narx { inputs, outputs } => narx::step(p, inputs, outputs, u),
        }
    }
}

fn check_state(p: &ModelParams, st: &ModelState) -> Result<()> {
    if !st.matches(p) {
        return Err(Error::invalid(format!(
            "state shape does not match a {} model of size {}",
            p.arch, p.n
        )));
    }
    if !st.is_finite() {
        return Err(Error::numeric("non-finite model state"));
    }
    Ok(())
}

/// One step in normalized units: `(x_{k+1}, y_{k+1})` from `(x_k, u_k)`.
pub fn model_step(p: &ModelParams, st: &ModelState, u: [f64; 2]) -> Result<(ModelState, [f64; 2])> {
    check_state(p, st)?;
    if !(u[0].is_finite() && u[1].is_finite()) {
        return Err(Error::invalid("non-finite model input"));
    }
    let mut next = st.clone();
    let y = next.advance(p, u);
    if !(y[0].is_finite() && y[1].is_finite()) || !next.is_finite() {
        return Err(Error::numeric("model step produced non-finite values"));
    }
    Ok((next, y))
}

/// Denormalized prediction of the next output if `u` is applied in `st`,
/// without committing the state.
pub fn predict(p: &ModelParams, st: &ModelState, u: ProcessInput) -> Result<(ModelState, ProcessOutput)> {
    let (next, y) = model_step(p, st, p.norm.normalize_input(u))?;
    Ok((next, p.norm.denormalize_output(y)))
}

/// Chains [`model_step`] from the zero state over denormalized inputs.
pub fn rollout(p: &ModelParams, inputs: &[ProcessInput]) -> Result<Vec<ProcessOutput>> {
    Ok(rollout_states(p, inputs)?.0)
}

/// Like [`rollout`] but also returns the state *before* each step.
pub fn rollout_states(
    p: &ModelParams,
    inputs: &[ProcessInput],
) -> Result<(Vec<ProcessOutput>, Vec<ModelState>)> {
    let mut st = ModelState::zero(p);
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut states = Vec::with_capacity(inputs.len());
    for u in inputs {
        let (next, y) = predict(p, &st, *u)?;
        states.push(std::mem::replace(&mut st, next));
        outputs.push(y);
    }
    Ok((outputs, states))
}

/// Jacobian of the next denormalized output with respect to the current
/// denormalized input (mm per mm/s), state held fixed.
pub fn input_jacobian(p: &ModelParams, st: &ModelState, u: ProcessInput) -> Result<[[f64; 2]; 2]> {
    check_state(p, st)?;
    let un = p.norm.normalize_input(u);
    let jn = match st {
        ModelState::Hidden(x) if p.arch == Arch::Rnn => rnn::input_jacobian(p, x, un),
        ModelState::Hidden(x) => gru::input_jacobian(p, x, un),
        ModelState::Lstm { h, c } => lstm::input_jacobian(p, h, c, un),
        ModelState::Narx { inputs, outputs } => narx::input_jacobian(p, inputs, outputs, un),
    };
    let mut j = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            j[r][c] = p.norm.y_std[r] * jn[r][c] / p.norm.u_std[c];
        }
    }
    if j.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite input Jacobian"));
    }
    Ok(j)
}

/// Jacobian `A = df/dx` of the state update at `(x, u)`. For the LSTM the
/// state is `[h; c]`, so `A` is `2n x 2n`.
pub fn state_matrix(p: &ModelParams, st: &ModelState, u: ProcessInput) -> Result<DMatrix<f64>> {
    check_state(p, st)?;
    let un = p.norm.normalize_input(u);
    match st {
        ModelState::Hidden(x) if p.arch == Arch::Rnn => Ok(rnn::state_matrix(p, x, un)),
        ModelState::Hidden(x) => Ok(gru::state_matrix(p, x, un)),
        ModelState::Lstm { h, c } => Ok(lstm::state_matrix(p, h, c, un)),
        ModelState::Narx { .. } => Err(Error::Unsupported(
            "NARX has no recurrent state matrix".into(),
        )),
    }
}

/// Sum of squared normalized output errors of one sequence rolled out from
/// the zero state, with its gradient accumulated into `grad` after scaling
/// by `scale`. `truncation > 0` cuts the backward pass into windows of that
/// many steps.
pub(crate) fn sequence_gradient(
    p: &ModelParams,
    inputs: &[[f64; 2]],
    targets: &[[f64; 2]],
    scale: f64,
    truncation: usize,
    grad: &mut [f64],
) -> f64 {
    match p.arch {
        Arch::Rnn => rnn::sequence_gradient(p, inputs, targets, scale, truncation, grad),
        Arch::Lstm => lstm::sequence_gradient(p, inputs, targets, scale, truncation, grad),
        Arch::Gru => gru::sequence_gradient(p, inputs, targets, scale, truncation, grad),
        Arch::Narx => narx::sequence_gradient(p, inputs, targets, scale, truncation, grad),
        Arch::Loglog => unreachable!("log-log models are not trained by gradient"),
    }
}

/// Mean wall-clock time of one forward step, in seconds, over `steps` calls
/// after as many warm-up calls. Inputs cycle over a fixed pattern so the
/// state keeps moving.
pub fn mean_step_latency(p: &ModelParams, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::invalid("latency needs at least one step"));
    }
    p.validate()?;
    let inputs = [[0.3, -0.2], [-0.5, 0.4], [0.1, 0.9], [-0.8, -0.6]];
    let mut st = ModelState::zero(p);
    let mut sink = 0.0;
    for k in 0..steps {
        sink += st.advance(p, inputs[k % 4])[0];
    }
    let start = std::time::Instant::now();
    for k in 0..steps {
        sink += std::hint::black_box(st.advance(p, std::hint::black_box(inputs[k % 4])))[0];
    }
    let elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    Ok(elapsed / steps as f64)
}

/// Sum of squared normalized errors without gradients.
pub(crate) fn sequence_sse(p: &ModelParams, inputs: &[[f64; 2]], targets: &[[f64; 2]]) -> f64 {
    let mut st = ModelState::zero(p);
    inputs
        .iter()
        .zip(targets)
        .map(|(u, t)| {
            let y = st.advance(p, *u);
            (y[0] - t[0]).powi(2) + (y[1] - t[1]).powi(2)
        })
        .sum()
}

/// Truncation window boundary: true if the backward pass must not carry
/// state gradients from step `k` into step `k - 1`.
#[inline]
pub(crate) fn cuts_before(k: usize, truncation: usize) -> bool {
    truncation > 0 && k % truncation == 0
}

#[cfg(test)]
pub(crate) mod testing {
    //! Straight-line transcriptions of the model equations used as oracles.

    use super::*;

    fn mv(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        (0..rows)
            .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum())
            .collect()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Outputs of a zero-state rollout in normalized units.
    pub fn oracle_rollout(p: &ModelParams, inputs: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let n = p.n;
        let t = |name: &str| p.tensor(name).unwrap().to_vec();
        let mut out = Vec::new();
        match p.arch {
            Arch::Rnn => {
                let mut x = vec![0.0; n];
                for u in inputs {
                    let a = mv(&t("W_ih"), n, 2, u);
                    let b = mv(&t("W_hh"), n, n, &x);
                    x = (0..n).map(|i| (a[i] + b[i] + t("b_h")[i]).tanh()).collect();
                    let y = mv(&t("W_ho"), 2, n, &x);
                    out.push([y[0] + t("b_o")[0], y[1] + t("b_o")[1]]);
                }
            }
            Arch::Lstm => {
                let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
                for u in inputs {
                    let gate = |wi: &str, wh: &str, b: &str| -> Vec<f64> {
                        let a = mv(&t(wi), n, 2, u);
                        let bb = mv(&t(wh), n, n, &h);
                        (0..n).map(|i| a[i] + bb[i] + t(b)[i]).collect()
                    };
                    let ig: Vec<f64> = gate("W_ii", "W_hi", "b_i").into_iter().map(sig).collect();
                    let fg: Vec<f64> = gate("W_if", "W_hf", "b_f").into_iter().map(sig).collect();
                    let gg: Vec<f64> = gate("W_ig", "W_hg", "b_g").into_iter().map(f64::tanh).collect();
                    let og: Vec<f64> = gate("W_io", "W_ho", "b_o").into_iter().map(sig).collect();
                    c = (0..n).map(|i| fg[i] * c[i] + ig[i] * gg[i]).collect();
                    h = (0..n).map(|i| og[i] * c[i].tanh()).collect();
                    let y = mv(&t("W_yh"), 2, n, &h);
                    out.push([y[0] + t("b_y")[0], y[1] + t("b_y")[1]]);
                }
            }
            Arch::Gru => {
                let mut x = vec![0.0; n];
                for u in inputs {
                    let gate = |wi: &str, wh: &str, b: &str, v: &[f64]| -> Vec<f64> {
                        let a = mv(&t(wi), n, 2, u);
                        let bb = mv(&t(wh), n, n, v);
                        (0..n).map(|i| a[i] + bb[i] + t(b)[i]).collect()
                    };
                    let z: Vec<f64> = gate("W_iz", "W_hz", "b_z", &x).into_iter().map(sig).collect();
                    let r: Vec<f64> = gate("W_ir", "W_hr", "b_r", &x).into_iter().map(sig).collect();
                    let rx: Vec<f64> = (0..n).map(|i| r[i] * x[i]).collect();
                    let hc: Vec<f64> = gate("W_ih", "W_hh", "b_h", &rx).into_iter().map(f64::tanh).collect();
                    x = (0..n).map(|i| (1.0 - z[i]) * x[i] + z[i] * hc[i]).collect();
                    let y = mv(&t("W_yh"), 2, n, &x);
                    out.push([y[0] + t("b_y")[0], y[1] + t("b_y")[1]]);
                }
            }
            Arch::Narx => {
                let m = p.hidden;
                let mut us: Vec<[f64; 2]> = Vec::new();
                let mut ys: Vec<[f64; 2]> = Vec::new();
                for (k, u) in inputs.iter().enumerate() {
                    us.push(*u);
                    let mut reg = Vec::new();
                    for lag in 1..=n {
                        let v = if k >= lag { ys[k - lag] } else { [0.0; 2] };
                        reg.extend(v);
                    }
                    for lag in 0..n {
                        let v = if k >= lag { us[k - lag] } else { [0.0; 2] };
                        reg.extend(v);
                    }
                    let a1 = mv(&t("W_1"), m, 4 * n, &reg);
                    let x1: Vec<f64> = (0..m).map(|i| (a1[i] + t("b_1")[i]).tanh()).collect();
                    let a2 = mv(&t("W_2"), m, m, &x1);
                    let x2: Vec<f64> = (0..m).map(|i| (a2[i] + t("b_2")[i]).tanh()).collect();
                    let y = mv(&t("W_3"), 2, m, &x2);
                    let y = [y[0] + t("b_3")[0], y[1] + t("b_3")[1]];
                    ys.push(y);
                    out.push(y);
                }
            }
            Arch::Loglog => unreachable!(),
        }
        out
    }
}
