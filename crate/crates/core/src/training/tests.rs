use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{Direction, Sample};
use crate::models::{model_init, ModelState};

pub(crate) fn trace_from(layer: usize, inputs: &[ProcessInput], outputs: &[ProcessOutput]) -> LayerTrace {
    let mut s = 0.0;
    let samples: Vec<Sample> = inputs
        .iter()
        .zip(outputs)
        .enumerate()
        .map(|(k, (u, y))| {
            let x = Sample {
                k,
                t: k as f64 * 0.1,
                s,
                u: *u,
                y: *y,
            };
            s += u.v_t * 0.1;
            x
        })
        .collect();
    LayerTrace::from_samples(layer, 0.1, s + 1.0, Direction::for_layer(layer), samples).unwrap()
}

fn random_inputs(rng: &mut ChaCha8Rng, len: usize) -> Vec<ProcessInput> {
    (0..len)
        .map(|_| ProcessInput::new(rng.random_range(2.0..15.0), rng.random_range(21.2..105.8)))
        .collect()
}

fn toy_norm() -> NormStats {
    NormStats {
        u_mean: [8.0, 60.0],
        u_std: [3.5, 24.0],
        y_mean: [1.8, 5.2],
        y_std: [0.5, 0.8],
    }
}

/// Two 20-step traces with outputs unrelated to the model.
fn toy_traces(seed: u64) -> Vec<LayerTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=2)
        .map(|layer| {
            let u = random_inputs(&mut rng, 20);
            let y: Vec<ProcessOutput> = (0..20)
                .map(|_| ProcessOutput::new(rng.random_range(1.0..2.6), rng.random_range(4.0..6.5)))
                .collect();
            trace_from(layer, &u, &y)
        })
        .collect()
}

fn perturbed(arch: Arch, n: usize, seed: u64) -> ModelParams {
    let mut p = model_init(arch, n, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    for v in &mut p.theta {
        *v += rng.random_range(-0.2..0.2);
    }
    p.norm = toy_norm();
    p
}

pub(crate) fn fd_gradient_worst(p: &ModelParams, traces: &[LayerTrace], truncation: usize) -> f64 {
    let (_, grad) = loss_and_gradients(p, traces, truncation).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for i in 0..p.theta.len() {
        q.theta[i] = p.theta[i] + h;
        let plus = loss_only(&q, traces, truncation);
        q.theta[i] = p.theta[i] - h;
        let minus = loss_only(&q, traces, truncation);
        q.theta[i] = p.theta[i];
        let fd = (plus - minus) / (2.0 * h);
        let diff = (grad[i] - fd).abs();
        if diff > 1e-6 {
            worst = worst.max(diff / grad[i].abs().max(fd.abs()));
        }
    }
    worst
}

fn loss_only(p: &ModelParams, traces: &[LayerTrace], truncation: usize) -> f64 {
    if truncation == 0 {
        let seqs = prepare(&p.norm, traces);
        sequences_mse(p, &seqs).unwrap()
    } else {
        loss_and_gradients(p, traces, truncation).unwrap().0
    }
}

#[test]
fn gradients_match_finite_differences() {
    let traces = toy_traces(1);
    for arch in Arch::TRAINABLE {
        for n in [3, 8] {
            let p = perturbed(arch, n, 5 + n as u64);
            let worst = fd_gradient_worst(&p, &traces, 0);
            assert!(worst <= 1e-4, "{arch} n={n}: worst relative error {worst:e}");
        }
    }
}

#[test]
fn truncated_gradient_ignores_cross_window_paths() {
    // With a window of one step the recurrent weights only see the
    // state-to-state path inside each step, so the gradient differs from the
    // full one but keeps the same output-layer terms.
    let traces = toy_traces(2);
    let p = perturbed(Arch::Rnn, 4, 3);
    let (full_loss, full) = loss_and_gradients(&p, &traces, 0).unwrap();
    let (cut_loss, cut) = loss_and_gradients(&p, &traces, 1).unwrap();
    assert_eq!(full_loss, cut_loss);
    let out = p.layout();
    let w_ho_start: usize = out.iter().take(3).map(|t| t.len()).sum();
    assert_eq!(&full[w_ho_start..], &cut[w_ho_start..]);
    assert_ne!(&full[..w_ho_start], &cut[..w_ho_start]);
    let (_, same) = loss_and_gradients(&p, &traces, 1000).unwrap();
    assert_eq!(full, same);
}

#[test]
fn exact_model_has_zero_loss_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for arch in Arch::TRAINABLE {
        let p = perturbed(arch, 3, 9);
        let u = random_inputs(&mut rng, 30);
        let y = rollout(&p, &u).unwrap();
        let traces = vec![trace_from(1, &u, &y)];
        let (loss, grad) = loss_and_gradients(&p, &traces, 0).unwrap();
        assert!(loss < 1e-24, "{arch}: {loss}");
        assert!(grad.iter().all(|g| g.abs() < 1e-12), "{arch}");
    }
}

#[test]
fn duplicating_traces_keeps_the_mse() {
    let traces = toy_traces(3);
    let p = perturbed(Arch::Gru, 3, 1);
    let (once, g1) = loss_and_gradients(&p, &traces, 0).unwrap();
    let doubled: Vec<_> = traces.iter().chain(&traces).cloned().collect();
    let (twice, g2) = loss_and_gradients(&p, &doubled, 0).unwrap();
    assert!((once - twice).abs() <= 1e-14 * once);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn non_finite_loss_names_the_trace() {
    let mut traces = toy_traces(5);
    let mut p = perturbed(Arch::Rnn, 3, 1);
    p.norm.y_std = [1e-300, 1e-300];
    traces.truncate(1);
    match loss_and_gradients(&p, &traces, 0) {
        Err(Error::NumericFault(msg)) => assert!(msg.contains("trace 0"), "{msg}"),
        other => panic!("expected numeric fault, got {other:?}"),
    }
}

#[test]
fn split_is_80_20_deterministic_and_disjoint() {
    let traces: Vec<LayerTrace> = (1..=10)
        .map(|l| trace_from(l, &[ProcessInput::new(5.0, 50.0)], &[ProcessOutput::new(1.0, 5.0)]))
        .collect();
    let a = split_dataset(traces.clone(), 0.8, 3).unwrap();
    let b = split_dataset(traces.clone(), 0.8, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train().count(), 8);
    assert_eq!(a.validation().count(), 2);
    let mut layers: Vec<usize> = a.train().chain(a.validation()).map(|t| t.layer).collect();
    layers.sort();
    assert_eq!(layers, (1..=10).collect::<Vec<_>>());
    let c = split_dataset(traces.clone(), 0.8, 4).unwrap();
    assert_ne!(a.split, c.split);

    for n in 2..30 {
        let d = split_dataset(traces.iter().cycle().take(n).cloned().collect(), 0.8, 0).unwrap();
        let train = d.train().count();
        assert!((train as f64 - 0.8 * n as f64).abs() <= 1.0);
        assert!(d.validation().count() >= 1);
    }
    assert!(matches!(
        split_dataset(traces[..1].to_vec(), 0.8, 0),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn error_stats_constructed_cases() {
    let truth: Vec<ProcessOutput> = (0..50).map(|i| ProcessOutput::new(1.0 + 0.01 * i as f64, 5.0)).collect();
    let perfect = error_stats(truth.iter().map(|y| (*y, *y))).unwrap();
    assert_eq!(perfect.mae, [0.0, 0.0]);
    assert_eq!(perfect.p95, [0.0, 0.0]);
    let offset = error_stats(truth.iter().map(|y| (ProcessOutput::new(y.dh + 0.1, y.w), *y))).unwrap();
    assert!((offset.mae[0] - 0.1).abs() < 1e-12);
    assert!((offset.p95[0] - 0.1).abs() < 1e-12);
    assert_eq!(offset.mae[1], 0.0);
}

#[test]
fn nearest_rank_percentile_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for len in 1..200 {
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..10.0)).collect();
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Smallest value with at least 95% of the data at or below it.
        let oracle = *sorted
            .iter()
            .find(|x| sorted.iter().filter(|y| y <= x).count() * 100 >= 95 * len)
            .unwrap();
        assert_eq!(percentile_nearest_rank(&v, 0.95).unwrap(), oracle);
    }
}

fn teacher_data(seed: u64, traces: usize, len: usize) -> (ModelParams, Vec<LayerTrace>) {
    let mut teacher = model_init(Arch::Rnn, 4, seed).unwrap();
    teacher.norm = toy_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let data = (1..=traces)
        .map(|l| {
            let u = random_inputs(&mut rng, len);
            let y = rollout(&teacher, &u).unwrap();
            trace_from(l, &u, &y)
        })
        .collect();
    (teacher, data)
}

#[test]
fn training_reduces_validation_loss_and_is_reproducible() {
    let (_, traces) = teacher_data(21, 6, 40);
    let data = split_dataset(traces, 0.8, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 150,
        eval_every: 10,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let (p, hist) = train(Arch::Rnn, 4, &data, &cfg).unwrap();
    assert!(hist.best_val().unwrap() < hist.val_mse[0] * 0.5);
    let (p2, hist2) = train(Arch::Rnn, 4, &data, &cfg).unwrap();
    assert_eq!(p, p2);
    assert_eq!(hist, hist2);
    // The returned parameters score the recorded best validation loss.
    let val = prepare(&p.norm, data.validation());
    assert_eq!(sequences_mse(&p, &val).unwrap(), hist.best_val().unwrap());
}

#[test]
fn mini_batches_train_every_family() {
    let (_, traces) = teacher_data(8, 6, 25);
    let data = split_dataset(traces, 0.8, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch: BatchStrategy::Traces(2),
        eval_every: 5,
        ..TrainConfig::default()
    };
    for arch in Arch::TRAINABLE {
        let (p, hist) = train(arch, 3, &data, &cfg).unwrap();
        p.validate().unwrap();
        assert!(hist.best_val().unwrap() <= hist.val_mse[0], "{arch}");
    }
}

#[test]
fn divergence_is_reported_with_history() {
    let (_, traces) = teacher_data(3, 4, 20);
    let data = split_dataset(traces, 0.8, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        adam: AdamConfig {
            learning_rate: 1e308,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    match train(Arch::Rnn, 3, &data, &cfg) {
        Err(Error::Diverged { history, .. }) => assert!(!history.epochs.is_empty()),
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn fine_tune_with_huge_lambda_keeps_parameters() {
    let (_, traces) = teacher_data(30, 1, 60);
    let p = perturbed(Arch::Rnn, 4, 2);
    let cfg = FineTuneConfig {
        lambda: 1e9,
        ..FineTuneConfig::default()
    };
    let out = fine_tune(&p, &traces, &cfg).unwrap();
    for (a, b) in out.params.theta.iter().zip(&p.theta) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3));
    }
    assert_eq!(out.params.norm, p.norm);
}

#[test]
fn fine_tune_shrinks_toward_the_anchor_and_fits_the_layer() {
    let (_, traces) = teacher_data(31, 1, 80);
    let p = perturbed(Arch::Rnn, 4, 6);
    let base = FineTuneConfig {
        epochs: 150,
        learning_rate: 1e-3,
        ..FineTuneConfig::default()
    };
    let free = fine_tune(&p, &traces, &FineTuneConfig { lambda: 0.0, ..base }).unwrap();
    let reg = fine_tune(&p, &traces, &FineTuneConfig { lambda: 0.05, ..base }).unwrap();
    let dist = |q: &ModelParams| crate::linalg::norm(&q.theta.iter().zip(&p.theta).map(|(a, b)| a - b).collect::<Vec<_>>());
    assert!(dist(&reg.params) <= dist(&free.params));

    // lambda = 0 is plain MSE fitting of the layer.
    let seqs = prepare(&p.norm, &traces);
    assert!((free.final_loss - sequences_mse(&free.params, &seqs).unwrap()).abs() < 1e-15);
    assert!(free.final_loss < free.initial_loss);

    let before = evaluate_errors(&p, &traces).unwrap();
    let after = evaluate_errors(&free.params, &traces).unwrap();
    assert!(after.mae[0] <= before.mae[0]);
}

#[test]
fn hidden_state_of_trained_model_is_reset_per_trace() {
    let (teacher, traces) = teacher_data(40, 2, 15);
    let stats = evaluate_errors(&teacher, &traces).unwrap();
    assert!(stats.mae[0] < 1e-12 && stats.mae[1] < 1e-12);
    let mut st = ModelState::zero(&teacher);
    st.advance(&teacher, [1.0, 1.0]);
    assert_ne!(st, ModelState::zero(&teacher));
}
