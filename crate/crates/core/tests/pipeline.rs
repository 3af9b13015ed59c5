use waam_core::analysis::{build_report, ReportConfig};
use waam_core::control::{run_closed_loop, ControlModel, ControllerConfig, InputBounds, Mode};
use waam_core::io::{load_build, load_model, load_traces, save_build, save_model, save_traces, StoredModel};
use waam_core::models::{rollout, Arch, LogLogModel};
use waam_core::plant::coverage::{generate_builds, CoverageGrid};
use waam_core::plant::PlantConfig;
use waam_core::training::{split_dataset, train, TrainConfig};

fn small_data(plant: &PlantConfig) -> Vec<waam_core::geometry::LayerTrace> {
    let grid = CoverageGrid {
        levels: 4,
        layers_per_build: 2,
        segments_per_layer: 3,
        ..CoverageGrid::default()
    };
    let spec = grid.spec(&InputBounds::default(), plant.length).unwrap();
    generate_builds(plant, &spec).unwrap().into_iter().flatten().collect()
}

#[test]
fn generate_train_persist_and_control() {
    let dir = tempfile::tempdir().unwrap();
    let plant = PlantConfig::default();
    let traces = small_data(&plant);
    assert_eq!(traces.len(), 8);

    let csv = dir.path().join("data.csv");
    save_traces(&csv, &traces).unwrap();
    assert_eq!(load_traces(&csv, plant.t_s, plant.length).unwrap(), traces);

    let data = split_dataset(traces, 0.8, 0).unwrap();
    assert!(data.validation().count() >= 1);
    let cfg = TrainConfig {
        epochs: 200,
        eval_every: 20,
        ..TrainConfig::default()
    };
    let (params, history) = train(Arch::Rnn, 4, &data, &cfg).unwrap();
    let best = history.val_mse.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(best < history.val_mse[0], "validation loss never improved: {:?}", history.val_mse);

    let path = dir.path().join("model.json");
    save_model(&path, &StoredModel::Neural(params.clone())).unwrap();
    let StoredModel::Neural(loaded) = load_model(&path).unwrap() else {
        panic!("expected a neural model");
    };
    let inputs: Vec<_> = data.validation().next().unwrap().time_order().map(|s| s.u).collect();
    assert_eq!(rollout(&loaded, &inputs).unwrap(), rollout(&params, &inputs).unwrap());

    let loglog = LogLogModel::fit(data.train().flat_map(|t| t.time_order()).map(|s| (s.u, s.y))).unwrap();
    let ctrl = ControllerConfig::default();
    let report_cfg = ReportConfig::default();
    for (mode, model) in [
        (Mode::BaselineConstant, ControlModel::None),
        (Mode::LoglogInverse, ControlModel::LogLog(&loglog)),
        (Mode::RnnOnestep, ControlModel::Neural(&loaded)),
    ] {
        let build = run_closed_loop(&plant, model, &ctrl, 2, mode).unwrap();
        assert!(build.is_complete(), "{mode}: {:?}", build.failure);
        let out = dir.path().join(mode.as_str());
        save_build(&out, &build, "hash").unwrap();
        let (back, sidecar) = load_build(&out).unwrap();
        assert_eq!(sidecar.mode, mode);
        assert_eq!(sidecar.config_hash, "hash");
        assert_eq!(back.layers.len(), 2);
        let report = build_report(&back, &report_cfg).unwrap();
        assert_eq!(report.layers.len(), 2);
        assert!(report.average.height_sd.is_finite());
    }
}

#[test]
fn closed_loop_is_deterministic_per_seed() {
    let plant = PlantConfig::default().with_seed(3);
    let ctrl = ControllerConfig::default();
    let a = run_closed_loop(&plant, ControlModel::None, &ctrl, 2, Mode::BaselineConstant).unwrap();
    let b = run_closed_loop(&plant, ControlModel::None, &ctrl, 2, Mode::BaselineConstant).unwrap();
    assert_eq!(a, b);
    let c = run_closed_loop(&plant.clone().with_seed(4), ControlModel::None, &ctrl, 2, Mode::BaselineConstant).unwrap();
    assert_ne!(a.layers[0].measured, c.layers[0].measured);
}
