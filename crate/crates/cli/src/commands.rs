use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use waam_core::analysis::{
    build_report, layer_spectral_radii, rollout_state_norms, state_norm_trace, steady_state_check, BuildReport,
};
use waam_core::control::{run_closed_loop, ControlModel, Mode};
use waam_core::geometry::LayerTrace;
use waam_core::io::{
    config_hash, load_build, load_config, load_model, load_traces, parse_config, render_config, save_build,
    save_model, save_traces, write_ablation, write_columns, write_loss_history, write_report_layers,
    write_report_summary, AblationRow, StoredModel,
};
use waam_core::models::{mean_step_latency, Arch, LogLogModel, ModelParams};
use waam_core::plant::coverage::{generate_builds, CoverageSpec};
use waam_core::plant::PlantConfig;
use waam_core::training::gradcheck::check_gradients;
use waam_core::training::{
    evaluate_errors, evaluate_loglog, split_dataset, train as train_model, Dataset, ErrorStats,
    TrainConfig,
};
use waam_core::Error as CoreError;

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;
use crate::Common;

pub const PLANT_FILE: &str = "plant.toml";
pub const COVERAGE_FILE: &str = "coverage.toml";
pub const MODEL_FILE: &str = "model.json";
pub const LOGLOG_FILE: &str = "loglog.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_LOGLOG_FILE: &str = "ablation_loglog.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_LAYERS_FILE: &str = "report_layers.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Relative error above which `check-grad` fails.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    argv: Vec<String>,
    config_file: Option<PathBuf>,
    config_text: String,
    config_hash: String,
}

impl Context {
    pub fn new(common: &Common, argv: Vec<String>) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_config::<RunConfig>(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.reseed(seed);
        }
        let config_text = render_config(&cfg)?;
        let config_hash = config_hash(config_text.as_bytes());
        Ok(Self {
            cfg,
            out: common.out.clone(),
            argv,
            config_file: common.config.clone(),
            config_text,
            config_hash,
        })
    }

    fn manifest(&self, command: &str) -> ManifestBuilder {
        let seeds = BTreeMap::from([
            ("plant".to_string(), self.cfg.plant.seed),
            ("coverage".to_string(), self.cfg.coverage.seed),
            ("train".to_string(), self.cfg.train.seed),
        ]);
        let mut m = ManifestBuilder::new(
            command,
            self.argv.clone(),
            self.config_text.clone(),
            self.config_hash.clone(),
            seeds,
        );
        if let Some(path) = &self.config_file {
            m.input(path);
        }
        m
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Identification traces of a `gen-data` directory, ordered by file name.
pub fn load_data(dir: &Path) -> Result<(PlantConfig, Vec<PathBuf>, Vec<LayerTrace>)> {
    let plant_path = dir.join(PLANT_FILE);
    let plant: PlantConfig = load_config(&plant_path).with_context(|| format!("reading {}", plant_path.display()))?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("build_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    let mut traces = Vec::new();
    for f in &files {
        traces.extend(load_traces(f, plant.t_s, plant.length).with_context(|| format!("reading {}", f.display()))?);
    }
    if traces.len() < 2 {
        return Err(CoreError::Data(format!(
            "{} holds {} traces; at least 2 are needed",
            dir.display(),
            traces.len()
        ))
        .into());
    }
    Ok((plant, files, traces))
}

pub fn gen_data(ctx: &Context, coverage: Option<&Path>) -> Result<()> {
    let mut manifest = ctx.manifest("gen-data");
    let plant = &ctx.cfg.plant;
    plant.validate()?;
    let spec: CoverageSpec = match coverage {
        Some(path) => {
            manifest.input(path);
            load_config(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => ctx.cfg.coverage.spec(&ctx.cfg.controller.bounds, plant.length)?,
    };
    spec.validate(&ctx.cfg.controller.bounds, plant.length)?;
    let builds = generate_builds(plant, &spec)?;

    let out = ctx.out_dir()?;
    for (b, traces) in builds.iter().enumerate() {
        let path = out.join(format!("build_{b:02}.csv"));
        save_traces(&path, traces)?;
        manifest.output(&path);
    }
    for (name, text) in [(PLANT_FILE, render_config(plant)?), (COVERAGE_FILE, render_config(&spec)?)] {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        manifest.output(&path);
    }
    let samples: usize = builds.iter().flatten().map(LayerTrace::len).sum();
    let traces: usize = builds.iter().map(Vec::len).sum();
    println!("{} builds, {traces} traces, {samples} samples -> {}", builds.len(), out.display());
    manifest.finish(out)?;
    Ok(())
}

fn split(ctx: &Context, traces: Vec<LayerTrace>) -> Result<Dataset> {
    Ok(split_dataset(traces, ctx.cfg.split_ratio, ctx.cfg.train.seed)?)
}

fn fit_loglog_on(data: &Dataset) -> Result<LogLogModel> {
    Ok(LogLogModel::fit(data.train().flat_map(|t| t.iter()).map(|x| (x.u, x.y)))?)
}

fn print_errors(label: &str, e: &ErrorStats) {
    println!(
        "{label}: MAE dh {:.4} w {:.4}, p95 dh {:.4} w {:.4} mm over {} samples",
        e.mae[0], e.mae[1], e.p95[0], e.p95[1], e.count
    );
}

pub fn fit_loglog(ctx: &Context, data: &Path) -> Result<()> {
    let mut manifest = ctx.manifest("fit-loglog");
    let (_, files, traces) = load_data(data)?;
    files.iter().for_each(|f| manifest.input(f));
    let dataset = split(ctx, traces)?;
    let model = fit_loglog_on(&dataset)?;
    println!(
        "dh = exp({:.6}) vT^{:.6} vW^{:.6}; w = exp({:.6}) vT^{:.6} vW^{:.6}",
        model.alpha[2], model.alpha[0], model.alpha[1], model.beta[2], model.beta[0], model.beta[1]
    );
    print_errors("validation", &evaluate_loglog(&model, dataset.validation())?);
    let out = ctx.out_dir()?;
    let path = out.join(LOGLOG_FILE);
    save_model(&path, &StoredModel::LogLog(model))?;
    manifest.output(&path);
    manifest.finish(out)?;
    Ok(())
}

fn train_config(ctx: &Context, epochs: Option<usize>) -> TrainConfig {
    let mut cfg = ctx.cfg.train.clone();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg
}

pub fn train(ctx: &Context, data: &Path, arch: Arch, n: usize, epochs: Option<usize>) -> Result<()> {
    if arch == Arch::Loglog {
        bail!(CoreError::InvalidArgument("use fit-loglog for the log-log model".into()));
    }
    let mut manifest = ctx.manifest("train");
    let (_, files, traces) = load_data(data)?;
    files.iter().for_each(|f| manifest.input(f));
    let dataset = split(ctx, traces)?;
    let cfg = train_config(ctx, epochs);
    let started = Instant::now();
    let (params, history) = train_model(arch, n, &dataset, &cfg)?;
    println!(
        "{arch} n={n}: best validation MSE {:.6} at epoch {} ({:.1} s)",
        history.best_val().unwrap_or(f64::NAN),
        history.best_epoch,
        started.elapsed().as_secs_f64()
    );
    print_errors("validation", &evaluate_errors(&params, dataset.validation())?);

    let out = ctx.out_dir()?;
    let model_path = out.join(MODEL_FILE);
    save_model(&model_path, &StoredModel::Neural(params))?;
    let loss_path = out.join(LOSS_FILE);
    write_loss_history(create(&loss_path)?, &history)?;
    manifest.output(&model_path);
    manifest.output(&loss_path);
    manifest.finish(out)?;
    Ok(())
}

fn failed_row(arch: Arch, n: usize, err: &anyhow::Error) -> AblationRow {
    AblationRow {
        arch,
        n,
        val_mse: f64::NAN,
        train_mse: f64::NAN,
        errors: ErrorStats {
            mae: [f64::NAN; 2],
            p95: [f64::NAN; 2],
            count: 0,
        },
        latency_ms: f64::NAN,
        error: Some(format!("{err:#}")),
    }
}

/// Trains one grid cell and writes its model and loss history under `dir`.
fn ablation_cell(
    arch: Arch,
    n: usize,
    data: &Dataset,
    cfg: &TrainConfig,
    latency_steps: usize,
    dir: &Path,
) -> Result<(AblationRow, Vec<PathBuf>)> {
    let (params, history) = train_model(arch, n, data, cfg)?;
    let i = history
        .epochs
        .iter()
        .position(|e| *e == history.best_epoch)
        .context("loss history lacks the checkpointed epoch")?;
    let errors = evaluate_errors(&params, data.validation())?;
    let latency_ms = mean_step_latency(&params, latency_steps)? * 1e3;
    let row = AblationRow {
        arch,
        n,
        val_mse: history.val_mse[i],
        train_mse: history.train_mse[i],
        errors,
        latency_ms,
        error: None,
    };
    fs::create_dir_all(dir)?;
    let model_path = dir.join(MODEL_FILE);
    let loss_path = dir.join(LOSS_FILE);
    save_model(&model_path, &StoredModel::Neural(params))?;
    write_loss_history(create(&loss_path)?, &history)?;
    Ok((row, vec![model_path, loss_path]))
}

/// Log-log reference row; MSE columns are left NaN because the model has
/// no normalization of its own.
fn loglog_row(data: &Dataset, latency_steps: usize) -> Result<(AblationRow, LogLogModel)> {
    let model = fit_loglog_on(data)?;
    let errors = evaluate_loglog(&model, data.validation())?;
    let u = waam_core::plant::NOMINAL_INPUT;
    let steps = latency_steps.max(1);
    let started = Instant::now();
    for _ in 0..steps {
        std::hint::black_box(model.predict(std::hint::black_box(u))?);
    }
    let latency_ms = started.elapsed().as_secs_f64() * 1e3 / steps as f64;
    let row = AblationRow {
        arch: Arch::Loglog,
        n: 0,
        val_mse: f64::NAN,
        train_mse: f64::NAN,
        errors,
        latency_ms,
        error: None,
    };
    Ok((row, model))
}

pub fn ablate(
    ctx: &Context,
    data: &Path,
    archs: Option<Vec<Arch>>,
    sizes: Option<Vec<usize>>,
    epochs: Option<usize>,
    workers: Option<usize>,
) -> Result<()> {
    let mut manifest = ctx.manifest("ablate");
    let archs = archs.unwrap_or_else(|| ctx.cfg.ablation.archs.clone());
    let sizes = sizes.unwrap_or_else(|| ctx.cfg.ablation.sizes.clone());
    let workers = workers.unwrap_or(ctx.cfg.ablation.workers);
    if archs.is_empty() || sizes.is_empty() || workers == 0 {
        bail!(CoreError::InvalidArgument("ablation needs architectures, sizes and at least one worker".into()));
    }
    if archs.contains(&Arch::Loglog) {
        bail!(CoreError::InvalidArgument("the log-log row is always included; list only neural families".into()));
    }
    let (_, files, traces) = load_data(data)?;
    files.iter().for_each(|f| manifest.input(f));
    let dataset = split(ctx, traces)?;
    let cfg = train_config(ctx, epochs);
    cfg.validate()?;
    let latency_steps = ctx.cfg.ablation.latency_steps;
    let out = ctx.out_dir()?;

    let cells: Vec<(Arch, usize)> = archs.iter().flat_map(|a| sizes.iter().map(move |n| (*a, *n))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(AblationRow, Vec<PathBuf>)>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers.min(cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(arch, n)) = cells.get(i) else { break };
                let dir = out.join(format!("{arch}_n{n}"));
                let started = Instant::now();
                let result = ablation_cell(arch, n, &dataset, &cfg, latency_steps, &dir)
                    .unwrap_or_else(|e| (failed_row(arch, n, &e), Vec::new()));
                let mut results = results.lock().expect("a worker panicked");
                match &result.0.error {
                    None => println!(
                        "{arch} n={n}: validation MSE {:.6} ({:.1} s)",
                        result.0.val_mse,
                        started.elapsed().as_secs_f64()
                    ),
                    Some(e) => println!("{arch} n={n}: failed: {e}"),
                }
                results[i] = Some(result);
            });
        }
    });

    let mut rows = Vec::with_capacity(cells.len());
    for (row, paths) in results.into_inner().expect("a worker panicked").into_iter().flatten() {
        paths.iter().for_each(|p| manifest.output(p));
        rows.push(row);
    }
    let path = out.join(ABLATION_FILE);
    write_ablation(create(&path)?, &rows)?;
    manifest.output(&path);
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells, {failed} failed -> {}", rows.len(), path.display());

    let reference = match loglog_row(&dataset, latency_steps) {
        Ok((row, model)) => {
            let path = out.join(LOGLOG_FILE);
            save_model(&path, &StoredModel::LogLog(model))?;
            manifest.output(&path);
            row
        }
        Err(e) => failed_row(Arch::Loglog, 0, &e),
    };
    let path = out.join(ABLATION_LOGLOG_FILE);
    write_ablation(create(&path)?, &[reference])?;
    manifest.output(&path);
    manifest.finish(out)?;
    Ok(())
}

fn load_neural(path: &Path) -> Result<ModelParams> {
    match load_model(path).with_context(|| format!("reading {}", path.display()))? {
        StoredModel::Neural(p) => Ok(p),
        StoredModel::LogLog(_) => Err(CoreError::Data(format!("{} holds a log-log model", path.display())).into()),
    }
}

fn load_loglog(path: &Path) -> Result<LogLogModel> {
    match load_model(path).with_context(|| format!("reading {}", path.display()))? {
        StoredModel::LogLog(m) => Ok(m),
        StoredModel::Neural(_) => Err(CoreError::Data(format!("{} holds a neural model", path.display())).into()),
    }
}

fn write_reports(out: &Path, reports: &[BuildReport], manifest: &mut ManifestBuilder) -> Result<()> {
    let summary = out.join(REPORT_FILE);
    write_report_summary(create(&summary)?, reports)?;
    let layers = out.join(REPORT_LAYERS_FILE);
    write_report_layers(create(&layers)?, reports)?;
    manifest.output(&summary);
    manifest.output(&layers);
    print!("{}", fs::read_to_string(&summary)?);
    Ok(())
}

pub fn control_run(
    ctx: &Context,
    modes: &[Mode],
    model: Option<&Path>,
    loglog: Option<&Path>,
    layers: usize,
) -> Result<()> {
    let mut manifest = ctx.manifest("control-run");
    let needs_neural = modes.iter().any(|m| matches!(m, Mode::RnnOnestep | Mode::RnnAdaptive));
    let neural = match (needs_neural, model) {
        (true, None) => bail!(CoreError::InvalidArgument("rnn modes need --model".into())),
        (true, Some(path)) => {
            manifest.input(path);
            Some(load_neural(path)?)
        }
        (false, _) => None,
    };
    let log_model = match (modes.contains(&Mode::LoglogInverse), loglog) {
        (true, None) => bail!(CoreError::InvalidArgument("loglog-inverse needs --loglog".into())),
        (true, Some(path)) => {
            manifest.input(path);
            Some(load_loglog(path)?)
        }
        (false, _) => None,
    };

    let out = ctx.out_dir()?.to_path_buf();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &mode in modes {
        let control_model = match mode {
            Mode::BaselineConstant => ControlModel::None,
            Mode::LoglogInverse => ControlModel::LogLog(log_model.as_ref().expect("loaded above")),
            Mode::RnnOnestep | Mode::RnnAdaptive => ControlModel::Neural(neural.as_ref().expect("loaded above")),
        };
        let started = Instant::now();
        let build = run_closed_loop(&ctx.cfg.plant, control_model, &ctx.cfg.controller, layers, mode)?;
        let dir = out.join(mode.as_str());
        save_build(&dir, &build, &ctx.config_hash)?;
        manifest.output(&dir);
        println!(
            "{mode}: {}/{} layers in {:.1} s -> {}",
            build.layers.len(),
            layers,
            started.elapsed().as_secs_f64(),
            dir.display()
        );
        if let Some(f) = &build.failure {
            failures.push(format!("{mode}: {f}"));
        }
        if !build.layers.is_empty() {
            reports.push(build_report(&build, &ctx.cfg.report)?);
        }
    }
    if !reports.is_empty() {
        write_reports(&out, &reports, &mut manifest)?;
    }
    manifest.finish(&out)?;
    if !failures.is_empty() {
        bail!(CoreError::NumericFault(failures.join("; ")));
    }
    Ok(())
}

fn fmt(x: f64) -> String {
    x.to_string()
}

pub fn diag(ctx: &Context, model: &Path, build: &Path, horizon: usize, tol: f64) -> Result<()> {
    let mut manifest = ctx.manifest("diag");
    manifest.input(model);
    manifest.input(build);
    let params = load_neural(model)?;
    let (record, _) = load_build(build).with_context(|| format!("reading build {}", build.display()))?;
    let out = ctx.out_dir()?;

    // Adaptive builds log the parameters each layer ran with.
    let mut rho_cols: [Vec<String>; 3] = Default::default();
    let mut norm_cols: [Vec<String>; 3] = Default::default();
    let logged_norms = state_norm_trace(&record);
    for (layer, logged) in record.layers.iter().zip(&logged_norms) {
        let p = match &layer.theta {
            Some(theta) => ModelParams::from_parts(params.arch, params.n, params.hidden, theta.clone(), params.norm)?,
            None => params.clone(),
        };
        let rho = layer_spectral_radii(&p, &layer.truth)?;
        for (k, r) in rho.iter().enumerate() {
            rho_cols[0].push(layer.layer.to_string());
            rho_cols[1].push(k.to_string());
            rho_cols[2].push(fmt(*r));
        }
        let norms = if logged.is_empty() {
            rollout_state_norms(&p, &layer.truth.time_order().map(|x| x.u).collect::<Vec<_>>())?
        } else {
            logged.clone()
        };
        for (k, v) in norms.iter().enumerate() {
            norm_cols[0].push(layer.layer.to_string());
            norm_cols[1].push(k.to_string());
            norm_cols[2].push(fmt(*v));
        }
    }
    let rho_path = out.join("spectral_radius.csv");
    write_columns(create(&rho_path)?, &["layer", "k", "rho"], &rho_cols)?;
    let norm_path = out.join("state_norm.csv");
    write_columns(create(&norm_path)?, &["layer", "k", "state_norm"], &norm_cols)?;

    let u = ctx.cfg.controller.nominal_input;
    let target = ctx.cfg.controller.target;
    let ss = steady_state_check(&params, u, horizon, tol)?;
    let rel = [(ss.y_inf.dh - target.dh) / target.dh, (ss.y_inf.w - target.w) / target.w];
    let ss_path = out.join("steady_state.csv");
    let values = [
        fmt(u.v_t),
        fmt(u.v_w),
        fmt(ss.y_inf.dh),
        fmt(ss.y_inf.w),
        ss.converged.to_string(),
        ss.settle_step.to_string(),
        fmt(rel[0]),
        fmt(rel[1]),
    ];
    write_columns(
        create(&ss_path)?,
        &["v_t", "v_w", "dh_inf", "w_inf", "converged", "settle_step", "dh_rel_err", "w_rel_err"],
        &values.map(|v| vec![v]),
    )?;
    let max_rho = rho_cols[2].iter().filter_map(|r| r.parse::<f64>().ok()).fold(0.0, f64::max);
    println!(
        "max spectral radius {max_rho:.4}; steady state ({:.4}, {:.4}) mm, converged {} at step {}",
        ss.y_inf.dh, ss.y_inf.w, ss.converged, ss.settle_step
    );
    for p in [&rho_path, &norm_path, &ss_path] {
        manifest.output(p);
    }
    manifest.finish(out)?;
    Ok(())
}

pub fn report(ctx: &Context, builds: &[PathBuf]) -> Result<()> {
    let mut manifest = ctx.manifest("report");
    let mut reports = Vec::with_capacity(builds.len());
    for dir in builds {
        let (record, _) = load_build(dir).with_context(|| format!("reading build {}", dir.display()))?;
        if record.layers.is_empty() {
            return Err(CoreError::Data(format!("{} holds no completed layers", dir.display())).into());
        }
        manifest.input(dir);
        reports.push(build_report(&record, &ctx.cfg.report)?);
    }
    let out = ctx.out_dir()?.to_path_buf();
    write_reports(&out, &reports, &mut manifest)?;
    manifest.finish(&out)?;
    Ok(())
}

pub fn check_grad(ctx: &Context, sizes: &[usize], instances: usize) -> Result<()> {
    let mut manifest = ctx.manifest("check-grad");
    if sizes.is_empty() || instances == 0 {
        bail!(CoreError::InvalidArgument("need at least one size and one instance".into()));
    }
    let mut cols: [Vec<String>; 7] = Default::default();
    let mut worst = 0.0f64;
    for arch in Arch::TRAINABLE {
        let mut arch_worst = [0.0f64; 2];
        for &n in sizes {
            let r = check_gradients(arch, n, instances, ctx.cfg.train.seed.wrapping_add(n as u64))?;
            arch_worst[0] = arch_worst[0].max(r.worst_gradient);
            arch_worst[1] = arch_worst[1].max(r.worst_jacobian);
            for (c, v) in cols.iter_mut().zip([
                arch.to_string(),
                n.to_string(),
                instances.to_string(),
                fmt(r.worst_gradient),
                fmt(r.worst_jacobian),
                fmt(r.max_gradient_gap),
                fmt(r.max_jacobian_gap),
            ]) {
                c.push(v);
            }
        }
        println!(
            "{arch}: worst relative error gradient {:.3e}, input Jacobian {:.3e}",
            arch_worst[0], arch_worst[1]
        );
        worst = worst.max(arch_worst[0]).max(arch_worst[1]);
    }
    let out = ctx.out_dir()?;
    let path = out.join(GRADCHECK_FILE);
    write_columns(
        create(&path)?,
        &[
            "arch",
            "n",
            "instances",
            "worst_gradient",
            "worst_jacobian",
            "max_gradient_gap",
            "max_jacobian_gap",
        ],
        &cols,
    )?;
    manifest.output(&path);
    manifest.finish(out)?;
    if worst > GRADCHECK_TOLERANCE {
        bail!(CoreError::NumericFault(format!(
            "worst relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:.0e}"
        )));
    }
    Ok(())
}
