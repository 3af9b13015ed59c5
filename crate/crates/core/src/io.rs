//! File formats: trace CSVs, TOML configs, model files, build records and
//! report tables.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::BuildReport;
use crate::control::{BuildRecord, LayerRecord, Mode, StepRecord};
use crate::error::{Error, Result};
use crate::geometry::{accumulate_layer, Direction, HeightProfile, LayerTrace, Sample};
use crate::models::{Arch, LogLogModel, ModelParams, NormStats};
use crate::plant::{ProcessInput, ProcessOutput};
use crate::training::{ErrorStats, LossHistory};

pub const TRACE_HEADER: [&str; 9] = [
    "layer", "k", "t", "s_mm", "v_t_mm_s", "v_w_mm_s", "dh_mm", "w_mm", "direction",
];
pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const MODEL_FORMAT: &str = "waam-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const BUILD_FORMAT_VERSION: u32 = 1;

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::data(format!("{other:?}")),
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::data(format!(
            "line 1: expected header `{}`, found `{}`",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

/// Writes traces in traversal order, all layers concatenated. Floats use
/// the shortest representation that parses back to the same value.
pub fn write_traces<W: Write>(w: W, traces: &[LayerTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER).map_err(csv_error)?;
    for trace in traces {
        for x in trace.iter() {
            out.write_record([
                trace.layer.to_string(),
                x.k.to_string(),
                x.t.to_string(),
                x.s.to_string(),
                x.u.v_t.to_string(),
                x.u.v_w.to_string(),
                x.y.dh.to_string(),
                x.y.w.to_string(),
                trace.direction.as_str().to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads traces written by [`write_traces`]. A new trace starts whenever
/// the layer column changes. Malformed rows fail with their line number.
pub fn read_traces<R: Read>(r: R, t_s: f64, length: f64) -> Result<Vec<LayerTrace>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    check_header(rdr.headers().map_err(csv_error)?, &TRACE_HEADER)?;

    let mut traces = Vec::new();
    let mut current: Option<(usize, Direction, Vec<Sample>)> = None;
    let finish = |cur: (usize, Direction, Vec<Sample>), out: &mut Vec<LayerTrace>| -> Result<()> {
        let (layer, direction, samples) = cur;
        let trace = LayerTrace::from_samples(layer, t_s, length, direction, samples)
            .map_err(|e| Error::data(format!("layer {layer}: {e}")))?;
        out.push(trace);
        Ok(())
    };

    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::data(format!("line {line}: {}", csv_error(e))))?;
        if row.len() != TRACE_HEADER.len() {
            return Err(Error::data(format!(
                "line {line}: expected {} fields, found {}",
                TRACE_HEADER.len(),
                row.len()
            )));
        }
        let int = |j: usize| -> Result<usize> {
            row[j]
                .parse()
                .map_err(|_| Error::data(format!("line {line}: bad {} `{}`", TRACE_HEADER[j], &row[j])))
        };
        let real = |j: usize| -> Result<f64> {
            let v: f64 = row[j]
                .parse()
                .map_err(|_| Error::data(format!("line {line}: bad {} `{}`", TRACE_HEADER[j], &row[j])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::data(format!("line {line}: non-finite {}", TRACE_HEADER[j])))
            }
        };
        let layer = int(0)?;
        let direction: Direction = row[8]
            .parse()
            .map_err(|_| Error::data(format!("line {line}: bad direction `{}`", &row[8])))?;
        let sample = Sample {
            k: int(1)?,
            t: real(2)?,
            s: real(3)?,
            u: ProcessInput::new(real(4)?, real(5)?),
            y: ProcessOutput::new(real(6)?, real(7)?),
        };
        match &mut current {
            Some((l, d, samples)) if *l == layer => {
                if *d != direction {
                    return Err(Error::data(format!("line {line}: direction changes within layer {layer}")));
                }
                samples.push(sample);
            }
            _ => {
                if let Some(done) = current.take() {
                    finish(done, &mut traces)?;
                }
                current = Some((layer, direction, vec![sample]));
            }
        }
    }
    if let Some(done) = current {
        finish(done, &mut traces)?;
    }
    if traces.is_empty() {
        return Err(Error::data("trace file has no samples"));
    }
    Ok(traces)
}

pub fn save_traces(path: &Path, traces: &[LayerTrace]) -> Result<()> {
    write_traces(fs::File::create(path)?, traces)
}

pub fn load_traces(path: &Path, t_s: f64, length: f64) -> Result<Vec<LayerTrace>> {
    let file = fs::File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    read_traces(std::io::BufReader::new(file), t_s, length)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Parses a TOML config carrying `schema_version`. Keys absent from the
/// file take their defaults; unknown keys are rejected.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut table: toml::Table = text.parse().map_err(|e| Error::data(format!("config: {e}")))?;
    match table.remove("schema_version") {
        Some(toml::Value::Integer(v)) if v == CONFIG_SCHEMA_VERSION as i64 => {}
        Some(v) => {
            return Err(Error::data(format!(
                "config schema_version {v} is not supported (expected {CONFIG_SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::data("config is missing schema_version")),
    }
    T::deserialize(toml::Value::Table(table)).map_err(|e| Error::data(format!("config: {e}")))
}

/// Serializes a config with its `schema_version` first.
pub fn render_config<T: Serialize>(cfg: &T) -> Result<String> {
    let body = toml::to_string(cfg).map_err(|e| Error::data(format!("config: {e}")))?;
    Ok(format!("schema_version = {CONFIG_SCHEMA_VERSION}\n{body}"))
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of the bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A trained model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Neural(ModelParams),
    LogLog(LogLogModel),
}

impl StoredModel {
    pub fn arch(&self) -> Arch {
        match self {
            StoredModel::Neural(p) => p.arch,
            StoredModel::LogLog(_) => Arch::Loglog,
        }
    }
}

/// Row-major tensor as stored in a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    arch: Arch,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    norm: Option<NormStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loglog: Option<LogLogModel>,
}

pub fn model_to_json(model: &StoredModel) -> Result<String> {
    let file = match model {
        StoredModel::Neural(p) => {
            p.validate()?;
            let tensors = p
                .layout()
                .into_iter()
                .map(|t| TensorRecord {
                    name: t.name.to_string(),
                    rows: t.rows,
                    cols: t.cols,
                    data: p.tensor(t.name).expect("layout tensor").to_vec(),
                })
                .collect();
            ModelFile {
                format: MODEL_FORMAT.into(),
                version: MODEL_FORMAT_VERSION,
                arch: p.arch,
                n: p.n,
                hidden: Some(p.hidden),
                norm: Some(p.norm),
                tensors,
                loglog: None,
            }
        }
        StoredModel::LogLog(m) => {
            m.validate()?;
            ModelFile {
                format: MODEL_FORMAT.into(),
                version: MODEL_FORMAT_VERSION,
                arch: Arch::Loglog,
                n: 0,
                hidden: None,
                norm: None,
                tensors: Vec::new(),
                loglog: Some(*m),
            }
        }
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::data(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<StoredModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::data(format!("model file: {e}")))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::data(format!("not a model file (format `{}`)", file.format)));
    }
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::data(format!(
            "model file version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            file.version
        )));
    }
    if file.arch == Arch::Loglog {
        let m = file.loglog.ok_or_else(|| Error::data("log-log model file without coefficients"))?;
        m.validate().map_err(|e| Error::data(e.to_string()))?;
        return Ok(StoredModel::LogLog(m));
    }
    let hidden = file.hidden.ok_or_else(|| Error::data("model file without hidden width"))?;
    let norm = file.norm.ok_or_else(|| Error::data("model file without normalization"))?;
    let layout = crate::models::layout(file.arch, file.n, hidden).map_err(|e| Error::data(e.to_string()))?;
    if layout.len() != file.tensors.len() {
        return Err(Error::data(format!(
            "expected {} tensors for {} n={}, found {}",
            layout.len(),
            file.arch,
            file.n,
            file.tensors.len()
        )));
    }
    let mut theta = Vec::new();
    for (spec, t) in layout.iter().zip(&file.tensors) {
        if spec.name != t.name || spec.rows != t.rows || spec.cols != t.cols || t.data.len() != spec.len() {
            return Err(Error::data(format!(
                "tensor `{}` ({}x{}) does not match the expected `{}` ({}x{})",
                t.name, t.rows, t.cols, spec.name, spec.rows, spec.cols
            )));
        }
        theta.extend_from_slice(&t.data);
    }
    let p = ModelParams::from_parts(file.arch, file.n, hidden, theta, norm)
        .map_err(|e| Error::data(e.to_string()))?;
    Ok(StoredModel::Neural(p))
}

pub fn save_model(path: &Path, model: &StoredModel) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<StoredModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    model_from_json(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFileRecord {
    target: ProcessOutput,
    predicted: Option<ProcessOutput>,
    state_norm: Option<f64>,
    degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFileRecord {
    layer: usize,
    steps: Vec<StepFileRecord>,
    theta: Option<Vec<f64>>,
    fine_tune_loss: Option<(f64, f64)>,
}

/// JSON sidecar of a build: everything the trace CSVs do not carry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildSidecar {
    pub version: u32,
    pub mode: Mode,
    pub config_hash: String,
    pub plant_seed: u64,
    pub requested_layers: usize,
    pub failure: Option<String>,
    pub t_s: f64,
    pub length: f64,
    pub grid_spacing: f64,
    layers: Vec<LayerFileRecord>,
}

pub const BUILD_TRUTH_FILE: &str = "build.csv";
pub const BUILD_MEASURED_FILE: &str = "measured.csv";
pub const BUILD_SIDECAR_FILE: &str = "build.json";

/// Writes `build.csv` (noise-free deposit), `measured.csv` (sensor record)
/// and the `build.json` sidecar into `dir`.
pub fn save_build(dir: &Path, build: &BuildRecord, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let truth: Vec<LayerTrace> = build.layers.iter().map(|l| l.truth.clone()).collect();
    let measured: Vec<LayerTrace> = build.layers.iter().map(|l| l.measured.clone()).collect();
    save_traces(&dir.join(BUILD_TRUTH_FILE), &truth)?;
    save_traces(&dir.join(BUILD_MEASURED_FILE), &measured)?;
    let (t_s, length) = build
        .layers
        .first()
        .map_or((0.0, build.profile.length()), |l| (l.truth.t_s, l.truth.length));
    let sidecar = BuildSidecar {
        version: BUILD_FORMAT_VERSION,
        mode: build.mode,
        config_hash: config_hash.to_string(),
        plant_seed: build.seed,
        requested_layers: build.requested_layers,
        failure: build.failure.clone(),
        t_s,
        length,
        grid_spacing: build.profile.spacing(),
        layers: build
            .layers
            .iter()
            .map(|l| LayerFileRecord {
                layer: l.layer,
                steps: l
                    .steps
                    .iter()
                    .map(|s| StepFileRecord {
                        target: s.target,
                        predicted: s.predicted,
                        state_norm: s.state_norm,
                        degenerate: s.degenerate,
                    })
                    .collect(),
                theta: l.theta.clone(),
                fine_tune_loss: l.fine_tune_loss,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::data(e.to_string()))?;
    fs::write(dir.join(BUILD_SIDECAR_FILE), json)?;
    Ok(())
}

/// Reads a build directory written by [`save_build`].
pub fn load_build(dir: &Path) -> Result<(BuildRecord, BuildSidecar)> {
    let path = dir.join(BUILD_SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let sidecar: BuildSidecar =
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if sidecar.version != BUILD_FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: build format version {} is not supported",
            path.display(),
            sidecar.version
        )));
    }
    let mut profile = HeightProfile::substrate(sidecar.length, sidecar.grid_spacing)?;
    let mut layers = Vec::new();
    if !sidecar.layers.is_empty() {
        let truth = load_traces(&dir.join(BUILD_TRUTH_FILE), sidecar.t_s, sidecar.length)?;
        let measured = load_traces(&dir.join(BUILD_MEASURED_FILE), sidecar.t_s, sidecar.length)?;
        if truth.len() != sidecar.layers.len() || measured.len() != sidecar.layers.len() {
            return Err(Error::data(format!(
                "{}: sidecar lists {} layers but the traces hold {} and {}",
                dir.display(),
                sidecar.layers.len(),
                truth.len(),
                measured.len()
            )));
        }
        for ((rec, truth), measured) in sidecar.layers.iter().zip(truth).zip(measured) {
            if rec.layer != truth.layer || rec.layer != measured.layer {
                return Err(Error::data(format!("{}: layer numbering mismatch", dir.display())));
            }
            profile = accumulate_layer(&profile, &truth)?;
            layers.push(LayerRecord {
                layer: rec.layer,
                measured,
                truth,
                steps: rec
                    .steps
                    .iter()
                    .map(|s| StepRecord {
                        target: s.target,
                        predicted: s.predicted,
                        state_norm: s.state_norm,
                        degenerate: s.degenerate,
                    })
                    .collect(),
                theta: rec.theta.clone(),
                fine_tune_loss: rec.fine_tune_loss,
            });
        }
    }
    let build = BuildRecord {
        mode: sidecar.mode,
        seed: sidecar.plant_seed,
        requested_layers: sidecar.requested_layers,
        layers,
        failure: sidecar.failure.clone(),
        profile,
    };
    Ok((build, sidecar))
}

/// One row per mode, averaging the build averages of that mode in order of
/// first appearance.
pub fn write_report_summary<W: Write>(w: W, reports: &[BuildReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "height_sd", "width_sd", "height_sd_ex", "width_sd_ex"])
        .map_err(csv_error)?;
    let mut modes: Vec<Mode> = Vec::new();
    for r in reports {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    for mode in modes {
        let rows: Vec<_> = reports.iter().filter(|r| r.mode == mode).map(|r| r.average).collect();
        let m = rows.len() as f64;
        let mean = |f: fn(&crate::analysis::LayerQuality) -> f64| rows.iter().map(f).sum::<f64>() / m;
        out.write_record([
            mode.as_str().to_string(),
            mean(|q| q.height_sd).to_string(),
            mean(|q| q.width_sd).to_string(),
            mean(|q| q.height_sd_ex).to_string(),
            mean(|q| q.width_sd_ex).to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Long format: one row per build and layer.
pub fn write_report_layers<W: Write>(w: W, reports: &[BuildReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "seed", "layer", "height_sd", "width_sd", "height_sd_ex", "width_sd_ex"])
        .map_err(csv_error)?;
    for r in reports {
        for q in &r.layers {
            out.write_record([
                r.mode.as_str().to_string(),
                r.seed.to_string(),
                q.layer.to_string(),
                q.height_sd.to_string(),
                q.width_sd.to_string(),
                q.height_sd_ex.to_string(),
                q.width_sd_ex.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_loss_history<W: Write>(w: W, history: &LossHistory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_mse", "val_mse"]).map_err(csv_error)?;
    for ((e, t), v) in history.epochs.iter().zip(&history.train_mse).zip(&history.val_mse) {
        out.write_record([e.to_string(), t.to_string(), v.to_string()])
            .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// One row of the capacity ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arch: Arch,
    pub n: usize,
    pub val_mse: f64,
    pub train_mse: f64,
    /// Free-run prediction errors on the validation traces.
    pub errors: ErrorStats,
    /// Mean single-step forward time, ms.
    pub latency_ms: f64,
    /// Set when the cell failed; the numeric columns are then NaN.
    pub error: Option<String>,
}

pub const ABLATION_HEADER: [&str; 10] = [
    "arch", "n", "val_mse", "train_mse", "mae_dh", "mae_w", "p95_dh", "p95_w", "latency_ms", "error",
];

pub fn write_ablation<W: Write>(w: W, rows: &[AblationRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ABLATION_HEADER).map_err(csv_error)?;
    for r in rows {
        out.write_record([
            r.arch.as_str().to_string(),
            r.n.to_string(),
            r.val_mse.to_string(),
            r.train_mse.to_string(),
            r.errors.mae[0].to_string(),
            r.errors.mae[1].to_string(),
            r.errors.p95[0].to_string(),
            r.errors.p95[1].to_string(),
            r.latency_ms.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `header` and `columns` (all of equal length) as CSV.
pub fn write_columns<W: Write>(w: W, header: &[&str], columns: &[Vec<String>]) -> Result<()> {
    if header.len() != columns.len() {
        return Err(Error::invalid("header and column count differ"));
    }
    let rows = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::invalid("columns differ in length"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_error)?;
    for i in 0..rows {
        out.write_record(columns.iter().map(|c| c[i].as_str())).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}
