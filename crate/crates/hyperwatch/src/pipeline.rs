//! Command implementations behind the CLI binary: train, detect,
//! diagnose, recommend, ablate, synth. Each writes its artifacts under an
//! output directory and returns a small summary struct the binary prints.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::control::{ga_optimize, ControlError, ControlPlan, ControlProblem};
use crate::conv::Attention;
use crate::detect::{deviations, point_adjust, prf1, AnomalyTrace, Calibration, DetectError, Metrics};
use crate::diagnose::{diagnose, DiagnoseError, Diagnosis};
use crate::hierarchy::{DeltaMode, Scoring};
use crate::hypergraph::Hypergraph;
use crate::model::{
    train, Checkpoint, ModelError, ModelParameters, Positional, TrainOutput,
};
use crate::series::{sliding_windows, MinMaxScaler, SensorSeries, SeriesError};
use crate::synth::{SynthError, SyntheticSpec};

/// Output directory fallback when `--out` is not given.
pub const OUT_DIR_ENV: &str = "HYPERWATCH_OUT_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad configuration or invalid inputs (exit code 2).
    #[error("{0}")]
    Config(String),
    /// Filesystem trouble (exit code 3).
    #[error("{0}")]
    Io(String),
    /// Numerical or internal failure (exit code 4).
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io(_) => 3,
            PipelineError::Runtime(_) => 4,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(io) => PipelineError::Io(io.to_string()),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

impl From<SeriesError> for PipelineError {
    fn from(e: SeriesError) -> Self {
        match &e {
            SeriesError::Io(_) => PipelineError::Io(e.to_string()),
            // an unreadable file surfaces as a csv error with an io kind
            SeriesError::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => {
                PipelineError::Io(e.to_string())
            }
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) | ModelError::Json(_) => PipelineError::Io(e.to_string()),
            ModelError::Config(_)
            | ModelError::SensorMismatch { .. }
            | ModelError::WindowMismatch { .. }
            | ModelError::TooFewWindows { .. }
            | ModelError::Checkpoint(_) => PipelineError::Config(e.to_string()),
            ModelError::Series(s) => PipelineError::from(s),
            other => PipelineError::Runtime(other.to_string()),
        }
    }
}

impl From<DetectError> for PipelineError {
    fn from(e: DetectError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<DiagnoseError> for PipelineError {
    fn from(e: DiagnoseError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<ControlError> for PipelineError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Model(m) => PipelineError::from(m),
            ControlError::Detect(d) => PipelineError::from(d),
            ControlError::Series(s) => PipelineError::from(s),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

impl From<SynthError> for PipelineError {
    fn from(e: SynthError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

/// `--out`, then the environment fallback, then the current directory.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Flag-level overrides; any `Some`/`true` wins over the loaded config.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub w: Option<usize>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub p_r: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub w_a: Option<usize>,
    pub two_graph: bool,
    pub no_attention: bool,
    pub no_gating: bool,
    pub no_positional: bool,
    pub sinusoidal_positional: bool,
    pub no_embedding_scores: bool,
    pub projection_scoring: bool,
    pub bilinear_delta: bool,
}

pub fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) -> Result<(), PipelineError> {
    if o.no_positional && o.sinusoidal_positional {
        return Err(PipelineError::Config(
            "positional overrides conflict: cannot disable the positional term and request the sinusoidal table at once".into(),
        ));
    }
    if let Some(w) = o.w {
        cfg.model.w = w;
    }
    if let Some(d) = o.d {
        cfg.model.d = d;
    }
    if let Some(k) = o.k {
        cfg.model.k = k;
    }
    if let Some(p_r) = o.p_r {
        cfg.model.p_r = p_r;
    }
    if let Some(epochs) = o.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(batch) = o.batch {
        cfg.train.batch = batch;
    }
    if let Some(lr) = o.lr {
        cfg.train.lr = lr;
    }
    if let Some(seed) = o.seed {
        cfg.train.seed = seed;
    }
    if let Some(w_a) = o.w_a {
        cfg.detect.w_a = w_a;
    }
    if o.two_graph {
        cfg.model.two_graph = true;
    }
    if o.no_attention {
        cfg.model.attention = Attention::UniformMean;
    }
    if o.no_gating {
        cfg.model.gating = false;
    }
    if o.no_positional {
        cfg.model.positional = Positional::Off;
    }
    if o.sinusoidal_positional {
        cfg.model.positional = Positional::Sinusoidal;
    }
    if o.no_embedding_scores {
        cfg.model.use_embeddings = false;
    }
    if o.projection_scoring {
        cfg.model.scoring = Scoring::Projection;
    }
    if o.bilinear_delta {
        cfg.model.delta = DeltaMode::Bilinear;
    }
    Ok(())
}

/// Named ablation variants for the `ablate` subcommand.
pub const VARIANT_NAMES: [&str; 8] = [
    "two_graph",
    "no_attention",
    "no_gating",
    "no_positional",
    "sinusoidal_positional",
    "no_embedding_scores",
    "projection_scoring",
    "bilinear_delta",
];

pub fn apply_variant(cfg: &mut RunConfig, variant: &str) -> Result<(), PipelineError> {
    match variant {
        "two_graph" => cfg.model.two_graph = true,
        "no_attention" => cfg.model.attention = Attention::UniformMean,
        "no_gating" => cfg.model.gating = false,
        "no_positional" => cfg.model.positional = Positional::Off,
        "sinusoidal_positional" => cfg.model.positional = Positional::Sinusoidal,
        "no_embedding_scores" => cfg.model.use_embeddings = false,
        "projection_scoring" => cfg.model.scoring = Scoring::Projection,
        "bilinear_delta" => cfg.model.delta = DeltaMode::Bilinear,
        other => {
            return Err(PipelineError::Config(format!(
                "unknown ablation variant {other:?} (expected one of {})",
                VARIANT_NAMES.join(", ")
            )))
        }
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub threshold: f64,
}

/// Train on an anomaly-free CSV and write `model.json` plus
/// `loss_history.csv` under `out_dir`.
pub fn cmd_train(
    data: &Path,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<TrainArtifacts, PipelineError> {
    cfg.validate_sections()?;
    let series = SensorSeries::read_csv(data)?;
    if let Some(labels) = &series.labels {
        if labels.iter().any(|&l| l != 0) {
            return Err(PipelineError::Config(
                "training data is labeled anomalous; train on a clean series".into(),
            ));
        }
    }
    let mc = cfg.model_config(series.sensors())?;
    let tc = cfg.train_config()?;
    let scaler = MinMaxScaler::fit(&series);
    let scaled = scaler.transform_train(&series)?;
    let out: TrainOutput = train(&mc, &tc, &scaled)?;

    let val_devs = deviations(&out.val_forecasts, &out.val_targets)?;
    let calibration = Calibration::fit(&val_devs, cfg.detect.w_a)?;

    ensure_dir(out_dir)?;
    let checkpoint = out_dir.join("model.json");
    Checkpoint::new(
        &out.params,
        &out.graph,
        &scaler,
        &calibration,
        series.names.clone(),
    )
    .save(&checkpoint)?;

    let history = out_dir.join("loss_history.csv");
    let mut f = std::fs::File::create(&history).map_err(|e| io_err(&history, e))?;
    writeln!(f, "epoch,train_mse,val_mse,lr").map_err(|e| io_err(&history, e))?;
    for e in &out.history {
        writeln!(f, "{},{},{},{}", e.epoch, e.train_mse, e.val_mse, e.lr)
            .map_err(|e| io_err(&history, e))?;
    }

    let best_val_mse = out.history[out.best_epoch].val_mse;
    Ok(TrainArtifacts {
        checkpoint,
        history,
        epochs_run: out.history.len(),
        best_epoch: out.best_epoch,
        best_val_mse,
        threshold: calibration.threshold,
    })
}

/// Checkpoint plus everything restored from it.
#[derive(Debug)]
pub struct LoadedModel {
    pub params: ModelParameters,
    pub graph: Hypergraph,
    pub scaler: MinMaxScaler,
    pub calibration: Calibration,
    pub sensor_names: Vec<String>,
}

pub fn load_model(path: &Path) -> Result<LoadedModel, PipelineError> {
    let ckpt = Checkpoint::load(path)?;
    let (params, graph) = ckpt.restore()?;
    Ok(LoadedModel {
        params,
        graph,
        scaler: ckpt.scaler,
        calibration: ckpt.calibration,
        sensor_names: ckpt.sensor_names,
    })
}

/// Forecast an input series and score its deviations. Rows of the trace
/// align with absolute file row `w + i`.
pub fn score_series(
    model: &LoadedModel,
    series: &SensorSeries,
) -> Result<AnomalyTrace, PipelineError> {
    let w = model.params.config.w;
    let scaled = model.scaler.transform(series)?;
    let windows = sliding_windows(&scaled, w)?;
    let forecasts = model.params.forecast_series(&model.graph, &windows)?;
    let targets: Vec<Vec<f64>> = windows.iter().map(|x| x.target.clone()).collect();
    let devs = deviations(&forecasts, &targets)?;
    Ok(model.calibration.trace(&devs, w))
}

pub struct DetectArtifacts {
    pub report: PathBuf,
    pub scored: usize,
    pub flagged: usize,
    pub threshold: f64,
    /// (raw, point-adjusted) metrics when the data carries labels.
    pub metrics: Option<(Metrics, Metrics)>,
}

/// Score a CSV against a trained model and write `report.csv`.
pub fn cmd_detect(
    model_path: &Path,
    data: &Path,
    out_dir: &Path,
) -> Result<DetectArtifacts, PipelineError> {
    let model = load_model(model_path)?;
    let series = SensorSeries::read_csv(data)?;
    let trace = score_series(&model, &series)?;

    let truth: Option<Vec<bool>> = series
        .labels
        .as_ref()
        .map(|l| l[trace.start_t..].iter().map(|&x| x != 0).collect());
    let adjusted: Option<Vec<bool>> = truth
        .as_ref()
        .map(|t| point_adjust(&trace.flags, t));
    let metrics = truth.as_ref().map(|t| {
        (
            prf1(&trace.flags, t),
            prf1(adjusted.as_ref().expect("adjusted exists with truth"), t),
        )
    });

    ensure_dir(out_dir)?;
    let report = out_dir.join("report.csv");
    write_report(&report, &trace, &model.sensor_names, truth.as_deref(), adjusted.as_deref())?;

    Ok(DetectArtifacts {
        report,
        scored: trace.len(),
        flagged: trace.flags.iter().filter(|&&f| f).count(),
        threshold: trace.threshold,
        metrics,
    })
}

fn write_report(
    path: &Path,
    trace: &AnomalyTrace,
    names: &[String],
    truth: Option<&[bool]>,
    adjusted: Option<&[bool]>,
) -> Result<(), PipelineError> {
    let csv_err = |e: csv::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err)?;
    wtr.write_record([
        "t",
        "label",
        "aggregate",
        "threshold",
        "flag",
        "flag_adjusted",
        "top_sensor",
        "top_sensor_name",
        "top_score",
    ])
    .map_err(csv_err)?;
    for i in 0..trace.len() {
        let top = trace.top_sensor(i);
        let label = truth
            .map(|t| if t[i] { "1".to_string() } else { "0".to_string() })
            .unwrap_or_default();
        let adj = adjusted.map(|a| a[i]).unwrap_or(trace.flags[i]);
        wtr.write_record([
            (trace.start_t + i).to_string(),
            label,
            trace.aggregate[i].to_string(),
            trace.threshold.to_string(),
            (trace.flags[i] as u8).to_string(),
            (adj as u8).to_string(),
            top.to_string(),
            names.get(top).cloned().unwrap_or_default(),
            trace.sensor_scores[i][top].to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub struct DiagnoseArtifacts {
    pub text: PathBuf,
    pub dot: PathBuf,
    pub at: usize,
    pub diagnosis: Diagnosis,
    pub rendered: String,
}

/// Diagnose the worst step (or `--at`) of a scored series; writes
/// `diagnosis.txt` and `diagnosis.dot`.
pub fn cmd_diagnose(
    model_path: &Path,
    data: &Path,
    at: Option<usize>,
    k_hops: usize,
    out_dir: &Path,
) -> Result<DiagnoseArtifacts, PipelineError> {
    let model = load_model(model_path)?;
    let series = SensorSeries::read_csv(data)?;
    let trace = score_series(&model, &series)?;

    let at = match at {
        Some(t) => {
            if t < trace.start_t || t >= trace.start_t + trace.len() {
                return Err(PipelineError::Config(format!(
                    "step {t} is outside the scored range [{}, {})",
                    trace.start_t,
                    trace.start_t + trace.len()
                )));
            }
            t
        }
        None => {
            let i = crate::detect::argmax(&trace.aggregate);
            trace.start_t + i
        }
    };
    let row = at - trace.start_t;
    let diagnosis = diagnose(&model.graph, &trace.sensor_scores[row], k_hops)?;

    let rendered = format!(
        "step {at} (aggregate {:.4}, threshold {:.4})\n{}\nco-occurrence among implicated sensors:\n{}",
        trace.aggregate[row],
        trace.threshold,
        diagnosis.render_text(&model.sensor_names),
        diagnosis.render_adjacency(&model.graph, &model.sensor_names),
    );

    ensure_dir(out_dir)?;
    let text = out_dir.join("diagnosis.txt");
    std::fs::write(&text, &rendered).map_err(|e| io_err(&text, e))?;
    let dot = out_dir.join("diagnosis.dot");
    std::fs::write(&dot, diagnosis.render_dot(&model.sensor_names)).map_err(|e| io_err(&dot, e))?;

    Ok(DiagnoseArtifacts {
        text,
        dot,
        at,
        diagnosis,
        rendered,
    })
}

#[derive(serde::Serialize)]
struct PlanFile<'a> {
    sensors: Vec<usize>,
    sensor_names: Vec<String>,
    scaled_values: &'a [f64],
    engineering_values: Vec<f64>,
    fitness: f64,
    baseline: f64,
    threshold: f64,
    feasible: bool,
    history: &'a [f64],
    t0: usize,
    horizon: usize,
}

pub struct RecommendArtifacts {
    pub plan_path: PathBuf,
    pub plan: ControlPlan,
    pub engineering_values: Vec<f64>,
}

/// Search corrective setpoints for the given incident window; writes
/// `plan.json`. Bounds arrive in engineering units (defaulting to each
/// sensor's trained range).
#[allow(clippy::too_many_arguments)]
pub fn cmd_recommend(
    model_path: &Path,
    data: &Path,
    t0: usize,
    horizon: usize,
    sensors: &[usize],
    bounds: Option<&[(f64, f64)]>,
    ga: &crate::control::GaConfig,
    out_dir: &Path,
) -> Result<RecommendArtifacts, PipelineError> {
    let model = load_model(model_path)?;
    let series = SensorSeries::read_csv(data)?;
    let scaled = model.scaler.transform(&series)?;

    let scaled_bounds: Vec<(f64, f64)> = match bounds {
        Some(raw) => {
            if raw.len() != sensors.len() {
                return Err(PipelineError::Config(format!(
                    "{} bounds given for {} sensors",
                    raw.len(),
                    sensors.len()
                )));
            }
            sensors
                .iter()
                .zip(raw)
                .map(|(&s, &(lo, hi))| {
                    let a = model.scaler.scale_value(s, lo);
                    let b = model.scaler.scale_value(s, hi);
                    (a.min(b), a.max(b))
                })
                .collect()
        }
        None => vec![(0.0, 1.0); sensors.len()],
    };

    let problem = ControlProblem {
        params: &model.params,
        graph: &model.graph,
        calibration: &model.calibration,
        series: &scaled,
        t0,
        horizon,
        sensors: sensors.to_vec(),
        bounds: scaled_bounds,
    };
    let plan = ga_optimize(&problem, ga)?;
    let engineering_values = plan.engineering_values(&model.scaler);

    ensure_dir(out_dir)?;
    let plan_path = out_dir.join("plan.json");
    let file = PlanFile {
        sensors: plan.sensors.clone(),
        sensor_names: plan
            .sensors
            .iter()
            .map(|&s| model.sensor_names.get(s).cloned().unwrap_or_default())
            .collect(),
        scaled_values: &plan.values,
        engineering_values: engineering_values.clone(),
        fitness: plan.fitness,
        baseline: plan.baseline,
        threshold: plan.threshold,
        feasible: plan.feasible,
        history: &plan.history,
        t0,
        horizon,
    };
    let f = std::fs::File::create(&plan_path).map_err(|e| io_err(&plan_path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &file)
        .map_err(|e| PipelineError::Io(e.to_string()))?;

    Ok(RecommendArtifacts {
        plan_path,
        plan,
        engineering_values,
    })
}

pub struct SynthArtifacts {
    pub data: PathBuf,
    pub train_data: PathBuf,
    pub rows: usize,
    pub train_rows: usize,
    pub anomalous_rows: usize,
}

/// Write the standard synthetic benchmark (with labels) as CSV, plus the
/// anomaly-free leading slice as a ready-to-train file.
pub fn cmd_synth(seed: u64, out_dir: &Path) -> Result<SynthArtifacts, PipelineError> {
    let spec = SyntheticSpec::benchmark(seed);
    let series = spec.generate()?;
    ensure_dir(out_dir)?;
    let data = out_dir.join("synthetic.csv");
    series.write_csv(&data)?;

    let cut = (series.len() as f64 * crate::synth::BENCH_TRAIN_FRAC) as usize;
    let mut train = series.slice(0, cut);
    train.labels = None;
    let train_data = out_dir.join("synthetic_train.csv");
    train.write_csv(&train_data)?;

    Ok(SynthArtifacts {
        data,
        train_data,
        rows: series.len(),
        train_rows: train.len(),
        anomalous_rows: series
            .labels
            .as_ref()
            .map(|l| l.iter().filter(|&&x| x != 0).count())
            .unwrap_or(0),
    })
}

/// Parse "0,2,5" into sensor indices.
pub fn parse_sensor_list(s: &str) -> Result<Vec<usize>, PipelineError> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| PipelineError::Config(format!("bad sensor index {part:?}")))
        })
        .collect()
}

/// Parse "1.5:2.5,0:10" into per-sensor bounds.
pub fn parse_bounds_list(s: &str) -> Result<Vec<(f64, f64)>, PipelineError> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| PipelineError::Config(format!("bad bounds {part:?}, want lo:hi")))?;
            let lo: f64 = lo
                .trim()
                .parse()
                .map_err(|_| PipelineError::Config(format!("bad bound {lo:?}")))?;
            let hi: f64 = hi
                .trim()
                .parse()
                .map_err(|_| PipelineError::Config(format!("bad bound {hi:?}")))?;
            Ok((lo, hi))
        })
        .collect()
}
