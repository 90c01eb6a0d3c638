//! Model assembly: parameter initialization, the window-to-forecast pass,
//! the training loop, and checkpointing.
//!
//! A model owns a learned embedding row per sensor. The embeddings do
//! double duty: nearest-neighbor distances between them decide the
//! hypergraph (rebuilt once per epoch as they move), and they gate the
//! decoder output before the forecast head. Everything else is a stack of
//! projection matrices consumed by the convolution and pooling passes.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::conv::{Attention, ConvWeights};
use crate::detect::Calibration;
use crate::hierarchy::{
    encoder_decoder, DeltaMode, EncDecWeights, HierarchyError, HierarchyMode, PoolWeights,
    Scoring, UnpoolWeights,
};
use crate::hypergraph::{pairwise_distances, Hypergraph, HypergraphError};
use crate::series::{sliding_windows, MinMaxScaler, SensorSeries, SensorWindow, SeriesError};
use crate::tensor::{AdamState, Param, Tape, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Graph(#[from] HypergraphError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("config: {0}")]
    Config(String),
    #[error("series has {got} sensors, model expects {want}")]
    SensorMismatch { want: usize, got: usize },
    #[error("window data has {got} values, expected {want}")]
    WindowMismatch { want: usize, got: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{windows} windows leave no room for a validation split")]
    TooFewWindows { windows: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Seed domains, so one user seed cannot entangle unrelated random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Batching,
    Control,
    Synthetic,
}

/// Deterministic stream cipher RNG for the given seed and purpose. The
/// salts are hex digits of pi, chosen so no two purposes share a stream.
pub fn rng_for(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let salt: u64 = match purpose {
        Purpose::Init => 0x243F_6A88_85A3_08D3,
        Purpose::Batching => 0x1319_8A2E_0370_7344,
        Purpose::Control => 0xA409_3822_299F_31D0,
        Purpose::Synthetic => 0x082E_FA98_EC4E_6C89,
    };
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Positional term added to each sensor's history window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    /// Trained n x w offset table.
    Learned,
    /// Fixed sine/cosine table.
    Sinusoidal,
    /// No positional term.
    Off,
}

/// Architecture hyperparameters and ablation toggles.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Number of sensors.
    pub n: usize,
    /// History window length.
    pub w: usize,
    /// Embedding and hidden width.
    pub d: usize,
    /// Neighbors per hyperedge seed.
    pub k: usize,
    /// Pooling retention ratio.
    pub p_r: f64,
    pub positional: Positional,
    pub attention: Attention,
    pub scoring: Scoring,
    pub gating: bool,
    pub delta: DeltaMode,
    /// Feed the sensor embeddings into the attention score inputs. Off in
    /// the embedding-score ablation; the embeddings still pick neighbors
    /// and gate the forecast head.
    pub use_embeddings: bool,
}

impl ModelConfig {
    pub fn new(n: usize, w: usize, d: usize, k: usize, p_r: f64) -> Self {
        ModelConfig {
            n,
            w,
            d,
            k,
            p_r,
            positional: Positional::Learned,
            attention: Attention::Softmax,
            scoring: Scoring::Softmax,
            gating: true,
            delta: DeltaMode::Difference,
            use_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n < 2 {
            return Err(ModelError::Config(format!(
                "need at least 2 sensors, got {}",
                self.n
            )));
        }
        if self.w == 0 || self.d == 0 {
            return Err(ModelError::Config(
                "window length and width must be positive".into(),
            ));
        }
        if self.k == 0 || self.k >= self.n {
            return Err(ModelError::Config(format!(
                "neighbor count {} must be in 1..{}",
                self.k, self.n
            )));
        }
        if !(self.p_r > 0.0 && self.p_r <= 1.0) {
            return Err(ModelError::Config(format!(
                "retention ratio {} must be in (0, 1]",
                self.p_r
            )));
        }
        Ok(())
    }

    pub fn hierarchy_mode(&self) -> HierarchyMode {
        HierarchyMode {
            attention: self.attention,
            scoring: self.scoring,
            gating: self.gating,
            delta: self.delta,
        }
    }
}

/// Fixed sine/cosine positional table, one row per sensor: even columns
/// carry sin(i / 10000^(2j'/w)), odd columns the matching cosine.
pub fn sinusoidal_table(n: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * w];
    for i in 0..n {
        for j in 0..w {
            let exponent = (2 * (j / 2)) as f64 / w as f64;
            let angle = i as f64 / 10000f64.powf(exponent);
            out[i * w + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let u1: f64 = rng.gen::<f64>().max(1e-12);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
        })
        .collect()
}

fn xavier(
    rng: &mut ChaCha8Rng,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Param, TensorError> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Param::new(name, data, vec![rows, cols])
}

/// All trainable state plus the fixed positional table when one is used.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    pub config: ModelConfig,
    params: Vec<Param>,
    fixed_pe: Option<Vec<f64>>,
}

impl ModelParameters {
    /// Fresh parameters: embeddings from a normal with deviation 1/sqrt(d),
    /// positional offsets from a tight normal, projection matrices from
    /// uniform(+-sqrt(6 / (fan_in + fan_out))), biases at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_for(seed, Purpose::Init);
        let (n, w, d) = (config.n, config.w, config.d);
        let with_z = config.use_embeddings;
        let edge_score_in = if with_z { 2 * d } else { d };
        let node_score_in = if with_z { 3 * d } else { 2 * d };
        let pool_score_in = if with_z { 3 * d } else { 2 * d };
        let refine_in = if with_z { 2 * d } else { d };

        let mut params = Vec::with_capacity(19);
        params.push(Param::new(
            "z",
            normal_vec(&mut rng, n * d, 1.0 / (d as f64).sqrt()),
            vec![n, d],
        )?);
        if config.positional == Positional::Learned {
            params.push(Param::new(
                "pe",
                normal_vec(&mut rng, n * w, 0.01),
                vec![n, w],
            )?);
        }
        params.push(xavier(&mut rng, "w1", d, w)?);
        params.push(xavier(&mut rng, "w2", edge_score_in, 1)?);
        params.push(xavier(&mut rng, "w3", d, w)?);
        params.push(xavier(&mut rng, "w4", d, d)?);
        params.push(xavier(&mut rng, "w5", node_score_in, 1)?);
        params.push(xavier(&mut rng, "theta", d, 1)?);
        params.push(xavier(&mut rng, "w6", d, d)?);
        params.push(xavier(&mut rng, "w7", d, d)?);
        params.push(xavier(&mut rng, "w8", pool_score_in, 1)?);
        params.push(xavier(&mut rng, "w9", d, d)?);
        params.push(xavier(&mut rng, "w10", d, d)?);
        params.push(xavier(&mut rng, "w11", d, refine_in)?);
        params.push(xavier(&mut rng, "w12", d, d)?);
        params.push(xavier(&mut rng, "head_w", n * d, n)?);
        params.push(Param::new("head_b", vec![0.0; n], vec![1, n])?);
        params.push(xavier(&mut rng, "cls_w", n * d, 1)?);
        params.push(Param::new("cls_b", vec![0.0], vec![1, 1])?);

        let fixed_pe =
            (config.positional == Positional::Sinusoidal).then(|| sinusoidal_table(n, w));
        Ok(ModelParameters {
            config,
            params,
            fixed_pe,
        })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    fn index_of(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    /// Current embedding table, row-major n x d.
    pub fn z(&self) -> &[f64] {
        &self.params[self.index_of("z")].value.data
    }

    /// Nearest-neighbor hypergraph over the current embeddings.
    pub fn build_graph(&self) -> Result<Hypergraph, ModelError> {
        let dist = pairwise_distances(self.z(), self.config.n, self.config.d);
        Ok(Hypergraph::knn(&dist, self.config.n, self.config.k)?)
    }

    /// Put every parameter on `tape` as a differentiable leaf and bundle
    /// the ids the forward pass needs.
    pub fn register(&self, tape: &mut Tape) -> Result<BoundModel, ModelError> {
        let ids: Vec<TensorId> = self
            .params
            .iter()
            .map(|p| {
                let mut t = p.value.clone();
                t.grad = None;
                tape.leaf(t)
            })
            .collect();
        let at = |name: &str| ids[self.index_of(name)];
        let pe = match self.config.positional {
            Positional::Learned => Some(at("pe")),
            Positional::Sinusoidal => {
                let table = self.fixed_pe.clone().expect("sinusoidal table missing");
                Some(tape.constant(table, vec![self.config.n, self.config.w])?)
            }
            Positional::Off => None,
        };
        Ok(BoundModel {
            z: at("z"),
            pe,
            enc: EncDecWeights {
                conv: ConvWeights {
                    w1: at("w1"),
                    w2: at("w2"),
                    w3: at("w3"),
                    w4: at("w4"),
                    w5: at("w5"),
                },
                pool: PoolWeights {
                    theta: at("theta"),
                    w6: at("w6"),
                    w7: at("w7"),
                    w8: at("w8"),
                },
                unpool: UnpoolWeights {
                    w9: at("w9"),
                    w10: at("w10"),
                    w11: at("w11"),
                    w12: at("w12"),
                },
            },
            head_w: at("head_w"),
            head_b: at("head_b"),
            cls_w: at("cls_w"),
            cls_b: at("cls_b"),
            ids,
        })
    }

    /// Copy the gradients computed on `tape` back onto the parameters.
    pub fn pull_grads(&mut self, tape: &Tape, bound: &BoundModel) {
        for (p, &id) in self.params.iter_mut().zip(&bound.ids) {
            p.value.grad = tape.grad(id).map(|g| g.to_vec());
        }
    }

    /// One-shot forecast for a single window (fresh tape).
    pub fn forecast(&self, graph: &Hypergraph, history: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.register(&mut tape)?;
        let out = bound.forecast_on(&mut tape, &self.config, graph, history)?;
        Ok(tape.value(out).to_vec())
    }

    /// Anomaly probability for a single window (fresh tape).
    pub fn classify(&self, graph: &Hypergraph, history: &[f64]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let bound = self.register(&mut tape)?;
        let out = bound.classify_on(&mut tape, &self.config, graph, history)?;
        Ok(tape.value(out)[0])
    }

    /// Forecast every window, batching several per tape so the parameters
    /// are cloned once per chunk instead of once per window.
    pub fn forecast_series(
        &self,
        graph: &Hypergraph,
        windows: &[SensorWindow],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        const EVAL_CHUNK: usize = 64;
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let bound = self.register(&mut tape)?;
            let ids: Vec<TensorId> = chunk
                .iter()
                .map(|win| bound.forecast_on(&mut tape, &self.config, graph, &win.history))
                .collect::<Result<_, _>>()?;
            for id in ids {
                out.push(tape.value(id).to_vec());
            }
        }
        Ok(out)
    }
}

/// Tape ids of one registered parameter set.
pub struct BoundModel {
    pub z: TensorId,
    pub pe: Option<TensorId>,
    pub enc: EncDecWeights,
    pub head_w: TensorId,
    pub head_b: TensorId,
    pub cls_w: TensorId,
    pub cls_b: TensorId,
    /// One id per parameter, in parameter order.
    ids: Vec<TensorId>,
}

impl BoundModel {
    /// Shared trunk: window features through the encoder/decoder, gated by
    /// the embeddings and flattened to a 1 x (n * d) row.
    fn latent(
        &self,
        tape: &mut Tape,
        config: &ModelConfig,
        graph: &Hypergraph,
        history: &[f64],
    ) -> Result<TensorId, ModelError> {
        let want = config.n * config.w;
        if history.len() != want {
            return Err(ModelError::WindowMismatch {
                want,
                got: history.len(),
            });
        }
        let f_raw = tape.constant(history.to_vec(), vec![config.n, config.w])?;
        let f = match self.pe {
            Some(pe) => tape.add(f_raw, pe)?,
            None => f_raw,
        };
        let z_scores = config.use_embeddings.then_some(self.z);
        let enc = encoder_decoder(
            tape,
            graph,
            f,
            z_scores,
            &self.enc,
            config.p_r,
            &config.hierarchy_mode(),
        )?;
        let gated = tape.mul(self.z, enc.node_features)?;
        Ok(tape.reshape(gated, vec![1, config.n * config.d])?)
    }

    /// Next-step forecast, one value per sensor (linear output, 1 x n).
    pub fn forecast_on(
        &self,
        tape: &mut Tape,
        config: &ModelConfig,
        graph: &Hypergraph,
        history: &[f64],
    ) -> Result<TensorId, ModelError> {
        let flat = self.latent(tape, config, graph, history)?;
        let proj = tape.matmul(flat, self.head_w)?;
        Ok(tape.add(proj, self.head_b)?)
    }

    /// Window-level anomaly probability (sigmoid output, 1 x 1).
    pub fn classify_on(
        &self,
        tape: &mut Tape,
        config: &ModelConfig,
        graph: &Hypergraph,
        history: &[f64],
    ) -> Result<TensorId, ModelError> {
        let flat = self.latent(tape, config, graph, history)?;
        let proj = tape.matmul(flat, self.cls_w)?;
        let raw = tape.add(proj, self.cls_b)?;
        Ok(tape.sigmoid(raw))
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without validation improvement before the learning rate
    /// halves.
    pub lr_patience: usize,
    /// Epochs without validation improvement before training stops.
    pub stop_patience: usize,
    /// Fraction of windows (chronologically last) held out for validation.
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 48,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            lr_patience: 10,
            stop_patience: 25,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(ModelError::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(ModelError::Config(format!(
                "validation fraction {} must be in (0, 1)",
                self.val_frac
            )));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(ModelError::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Chronological split: the last `val_frac` of `count` windows (at least
/// one, never all) become validation.
pub fn chrono_split(count: usize, val_frac: f64) -> Result<(usize, usize), ModelError> {
    let val = ((count as f64 * val_frac).round() as usize).max(1);
    if val >= count {
        return Err(ModelError::TooFewWindows { windows: count });
    }
    Ok((count - val, val))
}

/// Stall tracking for the learning-rate schedule and early stopping.
struct Patience {
    best: f64,
    since_improve: usize,
    since_halve: usize,
    lr_patience: usize,
    stop_patience: usize,
}

enum PatienceAction {
    Improved,
    Continue,
    Halve,
    Stop,
}

impl Patience {
    fn new(lr_patience: usize, stop_patience: usize) -> Self {
        Patience {
            best: f64::INFINITY,
            since_improve: 0,
            since_halve: 0,
            lr_patience,
            stop_patience,
        }
    }

    fn observe(&mut self, val: f64) -> PatienceAction {
        if val < self.best {
            self.best = val;
            self.since_improve = 0;
            self.since_halve = 0;
            return PatienceAction::Improved;
        }
        self.since_improve += 1;
        self.since_halve += 1;
        if self.since_improve >= self.stop_patience {
            PatienceAction::Stop
        } else if self.since_halve >= self.lr_patience {
            self.since_halve = 0;
            PatienceAction::Halve
        } else {
            PatienceAction::Continue
        }
    }
}

/// One line of training history.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

/// Result of a training run: the best-validation parameters, the
/// hypergraph their embeddings induce, and the validation forecasts made
/// with exactly that state (the detection baseline is fit on them).
pub struct TrainOutput {
    pub params: ModelParameters,
    pub graph: Hypergraph,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub val_forecasts: Vec<Vec<f64>>,
    pub val_targets: Vec<Vec<f64>>,
}

fn mean_window_mse(forecasts: &[Vec<f64>], windows: &[SensorWindow]) -> f64 {
    let mut total = 0.0;
    for (f, win) in forecasts.iter().zip(windows) {
        let mut acc = 0.0;
        for (a, b) in f.iter().zip(&win.target) {
            acc += (a - b) * (a - b);
        }
        total += acc / f.len() as f64;
    }
    total / forecasts.len().max(1) as f64
}

/// Train a fresh model on an already scaled, anomaly-free series.
pub fn train(
    config: &ModelConfig,
    tc: &TrainConfig,
    series: &SensorSeries,
) -> Result<TrainOutput, ModelError> {
    config.validate()?;
    tc.validate()?;
    if series.sensors() != config.n {
        return Err(ModelError::SensorMismatch {
            want: config.n,
            got: series.sensors(),
        });
    }
    let windows = sliding_windows(series, config.w)?;
    let (train_n, _val_n) = chrono_split(windows.len(), tc.val_frac)?;
    let (train_wins, val_wins) = windows.split_at(train_n);

    let mut params = ModelParameters::init(config.clone(), tc.seed)?;
    let mut adam = AdamState::new(params.params(), tc.lr, tc.beta1, tc.beta2, tc.epsilon);
    let mut batch_rng = rng_for(tc.seed, Purpose::Batching);
    let mut patience = Patience::new(tc.lr_patience, tc.stop_patience);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_epoch = 0;

    let mut order: Vec<usize> = (0..train_wins.len()).collect();
    for epoch in 0..tc.epochs {
        let graph = params.build_graph()?;
        order.shuffle(&mut batch_rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(tc.batch) {
            let mut tape = Tape::new();
            let bound = params.register(&mut tape)?;
            let mut losses = Vec::with_capacity(chunk.len());
            for &wi in chunk {
                let win = &train_wins[wi];
                let pred = bound.forecast_on(&mut tape, config, &graph, &win.history)?;
                let target = tape.constant(win.target.clone(), vec![1, config.n])?;
                losses.push(tape.mse_loss(pred, target)?);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l)?;
            }
            let loss = tape.scale(total, 1.0 / chunk.len() as f64);
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss_value * chunk.len() as f64;
            tape.backward(loss)?;
            params.pull_grads(&tape, &bound);
            adam.step(params.params_mut())?;
        }
        let train_mse = epoch_loss / train_wins.len() as f64;

        let val_forecasts = params.forecast_series(&graph, val_wins)?;
        let val_mse = mean_window_mse(&val_forecasts, val_wins);
        if !val_mse.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
            lr: adam.lr,
        });
        log::debug!("epoch {epoch}: train {train_mse:.6} val {val_mse:.6} lr {}", adam.lr);

        match patience.observe(val_mse) {
            PatienceAction::Improved => {
                best_params = params.clone();
                best_epoch = epoch;
            }
            PatienceAction::Continue => {}
            PatienceAction::Halve => {
                adam.lr *= 0.5;
            }
            PatienceAction::Stop => break,
        }
    }

    // Score the validation stream with the returned state, not whatever the
    // last epoch happened to hold.
    let graph = best_params.build_graph()?;
    let val_forecasts = best_params.forecast_series(&graph, val_wins)?;
    let val_targets = val_wins.iter().map(|w| w.target.clone()).collect();
    Ok(TrainOutput {
        params: best_params,
        graph,
        history,
        best_epoch,
        val_forecasts,
        val_targets,
    })
}

pub const CHECKPOINT_FORMAT: &str = "hyperwatch-model-v1";

#[derive(serde::Serialize, serde::Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Self-describing snapshot of a trained detector: architecture, weights,
/// scaler, hypergraph, and detection calibration. JSON keeps every f64
/// bit-exact (shortest round-trip formatting).
#[derive(serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub sensor_names: Vec<String>,
    params: Vec<NamedTensor>,
    pub scaler: MinMaxScaler,
    pub edge_members: Vec<Vec<usize>>,
    pub calibration: Calibration,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParameters,
        graph: &Hypergraph,
        scaler: &MinMaxScaler,
        calibration: &Calibration,
        sensor_names: Vec<String>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: params.config.clone(),
            sensor_names,
            params: params
                .params()
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.value.shape.clone(),
                    data: p.value.data.clone(),
                })
                .collect(),
            scaler: scaler.clone(),
            edge_members: (0..graph.m()).map(|p| graph.edge_members(p).to_vec()).collect(),
            calibration: calibration.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format tag {:?}, expected {:?}",
                ckpt.format, CHECKPOINT_FORMAT
            )));
        }
        Ok(ckpt)
    }

    /// Rebuild the parameter set and hypergraph, validating every stored
    /// tensor against the architecture in `config`.
    pub fn restore(&self) -> Result<(ModelParameters, Hypergraph), ModelError> {
        let mut params = ModelParameters::init(self.config.clone(), 0)?;
        if self.params.len() != params.params().len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                params.params().len(),
                self.params.len()
            )));
        }
        for stored in &self.params {
            let idx = params
                .params()
                .iter()
                .position(|p| p.name == stored.name)
                .ok_or_else(|| {
                    ModelError::Checkpoint(format!("unexpected tensor {:?}", stored.name))
                })?;
            let p = &mut params.params_mut()[idx];
            if p.value.shape != stored.shape {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {:?} has shape {:?}, expected {:?}",
                    stored.name, stored.shape, p.value.shape
                )));
            }
            if stored.data.len() != p.value.data.len() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {:?} has {} values, expected {}",
                    stored.name,
                    stored.data.len(),
                    p.value.data.len()
                )));
            }
            p.value.data = stored.data.clone();
            p.value.grad = None;
        }
        let graph = Hypergraph::from_edge_members(self.config.n, self.edge_members.clone())?;
        Ok((params, graph))
    }
}
