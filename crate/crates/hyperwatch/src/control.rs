//! Corrective control: search for setpoints on the manipulable sensors
//! that bring the detector's score back under its threshold.
//!
//! A candidate assigns one constant value per manipulated sensor over a
//! short horizon starting at the incident time. Evaluating it means
//! substituting those values into a copy of the recorded trace (so later
//! windows see the earlier substitutions), forecasting each step, and
//! scoring the resulting deviations as a fresh stream; the fitness is the
//! worst smoothed score across the horizon, which a feasible plan keeps at
//! or below the detection threshold. The search is a small genetic
//! algorithm, chosen because the fitness landscape is derivative-free and
//! box-bounded.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detect::{aggregate, sensor_scores, Calibration, DetectError};
use crate::hypergraph::Hypergraph;
use crate::model::{rng_for, ModelError, ModelParameters, Purpose};
use crate::series::{sliding_windows, MinMaxScaler, SensorSeries, SeriesError};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("horizon [{t0}, {end}) needs {w} steps of history and must stay inside the {len}-step trace")]
    BadHorizon {
        t0: usize,
        end: usize,
        w: usize,
        len: usize,
    },
    #[error("no manipulated sensors")]
    NoSensors,
    #[error("sensor {0} out of range")]
    SensorOutOfRange(usize),
    #[error("sensor {0} listed twice")]
    DuplicateSensor(usize),
    #[error("bounds for sensor {sensor} are invalid: [{lo}, {hi}]")]
    BadBounds { sensor: usize, lo: f64, hi: f64 },
    #[error("candidate has {got} values for {want} sensors")]
    CandidateMismatch { want: usize, got: usize },
    #[error("search config: {0}")]
    BadSearch(String),
}

/// A frozen incident to plan against: trained model state, calibration,
/// the scaled recorded trace, and which sensors may be commanded.
pub struct ControlProblem<'a> {
    pub params: &'a ModelParameters,
    pub graph: &'a Hypergraph,
    pub calibration: &'a Calibration,
    /// Scaled trace containing the incident.
    pub series: &'a SensorSeries,
    /// First step the plan takes effect.
    pub t0: usize,
    /// Steps the plan is held for (and scored over).
    pub horizon: usize,
    /// Manipulated sensor indices.
    pub sensors: Vec<usize>,
    /// Per-sensor box bounds in scaled units.
    pub bounds: Vec<(f64, f64)>,
}

impl<'a> ControlProblem<'a> {
    pub fn validate(&self) -> Result<(), ControlError> {
        let w = self.params.config.w;
        let end = self.t0 + self.horizon;
        if self.horizon == 0 || self.t0 < w || end > self.series.len() {
            return Err(ControlError::BadHorizon {
                t0: self.t0,
                end,
                w,
                len: self.series.len(),
            });
        }
        if self.sensors.is_empty() {
            return Err(ControlError::NoSensors);
        }
        if self.sensors.len() != self.bounds.len() {
            return Err(ControlError::CandidateMismatch {
                want: self.sensors.len(),
                got: self.bounds.len(),
            });
        }
        let n = self.params.config.n;
        let mut seen = vec![false; n];
        for (&s, &(lo, hi)) in self.sensors.iter().zip(&self.bounds) {
            if s >= n {
                return Err(ControlError::SensorOutOfRange(s));
            }
            if seen[s] {
                return Err(ControlError::DuplicateSensor(s));
            }
            seen[s] = true;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ControlError::BadBounds { sensor: s, lo, hi });
            }
        }
        Ok(())
    }

    /// Worst smoothed anomaly score over the horizon after substituting
    /// `candidate` into the manipulated sensors' trace columns.
    pub fn evaluate(&self, candidate: &[f64]) -> Result<f64, ControlError> {
        if candidate.len() != self.sensors.len() {
            return Err(ControlError::CandidateMismatch {
                want: self.sensors.len(),
                got: candidate.len(),
            });
        }
        let mut values = self.series.values.clone();
        for (&s, &v) in self.sensors.iter().zip(candidate) {
            values[s][self.t0..self.t0 + self.horizon].fill(v);
        }
        self.score_trace(values)
    }

    /// Score of the recorded trace over the same horizon, untouched.
    pub fn baseline(&self) -> Result<f64, ControlError> {
        self.score_trace(self.series.values.clone())
    }

    fn score_trace(&self, values: Vec<Vec<f64>>) -> Result<f64, ControlError> {
        let w = self.params.config.w;
        let modified = SensorSeries::new(self.series.names.clone(), values, None)?;
        let slice = modified.slice(self.t0 - w, self.t0 + self.horizon);
        let windows = sliding_windows(&slice, w)?;
        let forecasts = self.params.forecast_series(self.graph, &windows)?;
        let mut devs = Vec::with_capacity(windows.len());
        for (f, win) in forecasts.iter().zip(&windows) {
            devs.push(
                f.iter()
                    .zip(&win.target)
                    .map(|(a, b)| (a - b).abs())
                    .collect::<Vec<f64>>(),
            );
        }
        let scores = sensor_scores(&devs, &self.calibration.stats);
        let agg = aggregate(&scores, self.calibration.w_a);
        Ok(agg.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Genetic search hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Tournament size for parent selection.
    pub tournament: usize,
    /// Probability a child mixes two parents gene-by-gene instead of
    /// cloning one.
    pub crossover: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Mutation deviation in scaled units; results clip to the bounds.
    pub mutation_scale: f64,
    /// Best genomes copied unchanged into the next generation.
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 64,
            generations: 100,
            tournament: 3,
            crossover: 0.9,
            mutation_rate: 0.1,
            mutation_scale: 0.05,
            elitism: 1,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.population < 2 {
            return Err(ControlError::BadSearch(format!(
                "population {} must be at least 2",
                self.population
            )));
        }
        if self.tournament == 0 || self.tournament > self.population {
            return Err(ControlError::BadSearch(format!(
                "tournament size {} must be in 1..={}",
                self.tournament, self.population
            )));
        }
        if self.elitism >= self.population {
            return Err(ControlError::BadSearch(format!(
                "elitism {} must leave room for offspring",
                self.elitism
            )));
        }
        for (name, p) in [
            ("crossover", self.crossover),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ControlError::BadSearch(format!(
                    "{name} {p} must be a probability"
                )));
            }
        }
        if self.mutation_scale.is_nan() || self.mutation_scale < 0.0 {
            return Err(ControlError::BadSearch(format!(
                "mutation scale {} must be nonnegative",
                self.mutation_scale
            )));
        }
        Ok(())
    }
}

/// Search outcome: the best setpoints ever evaluated and how they score.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ControlPlan {
    pub sensors: Vec<usize>,
    /// Scaled setpoints, one per manipulated sensor.
    pub values: Vec<f64>,
    /// Worst smoothed score over the horizon under this plan.
    pub fitness: f64,
    /// Same score for the untouched recorded trace.
    pub baseline: f64,
    pub threshold: f64,
    /// True when the plan keeps the score at or below the threshold.
    pub feasible: bool,
    /// Best-ever fitness after the initial population and after each
    /// generation; never increases.
    pub history: Vec<f64>,
}

impl ControlPlan {
    /// Setpoints converted back to engineering units.
    pub fn engineering_values(&self, scaler: &MinMaxScaler) -> Vec<f64> {
        self.sensors
            .iter()
            .zip(&self.values)
            .map(|(&s, &v)| scaler.inverse_value(s, v))
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
}

/// Tournament-selected index (lowest fitness wins).
fn select(rng: &mut ChaCha8Rng, fitness: &[f64], tournament: usize) -> usize {
    let mut best = rng.gen_range(0..fitness.len());
    for _ in 1..tournament {
        let c = rng.gen_range(0..fitness.len());
        if fitness[c] < fitness[best] {
            best = c;
        }
    }
    best
}

/// Minimize the problem's fitness with a seeded genetic search.
pub fn ga_optimize(problem: &ControlProblem, cfg: &GaConfig) -> Result<ControlPlan, ControlError> {
    problem.validate()?;
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, Purpose::Control);
    let genes = problem.sensors.len();

    let mut population: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| {
            problem
                .bounds
                .iter()
                .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
                .collect()
        })
        .collect();
    let mut fitness: Vec<f64> = population
        .iter()
        .map(|c| problem.evaluate(c))
        .collect::<Result<_, _>>()?;

    let mut best_idx = (0..cfg.population)
        .min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]))
        .expect("population is nonempty");
    let mut best_genome = population[best_idx].clone();
    let mut best_fitness = fitness[best_idx];
    let mut history = vec![best_fitness];

    for _gen in 0..cfg.generations {
        let mut order: Vec<usize> = (0..cfg.population).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));

        let mut next: Vec<Vec<f64>> = order[..cfg.elitism]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        let mut next_fitness: Vec<f64> =
            order[..cfg.elitism].iter().map(|&i| fitness[i]).collect();

        while next.len() < cfg.population {
            let a = select(&mut rng, &fitness, cfg.tournament);
            let b = select(&mut rng, &fitness, cfg.tournament);
            let mut child: Vec<f64> = if rng.gen::<f64>() < cfg.crossover {
                (0..genes)
                    .map(|g| {
                        if rng.gen::<f64>() < 0.5 {
                            population[a][g]
                        } else {
                            population[b][g]
                        }
                    })
                    .collect()
            } else {
                population[a].clone()
            };
            for (g, v) in child.iter_mut().enumerate() {
                if rng.gen::<f64>() < cfg.mutation_rate {
                    let (lo, hi) = problem.bounds[g];
                    *v = (*v + gaussian(&mut rng, cfg.mutation_scale)).clamp(lo, hi);
                }
            }
            let f = problem.evaluate(&child)?;
            next.push(child);
            next_fitness.push(f);
        }

        population = next;
        fitness = next_fitness;
        best_idx = (0..cfg.population)
            .min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]))
            .expect("population is nonempty");
        if fitness[best_idx] < best_fitness {
            best_fitness = fitness[best_idx];
            best_genome = population[best_idx].clone();
        }
        history.push(best_fitness);
    }

    let baseline = problem.baseline()?;
    Ok(ControlPlan {
        sensors: problem.sensors.clone(),
        values: best_genome,
        fitness: best_fitness,
        baseline,
        threshold: problem.calibration.threshold,
        feasible: best_fitness <= problem.calibration.threshold,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::RobustStats;
    use crate::model::ModelConfig;

    /// Model whose forecast is always 0.5 for every sensor: all weights
    /// zero except the forecast bias. Deviations are then just the
    /// distance of the trace from 0.5, which makes fitness exactly
    /// checkable by hand.
    struct Rig {
        params: ModelParameters,
        graph: Hypergraph,
        series: SensorSeries,
        calibration: Calibration,
    }

    fn rig(recorded: f64) -> Rig {
        let config = ModelConfig::new(3, 4, 6, 1, 1.0);
        let mut params = ModelParameters::init(config, 1).unwrap();
        for p in params.params_mut() {
            for v in &mut p.value.data {
                *v = 0.0;
            }
        }
        let idx = params
            .params()
            .iter()
            .position(|p| p.name == "head_b")
            .unwrap();
        params.params_mut()[idx].value.data = vec![0.5, 0.5, 0.5];
        let graph = params.build_graph().unwrap();
        // sensors 0 and 2 sit at the forecast value; sensor 1 records the
        // incident level
        let values = vec![vec![0.5; 30], vec![recorded; 30], vec![0.5; 30]];
        let series = SensorSeries::new(
            vec!["a".into(), "b".into(), "c".into()],
            values,
            None,
        )
        .unwrap();
        let calibration = Calibration {
            stats: RobustStats {
                mu: vec![0.0; 3],
                sigma: vec![1.0; 3],
            },
            threshold: 0.1,
            w_a: 1,
        };
        Rig {
            params,
            graph,
            series,
            calibration,
        }
    }

    fn problem<'a>(r: &'a Rig, bounds: (f64, f64)) -> ControlProblem<'a> {
        ControlProblem {
            params: &r.params,
            graph: &r.graph,
            calibration: &r.calibration,
            series: &r.series,
            t0: 10,
            horizon: 5,
            sensors: vec![1],
            bounds: vec![bounds],
        }
    }

    #[test]
    fn fitness_is_distance_from_forecast() {
        let r = rig(0.9);
        let p = problem(&r, (0.0, 1.0));
        assert!((p.evaluate(&[0.7]).unwrap() - 0.2).abs() < 1e-12);
        assert!((p.evaluate(&[0.5]).unwrap() - 0.0).abs() < 1e-12);
        assert!((p.baseline().unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn search_recovers_the_known_optimum() {
        let r = rig(0.9);
        let p = problem(&r, (0.0, 1.0));
        let cfg = GaConfig {
            population: 24,
            generations: 30,
            seed: 5,
            ..GaConfig::default()
        };
        let plan = ga_optimize(&p, &cfg).unwrap();
        assert!(
            (plan.values[0] - 0.5).abs() < 0.02,
            "found {}",
            plan.values[0]
        );
        assert!(plan.fitness <= r.calibration.threshold);
        assert!(plan.feasible);
        assert!((plan.baseline - 0.4).abs() < 1e-12);
    }

    #[test]
    fn best_fitness_never_increases() {
        let r = rig(0.8);
        let p = problem(&r, (0.0, 1.0));
        let cfg = GaConfig {
            population: 10,
            generations: 15,
            seed: 9,
            ..GaConfig::default()
        };
        let plan = ga_optimize(&p, &cfg).unwrap();
        assert_eq!(plan.history.len(), 16);
        for pair in plan.history.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn plans_respect_bounds() {
        let r = rig(0.9);
        let p = problem(&r, (0.65, 0.8));
        let cfg = GaConfig {
            population: 12,
            generations: 10,
            mutation_rate: 1.0,
            mutation_scale: 0.5,
            seed: 3,
            ..GaConfig::default()
        };
        let plan = ga_optimize(&p, &cfg).unwrap();
        assert!(plan.values[0] >= 0.65 && plan.values[0] <= 0.8);
        // optimum 0.5 is outside the box, so the plan presses the
        // boundary; fitness 0.15 still exceeds the 0.1 threshold
        assert!((plan.values[0] - 0.65).abs() < 1e-9);
        assert!(!plan.feasible);
    }

    #[test]
    fn zero_generations_reports_initial_best() {
        let r = rig(0.9);
        let p = problem(&r, (0.0, 1.0));
        let cfg = GaConfig {
            population: 8,
            generations: 0,
            seed: 4,
            ..GaConfig::default()
        };
        let plan = ga_optimize(&p, &cfg).unwrap();
        assert_eq!(plan.history.len(), 1);
        assert!((p.evaluate(&plan.values).unwrap() - plan.fitness).abs() < 1e-15);
    }

    #[test]
    fn search_is_seed_deterministic() {
        let r = rig(0.9);
        let p = problem(&r, (0.0, 1.0));
        let cfg = GaConfig {
            population: 10,
            generations: 8,
            seed: 11,
            ..GaConfig::default()
        };
        let a = ga_optimize(&p, &cfg).unwrap();
        let b = ga_optimize(&p, &cfg).unwrap();
        assert_eq!(a.values[0].to_bits(), b.values[0].to_bits());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn engineering_values_invert_the_scaler() {
        let raw = SensorSeries::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                (0..10).map(|t| t as f64).collect(),
                (0..10).map(|t| 100.0 + t as f64 * 10.0).collect(),
                (0..10).map(|t| -5.0 + t as f64).collect(),
            ],
            None,
        )
        .unwrap();
        let scaler = MinMaxScaler::fit(&raw);
        let plan = ControlPlan {
            sensors: vec![1],
            values: vec![0.5],
            fitness: 0.0,
            baseline: 1.0,
            threshold: 0.5,
            feasible: true,
            history: vec![0.0],
        };
        let eng = plan.engineering_values(&scaler);
        assert!((eng[0] - 145.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let r = rig(0.9);
        let mut p = problem(&r, (0.0, 1.0));
        p.t0 = 2; // less than the window length
        assert!(matches!(
            p.validate(),
            Err(ControlError::BadHorizon { .. })
        ));

        let mut p = problem(&r, (0.0, 1.0));
        p.sensors = vec![1, 1];
        p.bounds = vec![(0.0, 1.0), (0.0, 1.0)];
        assert!(matches!(
            p.validate(),
            Err(ControlError::DuplicateSensor(1))
        ));

        let mut p = problem(&r, (0.0, 1.0));
        p.bounds = vec![(1.0, 0.0)];
        assert!(matches!(p.validate(), Err(ControlError::BadBounds { .. })));

        let p = problem(&r, (0.0, 1.0));
        assert!(matches!(
            p.evaluate(&[0.1, 0.2]),
            Err(ControlError::CandidateMismatch { want: 1, got: 2 })
        ));
    }
}
