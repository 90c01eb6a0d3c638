//! Command line for training hypergraph forecasters, scoring sensor
//! streams, diagnosing incidents, and recommending corrective setpoints.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hyperwatch::config::RunConfig;
use hyperwatch::control::GaConfig;
use hyperwatch::pipeline::{
    apply_overrides, apply_variant, cmd_detect, cmd_diagnose, cmd_recommend, cmd_synth, cmd_train,
    parse_bounds_list, parse_sensor_list, resolve_out_dir, Overrides, PipelineError,
};

#[derive(Parser)]
#[command(
    name = "hyperwatch",
    version,
    about = "Hypergraph anomaly detection for multivariate sensor streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector on an anomaly-free CSV
    Train(TrainArgs),
    /// Score a CSV against a trained model
    Detect(IoArgs),
    /// Expand the root-cause neighborhood at a flagged step
    Diagnose(DiagnoseArgs),
    /// Search corrective setpoints for an incident window
    Recommend(RecommendArgs),
    /// Train a named ablation variant
    Ablate(AblateArgs),
    /// Generate the labeled synthetic benchmark
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: swat, wadi, smap, msl, tep, hai, or synth
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        match (&self.preset, &self.config) {
            (Some(name), _) => Ok(RunConfig::preset(name)?),
            (None, Some(path)) => Ok(RunConfig::from_file(path)?),
            (None, None) => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args, Default)]
struct OverrideArgs {
    /// History window length
    #[arg(long)]
    w: Option<usize>,
    /// Embedding width
    #[arg(long)]
    d: Option<usize>,
    /// Neighbors per hyperedge
    #[arg(long)]
    k: Option<usize>,
    /// Pooling ratio in (0, 1]
    #[arg(long)]
    p_r: Option<f64>,
    /// Maximum training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Smoothing window for the aggregate score
    #[arg(long)]
    w_a: Option<usize>,
    /// Collapse the structure to single-neighbor edges
    #[arg(long)]
    two_graph: bool,
    /// Replace attention weights with uniform averaging
    #[arg(long)]
    no_attention: bool,
    /// Drop the embedding gate on decoder output
    #[arg(long)]
    no_gating: bool,
    /// Drop the positional term entirely
    #[arg(long)]
    no_positional: bool,
    /// Use the fixed sine/cosine positional table
    #[arg(long)]
    sinusoidal_positional: bool,
    /// Score pooling without the learned embeddings
    #[arg(long)]
    no_embedding_scores: bool,
    /// Score pooling by plain projection instead of softmax
    #[arg(long)]
    projection_scoring: bool,
    /// Use the bilinear decoder delta
    #[arg(long)]
    bilinear_delta: bool,
}

impl OverrideArgs {
    fn as_overrides(&self) -> Overrides {
        Overrides {
            w: self.w,
            d: self.d,
            k: self.k,
            p_r: self.p_r,
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            w_a: self.w_a,
            two_graph: self.two_graph,
            no_attention: self.no_attention,
            no_gating: self.no_gating,
            no_positional: self.no_positional,
            sinusoidal_positional: self.sinusoidal_positional,
            no_embedding_scores: self.no_embedding_scores,
            projection_scoring: self.projection_scoring,
            bilinear_delta: self.bilinear_delta,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV (sensor columns, optional label column)
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Output directory (falls back to HYPERWATCH_OUT_DIR, then .)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IoArgs {
    /// Trained model checkpoint
    #[arg(long)]
    model: PathBuf,
    /// CSV to score
    #[arg(long)]
    data: PathBuf,
    /// Output directory (falls back to HYPERWATCH_OUT_DIR, then .)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Absolute step to explain (defaults to the worst-scoring step)
    #[arg(long)]
    at: Option<usize>,
    /// Expansion depth through shared hyperedges
    #[arg(long, default_value_t = 2)]
    k_hops: usize,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    io: IoArgs,
    /// First step of the incident window
    #[arg(long)]
    t0: usize,
    /// Steps to hold the candidate setpoints
    #[arg(long, default_value_t = 6)]
    horizon: usize,
    /// Manipulated sensors, e.g. "0,2"
    #[arg(long)]
    sensors: String,
    /// Engineering-unit bounds per sensor, e.g. "0:10,1.5:2.5"
    /// (defaults to each sensor's trained range)
    #[arg(long)]
    bounds: Option<String>,
    /// Candidate population per generation
    #[arg(long, default_value_t = 64)]
    population: usize,
    /// Search generations
    #[arg(long, default_value_t = 100)]
    generations: usize,
    /// RNG seed for the search
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Variant: two_graph, no_attention, no_gating, no_positional,
    /// sinusoidal_positional, no_embedding_scores, projection_scoring,
    /// or bilinear_delta
    #[arg(long)]
    variant: String,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// RNG seed for the generated series
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (falls back to HYPERWATCH_OUT_DIR, then .)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_train(args: &TrainArgs, variant: Option<&str>) -> Result<(), PipelineError> {
    let mut cfg = args.config.load()?;
    if let Some(v) = variant {
        apply_variant(&mut cfg, v)?;
    }
    apply_overrides(&mut cfg, &args.overrides.as_overrides())?;
    let out_dir = resolve_out_dir(args.out.clone());
    let arts = cmd_train(&args.data, &cfg, &out_dir)?;
    if let Some(v) = variant {
        println!("variant: {v}");
    }
    println!(
        "trained {} epochs (best epoch {}, validation mse {:.6})",
        arts.epochs_run, arts.best_epoch, arts.best_val_mse
    );
    println!("anomaly threshold: {:.4}", arts.threshold);
    println!("wrote {}", arts.checkpoint.display());
    println!("wrote {}", arts.history.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Train(args) => run_train(&args, None),
        Command::Ablate(args) => run_train(&args.train, Some(&args.variant)),
        Command::Detect(args) => {
            let out_dir = resolve_out_dir(args.out.clone());
            let arts = cmd_detect(&args.model, &args.data, &out_dir)?;
            println!(
                "scored {} steps, flagged {} (threshold {:.4})",
                arts.scored, arts.flagged, arts.threshold
            );
            if let Some((raw, adjusted)) = &arts.metrics {
                println!(
                    "raw:      precision {:.4} recall {:.4} f1 {:.4}",
                    raw.precision, raw.recall, raw.f1
                );
                println!(
                    "adjusted: precision {:.4} recall {:.4} f1 {:.4}",
                    adjusted.precision, adjusted.recall, adjusted.f1
                );
            }
            println!("wrote {}", arts.report.display());
            Ok(())
        }
        Command::Diagnose(args) => {
            let out_dir = resolve_out_dir(args.io.out.clone());
            let arts = cmd_diagnose(&args.io.model, &args.io.data, args.at, args.k_hops, &out_dir)?;
            print!("{}", arts.rendered);
            println!("wrote {}", arts.text.display());
            println!("wrote {}", arts.dot.display());
            Ok(())
        }
        Command::Recommend(args) => {
            let sensors = parse_sensor_list(&args.sensors)?;
            let bounds = args.bounds.as_deref().map(parse_bounds_list).transpose()?;
            let ga = GaConfig {
                population: args.population,
                generations: args.generations,
                seed: args.seed,
                ..GaConfig::default()
            };
            let out_dir = resolve_out_dir(args.io.out.clone());
            let arts = cmd_recommend(
                &args.io.model,
                &args.io.data,
                args.t0,
                args.horizon,
                &sensors,
                bounds.as_deref(),
                &ga,
                &out_dir,
            )?;
            let plan = &arts.plan;
            println!(
                "{} (fitness {:.4}, baseline {:.4}, threshold {:.4})",
                if plan.feasible {
                    "feasible plan found"
                } else {
                    "no feasible plan; best effort below"
                },
                plan.fitness,
                plan.baseline,
                plan.threshold
            );
            for (i, &s) in plan.sensors.iter().enumerate() {
                println!(
                    "  sensor {s}: set to {:.4} (scaled {:.4})",
                    arts.engineering_values[i], plan.values[i]
                );
            }
            println!("wrote {}", arts.plan_path.display());
            Ok(())
        }
        Command::Synth(args) => {
            let out_dir = resolve_out_dir(args.out.clone());
            let arts = cmd_synth(args.seed, &out_dir)?;
            println!(
                "generated {} rows ({} labeled anomalous, first {} clean)",
                arts.rows, arts.anomalous_rows, arts.train_rows
            );
            println!("wrote {}", arts.data.display());
            println!("wrote {}", arts.train_data.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
