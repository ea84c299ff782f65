//! Command-line entry point: generation, reconstruction, evaluation and
//! figure-data export as reproducible runs.
//!
//! Exit codes: 0 ok, 1 assertion failure, 2 usage error, 3 I/O or
//! integrity error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retina::cli::{
    execute, rerun, FigureFixture, Outcome, OutputFormat, ReconstructMethod, ResolvedCommand,
};
use retina::evaluation::MatchMetric;
use retina::grid::svelo_default_ranges;
use retina::multistart::OptimizerConfig;
use retina::simulator::{SimConfig, TrackCount};
use retina::RetinaError;

#[derive(Parser)]
#[command(name = "retina", version, about = "Artificial Retina track finding")]
struct Cli {
    /// Base RNG seed for all derived streams.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads; 0 means one per core. Output is independent of this.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Summary format on stdout.
    #[arg(long, global = true, value_parser = parse_format, default_value = "json")]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "json" => Ok(OutputFormat::Json),
        "csv" => Ok(OutputFormat::Csv),
        other => Err(format!("unknown format {other:?} (expected json or csv)")),
    }
}

fn parse_metric(s: &str) -> Result<MatchMetric, String> {
    match s {
        "direction-angle" => Ok(MatchMetric::DirectionAngle),
        "per-parameter" => Ok(MatchMetric::PerParameter),
        other => Err(format!(
            "unknown metric {other:?} (expected direction-angle or per-parameter)"
        )),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated event corpus.
    Generate(GenerateArgs),
    /// Reconstruct track candidates from an event corpus.
    Reconstruct(ReconstructArgs),
    /// Match candidates against truth and report efficiency.
    Evaluate(EvaluateArgs),
    /// Emit figure data (grid heat maps, efficiency curves).
    Figure(FigureArgs),
    /// Re-execute a recorded manifest.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Tracks per event.
    #[arg(long, default_value_t = 50)]
    tracks: u32,
    /// Interpret --tracks as generated tracks instead of reconstructible ones.
    #[arg(long)]
    fixed_tracks: bool,
    /// Number of events.
    #[arg(long, default_value_t = 10)]
    events: u32,
    /// Per-layer interaction probability.
    #[arg(long, default_value_t = 0.5)]
    p_hit: f64,
    /// Mean of the Poisson noise-hit count.
    #[arg(long, default_value_t = 250.0)]
    noise_mean: f64,
    /// Hit position smearing, mm.
    #[arg(long, default_value_t = 0.01)]
    smear_sigma: f64,
    /// Pseudo-rapidity range.
    #[arg(long, default_value_t = 1.0)]
    eta_min: f64,
    #[arg(long, default_value_t = 6.0)]
    eta_max: f64,
    /// Minimum hits for a track to count as reconstructible.
    #[arg(long, default_value_t = 2)]
    n_min: u32,
    /// Restrict track azimuth to +/- this window around +x, radians.
    #[arg(long)]
    azimuth_half_width: Option<f64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// "grid" or "multistart".
    #[arg(long)]
    method: String,
    /// Grid cell size, radians (grid method).
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Response threshold of reported maxima (grid method).
    #[arg(long, default_value_t = 1.5)]
    threshold: f64,
    /// Bandwidth for the grid sweep, mm (grid method). Matched to the cell
    /// size: peaks narrower than a cell fall between grid points.
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    /// Budget fraction; derives n_seeds (multistart method).
    #[arg(long)]
    alpha: Option<f64>,
    /// Explicit seed count, overrides --alpha (multistart method).
    #[arg(long)]
    n_seeds: Option<u32>,
    /// Grid resolution the budget is normalized against.
    #[arg(long, default_value_t = 1e-3)]
    grid_epsilon: f64,
    /// Full optimizer-step cost in response units.
    #[arg(long, default_value_t = 30.0)]
    c0: f64,
    /// Response threshold of reported candidates (multistart method).
    #[arg(long, default_value_t = 1.5)]
    r0: f64,
    /// Cluster radius, radians (multistart method).
    #[arg(long, default_value_t = 5e-4)]
    cluster_radius: f64,
    /// Comma-separated bandwidth schedule, mm (multistart method).
    #[arg(long, default_value = "0.3,0.175,0.05")]
    sigma_schedule: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    /// Per-event results CSV.
    #[arg(long)]
    output: PathBuf,
    /// Matching tolerance, radians.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// "direction-angle" or "per-parameter".
    #[arg(long, value_parser = parse_metric, default_value = "direction-angle")]
    metric: MatchMetric,
    /// Exit non-zero when overall efficiency is below this.
    #[arg(long)]
    assert_efficiency: Option<f64>,
}

#[derive(Args)]
struct FigureArgs {
    /// fig1, fig2-small, fig2-mid, fig2-big, fig3a or fig3b.
    #[arg(long)]
    fixture: String,
    /// Events per curve point (fig3a/fig3b).
    #[arg(long, default_value_t = 20)]
    events_per_point: u32,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Redirect the output to a new path, leaving the original untouched.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn path_str(p: &PathBuf) -> String {
    p.to_string_lossy().into_owned()
}

fn resolve(cli: &Cli) -> Result<ResolvedCommand, RetinaError> {
    Ok(match &cli.command {
        Command::Generate(a) => {
            if a.eta_min >= a.eta_max {
                return Err(RetinaError::Config("--eta-min must be below --eta-max".into()));
            }
            let track_count = if a.fixed_tracks {
                TrackCount::Fixed(a.tracks)
            } else {
                TrackCount::Reconstructible(a.tracks)
            };
            let sim = SimConfig {
                p_hit: a.p_hit,
                noise_mean: a.noise_mean,
                smear_sigma: a.smear_sigma,
                eta_range: (a.eta_min, a.eta_max),
                n_min: a.n_min,
                azimuth_half_width: a.azimuth_half_width,
                ..SimConfig::svelo_default(track_count, 0)
            };
            sim.validate()?;
            ResolvedCommand::Generate {
                sim,
                events: a.events,
                seed: cli.seed,
                output: path_str(&a.output),
            }
        }
        Command::Reconstruct(a) => {
            let (theta_range, phi_range) = svelo_default_ranges();
            let method = match a.method.as_str() {
                "grid" => ReconstructMethod::Grid {
                    step: a.step,
                    sigma: a.sigma,
                    threshold: a.threshold,
                    theta_range,
                    phi_range,
                },
                "multistart" => {
                    let schedule: Result<Vec<f64>, _> = a
                        .sigma_schedule
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect();
                    let schedule = schedule.map_err(|e| {
                        RetinaError::Config(format!("bad --sigma-schedule: {e}"))
                    })?;
                    let q = schedule.len() as u32;
                    let n_seeds = retina::cli::resolve_n_seeds(
                        a.alpha,
                        a.n_seeds,
                        a.grid_epsilon,
                        theta_range,
                        phi_range,
                        a.c0,
                        q,
                    )?;
                    let opt = OptimizerConfig {
                        sigma_schedule: schedule,
                        r0: a.r0,
                        cluster_radius: a.cluster_radius,
                        ..OptimizerConfig::svelo_default(n_seeds)
                    };
                    opt.validate()?;
                    ReconstructMethod::Multistart {
                        alpha: a.alpha,
                        grid_epsilon: a.grid_epsilon,
                        theta_range,
                        phi_range,
                        c0: a.c0,
                        opt,
                        seed: cli.seed,
                    }
                }
                other => {
                    return Err(RetinaError::Config(format!(
                        "unknown method {other:?} (expected grid or multistart)"
                    )))
                }
            };
            ResolvedCommand::Reconstruct {
                input: path_str(&a.input),
                output: path_str(&a.output),
                method,
            }
        }
        Command::Evaluate(a) => ResolvedCommand::Evaluate {
            corpus: path_str(&a.corpus),
            candidates: path_str(&a.candidates),
            output: path_str(&a.output),
            epsilon: a.epsilon,
            metric: a.metric,
            assert_efficiency: a.assert_efficiency,
            format: cli.format,
        },
        Command::Figure(a) => ResolvedCommand::Figure {
            fixture: FigureFixture::parse(&a.fixture)?,
            seed: cli.seed,
            events_per_point: a.events_per_point,
            output: path_str(&a.output),
        },
        Command::Rerun(_) => unreachable!("rerun handled separately"),
    })
}

fn run(cli: &Cli) -> Result<Outcome, RetinaError> {
    let mut stdout = std::io::stdout().lock();
    if let Command::Rerun(a) = &cli.command {
        return rerun(&a.manifest, a.output.as_ref().map(path_str), &mut stdout);
    }
    let command = resolve(cli)?;
    execute(&command, &mut stdout)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        // Thread count never affects outputs, only wall time.
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::AssertionFailed(measured, required)) => {
            eprintln!("assertion failed: efficiency {measured:.6} < required {required:.6}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                RetinaError::Io(_) | RetinaError::Integrity(_) | RetinaError::Parse { .. } => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
