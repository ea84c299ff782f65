//! Resolved command execution and run manifests.
//!
//! The binary parses flags into a [`ResolvedCommand`] holding every value
//! that influences the output, then executes it through [`execute`]. The
//! same resolved command is written next to each output as a manifest, so
//! `rerun` can replay it and produce byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CandidateRecord, EventCandidates};
use crate::error::{Result, RetinaError};
use crate::evaluation::{compute_budget, match_candidates, mix_seed, ExperimentRow, ExperimentSpec, MatchMetric};
use crate::fixtures::{fig1_event, fig1_grid, fig2_event, fig2_grid, fig2_threshold, fixture_grid, FIG_THRESHOLD};
use crate::grid::{estimate_track, evaluate_grid, find_local_maxima, grid_cell_count_for_resolution, ParamGrid};
use crate::multistart::{run_multistart, Candidate, OptimizerConfig};
use crate::response::{RetinaConfig, SVeloSurface, UnitCounter};
use crate::simulator::{generate_event, SimConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stream key for deriving per-event generation seeds from the base seed.
const STREAM_GENERATE: u64 = 0x4745_4e45;
/// Stream key for deriving per-event optimizer seeds.
const STREAM_OPTIMIZE: u64 = 0x4f50_54;

/// Output format of summaries printed to stdout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Reconstruction method with its resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ReconstructMethod {
    Grid {
        /// Cell size in radians along both axes.
        step: f64,
        sigma: f64,
        threshold: f64,
        theta_range: (f64, f64),
        phi_range: (f64, f64),
    },
    Multistart {
        /// Budget fraction Eq-style; recorded for provenance. `None` when
        /// `n_seeds` was given directly.
        alpha: Option<f64>,
        /// Grid resolution the budget is normalized against.
        grid_epsilon: f64,
        theta_range: (f64, f64),
        phi_range: (f64, f64),
        c0: f64,
        opt: OptimizerConfig,
        /// Base seed of the per-event optimizer RNG streams.
        seed: u64,
    },
}

/// Figure fixtures exposed by `figure`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FigureFixture {
    Fig1,
    Fig2Small,
    Fig2Mid,
    Fig2Big,
    Fig3a,
    Fig3b,
}

impl FigureFixture {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "fig1" => Self::Fig1,
            "fig2-small" => Self::Fig2Small,
            "fig2-mid" => Self::Fig2Mid,
            "fig2-big" => Self::Fig2Big,
            "fig3a" => Self::Fig3a,
            "fig3b" => Self::Fig3b,
            other => {
                return Err(RetinaError::Config(format!(
                    "unknown fixture {other:?} (expected fig1, fig2-small, fig2-mid, fig2-big, fig3a, fig3b)"
                )))
            }
        })
    }
}

/// A fully resolved run: every value that influences the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum ResolvedCommand {
    Generate {
        /// Template; each event's `rng_seed` is derived from `seed`.
        sim: SimConfig,
        events: u32,
        seed: u64,
        output: String,
    },
    Reconstruct {
        input: String,
        output: String,
        #[serde(flatten)]
        method: ReconstructMethod,
    },
    Evaluate {
        corpus: String,
        candidates: String,
        output: String,
        epsilon: f64,
        metric: MatchMetric,
        assert_efficiency: Option<f64>,
        format: OutputFormat,
    },
    Figure {
        fixture: FigureFixture,
        seed: u64,
        /// Events per curve point; only used by fig3a/fig3b.
        events_per_point: u32,
        output: String,
    },
}

impl ResolvedCommand {
    pub fn output_path(&self) -> &str {
        match self {
            ResolvedCommand::Generate { output, .. } => output,
            ResolvedCommand::Reconstruct { output, .. } => output,
            ResolvedCommand::Evaluate { output, .. } => output,
            ResolvedCommand::Figure { output, .. } => output,
        }
    }

    fn with_output(mut self, path: String) -> Self {
        match &mut self {
            ResolvedCommand::Generate { output, .. } => *output = path,
            ResolvedCommand::Reconstruct { output, .. } => *output = path,
            ResolvedCommand::Evaluate { output, .. } => *output = path,
            ResolvedCommand::Figure { output, .. } => *output = path,
        }
        self
    }
}

/// Manifest emitted alongside every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    #[serde(flatten)]
    pub command: ResolvedCommand,
}

impl RunManifest {
    pub fn new(command: ResolvedCommand) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command,
        }
    }

    pub fn path_for(output: &str) -> String {
        format!("{output}.manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| RetinaError::Parse {
            line: 0,
            message: format!("manifest {}: {e}", path.display()),
        })
    }

    fn write(&self) -> Result<()> {
        let path = Self::path_for(self.command.output_path());
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Summary printed to stdout after `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateSummary {
    pub events: usize,
    pub truths: usize,
    pub matched: usize,
    pub ghosts: usize,
    pub efficiency: f64,
    pub ghost_rate: f64,
}

/// Result of executing one resolved command.
pub enum Outcome {
    Done,
    /// `--assert-efficiency` violated: (measured, required).
    AssertionFailed(f64, f64),
}

/// Execute a resolved command, writing its output file and manifest.
pub fn execute(command: &ResolvedCommand, out: &mut impl Write) -> Result<Outcome> {
    match command {
        ResolvedCommand::Generate {
            sim,
            events,
            seed,
            output,
        } => {
            let evs: Result<Vec<_>> = (0..*events)
                .map(|i| {
                    generate_event(&SimConfig {
                        rng_seed: mix_seed(*seed, STREAM_GENERATE, i as u64),
                        ..sim.clone()
                    })
                })
                .collect();
            let evs = evs?;
            let mut w = BufWriter::new(File::create(output)?);
            corpus::write_events(&mut w, &evs)?;
            w.flush()?;
            RunManifest::new(command.clone()).write()?;
            writeln!(out, "wrote {} events to {output}", evs.len())?;
            Ok(Outcome::Done)
        }
        ResolvedCommand::Reconstruct {
            input,
            output,
            method,
        } => {
            let events = corpus::read_events(&mut BufReader::new(File::open(input)?))?;
            let mut per_event = Vec::with_capacity(events.len());
            for event in &events {
                per_event.push(reconstruct_event(event, method)?);
            }
            let mut w = BufWriter::new(File::create(output)?);
            corpus::write_candidates(&mut w, &per_event)?;
            w.flush()?;
            RunManifest::new(command.clone()).write()?;
            let units: f64 = per_event.iter().map(|e| e.response_units).sum();
            writeln!(
                out,
                "reconstructed {} events to {output} ({units} response units)",
                per_event.len()
            )?;
            Ok(Outcome::Done)
        }
        ResolvedCommand::Evaluate {
            corpus: corpus_path,
            candidates,
            output,
            epsilon,
            metric,
            assert_efficiency,
            format,
        } => {
            let events = corpus::read_events(&mut BufReader::new(File::open(corpus_path)?))?;
            let cands = corpus::read_candidates(&mut BufReader::new(File::open(candidates)?))?;
            if events.len() != cands.len()
                || events
                    .iter()
                    .zip(&cands)
                    .any(|(e, c)| e.seed != c.event_seed)
            {
                return Err(RetinaError::Integrity(
                    "corpus and candidates do not describe the same events".into(),
                ));
            }
            let mut w = BufWriter::new(File::create(output)?);
            writeln!(w, "event_seed,truths,matched,ghosts,efficiency")?;
            let (mut truths, mut matched, mut ghosts, mut n_cands) = (0usize, 0usize, 0usize, 0usize);
            for (event, ec) in events.iter().zip(&cands) {
                let cs: Vec<Candidate> = ec
                    .candidates
                    .iter()
                    .map(|r| Candidate {
                        params: [r.theta, r.phi],
                        response: r.response,
                        cluster_size: r.cluster_size,
                        seed_id: r.seed_id,
                    })
                    .collect();
                let m = match_candidates(&cs, &event.true_tracks, *epsilon, *metric)?;
                truths += m.matched.len() + m.missed.len();
                matched += m.matched.len();
                ghosts += m.ghosts.len();
                n_cands += cs.len();
                writeln!(
                    w,
                    "{},{},{},{},{:.6}",
                    event.seed,
                    m.matched.len() + m.missed.len(),
                    m.matched.len(),
                    m.ghosts.len(),
                    m.efficiency()
                )?;
            }
            w.flush()?;
            RunManifest::new(command.clone()).write()?;
            let efficiency = if truths == 0 {
                1.0
            } else {
                matched as f64 / truths as f64
            };
            let summary = EvaluateSummary {
                events: events.len(),
                truths,
                matched,
                ghosts,
                efficiency,
                ghost_rate: if n_cands == 0 {
                    0.0
                } else {
                    ghosts as f64 / n_cands as f64
                },
            };
            match format {
                OutputFormat::Json => writeln!(
                    out,
                    "{}",
                    serde_json::to_string(&summary).expect("summary serializes")
                )?,
                OutputFormat::Csv => {
                    writeln!(out, "events,truths,matched,ghosts,efficiency,ghost_rate")?;
                    writeln!(
                        out,
                        "{},{},{},{},{:.6},{:.6}",
                        summary.events,
                        summary.truths,
                        summary.matched,
                        summary.ghosts,
                        summary.efficiency,
                        summary.ghost_rate
                    )?;
                }
            }
            if let Some(required) = assert_efficiency {
                if efficiency < *required {
                    return Ok(Outcome::AssertionFailed(efficiency, *required));
                }
            }
            Ok(Outcome::Done)
        }
        ResolvedCommand::Figure {
            fixture,
            seed,
            events_per_point,
            output,
        } => {
            run_figure(*fixture, *seed, *events_per_point, output, out)?;
            RunManifest::new(command.clone()).write()?;
            Ok(Outcome::Done)
        }
    }
}

/// Re-execute a manifest. When `output` is given the recorded output path
/// is replaced, so the original files stay untouched.
pub fn rerun(manifest_path: &Path, output: Option<String>, out: &mut impl Write) -> Result<Outcome> {
    let manifest = RunManifest::load(manifest_path)?;
    let command = match output {
        Some(path) => manifest.command.with_output(path),
        None => manifest.command,
    };
    execute(&command, out)
}

fn reconstruct_event(event: &crate::simulator::Event, method: &ReconstructMethod) -> Result<EventCandidates> {
    let surface = SVeloSurface::new(event.hits.iter().map(Into::into).collect());
    let counter = UnitCounter::new();
    match method {
        ReconstructMethod::Grid {
            step,
            sigma,
            threshold,
            theta_range,
            phi_range,
        } => {
            let n_theta = ((theta_range.1 - theta_range.0) / step).ceil() as usize + 1;
            let n_phi = ((phi_range.1 - phi_range.0) / step).ceil() as usize + 1;
            let grid = ParamGrid::new(*theta_range, *phi_range, n_theta, n_phi)?;
            let rg = evaluate_grid(&surface, &grid, &RetinaConfig::new(*sigma), &counter)?;
            let candidates = find_local_maxima(&rg, *threshold)
                .into_iter()
                .map(|(cell, value)| {
                    let p = estimate_track(&rg, cell);
                    CandidateRecord {
                        theta: p[0],
                        phi: p[1],
                        response: value,
                        cluster_size: 1,
                        seed_id: 0,
                    }
                })
                .collect();
            Ok(EventCandidates {
                event_seed: event.seed,
                method: "grid".into(),
                response_units: counter.units(1.0, 1.0),
                candidates,
            })
        }
        ReconstructMethod::Multistart { opt, c0, seed, .. } => {
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(*seed, STREAM_OPTIMIZE, event.seed));
            let cands = run_multistart(&surface, opt, &mut rng, &counter)?;
            Ok(EventCandidates {
                event_seed: event.seed,
                method: "multistart".into(),
                response_units: counter.units(0.0, *c0),
                candidates: cands
                    .iter()
                    .map(|c| CandidateRecord {
                        theta: c.params[0],
                        phi: c.params[1],
                        response: c.response,
                        cluster_size: c.cluster_size,
                        seed_id: c.seed_id,
                    })
                    .collect(),
            })
        }
    }
}

/// Resolve `--alpha`/`--n-seeds` into a concrete optimizer seed count.
pub fn resolve_n_seeds(
    alpha: Option<f64>,
    n_seeds: Option<u32>,
    grid_epsilon: f64,
    theta_range: (f64, f64),
    phi_range: (f64, f64),
    c0: f64,
    q: u32,
) -> Result<u32> {
    match (alpha, n_seeds) {
        (_, Some(n)) => Ok(n),
        (Some(a), None) => {
            let n_grid = grid_cell_count_for_resolution(theta_range, phi_range, grid_epsilon)?;
            Ok(compute_budget(a, n_grid, q, c0)?.n_seeds)
        }
        (None, None) => Err(RetinaError::Config(
            "either --alpha or --n-seeds is required".into(),
        )),
    }
}

fn write_grid_csv(path: &str, grid: &ParamGrid, rg: &crate::grid::ResponseGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "theta,phi,response")?;
    for i in 0..grid.n_theta {
        for j in 0..grid.n_phi {
            let p = grid.point(i, j);
            writeln!(w, "{},{},{}", p[0], p[1], rg.value(i, j))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_figure(
    fixture: FigureFixture,
    seed: u64,
    events_per_point: u32,
    output: &str,
    out: &mut impl Write,
) -> Result<()> {
    match fixture {
        FigureFixture::Fig1 => {
            let fx = fig1_event(seed);
            let grid = fig1_grid();
            let rg = fixture_grid(&fx, &grid, 2e-2);
            write_grid_csv(output, &grid, &rg)?;
            let n = find_local_maxima(&rg, FIG_THRESHOLD).len();
            writeln!(out, "fig1: {n} local maxima above {FIG_THRESHOLD}")?;
        }
        FigureFixture::Fig2Small | FigureFixture::Fig2Mid | FigureFixture::Fig2Big => {
            let sigma = match fixture {
                FigureFixture::Fig2Small => 1e-3,
                FigureFixture::Fig2Mid => 1e-2,
                _ => 1e-1,
            };
            let fx = fig2_event(seed);
            let grid = fig2_grid(sigma);
            let rg = fixture_grid(&fx, &grid, sigma);
            write_grid_csv(output, &grid, &rg)?;
            let thr = fig2_threshold(sigma);
            let n = find_local_maxima(&rg, thr).len();
            writeln!(out, "fig2 sigma={sigma}: {n} local maxima above {thr}")?;
        }
        FigureFixture::Fig3a | FigureFixture::Fig3b => {
            let alpha = if fixture == FigureFixture::Fig3a {
                1.0 / 3.0
            } else {
                0.1
            };
            let spec = ExperimentSpec {
                alphas: vec![alpha],
                events_per_point,
                ..ExperimentSpec::svelo_default(seed)
            };
            let rows = crate::evaluation::run_experiment(&spec)?;
            let mut w = BufWriter::new(File::create(output)?);
            writeln!(w, "{}", ExperimentRow::CSV_HEADER)?;
            for r in &rows {
                writeln!(w, "{}", r.to_csv())?;
            }
            w.flush()?;
            writeln!(out, "wrote {} curve points to {output}", rows.len())?;
        }
    }
    Ok(())
}
