//! Truth matching, efficiency measurement, seed-count budgets and the
//! efficiency-vs-multiplicity experiment driver.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RetinaError};
use crate::geometry::TrackParams;
use crate::multistart::{run_multistart, Candidate, OptimizerConfig};
use crate::response::{SVeloSurface, UnitCounter};
use crate::simulator::{generate_event, Event, SimConfig, TrackCount, TrueTrack};

/// How candidate/truth distance is measured for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMetric {
    /// Angle between direction vectors (parametrization-independent).
    DirectionAngle,
    /// Strict per-parameter window: |Δθ| ≤ ε and |Δφ| ≤ ε.
    PerParameter,
}

fn match_distance(metric: MatchMetric, a: TrackParams, b: TrackParams) -> f64 {
    match metric {
        MatchMetric::DirectionAngle => a.angular_distance(&b),
        MatchMetric::PerParameter => (a.theta - b.theta).abs().max((a.phi - b.phi).abs()),
    }
}

/// One-to-one matching outcome for a single event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatch {
    /// (truth id, candidate index, distance), one entry per matched pair.
    pub matched: Vec<(u32, usize, f64)>,
    /// Truth ids with no matched candidate.
    pub missed: Vec<u32>,
    /// Candidate indices matching no truth.
    pub ghosts: Vec<usize>,
}

impl EventMatch {
    pub fn efficiency(&self) -> f64 {
        let total = self.matched.len() + self.missed.len();
        if total == 0 {
            return 1.0;
        }
        self.matched.len() as f64 / total as f64
    }
}

/// Greedy one-to-one matching by ascending distance.
///
/// A pair is eligible when its distance is at most `epsilon`; pairs are
/// taken in order of (distance, truth id, candidate index), so the result
/// is independent of input order.
pub fn match_candidates(
    candidates: &[Candidate],
    truths: &[TrueTrack],
    epsilon: f64,
    metric: MatchMetric,
) -> Result<EventMatch> {
    if epsilon <= 0.0 {
        return Err(RetinaError::Config("matching epsilon must be positive".into()));
    }
    let mut pairs: Vec<(f64, u32, usize)> = Vec::new();
    for t in truths {
        for (ci, c) in candidates.iter().enumerate() {
            let d = match_distance(metric, t.params, TrackParams::new(c.params[0], c.params[1]));
            if d <= epsilon {
                pairs.push((d, t.id, ci));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut used_truth = vec![false; truths.len()];
    let mut used_cand = vec![false; candidates.len()];
    let truth_pos: std::collections::HashMap<u32, usize> =
        truths.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let mut matched = Vec::new();
    for (d, tid, ci) in pairs {
        let ti = truth_pos[&tid];
        if used_truth[ti] || used_cand[ci] {
            continue;
        }
        used_truth[ti] = true;
        used_cand[ci] = true;
        matched.push((tid, ci, d));
    }
    let missed = truths
        .iter()
        .enumerate()
        .filter(|(i, _)| !used_truth[*i])
        .map(|(_, t)| t.id)
        .collect();
    let ghosts = (0..candidates.len()).filter(|&i| !used_cand[i]).collect();
    Ok(EventMatch {
        matched,
        missed,
        ghosts,
    })
}

/// Seed-count budget derived from the grid-search cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub alpha: f64,
    pub n_grid: u64,
    pub q: u32,
    pub c0: f64,
    /// `round(alpha · n_grid / (c0 · q))`, floored at 1.
    pub n_seeds: u32,
}

/// Compute the number of initial guesses that spends an `alpha` fraction
/// of the grid-search budget: `n = α · n_grid · (1/C0) · (1/q)`.
pub fn compute_budget(alpha: f64, n_grid: u64, q: u32, c0: f64) -> Result<Budget> {
    if alpha <= 0.0 || n_grid == 0 || q == 0 || c0 <= 0.0 {
        return Err(RetinaError::Config("budget inputs must be positive".into()));
    }
    let n = (alpha * n_grid as f64 / (c0 * q as f64)).round().max(1.0);
    Ok(Budget {
        alpha,
        n_grid,
        q,
        c0,
        n_seeds: n as u32,
    })
}

/// Check a run's response-unit total against its budget, allowing the
/// rounding slack of a single seed.
pub fn within_budget(units: f64, budget: &Budget) -> bool {
    units <= budget.alpha * budget.n_grid as f64 + budget.c0 * budget.q as f64
}

/// One grid point of the efficiency experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub multiplicity: u32,
    pub alpha: f64,
    pub n_seeds: u32,
    pub efficiency: f64,
    /// Binomial standard error of the efficiency.
    pub err: f64,
    pub ghost_rate: f64,
    pub wall_time_s: f64,
    pub response_units: f64,
    pub within_budget: bool,
}

impl ExperimentRow {
    pub const CSV_HEADER: &'static str =
        "multiplicity,alpha,n_seeds,efficiency,err,ghost_rate,wall_time_s,response_units,within_budget";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.3},{},{}",
            self.multiplicity,
            self.alpha,
            self.n_seeds,
            self.efficiency,
            self.err,
            self.ghost_rate,
            self.wall_time_s,
            self.response_units,
            self.within_budget
        )
    }
}

/// Full experiment description. Event seeds depend only on
/// `(rng_seed, multiplicity, event index)` so every `alpha` sees the same
/// corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub multiplicities: Vec<u32>,
    pub alphas: Vec<f64>,
    pub events_per_point: u32,
    pub rng_seed: u64,
    /// Simulator template; `track_count` and `rng_seed` are overwritten.
    pub sim: SimConfig,
    /// Optimizer template; `n_seeds` is overwritten from the budget.
    pub opt: OptimizerConfig,
    /// Matching tolerance in radians.
    pub epsilon: f64,
    pub match_metric: MatchMetric,
    /// Grid resolution the budget is normalized against.
    pub grid_epsilon: f64,
    pub theta_range: (f64, f64),
    pub phi_range: (f64, f64),
    /// Cost constants: full evaluation and full optimizer step, in units
    /// of one plain response evaluation.
    pub c: f64,
    pub c0: f64,
}

impl ExperimentSpec {
    pub fn svelo_default(rng_seed: u64) -> Self {
        let (theta_range, phi_range) = crate::grid::svelo_default_ranges();
        Self {
            multiplicities: vec![50, 150, 250, 350],
            alphas: vec![1.0 / 3.0],
            events_per_point: 20,
            rng_seed,
            sim: SimConfig::svelo_default(TrackCount::Reconstructible(50), 0),
            opt: OptimizerConfig::svelo_default(1),
            epsilon: 1e-3,
            match_metric: MatchMetric::DirectionAngle,
            grid_epsilon: 1e-3,
            theta_range,
            phi_range,
            c: 3.0,
            c0: 30.0,
        }
    }

    pub fn n_grid(&self) -> Result<u64> {
        crate::grid::grid_cell_count_for_resolution(self.theta_range, self.phi_range, self.grid_epsilon)
    }
}

/// Deterministically derive a stream seed from a base seed and two keys.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    fn spl(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^ (x >> 31)
    }
    spl(base ^ spl(a.wrapping_mul(0x517C_C1B7_2722_0A95) ^ spl(b)))
}

/// Outcome of reconstructing one event inside the experiment.
pub struct EventOutcome {
    pub event: Event,
    pub candidates: Vec<Candidate>,
    pub matching: EventMatch,
    pub response_units: f64,
}

/// Generate, reconstruct and match a single experiment event.
pub fn run_experiment_event(
    spec: &ExperimentSpec,
    multiplicity: u32,
    event_index: u32,
    n_seeds: u32,
) -> Result<EventOutcome> {
    let event_seed = mix_seed(spec.rng_seed, multiplicity as u64, event_index as u64);
    let sim = SimConfig {
        track_count: TrackCount::Reconstructible(multiplicity),
        rng_seed: event_seed,
        ..spec.sim.clone()
    };
    let event = generate_event(&sim)?;
    let surface = SVeloSurface::new(event.hits.iter().map(Into::into).collect());
    let opt = OptimizerConfig {
        n_seeds,
        ..spec.opt.clone()
    };
    let counter = UnitCounter::new();
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(event_seed, 0x4f5054, 0));
    let candidates = run_multistart(&surface, &opt, &mut rng, &counter)?;
    let matching = match_candidates(&candidates, &event.true_tracks, spec.epsilon, spec.match_metric)?;
    Ok(EventOutcome {
        event,
        candidates,
        matching,
        response_units: counter.units(spec.c, spec.c0),
    })
}

/// Run the full experiment grid and return one row per
/// (multiplicity, alpha) point.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentRow>> {
    let n_grid = spec.n_grid()?;
    let mut rows = Vec::new();
    for &alpha in &spec.alphas {
        let budget = compute_budget(alpha, n_grid, spec.opt.q(), spec.c0)?;
        for &mult in &spec.multiplicities {
            let start = std::time::Instant::now();
            let mut n_truths = 0u64;
            let mut n_matched = 0u64;
            let mut n_candidates = 0u64;
            let mut n_ghosts = 0u64;
            let mut units_total = 0.0;
            let mut budget_ok = true;
            for ev in 0..spec.events_per_point {
                let out = run_experiment_event(spec, mult, ev, budget.n_seeds).map_err(|e| {
                    RetinaError::Integrity(format!(
                        "event failed (multiplicity {mult}, alpha {alpha}, index {ev}, seed {}): {e}",
                        mix_seed(spec.rng_seed, mult as u64, ev as u64)
                    ))
                })?;
                n_truths += out.event.true_tracks.len() as u64;
                n_matched += out.matching.matched.len() as u64;
                n_candidates += out.candidates.len() as u64;
                n_ghosts += out.matching.ghosts.len() as u64;
                units_total += out.response_units;
                budget_ok &= within_budget(out.response_units, &budget);
            }
            let eff = if n_truths == 0 {
                1.0
            } else {
                n_matched as f64 / n_truths as f64
            };
            let err = if n_truths == 0 {
                0.0
            } else {
                (eff * (1.0 - eff) / n_truths as f64).sqrt()
            };
            rows.push(ExperimentRow {
                multiplicity: mult,
                alpha,
                n_seeds: budget.n_seeds,
                efficiency: eff,
                err,
                ghost_rate: if n_candidates == 0 {
                    0.0
                } else {
                    n_ghosts as f64 / n_candidates as f64
                },
                wall_time_s: start.elapsed().as_secs_f64(),
                response_units: units_total,
                within_budget: budget_ok,
            });
        }
    }
    Ok(rows)
}
