//! Multi-start continuous optimization of the response surface.
//!
//! Each seed runs a fixed number of Truncated Newton ascent steps with a
//! per-step bandwidth schedule (coarse to fine), then the converged
//! solutions are deduplicated by greedy leader clustering and thresholded.
//!
//! The Newton system is solved approximately by conjugate gradients on the
//! negated Hessian, truncated on negative curvature; an Armijo backtracking
//! line search guarantees each accepted step does not decrease the response.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RetinaError};
use crate::geometry::TrackParams;
use crate::response::{ResponseEval, ResponseSurface, RetinaConfig, UnitCounter};
use crate::simulator::{sample_track_params, SimConfig, TrackCount};

/// Distribution the initial guesses are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SeedPrior {
    /// The simulator's physical track distribution: pseudo-rapidity uniform
    /// in a range, azimuth uniform (optionally windowed).
    Physical {
        eta_range: (f64, f64),
        azimuth_half_width: Option<f64>,
    },
    /// Uniform over a rectangle in parameter space.
    UniformBox {
        theta_range: (f64, f64),
        phi_range: (f64, f64),
    },
}

impl SeedPrior {
    pub fn physical_default() -> Self {
        SeedPrior::Physical {
            eta_range: (1.0, 6.0),
            azimuth_half_width: None,
        }
    }
}

/// Metric used to decide whether two solutions belong to the same cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterMetric {
    /// Angle between the two direction vectors (detector model).
    DirectionAngle,
    /// Euclidean distance in parameter space (toy model).
    ParamEuclidean,
}

/// Configuration of the accelerated retina run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_seeds: u32,
    /// Bandwidth per optimization step; its length is the step count q.
    pub sigma_schedule: Vec<f64>,
    /// Response threshold applied to cluster leaders.
    pub r0: f64,
    /// Cluster radius in the configured metric.
    pub cluster_radius: f64,
    pub cluster_metric: ClusterMetric,
    pub prior: SeedPrior,
    /// Conjugate-gradient inner iteration cap.
    pub cg_max_iters: u32,
    /// Relative residual tolerance of the inner CG solve.
    pub cg_tolerance: f64,
    /// Cap on the parameter-space length of one update step.
    pub max_step_norm: f64,
    /// Newton inner iterations per schedule step. One schedule step is one
    /// accounted optimizer step; the inner loop is part of its cost.
    pub inner_iters: u32,
    /// Parameter box the iterates are clamped to.
    pub theta_bounds: (f64, f64),
    pub phi_bounds: (f64, f64),
    /// Skip far hits during optimization (see `RetinaConfig`).
    pub far_hit_cutoff: Option<f64>,
}

impl OptimizerConfig {
    /// Defaults for the detector model with the standard annealing schedule.
    pub fn svelo_default(n_seeds: u32) -> Self {
        Self {
            n_seeds,
            sigma_schedule: vec![0.3, 0.175, 0.05],
            r0: 1.5,
            cluster_radius: 5e-4,
            cluster_metric: ClusterMetric::DirectionAngle,
            prior: SeedPrior::physical_default(),
            cg_max_iters: 5,
            cg_tolerance: 1e-6,
            max_step_norm: 0.5,
            inner_iters: 8,
            theta_bounds: (-0.75, 0.75),
            phi_bounds: (-0.75, 0.75),
            far_hit_cutoff: Some(8.0),
        }
    }

    pub fn q(&self) -> u32 {
        self.sigma_schedule.len() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds < 1 {
            return Err(RetinaError::Config("n_seeds must be at least 1".into()));
        }
        if self.sigma_schedule.is_empty() || self.sigma_schedule.iter().any(|&s| s <= 0.0) {
            return Err(RetinaError::Config(
                "sigma_schedule must be non-empty with positive bandwidths".into(),
            ));
        }
        if self.cluster_radius <= 0.0 || self.max_step_norm <= 0.0 {
            return Err(RetinaError::Config(
                "cluster_radius and max_step_norm must be positive".into(),
            ));
        }
        Ok(())
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(self.theta_bounds.0, self.theta_bounds.1),
            p[1].clamp(self.phi_bounds.0, self.phi_bounds.1),
        ]
    }
}

/// One reconstructed track hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Parameter point; axes follow the surface's parametrization.
    pub params: [f64; 2],
    pub response: f64,
    pub cluster_size: u32,
    /// Index of the seed whose trajectory produced the leader solution.
    pub seed_id: u32,
}

/// Full record of one seed's optimization path.
#[derive(Debug, Clone)]
pub struct SeedTrajectory {
    pub seed_id: u32,
    pub initial: [f64; 2],
    /// Evaluation at the start of each step, length q.
    pub steps: Vec<([f64; 2], ResponseEval)>,
    pub final_params: [f64; 2],
    /// Response at the final parameters, last-schedule bandwidth.
    pub final_response: f64,
}

/// Draw i.i.d. initial guesses from the prior.
pub fn draw_seeds(n: u32, prior: &SeedPrior, rng: &mut ChaCha12Rng) -> Vec<[f64; 2]> {
    match prior {
        SeedPrior::Physical {
            eta_range,
            azimuth_half_width,
        } => {
            // reuse the simulator's sampling path so the default prior is
            // exactly the physical track distribution
            let cfg = SimConfig {
                eta_range: *eta_range,
                azimuth_half_width: *azimuth_half_width,
                ..SimConfig::svelo_default(TrackCount::Fixed(0), 0)
            };
            (0..n)
                .map(|_| {
                    let p = sample_track_params(&cfg, rng);
                    [p.theta, p.phi]
                })
                .collect()
        }
        SeedPrior::UniformBox {
            theta_range,
            phi_range,
        } => (0..n)
            .map(|_| {
                [
                    rng.gen_range(theta_range.0..theta_range.1),
                    rng.gen_range(phi_range.0..phi_range.1),
                ]
            })
            .collect(),
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn mat_vec(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Approximately solve `(-H) d = g` by conjugate gradients, truncating on
/// negative curvature. Returns an ascent direction (falls back to the
/// gradient when the very first CG direction has non-positive curvature).
fn truncated_cg(hessian: [[f64; 2]; 2], g: [f64; 2], max_iters: u32, tol: f64) -> [f64; 2] {
    let neg_h = [[-hessian[0][0], -hessian[0][1]], [-hessian[1][0], -hessian[1][1]]];
    let g_norm2 = dot(g, g);
    if g_norm2 == 0.0 {
        return [0.0, 0.0];
    }
    let mut x = [0.0, 0.0];
    let mut r = g;
    let mut p = g;
    let mut r_norm2 = g_norm2;
    for iter in 0..max_iters {
        let ap = mat_vec(neg_h, p);
        let curvature = dot(p, ap);
        if curvature <= 0.0 {
            if iter == 0 {
                return g; // steepest ascent fallback
            }
            break;
        }
        let alpha = r_norm2 / curvature;
        x = [x[0] + alpha * p[0], x[1] + alpha * p[1]];
        r = [r[0] - alpha * ap[0], r[1] - alpha * ap[1]];
        let r_new2 = dot(r, r);
        if r_new2.sqrt() <= tol * g_norm2.sqrt() {
            break;
        }
        let beta = r_new2 / r_norm2;
        p = [r[0] + beta * p[0], r[1] + beta * p[1]];
        r_norm2 = r_new2;
    }
    x
}

/// One Truncated Newton ascent step at bandwidth `sigma`.
///
/// Runs up to `inner_iters` Newton inner iterations at this bandwidth;
/// the loop stops early when an iteration makes no progress. Returns the
/// new parameter point and the evaluation at the old one. The line search
/// guarantees `R(new) >= R(old)` at this bandwidth; when no ascent is
/// possible the point is returned unchanged.
pub fn truncated_newton_step(
    surface: &dyn ResponseSurface,
    p: [f64; 2],
    sigma: f64,
    cfg: &OptimizerConfig,
) -> ([f64; 2], ResponseEval) {
    let (mut cur, entry_eval) = newton_inner_iteration(surface, p, sigma, cfg);
    for _ in 1..cfg.inner_iters.max(1) {
        let (next, _) = newton_inner_iteration(surface, cur, sigma, cfg);
        if next == cur {
            break;
        }
        cur = next;
    }
    (cur, entry_eval)
}

/// A single Newton inner iteration: evaluate, solve the CG subproblem,
/// backtrack along the resulting ascent direction.
fn newton_inner_iteration(
    surface: &dyn ResponseSurface,
    p: [f64; 2],
    sigma: f64,
    cfg: &OptimizerConfig,
) -> ([f64; 2], ResponseEval) {
    let rcfg = RetinaConfig {
        sigma,
        far_hit_cutoff: cfg.far_hit_cutoff,
    };
    let eval = surface.response_full(p, &rcfg);
    let g = eval.gradient;
    if dot(g, g) == 0.0 {
        return (p, eval); // flat point or maximum
    }

    let mut d = truncated_cg(eval.hessian, g, cfg.cg_max_iters, cfg.cg_tolerance);
    if dot(g, d) <= 0.0 {
        d = g;
    }
    let norm = dot(d, d).sqrt();
    if norm > cfg.max_step_norm {
        let s = cfg.max_step_norm / norm;
        d = [d[0] * s, d[1] * s];
    }

    // Armijo backtracking: factor 0.5, up to 8 halvings
    let slope = dot(g, d);
    let mut t = 1.0;
    for _ in 0..8 {
        let trial = cfg.clamp([p[0] + t * d[0], p[1] + t * d[1]]);
        let r_trial = surface.response(trial, &rcfg);
        if r_trial >= eval.value + 1e-4 * t * slope && r_trial >= eval.value {
            return (trial, eval);
        }
        t *= 0.5;
    }
    (p, eval)
}

fn run_seed(
    surface: &dyn ResponseSurface,
    seed_id: u32,
    initial: [f64; 2],
    cfg: &OptimizerConfig,
) -> SeedTrajectory {
    let mut p = cfg.clamp(initial);
    let mut steps = Vec::with_capacity(cfg.sigma_schedule.len());
    for &sigma in &cfg.sigma_schedule {
        let (next, eval) = truncated_newton_step(surface, p, sigma, cfg);
        steps.push((p, eval));
        p = next;
    }
    let last_sigma = *cfg.sigma_schedule.last().expect("validated schedule");
    let final_response = surface.response(
        p,
        &RetinaConfig {
            sigma: last_sigma,
            far_hit_cutoff: cfg.far_hit_cutoff,
        },
    );
    SeedTrajectory {
        seed_id,
        initial,
        steps,
        final_params: p,
        final_response,
    }
}

fn cluster_distance_ok(metric: ClusterMetric, radius: f64, a: [f64; 2], b: [f64; 2]) -> bool {
    match metric {
        ClusterMetric::DirectionAngle => {
            let ta = TrackParams::new(a[0], a[1]);
            let tb = TrackParams::new(b[0], b[1]);
            ta.angular_distance(&tb) <= radius
        }
        ClusterMetric::ParamEuclidean => {
            let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
            (dx * dx + dy * dy).sqrt() <= radius
        }
    }
}

/// Greedy leader clustering of converged solutions.
///
/// Solutions are processed by descending response (ties broken
/// lexicographically on the parameters, then seed id, so the output is
/// independent of input order). A solution joins the first existing
/// cluster whose leader is within `cluster_radius`, otherwise it founds a
/// new cluster. Clusters whose leader reaches `r0` are emitted, sorted by
/// response descending.
pub fn cluster_solutions(
    finals: &[([f64; 2], f64, u32)],
    metric: ClusterMetric,
    cluster_radius: f64,
    r0: f64,
) -> Vec<Candidate> {
    let mut order: Vec<usize> = (0..finals.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, ra, sa) = finals[a];
        let (pb, rb, sb) = finals[b];
        rb.partial_cmp(&ra)
            .unwrap()
            .then(pa[0].partial_cmp(&pb[0]).unwrap())
            .then(pa[1].partial_cmp(&pb[1]).unwrap())
            .then(sa.cmp(&sb))
    });

    // Leaders founded by above-threshold solutions, in founding order.
    // Below-threshold solutions can never outrank these (descending order),
    // so clusters they found are never emitted and need not be formed;
    // membership of below-threshold solutions in emitted clusters is
    // unaffected by that shortcut.
    let mut leaders: Vec<Candidate> = Vec::new();
    let mut stragglers: Vec<usize> = Vec::new();
    for &i in &order {
        let (p, r, seed) = finals[i];
        if r < r0 {
            stragglers.push(i);
            continue;
        }
        match leaders
            .iter_mut()
            .find(|l| cluster_distance_ok(metric, cluster_radius, l.params, p))
        {
            Some(l) => l.cluster_size += 1,
            None => leaders.push(Candidate {
                params: p,
                response: r,
                cluster_size: 1,
                seed_id: seed,
            }),
        }
    }
    for &i in &stragglers {
        let (p, _, _) = finals[i];
        if let Some(l) = leaders
            .iter_mut()
            .find(|l| cluster_distance_ok(metric, cluster_radius, l.params, p))
        {
            l.cluster_size += 1;
        }
    }
    leaders
}

/// Run the accelerated retina: draw seeds, optimize each, cluster.
///
/// Accounting: exactly `n_seeds · q` optimizer steps are charged to the
/// counter regardless of internal line-search evaluations.
pub fn run_multistart(
    surface: &dyn ResponseSurface,
    cfg: &OptimizerConfig,
    rng: &mut ChaCha12Rng,
    counter: &UnitCounter,
) -> Result<Vec<Candidate>> {
    let trajectories = run_multistart_trajectories(surface, cfg, rng, counter)?;
    let finals: Vec<([f64; 2], f64, u32)> = trajectories
        .iter()
        .map(|t| (t.final_params, t.final_response, t.seed_id))
        .collect();
    Ok(cluster_solutions(
        &finals,
        cfg.cluster_metric,
        cfg.cluster_radius,
        cfg.r0,
    ))
}

/// As `run_multistart` but returning the full per-seed trajectories.
pub fn run_multistart_trajectories(
    surface: &dyn ResponseSurface,
    cfg: &OptimizerConfig,
    rng: &mut ChaCha12Rng,
    counter: &UnitCounter,
) -> Result<Vec<SeedTrajectory>> {
    cfg.validate()?;
    let seeds = draw_seeds(cfg.n_seeds, &cfg.prior, rng);
    let trajectories: Vec<SeedTrajectory> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| run_seed(surface, i as u32, s, cfg))
        .collect();
    counter.add_optimizer_steps(cfg.n_seeds as u64 * cfg.q() as u64);
    Ok(trajectories)
}
