//! Grid-search baseline: evaluate the response over a parameter lattice,
//! pick activated local maxima, and refine each peak inside its cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RetinaError};
use crate::response::{ResponseSurface, RetinaConfig, UnitCounter};

/// Rectangular lattice over the two track parameters. Axis names follow
/// the 3D model (`theta`, `phi`); for the toy model they are the line's
/// angle and offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub theta_range: (f64, f64),
    pub phi_range: (f64, f64),
    pub n_theta: usize,
    pub n_phi: usize,
}

impl ParamGrid {
    pub fn new(theta_range: (f64, f64), phi_range: (f64, f64), n_theta: usize, n_phi: usize) -> Result<Self> {
        let g = Self {
            theta_range,
            phi_range,
            n_theta,
            n_phi,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 2 || self.n_phi < 2 {
            return Err(RetinaError::Config("grid needs at least 2 cells per axis".into()));
        }
        if self.theta_range.0 >= self.theta_range.1 || self.phi_range.0 >= self.phi_range.1 {
            return Err(RetinaError::Config("grid ranges must be non-degenerate".into()));
        }
        Ok(())
    }

    pub fn theta_step(&self) -> f64 {
        (self.theta_range.1 - self.theta_range.0) / (self.n_theta - 1) as f64
    }

    pub fn phi_step(&self) -> f64 {
        (self.phi_range.1 - self.phi_range.0) / (self.n_phi - 1) as f64
    }

    /// Parameter point of cell `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.theta_range.0 + i as f64 * self.theta_step(),
            self.phi_range.0 + j as f64 * self.phi_step(),
        ]
    }

    pub fn n_cells(&self) -> usize {
        self.n_theta * self.n_phi
    }
}

/// Responses evaluated on every lattice point of a grid.
#[derive(Debug, Clone)]
pub struct ResponseGrid {
    pub grid: ParamGrid,
    /// Row-major `n_theta × n_phi`.
    pub values: Vec<f64>,
}

impl ResponseGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_phi + j]
    }
}

/// Evaluate the response on every cell. Counts one response unit per cell.
pub fn evaluate_grid(
    surface: &dyn ResponseSurface,
    grid: &ParamGrid,
    cfg: &RetinaConfig,
    counter: &UnitCounter,
) -> Result<ResponseGrid> {
    grid.validate()?;
    let values: Vec<f64> = (0..grid.n_theta)
        .into_par_iter()
        .flat_map_iter(|i| {
            let grid = grid.clone();
            (0..grid.n_phi).map(move |j| surface.response(grid.point(i, j), cfg))
        })
        .collect();
    counter.add_grid_cells(grid.n_cells() as u64);
    Ok(ResponseGrid {
        grid: grid.clone(),
        values,
    })
}

/// Cells strictly greater than all existing 8-neighbors with value at or
/// above the threshold, sorted by value descending (ties: lowest (i, j)).
pub fn find_local_maxima(rg: &ResponseGrid, threshold: f64) -> Vec<((usize, usize), f64)> {
    let (nt, np) = (rg.grid.n_theta, rg.grid.n_phi);
    let mut out = Vec::new();
    for i in 0..nt {
        for j in 0..np {
            let v = rg.value(i, j);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            'nbrs: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= nt as i64 || nj >= np as i64 {
                        continue;
                    }
                    if rg.value(ni as usize, nj as usize) >= v {
                        is_max = false;
                        break 'nbrs;
                    }
                }
            }
            if is_max {
                out.push(((i, j), v));
            }
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

/// Refine a local-maximum cell with a 3-point quadratic fit per axis.
/// Falls back to the cell center when the fit leaves the cell.
pub fn estimate_track(rg: &ResponseGrid, cell: (usize, usize)) -> [f64; 2] {
    let (i, j) = cell;
    let mut p = rg.grid.point(i, j);

    let axis_offset = |m1: f64, c: f64, p1: f64| -> f64 {
        let denom = m1 - 2.0 * c + p1;
        if denom >= 0.0 {
            return 0.0; // not a concave section
        }
        let off = 0.5 * (m1 - p1) / denom;
        if off.abs() > 0.5 {
            0.0
        } else {
            off
        }
    };

    if i > 0 && i + 1 < rg.grid.n_theta {
        p[0] += axis_offset(rg.value(i - 1, j), rg.value(i, j), rg.value(i + 1, j))
            * rg.grid.theta_step();
    }
    if j > 0 && j + 1 < rg.grid.n_phi {
        p[1] += axis_offset(rg.value(i, j - 1), rg.value(i, j), rg.value(i, j + 1))
            * rg.grid.phi_step();
    }
    p
}

/// Number of cells a plain grid search needs to resolve both parameters
/// to `epsilon`: `⌈range_θ/ε⌉ · ⌈range_φ/ε⌉`.
pub fn grid_cell_count_for_resolution(
    theta_range: (f64, f64),
    phi_range: (f64, f64),
    epsilon: f64,
) -> Result<u64> {
    if epsilon <= 0.0 {
        return Err(RetinaError::Config("epsilon must be positive".into()));
    }
    let n_theta = ((theta_range.1 - theta_range.0) / epsilon).ceil() as u64;
    let n_phi = ((phi_range.1 - phi_range.0) / epsilon).ceil() as u64;
    Ok(n_theta.max(1) * n_phi.max(1))
}

/// Default parameter ranges of the detector model: θ covers the η range
/// with slack, φ spans the full circle.
pub fn svelo_default_ranges() -> ((f64, f64), (f64, f64)) {
    (
        (-0.73, 0.73),
        (-std::f64::consts::PI, std::f64::consts::PI),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::ToySurface;

    fn synthetic_grid(nt: usize, np: usize, f: impl Fn(usize, usize) -> f64) -> ResponseGrid {
        let grid = ParamGrid::new((0.0, 1.0), (0.0, 1.0), nt, np).unwrap();
        let values = (0..nt)
            .flat_map(|i| (0..np).map(|j| f(i, j)).collect::<Vec<_>>())
            .collect();
        ResponseGrid { grid, values }
    }

    #[test]
    fn empty_hits_give_zero_grid() {
        let s = ToySurface::new(vec![]);
        let grid = ParamGrid::new((-0.3, 0.3), (0.0, 1.0), 11, 11).unwrap();
        let counter = UnitCounter::new();
        let rg = evaluate_grid(&s, &grid, &RetinaConfig::new(0.02), &counter).unwrap();
        assert!(rg.values.iter().all(|&v| v == 0.0));
        assert_eq!(counter.grid_cells(), 121);
    }

    #[test]
    fn grid_matches_pointwise_response() {
        let s = ToySurface::new(vec![(0.3, 0.2), (0.5, 0.6), (0.7, 0.9)]);
        let grid = ParamGrid::new((-0.4, 0.4), (0.0, 1.0), 9, 13).unwrap();
        let cfg = RetinaConfig::exact(0.05);
        let rg = evaluate_grid(&s, &grid, &cfg, &UnitCounter::new()).unwrap();
        for i in 0..9 {
            for j in 0..13 {
                assert_eq!(rg.value(i, j), s.response(grid.point(i, j), &cfg));
            }
        }
    }

    #[test]
    fn constant_grid_has_no_strict_maxima() {
        let rg = synthetic_grid(8, 8, |_, _| 1.0);
        assert!(find_local_maxima(&rg, 0.0).is_empty());
    }

    #[test]
    fn single_peak_found() {
        let rg = synthetic_grid(9, 9, |i, j| {
            let (di, dj) = (i as f64 - 4.0, j as f64 - 6.0);
            10.0 - di * di - dj * dj
        });
        let m = find_local_maxima(&rg, 0.0);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].0, (4, 6));
    }

    #[test]
    fn maxima_invariant_under_constant_shift() {
        let rg = synthetic_grid(12, 12, |i, j| ((i * 7 + j * 13) % 11) as f64);
        let shifted = ResponseGrid {
            grid: rg.grid.clone(),
            values: rg.values.iter().map(|v| v + 5.0).collect(),
        };
        let a = find_local_maxima(&rg, 3.0);
        let b = find_local_maxima(&shifted, 8.0);
        let cells: Vec<_> = a.iter().map(|m| m.0).collect();
        let cells_b: Vec<_> = b.iter().map(|m| m.0).collect();
        assert_eq!(cells, cells_b);
    }

    #[test]
    fn estimate_track_centered_peak_exact() {
        let rg = synthetic_grid(9, 9, |i, j| {
            let (di, dj) = (i as f64 - 4.0, j as f64 - 4.0);
            10.0 - di * di - dj * dj
        });
        let p = estimate_track(&rg, (4, 4));
        let center = rg.grid.point(4, 4);
        assert!((p[0] - center[0]).abs() < 1e-12);
        assert!((p[1] - center[1]).abs() < 1e-12);
    }

    #[test]
    fn estimate_track_half_step_peak() {
        // quadratic peak nearly midway between cells 4 and 5 on each axis
        // (an exact midpoint would tie the two cells and leave no strict maximum)
        let rg = synthetic_grid(10, 10, |i, j| {
            let (di, dj) = (i as f64 - 4.48, j as f64 - 4.48);
            10.0 - di * di - dj * dj
        });
        let maxima = find_local_maxima(&rg, 0.0);
        let cell = maxima[0].0;
        let p = estimate_track(&rg, cell);
        let step = rg.grid.theta_step();
        let true_peak = [
            rg.grid.theta_range.0 + 4.48 * step,
            rg.grid.phi_range.0 + 4.48 * rg.grid.phi_step(),
        ];
        assert!((p[0] - true_peak[0]).abs() < 0.1 * step);
        assert!((p[1] - true_peak[1]).abs() < 0.1 * rg.grid.phi_step());
    }

    #[test]
    fn cell_count_arithmetic() {
        assert_eq!(
            grid_cell_count_for_resolution((0.0, 1.0), (0.0, 1.0), 1e-3).unwrap(),
            1_000_000
        );
        assert_eq!(
            grid_cell_count_for_resolution((0.0, 1.0), (0.0, 1.0), 1.0).unwrap(),
            1
        );
        let (tr, pr) = svelo_default_ranges();
        assert_eq!(
            grid_cell_count_for_resolution(tr, pr, 1e-3).unwrap(),
            1460 * 6284
        );
    }

    #[test]
    fn noiseless_single_track_estimate_within_half_step() {
        use crate::geometry::HitPos;
        use crate::geometry::{intersect_layer, TrackParams};
        use crate::response::SVeloSurface;

        let truth = TrackParams::new(0.147, -0.083);
        let hits: Vec<HitPos> = (4..=7)
            .map(|k| {
                let z = 35.0 * k as f64;
                let (x, y) = intersect_layer(truth, z).unwrap();
                HitPos { x, y, z }
            })
            .collect();
        let s = SVeloSurface::new(hits);
        // window around the truth, step fine enough to resolve the peak
        let grid = ParamGrid::new((0.127, 0.167), (-0.103, -0.063), 41, 41).unwrap();
        let cfg = RetinaConfig::new(0.5);
        let rg = evaluate_grid(&s, &grid, &cfg, &UnitCounter::new()).unwrap();
        let maxima = find_local_maxima(&rg, 2.5);
        assert!(!maxima.is_empty());
        let p = estimate_track(&rg, maxima[0].0);
        assert!((p[0] - truth.theta).abs() < rg.grid.theta_step() / 2.0);
        assert!((p[1] - truth.phi).abs() < rg.grid.phi_step() / 2.0);
    }
}
