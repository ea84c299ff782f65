//! Scripted 2D toy events used for the bandwidth-phenomenology figures:
//! a two-track event with uniform noise hits, and a close-track pair whose
//! response merges, resolves or fragments depending on the bandwidth.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::geometry::Line2D;
use crate::grid::{evaluate_grid, find_local_maxima, ParamGrid, ResponseGrid};
use crate::response::{RetinaConfig, ToySurface, UnitCounter};

/// A toy event: 2D hits plus the true lines that produced them.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub hits: Vec<(f64, f64)>,
    pub tracks: Vec<Line2D>,
}

impl ToyFixture {
    pub fn surface(&self) -> ToySurface {
        ToySurface::new(self.hits.clone())
    }
}

/// Two well-separated tracks (10 hits each) plus 20 noise hits uniform
/// over the detector, on 10 horizontal planes.
pub fn fig1_event(seed: u64) -> ToyFixture {
    let tracks = vec![
        Line2D {
            angle: 0.15,
            offset: 0.25,
        },
        Line2D {
            angle: -0.2,
            offset: 0.7,
        },
    ];
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut hits = Vec::new();
    for t in &tracks {
        for k in 1..=10 {
            let y = k as f64 / 10.0;
            hits.push((t.offset + y * t.angle.tan(), y));
        }
    }
    for _ in 0..20 {
        let y = rng.gen_range(1..=10) as f64 / 10.0;
        hits.push((rng.gen_range(0.0..1.0), y));
    }
    ToyFixture { hits, tracks }
}

/// Grid used for the two-track figure (bandwidth 2e-2).
pub fn fig1_grid() -> ParamGrid {
    ParamGrid::new((-0.5, 0.5), (0.0, 1.0), 101, 101).expect("static grid is valid")
}

/// Two close parallel tracks (20 hits each) with x-jitter of standard
/// deviation 1e-2, on 20 horizontal planes. No uniform noise hits.
pub fn fig2_event(seed: u64) -> ToyFixture {
    let tracks = vec![
        Line2D {
            angle: 0.0,
            offset: 0.46,
        },
        Line2D {
            angle: 0.0,
            offset: 0.54,
        },
    ];
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let noise = rand_distr::Normal::new(0.0, 1e-2).expect("static std");
    let mut hits = Vec::new();
    for t in &tracks {
        for k in 1..=20 {
            let y = k as f64 / 20.0;
            let x = t.offset + y * t.angle.tan() + noise.sample(&mut rng);
            hits.push((x, y));
        }
    }
    ToyFixture { hits, tracks }
}

/// Grid for the close-track figure. Step sizes track the bandwidth: a grid
/// much finer than sigma resolves hit-level jitter as extra maxima, while a
/// grid much coarser than sigma misses resolved peaks.
pub fn fig2_grid(sigma: f64) -> ParamGrid {
    let (angle_range, angle_step, offset_step): (f64, f64, f64) = if sigma >= 5e-2 {
        (0.05, 0.05, 0.05)
    } else if sigma >= 5e-3 {
        (0.04, 0.04, 0.02)
    } else {
        (0.05, 2e-3, 1e-3)
    };
    let n_offset = ((0.7 - 0.3) / offset_step).round() as usize + 1;
    let n_angle = (2.0 * angle_range / angle_step).round() as usize + 1;
    ParamGrid::new(
        (-angle_range, angle_range),
        (0.3, 0.7),
        n_angle,
        n_offset,
    )
    .expect("static grid is valid")
}

/// Activation threshold for counting maxima in the close-track figure.
/// At mid bandwidth the two track peaks reach about 11 while tilted rival
/// fits and ridge wiggles stay near 7, so the cut sits between; at the
/// outer bandwidths any resolved peak clears 3 and stray coincidences stay
/// below it.
pub fn fig2_threshold(sigma: f64) -> f64 {
    if sigma >= 5e-3 && sigma < 5e-2 {
        8.0
    } else {
        FIG_THRESHOLD
    }
}

/// Evaluate a fixture on a grid and return the response grid.
pub fn fixture_grid(fixture: &ToyFixture, grid: &ParamGrid, sigma: f64) -> ResponseGrid {
    let surface = fixture.surface();
    evaluate_grid(&surface, grid, &RetinaConfig::new(sigma), &UnitCounter::new())
        .expect("fixture grids are valid")
}

/// Count thresholded strict local maxima of a fixture's response grid.
pub fn count_maxima(fixture: &ToyFixture, grid: &ParamGrid, sigma: f64, threshold: f64) -> usize {
    find_local_maxima(&fixture_grid(fixture, grid, sigma), threshold).len()
}

/// Threshold used when counting activated maxima in the figures; above
/// stray two-hit coincidences, below any resolved track peak.
pub const FIG_THRESHOLD: f64 = 3.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig1_two_strongest_maxima_near_truth() {
        let fx = fig1_event(1);
        let grid = fig1_grid();
        let rg = fixture_grid(&fx, &grid, 2e-2);
        let maxima = find_local_maxima(&rg, FIG_THRESHOLD);
        assert!(maxima.len() >= 2);
        for t in &fx.tracks {
            let hit = maxima[..2].iter().any(|&((i, j), _)| {
                let p = grid.point(i, j);
                (p[0] - t.angle).abs() <= 2.0 * grid.theta_step()
                    && (p[1] - t.offset).abs() <= 2.0 * grid.phi_step()
            });
            assert!(hit, "no strong maximum near track {t:?}");
        }
    }

    #[test]
    fn fig2_sigma_progression_single_seed() {
        let fx = fig2_event(3);
        let merged = count_maxima(&fx, &fig2_grid(1e-1), 1e-1, fig2_threshold(1e-1));
        let resolved = count_maxima(&fx, &fig2_grid(1e-2), 1e-2, fig2_threshold(1e-2));
        let fragmented = count_maxima(&fx, &fig2_grid(1e-3), 1e-3, fig2_threshold(1e-3));
        assert_eq!(merged, 1);
        assert_eq!(resolved, 2);
        assert!(fragmented > 2);
    }
}
