//! Event simulator for the simplified VELO model.
//!
//! Tracks originate at the origin with pseudo-rapidity uniform in a
//! configured range and uniform azimuth about the beam axis. Each layer
//! crossing inside the annular acceptance fires with probability `p_hit`
//! and is smeared in x and y. Tracks leaving fewer than `n_min` hits are
//! undetectable: they are dropped from the truth list and their hits are
//! relabeled as noise. A Poisson number of noise hits is added uniformly
//! over the layer annuli.
//!
//! Generation is a pure function of `(config, rng_seed)`. Every random
//! block (one per track, plus one for noise) draws from its own RNG stream
//! derived by mixing the event seed with the block index, so results do
//! not depend on evaluation order.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RetinaError};
use crate::geometry::{
    direction_to_params, eta_to_polar, DetectorGeometry, Hit, HitTruth, TrackParams,
};

const STREAM_TRACK: u64 = 0x54524143;
const STREAM_NOISE: u64 = 0x4e4f4953;

/// How many tracks to put in an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackCount {
    /// Generate exactly this many tracks; the reconstructible count is
    /// whatever survives the `n_min` rule.
    Fixed(u32),
    /// Keep generating tracks until this many are reconstructible.
    Reconstructible(u32),
}

/// Simulator configuration with the simplified-VELO defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub track_count: TrackCount,
    pub geometry: DetectorGeometry,
    /// Pseudo-rapidity range, sampled uniformly.
    pub eta_range: (f64, f64),
    /// Per-layer interaction probability.
    pub p_hit: f64,
    /// Minimum hits for a track to be reconstructible.
    pub n_min: u32,
    /// Std deviation of the x and y measurement error, mm.
    pub smear_sigma: f64,
    /// Mean of the Poisson noise-hit count.
    pub noise_mean: f64,
    /// Half-width of the azimuth window around +x, radians. `None` means
    /// full azimuth. Used by reduced-acceptance configurations.
    pub azimuth_half_width: Option<f64>,
    pub rng_seed: u64,
}

impl SimConfig {
    pub fn svelo_default(track_count: TrackCount, rng_seed: u64) -> Self {
        Self {
            track_count,
            geometry: DetectorGeometry::svelo_default(),
            eta_range: (1.0, 6.0),
            p_hit: 0.5,
            n_min: 2,
            smear_sigma: 0.01,
            noise_mean: 250.0,
            azimuth_half_width: None,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !(0.0..=1.0).contains(&self.p_hit) {
            return Err(RetinaError::Config("p_hit must be in [0, 1]".into()));
        }
        if self.smear_sigma <= 0.0 {
            return Err(RetinaError::Config("smear_sigma must be positive".into()));
        }
        if self.noise_mean < 0.0 {
            return Err(RetinaError::Config("noise_mean must be non-negative".into()));
        }
        if self.eta_range.0 >= self.eta_range.1 {
            return Err(RetinaError::Config("eta_range must be non-degenerate".into()));
        }
        if let Some(w) = self.azimuth_half_width {
            if !(w > 0.0 && w <= std::f64::consts::PI) {
                return Err(RetinaError::Config(
                    "azimuth_half_width must be in (0, π]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A true track kept after the `n_min` rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueTrack {
    pub id: u32,
    pub params: TrackParams,
    pub n_hits: u32,
}

/// One generated event: hits plus truth and the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seed: u64,
    pub hits: Vec<Hit>,
    pub true_tracks: Vec<TrueTrack>,
    pub reconstructible_ids: Vec<u32>,
    pub config: SimConfig,
}

impl Event {
    pub fn validate(&self) -> Result<()> {
        for h in &self.hits {
            if let HitTruth::Track(id) = h.truth {
                if !self.true_tracks.iter().any(|t| t.id == id) {
                    return Err(RetinaError::Integrity(format!(
                        "hit refers to unknown track id {id}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// RNG for one random block of an event.
fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag ^ splitmix64(index))))
}

/// Sample one physical track direction: η uniform in range, azimuth
/// uniform about the beam axis (optionally windowed around +x).
pub fn sample_track_params(config: &SimConfig, rng: &mut impl Rng) -> TrackParams {
    let eta = rng.gen_range(config.eta_range.0..config.eta_range.1);
    let polar = eta_to_polar(eta);
    let psi = match config.azimuth_half_width {
        Some(w) => rng.gen_range(-w..w),
        None => rng.gen_range(0.0..2.0 * std::f64::consts::PI),
    };
    let (sp, cp) = polar.sin_cos();
    let d = [sp * psi.cos(), sp * psi.sin(), cp];
    direction_to_params(d).expect("sampled direction is forward by construction")
}

/// Layers whose true intersection with the track lies inside the annulus.
pub fn acceptance_layers(params: TrackParams, geometry: &DetectorGeometry) -> Vec<usize> {
    let mut out = Vec::new();
    for (k, &z) in geometry.layer_z.iter().enumerate() {
        if let Ok((x, y)) = crate::geometry::intersect_layer(params, z) {
            let r = (x * x + y * y).sqrt();
            if r >= geometry.r_inner && r <= geometry.r_outer {
                out.push(k);
            }
        }
    }
    out
}

/// Sample one noise hit: layer uniform over layers, position uniform by
/// area over the annulus.
pub fn noise_hit_sampler(geometry: &DetectorGeometry, rng: &mut impl Rng) -> Hit {
    let layer = rng.gen_range(0..geometry.n_layers());
    let (ri2, ro2) = (geometry.r_inner.powi(2), geometry.r_outer.powi(2));
    let r = (rng.gen_range(0.0..1.0) * (ro2 - ri2) + ri2).sqrt();
    let psi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    Hit {
        x: r * psi.cos(),
        y: r * psi.sin(),
        z: geometry.layer_z[layer],
        layer_index: layer,
        truth: HitTruth::Noise,
    }
}

struct RawTrack {
    params: TrackParams,
    hits: Vec<Hit>,
}

fn generate_track(config: &SimConfig, track_index: u64) -> RawTrack {
    let mut rng = stream_rng(config.rng_seed, STREAM_TRACK, track_index);
    let params = sample_track_params(config, &mut rng);
    let smear = Normal::new(0.0, config.smear_sigma).expect("validated smear sigma");
    let mut hits = Vec::new();
    for (k, &z) in config.geometry.layer_z.iter().enumerate() {
        // draw the interaction coin for every layer so the stream layout
        // does not depend on the acceptance outcome
        let fires = rng.gen_bool(config.p_hit);
        let (ex, ey) = (smear.sample(&mut rng), smear.sample(&mut rng));
        let (ix, iy) = match crate::geometry::intersect_layer(params, z) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let r = (ix * ix + iy * iy).sqrt();
        if fires && r >= config.geometry.r_inner && r <= config.geometry.r_outer {
            hits.push(Hit {
                x: ix + ex,
                y: iy + ey,
                z,
                layer_index: k,
                truth: HitTruth::Noise, // relabeled once the track id is final
            });
        }
    }
    RawTrack { params, hits }
}

/// Generate one event. Deterministic in `(config, config.rng_seed)`.
pub fn generate_event(config: &SimConfig) -> Result<Event> {
    config.validate()?;

    let mut raw: Vec<RawTrack> = Vec::new();
    match config.track_count {
        TrackCount::Fixed(n) => {
            for i in 0..n as u64 {
                raw.push(generate_track(config, i));
            }
        }
        TrackCount::Reconstructible(n) => {
            let mut found = 0u32;
            let mut i = 0u64;
            let cap = 1000 + 200 * n as u64;
            while found < n {
                if i >= cap {
                    return Err(RetinaError::Config(format!(
                        "could not reach {n} reconstructible tracks within {cap} attempts"
                    )));
                }
                let t = generate_track(config, i);
                if t.hits.len() as u32 >= config.n_min {
                    found += 1;
                }
                raw.push(t);
                i += 1;
            }
        }
    }

    let mut hits = Vec::new();
    let mut true_tracks = Vec::new();
    let mut next_id = 0u32;
    for t in raw {
        if (t.hits.len() as u32) < config.n_min {
            // undetectable: keep the hits as noise, drop the truth record
            hits.extend(t.hits);
            continue;
        }
        let id = next_id;
        next_id += 1;
        true_tracks.push(TrueTrack {
            id,
            params: t.params,
            n_hits: t.hits.len() as u32,
        });
        hits.extend(t.hits.into_iter().map(|mut h| {
            h.truth = HitTruth::Track(id);
            h
        }));
    }

    let mut noise_rng = stream_rng(config.rng_seed, STREAM_NOISE, 0);
    if config.noise_mean > 0.0 {
        let n_noise = Poisson::new(config.noise_mean)
            .expect("validated noise mean")
            .sample(&mut noise_rng) as u64;
        for _ in 0..n_noise {
            hits.push(noise_hit_sampler(&config.geometry, &mut noise_rng));
        }
    }

    let reconstructible_ids = true_tracks.iter().map(|t| t.id).collect();
    Ok(Event {
        seed: config.rng_seed,
        hits,
        true_tracks,
        reconstructible_ids,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_config(track_count: TrackCount, seed: u64) -> SimConfig {
        SimConfig {
            noise_mean: 0.0,
            ..SimConfig::svelo_default(track_count, seed)
        }
    }

    #[test]
    fn degenerate_probabilities() {
        // p_hit = 1, no noise: each kept track has one hit per acceptance layer
        let mut cfg = quiet_config(TrackCount::Fixed(5), 3);
        cfg.p_hit = 1.0;
        let ev = generate_event(&cfg).unwrap();
        ev.validate().unwrap();
        for t in &ev.true_tracks {
            let expect = acceptance_layers(t.params, &cfg.geometry).len() as u32;
            assert_eq!(t.n_hits, expect);
            assert!(t.n_hits >= cfg.n_min);
        }
        // hits of undetectable tracks stay in the event as noise
        let track_labeled = ev
            .hits
            .iter()
            .filter(|h| matches!(h.truth, HitTruth::Track(_)))
            .count() as u32;
        assert_eq!(
            track_labeled,
            ev.true_tracks.iter().map(|t| t.n_hits).sum::<u32>()
        );

        // p_hit = 0: no track hits, no truth tracks
        let mut cfg = quiet_config(TrackCount::Fixed(5), 3);
        cfg.p_hit = 0.0;
        let ev = generate_event(&cfg).unwrap();
        assert!(ev.true_tracks.is_empty());
        assert!(ev.hits.is_empty());
    }

    #[test]
    fn full_acceptance_track_hits_all_layers() {
        // a track that stays inside the annulus on all 20 layers
        let mut cfg = quiet_config(TrackCount::Fixed(1), 9);
        cfg.p_hit = 1.0;
        // tan θ_p such that r spans [35·t, 700·t] ⊂ [8, 42] is impossible for
        // all 20 layers (ratio 20 > 42/8), so check against acceptance_layers
        let ev = generate_event(&cfg).unwrap();
        if let Some(t) = ev.true_tracks.first() {
            assert_eq!(
                t.n_hits as usize,
                acceptance_layers(t.params, &cfg.geometry).len()
            );
        }
    }

    #[test]
    fn n_min_rule_relabels_hits() {
        let cfg = SimConfig::svelo_default(TrackCount::Fixed(30), 17);
        let ev = generate_event(&cfg).unwrap();
        ev.validate().unwrap();
        for t in &ev.true_tracks {
            assert!(t.n_hits >= cfg.n_min);
            let labeled = ev
                .hits
                .iter()
                .filter(|h| h.truth == HitTruth::Track(t.id))
                .count() as u32;
            assert_eq!(labeled, t.n_hits);
        }
        assert_eq!(
            ev.reconstructible_ids,
            ev.true_tracks.iter().map(|t| t.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn z_is_exact_smearing_only_xy() {
        let cfg = SimConfig::svelo_default(TrackCount::Fixed(20), 23);
        let ev = generate_event(&cfg).unwrap();
        for h in &ev.hits {
            assert_eq!(h.z, cfg.geometry.layer_z[h.layer_index]);
        }
    }

    #[test]
    fn determinism_same_seed() {
        let cfg = SimConfig::svelo_default(TrackCount::Fixed(40), 99);
        let a = generate_event(&cfg).unwrap();
        let b = generate_event(&cfg).unwrap();
        assert_eq!(a, b);
        let cfg2 = SimConfig::svelo_default(TrackCount::Fixed(40), 100);
        assert_ne!(generate_event(&cfg2).unwrap(), a);
    }

    #[test]
    fn reconstructible_target_is_met() {
        let cfg = SimConfig::svelo_default(TrackCount::Reconstructible(50), 7);
        let ev = generate_event(&cfg).unwrap();
        assert_eq!(ev.true_tracks.len(), 50);
    }

    #[test]
    fn noise_count_mean_matches_poisson() {
        let mut total = 0u64;
        let n_events = 1000;
        for seed in 0..n_events {
            let cfg = SimConfig::svelo_default(TrackCount::Fixed(0), seed);
            total += generate_event(&cfg).unwrap().hits.len() as u64;
        }
        let mean = total as f64 / n_events as f64;
        let tol = 3.0 * (250.0f64 / n_events as f64).sqrt();
        assert!(
            (mean - 250.0).abs() < tol,
            "noise mean {mean} outside 250 ± {tol}"
        );
    }

    #[test]
    fn noise_radius_in_annulus_and_area_uniform() {
        let geo = DetectorGeometry::svelo_default();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 100_000;
        let bins = 20;
        let (ri2, ro2) = (geo.r_inner.powi(2), geo.r_outer.powi(2));
        let mut counts = vec![0u64; bins];
        let mut circ = (0.0f64, 0.0f64);
        for _ in 0..n {
            let h = noise_hit_sampler(&geo, &mut rng);
            let r = (h.x * h.x + h.y * h.y).sqrt();
            assert!(r >= geo.r_inner && r <= geo.r_outer);
            let psi = h.y.atan2(h.x);
            circ.0 += psi.cos();
            circ.1 += psi.sin();
            let b = (((r * r - ri2) / (ro2 - ri2)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        // area-uniform means r² is uniform: equal expected counts per r² bin
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // χ²(df = 19) 1% critical value
        assert!(chi2 < 36.19, "radial χ² = {chi2}");
        // circular uniformity of the azimuth
        let modulus = ((circ.0 / n as f64).powi(2) + (circ.1 / n as f64).powi(2)).sqrt();
        assert!(modulus < 0.02, "azimuth resultant {modulus}");
    }

    #[test]
    fn mean_hits_per_track_matches_p_hit_times_layers() {
        // no noise so every hit traces back to a generated track
        let n_events = 200u64;
        let per_event = 50u32;
        let mut total_hits = 0u64;
        for seed in 0..n_events {
            let cfg = quiet_config(TrackCount::Fixed(per_event), 1000 + seed);
            total_hits += generate_event(&cfg).unwrap().hits.len() as u64;
        }
        let realized = total_hits as f64 / (n_events * per_event as u64) as f64;

        // independent estimate of p_hit · E[acceptance layers]
        let cfg = quiet_config(TrackCount::Fixed(1), 0);
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let m = 100_000;
        let mut layer_sum = 0u64;
        for _ in 0..m {
            let p = sample_track_params(&cfg, &mut rng);
            layer_sum += acceptance_layers(p, &cfg.geometry).len() as u64;
        }
        let expected = cfg.p_hit * layer_sum as f64 / m as f64;
        assert!(
            (realized - expected).abs() < 0.05 * expected.max(1.0),
            "realized {realized} vs expected {expected}"
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SimConfig::svelo_default(TrackCount::Fixed(1), 0);
        cfg.p_hit = 1.5;
        assert!(generate_event(&cfg).is_err());
        let mut cfg = SimConfig::svelo_default(TrackCount::Fixed(1), 0);
        cfg.eta_range = (6.0, 1.0);
        assert!(generate_event(&cfg).is_err());
    }
}
