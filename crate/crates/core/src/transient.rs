//! Forward model: the single-pixel photon-count histogram of a scene.
//!
//! Every surviving ping and loop contributes a Gaussian pulse centred at its
//! time of flight. Expected photons are shared between paths in proportion to
//! [`radiometric_weight`] and add up to the configured budget; a flat dark
//! count rate sits underneath. Counts are Poisson unless `noiseless` is set.

use std::collections::HashSet;
use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TeraError};
use crate::geometry::{path_length, PathLabel, TotalConfiguration, SPEED_OF_LIGHT};

/// FWHM to standard deviation of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.355;

const OCCLUSION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Pulses are integrated over this many standard deviations each side.
const PULSE_SUPPORT_SIGMAS: f64 = 8.0;
/// Histogram margin before the first and after the last pulse centre.
const SPAN_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Time of the leading edge of bin 0, seconds.
    pub t0: f64,
    /// seconds
    pub bin_width: f64,
    /// Photon counts; real-valued expectations in noiseless mode.
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(t0: f64, bin_width: f64, counts: Vec<f64>) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(TeraError::NonPositive { name: "bin_width", value: bin_width });
        }
        if counts.is_empty() {
            return Err(TeraError::InvalidParameter("histogram has no bins".into()));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(TeraError::InvalidParameter("counts must be finite and non-negative".into()));
        }
        Ok(Self { t0, bin_width, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.t0 + (i as f64 + 0.5) * self.bin_width
    }

    /// Time covered by all bins.
    pub fn span(&self) -> f64 {
        self.counts.len() as f64 * self.bin_width
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// System impulse response FWHM, seconds.
    pub pulse_fwhm: f64,
    /// seconds
    pub bin_width: f64,
    /// Expected total signal photons over all paths.
    pub photon_budget: f64,
    /// Dark counts per second.
    pub dark_rate: f64,
    /// Independent drop probability of each loop.
    pub occlusion_prob: f64,
    pub seed: u64,
    pub noiseless: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            pulse_fwhm: 80e-12,
            bin_width: 4e-12,
            photon_budget: 1e6,
            dark_rate: 100.0,
            occlusion_prob: 0.0,
            seed: 0,
            noiseless: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_fwhm > 0.0 && self.pulse_fwhm.is_finite()) {
            return Err(TeraError::NonPositive { name: "pulse_fwhm", value: self.pulse_fwhm });
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(TeraError::NonPositive { name: "bin_width", value: self.bin_width });
        }
        if !(self.photon_budget >= 0.0 && self.photon_budget.is_finite()) {
            return Err(TeraError::InvalidParameter(format!(
                "photon_budget {} must be non-negative",
                self.photon_budget
            )));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(TeraError::InvalidParameter(format!(
                "dark_rate {} must be non-negative",
                self.dark_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(TeraError::InvalidParameter(format!(
                "occlusion_prob {} outside [0, 1]",
                self.occlusion_prob
            )));
        }
        Ok(())
    }

    /// Standard deviation of the bare system pulse.
    pub fn pulse_sigma(&self) -> f64 {
        self.pulse_fwhm / FWHM_PER_SIGMA
    }
}

fn cross_section(k: &TotalConfiguration, i: usize) -> f64 {
    let d = k.diameter[i];
    if d > 0.0 {
        PI * 0.25 * d * d
    } else {
        1.0
    }
}

/// Relative intensity of a ping or loop.
pub fn radiometric_weight(k: &TotalConfiguration, path: PathLabel) -> Result<f64> {
    // Validates indices.
    path_length(k, path)?;
    Ok(match path {
        PathLabel::Ping(i) => {
            let d2 = k.range(i).powi(2);
            k.reflectivity[i] * cross_section(k, i) / (d2 * d2)
        }
        PathLabel::Loop(i, j) => {
            k.reflectivity[i] * k.reflectivity[j] * cross_section(k, i) * cross_section(k, j)
                / (k.range(i).powi(2) * k.separation(i, j).powi(2) * k.range(j).powi(2))
        }
    })
}

/// Loops removed by occlusion; pings are always kept.
pub fn apply_occlusion(k: &TotalConfiguration, cfg: &SimConfig) -> HashSet<PathLabel> {
    let mut dropped = HashSet::new();
    if cfg.occlusion_prob <= 0.0 {
        return dropped;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(OCCLUSION_STREAM);
    let n = k.len();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < cfg.occlusion_prob {
                dropped.insert(PathLabel::Loop(i, j));
            }
        }
    }
    dropped
}

/// One Gaussian return in the histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    /// Arrival time, seconds.
    pub center: f64,
    /// seconds
    pub sigma: f64,
    /// Expected photons.
    pub photons: f64,
}

/// Pulses of every path of `k` not listed in `dropout`.
pub fn pulses(k: &TotalConfiguration, dropout: &HashSet<PathLabel>, cfg: &SimConfig) -> Result<Vec<Pulse>> {
    let n = k.len();
    let labels: Vec<PathLabel> = (0..n)
        .map(PathLabel::Ping)
        .chain((0..n).flat_map(|i| (i + 1..n).map(move |j| PathLabel::Loop(i, j))))
        .filter(|l| !dropout.contains(l))
        .collect();
    let weights = labels
        .iter()
        .map(|&l| radiometric_weight(k, l))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = weights.iter().sum();
    let target_var = |i: usize| (k.diameter[i] / (2.0 * SPEED_OF_LIGHT)).powi(2);
    let pulse_var = cfg.pulse_sigma().powi(2);
    labels
        .iter()
        .zip(&weights)
        .map(|(&l, &w)| {
            let var = match l {
                PathLabel::Ping(i) => pulse_var + target_var(i),
                PathLabel::Loop(i, j) => pulse_var + target_var(i) + target_var(j),
            };
            Ok(Pulse {
                center: path_length(k, l)? / SPEED_OF_LIGHT,
                sigma: var.sqrt(),
                photons: cfg.photon_budget * w / total,
            })
        })
        .collect()
}

fn gaussian_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + libm::erf((x - mu) / (sigma * SQRT_2)))
}

/// Bins a set of pulses, adds dark counts and, unless noiseless, samples
/// Poisson counts.
pub fn render(pulses: &[Pulse], cfg: &SimConfig) -> Result<Histogram> {
    cfg.validate()?;
    if pulses.is_empty() {
        return Err(TeraError::EmptyScene);
    }
    let start = pulses.iter().map(|p| p.center - SPAN_SIGMAS * p.sigma).fold(f64::INFINITY, f64::min);
    let end = pulses.iter().map(|p| p.center + SPAN_SIGMAS * p.sigma).fold(f64::NEG_INFINITY, f64::max);
    // The small slack keeps the bin count stable under rounding of shifted spans.
    let bins = (((end - start) / cfg.bin_width - 1e-6).ceil() as usize).max(1);
    let mut mean = vec![cfg.dark_rate * cfg.bin_width; bins];

    let mut share = Vec::new();
    for p in pulses {
        // Bin edges relative to t0 keep the pattern identical under a common time shift.
        let rel = p.center - start;
        let lo = ((rel - PULSE_SUPPORT_SIGMAS * p.sigma) / cfg.bin_width).floor().max(0.0) as usize;
        let hi = (((rel + PULSE_SUPPORT_SIGMAS * p.sigma) / cfg.bin_width).ceil() as usize).min(bins);
        if lo >= hi {
            continue;
        }
        share.clear();
        share.extend((lo..hi).map(|b| {
            let a = b as f64 * cfg.bin_width;
            gaussian_cdf(a + cfg.bin_width, rel, p.sigma) - gaussian_cdf(a, rel, p.sigma)
        }));
        let norm: f64 = share.iter().sum();
        if norm <= 0.0 {
            continue;
        }
        // Tails clipped by the histogram edges are folded back in so each
        // pulse deposits exactly its expected photons.
        for (m, s) in mean[lo..hi].iter_mut().zip(&share) {
            *m += p.photons * s / norm;
        }
    }

    let counts = if cfg.noiseless {
        mean
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(NOISE_STREAM);
        mean.into_iter()
            .map(|m| match Poisson::new(m) {
                Ok(dist) => dist.sample(&mut rng),
                Err(_) => 0.0,
            })
            .collect()
    };
    Histogram::new(start, cfg.bin_width, counts)
}

/// Histogram of `k` under `cfg`, including seeded occlusion.
pub fn simulate_response(k: &TotalConfiguration, cfg: &SimConfig) -> Result<Histogram> {
    cfg.validate()?;
    if k.is_empty() {
        return Err(TeraError::EmptyScene);
    }
    let dropout = apply_occlusion(k, cfg);
    render(&pulses(k, &dropout, cfg)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use approx::assert_relative_eq;

    fn pair(d: f64) -> TotalConfiguration {
        TotalConfiguration::from_points(
            Point3::origin(),
            vec![Point3::new(0.0, 0.3, d), Point3::new(0.0, -0.3, d)],
        )
        .unwrap()
    }

    #[test]
    fn equal_range_targets_have_equal_pings() {
        let k = pair(2.0);
        let a = radiometric_weight(&k, PathLabel::Ping(0)).unwrap();
        let b = radiometric_weight(&k, PathLabel::Ping(1)).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-15);
    }

    #[test]
    fn ping_weight_falls_with_fourth_power() {
        let near = TotalConfiguration::from_points(Point3::origin(), vec![Point3::new(0.0, 0.0, 1.5)]).unwrap();
        let far = TotalConfiguration::from_points(Point3::origin(), vec![Point3::new(0.0, 0.0, 3.0)]).unwrap();
        let ratio = radiometric_weight(&near, PathLabel::Ping(0)).unwrap()
            / radiometric_weight(&far, PathLabel::Ping(0)).unwrap();
        assert_relative_eq!(ratio, 16.0, max_relative = 1e-14);
    }

    #[test]
    fn loop_weight_is_symmetric() {
        let k = TotalConfiguration::new(
            Point3::origin(),
            vec![Point3::new(0.1, 0.0, 2.0), Point3::new(-0.2, 0.3, 2.4)],
            vec![0.4, 0.9],
            vec![0.02, 0.05],
        )
        .unwrap();
        let a = radiometric_weight(&k, PathLabel::loop_of(0, 1)).unwrap();
        let b = radiometric_weight(&k, PathLabel::loop_of(1, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0);
        assert!(radiometric_weight(&k, PathLabel::Ping(2)).is_err());
    }

    #[test]
    fn occlusion_extremes() {
        let pts = (0..5).map(|i| Point3::new(i as f64 * 0.2, 0.1 * i as f64, 3.0 + 0.05 * i as f64)).collect();
        let k = TotalConfiguration::from_points(Point3::origin(), pts).unwrap();
        let none = SimConfig { occlusion_prob: 0.0, ..Default::default() };
        assert!(apply_occlusion(&k, &none).is_empty());
        let all = SimConfig { occlusion_prob: 1.0, ..Default::default() };
        let dropped = apply_occlusion(&k, &all);
        assert_eq!(dropped.len(), 10);
        assert!(dropped.iter().all(|l| matches!(l, PathLabel::Loop(..))));
    }

    #[test]
    fn occlusion_rate_matches_probability() {
        let pts = (0..20)
            .map(|i| Point3::new((i % 5) as f64 * 0.3, (i / 5) as f64 * 0.3, 10.0 + 0.01 * i as f64))
            .collect();
        let k = TotalConfiguration::from_points(Point3::origin(), pts).unwrap();
        let trials = 10_000u64;
        let mut dropped = 0usize;
        for seed in 0..trials {
            let cfg = SimConfig { occlusion_prob: 0.5, seed, ..Default::default() };
            dropped += apply_occlusion(&k, &cfg).len();
        }
        let frac = dropped as f64 / (trials as f64 * 190.0);
        assert!((frac - 0.5).abs() < 0.02, "dropped fraction {frac}");
    }

    #[test]
    fn single_point_peaks_at_round_trip_time() {
        let d = 3.217;
        let k = TotalConfiguration::from_points(Point3::origin(), vec![Point3::new(0.0, 0.0, d)]).unwrap();
        let cfg = SimConfig { noiseless: true, dark_rate: 0.0, ..Default::default() };
        let h = simulate_response(&k, &cfg).unwrap();
        let (imax, _) = h
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let t = 2.0 * d / SPEED_OF_LIGHT;
        assert!((h.bin_center(imax) - t).abs() <= 0.5 * h.bin_width + 1e-18);
    }

    #[test]
    fn noiseless_mass_is_budget_plus_dark() {
        let k = pair(4.0);
        let cfg = SimConfig { noiseless: true, photon_budget: 12_345.0, dark_rate: 1e6, ..Default::default() };
        let h = simulate_response(&k, &cfg).unwrap();
        let expected = cfg.photon_budget + cfg.dark_rate * h.span();
        assert_relative_eq!(h.total(), expected, max_relative = 1e-9);
    }

    #[test]
    fn seeds_reproduce_histograms() {
        let k = pair(4.0);
        let cfg = SimConfig { seed: 7, occlusion_prob: 0.3, ..Default::default() };
        assert_eq!(simulate_response(&k, &cfg).unwrap(), simulate_response(&k, &cfg).unwrap());
        let other = SimConfig { seed: 8, ..cfg.clone() };
        assert_ne!(simulate_response(&k, &cfg).unwrap(), simulate_response(&k, &other).unwrap());
    }

    #[test]
    fn common_path_shift_moves_whole_response() {
        let base = vec![
            Pulse { center: 20e-9, sigma: 34e-12, photons: 100.0 },
            Pulse { center: 20.4e-9, sigma: 40e-12, photons: 10.0 },
            Pulse { center: 21.1e-9, sigma: 50e-12, photons: 3.0 },
        ];
        let shift = 640e-9;
        let moved: Vec<Pulse> = base.iter().map(|p| Pulse { center: p.center + shift, ..*p }).collect();
        let cfg = SimConfig { noiseless: true, dark_rate: 0.0, ..Default::default() };
        let a = render(&base, &cfg).unwrap();
        let b = render(&moved, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(((b.t0 - a.t0) - shift).abs() < 1e-12);
        let peak = a.counts.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.counts.iter().zip(&b.counts) {
            assert!((x - y).abs() <= 1e-9 * peak, "{x} vs {y}");
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let k = pair(2.0);
        let bad = SimConfig { occlusion_prob: 1.2, ..Default::default() };
        assert!(simulate_response(&k, &bad).is_err());
        let bad = SimConfig { pulse_fwhm: 0.0, ..Default::default() };
        assert!(simulate_response(&k, &bad).is_err());
        assert!(matches!(render(&[], &SimConfig::default()), Err(TeraError::EmptyScene)));
    }
}
