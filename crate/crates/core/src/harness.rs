//! Seeded end-to-end trials and recoverability sweeps.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TeraError};
use crate::geometry::{align_congruence, enumerate_ensemble, DistanceList, Point3, TotalConfiguration};
use crate::peaks::{extract_peaks, times_to_distances, PeakParams};
use crate::transient::{apply_occlusion, simulate_response, SimConfig};
use crate::tribond::{reconstruct, ReconParams, ReconStatus, Reconstruction};

/// Where a trial gets its distance list from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    /// Simulated histogram followed by peak extraction.
    #[default]
    Histogram,
    /// Exact path lengths with seeded occlusion dropout only.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n: usize,
    /// Sphere diameter, meters.
    pub diameter: f64,
    /// Scene cube volume, cubic meters.
    pub volume: f64,
    /// Sensor to cube-centre distance, meters.
    pub standoff: f64,
    pub sim: SimConfig,
    pub peaks: PeakParams,
    pub rec: ReconParams,
    pub source: BetaSource,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        let sweep = SweepConfig::default();
        Self {
            n: 5,
            diameter: 0.01,
            volume: sweep.volume,
            standoff: sweep.standoff,
            sim: sweep.sim,
            peaks: sweep.peaks,
            rec: sweep.rec,
            source: sweep.source,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    /// Post-alignment RMSD over matched points; `None` when nothing was placed.
    pub rmsd: Option<f64>,
    pub n_placed: usize,
    pub n_true: usize,
    /// Entries in the distance list handed to the reconstructor.
    pub n_entries: usize,
    pub status: Option<ReconStatus>,
    /// seconds
    pub runtime: f64,
    pub seed: u64,
}

impl TrialResult {
    fn failed(cfg: &TrialConfig, n_entries: usize, start: Instant) -> Self {
        Self {
            success: false,
            rmsd: None,
            n_placed: 0,
            n_true: cfg.n,
            n_entries,
            status: None,
            runtime: start.elapsed().as_secs_f64(),
            seed: cfg.seed,
        }
    }
}

/// Per-point outcome of matching a reconstruction against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub truth: usize,
    /// Matched reconstructed point, if any.
    pub recon: Option<usize>,
    /// Distance after alignment, meters.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmsd: f64,
    pub per_point: Vec<PointMatch>,
    /// Largest error over sensor ranges and pairwise distances of matched points.
    pub max_pairwise_error: f64,
    pub matched: usize,
}

/// `n` spheres uniform in a cube of `volume` centred `standoff` meters down +z,
/// no two closer than their diameter (or 1 mm).
pub fn sample_scene(n: usize, diameter: f64, volume: f64, standoff: f64, rng: &mut impl Rng) -> Result<TotalConfiguration> {
    if !(volume > 0.0) {
        return Err(TeraError::NonPositive { name: "volume", value: volume });
    }
    if !(diameter >= 0.0) {
        return Err(TeraError::InvalidParameter(format!("diameter {diameter} must be non-negative")));
    }
    let edge = volume.cbrt();
    let centre = Vector3::new(0.0, 0.0, standoff);
    let min_sep = diameter.max(crate::geometry::DEFAULT_MIN_SEPARATION);
    let mut points: Vec<Point3> = Vec::with_capacity(n);
    let mut tries = 0usize;
    while points.len() < n {
        tries += 1;
        if tries > 10_000 * n.max(1) {
            return Err(TeraError::InvalidConfiguration(format!(
                "could not place {n} spheres of {diameter} m in {volume} m^3"
            )));
        }
        let offset = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5) * edge);
        let p = Point3::from(centre + offset);
        if points.iter().all(|q| nalgebra::distance(&p, q) >= min_sep) {
            points.push(p);
        }
    }
    let reflectivity = (0..n).map(|_| rng.random_range(0.5..=1.0)).collect();
    TotalConfiguration::with_min_separation(Point3::origin(), points, reflectivity, vec![diameter; n], min_sep)
}

/// Distance list the reconstructor sees for scene `k`.
pub fn measure(k: &TotalConfiguration, sim: &SimConfig, peaks: &PeakParams, source: BetaSource) -> Result<DistanceList> {
    match source {
        BetaSource::Oracle => Ok(enumerate_ensemble(k, &apply_occlusion(k, sim)).unlabeled()),
        BetaSource::Histogram => {
            let h = simulate_response(k, sim)?;
            let times: Vec<f64> = extract_peaks(&h, peaks)?.iter().map(|p| p.time).collect();
            if times.is_empty() {
                return DistanceList::new(vec![]);
            }
            times_to_distances(&times)
        }
    }
}

/// One sampled scene pushed through measurement, reconstruction and scoring.
pub fn run_trial(cfg: &TrialConfig) -> TrialResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let Ok(k) = sample_scene(cfg.n, cfg.diameter, cfg.volume, cfg.standoff, &mut rng) else {
        return TrialResult::failed(cfg, 0, start);
    };
    let sim = SimConfig { seed: cfg.seed, ..cfg.sim.clone() };
    let Ok(beta) = measure(&k, &sim, &cfg.peaks, cfg.source) else {
        return TrialResult::failed(cfg, 0, start);
    };
    // The harness knows the true count and uses it as the stopping rule.
    let rec = ReconParams { seed: cfg.seed, expected_points: Some(cfg.n), ..cfg.rec.clone() };
    let Ok(r) = reconstruct(&beta, &rec) else {
        return TrialResult::failed(cfg, beta.len(), start);
    };
    let rmsd = evaluate(&k, &r).ok().map(|m| m.rmsd);
    let threshold = cfg.diameter.max(10.0 * rec.tol);
    TrialResult {
        success: r.points.len() == cfg.n && rmsd.is_some_and(|e| e < threshold),
        rmsd,
        n_placed: r.points.len(),
        n_true: cfg.n,
        n_entries: beta.len(),
        status: Some(r.status),
        runtime: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
    }
}

/// Sensor range followed by sorted distances to the other points.
fn signature(sensor: &Point3, points: &[Point3], i: usize) -> (f64, Vec<f64>) {
    let mut d: Vec<f64> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| nalgebra::distance(&points[i], &points[j]))
        .collect();
    d.sort_by(f64::total_cmp);
    (nalgebra::distance(sensor, &points[i]), d)
}

fn signature_cost(a: &(f64, Vec<f64>), b: &(f64, Vec<f64>)) -> f64 {
    // Each reconstructed distance is charged to its nearest true distance, so
    // a partial reconstruction still compares cleanly against the full truth.
    let pair = if b.1.is_empty() {
        0.0
    } else {
        b.1.iter()
            .map(|x| a.1.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / b.1.len() as f64
    };
    (a.0 - b.0).abs() + if pair.is_finite() { pair } else { 0.0 }
}

/// Matches reconstructed points to true ones by distance signature, aligns the
/// matched sets with the sensor, and scores the fit.
pub fn evaluate(truth: &TotalConfiguration, recon: &Reconstruction) -> Result<Metrics> {
    if recon.points.is_empty() {
        return Err(TeraError::EmptyReconstruction);
    }
    let t_sig: Vec<_> = (0..truth.len()).map(|i| signature(&truth.sensor, &truth.points, i)).collect();
    let r_sig: Vec<_> = (0..recon.points.len()).map(|j| signature(&recon.sensor, &recon.points, j)).collect();
    let mut costs: Vec<(f64, usize, usize)> = t_sig
        .iter()
        .enumerate()
        .flat_map(|(i, a)| r_sig.iter().enumerate().map(move |(j, b)| (signature_cost(a, b), i, j)))
        .collect();
    costs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut t_of_r = vec![None; recon.points.len()];
    let mut r_of_t = vec![None; truth.len()];
    for (_, i, j) in costs {
        if r_of_t[i].is_none() && t_of_r[j].is_none() {
            r_of_t[i] = Some(j);
            t_of_r[j] = Some(i);
        }
    }
    let pairs: Vec<(usize, usize)> = r_of_t.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();

    let mut x = vec![recon.sensor];
    let mut y = vec![truth.sensor];
    for &(i, j) in &pairs {
        x.push(recon.points[j]);
        y.push(truth.points[i]);
    }
    let mut errors = vec![None; truth.len()];
    let mut sq = 0.0;
    if x.len() >= 2 {
        let a = align_congruence(&x, &y)?;
        for &(i, j) in &pairs {
            let e = nalgebra::distance(&a.apply(&recon.points[j]), &truth.points[i]);
            sq += e * e;
            errors[i] = Some(e);
        }
    }
    let mut max_pairwise = 0.0f64;
    for (a, &(i, j)) in pairs.iter().enumerate() {
        max_pairwise = max_pairwise.max((truth.range(i) - recon.points[j].coords.norm()).abs());
        for &(i2, j2) in &pairs[a + 1..] {
            let dt = truth.separation(i, i2);
            let dr = nalgebra::distance(&recon.points[j], &recon.points[j2]);
            max_pairwise = max_pairwise.max((dt - dr).abs());
        }
    }
    Ok(Metrics {
        rmsd: (sq / pairs.len() as f64).sqrt(),
        per_point: (0..truth.len())
            .map(|i| PointMatch { truth: i, recon: r_of_t[i], error: errors[i] })
            .collect(),
        max_pairwise_error: max_pairwise,
        matched: pairs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    /// meters
    pub diameters: Vec<f64>,
    pub trials_per_cell: usize,
    pub volume: f64,
    pub standoff: f64,
    pub sim: SimConfig,
    pub peaks: PeakParams,
    pub rec: ReconParams,
    pub source: BetaSource,
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let sim = SimConfig { photon_budget: 1e10, ..SimConfig::default() };
        // Loops from centimetre spheres at 100 m are ~1e-4 of a ping, so the
        // relative gate is left to the Poisson test.
        let peaks = PeakParams { min_prominence: 1e-9, ..PeakParams::for_pulse(sim.pulse_fwhm) };
        let rec = ReconParams {
            max_core_attempts: 300_000,
            max_vertex_attempts: 300_000,
            max_ping_slack: 4,
            first_complete: false,
            ..ReconParams::default()
        };
        Self {
            n_values: vec![5, 8, 11, 14, 17, 20],
            diameters: (1..=8).map(|c| c as f64 / 100.0).collect(),
            trials_per_cell: 50,
            volume: 10.0,
            standoff: 100.0,
            sim,
            peaks,
            rec,
            source: BetaSource::Histogram,
            master_seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials_per_cell == 0 {
            return Err(TeraError::InvalidParameter("trials_per_cell must be at least 1".into()));
        }
        if self.n_values.is_empty() || self.diameters.is_empty() {
            return Err(TeraError::InvalidParameter("sweep axes must be non-empty".into()));
        }
        if let Some(n) = self.n_values.iter().find(|n| **n < 2) {
            return Err(TeraError::InvalidParameter(format!("point count {n} below 2")));
        }
        self.sim.validate()?;
        self.peaks.validate()?;
        self.rec.validate()
    }

    pub fn trial(&self, n: usize, diameter: f64, seed: u64) -> TrialConfig {
        TrialConfig {
            n,
            diameter,
            volume: self.volume,
            standoff: self.standoff,
            sim: self.sim.clone(),
            peaks: self.peaks.clone(),
            rec: self.rec.clone(),
            source: self.source,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    /// meters
    pub diameter: f64,
    pub trials: usize,
    pub successes: usize,
}

impl SweepCell {
    pub fn probability(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub n_values: Vec<usize>,
    pub diameters: Vec<f64>,
    /// Row-major: all diameters for the first n, then the next n.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, n_index: usize, d_index: usize) -> &SweepCell {
        &self.cells[n_index * self.diameters.len() + d_index]
    }

    /// Mean success probability per point count.
    pub fn marginal_n(&self) -> Vec<f64> {
        (0..self.n_values.len())
            .map(|i| (0..self.diameters.len()).map(|j| self.cell(i, j).probability()).sum::<f64>() / self.diameters.len() as f64)
            .collect()
    }

    /// Mean success probability per diameter.
    pub fn marginal_diameter(&self) -> Vec<f64> {
        (0..self.diameters.len())
            .map(|j| (0..self.n_values.len()).map(|i| self.cell(i, j).probability()).sum::<f64>() / self.n_values.len() as f64)
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` in grid cell `cell`.
pub fn trial_seed(master: u64, cell: usize, trial: usize) -> u64 {
    splitmix64(master ^ splitmix64(((cell as u64) << 32) | trial as u64))
}

/// Runs every cell of the grid on the current rayon pool.
pub fn sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let cells: Vec<(usize, usize, f64)> = cfg
        .n_values
        .iter()
        .flat_map(|&n| cfg.diameters.iter().map(move |&d| (n, d)))
        .enumerate()
        .map(|(c, (n, d))| (c, n, d))
        .collect();
    let jobs: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..cfg.trials_per_cell).map(move |t| (c, t))).collect();
    let outcomes: Vec<(usize, bool)> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let (_, n, d) = cells[c];
            let r = run_trial(&cfg.trial(n, d, trial_seed(cfg.master_seed, c, t)));
            (c, r.success)
        })
        .collect();
    let mut successes = vec![0usize; cells.len()];
    for (c, ok) in outcomes {
        successes[c] += ok as usize;
    }
    Ok(SweepTable {
        n_values: cfg.n_values.clone(),
        diameters: cfg.diameters.clone(),
        cells: cells
            .iter()
            .map(|&(c, n, diameter)| SweepCell { n, diameter, trials: cfg.trials_per_cell, successes: successes[c] })
            .collect(),
    })
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    // Heap's algorithm.
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    let mut out = vec![a.clone()];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Spearman correlation of `y` against `x` and the one-sided exact
/// permutation p-value for a negative trend, `P(ρ_perm ≤ ρ)`.
pub fn spearman_decreasing(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(TeraError::SizeMismatch(x.len(), y.len()));
    }
    if x.len() < 3 || x.len() > 10 {
        return Err(TeraError::InvalidParameter(format!(
            "exact permutation test supports 3..=10 points, got {}",
            x.len()
        )));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let rho = pearson(&rx, &ry);
    let perms = permutations(ry.len());
    let mut shuffled = vec![0.0; ry.len()];
    let hits = perms
        .iter()
        .filter(|p| {
            for (s, &k) in shuffled.iter_mut().zip(p.iter()) {
                *s = ry[k];
            }
            pearson(&rx, &shuffled) <= rho + 1e-12
        })
        .count();
    Ok((rho, hits as f64 / perms.len() as f64))
}
