//! Histogram to unlabeled distance list.
//!
//! The response is smoothed with a Gaussian matched to the system pulse, then
//! every local maximum that clears three gates is kept: it must rise above a
//! noise floor (background plus k Poisson sigmas), its topographic prominence must be at
//! least a fraction of the tallest peak, and the prominence must be
//! significant against Poisson noise at that level. Survivors closer than
//! the merge window are fused at their amplitude-weighted centroid, and each
//! position is refined by a three-point parabola.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TeraError};
use crate::geometry::{DistanceList, SPEED_OF_LIGHT};
use crate::transient::{Histogram, FWHM_PER_SIGMA};

/// Smoothing kernel half-width in standard deviations.
const KERNEL_SIGMAS: f64 = 4.0;
/// Background taken at this reciprocal quantile (lower decile).
const BACKGROUND_QUANTILE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    /// Minimum prominence as a fraction of the tallest smoothed bin.
    pub min_prominence: f64,
    /// Peaks closer than this (seconds) are merged.
    pub merge_window: f64,
    pub noise_floor_sigmas: f64,
    /// Standard deviation (seconds) of the Gaussian smoothing kernel; 0 disables.
    pub smoothing: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self::for_pulse(80e-12)
    }
}

impl PeakParams {
    /// Defaults tuned to a system impulse response of the given FWHM.
    pub fn for_pulse(fwhm: f64) -> Self {
        Self {
            min_prominence: 0.01,
            merge_window: fwhm,
            noise_floor_sigmas: 5.0,
            smoothing: fwhm / FWHM_PER_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_prominence > 0.0 && self.min_prominence <= 1.0) {
            return Err(TeraError::InvalidParameter(format!(
                "min_prominence {} outside (0, 1]",
                self.min_prominence
            )));
        }
        if !(self.merge_window >= 0.0 && self.merge_window.is_finite()) {
            return Err(TeraError::InvalidParameter("merge_window must be non-negative".into()));
        }
        if !(self.noise_floor_sigmas >= 0.0 && self.noise_floor_sigmas.is_finite()) {
            return Err(TeraError::InvalidParameter("noise_floor_sigmas must be non-negative".into()));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(TeraError::InvalidParameter("smoothing must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// seconds
    pub time: f64,
    /// Smoothed counts at the peak.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakReport {
    pub peaks: Vec<Peak>,
    /// Detected maxima folded into a neighbour by the merge window.
    pub merged: usize,
}

/// Gaussian-smoothed copy of `counts` and the noise variance gain `Σ w²`.
fn smooth(counts: &[f64], sigma_bins: f64) -> (Vec<f64>, f64) {
    if sigma_bins < 0.5 {
        return (counts.to_vec(), 1.0);
    }
    let half = (KERNEL_SIGMAS * sigma_bins).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / sigma_bins).powi(2)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let gain = kernel.iter().map(|w| (w / ksum).powi(2)).sum();
    let n = counts.len() as isize;
    let out = (0..n)
        .map(|i| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (o, w) in (-half..=half).zip(&kernel) {
                let j = i + o;
                if (0..n).contains(&j) {
                    acc += w * counts[j as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect();
    (out, gain)
}

/// Background level plus `k` Poisson sigmas of the smoothed counts. The
/// background is the lower decile, which stays on the baseline even when
/// returns fill most of the span.
fn noise_floor(values: &[f64], k: f64, gain: f64) -> f64 {
    let mut buf = values.to_vec();
    let idx = (buf.len() - 1) / BACKGROUND_QUANTILE;
    let (_, b, _) = buf.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    let b = b.max(0.0);
    b + k * (b * gain).sqrt()
}

/// Height above the higher of the two key cols.
fn prominence(s: &[f64], i: usize) -> (f64, f64) {
    let h = s[i];
    let mut left = h;
    for &v in s[..i].iter().rev() {
        if v > h {
            break;
        }
        left = left.min(v);
    }
    let mut right = h;
    for &v in &s[i + 1..] {
        if v > h {
            break;
        }
        right = right.min(v);
    }
    let col = left.max(right);
    (h - col, col)
}

/// Offset in bins of the vertex of the parabola through three samples.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

pub fn extract_peaks(h: &Histogram, p: &PeakParams) -> Result<Vec<Peak>> {
    Ok(extract_peaks_report(h, p)?.peaks)
}

/// Like [`extract_peaks`], also reporting how many maxima were merged.
pub fn extract_peaks_report(h: &Histogram, p: &PeakParams) -> Result<PeakReport> {
    p.validate()?;
    if h.is_empty() {
        return Err(TeraError::InvalidParameter("histogram has no bins".into()));
    }
    let (s, gain) = smooth(&h.counts, p.smoothing / h.bin_width);
    let max = s.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 || s.len() < 3 {
        return Ok(PeakReport { peaks: vec![], merged: 0 });
    }
    let floor = noise_floor(&s, p.noise_floor_sigmas, gain);
    let min_prom = p.min_prominence * max;

    let mut found = Vec::new();
    for i in 1..s.len() - 1 {
        if !(s[i] > s[i - 1] && s[i] >= s[i + 1]) || s[i] <= floor {
            continue;
        }
        let (prom, col) = prominence(&s, i);
        let noise = ((s[i] + col) * gain).sqrt();
        if prom < min_prom || prom < p.noise_floor_sigmas * noise {
            continue;
        }
        let delta = parabolic_offset(s[i - 1], s[i], s[i + 1]);
        found.push(Peak {
            time: h.bin_center(i) + delta * h.bin_width,
            amplitude: s[i] - 0.25 * (s[i - 1] - s[i + 1]) * delta,
        });
    }

    let mut peaks: Vec<Peak> = Vec::with_capacity(found.len());
    let mut merged = 0;
    let mut group: Vec<Peak> = Vec::new();
    let flush = |group: &mut Vec<Peak>, peaks: &mut Vec<Peak>| {
        if group.is_empty() {
            return;
        }
        let w: f64 = group.iter().map(|g| g.amplitude).sum();
        let time = group.iter().map(|g| g.amplitude * g.time).sum::<f64>() / w;
        let amplitude = group.iter().map(|g| g.amplitude).fold(0.0, f64::max);
        peaks.push(Peak { time, amplitude });
        group.clear();
    };
    for peak in found {
        if let Some(last) = group.last() {
            if peak.time - last.time < p.merge_window {
                merged += 1;
            } else {
                flush(&mut group, &mut peaks);
            }
        }
        group.push(peak);
    }
    flush(&mut group, &mut peaks);
    Ok(PeakReport { peaks, merged })
}

/// Path lengths `c · t` for a list of arrival times.
pub fn times_to_distances(times: &[f64]) -> Result<DistanceList> {
    if let Some(t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(TeraError::NonPositive { name: "time", value: *t });
    }
    DistanceList::from_lengths(times.iter().map(|t| SPEED_OF_LIGHT * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PathKind;
    use crate::transient::{render, Pulse, SimConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_histogram_has_no_peaks() {
        let h = Histogram::new(0.0, 4e-12, vec![3.0; 500]).unwrap();
        assert!(extract_peaks(&h, &PeakParams::default()).unwrap().is_empty());
        let z = Histogram::new(0.0, 4e-12, vec![0.0; 500]).unwrap();
        assert!(extract_peaks(&z, &PeakParams::default()).unwrap().is_empty());
    }

    #[test]
    fn resolves_two_pulses_three_fwhm_apart() {
        let fwhm = 80e-12;
        let sigma = fwhm / FWHM_PER_SIGMA;
        let centers = [10e-9 + 1.3e-12, 10e-9 + 3.0 * fwhm + 0.7e-12];
        // Peak height ~1e4 counts over a dark level of 1e2: SNR 100.
        let photons = 1e4 * sigma * (2.0 * std::f64::consts::PI).sqrt() / 4e-12;
        let pulses: Vec<Pulse> = centers.iter().map(|&c| Pulse { center: c, sigma, photons }).collect();
        for seed in 0..5 {
            let cfg = SimConfig { seed, dark_rate: 100.0 / 4e-12, ..Default::default() };
            let h = render(&pulses, &cfg).unwrap();
            let peaks = extract_peaks(&h, &PeakParams::for_pulse(fwhm)).unwrap();
            assert_eq!(peaks.len(), 2, "seed {seed}: {peaks:?}");
            for (p, c) in peaks.iter().zip(centers) {
                assert!((p.time - c).abs() < 2e-12, "seed {seed}: {} vs {c}", p.time);
            }
        }
    }

    #[test]
    fn close_pulses_merge() {
        let sigma = 20e-12;
        let pulses = [
            Pulse { center: 5e-9, sigma, photons: 1e5 },
            Pulse { center: 5e-9 + 75e-12, sigma, photons: 1e5 },
        ];
        let cfg = SimConfig { noiseless: true, dark_rate: 0.0, ..Default::default() };
        let h = render(&pulses, &cfg).unwrap();
        let params = PeakParams { smoothing: 0.0, ..PeakParams::default() };
        let report = extract_peaks_report(&h, &params).unwrap();
        assert_eq!(report.peaks.len(), 1);
        assert_eq!(report.merged, 1);
        let mid = 0.5 * (pulses[0].center + pulses[1].center);
        assert!((report.peaks[0].time - mid).abs() < 4e-12);
    }

    #[test]
    fn parabola_is_exact_for_quadratic_tops() {
        let vertex = 0.3;
        let f = |x: f64| 10.0 - (x - vertex).powi(2);
        assert_abs_diff_eq!(parabolic_offset(f(-1.0), f(0.0), f(1.0)), vertex, epsilon = 1e-12);
    }

    #[test]
    fn distances_from_times() {
        let d = times_to_distances(&[2.0 / SPEED_OF_LIGHT]).unwrap();
        assert_abs_diff_eq!(d.lengths()[0], 2.0, epsilon = 1e-15);
        assert_eq!(d.entries()[0].kind(), PathKind::Unknown);
        assert!(times_to_distances(&[]).unwrap().is_empty());
        assert!(times_to_distances(&[1e-9, 0.0]).is_err());

        let (d1, d2, d3) = (4.0, 4.07, 0.1);
        let t = [2.0 * d1 / SPEED_OF_LIGHT, 2.0 * d2 / SPEED_OF_LIGHT, (d1 + d2 + d3) / SPEED_OF_LIGHT];
        let got = times_to_distances(&t).unwrap().lengths();
        for (g, e) in got.iter().zip([2.0 * d1, 2.0 * d2, d1 + d2 + d3]) {
            assert_abs_diff_eq!(*g, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let h = Histogram::new(0.0, 1e-12, vec![0.0, 1.0, 0.0]).unwrap();
        let bad = PeakParams { min_prominence: 0.0, ..Default::default() };
        assert!(extract_peaks(&h, &bad).is_err());
        let bad = PeakParams { merge_window: -1.0, ..Default::default() };
        assert!(extract_peaks(&h, &bad).is_err());
    }
}
