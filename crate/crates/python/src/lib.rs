use std::collections::HashSet;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tera::harness::BetaSource;
use tera::peaks::extract_peaks_report;
use tera::{
    DistanceList, Histogram as CoreHistogram, PathLabel, PeakParams, Point3, ReconParams, ReconStatus,
    Reconstruction as CoreReconstruction, ResolutionParams, SimConfig, TeraError, TotalConfiguration, TrialConfig,
};

type Xyz = (f64, f64, f64);

fn err(e: TeraError) -> PyErr {
    match e {
        TeraError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn pt(p: Xyz) -> Point3 {
    Point3::new(p.0, p.1, p.2)
}

fn xyz(p: &Point3) -> Xyz {
    (p.x, p.y, p.z)
}

fn path_tuple(l: PathLabel) -> Vec<usize> {
    match l {
        PathLabel::Ping(i) => vec![i],
        PathLabel::Loop(i, j) => vec![i, j],
    }
}

/// Point targets seen from a single sensor.
#[pyclass(name = "Scene", module = "tera", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Scene {
    inner: TotalConfiguration,
}

#[pymethods]
impl Scene {
    #[new]
    #[pyo3(signature = (points, sensor = (0.0, 0.0, 0.0), reflectivity = None, diameter = None))]
    fn new(points: Vec<Xyz>, sensor: Xyz, reflectivity: Option<Vec<f64>>, diameter: Option<Vec<f64>>) -> PyResult<Self> {
        let n = points.len();
        let inner = TotalConfiguration::new(
            pt(sensor),
            points.into_iter().map(pt).collect(),
            reflectivity.unwrap_or_else(|| vec![1.0; n]),
            diameter.unwrap_or_else(|| vec![0.0; n]),
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: tera::io::scene_from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        tera::io::scene_to_json(&self.inner).map_err(err)
    }

    #[getter]
    fn points(&self) -> Vec<Xyz> {
        self.inner.points.iter().map(xyz).collect()
    }

    #[getter]
    fn sensor(&self) -> Xyz {
        xyz(&self.inner.sensor)
    }

    /// Every ping and loop length, ascending.
    fn path_lengths(&self) -> Vec<f64> {
        tera::enumerate_ensemble(&self.inner, &HashSet::new()).lengths()
    }

    /// `(length, path)` pairs where path is `[i]` for a ping and `[i, j]` for a loop.
    fn labeled_paths(&self) -> Vec<(f64, Vec<usize>)> {
        tera::enumerate_ensemble(&self.inner, &HashSet::new())
            .entries()
            .iter()
            .filter_map(|e| e.label.map(|l| (e.length, path_tuple(l))))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Scene(n={})", self.inner.len())
    }
}

#[pyclass(name = "Histogram", module = "tera", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Histogram {
    inner: CoreHistogram,
}

#[pymethods]
impl Histogram {
    #[new]
    fn new(t0: f64, bin_width: f64, counts: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: CoreHistogram::new(t0, bin_width, counts).map_err(err)? })
    }

    /// seconds
    #[getter]
    fn t0(&self) -> f64 {
        self.inner.t0
    }

    #[getter]
    fn bin_width(&self) -> f64 {
        self.inner.bin_width
    }

    #[getter]
    fn counts(&self) -> Vec<f64> {
        self.inner.counts.clone()
    }

    fn bin_centers(&self) -> Vec<f64> {
        (0..self.inner.len()).map(|i| self.inner.bin_center(i)).collect()
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Reconstruction", module = "tera", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Reconstruction {
    inner: CoreReconstruction,
}

#[pymethods]
impl Reconstruction {
    /// "complete", "partial" or "core_not_found".
    #[getter]
    fn status(&self) -> &'static str {
        match self.inner.status {
            ReconStatus::Complete => "complete",
            ReconStatus::Partial => "partial",
            ReconStatus::CoreNotFound => "core_not_found",
        }
    }

    #[getter]
    fn points(&self) -> Vec<Xyz> {
        self.inner.points.iter().map(xyz).collect()
    }

    /// `(entry, length, path, residual)` for every consumed entry.
    #[getter]
    fn consumed(&self) -> Vec<(usize, f64, Vec<usize>, f64)> {
        self.inner.consumed.iter().map(|c| (c.entry, c.length, path_tuple(c.path), c.residual)).collect()
    }

    /// Lengths of entries no path explained.
    #[getter]
    fn unplaced(&self) -> Vec<f64> {
        self.inner.unplaced.iter().map(|u| u.length).collect()
    }

    fn max_residual(&self) -> f64 {
        self.inner.max_residual()
    }

    fn scene_distances(&self) -> Vec<f64> {
        self.inner.scene_distances()
    }

    fn to_json(&self) -> PyResult<String> {
        tera::io::reconstruction_to_json(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: tera::io::reconstruction_from_json(text).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.points.len()
    }

    fn __repr__(&self) -> String {
        format!("Reconstruction(status={:?}, points={})", self.status(), self.inner.points.len())
    }
}

/// Transient response of `scene`. Times in seconds.
#[pyfunction]
#[pyo3(signature = (scene, pulse_fwhm = 80e-12, bin_width = 4e-12, photon_budget = 1e6, dark_rate = 100.0, occlusion_prob = 0.0, seed = 0, noiseless = false))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    scene: &Scene,
    pulse_fwhm: f64,
    bin_width: f64,
    photon_budget: f64,
    dark_rate: f64,
    occlusion_prob: f64,
    seed: u64,
    noiseless: bool,
) -> PyResult<Histogram> {
    let cfg = SimConfig { pulse_fwhm, bin_width, photon_budget, dark_rate, occlusion_prob, seed, noiseless };
    Ok(Histogram { inner: tera::simulate_response(&scene.inner, &cfg).map_err(err)? })
}

/// Peak arrival times in seconds. Unset parameters follow the 80 ps defaults.
#[pyfunction]
#[pyo3(signature = (histogram, min_prominence = None, merge_window = None, noise_floor_sigmas = None, smoothing = None))]
fn extract_peaks(
    histogram: &Histogram,
    min_prominence: Option<f64>,
    merge_window: Option<f64>,
    noise_floor_sigmas: Option<f64>,
    smoothing: Option<f64>,
) -> PyResult<Vec<f64>> {
    let d = PeakParams::default();
    let p = PeakParams {
        min_prominence: min_prominence.unwrap_or(d.min_prominence),
        merge_window: merge_window.unwrap_or(d.merge_window),
        noise_floor_sigmas: noise_floor_sigmas.unwrap_or(d.noise_floor_sigmas),
        smoothing: smoothing.unwrap_or(d.smoothing),
    };
    let report = extract_peaks_report(&histogram.inner, &p).map_err(err)?;
    Ok(report.peaks.iter().map(|p| p.time).collect())
}

#[pyfunction]
fn times_to_distances(times: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(tera::times_to_distances(&times).map_err(err)?.lengths())
}

/// Rebuilds points from an unlabeled list of path lengths in meters.
#[pyfunction]
#[pyo3(signature = (lengths, tol = None, max_core_attempts = None, max_vertex_attempts = None, expected_points = None, seed = 0, first_complete = true))]
fn reconstruct(
    lengths: Vec<f64>,
    tol: Option<f64>,
    max_core_attempts: Option<u64>,
    max_vertex_attempts: Option<u64>,
    expected_points: Option<usize>,
    seed: u64,
    first_complete: bool,
) -> PyResult<Reconstruction> {
    let d = ReconParams::default();
    let p = ReconParams {
        tol: tol.unwrap_or(d.tol),
        max_core_attempts: max_core_attempts.unwrap_or(d.max_core_attempts),
        max_vertex_attempts: max_vertex_attempts.unwrap_or(d.max_vertex_attempts),
        expected_points,
        seed,
        first_complete,
        ..d
    };
    let beta = DistanceList::from_lengths(lengths).map_err(err)?;
    Ok(Reconstruction { inner: tera::reconstruct(&beta, &p).map_err(err)? })
}

/// `(rmsd, matched, max_pairwise_error)` of a reconstruction against the truth.
#[pyfunction]
fn evaluate(scene: &Scene, recon: &Reconstruction) -> PyResult<(f64, usize, f64)> {
    let m = tera::evaluate(&scene.inner, &recon.inner).map_err(err)?;
    Ok((m.rmsd, m.matched, m.max_pairwise_error))
}

/// Points at distances `ra, rb, rc` from anchors `a, b, c`.
#[pyfunction]
#[pyo3(signature = (a, b, c, ra, rb, rc, tol = 1e-9))]
fn trilaterate(a: Xyz, b: Xyz, c: Xyz, ra: f64, rb: f64, rc: f64, tol: f64) -> PyResult<Vec<Xyz>> {
    let sols = tera::trilaterate(pt(a), pt(b), pt(c), ra, rb, rc, tol).map_err(err)?;
    Ok(sols.iter().map(xyz).collect())
}

/// Best isometry taking `x` onto `y`: `(rotation rows, translation, reflected, rmsd)`.
#[pyfunction]
fn align(x: Vec<Xyz>, y: Vec<Xyz>) -> PyResult<([[f64; 3]; 3], Xyz, bool, f64)> {
    let x: Vec<Point3> = x.into_iter().map(pt).collect();
    let y: Vec<Point3> = y.into_iter().map(pt).collect();
    let a = tera::align_congruence(&x, &y).map_err(err)?;
    let r = a.rotation;
    let rows = [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]);
    Ok((rows, (a.translation.x, a.translation.y, a.translation.z), a.reflected, a.rmsd))
}

/// Diffraction limit 1.22 λ L / D in meters.
#[pyfunction]
fn rayleigh_resolution(wavelength: f64, distance: f64, aperture: f64) -> PyResult<f64> {
    let p = ResolutionParams { wavelength, distance, aperture, time_resolution: 1.0 };
    tera::rayleigh_resolution(&p).map_err(err)
}

/// Range resolution c τ / 2 in meters.
#[pyfunction]
fn transient_resolution(tau: f64) -> PyResult<f64> {
    tera::transient_resolution(tau).map_err(err)
}

/// One harness trial: `(success, rmsd, placed, entries)`.
#[pyfunction]
#[pyo3(signature = (n, diameter, seed = 0, oracle = false))]
fn run_trial(n: usize, diameter: f64, seed: u64, oracle: bool) -> (bool, Option<f64>, usize, usize) {
    let cfg = TrialConfig {
        n,
        diameter,
        seed,
        source: if oracle { BetaSource::Oracle } else { BetaSource::Histogram },
        ..TrialConfig::default()
    };
    let r = tera::run_trial(&cfg);
    (r.success, r.rmsd, r.n_placed, r.n_entries)
}

#[pymodule]
#[pyo3(name = "tera")]
fn tera_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SPEED_OF_LIGHT", tera::SPEED_OF_LIGHT)?;
    m.add_class::<Scene>()?;
    m.add_class::<Histogram>()?;
    m.add_class::<Reconstruction>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(times_to_distances, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(trilaterate, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(rayleigh_resolution, m)?)?;
    m.add_function(wrap_pyfunction!(transient_resolution, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    Ok(())
}
