//! File formats read and written by the `tera` command.
//!
//! Floats are written in shortest round-trip form, so a value read back is
//! bit-identical to the one written (the histogram's picosecond fields are
//! the one exception, being rescaled from seconds). Every writer goes through
//! a temporary file in the destination directory and a rename.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TeraError};
use crate::geometry::{DistanceList, PathLabel, Point3, TotalConfiguration};
use crate::harness::{SweepConfig, SweepTable};
use crate::transient::Histogram;
use crate::tribond::{ConsumedEntry, Diagnostics, ReconStatus, Reconstruction, UnplacedEntry};

const PS: f64 = 1e-12;

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| TeraError::Io(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| TeraError::Format(format!("{}: {e}", path.display())))
}

fn xyz(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn point(a: [f64; 3]) -> Point3 {
    Point3::new(a[0], a[1], a[2])
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    sensor: [f64; 3],
    points: Vec<[f64; 3]>,
    #[serde(default)]
    reflectivity: Option<Vec<f64>>,
    #[serde(default)]
    diameter_m: Option<Vec<f64>>,
}

pub fn scene_to_json(k: &TotalConfiguration) -> Result<String> {
    let file = SceneFile {
        sensor: xyz(&k.sensor),
        points: k.points.iter().map(xyz).collect(),
        reflectivity: Some(k.reflectivity.clone()),
        diameter_m: Some(k.diameter.clone()),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses a scene. Missing `reflectivity` defaults to 1 and missing
/// `diameter_m` to 0 for every point.
pub fn scene_from_json(text: &str) -> Result<TotalConfiguration> {
    let f: SceneFile = serde_json::from_str(text).map_err(|e| TeraError::Format(e.to_string()))?;
    let n = f.points.len();
    TotalConfiguration::new(
        point(f.sensor),
        f.points.into_iter().map(point).collect(),
        f.reflectivity.unwrap_or_else(|| vec![1.0; n]),
        f.diameter_m.unwrap_or_else(|| vec![0.0; n]),
    )
}

pub fn write_scene(path: &Path, k: &TotalConfiguration) -> Result<()> {
    let mut s = scene_to_json(k)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_scene(path: &Path) -> Result<TotalConfiguration> {
    scene_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramFile {
    t0_ps: f64,
    bin_ps: f64,
    counts: Vec<f64>,
}

pub fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    write_json(path, &HistogramFile { t0_ps: h.t0 / PS, bin_ps: h.bin_width / PS, counts: h.counts.clone() })
}

pub fn read_histogram(path: &Path) -> Result<Histogram> {
    let f: HistogramFile = read_json(path)?;
    if let Some(c) = f.counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(TeraError::Format(format!("count {c} is not a finite non-negative number")));
    }
    Histogram::new(f.t0_ps * PS, f.bin_ps * PS, f.counts).map_err(|e| TeraError::Format(e.to_string()))
}

pub fn distance_list_to_text(beta: &DistanceList) -> String {
    let mut s = String::from("# path length [m], ascending\n");
    for e in beta.entries() {
        let _ = writeln!(s, "{}", e.length);
    }
    s
}

/// One length per line; blank lines and lines starting with `#` are skipped.
pub fn distance_list_from_text(text: &str) -> Result<DistanceList> {
    let mut lengths = vec![];
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| TeraError::Format(format!("line {}: `{line}` is not a number", no + 1)))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(TeraError::Format(format!("line {}: length {v} must be positive", no + 1)));
        }
        lengths.push(v);
    }
    DistanceList::from_lengths(lengths)
}

pub fn write_distance_list(path: &Path, beta: &DistanceList) -> Result<()> {
    write_atomic(path, distance_list_to_text(beta).as_bytes())
}

pub fn read_distance_list(path: &Path) -> Result<DistanceList> {
    distance_list_from_text(&std::fs::read_to_string(path)?)
}

/// `[i]` for a ping, `[i, j]` for a loop.
fn path_indices(p: PathLabel) -> Vec<usize> {
    match p {
        PathLabel::Ping(i) => vec![i],
        PathLabel::Loop(i, j) => vec![i, j],
    }
}

fn path_from_indices(v: &[usize]) -> Result<PathLabel> {
    match *v {
        [i] => Ok(PathLabel::Ping(i)),
        [i, j] if i != j => Ok(PathLabel::loop_of(i, j)),
        _ => Err(TeraError::Format(format!("path {v:?} is neither [i] nor [i, j]"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelEntry {
    path: Vec<usize>,
    length_m: f64,
}

/// Ground-truth labels of a simulated list, for oracle checks.
pub fn write_labels(path: &Path, beta: &DistanceList) -> Result<()> {
    let rows: Vec<LabelEntry> = beta
        .entries()
        .iter()
        .filter_map(|e| e.label.map(|l| LabelEntry { path: path_indices(l), length_m: e.length }))
        .collect();
    write_json(path, &rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct ConsumedRow {
    entry: usize,
    length_m: f64,
    path: Vec<usize>,
    predicted_m: f64,
    residual_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct UnplacedRow {
    entry: usize,
    length_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReconstructionFile {
    status: ReconStatus,
    points: Vec<[f64; 3]>,
    consumed: Vec<ConsumedRow>,
    /// Same order as `consumed`.
    residuals_m: Vec<f64>,
    unplaced: Vec<UnplacedRow>,
    #[serde(default)]
    diagnostics: Diagnostics,
}

pub fn reconstruction_to_json(r: &Reconstruction) -> Result<String> {
    let file = ReconstructionFile {
        status: r.status,
        points: r.points.iter().map(xyz).collect(),
        consumed: r
            .consumed
            .iter()
            .map(|c| ConsumedRow {
                entry: c.entry,
                length_m: c.length,
                path: path_indices(c.path),
                predicted_m: c.predicted,
                residual_m: c.residual,
            })
            .collect(),
        residuals_m: r.consumed.iter().map(|c| c.residual).collect(),
        unplaced: r.unplaced.iter().map(|u| UnplacedRow { entry: u.entry, length_m: u.length }).collect(),
        diagnostics: r.diagnostics.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn reconstruction_from_json(text: &str) -> Result<Reconstruction> {
    let f: ReconstructionFile = serde_json::from_str(text).map_err(|e| TeraError::Format(e.to_string()))?;
    let n = f.points.len();
    let consumed = f
        .consumed
        .iter()
        .map(|c| {
            let path = path_from_indices(&c.path)?;
            let (i, j) = match path {
                PathLabel::Ping(i) => (i, i),
                PathLabel::Loop(i, j) => (i, j),
            };
            if i.max(j) >= n {
                return Err(TeraError::Format(format!("path {:?} refers past {n} points", c.path)));
            }
            Ok(ConsumedEntry { entry: c.entry, length: c.length_m, path, predicted: c.predicted_m, residual: c.residual_m })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Reconstruction {
        sensor: Point3::origin(),
        points: f.points.into_iter().map(point).collect(),
        consumed,
        unplaced: f.unplaced.iter().map(|u| UnplacedEntry { entry: u.entry, length: u.length_m }).collect(),
        status: f.status,
        diagnostics: f.diagnostics,
    })
}

pub fn write_reconstruction(path: &Path, r: &Reconstruction) -> Result<()> {
    let mut s = reconstruction_to_json(r)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_reconstruction(path: &Path) -> Result<Reconstruction> {
    reconstruction_from_json(&std::fs::read_to_string(path)?)
}

pub fn sweep_to_csv(t: &SweepTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["n", "diameter_m", "trials", "successes", "probability"])?;
    for c in &t.cells {
        w.write_record([
            c.n.to_string(),
            c.diameter.to_string(),
            c.trials.to_string(),
            c.successes.to_string(),
            c.probability().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| TeraError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| TeraError::Format(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepSidecar {
    pub master_seed: u64,
    /// How per-trial seeds derive from the master seed.
    pub seed_rule: String,
    pub config: SweepConfig,
    pub table: SweepTable,
}

/// Writes the CSV at `path` and the metadata next to it as `<path>.json`.
pub fn write_sweep(path: &Path, cfg: &SweepConfig, t: &SweepTable) -> Result<()> {
    write_atomic(path, sweep_to_csv(t)?.as_bytes())?;
    let sidecar = SweepSidecar {
        master_seed: cfg.master_seed,
        seed_rule: "splitmix64(master ^ splitmix64((cell << 32) | trial)), cell = n_index * n_diameters + d_index"
            .into(),
        config: cfg.clone(),
        table: t.clone(),
    };
    write_json(&sidecar_path(path), &sidecar)
}

pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::enumerate_ensemble;
    use crate::tribond::{reconstruct, ReconParams};
    use std::collections::HashSet;

    fn scene() -> TotalConfiguration {
        TotalConfiguration::new(
            Point3::origin(),
            vec![
                Point3::new(0.1, 0.2, 3.0),
                Point3::new(-0.4, 0.1, 3.3),
                Point3::new(0.3, -0.5, 3.7),
                Point3::new(0.0, 0.6, 4.1),
                Point3::new(0.5, 0.5, 3.2),
            ],
            vec![0.9, 1.0, 0.7, 0.8, 0.6],
            vec![0.01, 0.02, 0.0, 0.03, 0.01],
        )
        .unwrap()
    }

    #[test]
    fn scene_round_trip_is_exact() {
        let k = scene();
        assert_eq!(scene_from_json(&scene_to_json(&k).unwrap()).unwrap(), k);
        let bare = r#"{"sensor": [0, 0, 0], "points": [[1, 0, 0]]}"#;
        let k = scene_from_json(bare).unwrap();
        assert_eq!((k.reflectivity[0], k.diameter[0]), (1.0, 0.0));
        assert!(scene_from_json(r#"{"sensor": [0, 0, 0], "points": []}"#).is_err());
        assert!(matches!(scene_from_json("{"), Err(TeraError::Format(_))));
    }

    #[test]
    fn distance_list_round_trip_is_exact() {
        let beta = enumerate_ensemble(&scene(), &HashSet::new()).unlabeled();
        let back = distance_list_from_text(&distance_list_to_text(&beta)).unwrap();
        assert_eq!(back.lengths(), beta.lengths());
        let parsed = distance_list_from_text("# c\n\n3.5\n 1.25 \n# tail\n").unwrap();
        assert_eq!(parsed.lengths(), vec![1.25, 3.5]);
        assert!(distance_list_from_text("1.0\nabc\n").is_err());
        assert!(distance_list_from_text("-1.0\n").is_err());
        assert!(distance_list_from_text("").unwrap().is_empty());
    }

    #[test]
    fn reconstruction_round_trip_is_exact() {
        let beta = enumerate_ensemble(&scene(), &HashSet::new()).unlabeled();
        let r = reconstruct(&beta, &ReconParams::with_tol(1e-9)).unwrap();
        let back = reconstruction_from_json(&reconstruction_to_json(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn files_are_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.json");
        let h = Histogram::new(12e-9, 4e-12, vec![0.0, 1.5, 7.0]).unwrap();
        write_histogram(&p, &h).unwrap();
        write_histogram(&p, &h).unwrap();
        let back = read_histogram(&p).unwrap();
        assert!((back.t0 - h.t0).abs() < 1e-24 && (back.bin_width - h.bin_width).abs() < 1e-27);
        assert_eq!(back.counts, h.counts);
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("h.json")]);
    }

    #[test]
    fn sweep_csv_has_the_declared_columns() {
        let t = SweepTable {
            n_values: vec![5],
            diameters: vec![0.01],
            cells: vec![crate::harness::SweepCell { n: 5, diameter: 0.01, trials: 10, successes: 3 }],
        };
        let csv = sweep_to_csv(&t).unwrap();
        assert_eq!(csv, "n,diameter_m,trials,successes,probability\n5,0.01,10,3,0.3\n");
    }
}
