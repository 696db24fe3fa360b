//! Path-length arithmetic, trilateration and congruence alignment.
//!
//! Scene points are indexed from 0 in [`TotalConfiguration::points`]; the
//! sensor is held separately. A ping of point `i` is the closed path
//! sensor → i → sensor, a loop of `(i, j)` is sensor → i → j → sensor.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TeraError};

pub type Point3 = nalgebra::Point3<f64>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default minimum separation between any two points of a configuration.
pub const DEFAULT_MIN_SEPARATION: f64 = 1e-3;

/// Anchor triangles with a smaller area than this are treated as collinear.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Sensor position plus the scene it observes.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalConfiguration {
    pub sensor: Point3,
    pub points: Vec<Point3>,
    /// Dimensionless albedo per point, in (0, 1].
    pub reflectivity: Vec<f64>,
    /// Target diameter per point in meters; 0 is an ideal point.
    pub diameter: Vec<f64>,
}

impl TotalConfiguration {
    pub fn new(
        sensor: Point3,
        points: Vec<Point3>,
        reflectivity: Vec<f64>,
        diameter: Vec<f64>,
    ) -> Result<Self> {
        Self::with_min_separation(sensor, points, reflectivity, diameter, DEFAULT_MIN_SEPARATION)
    }

    pub fn with_min_separation(
        sensor: Point3,
        points: Vec<Point3>,
        reflectivity: Vec<f64>,
        diameter: Vec<f64>,
        min_separation: f64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(TeraError::EmptyScene);
        }
        if reflectivity.len() != points.len() || diameter.len() != points.len() {
            return Err(TeraError::InvalidConfiguration(format!(
                "{} points but {} reflectivities and {} diameters",
                points.len(),
                reflectivity.len(),
                diameter.len()
            )));
        }
        let all = std::iter::once(&sensor).chain(points.iter());
        if all.clone().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(TeraError::InvalidConfiguration("non-finite coordinate".into()));
        }
        if let Some(r) = reflectivity.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(TeraError::InvalidConfiguration(format!(
                "reflectivity {r} outside (0, 1]"
            )));
        }
        if let Some(d) = diameter.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(TeraError::InvalidConfiguration(format!("diameter {d} is negative")));
        }
        let all: Vec<&Point3> = all.collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let d = nalgebra::distance(all[i], all[j]);
                if d <= min_separation {
                    return Err(TeraError::InvalidConfiguration(format!(
                        "points {i} and {j} (sensor = 0) are {d:e} m apart, closer than {min_separation:e} m"
                    )));
                }
            }
        }
        Ok(Self { sensor, points, reflectivity, diameter })
    }

    /// Ideal unit-albedo point targets.
    pub fn from_points(sensor: Point3, points: Vec<Point3>) -> Result<Self> {
        let n = points.len();
        Self::new(sensor, points, vec![1.0; n], vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sensor-to-target distance.
    pub fn range(&self, i: usize) -> f64 {
        nalgebra::distance(&self.sensor, &self.points[i])
    }

    /// Target-to-target distance.
    pub fn separation(&self, i: usize, j: usize) -> f64 {
        nalgebra::distance(&self.points[i], &self.points[j])
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.points.len() {
            Ok(())
        } else {
            Err(TeraError::IndexOutOfRange { index: i, len: self.points.len() })
        }
    }

    /// The same scene moved rigidly by `offset`, sensor fixed.
    pub fn translated(&self, offset: Vector3<f64>) -> Result<Self> {
        Self::new(
            self.sensor,
            self.points.iter().map(|p| p + offset).collect(),
            self.reflectivity.clone(),
            self.diameter.clone(),
        )
    }
}

/// Which closed light path a length belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathLabel {
    Ping(usize),
    /// Stored with the smaller index first.
    Loop(usize, usize),
}

impl PathLabel {
    pub fn ping(i: usize) -> Self {
        PathLabel::Ping(i)
    }

    pub fn loop_of(i: usize, j: usize) -> Self {
        PathLabel::Loop(i.min(j), i.max(j))
    }

    pub fn kind(&self) -> PathKind {
        match self {
            PathLabel::Ping(_) => PathKind::Ping,
            PathLabel::Loop(..) => PathKind::Loop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Ping,
    Loop,
    Unknown,
}

/// One entry of a distance list. Labels are ground truth from the
/// simulator; reconstruction never reads them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLength {
    pub length: f64,
    pub label: Option<PathLabel>,
}

impl PathLength {
    pub fn unlabeled(length: f64) -> Self {
        Self { length, label: None }
    }

    pub fn kind(&self) -> PathKind {
        self.label.map_or(PathKind::Unknown, |l| l.kind())
    }
}

/// Multiset of closed path lengths, sorted ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistanceList {
    entries: Vec<PathLength>,
}

impl DistanceList {
    pub fn new(mut entries: Vec<PathLength>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !(e.length.is_finite() && e.length > 0.0)) {
            return Err(TeraError::InvalidParameter(format!(
                "path length {} must be positive and finite",
                e.length
            )));
        }
        entries.sort_by(|a, b| a.length.total_cmp(&b.length));
        Ok(Self { entries })
    }

    pub fn from_lengths(lengths: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(lengths.into_iter().map(PathLength::unlabeled).collect())
    }

    pub fn entries(&self) -> &[PathLength] {
        &self.entries
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.length).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&PathLength> {
        self.entries.get(i)
    }

    /// Same lengths with all ground-truth labels removed.
    pub fn unlabeled(&self) -> Self {
        Self { entries: self.entries.iter().map(|e| PathLength::unlabeled(e.length)).collect() }
    }
}

pub fn ping_length(k: &TotalConfiguration, i: usize) -> Result<f64> {
    k.check_index(i)?;
    Ok(2.0 * k.range(i))
}

pub fn loop_length(k: &TotalConfiguration, i: usize, j: usize) -> Result<f64> {
    k.check_index(i)?;
    k.check_index(j)?;
    if i == j {
        return Err(TeraError::RepeatedIndex(i));
    }
    // Summed in index order so (i, j) and (j, i) agree bit for bit.
    let (a, b) = (i.min(j), i.max(j));
    Ok(k.range(a) + k.separation(a, b) + k.range(b))
}

/// Length of the path behind `label`.
pub fn path_length(k: &TotalConfiguration, label: PathLabel) -> Result<f64> {
    match label {
        PathLabel::Ping(i) => ping_length(k, i),
        PathLabel::Loop(i, j) => loop_length(k, i, j),
    }
}

/// All pings and loops of `k` except those in `dropout`, labeled and sorted.
pub fn enumerate_ensemble(k: &TotalConfiguration, dropout: &HashSet<PathLabel>) -> DistanceList {
    let n = k.len();
    let mut entries = Vec::with_capacity(n + n * (n.saturating_sub(1)) / 2);
    let labels = (0..n)
        .map(PathLabel::Ping)
        .chain((0..n).flat_map(|i| (i + 1..n).map(move |j| PathLabel::Loop(i, j))));
    for label in labels.filter(|l| !dropout.contains(l)) {
        // Indices come from `k` itself.
        let length = path_length(k, label).expect("index in range");
        entries.push(PathLength { length, label: Some(label) });
    }
    entries.sort_by(|a, b| a.length.total_cmp(&b.length));
    DistanceList { entries }
}

/// Local frame of three anchors, reusable across many radius triples.
#[derive(Debug, Clone, Copy)]
pub struct AnchorFrame {
    origin: Point3,
    ex: Vector3<f64>,
    ey: Vector3<f64>,
    ez: Vector3<f64>,
    /// |b - a|
    d: f64,
    /// Coordinates of c in the frame.
    i: f64,
    j: f64,
    anchors: [Point3; 3],
}

impl AnchorFrame {
    pub fn new(a: Point3, b: Point3, c: Point3) -> Result<Self> {
        let ab = b - a;
        let ac = c - a;
        let area = 0.5 * ab.cross(&ac).norm();
        if !(area >= DEGENERATE_AREA) {
            return Err(TeraError::DegenerateAnchors { area });
        }
        let d = ab.norm();
        let ex = ab / d;
        let i = ex.dot(&ac);
        let ey = (ac - ex * i).normalize();
        let ez = ex.cross(&ey);
        let j = ey.dot(&ac);
        Ok(Self { origin: a, ex, ey, ez, d, i, j, anchors: [a, b, c] })
    }

    /// Points whose distances to the three anchors match the radii within
    /// `tol`. Mirror pairs come back as `[above, below]` relative to the
    /// anchor plane oriented by (b - a) x (c - a).
    pub fn solve(&self, ra: f64, rb: f64, rc: f64, tol: f64) -> Solutions {
        let x = (ra * ra - rb * rb + self.d * self.d) / (2.0 * self.d);
        let y = (ra * ra - rc * rc + self.i * self.i + self.j * self.j) / (2.0 * self.j)
            - self.i * x / self.j;
        let z2 = ra * ra - x * x - y * y;
        let base = self.origin + self.ex * x + self.ey * y;
        let radii = [ra, rb, rc];
        let fits = |q: &Point3| {
            self.anchors
                .iter()
                .zip(radii)
                .all(|(p, r)| (nalgebra::distance(p, q) - r).abs() <= tol)
        };
        let z = if z2 > 0.0 { z2.sqrt() } else { 0.0 };
        if z <= 0.5 * tol {
            return if fits(&base) { Solutions::One(base) } else { Solutions::None };
        }
        let up = base + self.ez * z;
        let down = base - self.ez * z;
        match (fits(&up), fits(&down)) {
            (true, true) => Solutions::Two(up, down),
            (true, false) => Solutions::One(up),
            (false, true) => Solutions::One(down),
            (false, false) => Solutions::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solutions {
    None,
    One(Point3),
    Two(Point3, Point3),
}

impl Solutions {
    pub fn to_vec(self) -> Vec<Point3> {
        match self {
            Solutions::None => vec![],
            Solutions::One(p) => vec![p],
            Solutions::Two(p, q) => vec![p, q],
        }
    }
}

/// Intersection of three spheres centred on non-collinear anchors.
pub fn trilaterate(
    a: Point3,
    b: Point3,
    c: Point3,
    ra: f64,
    rb: f64,
    rc: f64,
    tol: f64,
) -> Result<Vec<Point3>> {
    Ok(AnchorFrame::new(a, b, c)?.solve(ra, rb, rc, tol).to_vec())
}

/// Isometry mapping one point list onto another: `y ≈ rotation * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Orthogonal; determinant -1 when `reflected`.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub reflected: bool,
    pub rmsd: f64,
}

impl Alignment {
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

/// Least-squares isometry (reflections allowed) carrying `x` onto `y`.
pub fn align_congruence(x: &[Point3], y: &[Point3]) -> Result<Alignment> {
    align_congruence_with(x, y, true)
}

/// Kabsch alignment; with `allow_reflection` the optimum is taken over the
/// full orthogonal group.
pub fn align_congruence_with(x: &[Point3], y: &[Point3], allow_reflection: bool) -> Result<Alignment> {
    if x.len() != y.len() {
        return Err(TeraError::SizeMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(TeraError::EmptyReconstruction);
    }
    let n = x.len() as f64;
    let cx = x.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let cy = y.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let h = x
        .iter()
        .zip(y)
        .fold(Matrix3::zeros(), |acc, (p, q)| acc + (p.coords - cx) * (q.coords - cy).transpose());
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let mut v = svd.v_t.expect("requested V^T").transpose();
    let mut rotation = v * u.transpose();
    if !allow_reflection && rotation.determinant() < 0.0 {
        // Singular values come back sorted, so the last column is the weakest direction.
        let mut col = v.column_mut(2);
        col *= -1.0;
        rotation = v * u.transpose();
    }
    // SVD round-off leaves errors of order eps·|H|/gap in the weak directions,
    // which thin far-field configurations amplify; a couple of small-rotation
    // least-squares steps remove them.
    for _ in 0..2 {
        rotation = refine_rotation(x, y, &rotation, &cx, &cy);
    }
    let translation = cy - rotation * cx;
    let reflected = rotation.determinant() < 0.0;
    let mut alignment = Alignment { rotation, translation, reflected, rmsd: 0.0 };
    let sq: f64 = x.iter().zip(y).map(|(p, q)| (alignment.apply(p) - q).norm_squared()).sum();
    alignment.rmsd = (sq / n).sqrt();
    Ok(alignment)
}

/// One Gauss-Newton step on `exp([ω]×) · rotation` for the centred sets.
fn refine_rotation(x: &[Point3], y: &[Point3], rotation: &Matrix3<f64>, cx: &Vector3<f64>, cy: &Vector3<f64>) -> Matrix3<f64> {
    let mut inertia = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (p, q) in x.iter().zip(y) {
        let a = rotation * (p.coords - cx);
        let r = (q.coords - cy) - a;
        inertia += Matrix3::identity() * a.norm_squared() - a * a.transpose();
        rhs += a.cross(&r);
    }
    let svd = inertia.svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-12;
    match svd.solve(&rhs, cutoff) {
        Ok(omega) if omega.iter().all(|w| w.is_finite()) => {
            *nalgebra::Rotation3::new(omega).matrix() * rotation
        }
        _ => *rotation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionParams {
    /// meters
    pub wavelength: f64,
    /// Object-to-focal-plane distance, meters.
    pub distance: f64,
    /// Aperture diameter, meters.
    pub aperture: f64,
    /// Detector time resolution, seconds.
    pub time_resolution: f64,
}

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(TeraError::NonPositive { name, value })
    }
}

/// Diffraction-limited resolution `1.22 λ d / D`.
pub fn rayleigh_resolution(p: &ResolutionParams) -> Result<f64> {
    let wavelength = positive("wavelength", p.wavelength)?;
    let distance = positive("distance", p.distance)?;
    let aperture = positive("aperture", p.aperture)?;
    positive("time_resolution", p.time_resolution)?;
    Ok(1.22 * wavelength * distance / aperture)
}

/// Range resolution of a time-of-flight detector, `c τ / 2`.
pub fn transient_resolution(tau: f64) -> Result<f64> {
    Ok(SPEED_OF_LIGHT * positive("time_resolution", tau)? / 2.0)
}
