//! Point-cloud reconstruction from an unlabeled list of ping and loop lengths.
//!
//! The search is a build-up in two phases. *Core finding* picks two entries
//! as pings and one as the loop joining them (the base triangle with the
//! sensor), grows two tetrahedra on that triangle from one ping and two loops
//! each, and accepts the five-point core only if some unused entry matches the
//! loop between the two apexes (the bridge bond). *Vertex addition* then
//! trilaterates further points from a ping and two loops against placed
//! anchors, again keeping a candidate only when a bridge loop to another
//! placed point is present.
//!
//! Output coordinates use a canonical frame: sensor at the origin, the first
//! placed point on +x, the second in the xy half-plane with y ≥ 0, the first
//! point off that plane at z ≥ 0.

mod core;
mod pool;
mod refine;
mod small;
mod vertex;

use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TeraError};
use crate::geometry::{DistanceList, PathLabel, Point3, SPEED_OF_LIGHT};

pub use self::core::{find_base_triangle, BaseTriangle};
use self::core::{search_cores, CoreCandidate};
use self::pool::FreeList;

/// Fewest entries that can place one more vertex: a ping, two anchor loops
/// and one bridge.
const ENTRIES_PER_VERTEX: usize = 4;
/// Size of the five-point core's ensemble: four pings and six loops.
const CORE_ENTRIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconParams {
    /// Distance-match tolerance, meters.
    pub tol: f64,
    /// Trilaterations plus bridge tests allowed while looking for cores.
    pub max_core_attempts: u64,
    /// Candidate placements allowed while adding vertices.
    pub max_vertex_attempts: u64,
    /// Orders the anchor choice during vertex addition.
    pub seed: u64,
    /// Stop once this many points are placed; complete means exactly this many.
    pub expected_points: Option<usize>,
    /// Bridge loops a new vertex needs before it is accepted.
    pub min_bridges: usize,
    /// Fraction of the non-anchor placed points a new vertex must bridge to;
    /// the requirement is the larger of this and `min_bridges`.
    pub bridge_fraction: f64,
    /// How far down the sorted list ping candidates may be taken from.
    pub max_ping_slack: usize,
    /// Return the first reconstruction that explains the list. When false the
    /// whole core budget is searched and the best fit is kept, which matters
    /// when the tolerance is loose enough for wrong labelings to pass.
    pub first_complete: bool,
}

impl Default for ReconParams {
    fn default() -> Self {
        Self {
            tol: SPEED_OF_LIGHT * 4e-12,
            max_core_attempts: 200_000_000,
            max_vertex_attempts: 20_000_000,
            seed: 0,
            expected_points: None,
            min_bridges: 1,
            bridge_fraction: 0.5,
            max_ping_slack: 2,
            first_complete: true,
        }
    }
}

impl ReconParams {
    /// Bridges required of a vertex joining `placed` points.
    pub fn required_bridges(&self, placed: usize) -> usize {
        let others = placed.saturating_sub(2);
        let by_fraction = (self.bridge_fraction * others as f64 - 1e-9).ceil() as usize;
        self.min_bridges.max(by_fraction).min(others.max(self.min_bridges))
    }

    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(TeraError::NonPositive { name: "tol", value: self.tol });
        }
        if self.max_core_attempts == 0 || self.max_vertex_attempts == 0 {
            return Err(TeraError::InvalidParameter("attempt budgets must be at least 1".into()));
        }
        if self.min_bridges == 0 {
            return Err(TeraError::InvalidParameter("min_bridges must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bridge_fraction) {
            return Err(TeraError::InvalidParameter(format!(
                "bridge_fraction {} outside [0, 1]",
                self.bridge_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconStatus {
    Complete,
    Partial,
    CoreNotFound,
}

/// A distance-list entry explained by the placed geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumedEntry {
    /// Index into the distance list.
    pub entry: usize,
    pub length: f64,
    /// Path over reconstructed point indices.
    pub path: PathLabel,
    /// Length predicted by the final coordinates.
    pub predicted: f64,
    /// `length - predicted`
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnplacedEntry {
    pub entry: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub core_attempts: u64,
    pub vertex_attempts: u64,
    pub cores_tried: u64,
    pub core_budget_exhausted: bool,
    pub vertex_budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Always the origin.
    pub sensor: Point3,
    pub points: Vec<Point3>,
    pub consumed: Vec<ConsumedEntry>,
    pub unplaced: Vec<UnplacedEntry>,
    pub status: ReconStatus,
    pub diagnostics: Diagnostics,
}

impl Reconstruction {
    fn not_found(lengths: &[f64], diagnostics: Diagnostics) -> Self {
        Self {
            sensor: Point3::origin(),
            points: vec![],
            consumed: vec![],
            unplaced: lengths
                .iter()
                .enumerate()
                .map(|(entry, &length)| UnplacedEntry { entry, length })
                .collect(),
            status: ReconStatus::CoreNotFound,
            diagnostics,
        }
    }

    /// Largest |residual| over consumed entries.
    pub fn max_residual(&self) -> f64 {
        self.consumed.iter().map(|c| c.residual.abs()).fold(0.0, f64::max)
    }

    /// Recomputes every consumed path from the coordinates and returns the
    /// worst mismatch against its entry.
    pub fn soundness_residual(&self) -> f64 {
        self.consumed
            .iter()
            .map(|c| (predicted_length(&self.points, c.path) - c.length).abs())
            .fold(0.0, f64::max)
    }

    /// Sensor-to-point distances.
    pub fn ranges(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.coords.norm()).collect()
    }

    /// Pairwise point distances, sorted ascending.
    pub fn scene_distances(&self) -> Vec<f64> {
        let mut d: Vec<f64> = (0..self.points.len())
            .flat_map(|i| (i + 1..self.points.len()).map(move |j| (i, j)))
            .map(|(i, j)| nalgebra::distance(&self.points[i], &self.points[j]))
            .collect();
        d.sort_by(f64::total_cmp);
        d
    }
}

pub(crate) fn predicted_length(points: &[Point3], path: PathLabel) -> f64 {
    match path {
        PathLabel::Ping(i) => 2.0 * points[i].coords.norm(),
        PathLabel::Loop(i, j) => {
            points[i].coords.norm() + nalgebra::distance(&points[i], &points[j]) + points[j].coords.norm()
        }
    }
}

pub(crate) struct Budget {
    pub core_used: u64,
    pub core_max: u64,
    pub vertex_used: u64,
    pub vertex_max: u64,
    pub core_exhausted: bool,
    pub vertex_exhausted: bool,
}

impl Budget {
    fn new(p: &ReconParams) -> Self {
        Self {
            core_used: 0,
            core_max: p.max_core_attempts,
            vertex_used: 0,
            vertex_max: p.max_vertex_attempts,
            core_exhausted: false,
            vertex_exhausted: false,
        }
    }

    pub fn core_tick(&mut self) -> bool {
        if self.core_used >= self.core_max {
            self.core_exhausted = true;
            return false;
        }
        self.core_used += 1;
        true
    }

    pub fn vertex_tick(&mut self) -> bool {
        if self.vertex_used >= self.vertex_max {
            self.vertex_exhausted = true;
            return false;
        }
        self.vertex_used += 1;
        true
    }
}

/// Mutable placement state shared by the two phases.
#[derive(Debug, Clone)]
pub(crate) struct Builder<'a> {
    pub lengths: &'a [f64],
    pub points: Vec<Point3>,
    pub used: Vec<bool>,
    pub consumed: Vec<(usize, PathLabel)>,
}

impl<'a> Builder<'a> {
    fn new(lengths: &'a [f64]) -> Self {
        Self { lengths, points: vec![], used: vec![false; lengths.len()], consumed: vec![] }
    }

    fn from_core(lengths: &'a [f64], core: &CoreCandidate) -> Self {
        let mut b = Self::new(lengths);
        b.points.extend_from_slice(&core.points);
        for &(entry, path) in &core.entries {
            b.consume(entry, path);
        }
        b
    }

    fn from_reconstruction(lengths: &'a [f64], r: &Reconstruction) -> Result<Self> {
        let mut b = Self::new(lengths);
        b.points = r.points.clone();
        for c in &r.consumed {
            if c.entry >= lengths.len() || b.used[c.entry] {
                return Err(TeraError::InvalidParameter(format!(
                    "reconstruction consumes entry {} which the distance list cannot supply",
                    c.entry
                )));
            }
            b.consume(c.entry, c.path);
        }
        Ok(b)
    }

    pub fn consume(&mut self, entry: usize, path: PathLabel) {
        debug_assert!(!self.used[entry]);
        self.used[entry] = true;
        self.consumed.push((entry, path));
    }

    pub fn free(&self) -> FreeList {
        FreeList::new(self.lengths, &self.used)
    }

    pub fn free_count(&self) -> usize {
        self.used.iter().filter(|u| !**u).count()
    }

    /// Reflects through the xy-plane if the first off-plane point sits below it.
    fn canonicalize(&mut self, tol: f64) {
        if let Some(p) = self.points.iter().skip(2).find(|p| p.z.abs() > tol) {
            if p.z < 0.0 {
                for q in self.points.iter_mut() {
                    q.z = -q.z;
                }
            }
        }
    }

    /// Least-squares polish over all consumed entries, kept only if no entry
    /// ends up worse than both `tol` and its previous residual.
    fn polish(&mut self, tol: f64) {
        let entries: Vec<(f64, PathLabel)> = self.consumed.iter().map(|&(e, p)| (self.lengths[e], p)).collect();
        let worst = |pts: &[Point3]| {
            entries.iter().map(|&(l, p)| (predicted_length(pts, p) - l).abs()).fold(0.0, f64::max)
        };
        let mut refined = refine::refine(&self.points, &entries);
        if refined != self.points && worst(&refined) <= tol.max(worst(&self.points)) {
            refine::to_canonical(&mut refined);
            self.points = refined;
        }
    }

    fn finish(mut self, status: ReconStatus, diagnostics: Diagnostics, tol: f64) -> Reconstruction {
        self.polish(tol);
        self.canonicalize(tol);
        let consumed = self
            .consumed
            .iter()
            .map(|&(entry, path)| {
                let predicted = predicted_length(&self.points, path);
                let length = self.lengths[entry];
                ConsumedEntry { entry, length, path, predicted, residual: length - predicted }
            })
            .collect();
        let unplaced = self
            .used
            .iter()
            .enumerate()
            .filter(|(_, u)| !**u)
            .map(|(entry, _)| UnplacedEntry { entry, length: self.lengths[entry] })
            .collect();
        Reconstruction { sensor: Point3::origin(), points: self.points, consumed, unplaced, status, diagnostics }
    }

    fn rms_residual(&self) -> f64 {
        if self.consumed.is_empty() {
            return 0.0;
        }
        let sq: f64 = self
            .consumed
            .iter()
            .map(|&(e, p)| (predicted_length(&self.points, p) - self.lengths[e]).powi(2))
            .sum();
        (sq / self.consumed.len() as f64).sqrt()
    }

    /// Competing reconstructions rank by points placed, then entries
    /// explained, then RMS residual.
    fn beats(&self, other: &Builder) -> bool {
        let a = (self.points.len(), self.consumed.len());
        let b = (other.points.len(), other.consumed.len());
        a > b || (a == b && self.rms_residual() < other.rms_residual())
    }
}

fn status_for(builder: &Builder, p: &ReconParams, proven: bool) -> ReconStatus {
    match p.expected_points {
        Some(n) if builder.points.len() == n => ReconStatus::Complete,
        Some(_) => ReconStatus::Partial,
        None if proven || builder.free_count() < ENTRIES_PER_VERTEX => ReconStatus::Complete,
        None => ReconStatus::Partial,
    }
}

fn diagnostics(budget: &Budget, cores_tried: u64) -> Diagnostics {
    Diagnostics {
        core_attempts: budget.core_used,
        vertex_attempts: budget.vertex_used,
        cores_tried,
        core_budget_exhausted: budget.core_exhausted,
        vertex_budget_exhausted: budget.vertex_exhausted,
    }
}

/// First five-point core (sensor plus four placed points) in search order.
pub fn find_core(beta: &DistanceList, p: &ReconParams) -> Result<Reconstruction> {
    p.validate()?;
    let lengths = beta.lengths();
    let mut budget = Budget::new(p);
    let used = vec![false; lengths.len()];
    let mut found = None;
    search_cores(&lengths, &used, p.tol, p.max_ping_slack, &mut budget, |core, _| {
        found = Some(core);
        ControlFlow::Break(())
    });
    Ok(match found {
        Some(core) => {
            let b = Builder::from_core(&lengths, &core);
            let status = status_for(&b, p, false);
            b.finish(status, diagnostics(&budget, 1), p.tol)
        }
        None => Reconstruction::not_found(&lengths, diagnostics(&budget, 0)),
    })
}

/// Adds vertices to `r` until nothing more in `beta` fits or the budget runs out.
pub fn add_vertex(r: &Reconstruction, beta: &DistanceList, p: &ReconParams) -> Result<Reconstruction> {
    p.validate()?;
    if r.points.len() < 3 {
        return Err(TeraError::InvalidParameter(format!(
            "vertex addition needs at least 3 placed points, got {}",
            r.points.len()
        )));
    }
    let lengths = beta.lengths();
    let mut builder = Builder::from_reconstruction(&lengths, r)?;
    let mut budget = Budget::new(p);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let proven = vertex::grow(&mut builder, p, &mut budget, &mut rng);
    let status = status_for(&builder, p, proven);
    let mut diag = diagnostics(&budget, r.diagnostics.cores_tried);
    diag.core_attempts = r.diagnostics.core_attempts;
    Ok(builder.finish(status, diag, p.tol))
}

/// Full reconstruction: core search, then vertex addition on each core in
/// turn until one explains the list; the best attempt is returned otherwise.
pub fn reconstruct(beta: &DistanceList, p: &ReconParams) -> Result<Reconstruction> {
    p.validate()?;
    if beta.len() < 3 {
        return Err(TeraError::InvalidParameter(format!(
            "need at least 3 distance entries, got {}",
            beta.len()
        )));
    }
    let lengths = beta.lengths();
    if lengths.len() < CORE_ENTRIES {
        return Ok(small::reconstruct(&lengths, p));
    }

    let mut budget = Budget::new(p);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let used = vec![false; lengths.len()];
    let mut best: Option<(Builder, bool)> = None;
    let mut cores_tried = 0u64;
    search_cores(&lengths, &used, p.tol, p.max_ping_slack, &mut budget, |core, budget| {
        cores_tried += 1;
        let mut b = Builder::from_core(&lengths, &core);
        let proven = vertex::grow(&mut b, p, budget, &mut rng);
        if best.as_ref().is_none_or(|(old, _)| b.beats(old)) {
            best = Some((b, proven));
        }
        let Some((b, _)) = &best else { unreachable!() };
        let satisfied = match p.expected_points {
            Some(n) => b.points.len() >= n,
            None => b.free_count() < ENTRIES_PER_VERTEX,
        };
        if (satisfied && (p.first_complete || b.free_count() == 0)) || budget.vertex_exhausted {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    let diag = diagnostics(&budget, cores_tried);
    Ok(match best {
        Some((b, proven)) => {
            let status = status_for(&b, p, proven);
            b.finish(status, diag, p.tol)
        }
        None => Reconstruction::not_found(&lengths, diag),
    })
}
