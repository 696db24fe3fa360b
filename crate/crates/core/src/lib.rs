//! Time-encoded imaging of sparse point scenes.
//!
//! A pulsed source and a single time-resolving pixel sit at the same spot.
//! Light returns from every target directly (a *ping*) and after bouncing
//! once between two targets (a *loop*). The arrival times form an unlabeled
//! list of path lengths, and that list alone pins down the scene up to a
//! rotation, translation and reflection about the sensor.
//!
//! The crate is split along the pipeline:
//!
//! - [`geometry`]: path lengths, trilateration, congruence alignment and the
//!   classical/transient resolution formulas.
//! - [`transient`]: forward model producing a photon-count histogram.
//! - [`peaks`]: histogram to unlabeled distance list.
//! - [`tribond`]: distance list to point cloud (core finding + vertex build-up).
//! - [`harness`]: seeded trials and recoverability sweeps.
//! - [`io`]: the on-disk file formats used by the `tera` command.

// Negated comparisons are used so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod peaks;
pub mod transient;
pub mod tribond;

pub use error::{Result, TeraError};
pub use geometry::{
    align_congruence, enumerate_ensemble, loop_length, ping_length, rayleigh_resolution,
    transient_resolution, trilaterate, Alignment, DistanceList, PathKind, PathLabel, PathLength,
    Point3, ResolutionParams, TotalConfiguration, SPEED_OF_LIGHT,
};
pub use harness::{evaluate, run_trial, sweep, Metrics, SweepConfig, SweepTable, TrialConfig, TrialResult};
pub use peaks::{extract_peaks, times_to_distances, Peak, PeakParams};
pub use transient::{apply_occlusion, radiometric_weight, simulate_response, Histogram, SimConfig};
pub use tribond::{
    add_vertex, find_base_triangle, find_core, reconstruct, ReconParams, ReconStatus, Reconstruction,
};
