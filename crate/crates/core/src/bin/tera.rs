use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tera::harness::BetaSource;
use tera::io;
use tera::peaks::extract_peaks_report;
use tera::{
    apply_occlusion, enumerate_ensemble, evaluate, rayleigh_resolution, reconstruct, simulate_response, sweep,
    times_to_distances, transient_resolution, PeakParams, ReconParams, ReconStatus, ResolutionParams, SimConfig,
    SweepConfig, TeraError, SPEED_OF_LIGHT,
};

const PS: f64 = 1e-12;

#[derive(Parser)]
#[command(name = "tera", version, about = "Time-encoded single-pixel imaging of sparse point scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the transient histogram of a scene file.
    Simulate(SimulateArgs),
    /// Extract the unlabeled distance list from a histogram.
    Peaks(PeaksArgs),
    /// Rebuild the point cloud from a distance list.
    Reconstruct(ReconstructArgs),
    /// Compare a reconstruction with the true scene.
    Eval(EvalArgs),
    /// Recoverability sweep over point count and target diameter.
    Sweep(SweepArgs),
    /// Classical versus transient resolution at a given geometry.
    Resolution(ResolutionArgs),
}

#[derive(Args)]
struct PulseArgs {
    #[arg(long, default_value_t = 80.0)]
    pulse_fwhm_ps: f64,
    #[arg(long, default_value_t = 4.0)]
    bin_ps: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the labeled path lengths that survived occlusion.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    pulse: PulseArgs,
    #[arg(long, default_value_t = 1e6)]
    photon_budget: f64,
    #[arg(long, default_value_t = 100.0)]
    dark_rate_hz: f64,
    #[arg(long, default_value_t = 0.0)]
    occlusion_prob: f64,
    /// Emit expected counts instead of Poisson draws.
    #[arg(long)]
    noiseless: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PeakArgs {
    /// FWHM of the system response the defaults below are matched to.
    #[arg(long, default_value_t = 80.0)]
    pulse_fwhm_ps: f64,
    /// Fraction of the tallest peak.
    #[arg(long)]
    min_prominence: Option<f64>,
    /// Defaults to the pulse FWHM.
    #[arg(long)]
    merge_window_ps: Option<f64>,
    #[arg(long)]
    noise_floor_sigmas: Option<f64>,
    /// Gaussian smoothing sigma; defaults to the pulse sigma, 0 disables.
    #[arg(long)]
    smoothing_ps: Option<f64>,
}

impl PeakArgs {
    fn params(&self) -> PeakParams {
        let mut p = PeakParams::for_pulse(self.pulse_fwhm_ps * PS);
        if let Some(v) = self.min_prominence {
            p.min_prominence = v;
        }
        if let Some(v) = self.merge_window_ps {
            p.merge_window = v * PS;
        }
        if let Some(v) = self.noise_floor_sigmas {
            p.noise_floor_sigmas = v;
        }
        if let Some(v) = self.smoothing_ps {
            p.smoothing = v * PS;
        }
        p
    }
}

#[derive(Args)]
struct PeaksArgs {
    #[arg(long)]
    histogram: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    peak: PeakArgs,
}

#[derive(Args)]
struct RecArgs {
    /// Match tolerance; defaults to one 4 ps bin of path length.
    #[arg(long)]
    tol_m: Option<f64>,
    #[arg(long)]
    max_core_attempts: Option<u64>,
    #[arg(long)]
    max_vertex_attempts: Option<u64>,
    /// Stop once this many points are placed.
    #[arg(long)]
    expected_points: Option<usize>,
    #[arg(long)]
    max_ping_slack: Option<usize>,
    /// Search the whole core budget and keep the best fit instead of the
    /// first complete one; more robust on noisy lists.
    #[arg(long)]
    exhaustive: bool,
}

impl RecArgs {
    fn apply(&self, mut p: ReconParams) -> ReconParams {
        if let Some(v) = self.tol_m {
            p.tol = v;
        }
        if let Some(v) = self.max_core_attempts {
            p.max_core_attempts = v;
        }
        if let Some(v) = self.max_vertex_attempts {
            p.max_vertex_attempts = v;
        }
        if let Some(v) = self.max_ping_slack {
            p.max_ping_slack = v;
        }
        if self.expected_points.is_some() {
            p.expected_points = self.expected_points;
        }
        if self.exhaustive {
            p.first_complete = false;
        }
        p
    }
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    list: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    rec: RecArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    recon: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Histogram,
    Oracle,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 8, 11, 14, 17, 20])]
    n_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08])]
    diameters_m: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 10.0)]
    volume_m3: f64,
    #[arg(long, default_value_t = 100.0)]
    standoff_m: f64,
    #[arg(long)]
    photon_budget: Option<f64>,
    #[arg(long)]
    dark_rate_hz: Option<f64>,
    #[arg(long)]
    occlusion_prob: Option<f64>,
    #[arg(long)]
    noiseless: bool,
    #[arg(long, value_enum, default_value_t = Source::Histogram)]
    source: Source,
    #[command(flatten)]
    rec: RecArgs,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ResolutionArgs {
    #[arg(long)]
    wavelength_nm: f64,
    #[arg(long)]
    aperture_um: f64,
    #[arg(long)]
    distance_m: f64,
    #[arg(long)]
    tau_ps: f64,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

const EXIT_PARTIAL: u8 = 2;
const EXIT_CORE_NOT_FOUND: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_USAGE, message: e.to_string() }
}

/// Errors from reading input files are data errors; the rest are bad flags.
fn data(e: TeraError) -> Failure {
    let code = match e {
        TeraError::InvalidParameter(_) | TeraError::NonPositive { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    };
    Failure { code, message: e.to_string() }
}

fn with_path(path: &std::path::Path) -> impl Fn(TeraError) -> Failure + '_ {
    move |e| Failure { message: format!("{}: {e}", path.display()), ..data(e) }
}

fn simulate(a: &SimulateArgs) -> Result<u8, Failure> {
    let k = io::read_scene(&a.scene).map_err(with_path(&a.scene))?;
    let cfg = SimConfig {
        pulse_fwhm: a.pulse.pulse_fwhm_ps * PS,
        bin_width: a.pulse.bin_ps * PS,
        photon_budget: a.photon_budget,
        dark_rate: a.dark_rate_hz,
        occlusion_prob: a.occlusion_prob,
        seed: a.seed,
        noiseless: a.noiseless,
    };
    cfg.validate().map_err(usage)?;
    let h = simulate_response(&k, &cfg).map_err(data)?;
    io::write_histogram(&a.out, &h).map_err(data)?;
    let surviving = enumerate_ensemble(&k, &apply_occlusion(&k, &cfg));
    if let Some(p) = &a.labels {
        io::write_labels(p, &surviving).map_err(data)?;
    }
    println!("paths: {}", surviving.len());
    println!("bins: {}", h.len());
    if let Some(p) = &a.labels {
        println!("labels: {}", p.display());
    }
    Ok(0)
}

fn peaks(a: &PeaksArgs) -> Result<u8, Failure> {
    let h = io::read_histogram(&a.histogram).map_err(with_path(&a.histogram))?;
    let params = a.peak.params();
    params.validate().map_err(usage)?;
    let report = extract_peaks_report(&h, &params).map_err(data)?;
    if report.merged > 0 {
        eprintln!(
            "warning: {} peak(s) fell inside the {:.1} ps merge window and were fused; overlapping paths are missing from the list",
            report.merged,
            params.merge_window / PS
        );
    }
    let times: Vec<f64> = report.peaks.iter().map(|p| p.time).collect();
    let beta = times_to_distances(&times).map_err(data)?;
    io::write_distance_list(&a.out, &beta).map_err(data)?;
    println!("peaks: {}", beta.len());
    Ok(0)
}

fn status_code(s: ReconStatus) -> u8 {
    match s {
        ReconStatus::Complete => 0,
        ReconStatus::Partial => EXIT_PARTIAL,
        ReconStatus::CoreNotFound => EXIT_CORE_NOT_FOUND,
    }
}

fn reconstruct_cmd(a: &ReconstructArgs) -> Result<u8, Failure> {
    let beta = io::read_distance_list(&a.list).map_err(with_path(&a.list))?;
    if beta.len() < 3 {
        return Err(usage(format!("{}: {} entries, at least 3 are needed", a.list.display(), beta.len())));
    }
    let p = a.rec.apply(ReconParams { seed: a.seed, ..ReconParams::default() });
    p.validate().map_err(usage)?;
    let r = reconstruct(&beta, &p).map_err(data)?;
    io::write_reconstruction(&a.out, &r).map_err(data)?;
    println!("status: {}", serde_json::to_string(&r.status).unwrap_or_default().trim_matches('"'));
    println!("points: {}", r.points.len());
    println!("consumed: {} of {}", r.consumed.len(), beta.len());
    println!("unplaced: {}", r.unplaced.len());
    println!("max residual [m]: {:e}", r.max_residual());
    Ok(status_code(r.status))
}

fn eval(a: &EvalArgs) -> Result<u8, Failure> {
    let k = io::read_scene(&a.scene).map_err(with_path(&a.scene))?;
    let r = io::read_reconstruction(&a.recon).map_err(with_path(&a.recon))?;
    if r.points.len() > k.len() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("reconstruction has {} points but the scene only {}", r.points.len(), k.len()),
        });
    }
    let m = evaluate(&k, &r).map_err(data)?;
    let out = serde_json::to_string_pretty(&m).map_err(|e| data(e.into()))?;
    println!("{out}");
    Ok(0)
}

fn sweep_cmd(a: &SweepArgs) -> Result<u8, Failure> {
    let mut cfg = SweepConfig {
        n_values: a.n_values.clone(),
        diameters: a.diameters_m.clone(),
        trials_per_cell: a.trials,
        volume: a.volume_m3,
        standoff: a.standoff_m,
        source: match a.source {
            Source::Histogram => BetaSource::Histogram,
            Source::Oracle => BetaSource::Oracle,
        },
        master_seed: a.seed,
        ..SweepConfig::default()
    };
    if let Some(v) = a.photon_budget {
        cfg.sim.photon_budget = v;
    }
    if let Some(v) = a.dark_rate_hz {
        cfg.sim.dark_rate = v;
    }
    if let Some(v) = a.occlusion_prob {
        cfg.sim.occlusion_prob = v;
    }
    cfg.sim.noiseless = a.noiseless;
    cfg.rec = a.rec.apply(cfg.rec);
    cfg.validate().map_err(usage)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build().map_err(usage)?;
    let table = pool.install(|| sweep(&cfg)).map_err(data)?;
    io::write_sweep(&a.out, &cfg, &table).map_err(data)?;
    print!("{}", io::sweep_to_csv(&table).map_err(data)?);
    Ok(0)
}

fn resolution(a: &ResolutionArgs) -> Result<u8, Failure> {
    let p = ResolutionParams {
        wavelength: a.wavelength_nm * 1e-9,
        distance: a.distance_m,
        aperture: a.aperture_um * 1e-6,
        time_resolution: a.tau_ps * PS,
    };
    let classical = rayleigh_resolution(&p).map_err(usage)?;
    let transient = transient_resolution(p.time_resolution).map_err(usage)?;
    println!("rayleigh_m: {classical}");
    println!("transient_m: {transient}");
    println!("c_tau_m: {}", SPEED_OF_LIGHT * p.time_resolution);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Peaks(a) => peaks(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Resolution(a) => resolution(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
