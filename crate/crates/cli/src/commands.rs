//! Subcommand implementations. Each returns an `Outcome` (exit 0 or 1) or a
//! `CliError` (exit 2).

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use trackbill::dynamics::{sample_mu, OrbitTrace, Side};
use trackbill::guide::FocalGrid;
use trackbill::tangent::cone::{focal_lengths, verify_strict_invariance, ConeSample};
use trackbill::tangent::lyapunov::{lyapunov, spread, LyapunovRun};
use trackbill::track::{build_track, check_condition_h, guide_reports, FocalChoice, GuideReport, Loop, TrackGeometry, TrackSpec};
use trackbill::track3d::lyapunov::{lyapunov_spectrum3d, Spectrum3Run};
use trackbill::track3d::{build_track3d, check_condition_h3, guide_reports3d, OrbitTrace3, Track3D};

use crate::svg::{self, Bounds};
use crate::trackfile::{self, ParseError};

/// Gate on exponents that should vanish.
pub const ZERO_GATE: f64 = 5e-3;

/// Inner and outer radius of the default integrable baseline.
pub const BASELINE_ANNULUS: (f64, f64) = (1.0, 0.5);

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_gate(ok: bool) -> Self {
        if ok {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "trackbill", version, about = "Billiards in planar and spatial tracks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the geometry and Condition H (or its spatial version).
    Validate(ValidateArgs),
    /// Record one orbit as CSV, optionally drawn as SVG.
    Simulate(SimulateArgs),
    /// Lyapunov exponents over a seed ensemble.
    Lyapunov(LyapunovArgs),
    /// Certify the cone field on sampled entering collisions.
    Cones(ConesArgs),
    /// Phase portrait `(s, cos θ)` of one orbit.
    Poincare(PoincareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    /// Along the centerline.
    R,
    /// Against it.
    L,
}

impl Direction {
    fn side(self) -> Side {
        match self {
            Direction::R => Side::R,
            Direction::L => Side::L,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::R => 1.0,
            Direction::L => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Focal {
    /// Closed-form bound.
    Bound,
    /// Grid supremum.
    Numeric,
}

impl From<Focal> for FocalChoice {
    fn from(f: Focal) -> Self {
        match f {
            Focal::Bound => FocalChoice::Bound,
            Focal::Numeric => FocalChoice::Numeric,
        }
    }
}

#[derive(Debug, Args)]
pub struct FocalArgs {
    /// Focal length used by Condition H.
    #[arg(long, value_enum, default_value = "bound")]
    pub focal: Focal,
    /// Angles and phases of the focal-length grid.
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub file: PathBuf,
    #[command(flatten)]
    pub focal: FocalArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub file: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "r")]
    pub direction: Direction,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LyapunovArgs {
    /// Track file; omit with `--annulus`.
    #[arg(required_unless_present = "annulus")]
    pub file: Option<PathBuf>,
    /// Use two concentric circles instead of a track.
    #[arg(long, conflicts_with = "file")]
    pub annulus: bool,
    #[arg(long, default_value_t = BASELINE_ANNULUS.0, requires = "annulus")]
    pub outer: f64,
    #[arg(long, default_value_t = BASELINE_ANNULUS.1, requires = "annulus")]
    pub inner: f64,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "r")]
    pub direction: Direction,
    #[arg(long)]
    pub out: PathBuf,
    /// Running estimates, one row per seed and stride (planar only).
    #[arg(long)]
    pub series: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConesArgs {
    pub file: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Margin histogram.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[command(flatten)]
    pub focal: FocalArgs,
}

#[derive(Debug, Args)]
pub struct PoincareArgs {
    pub file: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "r")]
    pub direction: Direction,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |source| CliError::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrackSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    trackfile::parse(&text).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
}

enum Built {
    Planar(TrackGeometry),
    Spatial(Track3D),
}

fn build(spec: &TrackSpec) -> Result<Built, trackbill::track::TrackError> {
    Ok(match spec.dim() {
        2 => Built::Planar(build_track(spec)?),
        _ => Built::Spatial(build_track3d(spec)?),
    })
}

fn reports(spec: &TrackSpec, focal: &FocalArgs) -> Result<Vec<GuideReport>, trackbill::track::TrackError> {
    let mut reps = match spec.halfwidth() {
        Some(e) => guide_reports(spec, e)?,
        None => guide_reports3d(spec)?,
    };
    let grid = FocalGrid::coarse(focal.grid, focal.grid);
    for r in &mut reps {
        if r.c_tilde.is_some() {
            r.compute_numeric(&grid)?;
        }
    }
    Ok(reps)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Validate(a) => validate(&a, out, err),
        Command::Simulate(a) => simulate(&a, out, err),
        Command::Lyapunov(a) => lyapunov_cmd(&a, out, err),
        Command::Cones(a) => cones(&a, out, err),
        Command::Poincare(a) => poincare(&a, out, err),
    }
}

fn stdout_err(e: io::Error) -> CliError {
    CliError::Io { path: PathBuf::from("<stdout>"), source: e }
}

/// Prints the canonical spec, guide reports and straight margins.
pub fn validate(a: &ValidateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.file)?;
    let mut text = trackfile::to_string(&spec);
    let verdict = build(&spec).and_then(|_| {
        let reps = reports(&spec, &a.focal)?;
        for r in &reps {
            let _ = writeln!(
                text,
                "guide {}: radius={} angle={} r1={} r={} type={} beta_bar={} c_tilde={} tau_bound={} tau_numeric={} tau_numeric_e1={}",
                r.guide,
                r.radius,
                r.angle,
                r.r1,
                r.r,
                r.guide_type.label(),
                r.beta_bar,
                opt(r.c_tilde),
                opt(r.tau_bound),
                opt(r.tau_numeric),
                opt(r.tau_numeric_e1)
            );
        }
        let choice = FocalChoice::from(a.focal.focal);
        let (h, reasons, label) = if spec.dim() == 2 {
            (check_condition_h(&spec, &reps, choice)?, Vec::new(), "H")
        } else {
            let h3 = check_condition_h3(&spec, &reps, choice)?;
            for (i, j) in &h3.twisted {
                let _ = writeln!(text, "twisted pair: guides {i} and {j}");
            }
            (h3.distance, h3.reasons, "H~")
        };
        for m in &h.margins {
            let _ = writeln!(
                text,
                "straight {}: run length={} between guides {} and {} tau_before={} tau_after={} margin={}",
                m.guide, m.length, m.before, m.after, m.tau_before, m.tau_after, m.margin
            );
        }
        let ok = h.satisfied && reasons.is_empty();
        for r in &reasons {
            let _ = writeln!(text, "reason: {r}");
        }
        let _ = writeln!(text, "condition {label}: {}", if ok { "satisfied" } else { "violated" });
        Ok(ok)
    });
    out.write_all(text.as_bytes()).map_err(stdout_err)?;
    match verdict {
        Ok(ok) => Ok(Outcome::from_gate(ok)),
        Err(e) => {
            let _ = writeln!(err, "invalid track: {e}");
            Ok(Outcome::Fail)
        }
    }
}

fn sign_changes(v_stars: impl Iterator<Item = f64>) -> Option<usize> {
    let mut first = 0.0;
    for (i, v) in v_stars.enumerate() {
        if first == 0.0 {
            first = v.signum();
        } else if v * first < 0.0 {
            return Some(i);
        }
    }
    None
}

/// Orbit CSV with a termination footer; exit 1 if `v*` changes sign.
pub fn simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.file)?;
    let built = match build(&spec) {
        Ok(b) => b,
        Err(e) => {
            let _ = writeln!(err, "invalid track: {e}");
            return Ok(Outcome::Fail);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut csv = Vec::new();
    let (flip, svg_doc, count) = match &built {
        Built::Planar(g) => {
            let x0 = sample_mu(g, &mut rng, Some(a.direction.side()));
            let trace = OrbitTrace::run(g, &x0, a.steps);
            trace.write_csv(&mut csv).expect("in-memory write");
            let flip = sign_changes(trace.records.iter().map(|r| r.v_star));
            let svg_doc = a.svg.as_ref().map(|_| {
                let loops = svg::loops(g);
                let pts: Vec<[f64; 2]> = trace.records.iter().map(|r| [r.state.q.x, r.state.q.y]).collect();
                let b = Bounds::of(loops.iter().flatten()).expect("nonempty loops");
                svg::render(b, &loops, &pts, 0.01 * (b.max[0] - b.min[0]).max(b.max[1] - b.min[1]) * 0.2)
            });
            (flip, svg_doc, trace.records.len())
        }
        Built::Spatial(t) => {
            let x0 = t.sample_mu(&mut rng, Some(a.direction.sign()));
            let trace = OrbitTrace3::run(t, &x0, a.steps);
            trace.write_csv(t, &mut csv).expect("in-memory write");
            let flip = sign_changes(trace.records.iter().map(|r| r.v_star));
            let svg_doc = a.svg.as_ref().map(|_| {
                let outlines = svg::outlines3d(t);
                let pts: Vec<[f64; 2]> = trace.records.iter().map(|r| [r.state.q.x, r.state.q.y]).collect();
                let b = Bounds::of(outlines.iter().flatten()).expect("nonempty walls");
                svg::render(b, &outlines, &pts, 0.01 * (b.max[0] - b.min[0]).max(b.max[1] - b.min[1]) * 0.2)
            });
            (flip, svg_doc, trace.records.len())
        }
    };
    write_atomic(&a.out, &csv)?;
    if let (Some(path), Some(doc)) = (&a.svg, svg_doc) {
        write_atomic(path, doc.as_bytes())?;
    }
    writeln!(out, "wrote {} collisions to {}", count, a.out.display()).map_err(stdout_err)?;
    if let Some(i) = flip {
        let text = String::from_utf8_lossy(&csv);
        let row = text.lines().nth(i + 1).unwrap_or("");
        let _ = writeln!(err, "v* changed sign at step {i}: {row}");
        return Ok(Outcome::Fail);
    }
    Ok(Outcome::Pass)
}

fn termination(t: &Option<trackbill::dynamics::DynError>) -> &'static str {
    t.as_ref().map_or("none", |e| e.reason())
}

fn planar_row(r: &LyapunovRun) -> String {
    format!("{},{},{},{},{}", r.seed, r.exponent, r.steps, r.plateau_change(), termination(&r.termination))
}

fn spatial_row(r: &Spectrum3Run) -> String {
    let l = r.exponents;
    format!("{},{},{},{},{},{},{},{}", r.seed, l[0], l[1], l[2], l[3], r.pairing_defect(), r.steps, termination(&r.termination))
}

/// `|λ₁|` of the baseline annulus from the first seed.
fn baseline(seed: u64, steps: usize, side: Side) -> f64 {
    let g = TrackGeometry::annulus(BASELINE_ANNULUS.0, BASELINE_ANNULUS.1).expect("valid annulus");
    lyapunov(&g, &[seed], steps, Some(side))[0].exponent.abs()
}

/// Exponent table. Gates: annulus `|λ₁| < 5e-3`; planar track
/// `λ₁ > 10 · baseline`; spatial track with a twisted pair all
/// `|λᵢ| > 10 · baseline`, without one at least two `|λᵢ| < 5e-3`.
pub fn lyapunov_cmd(a: &LyapunovArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, CliError> {
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let side = a.direction.side();
    let (geometry, twisted) = if a.annulus {
        match TrackGeometry::annulus(a.outer, a.inner) {
            Ok(g) => (Some(Built::Planar(g)), false),
            Err(e) => return Err(CliError::Usage(e.to_string())),
        }
    } else {
        let spec = load(a.file.as_deref().expect("clap requires a file"))?;
        match build(&spec) {
            Ok(b) => (Some(b), !trackbill::track3d::twisted_pairs(&spec).is_empty()),
            Err(e) => {
                let _ = writeln!(err, "invalid track: {e}");
                (None, false)
            }
        }
    };
    let Some(built) = geometry else { return Ok(Outcome::Fail) };
    let base = if a.annulus { 0.0 } else { baseline(a.seed, a.steps, side) };
    let mut csv = String::new();
    let mut failures = Vec::new();
    match &built {
        Built::Planar(g) => {
            let runs = lyapunov(g, &seeds, a.steps, Some(side));
            csv.push_str("seed,exponent,steps,plateau_change,termination\n");
            for r in &runs {
                let row = planar_row(r);
                let ok = if a.annulus { r.exponent.abs() < ZERO_GATE } else { r.exponent > 10.0 * base };
                if !ok {
                    failures.push(row.clone());
                }
                csv.push_str(&row);
                csv.push('\n');
            }
            if let Some(path) = &a.series {
                let mut s = String::from("seed,step,estimate\n");
                for r in &runs {
                    for (n, v) in &r.series {
                        let _ = writeln!(s, "{},{},{}", r.seed, n, v);
                    }
                }
                write_atomic(path, s.as_bytes())?;
            }
            let (mean, sd) = spread(&runs);
            let flat = runs.iter().filter(|r| r.plateau_change() < 0.1).count();
            writeln!(out, "lambda1 mean={mean} sd={sd} baseline={base} plateaued={flat}/{}", runs.len()).map_err(stdout_err)?;
        }
        Built::Spatial(t) => {
            let runs = lyapunov_spectrum3d(t, &seeds, a.steps);
            csv.push_str("seed,l1,l2,l3,l4,pairing_defect,steps,termination\n");
            for r in &runs {
                let row = spatial_row(r);
                let ok = if twisted {
                    r.exponents.iter().all(|l| l.abs() > 10.0 * base)
                } else {
                    r.exponents.iter().filter(|l| l.abs() < ZERO_GATE).count() >= 2
                };
                if !ok {
                    failures.push(row.clone());
                }
                csv.push_str(&row);
                csv.push('\n');
            }
            writeln!(out, "spectra for {} seeds, baseline={base}, twisted={twisted}", runs.len()).map_err(stdout_err)?;
        }
    }
    write_atomic(&a.out, csv.as_bytes())?;
    for f in &failures {
        let _ = writeln!(err, "gate failed: {f}");
    }
    Ok(Outcome::from_gate(failures.is_empty()))
}

/// Margin table `sample,guide,next_guide,s,theta,passage_steps,transit,margin,lemma_ok`.
/// Exit 0 iff every margin is positive and the focusing-time equivalence held.
pub fn cones(a: &ConesArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.file)?;
    if spec.dim() != 2 {
        return Err(CliError::Usage("cones needs a planar track".into()));
    }
    let prepared = build_track(&spec).and_then(|g| {
        let reps = reports(&spec, &a.focal)?;
        let h = check_condition_h(&spec, &reps, a.focal.focal.into())?;
        Ok((g, reps, h))
    });
    let (g, reps, h) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "invalid track: {e}");
            return Ok(Outcome::Fail);
        }
    };
    let taus = focal_lengths(g.guide_count(), &reps, a.focal.focal.into());
    let cert = match verify_strict_invariance(&g, &taus, a.samples, a.seed) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return Ok(Outcome::Fail);
        }
    };
    let mut csv = String::from("sample,guide,next_guide,s,theta,passage_steps,transit,margin,lemma_ok\n");
    let row = |i: usize, s: &ConeSample| {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            i, s.entry.guide, s.next.guide, s.entry.s, s.entry.theta, s.passage_steps, s.transit, s.margin, s.lemma_ok
        )
    };
    for (i, s) in cert.samples.iter().enumerate() {
        csv.push_str(&row(i, s));
        csv.push('\n');
    }
    let _ = writeln!(csv, "# terminated: {}", cert.terminated);
    write_atomic(&a.out, csv.as_bytes())?;
    if let Some(path) = &a.histogram {
        write_atomic(path, histogram(&cert.samples.iter().map(|s| s.margin).collect::<Vec<_>>(), a.bins).as_bytes())?;
    }
    let min = cert.min_margin();
    writeln!(
        out,
        "condition H: {}; samples={} terminated={} min_margin={} lemma_failures={}",
        if h.satisfied { "satisfied" } else { "violated" },
        cert.samples.len(),
        cert.terminated,
        min,
        cert.lemma_failures()
    )
    .map_err(stdout_err)?;
    let mut ok = true;
    if let Err(e) = cert.certify() {
        let (i, s) = cert.samples.iter().enumerate().min_by(|x, y| x.1.margin.total_cmp(&y.1.margin)).expect("samples");
        let _ = writeln!(err, "{e}");
        let _ = writeln!(err, "{}", row(i, s));
        ok = false;
    }
    if let Some((i, s)) = cert.samples.iter().enumerate().find(|(_, s)| !s.lemma_ok) {
        let _ = writeln!(err, "focusing-time equivalence failed: {}", row(i, s));
        ok = false;
    }
    Ok(Outcome::from_gate(ok))
}

/// `bin_lo,bin_hi,count` over the finite values, plus a row for `-inf`.
pub fn histogram(values: &[f64], bins: usize) -> String {
    let bins = bins.max(1);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let mut out = String::from("bin_lo,bin_hi,count\n");
    let infinite = values.len() - finite.len();
    if infinite > 0 {
        let _ = writeln!(out, "-inf,-inf,{infinite}");
    }
    if finite.is_empty() {
        return out;
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in finite {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", lo + width * k as f64, lo + width * (k + 1) as f64, c);
    }
    out
}

/// `step,loop,s,cos_theta` of one planar orbit.
pub fn poincare(a: &PoincareArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.file)?;
    if spec.dim() != 2 {
        return Err(CliError::Usage("poincare needs a planar track".into()));
    }
    let g = match build_track(&spec) {
        Ok(g) => g,
        Err(e) => {
            let _ = writeln!(err, "invalid track: {e}");
            return Ok(Outcome::Fail);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x0 = sample_mu(&g, &mut rng, Some(a.direction.side()));
    let trace = OrbitTrace::run(&g, &x0, a.steps);
    let mut csv = String::from("step,loop,s,cos_theta\n");
    let mut points = Vec::with_capacity(trace.records.len());
    for (i, r) in trace.records.iter().enumerate() {
        let lp = r.state.boundary(&g);
        let name = if lp == Loop::Outer { "outer" } else { "inner" };
        let c = r.state.theta.cos();
        let _ = writeln!(csv, "{},{},{},{}", i, name, r.state.s, c);
        points.push((lp.index(), r.state.s, c));
    }
    let _ = writeln!(csv, "# termination: {}", termination(&trace.termination));
    write_atomic(&a.out, csv.as_bytes())?;
    if let Some(path) = &a.svg {
        write_atomic(path, svg::render_section(g.loop_lengths, &points).as_bytes())?;
    }
    writeln!(out, "wrote {} points to {}", points.len(), a.out.display()).map_err(stdout_err)?;
    Ok(Outcome::Pass)
}
