//! Command implementations behind the `mutualmesh` binary.
//!
//! Every command returns a [`CommandResult`] instead of exiting, so the whole
//! surface can be driven from tests. Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | validation failure |
//! | 2 | usage or configuration error |
//! | 3 | I/O error, including unreadable or malformed input files |
//! | 4 | numerical failure |

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::losses::JointRegressor;
use crate::mesh::{load_obj, validate_manifold, write_obj, MeshGraph, ViolationKind};
use crate::metrics::{evaluate_pair_with_joints, framing_camera, MetricConfig};
use crate::pipeline::{make_synthetic_dataset, save_checkpoint, train_toy, PipelineConfig};
use crate::raster::image_io::{mask_to_pgm, normal_map_to_files};
use crate::raster::{render_normals, render_silhouette, CameraWP, RenderOptions, ViewAngle};
use crate::selfcheck::{gradient_suite, SuiteOptions};
use crate::{Error, Vec3};

/// Version of every `--json` payload layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    ValidationFailure = 1,
    Usage = 2,
    Io = 3,
    Numerical = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Clone, Debug)]
pub struct CommandResult {
    pub status: ExitStatus,
    pub summary: String,
    /// Where the JSON payload was written, if requested.
    pub json_path: Option<PathBuf>,
}

impl CommandResult {
    fn ok(summary: String) -> Self {
        CommandResult {
            status: ExitStatus::Success,
            summary,
            json_path: None,
        }
    }
}

/// A failed command: its exit status and message.
#[derive(Debug)]
struct Failure {
    status: ExitStatus,
    message: String,
}

impl Failure {
    fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) | Error::Parse { .. } | Error::Json(_) | Error::Checkpoint(_) | Error::EmptyMesh => {
                ExitStatus::Io
            }
            Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) => ExitStatus::Usage,
            Error::Structural(_) => ExitStatus::ValidationFailure,
            Error::NonFinite(_) | Error::RankDeficient(_) | Error::DegenerateNormal { .. } => ExitStatus::Numerical,
        };
        Failure::new(status, e.to_string())
    }
}

type CmdResult = std::result::Result<CommandResult, Failure>;

#[derive(Debug, Parser)]
#[command(name = "mutualmesh", version, about = "Mesh validation, metrics, rendering, gradient checks and toy training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that an OBJ mesh is a closed, consistently wound 2-manifold.
    Validate {
        /// OBJ file to check
        mesh: PathBuf,
        #[command(flatten)]
        json: JsonOut,
    },
    /// Compare a reconstruction against its ground truth.
    Metrics(MetricsArgs),
    /// Render silhouettes (PGM) or normal maps (PFM).
    Render(RenderArgs),
    /// Finite-difference check of every layer and loss gradient.
    Gradcheck(GradcheckArgs),
    /// Train the two-stage network on synthetic data.
    TrainToy(TrainArgs),
}

#[derive(Debug, Args)]
pub struct JsonOut {
    /// Write a machine-readable report to this path [default: none]
    #[arg(long = "json", value_name = "OUT")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Reconstructed mesh (OBJ)
    pub recon: PathBuf,
    /// Ground-truth mesh (OBJ)
    pub gt: PathBuf,
    /// Ground-truth joints as a JSON array of [x, y, z] [default: regressed from the ground truth]
    #[arg(long, value_name = "PATH", requires = "regressor")]
    pub joints: Option<PathBuf>,
    /// Joint regressor as JSON {"rows": [[[vertex, weight], ...], ...]} [default: none, joint metrics omitted]
    #[arg(long, value_name = "PATH")]
    pub regressor: Option<PathBuf>,
    /// Surface samples per direction
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Normal-map resolution
    #[arg(long, default_value_t = 512)]
    pub res: usize,
    /// Surface sampling seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Length of one model unit in meters
    #[arg(long, default_value_t = 1.0)]
    pub unit_meters: f64,
    #[command(flatten)]
    pub json: JsonOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Silhouette,
    Normals,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CameraChoice {
    /// Frame the mesh with a margin in every yaw view
    Fit,
    /// Unit scale, no translation: [-1, 1]^2 fills the image
    Unit,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Mesh to render (OBJ)
    pub mesh: PathBuf,
    #[arg(long, value_enum, default_value_t = RenderMode::Silhouette)]
    pub mode: RenderMode,
    /// Yaw in degrees, or "all" for 0, 90, 180 and 270
    #[arg(long, default_value = "0")]
    pub angle: String,
    /// Square image resolution
    #[arg(long, default_value_t = 256)]
    pub res: usize,
    #[arg(long, value_enum, default_value_t = CameraChoice::Fit)]
    pub camera: CameraChoice,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub json: JsonOut,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for the random test inputs
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Corrupt one backward pass to exercise the failure path
    #[arg(long, hide = true)]
    pub inject_fault: bool,
    #[command(flatten)]
    pub json: JsonOut,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config with sections network, losses, training, data [default: built-in defaults]
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for the checkpoint, history CSV and held-out OBJ pair
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Suppress per-row progress output
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub json: JsonOut,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let status = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitStatus::Success,
                _ => ExitStatus::Usage,
            };
            return CommandResult {
                status,
                summary: e.render().to_string(),
                json_path: None,
            };
        }
    };
    execute(cli.command)
}

pub fn execute(command: Command) -> CommandResult {
    let outcome = match command {
        Command::Validate { mesh, json } => cmd_validate(&mesh, json.path),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Render(a) => cmd_render(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::TrainToy(a) => cmd_train_toy(a),
    };
    outcome.unwrap_or_else(|f| CommandResult {
        status: f.status,
        summary: format!("error: {}", f.message),
        json_path: None,
    })
}

fn read_file(path: &Path) -> std::result::Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::new(ExitStatus::Io, format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> std::result::Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::new(ExitStatus::Io, format!("{}: {e}", path.display())))
}

/// Any failure to read or parse a mesh file is an I/O error.
fn read_mesh(path: &Path) -> std::result::Result<MeshGraph, Failure> {
    let bytes = read_file(path)?;
    load_obj(&bytes).map_err(|e| Failure::new(ExitStatus::Io, format!("{}: {e}", path.display())))
}

fn finish(mut result: CommandResult, json_path: Option<PathBuf>, command: &str, mut payload: Value) -> CmdResult {
    if let Some(path) = json_path {
        if let Value::Object(map) = &mut payload {
            map.insert("schema_version".into(), json!(SCHEMA_VERSION));
            map.insert("command".into(), json!(command));
            map.insert("exit_code".into(), json!(result.status.code()));
        }
        let text = serde_json::to_string_pretty(&payload).expect("payload serializes");
        write_file(&path, text.as_bytes())?;
        result.json_path = Some(path);
    }
    Ok(result)
}

const VIOLATION_KINDS: [(ViolationKind, &str); 4] = [
    (ViolationKind::BoundaryEdge, "boundary edges"),
    (ViolationKind::NonManifoldEdge, "non-manifold edges"),
    (ViolationKind::InconsistentWinding, "inconsistent windings"),
    (ViolationKind::DegenerateFace, "degenerate faces"),
];

fn cmd_validate(path: &Path, json_path: Option<PathBuf>) -> CmdResult {
    let mesh = read_mesh(path)?;
    let report = validate_manifold(&mesh);
    let mut summary = format!(
        "{}: V={} E={} F={} chi={}\n",
        path.display(),
        mesh.num_vertices(),
        mesh.num_edges(),
        mesh.num_faces(),
        mesh.euler_characteristic()
    );
    for (kind, label) in VIOLATION_KINDS {
        summary.push_str(&format!("  {label:<22}{:>8}\n", report.count(kind)));
    }
    summary.push_str(if report.pass { "PASS" } else { "FAIL" });
    let mut result = CommandResult::ok(summary);
    if !report.pass {
        result.status = ExitStatus::ValidationFailure;
    }
    let payload = json!({
        "mesh": path.display().to_string(),
        "vertices": mesh.num_vertices(),
        "edges": mesh.num_edges(),
        "faces": mesh.num_faces(),
        "euler_characteristic": mesh.euler_characteristic(),
        "report": report,
    });
    finish(result, json_path, "validate", payload)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegressorFile {
    rows: Vec<Vec<(usize, f64)>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> std::result::Result<T, Failure> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::new(ExitStatus::Io, format!("{}: {e}", path.display())))
}

fn require_manifold(mesh: &MeshGraph, path: &Path) -> std::result::Result<(), Failure> {
    let report = validate_manifold(mesh);
    if report.pass {
        Ok(())
    } else {
        Err(Failure::new(
            ExitStatus::ValidationFailure,
            format!(
                "{} is not a closed 2-manifold ({} violations); run `mutualmesh validate` for details",
                path.display(),
                report.violations.len()
            ),
        ))
    }
}

fn cmd_metrics(a: MetricsArgs) -> CmdResult {
    let recon = read_mesh(&a.recon)?;
    let gt = read_mesh(&a.gt)?;
    require_manifold(&recon, &a.recon)?;
    require_manifold(&gt, &a.gt)?;
    let regressor = match &a.regressor {
        Some(p) => {
            let file: RegressorFile = read_json(p)?;
            Some(JointRegressor::new(recon.num_vertices(), file.rows)?)
        }
        None => None,
    };
    let joints = match &a.joints {
        Some(p) => {
            let raw: Vec<[f64; 3]> = read_json(p)?;
            Some(raw.into_iter().map(Vec3::from).collect::<Vec<_>>())
        }
        None => None,
    };
    let cfg = MetricConfig {
        n_samples: a.samples,
        seed: a.seed,
        resolution: a.res,
        unit_meters: a.unit_meters,
    };
    let report = evaluate_pair_with_joints(&recon, &gt, regressor.as_ref(), joints.as_deref(), &cfg)?;
    let result = CommandResult::ok(report.table());
    finish(result, a.json.path, "metrics", json!({ "report": report }))
}

fn parse_angles(spec: &str) -> std::result::Result<Vec<ViewAngle>, Failure> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(ViewAngle::CANONICAL.to_vec());
    }
    match spec.parse::<f64>() {
        Ok(d) if d.is_finite() => Ok(vec![ViewAngle(d)]),
        _ => Err(Failure::new(
            ExitStatus::Usage,
            format!("--angle expects degrees or \"all\", got '{spec}'"),
        )),
    }
}

fn cmd_render(a: RenderArgs) -> CmdResult {
    let angles = parse_angles(&a.angle)?;
    if a.res == 0 {
        return Err(Failure::new(ExitStatus::Usage, "--res must be positive"));
    }
    let mesh = read_mesh(&a.mesh)?;
    let cam = match a.camera {
        CameraChoice::Fit => framing_camera(&mesh, a.res)?,
        CameraChoice::Unit => CameraWP::centered(a.res),
    };
    fs::create_dir_all(&a.out).map_err(|e| Failure::new(ExitStatus::Io, format!("{}: {e}", a.out.display())))?;
    let stem = a.mesh.file_stem().map_or("mesh".into(), |s| s.to_string_lossy().into_owned());
    let opts = RenderOptions::default().with_pivot(mesh.centroid());
    let mut files = Vec::new();
    let mut summary = String::new();
    for angle in angles {
        let tag = format!("{stem}_{}_{:03}", mode_name(a.mode), angle.degrees().round() as i64);
        let (path, bytes, covered) = match a.mode {
            RenderMode::Silhouette => {
                let mask = render_silhouette(&mesh, angle, &cam, opts)?;
                (a.out.join(format!("{tag}.pgm")), mask_to_pgm(&mask), mask.count())
            }
            RenderMode::Normals => {
                let map = render_normals(&mesh, angle, &cam, opts)?;
                (a.out.join(format!("{tag}.pfm")), normal_map_to_files(&map).0, map.mask.count())
            }
        };
        write_file(&path, &bytes)?;
        summary.push_str(&format!("{} ({covered} foreground pixels)\n", path.display()));
        files.push(path.display().to_string());
    }
    let payload = json!({
        "mesh": a.mesh.display().to_string(),
        "mode": mode_name(a.mode),
        "resolution": a.res,
        "camera": { "scale": cam.scale, "tx": cam.tx, "ty": cam.ty },
        "files": files,
    });
    finish(CommandResult::ok(summary), a.json.path, "render", payload)
}

fn mode_name(mode: RenderMode) -> &'static str {
    match mode {
        RenderMode::Silhouette => "silhouette",
        RenderMode::Normals => "normals",
    }
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    if !(a.tolerance > 0.0 && a.step > 0.0) {
        return Err(Failure::new(ExitStatus::Usage, "--tolerance and --step must be positive"));
    }
    let suite = gradient_suite(SuiteOptions {
        seed: a.seed,
        tolerance: a.tolerance,
        step: a.step,
        inject_fault: a.inject_fault,
    })?;
    let mut result = CommandResult::ok(suite.to_string());
    if !suite.passed() {
        result.status = ExitStatus::Numerical;
    }
    finish(result, a.json.path, "gradcheck", suite.to_json_value())
}

pub const CHECKPOINT_FILE: &str = "checkpoint.mmnet";
pub const HISTORY_FILE: &str = "history.csv";
pub const BODY_FILE: &str = "heldout_body.obj";
pub const CLOTHED_FILE: &str = "heldout_clothed.obj";

fn cmd_train_toy(a: TrainArgs) -> CmdResult {
    let cfg = match &a.config {
        Some(p) => {
            let bytes = read_file(p)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Failure::new(ExitStatus::Usage, format!("{}: config is not UTF-8", p.display())))?;
            PipelineConfig::from_json(&text)
                .map_err(|e| Failure::new(ExitStatus::Usage, format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::new(ExitStatus::Io, format!("{}: {e}", a.out_dir.display())))?;
    let quiet = a.quiet;
    let (net, history) = train_toy(&cfg, |row| {
        if !quiet {
            if let Some(h) = row.heldout {
                eprintln!(
                    "step {:>6}  total {:.6}  heldout mvpe {:.6}  chamfer {:.6}",
                    row.step, row.losses.total, h.mvpe, h.chamfer
                );
            }
        }
    })?;
    let data = make_synthetic_dataset(&cfg.data, cfg.network.template_subdivisions)?;
    let heldout = &data[cfg.data.num_samples];
    let pred = net.forward(heldout)?;
    let paths = [CHECKPOINT_FILE, HISTORY_FILE, BODY_FILE, CLOTHED_FILE].map(|f| a.out_dir.join(f));
    write_file(&paths[0], &save_checkpoint(&net))?;
    write_file(&paths[1], history.to_csv().as_bytes())?;
    write_file(&paths[2], &write_obj(&pred.body)?)?;
    write_file(&paths[3], &write_obj(&pred.clothed)?)?;

    let first = history.rows.first().map(|r| r.losses.total).unwrap_or(f64::NAN);
    let last = history.rows.last().map(|r| r.losses.total).unwrap_or(f64::NAN);
    let heldout_rows: Vec<Value> = history
        .rows
        .iter()
        .filter_map(|r| r.heldout.map(|h| json!({ "step": r.step, "mvpe": h.mvpe, "chamfer": h.chamfer })))
        .collect();
    let mut summary = format!(
        "trained {} steps: total loss {first:.6} -> {last:.6} ({:.1}% of initial)\n",
        cfg.training.steps,
        100.0 * last / first
    );
    for p in &paths {
        summary.push_str(&format!("wrote {}\n", p.display()));
    }
    let payload = json!({
        "steps": cfg.training.steps,
        "initial_total": first,
        "final_total": last,
        "heldout": heldout_rows,
        "files": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "config": serde_json::to_value(&cfg).expect("config serializes"),
    });
    finish(CommandResult::ok(summary), a.json.path, "train-toy", payload)
}
