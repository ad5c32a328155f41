//! Command-line front end: scene simulation, reconstruction, metric
//! evaluation, and grid sweeps over sampling schemes and algorithms.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage/input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tarim_core::datagen::{default_scene_spec, simulate_acquisition, synth_scene, SceneSpec};
use tarim_core::eval::{
    avg_target_intensity, ptcr, rows_to_csv, run_algorithm, target_recall_precision, Algorithm,
    CompareRow, MaskSpec, MetricReport,
};
use tarim_core::io::{
    read_cimg, read_lmap, read_measurement, write_cimg, write_lmap, write_mask, write_measurement,
    write_pgm_labels, write_pgm_magnitude, PgmScale, DEFAULT_DB_RANGE,
};
use tarim_core::math::stage_seed;
use tarim_core::model::{MaskKind, NoiseSpec};
use tarim_core::pipeline::{tar_imaging, PipelineConfig};
use tarim_core::solver::SolverConfig;
use tarim_core::CoreError;

/// Environment variable naming the default output root when --out is absent.
const OUT_ROOT_ENV: &str = "TARIM_OUT";

#[derive(Parser)]
#[command(name = "tarim", version, about = "Target-oriented SAR image formation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and its undersampled measurement.
    Simulate(SimulateArgs),
    /// Reconstruct an image from a stored measurement.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against truth labels.
    Evaluate(EvaluateArgs),
    /// Run a grid of (scene, mask, algorithm) cells and collect a CSV table.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct MaskArgs {
    /// Sampling scheme.
    #[arg(long, default_value = "mask1")]
    mask: String,
    /// Global sampling rate (Mask-1 only).
    #[arg(long, conflicts_with_all = ["eta_c", "eta_r"])]
    eta: Option<f64>,
    /// Column sampling rate (Mask-2/3).
    #[arg(long)]
    eta_c: Option<f64>,
    /// Per-column rate (Mask-3).
    #[arg(long)]
    eta_r: Option<f64>,
}

impl MaskArgs {
    fn to_spec(&self) -> Result<MaskSpec, CliError> {
        let kind = MaskKind::parse(&self.mask).map_err(CliError::usage)?;
        let spec = match kind {
            MaskKind::Mask1 => {
                if self.eta_c.is_some() || self.eta_r.is_some() {
                    return Err(CliError::Usage(
                        "mask1 takes --eta, not --eta-c/--eta-r".into(),
                    ));
                }
                MaskSpec {
                    kind,
                    eta: self.eta.unwrap_or(0.5),
                    eta_c: 1.0,
                    eta_r: 1.0,
                }
            }
            MaskKind::Mask2 | MaskKind::Mask3 => {
                let eta_c = self
                    .eta_c
                    .ok_or_else(|| CliError::Usage(format!("{} requires --eta-c", kind.name())))?;
                let eta_r = match kind {
                    MaskKind::Mask3 => self
                        .eta_r
                        .ok_or_else(|| CliError::Usage("mask3 requires --eta-r".into()))?,
                    _ => {
                        if self.eta_r.is_some() {
                            return Err(CliError::Usage("mask2 takes only --eta-c".into()));
                        }
                        1.0
                    }
                };
                MaskSpec {
                    kind,
                    eta: eta_c * eta_r,
                    eta_c,
                    eta_r,
                }
            }
        };
        Ok(spec)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON SceneSpec file; omitted means the built-in default scene.
    #[arg(long)]
    scene_config: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    cols: usize,
    #[command(flatten)]
    mask: MaskArgs,
    /// Complex measurement noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to $TARIM_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Measurement file written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Algorithm: pf | poi | reg | irwl1 | tar.
    #[arg(long)]
    algo: String,
    /// Final regularization weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Schedule rate constant (tar).
    #[arg(long, default_value_t = 50.0)]
    lambda0: f64,
    /// MRF smoothness weight (tar).
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Global iteration cap (tar).
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// dB dynamic range of the exported PGM.
    #[arg(long, default_value_t = DEFAULT_DB_RANGE)]
    db_range: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reconstruction CIMG file.
    #[arg(long)]
    recon: PathBuf,
    /// Ground-truth LMAP file.
    #[arg(long)]
    truth: PathBuf,
    /// Predicted LMAP file (tar runs); enables recall/precision.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output format: text | csv.
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep matrix config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override; defaults to the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Sweep matrix: scenes x masks x algorithms.
#[derive(serde::Serialize, serde::Deserialize)]
struct SweepConfig {
    /// Scene specs; empty means one built-in default 64x64 scene.
    #[serde(default)]
    scenes: Vec<SceneSpec>,
    masks: Vec<MaskSpec>,
    algorithms: Vec<Algorithm>,
    #[serde(default)]
    sigma: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "SolverConfig::default")]
    solver: SolverConfig,
    #[serde(default = "PipelineConfig::default")]
    pipeline: PipelineConfig,
}

/// Everything needed to bit-reproduce one run.
#[derive(serde::Serialize)]
struct RunManifest {
    tool_version: &'static str,
    command: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    created_unix: u64,
}

impl RunManifest {
    fn new(
        command: &str,
        config: serde_json::Value,
        seed: u64,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Self {
        let paths = |ps: &[&Path]| ps.iter().map(|p| p.display().to_string()).collect();
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config,
            seed,
            inputs: paths(inputs),
            outputs: paths(outputs),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).map_err(CliError::usage)?,
        )
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    }
}

enum CliError {
    /// Bad flags, unreadable/invalid input files: exit 2.
    Usage(String),
    /// The computation itself failed: exit 1.
    Numerical(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::SolverFailure { .. }
            | CoreError::DegenerateInput(_)
            | CoreError::DegenerateClass(_) => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn out_dir(flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = match flag {
        Some(d) => d.clone(),
        None => std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| {
                CliError::Usage(format!("no --out given and {OUT_ROOT_ENV} is unset"))
            })?,
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let dir = out_dir(&args.out)?;
    let spec = match &args.scene_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let mut spec: SceneSpec = serde_json::from_str(&text).map_err(CliError::usage)?;
            spec.seed = stage_seed(args.seed, 0, "scene");
            spec
        }
        None => default_scene_spec(args.rows, args.cols, stage_seed(args.seed, 0, "scene")),
    };
    spec.validate()?;
    let mask_spec = args.mask.to_spec()?;
    let (scene, truth) = synth_scene::<f64>(&spec)?;
    let mask = mask_spec.build(spec.rows, spec.cols, stage_seed(args.seed, 0, "mask"))?;
    let noise = NoiseSpec::new(args.sigma)?;
    let m = simulate_acquisition(&scene, &mask, noise, stage_seed(args.seed, 0, "noise"))?;

    let scene_path = dir.join("scene.cimg");
    let truth_path = dir.join("truth.lmap");
    let mask_path = dir.join("sample.mask");
    let meas_path = dir.join("measurement.cvec");
    write_cimg(&scene_path, &scene)?;
    write_lmap(&truth_path, &truth)?;
    write_mask(&mask_path, &mask)?;
    write_measurement(&meas_path, &m)?;
    let config = serde_json::json!({
        "scene": spec,
        "mask": mask_spec,
        "sigma": args.sigma,
    });
    RunManifest::new(
        "simulate",
        config,
        args.seed,
        &[],
        &[&scene_path, &truth_path, &mask_path, &meas_path],
    )
    .write(&dir.join("manifest.json"))?;
    println!("simulate: wrote 5 files to {}", dir.display());
    Ok(())
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<(), CliError> {
    let dir = out_dir(&args.out)?;
    let algo = Algorithm::parse(&args.algo)?;
    let m = read_measurement::<f64>(&args.input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.input.display())))?;
    let mask = m.mask().clone();

    let mut solver = SolverConfig::default();
    let mut pipeline = PipelineConfig {
        lambda0: args.lambda0,
        beta: args.beta,
        max_iter: args.max_iter,
        seed: args.seed,
        ..Default::default()
    };
    if let Some(lambda) = args.lambda {
        solver.lambda = lambda;
        pipeline.lambda = lambda;
    }

    let recon_path = dir.join("recon.cimg");
    let pgm_path = dir.join("recon.pgm");
    let mut outputs = vec![recon_path.clone(), pgm_path.clone()];
    let image = if algo == Algorithm::Tar {
        let run = tar_imaging(&m, &mask, &pipeline, None)?;
        let labels_path = dir.join("labels.lmap");
        let labels_pgm = dir.join("labels.pgm");
        let diag_path = dir.join("diagnostics.json");
        write_lmap(&labels_path, &run.labels)?;
        write_pgm_labels(&labels_pgm, &run.labels)?;
        std::fs::write(
            &diag_path,
            serde_json::to_string_pretty(&run.diagnostics).map_err(CliError::usage)?,
        )?;
        outputs.extend([labels_path, labels_pgm, diag_path]);
        run.image
    } else {
        run_algorithm(algo, &m, &mask, &solver, &pipeline)?.0
    };
    write_cimg(&recon_path, &image)?;
    write_pgm_magnitude(
        &pgm_path,
        &image,
        PgmScale::Db {
            range_db: args.db_range,
        },
        false,
    )?;
    let config = serde_json::json!({
        "algo": algo,
        "solver": solver,
        "pipeline": pipeline,
    });
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    RunManifest::new("reconstruct", config, args.seed, &[&args.input], &out_refs)
        .write(&dir.join("manifest.json"))?;
    println!("reconstruct: {} -> {}", algo.name(), recon_path.display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let recon = read_cimg::<f64>(&args.recon)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.recon.display())))?;
    let truth = read_lmap(&args.truth)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.truth.display())))?;
    let (recall, precision) = match &args.labels {
        Some(path) => {
            let pred = read_lmap(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let (r, p) = target_recall_precision(&pred, &truth)?;
            (Some(r), Some(p))
        }
        None => (None, None),
    };
    let report = MetricReport {
        ptcr_db: ptcr(&recon, &truth)?,
        avg_target_intensity: avg_target_intensity(&recon, &truth)?,
        recall,
        precision,
    };
    match args.format.as_str() {
        "text" => {
            println!("ptcr_db: {:.4}", report.ptcr_db);
            println!("chi_t: {:.6}", report.avg_target_intensity);
            if let (Some(r), Some(p)) = (report.recall, report.precision) {
                println!("recall: {r:.4}");
                println!("precision: {p:.4}");
            }
        }
        "csv" => {
            let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            println!("ptcr_db,chi_t,recall,precision");
            println!(
                "{},{},{},{}",
                report.ptcr_db,
                report.avg_target_intensity,
                opt(report.recall),
                opt(report.precision)
            );
        }
        other => return Err(CliError::Usage(format!("unknown format {other}"))),
    }
    Ok(())
}

/// One sweep cell: a (scene, mask, algorithm) triple with derived seeds.
struct SweepCell {
    scene_name: String,
    mask_index: usize,
    spec: MaskSpec,
    algo: Algorithm,
    mask_seed: u64,
    noise_seed: u64,
    pipeline_seed: u64,
}

fn cell_dir_name(cell: &SweepCell) -> String {
    format!(
        "{}_{}_{}_{}",
        cell.scene_name,
        cell.spec.kind.name(),
        cell.mask_index,
        cell.algo.name()
    )
}

fn run_sweep_cell(
    cfg: &SweepConfig,
    scenes: &[(
        String,
        tarim_core::ComplexImage64,
        tarim_core::semantics::LabelMap,
    )],
    cell: &SweepCell,
    dir: &Path,
) -> Result<CompareRow, CliError> {
    let (name, scene, truth) = scenes
        .iter()
        .find(|(n, _, _)| *n == cell.scene_name)
        .expect("cell references a known scene");
    let mask = cell
        .spec
        .build(scene.rows(), scene.cols(), cell.mask_seed)?;
    let m = simulate_acquisition(scene, &mask, NoiseSpec::new(cfg.sigma)?, cell.noise_seed)?;
    let mut pipeline = cfg.pipeline.clone();
    pipeline.seed = cell.pipeline_seed;
    let (g, labels) = run_algorithm(cell.algo, &m, &mask, &cfg.solver, &pipeline)?;
    let (recall, precision) = match &labels {
        Some(l) => {
            let (r, p) = target_recall_precision(l, truth)?;
            (Some(r), Some(p))
        }
        None => (None, None),
    };
    let row = CompareRow {
        scene: name.clone(),
        algorithm: cell.algo.name(),
        mask_kind: cell.spec.kind,
        eta: cell.spec.eta,
        eta_c: cell.spec.eta_c,
        eta_r: cell.spec.eta_r,
        ptcr_db: ptcr(&g, truth)?,
        chi_t: avg_target_intensity(&g, truth)?,
        recall,
        precision,
    };
    std::fs::create_dir_all(dir)?;
    let recon_path = dir.join("recon.cimg");
    write_cimg(&recon_path, &g)?;
    let mut outputs = vec![recon_path];
    if let Some(l) = &labels {
        let labels_path = dir.join("labels.lmap");
        write_lmap(&labels_path, l)?;
        outputs.push(labels_path);
    }
    let row_path = dir.join("row.csv");
    std::fs::write(&row_path, format!("{}\n", row.to_csv()))?;
    outputs.push(row_path);
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    RunManifest::new(
        "sweep-cell",
        cell_config_json(cfg, cell),
        cfg.seed,
        &[],
        &out_refs,
    )
    .write(&dir.join("manifest.json"))?;
    Ok(row)
}

/// The config snapshot a finished cell is checked against on resume.
fn cell_config_json(cfg: &SweepConfig, cell: &SweepCell) -> serde_json::Value {
    serde_json::json!({
        "scene": cell.scene_name,
        "mask": cell.spec,
        "algo": cell.algo,
        "sigma": cfg.sigma,
        "seed": cfg.seed,
        "mask_seed": cell.mask_seed,
        "noise_seed": cell.noise_seed,
        "pipeline_seed": cell.pipeline_seed,
        "solver": cfg.solver,
        "pipeline": cfg.pipeline,
    })
}

/// A cell is done when its manifest records the same config snapshot and
/// its row file is present.
fn cell_finished(cfg: &SweepConfig, cell: &SweepCell, dir: &Path) -> bool {
    let Ok(text) = std::fs::read_to_string(dir.join("manifest.json")) else {
        return false;
    };
    let Ok(manifest): Result<serde_json::Value, _> = serde_json::from_str(&text) else {
        return false;
    };
    manifest.get("config") == Some(&cell_config_json(cfg, cell)) && dir.join("row.csv").is_file()
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let dir = out_dir(&args.out)?;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg: SweepConfig = serde_json::from_str(&text).map_err(CliError::usage)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.masks.is_empty() || cfg.algorithms.is_empty() {
        return Err(CliError::Usage("sweep needs masks and algorithms".into()));
    }

    let specs = if cfg.scenes.is_empty() {
        vec![default_scene_spec(64, 64, stage_seed(cfg.seed, 0, "scene"))]
    } else {
        cfg.scenes.clone()
    };
    let mut scenes = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let (scene, truth) = synth_scene::<f64>(spec)?;
        scenes.push((format!("scene{i}"), scene, truth));
    }

    // cell seeds depend only on the (scene, mask) grid position, so adding
    // algorithms never changes the sampled data
    let mut cells = Vec::new();
    for (si, (name, _, _)) in scenes.iter().enumerate() {
        for (mi, spec) in cfg.masks.iter().enumerate() {
            let grid = (si * cfg.masks.len() + mi) as u32;
            for &algo in &cfg.algorithms {
                cells.push(SweepCell {
                    scene_name: name.clone(),
                    mask_index: mi,
                    spec: *spec,
                    algo,
                    mask_seed: stage_seed(cfg.seed, grid, "mask"),
                    noise_seed: stage_seed(cfg.seed, grid, "noise"),
                    pipeline_seed: stage_seed(cfg.seed, grid, "pipeline"),
                });
            }
        }
    }

    let jobs = args.jobs.max(1);
    let mut rows: Vec<Option<CompareRow>> = Vec::new();
    rows.resize_with(cells.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let row_slots: Vec<std::sync::Mutex<Option<Result<CompareRow, CliError>>>> =
        cells.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let cell_dir = dir.join(cell_dir_name(cell));
                let result = if cell_finished(&cfg, cell, &cell_dir) {
                    read_finished_row(&cell_dir)
                } else {
                    run_sweep_cell(&cfg, &scenes, cell, &cell_dir)
                };
                *row_slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    for (slot, row) in row_slots.into_iter().zip(rows.iter_mut()) {
        *row = Some(slot.into_inner().expect("slot lock").expect("cell ran")?);
    }
    let rows: Vec<CompareRow> = rows.into_iter().map(|r| r.expect("filled")).collect();

    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, rows_to_csv(&rows))?;
    let config = serde_json::to_value(&cfg).map_err(CliError::usage)?;
    RunManifest::new("sweep", config, cfg.seed, &[&args.config], &[&csv_path])
        .write(&dir.join("manifest.json"))?;
    println!("sweep: {} cells -> {}", cells.len(), csv_path.display());
    Ok(())
}

/// Reload the row of an already-finished cell verbatim, preserving the
/// original float formatting.
fn read_finished_row(dir: &Path) -> Result<CompareRow, CliError> {
    let text = std::fs::read_to_string(dir.join("row.csv"))?;
    let line = text.trim_end();
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 10 {
        return Err(CliError::Usage(format!(
            "corrupt row file in {}",
            dir.display()
        )));
    }
    let num = |s: &str| -> Result<f64, CliError> {
        s.parse()
            .map_err(|_| CliError::Usage(format!("corrupt row file in {}", dir.display())))
    };
    let opt = |s: &str| -> Result<Option<f64>, CliError> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    Ok(CompareRow {
        scene: fields[0].to_string(),
        algorithm: Algorithm::parse(fields[1])?.name(),
        mask_kind: MaskKind::parse(fields[2])?,
        eta: num(fields[3])?,
        eta_c: num(fields[4])?,
        eta_r: num(fields[5])?,
        ptcr_db: num(fields[6])?,
        chi_t: num(fields[7])?,
        recall: opt(fields[8])?,
        precision: opt(fields[9])?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
