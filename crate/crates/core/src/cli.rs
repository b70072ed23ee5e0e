//! Command-line front end: `simulate`, `validate` and `curves`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::engine::{SolverWarnings, World};
use crate::error::{SceneError, SimulationError};
use crate::scene::diagnostics::DiagnosticsWriter;
use crate::scene::writer::FrameWriter;
use crate::scene::{load_scene, DiagnosticsRow, SceneConfig};
use crate::viscosity::viscosity_curve;

pub const EXIT_OK: i32 = 0;
/// Invalid scene, bad arguments or an I/O failure.
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

/// Overrides the output directory when `--out` is absent.
pub const OUTPUT_DIR_ENV: &str = "NNS_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "nns", version, about = "Non-Newtonian SPH simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scene and write frames plus diagnostics.csv.
    Simulate {
        scene: PathBuf,
        /// Number of frames after the initial one.
        #[arg(long)]
        frames: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Single worker thread; output is bitwise reproducible.
        #[arg(long)]
        deterministic: bool,
    },
    /// Parse, validate and sample a scene without running it.
    Validate { scene: PathBuf },
    /// Print `strain_rate,viscosity` CSV for one material's viscosity law.
    Curves {
        scene: PathBuf,
        /// Material name in the scene.
        #[arg(long)]
        model: String,
        /// Strain-rate range `LO:HI`, sampled logarithmically.
        #[arg(long)]
        range: String,
        #[arg(long, default_value_t = 61)]
        points: usize,
    },
}

fn scene_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load(path: &Path) -> Result<SceneConfig, i32> {
    let cfg = load_scene(path).map_err(|e| report_scene_error(&e))?;
    for w in cfg.warnings() {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn report_scene_error(e: &SceneError) -> i32 {
    match e {
        SceneError::Validation(errs) => {
            eprintln!("error: invalid scene");
            for err in errs {
                eprintln!("  - {err}");
            }
        }
        other => eprintln!("error: {other}"),
    }
    EXIT_INVALID
}

fn parse_range(text: &str) -> Option<(f64, f64)> {
    let (lo, hi) = text.split_once(':')?;
    let (lo, hi) = (lo.trim().parse::<f64>().ok()?, hi.trim().parse::<f64>().ok()?);
    (lo > 0.0 && hi > lo && hi.is_finite()).then_some((lo, hi))
}

/// Runs the CLI with explicit arguments (the first is the program name) and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Validate { scene } => validate(&scene),
        Command::Curves { scene, model, range, points } => curves(&scene, &model, &range, points),
        Command::Simulate { scene, frames, out, threads, seed, deterministic } => {
            let threads = if deterministic { Some(1) } else { threads };
            let run = || simulate(&scene, frames, out.as_deref(), seed);
            match threads {
                Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build() {
                    Ok(pool) => pool.install(run),
                    Err(e) => {
                        eprintln!("error: cannot start {k} worker threads: {e}");
                        EXIT_INVALID
                    }
                },
                None => run(),
            }
        }
    }
}

fn validate(path: &Path) -> i32 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match World::from_scene(&cfg, &scene_dir(path), 0) {
        Ok(w) => {
            println!(
                "ok: {} particles, {} boundary samples, {} rigid spheres",
                w.len(),
                w.boundary_positions.len(),
                w.spheres.len()
            );
            EXIT_OK
        }
        Err(e) => report_scene_error(&e),
    }
}

fn curves(path: &Path, model: &str, range: &str, points: usize) -> i32 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let Some(material) = cfg.materials.get(model) else {
        let known: Vec<&str> = cfg.materials.keys().map(String::as_str).collect();
        eprintln!("error: no material named \"{model}\" (known: {})", known.join(", "));
        return EXIT_INVALID;
    };
    let Some((lo, hi)) = parse_range(range) else {
        eprintln!("error: --range must be LO:HI with 0 < LO < HI, got \"{range}\"");
        return EXIT_INVALID;
    };
    if points < 2 {
        eprintln!("error: --points must be at least 2");
        return EXIT_INVALID;
    }
    println!("strain_rate,viscosity");
    for (rate, mu) in viscosity_curve(&material.viscosity, lo, hi, points) {
        println!("{rate},{mu}");
    }
    EXIT_OK
}

fn output_dir(cfg: &SceneConfig, out: Option<&Path>) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => PathBuf::from(&cfg.output.directory),
    }
}

fn simulate(path: &Path, frames: Option<u32>, out: Option<&Path>, seed: u64) -> i32 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut world = match World::from_scene(&cfg, &scene_dir(path), seed) {
        Ok(w) => w,
        Err(e) => return report_scene_error(&e),
    };
    let dir = output_dir(&cfg, out);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return EXIT_INVALID;
    }
    let frames = frames.unwrap_or(cfg.output.frames);
    log::info!("{} particles, {frames} frames into {}", world.len(), dir.display());

    let writer = FrameWriter::spawn(dir.clone(), cfg.output.formats.clone());
    let mut diagnostics = match DiagnosticsWriter::create(&dir.join("diagnostics.csv")) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let outcome = run_frames(&mut world, &writer, &mut diagnostics, frames, cfg.output.frame_interval);
    let flushed = diagnostics.flush();
    let written = writer.finish();
    for s in &world.spheres {
        let name: String = s.name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        if let Err(e) = std::fs::write(dir.join(format!("rigid_{name}.csv")), s.trace_csv()) {
            eprintln!("error: {e}");
        }
    }
    let w = world.warnings;
    if (SolverWarnings { yield_exceeded: 0, ..w }) != SolverWarnings::default() {
        log::warn!(
            "solver warnings: {} divergence, {} density and {} viscous solves hit their caps; {} unstable thermal steps; {} degenerate rotations",
            w.divergence_unconverged,
            w.density_unconverged,
            w.viscous_unconverged,
            w.thermal_unstable,
            w.degenerate_rotations
        );
    }
    if w.yield_exceeded > 0 {
        log::warn!("{} particles reached the plastic limit", w.yield_exceeded);
    }
    match outcome {
        Err(e @ SimulationError::Diverged { .. }) => {
            eprintln!("error: {e}");
            EXIT_DIVERGED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
        Ok(()) => match (flushed, written) {
            (Ok(()), Ok(n)) => {
                log::info!("wrote {n} frames");
                EXIT_OK
            }
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("error: {e}");
                EXIT_INVALID
            }
        },
    }
}

fn run_frames(
    world: &mut World,
    writer: &FrameWriter,
    diagnostics: &mut DiagnosticsWriter,
    frames: u32,
    interval: f64,
) -> Result<(), SimulationError> {
    if !writer.submit(world.frame_record(0)) {
        return Ok(());
    }
    for k in 1..=frames {
        let mut io = Ok(());
        world.advance_to(k as f64 * interval, |r| {
            let row = DiagnosticsRow {
                frame: k,
                time: r.time,
                dt: r.dt,
                max_mu: r.max_mu,
                max_strain_rate: r.max_strain_rate,
                density_err: r.density.error,
                cg_iters: r.viscous.iterations,
                kinetic_energy: r.kinetic_energy,
            };
            if io.is_ok() {
                io = diagnostics.push(&row);
            }
        })?;
        io?;
        // A stopped writer reports its error from `finish`.
        if !writer.submit(world.frame_record(k)) {
            return Ok(());
        }
        world.last_good_frame = k;
    }
    Ok(())
}
