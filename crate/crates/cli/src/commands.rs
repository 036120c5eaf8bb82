use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use beadnet::dataset::{split_counts, split_episodes, Dataset, DatasetManifest, DatasetWriter, EpisodeMeta, Split, DEFAULT_FRACTIONS};
use beadnet::evaluation::{self, stream_infer, EvalOptions, Predictor, ZeroBaseline};
use beadnet::groundtruth::{center_of_pressure, total_force};
use beadnet::model::checkpoint::{file_sha256, load_params, Checkpoint};
use beadnet::model::UNetConfig;
use beadnet::simulator::{generate_episode, SimConfig};
use beadnet::training::{self, TrainConfig, TrainState, LATEST_CHECKPOINT};
use beadnet::{Frame, SensorGeometry};
use clap::ArgMatches;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, Baseline, Cli, Command, ECHO_FILE};
use crate::CliError;

pub const WORKERS_ENV: &str = "BEADNET_WORKERS";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn setup_workers(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("{WORKERS_ENV}={v} is not a worker count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("worker count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: Cli, matches: &ArgMatches) -> Result<(), CliError> {
    setup_workers(cli.workers)?;
    let file = cli.config.as_deref();
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::Gen(a) => gen(&a.out, a.force, config::resolve_gen(a, sub, file)?),
        Command::Train(a) => train(&a.out, config::resolve_train(a, sub, file)?),
        Command::Eval(a) => eval(&a.out, config::resolve_eval(a, sub, file)?),
        Command::Infer(a) => infer(&a.out, config::resolve_infer(a, sub, file)?),
    }
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn gen(out: &Path, force: bool, cfg: config::GenConfig) -> Result<(), CliError> {
    let sim = SimConfig {
        seed: cfg.seed,
        n_episodes: cfg.episodes,
        frames_per_episode: cfg.frames,
        force_peak_n: cfg.peak_force_n,
        finger_radius_mm: cfg.finger_radius_mm,
        noise_std: cfg.noise_std,
        geom: SensorGeometry::with_grid(cfg.grid)?,
        ..SimConfig::default()
    };
    sim.validate()?;

    let non_empty = out.is_dir() && fs::read_dir(out).map_err(|e| io_err(out, e))?.next().is_some();
    if non_empty {
        if !force {
            return Err(CliError::Data(format!(
                "{} is not empty; pass --force to replace its dataset",
                out.display()
            )));
        }
        for name in ["manifest.json", ECHO_FILE] {
            let p = out.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
            }
        }
        let eps = out.join("episodes");
        if eps.exists() {
            fs::remove_dir_all(&eps).map_err(|e| io_err(&eps, e))?;
        }
    }
    make_dir(out)?;

    let provenance = format!(
        "synthetic bead-bag simulator; seed {}, {} episodes, {} mean frames, finger radius {} mm, peak force up to {} N, noise std {}",
        cfg.seed, cfg.episodes, cfg.frames, cfg.finger_radius_mm, cfg.peak_force_n, cfg.noise_std
    );
    let mut writer = DatasetWriter::create(out, sim.geom, provenance)?;
    // Episodes are generated in parallel chunks but written in index order.
    let chunk = rayon::current_num_threads().max(1);
    let mut next = 0;
    while next < sim.n_episodes {
        let end = (next + chunk).min(sim.n_episodes);
        let eps = (next..end)
            .into_par_iter()
            .map(|i| generate_episode(&sim, i))
            .collect::<Result<Vec<_>, _>>()?;
        for ep in &eps {
            writer.write_episode(ep)?;
        }
        next = end;
    }
    let ids = writer.manifest().episodes.clone();
    let split = split_episodes(&ids, DEFAULT_FRACTIONS, cfg.seed)?;
    let (tr, va, te) = split_counts(&split);
    writer.set_split(split)?;
    config::echo(out, "gen", &cfg)?;
    println!("wrote {} episodes to {} (train {tr}, val {va}, test {te})", ids.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    steps: u64,
    best_checkpoint: String,
    latest_checkpoint: String,
    params_sha256: String,
    best_val_mse: Option<f64>,
    best_val_step: Option<u64>,
}

fn train(out: &Path, cfg: config::TrainRunConfig) -> Result<(), CliError> {
    let dataset = Dataset::load(&cfg.data)?;
    let unet = UNetConfig {
        h: cfg.h,
        grid: dataset.geometry().grid,
        base_channels: cfg.base_channels,
        leaky_slope: cfg.leaky_slope,
        output_scale: cfg.output_scale,
    };
    let tc = TrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch,
        lr: cfg.lr,
        seed: cfg.seed,
        val_every: cfg.val_every,
        val_stride: cfg.val_stride,
        checkpoint_dir: out.to_path_buf(),
        ..TrainConfig::default()
    };
    make_dir(out)?;
    config::echo(out, "train", &cfg)?;
    let latest = out.join(LATEST_CHECKPOINT);
    let best = if cfg.resume {
        let state = TrainState::from_checkpoint(Checkpoint::load(&latest)?)?;
        if state.config() != unet {
            return Err(CliError::Data(format!(
                "{} was trained with a different network configuration",
                latest.display()
            )));
        }
        training::resume(&tc, &latest, &dataset)?
    } else {
        training::fit(&tc, unet, &dataset)?
    };
    let state = TrainState::from_checkpoint(Checkpoint::load(&latest)?)?;
    let summary = TrainSummary {
        steps: state.step,
        best_checkpoint: file_name(&best),
        latest_checkpoint: LATEST_CHECKPOINT.into(),
        params_sha256: state.params.hash(),
        best_val_mse: state.best_val.map(|b| b.0),
        best_val_step: state.best_val.map(|b| b.1),
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(beadnet::Error::from)?;
    json.push('\n');
    let path = out.join("summary.json");
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    println!("trained {} steps; best checkpoint {}", state.step, best.display());
    println!("params sha256 {}", summary.params_sha256);
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn eval(out: &Path, cfg: config::EvalConfig) -> Result<(), CliError> {
    let split: Split = cfg.split.parse().map_err(|e: beadnet::Error| CliError::Usage(e.to_string()))?;
    let dataset = Dataset::load(&cfg.data)?;
    let grid = dataset.geometry().grid;
    let config_echo = serde_json::to_value(&cfg).map_err(beadnet::Error::from)?;
    let mut opts = EvalOptions {
        split,
        gate_n: cfg.gate_n,
        samples: cfg.samples,
        config: Some(config_echo),
        ..EvalOptions::default()
    };
    let evaluation = match (cfg.baseline, &cfg.checkpoint) {
        (Some(Baseline::Zero), _) => {
            opts.predictor = "zero".into();
            evaluation::evaluate(&ZeroBaseline { h: cfg.h, grid }, &dataset, &opts)?
        }
        (None, Some(ck)) => {
            let params = load_params(ck)?;
            opts.checkpoint_sha256 = Some(file_sha256(ck)?);
            evaluation::evaluate(&params, &dataset, &opts)?
        }
        (None, None) => return Err(CliError::Usage("either --checkpoint or --baseline is required".into())),
    };
    evaluation::write_outputs(&evaluation, out)?;
    config::echo(out, "eval", &cfg)?;
    print!("{}", evaluation::report_text(&evaluation.report));
    Ok(())
}

/// Geometry of an episode directory: from its dataset manifest when present.
fn source_geometry(dir: &Path, grid: usize) -> Result<SensorGeometry, CliError> {
    let root = dir.parent().and_then(Path::parent);
    if let Some(root) = root.filter(|r| r.join("manifest.json").is_file()) {
        let g = DatasetManifest::read(root)?.geometry;
        if g.grid != grid {
            return Err(CliError::Data(format!(
                "episode frames are {}x{}, checkpoint expects {grid}",
                g.grid, g.grid
            )));
        }
        return Ok(g);
    }
    Ok(SensorGeometry::with_grid(grid)?)
}

fn episode_frames(dir: &Path, geom: &SensorGeometry, frame_hz: f64) -> Result<Vec<Frame>, CliError> {
    let meta_path = dir.join("meta.json");
    let meta: EpisodeMeta = serde_json::from_slice(&fs::read(&meta_path).map_err(|e| io_err(&meta_path, e))?)
        .map_err(beadnet::Error::from)?;
    let path = dir.join("frames.u8");
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let size = geom.grid * geom.grid * 3;
    if bytes.len() != meta.frame_count * size {
        return Err(CliError::Data(format!(
            "{}: {} bytes for {} frames of {size} bytes",
            path.display(),
            bytes.len(),
            meta.frame_count
        )));
    }
    bytes
        .chunks_exact(size)
        .enumerate()
        .map(|(t, b)| Frame::from_u8(geom.grid, b, t as f64 / frame_hz).map_err(CliError::from))
        .collect()
}

/// Read raw frames from stdin on a separate thread, feeding a channel.
fn stdin_source(grid: usize, frame_hz: f64) -> (mpsc::Receiver<Frame>, Arc<Mutex<Option<CliError>>>) {
    let (tx, rx) = mpsc::sync_channel(4);
    let failure = Arc::new(Mutex::new(None));
    let slot = Arc::clone(&failure);
    std::thread::spawn(move || {
        let mut stdin = std::io::stdin().lock();
        let size = grid * grid * 3;
        for t in 0.. {
            let mut buf = vec![0u8; size];
            let mut filled = 0;
            while filled < size {
                match stdin.read(&mut buf[filled..]) {
                    Ok(0) => break,
                    Ok(n) => filled += n,
                    Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                    Err(e) => {
                        *slot.lock().expect("lock") = Some(CliError::Data(format!("stdin: {e}")));
                        return;
                    }
                }
            }
            if filled == 0 {
                return;
            }
            if filled < size {
                *slot.lock().expect("lock") = Some(CliError::Data(format!(
                    "stdin ended inside frame {t}: {filled} of {size} bytes"
                )));
                return;
            }
            let frame = Frame::from_u8(grid, &buf, t as f64 / frame_hz).expect("frame size checked");
            if tx.send(frame).is_err() {
                return;
            }
        }
    });
    (rx, failure)
}

fn create(path: PathBuf) -> Result<BufWriter<File>, CliError> {
    File::create(&path).map(BufWriter::new).map_err(|e| io_err(&path, e))
}

fn infer(out: &Path, cfg: config::InferConfig) -> Result<(), CliError> {
    if !(cfg.frame_hz.is_finite() && cfg.frame_hz > 0.0) {
        return Err(CliError::Usage(format!("frame rate {} must be positive", cfg.frame_hz)));
    }
    let params = load_params(&cfg.checkpoint)?;
    let grid = params.grid();
    make_dir(out)?;
    config::echo(out, "infer", &cfg)?;

    let mut maps = create(out.join("maps.f32"))?;
    let mut series = create(out.join("series.csv"))?;
    let mut latency = create(out.join("latency.csv"))?;
    let w = |e: std::io::Error| CliError::Data(format!("writing outputs: {e}"));
    writeln!(series, "frame,timestamp_s,force_n,cop_x_mm,cop_y_mm").map_err(w)?;
    writeln!(latency, "frame,latency_ms").map_err(w)?;

    let stdin = cfg.source == "-";
    let geom = if stdin {
        SensorGeometry::with_grid(grid)?
    } else {
        source_geometry(Path::new(&cfg.source), grid)?
    };
    let mut sink = |o: evaluation::StreamOutput| -> beadnet::Result<()> {
        let io = |e: std::io::Error| beadnet::Error::Dataset(format!("writing outputs: {e}"));
        for v in o.map.data() {
            maps.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        let f = total_force(&o.map, &geom);
        let (cx, cy) = match center_of_pressure(&o.map, &geom) {
            Ok((x, y)) => (x.to_string(), y.to_string()),
            Err(_) => (String::new(), String::new()),
        };
        writeln!(series, "{},{},{f},{cx},{cy}", o.index, o.timestamp_s).map_err(io)?;
        writeln!(latency, "{},{:.3}", o.index, o.latency.as_secs_f64() * 1e3).map_err(io)?;
        Ok(())
    };

    let count = if stdin {
        let (rx, failure) = stdin_source(grid, cfg.frame_hz);
        let n = stream_infer(rx, &params, &mut sink)?;
        if let Some(e) = failure.lock().expect("lock").take() {
            return Err(e);
        }
        n
    } else {
        let frames = episode_frames(Path::new(&cfg.source), &geom, cfg.frame_hz)?;
        stream_infer(frames, &params, &mut sink)?
    };
    for f in [&mut maps, &mut series, &mut latency] {
        f.flush().map_err(w)?;
    }
    println!("streamed {count} frames into {}", out.display());
    Ok(())
}
