//! Command-line entry point: configuration, subcommands, manifests.

mod config;

pub use config::{defaults_toml, resolve_config, AppliedOverride, DegradeSettings, EvalSettings, Resolved, RunConfig};

use crate::degrade::synthesize_degraded_clip;
use crate::error::{Error, Result};
use crate::evaluation::{
    ablation_harness, device_descriptor, evaluate_model, profile, psnr, robustness_sweep, write_diagnostics,
};
use crate::media::{load_clip, save_clip, synthetic_clip, VideoClip};
use crate::network::{load_checkpoint, save_checkpoint, Model, Variant};
use crate::objective::train;
use crate::tiling::restore_video;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const DEVICE_ENV: &str = "GPVD_DEVICE";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "gpvd", version, about = "GP-guided video denoising toolkit")]
pub struct Cli {
    /// TOML configuration file merged over the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `train.lr=1e-3` (repeatable; applied after the file).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory for every artifact of the run.
    #[arg(long, visible_alias = "output", global = true, default_value = "gpvd-out")]
    pub out: PathBuf,
    /// Single-threaded, reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Tile size (overrides `tiling.tile`).
    #[arg(long, global = true)]
    pub tile: Option<usize>,
    /// Tile overlap (overrides `tiling.overlap`).
    #[arg(long, global = true)]
    pub overlap: Option<usize>,
    /// Abutting tiles without blending (overrides `tiling.no_overlap`).
    #[arg(long, global = true)]
    pub no_overlap: bool,
    /// Tiles restored concurrently (overrides `tiling.workers`).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Degradation severity (overrides `degrade.severity`).
    #[arg(long, global = true)]
    pub severity: Option<f64>,
    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    pub print_defaults: bool,
    /// More log output (repeat for trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory of frames, or of clip subdirectories.
    #[arg(long, visible_alias = "input", value_name = "DIR", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use N generated toy clips instead of `--data`.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Side length of generated clips.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Frames per generated clip.
    #[arg(long, default_value_t = 7)]
    pub frames: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize degraded copies of clean clips.
    Degrade {
        #[command(flatten)]
        data: DataArgs,
        /// External encoder template (`{input}`, `{output}`, `{crf}`);
        /// switches compression to `external`.
        #[arg(long, value_name = "CMD")]
        codec_cmd: Option<String>,
    },
    /// Train a model; writes metrics.csv and best.ckpt.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Validation clips (default: the training clips).
        #[arg(long, value_name = "DIR")]
        val: Option<PathBuf>,
        /// Ablation variant to train instead of the configured model.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Restore clips with a trained checkpoint.
    Denoise {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Degrade the inputs at `degrade.severity` first and report PSNR.
        #[arg(long)]
        degrade: bool,
    },
    /// Metrics report and robustness sweep for a checkpoint.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train and score the ablation variants.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated variant names (default: all eight).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Time tiled inference on one frame size.
    Bench {
        /// Checkpoint to time (default: freshly initialized model).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
    },
    /// Write uncertainty, gate and residual maps.
    Diagnose {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Degrade { .. } => "degrade",
            Command::Train { .. } => "train",
            Command::Denoise { .. } => "denoise",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Bench { .. } => "bench",
            Command::Diagnose { .. } => "diagnose",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    argv: &'a [String],
    seed: u64,
    device: String,
    deterministic: bool,
    config_file: Option<&'a Path>,
    overrides: &'a [AppliedOverride],
    config: &'a RunConfig,
    started_unix: u64,
    elapsed_seconds: f64,
    outputs: &'a BTreeMap<String, serde_json::Value>,
}

/// Parses `argv` and runs it; returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if cli.print_defaults {
        print!("{}", defaults_toml());
        return EXIT_OK;
    }
    if cli.command.is_none() {
        eprintln!("error: a subcommand is required (degrade, train, denoise, eval, ablate, bench, diagnose)");
        return EXIT_USAGE;
    }
    let resolved = match resolve(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match run(&cli, &argv, resolved) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    main_with_args(std::env::args().collect())
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let mut overrides = cli.set.clone();
    let mut flag = |k: &str, v: String| overrides.push(format!("{k}={v}"));
    if let Some(s) = cli.seed {
        flag("seed", s.to_string());
    }
    if let Some(t) = cli.tile {
        flag("tiling.tile", t.to_string());
    }
    if let Some(o) = cli.overlap {
        flag("tiling.overlap", o.to_string());
    }
    if cli.no_overlap {
        flag("tiling.no_overlap", "true".into());
    }
    if let Some(w) = cli.workers {
        flag("tiling.workers", w.to_string());
    }
    if let Some(s) = cli.severity {
        flag("degrade.severity", format!("{s:?}"));
    }
    if cli.deterministic {
        flag("deterministic", "true".into());
    }
    if let Some(Command::Degrade { codec_cmd: Some(c), .. }) = &cli.command {
        flag("degrade.compression", "\"external\"".into());
        flag("degrade.codec_command", toml::Value::String(c.clone()).to_string());
    }
    let mut r = resolve_config(cli.config.as_deref(), &overrides)?;
    if r.config.deterministic {
        r.config.tiling.workers = 1;
        r.config.train.mixed_precision = false;
    }
    Ok(r)
}

fn device() -> Result<String> {
    match std::env::var(DEVICE_ENV) {
        Err(_) => Ok(device_descriptor()),
        Ok(d) if d.eq_ignore_ascii_case("cpu") || d.is_empty() => Ok(device_descriptor()),
        Ok(d) => Err(Error::Config(format!("{DEVICE_ENV}={d}: only `cpu` is available"))),
    }
}

fn run(cli: &Cli, argv: &[String], resolved: Resolved) -> Result<()> {
    let cmd = cli.command.as_ref().expect("checked by caller");
    let cfg = &resolved.config;
    let device = device()?;
    if cfg.deterministic {
        // Fails harmlessly if a pool already exists (e.g. repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let config_copy = cli.out.join("config.toml");
    let text = toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&config_copy, text).map_err(|e| Error::io(&config_copy, e))?;

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let t0 = Instant::now();
    info!("{} on {device}, seed {}", cmd.name(), cfg.seed);
    let outputs = dispatch(cmd, cfg, &cli.out)?;
    let manifest = Manifest {
        command: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        argv,
        seed: cfg.seed,
        device,
        deterministic: cfg.deterministic,
        config_file: cli.config.as_deref(),
        overrides: &resolved.overrides,
        config: cfg,
        started_unix: started,
        elapsed_seconds: t0.elapsed().as_secs_f64(),
        outputs: &outputs,
    };
    write_json(&cli.out.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn is_frame_dir(dir: &Path) -> Result<bool> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    Ok(rd.filter_map(|e| e.ok()).any(|e| e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png"))))
}

/// Loads clips from a frame directory or a directory of clip directories.
pub fn load_clips(dir: &Path) -> Result<Vec<VideoClip>> {
    if !dir.is_dir() {
        return Err(Error::io(dir, "not a directory"));
    }
    if is_frame_dir(dir)? {
        return Ok(vec![load_clip(dir, None)?]);
    }
    let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    let clips = subs.iter().map(|p| load_clip(p, None)).collect::<Result<Vec<_>>>()?;
    if clips.is_empty() {
        return Err(Error::io(dir, "no frames or clip directories found"));
    }
    Ok(clips)
}

fn data_clips(args: &DataArgs, seed: u64) -> Result<Vec<VideoClip>> {
    match (&args.data, args.synthetic) {
        (Some(d), _) => load_clips(d),
        (None, Some(n)) if n > 0 => {
            (0..n).map(|i| synthetic_clip(args.frames, args.size, args.size, seed.wrapping_add(i as u64))).collect()
        }
        _ => Err(Error::InvalidInput("give --data DIR or --synthetic N (N > 0)".into())),
    }
}

/// Crops spatial dims down to a multiple the network accepts.
fn fit(clip: &VideoClip, multiple: usize) -> Result<VideoClip> {
    let (h, w) = ((clip.height() / multiple) * multiple, (clip.width() / multiple) * multiple);
    if (h, w) == (clip.height(), clip.width()) {
        return Ok(clip.clone());
    }
    warn!("cropping {}x{} to {h}x{w} for the network", clip.height(), clip.width());
    clip.crop(0, 0, h, w)
}

fn centre_window(clip: &VideoClip, t: usize) -> Result<VideoClip> {
    if clip.frames() < t {
        return Err(Error::Shape(format!("clip has {} frames, model needs {t}", clip.frames())));
    }
    clip.window((clip.frames() - t) / 2, t)
}

fn open_checkpoint(path: &Path) -> Result<Model> {
    if !path.is_file() {
        return Err(Error::io(path, "checkpoint not found"));
    }
    load_checkpoint(path)
}

fn parse_variant(name: &str) -> Result<Variant> {
    let v: std::result::Result<Variant, _> = serde_json::from_value(serde_json::Value::String(name.to_string()));
    v.map_err(|_| {
        let names: Vec<String> = Variant::ALL
            .iter()
            .map(|v| serde_json::to_value(v).ok().and_then(|j| j.as_str().map(str::to_owned)).unwrap_or_default())
            .collect();
        Error::Config(format!("unknown variant `{name}`; expected one of {}", names.join(", ")))
    })
}

fn dispatch(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<BTreeMap<String, serde_json::Value>> {
    let mut outputs = BTreeMap::new();
    let mut record = |k: &str, v: serde_json::Value| {
        outputs.insert(k.to_string(), v);
    };
    match cmd {
        Command::Degrade { data, .. } => {
            let clips = data_clips(data, cfg.seed)?;
            let mut logs = Vec::new();
            for (i, c) in clips.iter().enumerate() {
                let dcfg = cfg.degrade.resolve(cfg.seed.wrapping_add(i as u64))?;
                let (noisy, rec) = synthesize_degraded_clip(c, &dcfg)?;
                let dir = out.join(format!("clip_{i:03}"));
                save_clip(&noisy, &dir, 16)?;
                write_json(&dir.join("degradation.json"), &rec)?;
                let p = psnr(&noisy.data, &c.data);
                info!("clip {i}: input PSNR {p:.2} dB -> {}", dir.display());
                logs.push(serde_json::json!({ "clip": i, "psnr": p, "dir": dir }));
            }
            record("clips", serde_json::Value::Array(logs));
        }
        Command::Train { data, val, variant } => {
            let clips = data_clips(data, cfg.seed)?;
            let val_clips = match val {
                Some(v) => load_clips(v)?,
                None => clips.clone(),
            };
            let mcfg = match variant {
                Some(v) => parse_variant(v)?.configure(&cfg.model),
                None => cfg.model.clone(),
            };
            let mut model = Model::new(mcfg, cfg.seed)?;
            info!("model: {} parameters", model.census());
            let mut tcfg = cfg.train.clone();
            tcfg.seed = tcfg.seed.wrapping_add(cfg.seed);
            let report = train(&mut model, &clips, &val_clips, &tcfg, Some(out))?;
            let last = out.join("last.ckpt");
            save_checkpoint(&model, &last, BTreeMap::new())?;
            record("best_val_psnr", report.best_val_psnr.into());
            record("best_epoch", report.best_epoch.into());
            record("steps", report.history.len().into());
            record("final_loss", report.history.last().map(|h| h.loss.total).unwrap_or(f64::NAN).into());
            record("checkpoint", serde_json::json!(report.checkpoint));
            if let (Some(p), Some(e)) = (report.best_val_psnr, report.best_epoch) {
                info!("best validation PSNR {p:.3} dB (epoch {e})");
            }
        }
        Command::Denoise { checkpoint, data, degrade } => {
            let model = open_checkpoint(checkpoint)?;
            let clips = data_clips(data, cfg.seed)?;
            let mut logs = Vec::new();
            for (i, c) in clips.iter().enumerate() {
                let clean = fit(c, model.cfg.size_multiple())?;
                let input = if *degrade {
                    synthesize_degraded_clip(&clean, &cfg.degrade.resolve(cfg.seed.wrapping_add(i as u64))?)?.0
                } else {
                    clean.clone()
                };
                let plan = cfg.tiling.plan(input.height(), input.width())?;
                let restored = restore_video(&model, &input, model.cfg.clip_len, &plan, cfg.tiling.workers)?;
                let dir = out.join(format!("clip_{i:03}"));
                save_clip(&restored, &dir, 16)?;
                let mut entry = serde_json::json!({ "clip": i, "dir": dir, "tiles": plan.tiles.len() });
                if *degrade {
                    let (a, b) = (psnr(&input.data, &clean.data), psnr(&restored.data, &clean.data));
                    info!("clip {i}: {a:.2} dB -> {b:.2} dB");
                    entry["input_psnr"] = a.into();
                    entry["psnr"] = b.into();
                }
                logs.push(entry);
            }
            record("clips", serde_json::Value::Array(logs));
        }
        Command::Eval { checkpoint, data } => {
            let model = open_checkpoint(checkpoint)?;
            let m = model.cfg.size_multiple();
            let clips = data_clips(data, cfg.seed)?.iter().map(|c| fit(c, m)).collect::<Result<Vec<_>>>()?;
            let tiling = cfg.tiling.clone();
            let report =
                evaluate_model(&model, &clips, cfg.eval.severity, cfg.eval.seed, &|h, w| tiling.plan(h, w), tiling.workers)?;
            write_text(&out.join("metrics.csv"), &report.to_csv())?;
            write_json(&out.join("metrics.json"), &report)?;
            println!("{}", report.to_text());
            let windows = clips.iter().map(|c| centre_window(c, model.cfg.clip_len)).collect::<Result<Vec<_>>>()?;
            let sweep = robustness_sweep(&model, &windows, cfg.eval.seed)?;
            write_text(&out.join("sweep.csv"), &sweep.to_csv())?;
            println!("{}", sweep.to_text());
            record("psnr", report.psnr.into());
            record("ssim", report.ssim.into());
            record("psnr_drop", sweep.psnr_drop.into());
        }
        Command::Ablate { data, variants } => {
            let clips = data_clips(data, cfg.seed)?;
            let vs = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| parse_variant(v)).collect::<Result<Vec<_>>>()?
            };
            let mut tcfg = cfg.train.clone();
            tcfg.seed = tcfg.seed.wrapping_add(cfg.seed);
            let table = ablation_harness(&cfg.model, &vs, &clips, &clips, &tcfg, cfg.seed)?;
            write_text(&out.join("ablation.csv"), &table.to_csv())?;
            println!("{}", table.to_text());
            record("variants", table.rows.len().into());
        }
        Command::Bench { checkpoint, height, width } => {
            let model = match checkpoint {
                Some(p) => open_checkpoint(p)?,
                None => Model::new(cfg.model.clone(), cfg.seed)?,
            };
            let clip = synthetic_clip(model.cfg.clip_len, *height, *width, cfg.seed)?;
            let clip = fit(&clip, model.cfg.size_multiple())?;
            let plan = cfg.tiling.plan(clip.height(), clip.width())?;
            let rep = profile(&model, &clip, &plan, cfg.tiling.workers, cfg.eval.warmup_runs, cfg.eval.timed_runs)?;
            println!(
                "{}x{}: median {:.4} s, {:.2} FPS, peak memory {}",
                clip.height(),
                clip.width(),
                rep.median_seconds,
                rep.fps,
                rep.peak_memory_label()
            );
            write_json(&out.join("bench.json"), &rep)?;
            record("fps", rep.fps.into());
        }
        Command::Diagnose { checkpoint, data } => {
            let model = open_checkpoint(checkpoint)?;
            let clips = data_clips(data, cfg.seed)?;
            let mut files = 0;
            for (i, c) in clips.iter().enumerate() {
                let clean = centre_window(&fit(c, model.cfg.size_multiple())?, model.cfg.clip_len)?;
                let dcfg = cfg.degrade.resolve(cfg.seed.wrapping_add(i as u64))?;
                let (noisy, _) = synthesize_degraded_clip(&clean, &dcfg)?;
                let fwd = model.forward(&noisy)?;
                files += write_diagnostics(&fwd, &clean.center_frame(), &out.join(format!("clip_{i:03}")))?.len();
            }
            record("files", files.into());
        }
    }
    Ok(outputs)
}
