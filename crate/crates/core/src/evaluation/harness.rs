use super::metrics::{cbcr_psnr, chroma_flicker, err_unc_correlation, psnr, residual_map, seam_score, ssim};
use crate::degrade::{config_at_severity, synthesize_degraded_clip, SWEEP_SEVERITIES};
use crate::error::{Error, Result};
use crate::media::VideoClip;
use crate::network::{Model, ModelConfig, Variant};
use crate::objective::{fixed_pairs, train, TrainConfig};
use crate::tiling::{restore_video, tiled_inference, Restorer, TilePlan};
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

/// Renders rows as CSV (header from `cols`).
fn csv(cols: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = cols.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

/// Renders rows as a space-aligned text table.
fn aligned(cols: &[&str], rows: &[Vec<String>]) -> String {
    let mut w: Vec<usize> = cols.iter().map(|c| c.chars().count()).collect();
    for r in rows {
        for (i, v) in r.iter().enumerate() {
            w[i] = w[i].max(v.chars().count());
        }
    }
    let line = |r: Vec<&str>| {
        r.iter().enumerate().map(|(i, v)| format!("{v:>width$}", width = w[i])).collect::<Vec<_>>().join("  ")
    };
    let mut s = line(cols.to_vec());
    s.push('\n');
    for r in rows {
        s.push_str(&line(r.iter().map(String::as_str).collect()));
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub severity: f64,
    pub input_psnr: f64,
    pub input_ssim: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Restored PSNR at the lowest minus the highest severity.
    pub psnr_drop: f64,
}

const SWEEP_COLS: [&str; 5] = ["severity", "input_psnr", "input_ssim", "psnr", "ssim"];

impl SweepTable {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    format!("{:.1}", r.severity),
                    format!("{:.4}", r.input_psnr),
                    format!("{:.4}", r.input_ssim),
                    format!("{:.4}", r.psnr),
                    format!("{:.4}", r.ssim),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        csv(&SWEEP_COLS, &self.cells())
    }

    pub fn to_text(&self) -> String {
        format!("{}PSNR drop 1->3: {:.4} dB\n", aligned(&SWEEP_COLS, &self.cells()), self.psnr_drop)
    }
}

/// Mean input and restored PSNR/SSIM over `clips` at each sweep severity.
/// Clip `i` is degraded with seed `seed + i` at every severity, and only
/// the centre frame is scored.
pub fn robustness_sweep<R: Restorer + ?Sized>(model: &R, clips: &[VideoClip], seed: u64) -> Result<SweepTable> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("robustness sweep needs at least one clip".into()));
    }
    let mut rows = Vec::new();
    for &sev in SWEEP_SEVERITIES.iter() {
        let per: Vec<Result<[f64; 4]>> = clips
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let cfg = config_at_severity(sev, seed.wrapping_add(i as u64))?;
                let (noisy, _) = synthesize_degraded_clip(c, &cfg)?;
                let clean = c.center_frame();
                let inp = noisy.center_frame();
                let out = model.restore(&noisy)?;
                Ok([psnr(&inp.data, &clean.data), ssim(&inp, &clean), psnr(&out.data, &clean.data), ssim(&out, &clean)])
            })
            .collect();
        let mut acc = [0.0; 4];
        for p in per {
            let p = p?;
            for k in 0..4 {
                acc[k] += p[k] / clips.len() as f64;
            }
        }
        rows.push(SweepRow { severity: sev, input_psnr: acc[0], input_ssim: acc[1], psnr: acc[2], ssim: acc[3] });
    }
    let psnr_drop = rows[0].psnr - rows[rows.len() - 1].psnr;
    Ok(SweepTable { rows, psnr_drop })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub final_loss: f64,
    /// Seed of the shared sample stream; identical for every row.
    pub data_seed: u64,
}

const ABLATION_COLS: [&str; 6] = ["variant", "params", "psnr", "ssim", "final_loss", "data_seed"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    r.params.to_string(),
                    format!("{:.4}", r.psnr),
                    format!("{:.4}", r.ssim),
                    format!("{:.6}", r.final_loss),
                    r.data_seed.to_string(),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        csv(&ABLATION_COLS, &self.cells())
    }

    pub fn to_text(&self) -> String {
        aligned(&ABLATION_COLS, &self.cells())
    }
}

/// Trains every variant from the same seed on the same sample stream and
/// scores it on fixed validation pairs (severity 2).
pub fn ablation_harness(
    base: &ModelConfig,
    variants: &[Variant],
    train_clips: &[VideoClip],
    val_clips: &[VideoClip],
    tcfg: &TrainConfig,
    model_seed: u64,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for v in variants {
        let cfg = v.configure(base);
        let mut model = Model::new(cfg, model_seed)?;
        let params = model.census();
        let report = train(&mut model, train_clips, val_clips, tcfg, None)?;
        let final_loss = report.history.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
        let pairs = fixed_pairs(val_clips, model.cfg.clip_len, model.cfg.size_multiple(), 2.0, tcfg.seed ^ 0xab1a)?;
        let (mut p, mut s) = (0.0, 0.0);
        for pair in &pairs {
            let out = model.forward(&pair.noisy)?.restored;
            let clean = pair.clean.center_frame();
            p += psnr(&out.data, &clean.data);
            s += ssim(&out, &clean);
        }
        let n = pairs.len().max(1) as f64;
        log::info!("ablation {}: {params} params, {:.3} dB", v.label(), p / n);
        rows.push(AblationRow {
            variant: v.label().to_string(),
            params,
            psnr: p / n,
            ssim: s / n,
            final_loss,
            data_seed: tcfg.seed,
        });
    }
    Ok(AblationTable { rows })
}

/// Full-reference and mechanism metrics for one clip.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClipMetrics {
    pub clip: usize,
    pub input_psnr: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub cbcr_psnr: f64,
    pub chroma_flicker: f64,
    pub err_unc_corr: f64,
    pub seam_score: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub input_psnr: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub cbcr_psnr: f64,
    pub chroma_flicker: f64,
    pub err_unc_corr: f64,
    pub seam_score: f64,
    pub fps: f64,
    pub peak_memory: Option<u64>,
    pub per_clip: Vec<ClipMetrics>,
}

const CLIP_COLS: [&str; 9] =
    ["clip", "input_psnr", "psnr", "ssim", "cbcr_psnr", "chroma_flicker", "err_unc_corr", "seam_score", "seconds"];

impl MetricsReport {
    fn cells(&self) -> Vec<Vec<String>> {
        let row = |name: String, m: [f64; 8]| {
            let mut r = vec![name];
            r.extend(m.iter().map(|v| format!("{v:.5}")));
            r
        };
        let mut rows: Vec<Vec<String>> = self
            .per_clip
            .iter()
            .map(|c| {
                row(
                    c.clip.to_string(),
                    [c.input_psnr, c.psnr, c.ssim, c.cbcr_psnr, c.chroma_flicker, c.err_unc_corr, c.seam_score, c.seconds],
                )
            })
            .collect();
        let total: f64 = self.per_clip.iter().map(|c| c.seconds).sum();
        rows.push(row(
            "mean".into(),
            [self.input_psnr, self.psnr, self.ssim, self.cbcr_psnr, self.chroma_flicker, self.err_unc_corr, self.seam_score, total],
        ));
        rows
    }

    pub fn to_csv(&self) -> String {
        csv(&CLIP_COLS, &self.cells())
    }

    pub fn to_text(&self) -> String {
        format!(
            "{}fps {:.3}, peak memory {}\n",
            aligned(&CLIP_COLS, &self.cells()),
            self.fps,
            self.peak_memory.map(|b| format!("{b} B")).unwrap_or_else(|| "n/a".into())
        )
    }
}

/// Degrades each clip at `severity` (clip `i` uses seed `seed + i`),
/// restores every frame with tiled inference and scores the result.
/// The error–uncertainty correlation uses a whole-frame forward pass on
/// the centre window.
pub fn evaluate_model(model: &Model, clips: &[VideoClip], severity: f64, seed: u64, plan_for: &dyn Fn(usize, usize) -> Result<TilePlan>, workers: usize) -> Result<MetricsReport> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one clip".into()));
    }
    let mut per_clip = Vec::new();
    let mut frames = 0usize;
    for (i, c) in clips.iter().enumerate() {
        let cfg = config_at_severity(severity, seed.wrapping_add(i as u64))?;
        let (noisy, _) = synthesize_degraded_clip(c, &cfg)?;
        let plan = plan_for(c.height(), c.width())?;
        let t0 = Instant::now();
        let restored = restore_video(model, &noisy, model.cfg.clip_len, &plan, workers)?;
        let seconds = t0.elapsed().as_secs_f64();
        frames += c.frames();
        let n = c.frames() as f64;
        let (mut ip, mut p, mut s, mut cb, mut seam) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t in 0..c.frames() {
            let (clean, out, inp) = (c.frame(t), restored.frame(t), noisy.frame(t));
            ip += psnr(&inp.data, &clean.data) / n;
            p += psnr(&out.data, &clean.data) / n;
            s += ssim(&out, &clean) / n;
            cb += cbcr_psnr(&out, &clean)? / n;
            seam += seam_score(&out.luma(), &plan) / n;
        }
        let corr = if c.frames() >= model.cfg.clip_len {
            let t0 = (c.frames() - model.cfg.clip_len) / 2;
            let win = noisy.window(t0, model.cfg.clip_len)?;
            let clean = c.window(t0, model.cfg.clip_len)?.center_frame();
            let out = model.forward(&win)?;
            err_unc_correlation(&residual_map(&out.restored, &clean), &out.log_variance)
        } else {
            0.0
        };
        per_clip.push(ClipMetrics {
            clip: i,
            input_psnr: ip,
            psnr: p,
            ssim: s,
            cbcr_psnr: cb,
            chroma_flicker: chroma_flicker(&restored),
            err_unc_corr: corr,
            seam_score: seam,
            seconds,
        });
    }
    let k = per_clip.len() as f64;
    let mean = |f: fn(&ClipMetrics) -> f64| per_clip.iter().map(f).sum::<f64>() / k;
    let secs: f64 = per_clip.iter().map(|c| c.seconds).sum();
    Ok(MetricsReport {
        input_psnr: mean(|c| c.input_psnr),
        psnr: mean(|c| c.psnr),
        ssim: mean(|c| c.ssim),
        cbcr_psnr: mean(|c| c.cbcr_psnr),
        chroma_flicker: mean(|c| c.chroma_flicker),
        err_unc_corr: mean(|c| c.err_unc_corr),
        seam_score: mean(|c| c.seam_score),
        fps: if secs > 0.0 { frames as f64 / secs } else { f64::INFINITY },
        peak_memory: peak_rss(),
        per_clip,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileReport {
    pub device: String,
    pub warmup_runs: usize,
    pub timed_runs: Vec<f64>,
    pub median_seconds: f64,
    pub fps: f64,
    /// Peak resident set size in bytes, when the platform reports it.
    pub peak_memory: Option<u64>,
}

impl ProfileReport {
    pub fn peak_memory_label(&self) -> String {
        self.peak_memory.map(|b| b.to_string()).unwrap_or_else(|| "n/a".into())
    }
}

pub const PROFILE_WARMUP: usize = 3;
pub const PROFILE_RUNS: usize = 10;

pub fn device_descriptor() -> String {
    format!("cpu ({} threads, {})", rayon::current_num_threads(), std::env::consts::ARCH)
}

/// Peak resident set size from `/proc/self/status`.
pub fn peak_rss() -> Option<u64> {
    let s = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = s.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Times tiled restoration of one clip: warm-up runs, then timed runs;
/// FPS is one frame over the median wall time.
pub fn profile<R: Restorer + ?Sized>(model: &R, clip: &VideoClip, plan: &TilePlan, workers: usize, warmup: usize, runs: usize) -> Result<ProfileReport> {
    if runs == 0 {
        return Err(Error::Config("profile needs at least one timed run".into()));
    }
    for _ in 0..warmup {
        tiled_inference(model, clip, plan, workers)?;
    }
    let mut timed = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        std::hint::black_box(tiled_inference(model, clip, plan, workers)?);
        timed.push(t0.elapsed().as_secs_f64());
    }
    let med = median(&timed);
    Ok(ProfileReport {
        device: device_descriptor(),
        warmup_runs: warmup,
        timed_runs: timed,
        median_seconds: med,
        fps: if med > 0.0 { 1.0 / med } else { f64::INFINITY },
        peak_memory: peak_rss(),
    })
}
