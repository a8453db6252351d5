use super::losses::{total_loss_graph, LossBreakdown, LossWeights};
use crate::autograd::{clip_grad_norm, AdamW, Graph, ParamId, ParamStore, Tensor};
use crate::degrade::{config_at_severity, synthesize_degraded_clip};
use crate::error::{Error, Result};
use crate::evaluation::psnr;
use crate::media::{rgb_to_ycbcr, VideoClip};
use crate::network::{save_checkpoint, Model};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Consecutive non-finite steps tolerated before training aborts.
pub const MAX_BAD_STEPS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub batch: usize,
    pub patch: usize,
    /// Accepted for compatibility; all arithmetic is `f64`.
    pub mixed_precision: bool,
    pub seed: u64,
    /// Optimizer steps per epoch; `0` means one pass over the clips.
    pub steps_per_epoch: usize,
    /// Upper end of the post-warm-up severity range.
    pub severity_max: f64,
    /// Degrade every training clip once with a fixed seed instead of
    /// sampling fresh corruptions each step.
    pub fixed_pairs: bool,
    /// Severity used when `fixed_pairs` is set.
    pub fixed_severity: f64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            warmup_epochs: 5,
            lr: 2e-4,
            weight_decay: 1e-4,
            grad_clip_norm: 1.0,
            batch: 4,
            patch: 256,
            mixed_precision: false,
            seed: 0,
            steps_per_epoch: 0,
            severity_max: 3.0,
            fixed_pairs: false,
            fixed_severity: 2.0,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "train.warmup_epochs ({}) must be smaller than train.epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch == 0 || self.patch < 8 {
            return Err(Error::Config("train.batch must be positive and train.patch at least 8".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("train.lr and train.grad_clip_norm must be positive, weight_decay non-negative".into()));
        }
        if !(1.0..=3.0).contains(&self.severity_max) || !(1.0..=3.0).contains(&self.fixed_severity) {
            return Err(Error::Config("severities must lie in [1, 3]".into()));
        }
        self.loss.validate()
    }

    /// Severity range and loss weights in effect during `epoch` (0-based).
    pub fn schedule(&self, epoch: usize) -> ((f64, f64), LossWeights) {
        if epoch < self.warmup_epochs {
            ((1.0, 1.0 + 0.5 * (self.severity_max - 1.0)), self.loss.warmup())
        } else {
            ((1.0, self.severity_max), self.loss)
        }
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub lr: f64,
    pub lambda_hf: f64,
    pub lambda_g: f64,
    pub lambda_c: f64,
    /// Set on the last step of each epoch.
    pub val_psnr: Option<f64>,
    pub skipped: bool,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<StepLog>,
    pub best_val_psnr: Option<f64>,
    pub best_epoch: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

/// A clean/degraded training pair, both `T×3×H×W`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub clean: VideoClip,
    pub noisy: VideoClip,
}

/// Per-sample generator keyed on `(seed, step, index)`.
pub fn sample_rng(seed: u64, step: usize, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((step as u64) << 20) | index as u64);
    r
}

fn crop_window(clip: &VideoClip, t: usize, patch: usize, multiple: usize, rng: &mut ChaCha8Rng) -> Result<VideoClip> {
    if clip.frames() < t {
        return Err(Error::Shape(format!("training clip has {} frames, need {t}", clip.frames())));
    }
    let ph = (patch.min(clip.height()) / multiple) * multiple;
    let pw = (patch.min(clip.width()) / multiple) * multiple;
    let t0 = rng.random_range(0..=clip.frames() - t);
    let y0 = rng.random_range(0..=clip.height() - ph);
    let x0 = rng.random_range(0..=clip.width() - pw);
    clip.window(t0, t)?.crop(y0, x0, ph, pw)
}

/// Draws one degraded training sample.
pub fn draw_sample(
    clips: &[VideoClip],
    model_t: usize,
    patch: usize,
    multiple: usize,
    severity: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let idx = rng.random_range(0..clips.len());
    let clean = crop_window(&clips[idx], model_t, patch, multiple, rng)?;
    let sigma = if severity.0 == severity.1 { severity.0 } else { rng.random_range(severity.0..=severity.1) };
    let cfg = config_at_severity(sigma, rng.random())?;
    let (noisy, _) = synthesize_degraded_clip(&clean, &cfg)?;
    Ok(Sample { clean, noisy })
}

/// Fixed evaluation pairs: the centre window of each clip degraded at
/// `severity` with a per-clip seed.
pub fn fixed_pairs(clips: &[VideoClip], model_t: usize, multiple: usize, severity: f64, seed: u64) -> Result<Vec<Sample>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.frames() < model_t {
                return Err(Error::Shape(format!("clip {i} has {} frames, need {model_t}", c.frames())));
            }
            let t0 = (c.frames() - model_t) / 2;
            let h = (c.height() / multiple) * multiple;
            let w = (c.width() / multiple) * multiple;
            let clean = c.window(t0, model_t)?.crop(0, 0, h, w)?;
            let cfg = config_at_severity(severity, seed.wrapping_add(i as u64))?;
            let (noisy, _) = synthesize_degraded_clip(&clean, &cfg)?;
            Ok(Sample { clean, noisy })
        })
        .collect()
}

/// Forward, loss and gradients for one sample.
pub fn sample_loss(
    model: &Model,
    store: &ParamStore,
    sample: &Sample,
    weights: &LossWeights,
    with_grads: bool,
) -> Result<(LossBreakdown, Vec<(ParamId, Tensor)>)> {
    let mut g = Graph::new();
    let fv = model.forward_graph(&mut g, store, &sample.noisy)?;
    let t = model.cfg.clip_len / 2;
    let target = sample.clean.window(t, 1)?;
    let target_ycc = rgb_to_ycbcr(&target)?;
    let tr = g.constant(Tensor::from_array4(&target.data));
    let tc = g.constant(Tensor::from_array4(&target_ycc.data));
    let lv = total_loss_graph(&mut g, fv.rgb, fv.ycbcr, tr, tc, fv.log_var, weights);
    let b = lv.breakdown(&g);
    if !with_grads {
        return Ok((b, vec![]));
    }
    g.backward(lv.total);
    Ok((b, g.param_grads()))
}

/// Mean PSNR of the restored centre frames against the clean ones.
pub fn validate(model: &Model, pairs: &[Sample]) -> Result<f64> {
    let mut acc = 0.0;
    for s in pairs {
        let out = model.forward(&s.noisy)?;
        let clean = s.clean.center_frame();
        acc += psnr(&out.restored.data, &clean.data);
    }
    Ok(acc / pairs.len().max(1) as f64)
}

fn write_csv(path: &Path, rows: &[StepLog]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::from("step,epoch,L_main,L_hf,L_grad,L_chr,total,grad_norm,lr,val_psnr\n");
    for r in rows {
        let val = r.val_psnr.map(|v| format!("{v:.6}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:e},{}\n",
            r.step, r.epoch, r.loss.main, r.loss.hf, r.loss.grad, r.loss.chr, r.loss.total, r.grad_norm, r.lr, val
        ));
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains `model` in place. When `out_dir` is given, the metrics CSV and
/// the best checkpoint are written there. On return the model holds the
/// weights of the best validation epoch (or the last step without
/// validation data).
pub fn train(
    model: &mut Model,
    train_clips: &[VideoClip],
    val_clips: &[VideoClip],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_clips.is_empty() {
        return Err(Error::InvalidInput("training needs at least one clip".into()));
    }
    if cfg.mixed_precision {
        warn!("mixed precision requested; training runs in f64");
    }
    let t = model.cfg.clip_len;
    let mult = model.cfg.size_multiple();
    let steps_per_epoch = if cfg.steps_per_epoch > 0 { cfg.steps_per_epoch } else { train_clips.len().div_ceil(cfg.batch) };
    let fixed = if cfg.fixed_pairs { Some(fixed_pairs(train_clips, t, mult, cfg.fixed_severity, cfg.seed)?) } else { None };
    let val = fixed_pairs(val_clips, t, mult, 2.0, cfg.seed ^ 0x5eed)?;
    let mut opt = AdamW::new(&model.store, cfg.lr, cfg.weight_decay);
    let mut history = Vec::new();
    let mut bad = 0;
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let (sev, weights) = cfg.schedule(epoch);
        for _ in 0..steps_per_epoch {
            step += 1;
            let mut sum: BTreeMap<ParamId, Tensor> = BTreeMap::new();
            let mut loss = LossBreakdown::default();
            let inv = 1.0 / cfg.batch as f64;
            for i in 0..cfg.batch {
                let sample = match &fixed {
                    Some(p) => p[(step * cfg.batch + i) % p.len()].clone(),
                    None => draw_sample(train_clips, t, cfg.patch, mult, sev, &mut sample_rng(cfg.seed, step, i))?,
                };
                let (b, grads) = sample_loss(model, &model.store, &sample, &weights, true)?;
                loss.scaled_add(&b, inv);
                for (id, gr) in grads {
                    let e = sum.entry(id).or_insert_with(|| Tensor::zeros(gr.shape()));
                    for (a, v) in e.data_mut().iter_mut().zip(gr.data()) {
                        *a += inv * v;
                    }
                }
            }
            let mut grads: Vec<(ParamId, Tensor)> = sum.into_iter().collect();
            let finite = loss.is_finite() && grads.iter().all(|(_, g)| g.is_finite());
            let mut row = StepLog {
                step,
                epoch,
                loss,
                grad_norm: f64::NAN,
                lr: cfg.lr,
                lambda_hf: weights.lambda_hf,
                lambda_g: weights.lambda_g,
                lambda_c: weights.lambda_c,
                val_psnr: None,
                skipped: !finite,
            };
            if finite {
                bad = 0;
                row.grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm);
                opt.step(&mut model.store, &grads);
            } else {
                bad += 1;
                warn!("step {step}: non-finite loss or gradient ({loss:?}), skipped");
                if bad >= MAX_BAD_STEPS {
                    return Err(Error::Training {
                        step,
                        message: format!("{MAX_BAD_STEPS} consecutive non-finite steps; last terms {loss:?}"),
                    });
                }
            }
            history.push(row);
        }
        if !val.is_empty() {
            let v = validate(model, &val)?;
            history.last_mut().expect("at least one step").val_psnr = Some(v);
            info!("epoch {epoch}: val PSNR {v:.3} dB");
            if best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, epoch, model.store.clone()));
            }
        }
    }
    let (best_val_psnr, best_epoch) = match best {
        Some((v, e, store)) => {
            model.store = store;
            (Some(v), Some(e))
        }
        None => (None, None),
    };
    let mut checkpoint = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("metrics.csv"), &history)?;
        let path = dir.join("best.ckpt");
        let mut meta = BTreeMap::new();
        meta.insert("steps".into(), serde_json::json!(step));
        if let Some(v) = best_val_psnr {
            meta.insert("val_psnr".into(), serde_json::json!(v));
        }
        save_checkpoint(model, &path, meta)?;
        checkpoint = Some(path);
    }
    Ok(TrainReport { history, best_val_psnr, best_epoch, checkpoint })
}
