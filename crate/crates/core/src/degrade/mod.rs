//! Mixed-degradation synthesis: exposure, sensor and grain noise, flicker,
//! chroma drift, blur and compression, with a three-anchor severity schedule.

mod codec;
mod stages;
mod synth;

pub use codec::{apply_compression, dct8_matrix, proxy_quant_step, proxy_quantize_luma};
pub use stages::{
    add_chroma_offsets, ar1_sequence, apply_blur, apply_chroma_drift, apply_flicker, apply_grain,
    apply_sensor_noise, chroma_drift_offsets, gaussian_blur, gaussian_kernel, grain_field,
    sample_exposure_gains, sensor_noise_unclamped, BlurDraw, FlickerDraw, GRAIN_KERNEL_NORM,
};
pub use synth::{synthesize_degraded_clip, DegradationRecord};

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Closed interval `(lo, hi)` with `0 ≤ lo ≤ hi`.
pub type Range = (f64, f64);

/// Severity anchors at which the schedule is pinned.
pub const ANCHORS: [f64; 3] = [1.0, 2.0, 3.0];

/// Severities used by the five-point robustness sweep.
pub const SWEEP_SEVERITIES: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];

/// AR(1) coefficient of the chroma drift sequences.
pub const CHROMA_RHO: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlickerConfig {
    pub prob: f64,
    pub rho_range: Range,
    /// Stationary std of the multiplicative gain deviation.
    pub gain_std: f64,
    /// Stationary std of the additive offset.
    pub offset_std: f64,
}

/// Not part of the published anchors; blur is an added default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurConfig {
    pub prob: f64,
    pub sigma_range: Range,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionMode {
    None,
    External,
    Proxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub mode: CompressionMode,
    pub crf: u32,
    /// Command template for `external` mode with `{input}`, `{output}` and
    /// `{crf}` placeholders. The input and output are frame directories of
    /// 16-bit PNGs named `frame_%06d.png`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationConfig {
    pub severity: f64,
    pub exposure_range: Range,
    pub shot_range: Range,
    pub read_range: Range,
    pub grain_range: Range,
    pub flicker: FlickerConfig,
    pub chroma_std: f64,
    pub blur: BlurConfig,
    pub compression: CompressionConfig,
    pub seed: u64,
}

impl DegradationConfig {
    /// Every stage switched off; synthesis returns the clean clip.
    pub fn identity(seed: u64) -> Self {
        Self {
            severity: 0.0,
            exposure_range: (1.0, 1.0),
            shot_range: (0.0, 0.0),
            read_range: (0.0, 0.0),
            grain_range: (0.0, 0.0),
            flicker: FlickerConfig { prob: 0.0, rho_range: (0.0, 0.0), gain_std: 0.0, offset_std: 0.0 },
            chroma_std: 0.0,
            blur: BlurConfig { prob: 0.0, sigma_range: (0.0, 0.0) },
            compression: CompressionConfig { mode: CompressionMode::None, crf: 0, command: None },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.severity >= 0.0) {
            return Err(Error::Range(format!("severity must be >= 0, got {}", self.severity)));
        }
        let ranges = [
            ("exposure_range", self.exposure_range),
            ("shot_range", self.shot_range),
            ("read_range", self.read_range),
            ("grain_range", self.grain_range),
            ("flicker.rho_range", self.flicker.rho_range),
            ("blur.sigma_range", self.blur.sigma_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Range(format!("{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")));
            }
        }
        for (name, p) in [("flicker.prob", self.flicker.prob), ("blur.prob", self.blur.prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Range(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.flicker.rho_range.1 >= 1.0 {
            return Err(Error::Range("flicker.rho_range must stay below 1".into()));
        }
        for (name, v) in [
            ("flicker.gain_std", self.flicker.gain_std),
            ("flicker.offset_std", self.flicker.offset_std),
            ("chroma_std", self.chroma_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Range(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.compression.crf > 51 {
            return Err(Error::Range(format!("crf must lie in [0, 51], got {}", self.compression.crf)));
        }
        Ok(())
    }

    /// Independent generator for one synthesis stage.
    pub(crate) fn stage_rng(&self, stage: Stage) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stage as u64);
        rng
    }
}

/// Random stream identifiers. Each stage consumes a fixed number of draws
/// regardless of parameter values, so clips synthesized at different
/// severities from one seed share their underlying random numbers.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Stage {
    Exposure = 1,
    Sensor = 2,
    Grain = 3,
    Flicker = 4,
    Chroma = 5,
    Blur = 6,
    ChromaPerturb = 7,
}

struct Anchor {
    exposure: Range,
    shot: Range,
    read: Range,
    grain: Range,
    flicker_p: f64,
    flicker_rho: Range,
    flicker_std: (f64, f64),
    chroma: f64,
    crf: f64,
}

const ANCHOR_TABLE: [Anchor; 3] = [
    Anchor {
        exposure: (0.95, 1.05),
        shot: (1.5e-3, 1.2e-2),
        read: (4e-4, 4e-3),
        grain: (8e-4, 8e-3),
        flicker_p: 0.20,
        flicker_rho: (0.85, 0.97),
        flicker_std: (0.02, 0.003),
        chroma: 0.002,
        crf: 28.0,
    },
    Anchor {
        exposure: (0.90, 1.10),
        shot: (3e-3, 2.4e-2),
        read: (8e-4, 8e-3),
        grain: (1.6e-3, 1.6e-2),
        flicker_p: 0.40,
        flicker_rho: (0.85, 0.97),
        flicker_std: (0.04, 0.006),
        chroma: 0.004,
        crf: 32.0,
    },
    Anchor {
        exposure: (0.85, 1.15),
        shot: (4.5e-3, 3.6e-2),
        read: (1.2e-3, 1.2e-2),
        grain: (2.4e-3, 2.4e-2),
        flicker_p: 0.60,
        flicker_rho: (0.85, 0.97),
        flicker_std: (0.06, 0.009),
        chroma: 0.006,
        crf: 36.0,
    },
];

/// Blur probability used at every severity.
pub const BLUR_PROB: f64 = 0.3;
/// Blur sigma range per unit severity, in pixels.
pub const BLUR_SIGMA_PER_SEVERITY: Range = (0.3, 1.0);

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        (1.0 - t) * a + t * b
    }
}

fn lerp_range(a: Range, b: Range, t: f64) -> Range {
    (lerp(a.0, b.0, t), lerp(a.1, b.1, t))
}

/// Degradation parameters at severity `sigma ∈ [1, 3]`: exact at the three
/// anchors, piecewise linear in between. Compression uses the DCT proxy.
pub fn config_at_severity(sigma: f64, seed: u64) -> Result<DegradationConfig> {
    if !(ANCHORS[0]..=ANCHORS[2]).contains(&sigma) {
        return Err(Error::Range(format!("severity must lie in [1.0, 3.0], got {sigma}")));
    }
    let (lo, t) = if sigma <= ANCHORS[1] { (0, sigma - ANCHORS[0]) } else { (1, sigma - ANCHORS[1]) };
    let (a, b) = (&ANCHOR_TABLE[lo], &ANCHOR_TABLE[lo + 1]);
    let std = lerp_range(a.flicker_std, b.flicker_std, t);
    Ok(DegradationConfig {
        severity: sigma,
        exposure_range: lerp_range(a.exposure, b.exposure, t),
        shot_range: lerp_range(a.shot, b.shot, t),
        read_range: lerp_range(a.read, b.read, t),
        grain_range: lerp_range(a.grain, b.grain, t),
        flicker: FlickerConfig {
            prob: lerp(a.flicker_p, b.flicker_p, t),
            rho_range: lerp_range(a.flicker_rho, b.flicker_rho, t),
            gain_std: std.0,
            offset_std: std.1,
        },
        chroma_std: lerp(a.chroma, b.chroma, t),
        blur: BlurConfig {
            prob: BLUR_PROB,
            sigma_range: (BLUR_SIGMA_PER_SEVERITY.0 * sigma, BLUR_SIGMA_PER_SEVERITY.1 * sigma),
        },
        compression: CompressionConfig {
            mode: CompressionMode::Proxy,
            crf: lerp(a.crf, b.crf, t).round() as u32,
            command: None,
        },
        seed,
    })
}
