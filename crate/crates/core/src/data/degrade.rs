//! Synthetic degradation models.
//!
//! | kind       | model                                                        |
//! |------------|--------------------------------------------------------------|
//! | `noise`    | `I + n`, `n ~ N(0, σ²)` per value                            |
//! | `rain`     | seeded straight streaks alpha-blended towards 0.9            |
//! | `snow`     | seeded soft discs alpha-blended towards white                |
//! | `fog`      | `I·t + A·(1 − t)`                                            |
//! | `lowlight` | `gain · I^gamma`                                             |
//! | `blur`     | convolution with a normalized linear motion kernel           |
//!
//! Every output is clipped to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The six synthetic degradation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationKind {
    Noise,
    Rain,
    Snow,
    Fog,
    LowLight,
    Blur,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 6] = [
        DegradationKind::Noise,
        DegradationKind::Rain,
        DegradationKind::Snow,
        DegradationKind::Fog,
        DegradationKind::LowLight,
        DegradationKind::Blur,
    ];

    /// Short identifier used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Noise => "noise",
            DegradationKind::Rain => "rain",
            DegradationKind::Snow => "snow",
            DegradationKind::Fog => "fog",
            DegradationKind::LowLight => "lowlight",
            DegradationKind::Blur => "blur",
        }
    }

    /// Prompt text for this kind.
    pub fn label(self) -> &'static str {
        match self {
            DegradationKind::LowLight => "low light",
            k => k.name(),
        }
    }

    /// Kind whose name or label matches `text` (case- and space-insensitive).
    pub fn from_label(text: &str) -> Option<Self> {
        let key: String = text.trim().to_lowercase().chars().filter(|c| c.is_alphanumeric()).collect();
        Self::ALL.into_iter().find(|k| k.name() == key)
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_label(s).ok_or_else(|| {
            Error::Usage(format!(
                "unknown degradation kind '{s}' (expected one of noise, rain, snow, fog, lowlight, blur)"
            ))
        })
    }
}

/// Parses a comma-separated kind list such as `noise,lowlight`.
pub fn parse_kinds(text: &str) -> Result<Vec<DegradationKind>> {
    let kinds: Vec<DegradationKind> = text.split(',').map(str::parse).collect::<Result<_>>()?;
    if kinds.is_empty() {
        return Err(Error::Usage("empty degradation kind list".into()));
    }
    Ok(kinds)
}

/// Kind-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegradationParams {
    /// Additive Gaussian noise, `sigma ∈ (0, 1]`.
    Noise { sigma: f64 },
    /// `streaks` line segments of about `length` pixels tilted by
    /// `angle_deg ∈ [-80, 80]` from vertical, blended with `intensity ∈ (0, 1]`.
    Rain {
        streaks: usize,
        angle_deg: f64,
        length: usize,
        intensity: f64,
    },
    /// Flakes covering `density ∈ [0, 1]` of the pixels as centres, radius
    /// `radius ∈ [1, 16]`, blended with `intensity ∈ (0, 1]`.
    Snow { density: f64, radius: usize, intensity: f64 },
    /// Transmission `t ∈ (0, 1]` and airlight `A ∈ [0, 1]`.
    Fog { transmission: f64, airlight: f64 },
    /// `gamma ∈ [1, 10]`, `gain ∈ (0, 1]`.
    LowLight { gamma: f64, gain: f64 },
    /// Odd kernel `size ∈ [1, 31]`, path `length ∈ [1, size]`, direction `angle_deg`.
    Blur { size: usize, length: f64, angle_deg: f64 },
}

impl DegradationParams {
    pub fn kind(&self) -> DegradationKind {
        match self {
            DegradationParams::Noise { .. } => DegradationKind::Noise,
            DegradationParams::Rain { .. } => DegradationKind::Rain,
            DegradationParams::Snow { .. } => DegradationKind::Snow,
            DegradationParams::Fog { .. } => DegradationKind::Fog,
            DegradationParams::LowLight { .. } => DegradationKind::LowLight,
            DegradationParams::Blur { .. } => DegradationKind::Blur,
        }
    }

    /// Default parameters for a kind, sized for 64×64 images.
    pub fn default_for(kind: DegradationKind) -> Self {
        match kind {
            DegradationKind::Noise => DegradationParams::Noise { sigma: 0.1 },
            DegradationKind::Rain => DegradationParams::Rain {
                streaks: 40,
                angle_deg: 15.0,
                length: 12,
                intensity: 0.6,
            },
            DegradationKind::Snow => DegradationParams::Snow {
                density: 0.004,
                radius: 1,
                intensity: 0.9,
            },
            DegradationKind::Fog => DegradationParams::Fog {
                transmission: 0.55,
                airlight: 0.85,
            },
            DegradationKind::LowLight => DegradationParams::LowLight { gamma: 2.0, gain: 0.55 },
            DegradationKind::Blur => DegradationParams::Blur {
                size: 7,
                length: 7.0,
                angle_deg: 30.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{} degradation: {what}", self.kind())))
            }
        };
        let unit_open = |v: f64| v > 0.0 && v <= 1.0;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        match *self {
            DegradationParams::Noise { sigma } => check(unit_open(sigma), "sigma must lie in (0, 1]"),
            DegradationParams::Rain {
                streaks,
                angle_deg,
                length,
                intensity,
            } => {
                check(streaks <= 100_000, "streak count must be at most 100000")?;
                check((-80.0..=80.0).contains(&angle_deg), "angle must lie in [-80, 80] degrees")?;
                check((1..=256).contains(&length), "streak length must lie in [1, 256]")?;
                check(unit_open(intensity), "intensity must lie in (0, 1]")
            }
            DegradationParams::Snow {
                density,
                radius,
                intensity,
            } => {
                check(unit(density), "density must lie in [0, 1]")?;
                check((1..=16).contains(&radius), "flake radius must lie in [1, 16]")?;
                check(unit_open(intensity), "intensity must lie in (0, 1]")
            }
            DegradationParams::Fog {
                transmission,
                airlight,
            } => {
                check(unit_open(transmission), "transmission t must lie in (0, 1]")?;
                check(unit(airlight), "airlight A must lie in [0, 1]")
            }
            DegradationParams::LowLight { gamma, gain } => {
                check((1.0..=10.0).contains(&gamma), "gamma must lie in [1, 10]")?;
                check(unit_open(gain), "gain must lie in (0, 1]")
            }
            DegradationParams::Blur {
                size,
                length,
                angle_deg,
            } => {
                check(size % 2 == 1 && size <= 31, "kernel size must be odd and at most 31")?;
                check(length >= 1.0 && length <= size as f64, "path length must lie in [1, size]")?;
                check(angle_deg.is_finite(), "angle must be finite")
            }
        }
    }
}

/// A fully specified, reproducible degradation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub params: DegradationParams,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(params: DegradationParams, seed: u64) -> Self {
        DegradationSpec { params, seed }
    }

    pub fn default_for(kind: DegradationKind, seed: u64) -> Self {
        Self::new(DegradationParams::default_for(kind), seed)
    }

    pub fn kind(&self) -> DegradationKind {
        self.params.kind()
    }
}

/// `[H, W]` of a `[3, H, W]` image with values in `[0, 1]`.
pub(crate) fn check_image(img: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *img.shape() {
        [3, h, w] if h > 0 && w > 0 => {}
        _ => {
            return Err(Error::shape(op, format!("expected a [3, H, W] image, got {:?}", img.shape())));
        }
    }
    Ok((img.shape()[1], img.shape()[2]))
}

/// Applies `spec` to a clean `[3, H, W]` image in `[0, 1]`.
pub fn degrade(clean: &Tensor, spec: &DegradationSpec) -> Result<Tensor> {
    spec.params.validate()?;
    let (h, w) = check_image(clean, "degrade")?;
    if clean.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Usage("degrade expects pixel values in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = clean.data();
    let mut out: Vec<f64> = match spec.params {
        DegradationParams::Noise { sigma } => {
            let n = Normal::new(0.0, sigma).expect("validated sigma");
            x.iter().map(|&v| v + n.sample(&mut rng)).collect()
        }
        DegradationParams::Fog {
            transmission: t,
            airlight: a,
        } => x.iter().map(|&v| v * t + a * (1.0 - t)).collect(),
        DegradationParams::LowLight { gamma, gain } => x.iter().map(|&v| gain * v.powf(gamma)).collect(),
        DegradationParams::Blur {
            size,
            length,
            angle_deg,
        } => convolve_replicate(x, h, w, &motion_kernel(size, length, angle_deg), size),
        DegradationParams::Rain {
            streaks,
            angle_deg,
            length,
            intensity,
        } => {
            let mask = rain_mask(h, w, streaks, angle_deg, length, &mut rng);
            blend(x, &mask, intensity, 0.9)
        }
        DegradationParams::Snow {
            density,
            radius,
            intensity,
        } => {
            let mask = snow_mask(h, w, density, radius, &mut rng);
            blend(x, &mask, intensity, 1.0)
        }
    };
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::new([3, h, w], out)
}

/// `x·(1 − α·m) + α·m·target` with one `[H, W]` mask shared across channels.
fn blend(x: &[f64], mask: &[f64], alpha: f64, target: f64) -> Vec<f64> {
    let plane = mask.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = alpha * mask[i % plane];
            v * (1.0 - m) + m * target
        })
        .collect()
}

fn rain_mask<R: Rng>(h: usize, w: usize, streaks: usize, angle_deg: f64, length: usize, rng: &mut R) -> Vec<f64> {
    let mut mask = vec![0.0; h * w];
    let (s, c) = angle_deg.to_radians().sin_cos();
    for _ in 0..streaks {
        let x0 = rng.random::<f64>() * w as f64;
        let y0 = rng.random::<f64>() * h as f64;
        let len = length as f64 * rng.random_range(0.5..1.5);
        let steps = (2.0 * len).ceil() as usize;
        let shade = rng.random_range(0.6..1.0);
        for k in 0..=steps {
            let d = k as f64 * 0.5;
            let (px, py) = (x0 + d * s, y0 + d * c);
            if px < 0.0 || py < 0.0 {
                continue;
            }
            let (ix, iy) = (px as usize, py as usize);
            if ix < w && iy < h {
                let m = &mut mask[iy * w + ix];
                *m = f64::max(*m, shade);
            }
        }
    }
    mask
}

fn snow_mask<R: Rng>(h: usize, w: usize, density: f64, radius: usize, rng: &mut R) -> Vec<f64> {
    let mut mask = vec![0.0; h * w];
    let flakes = (density * (h * w) as f64).round() as usize;
    let r = radius as f64 + 0.5;
    for _ in 0..flakes {
        let cx = rng.random::<f64>() * w as f64;
        let cy = rng.random::<f64>() * h as f64;
        let y_lo = (cy - r).floor().max(0.0) as usize;
        let x_lo = (cx - r).floor().max(0.0) as usize;
        for y in y_lo..((cy + r).ceil() as usize).min(h) {
            for x in x_lo..((cx + r).ceil() as usize).min(w) {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let m = &mut mask[y * w + x];
                *m = f64::max(*m, (1.0 - d / r).clamp(0.0, 1.0));
            }
        }
    }
    mask
}

/// Normalized `size × size` kernel along a centred segment of `length` pixels.
pub fn motion_kernel(size: usize, length: f64, angle_deg: f64) -> Vec<f64> {
    let mut k = vec![0.0; size * size];
    let c = (size / 2) as f64;
    let (s, co) = angle_deg.to_radians().sin_cos();
    let samples = (8.0 * length).ceil() as usize + 1;
    for i in 0..samples {
        let t = if samples == 1 { 0.0 } else { i as f64 / (samples - 1) as f64 - 0.5 };
        let (px, py) = (c + t * (length - 1.0) * co, c + t * (length - 1.0) * s);
        // Bilinear splat of each sample.
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        for (dx, dy, wgt) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (x, y) = (x0 as isize + dx, y0 as isize + dy);
            if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                k[y as usize * size + x as usize] += wgt;
            }
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Per-channel 2-D correlation with edge replication.
fn convolve_replicate(x: &[f64], h: usize, w: usize, k: &[f64], size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for y in 0..h {
            for xo in 0..w {
                let mut acc = 0.0;
                for ky in 0..size {
                    let yy = (y as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
                    for kx in 0..size {
                        let wgt = k[ky * size + kx];
                        if wgt != 0.0 {
                            let xx = (xo as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
                            acc += wgt * src[yy * w + xx];
                        }
                    }
                }
                dst[y * w + xo] = acc;
            }
        }
    }
    out
}
