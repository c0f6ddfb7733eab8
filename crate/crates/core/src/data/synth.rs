//! Seeded synthetic surveillance sequences: a textured square target with two
//! dark "eye" blobs and shaded borders moving over a static low-frequency
//! background, with look-alike distractors, brief occluders, illumination
//! drift and sensor noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{annotations::write_annotations, ppm::write_ppm, write_manifest, SequenceRecord};
use crate::error::{Error, Result};
use crate::geometry::{FrameImage, SquareBox};
use crate::parallel::{map_range, Execution};
use crate::seeds::{derive_seed, SeedPurpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Mean sequence length in frames.
    pub mean_length: f64,
    /// Lengths are uniform in `mean_length * (1 ± length_jitter)`.
    pub length_jitter: f64,
    pub min_side: f64,
    pub max_side: f64,
    /// Std of the per-frame velocity innovation, pixels/frame.
    pub velocity_std: f64,
    pub damping: f64,
    /// Std of the per-frame log-scale change.
    pub scale_drift_std: f64,
    /// Std of the per-frame illumination gain change.
    pub gain_drift_std: f64,
    pub distractors: usize,
    pub occluder_prob: f64,
    /// Std of additive per-pixel noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            mean_length: 95.6,
            length_jitter: 0.3,
            min_side: 24.0,
            max_side: 64.0,
            velocity_std: 2.0,
            damping: 0.9,
            scale_drift_std: 0.01,
            gain_drift_std: 0.02,
            distractors: 2,
            occluder_prob: 0.02,
            noise_std: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let stds = [self.velocity_std, self.scale_drift_std, self.gain_drift_std, self.noise_std, self.length_jitter];
        if stds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("synthetic stds and jitter must be non-negative".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("frames must be at least 16x16".into()));
        }
        if !(self.min_side > 1.0 && self.max_side >= self.min_side) {
            return Err(Error::Config("need 1 < min_side <= max_side".into()));
        }
        if 2.0 * self.max_side > self.width.min(self.height) as f64 {
            return Err(Error::Config("max_side must fit twice within the frame".into()));
        }
        if !(0.0..=1.0).contains(&self.occluder_prob) || !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config("occluder_prob must be in [0,1] and damping in [0,1)".into()));
        }
        if !(self.mean_length >= 2.0) || self.length_jitter >= 1.0 {
            return Err(Error::Config("mean_length must be >= 2 and length_jitter < 1".into()));
        }
        Ok(())
    }
}

/// A generated sequence plus, per frame, which pixels the target painted
/// (before any occluder was drawn over it).
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub record: SequenceRecord,
    pub target_masks: Vec<Vec<bool>>,
}

struct Appearance {
    base: [f64; 3],
    /// Coarse texture grid, sampled nearest-neighbour over the square.
    texture: Vec<[f64; 3]>,
    grid: usize,
    eyes: bool,
}

impl Appearance {
    fn random(rng: &mut ChaCha8Rng, eyes: bool) -> Self {
        let base = [
            rng.random_range(150.0..230.0),
            rng.random_range(100.0..180.0),
            rng.random_range(80.0..150.0),
        ];
        let grid = 6;
        let texture = (0..grid * grid)
            .map(|_| {
                let d = rng.random_range(-25.0..25.0);
                [d + rng.random_range(-6.0..6.0), d + rng.random_range(-6.0..6.0), d + rng.random_range(-6.0..6.0)]
            })
            .collect();
        Self { base, texture, grid, eyes }
    }

    /// Colour at normalized position `(u, v)` inside the square.
    fn shade(&self, u: f64, v: f64) -> [f64; 3] {
        let gx = ((u * self.grid as f64) as usize).min(self.grid - 1);
        let gy = ((v * self.grid as f64) as usize).min(self.grid - 1);
        let t = self.texture[gy * self.grid + gx];
        let edge = u.min(v).min(1.0 - u).min(1.0 - v);
        let border = 0.7 + 0.3 * (edge / 0.15).min(1.0);
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = (self.base[k] + t[k]) * border;
        }
        if self.eyes {
            for ex in [0.3, 0.7] {
                let (dx, dy) = ((u - ex) / 0.11, (v - 0.4) / 0.08);
                if dx * dx + dy * dy <= 1.0 {
                    c = [25.0, 20.0, 20.0];
                }
            }
        }
        c
    }
}

#[derive(Clone, Copy)]
struct Mover {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    side: f64,
}

impl Mover {
    fn spawn(rng: &mut ChaCha8Rng, cfg: &SynthConfig, velocity: &Normal<f64>) -> Self {
        let side = if cfg.max_side > cfg.min_side {
            rng.random_range(cfg.min_side..cfg.max_side)
        } else {
            cfg.min_side
        };
        let cx = rng.random_range(side / 2.0..cfg.width as f64 - side / 2.0);
        let cy = rng.random_range(side / 2.0..cfg.height as f64 - side / 2.0);
        Self {
            cx,
            cy,
            vx: velocity.sample(rng),
            vy: velocity.sample(rng),
            side,
        }
    }

    /// Damped random-walk velocity, log-normal scale drift, and reflection
    /// that keeps the center at least a quarter side inside each border.
    fn step(&mut self, rng: &mut ChaCha8Rng, cfg: &SynthConfig, velocity: &Normal<f64>, scale: &Normal<f64>) {
        self.vx = cfg.damping * self.vx + velocity.sample(rng);
        self.vy = cfg.damping * self.vy + velocity.sample(rng);
        let lo_side = 0.75 * cfg.min_side;
        let hi_side = (1.25 * cfg.max_side).min(cfg.width.min(cfg.height) as f64 / 2.0);
        self.side = (self.side * scale.sample(rng).exp()).clamp(lo_side, hi_side);
        self.cx += self.vx;
        self.cy += self.vy;
        let margin = self.side / 4.0;
        reflect(&mut self.cx, &mut self.vx, margin, cfg.width as f64 - margin);
        reflect(&mut self.cy, &mut self.vy, margin, cfg.height as f64 - margin);
    }

    fn bbox(&self) -> SquareBox {
        SquareBox::frame(self.cx, self.cy, self.side)
    }
}

fn reflect(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    for _ in 0..4 {
        if *pos < lo {
            *pos = 2.0 * lo - *pos;
            *vel = -*vel;
        } else if *pos > hi {
            *pos = 2.0 * hi - *pos;
            *vel = -*vel;
        } else {
            return;
        }
    }
    *pos = pos.clamp(lo, hi);
}

/// Pixels whose centers fall inside the square, clipped to the frame, as
/// `(x, y, u, v)` with `(u, v)` the normalized position inside the square.
fn covered_pixels(b: &SquareBox, width: usize, height: usize) -> impl Iterator<Item = (usize, usize, f64, f64)> {
    let (left, top, side) = (b.left(), b.top(), b.side);
    let x0 = (left - 0.5).ceil().max(0.0) as usize;
    let y0 = (top - 0.5).ceil().max(0.0) as usize;
    let x1 = ((left + side - 0.5).ceil().max(0.0) as usize).min(width);
    let y1 = ((top + side - 0.5).ceil().max(0.0) as usize).min(height);
    (y0..y1).flat_map(move |y| {
        (x0..x1).map(move |x| (x, y, (x as f64 + 0.5 - left) / side, (y as f64 + 0.5 - top) / side))
    })
}

fn background(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Vec<f64> {
    // two octaves of bilinearly upsampled random grids
    let octaves = [(9usize, 7usize, 50.0, 200.0), (17, 13, -25.0, 25.0)];
    let mut out = vec![0.0; width * height * 3];
    for &(gw, gh, lo, hi) in &octaves {
        let grid: Vec<f64> = (0..gw * gh * 3).map(|_| rng.random_range(lo..hi)).collect();
        for y in 0..height {
            let gy = y as f64 / (height - 1) as f64 * (gh - 1) as f64;
            let (y0, fy) = (gy.floor() as usize, gy - gy.floor());
            let y1 = (y0 + 1).min(gh - 1);
            for x in 0..width {
                let gx = x as f64 / (width - 1) as f64 * (gw - 1) as f64;
                let (x0, fx) = (gx.floor() as usize, gx - gx.floor());
                let x1 = (x0 + 1).min(gw - 1);
                for c in 0..3 {
                    let g = |xx: usize, yy: usize| grid[(yy * gw + xx) * 3 + c];
                    let v = (g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx) * (1.0 - fy)
                        + (g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx) * fy;
                    out[(y * width + x) * 3 + c] += v;
                }
            }
        }
    }
    out
}

/// Generate sequence `index` of the dataset described by `cfg`.
pub fn generate_sequence(cfg: &SynthConfig, index: usize) -> Result<SynthSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ index as u64, SeedPurpose::Generation));
    let (w, h) = (cfg.width, cfg.height);
    let velocity = Normal::new(0.0, cfg.velocity_std).map_err(|e| Error::Config(e.to_string()))?;
    let scale = Normal::new(0.0, cfg.scale_drift_std).map_err(|e| Error::Config(e.to_string()))?;
    let gain_step = Normal::new(0.0, cfg.gain_drift_std).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;

    let jitter = if cfg.length_jitter > 0.0 {
        rng.random_range(1.0 - cfg.length_jitter..1.0 + cfg.length_jitter)
    } else {
        1.0
    };
    let length = ((cfg.mean_length * jitter).round() as usize).max(2);

    let bg = background(&mut rng, w, h);
    let target_look = Appearance::random(&mut rng, true);
    let mut target = Mover::spawn(&mut rng, cfg, &velocity);
    let mut others: Vec<(Appearance, Mover)> = (0..cfg.distractors)
        .map(|_| (Appearance::random(&mut rng, false), Mover::spawn(&mut rng, cfg, &velocity)))
        .collect();
    let mut gain = 1.0;

    let mut frames = Vec::with_capacity(length);
    let mut annotations = Vec::with_capacity(length);
    let mut masks = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            target.step(&mut rng, cfg, &velocity, &scale);
            for (_, m) in &mut others {
                m.step(&mut rng, cfg, &velocity, &scale);
            }
            gain = (gain + gain_step.sample(&mut rng)).clamp(0.6, 1.4);
        }
        let mut canvas = bg.clone();
        let paint = |b: &SquareBox, look: &Appearance, canvas: &mut [f64], mut mask: Option<&mut Vec<bool>>| {
            for (x, y, u, v) in covered_pixels(b, w, h) {
                let c = look.shade(u, v);
                canvas[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&c);
                if let Some(m) = mask.as_deref_mut() {
                    m[y * w + x] = true;
                }
            }
        };
        for (look, m) in &others {
            paint(&m.bbox(), look, &mut canvas, None);
        }
        let gt = target.bbox();
        let mut mask = vec![false; w * h];
        paint(&gt, &target_look, &mut canvas, Some(&mut mask));

        if rng.random::<f64>() < cfg.occluder_prob {
            let bar_w = gt.side * rng.random_range(0.3..0.6);
            let bar_x = gt.left() + rng.random_range(0.0..gt.side - bar_w);
            let color = [rng.random_range(40.0..220.0), rng.random_range(40.0..220.0), rng.random_range(40.0..220.0)];
            let bar = SquareBox::frame(bar_x + bar_w / 2.0, gt.cy, bar_w);
            // a vertical bar spanning the target's rows
            let x0 = (bar.left() - 0.5).ceil().max(0.0) as usize;
            let x1 = ((bar.left() + bar_w - 0.5).ceil().max(0.0) as usize).min(w);
            let y0 = (gt.top() - 0.5).ceil().max(0.0) as usize;
            let y1 = ((gt.top() + gt.side - 0.5).ceil().max(0.0) as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    canvas[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
                }
            }
        }

        let mut pixels = Vec::with_capacity(w * h * 3);
        for v in &canvas {
            let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            pixels.push((v * gain + n).round().clamp(0.0, 255.0) as u8);
        }
        frames.push(FrameImage::new(w, h, pixels)?);
        annotations.push(gt);
        masks.push(mask);
    }

    Ok(SynthSequence {
        record: SequenceRecord {
            id: sequence_id(index),
            frames,
            annotations,
            fps: 30.0,
        },
        target_masks: masks,
    })
}

pub fn sequence_id(index: usize) -> String {
    format!("seq_{index:04}")
}

/// Write one sequence in the on-disk layout: `<id>/frames/%06d.ppm` and
/// `<id>/groundtruth.csv`.
pub fn write_sequence(record: &SequenceRecord, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&record.id);
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(format!("creating {}", frames_dir.display()), e))?;
    for (i, f) in record.frames.iter().enumerate() {
        write_ppm(f, &frames_dir.join(format!("{i:06}.ppm")))?;
    }
    write_annotations(&record.annotations, &dir.join("groundtruth.csv"))?;
    Ok(dir)
}

/// Generate `n` sequences under `out_dir` and write `manifest.txt` listing them.
pub fn gen_synthetic(cfg: &SynthConfig, n: usize, out_dir: &Path, exec: Execution) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::Config("need at least one sequence".into()));
    }
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let dirs = map_range(exec, n, |i| {
        let seq = generate_sequence(cfg, i)?;
        write_sequence(&seq.record, out_dir)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = (0..n).map(sequence_id).collect();
    write_manifest(&out_dir.join("manifest.txt"), &names)?;
    Ok(dirs)
}
