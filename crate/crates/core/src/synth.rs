//! Seeded synthetic videos with exact ground truth.
//!
//! The bouncing-square scene moves a colored square over a static textured
//! background. The square bounces elastically inside an arena that extends
//! `margin` pixels past every frame edge, so it regularly leaves the view.
//! Frame values are quantized to 8 bits so sequences survive a PNG round
//! trip exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::config::{Dims, CHANNELS};
use crate::dataset::{Frame, LabeledSequence};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    BouncingSquare,
    /// The bouncing scene frozen at its first frame.
    Constant,
    /// Uniform gray, target always absent.
    Blank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub length: usize,
    /// Side of the square in pixels.
    pub square: usize,
    /// Pixels per frame.
    pub speed: f64,
    /// How far the arena extends past each frame edge.
    pub margin: f64,
    pub color: [f32; 3],
    /// Half-range of the background texture around mid gray.
    pub texture_amplitude: f32,
    /// Side of one texture cell in pixels.
    pub texture_cell: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            kind: SynthKind::BouncingSquare,
            length: 1000,
            square: 8,
            speed: 1.0,
            margin: 12.0,
            color: [1.0, 0.1, 0.1],
            texture_amplitude: 0.15,
            texture_cell: 4,
        }
    }
}

/// Synthetic training and test sets declared in a model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDataset {
    #[serde(default)]
    pub params: SynthParams,
    pub train_seeds: Vec<u64>,
    #[serde(default)]
    pub test_seeds: Vec<u64>,
}

impl SynthDataset {
    pub fn validate(&self, frame: Dims) -> Result<()> {
        self.params.validate(frame)?;
        ensure!(!self.train_seeds.is_empty(), Config, "synthetic.train_seeds is empty");
        Ok(())
    }

    pub fn train(&self, frame: Dims) -> Result<Vec<LabeledSequence>> {
        self.train_seeds
            .iter()
            .map(|&s| synth_sequence(&self.params, frame, s))
            .collect()
    }

    pub fn test(&self, frame: Dims) -> Result<Vec<LabeledSequence>> {
        self.test_seeds
            .iter()
            .map(|&s| synth_sequence(&self.params, frame, s))
            .collect()
    }
}

impl SynthParams {
    pub fn validate(&self, frame: Dims) -> Result<()> {
        ensure!(self.length > 0, Config, "synthetic length must be positive");
        ensure!(
            self.square > 0 && self.square <= frame.w.min(frame.h),
            Config,
            "square side {} does not fit the {} frame",
            self.square,
            frame
        );
        ensure!(
            self.speed.is_finite() && self.speed >= 0.0 && self.margin.is_finite() && self.margin >= 0.0,
            Config,
            "speed and margin must be finite and non-negative"
        );
        ensure!(
            self.color.iter().all(|c| (0.0..=1.0).contains(c))
                && (0.0..=0.5).contains(&self.texture_amplitude),
            Config,
            "color channels must be in [0,1] and texture amplitude in [0,0.5]"
        );
        ensure!(self.texture_cell > 0, Config, "texture_cell must be positive");
        Ok(())
    }
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Square position (top-left, continuous) for each frame.
fn trajectory(params: &SynthParams, frame: Dims, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let side = params.square as f64;
    let lo = -params.margin;
    let hi = (frame.w as f64 + params.margin - side, frame.h as f64 + params.margin - side);
    let mut x = rng.random_range(0.0..=(frame.w as f64 - side));
    let mut y = rng.random_range(0.0..=(frame.h as f64 - side));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (mut vx, mut vy) = (params.speed * angle.cos(), params.speed * angle.sin());
    let reflect = |p: &mut f64, v: &mut f64, hi: f64| {
        if *p < lo {
            *p = 2.0 * lo - *p;
            *v = -*v;
        } else if *p > hi {
            *p = 2.0 * hi - *p;
            *v = -*v;
        }
    };
    let mut out = Vec::with_capacity(params.length);
    for _ in 0..params.length {
        out.push((x, y));
        if params.kind == SynthKind::BouncingSquare {
            x += vx;
            y += vy;
            reflect(&mut x, &mut vx, hi.0);
            reflect(&mut y, &mut vy, hi.1);
        }
    }
    out
}

fn texture(params: &SynthParams, frame: Dims, rng: &mut ChaCha8Rng) -> Frame {
    let cell = params.texture_cell;
    let cells_w = frame.w.div_ceil(cell);
    let cells_h = frame.h.div_ceil(cell);
    let cells: Vec<[f32; 3]> = (0..cells_w * cells_h)
        .map(|_| {
            let base: f32 = rng.random_range(-1.0..=1.0);
            std::array::from_fn(|_| {
                let jitter: f32 = rng.random_range(-0.25..=0.25);
                quantize(0.5 + params.texture_amplitude * (base + jitter).clamp(-1.0, 1.0))
            })
        })
        .collect();
    let mut data = Vec::with_capacity(frame.area() * CHANNELS);
    for y in 0..frame.h {
        for x in 0..frame.w {
            data.extend_from_slice(&cells[(y / cell) * cells_w + x / cell]);
        }
    }
    Frame::new(frame.w, frame.h, data).expect("texture values are in range")
}

/// Generates a deterministic labeled sequence from `seed`.
pub fn synth_sequence(params: &SynthParams, frame: Dims, seed: u64) -> Result<LabeledSequence> {
    params.validate(frame)?;
    let name = format!("synth-{seed}");
    if params.kind == SynthKind::Blank {
        let frames = vec![Frame::filled(frame.w, frame.h, quantize(0.5)); params.length];
        return LabeledSequence::new(name, frames, vec![BoundingBox::ABSENT; params.length]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = texture(params, frame, &mut rng);
    let color = params.color.map(quantize);
    let side = params.square as i64;

    let mut frames = Vec::with_capacity(params.length);
    let mut labels = Vec::with_capacity(params.length);
    for (px, py) in trajectory(params, frame, &mut rng) {
        let (sx, sy) = (px.round() as i64, py.round() as i64);
        let x0 = sx.clamp(0, frame.w as i64) as usize;
        let x1 = (sx + side).clamp(0, frame.w as i64) as usize;
        let y0 = sy.clamp(0, frame.h as i64) as usize;
        let y1 = (sy + side).clamp(0, frame.h as i64) as usize;
        let mut f = background.clone();
        for y in y0..y1 {
            for x in x0..x1 {
                for (c, &v) in color.iter().enumerate() {
                    f.set(x, y, c, v);
                }
            }
        }
        frames.push(f);
        labels.push(if x1 > x0 && y1 > y0 {
            BoundingBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64)
        } else {
            BoundingBox::ABSENT
        });
    }
    LabeledSequence::new(name, frames, labels)
}
