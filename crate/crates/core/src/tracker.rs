//! Heatmap assembly, box extraction and baseline trackers.

use std::collections::VecDeque;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BoundingBox;
use crate::config::Dims;
use crate::dataset::{Frame, LabeledSequence};
use crate::error::{ensure, PvmError, Result};
use crate::executor::{Mode, System};
use crate::topology::Topology;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// Values in [0, 1].
    Unit,
    /// Values in [0, 255].
    Byte,
}

/// Row-major grid of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub scale: Scale,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, scale: Scale) -> Result<Self> {
        ensure!(
            width > 0 && height > 0 && values.len() == width * height,
            Contract,
            "{} values for a {width}x{height} heatmap",
            values.len()
        );
        let max = match scale {
            Scale::Unit => 1.0,
            Scale::Byte => 255.0,
        };
        ensure!(
            values.iter().all(|v| (0.0..=max).contains(v)),
            Contract,
            "heatmap value outside [0, {max}]"
        );
        Ok(Heatmap {
            width,
            height,
            values,
            scale,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64, scale: Scale) -> Self {
        Heatmap {
            width,
            height,
            values: vec![value; width * height],
            scale,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    pub fn resample(&self, width: usize, height: usize) -> Heatmap {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let coord = |d: usize, s: f64, n: usize| {
            let f = ((d as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (f.floor() as usize).min(n.saturating_sub(2));
            (i, (f - i as f64).min(1.0))
        };
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let (y0, fy) = coord(y, sy, self.height);
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..width {
                let (x0, fx) = coord(x, sx, self.width);
                let x1 = (x0 + 1).min(self.width - 1);
                let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
                let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
                values.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Heatmap {
            width,
            height,
            values,
            scale: self.scale,
        }
    }

    pub fn to_image(&self) -> GrayImage {
        let k = match self.scale {
            Scale::Unit => 255.0,
            Scale::Byte => 1.0,
        };
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([(self.get(x as usize, y as usize) * k).round().clamp(0.0, 255.0) as u8])
        })
    }
}

/// Places every unit's readout patch of `layer` on the layer canvas,
/// averaging overlaps, then resamples to `out`. `readouts` is the flat
/// readout buffer of all units in id order.
pub fn assemble_layer_heatmap(
    topology: &Topology,
    layer: usize,
    readouts: &[f64],
    out: Dims,
) -> Result<Heatmap> {
    let offsets = topology.readout_offsets();
    ensure!(
        readouts.len() == *offsets.last().unwrap(),
        Protocol,
        "{} readout values published, {} expected",
        readouts.len(),
        offsets.last().unwrap()
    );
    let info = topology
        .layers
        .get(layer)
        .ok_or_else(|| PvmError::Contract(format!("no layer {layer}")))?;
    let canvas = info.canvas;
    let mut sum = vec![0.0; canvas.area()];
    let mut count = vec![0u32; canvas.area()];
    for u in &topology.units[info.units()] {
        let patch = &readouts[offsets[u.id]..offsets[u.id + 1]];
        for (a, row) in patch.chunks_exact(u.readout.w).enumerate() {
            let start = (u.readout_origin.row + a) * canvas.w + u.readout_origin.col;
            for (b, &v) in row.iter().enumerate() {
                sum[start + b] += v;
                count[start + b] += 1;
            }
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n == 0 { 0.5 } else { (s / n as f64).clamp(0.0, 1.0) })
        .collect();
    Ok(Heatmap::new(canvas.w, canvas.h, values, Scale::Unit)?.resample(out.w, out.h))
}

/// Per-layer heatmaps of the system's currently published readouts.
pub fn layer_heatmaps(system: &System) -> Result<Vec<Heatmap>> {
    let topo = system.topology();
    (0..topo.layers.len())
        .map(|k| assemble_layer_heatmap(topo, k, system.published_readout(), system.config().heatmap))
        .collect()
}

/// Pixelwise mean of unit-scale maps, scaled to [0, 255].
pub fn combine_heatmaps(maps: &[Heatmap]) -> Result<Heatmap> {
    ensure!(!maps.is_empty(), Contract, "no heatmaps to combine");
    let (w, h) = (maps[0].width, maps[0].height);
    ensure!(
        maps.iter().all(|m| m.width == w && m.height == h && m.scale == Scale::Unit),
        Contract,
        "heatmaps must share size and be unit scale"
    );
    let n = maps.len() as f64;
    let values = (0..w * h)
        .map(|i| (maps.iter().map(|m| m.values[i]).sum::<f64>() / n * 255.0).clamp(0.0, 255.0))
        .collect();
    Ok(Heatmap {
        width: w,
        height: h,
        values,
        scale: Scale::Byte,
    })
}

/// Box extraction result with the statistics behind it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub peak: f64,
    pub median: f64,
}

/// Lower-middle element of the sorted values.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Index of the maximum; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// 8-connected component of `mask` containing `seed`, as a tight
/// inclusive box `(x0, y0, x1, y1)`.
fn component_box(mask: &[bool], width: usize, height: usize, seed: usize) -> (usize, usize, usize, usize) {
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::from([seed]);
    seen[seed] = true;
    let (mut x0, mut y0, mut x1, mut y1) = (seed % width, seed / width, seed % width, seed / width);
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % width, i / width);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
        for ny in y.saturating_sub(1)..=(y + 1).min(height - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                let j = ny * width + nx;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    (x0, y0, x1, y1)
}

/// Thresholded peak detection on a byte-scale heatmap. The box is returned
/// in frame pixels, `frame / heatmap` pixels per heatmap pixel.
pub fn detect(map: &Heatmap, threshold: f64, frame: Dims) -> Detection {
    let peak_index = argmax(&map.values);
    let peak = map.values[peak_index];
    let median = lower_median(&map.values);
    if peak <= median + threshold {
        return Detection {
            bbox: BoundingBox::ABSENT,
            peak,
            median,
        };
    }
    let cutoff = (peak - median) * 0.5 + median;
    let mask: Vec<bool> = map.values.iter().map(|&v| v > cutoff).collect();
    let (x0, y0, x1, y1) = component_box(&mask, map.width, map.height, peak_index);
    let sx = frame.w as f64 / map.width as f64;
    let sy = frame.h as f64 / map.height as f64;
    Detection {
        bbox: BoundingBox::new(
            x0 as f64 * sx,
            y0 as f64 * sy,
            (x1 - x0 + 1) as f64 * sx,
            (y1 - y0 + 1) as f64 * sy,
        ),
        peak,
        median,
    }
}

pub fn get_bounding_box(map: &Heatmap, threshold: f64, frame: Dims) -> BoundingBox {
    detect(map, threshold, frame).bbox
}

/// Per-frame tracker output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackResult {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub peak: f64,
    pub median: f64,
}

/// Presents `frame` `settle_steps` times with learning off and extracts a
/// box from the final step's readouts.
pub fn track_frame(system: &mut System, frame: &Frame, settle_steps: usize) -> Result<Detection> {
    ensure!(settle_steps >= 1, Contract, "settle_steps must be at least 1");
    for _ in 0..settle_steps {
        system.step(frame, None, Mode::Eval)?;
    }
    let combined = combine_heatmaps(&layer_heatmaps(system)?)?;
    Ok(detect(&combined, system.config().threshold, system.config().frame))
}

/// Tracks every frame of `seq`, starting from a copy of `system`.
/// With `dump`, writes per-layer and combined heatmaps for each frame.
pub fn track_sequence(
    system: &System,
    seq: &LabeledSequence,
    settle_steps: usize,
    dump: Option<&Path>,
) -> Result<Vec<TrackResult>> {
    let mut s = system.clone();
    let mut out = Vec::with_capacity(seq.len());
    for (i, frame) in seq.frames.iter().enumerate() {
        let d = track_frame(&mut s, frame, settle_steps)?;
        if let Some(dir) = dump {
            dump_heatmaps(&s, dir, i)?;
        }
        out.push(TrackResult {
            frame: i,
            bbox: d.bbox,
            peak: d.peak,
            median: d.median,
        });
    }
    Ok(out)
}

/// Writes `layer{k}_{index}.png` for every layer and `combined_{index}.png`,
/// each upscaled ×8 with nearest-neighbour sampling.
pub fn dump_heatmaps(system: &System, dir: &Path, index: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PvmError::io(dir, e))?;
    let layers = layer_heatmaps(system)?;
    let combined = combine_heatmaps(&layers)?;
    let named = layers
        .iter()
        .enumerate()
        .map(|(k, m)| (format!("layer{k}_{index:06}.png"), m))
        .chain(std::iter::once((format!("combined_{index:06}.png"), &combined)));
    for (name, map) in named {
        let img = map.to_image();
        let big = image::imageops::resize(
            &img,
            img.width() * 8,
            img.height() * 8,
            image::imageops::FilterType::Nearest,
        );
        let path = dir.join(name);
        big.save(&path).map_err(|source| PvmError::Image { path, source })?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    /// Repeats the priming box on every frame.
    Null(BoundingBox),
    /// Frame-centered box of a tenth of the frame size, always present.
    Center,
    /// Ground truth with position and size jittered uniformly by up to
    /// `perturb` times the box dimension.
    PerturbedTruth { perturb: f64, seed: u64 },
}

pub fn baseline_track(kind: Baseline, frame: Dims, truth: &[BoundingBox]) -> Result<Vec<BoundingBox>> {
    match kind {
        Baseline::Null(b) => Ok(vec![b; truth.len()]),
        Baseline::Center => {
            let (w, h) = (frame.w as f64 * 0.1, frame.h as f64 * 0.1);
            let b = BoundingBox::new((frame.w as f64 - w) / 2.0, (frame.h as f64 - h) / 2.0, w, h);
            Ok(vec![b; truth.len()])
        }
        Baseline::PerturbedTruth { perturb, seed } => {
            ensure!(
                (0.0..1.0).contains(&perturb),
                Contract,
                "perturbation {perturb} outside [0, 1)"
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(truth
                .iter()
                .map(|t| {
                    // draw for every frame so absent frames don't shift the stream
                    let u: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0) * perturb);
                    if !t.present {
                        return BoundingBox::ABSENT;
                    }
                    BoundingBox::new(
                        t.x + u[0] * t.w,
                        t.y + u[1] * t.h,
                        t.w * (1.0 + u[2]),
                        t.h * (1.0 + u[3]),
                    )
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PvmConfig;

    fn byte(w: usize, h: usize, values: Vec<f64>) -> Heatmap {
        Heatmap::new(w, h, values, Scale::Byte).unwrap()
    }

    #[test]
    fn uniform_is_absent() {
        for level in [0.0, 100.0, 255.0] {
            let m = Heatmap::filled(16, 16, level, Scale::Byte);
            assert!(!get_bounding_box(&m, 32.0, Dims::new(96, 96)).present);
        }
    }

    #[test]
    fn single_pixel() {
        let mut v = vec![0.0; 256];
        v[3 * 16 + 5] = 255.0;
        let d = detect(&byte(16, 16, v), 32.0, Dims::new(96, 96));
        assert_eq!(d.bbox, BoundingBox::new(30.0, 18.0, 6.0, 6.0));
        assert_eq!((d.peak, d.median), (255.0, 0.0));
    }

    #[test]
    fn peak_in_smaller_blob_wins() {
        let mut v = vec![0.0; 256];
        for y in 8..14 {
            for x in 8..14 {
                v[y * 16 + x] = 200.0;
            }
        }
        v[16 + 1] = 250.0;
        v[16 + 2] = 210.0;
        let b = get_bounding_box(&byte(16, 16, v), 32.0, Dims::new(16, 16));
        assert_eq!(b, BoundingBox::new(1.0, 1.0, 2.0, 1.0));
    }

    #[test]
    fn diagonal_neighbors_connect() {
        let mut v = vec![0.0; 16];
        v[0] = 255.0;
        v[5] = 200.0;
        v[10] = 200.0;
        let b = get_bounding_box(&byte(4, 4, v), 32.0, Dims::new(4, 4));
        assert_eq!(b, BoundingBox::new(0.0, 0.0, 3.0, 3.0));
    }

    #[test]
    fn median_and_argmax_ties() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&[5.0]), 5.0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn combine_examples() {
        let half = Heatmap::filled(16, 16, 0.5, Scale::Unit);
        let c = combine_heatmaps(&vec![half.clone(); 6]).unwrap();
        assert!(c.values.iter().all(|&v| v == 127.5));

        let mut one = Heatmap::filled(16, 16, 0.0, Scale::Unit);
        one.values[7] = 1.0;
        let zero = Heatmap::filled(16, 16, 0.0, Scale::Unit);
        let mut maps = vec![zero; 5];
        maps.push(one);
        let c = combine_heatmaps(&maps).unwrap();
        assert!((c.values[7] - 42.5).abs() < 1e-12);
        maps.reverse();
        assert_eq!(combine_heatmaps(&maps).unwrap(), c);

        assert!(combine_heatmaps(&[half, Heatmap::filled(8, 8, 0.5, Scale::Unit)]).is_err());
    }

    #[test]
    fn reference_layers_assemble_to_16x16() {
        let topo = Topology::build(&PvmConfig::reference()).unwrap();
        let total = *topo.readout_offsets().last().unwrap();
        let readouts: Vec<f64> = (0..total).map(|i| (i % 97) as f64 / 97.0).collect();
        for k in 0..topo.layers.len() {
            let m = assemble_layer_heatmap(&topo, k, &readouts, Dims::new(16, 16)).unwrap();
            assert_eq!((m.width, m.height), (16, 16));
        }
        // layer 0: one readout pixel per unit, placed directly
        let m0 = assemble_layer_heatmap(&topo, 0, &readouts, Dims::new(16, 16)).unwrap();
        assert_eq!(m0.values, readouts[..256].to_vec());
        assert!(assemble_layer_heatmap(&topo, 0, &readouts[1..], Dims::new(16, 16)).is_err());
    }

    #[test]
    fn uniform_readouts_give_uniform_map() {
        let topo = Topology::build(&PvmConfig::reference()).unwrap();
        let total = *topo.readout_offsets().last().unwrap();
        for k in 0..topo.layers.len() {
            let m = assemble_layer_heatmap(&topo, k, &vec![0.5; total], Dims::new(16, 16)).unwrap();
            assert!(m.values.iter().all(|&v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn resample_preserves_constant_and_doubles_pixels() {
        let m = Heatmap::new(2, 1, vec![0.0, 1.0], Scale::Unit).unwrap();
        let r = m.resample(4, 1);
        assert_eq!(r.values, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn baselines() {
        let truth = vec![BoundingBox::new(10.0, 20.0, 8.0, 6.0), BoundingBox::ABSENT];
        let c = baseline_track(Baseline::Center, Dims::new(96, 96), &truth).unwrap();
        for b in &c {
            assert!((b.x - 43.2).abs() < 1e-9 && (b.y - 43.2).abs() < 1e-9);
            assert!((b.w - 9.6).abs() < 1e-9 && (b.h - 9.6).abs() < 1e-9 && b.present);
        }
        let p = baseline_track(Baseline::PerturbedTruth { perturb: 0.0, seed: 1 }, Dims::new(96, 96), &truth)
            .unwrap();
        assert_eq!(p, truth);
        let p = baseline_track(Baseline::PerturbedTruth { perturb: 0.4, seed: 1 }, Dims::new(96, 96), &truth)
            .unwrap();
        assert!(p[0].present && !p[1].present);
        assert!((p[0].x - 10.0).abs() <= 0.4 * 8.0 && (p[0].w - 8.0).abs() <= 0.4 * 8.0);
        assert!(baseline_track(Baseline::PerturbedTruth { perturb: 1.0, seed: 1 }, Dims::new(9, 9), &truth).is_err());
        let n = baseline_track(Baseline::Null(truth[0]), Dims::new(96, 96), &truth).unwrap();
        assert_eq!(n, vec![truth[0]; 2]);
    }

    #[test]
    fn untrained_system_reports_absent() {
        let mut s = System::new(PvmConfig::desk(), 1).unwrap();
        for u in s.units_mut() {
            u.mlp_mut().w_readout_mut().fill(0.0);
        }
        let d = track_frame(&mut s, &Frame::filled(32, 32, 0.3), 2).unwrap();
        assert!(!d.bbox.present);
    }
}
