//! Frames, labeled sequences, tiling and readout supervision.
//!
//! A sequence on disk is a directory of image files (PNG or JPEG, ordered by
//! file name) plus `labels.csv` with one line per frame:
//!
//! ```text
//! frame_index,present,x,y,w,h
//! ```
//!
//! Coordinates are in source-image pixels. A leading header line and lines
//! starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;

use crate::bbox::BoundingBox;
use crate::config::{Dims, CHANNELS};
use crate::error::{ensure, PvmError, Result};
use crate::topology::{LayerInfo, Topology};

pub const LABEL_FILE: &str = "labels.csv";

/// RGB frame, row-major with interleaved channels, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == width * height * CHANNELS,
            Contract,
            "frame data has {} values for {width}x{height}x{CHANNELS}",
            data.len()
        );
        ensure!(
            data.iter().all(|v| (0.0..=1.0).contains(v)),
            Contract,
            "frame values must lie in [0, 1]"
        );
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Frame {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height * CHANNELS],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * CHANNELS + c] = v.clamp(0.0, 1.0);
    }

    pub fn from_image(img: &RgbImage) -> Self {
        Frame {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn to_image(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches")
    }

    /// Copies tile `index` (row-major over the tile grid) into `out`,
    /// row-major within the tile with channels fastest.
    pub fn tile_into(&self, tile: Dims, index: usize, out: &mut [f64]) {
        let grid_w = self.width / tile.w;
        let (ty, tx) = (index / grid_w, index % grid_w);
        let row_len = tile.w * CHANNELS;
        for r in 0..tile.h {
            let y = ty * tile.h + r;
            let start = (y * self.width + tx * tile.w) * CHANNELS;
            for (o, &v) in out[r * row_len..(r + 1) * row_len]
                .iter_mut()
                .zip(&self.data[start..start + row_len])
            {
                *o = v as f64;
            }
        }
    }
}

/// Splits a frame into tiles, row-major over the tile grid.
pub fn tile_frame(frame: &Frame, tile: Dims) -> Result<Vec<Vec<f64>>> {
    ensure!(
        tile.w > 0 && tile.h > 0 && frame.width % tile.w == 0 && frame.height % tile.h == 0,
        Contract,
        "frame {} is not divisible into {} tiles",
        frame.dims(),
        tile
    );
    let count = (frame.width / tile.w) * (frame.height / tile.h);
    Ok((0..count)
        .map(|i| {
            let mut t = vec![0.0; tile.area() * CHANNELS];
            frame.tile_into(tile, i, &mut t);
            t
        })
        .collect())
}

/// Inverse of [`tile_frame`].
pub fn untile_frame(tiles: &[Vec<f64>], tile: Dims, frame: Dims) -> Result<Frame> {
    let grid_w = frame.w / tile.w;
    ensure!(
        tiles.len() == grid_w * (frame.h / tile.h),
        Contract,
        "{} tiles for a {} frame",
        tiles.len(),
        frame
    );
    let mut data = vec![0.0f32; frame.area() * CHANNELS];
    for (i, t) in tiles.iter().enumerate() {
        let (ty, tx) = (i / grid_w, i % grid_w);
        for r in 0..tile.h {
            for c in 0..tile.w * CHANNELS {
                let y = ty * tile.h + r;
                data[(y * frame.w + tx * tile.w) * CHANNELS + c] = t[r * tile.w * CHANNELS + c] as f32;
            }
        }
    }
    Frame::new(frame.w, frame.h, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSequence {
    pub name: String,
    pub frames: Vec<Frame>,
    pub labels: Vec<BoundingBox>,
}

impl LabeledSequence {
    pub fn new(name: impl Into<String>, frames: Vec<Frame>, labels: Vec<BoundingBox>) -> Result<Self> {
        ensure!(
            frames.len() == labels.len(),
            Contract,
            "{} frames but {} labels",
            frames.len(),
            labels.len()
        );
        Ok(LabeledSequence {
            name: name.into(),
            frames,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Parses label lines; `scale` maps source pixels to model pixels.
pub fn parse_labels(text: &str, path: &Path, scale: (f64, f64)) -> Result<Vec<BoundingBox>> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (labels.is_empty() && line.starts_with("frame")) {
            continue;
        }
        let err = |msg: String| PvmError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad frame index {:?}", fields[0])))?;
        if index != labels.len() {
            return Err(err(format!("frame index {index}, expected {}", labels.len())));
        }
        let present = match fields[1] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("present flag must be 0 or 1, found {other:?}"))),
        };
        let mut v = [0.0f64; 4];
        for (slot, s) in v.iter_mut().zip(&fields[2..]) {
            *slot = s
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| err(format!("bad coordinate {s:?}")))?;
        }
        labels.push(if present {
            BoundingBox::new(v[0], v[1], v[2], v[3]).rescaled(scale.0, scale.1)
        } else {
            BoundingBox::ABSENT
        });
    }
    Ok(labels)
}

pub fn format_labels(labels: &[BoundingBox]) -> String {
    let mut out = String::from("frame_index,present,x,y,w,h\n");
    for (i, b) in labels.iter().enumerate() {
        writeln!(out, "{i},{},{},{},{},{}", b.present as u8, b.x, b.y, b.w, b.h).unwrap();
    }
    out
}

/// Loads a sequence directory, resizing frames bilinearly to `size` and
/// rescaling labels to match.
pub fn load_sequence(dir: impl AsRef<Path>, size: Dims) -> Result<LabeledSequence> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PvmError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    files.sort();

    let mut frames = Vec::with_capacity(files.len());
    let mut source: Option<(u32, u32)> = None;
    for f in &files {
        let img = image::open(f)
            .map_err(|e| PvmError::Image {
                path: f.clone(),
                source: e,
            })?
            .to_rgb8();
        let dims = img.dimensions();
        match source {
            None => source = Some(dims),
            Some(s) if s != dims => {
                return Err(PvmError::Contract(format!(
                    "{}: size {}x{} differs from first frame {}x{}",
                    f.display(),
                    dims.0,
                    dims.1,
                    s.0,
                    s.1
                )))
            }
            _ => {}
        }
        let img = if dims == (size.w as u32, size.h as u32) {
            img
        } else {
            image::imageops::resize(&img, size.w as u32, size.h as u32, FilterType::Triangle)
        };
        frames.push(Frame::from_image(&img));
    }

    let label_path = dir.join(LABEL_FILE);
    let text = std::fs::read_to_string(&label_path).map_err(|e| PvmError::io(&label_path, e))?;
    let (sw, sh) = source.unwrap_or((size.w as u32, size.h as u32));
    let labels = parse_labels(
        &text,
        &label_path,
        (size.w as f64 / sw as f64, size.h as f64 / sh as f64),
    )?;
    ensure!(
        labels.len() == frames.len(),
        Contract,
        "{}: {} frames but {} label lines",
        dir.display(),
        frames.len(),
        labels.len()
    );
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledSequence::new(name, frames, labels)
}

/// Writes frames as PNG and labels in model pixel coordinates.
pub fn save_sequence(seq: &LabeledSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| PvmError::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:06}.png"));
        f.to_image().save(&path).map_err(|e| PvmError::Image { path, source: e })?;
    }
    let path = dir.join(LABEL_FILE);
    std::fs::write(&path, format_labels(&seq.labels)).map_err(|e| PvmError::io(&path, e))
}

/// Loads every sequence under `path`: the directory itself if it holds a
/// label file, otherwise each subdirectory that does, in name order.
pub fn load_sequences(path: impl AsRef<Path>, size: Dims) -> Result<Vec<LabeledSequence>> {
    let path = path.as_ref();
    if path.join(LABEL_FILE).is_file() {
        return Ok(vec![load_sequence(path, size)?]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| PvmError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(LABEL_FILE).is_file())
        .collect();
    dirs.sort();
    ensure!(
        !dirs.is_empty(),
        Contract,
        "{} contains no labeled sequences",
        path.display()
    );
    dirs.iter().map(|d| load_sequence(d, size)).collect()
}

/// Supervision for every unit's readout head, flat in unit order.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutTargets {
    pub values: Vec<f64>,
}

impl ReadoutTargets {
    pub fn uniform(topology: &Topology, value: f64) -> Self {
        let total = topology.units.iter().map(|u| u.readout.area()).sum();
        ReadoutTargets {
            values: vec![value; total],
        }
    }
}

/// Native-resolution target canvas of one layer: 1 where a canvas pixel's
/// frame area overlaps the box, else 0.
pub fn layer_target_canvas(layer: &LayerInfo, target: &BoundingBox) -> Vec<f64> {
    let (pw, ph) = (layer.readout_pitch.w as f64, layer.readout_pitch.h as f64);
    let mut canvas = Vec::with_capacity(layer.canvas.area());
    for r in 0..layer.canvas.h {
        for c in 0..layer.canvas.w {
            let (x0, y0) = (c as f64 * pw, r as f64 * ph);
            let hit = target.overlaps_rect(x0, y0, x0 + pw, y0 + ph);
            canvas.push(if hit { 1.0 } else { 0.0 });
        }
    }
    canvas
}

/// Rasterizes a ground-truth box into per-unit readout targets. Absent
/// targets supervise every readout toward 0.5.
pub fn rasterize_targets(target: &BoundingBox, topology: &Topology) -> ReadoutTargets {
    if !target.present {
        return ReadoutTargets::uniform(topology, 0.5);
    }
    let mut values = Vec::new();
    for layer in &topology.layers {
        let canvas = layer_target_canvas(layer, target);
        for u in &topology.units[layer.units()] {
            for a in 0..u.readout.h {
                let row = u.readout_origin.row + a;
                let start = row * layer.canvas.w + u.readout_origin.col;
                values.extend_from_slice(&canvas[start..start + u.readout.w]);
            }
        }
    }
    ReadoutTargets { values }
}
