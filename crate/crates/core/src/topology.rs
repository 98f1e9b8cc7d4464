//! Wiring of the unit pyramid.
//!
//! Units are numbered layer by layer, row-major within a layer, so unit ids
//! sort by (layer, row, col). Every per-unit list below is kept in id order,
//! and the context vector of a unit is the concatenation of the hidden
//! activations of its [`ContextSource`]s in the order stored here:
//! self, lateral neighbors, superiors, then the topmost unit. This order is
//! part of the checkpoint format.

use crate::config::{Dims, PvmConfig};
use crate::error::{ensure, PvmError, Result};

pub type UnitId = usize;

/// Grid coordinate of a unit inside its layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextKind {
    SelfLoop,
    Lateral,
    Feedback,
    Topmost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextSource {
    pub unit: UnitId,
    pub kind: ContextKind,
}

/// Axis-aligned rectangle in frame pixels, half-open.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerInfo {
    pub grid: Dims,
    /// Id of the first unit in the layer.
    pub first_unit: UnitId,
    /// Fan-in stride from the layer below (per axis); `None` for layer 0.
    pub stride: Option<Dims>,
    /// Receptive field of one unit, in tiles.
    pub field_tiles: Dims,
    /// Offset between neighboring units' receptive fields, in tiles.
    pub field_step_tiles: Dims,
    /// Readout patch per unit.
    pub readout: Dims,
    /// Frame pixels covered by one readout pixel.
    pub readout_pitch: Dims,
    /// Native heatmap canvas of the layer (frame size / pitch).
    pub canvas: Dims,
}

impl LayerInfo {
    pub fn unit_count(&self) -> usize {
        self.grid.area()
    }

    pub fn units(&self) -> std::ops::Range<UnitId> {
        self.first_unit..self.first_unit + self.unit_count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitInfo {
    pub id: UnitId,
    pub layer: usize,
    pub cell: Cell,
    pub signal_size: usize,
    pub context_size: usize,
    pub readout: Dims,
    /// Lower-layer units whose hidden activations form this unit's signal.
    pub feedforward: Vec<UnitId>,
    pub lateral: Vec<UnitId>,
    /// Superior units sending context down; exact transpose of `feedforward`.
    pub feedback: Vec<UnitId>,
    pub context: Vec<ContextSource>,
    /// Receptive field in frame pixels.
    pub field: PixelRect,
    /// Top-left of the readout patch on the layer canvas.
    pub readout_origin: Cell,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub frame: Dims,
    pub tile: Dims,
    pub hidden_size: usize,
    pub layers: Vec<LayerInfo>,
    pub units: Vec<UnitInfo>,
    pub topmost: Option<UnitId>,
}

/// Fan-in stride along one axis: halving layers use disjoint pairs,
/// layers one smaller use overlapping pairs.
fn axis_stride(lower: usize, upper: usize) -> Option<usize> {
    if upper == 0 {
        None
    } else if lower % 2 == 0 && upper == lower / 2 {
        Some(2)
    } else if upper + 1 == lower {
        Some(1)
    } else {
        None
    }
}

/// 2×2 fan-in windows of every upper-layer cell, row-major over the upper
/// grid; each window lists its lower cells row-major.
pub fn derive_fanin_windows(lower: Dims, upper: Dims) -> Result<Vec<[Cell; 4]>> {
    let sx = axis_stride(lower.w, upper.w);
    let sy = axis_stride(lower.h, upper.h);
    let (Some(sx), Some(sy)) = (sx, sy) else {
        return Err(PvmError::Topology(format!(
            "cannot connect layer {lower} to layer {upper}: each axis must halve or shrink by one"
        )));
    };
    let mut windows = Vec::with_capacity(upper.area());
    for row in 0..upper.h {
        for col in 0..upper.w {
            let (r, c) = (row * sy, col * sx);
            windows.push([
                Cell { row: r, col: c },
                Cell { row: r, col: c + 1 },
                Cell { row: r + 1, col: c },
                Cell {
                    row: r + 1,
                    col: c + 1,
                },
            ]);
        }
    }
    Ok(windows)
}

impl Topology {
    /// Receptive field of one unit per layer, measured in tiles.
    pub fn receptive_field_tiles(layers: &[Dims]) -> Result<Vec<Dims>> {
        Ok(Self::fields(layers)?.into_iter().map(|(f, _, _)| f).collect())
    }

    /// (field, step, stride) per layer.
    fn fields(layers: &[Dims]) -> Result<Vec<(Dims, Dims, Option<Dims>)>> {
        let mut out = Vec::with_capacity(layers.len());
        let mut field = Dims::new(1, 1);
        let mut step = Dims::new(1, 1);
        out.push((field, step, None));
        for pair in layers.windows(2) {
            let (lower, upper) = (pair[0], pair[1]);
            let stride = match (axis_stride(lower.w, upper.w), axis_stride(lower.h, upper.h)) {
                (Some(sx), Some(sy)) => Dims::new(sx, sy),
                _ => {
                    return Err(PvmError::Topology(format!(
                        "cannot connect layer {lower} to layer {upper}: each axis must halve or shrink by one"
                    )))
                }
            };
            field = Dims::new(field.w + step.w, field.h + step.h);
            step = Dims::new(step.w * stride.w, step.h * stride.h);
            out.push((field, step, Some(stride)));
        }
        Ok(out)
    }

    pub fn build(config: &PvmConfig) -> Result<Topology> {
        let hidden = config.hidden_size;
        let tile = config.tile;
        ensure!(
            config.readout.len() == config.layers.len(),
            Topology,
            "{} readout sizes for {} layers",
            config.readout.len(),
            config.layers.len()
        );
        let fields = Self::fields(&config.layers)?;

        let mut layers = Vec::with_capacity(config.layers.len());
        let mut first_unit = 0;
        for (k, (&grid, &(field, step, stride))) in config.layers.iter().zip(&fields).enumerate() {
            let readout = config.readout[k];
            let field_px = Dims::new(field.w * tile.w, field.h * tile.h);
            let step_px = Dims::new(step.w * tile.w, step.h * tile.h);
            ensure!(
                field_px.w % readout.w == 0 && field_px.h % readout.h == 0,
                Topology,
                "layer {k}: readout {readout} does not evenly divide the {field_px} pixel receptive field"
            );
            let pitch = Dims::new(field_px.w / readout.w, field_px.h / readout.h);
            ensure!(
                (grid.w == 1 || step_px.w % pitch.w == 0)
                    && (grid.h == 1 || step_px.h % pitch.h == 0)
                    && config.frame.w % pitch.w == 0
                    && config.frame.h % pitch.h == 0,
                Topology,
                "layer {k}: readout {readout} gives pixel pitch {pitch} that does not align with unit spacing {step_px} or frame {}",
                config.frame
            );
            layers.push(LayerInfo {
                grid,
                first_unit,
                stride,
                field_tiles: field,
                field_step_tiles: step,
                readout,
                readout_pitch: pitch,
                canvas: Dims::new(config.frame.w / pitch.w, config.frame.h / pitch.h),
            });
            first_unit += grid.area();
        }
        let unit_count = first_unit;
        let top_layer = layers.len() - 1;
        let topmost = (layers[top_layer].grid.area() == 1).then_some(layers[top_layer].first_unit);

        let id_of = |layer: usize, cell: Cell| -> UnitId {
            layers[layer].first_unit + cell.row * layers[layer].grid.w + cell.col
        };

        let mut units: Vec<UnitInfo> = Vec::with_capacity(unit_count);
        for (k, info) in layers.iter().enumerate() {
            for row in 0..info.grid.h {
                for col in 0..info.grid.w {
                    let cell = Cell { row, col };
                    let step_px = Dims::new(
                        info.field_step_tiles.w * tile.w,
                        info.field_step_tiles.h * tile.h,
                    );
                    let field = PixelRect {
                        x: col * step_px.w,
                        y: row * step_px.h,
                        w: info.field_tiles.w * tile.w,
                        h: info.field_tiles.h * tile.h,
                    };
                    let mut lateral = Vec::new();
                    if row > 0 {
                        lateral.push(id_of(k, Cell { row: row - 1, col }));
                    }
                    if col > 0 {
                        lateral.push(id_of(k, Cell { row, col: col - 1 }));
                    }
                    if col + 1 < info.grid.w {
                        lateral.push(id_of(k, Cell { row, col: col + 1 }));
                    }
                    if row + 1 < info.grid.h {
                        lateral.push(id_of(k, Cell { row: row + 1, col }));
                    }
                    units.push(UnitInfo {
                        id: id_of(k, cell),
                        layer: k,
                        cell,
                        signal_size: 0,
                        context_size: 0,
                        readout: info.readout,
                        feedforward: Vec::new(),
                        lateral,
                        feedback: Vec::new(),
                        context: Vec::new(),
                        field,
                        readout_origin: Cell {
                            row: field.y / info.readout_pitch.h,
                            col: field.x / info.readout_pitch.w,
                        },
                    });
                }
            }
        }

        for k in 1..layers.len() {
            let windows = derive_fanin_windows(layers[k - 1].grid, layers[k].grid)?;
            for (i, window) in windows.iter().enumerate() {
                let upper = layers[k].first_unit + i;
                for &cell in window {
                    let lower = id_of(k - 1, cell);
                    units[upper].feedforward.push(lower);
                    units[lower].feedback.push(upper);
                }
            }
        }

        let tile_len = config.tile_len();
        for u in &mut units {
            u.feedback.sort_unstable();
            u.signal_size = if u.layer == 0 {
                tile_len
            } else {
                u.feedforward.len() * hidden
            };
            ensure!(
                hidden < u.signal_size,
                Topology,
                "unit {} in layer {}: hidden size {hidden} must be below its signal size {}",
                u.id,
                u.layer,
                u.signal_size
            );
            let mut context = vec![ContextSource {
                unit: u.id,
                kind: ContextKind::SelfLoop,
            }];
            context.extend(u.lateral.iter().map(|&unit| ContextSource {
                unit,
                kind: ContextKind::Lateral,
            }));
            context.extend(u.feedback.iter().map(|&unit| ContextSource {
                unit,
                kind: ContextKind::Feedback,
            }));
            if let Some(top) = topmost {
                if u.id != top && !u.feedback.contains(&top) {
                    context.push(ContextSource {
                        unit: top,
                        kind: ContextKind::Topmost,
                    });
                }
            }
            u.context_size = context.len() * hidden;
            u.context = context;
        }

        Ok(Topology {
            frame: config.frame,
            tile,
            hidden_size: hidden,
            layers,
            units,
            topmost,
        })
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn layer_units(&self, layer: usize) -> &[UnitInfo] {
        &self.units[self.layers[layer].units()]
    }

    /// MLP input length: signal, three derived features of it, and context.
    pub fn input_size(&self, unit: UnitId) -> usize {
        let u = &self.units[unit];
        4 * u.signal_size + u.context_size
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_size;
        self.units
            .iter()
            .map(|u| {
                h * (4 * u.signal_size + u.context_size + 1)
                    + (u.signal_size + u.readout.area()) * (h + 1)
            })
            .sum()
    }

    /// Offsets of each unit's readout inside a flat buffer of all readouts,
    /// with a trailing total.
    pub fn readout_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.units.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for u in &self.units {
            acc += u.readout.area();
            offsets.push(acc);
        }
        offsets
    }
}
