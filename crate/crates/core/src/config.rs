//! JSON model configuration.
//!
//! Optional keys fall back to the reference values; unknown keys are
//! rejected. After parsing, the whole configuration is validated, including
//! a trial build of the topology.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, PvmError, Result};
use crate::schedule::ScheduleSpec;
use crate::synth::SynthDataset;
use crate::topology::Topology;

/// Width × height pair, serialized as `[w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Dims {
    pub w: usize,
    pub h: usize,
}

impl Dims {
    pub const fn new(w: usize, h: usize) -> Self {
        Dims { w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

impl From<[usize; 2]> for Dims {
    fn from([w, h]: [usize; 2]) -> Self {
        Dims { w, h }
    }
}

impl From<Dims> for [usize; 2] {
    fn from(d: Dims) -> Self {
        [d.w, d.h]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.w, self.h)
    }
}

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PvmConfig {
    pub frame: Dims,
    pub tile: Dims,
    /// Unit grid per layer, bottom first.
    pub layers: Vec<Dims>,
    pub hidden_size: usize,
    /// Decay of the signal integral feature.
    pub tau: f64,
    /// Readout patch per unit, per layer.
    pub readout: Vec<Dims>,
    /// Common grid all layer heatmaps are resampled to.
    pub heatmap: Dims,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    pub settle_steps: usize,
    pub readout_mix: f64,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthDataset>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    frame: Dims,
    tile: Dims,
    layers: Vec<Dims>,
    hidden_size: usize,
    #[serde(default = "default_tau")]
    tau: f64,
    readout: Option<Vec<Dims>>,
    heatmap: Option<Dims>,
    schedule: Option<RawSchedule>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_settle")]
    settle_steps: usize,
    #[serde(default = "default_mix")]
    readout_mix: f64,
    #[serde(default = "default_threshold")]
    threshold: f64,
    synthetic: Option<SynthDataset>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    layer_enable_step: Option<Vec<u64>>,
    layer_enable_interval: Option<u64>,
    lr_initial: Option<f64>,
    lr_mid: Option<f64>,
    lr_final: Option<f64>,
    lr_drop_after_enable: Option<u64>,
    global_final_step: Option<u64>,
    lateral_enable_step: Option<u64>,
    feedback_enable_step: Option<u64>,
}

fn default_tau() -> f64 {
    0.5
}
fn default_settle() -> usize {
    4
}
fn default_mix() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    32.0
}

impl RawSchedule {
    fn resolve(self, layers: usize) -> Result<ScheduleSpec> {
        let mut s = ScheduleSpec::with_layers(layers);
        match (self.layer_enable_step, self.layer_enable_interval) {
            (Some(_), Some(_)) => {
                return Err(PvmError::Config(
                    "give either layer_enable_step or layer_enable_interval, not both".into(),
                ))
            }
            (Some(steps), None) => s.layer_enable_step = steps,
            (None, Some(every)) => {
                s.layer_enable_step = (0..layers as u64).map(|k| k * every).collect()
            }
            (None, None) => {}
        }
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { s.$field = v; } )* };
        }
        take!(
            lr_initial,
            lr_mid,
            lr_final,
            lr_drop_after_enable,
            global_final_step,
            lateral_enable_step,
            feedback_enable_step
        );
        Ok(s)
    }
}

impl PvmConfig {
    /// The six-layer 96×96 model.
    pub fn reference() -> Self {
        parse_config(include_str!("../configs/reference.json")).expect("reference config is valid")
    }

    /// Three-layer 32×32 model small enough to train on a laptop.
    pub fn desk() -> Self {
        parse_config(include_str!("../configs/desk.json")).expect("desk config is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PvmError::io(path, e))?;
        parse_config(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn tile_grid(&self) -> Dims {
        Dims::new(self.frame.w / self.tile.w, self.frame.h / self.tile.h)
    }

    pub fn tile_len(&self) -> usize {
        self.tile.area() * CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.frame.w > 0 && self.frame.h > 0 && self.tile.w > 0 && self.tile.h > 0,
            Config,
            "frame and tile dimensions must be positive"
        );
        ensure!(
            self.frame.w % self.tile.w == 0 && self.frame.h % self.tile.h == 0,
            Config,
            "frame {} is not divisible into {} tiles",
            self.frame,
            self.tile
        );
        ensure!(!self.layers.is_empty(), Config, "at least one layer is required");
        ensure!(
            self.layers[0] == self.tile_grid(),
            Config,
            "layer 0 grid {} must equal the tile grid {}",
            self.layers[0],
            self.tile_grid()
        );
        ensure!(self.hidden_size > 0, Config, "hidden_size must be positive");
        ensure!(
            (0.0..1.0).contains(&self.tau),
            Config,
            "tau must lie in [0, 1), got {}",
            self.tau
        );
        ensure!(
            self.readout.len() == self.layers.len(),
            Config,
            "{} readout sizes for {} layers",
            self.readout.len(),
            self.layers.len()
        );
        ensure!(
            self.readout.iter().all(|r| r.area() > 0) && self.heatmap.area() > 0,
            Config,
            "readout and heatmap sizes must be positive"
        );
        ensure!(self.settle_steps >= 1, Config, "settle_steps must be at least 1");
        ensure!(
            self.threshold.is_finite() && self.threshold >= 0.0,
            Config,
            "threshold must be finite and non-negative"
        );
        ensure!(
            self.readout_mix.is_finite() && self.readout_mix >= 0.0,
            Config,
            "readout_mix must be finite and non-negative"
        );
        self.schedule.validate(self.layers.len())?;
        if let Some(synth) = &self.synthetic {
            synth.validate(self.frame)?;
        }
        Topology::build(self)?;
        Ok(())
    }
}

/// Parses and validates a JSON configuration document.
pub fn parse_config(text: &str) -> Result<PvmConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| PvmError::Parse {
        path: "<config>".into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let layers = raw.layers.len();
    ensure!(layers > 0, Config, "at least one layer is required");
    let schedule = match raw.schedule {
        Some(s) => s.resolve(layers)?,
        None => ScheduleSpec::with_layers(layers),
    };
    ensure!(
        raw.tile.w > 0 && raw.tile.h > 0,
        Config,
        "tile dimensions must be positive"
    );
    let tile_grid = Dims::new(raw.frame.w / raw.tile.w, raw.frame.h / raw.tile.h);
    let mut cfg = PvmConfig {
        frame: raw.frame,
        tile: raw.tile,
        layers: raw.layers,
        hidden_size: raw.hidden_size,
        tau: raw.tau,
        readout: Vec::new(),
        heatmap: raw.heatmap.unwrap_or(tile_grid),
        schedule,
        seed: raw.seed,
        settle_steps: raw.settle_steps,
        readout_mix: raw.readout_mix,
        threshold: raw.threshold,
        synthetic: raw.synthetic,
    };
    cfg.readout = match raw.readout {
        Some(r) => r,
        None => default_readout(&cfg)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// One readout pixel per tile: each unit's patch covers its receptive field
/// at tile resolution.
fn default_readout(cfg: &PvmConfig) -> Result<Vec<Dims>> {
    ensure!(
        cfg.frame.w % cfg.tile.w == 0 && cfg.frame.h % cfg.tile.h == 0,
        Config,
        "frame {} is not divisible into {} tiles",
        cfg.frame,
        cfg.tile
    );
    Topology::receptive_field_tiles(&cfg.layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let cfg = PvmConfig::reference();
        let grids: Vec<usize> = cfg.layers.iter().map(|d| d.w).collect();
        assert_eq!(grids, vec![16, 8, 4, 3, 2, 1]);
        assert_eq!(cfg.hidden_size, 49);
        assert_eq!(cfg.tile, Dims::new(6, 6));
        assert_eq!(cfg.tile_len(), 108);
        assert_eq!(cfg.heatmap, Dims::new(16, 16));
        assert_eq!(cfg.settle_steps, 4);
        assert_eq!(cfg.threshold, 32.0);
        let readout: Vec<usize> = cfg.readout.iter().map(|d| d.w).collect();
        assert_eq!(readout, vec![1, 2, 4, 8, 6, 16]);
    }

    #[test]
    fn small_frame_accepted() {
        let cfg = parse_config(
            r#"{"frame":[32,32],"tile":[8,8],"layers":[[4,4],[2,2],[1,1]],"hidden_size":16}"#,
        )
        .unwrap();
        assert_eq!(cfg.tile_grid(), Dims::new(4, 4));
        assert_eq!(cfg.heatmap, Dims::new(4, 4));
        assert_eq!(cfg.schedule.layer_enable_step, vec![0, 100_000, 200_000]);
    }

    #[test]
    fn indivisible_tile_rejected() {
        let err = parse_config(
            r#"{"frame":[96,96],"tile":[7,7],"layers":[[13,13]],"hidden_size":16}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn unknown_and_missing_keys_rejected() {
        let err = parse_config(
            r#"{"frame":[32,32],"tile":[8,8],"layers":[[4,4]],"hidden_size":16,"colour":1}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err = parse_config(r#"{"frame":[32,32],"tile":[8,8],"layers":[[4,4]]}"#).unwrap_err();
        assert!(err.to_string().contains("hidden_size"), "{err}");
        let err = parse_config(r#"{"frame":"big","tile":[8,8],"layers":[[4,4]],"hidden_size":4}"#)
            .unwrap_err();
        assert!(matches!(err, PvmError::Parse { .. }));
    }

    #[test]
    fn hidden_must_compress() {
        let err = parse_config(
            r#"{"frame":[8,8],"tile":[2,2],"layers":[[4,4],[2,2],[1,1]],"hidden_size":12}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("hidden"), "{err}");
    }

    #[test]
    fn serialized_config_parses_back() {
        let cfg = PvmConfig::desk();
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
        let cfg = PvmConfig::reference();
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }
}
