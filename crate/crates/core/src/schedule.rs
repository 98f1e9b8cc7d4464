//! Layer-wise enabling and staged learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    /// Step at which each layer starts running; index = layer.
    pub layer_enable_step: Vec<u64>,
    pub lr_initial: f64,
    pub lr_mid: f64,
    pub lr_final: f64,
    /// Steps after a layer's enable step during which it trains at `lr_initial`.
    pub lr_drop_after_enable: u64,
    /// From this step on every layer trains at `lr_final`.
    pub global_final_step: u64,
    pub lateral_enable_step: u64,
    /// Gates superior and topmost context alike.
    pub feedback_enable_step: u64,
}

/// Schedule values for one layer at a given step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSchedule {
    pub enabled: bool,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    pub layers: Vec<LayerSchedule>,
    pub lateral_on: bool,
    pub feedback_on: bool,
}

impl ScheduleSpec {
    pub const DEFAULT_ENABLE_INTERVAL: u64 = 100_000;

    /// Default schedule for `layers` layers, each enabled 100k steps after
    /// the one below it.
    pub fn with_layers(layers: usize) -> Self {
        ScheduleSpec {
            layer_enable_step: (0..layers as u64)
                .map(|k| k * Self::DEFAULT_ENABLE_INTERVAL)
                .collect(),
            lr_initial: 0.0002,
            lr_mid: 0.00005,
            lr_final: 0.00001,
            lr_drop_after_enable: 100_000,
            global_final_step: 1_500_000,
            lateral_enable_step: 700_000,
            feedback_enable_step: 900_000,
        }
    }

    /// Everything on from step 0 at a constant rate.
    pub fn constant(layers: usize, lr: f64) -> Self {
        ScheduleSpec {
            layer_enable_step: vec![0; layers],
            lr_initial: lr,
            lr_mid: lr,
            lr_final: lr,
            lr_drop_after_enable: 0,
            global_final_step: u64::MAX,
            lateral_enable_step: 0,
            feedback_enable_step: 0,
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        ensure!(
            self.layer_enable_step.len() == layers,
            Config,
            "schedule lists {} layer enable steps for {} layers",
            self.layer_enable_step.len(),
            layers
        );
        ensure!(
            self.layer_enable_step.windows(2).all(|w| w[0] <= w[1]),
            Config,
            "layer enable steps must be nondecreasing: {:?}",
            self.layer_enable_step
        );
        ensure!(
            [self.lr_initial, self.lr_mid, self.lr_final]
                .iter()
                .all(|lr| lr.is_finite() && *lr >= 0.0),
            Config,
            "learning rates must be finite and non-negative"
        );
        Ok(())
    }

    pub fn at(&self, step: u64) -> ScheduleState {
        let layers = self
            .layer_enable_step
            .iter()
            .map(|&enable| {
                let enabled = step >= enable;
                let lr = if !enabled {
                    0.0
                } else if step >= self.global_final_step {
                    self.lr_final
                } else if step - enable < self.lr_drop_after_enable {
                    self.lr_initial
                } else {
                    self.lr_mid
                };
                LayerSchedule { enabled, lr }
            })
            .collect();
        ScheduleState {
            layers,
            lateral_on: step >= self.lateral_enable_step,
            feedback_on: step >= self.feedback_enable_step,
        }
    }
}

pub fn schedule_at(schedule: &ScheduleSpec, step: u64) -> ScheduleState {
    schedule.at(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schedule_milestones() {
        let s = ScheduleSpec::with_layers(6);

        let at0 = s.at(0);
        assert!(at0.layers[0].enabled);
        assert_eq!(at0.layers[0].lr, 0.0002);
        assert!(at0.layers[1..].iter().all(|l| !l.enabled && l.lr == 0.0));
        assert!(!at0.lateral_on && !at0.feedback_on);

        let at = s.at(150_000);
        assert_eq!(at.layers[0].lr, 0.00005);
        assert_eq!(at.layers[1].lr, 0.0002);
        assert!(!at.layers[2].enabled);

        let at = s.at(800_000);
        assert!(at.layers.iter().all(|l| l.enabled && l.lr == 0.00005));
        assert!(at.lateral_on && !at.feedback_on);

        let at = s.at(900_000);
        assert!(at.feedback_on);

        let at = s.at(2_000_000);
        assert!(at.layers.iter().all(|l| l.lr == 0.00001));
    }

    #[test]
    fn decreasing_enable_steps_rejected() {
        let mut s = ScheduleSpec::with_layers(3);
        s.layer_enable_step = vec![0, 200, 100];
        assert!(s.validate(3).is_err());
        assert!(ScheduleSpec::with_layers(3).validate(4).is_err());
    }
}
