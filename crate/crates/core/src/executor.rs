//! Lockstep execution of all units.
//!
//! One [`System::step`] runs three phases separated by barriers:
//!
//! 1. **Predict.** Every enabled unit predicts from its stored signal and
//!    context and publishes its hidden activations and readout. Nothing
//!    else is read in this phase.
//! 2. **Train.** Every unit collects its actual signal (its frame tile in
//!    layer 0, the just-published hidden activations of its fan-in window
//!    above) and, when enabled, trains against it.
//! 3. **Context.** Every unit gathers its context from the published
//!    activations.
//!
//! Phase 1 is the only writer of the published buffers, and phases 2 and 3
//! only read them, so the borrow checker enforces phase isolation. A change
//! to a layer-0 tile therefore reaches layer `k`'s signal exactly `k` steps
//! later.

use std::ops::Range;
use std::sync::Arc;

use crate::config::PvmConfig;
use crate::dataset::{Frame, ReadoutTargets};
use crate::error::{ensure, PvmError, Result};
use crate::mlp::SgdStep;
use crate::parallel::{partition, split_by_lengths, WorkerPool};
use crate::schedule::ScheduleState;
use crate::topology::{ContextKind, Topology, UnitId};
use crate::unit::{UnitErrors, UnitGeometry, UnitState, NEUTRAL};

/// What learns during a training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regime {
    /// Prediction and readout train together; readout error also shapes the
    /// shared hidden layer.
    Joint,
    /// Only the predictive part trains; readouts are left untouched.
    Unsupervised,
    /// Predictive weights frozen; only the readout head trains.
    Prime { readout_lr: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Train(Regime),
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutputs {
    /// Step counter value this step ran at.
    pub step: u64,
    /// Mean prediction error per layer over its enabled units (0 if none).
    pub predict_error: Vec<f64>,
    pub readout_error: Vec<f64>,
}

/// Seed for unit `unit`'s weights, derived from the model seed.
pub fn unit_seed(seed: u64, unit: UnitId) -> u64 {
    // splitmix64 finalizer over a per-unit offset
    let mut z = seed.wrapping_add((unit as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct System {
    config: PvmConfig,
    topology: Arc<Topology>,
    units: Vec<UnitState>,
    /// Published hidden activations, `hidden_size` values per unit.
    hidden: Vec<f64>,
    /// Published readouts, flat in unit order.
    readout: Vec<f64>,
    readout_offsets: Vec<usize>,
    step: u64,
    pool: Arc<WorkerPool>,
    ranges: Vec<Range<usize>>,
}

impl System {
    pub fn new(config: PvmConfig, workers: usize) -> Result<Self> {
        config.validate()?;
        let topology = Topology::build(&config)?;
        let units = topology
            .units
            .iter()
            .map(|u| {
                UnitState::new(
                    geometry_of(&topology, u.id),
                    config.tau,
                    unit_seed(config.seed, u.id),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut system = Self::assemble(config, topology, units, workers)?;
        let schedule = system.config.schedule.at(0);
        system.gather_context(&schedule);
        Ok(system)
    }

    /// Builds a system around existing units, with neutral published state.
    pub(crate) fn assemble(
        config: PvmConfig,
        topology: Topology,
        units: Vec<UnitState>,
        workers: usize,
    ) -> Result<Self> {
        ensure!(
            units.len() == topology.unit_count(),
            Contract,
            "{} units for a topology of {}",
            units.len(),
            topology.unit_count()
        );
        let readout_offsets = topology.readout_offsets();
        let costs: Vec<u64> = units
            .iter()
            .map(|u| u.mlp().shape().parameter_count() as u64)
            .collect();
        let pool = Arc::new(WorkerPool::new(workers)?);
        let ranges = partition(&costs, workers);
        Ok(System {
            hidden: vec![NEUTRAL; topology.unit_count() * topology.hidden_size],
            readout: vec![NEUTRAL; *readout_offsets.last().unwrap()],
            readout_offsets,
            step: 0,
            pool,
            ranges,
            topology: Arc::new(topology),
            units,
            config,
        })
    }

    /// Same state on a different number of workers.
    pub fn with_workers(&self, workers: usize) -> Result<Self> {
        let mut s = self.clone();
        s.set_workers(workers)?;
        Ok(s)
    }

    pub fn set_workers(&mut self, workers: usize) -> Result<()> {
        let costs: Vec<u64> = self
            .units
            .iter()
            .map(|u| u.mlp().shape().parameter_count() as u64)
            .collect();
        self.pool = Arc::new(WorkerPool::new(workers)?);
        self.ranges = partition(&costs, workers);
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.pool.workers()
    }

    pub fn config(&self) -> &PvmConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn units(&self) -> &[UnitState] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [UnitState] {
        &mut self.units
    }

    pub fn step_counter(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step_counter(&mut self, step: u64) {
        self.step = step;
    }

    pub fn published_hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn published_readout(&self) -> &[f64] {
        &self.readout
    }

    pub(crate) fn restore_published(&mut self, hidden: Vec<f64>, readout: Vec<f64>) -> Result<()> {
        ensure!(
            hidden.len() == self.hidden.len() && readout.len() == self.readout.len(),
            Contract,
            "published buffer sizes do not match the topology"
        );
        self.hidden = hidden;
        self.readout = readout;
        Ok(())
    }

    pub fn unit_hidden(&self, unit: UnitId) -> &[f64] {
        let h = self.topology.hidden_size;
        &self.hidden[unit * h..(unit + 1) * h]
    }

    pub fn unit_readout(&self, unit: UnitId) -> &[f64] {
        &self.readout[self.readout_offsets[unit]..self.readout_offsets[unit + 1]]
    }

    pub fn readout_offsets(&self) -> &[usize] {
        &self.readout_offsets
    }

    /// Fresh readout heads for every unit, e.g. before priming.
    pub fn reset_readouts(&mut self, seed: u64) {
        for (id, u) in self.units.iter_mut().enumerate() {
            u.mlp_mut().reset_readout(unit_seed(seed ^ 0x5EED_0F_BEAD, id));
        }
    }

    fn sgd_for(&self, mode: Mode, lr: f64, supervised: bool) -> SgdStep {
        let mix = self.config.readout_mix;
        match mode {
            Mode::Eval => SgdStep::FROZEN,
            Mode::Train(Regime::Joint) => SgdStep {
                lr_predict: lr,
                lr_readout: if supervised { lr } else { 0.0 },
                joint: supervised,
                readout_mix: mix,
            },
            Mode::Train(Regime::Unsupervised) => SgdStep {
                lr_predict: lr,
                lr_readout: 0.0,
                joint: false,
                readout_mix: mix,
            },
            Mode::Train(Regime::Prime { readout_lr }) => SgdStep {
                lr_predict: 0.0,
                lr_readout: if supervised { readout_lr } else { 0.0 },
                joint: false,
                readout_mix: mix,
            },
        }
    }

    /// Advances every unit by one frame.
    pub fn step(
        &mut self,
        frame: &Frame,
        supervision: Option<&ReadoutTargets>,
        mode: Mode,
    ) -> Result<StepOutputs> {
        ensure!(
            frame.dims() == self.config.frame,
            Contract,
            "frame is {} but the model expects {}",
            frame.dims(),
            self.config.frame
        );
        if let Some(t) = supervision {
            ensure!(
                t.values.len() == self.readout.len(),
                Contract,
                "{} readout targets for {} readout values",
                t.values.len(),
                self.readout.len()
            );
        }
        let schedule = self.config.schedule.at(self.step);
        let topo = Arc::clone(&self.topology);
        let enabled: Vec<bool> = topo
            .units
            .iter()
            .map(|u| schedule.layers[u.layer].enabled)
            .collect();
        let steps: Vec<SgdStep> = schedule
            .layers
            .iter()
            .map(|l| self.sgd_for(mode, l.lr, supervision.is_some()))
            .collect();

        self.predict_phase(&enabled)?;
        let errors = self.train_phase(frame, supervision, &enabled, &steps)?;
        self.gather_context(&schedule);

        let layers = topo.layers.len();
        let mut predict_error = vec![0.0; layers];
        let mut readout_error = vec![0.0; layers];
        let mut counts = vec![0usize; layers];
        for (u, e) in topo.units.iter().zip(&errors) {
            if let Some(e) = e {
                predict_error[u.layer] += e.predict;
                readout_error[u.layer] += e.readout;
                counts[u.layer] += 1;
            }
        }
        for k in 0..layers {
            if counts[k] > 0 {
                predict_error[k] /= counts[k] as f64;
                readout_error[k] /= counts[k] as f64;
            }
        }
        let out = StepOutputs {
            step: self.step,
            predict_error,
            readout_error,
        };
        self.step += 1;
        Ok(out)
    }

    fn predict_phase(&mut self, enabled: &[bool]) -> Result<()> {
        let h = self.topology.hidden_size;
        let unit_lens: Vec<usize> = self.ranges.iter().map(|r| r.len()).collect();
        let hidden_lens: Vec<usize> = unit_lens.iter().map(|n| n * h).collect();
        let readout_lens: Vec<usize> = self
            .ranges
            .iter()
            .map(|r| self.readout_offsets[r.end] - self.readout_offsets[r.start])
            .collect();
        let parts: Vec<_> = split_by_lengths(&mut self.units, &unit_lens)
            .into_iter()
            .zip(split_by_lengths(&mut self.hidden, &hidden_lens))
            .zip(split_by_lengths(&mut self.readout, &readout_lens))
            .zip(self.ranges.iter().cloned())
            .collect();
        let offsets = &self.readout_offsets;
        let results = self.pool.run(parts, |(((units, hidden), readout), range)| {
            let base = offsets[range.start];
            for (i, unit) in units.iter_mut().enumerate() {
                let id = range.start + i;
                if !enabled[id] {
                    continue;
                }
                unit.predict()?;
                hidden[i * h..(i + 1) * h].copy_from_slice(unit.hidden());
                readout[offsets[id] - base..offsets[id + 1] - base].copy_from_slice(unit.readout());
            }
            Ok::<_, PvmError>(())
        });
        results.into_iter().collect()
    }

    fn train_phase(
        &mut self,
        frame: &Frame,
        supervision: Option<&ReadoutTargets>,
        enabled: &[bool],
        steps: &[SgdStep],
    ) -> Result<Vec<Option<UnitErrors>>> {
        let topo = &*self.topology;
        let h = topo.hidden_size;
        let hidden = &self.hidden;
        let offsets = &self.readout_offsets;
        let tile = self.config.tile;
        let unit_lens: Vec<usize> = self.ranges.iter().map(|r| r.len()).collect();
        let parts: Vec<_> = split_by_lengths(&mut self.units, &unit_lens)
            .into_iter()
            .zip(self.ranges.iter().cloned())
            .collect();
        let results = self.pool.run(parts, |(units, range)| {
            let mut signal = Vec::new();
            let mut neutral = Vec::new();
            let mut out = Vec::with_capacity(units.len());
            for (i, unit) in units.iter_mut().enumerate() {
                let id = range.start + i;
                let info = &topo.units[id];
                signal.clear();
                signal.resize(info.signal_size, 0.0);
                if info.layer == 0 {
                    frame.tile_into(tile, id, &mut signal);
                } else {
                    for (slot, &src) in signal.chunks_exact_mut(h).zip(&info.feedforward) {
                        slot.copy_from_slice(&hidden[src * h..(src + 1) * h]);
                    }
                }
                if !enabled[id] {
                    unit.set_signal(&signal)?;
                    out.push(None);
                    continue;
                }
                let target = match supervision {
                    Some(t) => &t.values[offsets[id]..offsets[id + 1]],
                    None => {
                        neutral.clear();
                        neutral.resize(info.readout.area(), NEUTRAL);
                        &neutral[..]
                    }
                };
                out.push(Some(unit.train(&signal, target, steps[info.layer])?));
            }
            Ok::<_, PvmError>(out)
        });
        let mut errors = Vec::with_capacity(self.units.len());
        for r in results {
            errors.extend(r?);
        }
        Ok(errors)
    }

    fn gather_context(&mut self, schedule: &ScheduleState) {
        let topo = &*self.topology;
        let h = topo.hidden_size;
        let hidden = &self.hidden;
        let unit_lens: Vec<usize> = self.ranges.iter().map(|r| r.len()).collect();
        let parts: Vec<_> = split_by_lengths(&mut self.units, &unit_lens)
            .into_iter()
            .zip(self.ranges.iter().cloned())
            .collect();
        self.pool.run(parts, |(units, range)| {
            for (i, unit) in units.iter_mut().enumerate() {
                let info = &topo.units[range.start + i];
                let context = unit.context_mut();
                for (slot, source) in context.chunks_exact_mut(h).zip(&info.context) {
                    let on = match source.kind {
                        ContextKind::SelfLoop => true,
                        ContextKind::Lateral => schedule.lateral_on,
                        ContextKind::Feedback | ContextKind::Topmost => schedule.feedback_on,
                    };
                    if on {
                        slot.copy_from_slice(&hidden[source.unit * h..(source.unit + 1) * h]);
                    } else {
                        slot.fill(0.0);
                    }
                }
            }
        });
    }
}

pub(crate) fn geometry_of(topology: &Topology, unit: UnitId) -> UnitGeometry {
    let u = &topology.units[unit];
    UnitGeometry {
        signal_size: u.signal_size,
        context_size: u.context_size,
        hidden_size: topology.hidden_size,
        readout_size: u.readout.area(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleSpec;

    fn tiny() -> PvmConfig {
        let mut cfg = crate::config::parse_config(
            r#"{"frame":[8,8],"tile":[2,2],"layers":[[4,4],[2,2],[1,1]],"hidden_size":3}"#,
        )
        .unwrap();
        cfg.schedule = ScheduleSpec::constant(3, 0.05);
        cfg
    }

    fn frame(v: f32) -> Frame {
        Frame::filled(8, 8, v)
    }

    #[test]
    fn eval_leaves_weights_untouched() {
        let mut s = System::new(tiny(), 1).unwrap();
        let before: Vec<_> = s.units().iter().map(|u| u.mlp().clone()).collect();
        for i in 0..5 {
            s.step(&frame(i as f32 / 5.0), None, Mode::Eval).unwrap();
        }
        let after: Vec<_> = s.units().iter().map(|u| u.mlp().clone()).collect();
        assert_eq!(before, after);
        assert_eq!(s.step_counter(), 5);
    }

    #[test]
    fn train_moves_weights() {
        let mut s = System::new(tiny(), 1).unwrap();
        let before = s.units()[0].mlp().clone();
        s.step(&frame(0.9), None, Mode::Train(Regime::Joint)).unwrap();
        s.step(&frame(0.1), None, Mode::Train(Regime::Joint)).unwrap();
        assert_ne!(*s.units()[0].mlp(), before);
    }

    #[test]
    fn wrong_frame_size_rejected() {
        let mut s = System::new(tiny(), 1).unwrap();
        let err = s.step(&Frame::filled(4, 4, 0.0), None, Mode::Eval).unwrap_err();
        assert!(matches!(err, PvmError::Contract(_)));
    }

    #[test]
    fn disabled_layers_publish_neutral_and_keep_weights() {
        let mut cfg = tiny();
        cfg.schedule.layer_enable_step = vec![0, 10, 20];
        let mut s = System::new(cfg, 1).unwrap();
        let upper: Vec<_> = s.units()[16..].iter().map(|u| u.mlp().clone()).collect();
        for _ in 0..10 {
            s.step(&frame(0.3), None, Mode::Train(Regime::Joint)).unwrap();
        }
        assert!(s.published_hidden()[16 * 3..].iter().all(|&v| v == NEUTRAL));
        let now: Vec<_> = s.units()[16..].iter().map(|u| u.mlp().clone()).collect();
        assert_eq!(upper, now);
        s.step(&frame(0.3), None, Mode::Train(Regime::Joint)).unwrap();
        assert_ne!(*s.units()[16].mlp(), upper[0]);
        assert_eq!(*s.units()[20].mlp(), upper[4]);
    }

    #[test]
    fn disabled_context_slots_read_zero() {
        let mut cfg = tiny();
        cfg.schedule.lateral_enable_step = 3;
        cfg.schedule.feedback_enable_step = 5;
        let mut s = System::new(cfg, 1).unwrap();
        let topo = s.topology().clone();
        let u = &topo.units[5];
        let check = |s: &System, lateral: bool, feedback: bool| {
            let ctx = s.units()[5].context();
            for (slot, src) in ctx.chunks_exact(3).zip(&u.context) {
                let on = match src.kind {
                    ContextKind::SelfLoop => true,
                    ContextKind::Lateral => lateral,
                    _ => feedback,
                };
                if on {
                    assert_eq!(slot, s.unit_hidden(src.unit));
                } else {
                    assert!(slot.iter().all(|&v| v == 0.0));
                }
            }
        };
        for step in 0..7u64 {
            s.step(&frame(0.2 + 0.1 * step as f32), None, Mode::Train(Regime::Joint)).unwrap();
            // context gathered at the end of step `step` uses that step's schedule
            check(&s, step >= 3, step >= 5);
        }
    }

    #[test]
    fn prime_freezes_predictive_weights() {
        let mut s = System::new(tiny(), 1).unwrap();
        let targets = ReadoutTargets::uniform(s.topology(), 1.0);
        let before: Vec<_> = s.units().iter().map(|u| u.mlp().clone()).collect();
        for i in 0..4 {
            s.step(&frame(0.1 * i as f32), Some(&targets), Mode::Train(Regime::Prime { readout_lr: 0.1 }))
                .unwrap();
        }
        for (b, u) in before.iter().zip(s.units()) {
            assert_eq!(b.w_hidden(), u.mlp().w_hidden());
            assert_eq!(b.w_predict(), u.mlp().w_predict());
            assert_ne!(b.w_readout(), u.mlp().w_readout());
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut a = System::new(tiny(), 1).unwrap();
        let mut b = a.with_workers(3).unwrap();
        for i in 0..20 {
            let f = frame((i % 7) as f32 / 7.0);
            let oa = a.step(&f, None, Mode::Train(Regime::Joint)).unwrap();
            let ob = b.step(&f, None, Mode::Train(Regime::Joint)).unwrap();
            assert_eq!(oa, ob);
        }
        for (x, y) in a.units().iter().zip(b.units()) {
            assert_eq!(x, y);
        }
    }
}
