//! A single predictive unit.
//!
//! Each step a unit first predicts (from its stored signal and context) and
//! later trains against the signal that actually arrived. The derived
//! features are computed once in [`UnitState::predict`] and committed in
//! [`UnitState::train`], so training sees exactly the input that produced
//! the prediction.

use crate::error::{ensure, PvmError, Result};
use crate::mlp::{mean_squared_error, Activations, Mlp, MlpShape, SgdStep};

/// Initial value of every buffer; neutral for all three feature formulas.
pub const NEUTRAL: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitGeometry {
    pub signal_size: usize,
    pub context_size: usize,
    pub hidden_size: usize,
    pub readout_size: usize,
}

impl UnitGeometry {
    pub fn input_size(&self) -> usize {
        4 * self.signal_size + self.context_size
    }

    pub fn mlp_shape(&self) -> MlpShape {
        MlpShape::new(
            self.input_size(),
            self.hidden_size,
            self.signal_size,
            self.readout_size,
        )
    }
}

/// Derived per-element features of the primary signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub derivative: Vec<f64>,
    pub integral: Vec<f64>,
    pub prev_error: Vec<f64>,
}

/// Per-head mean squared errors of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UnitErrors {
    pub predict: f64,
    pub readout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitState {
    geometry: UnitGeometry,
    tau: f64,
    mlp: Mlp,
    /// Signal seen one step before `signal`.
    prev_signal: Vec<f64>,
    integral: Vec<f64>,
    /// Prediction of `signal` made on the previous step.
    prev_prediction: Vec<f64>,
    /// Primary signal for the next prediction.
    signal: Vec<f64>,
    /// Context for the next prediction.
    context: Vec<f64>,
    act: Activations,
    pending_integral: Vec<f64>,
    pending: bool,
}

/// Buffers that carry a unit's state across steps.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitBuffers {
    pub prev_signal: Vec<f64>,
    pub integral: Vec<f64>,
    pub prev_prediction: Vec<f64>,
    pub signal: Vec<f64>,
    pub context: Vec<f64>,
}

pub fn compute_features(
    signal: &[f64],
    prev_signal: &[f64],
    integral: &[f64],
    prev_prediction: &[f64],
    tau: f64,
) -> Features {
    let derivative = signal
        .iter()
        .zip(prev_signal)
        .map(|(p, q)| 0.5 + (p - q) / 2.0)
        .collect();
    let integral = signal
        .iter()
        .zip(integral)
        .map(|(p, i)| tau * i + (1.0 - tau) * p)
        .collect();
    let prev_error = signal
        .iter()
        .zip(prev_prediction)
        .map(|(p, e)| 0.5 + (e - p) / 2.0)
        .collect();
    Features {
        derivative,
        integral,
        prev_error,
    }
}

/// Concatenates `[signal; derivative; integral; prev_error; context]`.
pub fn assemble_input(signal: &[f64], features: &Features, context: &[f64]) -> Result<Vec<f64>> {
    let n = signal.len();
    ensure!(
        features.derivative.len() == n && features.integral.len() == n && features.prev_error.len() == n,
        Contract,
        "feature lengths do not match signal length {n}"
    );
    let mut out = Vec::with_capacity(4 * n + context.len());
    out.extend_from_slice(signal);
    out.extend_from_slice(&features.derivative);
    out.extend_from_slice(&features.integral);
    out.extend_from_slice(&features.prev_error);
    out.extend_from_slice(context);
    Ok(out)
}

impl UnitState {
    pub fn new(geometry: UnitGeometry, tau: f64, seed: u64) -> Result<Self> {
        Self::with_mlp(geometry, tau, Mlp::new(geometry.mlp_shape(), seed)?)
    }

    pub fn with_mlp(geometry: UnitGeometry, tau: f64, mlp: Mlp) -> Result<Self> {
        ensure!(
            mlp.shape() == geometry.mlp_shape(),
            Contract,
            "MLP shape {:?} does not match unit geometry {:?}",
            mlp.shape(),
            geometry
        );
        ensure!((0.0..1.0).contains(&tau), Config, "tau must lie in [0, 1)");
        let n = geometry.signal_size;
        Ok(UnitState {
            geometry,
            tau,
            act: Activations::for_shape(mlp.shape()),
            mlp,
            prev_signal: vec![NEUTRAL; n],
            integral: vec![NEUTRAL; n],
            prev_prediction: vec![NEUTRAL; n],
            signal: vec![NEUTRAL; n],
            context: vec![0.0; geometry.context_size],
            pending_integral: vec![NEUTRAL; n],
            pending: false,
        })
    }

    pub fn geometry(&self) -> UnitGeometry {
        self.geometry
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn buffers(&self) -> UnitBuffers {
        UnitBuffers {
            prev_signal: self.prev_signal.clone(),
            integral: self.integral.clone(),
            prev_prediction: self.prev_prediction.clone(),
            signal: self.signal.clone(),
            context: self.context.clone(),
        }
    }

    pub fn restore_buffers(&mut self, b: UnitBuffers) -> Result<()> {
        let n = self.geometry.signal_size;
        ensure!(
            b.prev_signal.len() == n
                && b.integral.len() == n
                && b.prev_prediction.len() == n
                && b.signal.len() == n
                && b.context.len() == self.geometry.context_size,
            Contract,
            "buffer sizes do not match unit geometry {:?}",
            self.geometry
        );
        self.prev_signal = b.prev_signal;
        self.integral = b.integral;
        self.prev_prediction = b.prev_prediction;
        self.signal = b.signal;
        self.context = b.context;
        self.pending = false;
        Ok(())
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn context(&self) -> &[f64] {
        &self.context
    }

    pub fn is_pending(&self) -> bool {
        self.pending
    }

    pub fn set_signal(&mut self, signal: &[f64]) -> Result<()> {
        ensure!(
            signal.len() == self.geometry.signal_size,
            Contract,
            "signal length {} != {}",
            signal.len(),
            self.geometry.signal_size
        );
        self.signal.copy_from_slice(signal);
        Ok(())
    }

    /// Mutable access to the stored context, for in-place gathering.
    pub fn context_mut(&mut self) -> &mut [f64] {
        &mut self.context
    }

    pub fn set_context(&mut self, context: &[f64]) -> Result<()> {
        ensure!(
            context.len() == self.geometry.context_size,
            Contract,
            "context length {} != {}",
            context.len(),
            self.geometry.context_size
        );
        self.context.copy_from_slice(context);
        Ok(())
    }

    /// Features of `signal` relative to the committed buffers.
    pub fn compute_features(&self, signal: &[f64]) -> Result<Features> {
        ensure!(
            signal.len() == self.geometry.signal_size,
            Contract,
            "signal length {} != {}",
            signal.len(),
            self.geometry.signal_size
        );
        Ok(compute_features(
            signal,
            &self.prev_signal,
            &self.integral,
            &self.prev_prediction,
            self.tau,
        ))
    }

    /// Runs the MLP on the stored signal and context.
    pub fn predict(&mut self) -> Result<()> {
        if self.pending {
            return Err(PvmError::Protocol(
                "predict called twice without an intervening train".into(),
            ));
        }
        let n = self.geometry.signal_size;
        let tau = self.tau;
        let input = &mut self.act.input;
        let (p, rest) = input.split_at_mut(n);
        let (d, rest) = rest.split_at_mut(n);
        let (i, rest) = rest.split_at_mut(n);
        let (e, c) = rest.split_at_mut(n);
        for k in 0..n {
            let s = self.signal[k];
            p[k] = s;
            d[k] = 0.5 + (s - self.prev_signal[k]) / 2.0;
            let integral = tau * self.integral[k] + (1.0 - tau) * s;
            i[k] = integral;
            self.pending_integral[k] = integral;
            e[k] = 0.5 + (self.prev_prediction[k] - s) / 2.0;
        }
        c.copy_from_slice(&self.context);
        self.mlp.activate(&mut self.act);
        self.pending = true;
        Ok(())
    }

    /// Stores `input` and predicts from it.
    pub fn predict_from(&mut self, signal: &[f64], context: &[f64]) -> Result<()> {
        self.set_signal(signal)?;
        self.set_context(context)?;
        self.predict()
    }

    pub fn activations(&self) -> &Activations {
        &self.act
    }

    /// Latest prediction of the next primary signal.
    pub fn prediction(&self) -> &[f64] {
        &self.act.predict
    }

    pub fn hidden(&self) -> &[f64] {
        &self.act.hidden
    }

    pub fn readout(&self) -> &[f64] {
        &self.act.readout
    }

    /// Trains on the signal that followed the pending prediction, then
    /// commits the feature buffers and stores `actual_next_signal` as the
    /// signal for the next prediction.
    pub fn train(
        &mut self,
        actual_next_signal: &[f64],
        readout_target: &[f64],
        step: SgdStep,
    ) -> Result<UnitErrors> {
        if !self.pending {
            return Err(PvmError::Protocol(
                "train called without a pending prediction".into(),
            ));
        }
        ensure!(
            actual_next_signal.len() == self.geometry.signal_size,
            Contract,
            "signal length {} != {}",
            actual_next_signal.len(),
            self.geometry.signal_size
        );
        ensure!(
            readout_target.len() == self.geometry.readout_size,
            Contract,
            "readout target length {} != {}",
            readout_target.len(),
            self.geometry.readout_size
        );
        let errors = UnitErrors {
            predict: mean_squared_error(&self.act.predict, actual_next_signal),
            readout: mean_squared_error(&self.act.readout, readout_target),
        };
        self.mlp
            .backward_sgd(&self.act, actual_next_signal, readout_target, step)?;

        std::mem::swap(&mut self.prev_signal, &mut self.signal);
        self.signal.copy_from_slice(actual_next_signal);
        std::mem::swap(&mut self.integral, &mut self.pending_integral);
        self.prev_prediction.copy_from_slice(&self.act.predict);
        self.pending = false;
        Ok(errors)
    }
}
