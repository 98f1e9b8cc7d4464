//! Three-layer sigmoid perceptron with one shared hidden layer and two heads.
//!
//! The prediction head reconstructs the next primary signal; the readout head
//! produces the supervised tracker patch. Weight matrices are stored
//! row-major, one row per output neuron, with the bias as the last column.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Layer sizes of an [`Mlp`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub predict: usize,
    pub readout: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: usize, predict: usize, readout: usize) -> Self {
        MlpShape {
            input,
            hidden,
            predict,
            readout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.input >= 1 && self.hidden >= 1 && self.predict >= 1 && self.readout >= 1,
            Config,
            "all layer sizes must be at least 1, got {:?}",
            self
        );
        ensure!(
            self.hidden < self.predict,
            Config,
            "hidden layer ({}) must be smaller than the predicted signal ({})",
            self.hidden,
            self.predict
        );
        Ok(())
    }

    pub fn hidden_weights(&self) -> usize {
        self.hidden * (self.input + 1)
    }

    pub fn predict_weights(&self) -> usize {
        self.predict * (self.hidden + 1)
    }

    pub fn readout_weights(&self) -> usize {
        self.readout * (self.hidden + 1)
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden_weights() + self.predict_weights() + self.readout_weights()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    w_hidden: Vec<f64>,
    w_predict: Vec<f64>,
    w_readout: Vec<f64>,
}

/// Activations of every layer for one input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Activations {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub predict: Vec<f64>,
    pub readout: Vec<f64>,
}

impl Activations {
    pub fn for_shape(shape: MlpShape) -> Self {
        Activations {
            input: vec![0.0; shape.input],
            hidden: vec![0.0; shape.hidden],
            predict: vec![0.0; shape.predict],
            readout: vec![0.0; shape.readout],
        }
    }
}

/// Learning rates and gradient routing for one online update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdStep {
    pub lr_predict: f64,
    pub lr_readout: f64,
    /// Route readout error into the shared hidden weights as well.
    pub joint: bool,
    /// Weight of the readout error relative to the prediction error in the
    /// hidden-layer gradient (joint mode only).
    pub readout_mix: f64,
}

impl SgdStep {
    pub const FROZEN: SgdStep = SgdStep {
        lr_predict: 0.0,
        lr_readout: 0.0,
        joint: false,
        readout_mix: 1.0,
    };

    pub fn is_noop(&self) -> bool {
        self.lr_predict == 0.0 && self.lr_readout == 0.0
    }
}

/// Gradients of `½Σ(predict−target)² + ½Σ(readout−target)²` with respect to
/// each weight matrix, laid out like the weights.
///
/// The hidden gradient only includes the readout term when computed in joint
/// mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<f64>,
    pub predict: Vec<f64>,
    pub readout: Vec<f64>,
}

struct Deltas {
    predict: Vec<f64>,
    readout: Vec<f64>,
    hidden: Vec<f64>,
}

impl Mlp {
    /// Uniform init in `±1/sqrt(fan_in)` per layer from a seeded ChaCha stream.
    pub fn new(shape: MlpShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |rows: usize, fan_in: usize| -> Vec<f64> {
            let r = 1.0 / (fan_in as f64).sqrt();
            (0..rows * (fan_in + 1))
                .map(|_| rng.random_range(-r..=r))
                .collect()
        };
        let w_hidden = layer(shape.hidden, shape.input);
        let w_predict = layer(shape.predict, shape.hidden);
        let w_readout = layer(shape.readout, shape.hidden);
        Ok(Mlp {
            shape,
            w_hidden,
            w_predict,
            w_readout,
        })
    }

    pub fn zeros(shape: MlpShape) -> Result<Self> {
        shape.validate()?;
        Ok(Mlp {
            shape,
            w_hidden: vec![0.0; shape.hidden_weights()],
            w_predict: vec![0.0; shape.predict_weights()],
            w_readout: vec![0.0; shape.readout_weights()],
        })
    }

    pub fn from_parts(
        shape: MlpShape,
        w_hidden: Vec<f64>,
        w_predict: Vec<f64>,
        w_readout: Vec<f64>,
    ) -> Result<Self> {
        shape.validate()?;
        ensure!(
            w_hidden.len() == shape.hidden_weights()
                && w_predict.len() == shape.predict_weights()
                && w_readout.len() == shape.readout_weights(),
            Contract,
            "weight matrix sizes do not match shape {:?}",
            shape
        );
        ensure!(
            w_hidden
                .iter()
                .chain(&w_predict)
                .chain(&w_readout)
                .all(|w| w.is_finite()),
            Contract,
            "non-finite weight"
        );
        Ok(Mlp {
            shape,
            w_hidden,
            w_predict,
            w_readout,
        })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn w_hidden(&self) -> &[f64] {
        &self.w_hidden
    }

    pub fn w_predict(&self) -> &[f64] {
        &self.w_predict
    }

    pub fn w_readout(&self) -> &[f64] {
        &self.w_readout
    }

    pub fn w_hidden_mut(&mut self) -> &mut [f64] {
        &mut self.w_hidden
    }

    pub fn w_predict_mut(&mut self) -> &mut [f64] {
        &mut self.w_predict
    }

    pub fn w_readout_mut(&mut self) -> &mut [f64] {
        &mut self.w_readout
    }

    /// Replaces the readout head with a freshly initialized one.
    pub fn reset_readout(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 1.0 / (self.shape.hidden as f64).sqrt();
        for w in &mut self.w_readout {
            *w = rng.random_range(-r..=r);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Activations> {
        let mut act = Activations::for_shape(self.shape);
        ensure!(
            input.len() == self.shape.input,
            Contract,
            "input length {} != {}",
            input.len(),
            self.shape.input
        );
        act.input.copy_from_slice(input);
        self.activate(&mut act);
        Ok(act)
    }

    /// Recomputes hidden and output layers from `act.input`.
    pub(crate) fn activate(&self, act: &mut Activations) {
        let n_in = self.shape.input;
        let n_h = self.shape.hidden;
        debug_assert_eq!(act.input.len(), n_in);
        act.hidden.resize(n_h, 0.0);
        act.predict.resize(self.shape.predict, 0.0);
        act.readout.resize(self.shape.readout, 0.0);

        for (h, row) in act.hidden.iter_mut().zip(self.w_hidden.chunks_exact(n_in + 1)) {
            *h = sigmoid(dot(&row[..n_in], &act.input) + row[n_in]);
        }
        for (p, row) in act.predict.iter_mut().zip(self.w_predict.chunks_exact(n_h + 1)) {
            *p = sigmoid(dot(&row[..n_h], &act.hidden) + row[n_h]);
        }
        for (r, row) in act.readout.iter_mut().zip(self.w_readout.chunks_exact(n_h + 1)) {
            *r = sigmoid(dot(&row[..n_h], &act.hidden) + row[n_h]);
        }
    }

    fn check_targets(&self, target_predict: &[f64], target_readout: &[f64]) -> Result<()> {
        ensure!(
            target_predict.len() == self.shape.predict && target_readout.len() == self.shape.readout,
            Contract,
            "target lengths ({}, {}) do not match heads ({}, {})",
            target_predict.len(),
            target_readout.len(),
            self.shape.predict,
            self.shape.readout
        );
        ensure!(
            target_predict
                .iter()
                .chain(target_readout)
                .all(|t| (0.0..=1.0).contains(t)),
            Contract,
            "targets must lie in [0, 1] and not be NaN"
        );
        Ok(())
    }

    fn deltas(
        &self,
        act: &Activations,
        target_predict: &[f64],
        target_readout: &[f64],
        joint: bool,
        readout_mix: f64,
    ) -> Deltas {
        let n_h = self.shape.hidden;
        let predict: Vec<f64> = act
            .predict
            .iter()
            .zip(target_predict)
            .map(|(&o, &t)| (o - t) * o * (1.0 - o))
            .collect();
        let readout: Vec<f64> = act
            .readout
            .iter()
            .zip(target_readout)
            .map(|(&o, &t)| (o - t) * o * (1.0 - o))
            .collect();

        let mut back = vec![0.0; n_h];
        for (d, row) in predict.iter().zip(self.w_predict.chunks_exact(n_h + 1)) {
            axpy(&mut back, *d, &row[..n_h]);
        }
        if joint {
            for (d, row) in readout.iter().zip(self.w_readout.chunks_exact(n_h + 1)) {
                axpy(&mut back, readout_mix * d, &row[..n_h]);
            }
        }
        let hidden = back
            .iter()
            .zip(&act.hidden)
            .map(|(b, &h)| b * h * (1.0 - h))
            .collect();
        Deltas {
            predict,
            readout,
            hidden,
        }
    }

    /// Analytic gradients of the squared error for one sample.
    pub fn gradients(
        &self,
        act: &Activations,
        target_predict: &[f64],
        target_readout: &[f64],
        joint: bool,
        readout_mix: f64,
    ) -> Result<Gradients> {
        self.check_targets(target_predict, target_readout)?;
        let d = self.deltas(act, target_predict, target_readout, joint, readout_mix);
        Ok(Gradients {
            hidden: outer_with_bias(&d.hidden, &act.input),
            predict: outer_with_bias(&d.predict, &act.hidden),
            readout: outer_with_bias(&d.readout, &act.hidden),
        })
    }

    /// One online gradient step on the sample whose activations are `act`.
    ///
    /// The hidden layer moves at `lr_predict`, so a zero prediction rate
    /// freezes both predictive matrices regardless of `joint`.
    pub fn backward_sgd(
        &mut self,
        act: &Activations,
        target_predict: &[f64],
        target_readout: &[f64],
        step: SgdStep,
    ) -> Result<()> {
        self.check_targets(target_predict, target_readout)?;
        ensure!(
            step.lr_predict >= 0.0 && step.lr_readout >= 0.0,
            Contract,
            "learning rates must be non-negative"
        );
        if step.is_noop() {
            return Ok(());
        }
        let n_in = self.shape.input;
        let n_h = self.shape.hidden;
        let d = self.deltas(
            act,
            target_predict,
            target_readout,
            step.joint,
            step.readout_mix,
        );

        if step.lr_predict > 0.0 {
            for (dh, row) in d.hidden.iter().zip(self.w_hidden.chunks_exact_mut(n_in + 1)) {
                let g = step.lr_predict * dh;
                axpy(&mut row[..n_in], -g, &act.input);
                row[n_in] -= g;
            }
            for (dp, row) in d.predict.iter().zip(self.w_predict.chunks_exact_mut(n_h + 1)) {
                let g = step.lr_predict * dp;
                axpy(&mut row[..n_h], -g, &act.hidden);
                row[n_h] -= g;
            }
        }
        if step.lr_readout > 0.0 {
            for (dr, row) in d.readout.iter().zip(self.w_readout.chunks_exact_mut(n_h + 1)) {
                let g = step.lr_readout * dr;
                axpy(&mut row[..n_h], -g, &act.hidden);
                row[n_h] -= g;
            }
        }
        Ok(())
    }
}

fn outer_with_bias(delta: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(delta.len() * (x.len() + 1));
    for &d in delta {
        out.extend(x.iter().map(|&v| d * v));
        out.push(d);
    }
    out
}

/// Mean squared difference between two equally long vectors.
pub fn mean_squared_error(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
