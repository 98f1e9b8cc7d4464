//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use pvm_core::bbox::BoundingBox;
use pvm_core::mlp::{Mlp, MlpShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain forward pass straight from the weight layout: rows of
/// `fan_in + 1` with the bias last.
pub fn oracle_forward(shape: MlpShape, wh: &[f64], wp: &[f64], wr: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let layer = |w: &[f64], input: &[f64], outputs: usize| -> Vec<f64> {
        let n = input.len();
        (0..outputs)
            .map(|o| {
                let row = &w[o * (n + 1)..(o + 1) * (n + 1)];
                let mut a = row[n];
                for j in 0..n {
                    a += row[j] * input[j];
                }
                logistic(a)
            })
            .collect()
    };
    let h = layer(wh, x, shape.hidden);
    let p = layer(wp, &h, shape.predict);
    let r = layer(wr, &h, shape.readout);
    (h, p, r)
}

/// `½Σ(p−tp)² + mix·½Σ(r−tr)²`, evaluated in double-double arithmetic
/// with `delta` added to one weight, so central differences of tiny
/// gradients are not swamped by f64 cancellation.
pub fn oracle_loss(
    shape: MlpShape,
    weights: [&[f64]; 3],
    delta: Option<(usize, usize, f64)>,
    x: &[f64],
    tp: &[f64],
    tr: &[f64],
    mix: f64,
) -> TwoFloat {
    let w = |which: usize, k: usize| {
        let v = TwoFloat::from(weights[which][k]);
        match delta {
            Some((dw, dk, d)) if dw == which && dk == k => v + TwoFloat::from(d),
            _ => v,
        }
    };
    let layer = |which: usize, input: &[TwoFloat], outputs: usize| -> Vec<TwoFloat> {
        let n = input.len();
        (0..outputs)
            .map(|o| {
                let mut a = w(which, o * (n + 1) + n);
                for (j, v) in input.iter().enumerate() {
                    a += w(which, o * (n + 1) + j) * *v;
                }
                TwoFloat::from(1.0) / (TwoFloat::from(1.0) + (-a).exp())
            })
            .collect()
    };
    let x: Vec<TwoFloat> = x.iter().map(|&v| TwoFloat::from(v)).collect();
    let h = layer(0, &x, shape.hidden);
    let p = layer(1, &h, shape.predict);
    let r = layer(2, &h, shape.readout);
    let half_sq = |out: &[TwoFloat], t: &[f64]| {
        out.iter().zip(t).fold(TwoFloat::from(0.0), |acc, (o, &t)| {
            let d = *o - TwoFloat::from(t);
            acc + d * d * 0.5
        })
    };
    half_sq(&p, tp) + half_sq(&r, tr) * mix
}

pub struct GradCase {
    pub mlp: Mlp,
    pub input: Vec<f64>,
    pub target_predict: Vec<f64>,
    pub target_readout: Vec<f64>,
}

pub fn random_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let predict = r.random_range(2..=12);
    let hidden = r.random_range(1..predict);
    let input = r.random_range(1..=20);
    let readout = r.random_range(1..=6);
    let shape = MlpShape::new(input, hidden, predict, readout);
    let mlp = Mlp::new(shape, r.random()).unwrap();
    GradCase {
        mlp,
        input: (0..input).map(|_| r.random()).collect(),
        target_predict: (0..predict).map(|_| r.random()).collect(),
        target_readout: (0..readout).map(|_| r.random()).collect(),
    }
}

/// Largest relative error between analytic gradients (joint mode, mix 1)
/// and central differences of the oracle loss, with denominator
/// `max(|analytic|, 1e-8)`.
pub fn gradient_check(case: &GradCase, h: f64) -> f64 {
    let m = &case.mlp;
    let shape = m.shape();
    let act = m.forward(&case.input).unwrap();
    let g = m
        .gradients(&act, &case.target_predict, &case.target_readout, true, 1.0)
        .unwrap();
    let mut worst: f64 = 0.0;
    let weights = [m.w_hidden(), m.w_predict(), m.w_readout()];
    let analytic = [&g.hidden, &g.predict, &g.readout];
    for which in 0..3 {
        for k in 0..weights[which].len() {
            let eval = |d: f64| {
                oracle_loss(
                    shape,
                    weights,
                    Some((which, k, d)),
                    &case.input,
                    &case.target_predict,
                    &case.target_readout,
                    1.0,
                )
            };
            let numeric = f64::from((eval(h) - eval(-h)) / (2.0 * h));
            let a = analytic[which][k];
            worst = worst.max((a - numeric).abs() / a.abs().max(1e-8));
        }
    }
    worst
}

/// Brute-force box extraction: full sort for the median, linear scan for
/// the peak, repeated relaxation for the connected component.
pub fn oracle_box(values: &[f64], width: usize, height: usize, threshold: f64, scale: (f64, f64)) -> BoundingBox {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = sorted[(sorted.len() - 1) / 2];
    let max = sorted[sorted.len() - 1];
    let peak = values.iter().position(|&v| v == max).unwrap();
    if max <= med + threshold {
        return BoundingBox::ABSENT;
    }
    let cutoff = (max - med) * 0.5 + med;
    let on: Vec<bool> = values.iter().map(|&v| v > cutoff).collect();
    assert!(on[peak], "peak must pass the cutoff");
    let mut label = vec![false; values.len()];
    label[peak] = true;
    loop {
        let mut changed = false;
        for i in 0..values.len() {
            if !on[i] || label[i] {
                continue;
            }
            let (x, y) = ((i % width) as i64, (i / width) as i64);
            let touches = (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx >= 0
                        && ny >= 0
                        && nx < width as i64
                        && ny < height as i64
                        && label[ny as usize * width + nx as usize]
                })
            });
            if touches {
                label[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let cells: Vec<(usize, usize)> = (0..values.len())
        .filter(|&i| label[i])
        .map(|i| (i % width, i / width))
        .collect();
    let x0 = cells.iter().map(|c| c.0).min().unwrap();
    let x1 = cells.iter().map(|c| c.0).max().unwrap();
    let y0 = cells.iter().map(|c| c.1).min().unwrap();
    let y1 = cells.iter().map(|c| c.1).max().unwrap();
    BoundingBox::new(
        x0 as f64 * scale.0,
        y0 as f64 * scale.1,
        (x1 - x0 + 1) as f64 * scale.0,
        (y1 - y0 + 1) as f64 * scale.1,
    )
}

/// Random byte-scale heatmap: background noise plus a few blobs, with
/// values drawn from a small set so ties occur.
pub fn random_heatmap(seed: u64, width: usize, height: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let mut v: Vec<f64> = (0..width * height)
        .map(|_| (r.random_range(0..8) * 8) as f64)
        .collect();
    for _ in 0..r.random_range(0..4) {
        let (cx, cy) = (r.random_range(0..width), r.random_range(0..height));
        let level = r.random_range(60..=255) as f64;
        let rad = r.random_range(0..3usize);
        for y in cy.saturating_sub(rad)..(cy + rad + 1).min(height) {
            for x in cx.saturating_sub(rad)..(cx + rad + 1).min(width) {
                if r.random_bool(0.8) {
                    v[y * width + x] = level - r.random_range(0..3) as f64 * 10.0;
                }
            }
        }
    }
    v
}
