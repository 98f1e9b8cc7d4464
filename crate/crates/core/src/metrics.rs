//! Tracking measures: Success, Precision and Accuracy curves plus presence
//! classification counts.
//!
//! Result log format (CSV, one record per frame, header line first):
//!
//! ```text
//! frame,present,x,y,w,h,peak,median
//! 0,1,12.0,18.0,6.0,6.0,201.3,127.5
//! 1,0,0,0,0,0,140.0,127.5
//! ```
//!
//! Boxes are in frame pixels. `peak` and `median` are the heatmap
//! statistics behind the decision and are left empty for trackers that
//! have none (baselines).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{ensure, PvmError, Result};
use crate::tracker::TrackResult;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackRecord {
    pub predicted: BoundingBox,
    pub truth: BoundingBox,
}

pub fn records(predicted: &[BoundingBox], truth: &[BoundingBox]) -> Result<Vec<TrackRecord>> {
    ensure!(
        predicted.len() == truth.len(),
        Contract,
        "{} predictions for {} ground-truth frames",
        predicted.len(),
        truth.len()
    );
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(&predicted, &truth)| TrackRecord { predicted, truth })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Trapezoid area divided by the grid span, so it lies in [0, 1].
    pub auc: f64,
}

impl MetricCurve {
    fn new(grid: Vec<f64>, values: Vec<f64>) -> Self {
        let span = grid.last().unwrap() - grid[0];
        let area: f64 = grid
            .windows(2)
            .zip(values.windows(2))
            .map(|(g, v)| (g[1] - g[0]) * (v[0] + v[1]) / 2.0)
            .sum();
        let auc = if span > 0.0 { area / span } else { values[0] };
        MetricCurve { grid, values, auc }
    }

    /// Value at the grid point closest to `param`.
    pub fn value_at(&self, param: f64) -> f64 {
        let i = (0..self.grid.len())
            .min_by(|&a, &b| (self.grid[a] - param).abs().total_cmp(&(self.grid[b] - param).abs()))
            .unwrap();
        self.values[i]
    }
}

fn grid(start_steps: i64, end_steps: i64, step: f64) -> Vec<f64> {
    (start_steps..=end_steps).map(|i| i as f64 * step).collect()
}

/// θ from 0 to 1 in steps of 0.01.
pub fn theta_grid() -> Vec<f64> {
    grid(0, 100, 0.01)
}

/// ρ from 0 to 50 pixels in steps of 1.
pub fn rho_grid() -> Vec<f64> {
    grid(0, 50, 1.0)
}

/// φ from 0.1 to 2.0 in steps of 0.05.
pub fn phi_grid() -> Vec<f64> {
    grid(2, 40, 0.05)
}

fn check_grid(records: &[TrackRecord], grid: &[f64]) -> Result<()> {
    ensure!(!records.is_empty(), Contract, "no track records");
    ensure!(
        !grid.is_empty() && grid.windows(2).all(|w| w[0] < w[1]),
        Contract,
        "parameter grid must be nonempty and strictly increasing"
    );
    Ok(())
}

/// Intersection over union of two present boxes.
pub fn overlap(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    ensure!(a.present && b.present, Contract, "overlap of an absent box");
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(if union > 0.0 { inter / union } else { 0.0 })
}

pub fn center_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Fraction of truth-present frames whose prediction is present and
/// satisfies `hit(param)`; 0 when no frame has the target.
fn present_fraction(
    records: &[TrackRecord],
    grid: &[f64],
    score: impl Fn(&TrackRecord) -> f64,
    hit: impl Fn(f64, f64) -> bool,
) -> Vec<f64> {
    let scores: Vec<f64> = records
        .iter()
        .filter(|r| r.truth.present)
        .map(|r| if r.predicted.present { score(r) } else { f64::NAN })
        .collect();
    grid.iter()
        .map(|&p| {
            if scores.is_empty() {
                return 0.0;
            }
            scores.iter().filter(|&&s| !s.is_nan() && hit(s, p)).count() as f64 / scores.len() as f64
        })
        .collect()
}

pub fn success_curve(records: &[TrackRecord], grid: &[f64]) -> Result<MetricCurve> {
    check_grid(records, grid)?;
    let values = present_fraction(
        records,
        grid,
        |r| overlap(&r.predicted, &r.truth).unwrap(),
        |o, theta| o > theta,
    );
    Ok(MetricCurve::new(grid.to_vec(), values))
}

pub fn precision_curve(records: &[TrackRecord], grid: &[f64]) -> Result<MetricCurve> {
    check_grid(records, grid)?;
    let values = present_fraction(
        records,
        grid,
        |r| center_distance(&r.predicted, &r.truth),
        |d, rho| d < rho,
    );
    Ok(MetricCurve::new(grid.to_vec(), values))
}

/// Over all frames: hits where the predicted center lies inside the truth
/// box scaled by φ about its center, plus frames where both are absent.
pub fn accuracy_curve(records: &[TrackRecord], grid: &[f64]) -> Result<MetricCurve> {
    check_grid(records, grid)?;
    let n = records.len() as f64;
    let values = grid
        .iter()
        .map(|&phi| {
            records
                .iter()
                .filter(|r| match (r.truth.present, r.predicted.present) {
                    (false, false) => true,
                    (true, true) => {
                        let (cx, cy) = r.predicted.center();
                        r.truth.scaled_about_center(phi).contains(cx, cy)
                    }
                    _ => false,
                })
                .count() as f64
                / n
        })
        .collect();
    Ok(MetricCurve::new(grid.to_vec(), values))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceConfusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PresenceConfusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn presence_confusion(records: &[TrackRecord]) -> Result<PresenceConfusion> {
    ensure!(!records.is_empty(), Contract, "no track records");
    let mut c = PresenceConfusion::default();
    for r in records {
        match (r.predicted.present, r.truth.present) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tracker: String,
    pub frames: usize,
    pub success_auc: f64,
    pub precision_20: f64,
    pub precision_auc: f64,
    pub accuracy_1: f64,
    pub accuracy_auc: f64,
    pub confusion: PresenceConfusion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub success: MetricCurve,
    pub precision: MetricCurve,
    pub accuracy: MetricCurve,
    pub confusion: PresenceConfusion,
}

impl Evaluation {
    pub fn summary(&self, tracker: &str) -> Summary {
        Summary {
            tracker: tracker.to_string(),
            frames: self.confusion.total(),
            success_auc: self.success.auc,
            precision_20: self.precision.value_at(20.0),
            precision_auc: self.precision.auc,
            accuracy_1: self.accuracy.value_at(1.0),
            accuracy_auc: self.accuracy.auc,
            confusion: self.confusion,
        }
    }
}

/// All three curves on their default grids plus the confusion counts.
pub fn evaluate(records: &[TrackRecord]) -> Result<Evaluation> {
    Ok(Evaluation {
        success: success_curve(records, &theta_grid())?,
        precision: precision_curve(records, &rho_grid())?,
        accuracy: accuracy_curve(records, &phi_grid())?,
        confusion: presence_confusion(records)?,
    })
}

/// CSV with columns `tracker,curve,param,value`.
pub fn curves_csv(evals: &[(String, Evaluation)]) -> String {
    let mut out = String::from("tracker,curve,param,value\n");
    for (name, e) in evals {
        for (curve, c) in [("success", &e.success), ("precision", &e.precision), ("accuracy", &e.accuracy)] {
            for (p, v) in c.grid.iter().zip(&c.values) {
                let _ = writeln!(out, "{name},{curve},{p},{v}");
            }
        }
    }
    out
}

pub const RESULT_HEADER: &str = "frame,present,x,y,w,h,peak,median";

fn opt_num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

pub fn format_result_log(results: &[TrackResult]) -> String {
    let mut out = format!("{RESULT_HEADER}\n");
    for r in results {
        let b = &r.bbox;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.frame,
            u8::from(b.present),
            b.x,
            b.y,
            b.w,
            b.h,
            opt_num(r.peak),
            opt_num(r.median)
        );
    }
    out
}

pub fn parse_result_log(text: &str, path: &Path) -> Result<Vec<TrackResult>> {
    let err = |line: usize, msg: String| PvmError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("frame")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(err(i + 1, format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(i + 1, format!("bad number {s:?}")))
        };
        let opt = |s: &str| -> Result<f64> {
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                num(s)
            }
        };
        let frame: usize = f[0]
            .parse()
            .map_err(|_| err(i + 1, format!("bad frame index {:?}", f[0])))?;
        if frame != out.len() {
            return Err(err(i + 1, format!("frame index {frame}, expected {}", out.len())));
        }
        let bbox = match f[1] {
            "1" => BoundingBox::new(num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?),
            "0" => BoundingBox::ABSENT,
            other => return Err(err(i + 1, format!("present must be 0 or 1, found {other:?}"))),
        };
        out.push(TrackResult {
            frame,
            bbox,
            peak: opt(f[6])?,
            median: opt(f[7])?,
        });
    }
    Ok(out)
}

pub fn read_result_log(path: impl AsRef<Path>) -> Result<Vec<TrackResult>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PvmError::io(path, e))?;
    parse_result_log(&text, path)
}

pub fn write_result_log(path: impl AsRef<Path>, results: &[TrackResult]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_result_log(results)).map_err(|e| PvmError::io(path, e))
}
