//! Online training over labeled sequences.
//!
//! Sequences are concatenated in order and looped. The frame shown at a
//! given step is `step mod total_frames`, taken from the system's own step
//! counter, so a run resumed from a checkpoint sees exactly the frames the
//! uninterrupted run would have.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::dataset::{rasterize_targets, LabeledSequence};
use crate::error::{ensure, PvmError, Result};
use crate::executor::{Mode, Regime, System};

pub const LOG_FILE: &str = "training_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.pvm";

#[derive(Clone, Debug)]
pub struct TrainingOptions {
    pub steps: u64,
    pub regime: Regime,
    /// Checkpoint cadence in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Where checkpoints and the log go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
}

impl TrainingOptions {
    pub fn new(steps: u64, regime: Regime) -> Self {
        TrainingOptions {
            steps,
            regime,
            checkpoint_every: 0,
            log_every: 1000,
            out_dir: None,
        }
    }
}

/// Per-layer mean errors over one logging window.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// Last step of the window.
    pub step: u64,
    pub predict_error: Vec<f64>,
    pub readout_error: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingReport {
    pub log: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Frame at position `index` of the looped concatenation of `data`.
pub fn locate(data: &[LabeledSequence], index: u64) -> (usize, usize) {
    let total: usize = data.iter().map(|s| s.len()).sum();
    let mut i = (index % total as u64) as usize;
    for (k, s) in data.iter().enumerate() {
        if i < s.len() {
            return (k, i);
        }
        i -= s.len();
    }
    unreachable!("index reduced modulo the total length")
}

pub fn log_header(layers: usize) -> String {
    let mut h = String::from("step");
    for k in 0..layers {
        h.push_str(&format!(",predict_l{k}"));
    }
    for k in 0..layers {
        h.push_str(&format!(",readout_l{k}"));
    }
    h
}

pub fn format_log_row(row: &LogRow) -> String {
    let mut s = row.step.to_string();
    for v in row.predict_error.iter().chain(&row.readout_error) {
        s.push_str(&format!(",{v}"));
    }
    s
}

fn checkpoint_to(system: &System, dir: &Path, name: &str, report: &mut TrainingReport) -> Result<()> {
    let path = dir.join(name);
    checkpoint::save(system, &path)?;
    report.checkpoints.push(path);
    Ok(())
}

/// Runs `opts.steps` training steps, calling `on_log` after each logging
/// window.
pub fn run_training(
    system: &mut System,
    data: &[LabeledSequence],
    opts: &TrainingOptions,
    mut on_log: impl FnMut(&LogRow),
) -> Result<TrainingReport> {
    ensure!(
        data.iter().any(|s| !s.is_empty()),
        Config,
        "training data has no frames"
    );
    let frame = system.config().frame;
    ensure!(
        data.iter().all(|s| s.frames.iter().all(|f| f.dims() == frame)),
        Contract,
        "training frames must be {frame}"
    );
    ensure!(opts.log_every > 0, Config, "log_every must be positive");
    let layers = system.topology().layers.len();
    let mut report = TrainingReport::default();

    let mut log_file = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| PvmError::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let mut f = BufWriter::new(File::create(&path).map_err(|e| PvmError::io(&path, e))?);
            writeln!(f, "{}", log_header(layers)).map_err(|e| PvmError::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let supervised = !matches!(opts.regime, Regime::Unsupervised);
    let mut sum_p = vec![0.0; layers];
    let mut sum_r = vec![0.0; layers];
    let mut window = 0u64;
    for _ in 0..opts.steps {
        let (seq, idx) = locate(data, system.step_counter());
        let seq = &data[seq];
        let targets = supervised.then(|| rasterize_targets(&seq.labels[idx], system.topology()));
        let out = system.step(&seq.frames[idx], targets.as_ref(), Mode::Train(opts.regime))?;
        for k in 0..layers {
            sum_p[k] += out.predict_error[k];
            sum_r[k] += out.readout_error[k];
        }
        window += 1;
        let step = system.step_counter();
        if step % opts.log_every == 0 {
            let row = LogRow {
                step,
                predict_error: sum_p.iter().map(|s| s / window as f64).collect(),
                readout_error: sum_r.iter().map(|s| s / window as f64).collect(),
            };
            if let Some((f, path)) = &mut log_file {
                writeln!(f, "{}", format_log_row(&row))
                    .and_then(|_| f.flush())
                    .map_err(|e| PvmError::io(path.as_path(), e))?;
            }
            on_log(&row);
            report.log.push(row);
            sum_p.fill(0.0);
            sum_r.fill(0.0);
            window = 0;
        }
        if let Some(dir) = &opts.out_dir {
            if opts.checkpoint_every > 0 && step % opts.checkpoint_every == 0 {
                checkpoint_to(system, dir, &format!("step_{step:09}.pvm"), &mut report)?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        checkpoint_to(system, dir, FINAL_CHECKPOINT, &mut report)?;
    }
    Ok(report)
}
