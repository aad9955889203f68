//! Timing protocol for whole-dataset prediction.
//!
//! One untimed warm-up pass over the dataset, then `reps` timed passes.
//! Each pass's wall time divided by the number of images gives one
//! per-image sample; the report carries their mean and sample standard
//! deviation in milliseconds. The clock is abstract so the protocol can be
//! exercised with scripted time.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::engine::{run_batch, run_float, run_quant};
use crate::quant::QuantWeightSet;
use crate::{Error, Graph, Result, Tensor, WeightSet};

pub trait Clock {
    /// Monotonic time in nanoseconds.
    fn now_ns(&self) -> u64;
}

/// Something that predicts a whole (N, H, W, C) dataset.
pub trait Executor {
    fn backend(&self) -> &str;
    fn predict(&mut self, images: &Tensor) -> Result<()>;
}

#[derive(Debug)]
pub struct FloatExecutor<'a> {
    pub graph: &'a Graph,
    pub weights: &'a WeightSet,
}

impl Executor for FloatExecutor<'_> {
    fn backend(&self) -> &str {
        "float"
    }

    fn predict(&mut self, images: &Tensor) -> Result<()> {
        run_batch(images, |x| run_float(self.graph, self.weights, x)).map(drop)
    }
}

#[derive(Debug)]
pub struct QuantExecutor<'a> {
    pub graph: &'a Graph,
    pub weights: &'a QuantWeightSet,
}

impl Executor for QuantExecutor<'_> {
    fn backend(&self) -> &str {
        "quant"
    }

    fn predict(&mut self, images: &Tensor) -> Result<()> {
        run_batch(images, |x| run_quant(self.graph, self.weights, x)).map(drop)
    }
}

pub const FLAG_SINGLE_REP: &str = "single repetition: no spread estimate";

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimingReport {
    pub dataset_name: String,
    /// (N, H, W, C)
    pub dataset_shape: [usize; 4],
    pub backend: String,
    pub repetitions: usize,
    /// Milliseconds per image.
    pub per_image_mean: f64,
    /// Sample standard deviation of the per-image times, 0 for one repetition.
    pub per_image_std: f64,
    /// Milliseconds per timed pass over the whole dataset.
    pub raw_dataset_times: Vec<f64>,
    pub flags: Vec<String>,
}

pub fn time_dataset(
    exec: &mut dyn Executor,
    dataset_name: &str,
    images: &Tensor,
    reps: usize,
    clock: &dyn Clock,
) -> Result<TimingReport> {
    let n = images.batch();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
    }
    exec.predict(images)?;
    let mut raw = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = clock.now_ns();
        exec.predict(images)?;
        let t1 = clock.now_ns();
        raw.push(t1.saturating_sub(t0) as f64 / 1e6);
    }
    let per: Vec<f64> = raw.iter().map(|t| t / n as f64).collect();
    let mean = per.iter().sum::<f64>() / reps as f64;
    let std = if reps > 1 {
        libm::sqrt(per.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (reps - 1) as f64)
    } else {
        0.0
    };
    Ok(TimingReport {
        dataset_name: dataset_name.to_string(),
        dataset_shape: images.dims(),
        backend: exec.backend().to_string(),
        repetitions: reps,
        per_image_mean: mean,
        per_image_std: std,
        raw_dataset_times: raw,
        flags: if reps == 1 { alloc::vec![FLAG_SINGLE_REP.to_string()] } else { Vec::new() },
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ComparisonRow {
    pub label: String,
    pub per_image_mean: f64,
    pub per_image_std: f64,
    /// `baseline mean / this mean`.
    pub speedup: f64,
}

/// Per-image means side by side with the speed-up of each row relative to
/// the row labelled `baseline` (the first report when `None`). Labels are
/// `dataset/backend`.
pub fn compare(reports: &[TimingReport], baseline: Option<&str>) -> Result<Vec<ComparisonRow>> {
    let label = |r: &TimingReport| format!("{}/{}", r.dataset_name, r.backend);
    let base = match baseline {
        None => reports.first().ok_or(Error::EmptyDataset)?,
        Some(b) => reports
            .iter()
            .find(|r| label(r) == b)
            .ok_or_else(|| Error::InvalidArgument(format!("no report labelled `{}`", b)))?,
    };
    reports
        .iter()
        .map(|r| {
            if !(r.per_image_mean > 0.0) {
                return Err(Error::InvalidArgument(format!("`{}` has non-positive mean time", label(r))));
            }
            Ok(ComparisonRow {
                label: label(r),
                per_image_mean: r.per_image_mean,
                per_image_std: r.per_image_std,
                speedup: base.per_image_mean / r.per_image_mean,
            })
        })
        .collect()
}

/// Plain-text table: `mean±std` in ms with two decimals, speed-up with one.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.2}±{:.2}", r.per_image_mean, r.per_image_std))
        .collect();
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let tw = cells.iter().map(|c| c.chars().count()).max().unwrap_or(0).max(8);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>tw$}  {:>8}", "label", "ms/image", "speedup");
    for (r, c) in rows.iter().zip(&cells) {
        let pad = tw - c.chars().count();
        let _ = writeln!(s, "{:<width$}  {}{}  {:>8.1}", r.label, " ".repeat(pad), c, r.speedup);
    }
    s
}
