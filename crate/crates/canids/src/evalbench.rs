//! Ground-truth labeling, confusion accounting, and the evaluation metrics
//! DR, FPR, F1, MCC, and TTP.
//!
//! Evaluation is window-level: a window's ground truth is positive when any
//! of its frames is tampered. Metrics with a zero denominator are reported
//! as 0 with an explicit undefined flag. Aggregation across IDs sums the
//! confusion counts first (micro-averaging); TTP pools total wall time over
//! total packets.

use crate::detector::{DetectTiming, WindowVerdict};
use crate::error::{Error, Result};
use crate::preprocess::WindowBatch;
use crate::scalar::Scalar;
use std::fmt::Write as _;

/// Window-level 2x2 counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// One metric value with its zero-denominator flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub value: f64,
    pub defined: bool,
}

impl Metric {
    fn defined(value: f64) -> Self {
        Metric { value, defined: true }
    }

    fn undefined() -> Self {
        Metric { value: 0.0, defined: false }
    }
}

/// DR, FPR, F1 and MCC for one confusion table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub dr: Metric,
    pub fpr: Metric,
    pub f1: Metric,
    pub mcc: Metric,
}

/// Ground truth per window: positive iff any member frame is tampered.
pub fn label_windows<T: Scalar>(batch: &WindowBatch<T>) -> Vec<bool> {
    batch.meta.iter().map(|m| m.tampered).collect()
}

/// Standard 2x2 counting of aligned verdicts against ground truth.
pub fn confusion(verdicts: &[WindowVerdict], labels: &[bool]) -> Result<ConfusionCounts> {
    if verdicts.len() != labels.len() {
        return Err(Error::Misalignment(format!(
            "{} verdicts vs {} labels",
            verdicts.len(),
            labels.len()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (v, &truth) in verdicts.iter().zip(labels) {
        match (v.anomalous, truth) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, false) => counts.tn += 1,
            (false, true) => counts.fn_ += 1,
        }
    }
    Ok(counts)
}

/// dr = tp/(tp+fn); fpr = fp/(fp+tn); f1 = 2tp/(2tp+fp+fn);
/// mcc = (tp*tn - fp*fn)/sqrt((tp+fp)(tp+fn)(tn+fp)(tn+fn)).
pub fn metrics(counts: &ConfusionCounts) -> Result<Metrics> {
    if counts.total() == 0 {
        return Err(Error::InsufficientData("metrics over zero windows".into()));
    }
    let (tp, fp, tn, fn_) =
        (counts.tp as f64, counts.fp as f64, counts.tn as f64, counts.fn_ as f64);
    let ratio = |num: f64, den: f64| {
        if den == 0.0 {
            Metric::undefined()
        } else {
            Metric::defined(num / den)
        }
    };
    let dr = ratio(tp, tp + fn_);
    let fpr = ratio(fp, fp + tn);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, mcc_den);
    Ok(Metrics { dr, fpr, f1, mcc })
}

/// Pooled testing time per packet: total seconds over total packets.
pub fn measure_ttp(blocks: &[DetectTiming]) -> Result<f64> {
    let packets: usize = blocks.iter().map(|b| b.packets).sum();
    if packets == 0 {
        return Err(Error::InsufficientData("TTP over zero packets".into()));
    }
    let seconds: f64 = blocks.iter().map(|b| b.seconds).sum();
    Ok(seconds / packets as f64)
}

/// One evaluated ID's row of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct IdResult {
    pub can_id: u32,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub timing: DetectTiming,
}

/// Full evaluation outcome: per-ID rows plus the micro-averaged aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset_label: String,
    pub per_id: Vec<IdResult>,
    pub aggregate_counts: ConfusionCounts,
    pub aggregate_metrics: Metrics,
    /// Seconds per packet, pooled across IDs.
    pub ttp: f64,
}

impl EvalReport {
    pub fn build(dataset_label: &str, per_id: Vec<IdResult>) -> Result<EvalReport> {
        let mut aggregate_counts = ConfusionCounts::default();
        for row in &per_id {
            aggregate_counts.add(&row.counts);
        }
        let aggregate_metrics = metrics(&aggregate_counts)?;
        let timings: Vec<DetectTiming> = per_id.iter().map(|r| r.timing).collect();
        let ttp = measure_ttp(&timings)?;
        Ok(EvalReport {
            dataset_label: dataset_label.to_string(),
            per_id,
            aggregate_counts,
            aggregate_metrics,
            ttp,
        })
    }

    /// Flat CSV, one row per ID plus the aggregate; column order DR, FPR,
    /// F1, MCC, TTP. Undefined metrics show as 0 with a trailing flag list.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,tp,fp,tn,fn,DR,FPR,F1,MCC,TTP,undefined\n");
        let row = |out: &mut String, name: &str, c: &ConfusionCounts, m: &Metrics, ttp: f64| {
            let mut undef = Vec::new();
            for (label, metric) in
                [("DR", m.dr), ("FPR", m.fpr), ("F1", m.f1), ("MCC", m.mcc)]
            {
                if !metric.defined {
                    undef.push(label);
                }
            }
            writeln!(
                out,
                "{name},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6e},{}",
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                m.dr.value,
                m.fpr.value,
                m.f1.value,
                m.mcc.value,
                ttp,
                undef.join(";")
            )
            .unwrap();
        };
        for r in &self.per_id {
            let ttp = if r.timing.packets == 0 {
                0.0
            } else {
                r.timing.seconds / r.timing.packets as f64
            };
            row(&mut out, &format!("0x{:X}", r.can_id), &r.counts, &r.metrics, ttp);
        }
        row(&mut out, "aggregate", &self.aggregate_counts, &self.aggregate_metrics, self.ttp);
        out
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "dataset: {}", self.dataset_label).unwrap();
        writeln!(
            out,
            "{:>10} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}",
            "id", "tp", "fp", "tn", "fn", "DR", "FPR", "F1", "MCC"
        )
        .unwrap();
        let mut line = |name: &str, c: &ConfusionCounts, m: &Metrics| {
            writeln!(
                out,
                "{name:>10} {:>6} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                c.tp, c.fp, c.tn, c.fn_, m.dr.value, m.fpr.value, m.f1.value, m.mcc.value
            )
            .unwrap();
        };
        for r in &self.per_id {
            line(&format!("0x{:X}", r.can_id), &r.counts, &r.metrics);
        }
        line("aggregate", &self.aggregate_counts, &self.aggregate_metrics);
        writeln!(out, "TTP: {:.4} ms/packet (pooled)", self.ttp * 1e3).unwrap();
        out
    }
}
