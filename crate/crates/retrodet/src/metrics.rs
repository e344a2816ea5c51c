//! Pixel confusion counts, precision/recall/F-measure, and corpus
//! evaluation with count-level aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{load_clip, ClipSample};
use crate::model::{Model, ModelError};
use crate::tensor::{Mask2, Tensor5};

pub const THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl EvalCounts {
    pub fn merge(&mut self, other: &EvalCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Binarize predictions at `threshold` and count against the mask.
pub fn confusion(pred: &Tensor5<f32>, mask: &Mask2, threshold: f32) -> EvalCounts {
    let d = pred.dims();
    assert_eq!(
        (d.n, d.c, d.l, d.h, d.w),
        (mask.n, 1, 1, mask.h, mask.w),
        "prediction/mask dims must match"
    );
    let mut c = EvalCounts::default();
    for (&p, &y) in pred.data().iter().zip(mask.data()) {
        match (p >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Precision, recall, F-measure; every 0/0 is defined as 0.
pub fn prf(c: &EvalCounts) -> (f64, f64, f64) {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Per-scenario counts, plus the overall sum.
    pub scenarios: BTreeMap<String, EvalCounts>,
    pub overall: EvalCounts,
    pub scales: Vec<f64>,
    pub skipped: usize,
    pub evaluated: usize,
}

impl EvalReport {
    /// Text table mirroring per-video metric tables, with an Average row.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# aggregation: count-level (confusion counts summed before P/R/F); 0/0 := 0\n");
        out.push_str(&format!(
            "# scales: {:?}  threshold: {THRESHOLD}  samples: {}  skipped: {}\n",
            self.scales, self.evaluated, self.skipped
        ));
        out.push_str(&format!("{:<24} {:>9} {:>9} {:>9}\n", "scenario", "P", "R", "F"));
        for (tag, c) in &self.scenarios {
            let (p, r, f) = prf(c);
            out.push_str(&format!("{tag:<24} {p:>9.4} {r:>9.4} {f:>9.4}\n"));
        }
        let (p, r, f) = prf(&self.overall);
        out.push_str(&format!("{:<24} {p:>9.4} {r:>9.4} {f:>9.4}\n", "Average"));
        out
    }
}

/// Evaluate one in-memory sample with multi-scale inference.
pub fn evaluate_sample(
    model: &Model,
    sample: &ClipSample,
    scales: &[f64],
) -> Result<EvalCounts, ModelError> {
    let pred = model.infer_multiscale(&sample.clip, scales)?;
    Ok(confusion(&pred, &sample.mask, THRESHOLD))
}

/// Evaluate every clip in a corpus; unreadable or unusable samples are
/// skipped (with a warning through `warn`) and counted in the report.
pub fn evaluate(
    model: &Model,
    clip_paths: &[std::path::PathBuf],
    scales: &[f64],
    mut warn: impl FnMut(&str),
) -> Result<EvalReport, ModelError> {
    let mut report = EvalReport {
        scenarios: BTreeMap::new(),
        overall: EvalCounts::default(),
        scales: scales.to_vec(),
        skipped: 0,
        evaluated: 0,
    };
    for path in clip_paths {
        let sample = match load_clip(path) {
            Ok(s) => s,
            Err(e) => {
                warn(&format!("skipping {}: {e}", path.display()));
                report.skipped += 1;
                continue;
            }
        };
        let counts = match evaluate_sample(model, &sample, scales) {
            Ok(c) => c,
            Err(e) => {
                warn(&format!("skipping {}: {e}", path.display()));
                report.skipped += 1;
                continue;
            }
        };
        report.scenarios.entry(sample.tag.clone()).or_default().merge(&counts);
        report.overall.merge(&counts);
        report.evaluated += 1;
    }
    Ok(report)
}

/// Convenience for in-memory corpora (tests, training-time validation).
pub fn evaluate_samples(
    model: &Model,
    samples: &[ClipSample],
    scales: &[f64],
) -> Result<EvalReport, ModelError> {
    let mut report = EvalReport {
        scenarios: BTreeMap::new(),
        overall: EvalCounts::default(),
        scales: scales.to_vec(),
        skipped: 0,
        evaluated: 0,
    };
    for sample in samples {
        let counts = evaluate_sample(model, sample, scales)?;
        report.scenarios.entry(sample.tag.clone()).or_default().merge(&counts);
        report.overall.merge(&counts);
        report.evaluated += 1;
    }
    Ok(report)
}

/// Write the rendered report next to a machine-readable key=value copy.
pub fn write_report(report: &EvalReport, dir: &Path) -> std::io::Result<()> {
    std::fs::write(dir.join("report.txt"), report.render())?;
    let mut kv = String::new();
    for (tag, c) in &report.scenarios {
        let (p, r, f) = prf(c);
        kv.push_str(&format!("{tag}.p={p}\n{tag}.r={r}\n{tag}.f={f}\n"));
    }
    let (p, r, f) = prf(&report.overall);
    kv.push_str(&format!("overall.p={p}\noverall.r={r}\noverall.f={f}\n"));
    kv.push_str(&format!("evaluated={}\nskipped={}\n", report.evaluated, report.skipped));
    std::fs::write(dir.join("report.kv"), kv)
}
