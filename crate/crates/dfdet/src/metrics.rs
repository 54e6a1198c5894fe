//! Frame-to-video score aggregation, video-level AUROC, and report emission.
//!
//! AUROC runs on doubled-integer rank sums so the rank route and the
//! pair-counting oracle agree exactly, ties included. For binary labels the
//! one-vs-rest macro reduction is the plain binary AUROC, which is what this
//! implements.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One frame-level prediction; the wire record between `evaluate` and
/// `report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FramePrediction {
    pub video_id: String,
    pub frame_index: u32,
    pub fake_score: f64,
    /// Ground-truth label carried along so dumps are self-contained.
    pub label: u8,
}

#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    pub records: Vec<FramePrediction>,
    pub labels: BTreeMap<String, u8>,
    pub dataset_tag: String,
}

impl PredictionSet {
    pub fn from_records(dataset_tag: &str, records: Vec<FramePrediction>) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for r in &records {
            if let Some(&prev) = labels.get(&r.video_id) {
                if prev != r.label {
                    return Err(Error::Integrity(format!(
                        "video {} has conflicting labels",
                        r.video_id
                    )));
                }
            }
            labels.insert(r.video_id.clone(), r.label);
        }
        let set = Self { records, labels, dataset_tag: dataset_tag.to_string() };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if !self.labels.contains_key(&r.video_id) {
                return Err(Error::Integrity(format!("video {} has no label", r.video_id)));
            }
            if !r.fake_score.is_finite() || !(0.0..=1.0).contains(&r.fake_score) {
                return Err(Error::Input(format!(
                    "score {} for video {} outside [0,1]",
                    r.fake_score, r.video_id
                )));
            }
        }
        Ok(())
    }

    /// Per-video mean of frame scores. Labeled videos without any record are
    /// excluded and returned separately so callers can warn. Records are
    /// summed in canonical (frame, score) order, so the result is exactly
    /// invariant to record permutation.
    pub fn aggregate_video_scores(&self) -> (BTreeMap<String, f64>, Vec<String>) {
        let mut per_video: BTreeMap<String, Vec<(u32, f64)>> = BTreeMap::new();
        for r in &self.records {
            per_video.entry(r.video_id.clone()).or_default().push((r.frame_index, r.fake_score));
        }
        let scores: BTreeMap<String, f64> = per_video
            .into_iter()
            .map(|(vid, mut frames)| {
                frames.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
                let sum: f64 = frames.iter().map(|(_, s)| s).sum();
                (vid, sum / frames.len() as f64)
            })
            .collect();
        let excluded: Vec<String> =
            self.labels.keys().filter(|v| !scores.contains_key(*v)).cloned().collect();
        (scores, excluded)
    }

    /// Video-level AUROC of this prediction set.
    pub fn video_auroc(&self) -> Result<f64> {
        let (scores, _) = self.aggregate_video_scores();
        let mut s = Vec::with_capacity(scores.len());
        let mut l = Vec::with_capacity(scores.len());
        for (vid, score) in &scores {
            s.push(*score);
            l.push(self.labels[vid]);
        }
        auroc(&s, &l)
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counted half. Computed from average ranks in doubled-integer arithmetic,
/// so the result is exact and matches pair counting bit for bit.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Input(format!("non-finite score {bad}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.iter().filter(|&&l| l == 0).count() as u64;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both classes present".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Doubled rank sum over positives: tie group at sorted positions
    // [lo, hi) contributes (lo + hi + 1) per member (1-indexed average
    // rank times two), an integer.
    let mut doubled_rank_sum: u64 = 0;
    let mut lo = 0;
    while lo < order.len() {
        let mut hi = lo + 1;
        while hi < order.len() && scores[order[hi]] == scores[order[lo]] {
            hi += 1;
        }
        let doubled_rank = (lo + hi + 1) as u64;
        for &idx in &order[lo..hi] {
            if labels[idx] == 1 {
                doubled_rank_sum += doubled_rank;
            }
        }
        lo = hi;
    }
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Per-dataset video-level AUROC for one trained setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub setup_name: String,
    pub checkpoint_id: String,
    /// Dataset tag -> AUROC in percent.
    pub per_dataset: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if self.per_dataset.is_empty() {
            return Err(Error::Input(format!(
                "report for `{}` has no per-dataset values",
                self.setup_name
            )));
        }
        for (tag, v) in &self.per_dataset {
            if !(0.0..=100.0).contains(v) {
                return Err(Error::Input(format!("AUROC {v} for {tag} outside [0,100]")));
            }
        }
        Ok(())
    }
}

/// Benchmark column order used by the result tables; unknown tags follow
/// alphabetically.
const CANONICAL_COLUMNS: [&str; 5] = ["CDFv2", "DFD", "DFDC", "FFIW", "DSv1"];

fn column_order(reports: &[EvalReport]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for tag in CANONICAL_COLUMNS {
        if reports.iter().any(|r| r.per_dataset.contains_key(tag)) {
            seen.push(tag.to_string());
        }
    }
    let mut rest: Vec<String> = reports
        .iter()
        .flat_map(|r| r.per_dataset.keys().cloned())
        .filter(|t| !seen.contains(t))
        .collect();
    rest.sort();
    rest.dedup();
    seen.extend(rest);
    seen
}

/// Aligned text table, one row per setup, columns in benchmark order,
/// values as percentages with two decimals.
pub fn render_table(reports: &[EvalReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to render".into()));
    }
    for r in reports {
        r.validate()?;
    }
    let columns = column_order(reports);
    let name_width = reports
        .iter()
        .map(|r| r.setup_name.len())
        .chain(["Setup".len()])
        .max()
        .unwrap();
    let mut out = String::new();
    write!(out, "{:<name_width$}", "Setup").unwrap();
    for c in &columns {
        write!(out, "  {c:>8}").unwrap();
    }
    out.push('\n');
    write!(out, "{}", "-".repeat(name_width + columns.len() * 10)).unwrap();
    out.push('\n');
    for r in reports {
        write!(out, "{:<name_width$}", r.setup_name).unwrap();
        for c in &columns {
            match r.per_dataset.get(c) {
                Some(v) => write!(out, "  {:>8.2}", v).unwrap(),
                None => write!(out, "  {:>8}", "--").unwrap(),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes the aligned table plus a machine-readable JSON twin; returns both
/// paths.
pub fn emit_table(reports: &[EvalReport], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let text = render_table(reports)?;
    std::fs::create_dir_all(dir)?;
    let txt = dir.join("results_table.txt");
    let json = dir.join("results_table.json");
    std::fs::write(&txt, &text)?;
    std::fs::write(&json, serde_json::to_vec_pretty(reports)?)?;
    Ok((txt, json))
}

/// (epoch, validation AUROC) series for one setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSeries {
    pub name: String,
    pub points: Vec<(u32, f64)>,
}

/// Writes the per-setup validation curves as CSV plus a rendered PNG;
/// returns both paths.
pub fn emit_plot_data(series: &[CurveSeries], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Input("no curve data to plot".into()));
    }
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("validation_curves.csv");
    let mut body = String::from("setup,epoch,val_auroc\n");
    for s in series {
        for (e, v) in &s.points {
            writeln!(body, "{},{e},{v}", s.name).unwrap();
        }
    }
    std::fs::write(&csv, body)?;
    let png = dir.join("validation_curves.png");
    crate::plot::render_curves(series, &png)?;
    Ok((csv, png))
}
