//! Plot data: per-category score histograms and ROC curves.
//!
//! Writes `histograms.csv`, `roc.csv` and a rendered `roc.png`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datasets::save_png;
use crate::error::{Error, Result};
use crate::metrics::{roc_curve, LabeledScore};
use crate::pipeline::RunResult;
use crate::types::{ImageBuffer, Label};

pub const HISTOGRAM_CSV: &str = "histograms.csv";
pub const ROC_CSV: &str = "roc.csv";
pub const ROC_PNG: &str = "roc.png";
pub const HISTOGRAM_BINS: usize = 20;

/// Scores grouped by category name.
pub type Grouped = BTreeMap<String, Vec<LabeledScore>>;

/// Scores of a run grouped by category.
pub fn group_result(result: &RunResult) -> Grouped {
    let mut g = Grouped::new();
    for (r, label) in result.records.iter().zip(&result.labels) {
        g.entry(r.category.name().to_owned()).or_default().push(LabeledScore::new(r.score, *label));
    }
    g
}

/// Bin counts over `[lo, hi]`; the last bin is closed.
pub fn histogram(scores: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &s in scores {
        let i = if width > 0.0 { ((s - lo) / width).floor() as isize } else { 0 };
        counts[i.clamp(0, bins as isize - 1) as usize] += 1;
    }
    counts
}

pub fn histograms_csv(groups: &Grouped) -> String {
    let mut out = String::from("category,label,bin_lo,bin_hi,count\n");
    for (category, items) in groups {
        let lo = items.iter().map(|i| i.score).fold(0.0, f64::min);
        let hi = items.iter().map(|i| i.score).fold(1.0, f64::max);
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        for label in [Label::Normal, Label::Anomaly] {
            let scores: Vec<f64> = items.iter().filter(|i| i.label == label).map(|i| i.score).collect();
            for (b, count) in histogram(&scores, lo, hi, HISTOGRAM_BINS).into_iter().enumerate() {
                let a = lo + width * b as f64;
                let _ = writeln!(out, "{category},{},{a:.6},{:.6},{count}", label.as_str(), a + width);
            }
        }
    }
    out
}

pub fn roc_csv(groups: &Grouped) -> Result<String> {
    let mut out = String::from("category,fpr,tpr\n");
    for (category, items) in groups {
        for (fpr, tpr) in roc_curve(items)? {
            let _ = writeln!(out, "{category},{fpr:.6},{tpr:.6}");
        }
    }
    Ok(out)
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

struct Canvas {
    size: usize,
    data: Vec<u8>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![255; size * size * 3],
        }
    }

    fn put(&mut self, col: i64, row: i64, rgb: [u8; 3]) {
        let n = self.size as i64;
        if (0..n).contains(&col) && (0..n).contains(&row) {
            let i = (row as usize * self.size + col as usize) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), rgb: [u8; 3]) {
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = a.0 + (b.0 - a.0) * t;
            let y = a.1 + (b.1 - a.1) * t;
            self.put(x.round() as i64, y.round() as i64, rgb);
        }
    }
}

/// ROC curves of every group on one square plot, unit square with a margin.
pub fn render_roc(groups: &Grouped, size: u32) -> Result<ImageBuffer> {
    let margin = 16.0;
    let side = size as f64 - 2.0 * margin;
    let map = |fpr: f64, tpr: f64| (margin + fpr * side, margin + (1.0 - tpr) * side);
    let mut canvas = Canvas::new(size as usize);
    let axis = [0, 0, 0];
    canvas.line(map(0.0, 0.0), map(1.0, 0.0), axis);
    canvas.line(map(0.0, 0.0), map(0.0, 1.0), axis);
    canvas.line(map(0.0, 0.0), map(1.0, 1.0), [190, 190, 190]);
    for (i, items) in groups.values().enumerate() {
        let rgb = PALETTE[i % PALETTE.len()];
        let points = roc_curve(items)?;
        for w in points.windows(2) {
            canvas.line(map(w[0].0, w[0].1), map(w[1].0, w[1].1), rgb);
        }
    }
    ImageBuffer::new(size, size, 3, canvas.data)
}

/// Writes all plot files into `dir`.
pub fn write_plots(dir: &Path, groups: &Grouped) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write(HISTOGRAM_CSV, histograms_csv(groups))?;
    write(ROC_CSV, roc_csv(groups)?)?;
    save_png(&render_roc(groups, 256)?, &dir.join(ROC_PNG))
}
