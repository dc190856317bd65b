//! AUROC and AUPR (average precision) with anomaly as the positive class,
//! plus per-category and macro-averaged reports.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::datasets::DatasetManifest;
use crate::error::{Error, Result};
use crate::scorer::ScoreRecord;
use crate::types::Label;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledScore {
    pub score: f64,
    pub label: Label,
}

impl LabeledScore {
    pub fn new(score: f64, label: Label) -> Self {
        Self { score, label }
    }

    pub fn normal(score: f64) -> Self {
        Self::new(score, Label::Normal)
    }

    pub fn anomaly(score: f64) -> Self {
        Self::new(score, Label::Anomaly)
    }
}

fn check_finite(items: &[LabeledScore]) -> Result<()> {
    if let Some(bad) = items.iter().find(|i| !i.score.is_finite()) {
        return Err(Error::Schema(format!("non-finite score {}", bad.score)));
    }
    Ok(())
}

fn total_cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Probability that an anomaly outscores a normal sample, ties counted half.
///
/// Computed from the rank sum of the anomalies with mid-ranks for ties.
pub fn auroc(items: &[LabeledScore]) -> Result<f64> {
    check_finite(items)?;
    let n_pos = items.iter().filter(|i| i.label.is_anomaly()).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass { scope: None });
    }
    let mut sorted: Vec<&LabeledScore> = items.iter().collect();
    sorted.sort_by(|a, b| total_cmp(a.score, b.score));

    // Twice the rank sum keeps mid-ranks integral.
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        // ranks i+1 ..= j, mid-rank (i + 1 + j) / 2
        let mid_x2 = (i + 1 + j) as u64;
        let positives = sorted[i..j].iter().filter(|s| s.label.is_anomaly()).count() as u64;
        rank_sum_x2 += mid_x2 * positives;
        i = j;
    }
    let n_pos = n_pos as u64;
    let u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
    Ok(u_x2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Non-interpolated average precision.
///
/// Items are swept by descending score; equal scores form one threshold step.
pub fn aupr(items: &[LabeledScore]) -> Result<f64> {
    check_finite(items)?;
    let n_pos = items.iter().filter(|i| i.label.is_anomaly()).count();
    if n_pos == 0 {
        return Err(Error::SingleClass { scope: None });
    }
    let mut sorted: Vec<&LabeledScore> = items.iter().collect();
    sorted.sort_by(|a, b| total_cmp(b.score, a.score));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let mut step_tp = 0;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].label.is_anomaly() {
                step_tp += 1;
            }
            j += 1;
        }
        tp += step_tp;
        seen = j;
        if step_tp > 0 {
            let delta_recall = step_tp as f64 / n_pos as f64;
            let precision = tp as f64 / seen as f64;
            ap += delta_recall * precision;
        }
        i = j;
    }
    debug_assert_eq!(seen, sorted.len());
    Ok(ap)
}

/// ROC curve as `(false positive rate, true positive rate)` points, one per
/// distinct threshold, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(items: &[LabeledScore]) -> Result<Vec<(f64, f64)>> {
    check_finite(items)?;
    let n_pos = items.iter().filter(|i| i.label.is_anomaly()).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass { scope: None });
    }
    let mut sorted: Vec<&LabeledScore> = items.iter().collect();
    sorted.sort_by(|a, b| total_cmp(b.score, a.score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].label.is_anomaly() {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub auroc: f64,
    pub aupr: f64,
    pub n_normal: usize,
    pub n_anomaly: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub auroc: f64,
    pub aupr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_category: BTreeMap<String, CategoryMetrics>,
    /// Unweighted mean over categories.
    pub macro_avg: Summary,
    /// All samples pooled into one ranking.
    pub pooled: Summary,
}

impl MetricReport {
    pub fn from_items<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, LabeledScore)>,
    {
        let mut by_category: BTreeMap<&str, Vec<LabeledScore>> = BTreeMap::new();
        for (category, item) in items {
            by_category.entry(category).or_default().push(item);
        }
        if by_category.is_empty() {
            return Err(Error::SingleClass { scope: None });
        }
        let mut per_category = BTreeMap::new();
        let mut pooled_items = Vec::new();
        for (category, items) in &by_category {
            let scoped = |e: Error| match e {
                Error::SingleClass { .. } => Error::SingleClass {
                    scope: Some(category.to_string()),
                },
                other => other,
            };
            let n_anomaly = items.iter().filter(|i| i.label.is_anomaly()).count();
            per_category.insert(
                category.to_string(),
                CategoryMetrics {
                    auroc: auroc(items).map_err(scoped)?,
                    aupr: aupr(items).map_err(scoped)?,
                    n_normal: items.len() - n_anomaly,
                    n_anomaly,
                },
            );
            pooled_items.extend_from_slice(items);
        }
        let n = per_category.len() as f64;
        let macro_avg = Summary {
            auroc: per_category.values().map(|m| m.auroc).sum::<f64>() / n,
            aupr: per_category.values().map(|m| m.aupr).sum::<f64>() / n,
        };
        let pooled = Summary {
            auroc: auroc(&pooled_items)?,
            aupr: aupr(&pooled_items)?,
        };
        Ok(Self {
            per_category,
            macro_avg,
            pooled,
        })
    }

    /// Delimited table: one row per category, then a `macro` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,n_normal,n_anomaly,auroc,aupr\n");
        let (mut total_normal, mut total_anomaly) = (0, 0);
        for (category, m) in &self.per_category {
            out.push_str(&format!(
                "{category},{},{},{:.6},{:.6}\n",
                m.n_normal, m.n_anomaly, m.auroc, m.aupr
            ));
            total_normal += m.n_normal;
            total_anomaly += m.n_anomaly;
        }
        out.push_str(&format!(
            "macro,{total_normal},{total_anomaly},{:.6},{:.6}\n",
            self.macro_avg.auroc, self.macro_avg.aupr
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Joins score records with manifest labels and aggregates per category.
pub fn build_report(records: &[ScoreRecord], manifest: &DatasetManifest) -> Result<MetricReport> {
    let labels: HashMap<&str, Label> = manifest
        .samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s.label))
        .collect();
    let mut items = Vec::with_capacity(records.len());
    for r in records {
        let label = *labels
            .get(r.sample_id.as_str())
            .ok_or_else(|| Error::MissingSample(r.sample_id.clone()))?;
        items.push((r.category.name(), LabeledScore::new(r.score, label)));
    }
    MetricReport::from_items(items)
}
