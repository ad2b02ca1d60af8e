//! Accuracy metrics, reports and the ablation grid.

mod ablation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Serialize, Serializer};

use crate::alignment::{embed, AlignmentParams, VisualFeatureMap};
use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};
use crate::refinement::StreamRecord;
use crate::tensor_io::ClassSplit;

pub use ablation::{ablation_csv, resolve_delta, run_ablation_suite, AblationConfig, AblationRow, Protocol};

/// Rounds to four decimals, ties to even.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round_ties_even() / 1e4
}

pub(crate) fn ser_round4<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round4(*x))
}

pub(crate) fn ser_round4_opt<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round4(*v)),
        None => s.serialize_none(),
    }
}

fn ser_round4_map<S: Serializer>(m: &BTreeMap<i64, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_map(m.iter().map(|(k, v)| (k, round4(*v))))
}

fn check_lengths(preds: &[i64], labels: &[i64]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    Ok(())
}

pub fn top1_accuracy(preds: &[i64], labels: &[i64]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `2SU / (S + U)`, zero when both are zero.
pub fn harmonic_mean(seen: f64, unseen: f64) -> f64 {
    if seen + unseen > 0.0 {
        2.0 * seen * unseen / (seen + unseen)
    } else {
        0.0
    }
}

/// Seen and unseen accuracy; a component is absent when no sample of that
/// domain occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GzslMetrics {
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
}

impl GzslMetrics {
    pub fn harmonic(&self) -> Result<f64> {
        match (self.seen, self.unseen) {
            (Some(s), Some(u)) => Ok(harmonic_mean(s, u)),
            _ => Err(Error::InvalidInput("harmonic mean needs both seen and unseen samples".into())),
        }
    }
}

pub fn gzsl_metrics(preds: &[i64], labels: &[i64], split: &ClassSplit) -> Result<GzslMetrics> {
    check_lengths(preds, labels)?;
    let mut counts = [(0usize, 0usize); 2];
    for (&p, &l) in preds.iter().zip(labels) {
        let slot = if split.is_seen(l) {
            0
        } else if split.is_unseen(l) {
            1
        } else {
            return Err(Error::UnknownClass(l));
        };
        counts[slot].1 += 1;
        if p == l {
            counts[slot].0 += 1;
        }
    }
    let acc = |(hit, n): (usize, usize)| (n > 0).then(|| hit as f64 / n as f64);
    Ok(GzslMetrics { seen: acc(counts[0]), unseen: acc(counts[1]) })
}

/// Counts indexed `[true, predicted]` in `class_order` order.
pub fn confusion_matrix(preds: &[i64], labels: &[i64], class_order: &[i64]) -> Result<Array2<usize>> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidInput("predictions and labels differ in length".into()));
    }
    let pos: BTreeMap<i64, usize> = class_order.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let index = |c: i64| pos.get(&c).copied().ok_or(Error::UnknownClass(c));
    let mut m = Array2::zeros((class_order.len(), class_order.len()));
    for (&p, &l) in preds.iter().zip(labels) {
        m[[index(l)?, index(p)?]] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "ser_round4")]
    pub top1: f64,
    #[serde(rename = "S", serialize_with = "ser_round4_opt")]
    pub seen_acc: Option<f64>,
    #[serde(rename = "U", serialize_with = "ser_round4_opt")]
    pub unseen_acc: Option<f64>,
    #[serde(rename = "H", serialize_with = "ser_round4_opt")]
    pub harmonic: Option<f64>,
    /// Accuracy of each class that occurs in the labels.
    #[serde(serialize_with = "ser_round4_map")]
    pub per_class_acc: BTreeMap<i64, f64>,
    pub class_order: Vec<i64>,
    pub confusion: Vec<Vec<usize>>,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn compute(preds: &[i64], labels: &[i64], class_order: &[i64], split: &ClassSplit) -> Result<Self> {
        let top1 = top1_accuracy(preds, labels)?;
        let g = gzsl_metrics(preds, labels, split)?;
        let confusion = confusion_matrix(preds, labels, class_order)?;
        let per_class_acc = class_order
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| {
                let n: usize = confusion.row(i).sum();
                (n > 0).then(|| (c, confusion[[i, i]] as f64 / n as f64))
            })
            .collect();
        Ok(Self {
            top1,
            seen_acc: g.seen,
            unseen_acc: g.unseen,
            harmonic: g.harmonic().ok(),
            per_class_acc,
            class_order: class_order.to_vec(),
            confusion: confusion.rows().into_iter().map(|r| r.to_vec()).collect(),
            n_samples: preds.len(),
        })
    }

    pub fn from_records(records: &[StreamRecord], split: &ClassSplit) -> Result<Self> {
        let preds: Vec<i64> = records.iter().map(|r| r.predicted).collect();
        let labels: Vec<i64> = records.iter().map(|r| r.true_class).collect();
        let order: Vec<i64> = split.all().into_iter().collect();
        Self::compute(&preds, &labels, &order, split)
    }

    /// Lowest per-class accuracy among `classes` that occur.
    pub fn min_class_accuracy(&self, classes: &BTreeSet<i64>) -> Option<f64> {
        self.per_class_acc.iter().filter(|(c, _)| classes.contains(c)).map(|(_, &a)| a).reduce(f64::min)
    }
}

/// Per-class accuracy change, largest gain first, ties by class id.
pub fn classwise_delta(before: &MetricsReport, after: &MetricsReport) -> Result<Vec<(i64, f64)>> {
    if !before.per_class_acc.keys().eq(after.per_class_acc.keys()) {
        return Err(Error::InvalidInput("reports cover different classes".into()));
    }
    let mut out: Vec<(i64, f64)> =
        before.per_class_acc.iter().map(|(&c, &b)| (c, after.per_class_acc[&c] - b)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// One row per sample: id, true class, prediction, confidence, entropy and
/// gate route.
pub fn predictions_csv(records: &[StreamRecord]) -> String {
    let mut out = String::from("sample_id,true_class,predicted_class,confidence,entropy,route\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.sample_id,
            r.true_class,
            r.predicted,
            r.confidence,
            r.entropy,
            r.route.map_or("", |x| x.as_str())
        );
    }
    out
}

/// Projected global embeddings with labels, for external visualisation.
pub fn embeddings_csv(
    maps: &[VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
) -> Result<String> {
    let anchors = params.select_anchors(anchors)?;
    let mut out = String::from("sample_id,class_id");
    for k in 0..anchors.dim() {
        let _ = write!(out, ",v{k}");
    }
    out.push('\n');
    for g in maps {
        let v = embed(g, &anchors, params)?;
        let _ = write!(out, "{},{}", g.sample_id, g.class_id);
        for x in v {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts() {
        assert_eq!(top1_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert!((top1_accuracy(&[0, 0, 0], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(top1_accuracy(&[], &[]).is_err());
        assert!(top1_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn harmonic_identities() {
        assert!((harmonic_mean(0.37, 0.37) - 0.37).abs() < 1e-15);
        assert_eq!(harmonic_mean(0.8, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(0.8002, 0.8300) - 0.8149).abs() < 1e-4);
    }

    #[test]
    fn gzsl_components() {
        let split = ClassSplit::new([0, 1], [2]).unwrap();
        let m = gzsl_metrics(&[0, 0, 2, 1], &[0, 1, 2, 2], &split).unwrap();
        assert_eq!(m.seen, Some(0.5));
        assert_eq!(m.unseen, Some(0.5));
        assert_eq!(m.harmonic().unwrap(), 0.5);
        let only_seen = gzsl_metrics(&[0], &[0], &split).unwrap();
        assert_eq!(only_seen.unseen, None);
        assert!(only_seen.harmonic().is_err());
        assert!(matches!(gzsl_metrics(&[0], &[9], &split), Err(Error::UnknownClass(9))));
    }

    #[test]
    fn confusion_cases() {
        let m = confusion_matrix(&[4, 5, 5], &[4, 5, 5], &[4, 5]).unwrap();
        assert_eq!(m, ndarray::arr2(&[[1, 0], [0, 2]]));
        let m = confusion_matrix(&[5], &[4], &[4, 5]).unwrap();
        assert_eq!(m, ndarray::arr2(&[[0, 1], [0, 0]]));
        assert!(matches!(confusion_matrix(&[7], &[4], &[4, 5]), Err(Error::UnknownClass(7))));
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round4(0.5), 0.5);
        assert_eq!(round4(0.81483), 0.8148);
        assert_eq!(round4(0.99996), 1.0);
    }

    #[test]
    fn deltas_sort_descending() {
        let split = ClassSplit::new([0], [1, 2]).unwrap();
        let before = MetricsReport::compute(&[0, 2, 1], &[0, 1, 2], &[0, 1, 2], &split).unwrap();
        let after = MetricsReport::compute(&[0, 1, 1], &[0, 1, 2], &[0, 1, 2], &split).unwrap();
        let d = classwise_delta(&before, &after).unwrap();
        assert_eq!(d, vec![(1, 1.0), (0, 0.0), (2, 0.0)]);
        assert!(classwise_delta(&before, &before).unwrap().iter().all(|&(_, x)| x == 0.0));
    }

    #[test]
    fn report_invariants() {
        let split = ClassSplit::new([0, 1], [2]).unwrap();
        let r = MetricsReport::compute(&[0, 1, 2, 2, 0], &[0, 1, 2, 1, 2], &[0, 1, 2], &split).unwrap();
        let trace: usize = (0..3).map(|i| r.confusion[i][i]).sum();
        assert_eq!(trace as f64 / 5.0, r.top1);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("S").is_some() && json.get("U").is_some() && json.get("H").is_some());
    }
}
