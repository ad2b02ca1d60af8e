//! Entropy gating between seen-only and unseen-only classification.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::alignment::{embed, AlignmentParams, VisualFeatureMap};
use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};
use crate::eval::gzsl_metrics;
use crate::refinement::{candidate_indices, global_logits, Prediction};
use crate::tensor_io::ClassSplit;

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(probs: ArrayView1<'_, f64>) -> Result<f64> {
    let total: f64 = probs.sum();
    if probs.is_empty() || probs.iter().any(|&p| !(p >= -1e-12)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("not a probability vector (sum {total})")));
    }
    Ok(entropy_unchecked(probs))
}

pub(crate) fn entropy_unchecked(probs: ArrayView1<'_, f64>) -> f64 {
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Seen = 0,
    Unseen = 1,
}

impl Route {
    /// Confident (low entropy) samples are treated as seen.
    pub fn from_entropy(entropy: f64, delta: f64) -> Self {
        if entropy < delta {
            Route::Seen
        } else {
            Route::Unseen
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Seen => "seen",
            Route::Unseen => "unseen",
        }
    }
}

/// Candidate thresholds for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DeltaGrid {
    /// `count` evenly spaced quantiles from 1% to 99% of the validation
    /// entropies.
    Quantiles {
        count: usize,
    },
    Values {
        values: Vec<f64>,
    },
}

impl Default for DeltaGrid {
    fn default() -> Self {
        DeltaGrid::Quantiles { count: 33 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Fixed threshold; calibrated on validation samples when unset.
    pub delta: Option<f64>,
    pub grid: DeltaGrid,
}

/// Full-label-set logits of one labelled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSample {
    pub logits: Array1<f64>,
    pub label: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub delta: f64,
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub delta: f64,
    pub table: Vec<CalibrationRow>,
}

impl Calibration {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,S,U,H\n");
        for r in &self.table {
            out.push_str(&format!("{},{},{},{}\n", r.delta, r.seen, r.unseen, r.harmonic));
        }
        out
    }
}

/// Gate output: the restricted prediction plus the routing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedPrediction {
    pub prediction: Prediction,
    pub route: Route,
    /// Entropy of the full-label-set distribution.
    pub full_entropy: f64,
}

/// Routes by full-set entropy, then classifies within the routed label set.
/// `ids` are the ascending class ids the logits refer to.
pub fn triage_logits(ids: &[i64], logits: &Array1<f64>, split: &ClassSplit, delta: f64) -> Result<GatedPrediction> {
    if split.seen.is_empty() || split.unseen.is_empty() {
        return Err(Error::Protocol("gating needs both seen and unseen classes".into()));
    }
    let full = Prediction::from_logits(ids.to_vec(), logits)?;
    let route = Route::from_entropy(full.entropy, delta);
    let in_route = |c: i64| match route {
        Route::Seen => split.is_seen(c),
        Route::Unseen => split.is_unseen(c),
    };
    let (keep_ids, keep_logits): (Vec<i64>, Vec<f64>) =
        ids.iter().zip(logits).filter(|(&c, _)| in_route(c)).map(|(&c, &l)| (c, l)).unzip();
    Ok(GatedPrediction {
        prediction: Prediction::from_logits(keep_ids, &keep_logits.into())?,
        route,
        full_entropy: full.entropy,
    })
}

fn full_logits(
    g: &VisualFeatureMap,
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
    split: &ClassSplit,
) -> Result<(Vec<i64>, Array1<f64>)> {
    let all: Vec<i64> = split.all().into_iter().collect();
    let (ids, idx) = candidate_indices(anchors, &all)?;
    let v = embed(g, anchors, params)?;
    Ok((ids, global_logits(&v, anchors, &idx, params.temperature)))
}

/// Two-stage classification of one sample with anchors `refined`.
pub fn triage_and_classify(
    g: &VisualFeatureMap,
    refined: &SemanticAnchorSet,
    params: &AlignmentParams,
    split: &ClassSplit,
    delta: f64,
) -> Result<GatedPrediction> {
    let (ids, logits) = full_logits(g, refined, params, split)?;
    triage_logits(&ids, &logits, split, delta)
}

/// Chooses the threshold maximizing the harmonic mean on a labelled
/// validation set that contains both seen and unseen classes.
pub fn calibrate_delta(
    validation: &[VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
    split: &ClassSplit,
    cfg: &GateConfig,
) -> Result<Calibration> {
    let anchors = params.select_anchors(anchors)?;
    let mut ids = Vec::new();
    let mut samples = Vec::with_capacity(validation.len());
    for g in validation {
        let (i, logits) = full_logits(g, &anchors, params, split)?;
        ids = i;
        samples.push(GateSample { logits, label: g.class_id });
    }
    calibrate_samples(&ids, &samples, split, &cfg.grid)
}

/// Calibration over precomputed logits. Ties in the harmonic mean go to the
/// smallest threshold.
pub fn calibrate_samples(
    ids: &[i64],
    samples: &[GateSample],
    split: &ClassSplit,
    grid: &DeltaGrid,
) -> Result<Calibration> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty calibration set".into()));
    }
    let has_seen = samples.iter().any(|s| split.is_seen(s.label));
    let has_unseen = samples.iter().any(|s| split.is_unseen(s.label));
    if !(has_seen && has_unseen) {
        return Err(Error::InvalidInput("calibration set must contain both seen and unseen samples".into()));
    }
    let full: Vec<Prediction> =
        samples.iter().map(|s| Prediction::from_logits(ids.to_vec(), &s.logits)).collect::<Result<_>>()?;
    let entropies: Vec<f64> = full.iter().map(|p| p.entropy).collect();
    let mut candidates = delta_candidates(&entropies, grid)?;
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let labels: Vec<i64> = samples.iter().map(|s| s.label).collect();
    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    for &delta in &candidates {
        let preds = samples
            .iter()
            .map(|s| Ok(triage_logits(ids, &s.logits, split, delta)?.prediction.label))
            .collect::<Result<Vec<_>>>()?;
        let m = gzsl_metrics(&preds, &labels, split)?;
        let harmonic = m.harmonic()?;
        table.push(CalibrationRow { delta, seen: m.seen.unwrap_or(0.0), unseen: m.unseen.unwrap_or(0.0), harmonic });
        if best.is_none_or(|(_, h)| harmonic > h) {
            best = Some((delta, harmonic));
        }
    }
    Ok(Calibration { delta: best.unwrap().0, table })
}

fn delta_candidates(entropies: &[f64], grid: &DeltaGrid) -> Result<Vec<f64>> {
    match grid {
        DeltaGrid::Values { values } => {
            if values.is_empty() || values.iter().any(|&d| !(d >= 0.0)) {
                return Err(Error::Config("delta grid must be non-empty and non-negative".into()));
            }
            Ok(values.clone())
        }
        DeltaGrid::Quantiles { count } => {
            if *count == 0 {
                return Err(Error::Config("quantile count must be positive".into()));
            }
            let mut sorted = entropies.to_vec();
            sorted.sort_by(f64::total_cmp);
            let q = |p: f64| {
                let pos = p * (sorted.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
            };
            Ok((0..*count)
                .map(|k| {
                    let p = if *count == 1 { 0.5 } else { 0.01 + 0.98 * k as f64 / (*count - 1) as f64 };
                    q(p)
                })
                .collect())
        }
    }
}
