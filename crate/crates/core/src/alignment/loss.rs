//! Symmetric InfoNCE alignment objective and its exact gradients.

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};

use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};
use crate::tensor_io::ClassSplit;

use super::fusion::Trace;
use super::params::{sigmoid, softplus, AlignmentParams, ParamGrads, QueryMode};
use super::{shared_queries, VisualFeatureMap};

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let denom = (a.dot(&a) * b.dot(&b)).sqrt();
    if denom > 0.0 {
        a.dot(&b) / denom
    } else {
        0.0
    }
}

pub(crate) fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE loss of one projected row against its class anchor at
/// `granularity`.
///
/// The first half contrasts the anchor with every seen-class anchor, the
/// second half contrasts the projected row with every batch row (which must
/// include the sample itself) against the same anchor. Both denominators
/// include the positive pair.
pub fn contrastive_loss(
    projected: ArrayView1<'_, f64>,
    class_id: i64,
    granularity: usize,
    anchors: &SemanticAnchorSet,
    batch: &[(ArrayView1<'_, f64>, i64)],
    split: &ClassSplit,
    temperature: f64,
) -> Result<f64> {
    if !split.is_seen(class_id) {
        return Err(Error::ClassNotSeen(class_id));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if granularity >= anchors.num_granularities() {
        return Err(Error::DimensionMismatch(format!("granularity {granularity} out of range")));
    }
    let own = anchors.row(anchors.class_index(class_id)?, granularity);
    let positive = cosine(projected, own) / temperature;

    let negatives = split
        .seen
        .iter()
        .map(|&c| Ok(cosine(projected, anchors.row(anchors.class_index(c)?, granularity)) / temperature))
        .collect::<Result<Vec<_>>>()?;
    let in_batch: Vec<f64> = batch.iter().map(|(v, _)| cosine(*v, own) / temperature).collect();

    let text_side = logsumexp(negatives.iter().copied()) - positive;
    let visual_side = logsumexp(in_batch.iter().copied()) - positive;
    Ok(0.5 * (text_side + visual_side))
}

/// Per-sample losses of one batch.
#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    /// Mean over the batch of the granularity-weighted loss.
    pub mean_loss: f64,
    /// Weighted loss of each sample.
    pub per_sample: Array1<f64>,
    /// `B x Gr` unweighted contrastive losses.
    pub per_granularity: Array2<f64>,
}

/// Evaluates the training loss of every sample in `batch`.
pub fn evaluate_batch(
    batch: &[&VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
    split: &ClassSplit,
) -> Result<BatchEvaluation> {
    Ok(run(batch, anchors, params, split, false)?.0)
}

/// Granularity-weighted training loss of `batch[sample]`.
pub fn total_loss(
    sample: usize,
    batch: &[&VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
    split: &ClassSplit,
) -> Result<f64> {
    if sample >= batch.len() {
        return Err(Error::InvalidInput(format!("sample {sample} not in batch of {}", batch.len())));
    }
    Ok(evaluate_batch(batch, anchors, params, split)?.per_sample[sample])
}

/// Mean batch loss and its exact gradient with respect to every trainable
/// alignment parameter.
pub fn compute_gradients(
    batch: &[&VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
    split: &ClassSplit,
) -> Result<(f64, ParamGrads)> {
    let (eval, grads) = run(batch, anchors, params, split, true)?;
    Ok((eval.mean_loss, grads.expect("gradients requested")))
}

fn run(
    batch: &[&VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
    split: &ClassSplit,
    want_grads: bool,
) -> Result<(BatchEvaluation, Option<ParamGrads>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let gr = anchors.num_granularities();
    if gr != params.alpha_raw.len() {
        return Err(Error::DimensionMismatch(format!(
            "anchors have {gr} granularities, parameters expect {}",
            params.alpha_raw.len()
        )));
    }
    let tau = params.temperature;
    let b = batch.len();
    let d = anchors.dim();

    let own_class = batch
        .iter()
        .map(|g| {
            if !split.is_seen(g.class_id) {
                return Err(Error::ClassNotSeen(g.class_id));
            }
            anchors.class_index(g.class_id)
        })
        .collect::<Result<Vec<_>>>()?;
    let seen = split.seen.iter().map(|&c| anchors.class_index(c)).collect::<Result<Vec<_>>>()?;

    let shared = match params.query_mode {
        QueryMode::Shared => Some(shared_queries(anchors)?),
        QueryMode::ClassAnchors => None,
    };
    let traces = batch
        .iter()
        .zip(&own_class)
        .map(|(g, &ci)| {
            let queries = match &shared {
                Some(q) => q.view(),
                None => anchors.class_view(ci),
            };
            Trace::forward_params(queries, g.values.view(), params)
        })
        .collect::<Result<Vec<_>>>()?;

    let alpha = params.alpha();
    let mut per_granularity = Array2::zeros((b, gr));
    let mut d_projected = Array3::<f64>::zeros((b, gr, d));

    for i in 0..gr {
        let v = Array2::from_shape_fn((b, d), |(x, k)| traces[x].projected()[[i, k]]);
        let own = Array2::from_shape_fn((b, d), |(x, k)| anchors.row(own_class[x], i)[k]);
        let seen_rows = Array2::from_shape_fn((seen.len(), d), |(o, k)| anchors.row(seen[o], i)[k]);

        // text side: one row per sample over seen classes
        let text_logits = v.dot(&seen_rows.t()) / tau;
        // visual side: row x' holds f^{y_x'} against every batch row
        let visual_logits = own.dot(&v.t()) / tau;
        let positive = (&v * &own).sum_axis(Axis(1)) / tau;

        for x in 0..b {
            let text_side = logsumexp(text_logits.row(x).iter().copied()) - positive[x];
            let visual_side = logsumexp(visual_logits.row(x).iter().copied()) - positive[x];
            per_granularity[[x, i]] = 0.5 * (text_side + visual_side);
        }

        if want_grads {
            let coef = alpha[i] / (2.0 * tau * b as f64);
            let mut p_text = text_logits;
            super::fusion::softmax_rows(&mut p_text);
            let mut p_visual = visual_logits;
            super::fusion::softmax_rows(&mut p_visual);
            for x in 0..b {
                p_visual[[x, x]] -= 1.0;
            }
            let d_v = (p_text.dot(&seen_rows) - &own + p_visual.t().dot(&own)) * coef;
            d_projected.index_axis_mut(Axis(1), i).assign(&d_v);
        }
    }

    let per_sample = per_granularity.dot(&alpha);
    let mean_loss = per_sample.mean().unwrap();
    let eval = BatchEvaluation { mean_loss, per_sample, per_granularity };
    if !want_grads {
        return Ok((eval, None));
    }

    let mut grads = ParamGrads::zeros_like(params);
    for (x, (trace, g)) in traces.iter().zip(batch).enumerate() {
        trace.backward(g.values.view(), params, d_projected.index_axis(Axis(0), x), Some(&mut grads));
    }

    // d alpha_i / d raw_j = sigmoid(raw_j) (delta_ij - alpha_i) / sum(softplus)
    let mean_gran = eval.per_granularity.mean_axis(Axis(0)).unwrap();
    let weighted = alpha.dot(&mean_gran);
    let sp_total: f64 = params.alpha_raw.iter().map(|&a| softplus(a)).sum();
    for j in 0..gr {
        grads.alpha_raw[j] = sigmoid(params.alpha_raw[j]) / sp_total * (mean_gran[j] - weighted);
    }
    Ok((eval, Some(grads)))
}
