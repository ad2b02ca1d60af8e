//! Pseudo-label cross-entropy through refinement, prediction and the frozen
//! alignment network, with exact gradients for the refinement tensors.

use ndarray::{s, Array1, Array2, Array3, Axis};

use crate::alignment::{logsumexp, AlignmentParams, Trace};
use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};

use super::{candidate_indices, refine_anchors, BankEntry, RefinementState};

/// Mean negative log-probability of each entry's pseudo-label, recomputed
/// with the current refinement state. `candidate_sets[entry.domain]` is the
/// class set the entry is scored against.
pub fn adaptation_loss(
    batch: &[&BankEntry],
    anchors: &SemanticAnchorSet,
    state: &RefinementState,
    params: &AlignmentParams,
    candidate_sets: &[Vec<i64>],
) -> Result<f64> {
    Ok(forward_backward(batch, anchors, state, params, candidate_sets, false)?.0)
}

/// Loss and its gradients with respect to `state.scale` and `state.bias`.
pub fn adaptation_gradients(
    batch: &[&BankEntry],
    anchors: &SemanticAnchorSet,
    state: &RefinementState,
    params: &AlignmentParams,
    candidate_sets: &[Vec<i64>],
) -> Result<(f64, Array3<f64>, Array3<f64>)> {
    let (loss, grads) = forward_backward(batch, anchors, state, params, candidate_sets, true)?;
    let (d_scale, d_bias) = grads.unwrap();
    Ok((loss, d_scale, d_bias))
}

/// One optimizer step on the refinement tensors at the scheduled rate.
/// Returns the loss before the update.
pub fn adapt_step(
    batch: &[&BankEntry],
    anchors: &SemanticAnchorSet,
    state: &mut RefinementState,
    params: &AlignmentParams,
    candidate_sets: &[Vec<i64>],
) -> Result<f64> {
    let (loss, d_scale, d_bias) = adaptation_gradients(batch, anchors, state, params, candidate_sets)?;
    if !loss.is_finite() || !d_scale.iter().chain(d_bias.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFiniteAdaptation(state.step_count));
    }
    state.apply_gradients(&d_scale, &d_bias);
    Ok(loss)
}

type Grads = (Array3<f64>, Array3<f64>);

fn forward_backward(
    batch: &[&BankEntry],
    anchors: &SemanticAnchorSet,
    state: &RefinementState,
    params: &AlignmentParams,
    candidate_sets: &[Vec<i64>],
    with_grads: bool,
) -> Result<(f64, Option<Grads>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let refined = refine_anchors(anchors, state)?;
    let tau = params.temperature;
    let sets = candidate_sets.iter().map(|c| candidate_indices(&refined, c)).collect::<Result<Vec<_>>>()?;

    // Shared global query: normalized sum of the refined global anchors.
    let query_sum: Array1<f64> = refined.values().slice(s![.., 0, ..]).sum_axis(Axis(0));
    let q_norm = query_sum.dot(&query_sum).sqrt();
    if !(q_norm > 1e-12) {
        return Err(Error::InvalidInput("refined global anchors cancel out".into()));
    }
    let query = (&query_sum / q_norm).insert_axis(Axis(0));

    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_proto = Array2::<f64>::zeros((refined.num_classes(), refined.dim()));
    let mut d_query = Array1::<f64>::zeros(refined.dim());
    for entry in batch {
        let (ids, idx) = sets
            .get(entry.domain)
            .ok_or_else(|| Error::InvalidInput(format!("entry domain {} has no candidate set", entry.domain)))?;
        let pos = ids
            .iter()
            .position(|&c| c == entry.pseudo_label)
            .ok_or_else(|| Error::InvalidInput(format!("pseudo-label {} is not a candidate", entry.pseudo_label)))?;
        let g = entry.features.values.view();
        let trace = Trace::forward_params(query.view(), g, params)?;
        let v = trace.projected().row(0);
        let logits: Vec<f64> = idx.iter().map(|&c| v.dot(&refined.row(c, 0)) / tau).collect();
        let lse = logsumexp(logits.iter().copied());
        loss += (lse - logits[pos]) / n;
        if !with_grads {
            continue;
        }

        let mut d_v = Array1::<f64>::zeros(v.len());
        for (k, &c) in idx.iter().enumerate() {
            let target = if k == pos { 1.0 } else { 0.0 };
            let d_logit = ((logits[k] - lse).exp() - target) / (n * tau);
            d_v.scaled_add(d_logit, &refined.row(c, 0));
            d_proto.row_mut(c).scaled_add(d_logit, &v);
        }
        let d_q = trace.backward(g, params, d_v.view().insert_axis(Axis(0)), None);
        d_query += &d_q.row(0);
    }
    if !with_grads {
        return Ok((loss, None));
    }

    // Every prototype feeds the query sum.
    let q = query.row(0);
    let d_sum = (&d_query - &(&q * q.dot(&d_query))) / q_norm;
    for mut row in d_proto.rows_mut() {
        row += &d_sum;
    }

    let mut d_scale = Array3::zeros(anchors.values().raw_dim());
    let mut d_bias = Array3::zeros(anchors.values().raw_dim());
    for c in 0..refined.num_classes() {
        let f = anchors.row(c, 0);
        let unit = refined.row(c, 0);
        let raw: Array1<f64> = &state.scale.slice(s![c, 0, ..]) * &f + &state.bias.slice(s![c, 0, ..]);
        let norm = raw.dot(&raw).sqrt();
        let dp = d_proto.row(c);
        let d_raw = (&dp - &(&unit * unit.dot(&dp))) / norm;
        d_scale.slice_mut(s![c, 0, ..]).assign(&(&d_raw * &f));
        d_bias.slice_mut(s![c, 0, ..]).assign(&d_raw);
    }
    Ok((loss, Some((d_scale, d_bias))))
}
