//! Granularity-wise pooling of spatio-temporal node features and projection
//! into the text space.
//!
//! Node `s` of a feature map corresponds to frame `s / J` and joint `s % J`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{AlignmentParams, ParamGrads};
use super::VisualFeatureMap;

/// How node features are pooled into one row per granularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fusion {
    /// Text anchors act as queries over all nodes.
    Attention,
    /// Fixed joint groups and equal temporal segments.
    Static(StaticPartition),
}

/// Fixed body-part grouping of joints plus an equal split of frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticPartition {
    pub joints: usize,
    /// Joint indices of each body part; every joint belongs to exactly one.
    pub parts: Vec<Vec<usize>>,
    /// Number of temporal segments; the last one absorbs the remainder.
    pub segments: usize,
}

impl StaticPartition {
    /// Head, hands, torso and legs of the 25-joint NTU skeleton, three phases.
    pub fn skeleton25() -> Self {
        Self {
            joints: 25,
            parts: vec![
                vec![0, 1, 2, 3],
                (4..=11).chain(21..=24).collect(),
                vec![12, 16, 20],
                vec![13, 14, 15, 17, 18, 19],
            ],
            segments: 3,
        }
    }

    pub fn num_granularities(&self) -> usize {
        1 + self.parts.len() + self.segments
    }

    /// Row-stochastic pooling matrix (`Gr x S`): row 0 averages every node,
    /// then one row per body part, then one per temporal segment.
    pub fn weights(&self, nodes: usize) -> Result<Array2<f64>> {
        let joints = self.joints;
        if joints == 0 || !nodes.is_multiple_of(joints) {
            return Err(Error::Partition(format!("{nodes} nodes are not a multiple of {joints} joints")));
        }
        let frames = nodes / joints;
        let mut owner = vec![None; joints];
        for (p, part) in self.parts.iter().enumerate() {
            if part.is_empty() {
                return Err(Error::Partition(format!("empty group: body part {}", p + 1)));
            }
            for &j in part {
                let slot = owner
                    .get_mut(j)
                    .ok_or_else(|| Error::Partition(format!("joint index {j} out of range (J = {joints})")))?;
                if slot.replace(p).is_some() {
                    return Err(Error::Partition(format!("joint {j} assigned to more than one part")));
                }
            }
        }
        if let Some(j) = owner.iter().position(Option::is_none) {
            return Err(Error::Partition(format!("uncovered joint {j}")));
        }
        if self.segments == 0 || frames < self.segments {
            return Err(Error::Partition(format!(
                "empty group: {frames} frames cannot fill {} temporal segments",
                self.segments
            )));
        }
        let seg_len = frames / self.segments;
        let segment_of = |t: usize| (t / seg_len).min(self.segments - 1);

        let parts = self.parts.len();
        let mut w = Array2::zeros((self.num_granularities(), nodes));
        for s in 0..nodes {
            let (t, j) = (s / joints, s % joints);
            w[[0, s]] = 1.0;
            w[[1 + owner[j].unwrap(), s]] = 1.0;
            w[[1 + parts + segment_of(t), s]] = 1.0;
        }
        for mut row in w.rows_mut() {
            let total = row.sum();
            row /= total;
        }
        Ok(w)
    }
}

/// Result of pooling and projecting one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// `Gr x S`, each row a probability vector over nodes.
    pub attention: Array2<f64>,
    /// `Gr x n`
    pub fused: Array2<f64>,
    /// `Gr x d`, unit rows.
    pub projected: Array2<f64>,
}

/// Scaled dot-product attention with `queries` (`Gr x d`) over the nodes of
/// `g`, followed by the projection head and row normalization.
pub fn attention_fuse(
    queries: ArrayView2<'_, f64>,
    g: &VisualFeatureMap,
    params: &AlignmentParams,
) -> Result<FusionOutput> {
    let trace = Trace::forward(queries, g.values.view(), params, Pooling::Attention)?;
    Ok(trace.into_output())
}

/// Mean-pools `g` over the fixed partition groups (`Gr x n`).
pub fn static_fuse(g: &VisualFeatureMap, partition: &StaticPartition) -> Result<Array2<f64>> {
    Ok(partition.weights(g.values.nrows())?.dot(&g.values))
}

/// Pools and projects with whatever fusion `params` was trained with.
pub fn fuse(queries: ArrayView2<'_, f64>, g: &VisualFeatureMap, params: &AlignmentParams) -> Result<FusionOutput> {
    Ok(Trace::forward_params(queries, g.values.view(), params)?.into_output())
}

pub(crate) fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.sum();
        row /= total;
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Pooling<'a> {
    Attention,
    Static(&'a StaticPartition),
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    queries: Array2<f64>,
    keys: Option<Array2<f64>>,
    attention: Array2<f64>,
    fused: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    norms: Array1<f64>,
    projected: Array2<f64>,
}

impl Trace {
    pub(crate) fn forward_params(
        queries: ArrayView2<'_, f64>,
        g: ArrayView2<'_, f64>,
        params: &AlignmentParams,
    ) -> Result<Self> {
        let pooling = match &params.fusion {
            Fusion::Attention => Pooling::Attention,
            Fusion::Static(p) => Pooling::Static(p),
        };
        Self::forward(queries, g, params, pooling)
    }

    /// `queries` has one row per pooled output row. With static pooling only
    /// the row count matters: the first `rows` partition rows are used, so a
    /// single row selects the global average.
    pub(crate) fn forward(
        queries: ArrayView2<'_, f64>,
        g: ArrayView2<'_, f64>,
        params: &AlignmentParams,
        pooling: Pooling<'_>,
    ) -> Result<Self> {
        let rows = queries.nrows();
        if queries.ncols() != params.w_q.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "queries have d = {}, W_Q expects {}",
                queries.ncols(),
                params.w_q.nrows()
            )));
        }
        if g.ncols() != params.w_k.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "features have n = {}, W_K expects {}",
                g.ncols(),
                params.w_k.nrows()
            )));
        }
        if rows == 0 || g.nrows() == 0 {
            return Err(Error::DimensionMismatch("empty queries or feature map".into()));
        }

        let (keys, attention) = match pooling {
            Pooling::Attention => {
                let q = queries.dot(&params.w_q);
                let k = g.dot(&params.w_k);
                let scale = (params.w_q.ncols() as f64).sqrt().recip();
                let mut logits = q.dot(&k.t()) * scale;
                softmax_rows(&mut logits);
                (Some(k), logits)
            }
            Pooling::Static(partition) => {
                let w = partition.weights(g.nrows())?;
                if rows > w.nrows() {
                    return Err(Error::DimensionMismatch(format!(
                        "{rows} query rows but the static partition has {} groups",
                        w.nrows()
                    )));
                }
                (None, w.slice_move(ndarray::s![..rows, ..]))
            }
        };

        let fused = attention.dot(&g);
        let pre = fused.dot(&params.mlp.w1) + &params.mlp.b1;
        let hidden = pre.mapv(|x| x.max(0.0));
        let raw = hidden.dot(&params.mlp.w2) + &params.mlp.b2;
        let norms = raw.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(f64::MIN_POSITIVE));
        let projected = &raw / &norms.view().insert_axis(Axis(1));

        Ok(Self { queries: queries.to_owned(), keys, attention, fused, pre, hidden, norms, projected })
    }

    pub(crate) fn projected(&self) -> &Array2<f64> {
        &self.projected
    }

    pub(crate) fn into_output(self) -> FusionOutput {
        FusionOutput { attention: self.attention, fused: self.fused, projected: self.projected }
    }

    /// Accumulates parameter gradients into `grads` given `dL/dprojected`
    /// and returns `dL/dqueries`.
    pub(crate) fn backward(
        &self,
        g: ArrayView2<'_, f64>,
        params: &AlignmentParams,
        d_projected: ArrayView2<'_, f64>,
        grads: Option<&mut ParamGrads>,
    ) -> Array2<f64> {
        // Row normalization.
        let radial = (&self.projected * &d_projected).sum_axis(Axis(1));
        let mut d_raw = d_projected.to_owned() - &self.projected * &radial.view().insert_axis(Axis(1));
        d_raw /= &self.norms.view().insert_axis(Axis(1));

        let d_hidden = d_raw.dot(&params.mlp.w2.t());
        let mut d_pre = d_hidden;
        Zip::from(&mut d_pre).and(&self.pre).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let d_fused = d_pre.dot(&params.mlp.w1.t());

        let mut d_queries = Array2::zeros(self.queries.raw_dim());
        let mut attn_grads = None;
        if let Some(keys) = &self.keys {
            let d_attn = d_fused.dot(&g.t());
            let inner = (&self.attention * &d_attn).sum_axis(Axis(1));
            let d_logits = &self.attention * (d_attn - &inner.view().insert_axis(Axis(1)));
            let scale = (params.w_q.ncols() as f64).sqrt().recip();
            let d_q = d_logits.dot(keys) * scale;
            let q = self.queries.dot(&params.w_q);
            let d_k = d_logits.t().dot(&q) * scale;
            d_queries = d_q.dot(&params.w_q.t());
            attn_grads = Some((self.queries.t().dot(&d_q), g.t().dot(&d_k)));
        }

        if let Some(grads) = grads {
            grads.w2 += &self.hidden.t().dot(&d_raw);
            grads.b2 += &d_raw.sum_axis(Axis(0));
            grads.w1 += &self.fused.t().dot(&d_pre);
            grads.b1 += &d_pre.sum_axis(Axis(0));
            if let Some((d_wq, d_wk)) = attn_grads {
                grads.w_q += &d_wq;
                grads.w_k += &d_wk;
            }
        }
        d_queries
    }
}
