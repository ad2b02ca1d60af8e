//! Visual-semantic alignment: attention pooling of node features with text
//! anchors as queries, projection into the text space, and the
//! granularity-weighted contrastive training objective.

mod fusion;
mod loss;
mod params;
mod train;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};

pub(crate) use fusion::Trace;
pub use fusion::{attention_fuse, fuse, static_fuse, Fusion, FusionOutput, StaticPartition};
pub(crate) use loss::logsumexp;
pub use loss::{compute_gradients, contrastive_loss, cosine, evaluate_batch, total_loss, BatchEvaluation};
pub use params::{AlignmentParams, Mlp, ModelDims, ParamGrads, QueryMode};
pub use train::{train, EpochStats, PartitionMode, TrainConfig, TrainReport};

/// Spatio-temporal node features of one sample (`S x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureMap {
    pub values: Array2<f64>,
    pub sample_id: String,
    pub class_id: i64,
}

impl VisualFeatureMap {
    pub fn new(values: Array2<f64>, sample_id: impl Into<String>, class_id: i64) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput("feature map must be non-empty".into()));
        }
        if let Some(idx) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { values, sample_id: sample_id.into(), class_id })
    }

    pub fn nodes(&self) -> usize {
        self.values.nrows()
    }
}

/// Class-agnostic attention queries: for each granularity, the normalized
/// sum of all class anchors.
pub fn shared_queries(anchors: &SemanticAnchorSet) -> Result<Array2<f64>> {
    let mut q = anchors.values().sum_axis(Axis(0));
    for (gi, mut row) in q.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 1e-12) {
            return Err(Error::InvalidInput(format!(
                "class anchors cancel out at granularity \"{}\"",
                anchors.granularity_labels()[gi]
            )));
        }
        row /= norm;
    }
    Ok(q)
}

/// Projected global visual embedding of `g`, using the shared global query
/// built from `anchors`.
pub fn embed(g: &VisualFeatureMap, anchors: &SemanticAnchorSet, params: &AlignmentParams) -> Result<Array1<f64>> {
    let queries = shared_queries(anchors)?;
    embed_with_query(g, queries.slice(s![0..1, ..]), params)
}

pub(crate) fn embed_with_query(
    g: &VisualFeatureMap,
    global_query: ArrayView2<'_, f64>,
    params: &AlignmentParams,
) -> Result<Array1<f64>> {
    let trace = Trace::forward_params(global_query, g.values.view(), params)?;
    Ok(trace.projected().row(0).to_owned())
}
