//! Multi-granularity semantic anchors: one unit-norm text embedding per
//! (class, granularity) pair.

use ndarray::{s, Array3, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::tensor_io::{DatasetManifest, Tensor, GLOBAL_LABEL};

pub const PROMPT_PREFIX: &str = "a video of ";

/// Wraps a description in the text-encoder prompt template.
pub fn build_prompt(description: &str) -> Result<String> {
    let trimmed = description.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyDescription);
    }
    Ok(format!("{PROMPT_PREFIX}{trimmed}"))
}

/// `C x Gr x d` tensor of unit-norm anchors. Granularity 0 is always `global`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticAnchorSet {
    values: Array3<f64>,
    class_ids: Vec<i64>,
    granularity_labels: Vec<String>,
}

impl SemanticAnchorSet {
    /// L2-normalizes every `d`-vector of `raw`.
    pub fn new(raw: Array3<f64>, class_ids: Vec<i64>, granularity_labels: Vec<String>) -> Result<Self> {
        let (c, gr, _) = raw.dim();
        if class_ids.len() != c || granularity_labels.len() != gr {
            return Err(Error::DimensionMismatch(format!(
                "anchor tensor {:?} vs {} classes and {} granularities",
                raw.shape(),
                class_ids.len(),
                granularity_labels.len()
            )));
        }
        if granularity_labels.first().map(String::as_str) != Some(GLOBAL_LABEL) {
            return Err(Error::GranularityCount("first granularity must be \"global\"".into()));
        }
        let mut values = raw;
        for ci in 0..c {
            for gi in 0..gr {
                let mut row = values.slice_mut(s![ci, gi, ..]);
                let norm = row.dot(&row).sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::ZeroNorm {
                        class_id: class_ids[ci],
                        granularity: granularity_labels[gi].clone(),
                    });
                }
                row /= norm;
            }
        }
        Ok(Self { values, class_ids, granularity_labels })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn granularity_labels(&self) -> &[String] {
        &self.granularity_labels
    }

    pub fn num_classes(&self) -> usize {
        self.values.dim().0
    }

    pub fn num_granularities(&self) -> usize {
        self.values.dim().1
    }

    pub fn dim(&self) -> usize {
        self.values.dim().2
    }

    pub fn class_index(&self, class_id: i64) -> Result<usize> {
        self.class_ids.iter().position(|&c| c == class_id).ok_or(Error::UnknownClass(class_id))
    }

    pub fn granularity_index(&self, label: &str) -> Result<usize> {
        self.granularity_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownGranularity(label.to_string()))
    }

    /// The `C x d` slice for one granularity.
    pub fn granularity_view(&self, label: &str) -> Result<ArrayView2<'_, f64>> {
        let gi = self.granularity_index(label)?;
        Ok(self.values.index_axis(Axis(1), gi))
    }

    /// The `Gr x d` anchors of one class.
    pub fn class_view(&self, class_index: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), class_index)
    }

    pub fn row(&self, class_index: usize, granularity: usize) -> ArrayView1<'_, f64> {
        self.values.slice(s![class_index, granularity, ..])
    }

    /// Keeps only the global granularity (`Gr = 1`).
    pub fn global_only(&self) -> Self {
        Self {
            values: self.values.slice(s![.., 0..1, ..]).to_owned(),
            class_ids: self.class_ids.clone(),
            granularity_labels: vec![GLOBAL_LABEL.to_string()],
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_array(&self.values)
    }
}

/// Normalizes the raw `C x Gr x d` embedding tensor and attaches manifest
/// class order and granularity labels.
pub fn assemble_anchor_set(raw: &Tensor, manifest: &DatasetManifest) -> Result<SemanticAnchorSet> {
    let d = manifest.dims;
    let expected = [d.classes, d.granularities, d.text_dim];
    if raw.shape() != expected {
        return Err(Error::ShapeMismatch {
            file: manifest.anchor_path(),
            expected: expected.to_vec(),
            actual: raw.shape().to_vec(),
        });
    }
    SemanticAnchorSet::new(raw.to_array3()?, manifest.class_ids(), manifest.granularity_labels.clone())
}

/// Returns the `C x d` slice for `label`.
pub fn granularity_view<'a>(anchors: &'a SemanticAnchorSet, label: &str) -> Result<ArrayView2<'a, f64>> {
    anchors.granularity_view(label)
}
