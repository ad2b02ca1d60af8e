use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};
use crate::tensor_io::{load_tensor, save_tensor, Tensor};

use super::fusion::{Fusion, StaticPartition};

/// Which query rows the attention uses while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Per granularity, the normalized sum of every class's anchor. This is
    /// also what inference uses, where the label is unknown.
    #[default]
    Shared,
    /// The `Gr` anchor rows of the sample's ground-truth class.
    ClassAnchors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub text_dim: usize,
    pub visual_dim: usize,
    pub attn_dim: usize,
    pub mlp_hidden: usize,
    pub granularities: usize,
}

/// Two-layer projection head `n -> hidden -> d` with ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Trainable alignment parameters plus the fixed architecture choices they
/// were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentParams {
    /// `d x h`
    pub w_q: Array2<f64>,
    /// `n x h`
    pub w_k: Array2<f64>,
    pub mlp: Mlp,
    /// Unconstrained granularity weights; see [`AlignmentParams::alpha`].
    pub alpha_raw: Array1<f64>,
    pub temperature: f64,
    pub fusion: Fusion,
    pub query_mode: QueryMode,
}

/// Gradients with the same shapes as the trainable fields of
/// [`AlignmentParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub alpha_raw: Array1<f64>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

impl AlignmentParams {
    /// Gaussian init scaled by `1/sqrt(fan_in)`, zero biases, uniform alpha.
    pub fn init(dims: ModelDims, temperature: f64, fusion: Fusion, rng: &mut impl Rng) -> Result<Self> {
        let ModelDims { text_dim, visual_dim, attn_dim, mlp_hidden, granularities } = dims;
        if [text_dim, visual_dim, attn_dim, mlp_hidden, granularities].contains(&0) {
            return Err(Error::InvalidInput(format!("model dims must be positive: {dims:?}")));
        }
        let params = Self {
            w_q: gaussian(text_dim, attn_dim, (text_dim as f64).recip().sqrt(), rng),
            w_k: gaussian(visual_dim, attn_dim, (visual_dim as f64).recip().sqrt(), rng),
            mlp: Mlp {
                w1: gaussian(visual_dim, mlp_hidden, (2.0 / visual_dim as f64).sqrt(), rng),
                b1: Array1::zeros(mlp_hidden),
                w2: gaussian(mlp_hidden, text_dim, (mlp_hidden as f64).recip().sqrt(), rng),
                b2: Array1::zeros(text_dim),
            },
            alpha_raw: Array1::zeros(granularities),
            temperature,
            fusion,
            query_mode: QueryMode::default(),
        };
        params.check()?;
        Ok(params)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            text_dim: self.w_q.nrows(),
            visual_dim: self.w_k.nrows(),
            attn_dim: self.w_q.ncols(),
            mlp_hidden: self.mlp.w1.ncols(),
            granularities: self.alpha_raw.len(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dims();
        let ok = self.w_k.ncols() == d.attn_dim
            && self.mlp.w1.nrows() == d.visual_dim
            && self.mlp.b1.len() == d.mlp_hidden
            && self.mlp.w2.dim() == (d.mlp_hidden, d.text_dim)
            && self.mlp.b2.len() == d.text_dim
            && d.granularities > 0;
        if !ok {
            return Err(Error::DimensionMismatch(format!("inconsistent parameter shapes {d:?}")));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {}", self.temperature)));
        }
        if let Fusion::Static(p) = &self.fusion {
            if p.num_granularities() != d.granularities {
                return Err(Error::DimensionMismatch(format!(
                    "static partition yields {} granularities, parameters have {}",
                    p.num_granularities(),
                    d.granularities
                )));
            }
        }
        Ok(())
    }

    /// Effective granularity weights: normalized softplus of `alpha_raw`.
    /// Strictly positive and summing to one.
    pub fn alpha(&self) -> Array1<f64> {
        let sp = self.alpha_raw.mapv(softplus);
        let total = sp.sum();
        sp / total
    }

    /// Matches a full anchor set to this model's granularity count (global-only
    /// models keep granularity 0).
    pub fn select_anchors(&self, anchors: &SemanticAnchorSet) -> Result<SemanticAnchorSet> {
        let gr = self.alpha_raw.len();
        if anchors.dim() != self.w_q.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "anchors have d = {}, W_Q expects {}",
                anchors.dim(),
                self.w_q.nrows()
            )));
        }
        if anchors.num_granularities() == gr {
            Ok(anchors.clone())
        } else if gr == 1 {
            Ok(anchors.global_only())
        } else {
            Err(Error::DimensionMismatch(format!(
                "anchors have {} granularities, parameters expect {gr}",
                anchors.num_granularities()
            )))
        }
    }

    pub(crate) fn slots(&self) -> [&[f64]; 7] {
        [
            self.w_q.as_slice().unwrap(),
            self.w_k.as_slice().unwrap(),
            self.mlp.w1.as_slice().unwrap(),
            self.mlp.b1.as_slice().unwrap(),
            self.mlp.w2.as_slice().unwrap(),
            self.mlp.b2.as_slice().unwrap(),
            self.alpha_raw.as_slice().unwrap(),
        ]
    }

    /// Flat mutable views in the fixed order `W_Q, W_K, W1, b1, W2, b2, alpha_raw`.
    pub fn slots_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.w_q.as_slice_mut().unwrap(),
            self.w_k.as_slice_mut().unwrap(),
            self.mlp.w1.as_slice_mut().unwrap(),
            self.mlp.b1.as_slice_mut().unwrap(),
            self.mlp.w2.as_slice_mut().unwrap(),
            self.mlp.b2.as_slice_mut().unwrap(),
            self.alpha_raw.as_slice_mut().unwrap(),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.slots().iter().map(|s| s.len()).sum()
    }

    /// Writes one `DPT1` file per tensor plus `params.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, tensor) in self.named_tensors()? {
            save_tensor(&tensor, dir.join(format!("{name}.dpt")))?;
        }
        let meta = ParamsMeta {
            temperature: self.temperature,
            fusion: self.fusion.clone(),
            query_mode: self.query_mode,
            dims: self.dims(),
        };
        let path = dir.join("params.json");
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("params.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ParamsMeta = serde_json::from_str(&text)?;
        let load2 = |name: &str| load_tensor(dir.join(format!("{name}.dpt")))?.to_array2();
        let load1 = |name: &str| load_tensor(dir.join(format!("{name}.dpt")))?.to_array1();
        let params = Self {
            w_q: load2("w_q")?,
            w_k: load2("w_k")?,
            mlp: Mlp { w1: load2("mlp_w1")?, b1: load1("mlp_b1")?, w2: load2("mlp_w2")?, b2: load1("mlp_b2")? },
            alpha_raw: load1("alpha_raw")?,
            temperature: meta.temperature,
            fusion: meta.fusion,
            query_mode: meta.query_mode,
        };
        params.check()?;
        if params.dims() != meta.dims {
            return Err(Error::DimensionMismatch(format!(
                "params.json declares {:?}, tensors have {:?}",
                meta.dims,
                params.dims()
            )));
        }
        Ok(params)
    }

    fn named_tensors(&self) -> Result<Vec<(&'static str, Tensor)>> {
        Ok(vec![
            ("w_q", Tensor::from_array(&self.w_q)?),
            ("w_k", Tensor::from_array(&self.w_k)?),
            ("mlp_w1", Tensor::from_array(&self.mlp.w1)?),
            ("mlp_b1", Tensor::from_array(&self.mlp.b1)?),
            ("mlp_w2", Tensor::from_array(&self.mlp.w2)?),
            ("mlp_b2", Tensor::from_array(&self.mlp.b2)?),
            ("alpha_raw", Tensor::from_array(&self.alpha_raw)?),
        ])
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsMeta {
    temperature: f64,
    fusion: Fusion,
    query_mode: QueryMode,
    dims: ModelDims,
}

impl ParamGrads {
    pub fn zeros_like(p: &AlignmentParams) -> Self {
        Self {
            w_q: Array2::zeros(p.w_q.raw_dim()),
            w_k: Array2::zeros(p.w_k.raw_dim()),
            w1: Array2::zeros(p.mlp.w1.raw_dim()),
            b1: Array1::zeros(p.mlp.b1.raw_dim()),
            w2: Array2::zeros(p.mlp.w2.raw_dim()),
            b2: Array1::zeros(p.mlp.b2.raw_dim()),
            alpha_raw: Array1::zeros(p.alpha_raw.raw_dim()),
        }
    }

    /// Flat views in the same order as [`AlignmentParams::slots_mut`].
    pub fn slots(&self) -> [&[f64]; 7] {
        [
            self.w_q.as_slice().unwrap(),
            self.w_k.as_slice().unwrap(),
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.alpha_raw.as_slice().unwrap(),
        ]
    }

    pub fn scale(&mut self, k: f64) {
        self.w_q *= k;
        self.w_k *= k;
        self.w1 *= k;
        self.b1 *= k;
        self.w2 *= k;
        self.b2 *= k;
        self.alpha_raw *= k;
    }

    pub fn is_finite(&self) -> bool {
        self.slots().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

impl Fusion {
    pub fn default_static() -> Self {
        Fusion::Static(StaticPartition::skeleton25())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims { text_dim: 6, visual_dim: 5, attn_dim: 4, mlp_hidden: 7, granularities: 3 }
    }

    #[test]
    fn alpha_is_a_positive_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = AlignmentParams::init(dims(), 0.07, Fusion::Attention, &mut rng).unwrap();
        let a = p.alpha();
        assert!(a.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        p.alpha_raw = ndarray::arr1(&[-700.0, 0.0, 900.0]);
        let a = p.alpha();
        assert!(a.iter().all(|&x| x > 0.0));
        assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
    }

    #[test]
    fn save_load_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AlignmentParams::init(dims(), 0.07, Fusion::Attention, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        assert_eq!(AlignmentParams::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn rejects_bad_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(AlignmentParams::init(dims(), 0.0, Fusion::Attention, &mut rng).is_err());
    }
}
