//! Test-time refinement of the semantic anchors.
//!
//! A per-(class, granularity) affine map `normalize(scale * F + bias)` is
//! adapted online from confident pseudo-labels kept in a class-balanced
//! memory bank, while the alignment parameters stay frozen.

mod adapt;
mod bank;
mod stream;

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use crate::alignment::{embed, AlignmentParams, VisualFeatureMap};
use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};
use crate::gate::entropy_unchecked;
use crate::optim::{Adam, AdamConfig, LrSchedule};

pub use adapt::{adapt_step, adaptation_gradients, adaptation_loss};
pub use bank::{bank_insert, bank_sample_balanced, BankEntry, MemoryBank};
pub use stream::{
    run_stream, InsertPolicy, ScheduleKind, StreamConfig, StreamProtocol, StreamRecord, StreamResult, TtaMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
enum OptimizerState {
    Adam(Adam),
    Sgd,
}

/// Trainable refinement tensors and their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementState {
    /// `C x Gr x d`, initialised to ones.
    pub scale: Array3<f64>,
    /// `C x Gr x d`, initialised to zeros.
    pub bias: Array3<f64>,
    pub base_rate: f64,
    pub schedule: LrSchedule,
    pub step_count: usize,
    optimizer: OptimizerState,
}

impl RefinementState {
    pub fn new(anchors: &SemanticAnchorSet, base_rate: f64, schedule: LrSchedule, optimizer: OptimizerKind) -> Self {
        let shape = anchors.values().raw_dim();
        let size = anchors.values().len();
        Self {
            scale: Array3::ones(shape),
            bias: Array3::zeros(shape),
            base_rate,
            schedule,
            step_count: 0,
            optimizer: match optimizer {
                OptimizerKind::Adam => OptimizerState::Adam(Adam::new(AdamConfig::default(), &[size, size])),
                OptimizerKind::Sgd => OptimizerState::Sgd,
            },
        }
    }

    pub fn current_rate(&self) -> f64 {
        self.schedule.rate(self.base_rate, self.step_count)
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0) && self.bias.iter().all(|&b| b == 0.0)
    }

    pub(crate) fn apply_gradients(&mut self, d_scale: &Array3<f64>, d_bias: &Array3<f64>) {
        let rate = self.current_rate();
        let mut params = [self.scale.as_slice_mut().unwrap(), self.bias.as_slice_mut().unwrap()];
        let grads = [d_scale.as_slice().unwrap(), d_bias.as_slice().unwrap()];
        match &mut self.optimizer {
            OptimizerState::Adam(adam) => adam.step(&mut params, &grads, rate),
            OptimizerState::Sgd => crate::optim::sgd_step(&mut params, &grads, rate),
        }
        self.step_count += 1;
    }
}

/// `normalize(scale * F + bias)` for every (class, granularity) vector.
///
/// The identity state returns `anchors` unchanged, since its rows are already
/// unit-norm.
pub fn refine_anchors(anchors: &SemanticAnchorSet, state: &RefinementState) -> Result<SemanticAnchorSet> {
    if state.scale.dim() != anchors.values().dim() || state.bias.dim() != anchors.values().dim() {
        return Err(Error::DimensionMismatch(format!(
            "refinement state {:?} vs anchors {:?}",
            state.scale.shape(),
            anchors.values().shape()
        )));
    }
    if state.is_identity() {
        return Ok(anchors.clone());
    }
    let raw = &state.scale * anchors.values() + &state.bias;
    SemanticAnchorSet::new(raw, anchors.class_ids().to_vec(), anchors.granularity_labels().to_vec())
}

/// Softmax classification over a candidate class set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Candidate class ids, ascending.
    pub candidates: Vec<i64>,
    pub probs: Array1<f64>,
    pub label: i64,
    pub confidence: f64,
    pub entropy: f64,
}

impl Prediction {
    /// Builds a prediction from logits aligned with ascending `candidates`.
    /// Ties resolve to the lowest class id.
    pub fn from_logits(candidates: Vec<i64>, logits: &Array1<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        debug_assert!(candidates.windows(2).all(|w| w[0] < w[1]));
        let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut probs = logits.mapv(|x| (x - max).exp());
        probs /= probs.sum();
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(Self {
            label: candidates[best],
            confidence: probs[best],
            entropy: entropy_unchecked(probs.view()),
            candidates,
            probs,
        })
    }

    pub fn prob_of(&self, class_id: i64) -> Option<f64> {
        self.candidates.iter().position(|&c| c == class_id).map(|i| self.probs[i])
    }
}

/// Sorted, de-duplicated candidates with their anchor row indices.
pub(crate) fn candidate_indices(anchors: &SemanticAnchorSet, candidates: &[i64]) -> Result<(Vec<i64>, Vec<usize>)> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let idx = ids.iter().map(|&c| anchors.class_index(c)).collect::<Result<Vec<_>>>()?;
    Ok((ids, idx))
}

/// Global similarity logits `cos(v, f'_c) / tau` for the given anchor rows.
pub(crate) fn global_logits(v: &Array1<f64>, anchors: &SemanticAnchorSet, idx: &[usize], tau: f64) -> Array1<f64> {
    idx.iter().map(|&c| v.dot(&anchors.row(c, 0)) / tau).collect()
}

/// Classifies `g` among `candidates` by cosine similarity between its global
/// projected embedding and the (refined) global anchors.
pub fn predict(
    g: &VisualFeatureMap,
    refined: &SemanticAnchorSet,
    params: &AlignmentParams,
    candidates: &[i64],
) -> Result<Prediction> {
    let (ids, idx) = candidate_indices(refined, candidates)?;
    let v = embed(g, refined, params)?;
    Prediction::from_logits(ids, &global_logits(&v, refined, &idx, params.temperature))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, s};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anchors(seed: u64) -> SemanticAnchorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Array3::from_shape_simple_fn((3, 2, 4), || rng.random_range(-1.0..1.0));
        SemanticAnchorSet::new(raw, vec![5, 6, 7], vec!["global".into(), "bp_1".into()]).unwrap()
    }

    #[test]
    fn identity_state_is_identity() {
        let a = anchors(1);
        let st = RefinementState::new(&a, 0.01, LrSchedule::Constant, OptimizerKind::Adam);
        assert_eq!(refine_anchors(&a, &st).unwrap(), a);
    }

    #[test]
    fn constructed_bias_hits_target() {
        let a = anchors(2);
        let mut st = RefinementState::new(&a, 0.01, LrSchedule::Constant, OptimizerKind::Adam);
        st.scale.slice_mut(s![1, 0, ..]).assign(&arr1(&[2.0, 0.5, -1.0, 3.0]));
        let target = arr1(&[1.0, 0.0, 0.0, 0.0]);
        let bias = &target - &(&st.scale.slice(s![1, 0, ..]) * &a.row(1, 0));
        st.bias.slice_mut(s![1, 0, ..]).assign(&bias);
        let r = refine_anchors(&a, &st).unwrap();
        for (x, y) in r.row(1, 0).iter().zip(&target) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_refined_vector_is_reported() {
        let a = anchors(3);
        let mut st = RefinementState::new(&a, 0.01, LrSchedule::Constant, OptimizerKind::Adam);
        st.scale.slice_mut(s![2, 1, ..]).fill(0.0);
        match refine_anchors(&a, &st).unwrap_err() {
            Error::ZeroNorm { class_id, granularity } => {
                assert_eq!(class_id, 7);
                assert_eq!(granularity, "bp_1");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn closed_form_softmax() {
        let p = Prediction::from_logits(vec![0, 1], &arr1(&[1.0, 0.0])).unwrap();
        let e = std::f64::consts::E;
        assert!((p.probs[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p.probs[0] - 0.73106).abs() < 1e-5);
        assert!((p.probs[1] - 0.26894).abs() < 1e-5);
        assert_eq!(p.label, 0);
        assert_eq!(p.confidence, p.probs[0]);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let p = Prediction::from_logits(vec![3, 4, 9], &arr1(&[0.2, 0.2, 0.2])).unwrap();
        assert_eq!(p.label, 3);
        assert!(p.probs.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!((p.entropy - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_candidates() {
        assert!(matches!(Prediction::from_logits(vec![], &arr1(&[])), Err(Error::EmptyCandidates)));
        let a = anchors(4);
        assert!(matches!(candidate_indices(&a, &[]), Err(Error::EmptyCandidates)));
        assert!(matches!(candidate_indices(&a, &[5, 99]), Err(Error::UnknownClass(99))));
    }
}
