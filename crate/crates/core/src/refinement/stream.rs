use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alignment::{embed, AlignmentParams, VisualFeatureMap};
use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};
use crate::gate::Route;
use crate::optim::LrSchedule;
use crate::rng::substream;
use crate::tensor_io::ClassSplit;

use super::{
    adapt_step, candidate_indices, global_logits, predict, refine_anchors, BankEntry, MemoryBank, OptimizerKind,
    Prediction, RefinementState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TtaMode {
    /// Frozen anchors.
    Off,
    /// Adapt on each confident sample alone.
    Nobank,
    /// Adapt on class-balanced batches from the memory bank.
    Full,
}

impl TtaMode {
    pub const ALL: [TtaMode; 3] = [TtaMode::Off, TtaMode::Nobank, TtaMode::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            TtaMode::Off => "off",
            TtaMode::Nobank => "nobank",
            TtaMode::Full => "full",
        }
    }
}

/// Which confident predictions may drive adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InsertPolicy {
    #[default]
    All,
    /// Only samples predicted as a seen class.
    SeenOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum StreamProtocol {
    /// Unseen classes only.
    Zsl,
    /// All classes, routed by the entropy gate at threshold `delta`.
    Gzsl { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub tta: TtaMode,
    /// Per-class bank capacity `K`.
    pub bank_capacity: usize,
    pub conf_threshold: f64,
    /// Minimum bank size before adapting; `max(|candidates|, 8)` when unset.
    pub min_bank: Option<usize>,
    pub base_rate: f64,
    pub schedule: ScheduleKind,
    /// Cosine horizon in steps; the stream length when unset.
    pub horizon: Option<usize>,
    pub adapt_batch: usize,
    pub steps_per_sample: usize,
    pub insert_policy: InsertPolicy,
    pub optimizer: OptimizerKind,
    /// Gate on refined anchors instead of the frozen ones.
    pub gate_on_refined: bool,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            tta: TtaMode::Full,
            bank_capacity: 16,
            conf_threshold: 0.1,
            min_bank: None,
            base_rate: 0.01,
            schedule: ScheduleKind::Cosine,
            horizon: None,
            adapt_batch: 64,
            steps_per_sample: 1,
            insert_policy: InsertPolicy::All,
            optimizer: OptimizerKind::Adam,
            gate_on_refined: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamRecord {
    pub sample_id: String,
    pub true_class: i64,
    pub predicted: i64,
    pub confidence: f64,
    /// Entropy of the distribution that produced `predicted`.
    pub entropy: f64,
    pub route: Option<Route>,
    /// Full-label-set entropy seen by the gate.
    pub gate_entropy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StreamResult {
    pub records: Vec<StreamRecord>,
    pub state: RefinementState,
    pub bank: MemoryBank,
    pub adapt_steps: usize,
    pub losses: Vec<f64>,
}

impl StreamResult {
    pub fn predictions(&self) -> Vec<i64> {
        self.records.iter().map(|r| r.predicted).collect()
    }

    pub fn labels(&self) -> Vec<i64> {
        self.records.iter().map(|r| r.true_class).collect()
    }

    pub fn bank_sizes(&self) -> BTreeMap<i64, usize> {
        self.bank.class_sizes()
    }
}

/// Processes `stream` one sample at a time: refine, predict, record, then
/// adapt according to `cfg.tta`. Each prediction only depends on updates made
/// for earlier samples.
pub fn run_stream(
    stream: &[VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
    split: &ClassSplit,
    protocol: StreamProtocol,
    cfg: &StreamConfig,
) -> Result<StreamResult> {
    let anchors = params.select_anchors(anchors)?;
    let seen: Vec<i64> = split.seen.iter().copied().collect();
    let unseen: Vec<i64> = split.unseen.iter().copied().collect();
    let candidate_sets = match protocol {
        StreamProtocol::Zsl => {
            if unseen.is_empty() {
                return Err(Error::Protocol("zero-shot evaluation needs unseen classes".into()));
            }
            vec![unseen.clone()]
        }
        StreamProtocol::Gzsl { delta } => {
            if seen.is_empty() || unseen.is_empty() {
                return Err(Error::Protocol("generalized evaluation needs both seen and unseen classes".into()));
            }
            if !(delta >= 0.0) {
                return Err(Error::Config(format!("entropy threshold must be non-negative, got {delta}")));
            }
            vec![seen.clone(), unseen.clone()]
        }
    };
    let all_ids: Vec<i64> = split.all().into_iter().collect();
    let (_, all_idx) = candidate_indices(&anchors, &all_ids)?;
    let n_candidates = candidate_sets.iter().map(Vec::len).sum::<usize>();
    if cfg.bank_capacity == 0 {
        return Err(Error::Config("bank capacity must be positive".into()));
    }

    let schedule = match cfg.schedule {
        ScheduleKind::Constant => LrSchedule::Constant,
        ScheduleKind::Cosine => LrSchedule::Cosine { horizon: cfg.horizon.unwrap_or(stream.len()) },
    };
    let mut state = RefinementState::new(&anchors, cfg.base_rate, schedule, cfg.optimizer);
    let min_bank = cfg.min_bank.unwrap_or(n_candidates.max(8));
    let mut bank = MemoryBank::new(cfg.bank_capacity, cfg.conf_threshold, min_bank);
    let mut rng = substream(cfg.seed, "stream");

    let mut refined = anchors.clone();
    let mut records = Vec::with_capacity(stream.len());
    let mut losses = Vec::new();
    for g in stream {
        let (pred, domain, route, gate_entropy) = match protocol {
            StreamProtocol::Zsl => (predict(g, &refined, params, &unseen)?, 0, None, None),
            StreamProtocol::Gzsl { delta } => {
                let v = embed(g, &refined, params)?;
                let logits = global_logits(&v, &refined, &all_idx, params.temperature);
                let gate_logits = if cfg.gate_on_refined || state.is_identity() {
                    logits.clone()
                } else {
                    let v0 = embed(g, &anchors, params)?;
                    global_logits(&v0, &anchors, &all_idx, params.temperature)
                };
                let h = Prediction::from_logits(all_ids.clone(), &gate_logits)?.entropy;
                let route = Route::from_entropy(h, delta);
                let domain = route as usize;
                let keep: Vec<f64> = all_ids
                    .iter()
                    .zip(&logits)
                    .filter(|(c, _)| candidate_sets[domain].binary_search(c).is_ok())
                    .map(|(_, &l)| l)
                    .collect();
                let pred = Prediction::from_logits(candidate_sets[domain].clone(), &keep.into())?;
                (pred, domain, Some(route), Some(h))
            }
        };
        records.push(StreamRecord {
            sample_id: g.sample_id.clone(),
            true_class: g.class_id,
            predicted: pred.label,
            confidence: pred.confidence,
            entropy: pred.entropy,
            route,
            gate_entropy,
        });

        let eligible = match cfg.insert_policy {
            InsertPolicy::All => true,
            InsertPolicy::SeenOnly => split.is_seen(pred.label),
        };
        let mut updated = false;
        if cfg.tta != TtaMode::Off && eligible && bank.admits(pred.confidence) {
            let features = Arc::new(g.clone());
            match cfg.tta {
                TtaMode::Nobank => {
                    let entry = BankEntry {
                        features,
                        pseudo_label: pred.label,
                        confidence: pred.confidence,
                        insertion_index: 0,
                        domain,
                    };
                    for _ in 0..cfg.steps_per_sample {
                        losses.push(adapt_step(&[&entry], &anchors, &mut state, params, &candidate_sets)?);
                    }
                    updated = true;
                }
                TtaMode::Full => {
                    bank.insert(features, pred.label, pred.confidence, domain);
                }
                TtaMode::Off => unreachable!(),
            }
        }
        if cfg.tta == TtaMode::Full && bank.is_ready() {
            for _ in 0..cfg.steps_per_sample {
                let batch = bank.sample_balanced(cfg.adapt_batch.max(1), &mut rng)?;
                losses.push(adapt_step(&batch, &anchors, &mut state, params, &candidate_sets)?);
            }
            updated = cfg.steps_per_sample > 0;
        }
        if updated {
            refined = refine_anchors(&anchors, &state)?;
        }
    }

    Ok(StreamResult { records, adapt_steps: state.step_count, state, bank, losses })
}
