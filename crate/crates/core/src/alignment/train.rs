use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::anchors::SemanticAnchorSet;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::refinement::predict;
use crate::rng::substream;
use crate::tensor_io::{SampleRole, ValidatedDataset};

use super::fusion::{Fusion, StaticPartition};
use super::loss::{compute_gradients, evaluate_batch};
use super::params::{AlignmentParams, ModelDims, QueryMode};
use super::VisualFeatureMap;

/// Granularity handling of the aligned model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    /// Only the global anchor row (`Gr = 1`).
    Global,
    /// Mean pooling over a fixed joint/segment partition.
    Static,
    /// Attention pooling with every granularity as a query.
    Adaptive,
}

impl PartitionMode {
    pub const ALL: [PartitionMode; 3] = [PartitionMode::Global, PartitionMode::Static, PartitionMode::Adaptive];

    pub fn as_str(self) -> &'static str {
        match self {
            PartitionMode::Global => "global",
            PartitionMode::Static => "static",
            PartitionMode::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of seen-class training samples held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
    pub temperature: f64,
    pub attn_dim: usize,
    pub mlp_hidden: usize,
    pub partition: PartitionMode,
    pub query_mode: QueryMode,
    pub static_partition: StaticPartition,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 300,
            patience: 20,
            validation_fraction: 0.1,
            seed: 0,
            temperature: 0.07,
            attn_dim: 150,
            mlp_hidden: 512,
            partition: PartitionMode::Adaptive,
            query_mode: QueryMode::Shared,
            static_partition: StaticPartition::skeleton25(),
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: AlignmentParams,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
}

/// Trains alignment parameters on the seen-class training samples of
/// `dataset` with Adam and early stopping on held-out seen-class accuracy.
pub fn train(dataset: &ValidatedDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let manifest = dataset.manifest();
    let split = &manifest.split;
    if split.seen.is_empty() {
        return Err(Error::InvalidInput("no seen classes".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate >= 0.0) {
        return Err(Error::Config("batch_size must be positive and learning_rate non-negative".into()));
    }
    let full = dataset.anchor_set()?;
    let (anchors, fusion) = prepare(&full, cfg)?;

    let mut indices: Vec<usize> = dataset
        .indices_with_role(SampleRole::Train)
        .into_iter()
        .filter(|&i| split.is_seen(manifest.sample_records[i].class_id))
        .collect();
    if indices.is_empty() {
        return Err(Error::InvalidInput("dataset has no seen-class training samples".into()));
    }

    let mut rng = substream(cfg.seed, "train");
    indices.shuffle(&mut rng);
    let n_val = holdout_size(indices.len(), cfg.validation_fraction);
    let (val_idx, train_idx) = indices.split_at(n_val);
    let train_maps = dataset.feature_maps(train_idx)?;
    let val_maps = if val_idx.is_empty() { train_maps.clone() } else { dataset.feature_maps(val_idx)? };

    let dims = ModelDims {
        text_dim: anchors.dim(),
        visual_dim: manifest.dims.visual_dim,
        attn_dim: cfg.attn_dim,
        mlp_hidden: cfg.mlp_hidden,
        granularities: anchors.num_granularities(),
    };
    let mut params = AlignmentParams::init(dims, cfg.temperature, fusion, &mut rng)?;
    params.query_mode = cfg.query_mode;
    let sizes: Vec<usize> = params.slots().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(cfg.adam, &sizes);

    let seen: Vec<i64> = split.seen.iter().copied().collect();
    let batch_size = cfg.batch_size.min(train_maps.len());
    let mut order: Vec<usize> = (0..train_maps.len()).collect();

    // Best validation accuracy, ties broken by lower validation loss.
    let val_refs: Vec<&VisualFeatureMap> = val_maps.iter().collect();
    let mut best = ((f64::NEG_INFINITY, f64::NEG_INFINITY), 0usize, params.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&VisualFeatureMap> = chunk.iter().map(|&i| &train_maps[i]).collect();
            let (loss, grads) = compute_gradients(&batch, &anchors, &params, split)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            adam.step(&mut params.slots_mut(), &grads.slots(), cfg.learning_rate);
            loss_sum += loss;
            batches += 1;
        }
        let val_accuracy = accuracy(&val_maps, &anchors, &params, &seen)?;
        let val_loss = evaluate_batch(&val_refs, &anchors, &params, split)?.mean_loss;
        history.push(EpochStats { epoch, train_loss: loss_sum / batches as f64, val_accuracy, val_loss });
        let key = (val_accuracy, -val_loss);
        if key > best.0 {
            best = (key, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let epochs_run = history.len();
    let ((best_val_accuracy, _), best_epoch, params) = best;
    Ok(TrainReport { params, best_val_accuracy: best_val_accuracy.max(0.0), best_epoch, epochs_run, history })
}

/// Anchors and fusion for the configured partition mode.
pub(crate) fn prepare(full: &SemanticAnchorSet, cfg: &TrainConfig) -> Result<(SemanticAnchorSet, Fusion)> {
    Ok(match cfg.partition {
        PartitionMode::Global => (full.global_only(), Fusion::Attention),
        PartitionMode::Adaptive => (full.clone(), Fusion::Attention),
        PartitionMode::Static => {
            let p = cfg.static_partition.clone();
            if p.num_granularities() != full.num_granularities() {
                return Err(Error::Partition(format!(
                    "partition has {} groups but anchors have {} granularities",
                    p.num_granularities(),
                    full.num_granularities()
                )));
            }
            (full.clone(), Fusion::Static(p))
        }
    })
}

fn holdout_size(n: usize, fraction: f64) -> usize {
    if n < 2 || fraction <= 0.0 {
        return 0;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

fn accuracy(
    maps: &[VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    params: &AlignmentParams,
    candidates: &[i64],
) -> Result<f64> {
    let mut correct = 0usize;
    for g in maps {
        if predict(g, anchors, params, candidates)?.label == g.class_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / maps.len() as f64)
}
