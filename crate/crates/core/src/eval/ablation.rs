use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::{train, AlignmentParams, PartitionMode, TrainConfig};
use crate::error::{Error, Result};
use crate::gate::{calibrate_delta, Calibration, GateConfig};
use crate::refinement::{run_stream, StreamConfig, StreamProtocol, TtaMode};
use crate::rng::fnv1a;
use crate::tensor_io::{SampleRole, ValidatedDataset};

use super::{round4, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Unseen test samples, unseen candidates.
    Zsl,
    /// All test samples, all candidates behind the entropy gate.
    Gzsl,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::Zsl, Protocol::Gzsl];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Zsl => "zsl",
            Protocol::Gzsl => "gzsl",
        }
    }

    /// Test-role sample indices evaluated under this protocol, in manifest
    /// order.
    pub fn test_indices(self, dataset: &ValidatedDataset) -> Vec<usize> {
        let split = &dataset.manifest().split;
        dataset
            .indices_with_role(SampleRole::Test)
            .into_iter()
            .filter(|&i| self == Protocol::Gzsl || split.is_unseen(dataset.samples()[i].class_id))
            .collect()
    }
}

/// Threshold for a generalized run: the configured one, or calibrated on the
/// validation-role samples. The calibration table is returned when one was
/// computed.
pub fn resolve_delta(
    dataset: &ValidatedDataset,
    params: &AlignmentParams,
    gate: &GateConfig,
) -> Result<(f64, Option<Calibration>)> {
    if let Some(delta) = gate.delta {
        return Ok((delta, None));
    }
    let val = dataset.indices_with_role(SampleRole::Val);
    if val.is_empty() {
        return Err(Error::Config(
            "generalized evaluation needs a fixed delta or validation samples to calibrate it".into(),
        ));
    }
    let maps = dataset.feature_maps(&val)?;
    let anchors = dataset.anchor_set()?;
    let calibration = calibrate_delta(&maps, &anchors, params, &dataset.manifest().split, gate)?;
    Ok((calibration.delta, Some(calibration)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub stream: StreamConfig,
    pub gate: GateConfig,
    pub seed: u64,
    pub partitions: Vec<PartitionMode>,
    pub tta_modes: Vec<TtaMode>,
    pub protocols: Vec<Protocol>,
    /// Record wall-clock time per row (makes output non-reproducible).
    pub timing: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            stream: StreamConfig::default(),
            gate: GateConfig::default(),
            seed: 0,
            partitions: PartitionMode::ALL.to_vec(),
            tta_modes: TtaMode::ALL.to_vec(),
            protocols: Protocol::ALL.to_vec(),
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub config_id: String,
    pub partition: PartitionMode,
    pub tta: TtaMode,
    pub protocol: Protocol,
    pub delta: Option<f64>,
    pub seed: u64,
    pub runtime_ms: Option<u128>,
    pub report: MetricsReport,
}

#[derive(Serialize)]
struct RowIdentity<'a> {
    partition: PartitionMode,
    tta: TtaMode,
    protocol: Protocol,
    delta: Option<f64>,
    seed: u64,
    train: &'a TrainConfig,
    stream: &'a StreamConfig,
}

/// Cross product of partition modes, adaptation modes and protocols. Each
/// partition mode is trained once and shared by its rows.
pub fn run_ablation_suite(dataset: &ValidatedDataset, cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    let split = &dataset.manifest().split;
    let anchors = dataset.anchor_set()?;
    let mut streams = Vec::new();
    for &protocol in &cfg.protocols {
        let idx = protocol.test_indices(dataset);
        if idx.is_empty() {
            return Err(Error::Protocol(format!("no test samples for {}", protocol.as_str())));
        }
        streams.push(dataset.feature_maps(&idx)?);
    }

    let mut rows = Vec::new();
    for &partition in &cfg.partitions {
        let train_cfg = TrainConfig { partition, seed: cfg.seed, ..cfg.train.clone() };
        let trained = train(dataset, &train_cfg)?;
        for (&protocol, stream) in cfg.protocols.iter().zip(&streams) {
            let (stream_protocol, delta) = match protocol {
                Protocol::Zsl => (StreamProtocol::Zsl, None),
                Protocol::Gzsl => {
                    let (delta, _) = resolve_delta(dataset, &trained.params, &cfg.gate)?;
                    (StreamProtocol::Gzsl { delta }, Some(delta))
                }
            };
            for &tta in &cfg.tta_modes {
                let stream_cfg = StreamConfig { tta, seed: cfg.seed, ..cfg.stream.clone() };
                let start = Instant::now();
                let result = run_stream(stream, &anchors, &trained.params, split, stream_protocol, &stream_cfg)?;
                let runtime_ms = cfg.timing.then(|| start.elapsed().as_millis());
                let identity = RowIdentity {
                    partition,
                    tta,
                    protocol,
                    delta,
                    seed: cfg.seed,
                    train: &train_cfg,
                    stream: &stream_cfg,
                };
                let digest = fnv1a(serde_json::to_string(&identity)?.as_bytes());
                rows.push(AblationRow {
                    config_id: format!("{digest:016x}"),
                    partition,
                    tta,
                    protocol,
                    delta,
                    seed: cfg.seed,
                    runtime_ms,
                    report: MetricsReport::from_records(&result.records, split)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let opt = |x: Option<f64>| x.map(|v| format!("{:.4}", round4(v))).unwrap_or_default();
    let mut out = String::from("config_id,partition_mode,tta_mode,protocol,top1,S,U,H,seed,runtime_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4},{},{},{},{},{}",
            r.config_id,
            r.partition.as_str(),
            r.tta.as_str(),
            r.protocol.as_str(),
            round4(r.report.top1),
            opt(r.report.seen_acc),
            opt(r.report.unseen_acc),
            opt(r.report.harmonic),
            r.seed,
            r.runtime_ms.map(|t| t.to_string()).unwrap_or_default()
        );
    }
    out
}
