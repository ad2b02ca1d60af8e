//! Experiment configuration shared by every command-line subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{PartitionMode, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{AblationConfig, Protocol};
use crate::gate::GateConfig;
use crate::refinement::{StreamConfig, TtaMode};
use crate::synth::{benchmark_stream_config, benchmark_train_config, SynthConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset `manifest.json`.
    pub dataset: Option<PathBuf>,
    /// Directory written by `train`.
    pub params: Option<PathBuf>,
}

/// Grid swept by `ablate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub partitions: Vec<PartitionMode>,
    pub tta_modes: Vec<TtaMode>,
    pub protocols: Vec<Protocol>,
    pub timing: bool,
}

impl Default for AblationGrid {
    fn default() -> Self {
        let full = AblationConfig::default();
        Self { partitions: full.partitions, tta_modes: full.tta_modes, protocols: full.protocols, timing: full.timing }
    }
}

/// One JSON document configuring a whole experiment. The top-level `seed`
/// replaces the seeds of the nested sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub protocol: Protocol,
    pub paths: PathsConfig,
    pub train: TrainConfig,
    pub stream: StreamConfig,
    pub gate: GateConfig,
    pub synth: SynthConfig,
    pub ablation: AblationGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: None,
            protocol: Protocol::Zsl,
            paths: PathsConfig::default(),
            train: TrainConfig::default(),
            stream: StreamConfig::default(),
            gate: GateConfig::default(),
            synth: SynthConfig::default(),
            ablation: AblationGrid::default(),
        }
    }
}

impl RunConfig {
    /// Settings sized for the synthetic benchmark.
    pub fn benchmark() -> Self {
        Self { train: benchmark_train_config(), stream: benchmark_stream_config(), ..Self::default() }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.paths.dataset);
        rebase(&mut cfg.paths.params);
        rebase(&mut cfg.output);
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    /// Copies the top-level seed into every section.
    pub fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
        self.stream.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        existing(self.paths.dataset.as_deref(), "paths.dataset (--dataset)")
    }

    pub fn params_path(&self) -> Result<&Path> {
        existing(self.paths.params.as_deref(), "paths.params (--params)")
    }

    pub fn output_path(&self) -> Result<&Path> {
        self.output.as_deref().ok_or_else(|| Error::Config("no output directory: set `output` or pass --out".into()))
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            train: self.train.clone(),
            stream: self.stream.clone(),
            gate: self.gate.clone(),
            seed: self.seed,
            partitions: self.ablation.partitions.clone(),
            tta_modes: self.ablation.tta_modes.clone(),
            protocols: self.ablation.protocols.clone(),
            timing: self.ablation.timing,
        }
    }
}

fn existing<'a>(path: Option<&'a Path>, what: &str) -> Result<&'a Path> {
    let path = path.ok_or_else(|| Error::Config(format!("{what} is required")))?;
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    Ok(path)
}
