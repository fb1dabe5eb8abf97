//! Run configuration file and run-directory manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::PprConfig;
use crate::engine::{EngineConfig, Mode};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::nn::ModelConfig;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Question depth the run trains and evaluates on.
    pub hops: u32,
    /// Expansion iterations; `None` means one per hop.
    #[serde(rename = "T")]
    pub iterations: Option<u32>,
    pub k: usize,
    #[serde(rename = "N_d")]
    pub n_docs: usize,
    #[serde(rename = "N_f")]
    pub n_facts: usize,
    pub epsilon: f64,
    pub mode: Mode,
    pub n: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub seed: u64,
    /// Fraction of KB facts dropped at retrieval time.
    pub dropout: f64,
    pub train: TrainConfig,
    pub ppr: PprConfig,
    /// PPR entity budgets `m` visited by `sweep-recall`.
    pub budgets: Vec<usize>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = EngineConfig::default();
        RunConfig {
            hops: 2,
            iterations: None,
            k: e.k,
            n_docs: e.n_docs,
            n_facts: e.n_facts,
            epsilon: e.epsilon,
            mode: e.mode,
            n: 32,
            layers: 3,
            seed: 0,
            dropout: 0.0,
            train: TrainConfig::default(),
            ppr: PprConfig::default(),
            budgets: vec![5, 10, 20, 50, 100, 200, 500],
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.hops) {
            return Err(Error::Config(format!("hops must be 1, 2 or 3, got {}", self.hops)));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1]", self.dropout)));
        }
        if self.n == 0 || self.layers == 0 {
            return Err(Error::Config("n and L must be positive".into()));
        }
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(Error::Config("budgets must be a non-empty list of positive sizes".into()));
        }
        self.engine().validate()?;
        self.train.validate()?;
        self.ppr.validate()?;
        self.synth.validate()
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            iterations: self.iterations.unwrap_or(self.hops),
            k: self.k,
            n_docs: self.n_docs,
            n_facts: self.n_facts,
            epsilon: self.epsilon,
            mode: self.mode,
        }
    }

    /// Model shape for the given vocabulary sizes (`words` is replaced by
    /// the vocabulary at init time).
    pub fn model(&self, relations: usize, entities: usize) -> ModelConfig {
        ModelConfig {
            hidden: self.n,
            layers: self.layers,
            words: 1,
            relations,
            entities,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(bytes))
    }
}

/// Provenance written next to every command's outputs. Contains no clock
/// or host data so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub crate_version: String,
    pub checkpoint_format: u32,
    pub config: RunConfig,
    /// SHA-256 of each input file, keyed by file name.
    pub inputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            command: command.to_owned(),
            config_sha256: config.hash(),
            seed: config.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_owned(),
            checkpoint_format: crate::nn::CHECKPOINT_VERSION,
            config: config.clone(),
            inputs: Vec::new(),
        }
    }

    /// Records the digest of `path` if it exists.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Ok(());
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.inputs.push((name, hex(&Sha256::digest(bytes))));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_and_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"T": 3, "k": 4, "N_d": 5, "N_f": 7, "mode": "hybrid", "L": 2}"#).unwrap();
        let e = cfg.engine();
        assert_eq!((e.iterations, e.k, e.n_docs, e.n_facts, e.mode), (3, 4, 5, 7, Mode::Hybrid));
        assert_eq!(cfg.layers, 2);
        assert_eq!(cfg.n, 32);
        assert_eq!(RunConfig::default().engine().iterations, 2);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"kk": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cfg = RunConfig { k: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { hops: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..Default::default() };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
