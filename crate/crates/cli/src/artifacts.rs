use std::collections::BTreeMap;
use std::path::Path;

use kmat_core::trainer::TrainOutcome;
use kmat_core::{ClassEmbeddings, FrozenEncoder, PromptBank, PromptConfig, TrainConfig};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Trained prompt parameters plus everything needed to rebuild the frozen encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDump {
    pub seed: u64,
    pub tau: f64,
    pub embed_dim: usize,
    pub encoder_seed: u64,
    pub prompt: PromptConfig,
    /// One row per storage slot.
    pub context_tokens: Vec<Vec<f64>>,
    pub class_tokens: Vec<Vec<f64>>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(path: &Path, what: &str, rows: &[Vec<f64>]) -> CliResult<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(CliError::data(path, format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat)
        .map_err(|e| CliError::data(path, format!("{what}: {e}")))
}

impl ParamsDump {
    pub fn from_outcome(seed: u64, tau: f64, outcome: &TrainOutcome) -> Self {
        Self {
            seed,
            tau,
            embed_dim: outcome.encoder.embed_dim(),
            encoder_seed: outcome.encoder.seed(),
            prompt: outcome.bank.config().clone(),
            context_tokens: rows(outcome.bank.context_tokens()),
            class_tokens: rows(outcome.bank.class_tokens()),
        }
    }

    /// `path` is only used in error messages.
    pub fn restore(&self, path: &Path) -> CliResult<(PromptBank, FrozenEncoder)> {
        let context = matrix(path, "context_tokens", &self.context_tokens)?;
        let class_tokens = matrix(path, "class_tokens", &self.class_tokens)?;
        let bank = PromptBank::from_parts(self.prompt.clone(), context, class_tokens)?;
        let encoder =
            FrozenEncoder::new(self.encoder_seed, self.prompt.input_dim(), self.embed_dim)?;
        Ok((bank, encoder))
    }

    pub fn embeddings(&self, path: &Path) -> CliResult<ClassEmbeddings> {
        let (bank, encoder) = self.restore(path)?;
        Ok(kmat_core::prompt_space::encode_prompts(&bank, &encoder)?)
    }
}

/// Everything needed to repeat a run: the fully resolved config, the inputs
/// with their hashes, and hashes of every file written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    pub data: String,
    pub descriptions: String,
    pub out_dir: String,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<String>>,
    pub config: TrainConfig,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path, relative to `out_dir`, to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}
