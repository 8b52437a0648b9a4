use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use kmat_core::datagen::{RotationPlane, SplitSizes};
use kmat_core::{generate, save_embeddings, LabeledEmbeddingSet, Modality, Split, SyntheticSpec};
use serde::Serialize;

use crate::error::CliResult;
use crate::files::{create_dir, write_toml};

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const DESCRIPTIONS_FILE: &str = "descriptions.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.toml";
pub const SPEC_FILE: &str = "spec.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// Library defaults.
    Default,
    /// Tight classes with unreliable low-end descriptions.
    Forgetting,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlaneArg {
    Random,
    Centers,
}

/// Flags left unset keep the scenario's value.
#[derive(Args, Clone, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Scenario::Default)]
    pub scenario: Scenario,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Samples per class and modality in the train split.
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Angle (radians) between each class center and the shared base direction.
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Cross-modal rotation angle (radians).
    #[arg(long)]
    pub rotation: Option<f64>,
    #[arg(long, value_enum)]
    pub plane: Option<PlaneArg>,
    /// Norm of the shared low-end shortcut offset.
    #[arg(long)]
    pub offset: Option<f64>,
    /// Description embeddings per class and modality.
    #[arg(long)]
    pub descriptions: Option<usize>,
    #[arg(long)]
    pub description_noise: Option<f64>,
    #[arg(long)]
    pub description_bias: Option<f64>,
}

impl GenArgs {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            scenario: Scenario::Default,
            classes: None,
            dim: None,
            seed: None,
            train: None,
            val: None,
            test: None,
            spread: None,
            noise: None,
            rotation: None,
            plane: None,
            offset: None,
            descriptions: None,
            description_noise: None,
            description_bias: None,
        }
    }

    pub fn spec(&self) -> SyntheticSpec {
        let base = match self.scenario {
            Scenario::Default => SyntheticSpec::default(),
            Scenario::Forgetting => SyntheticSpec::forgetting(),
        };
        SyntheticSpec {
            n_classes: self.classes.unwrap_or(base.n_classes),
            embed_dim: self.dim.unwrap_or(base.embed_dim),
            samples: SplitSizes {
                train: self.train.unwrap_or(base.samples.train),
                val: self.val.unwrap_or(base.samples.val),
                test: self.test.unwrap_or(base.samples.test),
            },
            spread: self.spread.unwrap_or(base.spread),
            noise: self.noise.unwrap_or(base.noise),
            rotation: self.rotation.unwrap_or(base.rotation),
            rotation_plane: match self.plane {
                Some(PlaneArg::Random) => RotationPlane::Random,
                Some(PlaneArg::Centers) => RotationPlane::Centers,
                None => base.rotation_plane,
            },
            offset: self.offset.unwrap_or(base.offset),
            n_descriptions: self.descriptions.unwrap_or(base.n_descriptions),
            description_noise: self.description_noise.unwrap_or(base.description_noise),
            description_bias: self.description_bias.unwrap_or(base.description_bias),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

#[derive(Serialize)]
struct GroundTruth {
    high: Vec<Vec<f64>>,
    low: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenOutput {
    pub spec: SyntheticSpec,
    /// Record counts keyed by (class, modality, split).
    pub counts: BTreeMap<(usize, Modality, Split), usize>,
}

pub fn record_counts(set: &LabeledEmbeddingSet) -> BTreeMap<(usize, Modality, Split), usize> {
    let mut counts = BTreeMap::new();
    for r in set.records() {
        *counts.entry((r.label, r.modality, r.split)).or_insert(0) += 1;
    }
    counts
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<GenOutput> {
    let spec = args.spec();
    let data = generate(&spec)?;
    create_dir(&args.out)?;
    save_embeddings(&data.embeddings, &args.out.join(EMBEDDINGS_FILE))?;
    save_embeddings(&data.descriptions, &args.out.join(DESCRIPTIONS_FILE))?;
    let gt = data.ground_truth.as_pair();
    let rows = |a: &ndarray::Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect();
    write_toml(
        &args.out.join(GROUND_TRUTH_FILE),
        &GroundTruth {
            high: rows(&gt.high),
            low: rows(&gt.low),
        },
    )?;
    write_toml(&args.out.join(SPEC_FILE), &spec)?;
    Ok(GenOutput {
        spec,
        counts: record_counts(&data.embeddings),
    })
}

pub fn format_counts(counts: &BTreeMap<(usize, Modality, Split), usize>) -> String {
    let mut out = String::from("class modality split count\n");
    for ((class, m, split), n) in counts {
        let _ = writeln!(out, "{class:>5} {:>8} {:>5} {n:>5}", m.tag(), split.tag());
    }
    out
}
