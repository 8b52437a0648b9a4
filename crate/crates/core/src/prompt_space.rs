//! Factorized prompt parameters, the frozen text-encoder stand-in and the
//! fixed anchor prototypes.
//!
//! A prompt for class `i` under modality `m` is the token sequence
//! `[v1, .., vK, c_i]`: `K` learnable context tokens followed by the frozen
//! class token. Context storage is shared according to two flags:
//! class-specific context (CSC) gives every class its own slot and
//! modality-specific context (MSC) splits each slot per modality. With both
//! off, every prompt resolves to the same single slot.
//!
//! Prompts are mapped to the joint embedding space by a seeded Gaussian
//! linear map followed by L2 normalization.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledEmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{self, DEGENERATE_NORM};

/// Standard deviation of the Gaussian used for context and class tokens.
pub const TOKEN_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    /// Source modality with labeled training images.
    #[serde(rename = "H")]
    High,
    /// Target modality, only ever seen at evaluation time.
    #[serde(rename = "L")]
    Low,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::High, Modality::Low];

    pub fn index(self) -> usize {
        match self {
            Modality::High => 0,
            Modality::Low => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::High => "H",
            Modality::Low => "L",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "H" | "h" | "high" => Some(Modality::High),
            "L" | "l" | "low" => Some(Modality::Low),
            _ => None,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// A value held once per modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerModality<T> {
    pub high: T,
    pub low: T,
}

impl<T> PerModality<T> {
    pub fn new(high: T, low: T) -> Self {
        Self { high, low }
    }

    pub fn get(&self, m: Modality) -> &T {
        match m {
            Modality::High => &self.high,
            Modality::Low => &self.low,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut T {
        match m {
            Modality::High => &mut self.high,
            Modality::Low => &mut self.low,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerModality<U> {
        PerModality {
            high: f(&self.high),
            low: f(&self.low),
        }
    }
}

/// Unit-norm class embeddings `w_{i,m}`, one `n_classes x embed_dim` matrix per modality.
pub type ClassEmbeddings = PerModality<Array2<f64>>;

/// Gradients with respect to [`ClassEmbeddings`] rows.
pub type EmbeddingGrads = PerModality<Array2<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub n_classes: usize,
    pub context_len: usize,
    pub token_dim: usize,
    /// CSC: one context slot per class.
    pub class_specific: bool,
    /// MSC: one context slot per modality.
    pub modality_specific: bool,
}

impl PromptConfig {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            context_len: 4,
            token_dim: 64,
            class_specific: true,
            modality_specific: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_len < 1 {
            return Err(Error::Config("context_len must be >= 1".into()));
        }
        if self.token_dim < 1 {
            return Err(Error::Config("token_dim must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be >= 2, got {}",
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Length of the flattened prompt `[v1..vK, c]`.
    pub fn input_dim(&self) -> usize {
        (self.context_len + 1) * self.token_dim
    }

    fn class_slots(&self) -> usize {
        if self.class_specific {
            self.n_classes
        } else {
            1
        }
    }

    fn modality_slots(&self) -> usize {
        if self.modality_specific {
            2
        } else {
            1
        }
    }
}

/// Learnable context tokens plus frozen class tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBank {
    config: PromptConfig,
    /// One row per storage slot; each row is `context_len * token_dim` long.
    context: Array2<f64>,
    class_tokens: Array2<f64>,
}

/// Draws a new bank: context and class tokens i.i.d. `N(0, 0.02^2)`.
pub fn init_prompt_bank(config: &PromptConfig, rng_seed: u64) -> Result<PromptBank> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, TOKEN_INIT_STD).expect("valid std");
    let slots = config.class_slots() * config.modality_slots();
    let width = config.context_len * config.token_dim;
    let context = Array2::from_shape_simple_fn((slots, width), || normal.sample(&mut rng));
    let class_tokens = Array2::from_shape_simple_fn((config.n_classes, config.token_dim), || {
        normal.sample(&mut rng)
    });
    Ok(PromptBank {
        config: config.clone(),
        context,
        class_tokens,
    })
}

impl PromptBank {
    /// Rebuilds a bank from stored parameters (e.g. a parameter dump).
    pub fn from_parts(
        config: PromptConfig,
        context: Array2<f64>,
        class_tokens: Array2<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let slots = config.class_slots() * config.modality_slots();
        let width = config.context_len * config.token_dim;
        if context.dim() != (slots, width) {
            return Err(Error::Shape(format!(
                "context tokens are {:?}, expected {:?}",
                context.dim(),
                (slots, width)
            )));
        }
        if class_tokens.dim() != (config.n_classes, config.token_dim) {
            return Err(Error::Shape(format!(
                "class tokens are {:?}, expected {:?}",
                class_tokens.dim(),
                (config.n_classes, config.token_dim)
            )));
        }
        Ok(Self {
            config,
            context,
            class_tokens,
        })
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn n_slots(&self) -> usize {
        self.context.nrows()
    }

    /// Storage slot that `(class, modality)` resolves to.
    pub fn slot(&self, class: usize, modality: Modality) -> usize {
        let c = if self.config.class_specific { class } else { 0 };
        let m = if self.config.modality_specific {
            modality.index()
        } else {
            0
        };
        c * self.config.modality_slots() + m
    }

    pub fn context_tokens(&self) -> &Array2<f64> {
        &self.context
    }

    /// Mutable view of the learnable parameters. Class tokens are not reachable.
    pub fn context_tokens_mut(&mut self) -> &mut Array2<f64> {
        &mut self.context
    }

    pub fn class_tokens(&self) -> &Array2<f64> {
        &self.class_tokens
    }

    /// The flattened prompt `[v1..vK, c_class]` for one class and modality.
    pub fn prompt(&self, class: usize, modality: Modality) -> Array1<f64> {
        let width = self.context.ncols();
        let mut out = Array1::zeros(width + self.config.token_dim);
        out.slice_mut(s![..width])
            .assign(&self.context.row(self.slot(class, modality)));
        out.slice_mut(s![width..])
            .assign(&self.class_tokens.row(class));
        out
    }
}

/// Seeded linear stand-in for the frozen text encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEncoder {
    seed: u64,
    weight: Array2<f64>,
}

impl FrozenEncoder {
    /// Weight entries are i.i.d. `N(0, 1/input_dim)`, fully determined by the arguments.
    pub fn new(seed: u64, input_dim: usize, embed_dim: usize) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 {
            return Err(Error::Config(format!(
                "encoder dimensions must be positive (input {input_dim}, embed {embed_dim})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / input_dim as f64).sqrt()).expect("valid std");
        let weight =
            Array2::from_shape_simple_fn((embed_dim, input_dim), || normal.sample(&mut rng));
        Ok(Self { seed, weight })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> ArrayView2<'_, f64> {
        self.weight.view()
    }

    fn check(&self, bank: &PromptBank) -> Result<()> {
        if self.input_dim() != bank.config.input_dim() {
            return Err(Error::Shape(format!(
                "encoder expects {} inputs, prompts have {}",
                self.input_dim(),
                bank.config.input_dim()
            )));
        }
        Ok(())
    }

    fn project(&self, prompt: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weight.dot(&prompt)
    }
}

/// Encodes every `(class, modality)` prompt and L2-normalizes the result.
pub fn encode_prompts(bank: &PromptBank, enc: &FrozenEncoder) -> Result<ClassEmbeddings> {
    enc.check(bank)?;
    let n = bank.n_classes();
    let d = enc.embed_dim();
    let mut out = PerModality::new(Array2::zeros((n, d)), Array2::zeros((n, d)));
    for m in Modality::ALL {
        for class in 0..n {
            let u = enc.project(bank.prompt(class, m).view());
            let (w, _) = linalg::normalized(u.view(), "encoded prompt")?;
            out.get_mut(m).row_mut(class).assign(&w);
        }
    }
    Ok(out)
}

/// Chain rule from class-embedding gradients back to the context tokens.
///
/// Through `w = u / |u|` the Jacobian is `(I - w w^T) / |u|`; through the
/// linear map it is `W^T`. Only the context part of the prompt gradient is
/// kept, summed into whichever slot each prompt resolves to.
pub fn encode_prompts_backward(
    bank: &PromptBank,
    enc: &FrozenEncoder,
    grad_w: &EmbeddingGrads,
) -> Result<Array2<f64>> {
    enc.check(bank)?;
    let n = bank.n_classes();
    let d = enc.embed_dim();
    for m in Modality::ALL {
        if grad_w.get(m).dim() != (n, d) {
            return Err(Error::Shape(format!(
                "gradient for modality {m} is {:?}, expected {:?}",
                grad_w.get(m).dim(),
                (n, d)
            )));
        }
    }
    let width = bank.context.ncols();
    let mut grads = Array2::zeros(bank.context.raw_dim());
    for m in Modality::ALL {
        for class in 0..n {
            let g = grad_w.get(m).row(class);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let u = enc.project(bank.prompt(class, m).view());
            let norm = linalg::norm(u.view());
            if norm < DEGENERATE_NORM {
                return Err(Error::Numeric("encoded prompt has zero norm".into()));
            }
            let w = &u / norm;
            let du = (&g - &(&w * w.dot(&g))) / norm;
            let dprompt = enc.weight.t().dot(&du);
            let slot = bank.slot(class, m);
            let mut row = grads.row_mut(slot);
            row += &dprompt.slice(s![..width]);
        }
    }
    Ok(grads)
}

/// Fixed per-class, per-modality unit-norm prototypes `p_{i,m}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPrototypes {
    prototypes: PerModality<Array2<f64>>,
    n_descriptions: usize,
}

impl AnchorPrototypes {
    /// Wraps already-computed prototypes; rows must be unit norm within `1e-6`.
    pub fn from_rows(high: Array2<f64>, low: Array2<f64>, n_descriptions: usize) -> Result<Self> {
        if high.dim() != low.dim() {
            return Err(Error::Shape(format!(
                "prototype matrices differ: {:?} vs {:?}",
                high.dim(),
                low.dim()
            )));
        }
        for (m, mat) in [(Modality::High, &high), (Modality::Low, &low)] {
            let err = linalg::max_row_norm_error(mat.view());
            if err > 1e-6 {
                return Err(Error::Data(format!(
                    "prototype rows for modality {m} are not unit norm (error {err:e})"
                )));
            }
        }
        Ok(Self {
            prototypes: PerModality::new(high, low),
            n_descriptions,
        })
    }

    /// Groups a description set by label and modality and averages each group.
    pub fn from_descriptions(set: &LabeledEmbeddingSet) -> Result<Self> {
        let group = |m: Modality| -> Vec<Array2<f64>> {
            (0..set.n_classes())
                .map(|c| {
                    let rows: Vec<_> = set
                        .records()
                        .iter()
                        .filter(|r| r.modality == m && r.label == c)
                        .map(|r| r.embedding.view())
                        .collect();
                    if rows.is_empty() {
                        Array2::zeros((0, set.dim()))
                    } else {
                        ndarray::stack(ndarray::Axis(0), &rows).expect("equal dims")
                    }
                })
                .collect()
        };
        build_prototypes(&group(Modality::High), &group(Modality::Low))
    }

    pub fn get(&self, m: Modality) -> &Array2<f64> {
        self.prototypes.get(m)
    }

    pub fn as_pair(&self) -> &PerModality<Array2<f64>> {
        &self.prototypes
    }

    pub fn n_classes(&self) -> usize {
        self.prototypes.high.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.high.ncols()
    }

    /// Smallest number of descriptions averaged into any prototype.
    pub fn n_descriptions(&self) -> usize {
        self.n_descriptions
    }
}

/// Averages description embeddings per class and modality, then re-normalizes.
///
/// `high[i]` and `low[i]` hold the description embeddings of class `i` as rows.
pub fn build_prototypes(high: &[Array2<f64>], low: &[Array2<f64>]) -> Result<AnchorPrototypes> {
    if high.len() != low.len() {
        return Err(Error::Shape(format!(
            "{} high-end classes but {} low-end classes",
            high.len(),
            low.len()
        )));
    }
    if high.is_empty() {
        return Err(Error::Data("no classes given".into()));
    }
    let dim = high[0].ncols();
    let n = high.len();
    let mut out = PerModality::new(Array2::zeros((n, dim)), Array2::zeros((n, dim)));
    let mut min_count = usize::MAX;
    for (m, groups) in [(Modality::High, high), (Modality::Low, low)] {
        for (class, descriptions) in groups.iter().enumerate() {
            if descriptions.nrows() == 0 {
                return Err(Error::Data(format!(
                    "class {class}, modality {m}: no description embeddings"
                )));
            }
            if descriptions.ncols() != dim {
                return Err(Error::Shape(format!(
                    "class {class}, modality {m}: descriptions have dim {}, expected {dim}",
                    descriptions.ncols()
                )));
            }
            min_count = min_count.min(descriptions.nrows());
            let mean = descriptions.mean_axis(ndarray::Axis(0)).expect("non-empty");
            let norm = linalg::norm(mean.view());
            if !(norm >= DEGENERATE_NORM) {
                return Err(Error::Data(format!(
                    "class {class}, modality {m}: description mean is degenerate (norm {norm:e})"
                )));
            }
            out.get_mut(m).row_mut(class).assign(&(&mean / norm));
        }
    }
    Ok(AnchorPrototypes {
        prototypes: out,
        n_descriptions: min_count,
    })
}
