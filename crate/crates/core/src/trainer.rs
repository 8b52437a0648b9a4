//! Few-shot sampling, the learning-rate schedule, the SGD training loop and
//! the ablation grid runner.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledEmbeddingSet, Split};
use crate::error::{Error, Result};
use crate::evalkit::{self, RunReport, Summary};
use crate::objectives::{total_loss, LossBreakdown, LossWeights};
use crate::prompt_space::{
    encode_prompts, encode_prompts_backward, init_prompt_bank, AnchorPrototypes, ClassEmbeddings,
    FrozenEncoder, Modality, PromptBank, PromptConfig,
};
use crate::transport::SolverConfig;

// RNG streams derived from one run seed.
const SHUFFLE_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSettings {
    pub context_len: usize,
    pub token_dim: usize,
    pub class_specific: bool,
    pub modality_specific: bool,
    /// Seed of the frozen encoder weights, shared by every run.
    pub encoder_seed: u64,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            context_len: 4,
            token_dim: 64,
            class_specific: true,
            modality_specific: true,
            encoder_seed: 0,
        }
    }
}

impl PromptSettings {
    pub fn prompt_config(&self, n_classes: usize) -> PromptConfig {
        PromptConfig {
            n_classes,
            context_len: self.context_len,
            token_dim: self.token_dim,
            class_specific: self.class_specific,
            modality_specific: self.modality_specific,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub shots_per_class: usize,
    pub seeds: Vec<u64>,
    pub prompt: PromptSettings,
    pub loss: LossWeights,
    pub solver: SolverConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            base_lr: 0.0025,
            warmup_epochs: 1,
            shots_per_class: 16,
            seeds: vec![1, 2, 3],
            prompt: PromptSettings::default(),
            loss: LossWeights::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.shots_per_class == 0 {
            return Err(Error::Config("shots_per_class must be >= 1".into()));
        }
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config(format!(
                "base_lr must be finite and >= 0, got {}",
                self.base_lr
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.loss.validate()?;
        self.solver.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotSample {
    pub set: LabeledEmbeddingSet,
    /// Classes with fewer training samples than requested; all of them were used.
    pub shortfall: Vec<usize>,
}

/// Per class, `shots` high-end training records drawn uniformly without replacement.
pub fn sample_few_shot(
    dataset: &LabeledEmbeddingSet,
    shots: usize,
    seed: u64,
) -> Result<FewShotSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLE_STREAM);
    let mut keep = vec![false; dataset.len()];
    let mut shortfall = Vec::new();
    for class in 0..dataset.n_classes() {
        let mut pool: Vec<usize> = dataset
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                r.label == class && r.modality == Modality::High && r.split == Split::Train
            })
            .map(|(i, _)| i)
            .collect();
        if pool.is_empty() {
            return Err(Error::Data(format!(
                "class {class} has no high-end training samples"
            )));
        }
        if pool.len() < shots {
            shortfall.push(class);
        } else {
            pool.shuffle(&mut rng);
            pool.truncate(shots);
        }
        for i in pool {
            keep[i] = true;
        }
    }
    let mut idx = 0;
    let set = dataset.filter(|_| {
        idx += 1;
        keep[idx - 1]
    });
    Ok(FewShotSample { set, shortfall })
}

/// Linear warmup from 0 followed by cosine annealing to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(config: &TrainConfig, steps_per_epoch: usize) -> Self {
        Self {
            base_lr: config.base_lr,
            warmup_steps: config.warmup_epochs * steps_per_epoch,
            total_steps: config.epochs * steps_per_epoch,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bank: PromptBank,
    pub encoder: FrozenEncoder,
    /// Mean loss terms per epoch.
    pub trace: Vec<LossBreakdown>,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn embeddings(&self) -> Result<ClassEmbeddings> {
        encode_prompts(&self.bank, &self.encoder)
    }
}

/// Builds the frozen encoder used by every run of `config` on `embed_dim`-dim data.
pub fn encoder_for(
    config: &TrainConfig,
    n_classes: usize,
    embed_dim: usize,
) -> Result<FrozenEncoder> {
    let input_dim = config.prompt.prompt_config(n_classes).input_dim();
    FrozenEncoder::new(config.prompt.encoder_seed, input_dim, embed_dim)
}

/// Mini-batch SGD on the context tokens.
///
/// `data` must contain high-end records only; any low-end record is
/// rejected with [`Error::ZeroShotViolation`].
pub fn train(
    data: &LabeledEmbeddingSet,
    anchors: &AnchorPrototypes,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let low = data
        .records()
        .iter()
        .filter(|r| r.modality == Modality::Low)
        .count();
    if low > 0 {
        return Err(Error::ZeroShotViolation { count: low });
    }
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("no training records".into()));
    }
    if anchors.n_classes() != data.n_classes() || anchors.dim() != data.dim() {
        return Err(Error::Shape(format!(
            "anchors are {}x{}, data has {} classes of dim {}",
            anchors.n_classes(),
            anchors.dim(),
            data.n_classes(),
            data.dim()
        )));
    }

    let prompt_config = config.prompt.prompt_config(data.n_classes());
    let mut bank = init_prompt_bank(&prompt_config, seed)?;
    let encoder = encoder_for(config, data.n_classes(), data.dim())?;

    let images = data.matrix();
    let labels = data.labels();
    let n = images.nrows();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let schedule = LrSchedule::new(config, steps_per_epoch);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut x = Array2::zeros((chunk.len(), images.ncols()));
            for (mut row, &i) in x.rows_mut().into_iter().zip(chunk) {
                row.assign(&images.row(i));
            }
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let w = encode_prompts(&bank, &encoder)?;
            let eval = total_loss(x.view(), &y, &w, anchors, &config.loss, &config.solver)
                .map_err(|e| diverged_or(e, epoch, step))?;
            let b = eval.breakdown;
            if !b.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("non-finite loss {b:?}"),
                });
            }
            let grads = encode_prompts_backward(&bank, &encoder, &eval.grads)?;
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("non-finite gradient at loss {b:?}"),
                });
            }
            let lr = schedule.lr_at(step);
            bank.context_tokens_mut().scaled_add(-lr, &grads);

            sum.ce += b.ce;
            sum.anc += b.anc;
            sum.fgw += b.fgw;
            sum.total += b.total;
            batches += 1;
            step += 1;
        }
        let k = batches as f64;
        trace.push(LossBreakdown {
            ce: sum.ce / k,
            anc: sum.anc / k,
            fgw: sum.fgw / k,
            total: sum.total / k,
        });
    }

    Ok(TrainOutcome {
        bank,
        encoder,
        trace,
        steps: step,
    })
}

fn diverged_or(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric(detail) => Error::Diverged {
            epoch,
            step,
            detail,
        },
        other => other,
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub report: RunReport,
    pub outcome: TrainOutcome,
}

/// Few-shot sampling, training and test evaluation for one seed.
///
/// Training sees only the sampled high-end records; the low-end test split
/// is touched only by the final evaluation.
pub fn run_seed(
    data: &LabeledEmbeddingSet,
    anchors: &AnchorPrototypes,
    config: &TrainConfig,
    seed: u64,
) -> Result<SeedRun> {
    let sample = sample_few_shot(data, config.shots_per_class, seed)?;
    let outcome = train(&sample.set, anchors, config, seed)?;
    let w = outcome.embeddings()?;
    let tau = config.loss.tau;
    let high = evalkit::evaluate(
        &data.select(Modality::High, Split::Test),
        w.high.view(),
        tau,
    )?;
    let low = evalkit::evaluate(&data.select(Modality::Low, Split::Test), w.low.view(), tau)?;
    let report = RunReport::new(
        seed,
        high,
        low,
        outcome.trace.clone(),
        sample.shortfall,
        config.clone(),
    )?;
    Ok(SeedRun { report, outcome })
}

/// Runs every configured seed; seeds execute concurrently, results keep seed order.
pub fn run_seeds(
    data: &LabeledEmbeddingSet,
    anchors: &AnchorPrototypes,
    config: &TrainConfig,
) -> Result<Vec<SeedRun>> {
    config.validate()?;
    config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(data, anchors, config, seed))
        .collect()
}

/// `100 (cell - base) / base`.
pub fn relative_improvement(base: f64, cell: f64) -> Result<f64> {
    if base == 0.0 || !base.is_finite() || !cell.is_finite() {
        return Err(Error::Domain(format!(
            "relative improvement undefined for base {base}, cell {cell}"
        )));
    }
    Ok(100.0 * (cell - base) / base)
}

/// One configuration of the component ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationCell {
    pub class_specific: bool,
    pub modality_specific: bool,
    pub anchoring: bool,
    pub alignment: bool,
}

impl AblationCell {
    pub const fn new(csc: bool, msc: bool, anc: bool, fgw: bool) -> Self {
        Self {
            class_specific: csc,
            modality_specific: msc,
            anchoring: anc,
            alignment: fgw,
        }
    }

    /// The base config with this cell's toggles applied; a disabled loss
    /// term gets weight 0, an enabled one keeps the base weight.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.prompt.class_specific = self.class_specific;
        cfg.prompt.modality_specific = self.modality_specific;
        if !self.anchoring {
            cfg.loss.lambda_anc = 0.0;
        }
        if !self.alignment {
            cfg.loss.lambda_fgw = 0.0;
        }
        cfg
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.class_specific, "csc"),
            (self.modality_specific, "msc"),
            (self.anchoring, "anc"),
            (self.alignment, "fgw"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        if parts.is_empty() {
            "base".into()
        } else {
            parts.join("+")
        }
    }

    /// Parses `base` or a `+`-separated subset of `csc`, `msc`, `anc`, `fgw`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cell = Self::new(false, false, false, false);
        let text = text.trim();
        if text == "base" || text.is_empty() {
            return Ok(cell);
        }
        for part in text.split('+') {
            match part.trim() {
                "csc" => cell.class_specific = true,
                "msc" => cell.modality_specific = true,
                "anc" => cell.anchoring = true,
                "fgw" => cell.alignment = true,
                other => return Err(Error::Config(format!("unknown ablation toggle `{other}`"))),
            }
        }
        Ok(cell)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub cells: Vec<AblationCell>,
}

impl AblationSpec {
    /// The eight reported rows, plain prompt tuning first and the full model last.
    pub fn reported() -> Self {
        let c = AblationCell::new;
        Self {
            cells: vec![
                c(false, false, false, false),
                c(true, false, false, false),
                c(true, true, false, false),
                c(true, true, true, false),
                c(true, true, false, true),
                c(false, true, true, true),
                c(true, false, true, true),
                c(true, true, true, true),
            ],
        }
    }

    /// All sixteen toggle combinations, base first.
    pub fn full() -> Self {
        Self {
            cells: (0..16u8)
                .map(|b| AblationCell::new(b & 8 != 0, b & 4 != 0, b & 2 != 0, b & 1 != 0))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub summary: Summary,
    /// Against the first row, on the mean per-seed harmonic accuracy.
    pub rel_impr_acc: f64,
    /// Against the first row, on the mean per-seed harmonic macro-F1.
    pub rel_impr_f1: f64,
}

/// Runs each cell over every seed. The first cell is the reference row.
pub fn run_ablation(
    grid: &AblationSpec,
    data: &LabeledEmbeddingSet,
    anchors: &AnchorPrototypes,
    config: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    if grid.cells.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let summaries: Vec<Summary> = grid
        .cells
        .par_iter()
        .map(|cell| {
            let cfg = cell.apply(config);
            let runs = run_seeds(data, anchors, &cfg)?;
            let reports: Vec<RunReport> = runs.into_iter().map(|r| r.report).collect();
            evalkit::summarize(&reports)
        })
        .collect::<Result<_>>()?;
    let base = &summaries[0];
    grid.cells
        .iter()
        .zip(&summaries)
        .map(|(cell, summary)| {
            Ok(AblationRow {
                cell: *cell,
                summary: summary.clone(),
                rel_impr_acc: relative_improvement(
                    base.mean_harmonic_acc,
                    summary.mean_harmonic_acc,
                )?,
                rel_impr_f1: relative_improvement(base.mean_harmonic_f1, summary.mean_harmonic_f1)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightCandidate {
    pub lambda_anc: f64,
    pub lambda_fgw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: WeightCandidate,
    /// Seed-mean high-end validation accuracy of the high-end embeddings.
    pub high_val_acc: f64,
    /// Seed-mean high-end validation accuracy of the low-end embeddings.
    pub cross_val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub chosen: WeightCandidate,
    pub scores: Vec<CandidateScore>,
}

/// Picks loss weights using high-end validation images only.
///
/// Candidates are ranked by high-end validation accuracy; ties (common,
/// since the alignment term never reaches the high-end embeddings when
/// contexts are modality-specific) are broken by how well the low-end
/// embeddings classify the same high-end validation images, then by
/// candidate order.
pub fn tune_loss_weights(
    candidates: &[WeightCandidate],
    data: &LabeledEmbeddingSet,
    anchors: &AnchorPrototypes,
    config: &TrainConfig,
) -> Result<TuningResult> {
    if candidates.is_empty() {
        return Err(Error::Config("no weight candidates".into()));
    }
    config.validate()?;
    let val = data.select(Modality::High, Split::Val);
    if val.is_empty() {
        return Err(Error::Data("no high-end validation records".into()));
    }
    let tau = config.loss.tau;
    let scores: Vec<CandidateScore> = candidates
        .par_iter()
        .map(|cand| {
            let mut cfg = config.clone();
            cfg.loss.lambda_anc = cand.lambda_anc;
            cfg.loss.lambda_fgw = cand.lambda_fgw;
            let per_seed: Vec<(f64, f64)> = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let sample = sample_few_shot(data, cfg.shots_per_class, seed)?;
                    let outcome = train(&sample.set, anchors, &cfg, seed)?;
                    let w = outcome.embeddings()?;
                    let own = evalkit::evaluate(&val, w.high.view(), tau)?.accuracy;
                    let cross = evalkit::evaluate(&val, w.low.view(), tau)?.accuracy;
                    Ok((own, cross))
                })
                .collect::<Result<_>>()?;
            let k = per_seed.len() as f64;
            Ok(CandidateScore {
                candidate: *cand,
                high_val_acc: per_seed.iter().map(|p| p.0).sum::<f64>() / k,
                cross_val_acc: per_seed.iter().map(|p| p.1).sum::<f64>() / k,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let b = &scores[best];
        if s.high_val_acc > b.high_val_acc
            || (s.high_val_acc == b.high_val_acc && s.cross_val_acc > b.cross_val_acc)
        {
            best = i;
        }
    }
    Ok(TuningResult {
        chosen: scores[best].candidate,
        scores,
    })
}
