use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use kmat_core::evalkit::{evaluate, harmonic_mean};
use kmat_core::{load_embeddings, Modality, ModalityMetrics, Split};
use serde::{Deserialize, Serialize};

use crate::artifacts::ParamsDump;
use crate::error::{CliError, CliResult};
use crate::files::{read_data_toml, to_toml, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    #[value(alias = "H", alias = "h")]
    High,
    #[value(alias = "L", alias = "l")]
    Low,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::High => Modality::High,
            ModalityArg::Low => Modality::Low,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    /// A `params.toml` written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluates one modality; both when omitted.
    #[arg(long, value_enum)]
    pub modality: Option<ModalityArg>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Also writes the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Metrics of stored parameters on one split. Each modality is scored with
/// its own class embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub params: String,
    pub data: String,
    pub split: Split,
    pub seed: u64,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harmonic_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harmonic_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<ModalityMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<ModalityMetrics>,
}

impl EvalReport {
    pub fn get(&self, m: Modality) -> Option<&ModalityMetrics> {
        match m {
            Modality::High => self.high.as_ref(),
            Modality::Low => self.low.as_ref(),
        }
    }
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalReport> {
    let params: ParamsDump = read_data_toml(&args.params)?;
    let data = load_embeddings(&args.data)?;
    if data.dim() != params.embed_dim || data.n_classes() != params.prompt.n_classes {
        return Err(CliError::data(
            &args.data,
            format!(
                "data is {} classes of dim {}, parameters are {} classes of dim {}",
                data.n_classes(),
                data.dim(),
                params.prompt.n_classes,
                params.embed_dim
            ),
        ));
    }
    let w = params.embeddings(&args.params)?;
    let split = Split::from(args.split);
    let modalities: Vec<Modality> = match args.modality {
        Some(m) => vec![m.into()],
        None => Modality::ALL.to_vec(),
    };
    let mut report = EvalReport {
        params: args.params.display().to_string(),
        data: args.data.display().to_string(),
        split,
        seed: params.seed,
        tau: params.tau,
        harmonic_acc: None,
        harmonic_f1: None,
        high: None,
        low: None,
    };
    for m in modalities {
        let set = data.select(m, split);
        if set.is_empty() {
            return Err(CliError::data(
                &args.data,
                format!("no {m} records in split {split}"),
            ));
        }
        let metrics = evaluate(&set, w.get(m).view(), params.tau)?;
        match m {
            Modality::High => report.high = Some(metrics),
            Modality::Low => report.low = Some(metrics),
        }
    }
    if let (Some(h), Some(l)) = (&report.high, &report.low) {
        report.harmonic_acc = Some(harmonic_mean(h.accuracy, l.accuracy)?);
        report.harmonic_f1 = Some(harmonic_mean(h.macro_f1, l.macro_f1)?);
    }
    if let Some(path) = &args.out {
        write_text(path, &to_toml(&report))?;
    }
    Ok(report)
}

pub fn format_eval(report: &EvalReport) -> String {
    let mut out = format!("split {} (seed {})\n", report.split, report.seed);
    for m in Modality::ALL {
        if let Some(metrics) = report.get(m) {
            let _ = writeln!(
                out,
                "{m}: ACC {:.1}  F1 {:.1}",
                100.0 * metrics.accuracy,
                100.0 * metrics.macro_f1
            );
            for c in &metrics.per_class {
                match c.accuracy {
                    Some(a) => {
                        let _ = writeln!(
                            out,
                            "  class {}: {:.1} ({}/{})",
                            c.class,
                            100.0 * a,
                            c.correct,
                            c.support
                        );
                    }
                    None => {
                        let _ = writeln!(out, "  class {}: absent", c.class);
                    }
                }
            }
        }
    }
    if let (Some(a), Some(f)) = (report.harmonic_acc, report.harmonic_f1) {
        let _ = writeln!(out, "harmonic: ACC {:.1}  F1 {:.1}", 100.0 * a, 100.0 * f);
    }
    out
}
