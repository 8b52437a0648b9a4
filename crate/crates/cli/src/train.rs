use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use kmat_core::evalkit::{project_2d, summarize};
use kmat_core::trainer::run_seeds;
use kmat_core::{
    load_embeddings, AnchorPrototypes, LabeledEmbeddingSet, RunReport, Summary, TrainConfig,
};
use ndarray::concatenate;
use ndarray::Axis;

use crate::artifacts::{ParamsDump, RunManifest};
use crate::error::{CliError, CliResult};
use crate::files::{
    create_dir, embeddings_csv, projection_csv, read_config_toml, read_data_toml, sha256_file,
    sha256_hex, to_toml, write_text,
};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const FAILURE_FILE: &str = "failure.txt";
pub const REPORT_FILE: &str = "report.toml";
pub const PARAMS_FILE: &str = "params.toml";
pub const EMBEDDINGS_CSV: &str = "class_embeddings.csv";
pub const PROJECTION_CSV: &str = "projection.csv";

#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    /// TOML config; every key is required. Defaults apply when omitted.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Image embeddings (high-end train/val/test and low-end test).
    #[arg(
        long,
        required_unless_present = "manifest",
        conflicts_with = "manifest"
    )]
    pub data: Option<PathBuf>,
    /// Description embeddings used to build the anchor prototypes.
    #[arg(
        long,
        required_unless_present = "manifest",
        conflicts_with = "manifest"
    )]
    pub descriptions: Option<PathBuf>,
    /// Output directory; defaults to the manifest's when replaying.
    #[arg(long, required_unless_present = "manifest")]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',', conflicts_with = "manifest")]
    pub seeds: Option<Vec<u64>>,
    /// Replays the run recorded in a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub out_dir: PathBuf,
    pub reports: Vec<RunReport>,
    pub summary: Summary,
    pub manifest: RunManifest,
}

/// The resolved inputs of a train or ablate run.
#[derive(Clone, Debug)]
pub(crate) struct RunInputs {
    pub config_path: Option<PathBuf>,
    pub config: TrainConfig,
    pub data_path: PathBuf,
    pub descriptions_path: PathBuf,
    pub out_dir: PathBuf,
}

pub(crate) fn load_config(path: Option<&Path>, seeds: Option<&[u64]>) -> CliResult<TrainConfig> {
    let mut config = match path {
        Some(p) => read_config_toml::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seeds) = seeds {
        config.seeds = seeds.to_vec();
    }
    config.validate().map_err(|e| match (path, e) {
        (Some(p), kmat_core::Error::Config(msg)) => CliError::config(p, msg),
        (_, e) => e.into(),
    })?;
    Ok(config)
}

pub(crate) struct LoadedData {
    pub data: LabeledEmbeddingSet,
    pub anchors: AnchorPrototypes,
    pub hashes: BTreeMap<String, String>,
}

pub(crate) fn load_data(data_path: &Path, descriptions_path: &Path) -> CliResult<LoadedData> {
    let data = load_embeddings(data_path)?;
    let descriptions = load_embeddings(descriptions_path)?;
    if descriptions.dim() != data.dim() || descriptions.n_classes() != data.n_classes() {
        return Err(CliError::data(
            descriptions_path,
            format!(
                "descriptions are {} classes of dim {}, data is {} classes of dim {}",
                descriptions.n_classes(),
                descriptions.dim(),
                data.n_classes(),
                data.dim()
            ),
        ));
    }
    let anchors = AnchorPrototypes::from_descriptions(&descriptions)?;
    let mut hashes = BTreeMap::new();
    for p in [data_path, descriptions_path] {
        hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    Ok(LoadedData {
        data,
        anchors,
        hashes,
    })
}

/// Loads a manifest and checks that its inputs are unchanged.
pub(crate) fn replay_inputs(manifest_path: &Path, out: Option<&Path>) -> CliResult<RunInputs> {
    let m: RunManifest = read_data_toml(manifest_path)?;
    m.config
        .validate()
        .map_err(|e| CliError::config(manifest_path, e.to_string()))?;
    for (path, expected) in &m.inputs {
        let actual = sha256_file(Path::new(path))?;
        if &actual != expected {
            return Err(CliError::data(
                path,
                format!(
                    "input changed since {} was written",
                    manifest_path.display()
                ),
            ));
        }
    }
    Ok(RunInputs {
        config_path: m.config_path.map(PathBuf::from),
        config: m.config,
        data_path: m.data.into(),
        descriptions_path: m.descriptions.into(),
        out_dir: out.map_or_else(|| PathBuf::from(&m.out_dir), Path::to_path_buf),
    })
}

fn resolve(args: &TrainArgs) -> CliResult<RunInputs> {
    if let Some(manifest) = &args.manifest {
        return replay_inputs(manifest, args.out.as_deref());
    }
    let missing = |flag: &str| CliError::config("<flags>", format!("--{flag} is required"));
    Ok(RunInputs {
        config: load_config(args.config.as_deref(), args.seeds.as_deref())?,
        config_path: args.config.clone(),
        data_path: args.data.clone().ok_or_else(|| missing("data"))?,
        descriptions_path: args
            .descriptions
            .clone()
            .ok_or_else(|| missing("descriptions"))?,
        out_dir: args.out.clone().ok_or_else(|| missing("out"))?,
    })
}

/// Writes `text` under `out` and records its hash.
pub(crate) fn emit(
    out: &Path,
    rel: &str,
    text: &str,
    artifacts: &mut BTreeMap<String, String>,
) -> CliResult<()> {
    let path = out.join(rel);
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_text(&path, text)?;
    artifacts.insert(rel.to_string(), sha256_hex(text.as_bytes()));
    Ok(())
}

pub(crate) fn record_failure(out: &Path, config: &TrainConfig, err: &kmat_core::Error) {
    let text = format!("error: {err}\n\n[config]\n{}", to_toml(config));
    // Best effort: the original error is what gets reported.
    let _ = write_text(&out.join(FAILURE_FILE), &text);
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainOutput> {
    let inputs = resolve(args)?;
    let loaded = load_data(&inputs.data_path, &inputs.descriptions_path)?;
    let out = &inputs.out_dir;
    let config = &inputs.config;
    create_dir(out)?;

    let runs = run_seeds(&loaded.data, &loaded.anchors, config)
        .inspect_err(|e| record_failure(out, config, e))?;

    let mut artifacts = BTreeMap::new();
    emit(out, CONFIG_FILE, &to_toml(config), &mut artifacts)?;
    let n_classes = loaded.data.n_classes();
    for run in &runs {
        let dir = format!("seed-{}", run.report.seed);
        let w = run.outcome.embeddings()?;
        let stacked = concatenate(Axis(0), &[w.high.view(), w.low.view()]).expect("equal widths");
        let proj = project_2d(stacked.view())?;
        let params = ParamsDump::from_outcome(run.report.seed, config.loss.tau, &run.outcome);
        emit(
            out,
            &format!("{dir}/{REPORT_FILE}"),
            &to_toml(&run.report),
            &mut artifacts,
        )?;
        emit(
            out,
            &format!("{dir}/{PARAMS_FILE}"),
            &to_toml(&params),
            &mut artifacts,
        )?;
        emit(
            out,
            &format!("{dir}/{EMBEDDINGS_CSV}"),
            &embeddings_csv(&w),
            &mut artifacts,
        )?;
        emit(
            out,
            &format!("{dir}/{PROJECTION_CSV}"),
            &projection_csv(&proj, n_classes),
            &mut artifacts,
        )?;
    }
    let reports: Vec<RunReport> = runs.into_iter().map(|r| r.report).collect();
    let summary = summarize(&reports)?;
    emit(out, SUMMARY_FILE, &to_toml(&summary), &mut artifacts)?;

    let manifest = RunManifest {
        command: "train".into(),
        config_path: inputs.config_path.as_ref().map(|p| p.display().to_string()),
        data: inputs.data_path.display().to_string(),
        descriptions: inputs.descriptions_path.display().to_string(),
        out_dir: out.display().to_string(),
        seeds: config.seeds.clone(),
        grid: None,
        config: config.clone(),
        inputs: loaded.hashes,
        artifacts,
    };
    write_text(&out.join(MANIFEST_FILE), &to_toml(&manifest))?;
    Ok(TrainOutput {
        out_dir: out.clone(),
        reports,
        summary,
        manifest,
    })
}

/// Seed table plus means, in percent with one decimal.
pub fn format_summary(reports: &[RunReport], summary: &Summary) -> String {
    let mut out = String::from("seed   Hi-ACC Lo-ACC  H-ACC   Hi-F1  Lo-F1   H-F1\n");
    let pct = |x: f64| 100.0 * x;
    for r in reports {
        let _ = writeln!(
            out,
            "{:<6} {:>6.1} {:>6.1} {:>6.1}  {:>6.1} {:>6.1} {:>6.1}",
            r.seed,
            pct(r.high.accuracy),
            pct(r.low.accuracy),
            pct(r.harmonic_acc),
            pct(r.high.macro_f1),
            pct(r.low.macro_f1),
            pct(r.harmonic_f1)
        );
    }
    let _ = writeln!(
        out,
        "{:<6} {:>6.1} {:>6.1} {:>6.1}  {:>6.1} {:>6.1} {:>6.1}",
        "mean",
        pct(summary.high_acc),
        pct(summary.low_acc),
        pct(summary.mean_harmonic_acc),
        pct(summary.high_f1),
        pct(summary.low_f1),
        pct(summary.mean_harmonic_f1)
    );
    for r in reports.iter().filter(|r| !r.shortfall_classes.is_empty()) {
        let _ = writeln!(
            out,
            "seed {}: fewer shots than requested for classes {:?}",
            r.seed, r.shortfall_classes
        );
    }
    out
}
