use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use kmat_core::trainer::{run_ablation, AblationRow};
use kmat_core::{AblationCell, AblationSpec};

use crate::artifacts::RunManifest;
use crate::error::CliResult;
use crate::files::{create_dir, to_toml, write_text};
use crate::train::{emit, load_config, load_data, record_failure, CONFIG_FILE, MANIFEST_FILE};

pub const TABLE_CSV: &str = "ablation.csv";
pub const TABLE_TXT: &str = "ablation.txt";

#[derive(Args, Clone, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub descriptions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// `reported` (8 rows), `full` (16 rows), or `;`-separated cells such as
    /// `base;csc+msc;csc+msc+anc+fgw`. The first cell is the reference row.
    #[arg(long, default_value = "reported")]
    pub grid: String,
}

pub fn parse_grid(text: &str) -> kmat_core::Result<AblationSpec> {
    match text.trim() {
        "reported" => Ok(AblationSpec::reported()),
        "full" => Ok(AblationSpec::full()),
        cells => Ok(AblationSpec {
            cells: cells
                .split(';')
                .map(AblationCell::parse)
                .collect::<kmat_core::Result<_>>()?,
        }),
    }
}

#[derive(Clone, Debug)]
pub struct AblateOutput {
    pub rows: Vec<AblationRow>,
    pub manifest: RunManifest,
}

pub fn cmd_ablate(args: &AblateArgs) -> CliResult<AblateOutput> {
    let grid = parse_grid(&args.grid)?;
    let config = load_config(args.config.as_deref(), args.seeds.as_deref())?;
    let loaded = load_data(&args.data, &args.descriptions)?;
    let out = &args.out;
    create_dir(out)?;

    let rows = run_ablation(&grid, &loaded.data, &loaded.anchors, &config)
        .inspect_err(|e| record_failure(out, &config, e))?;

    let mut artifacts = BTreeMap::new();
    emit(out, CONFIG_FILE, &to_toml(&config), &mut artifacts)?;
    emit(out, TABLE_CSV, &table_csv(&rows), &mut artifacts)?;
    emit(out, TABLE_TXT, &table_text(&rows), &mut artifacts)?;
    let manifest = RunManifest {
        command: "ablate".into(),
        config_path: args.config.as_ref().map(|p| p.display().to_string()),
        data: args.data.display().to_string(),
        descriptions: args.descriptions.display().to_string(),
        out_dir: out.display().to_string(),
        seeds: config.seeds.clone(),
        grid: Some(grid.cells.iter().map(AblationCell::label).collect()),
        config,
        inputs: loaded.hashes,
        artifacts,
    };
    write_text(&out.join(MANIFEST_FILE), &to_toml(&manifest))?;
    Ok(AblateOutput { rows, manifest })
}

const CSV_HEADER: &str = "cell,csc,msc,anc,fgw,high_acc,low_acc,h_acc,high_f1,low_f1,h_f1,\
h_of_means_acc,h_of_means_f1,rel_impr_acc,rel_impr_f1";

/// Full precision; metrics as fractions, relative improvements in percent.
pub fn table_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let c = &r.cell;
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            c.label(),
            c.class_specific,
            c.modality_specific,
            c.anchoring,
            c.alignment,
            s.high_acc,
            s.low_acc,
            s.mean_harmonic_acc,
            s.high_f1,
            s.low_f1,
            s.mean_harmonic_f1,
            s.harmonic_of_means_acc,
            s.harmonic_of_means_f1,
            r.rel_impr_acc,
            r.rel_impr_f1
        );
    }
    out
}

/// Metrics in percent with one decimal, relative improvements with two.
pub fn table_text(rows: &[AblationRow]) -> String {
    let mark = |on: bool| if on { "x" } else { "-" };
    let mut out = String::from(
        "CSC MSC ANC FGW | Hi-ACC Lo-ACC  H-ACC | Hi-F1  Lo-F1   H-F1 | Impr-ACC Impr-F1\n",
    );
    for r in rows {
        let c = &r.cell;
        let s = &r.summary;
        let _ = writeln!(
            out,
            " {}   {}   {}   {}  | {:>6.1} {:>6.1} {:>6.1} | {:>5.1} {:>6.1} {:>6.1} | {:>+8.2} {:>+7.2}",
            mark(c.class_specific),
            mark(c.modality_specific),
            mark(c.anchoring),
            mark(c.alignment),
            100.0 * s.high_acc,
            100.0 * s.low_acc,
            100.0 * s.mean_harmonic_acc,
            100.0 * s.high_f1,
            100.0 * s.low_f1,
            100.0 * s.mean_harmonic_f1,
            r.rel_impr_acc,
            r.rel_impr_f1
        );
    }
    out
}
