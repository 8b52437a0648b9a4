use std::path::{Path, PathBuf};
use std::process::Command;

use kmat_cli::ablate::{AblateArgs, TABLE_CSV};
use kmat_cli::eval::{ModalityArg, SplitArg};
use kmat_cli::gen::{DESCRIPTIONS_FILE, EMBEDDINGS_FILE};
use kmat_cli::train::{MANIFEST_FILE, SUMMARY_FILE};
use kmat_cli::{cmd_ablate, cmd_eval, cmd_gen, cmd_train, EvalArgs, GenArgs, TrainArgs};
use kmat_core::trainer::PromptSettings;
use kmat_core::{Modality, Split, TrainConfig};
use tempfile::TempDir;

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        shots_per_class: 8,
        seeds: vec![1],
        prompt: PromptSettings {
            token_dim: 16,
            ..PromptSettings::default()
        },
        ..TrainConfig::default()
    }
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut args = GenArgs::new(dir.path().join("data"));
        args.dim = Some(16);
        args.train = Some(20);
        args.val = Some(10);
        args.test = Some(20);
        cmd_gen(&args).unwrap();
        std::fs::write(
            dir.path().join("config.toml"),
            toml::to_string(&small_config()).unwrap(),
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn data(&self) -> PathBuf {
        self.path("data").join(EMBEDDINGS_FILE)
    }

    fn descriptions(&self) -> PathBuf {
        self.path("data").join(DESCRIPTIONS_FILE)
    }

    fn train_args(&self, out: &str) -> TrainArgs {
        TrainArgs {
            config: Some(self.path("config.toml")),
            data: Some(self.data()),
            descriptions: Some(self.descriptions()),
            out: Some(self.path(out)),
            ..TrainArgs::default()
        }
    }

    fn ablate_args(&self, out: &str, grid: &str) -> AblateArgs {
        AblateArgs {
            config: Some(self.path("config.toml")),
            data: self.data(),
            descriptions: self.descriptions(),
            out: self.path(out),
            seeds: None,
            grid: grid.into(),
        }
    }
}

fn eval_args(
    params: PathBuf,
    data: PathBuf,
    modality: Option<ModalityArg>,
    split: SplitArg,
) -> EvalArgs {
    EvalArgs {
        params,
        data,
        modality,
        split,
        out: None,
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        cmd_gen(&GenArgs::new(dir.path().join(out))).unwrap();
    }
    for file in [
        EMBEDDINGS_FILE,
        DESCRIPTIONS_FILE,
        "ground_truth.toml",
        "spec.toml",
    ] {
        assert_eq!(
            read(&dir.path().join("a").join(file)),
            read(&dir.path().join("b").join(file)),
            "{file}"
        );
    }
}

#[test]
fn gen_writes_requested_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = GenArgs::new(dir.path());
    args.classes = Some(4);
    args.train = Some(7);
    args.val = Some(3);
    args.test = Some(5);
    let out = cmd_gen(&args).unwrap();
    for class in 0..4 {
        for m in Modality::ALL {
            assert_eq!(out.counts[&(class, m, Split::Train)], 7);
            assert_eq!(out.counts[&(class, m, Split::Val)], 3);
            assert_eq!(out.counts[&(class, m, Split::Test)], 5);
        }
    }
    assert_eq!(out.counts.len(), 24);
}

#[test]
fn gen_rejects_more_classes_than_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = GenArgs::new(dir.path());
    args.classes = Some(40);
    args.dim = Some(32);
    let err = cmd_gen(&args).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn shipped_default_config_matches_library_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let parsed: TrainConfig = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(parsed, TrainConfig::default());
}

#[test]
fn missing_config_key_is_named() {
    let fx = Fixture::new();
    let text = toml::to_string(&small_config()).unwrap();
    let without: String = text
        .lines()
        .filter(|l| !l.starts_with("alpha"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(fx.path("config.toml"), without).unwrap();
    let err = cmd_train(&fx.train_args("run")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("alpha"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let fx = Fixture::new();
    let text = toml::to_string(&small_config()).unwrap();
    std::fs::write(
        fx.path("config.toml"),
        format!("learning_rate = 0.1\n{text}"),
    )
    .unwrap();
    let err = cmd_train(&fx.train_args("run")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("learning_rate"), "{err}");
}

#[test]
fn seeds_flag_runs_each_seed() {
    let fx = Fixture::new();
    let args = TrainArgs {
        seeds: Some(vec![1, 2, 3]),
        ..fx.train_args("run")
    };
    let out = cmd_train(&args).unwrap();
    assert_eq!(
        out.reports.iter().map(|r| r.seed).collect::<Vec<_>>(),
        [1, 2, 3]
    );
    assert_eq!(out.summary.seeds, [1, 2, 3]);
    for seed in 1..=3 {
        let dir = out.out_dir.join(format!("seed-{seed}"));
        for file in [
            "report.toml",
            "params.toml",
            "class_embeddings.csv",
            "projection.csv",
        ] {
            assert!(dir.join(file).is_file(), "{}", dir.join(file).display());
        }
    }
    let mean = out.reports.iter().map(|r| r.high.accuracy).sum::<f64>() / 3.0;
    assert!((out.summary.high_acc - mean).abs() < 1e-12);
}

#[test]
fn manifest_records_hashes_of_every_artifact() {
    let fx = Fixture::new();
    let out = cmd_train(&fx.train_args("run")).unwrap();
    assert_eq!(out.manifest.inputs.len(), 2);
    for (rel, hash) in &out.manifest.artifacts {
        let actual = kmat_cli::files::sha256_file(&out.out_dir.join(rel)).unwrap();
        assert_eq!(&actual, hash, "{rel}");
    }
    assert!(out.manifest.artifacts.contains_key(SUMMARY_FILE));
}

#[test]
fn replay_refuses_changed_inputs() {
    let fx = Fixture::new();
    cmd_train(&fx.train_args("run")).unwrap();
    let mut text = std::fs::read_to_string(fx.data()).unwrap();
    let last = text.lines().last().unwrap().to_owned();
    text.push_str(&last);
    text.push('\n');
    std::fs::write(fx.data(), text).unwrap();
    let err = cmd_train(&TrainArgs {
        manifest: Some(fx.path("run").join(MANIFEST_FILE)),
        out: Some(fx.path("again")),
        ..TrainArgs::default()
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn eval_reproduces_training_metrics() {
    let fx = Fixture::new();
    let out = cmd_train(&fx.train_args("run")).unwrap();
    let report = &out.reports[0];
    let params = out.out_dir.join("seed-1/params.toml");
    let both = cmd_eval(&eval_args(params.clone(), fx.data(), None, SplitArg::Test)).unwrap();
    assert_eq!(both.high.as_ref(), Some(&report.high));
    assert_eq!(both.low.as_ref(), Some(&report.low));
    assert_eq!(both.harmonic_acc, Some(report.harmonic_acc));
    assert_eq!(both.harmonic_f1, Some(report.harmonic_f1));

    let high = cmd_eval(&eval_args(
        params,
        fx.data(),
        Some(ModalityArg::High),
        SplitArg::Test,
    ))
    .unwrap();
    assert_eq!(high.high.as_ref(), Some(&report.high));
    assert!(high.low.is_none() && high.harmonic_acc.is_none());
}

#[test]
fn training_split_scores_at_least_test_split() {
    let fx = Fixture::new();
    let config = TrainConfig {
        epochs: 20,
        ..small_config()
    };
    std::fs::write(fx.path("config.toml"), toml::to_string(&config).unwrap()).unwrap();
    let out = cmd_train(&fx.train_args("run")).unwrap();
    let params = out.out_dir.join("seed-1/params.toml");
    let score = |split| {
        cmd_eval(&eval_args(
            params.clone(),
            fx.data(),
            Some(ModalityArg::High),
            split,
        ))
        .unwrap()
        .high
        .unwrap()
        .accuracy
    };
    assert!(score(SplitArg::Train) >= score(SplitArg::Test));
}

#[test]
fn eval_rejects_mismatched_data() {
    let fx = Fixture::new();
    let out = cmd_train(&fx.train_args("run")).unwrap();
    let mut args = GenArgs::new(fx.path("other"));
    args.dim = Some(8);
    cmd_gen(&args).unwrap();
    let err = cmd_eval(&eval_args(
        out.out_dir.join("seed-1/params.toml"),
        fx.path("other").join(EMBEDDINGS_FILE),
        None,
        SplitArg::Test,
    ))
    .unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn one_cell_grid_has_zero_improvement() {
    let fx = Fixture::new();
    let out = cmd_ablate(&fx.ablate_args("ablate", "csc+msc+anc")).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(
        format!(
            "{:.2}/{:.2}",
            out.rows[0].rel_impr_acc, out.rows[0].rel_impr_f1
        ),
        "0.00/0.00"
    );
}

#[test]
fn reported_grid_table_is_complete_and_consistent() {
    let fx = Fixture::new();
    cmd_ablate(&fx.ablate_args("ablate", "reported")).unwrap();
    let csv = std::fs::read_to_string(fx.path("ablate").join(TABLE_CSV)).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let num = |r: &Vec<&str>, name: &str| r[col(name)].parse::<f64>().unwrap();
    let base_acc = num(&rows[0], "h_acc");
    let base_f1 = num(&rows[0], "h_f1");
    for r in &rows {
        let expected_acc = 100.0 * (num(r, "h_acc") - base_acc) / base_acc;
        let expected_f1 = 100.0 * (num(r, "h_f1") - base_f1) / base_f1;
        assert!((num(r, "rel_impr_acc") - expected_acc).abs() < 1e-9);
        assert!((num(r, "rel_impr_f1") - expected_f1).abs() < 1e-9);
    }
}

fn kmat(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kmat"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let fx = Fixture::new();
    let s = |p: PathBuf| p.display().to_string();
    let run = |config: &str, data: &str| {
        kmat(&[
            "train",
            "--config",
            config,
            "--data",
            data,
            "--descriptions",
            &s(fx.descriptions()),
            "--out",
            &s(fx.path("run")),
        ])
    };
    let ok = run(&s(fx.path("config.toml")), &s(fx.data()));
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).contains("mean"));

    std::fs::write(fx.path("bad.toml"), "epochs = \"many\"\n").unwrap();
    assert_eq!(
        run(&s(fx.path("bad.toml")), &s(fx.data())).status.code(),
        Some(3)
    );
    assert_eq!(
        run(&s(fx.path("config.toml")), &s(fx.path("absent.txt")))
            .status
            .code(),
        Some(6)
    );

    std::fs::write(fx.path("garbled.txt"), "not,a,record\n").unwrap();
    assert_eq!(
        run(&s(fx.path("config.toml")), &s(fx.path("garbled.txt")))
            .status
            .code(),
        Some(4)
    );

    let eval = kmat(&[
        "eval",
        "--params",
        &s(fx.path("run/seed-1/params.toml")),
        "--data",
        &s(fx.data()),
        "--modality",
        "L",
    ]);
    assert_eq!(eval.status.code(), Some(0));
    let text = String::from_utf8_lossy(&eval.stdout);
    assert!(
        text.contains("L: ACC") && !text.contains("H: ACC") && !text.contains("harmonic"),
        "{text}"
    );
}
