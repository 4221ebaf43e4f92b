use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bitfit::analysis::{param_fraction_report, BiasChangeReport, CsvTable};
use bitfit::experiment::{
    cmd_analyze, cmd_finetune, cmd_pretrain, cmd_run, ExperimentConfig, OutputDir, PretrainLog, RegimeRun,
    METADATA_FILE,
};
use bitfit::model::init_pretraining_store;
use bitfit::params::{load_checkpoint, save_checkpoint, BiasKind};
use bitfit::trainer::aggregate_seeds;
use bitfit::Error;

const SMALL: &str = r#"
regimes = ["frozen", "bitfit"]

[model]
num_layers = 1
num_heads = 2
hidden = 8
mlp_width = 16
vocab_size = 36
max_seq_len = 16
dropout_p = 0.1
num_classes = 4

[pretrain]
corpus_size = 120
init_seed = 3
[pretrain.mlm]
steps = 10
batch_size = 8
heldout = 16

[[tasks]]
name = "single"
kind = "single"
n_train = 24
n_dev = 12
train_size = 16

[train]
max_epochs = 2
seeds = [0, 1, 2]
learning_rates = [1e-3, 4e-3]

[sweep]
task = "single"
sizes = [8, 24]
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SMALL).unwrap()
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn zero_step_pretraining_saves_the_initialization() {
    let mut cfg = small();
    cfg.pretrain.mlm.steps = 0;
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::new(dir.path());
    cmd_pretrain(&cfg, &out).unwrap();
    let saved = load_checkpoint(&out.pretrained()).unwrap();
    let fresh = init_pretraining_store(&cfg.model, cfg.pretrain.init_seed).unwrap();
    assert_eq!(saved, fresh);
}

#[test]
fn pretraining_is_byte_reproducible_and_logged() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let report = cmd_pretrain(&cfg, &OutputDir::new(a.path())).unwrap();
    cmd_pretrain(&cfg, &OutputDir::new(b.path())).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    let text = fs::read_to_string(OutputDir::new(a.path()).pretrain_log()).unwrap();
    let log: PretrainLog = serde_json::from_str(&text).unwrap();
    assert_eq!(log.report.final_train_loss(), report.final_train_loss());
    assert_eq!(log.report.final_heldout_loss, report.final_heldout_loss);
}

#[test]
fn frozen_only_gives_a_single_row_with_the_reported_fraction() {
    let mut cfg = small();
    cfg.regimes = vec!["frozen".into()];
    cfg.sweep = None;
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::new(dir.path());
    cmd_pretrain(&cfg, &out).unwrap();
    cmd_finetune(&cfg, &out.pretrained(), &out).unwrap();
    let summary = CsvTable::read(&out.table("summary")).unwrap();
    assert_eq!(summary.rows.len(), 1);
    let col = summary.column("param_percent").unwrap();
    let reported: f64 = summary.rows[0][col].parse().unwrap();
    let expected = param_fraction_report(&[("model", cfg.model.clone())], &cfg.regimes().unwrap()).unwrap();
    assert_eq!(reported, expected[0].count.encoder_percent());
}

#[test]
fn summary_is_recomputable_from_records() {
    let mut cfg = small();
    cfg.sweep = None;
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::new(dir.path());
    cmd_pretrain(&cfg, &out).unwrap();
    cmd_finetune(&cfg, &out.pretrained(), &out).unwrap();
    let summary = CsvTable::read(&out.table("summary")).unwrap();
    for row in &summary.rows {
        let run: RegimeRun =
            serde_json::from_str(&fs::read_to_string(out.run_file("single", &row[0])).unwrap()).unwrap();
        let best: Vec<f64> = run
            .records
            .iter()
            .filter(|r| r.lr == run.result.best_lr)
            .map(|r| r.metrics.dev_accuracy)
            .collect();
        assert_eq!(best.len(), 3);
        let agg = aggregate_seeds(&best).unwrap();
        let mean: f64 = row[summary.column("single_dev_mean").unwrap()].parse().unwrap();
        let std: f64 = row[summary.column("single_dev_std").unwrap()].parse().unwrap();
        assert_eq!((mean, std), (agg.mean, agg.std));
    }
}

#[test]
fn incompatible_checkpoint_is_a_config_error() {
    let cfg = small();
    let mut other = cfg.model.clone();
    other.hidden = 12;
    other.mlp_width = 24;
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    save_checkpoint(&init_pretraining_store(&other, 0).unwrap(), &ckpt).unwrap();
    let err = cmd_finetune(&cfg, &ckpt, &OutputDir::new(dir.path().join("o"))).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn analyze_names_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::new(dir.path());
    match cmd_analyze(&out) {
        Err(Error::MissingArtifact(p)) => assert!(p.ends_with("config.toml")),
        other => panic!("{other:?}"),
    }
    let mut cfg = small();
    cfg.sweep = None;
    cmd_pretrain(&cfg, &out).unwrap();
    match cmd_analyze(&out) {
        Err(Error::MissingArtifact(p)) => assert!(p.to_string_lossy().contains("single__frozen")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn end_to_end_outputs_and_determinism() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = OutputDir::new(a.path());
    let (_, ft, an) = cmd_run(&cfg, &out).unwrap();
    cmd_run(&cfg, &OutputDir::new(b.path())).unwrap();
    fs::write(a.path().join(METADATA_FILE), "1").unwrap();
    fs::write(b.path().join(METADATA_FILE), "2").unwrap();
    let (mut fa, mut fb) = (files(a.path()), files(b.path()));
    fa.remove(Path::new(METADATA_FILE));
    fb.remove(Path::new(METADATA_FILE));
    assert_eq!(fa, fb);
    for dir in ["checkpoints", "runs", "tables", "figures"] {
        assert!(fa.keys().any(|k| k.starts_with(dir)), "nothing under {dir}");
    }

    // The frozen encoder never moves; BitFit never moves the key bias.
    let frozen = BiasChangeReport::read_csv(&out.table("bias_change_single__frozen")).unwrap();
    assert!(frozen.values.iter().flatten().all(|&v| v == 0.0));
    let bitfit = BiasChangeReport::read_csv(&out.table("bias_change_single__bitfit")).unwrap();
    assert!(bitfit.row(BiasKind::Key).iter().all(|&v| v == 0.0));
    assert!(bitfit.row(BiasKind::Query).iter().any(|&v| v > 0.0));
    assert_eq!(an.bias_change.len(), 2);

    for name in ["bias_change_single__bitfit", "bias_change_single__frozen", "size_sweep"] {
        let svg = fs::read_to_string(out.figure(name)).unwrap();
        roxmltree::Document::parse(&svg).unwrap();
    }
    for (path, _) in fa.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "csv")) {
        let t = CsvTable::read(&a.path().join(path)).unwrap();
        assert!(!t.schema.is_empty() && t.version >= 1);
    }
    let sweep = ft.sweep.unwrap();
    assert_eq!(sweep.points.len(), 4);
    assert_eq!(an.sweep.unwrap(), sweep);
    assert_eq!(an.gaps.len(), 2);
}
