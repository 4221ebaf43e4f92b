use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
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
corpus_size = 80
[pretrain.mlm]
steps = 4
batch_size = 8
heldout = 16

[[tasks]]
name = "single"
kind = "single"
n_train = 16
n_dev = 8

[train]
max_epochs = 1
seeds = [0, 1, 2]
learning_rates = [1e-3]
"#;

fn bitfit(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bitfit"));
    cmd.args(args).env_remove("BITFIT_OUT");
    if let Some(p) = env_out {
        cmd.env("BITFIT_OUT", p);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_uses_env_output_dir_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("env-out");
    let o = bitfit(&["run", "--config", &cfg], Some(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metadata.json", "config.toml", "tables/summary.csv", "figures/bias_change_single__bitfit.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let o = bitfit(&["analyze"], Some(&out));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path, offset: &str| {
        let o = bitfit(
            &["pretrain", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed-offset", offset],
            None,
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("checkpoints/pretrained/params.bin")).unwrap()
    };
    assert_ne!(args(&a, "0"), args(&b, "5"));

    let o = bitfit(
        &["finetune", "--config", &cfg, "--out", a.to_str().unwrap(), "--regimes", "bq,frozen"],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(a.join("runs/single__bq.json").exists());
    assert!(!a.join("runs/single__bitfit.json").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &CONFIG.replace("max_epochs = 1", "max_epochs = \"x\""));
    let o = bitfit(&["pretrain", "--config", &bad, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_epochs"));

    let good = write_config(dir.path(), CONFIG);
    let o = bitfit(
        &["pretrain", "--config", &good, "--out", dir.path().to_str().unwrap(), "--regimes", "nonsense"],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    let o = bitfit(&["pretrain"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = bitfit(&["analyze", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(4));
    let cfg = write_config(dir.path(), CONFIG);
    let o = bitfit(&["finetune", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pretrained"));
}

#[test]
fn fractions_prints_the_table() {
    let o = bitfit(&["fractions"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("bert_base,bitfit,bitfit,102144"));
}
