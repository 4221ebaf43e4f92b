//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for each,
//! and exits non-zero if any criterion fails.
//!
//! Criteria 5 to 8 share one run of `configs/default.toml`, written under the
//! cargo target tmp dir.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bitfit::analysis::{
    bias_change, generalization_gap, mean_abs_change, param_fraction_report, size_sweep, BiasChangeReport,
    SweepResult,
};
use bitfit::autodiff::{grad_check, GradCheckConfig, Tape};
use bitfit::experiment::{
    cmd_analyze, cmd_finetune, cmd_pretrain, cmd_run, load_encoder, resolve_regime, task_data, AnalyzeSummary,
    ExperimentConfig, FinetuneSummary, OutputDir, METADATA_FILE,
};
use bitfit::model::{
    attach_task_head, encode, init_pretraining_store, mlm_objective, task_loss, Batch, HeadKind, ModelConfig,
};
use bitfit::params::names::{self, BiasKind};
use bitfit::params::{count_params, Gradients, ParameterStore, Regime, Selector};
use bitfit::trainer::{adamw_step, AdamState, AdamWConfig, RunResult};
use bitfit::{Result, RngStream, Tensor};

const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

struct Outcome {
    pass: bool,
    details: String,
}

fn outcome(pass: bool, details: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        details: details.into(),
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// 1. parameter fractions

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let regimes = Regime::standard();
    let rows = param_fraction_report(
        &[("base", ModelConfig::bert_base()), ("large", ModelConfig::bert_large())],
        &regimes,
    )?;
    let elapsed = start.elapsed();
    let expected = [
        ("base", "bitfit", 0.09),
        ("large", "bitfit", 0.08),
        ("base", "bq_bm2", 0.04),
        ("base", "bm2", 0.03),
        ("base", "bq", 0.01),
        ("base", "frozen", 0.00),
    ];
    let mut pass = elapsed < Duration::from_secs(1);
    let mut shown = Vec::new();
    for (config, regime, want) in expected {
        let row = rows
            .iter()
            .find(|r| r.config == config && r.regime == regime)
            .expect("row present");
        let rounded = (row.count.encoder_percent() * 100.0).round() / 100.0;
        pass &= (rounded - want).abs() <= 0.01 + 1e-12;
        shown.push(format!("{config}/{regime} {}", row.percent_label()));
    }
    Ok(outcome(pass, format!("{}; {}", shown.join(", "), secs(elapsed))))
}

// ---------------------------------------------------------------------------
// 2. key-bias nullity

fn randomized_store(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    let mut store = init_pretraining_store(cfg, seed)?;
    let mut r = RngStream::new(seed, "acceptance-perturb");
    for (name, t) in store.iter_mut() {
        let std = if names::is_bias(name) || name.contains("LayerNorm") { 0.3 } else { 0.4 };
        let base = if name.contains("LayerNorm.weight") { 1.0 } else { 0.0 };
        for v in t.data_mut() {
            *v = base + r.normal(0.0, std);
        }
    }
    Ok(store)
}

fn random_batch(cfg: &ModelConfig, rows: usize, seq_len: usize, rng: &mut RngStream) -> Result<Batch> {
    let mut tokens = Vec::with_capacity(rows * seq_len);
    for _ in 0..rows {
        tokens.push(bitfit::model::CLS_ID);
        for _ in 1..seq_len {
            tokens.push(bitfit::model::NUM_SPECIAL + rng.below(cfg.vocab_size - bitfit::model::NUM_SPECIAL));
        }
    }
    let segments = (0..rows * seq_len).map(|i| usize::from(i % seq_len >= seq_len / 2)).collect();
    Batch::new(tokens, segments, seq_len)
}

fn key_bias_grads(store: &ParameterStore, cfg: &ModelConfig, batch: &Batch, mlm: bool) -> Result<Gradients> {
    let mut store = store.clone();
    let trainable = Selector::full().resolve(&store.layout())?;
    store.apply_trainable(&trainable);
    let mut tape = Tape::new();
    let params = store.bind(&mut tape);
    let mut rng = RngStream::new(0, "dropout");
    let loss = if mlm {
        let positions: Vec<usize> = (0..batch.tokens.len()).filter(|i| i % 3 == 1).collect();
        mlm_objective(&mut tape, &params, cfg, batch, &positions, true, &mut rng)?.0
    } else {
        let labels: Vec<usize> = (0..batch.batch_size()).map(|i| i % cfg.num_classes).collect();
        task_loss(&mut tape, &params, cfg, batch, HeadKind::Classifier, &labels, true, &mut rng)?.0
    };
    tape.backward(loss)?;
    Ok(params.gradients(&tape))
}

fn criterion_2() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    let eval_cfg = ModelConfig {
        dropout_p: 0.0,
        ..cfg.clone()
    };
    let mut rng = RngStream::new(1, "acceptance-batches");
    let mut max_grad = 0.0f64;
    let mut live_query = true;
    let mut max_shift = 0.0f64;
    for seed in 0..3 {
        let encoder = randomized_store(&cfg, seed)?;
        let with_head = attach_task_head(&encoder, &cfg, HeadKind::Classifier, cfg.num_classes, seed)?;
        let batch = random_batch(&cfg, 4, 12, &mut rng)?;
        for (store, mlm) in [(&with_head, false), (&encoder, true)] {
            let g = key_bias_grads(store, &cfg, &batch, mlm)?;
            for l in 0..cfg.num_layers {
                max_grad = g[&BiasKind::Key.bias_name(l)].iter().fold(max_grad, |m, v| m.max(v.abs()));
                live_query &= g[&BiasKind::Query.bias_name(l)].iter().any(|&v| v != 0.0);
            }
        }

        let tokens = &batch.tokens[..batch.seq_len];
        let (base, _) = encode(tokens, &encoder, &eval_cfg, false, &mut rng.derive("eval"), false)?;
        let mut moved = encoder.clone();
        for l in 0..cfg.num_layers {
            for v in moved.get_mut(&BiasKind::Key.bias_name(l)).expect("key bias").data_mut() {
                *v += rng.normal(0.0, 5.0);
            }
        }
        let (after, _) = encode(tokens, &moved, &eval_cfg, false, &mut rng.derive("eval"), false)?;
        max_shift = max_shift.max(after.max_abs_diff(&base));
    }
    let elapsed = start.elapsed();
    let pass = max_grad <= 1e-12 && max_shift <= 1e-9 && live_query && elapsed < Duration::from_secs(10);
    Ok(outcome(
        pass,
        format!(
            "max |dL/db_k| {max_grad:.1e} over task and MLM losses, max output shift {max_shift:.1e}; {}",
            secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------------------
// 3. gradient check

fn criterion_3() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ModelConfig {
        dropout_p: 0.0,
        ..ModelConfig::tiny()
    };
    debug_assert_eq!((cfg.num_layers, cfg.num_heads, cfg.hidden, cfg.mlp_width, cfg.vocab_size), (2, 2, 8, 16, 50));
    let encoder = randomized_store(&cfg, 11)?;
    let mut store = attach_task_head(&encoder, &cfg, HeadKind::Classifier, 3, 1)?;
    for v in store.get_mut(names::CLASSIFIER_WEIGHT).expect("head").data_mut() {
        *v *= 20.0;
    }
    let trainable = Selector::full().resolve(&store.layout())?;
    store.apply_trainable(&trainable);
    let batch = random_batch(&cfg, 3, 6, &mut RngStream::new(2, "acceptance-gc"))?;
    let labels = [2, 0, 1];
    let loss_and_grads = |s: &ParameterStore| -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let params = s.bind(&mut tape);
        let mut rng = RngStream::new(0, "unused");
        let (loss, _) = task_loss(&mut tape, &params, &cfg, &batch, HeadKind::Classifier, &labels, false, &mut rng)?;
        tape.backward(loss)?;
        Ok((tape.value(loss).item(), params.gradients(&tape)))
    };
    let (_, analytic) = loss_and_grads(&store)?;
    let gc = GradCheckConfig {
        max_coords_per_param: 12,
        seed: 3,
        ..Default::default()
    };
    let report = grad_check(&mut store, &analytic, |s| Ok(loss_and_grads(s)?.0), &gc)?;
    let elapsed = start.elapsed();
    let pass = report.coords_checked >= 200 && report.passed() && elapsed < Duration::from_secs(60);
    let worst = report.worst().map_or(String::new(), |w| format!(" (worst {})", w.name));
    Ok(outcome(
        pass,
        format!(
            "{} coordinates, max relative error {:.2e}{worst}; {}",
            report.coords_checked,
            report.max_rel_error,
            secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------------------
// 4. freeze integrity

fn criterion_4() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    let encoder = init_pretraining_store(&cfg, 5)?;
    let mut store = attach_task_head(&encoder, &cfg, HeadKind::Classifier, 3, 5)?;
    let trainable = Selector::bitfit().resolve(&store.layout())?;
    store.apply_trainable(&trainable);
    let before = store.clone();
    let mut state = AdamState::new(&store, &trainable)?;
    let opt = AdamWConfig {
        lr: 1e-2,
        ..AdamWConfig::default()
    };
    let mut data_rng = RngStream::new(6, "acceptance-toy");
    let mut dropout = RngStream::new(6, "dropout");
    let steps = 500;
    for _ in 0..steps {
        let batch = random_batch(&cfg, 8, 8, &mut data_rng)?;
        // toy rule: class of the first content token
        let labels: Vec<usize> = batch.tokens.chunks(batch.seq_len).map(|row| row[1] % 3).collect();
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let (loss, _) = task_loss(&mut tape, &params, &cfg, &batch, HeadKind::Classifier, &labels, true, &mut dropout)?;
        tape.backward(loss)?;
        let grads = params.gradients(&tape);
        adamw_step(&mut store, &grads, &mut state, &opt)?;
    }
    let mut frozen_coords = 0usize;
    let mut changed_frozen = 0usize;
    let mut moved_biases = 0usize;
    for (name, t) in store.iter() {
        let old = before.get(name).expect("same names");
        let differs = t.data().iter().zip(old.data()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        if names::is_bias(name) {
            moved_biases += usize::from(differs > 0);
        } else if !names::is_head(name) {
            frozen_coords += t.len();
            changed_frozen += differs;
        }
    }
    let elapsed = start.elapsed();
    let pass = changed_frozen == 0 && moved_biases > 0 && state.step() == steps && elapsed < Duration::from_secs(120);
    Ok(outcome(
        pass,
        format!(
            "{steps} steps, {changed_frozen} of {frozen_coords} frozen coordinates changed, {moved_biases} bias tensors moved; {}",
            secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------------------
// shared default experiment

struct DefaultRun {
    cfg: ExperimentConfig,
    out: OutputDir,
    finetune: FinetuneSummary,
    analyze: AnalyzeSummary,
    /// Pretraining plus the regime comparison.
    comparison_time: Duration,
}

impl DefaultRun {
    fn result(&self, regime: &str) -> &RunResult {
        let task = &self.cfg.tasks[0].name;
        self.finetune.get(task, regime).unwrap_or_else(|| panic!("no run for {regime}"))
    }
}

fn default_run() -> Result<DefaultRun> {
    let mut cfg = ExperimentConfig::from_toml_str(DEFAULT_CONFIG)?;
    // the sweep is timed and checked on its own under criterion 6
    cfg.sweep = None;
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-default");
    if root.exists() {
        fs::remove_dir_all(&root).expect("stale acceptance output removable");
    }
    let out = OutputDir::new(root);
    let start = Instant::now();
    cmd_pretrain(&cfg, &out)?;
    let finetune = cmd_finetune(&cfg, &out.pretrained(), &out)?;
    let comparison_time = start.elapsed();
    let analyze = cmd_analyze(&out)?;
    Ok(DefaultRun {
        cfg,
        out,
        finetune,
        analyze,
        comparison_time,
    })
}

// ---------------------------------------------------------------------------
// 5. regime ordering

fn criterion_5(run: &DefaultRun) -> Result<Outcome> {
    let dev = |id: &str| run.result(id).dev.mean;
    let (full, bitfit, bq_bm2, bm2, bq, frozen, rand) = (
        dev("full"),
        dev("bitfit"),
        dev("bq_bm2"),
        dev("bm2"),
        dev("bq"),
        dev("frozen"),
        dev("rand_uniform"),
    );
    let checks = [
        ("|full-bitfit|<=3", (full - bitfit).abs() <= 0.03),
        ("bitfit>=bq_bm2", bitfit >= bq_bm2),
        ("bq_bm2>=max(bq,bm2)", bq_bm2 >= bq.max(bm2)),
        ("bitfit>=rand_uniform+2", bitfit >= rand + 0.02),
        (
            "trained>=frozen+5",
            [full, bitfit, bq_bm2, bm2, bq, rand].iter().all(|&a| a >= frozen + 0.05),
        ),
        ("runtime<20min", run.comparison_time < Duration::from_secs(20 * 60)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let table: Vec<String> = [
        ("full", full),
        ("bitfit", bitfit),
        ("bq_bm2", bq_bm2),
        ("bm2", bm2),
        ("bq", bq),
        ("rand_uniform", rand),
        ("frozen", frozen),
    ]
    .iter()
    .map(|(id, v)| format!("{id} {}", pct(*v)))
    .collect();
    let verdict = if failed.is_empty() {
        String::new()
    } else {
        format!("; failed: {}", failed.join(", "))
    };
    Ok(outcome(
        failed.is_empty(),
        format!("{}; {}{verdict}", table.join(", "), secs(run.comparison_time)),
    ))
}

// ---------------------------------------------------------------------------
// 6. small-data advantage

fn criterion_6(run: &DefaultRun) -> Result<Outcome> {
    let base = ExperimentConfig::from_toml_str(DEFAULT_CONFIG)?;
    let sweep = base.sweep.clone().expect("default config has a sweep");
    let spec = base.task(&sweep.task).expect("sweep task");
    let (full_data, _) = task_data(&base, spec)?;
    let encoder = load_encoder(&run.out.pretrained(), &base.model)?;
    let methods: Vec<Regime> = ["bitfit", "full"].iter().map(|m| resolve_regime(m)).collect::<Result<_>>()?;
    let start = Instant::now();
    let (result, _) = size_sweep(&encoder, &base.model, &full_data, &sweep.sizes, &methods, &base.train)?;
    let elapsed = start.elapsed();
    Ok(judge_sweep(&result, &sweep.sizes, elapsed))
}

fn judge_sweep(result: &SweepResult, sizes: &[usize], elapsed: Duration) -> Outcome {
    let (bitfit, full) = (result.series("bitfit"), result.series("full"));
    let mut pass = true;
    let mut points = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        let (b, f) = (bitfit[i], full[i]);
        assert_eq!((b.train_size, f.train_size), (size, size));
        let gated = i < 2;
        if gated {
            pass &= b.dev.mean >= f.dev.mean - f.dev.std;
        }
        points.push(format!(
            "n={size}{} bitfit {}±{} full {}±{}",
            if gated { "*" } else { "" },
            pct(b.dev.mean),
            pct(b.dev.std),
            pct(f.dev.mean),
            pct(f.dev.std)
        ));
    }
    outcome(pass, format!("{} (* gated); {}", points.join(", "), secs(elapsed)))
}

// ---------------------------------------------------------------------------
// 7. generalization gap

fn criterion_7(run: &DefaultRun) -> Result<Outcome> {
    let bitfit = generalization_gap(run.result("bitfit"))?;
    let full = generalization_gap(run.result("full"))?;
    // the analyze step wrote the same numbers from the records
    let task = &run.cfg.tasks[0].name;
    let logged = |id: &str| {
        run.analyze
            .gaps
            .iter()
            .find(|(t, r, _)| t == task && r == id)
            .map(|(_, _, g)| g.gap.mean)
    };
    let consistent = logged("bitfit") == Some(bitfit.gap.mean) && logged("full") == Some(full.gap.mean);
    Ok(outcome(
        bitfit.gap.mean <= full.gap.mean && consistent && bitfit.per_seed.len() == 5,
        format!(
            "mean train-dev gap bitfit {} vs full {} points over {} seeds",
            pct(bitfit.gap.mean),
            pct(full.gap.mean),
            bitfit.per_seed.len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. bias-change metric

fn bias_store(layers: usize, dim: usize, fill: impl Fn(usize, usize, usize) -> f64) -> Result<ParameterStore> {
    let mut s = ParameterStore::new();
    for l in 0..layers {
        for (k, kind) in BiasKind::ALL.iter().enumerate() {
            let data = (0..dim).map(|i| fill(l, k, i)).collect();
            s.insert(kind.bias_name(l), Tensor::vector(data))?;
        }
    }
    Ok(s)
}

fn criterion_8(run: &DefaultRun) -> Result<Outcome> {
    let hand = mean_abs_change(&[1.0, 2.0], &[2.0, 4.0])?;
    let same = bias_store(2, 4, |l, k, i| (l * 31 + k * 7 + i) as f64 * 0.1)?;
    let identity = bias_change(&same, &same, "a", "a")?;
    let mut r = RngStream::new(9, "acceptance-bias");
    let (b0, bf): (Vec<f64>, Vec<f64>) = (0..16).map(|_| (r.normal(0.0, 1.0), r.normal(0.0, 1.0))).unzip();
    let mut oracle = 0.0;
    for i in 0..16 {
        oracle += (b0[i] - bf[i]).abs();
    }
    oracle /= 16.0;
    let random = mean_abs_change(&b0, &bf)?;
    let hand_ok = hand == 1.5 && identity.values.iter().flatten().all(|&v| v == 0.0) && (random - oracle).abs() < 1e-15;

    let task = &run.cfg.tasks[0].name;
    let mut csvs = 0usize;
    let mut key_zero = true;
    for (t, regime, _) in &run.analyze.bias_change {
        if t != task || regime == "full" {
            continue;
        }
        let report = BiasChangeReport::read_csv(&run.out.table(&format!("bias_change_{t}__{regime}")))?;
        key_zero &= report.row(BiasKind::Key).iter().all(|&v| v == 0.0);
        csvs += 1;
    }
    let bitfit = BiasChangeReport::read_csv(&run.out.table(&format!("bias_change_{task}__bitfit")))?;
    let bitfit_moves = bitfit.row(BiasKind::Query).iter().any(|&v| v > 0.0);
    Ok(outcome(
        hand_ok && key_zero && bitfit_moves && csvs > 0,
        format!(
            "hand example {hand}, identity report zero, dim-16 oracle diff {:.0e}; b_k row zero in {csvs} emitted CSVs (bitfit b_q max {:.2e})",
            (random - oracle).abs(),
            bitfit.row(BiasKind::Query).iter().fold(0.0f64, |m, &v| m.max(v))
        ),
    ))
}

// ---------------------------------------------------------------------------
// 9. determinism

const SMALL: &str = r#"
regimes = ["full", "bitfit", "frozen", "rand_uniform"]

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
corpus_size = 200
[pretrain.mlm]
steps = 20
batch_size = 8
heldout = 32

[[tasks]]
name = "single"
kind = "single"
n_train = 48
n_dev = 16
train_size = 32

[train]
max_epochs = 2
seeds = [0, 1, 2]
learning_rates = [1e-3, 4e-3]

[sweep]
task = "single"
sizes = [16, 48]
"#;

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).expect("readable dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).expect("under root").to_path_buf(), fs::read(&p).expect("readable"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out.remove(Path::new(METADATA_FILE));
    out
}

fn criterion_9() -> Result<Outcome> {
    let cfg = ExperimentConfig::from_toml_str(SMALL)?;
    let base = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let dir = base.join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).expect("stale acceptance output removable");
        }
        cmd_run(&cfg, &OutputDir::new(&dir))?;
        trees.push(files(&dir));
    }
    let (a, b) = (&trees[0], &trees[1]);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let count = |ext: &str| a.keys().filter(|k| k.extension().is_some_and(|e| e == ext)).count();
    Ok(outcome(
        differing.is_empty() && count("csv") > 0 && count("svg") > 0,
        if differing.is_empty() {
            format!("{} files identical across two runs ({} CSV, {} SVG)", a.len(), count("csv"), count("svg"))
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

// ---------------------------------------------------------------------------
// 10. optimizer-state economy

fn criterion_10(run: &DefaultRun) -> Result<Outcome> {
    // shapes are all the state needs, so the BERT-base store is left at zero
    let cfg = ModelConfig::bert_base();
    let layout = cfg.finetune_layout(HeadKind::Classifier);
    let mut store = ParameterStore::new();
    for spec in &layout.specs {
        store.insert(spec.name.clone(), Tensor::zeros(&spec.shape))?;
    }
    let selector = Selector::bitfit();
    let trainable = selector.resolve(&layout)?;
    let state = AdamState::new(&store, &trainable)?;
    drop(store);
    let count = count_params(&layout, &selector)?;
    let base_ok = state.tracked_coords() == count.trainable_count && state.element_count() == 2 * count.trainable_count;

    // every seed of the default BitFit run reports what its optimizer tracked
    let bitfit = run.result("bitfit");
    let run_ok = bitfit
        .per_lr
        .iter()
        .flat_map(|r| &r.runs)
        .all(|s| s.optimizer_coords == bitfit.param_count.trainable_count);
    Ok(outcome(
        base_ok && run_ok,
        format!(
            "BERT-base BitFit state tracks {} of {} coordinates ({:.3}%), {} stored moments; default run {} per seed",
            state.tracked_coords(),
            count.total_count,
            100.0 * state.tracked_coords() as f64 / count.total_count as f64,
            state.element_count(),
            bitfit.param_count.trainable_count
        ),
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let names = [
        "parameter fractions",
        "key-bias nullity",
        "gradient check",
        "freeze integrity",
        "regime ordering",
        "small-data advantage",
        "generalization gap",
        "bias-change metric",
        "determinism",
        "optimizer-state economy",
    ];
    let mut stdout = std::io::stdout();
    let mut report = |n: usize, r: Result<Outcome>| -> bool {
        let (pass, details) = match r {
            Ok(o) => (o.pass, o.details),
            Err(e) => (false, format!("error: {e}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        writeln!(stdout, "criterion {n} ({}): {verdict} ({details})", names[n - 1]).expect("stdout");
        stdout.flush().expect("stdout");
        pass
    };

    let mut all = true;
    all &= report(1, criterion_1());
    all &= report(2, criterion_2());
    all &= report(3, criterion_3());
    all &= report(4, criterion_4());
    match default_run() {
        Ok(run) => {
            all &= report(5, criterion_5(&run));
            all &= report(6, criterion_6(&run));
            all &= report(7, criterion_7(&run));
            all &= report(8, criterion_8(&run));
            all &= report(9, criterion_9());
            all &= report(10, criterion_10(&run));
        }
        Err(e) => {
            for n in [5, 6, 7, 8, 10] {
                report(n, Err(bitfit::Error::InvalidArgument(format!("default run failed: {e}"))));
            }
            report(9, criterion_9());
            all = false;
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
