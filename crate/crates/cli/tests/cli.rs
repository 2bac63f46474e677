use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
seeds = [0, 1]

[synth]
symptoms = 12
relevant_symptoms = 4
cluster_symptoms = 3
labeled_positives = 20
negative_pool = 120
unlabeled = 200
test = 400
prevalence = 0.05

[model]
feature_dim = 38
latent_dim = 4
d_hidden = [8, 8, 6, 6, 4]
g_hidden = [4, 6, 6, 8, 8]

[train]
epochs = 2
batch_size = 16
eval_every = 1

[[arms]]
name = "nn_d"
loss = { use_generator = false, use_unlabeled = false, use_fm = false, use_pt = false, use_ent = false }

[[arms]]
name = "ssl_fm_pt"
loss = { use_generator = true, use_unlabeled = true, use_fm = true, use_pt = true, use_ent = false }
"#;

fn ssgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssgan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ssgan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("exp.toml");
    std::fs::write(&config, SMALL).unwrap();
    Workspace { _dir: dir, root, config }
}

/// synth + train-mode featurize into `root/data`, test features into `root/test`.
fn prepare(w: &Workspace) -> (PathBuf, PathBuf) {
    let cohort = w.root.join("cohort");
    let data = w.root.join("data");
    let test = w.root.join("test");
    ok(&["synth", "--config", s(&w.config), "--out", s(&cohort)]);
    ok(&[
        "featurize",
        "--config",
        s(&w.config),
        "--out",
        s(&data),
        s(&cohort.join("labeled.jsonl")),
        s(&cohort.join("unlabeled.jsonl")),
    ]);
    ok(&[
        "featurize",
        "--config",
        s(&w.config),
        "--stats",
        s(&data.join("stats.json")),
        "--out",
        s(&test),
        s(&cohort.join("test.jsonl")),
    ]);
    (cohort, data)
}

#[test]
fn synth_writes_configured_sizes_and_is_repeatable() {
    let w = workspace();
    let a = w.root.join("a");
    let b = w.root.join("b");
    ok(&["synth", "--config", s(&w.config), "--out", s(&a)]);
    ok(&["synth", "--config", s(&w.config), "--out", s(&b)]);
    assert_eq!(lines(&a.join("labeled.jsonl")), 80);
    assert_eq!(lines(&a.join("unlabeled.jsonl")), 200);
    assert_eq!(lines(&a.join("test.jsonl")), 400);
    assert_eq!(lines(&a.join("test_labels.csv")), 401);
    for f in ["labeled.jsonl", "unlabeled.jsonl", "test.jsonl", "test_labels.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let positives = std::fs::read_to_string(a.join("test_labels.csv"))
        .unwrap()
        .lines()
        .filter(|l| l.ends_with(",1"))
        .count();
    assert_eq!(positives, 20);
}

#[test]
fn featurize_fits_then_reuses_stats() {
    let w = workspace();
    let (cohort, data) = prepare(&w);
    let header = std::fs::read_to_string(data.join("labeled_features.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 3 * 12 + 2 + 1);
    assert!(data.join("labeled_labels.csv").exists());
    assert!(!data.join("unlabeled_labels.csv").exists());

    let test = std::fs::read_to_string(w.root.join("test/test_features.csv")).unwrap();
    for line in test.lines().skip(1) {
        for v in line.split(',').skip(1) {
            let v: f64 = v.parse().unwrap();
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    let again = w.root.join("again");
    ok(&[
        "featurize",
        "--config",
        s(&w.config),
        "--out",
        s(&again),
        s(&cohort.join("labeled.jsonl")),
        s(&cohort.join("unlabeled.jsonl")),
    ]);
    for f in ["labeled_features.csv", "unlabeled_features.csv", "stats.json"] {
        assert_eq!(std::fs::read(data.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_never_needs_sealed_labels_and_evaluate_reports_prevalence() {
    let w = workspace();
    let (cohort, data) = prepare(&w);
    // the data directory holds no sealed labels at all
    assert!(!data.join("test_labels.csv").exists());
    let sealed = cohort.join("test_labels.csv");
    let hidden = w.root.join("hidden_labels.csv");
    std::fs::rename(&sealed, &hidden).unwrap();

    let run = w.root.join("run");
    ok(&["train", "--config", s(&w.config), "--arm", "ssl_fm_pt", "--data", s(&data), "--out", s(&run)]);
    for f in ["discriminator.ckpt", "generator.ckpt", "train_log.csv", "eval_log.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    // 80 labeled, 8 held out: 72 rows at batch 16 is 5 steps per epoch, 2 epochs,
    // five active terms per step
    assert_eq!(lines(&run.join("train_log.csv")), 1 + 2 * 5 * 5);

    let eval = w.root.join("eval");
    let out = ok(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("discriminator.ckpt")),
        "--features",
        s(&w.root.join("test/test_features.csv")),
        "--labels",
        s(&hidden),
        "--out",
        s(&eval),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("pr_auc"));
    let metrics = std::fs::read_to_string(eval.join("metrics.json")).unwrap();
    assert!(metrics.contains("\"prevalence\": 0.05"), "{metrics}");
    assert!(metrics.contains("\"n_pos\": 20"), "{metrics}");
    assert!(eval.join("pr_curve.csv").exists());
}

#[test]
fn logistic_arm_trains_and_scores() {
    let w = workspace();
    let (cohort, data) = prepare(&w);
    let run = w.root.join("lr");
    ok(&["train", "--config", s(&w.config), "--arm", "lr", "--data", s(&data), "--out", s(&run)]);
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("logistic.ckpt")),
        "--features",
        s(&w.root.join("test/test_features.csv")),
        "--labels",
        s(&cohort.join("test_labels.csv")),
        "--out",
        s(&w.root.join("lr_eval")),
    ]);
}

#[test]
fn unknown_arm_is_a_config_error() {
    let w = workspace();
    let (_, data) = prepare(&w);
    let out = ssgan(&["train", "--config", s(&w.config), "--arm", "nope", "--data", s(&data), "--out", s(&w.root)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nn_d") && err.contains("ssl_fm_pt"), "{err}");
}

#[test]
fn bad_config_exits_with_2() {
    let w = workspace();
    std::fs::write(&w.config, "seeds = []\n").unwrap();
    let out = ssgan(&["ablate", "--config", s(&w.config), "--out", s(&w.root)]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&w.config, "no_such_key = 1\n").unwrap();
    let out = ssgan(&["ablate", "--config", s(&w.config), "--out", s(&w.root)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_records_report_the_line() {
    let w = workspace();
    let bad = w.root.join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"age\":1,\"gender\":0,\"events\":[]}\nnot json\n").unwrap();
    let out = ssgan(&["featurize", "--config", s(&w.config), "--out", s(&w.root.join("f")), s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.jsonl:2"), "{err}");
}

#[test]
fn evaluate_rejects_width_mismatch() {
    let w = workspace();
    let (cohort, data) = prepare(&w);
    let run = w.root.join("run");
    ok(&["train", "--config", s(&w.config), "--arm", "nn_d", "--data", s(&data), "--out", s(&run)]);
    let narrow = w.root.join("narrow.csv");
    std::fs::write(&narrow, "id,a,b\nT000000,0,0\n").unwrap();
    let out = ssgan(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("discriminator.ckpt")),
        "--features",
        s(&narrow),
        "--labels",
        s(&cohort.join("test_labels.csv")),
        "--out",
        s(&w.root.join("e")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("38") && err.contains('2'), "{err}");
}

#[test]
fn ablate_table_has_rows_and_means_and_is_repeatable() {
    let w = workspace();
    let a = w.root.join("a");
    let b = w.root.join("b");
    ok(&["ablate", "--config", s(&w.config), "--out", s(&a)]);
    ok(&["ablate", "--config", s(&w.config), "--out", s(&b)]);
    let table = std::fs::read_to_string(a.join("ablation_table.csv")).unwrap();
    assert_eq!(table, std::fs::read_to_string(b.join("ablation_table.csv")).unwrap());
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 2 + 2);
    for arm in ["nn_d", "ssl_fm_pt"] {
        let per_seed: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == arm && r[1] != "mean")
            .map(|r| r[2].parse().unwrap())
            .collect();
        let mean: f64 = rows.iter().find(|r| r[0] == arm && r[1] == "mean").unwrap()[2].parse().unwrap();
        assert!((mean - per_seed.iter().sum::<f64>() / per_seed.len() as f64).abs() < 1e-12);
    }
    assert!(a.join("arms/ssl_fm_pt/seed1/metrics.json").exists());
}
