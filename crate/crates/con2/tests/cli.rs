use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use con2::config::{desk_synthetic, RunConfig};
use con2_core::dataprep::SyntheticConfig;

fn con2(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_con2"))
        .args(args)
        .env("CON2_ARTIFACT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 10 test items (5 + 5), 16 training images, `steps` updates.
fn write_config(dir: &Path, name: &str, steps: usize) -> PathBuf {
    let mut c: RunConfig = desk_synthetic();
    c.name = name.into();
    c.dataset.synthetic = SyntheticConfig { image_size: 16, train_normal: 16, test_normal: 5, test_anomalous: 5, ..SyntheticConfig::default() };
    c.train.steps = Some(steps);
    c.train.batch_size = 8;
    c.scoring.test_time_augmentations = 2;
    c.eval.embedding_train_samples = 10;
    c.eval.bench.sizes = vec![10, 100];
    c.eval.bench.queries = 16;
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, c.to_toml()).unwrap();
    path
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).skip(1).map(str::to_owned).collect()
}

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run", 200);
    let out = con2(&["train", cfg.to_str().unwrap(), "-q"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("run");
    assert!(run.join("checkpoint/manifest.json").is_file());
    assert!(run.join("checkpoint/params.bin").is_file());
    assert_eq!(data_rows(&run.join("loss_history.csv")).len(), 200);
    assert!(stdout(&out).contains("checkpoint = "));
}

#[test]
fn pipeline_verbs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run", 4);
    let cfg = cfg.to_str().unwrap();
    let run = dir.path().join("run");
    let ok = |args: &[&str]| {
        let o = con2(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        stdout(&o)
    };

    ok(&["train", cfg, "-q"]);
    let manifest = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(p.join("checkpoint/manifest.json")).unwrap()).unwrap()
    };
    let first = manifest(&run);
    ok(&["train", cfg, "-q"]);
    assert_eq!(first["config_hash"], manifest(&run)["config_hash"]);
    assert_eq!(first["params_sha256"], manifest(&run)["params_sha256"]);

    ok(&["score", cfg, "--variant", "nnd", "-A", "2"]);
    let scores = std::fs::read(run.join("scores_nnd.csv")).unwrap();
    assert_eq!(data_rows(&run.join("scores_nnd.csv")).len(), 10);
    ok(&["score", cfg, "--variant", "nnd", "-A", "2"]);
    assert_eq!(std::fs::read(run.join("scores_nnd.csv")).unwrap(), scores);

    let odd = con2(&["score", cfg, "-A", "3"], dir.path());
    assert_eq!(odd.status.code(), Some(2));
    assert!(stderr(&odd).contains("test_time_augmentations"));

    ok(&["score", cfg]);
    let eval = ok(&["eval", cfg]);
    for line in eval.lines().filter(|l| l.starts_with("auroc")) {
        let v: f64 = line.split(" = ").nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v), "{line}");
    }
    assert!(eval.contains("silhouette = "));
    let report = std::fs::read_to_string(run.join("eval/report.csv")).unwrap();
    assert!(report.starts_with("metric,variant,seed,value,config_hash\n"));
    assert!(run.join("eval/report.json").is_file());

    let ctx = ok(&["validate-context", cfg, "--augmentation", "invert"]);
    assert!(ctx.contains("alignment = 1\n"), "{ctx}");

    // 10 test items plus 10 training images.
    let emb = ok(&["export-embeddings", cfg]);
    assert!(emb.contains("embedding_rows = 40"));
    assert_eq!(data_rows(&run.join("embeddings.csv")).len(), 40);
    assert!(std::fs::read_to_string(run.join("embeddings.svg")).unwrap().contains("<svg"));

    let bench = ok(&["bench-scores", cfg]);
    assert!(bench.contains("lh_query_ratio = "));
    assert_eq!(data_rows(&run.join("bench_scores.csv")).len(), 2);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fresh", 2);
    let cfg = cfg.to_str().unwrap();

    // Nothing trained yet.
    let o = con2(&["score", cfg], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = con2(&["eval", cfg], dir.path());
    assert_eq!(o.status.code(), Some(4));

    let mut c = RunConfig::from_toml(&std::fs::read_to_string(cfg).unwrap()).unwrap();
    c.dataset.source = con2::config::DatasetSource::Folder;
    c.dataset.path = Some("/no/such/dataset".into());
    let bad = dir.path().join("missing.toml");
    std::fs::write(&bad, c.to_toml()).unwrap();
    let o = con2(&["train", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/dataset"));

    let text = std::fs::read_to_string(cfg).unwrap().replace("[train]\n", "[train]\nmomentum = 0.9\n");
    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, text).unwrap();
    let o = con2(&["train", typo.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("momentum"));

    let text = std::fs::read_to_string(cfg).unwrap().replace("learning_rate = 0.001", "learning_rate = 1e30");
    let huge = dir.path().join("huge.toml");
    std::fs::write(&huge, text.replace("steps = 2", "steps = 40").replace("weight_decay = 0.001", "weight_decay = 0.0")).unwrap();
    let o = con2(&["train", huge.to_str().unwrap(), "-q"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn single_class_score_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "single", 2);
    let c = RunConfig::load(&cfg).unwrap();
    let file = dir.path().join("one_class.csv");
    let text = format!(
        "# config_hash={}\n# checkpoint_hash=x\n# variant=nnd\n# seed=0\n# test_time_augmentations=2\nid,score,label\na,0.1,0\nb,0.2,0\n",
        c.hash()
    );
    std::fs::write(&file, text).unwrap();
    let o = con2(&["eval", cfg.to_str().unwrap(), "--scores", file.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("single class"), "{}", stderr(&o));
}

#[test]
fn presets_are_listed_and_printed() {
    let dir = tempfile::tempdir().unwrap();
    let list = stdout(&con2(&["preset"], dir.path()));
    assert!(list.lines().any(|l| l == "br35h"));
    let toml = stdout(&con2(&["preset", "cifar10"], dir.path()));
    let c = RunConfig::from_toml(&toml).unwrap();
    assert_eq!((c.train.batch_size, c.scoring.test_time_augmentations, c.train.epochs), (512, 40, 2048));
    assert_eq!(con2(&["preset", "nope"], dir.path()).status.code(), Some(2));
}
