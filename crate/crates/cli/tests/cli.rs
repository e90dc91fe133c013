use std::path::Path;
use std::process::{Command, Output};

fn quarts(run_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quarts"))
        .env("QUARTS_RUN_DIR", run_dir)
        .args(args)
        .output()
        .expect("spawn quarts")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "seed = 3
items = 120
labeled_pairs = 500
log_pairs = 300
embed = 6
hidden = 6
latent = 3
dssm_hidden = 6
batch_size = 32
lr = 1e-2
clf_epochs = 1
ved_epochs = 1
e2e_epochs = 1
baseline_epochs = 1
generation_samples = 20
";

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = quarts(tmp.path(), &["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("max rel error"));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn missing_prerequisite_exits_two_and_names_the_phase() {
    let tmp = tempfile::tempdir().unwrap();
    let o = quarts(tmp.path(), &["pretrain-classifier"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gen-data"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_two_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nlearning_rate = 0.1\n").unwrap();
    let o = quarts(tmp.path(), &["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn full_run_through_the_environment_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();

    let o = quarts(&run, &["all", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("e2e"));
    assert!(run.join("manifest.json").exists());
    assert!(run.join("reports/metrics.json").exists());

    // later phases pick the saved config up from the run directory
    let o = quarts(&run, &["train-e2e", "--p", "0", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("switched 0/"));
    let o = quarts(&run, &["eval"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let test = std::fs::read_to_string(run.join("data/test.tsv")).unwrap();
    let row: Vec<&str> = test.lines().nth(1).unwrap().split('\t').collect();
    let (title, query) = (row[0], row[1]);

    let o = quarts(&run, &["generate", "--title", title, "--query", query, "--beam", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(stdout(&o).starts_with("title\tsource_query\tgenerated\tscore\toracle"));

    let out = tmp.path().join("map.json");
    let o = quarts(&run, &["heatmap", "--title", title, "--query", query, "--format", "json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(json.is_object());

    let o = quarts(&run, &["knn", "--query", query, "-k", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!((1..=2).contains(&stdout(&o).lines().count()));

    let o = quarts(&run, &["train-e2e", "--p", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}
