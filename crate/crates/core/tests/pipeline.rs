use std::path::Path;

use quarts_core::config::RunConfig;
use quarts_core::error::QuartsError;
use quarts_core::pipeline::{self, Baseline, E2eOptions, RunDir};

fn tiny(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        items: 120,
        labeled_pairs: 500,
        log_pairs: 300,
        embed: 6,
        hidden: 6,
        latent: 3,
        dssm_hidden: 6,
        batch_size: 32,
        lr: 1e-2,
        clf_epochs: 2,
        ved_epochs: 1,
        e2e_epochs: 1,
        baseline_epochs: 1,
        generation_samples: 20,
        ..RunConfig::default()
    }
}

fn profile(name: &str) -> RunConfig {
    RunConfig::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

fn phase_of(e: QuartsError) -> String {
    match e {
        QuartsError::Pipeline { phase, .. } => phase,
        other => panic!("expected a pipeline error, got {other}"),
    }
}

#[test]
fn missing_prerequisites_name_the_phase_to_run() {
    let cfg = tiny(1);
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    assert_eq!(phase_of(pipeline::pretrain_classifier(&cfg, &dir).unwrap_err()), pipeline::GEN_DATA);
    assert_eq!(phase_of(dir.load_config().unwrap_err()), pipeline::GEN_DATA);
    pipeline::gen_data(&cfg, &dir).unwrap();
    assert_eq!(phase_of(pipeline::pretrain_ved(&cfg, &dir).unwrap_err()), pipeline::BUILD_TRIPLES);
    assert_eq!(phase_of(pipeline::evaluate(&cfg, &dir).unwrap_err()), pipeline::PRETRAIN_CLASSIFIER);
    pipeline::build_triples_phase(&cfg, &dir).unwrap();
    assert_eq!(phase_of(pipeline::pretrain_ved(&cfg, &dir).unwrap_err()), pipeline::PRETRAIN_CLASSIFIER);
    pipeline::pretrain_classifier(&cfg, &dir).unwrap();
    let err = pipeline::train_e2e(&cfg, &dir, &E2eOptions::from_config(&cfg)).unwrap_err();
    assert_eq!(phase_of(err), pipeline::PRETRAIN_VED);
    // the dense baseline needs only the data
    pipeline::train_baseline(&cfg, &dir, Baseline::Dssm).unwrap();
}

#[test]
fn misspelled_config_key_is_rejected_by_name() {
    let err = RunConfig::from_toml("seed = 1\nbata = 5.0\n").unwrap_err();
    assert!(matches!(&err, QuartsError::Config(m) if m.contains("bata")), "{err}");
    assert!(RunConfig::from_toml("p = 1.0\n").is_err());
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

#[test]
fn profiles_load_and_full_values_reach_the_manifest() {
    let full = profile("full.toml");
    assert_eq!(full, RunConfig::default());
    assert_eq!((full.hidden, full.embed, full.batch_size), (300, 300, 128));
    assert_eq!((full.lr, full.ved_lr, full.dropout, full.beta), (1e-4, 1e-3, 0.1, 5.0));
    assert_eq!((full.lr_decay, full.lr_decay_every), (0.8, 10));
    let desk = profile("desk.toml");
    assert_eq!((desk.hidden, desk.embed, desk.batch_size), (64, 64, 32));

    // only the corpus is generated here; the manifest keeps the rest verbatim
    let small = RunConfig {
        items: 100,
        labeled_pairs: 300,
        log_pairs: 100,
        ..full
    };
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    pipeline::gen_data(&small, &dir).unwrap();
    let m = pipeline::read_manifest(&dir).unwrap();
    assert_eq!(m.config.as_ref(), Some(&small));
    assert_eq!(m.config_hash, small.hash());
    assert_eq!(dir.load_config().unwrap(), small);
    assert_eq!(m.datasets.len(), 8);
}

#[test]
fn p_zero_end_to_end_matches_the_naive_continuation() {
    let cfg = tiny(2);
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    pipeline::gen_data(&cfg, &dir).unwrap();
    pipeline::pretrain_classifier(&cfg, &dir).unwrap();
    pipeline::build_triples_phase(&cfg, &dir).unwrap();
    pipeline::pretrain_ved(&cfg, &dir).unwrap();
    let opts = E2eOptions {
        p: 0.0,
        epochs: 2,
        ..E2eOptions::from_config(&cfg)
    };
    let e2e = pipeline::train_e2e(&cfg, &dir, &opts).unwrap();
    assert!(e2e.iter().all(|s| s.s1 == 0));
    let naive_cfg = RunConfig {
        e2e_epochs: 2,
        ..cfg.clone()
    };
    let naive = pipeline::train_baseline(&naive_cfg, &dir, Baseline::Naive).unwrap();
    assert_eq!(e2e, naive);
    let report = pipeline::evaluate(&cfg, &dir).unwrap();
    let (a, b) = (report.model("e2e").unwrap(), report.model("naive").unwrap());
    assert_eq!((a.aupr, a.f1, a.threshold, a.hard_recall), (b.aupr, b.f1, b.threshold, b.hard_recall));
}

#[test]
fn rerunning_a_phase_reproduces_its_outputs() {
    let cfg = tiny(3);
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    pipeline::gen_data(&cfg, &dir).unwrap();
    pipeline::pretrain_classifier(&cfg, &dir).unwrap();
    let ckpt = std::fs::read(dir.checkpoint("classifier")).unwrap();
    let manifest = pipeline::read_manifest(&dir).unwrap();
    let log = pipeline::read_metrics_log(&dir).unwrap();
    assert_eq!(log.len(), cfg.clf_epochs);

    pipeline::pretrain_classifier(&cfg, &dir).unwrap();
    assert_eq!(std::fs::read(dir.checkpoint("classifier")).unwrap(), ckpt);
    assert_eq!(pipeline::read_manifest(&dir).unwrap(), manifest);
    assert_eq!(pipeline::read_metrics_log(&dir).unwrap(), log);
    assert_eq!(manifest.checkpoints["classifier"].sha256, pipeline::sha256_file(&dir.checkpoint("classifier")).unwrap());
}

#[test]
fn identical_configs_give_identical_runs() {
    let cfg = tiny(4);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, db) = (RunDir::new(a.path()), RunDir::new(b.path()));
    let ra = pipeline::run_all(&cfg, &da).unwrap();
    let rb = pipeline::run_all(&cfg, &db).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(pipeline::read_manifest(&da).unwrap(), pipeline::read_manifest(&db).unwrap());
    for name in ["metrics.json", "generations.tsv", "e2e_scores.tsv"] {
        assert_eq!(std::fs::read(da.report(name)).unwrap(), std::fs::read(db.report(name)).unwrap(), "{name}");
    }
    assert_eq!(ra.models.len(), 4);
    let g = ra.generation.unwrap();
    assert!(g.accuracy.total > 0);
}

#[test]
fn inspection_tools_work_on_a_finished_run() {
    let cfg = tiny(5);
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    pipeline::run_all(&cfg, &dir).unwrap();
    let data = pipeline::Data::load(&dir).unwrap();
    let r = &data.test_records[0];

    let map = pipeline::heatmap(&cfg, &dir, "e2e", &r.title, &r.query).unwrap();
    let grid = map.to_grid();
    assert!(!grid.is_empty());

    let rows = pipeline::generate_rows(&cfg, &dir, &[(r.title.clone(), r.query.clone())]).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].score.is_finite());

    let nn = pipeline::nearest_queries(&cfg, &dir, "e2e", &r.query, 3).unwrap();
    assert!(!nn.is_empty() && nn.len() <= 3);
    assert!(nn.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(pipeline::heatmap(&cfg, &dir, "missing-model", &r.title, &r.query).is_err());
}
