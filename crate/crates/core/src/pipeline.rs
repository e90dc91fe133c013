//! The training procedure as resumable phases over a run directory.
//!
//! ```text
//! run/
//!   config.toml  manifest.json  timings.json  metrics.jsonl
//!   data/        catalog.json vocab.json labeled.tsv logs.tsv
//!                train.tsv validation.tsv test.tsv train_logs.tsv triples.tsv
//!   checkpoints/ classifier.qrts ved.qrts e2e.qrts naive.qrts dssm.qrts
//!   reports/     metrics.json <model>_scores.tsv
//! ```
//!
//! Every phase reads its inputs from disk and rewrites its outputs, so a
//! phase can be rerun alone and produces the same bytes each time.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use quarts_tensor::{checkpoint, ParamStore, RngStreams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{normalize_rows, Classifier, ClassifierDims, Heatmap};
use crate::config::{hex, RunConfig};
use crate::dssm::Dssm;
use crate::error::{QuartsError, Result};
use crate::metrics::{
    average_precision, corpus_bleu, f1_best, generation_accuracy, knn, pooled_query_embedding, recall_at,
    BleuReport, GenerationAccuracy,
};
use crate::text::{
    build_vocabs, encode_records, generate_corpus, read_tsv, split, tokenize, write_tsv,
    CatalogSpec, Example, Oracle, PairRecord, Source, TripleExample, Vocabs,
};
use crate::train::{self, EpochStats, LoopRngs, VedEpochStats};
use crate::ved::Ved;

pub const GEN_DATA: &str = "gen-data";
pub const PRETRAIN_CLASSIFIER: &str = "pretrain-classifier";
pub const BUILD_TRIPLES: &str = "build-triples";
pub const PRETRAIN_VED: &str = "pretrain-ved";
pub const TRAIN_E2E: &str = "train-e2e";
pub const TRAIN_BASELINE: &str = "train-baseline";
pub const EVAL: &str = "eval";

/// Checkpoint names and the subcommand that writes each.
pub const CHECKPOINTS: [(&str, &str); 5] = [
    ("classifier", PRETRAIN_CLASSIFIER),
    ("ved", PRETRAIN_VED),
    ("e2e", TRAIN_E2E),
    ("naive", TRAIN_BASELINE),
    ("dssm", TRAIN_BASELINE),
];

/// Models that produce mismatch scores, in report order.
pub const SCORED_MODELS: [&str; 4] = ["dssm", "classifier", "naive", "e2e"];

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.qrts"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn config_path(&self) -> PathBuf {
        self.path("config.toml")
    }

    /// The config saved by `gen-data`, which later phases default to.
    pub fn load_config(&self) -> Result<RunConfig> {
        let p = self.config_path();
        if !p.exists() {
            return Err(missing(GEN_DATA, &p));
        }
        RunConfig::load(p)
    }

    fn ensure_dirs(&self) -> Result<()> {
        for d in ["data", "checkpoints", "reports"] {
            let p = self.root.join(d);
            fs::create_dir_all(&p).map_err(|e| QuartsError::io(&p, e))?;
        }
        Ok(())
    }
}

fn missing(prerequisite: &str, path: &Path) -> QuartsError {
    QuartsError::pipeline(
        prerequisite,
        format!("{} not found; run `{prerequisite}` first", path.display()),
    )
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| QuartsError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| QuartsError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| QuartsError::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| QuartsError::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

fn load_checkpoint(dir: &RunDir, name: &str) -> Result<ParamStore> {
    let path = dir.checkpoint(name);
    if !path.exists() {
        let writer = CHECKPOINTS.iter().find(|(n, _)| *n == name).map_or(name, |(_, w)| w);
        return Err(missing(writer, &path));
    }
    Ok(checkpoint::load(&path)?)
}

fn save_checkpoint(dir: &RunDir, name: &str, store: &ParamStore) -> Result<()> {
    let path = dir.checkpoint(name);
    checkpoint::save(store, &path)?;
    let hash = sha256_file(&path)?;
    update_manifest(dir, |m| {
        m.checkpoints.insert(
            name.to_string(),
            CheckpointEntry {
                path: format!("checkpoints/{name}.qrts"),
                sha256: hash,
            },
        );
    })
}

// ---------------------------------------------------------------------------
// manifest, timings, metrics log

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run. Wall-clock times live in
/// `timings.json` so that two identical runs produce identical manifests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: Option<RunConfig>,
    pub datasets: BTreeMap<String, String>,
    pub checkpoints: BTreeMap<String, CheckpointEntry>,
    pub timings: String,
}

pub fn read_manifest(dir: &RunDir) -> Result<RunManifest> {
    let p = dir.path("manifest.json");
    if !p.exists() {
        return Ok(RunManifest::default());
    }
    Ok(serde_json::from_str(&read_file(&p)?)?)
}

fn update_manifest(dir: &RunDir, f: impl FnOnce(&mut RunManifest)) -> Result<()> {
    let mut m = read_manifest(dir)?;
    f(&mut m);
    m.timings = "timings.json".into();
    write_file(&dir.path("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")
}

fn record_timing(dir: &RunDir, phase: &str, seconds: f64) -> Result<()> {
    let p = dir.path("timings.json");
    let mut t: BTreeMap<String, f64> = if p.exists() {
        serde_json::from_str(&read_file(&p)?)?
    } else {
        BTreeMap::new()
    };
    t.insert(phase.to_string(), seconds);
    write_file(&p, serde_json::to_string_pretty(&t)? + "\n")
}

fn timed<T>(dir: &RunDir, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    record_timing(dir, phase, start.elapsed().as_secs_f64())?;
    Ok(out)
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub split: String,
    pub aupr: Option<f64>,
    pub f1: Option<f64>,
    pub loss: f64,
    pub s1_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_weight: Option<f64>,
}

pub fn read_metrics_log(dir: &RunDir) -> Result<Vec<EpochRecord>> {
    let p = dir.path("metrics.jsonl");
    if !p.exists() {
        return Ok(Vec::new());
    }
    read_file(&p)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(QuartsError::from))
        .collect()
}

/// Drops earlier records of `phase` so a rerun replaces rather than
/// duplicates them.
fn reset_metrics_log(dir: &RunDir, phase: &str) -> Result<()> {
    let kept: Vec<EpochRecord> = read_metrics_log(dir)?.into_iter().filter(|r| r.phase != phase).collect();
    write_metrics_log(dir, &kept)
}

fn write_metrics_log(dir: &RunDir, records: &[EpochRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    write_file(&dir.path("metrics.jsonl"), s)
}

fn append_metrics(dir: &RunDir, record: &EpochRecord) -> Result<()> {
    let mut all = read_metrics_log(dir)?;
    all.push(record.clone());
    write_metrics_log(dir, &all)
}

// ---------------------------------------------------------------------------
// data

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub items: usize,
    pub labeled: usize,
    pub logs: usize,
    pub train: usize,
    pub train_logs: usize,
    pub validation: usize,
    pub test: usize,
    pub query_vocab: usize,
    pub title_vocab: usize,
}

/// Phase 0: synthetic corpus, item-disjoint splits and vocabularies. Logs
/// pairs are kept only for training items so no test item is ever seen.
pub fn gen_data(cfg: &RunConfig, dir: &RunDir) -> Result<DataSummary> {
    cfg.validate()?;
    dir.ensure_dirs()?;
    timed(dir, GEN_DATA, || {
        let spec = cfg.catalog();
        let corpus = generate_corpus(&spec)?;
        let streams = RngStreams::new(cfg.seed);
        let splits = split(&corpus.labeled, cfg.split_ratios(), &mut streams.named("data/split"))?;
        let train_titles: HashSet<&str> = splits.train.iter().map(|r| r.title.as_str()).collect();
        let train_logs: Vec<PairRecord> = corpus
            .logs
            .iter()
            .filter(|r| train_titles.contains(r.title.as_str()))
            .cloned()
            .collect();
        let mut vocab_source = splits.train.clone();
        vocab_source.extend(train_logs.iter().cloned());
        let vocabs = build_vocabs(&vocab_source, cfg.min_count)?;

        write_file(&dir.config_path(), cfg.to_toml())?;
        write_file(&dir.data("catalog.json"), serde_json::to_string(&spec)? + "\n")?;
        write_file(&dir.data("vocab.json"), serde_json::to_string(&vocabs)? + "\n")?;
        let files: [(&str, &[PairRecord]); 6] = [
            ("labeled.tsv", &corpus.labeled),
            ("logs.tsv", &corpus.logs),
            ("train.tsv", &splits.train),
            ("validation.tsv", &splits.validation),
            ("test.tsv", &splits.test),
            ("train_logs.tsv", &train_logs),
        ];
        for (name, records) in files {
            write_tsv(dir.data(name), records)?;
        }
        let mut hashes = BTreeMap::new();
        for name in ["catalog.json", "vocab.json"].into_iter().chain(files.iter().map(|(n, _)| *n)) {
            hashes.insert(name.to_string(), sha256_file(&dir.data(name))?);
        }
        // a fresh corpus invalidates every downstream artifact
        let _ = fs::remove_file(dir.path("manifest.json"));
        let _ = fs::remove_file(dir.path("metrics.jsonl"));
        update_manifest(dir, |m| {
            m.config_hash = cfg.hash();
            m.seed = cfg.seed;
            m.config = Some(cfg.clone());
            m.datasets = hashes;
            m.checkpoints.clear();
        })?;
        Ok(DataSummary {
            items: corpus.items.len(),
            labeled: corpus.labeled.len(),
            logs: corpus.logs.len(),
            train: splits.train.len(),
            train_logs: train_logs.len(),
            validation: splits.validation.len(),
            test: splits.test.len(),
            query_vocab: vocabs.query.len(),
            title_vocab: vocabs.title.len(),
        })
    })
}

/// Encoded splits plus everything needed to interpret them.
pub struct Data {
    pub vocabs: Vocabs,
    pub oracle: Oracle,
    pub train_records: Vec<PairRecord>,
    pub validation_records: Vec<PairRecord>,
    pub test_records: Vec<PairRecord>,
    pub train: Vec<Example>,
    pub train_logs: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl Data {
    pub fn load(dir: &RunDir) -> Result<Self> {
        for name in ["catalog.json", "vocab.json", "train.tsv", "validation.tsv", "test.tsv", "train_logs.tsv"] {
            let p = dir.data(name);
            if !p.exists() {
                return Err(missing(GEN_DATA, &p));
            }
        }
        let spec: CatalogSpec = serde_json::from_str(&read_file(&dir.data("catalog.json"))?)?;
        let vocabs: Vocabs = serde_json::from_str(&read_file(&dir.data("vocab.json"))?)?;
        let vocabs = vocabs.reindexed();
        let train_records = read_tsv(dir.data("train.tsv"))?;
        let validation_records = read_tsv(dir.data("validation.tsv"))?;
        let test_records = read_tsv(dir.data("test.tsv"))?;
        let log_records = read_tsv(dir.data("train_logs.tsv"))?;
        Ok(Self {
            train: encode_records(&vocabs, &train_records)?,
            train_logs: encode_records(&vocabs, &log_records)?,
            validation: encode_records(&vocabs, &validation_records)?,
            test: encode_records(&vocabs, &test_records)?,
            oracle: Oracle::new(&spec),
            vocabs,
            train_records,
            validation_records,
            test_records,
        })
    }

    /// Annotated followed by logs training pairs (`N + M` samples).
    pub fn augmented_train(&self) -> Vec<Example> {
        let mut all = self.train.clone();
        all.extend(self.train_logs.iter().cloned());
        all
    }

    pub fn classifier_dims(&self, cfg: &RunConfig) -> ClassifierDims {
        ClassifierDims {
            embed: cfg.embed,
            hidden: cfg.hidden,
            query_vocab: self.vocabs.query.len(),
            title_vocab: self.vocabs.title.len(),
        }
    }
}

// ---------------------------------------------------------------------------
// training phases

fn labels(data: &[Example]) -> Vec<u8> {
    data.iter().map(|e| e.label).collect()
}

/// AUPR and best F1 of `scores`; `None` when the split has no positives.
fn score_summary(scores: &[f64], labels: &[u8]) -> (Option<f64>, Option<f64>) {
    match (average_precision(scores, labels), f1_best(scores, labels)) {
        (Ok(ap), Ok((f1, _))) => (Some(ap), Some(f1)),
        _ => (None, None),
    }
}

fn validation_record(
    phase: &str,
    stats: &EpochStats,
    clf: &Classifier,
    store: &ParamStore,
    data: &Data,
) -> Result<EpochRecord> {
    let scores = train::predict(clf, store, &data.validation)?;
    let (aupr, f1) = score_summary(&scores, &labels(&data.validation));
    Ok(EpochRecord {
        phase: phase.to_string(),
        epoch: stats.epoch,
        split: "validation".into(),
        aupr,
        f1,
        loss: stats.loss,
        s1_fraction: stats.s1_fraction(),
        ..Default::default()
    })
}

/// Phase 1: classifier on the annotated training pairs.
pub fn pretrain_classifier(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<EpochStats>> {
    let data = Data::load(dir)?;
    timed(dir, PRETRAIN_CLASSIFIER, || {
        reset_metrics_log(dir, PRETRAIN_CLASSIFIER)?;
        let streams = RngStreams::new(cfg.seed);
        let mut store = ParamStore::new();
        let clf = Classifier::register(
            &mut store,
            data.classifier_dims(cfg),
            cfg.dropout,
            &mut streams.named("init/classifier"),
        );
        let mut rngs = LoopRngs::new(&streams, "clf");
        let history = train::train_classifier(&mut store, &clf, &data.train, &cfg.classifier_loop(), &mut rngs, |s, st| {
            append_metrics(dir, &validation_record(PRETRAIN_CLASSIFIER, s, &clf, st, &data)?)
        })?;
        save_checkpoint(dir, "classifier", &store)?;
        Ok(history)
    })
}

/// Phase 2: (item, matched, mismatched) triples from annotated training pairs.
pub fn build_triples_phase(cfg: &RunConfig, dir: &RunDir) -> Result<usize> {
    let train = read_required_tsv(dir, "train.tsv")?;
    timed(dir, BUILD_TRIPLES, || {
        let triples = text_triples(&train, cfg.triples_per_item);
        let mut s = String::new();
        for (t, q, q_mis) in &triples {
            let _ = writeln!(s, "{t}\t{q}\t{q_mis}");
        }
        let path = dir.data("triples.tsv");
        write_file(&path, s)?;
        let hash = sha256_file(&path)?;
        update_manifest(dir, |m| {
            m.datasets.insert("triples.tsv".into(), hash);
        })?;
        Ok(triples.len())
    })
}

fn read_required_tsv(dir: &RunDir, name: &str) -> Result<Vec<PairRecord>> {
    let p = dir.data(name);
    if !p.exists() {
        return Err(missing(GEN_DATA, &p));
    }
    read_tsv(p)
}

/// Text-level triples grouped by title, in first-appearance order.
pub fn text_triples(records: &[PairRecord], cap: usize) -> Vec<(String, String, String)> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.source == Source::Annotated) {
        let g = groups.entry(&r.title).or_insert_with(|| {
            order.push(&r.title);
            (Vec::new(), Vec::new())
        });
        let bucket = if r.label == 0 { &mut g.0 } else { &mut g.1 };
        if !bucket.contains(&r.query.as_str()) {
            bucket.push(&r.query);
        }
    }
    let mut out = Vec::new();
    for t in order {
        let (matched, mismatched) = &groups[t];
        let pairs = matched.iter().flat_map(|q| mismatched.iter().map(move |m| (*q, *m)));
        out.extend(pairs.take(cap).map(|(q, m)| (t.to_string(), q.to_string(), m.to_string())));
    }
    out
}

pub fn load_triples(dir: &RunDir, vocabs: &Vocabs) -> Result<Vec<TripleExample>> {
    let p = dir.data("triples.tsv");
    if !p.exists() {
        return Err(missing(BUILD_TRIPLES, &p));
    }
    let mut out = Vec::new();
    for (n, line) in read_file(&p)?.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let [t, q, m] = cols[..] else {
            return Err(QuartsError::Data(format!("{}:{}: expected 3 columns", p.display(), n + 1)));
        };
        out.push(encode_triple(vocabs, t, q, m)?);
    }
    Ok(out)
}

fn encode_triple(vocabs: &Vocabs, title: &str, query: &str, mismatched: &str) -> Result<TripleExample> {
    let (item_ids, matched_query_ids) = crate::text::dataset::encode_pair(vocabs, title, query)?;
    let (_, mismatched_query_ids) = crate::text::dataset::encode_pair(vocabs, title, mismatched)?;
    Ok(TripleExample {
        item_ids,
        matched_query_ids,
        mismatched_query_ids,
    })
}

/// Phase 3: generator pretraining. The encoder is the classifier's own
/// (frozen here); the decoder embedding starts from the query table.
pub fn pretrain_ved(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<VedEpochStats>> {
    let data = Data::load(dir)?;
    let triples = load_triples(dir, &data.vocabs)?;
    if triples.is_empty() {
        return Err(QuartsError::pipeline(PRETRAIN_VED, "no triples: the training split has no item with both labels"));
    }
    let mut store = load_checkpoint(dir, "classifier")?;
    timed(dir, PRETRAIN_VED, || {
        reset_metrics_log(dir, PRETRAIN_VED)?;
        let streams = RngStreams::new(cfg.seed);
        let clf = Classifier::bind(&store, cfg.dropout)?;
        let ved = Ved::register(&mut store, &clf, cfg.latent, &mut streams.named("init/ved"));
        store.set_frozen_prefix(Classifier::PREFIX, true);
        let mut rngs = LoopRngs::new(&streams, "ved");
        let history = train::train_ved(
            &mut store,
            &clf,
            &ved,
            &triples,
            &cfg.ved_loop(),
            cfg.kl_anneal_epochs,
            &mut rngs,
            |s, _| {
                append_metrics(
                    dir,
                    &EpochRecord {
                        phase: PRETRAIN_VED.into(),
                        epoch: s.epoch,
                        split: "train".into(),
                        loss: s.loss,
                        nll: Some(s.nll),
                        kl: Some(s.kl),
                        kl_weight: Some(s.kl_weight),
                        ..Default::default()
                    },
                )
            },
        )?;
        save_checkpoint(dir, "ved", &store)?;
        Ok(history)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct E2eOptions {
    pub p: f64,
    pub epochs: usize,
    pub freeze_generator: bool,
    /// Start from this checkpoint instead of the pretrained generator.
    pub resume: Option<PathBuf>,
}

impl E2eOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            p: cfg.p,
            epochs: cfg.e2e_epochs,
            freeze_generator: cfg.freeze_generator,
            resume: None,
        }
    }
}

/// Phases 4–5: annotated ∪ logs data with a fresh switch draw per example
/// per epoch; classifier and generator both update unless frozen.
pub fn train_e2e(cfg: &RunConfig, dir: &RunDir, opts: &E2eOptions) -> Result<Vec<EpochStats>> {
    let data = Data::load(dir)?;
    let mut store = match &opts.resume {
        Some(p) => {
            if !p.exists() {
                return Err(QuartsError::pipeline(TRAIN_E2E, format!("resume checkpoint {} not found", p.display())));
            }
            checkpoint::load(p)?
        }
        None => load_checkpoint(dir, "ved")?,
    };
    timed(dir, TRAIN_E2E, || {
        reset_metrics_log(dir, TRAIN_E2E)?;
        let clf = Classifier::bind(&store, cfg.dropout)?;
        let ved = if store.id("ved.embed").is_some() {
            Some(Ved::bind(&store)?)
        } else {
            None
        };
        store.set_frozen_prefix(Classifier::PREFIX, false);
        store.set_frozen_prefix(Ved::PREFIX, opts.freeze_generator);
        let streams = RngStreams::new(cfg.seed);
        let mut rngs = LoopRngs::new(&streams, "e2e");
        let loop_cfg = train::LoopConfig {
            epochs: opts.epochs,
            ..cfg.e2e_loop()
        };
        let history = train::train_e2e(
            &mut store,
            &clf,
            ved.as_ref(),
            &data.augmented_train(),
            &loop_cfg,
            opts.p,
            &mut rngs,
            |s, st| append_metrics(dir, &validation_record(TRAIN_E2E, s, &clf, st, &data)?),
        )?;
        save_checkpoint(dir, "e2e", &store)?;
        Ok(history)
    })
}

/// Which baselines `train-baseline` fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Pretrained classifier continued on annotated ∪ logs, no generator:
    /// phase 5 with `p = 0` under the same seeds and epochs.
    Naive,
    /// Mean-pooled embedding MLP on the annotated pairs.
    Dssm,
}

pub fn train_baseline(cfg: &RunConfig, dir: &RunDir, which: Baseline) -> Result<Vec<EpochStats>> {
    let data = Data::load(dir)?;
    let phase = match which {
        Baseline::Naive => "train-baseline-naive",
        Baseline::Dssm => "train-baseline-dssm",
    };
    match which {
        Baseline::Naive => {
            let mut store = load_checkpoint(dir, "classifier")?;
            timed(dir, phase, || {
                reset_metrics_log(dir, phase)?;
                let clf = Classifier::bind(&store, cfg.dropout)?;
                let mut rngs = LoopRngs::new(&RngStreams::new(cfg.seed), "e2e");
                let history = train::train_e2e(
                    &mut store,
                    &clf,
                    None,
                    &data.augmented_train(),
                    &cfg.e2e_loop(),
                    0.0,
                    &mut rngs,
                    |s, st| append_metrics(dir, &validation_record(phase, s, &clf, st, &data)?),
                )?;
                save_checkpoint(dir, "naive", &store)?;
                Ok(history)
            })
        }
        Baseline::Dssm => timed(dir, phase, || {
            reset_metrics_log(dir, phase)?;
            let streams = RngStreams::new(cfg.seed);
            let mut store = ParamStore::new();
            let dssm = Dssm::register(
                &mut store,
                cfg.embed,
                cfg.dssm_hidden,
                data.vocabs.query.len(),
                data.vocabs.title.len(),
                &mut streams.named("init/dssm"),
            );
            let mut rngs = LoopRngs::new(&streams, "dssm");
            let history = train::train_dssm(&mut store, &dssm, &data.train, &cfg.baseline_loop(), &mut rngs)?;
            for s in &history {
                let scores = train::predict_dssm(&dssm, &store, &data.validation)?;
                let (aupr, f1) = score_summary(&scores, &labels(&data.validation));
                append_metrics(
                    dir,
                    &EpochRecord {
                        phase: phase.into(),
                        epoch: s.epoch,
                        split: "validation".into(),
                        aupr: if s.epoch + 1 == history.len() { aupr } else { None },
                        f1: if s.epoch + 1 == history.len() { f1 } else { None },
                        loss: s.loss,
                        ..Default::default()
                    },
                )?;
            }
            save_checkpoint(dir, "dssm", &store)?;
            Ok(history)
        }),
    }
}

// ---------------------------------------------------------------------------
// evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub aupr: f64,
    pub f1: f64,
    pub threshold: f64,
    /// Recall on accessory-substitution mismatches at the reference threshold.
    pub hard_recall: f64,
    pub examples: usize,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub accuracy: GenerationAccuracy,
    pub unresolvable_fraction: f64,
    /// Share of generations that substitute an accessory of the item's type.
    pub hard_fraction: f64,
    /// Distinct generated strings among the sampled generations.
    pub distinct: usize,
    pub bleu: BleuReport,
    pub bleu_pairs: usize,
    /// Share of sampled test queries whose nearest neighbour (pooled
    /// classifier encoding) has the same product intent.
    pub knn_intent_agreement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub models: Vec<ModelMetrics>,
    /// Best-F1 threshold of the pretrained classifier on validation.
    pub reference_threshold: f64,
    pub hard_positives: usize,
    pub generation: Option<GenerationReport>,
}

impl MetricsReport {
    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == name)
    }
}

fn model_scores(dir: &RunDir, cfg: &RunConfig, name: &str, data: &[Example]) -> Result<Option<Vec<f64>>> {
    if !dir.checkpoint(name).exists() {
        return Ok(None);
    }
    let store = load_checkpoint(dir, name)?;
    let scores = if name == "dssm" {
        train::predict_dssm(&Dssm::bind(&store)?, &store, data)?
    } else {
        train::predict(&Classifier::bind(&store, cfg.dropout)?, &store, data)?
    };
    Ok(Some(scores))
}

/// Scores every trained model on the test split, then evaluates the
/// pretrained generator if present.
pub fn evaluate(cfg: &RunConfig, dir: &RunDir) -> Result<MetricsReport> {
    let data = Data::load(dir)?;
    timed(dir, EVAL, || {
        let val_scores = model_scores(dir, cfg, "classifier", &data.validation)?
            .ok_or_else(|| missing(PRETRAIN_CLASSIFIER, &dir.checkpoint("classifier")))?;
        let (_, reference_threshold) = f1_best(&val_scores, &labels(&data.validation))
            .map_err(|e| QuartsError::pipeline(EVAL, format!("validation split: {e}")))?;
        let test_labels = labels(&data.test);
        let hard: Vec<bool> = data
            .test_records
            .iter()
            .map(|r| r.label == 1 && data.oracle.is_hard_mismatch(&tokenize(&r.title), &tokenize(&r.query)))
            .collect();
        let hard_positives = hard.iter().filter(|&&h| h).count();

        let mut models = Vec::new();
        for name in SCORED_MODELS {
            let Some(scores) = model_scores(dir, cfg, name, &data.test)? else { continue };
            let aupr = average_precision(&scores, &test_labels)?;
            let (f1, threshold) = f1_best(&scores, &test_labels)?;
            let hard_scores: Vec<f64> = scores.iter().zip(&hard).filter(|(_, &h)| h).map(|(s, _)| *s).collect();
            let hard_recall = recall_at(&hard_scores, &vec![1; hard_scores.len()], reference_threshold);
            let mut dump = String::from("title\tquery\tlabel\tscore\n");
            for (r, s) in data.test_records.iter().zip(&scores) {
                let _ = writeln!(dump, "{}\t{}\t{}\t{s:.17e}", r.title, r.query, r.label);
            }
            write_file(&dir.report(&format!("{name}_scores.tsv")), dump)?;
            models.push(ModelMetrics {
                model: name.into(),
                aupr,
                f1,
                threshold,
                hard_recall,
                examples: scores.len(),
                positives: test_labels.iter().filter(|&&y| y == 1).count(),
            });
        }

        let generation = if dir.checkpoint("ved").exists() {
            Some(evaluate_generation(cfg, dir, &data)?)
        } else {
            None
        };
        let report = MetricsReport {
            models,
            reference_threshold,
            hard_positives,
            generation,
        };
        write_file(&dir.report("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        Ok(report)
    })
}

fn evaluate_generation(cfg: &RunConfig, dir: &RunDir, data: &Data) -> Result<GenerationReport> {
    let store = load_checkpoint(dir, "ved")?;
    let clf = Classifier::bind(&store, cfg.dropout)?;
    let ved = Ved::bind(&store)?;
    let generate = |title: &str, query: &str| -> Result<(Vec<String>, Vec<String>)> {
        let (item, q) = crate::text::dataset::encode_pair(&data.vocabs, title, query)?;
        let best = ved.beam_generate(&clf, &store, &item, &q, 1, cfg.max_generate_len)?;
        let tokens = best.first().map(|g| data.vocabs.query.decode(&g.tokens)).unwrap_or_default();
        Ok((tokenize(title), tokens))
    };

    let matched: Vec<&PairRecord> = data.test_records.iter().filter(|r| r.label == 0).collect();
    let sample = evenly(&matched, cfg.generation_samples);
    let pairs = sample
        .iter()
        .map(|r| generate(&r.title, &r.query))
        .collect::<Result<Vec<_>>>()?;
    let accuracy = generation_accuracy(&pairs, &data.oracle);
    let hard = pairs.iter().filter(|(t, g)| data.oracle.is_hard_mismatch(t, g)).count();
    let mut dump = String::from("title\tsource_query\tgenerated\tjudgement\n");
    for (r, (title, generated)) in sample.iter().zip(&pairs) {
        let j = data.oracle.judge(title, generated);
        let _ = writeln!(dump, "{}\t{}\t{}\t{j:?}", r.title, r.query, generated.join(" "));
    }
    write_file(&dir.report("generations.tsv"), dump)?;

    let triples = text_triples(&data.test_records, 1);
    let triples = evenly(&triples, cfg.generation_samples);
    let mut bleu_pairs = Vec::with_capacity(triples.len());
    for (t, q, q_mis) in &triples {
        let (_, generated) = generate(t, q)?;
        bleu_pairs.push((generated, tokenize(q_mis)));
    }
    let bleu = if bleu_pairs.is_empty() {
        BleuReport::default()
    } else {
        corpus_bleu(&bleu_pairs)?
    };

    let queries: Vec<&PairRecord> = {
        let mut seen = HashSet::new();
        data.test_records.iter().filter(|r| seen.insert(r.query.as_str())).collect()
    };
    let queries = evenly(&queries, cfg.generation_samples);
    let mut embeddings = Vec::with_capacity(queries.len());
    let mut intents = Vec::with_capacity(queries.len());
    for r in &queries {
        let toks = tokenize(&r.query);
        embeddings.push(pooled_query_embedding(&clf, &store, &data.vocabs.query.encode(&toks))?);
        intents.push(data.oracle.query_intent(&toks));
    }
    let mut agree = 0;
    let mut judged = 0;
    for (i, e) in embeddings.iter().enumerate() {
        if intents[i].is_none() {
            continue;
        }
        if let Some(&(j, _)) = knn(e, &embeddings, 1, Some(i)).first() {
            judged += 1;
            agree += usize::from(intents[j] == intents[i]);
        }
    }

    Ok(GenerationReport {
        unresolvable_fraction: accuracy.unresolvable_fraction(),
        hard_fraction: if pairs.is_empty() { 0.0 } else { hard as f64 / pairs.len() as f64 },
        distinct: pairs.iter().map(|(_, g)| g.join(" ")).collect::<HashSet<_>>().len(),
        accuracy,
        bleu,
        bleu_pairs: bleu_pairs.len(),
        knn_intent_agreement: if judged == 0 { 0.0 } else { agree as f64 / judged as f64 },
    })
}

/// At most `n` elements spread evenly over `xs`, in order.
fn evenly<T: Clone>(xs: &[T], n: usize) -> Vec<T> {
    if xs.len() <= n {
        return xs.to_vec();
    }
    (0..n).map(|i| xs[i * xs.len() / n].clone()).collect()
}

/// All phases in order, then evaluation.
pub fn run_all(cfg: &RunConfig, dir: &RunDir) -> Result<MetricsReport> {
    gen_data(cfg, dir)?;
    pretrain_classifier(cfg, dir)?;
    build_triples_phase(cfg, dir)?;
    pretrain_ved(cfg, dir)?;
    train_e2e(cfg, dir, &E2eOptions::from_config(cfg))?;
    train_baseline(cfg, dir, Baseline::Naive)?;
    train_baseline(cfg, dir, Baseline::Dssm)?;
    evaluate(cfg, dir)
}

// ---------------------------------------------------------------------------
// inspection utilities

/// Row-normalized attention of a model checkpoint on one pair.
pub fn heatmap(cfg: &RunConfig, dir: &RunDir, model: &str, title: &str, query: &str) -> Result<Heatmap> {
    let vocabs = load_vocabs(dir)?;
    let store = load_checkpoint(dir, model)?;
    let clf = Classifier::bind(&store, cfg.dropout)?;
    let (item, q) = crate::text::dataset::encode_pair(&vocabs, title, query)?;
    let alpha = clf.attention(&store, &item, &q)?;
    let mut title_tokens = tokenize(title);
    let mut query_tokens = tokenize(query);
    title_tokens.truncate(item.len());
    query_tokens.truncate(q.len());
    Ok(Heatmap {
        query_tokens,
        title_tokens,
        weights: normalize_rows(&alpha),
    })
}

pub fn load_vocabs(dir: &RunDir) -> Result<Vocabs> {
    let p = dir.data("vocab.json");
    if !p.exists() {
        return Err(missing(GEN_DATA, &p));
    }
    let v: Vocabs = serde_json::from_str(&read_file(&p)?)?;
    Ok(v.reindexed())
}

pub fn load_oracle(dir: &RunDir) -> Result<Option<Oracle>> {
    let p = dir.data("catalog.json");
    if !p.exists() {
        return Ok(None);
    }
    let spec: CatalogSpec = serde_json::from_str(&read_file(&p)?)?;
    Ok(Some(Oracle::new(&spec)))
}

/// One row of `generate` output.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedRow {
    pub title: String,
    pub source_query: String,
    pub generated: String,
    pub score: f64,
    pub oracle_label: Option<u8>,
}

pub fn generate_rows(cfg: &RunConfig, dir: &RunDir, pairs: &[(String, String)]) -> Result<Vec<GeneratedRow>> {
    let vocabs = load_vocabs(dir)?;
    let oracle = load_oracle(dir)?;
    let store = load_checkpoint(dir, "ved")?;
    let clf = Classifier::bind(&store, cfg.dropout)?;
    let ved = Ved::bind(&store)?;
    pairs
        .iter()
        .map(|(title, query)| {
            let (item, q) = crate::text::dataset::encode_pair(&vocabs, title, query)?;
            let best = ved.beam_generate(&clf, &store, &item, &q, cfg.beam_size, cfg.max_generate_len)?;
            let (tokens, score) = best
                .first()
                .map(|g| (vocabs.query.decode(&g.tokens), g.score))
                .unwrap_or_default();
            let oracle_label = oracle.as_ref().map(|o| o.label(&tokenize(title), &tokens));
            Ok(GeneratedRow {
                title: title.clone(),
                source_query: query.clone(),
                generated: tokens.join(" "),
                score,
                oracle_label,
            })
        })
        .collect()
}

/// Nearest test-split queries to `query` by pooled encoder output.
pub fn nearest_queries(cfg: &RunConfig, dir: &RunDir, model: &str, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let vocabs = load_vocabs(dir)?;
    let store = load_checkpoint(dir, model)?;
    let clf = Classifier::bind(&store, cfg.dropout)?;
    let mut seen = HashSet::new();
    let pool: Vec<String> = read_required_tsv(dir, "test.tsv")?
        .into_iter()
        .filter(|r| seen.insert(r.query.clone()))
        .map(|r| r.query)
        .collect();
    let embed = |q: &str| pooled_query_embedding(&clf, &store, &vocabs.query.encode(&tokenize(q)));
    let corpus = pool.iter().map(|q| embed(q)).collect::<Result<Vec<_>>>()?;
    let target = embed(query)?;
    let exclude = pool.iter().position(|q| q == query);
    Ok(knn(&target, &corpus, k, exclude)
        .into_iter()
        .map(|(i, s)| (pool[i].clone(), s))
        .collect())
}
