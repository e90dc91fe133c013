//! `quarts`: one entry point for every training phase, evaluation and the
//! inspection tools. All artifacts live under a run directory.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use quarts_core::config::RunConfig;
use quarts_core::error::QuartsError;
use quarts_core::gradsuite;
use quarts_core::pipeline::{self as pl, Baseline, E2eOptions, MetricsReport, RunDir};

#[derive(Parser)]
#[command(name = "quarts", version, about = "Query-item mismatch classification with generated hard negatives")]
struct Cli {
    /// Run directory holding data, checkpoints and reports.
    #[arg(long, global = true, env = "QUARTS_RUN_DIR", default_value = "runs/default")]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file; defaults to the one saved by `gen-data`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, splits and vocabularies.
    GenData(Common),
    /// Train the attention classifier on the annotated pairs.
    PretrainClassifier(Common),
    /// Build (item, matched, mismatched) triples for generator pretraining.
    BuildTriples(Common),
    /// Pretrain the generator decoder over the frozen classifier encoder.
    PretrainVed(Common),
    /// Train classifier and generator jointly through the switch.
    TrainE2e(TrainE2e),
    /// Train a comparison model.
    TrainBaseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        common: Common,
    },
    /// Score every trained model on the test split and evaluate generation.
    Eval(Common),
    /// Every phase in order, then evaluation.
    All(Common),
    /// Generate mismatched queries for (title, query) pairs.
    Generate(Generate),
    /// Print the word-by-word attention of a model on one pair.
    Heatmap(HeatmapArgs),
    /// Nearest test queries by pooled query encoding.
    Knn(Knn),
    /// Finite-difference check of every op and model loss.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainE2e {
    #[command(flatten)]
    common: Common,
    /// Switch probability for negative examples.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Keep generator parameters fixed.
    #[arg(long)]
    freeze_generator: bool,
    /// Continue from this checkpoint instead of the pretrained generator.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Naive,
    Dssm,
    All,
}

#[derive(Args)]
struct Generate {
    #[command(flatten)]
    common: Common,
    #[arg(long, requires = "query")]
    title: Option<String>,
    #[arg(long, requires = "title")]
    query: Option<String>,
    /// Tab-separated `title<TAB>query` lines.
    #[arg(long, conflicts_with_all = ["title", "query"])]
    input: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeatmapFormat {
    Grid,
    Text,
    Json,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    title: String,
    #[arg(long)]
    query: String,
    /// Checkpoint name: classifier, e2e or naive.
    #[arg(long, default_value = "e2e")]
    model: String,
    #[arg(long, value_enum, default_value_t = HeatmapFormat::Grid)]
    format: HeatmapFormat,
    /// Also write the matrix to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Knn {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    query: String,
    #[arg(short, long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value = "e2e")]
    model: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numeric-check failures, 2 for every other error.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<QuartsError>() {
        Some(QuartsError::Numeric(_)) => 3,
        _ => 2,
    }
}

fn load_config(dir: &RunDir, common: &Common, fresh: bool) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None if fresh && !dir.config_path().exists() => RunConfig::default(),
        None => dir.load_config()?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let dir = RunDir::new(&cli.run_dir);
    match cli.command {
        Command::GenData(c) => {
            let cfg = load_config(&dir, &c, true)?;
            let s = pl::gen_data(&cfg, &dir)?;
            println!(
                "{} items, {} labeled pairs ({} train / {} validation / {} test), {} train log pairs",
                s.items, s.labeled, s.train, s.validation, s.test, s.train_logs
            );
            println!("vocabulary: {} query / {} title tokens", s.query_vocab, s.title_vocab);
        }
        Command::PretrainClassifier(c) => {
            let cfg = load_config(&dir, &c, false)?;
            let history = pl::pretrain_classifier(&cfg, &dir)?;
            for s in &history {
                println!("epoch {:3}  lr {:.2e}  loss {:.5}", s.epoch, s.lr, s.loss);
            }
            print_validation(&dir, pl::PRETRAIN_CLASSIFIER)?;
        }
        Command::BuildTriples(c) => {
            let cfg = load_config(&dir, &c, false)?;
            let n = pl::build_triples_phase(&cfg, &dir)?;
            println!("{n} triples");
        }
        Command::PretrainVed(c) => {
            let cfg = load_config(&dir, &c, false)?;
            for s in pl::pretrain_ved(&cfg, &dir)? {
                println!(
                    "epoch {:3}  kl weight {:.3}  loss {:.5}  nll {:.5}  kl {:.5}",
                    s.epoch, s.kl_weight, s.loss, s.nll, s.kl
                );
            }
        }
        Command::TrainE2e(a) => {
            let mut cfg = load_config(&dir, &a.common, false)?;
            if let Some(p) = a.p {
                cfg.p = p;
            }
            cfg.validate()?;
            let mut opts = E2eOptions::from_config(&cfg);
            if let Some(e) = a.epochs {
                opts.epochs = e;
            }
            opts.freeze_generator |= a.freeze_generator;
            opts.resume = a.resume;
            for s in pl::train_e2e(&cfg, &dir, &opts)? {
                println!(
                    "epoch {:3}  lr {:.2e}  loss {:.5}  switched {}/{} negatives",
                    s.epoch, s.lr, s.loss, s.s1, s.negatives
                );
            }
            print_validation(&dir, pl::TRAIN_E2E)?;
        }
        Command::TrainBaseline { kind, common } => {
            let cfg = load_config(&dir, &common, false)?;
            let kinds: &[Baseline] = match kind {
                BaselineKind::Naive => &[Baseline::Naive],
                BaselineKind::Dssm => &[Baseline::Dssm],
                BaselineKind::All => &[Baseline::Naive, Baseline::Dssm],
            };
            for &b in kinds {
                let history = pl::train_baseline(&cfg, &dir, b)?;
                let last = history.last().map_or(f64::NAN, |s| s.loss);
                println!("{b:?}: {} epochs, final loss {last:.5}", history.len());
            }
        }
        Command::Eval(c) => {
            let cfg = load_config(&dir, &c, false)?;
            print_report(&pl::evaluate(&cfg, &dir)?, &dir);
        }
        Command::All(c) => {
            let cfg = load_config(&dir, &c, true)?;
            print_report(&pl::run_all(&cfg, &dir)?, &dir);
        }
        Command::Generate(g) => {
            let mut cfg = load_config(&dir, &g.common, false)?;
            cfg.beam_size = g.beam.unwrap_or(cfg.beam_size);
            cfg.max_generate_len = g.max_len.unwrap_or(cfg.max_generate_len);
            cfg.validate()?;
            let pairs = match (g.input, g.title, g.query) {
                (Some(path), _, _) => read_pairs(&path)?,
                (None, Some(t), Some(q)) => vec![(t, q)],
                _ => bail!("give --title and --query, or --input"),
            };
            let mut out = io::stdout().lock();
            writeln!(out, "title\tsource_query\tgenerated\tscore\toracle")?;
            for r in pl::generate_rows(&cfg, &dir, &pairs)? {
                let oracle = match r.oracle_label {
                    Some(0) => "matched",
                    Some(_) => "mismatched",
                    None => "-",
                };
                writeln!(out, "{}\t{}\t{}\t{:.4}\t{oracle}", r.title, r.source_query, r.generated, r.score)?;
            }
        }
        Command::Heatmap(h) => {
            let cfg = load_config(&dir, &h.common, false)?;
            let map = pl::heatmap(&cfg, &dir, &h.model, &h.title, &h.query)?;
            let text = match h.format {
                HeatmapFormat::Grid => map.to_grid(),
                HeatmapFormat::Text => map.to_text(),
                HeatmapFormat::Json => serde_json::to_string_pretty(&map.to_json())? + "\n",
            };
            print!("{text}");
            if let Some(out) = h.out {
                fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::Knn(k) => {
            let cfg = load_config(&dir, &k.common, false)?;
            for (q, sim) in pl::nearest_queries(&cfg, &dir, &k.model, &k.query, k.k)? {
                println!("{sim:.4}\t{q}");
            }
        }
        Command::Gradcheck { seed } => {
            let report = gradsuite::run(seed)?;
            for c in &report.cases {
                let worst = c.worst.as_ref().map(|(p, i)| format!("  worst {p}[{i}]")).unwrap_or_default();
                println!(
                    "{:4}  {:24} max rel error {:.3e} over {} coordinates{worst}",
                    if c.passes() { "ok" } else { "FAIL" },
                    c.name,
                    c.max_rel_error,
                    c.coordinates
                );
            }
            println!("{} cases, max rel error {:.3e}", report.cases.len(), report.max_rel_error());
            if !report.passes() {
                return Err(QuartsError::Numeric(format!(
                    "gradient check exceeded tolerance (max rel error {:.3e})",
                    report.max_rel_error()
                ))
                .into());
            }
        }
    }
    Ok(())
}

fn read_pairs(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.split_once('\t') {
            Some((t, q)) => Ok((t.to_string(), q.to_string())),
            None => bail!("{}:{}: expected title<TAB>query", path.display(), i + 1),
        })
        .collect()
}

fn print_validation(dir: &RunDir, phase: &str) -> anyhow::Result<()> {
    for r in pl::read_metrics_log(dir)?.iter().filter(|r| r.phase == phase) {
        if let (Some(aupr), Some(f1)) = (r.aupr, r.f1) {
            println!("epoch {:3}  {} aupr {aupr:.4}  best f1 {f1:.4}", r.epoch, r.split);
        }
    }
    Ok(())
}

fn print_report(report: &MetricsReport, dir: &RunDir) {
    println!("{:<12} {:>8} {:>8} {:>10} {:>12}", "model", "aupr", "f1", "threshold", "hard recall");
    for m in &report.models {
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>10.4} {:>12.4}",
            m.model, m.aupr, m.f1, m.threshold, m.hard_recall
        );
    }
    println!(
        "hard positives: {} (recall at classifier threshold {:.4})",
        report.hard_positives, report.reference_threshold
    );
    if let Some(g) = &report.generation {
        println!(
            "generation: {:.3} oracle mismatches, {:.3} unresolvable, {:.3} accessory substitutions, {} distinct",
            g.accuracy.accuracy, g.unresolvable_fraction, g.hard_fraction, g.distinct
        );
        let bleu: Vec<String> = g.bleu.bleu.iter().map(|b| format!("{b:.4}")).collect();
        println!("bleu-1..4: {}  (over {} pairs)", bleu.join(" "), g.bleu_pairs);
        println!("query neighbour intent agreement: {:.3}", g.knn_intent_agreement);
    }
    println!("report: {}", dir.report("metrics.json").display());
}
