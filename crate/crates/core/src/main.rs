use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kginject::annotate::{plan_corpus, plans_to_tsv};
use kginject::corpus::{load_corpus, Corpus};
use kginject::eval::{embeddings_to_text, exact_match_f1, export_embeddings, kg_only_tagger, tp_fn_tally, EvalReport};
use kginject::experiment::{collect_reports, render_table, run_experiment, ExperimentConfig, Insertion, PivotTargets, RunMode};
use kginject::inject::{
    deterministic_train_insertion, enriched_to_tsv, insert_pivots, measure_pivot_pr, stochastic_train_insertion,
    PivotPolicy,
};
use kginject::kg::{build_domain_kg, DomainKG, EmbeddingTable, FileGenerator, KgConfig, TripleGenerator, TripleStore};
use kginject::model::encoder::Batch;
use kginject::model::{
    build_examples, gradient_check, train, AttentionMode, EncoderModel, EncoderParams, Example, Injection, ModelConfig,
    TrainConfig, Vocab,
};
use kginject::{Error, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUN: u8 = 3;

#[derive(Parser)]
#[command(name = "kginject", version, about = "Knowledge-graph pivot injection for cross-domain aspect extraction")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a domain graph from a corpus, a triple dump and embeddings.
    BuildKg(BuildKgArgs),
    /// Insert pivot tokens into a corpus.
    Enrich(EnrichArgs),
    /// Train a tagger and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the graph-only tagger) on a labeled corpus.
    Eval(EvalArgs),
    /// Run every partition and seed of an experiment config.
    RunExperiment(ExperimentArgs),
    /// Tabulate the reports found under a results directory.
    Report(ReportArgs),
    /// Compare analytic and finite-difference gradients on a small encoder.
    GradCheck(GradCheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    Pivot,
    ModifiedDea,
    KgOnly,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => RunMode::Plain,
            ModeArg::Pivot => RunMode::Pivot,
            ModeArg::ModifiedDea => RunMode::ModifiedDea,
            ModeArg::KgOnly => RunMode::KgOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InsertionArg {
    Stochastic,
    Deterministic,
}

impl From<InsertionArg> for Insertion {
    fn from(i: InsertionArg) -> Self {
        match i {
            InsertionArg::Stochastic => Insertion::Stochastic,
            InsertionArg::Deterministic => Insertion::Deterministic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AttentionArg {
    Plain,
    BaselineDea,
    ModifiedDea,
}

impl From<AttentionArg> for AttentionMode {
    fn from(a: AttentionArg) -> Self {
        match a {
            AttentionArg::Plain => AttentionMode::Plain,
            AttentionArg::BaselineDea => AttentionMode::BaselineDea,
            AttentionArg::ModifiedDea => AttentionMode::ModifiedDea,
        }
    }
}

#[derive(Args)]
struct KgArgs {
    #[arg(long, default_value_t = 7)]
    k_seeds: usize,
    #[arg(long, default_value_t = 2)]
    max_hops: usize,
    #[arg(long, default_value_t = 0.2)]
    min_relatedness: f64,
    #[arg(long, default_value_t = 100)]
    completions: usize,
}

impl KgArgs {
    fn config(&self) -> KgConfig {
        KgConfig {
            k_seeds: self.k_seeds,
            max_hops: self.max_hops,
            min_path_relatedness: self.min_relatedness,
            generator_completions: self.completions,
        }
    }
}

#[derive(Args)]
struct BuildKgArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    triples: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// `SEED\tTAIL` completions added after pruning.
    #[arg(long)]
    generator: Option<PathBuf>,
    #[command(flatten)]
    kg: KgArgs,
    /// Graph JSON; the build log goes next to it as `<stem>.log.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnrichArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Graph used for deterministic insertion and for measuring targets.
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "deterministic")]
    insertion: InsertionArg,
    /// Keep this percentage of non-seed graph nodes.
    #[arg(long)]
    kg_sample: Option<f64>,
    #[arg(long)]
    precision: Option<f64>,
    #[arg(long)]
    recall: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Enriched six-column TSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the injection plan audit TSV.
    #[arg(long)]
    plans: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "baseline-dea")]
    attention: AttentionArg,
    #[arg(long, default_value_t = 16)]
    head_dim: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    k_rel: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

#[derive(Args)]
struct HyperArgs {
    /// `toy` or `full`.
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    unk_dropout: Option<f64>,
}

impl HyperArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let mut hp = TrainConfig::preset(&self.preset, seed)?;
        if let Some(v) = self.lr {
            hp.lr = v;
        }
        if let Some(v) = self.epochs {
            hp.epochs = v;
        }
        if let Some(v) = self.batch_size {
            hp.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            hp.weight_decay = v;
        }
        if let Some(v) = self.patience {
            hp.patience = v;
        }
        if let Some(v) = self.unk_dropout {
            hp.unk_dropout = v;
        }
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Early stopping split.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "plain")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "stochastic")]
    insertion: InsertionArg,
    /// Graph for deterministic insertion, target measurement and
    /// validation enrichment.
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long)]
    precision: Option<f64>,
    #[arg(long)]
    recall: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Checkpoint path; the training report goes to `<stem>.train.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    mode: ModeArg,
    /// Checkpoint; not needed for `kg-only`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long)]
    kg_sample: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON; a one-row TSV is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write `DIM W` hidden-state rows for gold aspect tokens.
    #[arg(long)]
    export_embeddings: Option<PathBuf>,
    /// Write true-positive / false-negative token tables as JSON.
    #[arg(long)]
    tally: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seeds (repeatable).
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the configured modes (repeatable).
    #[arg(long, value_enum)]
    mode: Vec<ModeArg>,
    #[arg(long, value_enum)]
    insertion: Option<InsertionArg>,
    /// Replaces the configured graph samples (repeatable).
    #[arg(long)]
    kg_sample: Vec<f64>,
    #[arg(long)]
    partition_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Fixed stochastic targets instead of measured ones.
    #[arg(long, requires = "recall")]
    precision: Option<f64>,
    #[arg(long, requires = "precision")]
    recall: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory searched recursively for `report.json` files.
    dir: PathBuf,
    /// Also write the table as TSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, value_enum, default_value = "modified-dea")]
    attention: AttentionArg,
    #[arg(long, default_value_t = 4)]
    tokens: usize,
    #[arg(long, default_value_t = 8)]
    head_dim: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 3)]
    k_rel: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            e if e.is_data_error() => EXIT_DATA,
            _ => EXIT_RUN,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn load_kg(path: Option<&Path>, sample: Option<f64>, seed: u64) -> Result<Option<DomainKG>> {
    let Some(path) = path else { return Ok(None) };
    let kg = DomainKG::load(path)?;
    Ok(Some(match sample {
        Some(pct) => kg.sample_nodes(pct, seed)?,
        None => kg,
    }))
}

fn build_kg(a: BuildKgArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus)?;
    let store = TripleStore::load(&a.triples)?;
    let emb = EmbeddingTable::load(&a.embeddings)?;
    let generator = a.generator.as_deref().map(FileGenerator::load).transpose()?;
    let (kg, log) = build_domain_kg(&corpus, &store, &emb, generator.as_ref().map(|g| g as &dyn TripleGenerator), &a.kg.config())?;
    kg.save(&a.out)?;
    write(&sidecar(&a.out, ".log.json"), &serde_json::to_string_pretty(&log).map_err(Error::from)?)?;
    println!(
        "{} seeds, nodes raw {} pruned {} augmented {}",
        log.seeds.len(),
        log.raw_nodes,
        log.pruned_nodes,
        log.augmented_nodes
    );
    Ok(())
}

fn policy_for(corpus: &Corpus, kg: Option<&DomainKG>, precision: Option<f64>, recall: Option<f64>, seed: u64) -> Result<PivotPolicy> {
    let (p, r) = match (precision, recall, kg) {
        (Some(p), Some(r), _) => (p, r),
        (p, r, Some(kg)) => {
            let m = measure_pivot_pr(corpus, kg)?;
            let mp = if m.no_pivots { 1.0 } else { m.precision };
            (p.unwrap_or(mp), r.unwrap_or(m.recall))
        }
        _ => return Err(Error::Config("stochastic insertion needs --precision and --recall, or --kg".into())),
    };
    let policy = PivotPolicy { precision: p, recall: r, rng_seed: seed };
    policy.validate()?;
    Ok(policy)
}

fn enrich(a: EnrichArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus)?;
    let kg = load_kg(a.kg.as_deref(), a.kg_sample, a.seed)?;
    let seqs = match a.insertion {
        InsertionArg::Deterministic => {
            let kg = kg.as_ref().ok_or_else(|| usage("deterministic insertion needs --kg"))?;
            let plans = plan_corpus(&corpus, kg);
            if let Some(p) = &a.plans {
                write(p, &plans_to_tsv(&plans))?;
            }
            corpus
                .sentences
                .iter()
                .zip(&plans)
                .map(|(s, plan)| insert_pivots(s, plan))
                .collect::<Result<Vec<_>>>()?
        }
        InsertionArg::Stochastic => {
            let policy = policy_for(&corpus, kg.as_ref(), a.precision, a.recall, a.seed)?;
            let (seqs, stats) = stochastic_train_insertion(&corpus, &policy)?;
            eprintln!(
                "placed {} true spans and {} of {} false pivots (precision {:.4}, recall {:.4})",
                stats.true_spans, stats.false_placed, stats.false_requested, stats.achieved_precision, stats.achieved_recall
            );
            seqs
        }
    };
    write(&a.out, &enriched_to_tsv(&corpus, &seqs)?)?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let corpus = load_corpus(&a.train)?;
    let validation = a.validation.as_deref().map(load_corpus).transpose()?;
    let kg = load_kg(a.kg.as_deref(), None, a.seed)?;
    let hp = a.hyper.config(a.seed)?;
    let mode = RunMode::from(a.mode);
    let (train_ex, val_ex, attention) = match mode {
        RunMode::KgOnly => return Err(usage("kg-only mode has nothing to train")),
        RunMode::Plain => (
            corpus.sentences.iter().map(Example::plain).collect::<Vec<_>>(),
            validation.as_ref().map(|v| build_examples(v, Injection::None)).transpose()?,
            AttentionMode::from(a.model.attention),
        ),
        RunMode::Pivot | RunMode::ModifiedDea => {
            let seqs = match Insertion::from(a.insertion) {
                Insertion::Deterministic => {
                    let kg = kg.as_ref().ok_or_else(|| usage("deterministic insertion needs --kg"))?;
                    deterministic_train_insertion(&corpus, kg)?
                }
                Insertion::Stochastic => {
                    let measure_on = validation.as_ref().unwrap_or(&corpus);
                    let policy = policy_for(measure_on, kg.as_ref(), a.precision, a.recall, a.seed)?;
                    stochastic_train_insertion(&corpus, &policy)?.0
                }
            };
            let val_plans = match (&validation, &kg) {
                (Some(v), Some(kg)) => Some(plan_corpus(v, kg)),
                (Some(_), None) => return Err(usage("enriching the validation split needs --kg")),
                _ => None,
            };
            if mode == RunMode::Pivot {
                let val = match (&validation, &val_plans) {
                    (Some(v), Some(p)) => Some(build_examples(v, Injection::Pivot(p))?),
                    _ => None,
                };
                (seqs.iter().map(|s| Example::enriched(s, hp.pivot_loss)).collect(), val, AttentionMode::from(a.model.attention))
            } else {
                let train_ex = corpus
                    .sentences
                    .iter()
                    .zip(&seqs)
                    .map(|(s, q)| Example::indicator_from_enriched(s, q))
                    .collect::<Result<Vec<_>>>()?;
                let val = match (&validation, &val_plans) {
                    (Some(v), Some(p)) => Some(build_examples(v, Injection::Indicator(p))?),
                    _ => None,
                };
                (train_ex, val, AttentionMode::ModifiedDea)
            }
        }
    };
    let vocab = Vocab::build(train_ex.iter().flat_map(|e| e.tokens.iter().map(String::as_str)));
    let cfg = ModelConfig {
        head_dim: a.model.head_dim,
        heads: a.model.heads,
        layers: a.model.layers,
        k_rel: a.model.k_rel,
        max_len: a.model.max_len,
        ..ModelConfig::toy(vocab, attention)
    };
    let (model, report) = train(cfg, &train_ex, val_ex.as_deref().unwrap_or(&[]), &hp)?;
    model.save(&a.out)?;
    write(&sidecar(&a.out, ".train.json"), &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    println!(
        "trained {} epochs, best epoch {}, final loss {:.5}",
        report.epoch_losses.len(),
        report.best_epoch,
        report.epoch_losses.last().copied().unwrap_or(report.initial_loss)
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus)?;
    let gold: Vec<_> = corpus
        .sentences
        .iter()
        .map(|s| s.labels.clone().ok_or_else(|| Error::Invalid("evaluation corpus is unlabeled".into())))
        .collect::<Result<_>>()?;
    let kg = load_kg(a.kg.as_deref(), a.kg_sample, a.seed)?;
    let mode = RunMode::from(a.mode);
    let pred = match mode {
        RunMode::KgOnly => {
            let kg = kg.as_ref().ok_or_else(|| usage("kg-only evaluation needs --kg"))?;
            kg_only_tagger(&corpus, kg)?
        }
        _ => {
            let path = a.model.as_deref().ok_or_else(|| usage("--model is required"))?;
            let m = EncoderModel::load(path)?;
            let plans = match (mode, &kg) {
                (RunMode::Plain, _) => None,
                (_, Some(kg)) => Some(plan_corpus(&corpus, kg)),
                (_, None) => return Err(usage("pivot and modified-dea evaluation need --kg")),
            };
            let injection = match (mode, &plans) {
                (RunMode::Pivot, Some(p)) => Injection::Pivot(p),
                (RunMode::ModifiedDea, Some(p)) => Injection::Indicator(p),
                _ => Injection::None,
            };
            let pred = m.predict(&build_examples(&corpus, injection)?)?;
            if let Some(path) = &a.export_embeddings {
                let rows = export_embeddings(&m, &corpus, plans.as_deref())?;
                write(path, &embeddings_to_text(&rows)?)?;
            }
            pred
        }
    };
    let report = exact_match_f1(&pred, &gold)?;
    println!("{}", report.to_json()?);
    if let Some(out) = &a.out {
        write(out, &report.to_json()?)?;
        write(&sidecar(out, ".tsv"), &format!("{}\n{}\n", EvalReport::TSV_HEADER, report.tsv_row()))?;
    }
    if let Some(path) = &a.tally {
        let tally = tp_fn_tally(&pred, &gold, &corpus)?;
        write(path, &serde_json::to_string_pretty(&tally).map_err(Error::from)?)?;
    }
    Ok(())
}

fn experiment_cmd(a: ExperimentArgs) -> CliResult {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if !a.seed.is_empty() {
        cfg.seeds = a.seed;
    }
    if !a.mode.is_empty() {
        cfg.modes = a.mode.into_iter().map(RunMode::from).collect();
    }
    if let Some(i) = a.insertion {
        cfg.insertion = i.into();
    }
    if !a.kg_sample.is_empty() {
        cfg.kg_sample = a.kg_sample;
    }
    if let Some(out) = a.out {
        cfg.out = Some(out);
    }
    if let Some(s) = a.partition_seed {
        cfg.partition_seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(p) = a.patience {
        cfg.train.patience = p;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let (Some(precision), Some(recall)) = (a.precision, a.recall) {
        cfg.pivot_targets = PivotTargets::Fixed { precision, recall };
    }
    if cfg.out.is_none() {
        return Err(usage("an output directory is required (--out or `out` in the config)"));
    }
    let report = run_experiment(&cfg)?;
    print!("{}", render_table(std::slice::from_ref(&report)).text);
    if report.partial {
        return Err(Failure { code: EXIT_RUN, message: "some runs failed; see errors.log".into() });
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> CliResult {
    let reports = collect_reports(&a.dir)?;
    let table = render_table(&reports);
    print!("{}", table.text);
    if let Some(out) = &a.out {
        write(out, &table.tsv)?;
    }
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> CliResult {
    let words: Vec<String> = (0..a.tokens).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::build(words.iter().map(String::as_str));
    let cfg = ModelConfig {
        head_dim: a.head_dim,
        heads: a.heads,
        layers: a.layers,
        k_rel: a.k_rel,
        max_len: a.tokens.max(2),
        ..ModelConfig::toy(vocab.clone(), a.attention.into())
    };
    let params = EncoderParams::init(&cfg, a.seed)?;
    let ids: Vec<usize> = words.iter().map(|w| vocab.id(w)).collect();
    let flags: Vec<bool> = (0..a.tokens).map(|i| i % 2 == 1).collect();
    let targets: Vec<Option<usize>> = (0..a.tokens).map(|i| Some(i % 5)).collect();
    let batch = Batch::from_rows(&[(ids, flags, targets)])?;
    let report = gradient_check(&cfg, &params, &batch, a.tolerance)?;
    for t in &report.tensors {
        println!("{:<20} {:>6} {:.3e}", t.name, t.scalars, t.rel_error);
    }
    println!("max relative error {:.3e} (tolerance {:.1e})", report.max_rel_error, a.tolerance);
    if report.passed {
        Ok(())
    } else {
        Err(Failure { code: EXIT_RUN, message: "gradient check failed".into() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let result = match cli.command {
        Command::BuildKg(a) => build_kg(a),
        Command::Enrich(a) => enrich(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::RunExperiment(a) => experiment_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
