//! Source-to-target experiments over partitions and seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{plan_corpus, InjectionPlan};
use crate::corpus::{load_corpus, make_partitions, Corpus, NUM_PARTITIONS};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::eval::{domain_diagnostics, exact_match_f1, kg_only_tagger, mean_std, DomainDiagnostics, EvalReport};
use crate::inject::{
    deterministic_train_insertion, measure_pivot_pr, stochastic_train_insertion, EnrichedSequence, InsertionStats,
    PivotPolicy, PivotPr,
};
use crate::kg::{build_domain_kg, BuildLog, DomainKG, EmbeddingTable, FileGenerator, KgConfig, TripleGenerator, TripleStore};
use crate::model::{build_examples, train, AttentionMode, Example, Injection, ModelConfig, TrainConfig, TrainReport, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Plain,
    Pivot,
    ModifiedDea,
    KgOnly,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Plain => "plain",
            RunMode::Pivot => "pivot",
            RunMode::ModifiedDea => "modified_dea",
            RunMode::KgOnly => "kg_only",
        }
    }

    fn uses_kg(self) -> bool {
        !matches!(self, RunMode::Plain)
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(RunMode::Plain),
            "pivot" => Ok(RunMode::Pivot),
            "modified_dea" => Ok(RunMode::ModifiedDea),
            "kg_only" => Ok(RunMode::KgOnly),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Insertion {
    Stochastic,
    Deterministic,
}

impl std::str::FromStr for Insertion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(Insertion::Stochastic),
            "deterministic" => Ok(Insertion::Deterministic),
            other => Err(Error::Config(format!("unknown insertion `{other}`"))),
        }
    }
}

/// Where the stochastic insertion targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PivotTargets {
    /// Measured on the source validation split with the source-domain graph.
    SourceKg,
    /// Measured on the source validation split with the target-domain graph.
    TargetKg,
    Fixed { precision: f64, recall: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub head_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub k_rel: usize,
    pub max_len: usize,
    /// Attention used by the `plain` and `pivot` arms.
    pub attention: AttentionMode,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            head_dim: 16,
            heads: 2,
            layers: 2,
            k_rel: 8,
            max_len: 64,
            attention: AttentionMode::BaselineDea,
        }
    }
}

impl ModelShape {
    fn config(&self, vocab: Vocab, mode: AttentionMode) -> ModelConfig {
        ModelConfig {
            head_dim: self.head_dim,
            heads: self.heads,
            layers: self.layers,
            k_rel: self.k_rel,
            max_len: self.max_len,
            mode,
            ..ModelConfig::toy(vocab, mode)
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_modes() -> Vec<RunMode> {
    vec![RunMode::Plain, RunMode::Pivot]
}

fn default_kg_sample() -> Vec<f64> {
    vec![100.0]
}

fn default_targets() -> PivotTargets {
    PivotTargets::SourceKg
}

fn default_insertion() -> Insertion {
    Insertion::Stochastic
}

fn default_train() -> TrainConfig {
    TrainConfig::toy(0)
}

/// A complete experiment description. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: PathBuf,
    pub target: PathBuf,
    pub triples: PathBuf,
    pub embeddings: PathBuf,
    #[serde(default)]
    pub generator: Option<PathBuf>,
    /// Prebuilt target graph; built from the target corpus when absent.
    #[serde(default)]
    pub target_kg: Option<PathBuf>,
    #[serde(default)]
    pub kg: KgConfig,
    #[serde(default = "default_modes")]
    pub modes: Vec<RunMode>,
    #[serde(default = "default_insertion")]
    pub insertion: Insertion,
    #[serde(default = "default_targets")]
    pub pivot_targets: PivotTargets,
    #[serde(default)]
    pub model: ModelShape,
    /// `seed` is replaced by each run's seed.
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub partition_seed: u64,
    /// Percentages of non-seed target graph nodes kept when enriching the
    /// target test split.
    #[serde(default = "default_kg_sample")]
    pub kg_sample: Vec<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(default)]
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn new(source: PathBuf, target: PathBuf, triples: PathBuf, embeddings: PathBuf) -> Self {
        ExperimentConfig {
            source,
            target,
            triples,
            embeddings,
            generator: None,
            target_kg: None,
            kg: KgConfig::default(),
            modes: default_modes(),
            insertion: default_insertion(),
            pivot_targets: default_targets(),
            model: ModelShape::default(),
            train: default_train(),
            seeds: default_seeds(),
            partition_seed: 0,
            kg_sample: default_kg_sample(),
            out: None,
            threads: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(&read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.source);
        resolve(&mut cfg.target);
        resolve(&mut cfg.triples);
        resolve(&mut cfg.embeddings);
        cfg.generator.as_mut().map(resolve);
        cfg.target_kg.as_mut().map(resolve);
        cfg.out.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.kg.validate()?;
        self.train.validate()?;
        if self.modes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("at least one mode and one seed are required".into()));
        }
        if self.kg_sample.is_empty() || self.kg_sample.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(Error::Config("kg_sample values must lie in [0, 100]".into()));
        }
        if let PivotTargets::Fixed { precision, recall } = self.pivot_targets {
            PivotPolicy { precision, recall, rng_seed: 0 }.validate()?;
        }
        Ok(())
    }
}

/// Loaded inputs of an experiment.
pub struct ExperimentInputs {
    pub source: Corpus,
    pub target: Corpus,
    pub store: TripleStore,
    pub embeddings: EmbeddingTable,
    pub generator: Option<FileGenerator>,
    pub target_kg: Option<DomainKG>,
}

impl ExperimentInputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(ExperimentInputs {
            source: load_corpus(&cfg.source)?,
            target: load_corpus(&cfg.target)?,
            store: TripleStore::load(&cfg.triples)?,
            embeddings: EmbeddingTable::load(&cfg.embeddings)?,
            generator: cfg.generator.as_deref().map(FileGenerator::load).transpose()?,
            target_kg: cfg.target_kg.as_deref().map(DomainKG::load).transpose()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub partition: usize,
    pub seed: u64,
    pub mode: RunMode,
    /// Graph sample percentage used on the target test split.
    pub kg_sample: Option<f64>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    pub pivot_pr: Option<PivotPr>,
    pub insertion: Option<InsertionStats>,
    pub training: Option<TrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: RunMode,
    pub kg_sample: Option<f64>,
    pub runs: usize,
    pub failures: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub source: String,
    pub target: String,
    pub source_kg: BuildLog,
    pub target_kg: Option<BuildLog>,
    pub diagnostics: BTreeMap<String, DomainDiagnostics>,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    /// Some run failed; the summary covers the successful ones only.
    pub partial: bool,
}

impl ExperimentReport {
    pub fn summary_row(&self, mode: RunMode, kg_sample: Option<f64>) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.mode == mode && r.kg_sample == kg_sample)
    }

    pub const RUNS_HEADER: &'static str = "partition\tseed\tmode\tkg_sample\tstatus\tf1\tprecision\trecall";

    pub fn runs_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::RUNS_HEADER);
        for r in &self.runs {
            let sample = r.kg_sample.map_or("-".to_string(), |s| format!("{s}"));
            match &r.report {
                Some(e) => {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{sample}\tok\t{:.6}\t{:.6}\t{:.6}",
                        r.partition,
                        r.seed,
                        r.mode.as_str(),
                        e.f1,
                        e.precision,
                        e.recall
                    );
                }
                None => {
                    let _ = writeln!(out, "{}\t{}\t{}\t{sample}\tfailed\t-\t-\t-", r.partition, r.seed, r.mode.as_str());
                }
            }
        }
        out
    }
}

/// Stochastic targets for one partition.
fn pivot_policy(cfg: &ExperimentConfig, validation: &Corpus, source_kg: &DomainKG, target_kg: &DomainKG, seed: u64) -> Result<(PivotPolicy, Option<PivotPr>)> {
    let (precision, recall, measured) = match cfg.pivot_targets {
        PivotTargets::Fixed { precision, recall } => (precision, recall, None),
        PivotTargets::SourceKg | PivotTargets::TargetKg => {
            let kg = if cfg.pivot_targets == PivotTargets::SourceKg { source_kg } else { target_kg };
            let pr = measure_pivot_pr(validation, kg)?;
            if pr.no_pivots {
                log::warn!("no pivots on the validation split; training without pivots");
                (1.0, 0.0, Some(pr))
            } else {
                (pr.precision, pr.recall, Some(pr))
            }
        }
    };
    Ok((PivotPolicy { precision, recall, rng_seed: seed }, measured))
}

/// Training-time enrichment of the source train split.
fn enrich_train(cfg: &ExperimentConfig, train_split: &Corpus, policy: &PivotPolicy, source_kg: &DomainKG) -> Result<(Vec<EnrichedSequence>, Option<InsertionStats>)> {
    match cfg.insertion {
        Insertion::Stochastic => {
            let (seqs, stats) = stochastic_train_insertion(train_split, policy)?;
            Ok((seqs, Some(stats)))
        }
        Insertion::Deterministic => Ok((deterministic_train_insertion(train_split, source_kg)?, None)),
    }
}

fn vocab_of(examples: &[Example]) -> Vocab {
    Vocab::build(examples.iter().flat_map(|e| e.tokens.iter().map(String::as_str)))
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    source: &'a Corpus,
    target: &'a Corpus,
    source_kg: &'a DomainKG,
    target_kg: &'a DomainKG,
    source_parts: crate::corpus::PartitionSet,
    target_parts: crate::corpus::PartitionSet,
}

fn sampled_plans(shared: &Shared<'_>, test: &Corpus, pct: f64, seed: u64) -> Result<Vec<InjectionPlan>> {
    let kg = if pct >= 100.0 {
        shared.target_kg.clone()
    } else {
        shared.target_kg.sample_nodes(pct, seed)?
    };
    Ok(plan_corpus(test, &kg))
}

fn gold_of(corpus: &Corpus) -> Result<Vec<Vec<crate::corpus::BioLabel>>> {
    corpus
        .sentences
        .iter()
        .map(|s| s.labels.clone().ok_or_else(|| Error::Invalid("evaluation corpus is unlabeled".into())))
        .collect()
}

/// All records for one (partition, seed).
fn run_job(shared: &Shared<'_>, partition: usize, seed: u64) -> Vec<RunRecord> {
    let cfg = shared.cfg;
    let mut records = Vec::new();
    let blank = |mode: RunMode, kg_sample: Option<f64>| RunRecord {
        partition,
        seed,
        mode,
        kg_sample,
        report: None,
        error: None,
        pivot_pr: None,
        insertion: None,
        training: None,
    };
    let prepared = (|| -> Result<_> {
        let sp = &shared.source_parts.partitions[partition];
        let tp = &shared.target_parts.partitions[partition];
        let train_split = shared.source.subset(&sp.train)?;
        let val_split = shared.source.subset(&sp.validation)?;
        let test_split = shared.target.subset(&tp.test)?;
        Ok((train_split, val_split, test_split))
    })();
    let (train_split, val_split, test_split) = match prepared {
        Ok(p) => p,
        Err(e) => {
            for &mode in &cfg.modes {
                records.push(RunRecord { error: Some(e.to_string()), ..blank(mode, None) });
            }
            return records;
        }
    };

    for &mode in &cfg.modes {
        let samples: Vec<Option<f64>> = if mode.uses_kg() {
            cfg.kg_sample.iter().map(|&p| Some(p)).collect()
        } else {
            vec![None]
        };
        let outcome = (|| -> Result<Vec<RunRecord>> {
            let gold = gold_of(&test_split)?;
            if mode == RunMode::KgOnly {
                return samples
                    .iter()
                    .map(|&s| {
                        let kg = match s {
                            Some(p) if p < 100.0 => shared.target_kg.sample_nodes(p, seed)?,
                            _ => shared.target_kg.clone(),
                        };
                        let pred = kg_only_tagger(&test_split, &kg)?;
                        Ok(RunRecord { report: Some(exact_match_f1(&pred, &gold)?), ..blank(mode, s) })
                    })
                    .collect();
            }

            let mut hp = cfg.train.clone();
            hp.seed = seed;
            let mut pivot_pr = None;
            let mut insertion = None;
            let (train_ex, val_ex, attention) = match mode {
                RunMode::Plain => (
                    train_split.sentences.iter().map(Example::plain).collect::<Vec<_>>(),
                    build_examples(&val_split, Injection::None)?,
                    cfg.model.attention,
                ),
                _ => {
                    let (policy, pr) = pivot_policy(cfg, &val_split, shared.source_kg, shared.target_kg, seed)?;
                    pivot_pr = pr;
                    let (seqs, stats) = enrich_train(cfg, &train_split, &policy, shared.source_kg)?;
                    insertion = stats;
                    let val_plans = plan_corpus(&val_split, shared.source_kg);
                    if mode == RunMode::Pivot {
                        (
                            seqs.iter().map(|s| Example::enriched(s, hp.pivot_loss)).collect(),
                            build_examples(&val_split, Injection::Pivot(&val_plans))?,
                            cfg.model.attention,
                        )
                    } else {
                        (
                            train_split
                                .sentences
                                .iter()
                                .zip(&seqs)
                                .map(|(s, q)| Example::indicator_from_enriched(s, q))
                                .collect::<Result<Vec<_>>>()?,
                            build_examples(&val_split, Injection::Indicator(&val_plans))?,
                            AttentionMode::ModifiedDea,
                        )
                    }
                }
            };
            let model_cfg = cfg.model.config(vocab_of(&train_ex), attention);
            let (model, training) = train(model_cfg, &train_ex, &val_ex, &hp)?;

            samples
                .iter()
                .map(|&s| {
                    let test_ex = match (mode, s) {
                        (RunMode::Plain, _) => build_examples(&test_split, Injection::None)?,
                        (_, s) => {
                            let plans = sampled_plans(shared, &test_split, s.unwrap_or(100.0), seed)?;
                            let inj = if mode == RunMode::Pivot { Injection::Pivot(&plans) } else { Injection::Indicator(&plans) };
                            build_examples(&test_split, inj)?
                        }
                    };
                    let pred = model.predict(&test_ex)?;
                    Ok(RunRecord {
                        report: Some(exact_match_f1(&pred, &gold)?),
                        pivot_pr,
                        insertion,
                        training: Some(training.clone()),
                        ..blank(mode, s)
                    })
                })
                .collect()
        })();
        match outcome {
            Ok(mut r) => records.append(&mut r),
            Err(e) => {
                log::error!("partition {partition} seed {seed} mode {}: {e}", mode.as_str());
                for s in samples {
                    records.push(RunRecord { error: Some(e.to_string()), ..blank(mode, s) });
                }
            }
        }
    }
    records
}

fn summarize(runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(RunMode, Option<u64>), Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.mode, r.kg_sample.map(f64::to_bits))).or_default().push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((mode, sample), rs)| {
            let f1s: Vec<f64> = rs.iter().filter_map(|r| r.report.map(|e| e.f1)).collect();
            let (mean_f1, std_f1) = mean_std(&f1s);
            SummaryRow {
                mode,
                kg_sample: sample.map(f64::from_bits),
                runs: f1s.len(),
                failures: rs.len() - f1s.len(),
                mean_f1,
                std_f1,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.mode.cmp(&b.mode).then(a.kg_sample.unwrap_or(0.0).total_cmp(&b.kg_sample.unwrap_or(0.0))));
    rows
}

/// Runs every (partition, seed) job on in-memory inputs.
pub fn run_with_inputs(cfg: &ExperimentConfig, inputs: &ExperimentInputs) -> Result<(ExperimentReport, DomainKG, DomainKG)> {
    cfg.validate()?;
    let generator = inputs.generator.as_ref().map(|g| g as &dyn TripleGenerator);
    let (source_kg, source_log) = build_domain_kg(&inputs.source, &inputs.store, &inputs.embeddings, generator, &cfg.kg)?;
    let (target_kg, target_log) = match &inputs.target_kg {
        Some(kg) => (kg.clone(), None),
        None => {
            let (kg, log) = build_domain_kg(&inputs.target, &inputs.store, &inputs.embeddings, generator, &cfg.kg)?;
            (kg, Some(log))
        }
    };
    let shared = Shared {
        cfg,
        source: &inputs.source,
        target: &inputs.target,
        source_kg: &source_kg,
        target_kg: &target_kg,
        source_parts: make_partitions(&inputs.source, cfg.partition_seed)?,
        target_parts: make_partitions(&inputs.target, cfg.partition_seed)?,
    };

    let jobs: Vec<(usize, u64)> = (0..NUM_PARTITIONS).flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s))).collect();
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len())
    .max(1);
    let mut results: Vec<Vec<RunRecord>> = vec![Vec::new(); jobs.len()];
    std::thread::scope(|scope| {
        let shared = &shared;
        let jobs = &jobs;
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..jobs.len())
                        .step_by(threads)
                        .map(|j| (j, run_job(shared, jobs[j].0, jobs[j].1)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (j, recs) in h.join().expect("experiment worker panicked") {
                results[j] = recs;
            }
        }
    });
    let runs: Vec<RunRecord> = results.into_iter().flatten().collect();

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert(inputs.source.domain_id.clone(), domain_diagnostics(&inputs.source, &source_kg)?);
    diagnostics.insert(inputs.target.domain_id.clone(), domain_diagnostics(&inputs.target, &target_kg)?);
    let report = ExperimentReport {
        source: inputs.source.domain_id.clone(),
        target: inputs.target.domain_id.clone(),
        source_kg: source_log,
        target_kg: target_log,
        diagnostics,
        partial: runs.iter().any(|r| r.error.is_some()),
        summary: summarize(&runs),
        runs,
    };
    Ok((report, source_kg, target_kg))
}

/// Loads inputs, runs the experiment and writes artifacts under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let inputs = ExperimentInputs::load(cfg)?;
    let (report, source_kg, target_kg) = run_with_inputs(cfg, &inputs)?;
    if let Some(out) = &cfg.out {
        write_artifacts(out, cfg, &report, &source_kg, &target_kg)?;
    }
    Ok(report)
}

pub fn write_artifacts(out: &Path, cfg: &ExperimentConfig, report: &ExperimentReport, source_kg: &DomainKG, target_kg: &DomainKG) -> Result<()> {
    write_string(&out.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;
    source_kg.save(&out.join("source_kg.json"))?;
    target_kg.save(&out.join("target_kg.json"))?;
    write_string(&out.join("report.json"), &serde_json::to_string_pretty(report)?)?;
    write_string(&out.join("runs.tsv"), &report.runs_tsv())?;
    let table = render_table(std::slice::from_ref(report));
    write_string(&out.join("summary.tsv"), &table.tsv)?;
    write_string(&out.join("summary.txt"), &table.text)?;
    let mut log = String::new();
    for r in report.runs.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(log, "partition {} seed {} {}: {}", r.partition, r.seed, r.mode.as_str(), r.error.as_deref().unwrap_or(""));
    }
    if !log.is_empty() {
        write_string(&out.join("errors.log"), &log)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub tsv: String,
    pub text: String,
}

/// One row per (setting, mode, graph sample) with `mean (std)` F1.
pub fn render_table(reports: &[ExperimentReport]) -> Table {
    let mut rows: Vec<[String; 5]> = Vec::new();
    for r in reports {
        for s in &r.summary {
            rows.push([
                format!("{}->{}", r.source, r.target),
                s.mode.as_str().to_string(),
                s.kg_sample.map_or("-".to_string(), |p| format!("{p}")),
                format!("{:.2} ({:.2})", 100.0 * s.mean_f1, 100.0 * s.std_f1),
                format!("{}/{}", s.runs, s.runs + s.failures),
            ]);
        }
    }
    let header = ["setting", "mode", "kg_sample", "f1", "runs"];
    let mut tsv = header.join("\t") + "\n";
    for r in &rows {
        tsv.push_str(&r.join("\t"));
        tsv.push('\n');
    }
    let widths: Vec<usize> = (0..5).map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0)).collect();
    let line = |cells: &[&str]| -> String {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut text = line(&header);
    text.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>()));
    for r in &rows {
        text.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    Table { tsv, text }
}

/// Collects every `report.json` below `dir`, in path order.
pub fn collect_reports(dir: &Path) -> Result<Vec<ExperimentReport>> {
    let mut paths = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "report.json") {
                paths.push(path);
            }
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no report.json under {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&read_to_string(p)?)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(modes: &[(RunMode, f64)]) -> ExperimentReport {
        ExperimentReport {
            source: "a".into(),
            target: "b".into(),
            source_kg: BuildLog::default(),
            target_kg: None,
            diagnostics: BTreeMap::new(),
            runs: Vec::new(),
            summary: modes
                .iter()
                .map(|&(mode, f1)| SummaryRow { mode, kg_sample: None, runs: 1, failures: 0, mean_f1: f1, std_f1: 0.0 })
                .collect(),
            partial: false,
        }
    }

    #[test]
    fn table_rows() {
        let t = render_table(&[report(&[(RunMode::Plain, 0.5)])]);
        assert_eq!(t.tsv.lines().count(), 2);
        assert_eq!(t.tsv.lines().nth(1).unwrap(), "a->b\tplain\t-\t50.00 (0.00)\t1/1");
        let t = render_table(&[report(&[(RunMode::Plain, 0.5), (RunMode::Pivot, 0.6)])]);
        assert_eq!(t.tsv.lines().count(), 3);
        assert!(t.text.contains("60.00 (0.00)"));
    }

    #[test]
    fn config_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"source":"s.tsv","target":"t.tsv","triples":"k.tsv","embeddings":"e.txt"}"#).unwrap();
        assert_eq!(cfg.seeds.len(), 3);
        assert_eq!(cfg.kg.k_seeds, 7);
        cfg.validate().unwrap();
        assert!("nonsense".parse::<RunMode>().is_err());
    }
}
