//! `toxbias` subcommands.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 compatibility
//! error (vocabulary checksum or file version mismatch).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use toxbias_core::corpus::{Comment, LabelSchema, Preprocessor, Tokenizer, Vocabulary, CIVIL_SUBTYPES, DEFAULT_MAX_LEN};
use toxbias_core::embed::{build_table, EmbeddingTable, VectorMap};
use toxbias_core::metrics::{bias_report, ks_two_sample, KsResult, DEFAULT_POWER};
use toxbias_core::nn::predict;
use toxbias_core::synth::{bias_corpus, separable_corpus, BiasCorpusConfig};
use toxbias_core::templates::{builtin_templates, parse_templates, run_probe, ProbeResult, ProbeSetup};
use toxbias_core::train::{propagate_identities, run_experiment, scored_examples, FoldMetrics, RunRecord};

use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::config::RunConfig;
use crate::corpus_io::{load_corpus, write_corpus, Format};
use crate::dataset::{read_vocab, write_vocab, PreparedDataset, DATASET_VERSION};
use crate::fsutil::{sha256_file, sha256_hex, write_atomic};
use crate::predictions::{PredictionRow, Predictions};
use crate::replication::{replicate, Replication, ReplicationConfig};
use crate::reports::{csv_sibling, write_probe_csv, write_report_csv, Artifact, Metadata};
use crate::vectors::load_vectors;
use crate::{Error, Result};

// Stdout carries human-readable summaries only; artifacts are already on disk,
// so a closed pipe (`toxbias ... | head`) is not an error.
macro_rules! say {
    (raw $($t:tt)*) => {{
        let _ = std::io::Write::write_fmt(&mut std::io::stdout(), format_args!($($t)*));
    }};
    ($($t:tt)*) => {{
        let _ = std::io::Write::write_fmt(&mut std::io::stdout(), format_args!("{}\n", format_args!($($t)*)));
    }};
}

#[derive(Debug, Parser)]
#[command(name = "toxbias", version, about = "Multi-task toxicity classifier and unintended-bias evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize a corpus, build or reuse a vocabulary, and print corpus statistics.
    Prep(PrepArgs),
    /// Fill missing identity labels with a model trained on the annotated rows.
    Propagate(PropagateArgs),
    /// Cross-validated training; writes one checkpoint per fold and a run record.
    Train(TrainArgs),
    /// Score a prepared dataset with a checkpoint and write a bias report.
    Evaluate(EvaluateArgs),
    /// Bias report from a predictions file (scores of any model).
    BiasReport(BiasReportArgs),
    /// Score identity templates with a checkpoint.
    Templates(TemplatesArgs),
    /// Two-sample Kolmogorov-Smirnov test over the per-fold metrics of two runs.
    KsCompare(KsArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Single-task vs multi-task comparison on the synthetic bias corpus.
    Replicate(ReplicateArgs),
}

/// Comma-separated names; the empty string is the empty list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NameList(pub Vec<String>);

impl std::str::FromStr for NameList {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(NameList(s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()))
    }
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    /// Identity columns [default: the nine Civil Comments identities].
    #[arg(long)]
    pub identities: Option<NameList>,
    /// Subtype columns [default: the five Civil Comments subtypes].
    #[arg(long)]
    pub subtypes: Option<NameList>,
}

impl SchemaArgs {
    fn schema(&self) -> LabelSchema {
        let civil = LabelSchema::civil_comments();
        LabelSchema::new(
            self.identities.clone().map_or(civil.identities, |l| l.0),
            self.subtypes.clone().map_or_else(|| CIVIL_SUBTYPES.iter().map(|s| s.to_string()).collect(), |l| l.0),
        )
    }
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Input format [default: from the file extension].
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Where to write the vocabulary built from the input.
    #[arg(long, required_unless_present = "vocab", conflicts_with = "vocab")]
    pub vocab_out: Option<PathBuf>,
    /// Encode with an existing vocabulary instead of building one.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight `c` of non-toxic comments that mention an identity.
    #[arg(long, default_value_t = 3.0)]
    pub identity_weight: f64,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    /// Vocabulary size cap, reserved tokens excluded.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML) [default: built-in defaults].
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "TOXBIAS_SEED")]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let mut c = RunConfig::load(p)?;
                c.resolve_paths(p);
                c
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// A fixed α such as `0.6`, or `grid:0.2,0.6,1.0` to select α by
    /// validation generalized mean bias AUC (`grid` alone uses the config grid).
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Subgroups to report [default: every identity in the data]; "" reports
    /// overall metrics only.
    #[arg(long)]
    pub subgroups: Option<NameList>,
    #[arg(long, default_value_t = DEFAULT_POWER, allow_negative_numbers = true)]
    pub p: f64,
    /// Report JSON; the per-subgroup CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the model's scores as a predictions file.
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BiasReportArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// [default: every identity column in the file]
    #[arg(long)]
    pub subgroups: Option<NameList>,
    #[arg(long, default_value_t = DEFAULT_POWER, allow_negative_numbers = true)]
    pub p: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TemplatesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value = "gay,lesbian,bisexual,muslim,jew,black")]
    pub keywords: NameList,
    /// Extra templates, one `polarity<TAB>text` per line.
    #[arg(long)]
    pub templates_file: Option<PathBuf>,
    /// Probe only the templates from --templates-file.
    #[arg(long, requires = "templates_file")]
    pub no_builtin: bool,
    /// Probe JSON; the per-template CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FoldMetric {
    Auc,
    F1,
    Gmb,
    Precision,
    Recall,
}

impl FoldMetric {
    fn key(self) -> &'static str {
        match self {
            FoldMetric::Auc => "auc",
            FoldMetric::F1 => "f1",
            FoldMetric::Gmb => "gmb",
            FoldMetric::Precision => "precision",
            FoldMetric::Recall => "recall",
        }
    }
}

#[derive(Debug, Args)]
pub struct KsArgs {
    #[arg(long)]
    pub run_a: PathBuf,
    #[arg(long)]
    pub run_b: PathBuf,
    #[arg(long, value_enum, default_value = "auc")]
    pub metric: FoldMetric,
    /// Also write the result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Identity keywords co-occur with toxicity in training only.
    Bias,
    /// Toxic iff the comment contains the marker token.
    Separable,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "bias")]
    pub kind: SynthKind,
    #[arg(long, env = "TOXBIAS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Number of comments (separable) or training comments (bias).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out split of the bias corpus.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// Replication settings (TOML) [default: built-in defaults].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training seeds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prep(a) => prep(&a),
        Command::Propagate(a) => propagate(&a),
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::BiasReport(a) => bias_report_cmd(&a),
        Command::Templates(a) => templates(&a),
        Command::KsCompare(a) => ks_compare(&a),
        Command::Synth(a) => synth(&a),
        Command::Replicate(a) => replicate_cmd(&a),
    }
}

fn inputs<'a>(files: impl IntoIterator<Item = (&'a str, &'a Path)>) -> Result<BTreeMap<String, String>> {
    files.into_iter().map(|(k, p)| Ok((k.to_string(), sha256_file(p)?))).collect()
}

/// Corpus statistics printed by `prep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub comments: usize,
    pub nontoxic: usize,
    pub unannotated: usize,
    /// Identity → (comments mentioning it, of which toxic).
    pub identities: BTreeMap<String, (usize, usize)>,
    /// Non-toxic comments that mention an identity (weighted by `c`).
    pub upweighted: usize,
}

impl CorpusStats {
    pub fn of(comments: &[Comment], schema: &LabelSchema) -> Self {
        let mut identities: BTreeMap<String, (usize, usize)> = schema.identities.iter().map(|n| (n.clone(), (0, 0))).collect();
        for c in comments {
            for name in c.memberships(schema, 0.5) {
                let e = identities.get_mut(name).expect("membership names come from the schema");
                e.0 += 1;
                e.1 += usize::from(c.y_bin);
            }
        }
        CorpusStats {
            comments: comments.len(),
            nontoxic: comments.iter().filter(|c| !c.y_bin).count(),
            unannotated: comments.iter().filter(|c| c.needs_propagation).count(),
            identities,
            upweighted: comments.iter().filter(|c| !c.y_bin && c.identity_present).count(),
        }
    }

    pub fn render(&self, schema: &LabelSchema, c: f64) -> String {
        let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let mut s = format!(
            "comments      {}\nnon-toxic     {} ({:.1}%)\nunannotated   {}\nweighted β=c  {} (c = {c})\n\n{:<32} {:>8} {:>8}\n",
            self.comments,
            self.nontoxic,
            pct(self.nontoxic, self.comments),
            self.unannotated,
            self.upweighted,
            "identity",
            "count",
            "toxic%"
        );
        for name in &schema.identities {
            let (n, tox) = self.identities[name];
            s.push_str(&format!("{name:<32} {n:>8} {:>7.1}%\n", pct(tox, n)));
        }
        s
    }
}

fn prep(a: &PrepArgs) -> Result<()> {
    let schema = a.schema.schema();
    if a.max_len == 0 {
        return Err(Error::Usage("--max-len must be at least 1".into()));
    }
    if !(a.identity_weight > 0.0) {
        return Err(Error::Usage("--identity-weight must be positive".into()));
    }
    let format = a.format.unwrap_or_else(|| Format::from_path(&a.input));
    let records = load_corpus(&a.input, format, &schema)?;
    let tokenizer = Tokenizer::default();
    let pre = match &a.vocab {
        Some(path) => Preprocessor { tokenizer, vocab: read_vocab(path)?, schema: schema.clone(), max_len: a.max_len, c: a.identity_weight },
        None => Preprocessor::fit(&records, tokenizer, schema.clone(), a.max_len, a.identity_weight, a.min_freq, a.max_vocab),
    };
    let comments = pre.comments(&records)?;
    if let Some(out) = &a.vocab_out {
        write_vocab(out, &pre.vocab)?;
    }
    let stats = CorpusStats::of(&comments, &schema);
    let dataset = PreparedDataset {
        format_version: DATASET_VERSION,
        schema: schema.clone(),
        tokenizer: pre.tokenizer.clone(),
        max_len: a.max_len,
        identity_weight: a.identity_weight,
        vocab_checksum: pre.vocab.checksum(),
        source_sha256: sha256_file(&a.input)?,
        comments,
    };
    dataset.save(&a.out)?;
    say!(raw "{}", stats.render(&schema, a.identity_weight));
    say!("vocabulary    {} tokens", pre.vocab.len());
    Ok(())
}

fn embedding_table(cfg: &RunConfig, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let e = &cfg.embeddings;
    let load = |src: &Option<PathBuf>, dim: usize| -> Result<VectorMap> {
        src.as_deref().map_or_else(|| Ok(VectorMap::new()), |p| load_vectors(p, dim))
    };
    Ok(build_table(vocab, &load(&e.source1, e.dim1)?, e.dim1, &load(&e.source2, e.dim2)?, e.dim2, e.oov_seed)?)
}

fn load_data(data: &Path, vocab: &Path) -> Result<(PreparedDataset, Vocabulary)> {
    let dataset = PreparedDataset::load(data)?;
    let vocab = read_vocab(vocab)?;
    dataset.check_vocab(&vocab)?;
    Ok((dataset, vocab))
}

fn config_inputs<'a>(args: &'a ConfigArgs, cfg: &'a RunConfig) -> Vec<(&'a str, &'a Path)> {
    let mut v: Vec<(&str, &Path)> = Vec::new();
    if let Some(p) = &args.config {
        v.push(("config", p));
    }
    if let Some(p) = &cfg.embeddings.source1 {
        v.push(("embeddings1", p));
    }
    if let Some(p) = &cfg.embeddings.source2 {
        v.push(("embeddings2", p));
    }
    v
}

fn propagate(a: &PropagateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let psec = cfg.propagation.clone().ok_or_else(|| Error::Usage("the config has no [propagation] section".into()))?;
    let (mut dataset, vocab) = load_data(&a.data, &a.vocab)?;
    let table = embedding_table(&cfg, &vocab)?;
    let pcfg = cfg.propagation_config(&psec, table.dim(), &dataset.schema);
    let (mut todo, done): (Vec<Comment>, Vec<Comment>) = dataset.comments.drain(..).partition(|c| c.needs_propagation);
    let n = propagate_identities(&done, &mut todo, &table, &pcfg, cfg.identity_weight)?;
    let order: BTreeMap<String, usize> = done.iter().chain(&todo).enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
    dataset.comments = done.into_iter().chain(todo).collect();
    dataset.comments.sort_by_key(|c| order[&c.id]);
    dataset.save(&a.out)?;
    say!("propagated identity labels to {n} comments");
    Ok(())
}

/// `0.6` → fixed α; `grid` or `grid:a,b,…` → grid search.
pub fn parse_alpha(s: &str) -> Result<(Option<f64>, Option<Vec<f64>>)> {
    let bad = || Error::Usage(format!("invalid --alpha {s:?}: expected a number or grid:a,b,..."));
    if s == "grid" {
        return Ok((None, Some(Vec::new())));
    }
    if let Some(list) = s.strip_prefix("grid:") {
        let grid = list.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
        return Ok((None, Some(grid)));
    }
    Ok((Some(s.parse().map_err(|_| bad())?), None))
}

fn train(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = a.config.load()?;
    if let Some(f) = a.folds {
        cfg.folds = f;
    }
    if let Some(s) = &a.alpha {
        match parse_alpha(s)? {
            (Some(alpha), _) => {
                cfg.training.alpha = alpha;
                cfg.training.grid_search = false;
            }
            (None, Some(grid)) => {
                if !grid.is_empty() {
                    cfg.training.alpha_grid = grid;
                }
                cfg.training.grid_search = true;
            }
            (None, None) => unreachable!(),
        }
    }
    let (dataset, vocab) = load_data(&a.data, &a.vocab)?;
    let table = embedding_table(&cfg, &vocab)?;
    let exp = cfg.experiment(table.dim(), &dataset.schema);
    let out = run_experiment(dataset.comments.clone(), &table, &dataset.schema, &exp)?;

    std::fs::create_dir_all(&a.out_dir).map_err(Error::io(&a.out_dir))?;
    for (fold, params) in out.models.iter().enumerate() {
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            hyper: exp.hyper.clone(),
            aux_task: cfg.aux_task,
            schema: dataset.schema.clone(),
            tokenizer: dataset.tokenizer.clone(),
            max_len: dataset.max_len,
            vocab_checksum: dataset.vocab_checksum,
            alpha: out.record.alpha,
            fold,
            params: params.clone(),
            embedding: table.clone(),
        };
        ck.save(&a.out_dir.join(format!("fold-{fold}.ckpt.json")))?;
    }
    write_atomic(&a.out_dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut files = vec![("data", a.data.as_path()), ("vocab", a.vocab.as_path())];
    files.extend(config_inputs(&a.config, &cfg));
    let ins = inputs(files)?;
    if let Some(grid) = &out.record.grid {
        Artifact::new("grid_search", ins.clone(), grid.clone(), Metadata::now(None)).save(&a.out_dir.join("grid.json"))?;
        for p in &grid.points {
            say!("alpha {:<5} gmb {:<20} auc {}", p.alpha, fmt_score(p.score.value()), fmt_score(p.overall_auc.value()));
        }
        say!("chosen alpha {}", grid.chosen_alpha);
    }
    let secs = started.elapsed().as_secs_f64();
    Artifact::new("run", ins, out.record.clone(), Metadata::now(Some(secs))).save(&a.out_dir.join("run.json"))?;
    let m = &out.record.aggregate.mean;
    say!(
        "{} folds, alpha {}: mean AUC {} generalized mean bias AUC {} F1 {:.4}",
        out.record.folds.len(),
        out.record.alpha,
        fmt_score(m.auc.value()),
        fmt_score(m.generalized_mean_bias_auc.value()),
        m.f1
    );
    Ok(())
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn resolve_subgroups(requested: &Option<NameList>, available: &[String]) -> Result<Vec<String>> {
    match requested {
        None => Ok(available.to_vec()),
        Some(NameList(list)) => {
            if let Some(bad) = list.iter().find(|s| !available.contains(s)) {
                return Err(Error::Usage(format!("unknown subgroup {bad:?}; available: {}", available.join(","))));
            }
            Ok(list.clone())
        }
    }
}

fn save_report(out: &Path, ins: BTreeMap<String, String>, report: &toxbias_core::metrics::BiasReport) -> Result<()> {
    Artifact::new("bias_report", ins, report.clone(), Metadata::now(None)).save(out)?;
    write_report_csv(&csv_sibling(out), report)?;
    say!(
        "AUC {}  generalized mean bias AUC {} (p = {}, {} subgroups)  P {:.4} R {:.4} F1 {:.4}",
        fmt_score(report.overall_auc.value()),
        fmt_score(report.generalized_mean_bias_auc.value()),
        report.p,
        report.n_effective,
        report.prf1.precision,
        report.prf1.recall,
        report.prf1.f1
    );
    for s in &report.subgroups {
        say!("  {:<32} subgroup AUC {:<10} BPSN AUC {}", s.name, fmt_score(s.subgroup_auc.auc.value()), fmt_score(s.bpsn_auc.auc.value()));
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let dataset = PreparedDataset::load(&a.data)?;
    if dataset.vocab_checksum != ck.vocab_checksum {
        return Err(toxbias_core::Error::VocabChecksumMismatch { expected: ck.vocab_checksum, found: dataset.vocab_checksum }.into());
    }
    let subgroups = resolve_subgroups(&a.subgroups, &dataset.schema.identities)?;
    let preds = predict(&ck.params, &ck.embedding, &dataset.comments)?;
    let examples = scored_examples(&dataset.comments, &preds, &dataset.schema);
    let report = bias_report(&examples, &subgroups, a.p);
    if let Some(path) = &a.predictions_out {
        let rows = dataset
            .comments
            .iter()
            .zip(&preds)
            .map(|(c, p)| PredictionRow {
                id: c.id.clone(),
                score: p.toxicity,
                label: if c.y_bin { 1.0 } else { 0.0 },
                identities: c.identity_labels.iter().map(|&v| Some(v)).collect(),
            })
            .collect();
        Predictions { identity_columns: dataset.schema.identities.clone(), rows }.save(path, Format::from_path(path))?;
    }
    let ins = inputs([("checkpoint", a.checkpoint.as_path()), ("data", a.data.as_path())])?;
    save_report(&a.out, ins, &report)
}

fn bias_report_cmd(a: &BiasReportArgs) -> Result<()> {
    let preds = Predictions::load(&a.predictions, a.format.unwrap_or_else(|| Format::from_path(&a.predictions)))?;
    let subgroups = resolve_subgroups(&a.subgroups, &preds.identity_columns)?;
    let report = bias_report(&preds.scored_examples(), &subgroups, a.p);
    save_report(&a.out, inputs([("predictions", a.predictions.as_path())])?, &report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub threshold: f64,
    pub keywords: Vec<String>,
    pub templates: usize,
    pub results: Vec<ProbeResult>,
}

fn templates(a: &TemplatesArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let vocab = read_vocab(&a.vocab)?;
    let mut list = if a.no_builtin { Vec::new() } else { builtin_templates() };
    if let Some(path) = &a.templates_file {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let source = path.display().to_string();
        list.extend(parse_templates(&text, &source).map_err(|e| match e {
            toxbias_core::Error::Parse { line, message } => Error::Line { path: path.clone(), line, message },
            other => Error::format(path, other.to_string()),
        })?);
    }
    if a.keywords.0.is_empty() {
        return Err(Error::Usage("--keywords is empty".into()));
    }
    let setup = ProbeSetup::new(&vocab, &ck.tokenizer, ck.max_len);
    let results = run_probe(&ck.model(), &setup, &a.keywords.0, &list)?;
    let report = ProbeReport { threshold: setup.threshold, keywords: a.keywords.0.clone(), templates: list.len(), results };
    let mut files = vec![("checkpoint", a.checkpoint.as_path()), ("vocab", a.vocab.as_path())];
    if let Some(p) = &a.templates_file {
        files.push(("templates", p));
    }
    Artifact::new("probe", inputs(files)?, report.clone(), Metadata::now(None)).save(&a.out)?;
    write_probe_csv(&csv_sibling(&a.out), &report.results, report.threshold)?;
    say!("{:<16} {:>14} {:>11} {:>14}", "identity", "mean nontoxic", "mean toxic", "misclassified");
    for r in &report.results {
        say!(
            "{:<16} {:>14} {:>11} {:>14}",
            r.identity,
            r.mean_nontoxic.map_or("-".into(), |v| format!("{v:.4}")),
            r.mean_toxic.map_or("-".into(), |v| format!("{v:.4}")),
            r.misclassified()
        );
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsComparison {
    pub metric: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub result: KsResult,
}

fn fold_values(path: &Path, metric: FoldMetric) -> Result<Vec<f64>> {
    let run = Artifact::<RunRecord>::load(path, "run")?;
    let per_fold: &[FoldMetrics] = &run.content.aggregate.per_fold;
    if per_fold.len() < 2 {
        return Err(Error::format(path, format!("need at least 2 folds, found {}", per_fold.len())));
    }
    per_fold
        .iter()
        .enumerate()
        .map(|(i, m)| {
            m.get(metric.key())
                .and_then(|s| s.value())
                .ok_or_else(|| Error::format(path, format!("metric {} is undefined in fold {i}", metric.key())))
        })
        .collect()
}

pub fn ks_compare_runs(run_a: &Path, run_b: &Path, metric: FoldMetric) -> Result<KsComparison> {
    let a = fold_values(run_a, metric)?;
    let b = fold_values(run_b, metric)?;
    let result = ks_two_sample(&a, &b)?;
    Ok(KsComparison { metric: metric.key().into(), a, b, result })
}

fn ks_compare(a: &KsArgs) -> Result<()> {
    let cmp = ks_compare_runs(&a.run_a, &a.run_b, a.metric)?;
    say!("metric {}  D = {}  p = {}", cmp.metric, cmp.result.statistic, cmp.result.p_value);
    if let Some(out) = &a.out {
        let ins = inputs([("run_a", a.run_a.as_path()), ("run_b", a.run_b.as_path())])?;
        Artifact::new("ks_compare", ins, cmp, Metadata::now(None)).save(out)?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let format = a.format.unwrap_or_else(|| Format::from_path(&a.out));
    match a.kind {
        SynthKind::Separable => {
            let records = separable_corpus(a.n.unwrap_or(200), a.seed);
            write_corpus(&a.out, &records, &LabelSchema::new(Vec::new(), Vec::new()), format)?;
            say!("wrote {} comments", records.len());
        }
        SynthKind::Bias => {
            let mut cfg = BiasCorpusConfig::default();
            if let Some(n) = a.n {
                cfg.n_train = n;
            }
            let corpus = bias_corpus(&cfg, a.seed);
            write_corpus(&a.out, &corpus.train, &corpus.schema, format)?;
            if let Some(test) = &a.test_out {
                write_corpus(test, &corpus.test, &corpus.schema, a.format.unwrap_or_else(|| Format::from_path(test)))?;
            }
            say!(
                "wrote {} training and {} held-out comments; identities: {}",
                corpus.train.len(),
                corpus.test.len(),
                corpus.schema.identities.join(",")
            );
        }
    }
    Ok(())
}

fn replicate_cmd(a: &ReplicateArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(Error::io(p))?;
            toml::from_str::<ReplicationConfig>(&text).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => ReplicationConfig::default(),
    };
    if let Some(seeds) = &a.seeds {
        cfg.seeds = seeds.clone();
    }
    let rep: Replication = replicate(&cfg)?;
    let ins = match &a.config {
        Some(p) => inputs([("config", p.as_path())])?,
        None => BTreeMap::from([("config".to_string(), sha256_hex(toml::to_string(&cfg).unwrap_or_default().as_bytes()))]),
    };
    for s in &rep.summary {
        let bpsn: Vec<String> = s.median_bpsn.iter().map(|(k, v)| format!("{k} {}", fmt_score(v.value()))).collect();
        say!("{:<12} median non-toxic template score {:.4}", s.arm, s.median_nontoxic_template);
        say!("{:<12} median BPSN AUC: {}", "", bpsn.join(", "));
    }
    Artifact::new("replication", ins, rep, Metadata::now(Some(started.elapsed().as_secs_f64()))).save(&a.out)
}
