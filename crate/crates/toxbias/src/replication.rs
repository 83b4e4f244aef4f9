//! Single-task vs multi-task comparison on the synthetic bias corpus.
//!
//! Each seed draws a corpus (a fresh one unless `corpus_seed` pins it), trains
//! both arms on it, and measures BPSN
//! AUC per identity on the balanced test split plus the mean score the model
//! gives the non-toxic identity templates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use toxbias_core::corpus::{AuxTask, Comment, Preprocessor, Tokenizer};
use toxbias_core::embed::build_table;
use toxbias_core::loss::LossConfig;
use toxbias_core::metrics::{BiasReport, Score, DEFAULT_POWER};
use toxbias_core::nn::{Hyper, Model, Pooling};
use toxbias_core::synth::{bias_corpus, random_vectors, BiasCorpusConfig};
use toxbias_core::templates::{builtin_templates, run_probe, ProbeResult, ProbeSetup, DEFAULT_KEYWORDS};
use toxbias_core::train::{evaluate, train_fold, AdamConfig, FoldRecord, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    pub alpha: f64,
    pub c: f64,
    /// Train identity heads (K = number of identities) or none (K = 0).
    pub identity_heads: bool,
}

impl Arm {
    pub fn single_task() -> Self {
        Arm { name: "single_task".into(), alpha: 1.0, c: 1.0, identity_heads: false }
    }

    pub fn multitask() -> Self {
        Arm { name: "multitask".into(), alpha: 0.6, c: 3.0, identity_heads: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub corpus: BiasCorpusConfig,
    /// Corpus draw shared by every run; `None` draws a fresh corpus per seed.
    pub corpus_seed: Option<u64>,
    /// Training seeds (init, shuffling, dropout).
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    /// Per-source embedding width; the table is twice as wide.
    pub source_dim: usize,
    pub vector_scale: f64,
    pub max_len: usize,
    pub hidden: usize,
    pub dense: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: Option<usize>,
    /// Fraction of the training split held out for checkpoint selection.
    pub validation_fraction: f64,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig {
            corpus: BiasCorpusConfig::default(),
            corpus_seed: None,
            seeds: vec![1, 2, 3, 4, 5],
            arms: vec![Arm::single_task(), Arm::multitask()],
            source_dim: 16,
            vector_scale: 0.5,
            max_len: 24,
            hidden: 8,
            dense: 16,
            dropout_rate: 0.1,
            epochs: 30,
            batch_size: 32,
            learning_rate: 5e-3,
            patience: Some(5),
            validation_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub arm: String,
    pub seed: u64,
    pub training: FoldRecord,
    pub test_report: BiasReport,
    pub bpsn: BTreeMap<String, Score>,
    /// Mean over identities of the mean non-toxic template score.
    pub mean_nontoxic_template: f64,
    pub probe: Vec<ProbeResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    /// Median BPSN AUC over seeds (undefined runs skipped).
    pub median_bpsn: BTreeMap<String, Score>,
    pub median_nontoxic_template: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub config: ReplicationConfig,
    pub runs: Vec<ArmRun>,
    pub summary: Vec<ArmSummary>,
}

impl Replication {
    pub fn summary(&self, arm: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == arm)
    }
}

pub fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 })
}

fn run_arm(
    cfg: &ReplicationConfig,
    arm: &Arm,
    seed: u64,
    pre: &Preprocessor,
    table: &toxbias_core::embed::EmbeddingTable,
    train: &[Comment],
    val: &[Comment],
    test: &[Comment],
) -> toxbias_core::Result<ArmRun> {
    let k = if arm.identity_heads { pre.schema.identities.len() } else { 0 };
    let hyper = Hyper {
        embed_dim: table.dim(),
        hidden: cfg.hidden,
        dense1: cfg.dense,
        dense2: cfg.dense,
        heads: k,
        dropout_rate: cfg.dropout_rate,
        pooling: Pooling::Attention,
    };
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() },
        seed,
        loss: LossConfig { alpha: arm.alpha, c: arm.c, heads: k, ..LossConfig::default() },
        aux_task: if k == 0 { AuxTask::None } else { AuxTask::Identities },
        patience: cfg.patience,
        alpha_grid: vec![arm.alpha],
    };
    let reweight = |cs: &[Comment]| -> Vec<Comment> {
        cs.iter()
            .map(|c| {
                let mut c = c.clone();
                c.reweight(arm.c);
                c
            })
            .collect()
    };
    let (params, training) = train_fold(&reweight(train), &reweight(val), table, &hyper, &train_cfg)?;
    let test_report = evaluate(&params, table, test, &pre.schema, DEFAULT_POWER)?;
    let bpsn = test_report.subgroups.iter().map(|s| (s.name.clone(), s.bpsn_auc.auc)).collect();
    let model = Model { params, embedding: table.clone(), vocab_checksum: pre.vocab.checksum() };
    let setup = ProbeSetup::new(&pre.vocab, &pre.tokenizer, pre.max_len);
    let probe = run_probe(&model, &setup, &DEFAULT_KEYWORDS, &builtin_templates())?;
    let nontoxic: Vec<f64> = probe.iter().filter_map(|p| p.mean_nontoxic).collect();
    let mean_nontoxic_template = nontoxic.iter().sum::<f64>() / nontoxic.len().max(1) as f64;
    Ok(ArmRun { arm: arm.name.clone(), seed, training, test_report, bpsn, mean_nontoxic_template, probe })
}

/// Runs every arm on every seed, sequentially and deterministically.
pub fn replicate(cfg: &ReplicationConfig) -> toxbias_core::Result<Replication> {
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let corpus_seed = cfg.corpus_seed.unwrap_or(seed);
        let corpus = bias_corpus(&cfg.corpus, corpus_seed);
        let pre = Preprocessor::fit(&corpus.train, Tokenizer::default(), corpus.schema.clone(), cfg.max_len, 1.0, 1, None);
        let v1 = random_vectors(&pre.vocab, cfg.source_dim, cfg.vector_scale, corpus_seed ^ 0x1);
        let v2 = random_vectors(&pre.vocab, cfg.source_dim, cfg.vector_scale, corpus_seed ^ 0x2);
        let table = build_table(&pre.vocab, &v1, cfg.source_dim, &v2, cfg.source_dim, corpus_seed)?;
        let all = pre.comments(&corpus.train)?;
        let n_val = ((all.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, all.len() - 1);
        let (train, val) = all.split_at(all.len() - n_val);
        let test = pre.comments(&corpus.test)?;
        for arm in &cfg.arms {
            log::info!("seed {seed}: training {}", arm.name);
            runs.push(run_arm(cfg, arm, seed, &pre, &table, train, val, &test)?);
        }
    }
    let summary = cfg
        .arms
        .iter()
        .map(|arm| {
            let mine: Vec<&ArmRun> = runs.iter().filter(|r| r.arm == arm.name).collect();
            let median_bpsn = DEFAULT_KEYWORDS
                .iter()
                .map(|k| {
                    let mut xs: Vec<f64> = mine.iter().filter_map(|r| r.bpsn.get(*k).and_then(|s| s.value())).collect();
                    (k.to_string(), median(&mut xs).into())
                })
                .collect();
            let mut nt: Vec<f64> = mine.iter().map(|r| r.mean_nontoxic_template).collect();
            ArmSummary { arm: arm.name.clone(), median_bpsn, median_nontoxic_template: median(&mut nt).unwrap_or(f64::NAN) }
        })
        .collect();
    Ok(Replication { config: cfg.clone(), runs, summary })
}
