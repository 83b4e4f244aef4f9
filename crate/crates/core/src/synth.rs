//! Synthetic corpora for desk-scale experiments.
//!
//! [`separable_corpus`] is a sanity-check task where a single marker token
//! decides toxicity. [`bias_corpus`] builds comments from the case-study
//! templates in which identity keywords co-occur with toxicity far more often
//! in training than in the held-out set, so a model that leans on the keyword
//! is penalized at test time.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSchema, RawRecord, Vocabulary, PAD_INDEX, UNK_INDEX};
use crate::embed::VectorMap;
use crate::templates::{builtin_templates, Polarity, Template, DEFAULT_KEYWORDS, IDENTITY_SLOT};

const NEUTRAL: [&str; 40] = [
    "the", "today", "really", "think", "news", "city", "game", "weather", "school", "music", "food", "work",
    "friends", "family", "book", "movie", "team", "market", "park", "road", "water", "story", "idea", "plan",
    "week", "morning", "coffee", "garden", "train", "phone", "price", "street", "house", "summer", "river",
    "paper", "history", "council", "budget", "season",
];

const TOXIC_CUES: [&str; 10] = [
    "stupid", "idiot", "trash", "disgusting", "pathetic", "moron", "garbage", "worthless", "loser", "scum",
];

/// Non-identity words used to fill the template slot in background comments.
const FILLERS: [&str; 8] = ["tall", "young", "old", "local", "rich", "quiet", "new", "busy"];

pub const MARKER: &str = "bad";

/// Stand-in for a pre-trained vector file: every real vocabulary token gets a
/// seeded `Uniform(-scale, scale)` vector of width `dim`.
pub fn random_vectors(vocab: &Vocabulary, dim: usize, scale: f64, seed: u64) -> VectorMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vocab
        .tokens()
        .filter(|(i, _)| *i != PAD_INDEX && *i != UNK_INDEX)
        .map(|(_, t)| (t.to_string(), (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()))
        .collect()
}

/// `n` comments of 4–10 neutral words; exactly the toxic ones contain
/// [`MARKER`]. Identity annotations are present and all zero.
pub fn separable_corpus(n: usize, seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let toxic = i % 2 == 0;
            let len = rng.gen_range(4..=10);
            let mut words: Vec<&str> = (0..len).map(|_| *NEUTRAL.choose(&mut rng).unwrap()).collect();
            if toxic {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, MARKER);
            }
            RawRecord {
                id: format!("sep-{i}"),
                comment_text: words.join(" "),
                target: if toxic { 1.0 } else { 0.0 },
                identity_scores: Some(BTreeMap::new()),
                subtype_scores: BTreeMap::new(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasCorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of training comments that mention an identity.
    pub train_identity_rate: f64,
    /// P(toxic | identity mentioned) in training.
    pub train_identity_toxic_rate: f64,
    /// P(toxic | no identity) in training.
    pub train_background_toxic_rate: f64,
    pub test_identity_rate: f64,
    pub test_identity_toxic_rate: f64,
    pub test_background_toxic_rate: f64,
    /// Probability that the template polarity agrees with the label.
    pub template_agreement: f64,
    /// Extra words appended to every comment.
    pub extra_words: usize,
    /// P(extra word is a toxic cue) for toxic and non-toxic comments.
    pub cue_rate_toxic: f64,
    pub cue_rate_nontoxic: f64,
}

impl Default for BiasCorpusConfig {
    fn default() -> Self {
        BiasCorpusConfig {
            n_train: 3000,
            n_test: 1000,
            train_identity_rate: 0.4,
            train_identity_toxic_rate: 0.8,
            train_background_toxic_rate: 0.3,
            test_identity_rate: 0.5,
            test_identity_toxic_rate: 0.5,
            test_background_toxic_rate: 0.5,
            template_agreement: 0.75,
            extra_words: 4,
            cue_rate_toxic: 0.35,
            cue_rate_nontoxic: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasCorpus {
    /// Identities are the probe keywords.
    pub schema: LabelSchema,
    pub train: Vec<RawRecord>,
    pub test: Vec<RawRecord>,
}

struct Split {
    identity_rate: f64,
    identity_toxic: f64,
    background_toxic: f64,
}

fn generate(
    cfg: &BiasCorpusConfig,
    split: &Split,
    n: usize,
    prefix: &str,
    templates: &[Template],
    rng: &mut ChaCha8Rng,
) -> Vec<RawRecord> {
    let (toxic_t, nontoxic_t): (Vec<&Template>, Vec<&Template>) =
        templates.iter().partition(|t| t.polarity == Polarity::Toxic);
    (0..n)
        .map(|i| {
            let identity = rng.gen_bool(split.identity_rate);
            let toxic = rng.gen_bool(if identity { split.identity_toxic } else { split.background_toxic });
            let agree = rng.gen_bool(cfg.template_agreement);
            let pool = if toxic == agree { &toxic_t } else { &nontoxic_t };
            let template = pool.choose(rng).unwrap();
            let keyword = if identity { *DEFAULT_KEYWORDS.choose(rng).unwrap() } else { *FILLERS.choose(rng).unwrap() };
            let mut text = template.text.replacen(IDENTITY_SLOT, keyword, 1);
            let cue_rate = if toxic { cfg.cue_rate_toxic } else { cfg.cue_rate_nontoxic };
            for _ in 0..cfg.extra_words {
                let w = if rng.gen_bool(cue_rate) { TOXIC_CUES.choose(rng) } else { NEUTRAL.choose(rng) };
                text.push(' ');
                text.push_str(w.unwrap());
            }
            let identity_scores = DEFAULT_KEYWORDS
                .iter()
                .map(|k| (k.to_string(), if identity && *k == keyword { 1.0 } else { 0.0 }))
                .collect();
            RawRecord {
                id: format!("{prefix}-{i}"),
                comment_text: text,
                target: if toxic { 1.0 } else { 0.0 },
                identity_scores: Some(identity_scores),
                subtype_scores: BTreeMap::new(),
            }
        })
        .collect()
}

/// Train/test corpora where identity mentions are mostly toxic in training
/// and balanced in the test split.
pub fn bias_corpus(cfg: &BiasCorpusConfig, seed: u64) -> BiasCorpus {
    let templates = builtin_templates();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_split = Split {
        identity_rate: cfg.train_identity_rate,
        identity_toxic: cfg.train_identity_toxic_rate,
        background_toxic: cfg.train_background_toxic_rate,
    };
    let test_split = Split {
        identity_rate: cfg.test_identity_rate,
        identity_toxic: cfg.test_identity_toxic_rate,
        background_toxic: cfg.test_background_toxic_rate,
    };
    let train = generate(cfg, &train_split, cfg.n_train, "train", &templates, &mut rng);
    let test = generate(cfg, &test_split, cfg.n_test, "test", &templates, &mut rng);
    BiasCorpus {
        schema: LabelSchema::new(DEFAULT_KEYWORDS.iter().map(|s| String::from(*s)).collect(), Vec::new()),
        train,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn separable_marker_decides_label() {
        let recs = separable_corpus(200, 3);
        assert_eq!(recs.len(), 200);
        for r in &recs {
            let has = tokenize(&r.comment_text).iter().any(|t| t == MARKER);
            assert_eq!(has, r.target == 1.0);
        }
        assert_eq!(recs, separable_corpus(200, 3));
    }

    #[test]
    fn bias_corpus_rates() {
        let c = bias_corpus(&BiasCorpusConfig { n_train: 4000, n_test: 4000, ..Default::default() }, 1);
        let rate = |recs: &[RawRecord]| {
            let ids: Vec<&RawRecord> = recs
                .iter()
                .filter(|r| r.identity_scores.as_ref().unwrap().values().any(|&v| v >= 0.5))
                .collect();
            ids.iter().filter(|r| r.target >= 0.5).count() as f64 / ids.len() as f64
        };
        assert!((rate(&c.train) - 0.8).abs() < 0.04);
        assert!((rate(&c.test) - 0.5).abs() < 0.05);
        for r in c.train.iter().chain(&c.test) {
            r.validate(&c.schema).unwrap();
        }
    }
}
