//! Identity probe: fill toxic and non-toxic templates with identity keywords,
//! score them, and summarize per identity.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Tokenizer, Vocabulary, POSITIVE_THRESHOLD};
use crate::{Error, Result};

pub const IDENTITY_SLOT: &str = "<Identity>";

pub const DEFAULT_KEYWORDS: [&str; 6] = ["gay", "lesbian", "bisexual", "muslim", "jew", "black"];

const BUILTIN: &str = include_str!("../fixtures/templates.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Toxic,
    Nontoxic,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Toxic => "toxic",
            Polarity::Nontoxic => "nontoxic",
        }
    }
}

impl core::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toxic" => Ok(Polarity::Toxic),
            "nontoxic" | "non-toxic" => Ok(Polarity::Nontoxic),
            other => Err(Error::InvalidArgument(format!("unknown polarity {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    pub polarity: Polarity,
    pub source: String,
}

impl Template {
    pub fn new(text: impl Into<String>, polarity: Polarity, source: impl Into<String>) -> Result<Self> {
        let text = text.into();
        match text.matches(IDENTITY_SLOT).count() {
            1 => Ok(Template { text, polarity, source: source.into() }),
            0 => Err(Error::MissingSlot(text)),
            n => Err(Error::InvalidArgument(format!("template has {n} slots, expected one: {text:?}"))),
        }
    }
}

/// Parses `polarity<TAB>text` lines. Blank lines and `#` comments are skipped.
pub fn parse_templates(text: &str, source: &str) -> Result<Vec<Template>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let (pol, body) = trimmed.split_once('\t').ok_or_else(|| err("expected polarity<TAB>text".into()))?;
        let polarity = pol.parse::<Polarity>().map_err(|e| err(e.to_string()))?;
        out.push(Template::new(body, polarity, source).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

/// The seven non-toxic followed by the seven toxic case-study templates.
pub fn builtin_templates() -> Vec<Template> {
    parse_templates(BUILTIN, "builtin").expect("bundled template fixture is well-formed")
}

/// Substitutes `keyword` into the template's slot. The keyword must be in
/// `allowed`.
pub fn instantiate<S: AsRef<str>>(template: &Template, keyword: &str, allowed: &[S]) -> Result<String> {
    if !allowed.iter().any(|k| k.as_ref() == keyword) {
        return Err(Error::UnknownKeyword(keyword.into()));
    }
    if !template.text.contains(IDENTITY_SLOT) {
        return Err(Error::MissingSlot(template.text.clone()));
    }
    Ok(template.text.replacen(IDENTITY_SLOT, keyword, 1))
}

/// Anything that maps an encoded comment to a toxicity probability.
pub trait ToxicityScorer {
    /// Checksum of the vocabulary the scorer's token ids refer to.
    fn vocab_checksum(&self) -> u64;
    fn score(&self, token_ids: &[u32], true_length: usize) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateScore {
    pub template: String,
    pub text: String,
    pub polarity: Polarity,
    pub score: f64,
}

impl TemplateScore {
    pub fn misclassified(&self, threshold: f64) -> bool {
        match self.polarity {
            Polarity::Nontoxic => self.score >= threshold,
            Polarity::Toxic => self.score < threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub identity: String,
    pub scores: Vec<TemplateScore>,
    /// `None` when no template of that polarity was probed.
    pub mean_nontoxic: Option<f64>,
    pub mean_toxic: Option<f64>,
    pub misclassified_nontoxic: usize,
    pub misclassified_toxic: usize,
}

impl ProbeResult {
    pub fn misclassified(&self) -> usize {
        self.misclassified_nontoxic + self.misclassified_toxic
    }
}

fn mean_of(scores: &[TemplateScore], polarity: Polarity) -> Option<f64> {
    let xs: Vec<f64> = scores.iter().filter(|s| s.polarity == polarity).map(|s| s.score).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub struct ProbeSetup<'a> {
    pub vocab: &'a Vocabulary,
    pub tokenizer: &'a Tokenizer,
    pub max_len: usize,
    pub threshold: f64,
}

impl<'a> ProbeSetup<'a> {
    pub fn new(vocab: &'a Vocabulary, tokenizer: &'a Tokenizer, max_len: usize) -> Self {
        ProbeSetup { vocab, tokenizer, max_len, threshold: POSITIVE_THRESHOLD }
    }
}

/// Scores every (identity, template) pair and groups the results by identity.
pub fn run_probe<M: ToxicityScorer + ?Sized, S: AsRef<str>>(
    model: &M,
    setup: &ProbeSetup<'_>,
    identities: &[S],
    templates: &[Template],
) -> Result<Vec<ProbeResult>> {
    let found = setup.vocab.checksum();
    if found != model.vocab_checksum() {
        return Err(Error::VocabChecksumMismatch { expected: model.vocab_checksum(), found });
    }
    if setup.max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    identities
        .iter()
        .map(|identity| {
            let identity = identity.as_ref();
            let scores = templates
                .iter()
                .map(|t| {
                    let text = instantiate(t, identity, identities)?;
                    let (ids, len) = setup.vocab.encode(&setup.tokenizer.tokenize(&text), setup.max_len);
                    Ok(TemplateScore {
                        template: t.text.clone(),
                        polarity: t.polarity,
                        score: model.score(&ids, len)?,
                        text,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let count = |p: Polarity| scores.iter().filter(|s| s.polarity == p && s.misclassified(setup.threshold)).count();
            Ok(ProbeResult {
                identity: identity.to_string(),
                mean_nontoxic: mean_of(&scores, Polarity::Nontoxic),
                mean_toxic: mean_of(&scores, Polarity::Toxic),
                misclassified_nontoxic: count(Polarity::Nontoxic),
                misclassified_toxic: count(Polarity::Toxic),
                scores,
            })
        })
        .collect()
}
