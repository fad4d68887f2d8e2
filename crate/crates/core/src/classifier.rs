//! Tweet preprocessing and binary multinomial Naive Bayes.
//!
//! Training counts term frequencies per class over the joint vocabulary and
//! applies additive smoothing:
//!
//! ```text
//! log_prior(c)         = ln(docs_c / docs_total)
//! log_likelihood(t | c) = ln((count(t, c) + alpha) / (tokens_c + alpha * |V|))
//! ```
//!
//! Prediction sums the log-likelihoods of in-vocabulary tokens onto the prior
//! and returns the larger score, preferring [`Sentiment::Positive`] on ties.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

const STOPWORDS: &str = include_str!("../data/stopwords.txt");
const MODEL_HEADER: &str = "naive-bayes-model v1";
const URL_PREFIXES: [&str; 3] = ["http://", "https://", "www."];
const NUMBER_SEPARATORS: [char; 5] = [':', '/', '-', '.', ','];

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("no training documents labelled {0}")]
    EmptyClass(Sentiment),
    #[error("vocabulary is empty after preprocessing")]
    DegenerateVocabulary,
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("model i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sentiment {
    Negative,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 2] = [Sentiment::Negative, Sentiment::Positive];

    /// Position in per-class arrays; also the on-disk sentiment byte.
    pub fn index(self) -> usize {
        match self {
            Sentiment::Negative => 0,
            Sentiment::Positive => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Sentiment::Negative),
            1 => Some(Sentiment::Positive),
            _ => None,
        }
    }

    /// Short label used in corpus files: `pos` / `neg`.
    pub fn label(self) -> &'static str {
        match self {
            Sentiment::Negative => "neg",
            Sentiment::Positive => "pos",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pos" => Ok(Sentiment::Positive),
            "neg" => Ok(Sentiment::Negative),
            other => Err(format!("unknown sentiment label {other:?}")),
        }
    }
}

/// Rules that turn raw tweet text into bag-of-words tokens.
///
/// A whitespace-separated token is lowercased and dropped when it is a URL
/// (`http://`, `https://` or `www.` prefix). Otherwise leading and trailing
/// non-alphanumeric characters are stripped, and the token is dropped when
/// nothing is left, when it is a number/date/time (ASCII digits with optional
/// `: / - . ,` separators), or when it is a stopword.
#[derive(Debug, Clone)]
pub struct TokenPipeline {
    stopwords: HashSet<String>,
}

impl Default for TokenPipeline {
    fn default() -> Self {
        Self::english()
    }
}

impl TokenPipeline {
    /// Pipeline with the bundled English stopword list.
    pub fn english() -> Self {
        let stopwords = STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        TokenPipeline { stopwords }
    }

    pub fn with_stopwords<I, S>(stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenPipeline {
            stopwords: stopwords
                .into_iter()
                .map(|s| s.as_ref().to_lowercase())
                .collect(),
        }
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn preprocess(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .filter_map(|raw| self.normalize(raw))
            .collect()
    }

    fn normalize(&self, raw: &str) -> Option<String> {
        let lowered = raw.to_lowercase();
        if is_url(&lowered) {
            return None;
        }
        let stripped = lowered.trim_matches(|c: char| !c.is_alphanumeric());
        if stripped.is_empty() || is_url(stripped) || is_number(stripped) || self.is_stopword(stripped) {
            return None;
        }
        Some(stripped.to_string())
    }
}

fn is_url(token: &str) -> bool {
    URL_PREFIXES.iter().any(|p| token.starts_with(p))
}

fn is_number(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_digit())
        && token
            .chars()
            .all(|c| c.is_ascii_digit() || NUMBER_SEPARATORS.contains(&c))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDoc {
    pub text: String,
    pub label: Sentiment,
}

impl LabeledDoc {
    pub fn new(text: impl Into<String>, label: Sentiment) -> Self {
        LabeledDoc {
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub sentiment: Sentiment,
    /// Log-scores indexed by [`Sentiment::index`].
    pub scores: [f64; 2],
}

impl Prediction {
    pub fn score(&self, class: Sentiment) -> f64 {
        self.scores[class.index()]
    }
}

/// Trained model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesModel {
    alpha: f64,
    vocabulary: BTreeMap<String, usize>,
    class_log_prior: [f64; 2],
    token_log_likelihood: [Vec<f64>; 2],
    class_doc_counts: [u64; 2],
}

impl NaiveBayesModel {
    pub fn train(corpus: &[LabeledDoc], alpha: f64, pipeline: &TokenPipeline) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ClassifierError::InvalidAlpha(alpha));
        }

        let mut doc_counts = [0u64; 2];
        let mut counts: BTreeMap<String, [u64; 2]> = BTreeMap::new();
        for doc in corpus {
            let c = doc.label.index();
            doc_counts[c] += 1;
            for token in pipeline.preprocess(&doc.text) {
                counts.entry(token).or_default()[c] += 1;
            }
        }
        for class in Sentiment::ALL {
            if doc_counts[class.index()] == 0 {
                return Err(ClassifierError::EmptyClass(class));
            }
        }
        if counts.is_empty() {
            return Err(ClassifierError::DegenerateVocabulary);
        }

        let vocab_size = counts.len() as f64;
        let total_docs = (doc_counts[0] + doc_counts[1]) as f64;
        let mut token_totals = [0u64; 2];
        for per_class in counts.values() {
            token_totals[0] += per_class[0];
            token_totals[1] += per_class[1];
        }

        let mut vocabulary = BTreeMap::new();
        let mut token_log_likelihood = [
            Vec::with_capacity(counts.len()),
            Vec::with_capacity(counts.len()),
        ];
        for (index, (token, per_class)) in counts.into_iter().enumerate() {
            vocabulary.insert(token, index);
            for c in 0..2 {
                let numerator = per_class[c] as f64 + alpha;
                let denominator = token_totals[c] as f64 + alpha * vocab_size;
                token_log_likelihood[c].push((numerator / denominator).ln());
            }
        }

        Ok(NaiveBayesModel {
            alpha,
            vocabulary,
            class_log_prior: [
                (doc_counts[0] as f64 / total_docs).ln(),
                (doc_counts[1] as f64 / total_docs).ln(),
            ],
            token_log_likelihood,
            class_doc_counts: doc_counts,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn class_doc_counts(&self) -> [u64; 2] {
        self.class_doc_counts
    }

    pub fn log_prior(&self, class: Sentiment) -> f64 {
        self.class_log_prior[class.index()]
    }

    pub fn log_likelihood(&self, class: Sentiment, token: &str) -> Option<f64> {
        self.vocabulary
            .get(token)
            .map(|&i| self.token_log_likelihood[class.index()][i])
    }

    /// Scores a bag of tokens. Out-of-vocabulary tokens contribute nothing.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Prediction {
        let mut scores = self.class_log_prior;
        for token in tokens {
            if let Some(&i) = self.vocabulary.get(token.as_ref()) {
                scores[0] += self.token_log_likelihood[0][i];
                scores[1] += self.token_log_likelihood[1][i];
            }
        }
        let sentiment = if scores[1] >= scores[0] {
            Sentiment::Positive
        } else {
            Sentiment::Negative
        };
        Prediction { sentiment, scores }
    }

    pub fn classify(&self, text: &str, pipeline: &TokenPipeline) -> Prediction {
        self.predict(&pipeline.preprocess(text))
    }

    /// Fraction of `test` whose predicted label matches.
    pub fn evaluate(&self, test: &[LabeledDoc], pipeline: &TokenPipeline) -> Result<f64> {
        if test.is_empty() {
            return Err(ClassifierError::EmptyTestSet);
        }
        let correct = test
            .iter()
            .filter(|d| self.classify(&d.text, pipeline).sentiment == d.label)
            .count();
        Ok(correct as f64 / test.len() as f64)
    }

    /// Checks finiteness and normalization of priors and likelihoods.
    pub fn check_invariants(&self) -> Result<()> {
        let invalid = |m: String| Err(ClassifierError::InvalidModel(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return invalid(format!("alpha {} is not positive", self.alpha));
        }
        if self.vocabulary.is_empty() {
            return invalid("empty vocabulary".into());
        }
        let prior_sum: f64 = self.class_log_prior.iter().map(|l| l.exp()).sum();
        if (prior_sum - 1.0).abs() > 1e-12 {
            return invalid(format!("class priors sum to {prior_sum}"));
        }
        for class in Sentiment::ALL {
            let row = &self.token_log_likelihood[class.index()];
            if row.len() != self.vocabulary.len() {
                return invalid(format!("likelihood row for {class} has wrong length"));
            }
            if row.iter().chain(&self.class_log_prior).any(|l| !l.is_finite()) {
                return invalid(format!("non-finite log value for {class}"));
            }
            let sum: f64 = row.iter().map(|l| l.exp()).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return invalid(format!("likelihoods for {class} sum to {sum}"));
            }
        }
        Ok(())
    }

    /// Renders the model as text. Reals use 17 significant digits, so
    /// [`NaiveBayesModel::from_text`] restores them bit-for-bit.
    pub fn to_text(&self) -> String {
        let f = |x: f64| format!("{x:.16e}");
        let mut out = String::new();
        out.push_str(MODEL_HEADER);
        out.push('\n');
        out.push_str(&format!("alpha\t{}\n", f(self.alpha)));
        out.push_str(&format!(
            "doc_counts\t{}\t{}\n",
            self.class_doc_counts[0], self.class_doc_counts[1]
        ));
        out.push_str(&format!(
            "log_prior\t{}\t{}\n",
            f(self.class_log_prior[0]),
            f(self.class_log_prior[1])
        ));
        out.push_str(&format!("vocabulary\t{}\n", self.vocabulary.len()));
        for (token, &i) in &self.vocabulary {
            out.push_str(&format!(
                "{token}\t{}\t{}\n",
                f(self.token_log_likelihood[0][i]),
                f(self.token_log_likelihood[1][i])
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| ClassifierError::InvalidModel(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_HEADER) {
            return Err(bad("missing header"));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad("truncated model"))?;
            let mut parts = line.split('\t');
            if parts.next() != Some(name) {
                return Err(ClassifierError::InvalidModel(format!("expected `{name}` line")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad("bad real"));
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad("bad integer"));

        let alpha = field("alpha")?;
        let doc_counts = field("doc_counts")?;
        let log_prior = field("log_prior")?;
        let vocab = field("vocabulary")?;
        if alpha.len() != 1 || doc_counts.len() != 2 || log_prior.len() != 2 || vocab.len() != 1 {
            return Err(bad("wrong field arity"));
        }
        let alpha = real(&alpha[0])?;
        let class_doc_counts = [int(&doc_counts[0])?, int(&doc_counts[1])?];
        let class_log_prior = [real(&log_prior[0])?, real(&log_prior[1])?];
        let vocab_len = int(&vocab[0])? as usize;

        let mut vocabulary = BTreeMap::new();
        let mut token_log_likelihood = [Vec::new(), Vec::new()];
        for i in 0..vocab_len {
            let line = lines.next().ok_or_else(|| bad("truncated vocabulary"))?;
            let parts: Vec<&str> = line.split('\t').collect();
            let [token, neg, pos] = parts.as_slice() else {
                return Err(bad("bad vocabulary line"));
            };
            if token.is_empty() || vocabulary.insert(token.to_string(), i).is_some() {
                return Err(bad("empty or duplicate token"));
            }
            token_log_likelihood[0].push(real(neg)?);
            token_log_likelihood[1].push(real(pos)?);
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(bad("trailing data"));
        }

        let model = NaiveBayesModel {
            alpha,
            vocabulary,
            class_log_prior,
            token_log_likelihood,
            class_doc_counts,
        };
        model.check_invariants()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
