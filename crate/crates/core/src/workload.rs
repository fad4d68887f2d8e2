//! Tweet corpora and fixed-rate replay into the broker.
//!
//! Corpus files are UTF-8, one tweet per line, with an optional label
//! prefix separated by a tab:
//!
//! ```text
//! pos<TAB>what a great day at the beach
//! neg<TAB>stuck in traffic again
//! just landed in lisbon
//! ```
//!
//! Blank lines are skipped. [`save_corpus`] writes the same format, so any
//! collector that can produce it can feed [`replay`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::broker::{Broker, BrokerError};
use crate::classifier::{LabeledDoc, Sentiment, TokenPipeline};
use crate::metrics::{Metrics, PipelineEvent};

pub const MAX_TWEET_CHARS: usize = 280;
pub const MIN_RATE: f64 = 1.0;
pub const MAX_RATE: f64 = 10_000.0;

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("corpus has no entries")]
    EmptyCorpus,
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("invalid replay config: {0}")]
    InvalidConfig(String),
    #[error("invalid synthetic corpus parameters: {0}")]
    InvalidParameters(&'static str),
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("producer failed after {} sends: {source}", partial.sent)]
    ProducerError {
        source: BrokerError,
        partial: ReplayReport,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub text: String,
    pub label: Option<Sentiment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TweetCorpus {
    pub entries: Vec<CorpusEntry>,
    pub source_path: Option<PathBuf>,
}

impl TweetCorpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries that carry a label, as training documents.
    pub fn labeled_docs(&self) -> Vec<LabeledDoc> {
        self.entries
            .iter()
            .filter_map(|e| e.label.map(|l| LabeledDoc::new(e.text.clone(), l)))
            .collect()
    }

    /// The corpus in file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            if let Some(label) = e.label {
                out.push_str(label.label());
                out.push('\t');
            }
            out.push_str(&e.text);
            out.push('\n');
        }
        out
    }
}

fn parse_line(line: &str, number: usize) -> Result<CorpusEntry, WorkloadError> {
    let malformed = |reason: String| WorkloadError::MalformedLine { line: number, reason };
    let (label, text) = match line.split_once('\t') {
        Some((prefix, text)) => {
            let label = prefix
                .trim()
                .parse::<Sentiment>()
                .map_err(|_| malformed(format!("label must be pos or neg, got {prefix:?}")))?;
            (Some(label), text.trim())
        }
        None => (None, line.trim()),
    };
    if text.is_empty() {
        return Err(malformed("empty tweet text".into()));
    }
    let chars = text.chars().count();
    if chars > MAX_TWEET_CHARS {
        return Err(malformed(format!("tweet has {chars} characters, limit is {MAX_TWEET_CHARS}")));
    }
    Ok(CorpusEntry {
        text: text.to_string(),
        label,
    })
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>, WorkloadError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        entries.push(parse_line(line, i + 1)?);
    }
    if entries.is_empty() {
        return Err(WorkloadError::EmptyCorpus);
    }
    Ok(entries)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<TweetCorpus, WorkloadError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let text = match String::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) => {
            let valid = &e.as_bytes()[..e.utf8_error().valid_up_to()];
            let line = valid.iter().filter(|&&b| b == b'\n').count() + 1;
            return Err(WorkloadError::MalformedLine {
                line,
                reason: "not valid UTF-8".into(),
            });
        }
    };
    Ok(TweetCorpus {
        entries: parse_corpus(&text)?,
        source_path: Some(path.to_path_buf()),
    })
}

pub fn save_corpus(corpus: &TweetCorpus, path: impl AsRef<Path>) -> Result<(), WorkloadError> {
    fs::write(path, corpus.to_text())?;
    Ok(())
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Three-syllable pseudo-word for vocabulary slot `j`.
fn synthetic_word(j: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let mut word = String::with_capacity(6);
    let mut rest = j;
    for _ in 0..3 {
        let s = rest % syllables;
        rest /= syllables;
        word.push(CONSONANTS[s / VOWELS.len()] as char);
        word.push(VOWELS[s % VOWELS.len()] as char);
    }
    word
}

/// `n` labeled pseudo-tweets. Even indices are positive, odd negative.
/// Positive tweets draw most tokens from the first half of the vocabulary
/// and negative tweets from the second half.
pub fn generate_synthetic(n: usize, vocab_size: usize, seed: u64) -> Result<TweetCorpus, WorkloadError> {
    const MAX_VOCAB: usize = 14 * 5 * 14 * 5 * 14 * 5;
    const IN_CLASS: f64 = 0.85;
    if n == 0 {
        return Err(WorkloadError::InvalidParameters("n must be at least 1"));
    }
    if !(2..=MAX_VOCAB).contains(&vocab_size) {
        return Err(WorkloadError::InvalidParameters("vocab_size must be in [2, 343000]"));
    }
    let pipeline = TokenPipeline::english();
    let mut vocab = Vec::with_capacity(vocab_size);
    let mut slot = 0;
    while vocab.len() < vocab_size {
        let w = synthetic_word(slot);
        slot += 1;
        if !pipeline.is_stopword(&w) {
            vocab.push(w);
        }
    }
    let half = vocab_size / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Sentiment::Positive } else { Sentiment::Negative };
            let len = rng.random_range(8..=16);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    let first_half = rng.random_bool(IN_CLASS) == (label == Sentiment::Positive);
                    let j = if first_half {
                        rng.random_range(0..half)
                    } else {
                        rng.random_range(half..vocab_size)
                    };
                    vocab[j].as_str()
                })
                .collect();
            CorpusEntry {
                text: words.join(" "),
                label: Some(label),
            }
        })
        .collect();
    Ok(TweetCorpus {
        entries,
        source_path: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    /// Tweets per second.
    pub rate: f64,
    pub duration_s: f64,
    pub topic: String,
    /// Seed of the synthetic corpus used when no corpus file is given.
    pub seed: u64,
    pub senders: usize,
}

impl ReplayConfig {
    pub fn new(topic: impl Into<String>, rate: f64, duration_s: f64) -> Self {
        ReplayConfig {
            rate,
            duration_s,
            topic: topic.into(),
            seed: 0,
            senders: 2,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(MIN_RATE..=MAX_RATE).contains(&self.rate) {
            return Err(WorkloadError::InvalidConfig(format!(
                "rate must be in [{MIN_RATE}, {MAX_RATE}], got {}",
                self.rate
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(WorkloadError::InvalidConfig(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        if self.senders == 0 {
            return Err(WorkloadError::InvalidConfig("senders must be at least 1".into()));
        }
        Ok(())
    }

    /// Exact number of sends a complete replay makes.
    pub fn expected_sends(&self) -> u64 {
        let mut lo = (self.rate * self.duration_s).floor() as u64;
        while (lo as f64) / self.rate < self.duration_s {
            lo += 1;
        }
        while lo > 0 && ((lo - 1) as f64) / self.rate >= self.duration_s {
            lo -= 1;
        }
        lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub sent: u64,
    pub elapsed_s: f64,
    pub achieved_rate: f64,
}

/// Shared pacing for sender threads: send slot `i` becomes available at
/// `start + i / rate`, and slots stop at the end of the window. Any number
/// of threads may draw from one bucket.
pub struct TokenBucket {
    start: Instant,
    rate: f64,
    window_s: f64,
    next: AtomicU64,
}

impl TokenBucket {
    pub fn new(rate: f64, window_s: f64) -> Self {
        TokenBucket {
            start: Instant::now(),
            rate,
            window_s,
            next: AtomicU64::new(0),
        }
    }

    pub fn start(&self) -> Instant {
        self.start
    }

    /// Blocks until the next slot opens and returns its index, or `None`
    /// once the window is exhausted.
    pub fn acquire(&self) -> Option<u64> {
        let i = self.next.fetch_add(1, Ordering::Relaxed);
        let due_s = i as f64 / self.rate;
        if due_s >= self.window_s {
            return None;
        }
        let due = self.start + Duration::from_secs_f64(due_s);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
        Some(i)
    }
}

/// Record key of the `i`-th send.
pub fn sequence_key(i: u64) -> String {
    format!("{i:010}")
}

/// Sends corpus entries cyclically to `config.topic` at `config.rate` for
/// `config.duration_s`. The `i`-th send carries `corpus[i % len]` under key
/// [`sequence_key`]`(i)`. Each successful send is recorded as a Received
/// event stamped with the broker's produce time.
pub fn replay(
    corpus: &TweetCorpus,
    config: &ReplayConfig,
    broker: &Broker,
    metrics: Option<&Metrics>,
) -> Result<ReplayReport, WorkloadError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(WorkloadError::EmptyCorpus);
    }
    match broker.topic_info(&config.topic) {
        Err(BrokerError::UnknownTopic(t)) => return Err(WorkloadError::UnknownTopic(t)),
        Err(e) => {
            return Err(WorkloadError::ProducerError {
                source: e,
                partial: ReplayReport {
                    sent: 0,
                    elapsed_s: 0.0,
                    achieved_rate: 0.0,
                },
            })
        }
        Ok(_) => {}
    }

    let bucket = TokenBucket::new(config.rate, config.duration_s);
    let sent = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<BrokerError>> = Mutex::new(None);

    thread::scope(|scope| {
        for s in 0..config.senders {
            let (bucket, sent, abort, failure) = (&bucket, &sent, &abort, &failure);
            thread::Builder::new()
                .name(format!("replay-sender-{s}"))
                .spawn_scoped(scope, move || {
                    while !abort.load(Ordering::Relaxed) {
                        let Some(i) = bucket.acquire() else { break };
                        let entry = &corpus.entries[(i % corpus.len() as u64) as usize];
                        let key = sequence_key(i);
                        match broker.produce(&config.topic, Some(key.as_bytes()), entry.text.as_bytes()) {
                            Ok(p) => {
                                sent.fetch_add(1, Ordering::Relaxed);
                                if let Some(m) = metrics {
                                    m.record(PipelineEvent::received(p.produce_ts, 1));
                                }
                            }
                            Err(e) => {
                                abort.store(true, Ordering::Relaxed);
                                failure.lock().unwrap().get_or_insert(e);
                                break;
                            }
                        }
                    }
                })
                .expect("spawn replay sender");
        }
    });

    let failure = failure.into_inner().unwrap();
    if failure.is_none() {
        let end = bucket.start() + Duration::from_secs_f64(config.duration_s);
        let now = Instant::now();
        if end > now {
            thread::sleep(end - now);
        }
    }
    let elapsed_s = bucket.start().elapsed().as_secs_f64();
    let sent = sent.into_inner();
    let report = ReplayReport {
        sent,
        elapsed_s,
        achieved_rate: if elapsed_s > 0.0 { sent as f64 / elapsed_s } else { 0.0 },
    };
    match failure {
        Some(source) => Err(WorkloadError::ProducerError {
            source,
            partial: report,
        }),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::NaiveBayesModel;

    #[test]
    fn parses_lines_labels_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        fs::write(&path, "pos\tgreat day\n\nneg\tawful day\n   \nplain tweet\n").unwrap();
        let c = load_corpus(&path).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.entries[0].label, Some(Sentiment::Positive));
        assert_eq!(c.entries[0].text, "great day");
        assert_eq!(c.entries[1].label, Some(Sentiment::Negative));
        assert_eq!(c.entries[2].label, None);
        assert_eq!(c.entries[2].text, "plain tweet");
        assert_eq!(c.labeled_docs().len(), 2);
        assert_eq!(c.source_path.as_deref(), Some(path.as_path()));
    }

    #[test]
    fn rejects_bad_lines_with_line_number() {
        let err = parse_corpus("pos\tok\nmeh\tbad label\n").unwrap_err();
        assert!(matches!(err, WorkloadError::MalformedLine { line: 2, .. }));
        let long = format!("pos\t{}\n", "x".repeat(281));
        assert!(matches!(parse_corpus(&long), Err(WorkloadError::MalformedLine { line: 1, .. })));
        assert!(parse_corpus(&format!("pos\t{}\n", "é".repeat(280))).is_ok());
        assert!(matches!(parse_corpus("\n\n"), Err(WorkloadError::EmptyCorpus)));
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        fs::write(&path, b"pos\tok\nneg\t\xff\xfe\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(WorkloadError::MalformedLine { line: 2, .. })));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = generate_synthetic(1000, 400, 7).unwrap();
        let b = generate_synthetic(1000, 400, 7).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_ne!(a.to_text(), generate_synthetic(1000, 400, 8).unwrap().to_text());
        let pos = a.entries.iter().filter(|e| e.label == Some(Sentiment::Positive)).count();
        assert_eq!(pos, 500);
        assert!(a.entries.iter().all(|e| e.text.chars().count() <= MAX_TWEET_CHARS));
        assert!(generate_synthetic(0, 10, 1).is_err());
        assert!(generate_synthetic(5, 1, 1).is_err());
    }

    #[test]
    fn synthetic_corpus_is_learnable() {
        let pipeline = TokenPipeline::english();
        let corpus = generate_synthetic(1000, 500, 3).unwrap();
        let docs = corpus.labeled_docs();
        let model = NaiveBayesModel::train(&docs, 1.0, &pipeline).unwrap();
        let acc = model.evaluate(&docs, &pipeline).unwrap();
        assert!(acc > 0.9, "self accuracy {acc}");
        // every generated token survives preprocessing
        let tokens = pipeline.preprocess(&corpus.entries[0].text);
        assert_eq!(tokens.len(), corpus.entries[0].text.split(' ').count());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let c = generate_synthetic(20, 30, 1).unwrap();
        save_corpus(&c, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap().entries, c.entries);
    }

    #[test]
    fn expected_sends_is_ceiling() {
        assert_eq!(ReplayConfig::new("t", 500.0, 20.0).expected_sends(), 10_000);
        assert_eq!(ReplayConfig::new("t", 3.0, 0.5).expected_sends(), 2);
        assert_eq!(ReplayConfig::new("t", 1.0, 0.001).expected_sends(), 1);
    }

    #[test]
    fn config_bounds() {
        assert!(ReplayConfig::new("t", 0.5, 1.0).validate().is_err());
        assert!(ReplayConfig::new("t", 10_001.0, 1.0).validate().is_err());
        assert!(ReplayConfig::new("t", 10.0, 0.0).validate().is_err());
        assert!(ReplayConfig::new("t", 10_000.0, 1.0).validate().is_ok());
    }

    #[test]
    fn unknown_topic() {
        let broker = Broker::in_memory();
        let c = generate_synthetic(2, 4, 0).unwrap();
        assert!(matches!(
            replay(&c, &ReplayConfig::new("nope", 10.0, 0.1), &broker, None),
            Err(WorkloadError::UnknownTopic(_))
        ));
    }

    #[test]
    fn short_replay_is_cyclic_and_conserved() {
        let broker = Broker::in_memory();
        broker.create_topic("t", 3).unwrap();
        let c = generate_synthetic(7, 20, 0).unwrap();
        let metrics = Metrics::new(broker.clock());
        let cfg = ReplayConfig::new("t", 200.0, 0.25);
        let report = replay(&c, &cfg, &broker, Some(&metrics)).unwrap();
        assert_eq!(report.sent, cfg.expected_sends());
        assert_eq!(broker.topic_len("t").unwrap(), report.sent);
        assert_eq!(metrics.received_total(), report.sent);
        for p in 0..3 {
            for r in broker.consume("t", p, 0, 1000).unwrap() {
                let i: u64 = std::str::from_utf8(r.key.as_ref().unwrap()).unwrap().parse().unwrap();
                assert_eq!(r.payload, c.entries[(i % 7) as usize].text.as_bytes());
            }
        }
    }

    #[test]
    fn window_shorter_than_gap_sends_at_most_one() {
        let broker = Broker::in_memory();
        broker.create_topic("t", 1).unwrap();
        let c = generate_synthetic(2, 4, 0).unwrap();
        let report = replay(&c, &ReplayConfig::new("t", 1.0, 0.01), &broker, None).unwrap();
        assert!(report.sent <= 1);
    }
}
