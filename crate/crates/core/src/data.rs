//! Tweet cleaning, weak hashtag labels, stratified splits and padded batches.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subword::NgramVocabulary;

/// Longest token sequence fed to the model; longer tweets are truncated.
pub const MAX_TOKENS: usize = 64;

pub const DEFAULT_POSITIVE_TAGS: [&str; 4] = ["sarcasm", "sarcastic", "irony", "humor"];
pub const DEFAULT_NEGATIVE_TAGS: [&str; 5] = ["politics", "food", "movie", "cricket", "bollywood"];

/// One input record: `{"id": …, "text": …, "hashtags": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTweet {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub hashtags: Vec<String>,
}

/// A split-file record: the input fields plus a 0/1 label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub hashtags: Vec<String>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, label: usize) -> Result<Self> {
        if label > 1 {
            return Err(Error::InvalidLabel(label));
        }
        if tokens.is_empty() {
            return Err(Error::Empty("labeled example"));
        }
        Ok(LabeledExample {
            id: id.into(),
            tokens,
            label,
        })
    }

    pub fn to_record(&self, hashtags: Vec<String>) -> LabeledRecord {
        LabeledRecord {
            id: self.id.clone(),
            text: self.tokens.join(" "),
            hashtags,
            label: self.label as u8,
        }
    }
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:https?://|www\.|t\.co/|pic\.twitter\.com/)\S*").expect("valid regex")
    })
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[#@]\S*").expect("valid regex"))
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '\u{2000}'..='\u{206F}' | '\u{3000}'..='\u{303F}' | '\u{FF01}'..='\u{FF0F}')
        || matches!(c, '¡' | '¿' | '«' | '»' | '·' | '।' | '॥' | '´' | '¨' | '§' | '¶')
}

/// Lowercases, removes URL spans, `#`/`@` spans and punctuation, then splits
/// on whitespace.
pub fn clean(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let no_urls = url_re().replace_all(&lower, " ");
    let no_tags = tag_re().replace_all(&no_urls, " ");
    no_tags
        .split_whitespace()
        .map(|tok| tok.chars().filter(|&c| !is_punctuation(c)).collect::<String>())
        .filter(|tok| !tok.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakLabel {
    Positive,
    Negative,
    Discard,
}

/// Positive and negative hashtag lists, stored without `#`, lowercase.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTags {
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
}

impl Default for LabelTags {
    fn default() -> Self {
        LabelTags::new(DEFAULT_POSITIVE_TAGS, DEFAULT_NEGATIVE_TAGS)
    }
}

impl LabelTags {
    pub fn new<P, N>(positive: P, negative: N) -> Self
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        N: IntoIterator,
        N::Item: AsRef<str>,
    {
        LabelTags {
            positive: positive.into_iter().map(|t| normalize_tag(t.as_ref())).collect(),
            negative: negative.into_iter().map(|t| normalize_tag(t.as_ref())).collect(),
        }
    }
}

pub fn normalize_tag(tag: &str) -> String {
    tag.trim().trim_start_matches('#').to_lowercase()
}

/// Positive iff any positive tag and no negative tag; negative iff the
/// reverse; otherwise discarded.
pub fn weak_label<S: AsRef<str>>(hashtags: &[S], tags: &LabelTags) -> WeakLabel {
    let normalized: Vec<String> = hashtags.iter().map(|t| normalize_tag(t.as_ref())).collect();
    let pos = normalized.iter().any(|t| tags.positive.contains(t));
    let neg = normalized.iter().any(|t| tags.negative.contains(t));
    match (pos, neg) {
        (true, false) => WeakLabel::Positive,
        (false, true) => WeakLabel::Negative,
        _ => WeakLabel::Discard,
    }
}

/// The record's `hashtags` plus any `#tag` spans in its text.
pub fn tweet_tags(tweet: &RawTweet) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"#(\w+)").expect("valid regex"));
    let mut tags: Vec<String> = tweet.hashtags.iter().map(|t| normalize_tag(t)).collect();
    for cap in re.captures_iter(&tweet.text) {
        let tag = normalize_tag(&cap[1]);
        if !tags.contains(&tag) {
            tags.push(tag);
        }
    }
    tags
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrepareStats {
    pub total: usize,
    pub kept: usize,
    pub positive: usize,
    pub negative: usize,
    /// Tweets whose tags matched both lists or neither.
    pub discarded: usize,
    pub empty_after_clean: usize,
    pub duplicates: usize,
    pub malformed: usize,
}

/// Labels, cleans and deduplicates tweets (first occurrence of an id or of a
/// cleaned token sequence wins).
pub fn label_tweets(tweets: &[RawTweet], tags: &LabelTags) -> (Vec<LabeledExample>, PrepareStats) {
    let mut stats = PrepareStats {
        total: tweets.len(),
        ..PrepareStats::default()
    };
    let mut seen_ids = BTreeSet::new();
    let mut seen_text = BTreeSet::new();
    let mut out = Vec::new();
    for t in tweets {
        let label = match weak_label(&tweet_tags(t), tags) {
            WeakLabel::Positive => 1,
            WeakLabel::Negative => 0,
            WeakLabel::Discard => {
                stats.discarded += 1;
                continue;
            }
        };
        let tokens = clean(&t.text);
        if tokens.is_empty() {
            stats.empty_after_clean += 1;
            continue;
        }
        if !seen_ids.insert(t.id.clone()) || !seen_text.insert(tokens.clone()) {
            stats.duplicates += 1;
            continue;
        }
        if label == 1 {
            stats.positive += 1;
        } else {
            stats.negative += 1;
        }
        out.push(LabeledExample {
            id: t.id.clone(),
            tokens,
            label,
        });
    }
    stats.kept = out.len();
    (out, stats)
}

/// Line-numbered parse failure from a JSONL file.
#[derive(Debug, Clone, PartialEq)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

/// Reads one JSON object per line, skipping blank lines and collecting
/// malformed ones instead of failing.
pub fn read_jsonl<T, P>(path: P) -> Result<(Vec<T>, Vec<MalformedLine>)>
where
    T: for<'de> Deserialize<'de>,
    P: AsRef<Path>,
{
    let reader = BufReader::new(File::open(path)?);
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => ok.push(v),
            Err(e) => bad.push(MalformedLine {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok((ok, bad))
}

pub fn write_jsonl<T: Serialize, P: AsRef<Path>>(path: P, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a split file and cleans its text into examples.
pub fn read_split_file<P: AsRef<Path>>(path: P) -> Result<Vec<LabeledExample>> {
    let (records, bad): (Vec<LabeledRecord>, _) = read_jsonl(path)?;
    if let Some(first) = bad.first() {
        return Err(Error::Malformed {
            line: first.line,
            reason: first.reason.clone(),
        });
    }
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let tokens = clean(&r.text);
        if tokens.is_empty() {
            continue;
        }
        out.push(LabeledExample::new(r.id, tokens, usize::from(r.label))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const SPLIT_FRACTIONS: [f64; 3] = [0.65, 0.15, 0.20];

/// Stratified, seeded 65:15:20 split.
pub fn split(examples: &[LabeledExample], seed: u64) -> Result<DatasetSplit> {
    if examples.len() < 20 {
        return Err(Error::NotEnoughExamples(format!(
            "split needs at least 20 examples, got {}",
            examples.len()
        )));
    }
    let n = examples.len();
    let n_train = (n as f64 * SPLIT_FRACTIONS[0]).round() as usize;
    let n_valid = (n as f64 * SPLIT_FRACTIONS[1]).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label: [Vec<&LabeledExample>; 2] = [Vec::new(), Vec::new()];
    for e in examples {
        by_label[e.label.min(1)].push(e);
    }
    for group in &mut by_label {
        group.shuffle(&mut rng);
    }
    // positives get their proportional share; negatives take the remainder
    let pos = by_label[1].len();
    let neg = by_label[0].len();
    let pos_train = ((pos as f64 * SPLIT_FRACTIONS[0]).round() as usize).min(n_train).min(pos);
    let pos_valid = ((pos as f64 * SPLIT_FRACTIONS[1]).round() as usize)
        .min(n_valid)
        .min(pos - pos_train);
    let neg_train = n_train - pos_train;
    let neg_valid = n_valid - pos_valid;
    if neg_train + neg_valid > neg {
        return Err(Error::NotEnoughExamples(
            "label strata too small for a 65:15:20 split".into(),
        ));
    }

    let take = |group: &[&LabeledExample], from: usize, count: usize| -> Vec<LabeledExample> {
        group[from..from + count].iter().map(|&e| e.clone()).collect()
    };
    let mut train = take(&by_label[1], 0, pos_train);
    train.extend(take(&by_label[0], 0, neg_train));
    let mut valid = take(&by_label[1], pos_train, pos_valid);
    valid.extend(take(&by_label[0], neg_train, neg_valid));
    let mut test = take(&by_label[1], pos_train + pos_valid, pos - pos_train - pos_valid);
    test.extend(take(&by_label[0], neg_train + neg_valid, neg - neg_train - neg_valid));
    for part in [&mut train, &mut valid, &mut test] {
        part.shuffle(&mut rng);
    }
    Ok(DatasetSplit {
        train,
        valid,
        test,
        seed,
    })
}

/// Token strings interned to ids with their cached n-gram bags. Id `0` is
/// padding and has an empty bag.
#[derive(Debug, Clone)]
pub struct Lexicon {
    tokens: Vec<String>,
    bags: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

pub const PAD_ID: usize = 0;

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            tokens: vec![String::new()],
            bags: vec![Vec::new()],
            index: HashMap::new(),
        }
    }
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, token: &str, vocab: &NgramVocabulary) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.bags.push(vocab.bag(token));
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn bag(&self, id: usize) -> &[usize] {
        &self.bags[id]
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }
}

/// A padded minibatch stored row-major as `[rows × width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub width: usize,
    pub token_ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn mask_row(&self, r: usize) -> &[bool] {
        &self.mask[r * self.width..(r + 1) * self.width]
    }

    pub fn ids_row(&self, r: usize) -> &[usize] {
        &self.token_ids[r * self.width..(r + 1) * self.width]
    }

    pub fn real_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Builds one batch from examples, padding on the right.
    pub fn assemble(examples: &[&LabeledExample], lexicon: &mut Lexicon, vocab: &NgramVocabulary) -> Self {
        let width = examples
            .iter()
            .map(|e| e.tokens.len().min(MAX_TOKENS))
            .max()
            .unwrap_or(1)
            .max(1);
        let mut token_ids = Vec::with_capacity(examples.len() * width);
        let mut mask = Vec::with_capacity(examples.len() * width);
        for e in examples {
            let len = e.tokens.len().min(MAX_TOKENS);
            for t in &e.tokens[..len] {
                token_ids.push(lexicon.intern(t, vocab));
                mask.push(true);
            }
            token_ids.extend(std::iter::repeat_n(PAD_ID, width - len));
            mask.extend(std::iter::repeat_n(false, width - len));
        }
        Batch {
            width,
            token_ids,
            mask,
            labels: examples.iter().map(|e| e.label).collect(),
        }
    }
}

/// Splits `examples` into batches of `batch_size` (the last may be short),
/// optionally in a shuffled order.
pub fn batch<R: Rng>(
    examples: &[LabeledExample],
    batch_size: usize,
    lexicon: &mut Lexicon,
    vocab: &NgramVocabulary,
    shuffle: Option<&mut R>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&LabeledExample> = chunk.iter().map(|&i| &examples[i]).collect();
            Batch::assemble(&rows, lexicon, vocab)
        })
        .collect())
}
