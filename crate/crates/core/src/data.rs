//! On-disk corpus formats: news and behavior TSVs, vocabularies,
//! padding, time-based splits, and pretrained word embeddings.
//!
//! `news.tsv`: one news per line, `news_id \t topic \t title` with the
//! title whitespace-pretokenized. `behaviors.tsv`: one impression per
//! line, `impression_id \t user_id \t timestamp \t history \t candidates`
//! where history is space-separated news ids (may be empty) and each
//! candidate is `newsid-label` with label 0 or 1. Timestamps are epoch
//! seconds or ISO-8601. All files UTF-8 with LF line endings.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Word vocabulary. Index 0 is PAD, index 1 is UNK; real tokens start
/// at 2, ordered by frequency (descending) then lexicographically.
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;

    pub fn from_counts(counts: &HashMap<String, u64>) -> Self {
        let mut entries: Vec<(&String, u64)> = counts.iter().map(|(t, &c)| (t, c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend(entries.into_iter().map(|(t, _)| t.clone()));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, idx: u32) -> &str {
        &self.tokens[idx as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// Topic vocabulary; dense indices in frequency-descending order.
pub struct TopicVocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl TopicVocab {
    fn from_counts(counts: &HashMap<String, u64>) -> Self {
        let mut entries: Vec<(&String, u64)> = counts.iter().map(|(t, &c)| (t, c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let names: Vec<String> = entries.into_iter().map(|(t, _)| t.clone()).collect();
        let index = names.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        TopicVocab { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, idx: u32) -> &str {
        &self.names[idx as usize]
    }
}

/// Tokenized news with a fixed-width padded title. Slot `i` holds a
/// real token iff `mask[i]`; padded slots carry the PAD index.
pub struct NewsArticle {
    pub id: String,
    pub topic: u32,
    pub tokens: Vec<u32>,
    pub mask: Vec<bool>,
    pub n_tokens: usize,
}

/// All news of a corpus. Row 0 is a reserved empty article so that
/// news index 0 can serve as the padding id everywhere.
pub struct NewsTable {
    pub articles: Vec<NewsArticle>,
    pub vocab: Vocabulary,
    pub topics: TopicVocab,
    pub title_len: usize,
    index: HashMap<String, u32>,
}

impl NewsTable {
    pub fn lookup(&self, news_id: &str) -> Option<u32> {
        self.index.get(news_id).copied()
    }

    pub fn article(&self, idx: u32) -> &NewsArticle {
        &self.articles[idx as usize]
    }

    /// Number of real news (excluding the reserved row).
    pub fn n_news(&self) -> usize {
        self.articles.len() - 1
    }

    /// Renders the table back to the TSV format it was parsed from.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for a in &self.articles[1..] {
            let words: Vec<&str> =
                a.tokens[..a.n_tokens].iter().map(|&t| self.vocab.token(t)).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                a.id,
                self.topics.name(a.topic),
                words.join(" ")
            ));
        }
        out
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Loads and tokenizes `news.tsv`. Titles are truncated to `title_len`
/// tokens and padded with masked PAD slots.
pub fn load_news(path: &Path, title_len: usize) -> Result<NewsTable> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<(usize, &str, &str, Vec<&str>)> = Vec::new();
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    let mut topic_counts: HashMap<String, u64> = HashMap::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let (id, topic, title) = (fields[0], fields[1], fields[2]);
        if id.is_empty() {
            return Err(parse_err(path, lineno, "empty news id"));
        }
        if let Some(prev) = seen.insert(id, lineno) {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate news id {id:?} (first seen on line {prev})"),
            ));
        }
        let words: Vec<&str> = title.split_whitespace().collect();
        for w in &words {
            *word_counts.entry((*w).to_string()).or_insert(0) += 1;
        }
        *topic_counts.entry(topic.to_string()).or_insert(0) += 1;
        rows.push((lineno, id, topic, words));
    }

    let vocab = Vocabulary::from_counts(&word_counts);
    let topics = TopicVocab::from_counts(&topic_counts);

    let mut articles = Vec::with_capacity(rows.len() + 1);
    articles.push(NewsArticle {
        id: String::new(),
        topic: 0,
        tokens: vec![Vocabulary::PAD; title_len],
        mask: vec![false; title_len],
        n_tokens: 0,
    });
    let mut index = HashMap::with_capacity(rows.len());
    for (_, id, topic, words) in rows {
        let n_tokens = words.len().min(title_len);
        let mut tokens = vec![Vocabulary::PAD; title_len];
        let mut mask = vec![false; title_len];
        for (i, w) in words.iter().take(title_len).enumerate() {
            tokens[i] = vocab.lookup(w);
            mask[i] = true;
        }
        index.insert(id.to_string(), articles.len() as u32);
        articles.push(NewsArticle {
            id: id.to_string(),
            topic: topics.index[topic],
            tokens,
            mask,
            n_tokens,
        });
    }

    Ok(NewsTable { articles, vocab, topics, title_len, index })
}

/// One page view: the user, the click history at that moment, and the
/// shown candidates with click labels.
#[derive(Clone)]
pub struct Impression {
    pub id: String,
    pub user: String,
    pub timestamp: i64,
    pub history: Vec<u32>,
    pub candidates: Vec<(u32, bool)>,
}

impl Impression {
    pub fn n_positive(&self) -> usize {
        self.candidates.iter().filter(|(_, l)| *l).count()
    }
}

/// Parse counters for references the loader had to drop.
#[derive(Default, Debug)]
pub struct LoadCounters {
    pub unknown_history_refs: usize,
    pub unknown_candidate_refs: usize,
    pub dropped_impressions: usize,
}

pub struct BehaviorLoad {
    pub impressions: Vec<Impression>,
    pub counters: LoadCounters,
}

/// Epoch seconds from a decimal epoch, RFC3339, `%Y-%m-%dT%H:%M:%S`
/// (treated as UTC), or bare date string.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(epoch) = s.parse::<i64>() {
        return Some(epoch);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    if let Ok(naive) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(naive.and_utc().timestamp());
    }
    if let Ok(date) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(date.and_hms_opt(0, 0, 0)?.and_utc().timestamp());
    }
    None
}

/// Loads `behaviors.tsv`. Unknown news ids in histories and candidate
/// lists are dropped with counters; history keeps the `max_history`
/// most recent entries.
pub fn load_behaviors(path: &Path, news: &NewsTable, max_history: usize) -> Result<BehaviorLoad> {
    let text = fs::read_to_string(path)?;
    let mut impressions = Vec::new();
    let mut counters = LoadCounters::default();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        let timestamp = parse_timestamp(fields[2]).ok_or_else(|| {
            parse_err(path, lineno, format!("unparsable timestamp {:?}", fields[2]))
        })?;

        let mut history = Vec::new();
        for id in fields[3].split_whitespace() {
            match news.lookup(id) {
                Some(ix) => history.push(ix),
                None => counters.unknown_history_refs += 1,
            }
        }
        if history.len() > max_history {
            // Keep the most recent entries; history is listed oldest first.
            history.drain(..history.len() - max_history);
        }

        let mut candidates = Vec::new();
        for pair in fields[4].split_whitespace() {
            let Some((id, label)) = pair.rsplit_once('-') else {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("candidate {pair:?} is not of the form newsid-label"),
                ));
            };
            let label = match label {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(path, lineno, format!("label {other:?} is not 0 or 1")));
                }
            };
            match news.lookup(id) {
                Some(ix) => candidates.push((ix, label)),
                None => counters.unknown_candidate_refs += 1,
            }
        }
        if candidates.is_empty() {
            counters.dropped_impressions += 1;
            continue;
        }

        impressions.push(Impression {
            id: fields[0].to_string(),
            user: fields[1].to_string(),
            timestamp,
            history,
            candidates,
        });
    }

    Ok(BehaviorLoad { impressions, counters })
}

pub struct Splits {
    pub train: Vec<Impression>,
    pub val: Vec<Impression>,
    pub test: Vec<Impression>,
}

/// Splits by time: impressions at or after `test_start` go to test
/// (closed lower bound); a seeded random `val_fraction` of the rest
/// forms the validation set.
pub fn split_by_time(
    impressions: Vec<Impression>,
    test_start: i64,
    val_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Splits> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    let mut rest = Vec::new();
    let mut test = Vec::new();
    for imp in impressions {
        if imp.timestamp >= test_start {
            test.push(imp);
        } else {
            rest.push(imp);
        }
    }
    if test.is_empty() {
        return Err(Error::Config(format!(
            "empty test split: no impression at or after {test_start}"
        )));
    }
    if rest.is_empty() {
        return Err(Error::Config(format!(
            "empty train split: every impression is at or after {test_start}"
        )));
    }

    let n_val = (rest.len() as f64 * val_fraction).round() as usize;
    let mut order: Vec<usize> = (0..rest.len()).collect();
    order.shuffle(rng);
    let val_set: std::collections::BTreeSet<usize> = order.into_iter().take(n_val).collect();

    let mut train = Vec::with_capacity(rest.len() - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (i, imp) in rest.into_iter().enumerate() {
        if val_set.contains(&i) {
            val.push(imp);
        } else {
            train.push(imp);
        }
    }
    if train.is_empty() {
        return Err(Error::Config("empty train split after validation sampling".into()));
    }
    Ok(Splits { train, val, test })
}

/// Dense user ids built from the training split. Index 0 is the
/// reserved cold-start id for users unseen in training.
pub struct UserIndex {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl UserIndex {
    pub const COLD: u32 = 0;

    pub fn from_train(train: &[Impression]) -> Self {
        let mut names = vec![String::new()];
        let mut index = HashMap::new();
        for imp in train {
            if !index.contains_key(&imp.user) {
                index.insert(imp.user.clone(), names.len() as u32);
                names.push(imp.user.clone());
            }
        }
        UserIndex { names, index }
    }

    pub fn lookup(&self, user: &str) -> u32 {
        self.index.get(user).copied().unwrap_or(Self::COLD)
    }

    pub fn name(&self, idx: u32) -> &str {
        &self.names[idx as usize]
    }

    /// Number of known users (excluding the cold-start slot).
    pub fn n_users(&self) -> usize {
        self.names.len() - 1
    }
}

/// Loads GloVe-format text embeddings into a (vocab × dim) matrix.
/// Rows for tokens absent from the file are drawn from uniform(−0.1,
/// 0.1); the PAD row is all zeros.
pub fn load_pretrained_embeddings<F: Real>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<F>> {
    let text = fs::read_to_string(path)?;
    let mut by_token: HashMap<&str, Vec<F>> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let token = it.next().ok_or_else(|| parse_err(path, lineno, "empty line"))?;
        let values: Vec<&str> = it.collect();
        if values.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {dim} values, got {}", values.len()),
            ));
        }
        if !vocab.contains(token) {
            continue;
        }
        let mut row = Vec::with_capacity(dim);
        for v in values {
            let x: f64 =
                v.parse().map_err(|_| parse_err(path, lineno, format!("unparsable value {v:?}")))?;
            row.push(F::from_f64(x));
        }
        by_token.insert(token, row);
    }

    let mut matrix = vec![F::zero(); vocab.len() * dim];
    for idx in 1..vocab.len() {
        let token = vocab.token(idx as u32);
        let row = &mut matrix[idx * dim..(idx + 1) * dim];
        if let Some(pretrained) = by_token.get(token) {
            row.copy_from_slice(pretrained);
        } else {
            for v in row.iter_mut() {
                *v = F::from_f64(rng.gen_range(-0.1..0.1));
            }
        }
    }
    Ok(matrix)
}
