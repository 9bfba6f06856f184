//! Corpus ingestion: global vocabulary construction, index encoding with
//! clip/pad, corpus files, and synthetic Non-IID scene generation.

mod synthetic;

pub use synthetic::{domain_affinity, generate_synthetic_scene, SceneSpec};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Token reserved for out-of-vocabulary words.
pub const UNK_TOKEN: &str = "<unk>";
/// Token reserved for padded positions.
pub const PAD_TOKEN: &str = "<pad>";

/// Global token ↔ index map with reserved unknown/padding tokens.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index_of: HashMap<String, usize>,
    unk_index: usize,
    pad_index: usize,
}

impl Vocab {
    /// Builds the vocabulary from per-client word counts.
    ///
    /// Counts are summed across clients, the `max_size` most frequent tokens
    /// are retained (ties broken lexicographically), and the unknown/padding
    /// tokens are appended, so the final size is at most `max_size + 2`.
    pub fn build(per_client_counts: &[BTreeMap<String, u64>], max_size: usize) -> Result<Vocab> {
        if max_size < 2 {
            return Err(Error::config("vocabulary max_size must be >= 2"));
        }
        let mut total: BTreeMap<&str, u64> = BTreeMap::new();
        for counts in per_client_counts {
            for (token, &count) in counts {
                // Reserved tokens are appended below; a literal occurrence in
                // the raw corpus must not create a duplicate entry.
                if token == UNK_TOKEN || token == PAD_TOKEN {
                    continue;
                }
                *total.entry(token.as_str()).or_insert(0) += count;
            }
        }
        if total.is_empty() {
            return Err(Error::config("empty corpus: no tokens counted on any client"));
        }
        let mut ranked: Vec<(&str, u64)> = total.into_iter().collect();
        // Descending count, lexicographic tie-break (BTreeMap iteration already
        // yields tokens sorted, and sort_by is stable).
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        ranked.truncate(max_size);

        let mut tokens: Vec<String> = ranked.into_iter().map(|(t, _)| t.to_string()).collect();
        tokens.push(UNK_TOKEN.to_string());
        tokens.push(PAD_TOKEN.to_string());
        let index_of: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let unk_index = tokens.len() - 2;
        let pad_index = tokens.len() - 1;
        Ok(Vocab {
            tokens,
            index_of,
            unk_index,
            pad_index,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn unk_index(&self) -> usize {
        self.unk_index
    }

    pub fn pad_index(&self) -> usize {
        self.pad_index
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index_of.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Writes one token per line; the line number is the index.
    pub fn dump(&self, w: &mut impl Write) -> Result<()> {
        for token in &self.tokens {
            writeln!(w, "{token}")?;
        }
        Ok(())
    }

    /// Encodes a tokenized review into a fixed-length index sequence.
    ///
    /// Out-of-vocabulary tokens map to the unknown index; sequences are
    /// clipped to `max_len` or padded with the padding index. An empty token
    /// sequence encodes as a single unknown token so noisy corpora do not
    /// abort runs.
    pub fn encode(&self, tokens: &[&str], max_len: usize, label: usize) -> Result<EncodedReview> {
        if max_len < 1 {
            return Err(Error::config("max_len must be >= 1"));
        }
        let mut indices: Vec<usize> = tokens
            .iter()
            .take(max_len)
            .map(|t| self.index_of(t).unwrap_or(self.unk_index))
            .collect();
        if indices.is_empty() {
            indices.push(self.unk_index);
        }
        let true_length = indices.len();
        indices.resize(max_len, self.pad_index);
        Ok(EncodedReview {
            indices,
            true_length,
            label,
        })
    }

    /// Inverse of `encode` over the non-padded prefix.
    pub fn decode(&self, review: &EncodedReview) -> Vec<&str> {
        review.indices[..review.true_length]
            .iter()
            .map(|&i| self.token(i))
            .collect()
    }
}

/// A review as a fixed-length index sequence plus its effective length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedReview {
    pub indices: Vec<usize>,
    pub true_length: usize,
    pub label: usize,
}

/// One participant's encoded train/test data and local vocabulary.
#[derive(Debug, Clone)]
pub struct ClientCorpus {
    pub train: Vec<EncodedReview>,
    pub test: Vec<EncodedReview>,
    /// Indices occurring in train ∪ test, plus unk/pad.
    pub local_vocab_indices: BTreeSet<usize>,
}

impl ClientCorpus {
    pub fn new(train: Vec<EncodedReview>, test: Vec<EncodedReview>, vocab: &Vocab) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::config("client corpus must contain at least one training review"));
        }
        let mut local_vocab_indices = BTreeSet::new();
        for review in train.iter().chain(test.iter()) {
            for &idx in &review.indices[..review.true_length] {
                local_vocab_indices.insert(idx);
            }
        }
        local_vocab_indices.insert(vocab.unk_index());
        local_vocab_indices.insert(vocab.pad_index());
        Ok(ClientCorpus {
            train,
            test,
            local_vocab_indices,
        })
    }

    /// Whitespace token counts over train ∪ test, as fed to `Vocab::build`.
    pub fn n_train(&self) -> usize {
        self.train.len()
    }
}

/// Raw (tokens, label) pairs read from a corpus file.
pub type RawReviews = Vec<(Vec<String>, usize)>;

/// Reads a corpus file: one review per line, `label<TAB>token token ...`.
pub fn load_corpus_file(path: &Path, classes: usize) -> Result<RawReviews> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut reviews = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let (label_part, text) = line.split_once('\t').ok_or_else(|| {
            Error::config(format!(
                "{}: line {lineno}: expected `label<TAB>tokens`",
                path.display()
            ))
        })?;
        let label: usize = label_part.trim().parse().map_err(|_| {
            Error::config(format!(
                "{}: line {lineno}: label `{label_part}` is not a non-negative integer",
                path.display()
            ))
        })?;
        if label >= classes {
            return Err(Error::config(format!(
                "{}: line {lineno}: label {label} outside [0, {classes})",
                path.display()
            )));
        }
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        reviews.push((tokens, label));
    }
    Ok(reviews)
}

/// Whitespace tokenization, optionally lowercased.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            if lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Token counts for a set of raw reviews.
pub fn count_tokens(reviews: &RawReviews) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for (tokens, _) in reviews {
        for token in tokens {
            *counts.entry(token.clone()).or_insert(0) += 1;
        }
    }
    counts
}
