//! Deterministic synthetic Non-IID scene generation.
//!
//! Each scene mixes two lexica. Shared tokens correlate with labels the same
//! way on every client; domain tokens correlate with labels under a
//! client-specific polarity (the affinity class is shifted by the client id),
//! so conditional distributions differ across clients while the marginal
//! vocabulary is common.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ClientCorpus, Vocab};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Parameters of a synthetic scene.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    /// Number of participants K.
    pub clients: usize,
    /// Training reviews per client.
    pub train_per_client: usize,
    /// Test reviews per client.
    pub test_per_client: usize,
    /// Number of label classes C.
    pub classes: usize,
    /// Size of the shared sentiment lexicon.
    pub shared_lexicon: usize,
    /// Size of the domain lexicon pool (0 → all clients IID).
    pub domain_lexicon: usize,
    /// Review length is uniform in [min_len, max_len].
    pub min_len: usize,
    pub max_len: usize,
    /// Probability a token position draws from the domain lexicon.
    pub domain_weight: f64,
    /// Probability a drawn token ignores the review label.
    pub label_noise: f64,
    /// Encoded review length L (clip/pad target).
    pub encode_len: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients < 1 {
            return Err(Error::config("scene requires at least one client"));
        }
        if self.train_per_client == 0 {
            return Err(Error::config("scene requires train_per_client >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("scene requires at least two classes"));
        }
        if self.shared_lexicon < self.classes {
            return Err(Error::config(
                "shared_lexicon must be at least the number of classes",
            ));
        }
        if self.domain_lexicon > 0 && self.domain_lexicon < self.classes {
            return Err(Error::config(
                "domain_lexicon must be 0 or at least the number of classes",
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config("scene requires 1 <= min_len <= max_len"));
        }
        if self.encode_len < 1 {
            return Err(Error::config("encode_len must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.domain_weight) || !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config(
                "domain_weight and label_noise must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

fn shared_token(i: usize) -> String {
    format!("s{i:04}")
}

fn domain_token(i: usize) -> String {
    format!("d{i:04}")
}

/// Affinity class of domain token `i` on client `k`: shifted per client, so
/// the same token signals different labels on different clients. Shared
/// token `i` has affinity `i % classes` on every client.
pub fn domain_affinity(i: usize, client: usize, classes: usize) -> usize {
    (i + client) % classes
}

/// Balanced label sequence (counts differ by at most one), order shuffled.
fn balanced_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

fn draw_review(
    spec: &SceneSpec,
    client: usize,
    label: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let c = spec.classes;
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        let from_domain = spec.domain_lexicon > 0 && rng.gen::<f64>() < spec.domain_weight;
        let pool = if from_domain {
            spec.domain_lexicon
        } else {
            spec.shared_lexicon
        };
        // Smallest token index in the pool whose affinity equals the label.
        let offset = if from_domain {
            (label + c - client % c) % c
        } else {
            label
        };
        let idx = if rng.gen::<f64>() < spec.label_noise {
            rng.gen_range(0..pool)
        } else {
            let matching = (pool + c - 1 - offset) / c;
            offset + rng.gen_range(0..matching) * c
        };
        tokens.push(if from_domain {
            domain_token(idx)
        } else {
            shared_token(idx)
        });
    }
    tokens
}

/// Generates a deterministic synthetic scene: per-client corpora plus the
/// global vocabulary built from aggregated counts.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<(Vec<ClientCorpus>, Vocab)> {
    spec.validate()?;

    let mut raw: Vec<(Vec<(Vec<String>, usize)>, Vec<(Vec<String>, usize)>)> = Vec::new();
    for client in 0..spec.clients {
        let mut rng = rng::stream(seed, &[tag::SCENE, client as u64]);
        let train_labels = balanced_labels(spec.train_per_client, spec.classes, &mut rng);
        let test_labels = balanced_labels(spec.test_per_client, spec.classes, &mut rng);
        let train: Vec<(Vec<String>, usize)> = train_labels
            .into_iter()
            .map(|y| (draw_review(spec, client, y, &mut rng), y))
            .collect();
        let test: Vec<(Vec<String>, usize)> = test_labels
            .into_iter()
            .map(|y| (draw_review(spec, client, y, &mut rng), y))
            .collect();
        raw.push((train, test));
    }

    let per_client_counts: Vec<BTreeMap<String, u64>> = raw
        .iter()
        .map(|(train, test)| {
            let mut counts = BTreeMap::new();
            for (tokens, _) in train.iter().chain(test.iter()) {
                for t in tokens {
                    *counts.entry(t.clone()).or_insert(0) += 1;
                }
            }
            counts
        })
        .collect();
    let vocab = Vocab::build(
        &per_client_counts,
        spec.shared_lexicon + spec.domain_lexicon,
    )?;

    let mut corpora = Vec::with_capacity(spec.clients);
    for (train, test) in raw {
        let encode = |(tokens, label): (Vec<String>, usize)| {
            let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
            vocab.encode(&refs, spec.encode_len, label)
        };
        let train: Result<Vec<_>> = train.into_iter().map(encode).collect();
        let test: Result<Vec<_>> = test.into_iter().map(encode).collect();
        corpora.push(ClientCorpus::new(train?, test?, &vocab)?);
    }
    Ok((corpora, vocab))
}
