//! Parameter containers: component structs, the named `ParamSet`, sharing
//! configuration, seeded initialization, and snapshot serialization.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Model dimensions fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Vocabulary size V.
    pub vocab: usize,
    /// Word embedding size d.
    pub embed: usize,
    /// Recurrent hidden size s (per direction).
    pub hidden: usize,
    /// Classifier hidden width.
    pub mlp_hidden: usize,
    /// Number of classes C.
    pub classes: usize,
    /// Maximum review length L.
    pub max_len: usize,
}

impl ModelDims {
    pub fn feature(&self) -> usize {
        2 * self.hidden
    }
}

/// Word embedding table, V×d.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub weight: Array2<f64>,
}

/// One GRU direction: gate weights for input (s×d), recurrence (s×s), biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_update: Array2<f64>,
    pub u_update: Array2<f64>,
    pub b_update: Array1<f64>,
    pub w_reset: Array2<f64>,
    pub u_reset: Array2<f64>,
    pub b_reset: Array1<f64>,
    pub w_cand: Array2<f64>,
    pub u_cand: Array2<f64>,
    pub b_cand: Array1<f64>,
}

/// Bidirectional GRU: independent forward and backward cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

/// Affine projection: (2s)×(2s) weight plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Two-layer perceptron with ReLU: 2s → hidden → C.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Identifies one model component slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    /// Encoder embedding (feeds the shared branch, and the private branch
    /// when no private duplicate exists).
    Embedding,
    /// Encoder BiGRU.
    Rnn,
    /// Private duplicate embedding for fully/partially private branches.
    EmbeddingP,
    /// Private duplicate BiGRU.
    RnnP,
    ProjectionS,
    ProjectionP,
    ClassifierS,
    ClassifierP,
}

impl Slot {
    pub const ALL: [Slot; 8] = [
        Slot::Embedding,
        Slot::Rnn,
        Slot::EmbeddingP,
        Slot::RnnP,
        Slot::ProjectionS,
        Slot::ProjectionP,
        Slot::ClassifierS,
        Slot::ClassifierP,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Slot::Embedding => "embedding",
            Slot::Rnn => "rnn",
            Slot::EmbeddingP => "embedding_p",
            Slot::RnnP => "rnn_p",
            Slot::ProjectionS => "projection_s",
            Slot::ProjectionP => "projection_p",
            Slot::ClassifierS => "classifier_s",
            Slot::ClassifierP => "classifier_p",
        }
    }
}

/// Where a component lives in the federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    Shared,
    Private,
    Absent,
}

/// Per-component placement; derived from the federation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingConfig {
    pub embedding: Placement,
    pub rnn: Placement,
    pub embedding_p: Placement,
    pub rnn_p: Placement,
    pub projection_s: Placement,
    pub projection_p: Placement,
    pub classifier_s: Placement,
    pub classifier_p: Placement,
}

impl SharingConfig {
    pub fn placement(&self, slot: Slot) -> Placement {
        match slot {
            Slot::Embedding => self.embedding,
            Slot::Rnn => self.rnn,
            Slot::EmbeddingP => self.embedding_p,
            Slot::RnnP => self.rnn_p,
            Slot::ProjectionS => self.projection_s,
            Slot::ProjectionP => self.projection_p,
            Slot::ClassifierS => self.classifier_s,
            Slot::ClassifierP => self.classifier_p,
        }
    }

    pub fn present(&self, slot: Slot) -> bool {
        self.placement(slot) != Placement::Absent
    }

    /// At least one classifier present, and every present classifier is
    /// reachable from a present encoder path.
    pub fn validate(&self) -> Result<()> {
        if !self.present(Slot::ClassifierS) && !self.present(Slot::ClassifierP) {
            return Err(Error::config("sharing config must keep at least one classifier"));
        }
        if self.present(Slot::ClassifierS)
            && !(self.present(Slot::Embedding) && self.present(Slot::Rnn))
        {
            return Err(Error::config(
                "shared-branch classifier requires the encoder embedding and rnn",
            ));
        }
        if self.present(Slot::ClassifierP) {
            let emb_ok = self.present(Slot::EmbeddingP) || self.present(Slot::Embedding);
            let rnn_ok = self.present(Slot::RnnP) || self.present(Slot::Rnn);
            if !(emb_ok && rnn_ok) {
                return Err(Error::config(
                    "private-branch classifier requires an encoder path",
                ));
            }
        }
        if self.present(Slot::ProjectionS) && !self.present(Slot::ClassifierS) {
            return Err(Error::config("projection_s without classifier_s"));
        }
        if self.present(Slot::ProjectionP) && !self.present(Slot::ClassifierP) {
            return Err(Error::config("projection_p without classifier_p"));
        }
        Ok(())
    }

    /// Slots with the given placement.
    pub fn slots_where(&self, placement: Placement) -> Vec<Slot> {
        Slot::ALL
            .into_iter()
            .filter(|&s| self.placement(s) == placement)
            .collect()
    }

    /// True when the shared components alone form a complete model
    /// (encoder plus shared classifier), i.e. a global model exists.
    pub fn global_model_complete(&self) -> bool {
        self.placement(Slot::Embedding) == Placement::Shared
            && self.placement(Slot::Rnn) == Placement::Shared
            && self.placement(Slot::ClassifierS) == Placement::Shared
    }
}

/// Named collection of trainable arrays, partitioned into slots. Absent
/// slots are `None`; gradients reuse the same structure via `zeros_like`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub dims: ModelDims,
    pub embedding: Option<Embedding>,
    pub rnn: Option<BiGru>,
    pub embedding_p: Option<Embedding>,
    pub rnn_p: Option<BiGru>,
    pub projection_s: Option<Affine>,
    pub projection_p: Option<Affine>,
    pub classifier_s: Option<Mlp>,
    pub classifier_p: Option<Mlp>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-0.1..0.1))
}

fn gru_cell(rng: &mut ChaCha8Rng, hidden: usize, input: usize) -> GruCell {
    GruCell {
        w_update: uniform(rng, hidden, input),
        u_update: uniform(rng, hidden, hidden),
        b_update: Array1::zeros(hidden),
        w_reset: uniform(rng, hidden, input),
        u_reset: uniform(rng, hidden, hidden),
        b_reset: Array1::zeros(hidden),
        w_cand: uniform(rng, hidden, input),
        u_cand: uniform(rng, hidden, hidden),
        b_cand: Array1::zeros(hidden),
    }
}

impl ParamSet {
    /// Empty set (all slots absent) with fixed dimensions.
    pub fn empty(dims: ModelDims) -> Self {
        ParamSet {
            dims,
            embedding: None,
            rnn: None,
            embedding_p: None,
            rnn_p: None,
            projection_s: None,
            projection_p: None,
            classifier_s: None,
            classifier_p: None,
        }
    }

    /// Seeded initialization of all slots present in `sharing`: weights
    /// uniform in [−0.1, 0.1], biases zero.
    pub fn init(dims: ModelDims, sharing: &SharingConfig, seed: u64) -> Result<Self> {
        sharing.validate()?;
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut set = ParamSet::empty(dims);
        let f = dims.feature();
        for slot in Slot::ALL {
            if !sharing.present(slot) {
                continue;
            }
            match slot {
                Slot::Embedding => {
                    set.embedding = Some(Embedding {
                        weight: uniform(&mut rng, dims.vocab, dims.embed),
                    })
                }
                Slot::EmbeddingP => {
                    set.embedding_p = Some(Embedding {
                        weight: uniform(&mut rng, dims.vocab, dims.embed),
                    })
                }
                Slot::Rnn => {
                    set.rnn = Some(BiGru {
                        fwd: gru_cell(&mut rng, dims.hidden, dims.embed),
                        bwd: gru_cell(&mut rng, dims.hidden, dims.embed),
                    })
                }
                Slot::RnnP => {
                    set.rnn_p = Some(BiGru {
                        fwd: gru_cell(&mut rng, dims.hidden, dims.embed),
                        bwd: gru_cell(&mut rng, dims.hidden, dims.embed),
                    })
                }
                Slot::ProjectionS => {
                    set.projection_s = Some(Affine {
                        weight: uniform(&mut rng, f, f),
                        bias: Array1::zeros(f),
                    })
                }
                Slot::ProjectionP => {
                    set.projection_p = Some(Affine {
                        weight: uniform(&mut rng, f, f),
                        bias: Array1::zeros(f),
                    })
                }
                Slot::ClassifierS => {
                    set.classifier_s = Some(Mlp {
                        w1: uniform(&mut rng, dims.mlp_hidden, f),
                        b1: Array1::zeros(dims.mlp_hidden),
                        w2: uniform(&mut rng, dims.classes, dims.mlp_hidden),
                        b2: Array1::zeros(dims.classes),
                    })
                }
                Slot::ClassifierP => {
                    set.classifier_p = Some(Mlp {
                        w1: uniform(&mut rng, dims.mlp_hidden, f),
                        b1: Array1::zeros(dims.mlp_hidden),
                        w2: uniform(&mut rng, dims.classes, dims.mlp_hidden),
                        b2: Array1::zeros(dims.classes),
                    })
                }
            }
        }
        Ok(set)
    }

    /// Same structure, every array zeroed. Used for gradients and momentum.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, a) in out.arrays_mut() {
            a.fill(0.0);
        }
        out
    }

    pub fn slot_ref(&self, slot: Slot) -> bool {
        match slot {
            Slot::Embedding => self.embedding.is_some(),
            Slot::Rnn => self.rnn.is_some(),
            Slot::EmbeddingP => self.embedding_p.is_some(),
            Slot::RnnP => self.rnn_p.is_some(),
            Slot::ProjectionS => self.projection_s.is_some(),
            Slot::ProjectionP => self.projection_p.is_some(),
            Slot::ClassifierS => self.classifier_s.is_some(),
            Slot::ClassifierP => self.classifier_p.is_some(),
        }
    }

    /// Clones the slots with the given placement into a new set.
    pub fn subset(&self, sharing: &SharingConfig, placement: Placement) -> ParamSet {
        let mut out = ParamSet::empty(self.dims);
        for slot in sharing.slots_where(placement) {
            out.copy_slot_from(self, slot);
        }
        out
    }

    /// Copies one slot (if present in `src`) into self.
    pub fn copy_slot_from(&mut self, src: &ParamSet, slot: Slot) {
        match slot {
            Slot::Embedding => self.embedding = src.embedding.clone(),
            Slot::Rnn => self.rnn = src.rnn.clone(),
            Slot::EmbeddingP => self.embedding_p = src.embedding_p.clone(),
            Slot::RnnP => self.rnn_p = src.rnn_p.clone(),
            Slot::ProjectionS => self.projection_s = src.projection_s.clone(),
            Slot::ProjectionP => self.projection_p = src.projection_p.clone(),
            Slot::ClassifierS => self.classifier_s = src.classifier_s.clone(),
            Slot::ClassifierP => self.classifier_p = src.classifier_p.clone(),
        }
    }

    /// Overwrites every slot present in `other` with `other`'s arrays.
    pub fn overwrite_from(&mut self, other: &ParamSet) {
        for slot in Slot::ALL {
            if other.slot_ref(slot) {
                self.copy_slot_from(other, slot);
            }
        }
    }

    /// Named flat views over every present array, in a fixed slot order.
    pub fn arrays(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        macro_rules! push {
            ($name:expr, $arr:expr) => {
                out.push(($name, $arr.as_slice().expect("standard layout")));
            };
        }
        if let Some(e) = &self.embedding {
            push!("embedding.weight".into(), e.weight);
        }
        if let Some(r) = &self.rnn {
            for (dir, cell) in [("fwd", &r.fwd), ("bwd", &r.bwd)] {
                push!(format!("rnn.{dir}.w_update"), cell.w_update);
                push!(format!("rnn.{dir}.u_update"), cell.u_update);
                push!(format!("rnn.{dir}.b_update"), cell.b_update);
                push!(format!("rnn.{dir}.w_reset"), cell.w_reset);
                push!(format!("rnn.{dir}.u_reset"), cell.u_reset);
                push!(format!("rnn.{dir}.b_reset"), cell.b_reset);
                push!(format!("rnn.{dir}.w_cand"), cell.w_cand);
                push!(format!("rnn.{dir}.u_cand"), cell.u_cand);
                push!(format!("rnn.{dir}.b_cand"), cell.b_cand);
            }
        }
        if let Some(e) = &self.embedding_p {
            push!("embedding_p.weight".into(), e.weight);
        }
        if let Some(r) = &self.rnn_p {
            for (dir, cell) in [("fwd", &r.fwd), ("bwd", &r.bwd)] {
                push!(format!("rnn_p.{dir}.w_update"), cell.w_update);
                push!(format!("rnn_p.{dir}.u_update"), cell.u_update);
                push!(format!("rnn_p.{dir}.b_update"), cell.b_update);
                push!(format!("rnn_p.{dir}.w_reset"), cell.w_reset);
                push!(format!("rnn_p.{dir}.u_reset"), cell.u_reset);
                push!(format!("rnn_p.{dir}.b_reset"), cell.b_reset);
                push!(format!("rnn_p.{dir}.w_cand"), cell.w_cand);
                push!(format!("rnn_p.{dir}.u_cand"), cell.u_cand);
                push!(format!("rnn_p.{dir}.b_cand"), cell.b_cand);
            }
        }
        if let Some(p) = &self.projection_s {
            push!("projection_s.weight".into(), p.weight);
            push!("projection_s.bias".into(), p.bias);
        }
        if let Some(p) = &self.projection_p {
            push!("projection_p.weight".into(), p.weight);
            push!("projection_p.bias".into(), p.bias);
        }
        if let Some(c) = &self.classifier_s {
            push!("classifier_s.w1".into(), c.w1);
            push!("classifier_s.b1".into(), c.b1);
            push!("classifier_s.w2".into(), c.w2);
            push!("classifier_s.b2".into(), c.b2);
        }
        if let Some(c) = &self.classifier_p {
            push!("classifier_p.w1".into(), c.w1);
            push!("classifier_p.b1".into(), c.b1);
            push!("classifier_p.w2".into(), c.w2);
            push!("classifier_p.b2".into(), c.b2);
        }
        out
    }

    /// Mutable counterpart of [`ParamSet::arrays`]; identical order.
    pub fn arrays_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        macro_rules! push {
            ($name:expr, $arr:expr) => {
                out.push(($name, $arr.as_slice_mut().expect("standard layout")));
            };
        }
        if let Some(e) = &mut self.embedding {
            push!("embedding.weight".into(), e.weight);
        }
        if let Some(r) = &mut self.rnn {
            for (dir, cell) in [("fwd", &mut r.fwd), ("bwd", &mut r.bwd)] {
                push!(format!("rnn.{dir}.w_update"), cell.w_update);
                push!(format!("rnn.{dir}.u_update"), cell.u_update);
                push!(format!("rnn.{dir}.b_update"), cell.b_update);
                push!(format!("rnn.{dir}.w_reset"), cell.w_reset);
                push!(format!("rnn.{dir}.u_reset"), cell.u_reset);
                push!(format!("rnn.{dir}.b_reset"), cell.b_reset);
                push!(format!("rnn.{dir}.w_cand"), cell.w_cand);
                push!(format!("rnn.{dir}.u_cand"), cell.u_cand);
                push!(format!("rnn.{dir}.b_cand"), cell.b_cand);
            }
        }
        if let Some(e) = &mut self.embedding_p {
            push!("embedding_p.weight".into(), e.weight);
        }
        if let Some(r) = &mut self.rnn_p {
            for (dir, cell) in [("fwd", &mut r.fwd), ("bwd", &mut r.bwd)] {
                push!(format!("rnn_p.{dir}.w_update"), cell.w_update);
                push!(format!("rnn_p.{dir}.u_update"), cell.u_update);
                push!(format!("rnn_p.{dir}.b_update"), cell.b_update);
                push!(format!("rnn_p.{dir}.w_reset"), cell.w_reset);
                push!(format!("rnn_p.{dir}.u_reset"), cell.u_reset);
                push!(format!("rnn_p.{dir}.b_reset"), cell.b_reset);
                push!(format!("rnn_p.{dir}.w_cand"), cell.w_cand);
                push!(format!("rnn_p.{dir}.u_cand"), cell.u_cand);
                push!(format!("rnn_p.{dir}.b_cand"), cell.b_cand);
            }
        }
        if let Some(p) = &mut self.projection_s {
            push!("projection_s.weight".into(), p.weight);
            push!("projection_s.bias".into(), p.bias);
        }
        if let Some(p) = &mut self.projection_p {
            push!("projection_p.weight".into(), p.weight);
            push!("projection_p.bias".into(), p.bias);
        }
        if let Some(c) = &mut self.classifier_s {
            push!("classifier_s.w1".into(), c.w1);
            push!("classifier_s.b1".into(), c.b1);
            push!("classifier_s.w2".into(), c.w2);
            push!("classifier_s.b2".into(), c.b2);
        }
        if let Some(c) = &mut self.classifier_p {
            push!("classifier_p.w1".into(), c.w1);
            push!("classifier_p.b1".into(), c.b1);
            push!("classifier_p.w2".into(), c.w2);
            push!("classifier_p.b2".into(), c.b2);
        }
        out
    }

    /// Shapes in the same order as [`ParamSet::arrays`].
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = BTreeMap::new();
        macro_rules! shape2 {
            ($name:expr, $a:expr) => {
                shapes.insert($name.to_string(), $a.shape().to_vec());
            };
        }
        if let Some(e) = &self.embedding {
            shape2!("embedding.weight", e.weight);
        }
        if let Some(e) = &self.embedding_p {
            shape2!("embedding_p.weight", e.weight);
        }
        for (prefix, rnn) in [("rnn", &self.rnn), ("rnn_p", &self.rnn_p)] {
            if let Some(r) = rnn {
                for (dir, cell) in [("fwd", &r.fwd), ("bwd", &r.bwd)] {
                    shape2!(format!("{prefix}.{dir}.w_update"), cell.w_update);
                    shape2!(format!("{prefix}.{dir}.u_update"), cell.u_update);
                    shape2!(format!("{prefix}.{dir}.b_update"), cell.b_update);
                    shape2!(format!("{prefix}.{dir}.w_reset"), cell.w_reset);
                    shape2!(format!("{prefix}.{dir}.u_reset"), cell.u_reset);
                    shape2!(format!("{prefix}.{dir}.b_reset"), cell.b_reset);
                    shape2!(format!("{prefix}.{dir}.w_cand"), cell.w_cand);
                    shape2!(format!("{prefix}.{dir}.u_cand"), cell.u_cand);
                    shape2!(format!("{prefix}.{dir}.b_cand"), cell.b_cand);
                }
            }
        }
        for (prefix, proj) in [
            ("projection_s", &self.projection_s),
            ("projection_p", &self.projection_p),
        ] {
            if let Some(p) = proj {
                shape2!(format!("{prefix}.weight"), p.weight);
                shape2!(format!("{prefix}.bias"), p.bias);
            }
        }
        for (prefix, clf) in [
            ("classifier_s", &self.classifier_s),
            ("classifier_p", &self.classifier_p),
        ] {
            if let Some(c) = clf {
                shape2!(format!("{prefix}.w1"), c.w1);
                shape2!(format!("{prefix}.b1"), c.b1);
                shape2!(format!("{prefix}.w2"), c.w2);
                shape2!(format!("{prefix}.b2"), c.b2);
            }
        }
        // arrays() order is authoritative; map back onto it.
        self.arrays()
            .into_iter()
            .map(|(name, _)| {
                let shape = shapes.get(&name).cloned().unwrap_or_default();
                (name, shape)
            })
            .collect()
    }

    /// Element-wise `self[i] = f(self[i], other[i])` over congruent arrays.
    pub fn zip_apply(&mut self, other: &ParamSet, mut f: impl FnMut(f64, f64) -> f64) -> Result<()> {
        let theirs = other.arrays();
        let mut mine = self.arrays_mut();
        if mine.len() != theirs.len() {
            return Err(Error::numeric(format!(
                "param sets are not congruent: {} vs {} arrays",
                mine.len(),
                theirs.len()
            )));
        }
        for ((name_a, a), (name_b, b)) in mine.iter_mut().zip(theirs.iter()) {
            if name_a != name_b || a.len() != b.len() {
                return Err(Error::numeric(format!(
                    "param sets are not congruent: {name_a}({}) vs {name_b}({})",
                    a.len(),
                    b.len()
                )));
            }
            for (x, &y) in a.iter_mut().zip(b.iter()) {
                *x = f(*x, y);
            }
        }
        Ok(())
    }

    /// Scales every array in place.
    pub fn scale(&mut self, factor: f64) {
        for (_, a) in self.arrays_mut() {
            for x in a {
                *x *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays().iter().all(|(_, a)| a.iter().all(|x| x.is_finite()))
    }

    /// Sum of squares over all arrays.
    pub fn norm_sq(&self) -> f64 {
        self.arrays()
            .iter()
            .map(|(_, a)| a.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn total_len(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    /// Maximum absolute element-wise difference against a congruent set.
    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        let a = self.arrays();
        let b = other.arrays();
        assert_eq!(a.len(), b.len(), "param sets are not congruent");
        let mut max = 0.0f64;
        for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
            for (u, v) in x.iter().zip(y.iter()) {
                max = max.max((u - v).abs());
            }
        }
        max
    }

    /// Loads pretrained embedding vectors (`token f1 ... fd` per line) into
    /// the encoder embedding. Tokens absent from the vocabulary are skipped;
    /// rows for tokens not in the file keep their current values.
    pub fn load_pretrained_embedding(&mut self, path: &Path, vocab: &Vocab) -> Result<usize> {
        let emb = self
            .embedding
            .as_mut()
            .ok_or_else(|| Error::config("model has no embedding slot to load into"))?;
        let d = emb.weight.ncols();
        let file = std::fs::File::open(path)?;
        let mut loaded = 0usize;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap();
            let Some(row) = vocab.index_of(token) else {
                continue;
            };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let values = values.map_err(|_| {
                Error::config(format!(
                    "{}: line {}: non-numeric embedding value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if values.len() != d {
                return Err(Error::config(format!(
                    "{}: line {}: expected {} values, found {}",
                    path.display(),
                    lineno + 1,
                    d,
                    values.len()
                )));
            }
            for (j, v) in values.into_iter().enumerate() {
                emb.weight[[row, j]] = v;
            }
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Writes the snapshot: little-endian f64 data in `arrays()` order.
    pub fn write_snapshot(&self, data: &mut impl Write) -> Result<()> {
        for (_, a) in self.arrays() {
            for x in a {
                data.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Manifest describing the snapshot layout.
    pub fn snapshot_manifest(&self) -> SnapshotManifest {
        let mut offset = 0usize;
        let arrays = self
            .shapes()
            .into_iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let entry = SnapshotArray {
                    name,
                    shape,
                    offset_floats: offset,
                    len_floats: len,
                };
                offset += len;
                entry
            })
            .collect();
        SnapshotManifest {
            total_floats: offset,
            arrays,
        }
    }

    /// Reads a snapshot previously produced by `write_snapshot` into the
    /// congruent structure of `self`.
    pub fn read_snapshot(&mut self, data: &mut impl Read) -> Result<()> {
        for (_, a) in self.arrays_mut() {
            for x in a.iter_mut() {
                let mut buf = [0u8; 8];
                data.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
        }
        Ok(())
    }
}

/// Named-shape manifest for parameter snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub total_floats: usize,
    pub arrays: Vec<SnapshotArray>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset_floats: usize,
    pub len_floats: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn tiny_dims() -> ModelDims {
        ModelDims {
            vocab: 12,
            embed: 4,
            hidden: 3,
            mlp_hidden: 6,
            classes: 2,
            max_len: 5,
        }
    }

    pub fn kteps_sharing() -> SharingConfig {
        SharingConfig {
            embedding: Placement::Shared,
            rnn: Placement::Shared,
            embedding_p: Placement::Absent,
            rnn_p: Placement::Absent,
            projection_s: Placement::Shared,
            projection_p: Placement::Private,
            classifier_s: Placement::Shared,
            classifier_p: Placement::Private,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ParamSet::init(tiny_dims(), &kteps_sharing(), 5).unwrap();
        let b = ParamSet::init(tiny_dims(), &kteps_sharing(), 5).unwrap();
        assert_eq!(a.max_abs_diff(&b), 0.0);
        let c = ParamSet::init(tiny_dims(), &kteps_sharing(), 6).unwrap();
        assert!(a.max_abs_diff(&c) > 0.0);
    }

    #[test]
    fn arrays_and_arrays_mut_agree_on_order() {
        let mut p = ParamSet::init(tiny_dims(), &kteps_sharing(), 5).unwrap();
        let names: Vec<String> = p.arrays().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = p.arrays_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        let shape_names: Vec<String> = p.shapes().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, shape_names);
    }

    #[test]
    fn subset_splits_private_and_shared() {
        let sharing = kteps_sharing();
        let p = ParamSet::init(tiny_dims(), &sharing, 5).unwrap();
        let shared = p.subset(&sharing, Placement::Shared);
        let private = p.subset(&sharing, Placement::Private);
        assert!(shared.embedding.is_some());
        assert!(shared.projection_p.is_none());
        assert!(private.projection_p.is_some());
        assert!(private.classifier_p.is_some());
        assert!(private.embedding.is_none());
        assert_eq!(shared.total_len() + private.total_len(), p.total_len());
    }

    #[test]
    fn zeros_like_matches_structure() {
        let p = ParamSet::init(tiny_dims(), &kteps_sharing(), 5).unwrap();
        let z = p.zeros_like();
        assert_eq!(z.total_len(), p.total_len());
        assert_eq!(z.norm_sq(), 0.0);
    }

    #[test]
    fn validate_rejects_unreachable_classifier() {
        let bad = SharingConfig {
            embedding: Placement::Absent,
            rnn: Placement::Shared,
            embedding_p: Placement::Absent,
            rnn_p: Placement::Absent,
            projection_s: Placement::Absent,
            projection_p: Placement::Absent,
            classifier_s: Placement::Shared,
            classifier_p: Placement::Absent,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn validate_requires_a_classifier() {
        let bad = SharingConfig {
            embedding: Placement::Shared,
            rnn: Placement::Shared,
            embedding_p: Placement::Absent,
            rnn_p: Placement::Absent,
            projection_s: Placement::Absent,
            projection_p: Placement::Absent,
            classifier_s: Placement::Absent,
            classifier_p: Placement::Absent,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let p = ParamSet::init(tiny_dims(), &kteps_sharing(), 9).unwrap();
        let mut bytes = Vec::new();
        p.write_snapshot(&mut bytes).unwrap();
        let manifest = p.snapshot_manifest();
        assert_eq!(bytes.len(), manifest.total_floats * 8);
        let mut q = p.zeros_like();
        q.read_snapshot(&mut bytes.as_slice()).unwrap();
        assert_eq!(p.max_abs_diff(&q), 0.0);
    }

    #[test]
    fn pretrained_embedding_overrides_matching_rows() {
        use std::collections::BTreeMap;
        let counts: BTreeMap<String, u64> =
            [("alpha".to_string(), 2), ("beta".to_string(), 1)].into();
        let vocab = Vocab::build(&[counts], 10).unwrap();
        let dims = ModelDims {
            vocab: vocab.size(),
            embed: 3,
            ..tiny_dims()
        };
        let mut p = ParamSet::init(dims, &kteps_sharing(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.txt");
        std::fs::write(&path, "alpha 1.0 2.0 3.0\nmissing 9 9 9\n").unwrap();
        let loaded = p.load_pretrained_embedding(&path, &vocab).unwrap();
        assert_eq!(loaded, 1);
        let row = vocab.index_of("alpha").unwrap();
        let w = &p.embedding.as_ref().unwrap().weight;
        assert_eq!(w[[row, 0]], 1.0);
        assert_eq!(w[[row, 2]], 3.0);
        let other = vocab.index_of("beta").unwrap();
        assert!(w[[other, 0]].abs() <= 0.1);
    }
}
