//! Deterministic forward passes with caches for the backward sweep.
//!
//! The encoder is Embedding → BiGRU → SeqMean; each branch then applies an
//! optional affine projection and a two-layer ReLU classifier. Positions at
//! or beyond a review's true length carry zero recurrent states and are
//! excluded from the sequence mean.

use ndarray::{Array1, Array2};

use crate::corpus::EncodedReview;
use crate::error::{Error, Result};
use crate::nn::params::{Affine, BiGru, Embedding, GruCell, Mlp, ParamSet};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Word-representation lookup: column `j` of the output is the embedding
/// row of the `j`-th index.
pub fn embed(review: &EncodedReview, embedding: &Embedding) -> Result<Array2<f64>> {
    let (v, d) = embedding.weight.dim();
    let l = review.indices.len();
    let mut e = Array2::zeros((d, l));
    for (j, &idx) in review.indices.iter().enumerate() {
        if idx >= v {
            return Err(Error::numeric(format!(
                "token index {idx} out of range for vocabulary of size {v}"
            )));
        }
        e.column_mut(j).assign(&embedding.weight.row(idx));
    }
    Ok(e)
}

/// Per-step cache of one GRU direction.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub n: Array1<f64>,
    /// r ⊙ h_prev, the candidate's recurrent input.
    pub rh: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub h: Array1<f64>,
}

/// One direction's run over the valid positions, in feeding order.
#[derive(Debug, Clone)]
pub struct GruRun {
    pub steps: Vec<GruStep>,
}

impl GruCell {
    /// Runs the cell over `inputs` (feeding order), starting from a zero state.
    pub fn run(&self, inputs: &[Array1<f64>]) -> GruRun {
        let s = self.b_update.len();
        let mut h_prev = Array1::zeros(s);
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let z = (self.w_update.dot(x) + self.u_update.dot(&h_prev) + &self.b_update)
                .mapv(sigmoid);
            let r =
                (self.w_reset.dot(x) + self.u_reset.dot(&h_prev) + &self.b_reset).mapv(sigmoid);
            let rh = &r * &h_prev;
            let n = (self.w_cand.dot(x) + self.u_cand.dot(&rh) + &self.b_cand).mapv(f64::tanh);
            let h = (1.0 - &z) * &n + &z * &h_prev;
            steps.push(GruStep {
                z,
                r,
                n,
                rh,
                h_prev: h_prev.clone(),
                h: h.clone(),
            });
            h_prev = h;
        }
        GruRun { steps }
    }
}

/// Cache of one bidirectional encoder evaluation.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// d×L word matrix.
    pub e: Array2<f64>,
    /// Forward-direction run over positions 0..T.
    pub fwd: GruRun,
    /// Backward-direction run over positions T-1..0 (feeding order).
    pub bwd: GruRun,
    /// 2s×L hidden matrix; rows 0..s forward, s..2s backward, pad columns zero.
    pub h: Array2<f64>,
    /// Mean of the first `true_length` hidden columns.
    pub o: Array1<f64>,
    pub true_length: usize,
}

/// BiGRU over the word matrix. Rows 0..s of the result hold the forward
/// direction, rows s..2s the backward direction; columns at or beyond
/// `true_length` are zero.
pub fn birnn_forward(e: &Array2<f64>, rnn: &BiGru, true_length: usize) -> Result<(Array2<f64>, GruRun, GruRun)> {
    let l = e.ncols();
    let s = rnn.fwd.b_update.len();
    if true_length < 1 || true_length > l {
        return Err(Error::numeric(format!(
            "true_length {true_length} outside [1, {l}]"
        )));
    }
    let inputs_fwd: Vec<Array1<f64>> = (0..true_length).map(|t| e.column(t).to_owned()).collect();
    let inputs_bwd: Vec<Array1<f64>> = (0..true_length)
        .rev()
        .map(|t| e.column(t).to_owned())
        .collect();
    let fwd = rnn.fwd.run(&inputs_fwd);
    let bwd = rnn.bwd.run(&inputs_bwd);
    let mut h = Array2::zeros((2 * s, l));
    for t in 0..true_length {
        h.column_mut(t)
            .slice_mut(ndarray::s![..s])
            .assign(&fwd.steps[t].h);
        // bwd step k processed position true_length-1-k.
        h.column_mut(t)
            .slice_mut(ndarray::s![s..])
            .assign(&bwd.steps[true_length - 1 - t].h);
    }
    Ok((h, fwd, bwd))
}

/// Mean of the first `true_length` columns; pad columns are excluded.
pub fn seq_mean(h: &Array2<f64>, true_length: usize) -> Result<Array1<f64>> {
    if true_length < 1 || true_length > h.ncols() {
        return Err(Error::numeric(format!(
            "true_length {true_length} outside [1, {}]",
            h.ncols()
        )));
    }
    let mut o = Array1::zeros(h.nrows());
    for t in 0..true_length {
        o += &h.column(t);
    }
    Ok(o / true_length as f64)
}

/// Affine projection into a branch subspace (no nonlinearity).
pub fn project(o: &Array1<f64>, proj: &Affine) -> Array1<f64> {
    proj.weight.dot(o) + &proj.bias
}

/// Cache of one classifier evaluation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Array1<f64>,
    /// Pre-ReLU hidden activations.
    pub pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub logits: Array1<f64>,
}

/// Two-layer ReLU perceptron producing logits (no softmax).
pub fn classify(o: &Array1<f64>, mlp: &Mlp) -> MlpCache {
    let pre = mlp.w1.dot(o) + &mlp.b1;
    let hidden = pre.mapv(|x| x.max(0.0));
    let logits = mlp.w2.dot(&hidden) + &mlp.b2;
    MlpCache {
        input: o.clone(),
        pre,
        hidden,
        logits,
    }
}

/// Temperature softmax with max-subtraction for overflow safety.
pub fn softmax_t(g: &Array1<f64>, temperature: f64) -> Array1<f64> {
    assert!(temperature > 0.0, "softmax temperature must be positive");
    let m = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = g.mapv(|x| ((x - m) / temperature).exp());
    let sum = exps.sum();
    exps / sum
}

/// log softmax_T, computed via log-sum-exp.
pub fn log_softmax_t(g: &Array1<f64>, temperature: f64) -> Array1<f64> {
    assert!(temperature > 0.0, "softmax temperature must be positive");
    let m = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled = g.mapv(|x| (x - m) / temperature);
    let lse = scaled.mapv(f64::exp).sum().ln();
    scaled - lse
}

/// Per-branch cache.
#[derive(Debug, Clone)]
pub struct BranchCache {
    /// Encoder output feeding the branch (before projection).
    pub o: Array1<f64>,
    /// Branch feature: projection output, or `o` when no projection exists.
    pub feat: Array1<f64>,
    pub mlp: MlpCache,
    /// Whether a projection layer produced `feat`.
    pub projected: bool,
}

/// Full per-sample cache across both branches.
#[derive(Debug, Clone)]
pub struct SampleCache {
    pub enc: EncoderCache,
    /// Private-branch encoder when the model duplicates it; otherwise the
    /// private branch reads `enc`.
    pub enc_p: Option<EncoderCache>,
    pub branch_s: Option<BranchCache>,
    pub branch_p: Option<BranchCache>,
}

impl SampleCache {
    pub fn logits_s(&self) -> Option<&Array1<f64>> {
        self.branch_s.as_ref().map(|b| &b.mlp.logits)
    }

    pub fn logits_p(&self) -> Option<&Array1<f64>> {
        self.branch_p.as_ref().map(|b| &b.mlp.logits)
    }
}

fn run_encoder(review: &EncodedReview, embedding: &Embedding, rnn: &BiGru) -> Result<EncoderCache> {
    let e = embed(review, embedding)?;
    let (h, fwd, bwd) = birnn_forward(&e, rnn, review.true_length)?;
    let o = seq_mean(&h, review.true_length)?;
    Ok(EncoderCache {
        e,
        fwd,
        bwd,
        h,
        o,
        true_length: review.true_length,
    })
}

/// Runs every branch the parameter set carries for one review.
pub fn forward_sample(params: &ParamSet, review: &EncodedReview) -> Result<SampleCache> {
    let embedding = params
        .embedding
        .as_ref()
        .ok_or_else(|| Error::numeric("model is missing the encoder embedding"))?;
    let rnn = params
        .rnn
        .as_ref()
        .ok_or_else(|| Error::numeric("model is missing the encoder rnn"))?;
    let enc = run_encoder(review, embedding, rnn)?;

    // The private branch reads a duplicated encoder when one exists.
    let enc_p = match (&params.embedding_p, &params.rnn_p) {
        (None, None) => None,
        (emb_p, rnn_p) => {
            let emb = emb_p.as_ref().unwrap_or(embedding);
            let cell = rnn_p.as_ref().unwrap_or(rnn);
            Some(run_encoder(review, emb, cell)?)
        }
    };

    let branch_s = params.classifier_s.as_ref().map(|clf| {
        let (feat, projected) = match &params.projection_s {
            Some(p) => (project(&enc.o, p), true),
            None => (enc.o.clone(), false),
        };
        BranchCache {
            o: enc.o.clone(),
            mlp: classify(&feat, clf),
            feat,
            projected,
        }
    });

    let branch_p = params.classifier_p.as_ref().map(|clf| {
        let o_p = enc_p.as_ref().map(|c| &c.o).unwrap_or(&enc.o);
        let (feat, projected) = match &params.projection_p {
            Some(p) => (project(o_p, p), true),
            None => (o_p.clone(), false),
        };
        BranchCache {
            o: o_p.clone(),
            mlp: classify(&feat, clf),
            feat,
            projected,
        }
    });

    Ok(SampleCache {
        enc,
        enc_p,
        branch_s,
        branch_p,
    })
}
