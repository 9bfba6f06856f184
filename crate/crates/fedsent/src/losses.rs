//! Training objectives: cross-entropy, empirical HSIC diversity,
//! temperature-softmax knowledge transfer, and the combined batch loss.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::forward::{log_softmax_t, softmax_t};

/// Kernel used by the gram matrices of the diversity term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelKind {
    Gaussian,
    Linear,
}

/// Bandwidth policy for the gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// σ² = median of pairwise squared distances (1.0 when the median is 0).
    MedianHeuristic,
    Fixed(f64),
}

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Knowledge-transfer weight λ1.
    pub lambda1: f64,
    /// Diversity weight λ2.
    pub lambda2: f64,
    /// Distillation temperature T.
    pub temperature: f64,
    pub kernel: KernelKind,
    pub bandwidth: Bandwidth,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::config("loss coefficients must be non-negative"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("distillation temperature must be positive"));
        }
        if let Bandwidth::Fixed(v) = self.bandwidth {
            if !(v > 0.0) {
                return Err(Error::config("fixed kernel bandwidth must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.01,
            lambda2: 0.01,
            temperature: 0.25,
            kernel: KernelKind::Gaussian,
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

/// −log softmax₁(g)[label], via log-sum-exp.
pub fn cross_entropy(logits: &Array1<f64>, label: usize) -> f64 {
    -log_softmax_t(logits, 1.0)[label]
}

/// d cross_entropy / d logits = softmax₁(g) − onehot(label).
pub fn cross_entropy_grad(logits: &Array1<f64>, label: usize) -> Array1<f64> {
    let mut g = softmax_t(logits, 1.0);
    g[label] -= 1.0;
    g
}

fn squared_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// σ² from the median of pairwise squared distances; 1.0 when degenerate.
fn median_bandwidth(feats: &Array2<f64>) -> f64 {
    let b = feats.nrows();
    let mut d2: Vec<f64> = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in (i + 1)..b {
            d2.push(squared_distance(feats.row(i), feats.row(j)));
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = d2.len();
    let median = if m % 2 == 1 {
        d2[m / 2]
    } else {
        0.5 * (d2[m / 2 - 1] + d2[m / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn resolve_bandwidth(feats: &Array2<f64>, kernel: KernelKind, bandwidth: Bandwidth) -> f64 {
    match (kernel, bandwidth) {
        (KernelKind::Linear, _) => 1.0,
        (KernelKind::Gaussian, Bandwidth::Fixed(v)) => v,
        (KernelKind::Gaussian, Bandwidth::MedianHeuristic) => median_bandwidth(feats),
    }
}

/// Gram matrix of a feature batch (rows are observations).
pub fn gram(feats: &Array2<f64>, kernel: KernelKind, bandwidth: Bandwidth) -> Result<Array2<f64>> {
    let b = feats.nrows();
    if b < 2 {
        return Err(Error::numeric(
            "gram/HSIC require a batch of at least 2 observations",
        ));
    }
    let sigma2 = resolve_bandwidth(feats, kernel, bandwidth);
    let mut l = Array2::zeros((b, b));
    for i in 0..b {
        for j in i..b {
            let v = match kernel {
                KernelKind::Linear => feats.row(i).dot(&feats.row(j)),
                KernelKind::Gaussian => {
                    (-squared_distance(feats.row(i), feats.row(j)) / (2.0 * sigma2)).exp()
                }
            };
            l[[i, j]] = v;
            l[[j, i]] = v;
        }
    }
    Ok(l)
}

/// Centering matrix H with H_ij = 1{i=j} − 1/B.
fn centering(b: usize) -> Array2<f64> {
    Array2::from_shape_fn((b, b), |(i, j)| {
        (if i == j { 1.0 } else { 0.0 }) - 1.0 / b as f64
    })
}

/// Empirical HSIC: (B−1)⁻² · Tr(L_s H L_p H).
pub fn hsic(
    feat_s: &Array2<f64>,
    feat_p: &Array2<f64>,
    kernel: KernelKind,
    bandwidth: Bandwidth,
) -> Result<f64> {
    Ok(hsic_with_grads(feat_s, feat_p, kernel, bandwidth)?.0)
}

/// HSIC value plus gradients with respect to both feature batches. The
/// gaussian bandwidth is treated as a constant under differentiation.
pub fn hsic_with_grads(
    feat_s: &Array2<f64>,
    feat_p: &Array2<f64>,
    kernel: KernelKind,
    bandwidth: Bandwidth,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let b = feat_s.nrows();
    if feat_p.nrows() != b {
        return Err(Error::numeric("HSIC feature batches must have equal size"));
    }
    let l_s = gram(feat_s, kernel, bandwidth)?;
    let l_p = gram(feat_p, kernel, bandwidth)?;
    let h = centering(b);
    let scale = 1.0 / ((b - 1) as f64 * (b - 1) as f64);

    let hlph = h.dot(&l_p).dot(&h);
    let hlsh = h.dot(&l_s).dot(&h);
    let value = scale * (&l_s * &hlph).sum();

    // d value / d L_s = scale · (H L_p H); d value / d L_p = scale · (H L_s H).
    let m_s = hlph.mapv(|x| x * scale);
    let m_p = hlsh.mapv(|x| x * scale);

    let d_s = kernel_feature_grad(feat_s, &l_s, &m_s, kernel, bandwidth);
    let d_p = kernel_feature_grad(feat_p, &l_p, &m_p, kernel, bandwidth);
    Ok((value, d_s, d_p))
}

/// Chain rule from d/dL onto the features producing L.
fn kernel_feature_grad(
    feats: &Array2<f64>,
    l: &Array2<f64>,
    m: &Array2<f64>,
    kernel: KernelKind,
    bandwidth: Bandwidth,
) -> Array2<f64> {
    let b = feats.nrows();
    let mut d = Array2::zeros(feats.raw_dim());
    match kernel {
        KernelKind::Linear => {
            // L = X Xᵀ, M symmetric ⇒ dX = 2 M X.
            d.assign(&m.dot(feats));
            d *= 2.0;
        }
        KernelKind::Gaussian => {
            let sigma2 = resolve_bandwidth(feats, kernel, bandwidth);
            for i in 0..b {
                for j in 0..b {
                    if i == j {
                        continue;
                    }
                    // Both (i,j) and (j,i) entries depend on x_i.
                    let coef = -2.0 * m[[i, j]] * l[[i, j]] / sigma2;
                    let diff = &feats.row(i) - &feats.row(j);
                    d.row_mut(i).scaled_add(coef, &diff);
                }
            }
        }
    }
    d
}

/// Knowledge-transfer loss: −Σ softmax₁(g_p) · log softmax_T(g_s). The
/// shared-branch logits act as a constant (no gradient flows into them).
pub fn kd_loss(g_p: &Array1<f64>, g_s: &Array1<f64>, temperature: f64) -> f64 {
    let p = softmax_t(g_p, 1.0);
    let log_q = log_softmax_t(g_s, temperature);
    -(&p * &log_q).sum()
}

/// KD loss plus its gradient with respect to the private logits. The
/// gradient with respect to the shared logits is identically zero.
pub fn kd_loss_with_grad(
    g_p: &Array1<f64>,
    g_s: &Array1<f64>,
    temperature: f64,
) -> (f64, Array1<f64>) {
    let p = softmax_t(g_p, 1.0);
    let log_q = log_softmax_t(g_s, temperature);
    let value = -(&p * &log_q).sum();
    // d/dg_p,k of −Σ_c p_c ℓ_c with p = softmax₁(g_p):
    //   p_k (Σ_c p_c ℓ_c − ℓ_k)
    let expected = (&p * &log_q).sum();
    let grad = Array1::from_shape_fn(p.len(), |k| p[k] * (expected - log_q[k]));
    (value, grad)
}

/// Per-term values of one batch objective. `total` is the combined scalar;
/// the remaining fields are the unweighted term means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce_s: f64,
    pub ce_p: f64,
    pub kd: f64,
    pub hsic: f64,
}

impl LossBreakdown {
    /// Recombines the terms with their coefficients.
    pub fn recombine(&self, cfg: &LossConfig) -> f64 {
        self.ce_s + self.ce_p + cfg.lambda1 * self.kd + cfg.lambda2 * self.hsic
    }
}

/// Batch outputs feeding the combined objective.
#[derive(Debug, Clone)]
pub struct BatchOutputs {
    pub logits_s: Vec<Array1<f64>>,
    pub logits_p: Vec<Array1<f64>>,
    /// B×(2s) shared-branch features.
    pub feat_s: Array2<f64>,
    /// B×(2s) private-branch features.
    pub feat_p: Array2<f64>,
}

/// Gradients of the combined objective with respect to the batch outputs.
#[derive(Debug, Clone)]
pub struct BatchOutputGrads {
    pub d_logits_s: Vec<Array1<f64>>,
    pub d_logits_p: Vec<Array1<f64>>,
    pub d_feat_s: Array2<f64>,
    pub d_feat_p: Array2<f64>,
}

/// Combined objective of one local batch:
/// (1/B) Σ_i [CE_s,i + CE_p,i + λ1·KD_i] + λ2·HSIC(batch).
pub fn total_loss(batch: &BatchOutputs, labels: &[usize], cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(total_loss_with_grads(batch, labels, cfg)?.0)
}

/// Combined objective plus output gradients.
pub fn total_loss_with_grads(
    batch: &BatchOutputs,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, BatchOutputGrads)> {
    cfg.validate()?;
    let b = labels.len();
    if b == 0 || batch.logits_s.len() != b || batch.logits_p.len() != b {
        return Err(Error::numeric("batch outputs and labels must agree on size"));
    }
    if cfg.lambda2 > 0.0 && b < 2 {
        return Err(Error::numeric(
            "diversity term requires batch size >= 2; increase the batch size or set lambda2 = 0",
        ));
    }
    let inv_b = 1.0 / b as f64;
    let mut ce_s_sum = 0.0;
    let mut ce_p_sum = 0.0;
    let mut kd_sum = 0.0;
    let mut d_logits_s = Vec::with_capacity(b);
    let mut d_logits_p = Vec::with_capacity(b);
    for i in 0..b {
        let y = labels[i];
        ce_s_sum += cross_entropy(&batch.logits_s[i], y);
        ce_p_sum += cross_entropy(&batch.logits_p[i], y);
        let mut dgs = cross_entropy_grad(&batch.logits_s[i], y);
        let mut dgp = cross_entropy_grad(&batch.logits_p[i], y);
        if cfg.lambda1 > 0.0 {
            let (kd, dkd_p) = kd_loss_with_grad(&batch.logits_p[i], &batch.logits_s[i], cfg.temperature);
            kd_sum += kd;
            dgp.scaled_add(cfg.lambda1, &dkd_p);
            // shared logits are stopped: no KD contribution to dgs.
        }
        dgs *= inv_b;
        dgp *= inv_b;
        d_logits_s.push(dgs);
        d_logits_p.push(dgp);
    }

    let (hsic_value, d_feat_s, d_feat_p) = if cfg.lambda2 > 0.0 {
        let (v, mut ds, mut dp) =
            hsic_with_grads(&batch.feat_s, &batch.feat_p, cfg.kernel, cfg.bandwidth)?;
        ds *= cfg.lambda2;
        dp *= cfg.lambda2;
        (v, ds, dp)
    } else {
        (
            0.0,
            Array2::zeros(batch.feat_s.raw_dim()),
            Array2::zeros(batch.feat_p.raw_dim()),
        )
    };

    let breakdown = LossBreakdown {
        total: inv_b * (ce_s_sum + ce_p_sum + cfg.lambda1 * kd_sum) + cfg.lambda2 * hsic_value,
        ce_s: ce_s_sum * inv_b,
        ce_p: ce_p_sum * inv_b,
        kd: kd_sum * inv_b,
        hsic: hsic_value,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::numeric("non-finite batch loss"));
    }
    Ok((
        breakdown,
        BatchOutputGrads {
            d_logits_s,
            d_logits_p,
            d_feat_s,
            d_feat_p,
        },
    ))
}

/// Quantities the differentiated objective treats as constants: the
/// stop-gradient teacher logits and the per-side gaussian bandwidths.
/// A finite-difference oracle must hold these fixed to probe the same
/// function the analytic gradient differentiates.
#[derive(Debug, Clone)]
pub struct FrozenStops {
    pub teacher_logits: Vec<Array1<f64>>,
    pub sigma2_s: f64,
    pub sigma2_p: f64,
}

/// Captures the frozen quantities at the current batch outputs.
pub fn freeze_stops(batch: &BatchOutputs, cfg: &LossConfig) -> FrozenStops {
    FrozenStops {
        teacher_logits: batch.logits_s.clone(),
        sigma2_s: resolve_bandwidth(&batch.feat_s, cfg.kernel, cfg.bandwidth),
        sigma2_p: resolve_bandwidth(&batch.feat_p, cfg.kernel, cfg.bandwidth),
    }
}

/// Combined objective with the stop-gradient quantities pinned to `frozen`.
/// At the freezing point this equals `total_loss`; away from it, it is the
/// function whose exact gradient `total_loss_with_grads` reports.
pub fn total_loss_frozen(
    batch: &BatchOutputs,
    labels: &[usize],
    cfg: &LossConfig,
    frozen: &FrozenStops,
) -> Result<f64> {
    let b = labels.len();
    let inv_b = 1.0 / b as f64;
    let mut sum = 0.0;
    for i in 0..b {
        let y = labels[i];
        sum += cross_entropy(&batch.logits_s[i], y);
        sum += cross_entropy(&batch.logits_p[i], y);
        if cfg.lambda1 > 0.0 {
            sum += cfg.lambda1
                * kd_loss(&batch.logits_p[i], &frozen.teacher_logits[i], cfg.temperature);
        }
    }
    let mut total = sum * inv_b;
    if cfg.lambda2 > 0.0 {
        let l_s = gram(&batch.feat_s, cfg.kernel, Bandwidth::Fixed(frozen.sigma2_s))?;
        let l_p = gram(&batch.feat_p, cfg.kernel, Bandwidth::Fixed(frozen.sigma2_p))?;
        let h = centering(b);
        let scale = 1.0 / ((b - 1) as f64 * (b - 1) as f64);
        total += cfg.lambda2 * scale * (&l_s * &h.dot(&l_p).dot(&h)).sum();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn ce_symmetric_logits_is_ln2() {
        assert_abs_diff_eq!(
            cross_entropy(&array![0.0, 0.0], 0),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ce_confident_correct_is_near_zero() {
        let v = cross_entropy(&array![30.0, -30.0], 0);
        assert!(v >= 0.0 && v < 1e-12, "{v}");
    }

    #[test]
    fn ce_uniform_is_ln_c() {
        for c in [2usize, 3, 7] {
            let g = Array1::from_elem(c, 0.37);
            assert_abs_diff_eq!(cross_entropy(&g, 1 % c), (c as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn ce_grad_matches_finite_differences() {
        let g = array![0.4, -1.1, 2.2];
        let grad = cross_entropy_grad(&g, 2);
        let eps = 1e-6;
        for k in 0..3 {
            let mut gp = g.clone();
            gp[k] += eps;
            let mut gm = g.clone();
            gm[k] -= eps;
            let fd = (cross_entropy(&gp, 2) - cross_entropy(&gm, 2)) / (2.0 * eps);
            assert_abs_diff_eq!(grad[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn gram_identical_rows_gaussian_is_all_ones() {
        let feats = Array2::from_elem((3, 4), 0.7);
        let l = gram(&feats, KernelKind::Gaussian, Bandwidth::MedianHeuristic).unwrap();
        for v in l.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn gram_linear_orthonormal_rows_is_identity() {
        let feats = array![[1.0, 0.0], [0.0, 1.0]];
        let l = gram(&feats, KernelKind::Linear, Bandwidth::MedianHeuristic).unwrap();
        assert_eq!(l, Array2::eye(2));
    }

    #[test]
    fn gram_is_exactly_symmetric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let feats = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let l = gram(&feats, KernelKind::Gaussian, Bandwidth::MedianHeuristic).unwrap();
        assert_eq!(l, l.t().to_owned());
    }

    #[test]
    fn gram_rejects_batches_below_two() {
        let feats = Array2::zeros((1, 3));
        assert!(gram(&feats, KernelKind::Linear, Bandwidth::MedianHeuristic).is_err());
    }

    #[test]
    fn hsic_two_point_linear_case() {
        // Scalars {0, 1} on both sides: Tr(LHLH) = 0.25 and (B−1)⁻² = 1.
        let f = array![[0.0], [1.0]];
        let v = hsic(&f, &f, KernelKind::Linear, Bandwidth::MedianHeuristic).unwrap();
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn hsic_constant_side_vanishes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let c = Array2::from_elem((5, 3), 0.42);
        for kernel in [KernelKind::Gaussian, KernelKind::Linear] {
            let v = hsic(&a, &c, kernel, Bandwidth::MedianHeuristic).unwrap();
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    /// Brute-force element-wise evaluation of (B−1)⁻² Tr(L_s H L_p H),
    /// independent of the implementation's matrix products.
    fn hsic_brute_force(l_s: &Array2<f64>, l_p: &Array2<f64>) -> f64 {
        let b = l_s.nrows();
        let h = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - 1.0 / b as f64;
        let mut tr = 0.0;
        for i in 0..b {
            for j in 0..b {
                for k in 0..b {
                    for l in 0..b {
                        tr += l_s[[i, j]] * h(j, k) * l_p[[k, l]] * h(l, i);
                    }
                }
            }
        }
        tr / ((b - 1) as f64 * (b - 1) as f64)
    }

    #[test]
    fn hsic_matches_brute_force_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for kernel in [KernelKind::Gaussian, KernelKind::Linear] {
            for _ in 0..10 {
                let a = Array2::from_shape_fn((8, 6), |_| rng.gen_range(-1.0..1.0));
                let b = Array2::from_shape_fn((8, 6), |_| rng.gen_range(-1.0..1.0));
                let l_s = gram(&a, kernel, Bandwidth::MedianHeuristic).unwrap();
                let l_p = gram(&b, kernel, Bandwidth::MedianHeuristic).unwrap();
                let expected = hsic_brute_force(&l_s, &l_p);
                let v = hsic(&a, &b, kernel, Bandwidth::MedianHeuristic).unwrap();
                assert_abs_diff_eq!(v, expected, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn hsic_is_symmetric_in_its_arguments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let a = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let v1 = hsic(&a, &b, KernelKind::Linear, Bandwidth::MedianHeuristic).unwrap();
        let v2 = hsic(&b, &a, KernelKind::Linear, Bandwidth::MedianHeuristic).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn hsic_feature_grads_match_finite_differences() {
        // Fixed bandwidth so the objective is smooth in the features.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for kernel in [KernelKind::Gaussian, KernelKind::Linear] {
            let bw = Bandwidth::Fixed(0.9);
            let a = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
            let b = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
            let (_, da, db) = hsic_with_grads(&a, &b, kernel, bw).unwrap();
            let eps = 1e-6;
            for (which, grad) in [(0, &da), (1, &db)] {
                for i in 0..5 {
                    for j in 0..3 {
                        let mut ap = a.clone();
                        let mut am = a.clone();
                        let mut bp = b.clone();
                        let mut bm = b.clone();
                        if which == 0 {
                            ap[[i, j]] += eps;
                            am[[i, j]] -= eps;
                        } else {
                            bp[[i, j]] += eps;
                            bm[[i, j]] -= eps;
                        }
                        let fp = hsic(&ap, &bp, kernel, bw).unwrap();
                        let fm = hsic(&am, &bm, kernel, bw).unwrap();
                        let fd = (fp - fm) / (2.0 * eps);
                        assert_abs_diff_eq!(grad[[i, j]], fd, epsilon = 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn kd_equal_symmetric_logits_is_ln2() {
        let z = array![0.0, 0.0];
        assert_abs_diff_eq!(kd_loss(&z, &z, 1.0), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn kd_grows_when_private_mass_sits_on_teacher_low_class() {
        // Teacher distribution ~ [1−ε, ε].
        let eps = 1e-3f64;
        let g_s = array![(1.0 - eps).ln(), eps.ln()];
        let aligned = kd_loss(&array![4.0, -4.0], &g_s, 1.0);
        let misaligned = kd_loss(&array![-4.0, 4.0], &g_s, 1.0);
        assert!(misaligned > aligned);
    }

    #[test]
    fn kd_private_grad_matches_fd_and_teacher_grad_is_zero() {
        let g_p = array![0.2, -0.5, 1.0];
        let g_s = array![1.5, 0.1, -0.4];
        let t = 0.25;
        let (_, grad_p) = kd_loss_with_grad(&g_p, &g_s, t);
        let eps = 1e-6;
        for k in 0..3 {
            let mut gp = g_p.clone();
            gp[k] += eps;
            let mut gm = g_p.clone();
            gm[k] -= eps;
            let fd = (kd_loss(&gp, &g_s, t) - kd_loss(&gm, &g_s, t)) / (2.0 * eps);
            assert_abs_diff_eq!(grad_p[k], fd, epsilon = 1e-6);
        }
        // Stop-gradient contract: the implementation exposes no teacher
        // gradient at all; the only gradient output is with respect to g_p.
    }

    fn two_sample_batch() -> (BatchOutputs, Vec<usize>) {
        let logits_s = vec![array![0.5, -0.5], array![-1.0, 1.0]];
        let logits_p = vec![array![0.5, -0.5], array![-1.0, 1.0]];
        let feat_s = array![[0.1, 0.2], [0.3, -0.4]];
        let feat_p = array![[0.0, 1.0], [1.0, 0.0]];
        (
            BatchOutputs {
                logits_s,
                logits_p,
                feat_s,
                feat_p,
            },
            vec![0, 1],
        )
    }

    #[test]
    fn total_loss_reduces_to_two_cross_entropies() {
        let (batch, labels) = two_sample_batch();
        let cfg = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..LossConfig::default()
        };
        let breakdown = total_loss(&batch, &labels, &cfg).unwrap();
        let mut expect = 0.0;
        for i in 0..2 {
            expect += cross_entropy(&batch.logits_s[i], labels[i]);
            expect += cross_entropy(&batch.logits_p[i], labels[i]);
        }
        assert_abs_diff_eq!(breakdown.total, expect / 2.0, epsilon = 1e-15);
        assert_eq!(breakdown.kd, 0.0);
        assert_eq!(breakdown.hsic, 0.0);
    }

    #[test]
    fn total_loss_identical_branches_hand_computed() {
        let (batch, labels) = two_sample_batch();
        let cfg = LossConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            temperature: 1.0,
            ..LossConfig::default()
        };
        let breakdown = total_loss(&batch, &labels, &cfg).unwrap();
        // Identical branch logits: KD_i is the entropy-like term
        // −Σ softmax(g)·log softmax(g).
        let mut expect = 0.0;
        for i in 0..2 {
            let ce = cross_entropy(&batch.logits_s[i], labels[i]);
            let p = softmax_t(&batch.logits_s[i], 1.0);
            let kd: f64 = -p.iter().map(|&x| x * x.ln()).sum::<f64>();
            expect += 2.0 * ce + kd;
        }
        assert_abs_diff_eq!(breakdown.total, expect / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn doubling_lambda2_doubles_the_diversity_share() {
        let (batch, labels) = two_sample_batch();
        let cfg1 = LossConfig {
            lambda1: 0.0,
            lambda2: 0.005,
            ..LossConfig::default()
        };
        let cfg2 = LossConfig {
            lambda2: 0.01,
            ..cfg1
        };
        let b1 = total_loss(&batch, &labels, &cfg1).unwrap();
        let b2 = total_loss(&batch, &labels, &cfg2).unwrap();
        assert_abs_diff_eq!(b1.hsic, b2.hsic, epsilon = 1e-15);
        assert_abs_diff_eq!(
            b2.total - b2.ce_s - b2.ce_p,
            2.0 * (b1.total - b1.ce_s - b1.ce_p),
            epsilon = 1e-15
        );
    }

    #[test]
    fn breakdown_terms_recombine_to_total() {
        let (batch, labels) = two_sample_batch();
        let cfg = LossConfig::default();
        let breakdown = total_loss(&batch, &labels, &cfg).unwrap();
        assert_abs_diff_eq!(breakdown.recombine(&cfg), breakdown.total, epsilon = 1e-12);
    }

    #[test]
    fn singleton_batch_with_diversity_errors() {
        let batch = BatchOutputs {
            logits_s: vec![array![0.0, 0.0]],
            logits_p: vec![array![0.0, 0.0]],
            feat_s: Array2::zeros((1, 2)),
            feat_p: Array2::zeros((1, 2)),
        };
        let err = total_loss(&batch, &[0], &LossConfig::default()).unwrap_err();
        assert!(err.to_string().contains("batch size >= 2"), "{err}");
    }
}
