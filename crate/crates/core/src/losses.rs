//! Loss functions over batched probability rows: categorical cross entropy,
//! forward-corrected cross entropy, per-sample weighting, the paired-view KL
//! penalty, and the combined objective.
//!
//! All reductions are batch means, so the combining factor `alpha` keeps the
//! supervised and KL terms on comparable scales regardless of batch size.
//! Every probability is clamped to `[1e-7, 1]` before entering a logarithm.
//!
//! Gradients returned here are with respect to the probability rows (the
//! softmax outputs); chaining to logits and parameters is the network's job.

use crate::error::{Error, Result};
use crate::noise::NoiseTransitionMatrix;
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this before any `ln`.
pub const PROB_CLAMP_MIN: f64 = 1e-7;
/// Upper clamp bound.
pub const PROB_CLAMP_MAX: f64 = 1.0;
/// Rows whose sum deviates from 1 by more than this are rejected.
pub const ROW_SUM_TOL: f64 = 1e-6;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP_MIN, PROB_CLAMP_MAX)
}

/// Derivative of `clamp_prob` at `p`: 1 inside the clamp interval, 0 outside.
fn clamp_gate(p: f64) -> f64 {
    if p > PROB_CLAMP_MIN && p < PROB_CLAMP_MAX {
        1.0
    } else {
        0.0
    }
}

/// A reduced loss: the batch-mean scalar plus the per-sample values it was
/// reduced from. `scalar == mean(per_sample)` always.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub scalar: f64,
    pub per_sample: Vec<f64>,
}

impl LossValue {
    pub fn from_per_sample(per_sample: Vec<f64>) -> Self {
        let scalar = if per_sample.is_empty() {
            0.0
        } else {
            per_sample.iter().sum::<f64>() / per_sample.len() as f64
        };
        Self { scalar, per_sample }
    }

    pub fn zero(batch: usize) -> Self {
        Self { scalar: 0.0, per_sample: vec![0.0; batch] }
    }
}

/// Per-sample weights for the supervised objective. Selection-style strategies
/// use values in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample weights must be finite and nonnegative, got {w}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(batch: usize) -> Self {
        Self(vec![1.0; batch])
    }

    /// 1 for the given indices, 0 elsewhere.
    pub fn from_selection(indices: &[usize], batch: usize) -> Self {
        let mut w = vec![0.0; batch];
        for &i in indices {
            w[i] = 1.0;
        }
        Self(w)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Unreduced loss: one value and one gradient row (d loss_t / d pred_t) per
/// sample. Reduce with [`PerSampleLoss::mean`] or [`PerSampleLoss::weighted`].
#[derive(Debug, Clone)]
pub struct PerSampleLoss {
    pub values: Vec<f64>,
    /// Shape `[batch, classes]`; row `t` is the gradient of `values[t]`.
    pub grads: Tensor,
}

impl PerSampleLoss {
    /// Plain batch-mean reduction: scalar mean and gradient rows scaled 1/B.
    pub fn mean(&self) -> (LossValue, Tensor) {
        let b = self.values.len().max(1);
        let scale = 1.0 / b as f64;
        let mut grads = self.grads.clone();
        grads.data_mut().iter_mut().for_each(|g| *g *= scale);
        (LossValue::from_per_sample(self.values.clone()), grads)
    }

    /// Weighted reduction `sum_t w_t L_t / sum_t w_t`, 0 when all weights are
    /// zero. The reported per-sample values are each sample's contribution to
    /// the scalar, rescaled so their plain mean equals the scalar.
    pub fn weighted(&self, weights: &SampleWeights) -> Result<(LossValue, Tensor)> {
        let b = self.values.len();
        if weights.len() != b {
            return Err(Error::Dimension(format!(
                "{} weights for a batch of {b}",
                weights.len()
            )));
        }
        let total = weights.sum();
        let mut grads = Tensor::zeros(self.grads.shape().to_vec());
        if total == 0.0 {
            return Ok((LossValue::zero(b), grads));
        }
        let mut per_sample = Vec::with_capacity(b);
        for (t, (&v, &w)) in self.values.iter().zip(weights.values()).enumerate() {
            per_sample.push(w * v * b as f64 / total);
            let scale = w / total;
            let src = self.grads.row(t);
            let dst = grads.row_mut(t);
            for (d, s) in dst.iter_mut().zip(src) {
                *d = scale * s;
            }
        }
        Ok((LossValue::from_per_sample(per_sample), grads))
    }
}

fn validate_rows(pred: &Tensor, what: &str) -> Result<(usize, usize)> {
    let shape = pred.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "{what} must be a [batch, classes] tensor, got shape {shape:?}"
        )));
    }
    let (b, c) = (shape[0], shape[1]);
    for t in 0..b {
        let sum: f64 = pred.row(t).iter().sum();
        if !(sum - 1.0).abs().is_finite() || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NumericContract(format!(
                "{what} row {t} is not a probability distribution (sum {sum})"
            )));
        }
    }
    Ok((b, c))
}

fn validate_labels(labels: &[usize], b: usize, c: usize) -> Result<()> {
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidData(format!(
            "label {l} out of range for {c} classes"
        )));
    }
    Ok(())
}

/// Per-sample categorical cross entropy `-ln(clamp(pred[t, y_t]))` with its
/// gradient `-1/clamp(pred)` at the label entry and zero elsewhere.
pub fn cce_per_sample(pred: &Tensor, labels: &[usize]) -> Result<PerSampleLoss> {
    let (b, c) = validate_rows(pred, "cce prediction")?;
    validate_labels(labels, b, c)?;
    let mut values = Vec::with_capacity(b);
    let mut grads = Tensor::zeros(vec![b, c]);
    for (t, &y) in labels.iter().enumerate() {
        let p = pred.row(t)[y];
        let pc = clamp_prob(p);
        values.push(-pc.ln());
        grads.row_mut(t)[y] = -clamp_gate(p) / pc;
    }
    Ok(PerSampleLoss { values, grads })
}

/// Batch-mean categorical cross entropy and its gradient w.r.t. `pred`.
pub fn cce(pred: &Tensor, labels: &[usize]) -> Result<(LossValue, Tensor)> {
    Ok(cce_per_sample(pred, labels)?.mean())
}

/// Batch-mean KL divergence `KL(p || q)` between paired prediction rows,
/// exactly in that direction, with gradients flowing into both arguments.
///
/// Returns `(loss, d/dp, d/dq)`.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<(LossValue, Tensor, Tensor)> {
    let (b, c) = validate_rows(p, "kl left argument")?;
    let (bq, cq) = validate_rows(q, "kl right argument")?;
    if (b, c) != (bq, cq) {
        return Err(Error::Dimension(format!(
            "kl arguments disagree: [{b}, {c}] vs [{bq}, {cq}]"
        )));
    }
    let scale = 1.0 / b.max(1) as f64;
    let mut per_sample = Vec::with_capacity(b);
    let mut dp = Tensor::zeros(vec![b, c]);
    let mut dq = Tensor::zeros(vec![b, c]);
    for t in 0..b {
        let prow = p.row(t);
        let qrow = q.row(t);
        let mut kl = 0.0;
        for i in 0..c {
            let (pi, qi) = (prow[i], qrow[i]);
            let (pc, qc) = (clamp_prob(pi), clamp_prob(qi));
            let log_ratio = pc.ln() - qc.ln();
            kl += pi * log_ratio;
            dp.row_mut(t)[i] = scale * (log_ratio + (pi / pc) * clamp_gate(pi));
            dq.row_mut(t)[i] = scale * (-pi / qc) * clamp_gate(qi);
        }
        per_sample.push(kl);
    }
    Ok((LossValue::from_per_sample(per_sample), dp, dq))
}

/// Which way the transition matrix is applied to the prediction row before
/// the corrected cross entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionOrientation {
    /// `corrected_j = sum_i pred_i * T_ij`: marginalizes the prediction over
    /// the corruption process, so corrected rows are again distributions.
    #[default]
    Transpose,
    /// `corrected_i = sum_j T_ij * pred_j`: the literal matrix-vector product.
    /// Kept for comparison; corrected rows may not sum to 1.
    Literal,
}

/// Per-sample forward-corrected cross entropy: CCE applied to the prediction
/// row mapped through the noise transition matrix. Gradient chains through
/// the linear map back to `pred`.
pub fn forward_corrected_per_sample(
    pred: &Tensor,
    t: &NoiseTransitionMatrix,
    labels: &[usize],
    orientation: CorrectionOrientation,
) -> Result<PerSampleLoss> {
    let (b, c) = validate_rows(pred, "corrected-cce prediction")?;
    if t.classes() != c {
        return Err(Error::Dimension(format!(
            "transition matrix has {} classes, predictions have {c}",
            t.classes()
        )));
    }
    validate_labels(labels, b, c)?;
    let mut values = Vec::with_capacity(b);
    let mut grads = Tensor::zeros(vec![b, c]);
    for (s, &y) in labels.iter().enumerate() {
        let row = pred.row(s);
        let corrected_y: f64 = match orientation {
            CorrectionOrientation::Transpose => (0..c).map(|i| row[i] * t.get(i, y)).sum(),
            CorrectionOrientation::Literal => (0..c).map(|j| t.get(y, j) * row[j]).sum(),
        };
        let qc = clamp_prob(corrected_y);
        values.push(-qc.ln());
        let upstream = -clamp_gate(corrected_y) / qc;
        let grow = grads.row_mut(s);
        match orientation {
            CorrectionOrientation::Transpose => {
                for i in 0..c {
                    grow[i] = upstream * t.get(i, y);
                }
            }
            CorrectionOrientation::Literal => {
                for j in 0..c {
                    grow[j] = upstream * t.get(y, j);
                }
            }
        }
    }
    Ok(PerSampleLoss { values, grads })
}

/// Batch-mean forward-corrected cross entropy.
pub fn forward_corrected_cce(
    pred: &Tensor,
    t: &NoiseTransitionMatrix,
    labels: &[usize],
    orientation: CorrectionOrientation,
) -> Result<(LossValue, Tensor)> {
    Ok(forward_corrected_per_sample(pred, t, labels, orientation)?.mean())
}

/// Weighted supervised loss `sum_t w_t L_t / sum_t w_t` over precomputed
/// per-sample cross entropies, with the matching gradient.
pub fn weighted_supervised(
    per_sample: &PerSampleLoss,
    weights: &SampleWeights,
) -> Result<(LossValue, Tensor)> {
    per_sample.weighted(weights)
}

/// Combined objective `supervised + alpha * psdr` (values only; the caller
/// combines the gradient tensors with the same coefficients, since they may
/// attach to different forward passes).
pub fn combined_loss(
    supervised: &LossValue,
    psdr: &LossValue,
    alpha: f64,
) -> Result<LossValue> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    if supervised.per_sample.len() != psdr.per_sample.len() {
        return Err(Error::Dimension(format!(
            "combined loss terms computed on different batches: {} vs {}",
            supervised.per_sample.len(),
            psdr.per_sample.len()
        )));
    }
    let per_sample: Vec<f64> = supervised
        .per_sample
        .iter()
        .zip(&psdr.per_sample)
        .map(|(s, p)| s + alpha * p)
        .collect();
    Ok(LossValue {
        scalar: supervised.scalar + alpha * psdr.scalar,
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> Tensor {
        let b = data.len();
        let c = data[0].len();
        Tensor::from_rows(b, c, data.concat()).unwrap()
    }

    #[test]
    fn cce_onehot_prediction_is_zero() {
        let pred = rows(&[&[0.0, 1.0]]);
        let (loss, _) = cce(&pred, &[1]).unwrap();
        assert_eq!(loss.scalar, 0.0);
    }

    #[test]
    fn cce_uniform_prediction_is_log_c() {
        let pred = Tensor::scalar_filled(vec![3, 10], 0.1);
        let (loss, _) = cce(&pred, &[0, 5, 9]).unwrap();
        let expected = (10.0f64).ln();
        assert!((loss.scalar - expected).abs() < 1e-12);
        for v in &loss.per_sample {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn cce_direct_value_and_gradient() {
        let pred = rows(&[&[0.7, 0.3]]);
        let (loss, grad) = cce(&pred, &[1]).unwrap();
        assert!((loss.scalar - -(0.3f64.ln())).abs() < 1e-12);
        // -1/p at the label entry, /B with B=1.
        assert!((grad.row(0)[1] - (-1.0 / 0.3)).abs() < 1e-12);
        assert_eq!(grad.row(0)[0], 0.0);
    }

    #[test]
    fn cce_rejects_non_distribution_rows() {
        let pred = rows(&[&[0.7, 0.4]]);
        assert!(matches!(
            cce(&pred, &[0]),
            Err(Error::NumericContract(_))
        ));
    }

    #[test]
    fn cce_scalar_is_mean_of_per_sample() {
        let pred = rows(&[&[0.7, 0.3], &[0.2, 0.8], &[0.5, 0.5]]);
        let (loss, _) = cce(&pred, &[0, 1, 0]).unwrap();
        let mean = loss.per_sample.iter().sum::<f64>() / 3.0;
        assert!((loss.scalar - mean).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_rows_is_zero() {
        let p = rows(&[&[0.2, 0.5, 0.3], &[0.9, 0.05, 0.05]]);
        let (loss, _, _) = kl_divergence(&p, &p).unwrap();
        assert_eq!(loss.scalar, 0.0);
    }

    #[test]
    fn kl_direct_value() {
        let p = rows(&[&[1.0, 0.0]]);
        let q = rows(&[&[0.5, 0.5]]);
        let (loss, _, _) = kl_divergence(&p, &q).unwrap();
        assert!((loss.scalar - std::f64::consts::LN_2).abs() < 1e-5);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        use rand::Rng;
        let mut rng = crate::rng::substream(5, "kl-gibbs");
        for _ in 0..10_000 {
            let c = rng.gen_range(2..8);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut v: Vec<f64> = (0..c).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            };
            let p = Tensor::from_rows(1, c, draw(&mut rng)).unwrap();
            let q = Tensor::from_rows(1, c, draw(&mut rng)).unwrap();
            let (loss, _, _) = kl_divergence(&p, &q).unwrap();
            assert!(loss.scalar >= -1e-9, "KL {} < 0", loss.scalar);
        }
    }

    #[test]
    fn kl_rejects_shape_mismatch() {
        let p = rows(&[&[0.5, 0.5]]);
        let q = rows(&[&[0.4, 0.3, 0.3]]);
        assert!(matches!(kl_divergence(&p, &q), Err(Error::Dimension(_))));
    }

    #[test]
    fn corrected_with_identity_equals_cce() {
        let t = NoiseTransitionMatrix::identity(3).unwrap();
        let pred = rows(&[&[0.2, 0.5, 0.3], &[0.6, 0.1, 0.3]]);
        let labels = [2, 0];
        let (plain, pg) = cce(&pred, &labels).unwrap();
        let (corr, cg) =
            forward_corrected_cce(&pred, &t, &labels, CorrectionOrientation::Transpose).unwrap();
        assert!((plain.scalar - corr.scalar).abs() < 1e-12);
        for (a, b) in plain.per_sample.iter().zip(&corr.per_sample) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in pg.data().iter().zip(cg.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn corrected_direct_value() {
        let t = NoiseTransitionMatrix::new(2, vec![0.8, 0.2, 0.2, 0.8]).unwrap();
        let pred = rows(&[&[1.0, 0.0]]);
        let (loss, _) =
            forward_corrected_cce(&pred, &t, &[0], CorrectionOrientation::Transpose).unwrap();
        assert!((loss.scalar - -(0.8f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn corrected_rows_remain_distributions() {
        use rand::Rng;
        let t = crate::noise::asymmetric_matrix(4, 0.3, None).unwrap();
        let mut rng = crate::rng::substream(9, "corrected-rows");
        for _ in 0..100 {
            let mut v: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            // Transpose action: corrected row sums must be 1.
            let corrected_sum: f64 = (0..4)
                .map(|j| (0..4).map(|i| v[i] * t.get(i, j)).sum::<f64>())
                .sum();
            assert!((corrected_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn literal_orientation_differs_for_asymmetric_matrices() {
        let t = crate::noise::asymmetric_matrix(3, 0.4, None).unwrap();
        let pred = rows(&[&[0.6, 0.3, 0.1]]);
        let (a, _) =
            forward_corrected_cce(&pred, &t, &[0], CorrectionOrientation::Transpose).unwrap();
        let (b, _) =
            forward_corrected_cce(&pred, &t, &[0], CorrectionOrientation::Literal).unwrap();
        assert!((a.scalar - b.scalar).abs() > 1e-6);
    }

    #[test]
    fn weighted_uniform_equals_mean() {
        let pred = rows(&[&[0.7, 0.3], &[0.2, 0.8], &[0.5, 0.5]]);
        let per = cce_per_sample(&pred, &[0, 1, 0]).unwrap();
        let (mean_loss, mean_grad) = per.mean();
        let (w_loss, w_grad) =
            weighted_supervised(&per, &SampleWeights::uniform(3)).unwrap();
        assert!((mean_loss.scalar - w_loss.scalar).abs() < 1e-12);
        for (a, b) in mean_grad.data().iter().zip(w_grad.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_selection_equals_subset_mean() {
        let pred = rows(&[&[0.7, 0.3], &[0.2, 0.8], &[0.5, 0.5], &[0.9, 0.1]]);
        let labels = [0, 1, 0, 0];
        let per = cce_per_sample(&pred, &labels).unwrap();
        let selection = [1usize, 3];
        let (loss, grad) = per
            .weighted(&SampleWeights::from_selection(&selection, 4))
            .unwrap();
        // Subset-mean oracle.
        let expected = (per.values[1] + per.values[3]) / 2.0;
        assert!((loss.scalar - expected).abs() < 1e-12);
        // Unselected rows carry zero gradient.
        assert!(grad.row(0).iter().all(|&g| g == 0.0));
        assert!(grad.row(2).iter().all(|&g| g == 0.0));
        // Selected rows are the per-sample gradient / |selection|.
        for (a, b) in grad.row(1).iter().zip(per.grads.row(1)) {
            assert!((a - b / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_all_zero_is_zero() {
        let pred = rows(&[&[0.7, 0.3], &[0.2, 0.8]]);
        let per = cce_per_sample(&pred, &[0, 1]).unwrap();
        let (loss, grad) = per.weighted(&SampleWeights::new(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(loss.scalar, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(SampleWeights::new(vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn combined_alpha_zero_is_supervised() {
        let s = LossValue::from_per_sample(vec![0.5, 0.7]);
        let p = LossValue::from_per_sample(vec![0.2, 0.4]);
        let c = combined_loss(&s, &p, 0.0).unwrap();
        assert_eq!(c, s);
    }

    #[test]
    fn combined_is_linear() {
        let s = LossValue::from_per_sample(vec![0.5]);
        let p = LossValue::from_per_sample(vec![0.2]);
        let c = combined_loss(&s, &p, 1.0).unwrap();
        assert!((c.scalar - 0.7).abs() < 1e-12);
        // combined(a1) + combined(a2) - supervised == combined(a1 + a2)
        let a1 = combined_loss(&s, &p, 0.3).unwrap();
        let a2 = combined_loss(&s, &p, 1.1).unwrap();
        let both = combined_loss(&s, &p, 1.4).unwrap();
        assert!((a1.scalar + a2.scalar - s.scalar - both.scalar).abs() < 1e-12);
        // d(combined)/d(alpha) == psdr scalar, by central difference.
        let h = 1e-6;
        let up = combined_loss(&s, &p, 1.0 + h).unwrap();
        let down = combined_loss(&s, &p, 1.0 - h).unwrap();
        let fd = (up.scalar - down.scalar) / (2.0 * h);
        assert!((fd - p.scalar).abs() < 1e-9);
    }

    #[test]
    fn combined_rejects_negative_alpha() {
        let s = LossValue::from_per_sample(vec![0.5]);
        let p = LossValue::from_per_sample(vec![0.2]);
        assert!(combined_loss(&s, &p, -0.1).is_err());
    }

    #[test]
    fn batch_mean_consistency_under_splits() {
        let pred = rows(&[&[0.7, 0.3], &[0.2, 0.8], &[0.5, 0.5], &[0.9, 0.1]]);
        let labels = [0, 1, 0, 1];
        let (full, _) = cce(&pred, &labels).unwrap();
        let (a, _) = cce(&pred.gather_rows(&[0, 1]).unwrap(), &labels[..2]).unwrap();
        let (b, _) = cce(&pred.gather_rows(&[2, 3]).unwrap(), &labels[2..]).unwrap();
        let recombined = (2.0 * a.scalar + 2.0 * b.scalar) / 4.0;
        assert!((full.scalar - recombined).abs() < 1e-12);
    }
}
