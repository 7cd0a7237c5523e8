//! Anchor-point estimation of the noise transition matrix.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::noise::NoiseTransitionMatrix;

/// Outcome of an estimation pass: the matrix plus per-class anchor
/// diagnostics.
#[derive(Debug, Clone)]
pub struct TransitionEstimate {
    pub matrix: NoiseTransitionMatrix,
    /// Per class: (anchor sample index, anchor confidence f_i(anchor)).
    pub anchors: Vec<(usize, f64)>,
    /// Classes whose anchor fell back to the global argmax because the
    /// percentile pick was unusable (non-finite confidence).
    pub fallback_classes: Vec<usize>,
}

/// Estimates the transition matrix from a warmed-up network.
///
/// For each class `i`, samples are ranked by the predicted probability
/// `f_i(x)`; the anchor is the sample at the given percentile of that
/// ranking (100 picks the argmax). Row `i` of the estimate is the network's
/// full prediction at the anchor, clamped to [0, 1] and renormalized.
pub fn estimate_transition(
    net: &Network,
    dataset: &LabeledDataset,
    percentile: f64,
) -> Result<TransitionEstimate> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("cannot estimate from an empty dataset".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidParameter(format!(
            "percentile must lie in [0, 100], got {percentile}"
        )));
    }
    let n = dataset.len();
    let c = dataset.num_classes;
    // Unaugmented forward over the whole set, in chunks.
    let mut probs: Vec<f64> = Vec::with_capacity(n * c);
    let indices: Vec<usize> = (0..n).collect();
    for block in indices.chunks(256) {
        let out = net.output(&dataset.batch(block)?)?;
        if out.row_len() != c {
            return Err(Error::Dimension(format!(
                "network predicts {} classes, dataset has {c}",
                out.row_len()
            )));
        }
        probs.extend_from_slice(out.data());
    }

    let mut rows = Vec::with_capacity(c * c);
    let mut anchors = Vec::with_capacity(c);
    let mut fallback_classes = Vec::new();
    for class in 0..c {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            probs[a * c + class]
                .total_cmp(&probs[b * c + class])
                .then(a.cmp(&b))
        });
        let rank = ((percentile / 100.0) * (n - 1) as f64).round() as usize;
        let mut anchor = order[rank.min(n - 1)];
        let mut confidence = probs[anchor * c + class];
        if !confidence.is_finite() {
            anchor = order[n - 1];
            confidence = probs[anchor * c + class];
            fallback_classes.push(class);
        }
        anchors.push((anchor, confidence));
        let row = &probs[anchor * c..(anchor + 1) * c];
        let mut clamped: Vec<f64> = row.iter().map(|p| p.clamp(0.0, 1.0)).collect();
        let sum: f64 = clamped.iter().sum();
        if sum > 0.0 {
            clamped.iter_mut().for_each(|p| *p /= sum);
        } else {
            clamped = vec![1.0 / c as f64; c];
        }
        rows.extend(clamped);
    }
    Ok(TransitionEstimate {
        matrix: NoiseTransitionMatrix::new(c, rows)?,
        anchors,
        fallback_classes,
    })
}
