//! Labeled datasets and the synthetic gaussian-blob generator used for
//! desk-scale experiments.

use crate::error::{Error, Result};
use crate::noise::{corrupt_labels, CorruptionRecord, NoiseTransitionMatrix};
use crate::rng::{next_gaussian, substream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Inputs plus observed labels, with the latent true labels optionally
/// retained for evaluation. Training code never reads `true_labels`.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// `[n, ...sample_dims]`.
    pub inputs: Tensor,
    pub observed_labels: Vec<usize>,
    /// Evaluation-only ground truth; `None` when not retained.
    pub true_labels: Option<Vec<usize>>,
    pub split: Split,
    pub num_classes: usize,
    /// Human-readable origin: synthetic parameters or file source plus the
    /// corruption applied.
    pub provenance: String,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.observed_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_labels.is_empty()
    }

    /// Per-sample shape (input shape without the leading batch dimension).
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Copy of sample `i` with its per-sample shape.
    pub fn sample(&self, i: usize) -> Tensor {
        Tensor::new(self.sample_shape().to_vec(), self.inputs.row(i).to_vec())
            .expect("sample shape matches row length")
    }

    /// Batch tensor gathered from the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        self.inputs.gather_rows(indices)
    }

    /// Fraction of samples whose observed label differs from the true one,
    /// when true labels are retained.
    pub fn observed_noise_fraction(&self) -> Option<f64> {
        let truth = self.true_labels.as_ref()?;
        if self.is_empty() {
            return Some(0.0);
        }
        let flips = truth
            .iter()
            .zip(&self.observed_labels)
            .filter(|(t, o)| t != o)
            .count();
        Some(flips as f64 / self.len() as f64)
    }

    /// Replaces the observed labels by draws from the transition matrix.
    ///
    /// Only train splits may be corrupted; the true labels are kept when
    /// `retain_true` is set and dropped otherwise.
    pub fn corrupt(
        &mut self,
        t: &NoiseTransitionMatrix,
        seed: u64,
        retain_true: bool,
    ) -> Result<Vec<CorruptionRecord>> {
        if self.split == Split::Test {
            return Err(Error::InvalidState(
                "test splits are never corrupted".into(),
            ));
        }
        if t.classes() != self.num_classes {
            return Err(Error::Dimension(format!(
                "transition matrix has {} classes, dataset has {}",
                t.classes(),
                self.num_classes
            )));
        }
        let clean = self.observed_labels.clone();
        let (observed, records) = corrupt_labels(&clean, t, seed)?;
        self.observed_labels = observed;
        self.true_labels = retain_true.then_some(clean);
        Ok(records)
    }

    pub fn drop_true_labels(&mut self) {
        self.true_labels = None;
    }
}

/// Class centers for the blob generator: the vertices of an axis-aligned
/// simplex scaled by `separation` when they fit (`c <= dims`), otherwise a
/// circle of radius `separation` in the first two dimensions.
pub fn blob_centers(classes: usize, dims: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if dims == 0 {
        return Err(Error::InvalidParameter("blob dims must be positive".into()));
    }
    let mut centers = vec![vec![0.0; dims]; classes];
    if classes <= dims {
        for (i, c) in centers.iter_mut().enumerate() {
            c[i] = separation;
        }
    } else if dims >= 2 {
        for (i, c) in centers.iter_mut().enumerate() {
            let angle = std::f64::consts::TAU * i as f64 / classes as f64;
            c[0] = separation * angle.cos();
            c[1] = separation * angle.sin();
        }
    } else {
        for (i, c) in centers.iter_mut().enumerate() {
            c[0] = separation * i as f64;
        }
    }
    Ok(centers)
}

/// Gaussian clusters with balanced labels. Train and test splits of the same
/// seed use independent substreams, so generating both never reuses draws.
pub fn make_blobs(
    n: usize,
    classes: usize,
    dims: usize,
    cluster_std: f64,
    separation: f64,
    seed: u64,
    split: Split,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "blob generator needs at least 2 classes, got {classes}"
        )));
    }
    if n < classes {
        return Err(Error::InvalidParameter(format!(
            "need at least one sample per class: n={n}, classes={classes}"
        )));
    }
    if cluster_std < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "cluster std must be nonnegative, got {cluster_std}"
        )));
    }
    let centers = blob_centers(classes, dims, separation)?;
    let tag = match split {
        Split::Train => "blobs-train",
        Split::Test => "blobs-test",
    };
    let mut rng = substream(seed, tag);
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        labels.push(label);
        for d in 0..dims {
            data.push(centers[label][d] + cluster_std * next_gaussian(&mut rng));
        }
    }
    Ok(LabeledDataset {
        inputs: Tensor::new(vec![n, dims], data)?,
        observed_labels: labels.clone(),
        true_labels: Some(labels),
        split,
        num_classes: classes,
        provenance: format!(
            "blobs(n={n}, classes={classes}, dims={dims}, std={cluster_std}, \
             separation={separation}, seed={seed}, split={})",
            split.name()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::symmetric_matrix;

    #[test]
    fn zero_std_samples_sit_on_their_centers() {
        let ds = make_blobs(40, 4, 2, 0.0, 3.0, 1, Split::Train).unwrap();
        let centers = blob_centers(4, 2, 3.0).unwrap();
        for i in 0..ds.len() {
            let label = ds.observed_labels[i];
            for (a, b) in ds.inputs.row(i).iter().zip(&centers[label]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn labels_are_balanced() {
        let ds = make_blobs(103, 4, 2, 1.0, 3.0, 2, Split::Train).unwrap();
        let mut counts = [0usize; 4];
        for &l in &ds.observed_labels {
            counts[l] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 103);
        assert!(counts.iter().all(|&c| c == 25 || c == 26));
    }

    #[test]
    fn same_seed_same_dataset_and_splits_differ() {
        let a = make_blobs(50, 3, 2, 1.0, 2.0, 7, Split::Train).unwrap();
        let b = make_blobs(50, 3, 2, 1.0, 2.0, 7, Split::Train).unwrap();
        let t = make_blobs(50, 3, 2, 1.0, 2.0, 7, Split::Test).unwrap();
        assert_eq!(a.inputs.data(), b.inputs.data());
        assert_ne!(a.inputs.data(), t.inputs.data());
    }

    #[test]
    fn simplex_centers_when_classes_fit() {
        let centers = blob_centers(3, 5, 2.0).unwrap();
        assert_eq!(centers[0], vec![2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(centers[2], vec![0.0, 0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn corrupting_a_test_split_is_rejected() {
        let mut ds = make_blobs(20, 2, 2, 1.0, 2.0, 1, Split::Test).unwrap();
        let t = symmetric_matrix(2, 0.2).unwrap();
        assert!(ds.corrupt(&t, 1, true).is_err());
    }

    #[test]
    fn corruption_keeps_truth_and_reports_noise() {
        let mut ds = make_blobs(10_000, 4, 2, 1.0, 3.0, 3, Split::Train).unwrap();
        let t = symmetric_matrix(4, 0.4).unwrap();
        let records = ds.corrupt(&t, 5, true).unwrap();
        assert_eq!(records.len(), ds.len());
        let fraction = ds.observed_noise_fraction().unwrap();
        assert!((fraction - 0.4).abs() < 0.02, "noise fraction {fraction}");
        // true labels unchanged
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.true_label, ds.true_labels.as_ref().unwrap()[i]);
        }
    }

    #[test]
    fn corruption_can_drop_truth() {
        let mut ds = make_blobs(100, 4, 2, 1.0, 3.0, 3, Split::Train).unwrap();
        let t = symmetric_matrix(4, 0.4).unwrap();
        ds.corrupt(&t, 5, false).unwrap();
        assert!(ds.true_labels.is_none());
        assert!(ds.observed_noise_fraction().is_none());
    }
}
