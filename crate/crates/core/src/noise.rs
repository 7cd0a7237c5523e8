//! Label-noise models: row-stochastic transition matrices and the seeded
//! corruption of clean label sets.
//!
//! A transition matrix `T` has `T[i][j] = P(observed = j | true = i)`.
//! Corruption is applied once, at dataset-construction time; labels do not
//! re-flip between epochs.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic class-confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTransitionMatrix {
    classes: usize,
    /// Row-major `classes x classes` probabilities.
    rows: Vec<f64>,
}

impl NoiseTransitionMatrix {
    /// Validates and wraps an explicit matrix.
    pub fn new(classes: usize, rows: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "transition matrix needs at least 2 classes, got {classes}"
            )));
        }
        if rows.len() != classes * classes {
            return Err(Error::Dimension(format!(
                "transition matrix for {classes} classes needs {} entries, got {}",
                classes * classes,
                rows.len()
            )));
        }
        let m = Self { classes, rows };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.classes {
            let row = self.row(i);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::NumericContract(format!(
                    "transition row {i} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NumericContract(format!(
                    "transition row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn identity(classes: usize) -> Result<Self> {
        let mut rows = vec![0.0; classes * classes];
        for i in 0..classes {
            rows[i * classes + i] = 1.0;
        }
        Self::new(classes, rows)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.classes..(i + 1) * self.classes]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.classes + j]
    }

    /// Non-triviality check: every diagonal entry is the strict maximum of
    /// its row. Symmetric noise satisfies this iff epsilon < (c-1)/c,
    /// asymmetric iff epsilon < 1/2.
    pub fn diagonal_strictly_dominant(&self) -> bool {
        (0..self.classes).all(|i| {
            let d = self.get(i, i);
            self.row(i)
                .iter()
                .enumerate()
                .all(|(j, &p)| j == i || p < d)
        })
    }

    /// Plain-text serialization: first line the class count, then one line
    /// per row of space-separated decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.classes);
        for i in 0..self.classes {
            let row: Vec<String> = self.row(i).iter().map(|p| format!("{p}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let classes: usize = lines
            .next()
            .ok_or_else(|| Error::Format("empty transition matrix file".into()))?
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("bad class count: {e}")))?;
        let mut rows = Vec::with_capacity(classes * classes);
        for i in 0..classes {
            let line = lines.next().ok_or_else(|| {
                Error::Format(format!("transition matrix missing row {i}"))
            })?;
            for tok in line.split_whitespace() {
                let p: f64 = tok
                    .parse()
                    .map_err(|e| Error::Format(format!("bad probability in row {i}: {e}")))?;
                rows.push(p);
            }
            if rows.len() != (i + 1) * classes {
                return Err(Error::Format(format!(
                    "transition matrix row {i} has wrong entry count"
                )));
            }
        }
        Self::new(classes, rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Largest absolute entrywise difference to another matrix.
    pub fn max_abs_diff(&self, other: &NoiseTransitionMatrix) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Symmetric noise: each label keeps its class with probability `1 - epsilon`
/// and flips uniformly to any one of the other `c - 1` classes otherwise.
pub fn symmetric_matrix(classes: usize, epsilon: f64) -> Result<NoiseTransitionMatrix> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "symmetric noise needs at least 2 classes, got {classes}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "symmetric noise ratio must lie in [0, 1), got {epsilon}"
        )));
    }
    let off = epsilon / (classes - 1) as f64;
    let mut rows = vec![off; classes * classes];
    for i in 0..classes {
        rows[i * classes + i] = 1.0 - epsilon;
    }
    // Constructed rows sum to 1 up to rounding; renormalize exactly.
    renormalize(&mut rows, classes);
    NoiseTransitionMatrix::new(classes, rows)
}

/// Asymmetric noise: class `i` flips only to `mapping[i]` with probability
/// `epsilon`. The default mapping is the circular shift `i -> (i+1) mod c`.
///
/// `epsilon >= 0.5` makes the noise trivial (the diagonal is no longer the
/// strict row maximum); that is reported by
/// [`NoiseTransitionMatrix::diagonal_strictly_dominant`], not a failure here.
pub fn asymmetric_matrix(
    classes: usize,
    epsilon: f64,
    mapping: Option<&[usize]>,
) -> Result<NoiseTransitionMatrix> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "asymmetric noise needs at least 2 classes, got {classes}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "asymmetric noise ratio must lie in [0, 1), got {epsilon}"
        )));
    }
    let circular: Vec<usize> = (0..classes).map(|i| (i + 1) % classes).collect();
    let mapping = mapping.unwrap_or(&circular);
    if mapping.len() != classes {
        return Err(Error::InvalidParameter(format!(
            "asymmetric mapping must name {classes} targets, got {}",
            mapping.len()
        )));
    }
    for (i, &j) in mapping.iter().enumerate() {
        if j >= classes {
            return Err(Error::InvalidParameter(format!(
                "asymmetric mapping target {j} out of range for {classes} classes"
            )));
        }
        if j == i {
            return Err(Error::InvalidParameter(format!(
                "asymmetric mapping maps class {i} to itself"
            )));
        }
    }
    let mut rows = vec![0.0; classes * classes];
    for (i, &j) in mapping.iter().enumerate() {
        rows[i * classes + i] = 1.0 - epsilon;
        rows[i * classes + j] = epsilon;
    }
    renormalize(&mut rows, classes);
    NoiseTransitionMatrix::new(classes, rows)
}

fn renormalize(rows: &mut [f64], classes: usize) {
    for i in 0..classes {
        let row = &mut rows[i * classes..(i + 1) * classes];
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|p| *p /= sum);
        }
    }
}

/// Bookkeeping for one corrupted label. `flipped` holds exactly when the
/// observed label differs from the true one. True labels are retained for
/// evaluation only; training never reads them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionRecord {
    pub index: usize,
    pub true_label: usize,
    pub observed_label: usize,
    pub flipped: bool,
}

/// Resamples every label independently from the categorical distribution of
/// its transition row, using the seeded generator stream `(seed, "corrupt")`.
pub fn corrupt_labels(
    true_labels: &[usize],
    t: &NoiseTransitionMatrix,
    seed: u64,
) -> Result<(Vec<usize>, Vec<CorruptionRecord>)> {
    let c = t.classes();
    let mut rng = rng::substream(seed, "corrupt");
    let mut observed = Vec::with_capacity(true_labels.len());
    let mut records = Vec::with_capacity(true_labels.len());
    for (index, &label) in true_labels.iter().enumerate() {
        if label >= c {
            return Err(Error::InvalidData(format!(
                "label {label} at index {index} out of range for {c} classes"
            )));
        }
        let new_label = sample_categorical(t.row(label), &mut rng);
        observed.push(new_label);
        records.push(CorruptionRecord {
            index,
            true_label: label,
            observed_label: new_label,
            flipped: new_label != label,
        });
    }
    Ok((observed, records))
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}

/// Row-normalized count matrix of observed transitions. Classes with no
/// records get a NaN row (noted in the accompanying diagnostics string).
pub fn empirical_transition(
    records: &[CorruptionRecord],
    classes: usize,
) -> (Vec<f64>, Option<String>) {
    let mut counts = vec![0.0f64; classes * classes];
    for r in records {
        counts[r.true_label * classes + r.observed_label] += 1.0;
    }
    let mut missing = Vec::new();
    for i in 0..classes {
        let row = &mut counts[i * classes..(i + 1) * classes];
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            row.iter_mut().for_each(|p| *p = f64::NAN);
            missing.push(i);
        } else {
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    let note = if missing.is_empty() {
        None
    } else {
        Some(format!("no records for true classes {missing:?}; rows set to NaN"))
    };
    (counts, note)
}

/// CSV export of corruption records: `index,true_label,observed_label,flipped`.
pub fn records_to_csv(records: &[CorruptionRecord]) -> String {
    let mut out = String::from("index,true_label,observed_label,flipped\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.index, r.true_label, r.observed_label, r.flipped
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_five_classes_forty_percent() {
        let t = symmetric_matrix(5, 0.4).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 0.6 } else { 0.1 };
                assert!((t.get(i, j) - expected).abs() < 1e-12, "({i},{j})");
            }
            let sum: f64 = t.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_zero_epsilon_is_identity() {
        let t = symmetric_matrix(4, 0.0).unwrap();
        assert_eq!(t, NoiseTransitionMatrix::identity(4).unwrap());
    }

    #[test]
    fn symmetric_two_classes() {
        let t = symmetric_matrix(2, 0.2).unwrap();
        let expected = [0.8, 0.2, 0.2, 0.8];
        for (a, b) in t.rows.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_rejects_bad_parameters() {
        assert!(symmetric_matrix(1, 0.1).is_err());
        assert!(symmetric_matrix(5, 1.0).is_err());
        assert!(symmetric_matrix(5, -0.1).is_err());
    }

    #[test]
    fn asymmetric_circular_shift() {
        let t = asymmetric_matrix(5, 0.4, None).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j {
                    0.6
                } else if j == (i + 1) % 5 {
                    0.4
                } else {
                    0.0
                };
                assert!((t.get(i, j) - expected).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn asymmetric_explicit_mapping() {
        let t = asymmetric_matrix(3, 0.4, Some(&[2, 0, 1])).unwrap();
        let expected = [0.6, 0.0, 0.4, 0.4, 0.6, 0.0, 0.0, 0.4, 0.6];
        for (a, b) in t.rows.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_zero_epsilon_is_identity() {
        let t = asymmetric_matrix(4, 0.0, None).unwrap();
        assert_eq!(t, NoiseTransitionMatrix::identity(4).unwrap());
    }

    #[test]
    fn asymmetric_rejects_self_mapping_but_not_large_epsilon() {
        assert!(asymmetric_matrix(3, 0.2, Some(&[0, 2, 1])).is_err());
        // ratio >= 0.5 is trivial noise, flagged through the dominance check
        // rather than an error.
        let t = asymmetric_matrix(3, 0.6, None).unwrap();
        assert!(!t.diagonal_strictly_dominant());
    }

    #[test]
    fn dominance_thresholds() {
        // symmetric: strict dominance iff epsilon < (c-1)/c
        assert!(symmetric_matrix(4, 0.74).unwrap().diagonal_strictly_dominant());
        assert!(!symmetric_matrix(4, 0.75).unwrap().diagonal_strictly_dominant());
        // asymmetric: iff epsilon < 0.5
        assert!(asymmetric_matrix(4, 0.49, None).unwrap().diagonal_strictly_dominant());
        assert!(!asymmetric_matrix(4, 0.5, None).unwrap().diagonal_strictly_dominant());
    }

    #[test]
    fn corrupt_identity_changes_nothing() {
        let t = NoiseTransitionMatrix::identity(4).unwrap();
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (observed, records) = corrupt_labels(&labels, &t, 1).unwrap();
        assert_eq!(observed, labels);
        assert!(records.iter().all(|r| !r.flipped));
    }

    #[test]
    fn corrupt_rejects_out_of_range_label() {
        let t = NoiseTransitionMatrix::identity(3).unwrap();
        assert!(corrupt_labels(&[0, 1, 3], &t, 1).is_err());
    }

    #[test]
    fn corrupt_is_reproducible() {
        let t = symmetric_matrix(10, 0.5).unwrap();
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let (a, _) = corrupt_labels(&labels, &t, 42).unwrap();
        let (b, _) = corrupt_labels(&labels, &t, 42).unwrap();
        let (c, _) = corrupt_labels(&labels, &t, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_flip_fraction_concentrates() {
        let t = symmetric_matrix(10, 0.5).unwrap();
        let labels: Vec<usize> = (0..100_000).map(|i| i % 10).collect();
        let (_, records) = corrupt_labels(&labels, &t, 7).unwrap();
        let flips = records.iter().filter(|r| r.flipped).count();
        let fraction = flips as f64 / labels.len() as f64;
        assert!((0.49..=0.51).contains(&fraction), "flip fraction {fraction}");
    }

    #[test]
    fn empirical_transition_matches_rows() {
        let t = symmetric_matrix(10, 0.5).unwrap();
        // 100k samples per class.
        let labels: Vec<usize> = (0..1_000_000).map(|i| i % 10).collect();
        let (_, records) = corrupt_labels(&labels, &t, 11).unwrap();
        let (emp, note) = empirical_transition(&records, 10);
        assert!(note.is_none());
        for i in 0..10 {
            for j in 0..10 {
                let d = (emp[i * 10 + j] - t.get(i, j)).abs();
                assert!(d < 0.01, "entry ({i},{j}) off by {d}");
            }
        }
    }

    #[test]
    fn empirical_transition_degenerate_single_record() {
        let records = vec![CorruptionRecord {
            index: 0,
            true_label: 0,
            observed_label: 3,
            flipped: true,
        }];
        let (emp, note) = empirical_transition(&records, 4);
        assert_eq!(&emp[0..4], &[0.0, 0.0, 0.0, 1.0]);
        for i in 1..4 {
            assert!(emp[i * 4..(i + 1) * 4].iter().all(|p| p.is_nan()));
        }
        assert!(note.unwrap().contains("[1, 2, 3]"));
    }

    #[test]
    fn text_round_trip() {
        let t = asymmetric_matrix(5, 0.4, None).unwrap();
        let back = NoiseTransitionMatrix::from_text(&t.to_text()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn records_csv_shape() {
        let records = vec![CorruptionRecord {
            index: 2,
            true_label: 1,
            observed_label: 0,
            flipped: true,
        }];
        let csv = records_to_csv(&records);
        assert_eq!(csv, "index,true_label,observed_label,flipped\n2,1,0,true\n");
    }
}
