//! Loader for the standard CIFAR binary batch format.
//!
//! Each record is `label bytes + 3072 pixel bytes` (32x32 RGB, channel
//! planes in CHW order). CIFAR-10 has one label byte; CIFAR-100 has two
//! (coarse then fine — the fine label is used). Pixels are scaled to [0, 1]
//! and standardized per channel with statistics computed from the training
//! split. Files are supplied by the user; nothing is downloaded.

use std::path::Path;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + IMAGE_PIXELS
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    pub fn train_files(self) -> &'static [&'static str] {
        match self {
            CifarVariant::Cifar10 => &[
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            CifarVariant::Cifar100 => &["train.bin"],
        }
    }

    pub fn test_files(self) -> &'static [&'static str] {
        match self {
            CifarVariant::Cifar10 => &["test_batch.bin"],
            CifarVariant::Cifar100 => &["test.bin"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar10",
            CifarVariant::Cifar100 => "cifar100",
        }
    }
}

/// One raw record, kept byte-exact so it can be re-encoded verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    /// CIFAR-100 coarse label byte; `None` for CIFAR-10.
    pub coarse: Option<u8>,
    /// The class id used for training (CIFAR-100: the fine label).
    pub label: u8,
    /// 3072 bytes, CHW planes.
    pub pixels: Vec<u8>,
}

impl CifarRecord {
    pub fn encode(&self, variant: CifarVariant) -> Vec<u8> {
        let mut out = Vec::with_capacity(variant.record_len());
        if variant == CifarVariant::Cifar100 {
            out.push(self.coarse.unwrap_or(0));
        }
        out.push(self.label);
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Splits a batch file's bytes into records, with exact byte accounting.
pub fn parse_records(bytes: &[u8], variant: CifarVariant) -> Result<Vec<CifarRecord>> {
    let record_len = variant.record_len();
    if bytes.len() % record_len != 0 {
        let records = bytes.len() / record_len;
        return Err(Error::Format(format!(
            "file size {} is not a multiple of the {record_len}-byte record \
             (expected {} bytes for {} records or {} for {}, got {})",
            bytes.len(),
            records * record_len,
            records,
            (records + 1) * record_len,
            records + 1,
            bytes.len(),
        )));
    }
    let label_bytes = variant.label_bytes();
    Ok(bytes
        .chunks_exact(record_len)
        .map(|chunk| CifarRecord {
            coarse: (variant == CifarVariant::Cifar100).then(|| chunk[0]),
            label: chunk[label_bytes - 1],
            pixels: chunk[label_bytes..].to_vec(),
        })
        .collect())
}

fn read_split_records(dir: &Path, variant: CifarVariant, split: Split) -> Result<Vec<CifarRecord>> {
    let files = match split {
        Split::Train => variant.train_files(),
        Split::Test => variant.test_files(),
    };
    let mut records = Vec::new();
    for name in files {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        records.extend(parse_records(&bytes, variant).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })?);
    }
    if records.is_empty() {
        return Err(Error::InvalidData(format!(
            "no records found in {} {} files",
            dir.display(),
            split.name()
        )));
    }
    Ok(records)
}

/// Per-channel mean and standard deviation of pixel values scaled to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub fn channel_stats(records: &[CifarRecord]) -> ChannelStats {
    let plane = 32 * 32;
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    for r in records {
        for ch in 0..3 {
            for &b in &r.pixels[ch * plane..(ch + 1) * plane] {
                let v = b as f64 / 255.0;
                sum[ch] += v;
                sum_sq[ch] += v * v;
            }
        }
    }
    let count = (records.len() * plane) as f64;
    let mut stats = ChannelStats { mean: [0.0; 3], std: [1.0; 3] };
    for ch in 0..3 {
        let mean = sum[ch] / count;
        let var = (sum_sq[ch] / count - mean * mean).max(0.0);
        stats.mean[ch] = mean;
        // Degenerate channels standardize to zero rather than dividing by 0.
        stats.std[ch] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    stats
}

fn records_to_dataset(
    records: &[CifarRecord],
    variant: CifarVariant,
    split: Split,
    stats: &ChannelStats,
    dir: &Path,
) -> Result<LabeledDataset> {
    let n = records.len();
    let plane = 32 * 32;
    let mut data = Vec::with_capacity(n * IMAGE_PIXELS);
    let mut labels = Vec::with_capacity(n);
    let classes = variant.num_classes();
    for (i, r) in records.iter().enumerate() {
        let label = r.label as usize;
        if label >= classes {
            return Err(Error::InvalidData(format!(
                "record {i}: label {label} out of range for {classes} classes"
            )));
        }
        labels.push(label);
        for ch in 0..3 {
            for &b in &r.pixels[ch * plane..(ch + 1) * plane] {
                data.push((b as f64 / 255.0 - stats.mean[ch]) / stats.std[ch]);
            }
        }
    }
    Ok(LabeledDataset {
        inputs: Tensor::new(vec![n, 3, 32, 32], data)?,
        observed_labels: labels.clone(),
        true_labels: Some(labels),
        split,
        num_classes: classes,
        provenance: format!("{}({}, split={})", variant.name(), dir.display(), split.name()),
    })
}

/// Loads one split. Training statistics are always computed from the train
/// files, so loading the test split reads both.
pub fn load_cifar_binary(dir: &Path, variant: CifarVariant, split: Split) -> Result<LabeledDataset> {
    let train_records = read_split_records(dir, variant, Split::Train)?;
    let stats = channel_stats(&train_records);
    match split {
        Split::Train => records_to_dataset(&train_records, variant, split, &stats, dir),
        Split::Test => {
            let test_records = read_split_records(dir, variant, Split::Test)?;
            records_to_dataset(&test_records, variant, split, &stats, dir)
        }
    }
}

/// Loads both splits, computing the train statistics once.
pub fn load_cifar(dir: &Path, variant: CifarVariant) -> Result<(LabeledDataset, LabeledDataset)> {
    let train_records = read_split_records(dir, variant, Split::Train)?;
    let stats = channel_stats(&train_records);
    let test_records = read_split_records(dir, variant, Split::Test)?;
    Ok((
        records_to_dataset(&train_records, variant, Split::Train, &stats, dir)?,
        records_to_dataset(&test_records, variant, Split::Test, &stats, dir)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_record(i: u8, variant: CifarVariant) -> CifarRecord {
        CifarRecord {
            coarse: (variant == CifarVariant::Cifar100).then_some(i / 5),
            label: i % 10,
            pixels: (0..IMAGE_PIXELS).map(|p| ((p as u64 * 31 + i as u64) % 256) as u8).collect(),
        }
    }

    #[test]
    fn record_round_trip_is_byte_exact() {
        for variant in [CifarVariant::Cifar10, CifarVariant::Cifar100] {
            let mut bytes = Vec::new();
            for i in 0..4 {
                bytes.extend(synthetic_record(i, variant).encode(variant));
            }
            let records = parse_records(&bytes, variant).unwrap();
            assert_eq!(records.len(), 4);
            let reencoded: Vec<u8> =
                records.iter().flat_map(|r| r.encode(variant)).collect();
            assert_eq!(bytes, reencoded);
        }
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let mut bytes = synthetic_record(0, CifarVariant::Cifar10).encode(CifarVariant::Cifar10);
        bytes.extend(synthetic_record(1, CifarVariant::Cifar10).encode(CifarVariant::Cifar10));
        bytes.truncate(bytes.len() - 100);
        let err = parse_records(&bytes, CifarVariant::Cifar10).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("{}", bytes.len())), "{msg}");
        assert!(msg.contains("3073"), "{msg}");
    }

    #[test]
    fn load_splits_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        for (file, count) in [
            ("data_batch_1.bin", 20u8),
            ("data_batch_2.bin", 20),
            ("data_batch_3.bin", 20),
            ("data_batch_4.bin", 20),
            ("data_batch_5.bin", 20),
            ("test_batch.bin", 10),
        ] {
            let mut bytes = Vec::new();
            for i in 0..count {
                bytes.extend(synthetic_record(i, CifarVariant::Cifar10).encode(CifarVariant::Cifar10));
            }
            std::fs::write(dir.path().join(file), bytes).unwrap();
        }
        let (train, test) = load_cifar(dir.path(), CifarVariant::Cifar10).unwrap();
        assert_eq!(train.len(), 100);
        assert_eq!(test.len(), 10);
        assert_eq!(train.inputs.shape(), &[100, 3, 32, 32]);
        assert_eq!(train.num_classes, 10);
        assert_eq!(test.split, Split::Test);
        // standardization: per-channel train mean ~0, std ~1
        let plane = 32 * 32;
        for ch in 0..3 {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for i in 0..train.len() {
                for &v in &train.inputs.row(i)[ch * plane..(ch + 1) * plane] {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let count = (train.len() * plane) as f64;
            let mean = sum / count;
            let std = (sum_sq / count - mean * mean).sqrt();
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            assert!((std - 1.0).abs() < 1e-9, "channel {ch} std {std}");
        }
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_cifar_binary(dir.path(), CifarVariant::Cifar10, Split::Train),
            Err(Error::Io(_))
        ));
    }
}
