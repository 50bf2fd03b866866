//! Dataset persistence, splits and SNR filtering.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AMRD"
//! 4       4     version u32 = 1
//! 8       8     num_samples u64
//! 16      4     signal_len u32
//! 20      4     num_channels u32 = 2
//! 24      4     num_classes u32
//! 28      ...   num_samples records:
//!                 label u16, snr_db i16,
//!                 f32 x signal_len (I), f32 x signal_len (Q)
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::seed;

pub const MAGIC: [u8; 4] = *b"AMRD";
pub const VERSION: u32 = 1;
pub const NUM_CHANNELS: u32 = 2;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("corrupt dataset at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("truncated dataset at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated { offset: u64, expected: u64, actual: u64 },
    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// 64-bit FNV-1a content hash.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub u64);

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Digest {
    pub fn of(bytes: &[u8]) -> Digest {
        let mut h = FnvHasher::new();
        h.update(bytes);
        h.finish()
    }
}

/// Streaming FNV-1a.
#[derive(Clone, Debug)]
pub struct FnvHasher(u64);

impl FnvHasher {
    pub fn new() -> Self {
        FnvHasher(FNV_OFFSET)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> Digest {
        Digest(self.0)
    }
}

impl Default for FnvHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for Digest {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(Digest)
    }
}

// Hex string in JSON: a u64 does not survive a round trip through doubles.
impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalRecord {
    pub label: u16,
    pub snr_db: i16,
    /// Channel-major `[I; signal_len]` then `[Q; signal_len]`.
    pub data: Vec<f32>,
}

impl SignalRecord {
    pub fn from_complex(label: u16, snr_db: i16, signal: &[Complex64]) -> Self {
        let mut data = Vec::with_capacity(2 * signal.len());
        data.extend(signal.iter().map(|s| s.re as f32));
        data.extend(signal.iter().map(|s| s.im as f32));
        SignalRecord { label, snr_db, data }
    }

    pub fn signal_len(&self) -> usize {
        self.data.len() / 2
    }

    pub fn i_channel(&self) -> &[f32] {
        &self.data[..self.signal_len()]
    }

    pub fn q_channel(&self) -> &[f32] {
        &self.data[self.signal_len()..]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub num_samples: u64,
    pub signal_len: u32,
    pub num_channels: u32,
    pub num_classes: u32,
}

impl DatasetHeader {
    pub fn record_len(&self) -> usize {
        4 + 4 * self.num_channels as usize * self.signal_len as usize
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.num_samples.to_le_bytes());
        out.extend_from_slice(&self.signal_len.to_le_bytes());
        out.extend_from_slice(&self.num_channels.to_le_bytes());
        out.extend_from_slice(&self.num_classes.to_le_bytes());
    }

    pub fn decode(bytes: &[u8]) -> Result<DatasetHeader, DataError> {
        if bytes.len() < HEADER_LEN {
            return Err(DataError::Truncated {
                offset: 0,
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        if bytes[..4] != MAGIC {
            return Err(DataError::Corrupt {
                offset: 0,
                reason: format!("bad magic {:?}", &bytes[..4]),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(DataError::Corrupt {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let header = DatasetHeader {
            num_samples: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            signal_len: u32_at(16),
            num_channels: u32_at(20),
            num_classes: u32_at(24),
        };
        if header.num_channels != NUM_CHANNELS {
            return Err(DataError::Corrupt {
                offset: 20,
                reason: format!("num_channels must be {NUM_CHANNELS}, found {}", header.num_channels),
            });
        }
        if header.signal_len == 0 {
            return Err(DataError::Corrupt {
                offset: 16,
                reason: "signal_len is zero".into(),
            });
        }
        Ok(header)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: u32,
    pub signal_len: u32,
    pub records: Vec<SignalRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            num_samples: self.records.len() as u64,
            signal_len: self.signal_len,
            num_channels: NUM_CHANNELS,
            num_classes: self.num_classes,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label as usize).collect()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let width = 2 * self.signal_len as usize;
        for (index, r) in self.records.iter().enumerate() {
            let reason = if r.label as u32 >= self.num_classes {
                format!("label {} >= num_classes {}", r.label, self.num_classes)
            } else if r.data.len() != width {
                format!("{} values, expected {width}", r.data.len())
            } else if r.data.iter().any(|v| !v.is_finite()) {
                "non-finite sample value".to_string()
            } else {
                continue;
            };
            return Err(DataError::InvalidRecord { index, reason });
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, DataError> {
        self.validate()?;
        let header = self.header();
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * header.record_len());
        header.encode(&mut out);
        for r in &self.records {
            out.extend_from_slice(&r.label.to_le_bytes());
            out.extend_from_slice(&r.snr_db.to_le_bytes());
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Dataset, DataError> {
        let header = DatasetHeader::decode(bytes)?;
        let record_len = header.record_len();
        let expected = HEADER_LEN as u64 + header.num_samples * record_len as u64;
        let actual = bytes.len() as u64;
        if actual < expected {
            let complete = (actual - HEADER_LEN as u64) / record_len as u64;
            return Err(DataError::Truncated {
                offset: HEADER_LEN as u64 + complete * record_len as u64,
                expected,
                actual,
            });
        }
        if actual > expected {
            return Err(DataError::Corrupt {
                offset: expected,
                reason: format!("{} trailing bytes", actual - expected),
            });
        }
        let width = 2 * header.signal_len as usize;
        let mut records = Vec::with_capacity(header.num_samples as usize);
        for chunk in bytes[HEADER_LEN..].chunks_exact(record_len) {
            let offset = (HEADER_LEN + records.len() * record_len) as u64;
            let label = u16::from_le_bytes([chunk[0], chunk[1]]);
            if label as u32 >= header.num_classes {
                return Err(DataError::Corrupt {
                    offset,
                    reason: format!("label {label} >= num_classes {}", header.num_classes),
                });
            }
            let snr_db = i16::from_le_bytes([chunk[2], chunk[3]]);
            let data: Vec<f32> = chunk[4..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            debug_assert_eq!(data.len(), width);
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                return Err(DataError::Corrupt {
                    offset: offset + 4 + 4 * pos as u64,
                    reason: "non-finite sample value".into(),
                });
            }
            records.push(SignalRecord { label, snr_db, data });
        }
        Ok(Dataset {
            num_classes: header.num_classes,
            signal_len: header.signal_len,
            records,
        })
    }

    /// FNV-1a over the encoded file bytes.
    pub fn digest(&self) -> Result<Digest, DataError> {
        Ok(Digest::of(&self.encode()?))
    }
}

/// Write via a sibling temp file and rename, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(DataError::io(path, e));
    }
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<Digest, DataError> {
    let bytes = dataset.encode()?;
    atomic_write(path, &bytes)?;
    Ok(Digest::of(&bytes))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    Dataset::decode(&bytes)
}

/// Read a dataset and the digest of its file bytes in one pass.
pub fn read_dataset_with_digest(path: &Path) -> Result<(Dataset, Digest), DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    Ok((Dataset::decode(&bytes)?, Digest::of(&bytes)))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Keep records with `snr_db > min_exclusive_db`, preserving order.
pub fn filter_by_snr(dataset: &Dataset, min_exclusive_db: i32) -> Dataset {
    Dataset {
        num_classes: dataset.num_classes,
        signal_len: dataset.signal_len,
        records: dataset
            .records
            .iter()
            .filter(|r| r.snr_db as i32 > min_exclusive_db)
            .cloned()
            .collect(),
    }
}

/// Class names in label order, stored next to a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
}

impl Manifest {
    /// `data.amrd` -> `data.manifest.json`.
    pub fn path_for(dataset_path: &Path) -> PathBuf {
        dataset_path.with_extension("manifest.json")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub source_digest: Digest,
    pub target: Vec<usize>,
    pub auxiliary: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition a dataset into test, class-balanced target and auxiliary sets.
///
/// Per class, `round(test_fraction * n_c)` indices go to test. The target
/// takes the same `round(target_fraction * N / C)` indices from every class,
/// and everything else in the training pool is auxiliary.
pub fn make_splits(
    dataset: &Dataset,
    target_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitIndices, DataError> {
    if !(target_fraction > 0.0 && test_fraction > 0.0 && target_fraction + test_fraction < 1.0) {
        return Err(DataError::Sizing(format!(
            "fractions must be positive and sum below 1 (target {target_fraction}, test {test_fraction})"
        )));
    }
    let classes = dataset.num_classes as usize;
    let per_class_target = (target_fraction * dataset.len() as f64 / classes as f64).round() as usize;
    if per_class_target == 0 {
        return Err(DataError::Sizing(format!(
            "target fraction {target_fraction} of {} samples gives zero samples per class",
            dataset.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, r) in dataset.records.iter().enumerate() {
        by_class[r.label as usize].push(i);
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag::SPLIT]));
    let (mut target, mut auxiliary, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        if n_test + per_class_target > members.len() {
            return Err(DataError::Sizing(format!(
                "class {class} has {} samples, needs {n_test} test + {per_class_target} target",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
        target.extend_from_slice(&members[n_test..n_test + per_class_target]);
        auxiliary.extend_from_slice(&members[n_test + per_class_target..]);
    }
    target.sort_unstable();
    auxiliary.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        source_digest: dataset.digest()?,
        target,
        auxiliary,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitViolation {
    Overlap { index: usize, first: &'static str, second: &'static str },
    OutOfRange { list: &'static str, index: usize, num_samples: usize },
    NotSortedUnique { list: &'static str, position: usize },
    DigestMismatch { expected: Digest, found: Digest },
}

impl fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitViolation::Overlap { index, first, second } => {
                write!(f, "index {index} appears in both {first} and {second}")
            }
            SplitViolation::OutOfRange { list, index, num_samples } => {
                write!(f, "{list} index {index} >= num_samples {num_samples}")
            }
            SplitViolation::NotSortedUnique { list, position } => {
                write!(f, "{list} is not sorted and unique at position {position}")
            }
            SplitViolation::DigestMismatch { expected, found } => {
                write!(f, "source_digest {found} does not match dataset digest {expected}")
            }
        }
    }
}

/// Check every split invariant against `dataset_digest` and the sample count.
pub fn validate_splits(num_samples: usize, dataset_digest: Digest, splits: &SplitIndices) -> Vec<SplitViolation> {
    let mut out = Vec::new();
    if splits.source_digest != dataset_digest {
        out.push(SplitViolation::DigestMismatch {
            expected: dataset_digest,
            found: splits.source_digest,
        });
    }
    let lists: [(&'static str, &Vec<usize>); 3] = [
        ("target", &splits.target),
        ("auxiliary", &splits.auxiliary),
        ("test", &splits.test),
    ];
    for (name, list) in lists {
        if let Some(pos) = list.windows(2).position(|w| w[0] >= w[1]) {
            out.push(SplitViolation::NotSortedUnique { list: name, position: pos + 1 });
        }
        for &index in list.iter().filter(|&&i| i >= num_samples) {
            out.push(SplitViolation::OutOfRange { list: name, index, num_samples });
        }
    }
    for a in 0..3 {
        let seen: BTreeSet<usize> = lists[a].1.iter().copied().collect();
        for (name, list) in lists.iter().skip(a + 1) {
            let mut dupes: Vec<usize> = list.iter().copied().filter(|i| seen.contains(i)).collect();
            dupes.sort_unstable();
            dupes.dedup();
            out.extend(dupes.into_iter().map(|index| SplitViolation::Overlap {
                index,
                first: lists[a].0,
                second: name,
            }));
        }
    }
    out
}

/// Convenience over [`validate_splits`] for an in-memory dataset.
pub fn validate_splits_for(dataset: &Dataset, splits: &SplitIndices) -> Result<Vec<SplitViolation>, DataError> {
    Ok(validate_splits(dataset.len(), dataset.digest()?, splits))
}
