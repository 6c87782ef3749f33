//! `PPRW` window-corpus container and the provenance sidecar.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PPRW"
//!      4     4  u32 format version (1)
//!      8     4  u32 channels C
//!     12     4  u32 samples per window T
//!     16     8  u64 window count N
//!     24     4  u32 subject count S
//!     28     4  u32 reserved, zero
//!     32     -  subject table: S x (u32 byte length, UTF-8 bytes)
//!      -  N*24  window records:
//!                 u8  label (0 normal, 1 anomaly)
//!                 u8  ppr type (0 none, 1..4 = a..d)
//!                 u8  source (0 real, 1 synthetic)
//!                 u8  reserved, zero
//!                 u32 subject index into the table
//!                 u64 window index (real) or synthetic id
//!                 f64 start time in seconds
//!      -  N*C*T*4  f32 samples, window-major then row-major [C, T]
//! ```
//!
//! Synthetic lineage lives next to the store in `<store>.prov.jsonl`, one
//! [`Provenance`] JSON record per line.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::augment::Provenance;
use crate::error::{Error, Result};
use crate::signal::{Label, PprType, Window, WindowSource};

pub const MAGIC: &[u8; 4] = b"PPRW";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 32;
const RECORD_BYTES: usize = 24;

/// A corpus of equally shaped windows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowStore {
    pub channels: usize,
    pub samples: usize,
    pub windows: Vec<Window>,
}

impl WindowStore {
    pub fn new(windows: Vec<Window>) -> Result<Self> {
        let (channels, samples) = windows.first().map(|w| w.data.dim()).unwrap_or((0, 0));
        if let Some(w) = windows.iter().find(|w| w.data.dim() != (channels, samples)) {
            return Err(Error::Store(format!(
                "window shapes differ: {:?} vs {:?}",
                w.data.dim(),
                (channels, samples)
            )));
        }
        Ok(Self {
            channels,
            samples,
            windows,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn anomaly_count(&self) -> usize {
        self.windows.iter().filter(|w| w.label.is_anomaly()).count()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut subjects: Vec<&str> = Vec::new();
        let mut subject_index: HashMap<&str, u32> = HashMap::new();
        for w in &self.windows {
            if !subject_index.contains_key(w.subject_id.as_str()) {
                subject_index.insert(&w.subject_id, subjects.len() as u32);
                subjects.push(&w.subject_id);
            }
        }
        let n = self.windows.len();
        let mut out = Vec::with_capacity(
            HEADER_BYTES + n * RECORD_BYTES + n * self.channels * self.samples * 4,
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(subjects.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for s in &subjects {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for w in &self.windows {
            let (source, index) = match &w.source {
                WindowSource::Real { index } => (0u8, *index),
                WindowSource::Synthetic(p) => (1u8, p.synthetic_id),
            };
            out.push(w.label.index() as u8);
            out.push(w.ppr_type.map_or(0, PprType::code));
            out.push(source);
            out.push(0);
            out.extend_from_slice(&subject_index[w.subject_id.as_str()].to_le_bytes());
            out.extend_from_slice(&index.to_le_bytes());
            out.extend_from_slice(&w.start_s.to_le_bytes());
        }
        for (i, w) in self.windows.iter().enumerate() {
            if w.data.iter().any(|v| v.is_nan()) {
                return Err(Error::Store(format!("window {i} contains NaN samples")));
            }
            for v in w.data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decodes a store image. Synthetic windows get their lineage from
    /// `provenance` (keyed by synthetic id); a missing record is an error.
    pub fn decode(bytes: &[u8], provenance: &HashMap<u64, Provenance>) -> Result<Self> {
        let err = |msg: String| Error::Store(msg);
        if bytes.len() < HEADER_BYTES {
            return Err(err(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(err("bad magic, not a PPRW store".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {version}")));
        }
        let channels = u32_at(8) as usize;
        let samples = u32_at(12) as usize;
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let n_subjects = u32_at(24) as usize;

        let mut pos = HEADER_BYTES;
        let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| err(format!("length mismatch: need {len} bytes at offset {pos}")))?;
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        };
        let mut subjects = Vec::with_capacity(n_subjects.min(bytes.len()));
        for _ in 0..n_subjects {
            let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let raw = take(&mut pos, len)?;
            subjects.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| err("subject id is not UTF-8".into()))?,
            );
        }

        let count: usize = count
            .try_into()
            .map_err(|_| err(format!("window count {count} too large")))?;
        let window_floats = channels
            .checked_mul(samples)
            .ok_or_else(|| err("window shape overflows".into()))?;
        let expected = count
            .checked_mul(RECORD_BYTES + window_floats * 4)
            .and_then(|n| n.checked_add(pos))
            .ok_or_else(|| err("store size overflows".into()))?;
        if expected != bytes.len() {
            return Err(err(format!(
                "length mismatch: header implies {expected} bytes, file has {}",
                bytes.len()
            )));
        }

        let records = take(&mut pos, count * RECORD_BYTES)?;
        let payload = take(&mut pos, count * window_floats * 4)?;
        let mut windows = Vec::with_capacity(count);
        for (i, rec) in records.chunks_exact(RECORD_BYTES).enumerate() {
            let label = Label::from_index(rec[0] as usize)
                .ok_or_else(|| err(format!("window {i}: bad label byte {}", rec[0])))?;
            let ppr_type = match rec[1] {
                0 => None,
                c => Some(
                    PprType::from_code(c)
                        .ok_or_else(|| err(format!("window {i}: bad ppr type {c}")))?,
                ),
            };
            let subject = u32::from_le_bytes(rec[4..8].try_into().unwrap()) as usize;
            let subject_id = subjects
                .get(subject)
                .ok_or_else(|| err(format!("window {i}: subject index {subject} out of range")))?
                .clone();
            let index = u64::from_le_bytes(rec[8..16].try_into().unwrap());
            let start_s = f64::from_le_bytes(rec[16..24].try_into().unwrap());
            let source = match rec[2] {
                0 => WindowSource::Real { index },
                1 => WindowSource::Synthetic(Box::new(
                    provenance
                        .get(&index)
                        .cloned()
                        .ok_or_else(|| err(format!("window {i}: no provenance for synthetic {index}")))?,
                )),
                s => return Err(err(format!("window {i}: bad source byte {s}"))),
            };
            let floats = &payload[i * window_floats * 4..(i + 1) * window_floats * 4];
            let data: Vec<f32> = floats
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            windows.push(Window {
                data: Array2::from_shape_vec((channels, samples), data)
                    .expect("payload length checked"),
                label,
                subject_id,
                start_s,
                ppr_type,
                source,
            });
        }
        Ok(Self {
            channels,
            samples,
            windows,
        })
    }

    /// Writes the store and, when it holds synthetic windows, the provenance
    /// sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let provenance: Vec<&Provenance> = self
            .windows
            .iter()
            .filter_map(|w| match &w.source {
                WindowSource::Synthetic(p) => Some(p.as_ref()),
                WindowSource::Real { .. } => None,
            })
            .collect();
        let sidecar = sidecar_path(path);
        if provenance.is_empty() {
            if sidecar.exists() {
                fs::remove_file(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            }
        } else {
            write_provenance(&sidecar, provenance)?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        let provenance = if sidecar.exists() {
            read_provenance(&sidecar)?
                .into_iter()
                .map(|p| (p.synthetic_id, p))
                .collect()
        } else {
            HashMap::new()
        };
        Self::decode(&bytes, &provenance).map_err(|e| match e {
            Error::Store(m) => Error::Store(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub fn sidecar_path(store: &Path) -> PathBuf {
    let mut s = store.as_os_str().to_owned();
    s.push(".prov.jsonl");
    PathBuf::from(s)
}

pub fn write_provenance<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a Provenance>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in records {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_provenance(path: &Path) -> Result<Vec<Provenance>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::WindowKey;

    fn window(i: u64, subject: &str) -> Window {
        Window {
            data: Array2::from_shape_fn((2, 3), |(c, t)| (i * 10 + c as u64 * 3 + t as u64) as f32 * 0.5),
            label: if i % 2 == 0 { Label::Anomaly } else { Label::Normal },
            subject_id: subject.into(),
            start_s: i as f64 * 0.1,
            ppr_type: if i % 2 == 0 { Some(PprType::OffsetB) } else { None },
            source: WindowSource::Real { index: i },
        }
    }

    #[test]
    fn empty_store_is_header_only() {
        let store = WindowStore::default();
        let bytes = store.encode().unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES);
        let back = WindowStore::decode(&bytes, &HashMap::new()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn small_round_trip() {
        let store = WindowStore::new(vec![window(0, "p1"), window(1, "p2"), window(2, "p1")]).unwrap();
        let back = WindowStore::decode(&store.encode().unwrap(), &HashMap::new()).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn nan_is_rejected() {
        let mut w = window(0, "p1");
        w.data[[1, 1]] = f32::NAN;
        assert!(matches!(WindowStore::new(vec![w]).unwrap().encode(), Err(Error::Store(_))));
    }

    #[test]
    fn corruption_detected() {
        let store = WindowStore::new(vec![window(0, "p1"), window(1, "p1")]).unwrap();
        let bytes = store.encode().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'Q';
        assert!(WindowStore::decode(&bad, &HashMap::new()).is_err());
        assert!(WindowStore::decode(&bytes[..bytes.len() - 1], &HashMap::new()).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(WindowStore::decode(&longer, &HashMap::new()).is_err());
    }

    #[test]
    fn synthetic_needs_sidecar() {
        let mut w = window(4, "synthetic");
        let prov = Provenance {
            synthetic_id: 7,
            parents: [
                WindowKey { subject_id: "p1".into(), index: 1 },
                WindowKey { subject_id: "p1".into(), index: 2 },
            ],
            cut_points: vec![1],
            seed: 3,
            ppr_type: Some(PprType::OffsetB),
        };
        w.source = WindowSource::Synthetic(Box::new(prov.clone()));
        let store = WindowStore::new(vec![w]).unwrap();
        let bytes = store.encode().unwrap();
        assert!(WindowStore::decode(&bytes, &HashMap::new()).is_err());
        let map = HashMap::from([(7, prov)]);
        assert_eq!(WindowStore::decode(&bytes, &map).unwrap(), store);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fold.pprw");
        store.write(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(WindowStore::read(&path).unwrap(), store);
    }
}
