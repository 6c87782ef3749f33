//! EDF reader and writer.
//!
//! Only continuous EDF/EDF+C with 16-bit little-endian samples is supported.
//! All ordinary signals of a file must share one sampling rate; EDF+
//! annotation signals are skipped.
//!
//! Layout: a 256-byte fixed header, 256 bytes of per-signal fields, then
//! `number_of_records` data records, each holding `samples_per_record`
//! samples of every signal in turn.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal::{Domain, Montage, Recording};

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;
const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct EdfSignal {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefilter: String,
    pub samples_per_record: usize,
}

impl EdfSignal {
    /// Physical value of one digital step.
    pub fn quantum(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (digital as f64 - self.digital_min as f64) * self.quantum() + self.physical_min
    }

    fn to_digital(&self, physical: f64) -> i16 {
        let d = ((physical - self.physical_min) / self.quantum()).round() + self.digital_min as f64;
        d.clamp(self.digital_min as f64, self.digital_max as f64) as i16
    }

    fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    /// `dd.mm.yy`
    pub start_date: String,
    /// `hh.mm.ss`
    pub start_time: String,
    pub reserved: String,
    pub number_of_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<EdfSignal>,
}

impl EdfHeader {
    pub fn header_bytes(&self) -> usize {
        FIXED_HEADER + SIGNAL_HEADER * self.signals.len()
    }

    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }
}

fn edf_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Edf {
        offset: offset as u64,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, len: usize, name: &str) -> Result<&'a str> {
        let start = self.pos;
        let raw = self
            .bytes
            .get(start..start + len)
            .ok_or_else(|| edf_err(start, format!("file ends inside header field `{name}`")))?;
        self.pos += len;
        let s = std::str::from_utf8(raw)
            .map_err(|_| edf_err(start, format!("field `{name}` is not ASCII")))?;
        if !s.is_ascii() {
            return Err(edf_err(start, format!("field `{name}` is not ASCII")));
        }
        Ok(s.trim())
    }

    fn number<T: std::str::FromStr>(&mut self, len: usize, name: &str) -> Result<T> {
        let start = self.pos;
        let s = self.field(len, name)?;
        s.parse::<T>()
            .map_err(|_| edf_err(start, format!("field `{name}` is not a number: {s:?}")))
    }
}

/// Parses the header and returns it with the offset of the first data record.
pub fn parse_header(bytes: &[u8]) -> Result<(EdfHeader, usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let version = cur.field(8, "version")?.to_string();
    if version != "0" {
        return Err(edf_err(0, format!("not an EDF file (version field {version:?})")));
    }
    let patient_id = cur.field(80, "patient id")?.to_string();
    let recording_id = cur.field(80, "recording id")?.to_string();
    let start_date = cur.field(8, "start date")?.to_string();
    let start_time = cur.field(8, "start time")?.to_string();
    let header_pos = cur.pos;
    let header_bytes: usize = cur.number(8, "header bytes")?;
    let reserved = cur.field(44, "reserved")?.to_string();
    if reserved.starts_with("EDF+D") {
        return Err(edf_err(cur.pos - 44, "discontinuous EDF+ is not supported"));
    }
    let nrec_pos = cur.pos;
    let nrec: i64 = cur.number(8, "number of records")?;
    let dur_pos = cur.pos;
    let record_duration_s: f64 = cur.number(8, "record duration")?;
    if !(record_duration_s.is_finite() && record_duration_s > 0.0) {
        return Err(edf_err(dur_pos, "record duration must be positive"));
    }
    let ns_pos = cur.pos;
    let ns: usize = cur.number(4, "number of signals")?;
    if ns == 0 || ns > (bytes.len().saturating_sub(FIXED_HEADER)) / SIGNAL_HEADER {
        return Err(edf_err(ns_pos, format!("implausible signal count {ns}")));
    }
    if header_bytes != FIXED_HEADER + SIGNAL_HEADER * ns {
        return Err(edf_err(
            header_pos,
            format!(
                "header size {header_bytes} inconsistent with {ns} signals (expected {})",
                FIXED_HEADER + SIGNAL_HEADER * ns
            ),
        ));
    }

    // Signal fields are stored column-wise: all labels, then all transducers...
    let mut texts = |len: usize, name: &str| -> Result<Vec<String>> {
        (0..ns).map(|_| cur.field(len, name).map(str::to_string)).collect()
    };
    let labels = texts(16, "label")?;
    let transducers = texts(80, "transducer")?;
    let dims = texts(8, "physical dimension")?;
    let mut nums = |len: usize, name: &str| -> Result<Vec<(usize, f64)>> {
        (0..ns)
            .map(|_| {
                let p = cur.pos;
                cur.number::<f64>(len, name).map(|v| (p, v))
            })
            .collect()
    };
    let pmins = nums(8, "physical minimum")?;
    let pmaxs = nums(8, "physical maximum")?;
    let dmins = nums(8, "digital minimum")?;
    let dmaxs = nums(8, "digital maximum")?;
    let prefilters = (0..ns)
        .map(|_| cur.field(80, "prefilter").map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    let mut sprs = Vec::with_capacity(ns);
    for _ in 0..ns {
        let p = cur.pos;
        let v: usize = cur.number(8, "samples per record")?;
        if v == 0 || v > 1 << 24 {
            return Err(edf_err(p, format!("samples per record must be in 1..=2^24, got {v}")));
        }
        sprs.push(v);
    }
    cur.field(32 * ns, "signal reserved")?;

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let as_digital = |(pos, v): (usize, f64), name: &str| -> Result<i32> {
            if v.fract() != 0.0 || !(-32768.0..=32767.0).contains(&v) {
                return Err(edf_err(pos, format!("{name} {v} is not a 16-bit integer")));
            }
            Ok(v as i32)
        };
        let digital_min = as_digital(dmins[i], "digital minimum")?;
        let digital_max = as_digital(dmaxs[i], "digital maximum")?;
        if digital_max <= digital_min {
            return Err(edf_err(dmaxs[i].0, "digital maximum must exceed digital minimum"));
        }
        if !(pmins[i].1.is_finite() && pmaxs[i].1.is_finite()) {
            return Err(edf_err(pmins[i].0, "physical range is not finite"));
        }
        if pmaxs[i].1 == pmins[i].1 {
            return Err(edf_err(pmaxs[i].0, "physical maximum equals physical minimum"));
        }
        signals.push(EdfSignal {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: pmins[i].1,
            physical_max: pmaxs[i].1,
            digital_min,
            digital_max,
            prefilter: prefilters[i].clone(),
            samples_per_record: sprs[i],
        });
    }

    let mut header = EdfHeader {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        reserved,
        number_of_records: 0,
        record_duration_s,
        signals,
    };
    let record_bytes = header.record_bytes();
    let available = bytes.len().saturating_sub(header_bytes);
    header.number_of_records = if nrec == -1 {
        available / record_bytes
    } else if nrec < 0 {
        return Err(edf_err(nrec_pos, format!("negative record count {nrec}")));
    } else {
        nrec as usize
    };
    Ok((header, header_bytes))
}

/// Parses a whole EDF file image into its header and the physical samples of
/// every signal.
pub fn parse_edf(bytes: &[u8]) -> Result<(EdfHeader, Vec<Vec<f64>>)> {
    let (header, data_start) = parse_header(bytes)?;
    let record_bytes = header.record_bytes();
    let nrec = header.number_of_records;
    let needed = nrec
        .checked_mul(record_bytes)
        .and_then(|n| n.checked_add(data_start))
        .ok_or_else(|| edf_err(FIXED_HEADER - 12, "record count overflows"))?;
    if bytes.len() < needed {
        let complete = (bytes.len() - data_start) / record_bytes;
        return Err(edf_err(
            data_start + complete * record_bytes,
            format!("file truncated in data record {complete} of {nrec}"),
        ));
    }
    if bytes.len() > needed {
        log::warn!("{} trailing bytes after the last EDF record", bytes.len() - needed);
    }

    let mut samples: Vec<Vec<f64>> = header
        .signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * nrec))
        .collect();
    let mut pos = data_start;
    for _ in 0..nrec {
        for (sig, out) in header.signals.iter().zip(samples.iter_mut()) {
            let chunk = &bytes[pos..pos + sig.samples_per_record * 2];
            out.extend(
                chunk
                    .chunks_exact(2)
                    .map(|b| sig.to_physical(i16::from_le_bytes([b[0], b[1]]))),
            );
            pos += chunk.len();
        }
    }
    Ok((header, samples))
}

/// Builds a referential recording from an EDF file image.
///
/// The subject id is the first token of the patient field, or `fallback_id`
/// when that field is empty or anonymized (`X`).
pub fn recording_from_edf(bytes: &[u8], fallback_id: &str, domain: Domain) -> Result<Recording> {
    let (header, samples) = parse_edf(bytes)?;
    let keep: Vec<usize> = (0..header.signals.len())
        .filter(|&i| !header.signals[i].is_annotation())
        .collect();
    if keep.is_empty() {
        return Err(edf_err(FIXED_HEADER, "file holds no ordinary signals"));
    }
    let spr = header.signals[keep[0]].samples_per_record;
    if let Some(&bad) = keep
        .iter()
        .find(|&&i| header.signals[i].samples_per_record != spr)
    {
        return Err(edf_err(
            FIXED_HEADER + 216 * header.signals.len() + 8 * bad,
            format!(
                "signal `{}` has {} samples per record, expected {spr}",
                header.signals[bad].label, header.signals[bad].samples_per_record
            ),
        ));
    }
    let rate = spr as f64 / header.record_duration_s;
    if (rate - rate.round()).abs() > 1e-6 || rate.round() < 1.0 {
        return Err(edf_err(
            FIXED_HEADER - 12,
            format!("sampling rate {rate} Hz is not a positive integer"),
        ));
    }
    let n = spr * header.number_of_records;
    let mut data = Array2::<f64>::zeros((keep.len(), n));
    for (row, &i) in keep.iter().enumerate() {
        data.row_mut(row)
            .iter_mut()
            .zip(&samples[i])
            .for_each(|(d, &v)| *d = v);
    }
    let subject = header
        .patient_id
        .split_whitespace()
        .next()
        .filter(|s| *s != "X")
        .unwrap_or(fallback_id)
        .to_string();
    let names: Vec<String> = keep.iter().map(|&i| header.signals[i].label.clone()).collect();
    let montage = if names.iter().all(|n| is_derivation_label(n)) {
        Montage::Bipolar
    } else {
        Montage::Referential
    };
    Recording::new(
        subject,
        names,
        data,
        rate.round() as u32,
        montage,
        Vec::new(),
        domain,
    )
}

/// `FP1-F7` is a derivation; `FP1`, `EEG FP1-REF` and `FP1-LE` are not.
fn is_derivation_label(label: &str) -> bool {
    let l = label.trim().to_ascii_uppercase();
    let l = l.strip_prefix("EEG ").unwrap_or(&l);
    match l.split_once('-') {
        Some((a, b)) => !a.is_empty() && !b.is_empty() && !matches!(b, "REF" | "LE" | "AR"),
        None => false,
    }
}

pub fn read_edf(path: &Path, domain: Domain) -> Result<Recording> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    recording_from_edf(&bytes, &stem, domain)
}

/// Formats `v` into at most 8 ASCII characters, rounding outward (down for
/// minima, up for maxima) so the written range still contains `v`.
fn format_bound(v: f64, up: bool) -> Result<(String, f64)> {
    for decimals in (0..=6).rev() {
        let scale = 10f64.powi(decimals);
        let r = if up { (v * scale).ceil() } else { (v * scale).floor() } / scale;
        let s = format!("{:.*}", decimals as usize, r);
        if s.len() <= 8 {
            let parsed: f64 = s.parse().expect("formatted float parses");
            return Ok((s, parsed));
        }
    }
    Err(Error::InvalidRecording(format!(
        "value {v} does not fit an 8-character EDF field"
    )))
}

fn pad(out: &mut Vec<u8>, s: &str, len: usize) {
    let bytes = s.as_bytes();
    let n = bytes.len().min(len);
    out.extend_from_slice(&bytes[..n]);
    out.extend(std::iter::repeat_n(b' ', len - n));
}

/// Encodes a recording as EDF with one-second records and the full 16-bit
/// digital range. Each channel's physical range is its data range. A final
/// partial second is padded with the last sample of each channel.
pub fn encode_edf(rec: &Recording) -> Result<Vec<u8>> {
    let rate = rec.sampling_rate_hz as usize;
    let n = rec.n_samples();
    let nrec = n.div_ceil(rate).max(1);
    if !n.is_multiple_of(rate) {
        log::warn!(
            "{}: {} samples is not a whole number of seconds, padding",
            rec.subject_id,
            n
        );
    }

    let mut signals = Vec::with_capacity(rec.n_channels());
    let mut bounds = Vec::with_capacity(rec.n_channels());
    for (name, row) in rec.channel_names.iter().zip(rec.data.rows()) {
        let mut lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidRecording(format!(
                "channel `{name}` holds non-finite samples"
            )));
        }
        if hi - lo < 1e-3 {
            lo -= 1.0;
            hi += 1.0;
        }
        let (lo_s, lo) = format_bound(lo, false)?;
        let (hi_s, hi) = format_bound(hi, true)?;
        bounds.push((lo_s, hi_s));
        signals.push(EdfSignal {
            label: name.clone(),
            transducer: "AgAgCl electrode".into(),
            physical_dimension: "uV".into(),
            physical_min: lo,
            physical_max: hi,
            digital_min: -32768,
            digital_max: 32767,
            prefilter: String::new(),
            samples_per_record: rate,
        });
    }

    let ns = signals.len();
    let mut out = Vec::with_capacity(FIXED_HEADER + SIGNAL_HEADER * ns + nrec * rate * ns * 2);
    pad(&mut out, "0", 8);
    pad(&mut out, &format!("{} X X X", rec.subject_id), 80);
    pad(&mut out, "Startdate X X X X", 80);
    pad(&mut out, "01.01.00", 8);
    pad(&mut out, "00.00.00", 8);
    pad(&mut out, &(FIXED_HEADER + SIGNAL_HEADER * ns).to_string(), 8);
    pad(&mut out, "", 44);
    pad(&mut out, &nrec.to_string(), 8);
    pad(&mut out, "1", 8);
    pad(&mut out, &ns.to_string(), 4);
    for s in &signals {
        pad(&mut out, &s.label, 16);
    }
    for s in &signals {
        pad(&mut out, &s.transducer, 80);
    }
    for s in &signals {
        pad(&mut out, &s.physical_dimension, 8);
    }
    for (lo, _) in &bounds {
        pad(&mut out, lo, 8);
    }
    for (_, hi) in &bounds {
        pad(&mut out, hi, 8);
    }
    for s in &signals {
        pad(&mut out, &s.digital_min.to_string(), 8);
    }
    for s in &signals {
        pad(&mut out, &s.digital_max.to_string(), 8);
    }
    for s in &signals {
        pad(&mut out, &s.prefilter, 80);
    }
    for s in &signals {
        pad(&mut out, &s.samples_per_record.to_string(), 8);
    }
    for _ in &signals {
        pad(&mut out, "", 32);
    }

    for r in 0..nrec {
        for (sig, row) in signals.iter().zip(rec.data.rows()) {
            for k in 0..rate {
                let idx = (r * rate + k).min(n.saturating_sub(1));
                let v = if n == 0 { 0.0 } else { row[idx] };
                out.extend_from_slice(&sig.to_digital(v).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_edf(path: &Path, rec: &Recording) -> Result<()> {
    let bytes = encode_edf(rec)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_recording() -> Recording {
        let data = Array2::from_shape_fn((3, 512), |(c, t)| {
            (t as f64 * 0.05 + c as f64).sin() * 80.0 * (c + 1) as f64
        });
        Recording::new(
            "chb01",
            vec!["FP1".into(), "F7".into(), "T7".into()],
            data,
            256,
            Montage::Referential,
            vec![],
            Domain::Source,
        )
        .unwrap()
    }

    #[test]
    fn affine_endpoints() {
        let s = EdfSignal {
            label: "A".into(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: -200.0,
            physical_max: 200.0,
            digital_min: -2048,
            digital_max: 2047,
            prefilter: String::new(),
            samples_per_record: 1,
        };
        assert_eq!(s.to_physical(-2048), -200.0);
        assert_eq!(s.to_physical(2047), 200.0);
    }

    #[test]
    fn round_trip_within_quantum() {
        let rec = sample_recording();
        let bytes = encode_edf(&rec).unwrap();
        let (header, _) = parse_header(&bytes).unwrap();
        let back = recording_from_edf(&bytes, "fallback", Domain::Source).unwrap();
        assert_eq!(back.subject_id, "chb01");
        assert_eq!(back.sampling_rate_hz, 256);
        assert_eq!(back.channel_names, rec.channel_names);
        assert_eq!(back.data.dim(), rec.data.dim());
        for (c, sig) in header.signals.iter().enumerate() {
            let q = sig.quantum();
            for t in 0..rec.n_samples() {
                assert!((back.data[[c, t]] - rec.data[[c, t]]).abs() <= q);
            }
        }
    }

    #[test]
    fn truncated_file_names_record() {
        let bytes = encode_edf(&sample_recording()).unwrap();
        let cut = &bytes[..bytes.len() - 100];
        match parse_edf(cut) {
            Err(Error::Edf { message, offset }) => {
                assert!(message.contains("record 1"), "{message}");
                assert!(offset > 0);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_edf(&sample_recording()).unwrap();
        bytes[0] = 0xFF;
        assert!(matches!(parse_edf(&bytes), Err(Error::Edf { offset: 0, .. })));
    }

    #[test]
    fn bound_formatting() {
        assert_eq!(format_bound(-123.4567891, false).unwrap().0, "-123.457");
        let (s, v) = format_bound(123.4561, true).unwrap();
        assert!(s.len() <= 8 && (123.4561..123.4571).contains(&v));
        let (s, v) = format_bound(98765.4321, true).unwrap();
        assert!(s.len() <= 8 && v >= 98765.4321);
    }

    #[test]
    fn derivation_labels() {
        assert!(is_derivation_label("FP1-F7"));
        assert!(is_derivation_label("EEG T7-FT9"));
        assert!(!is_derivation_label("FP1"));
        assert!(!is_derivation_label("EEG FP1-REF"));
        assert!(!is_derivation_label("O2-LE"));
        assert!(!is_derivation_label("-"));
    }
}
