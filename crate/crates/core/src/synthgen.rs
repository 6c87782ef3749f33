//! Deterministic synthetic EEG: 1/f background with an alpha rhythm, plus
//! 3 Hz spike-and-wave bursts shared across channels with per-channel gains.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::annotations::{format_seizure_summary, write_ppr_csv};
use crate::edf::write_edf;
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng, Rng};
use crate::signal::{AnnotationKind, AnnotationSpan, Domain, Montage, Recording};

/// The 19 electrodes common to both domains.
pub const COMMON_ELECTRODES: [&str; 19] = [
    "FP1", "FP2", "F7", "F3", "FZ", "F4", "F8", "T7", "C3", "CZ", "C4", "T8", "P7", "P3", "PZ", "P4", "P8", "O1",
    "O2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstConfig {
    pub frequency_hz: f64,
    /// Burst RMS over background RMS.
    pub amplitude_ratio: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Range of the per-channel gain applied to the shared burst waveform.
    pub gain_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub subjects: usize,
    pub subject_prefix: String,
    pub duration_s: f64,
    pub rate_hz: u32,
    pub channels: Vec<String>,
    /// RMS of the 1/f background in microvolts.
    pub background_uv: f64,
    /// Alpha (10 Hz) amplitude relative to the background RMS.
    pub alpha_ratio: f64,
    pub alpha_hz: f64,
    pub burst: BurstConfig,
    pub bursts_per_recording: usize,
    pub annotation_kind: AnnotationKind,
    pub domain: Domain,
    pub seed: u64,
}

impl SynthConfig {
    /// Seizure-domain corpus: 21 electrodes at 256 Hz, ten minutes each.
    pub fn source_desk(seed: u64) -> Self {
        let mut channels: Vec<String> = COMMON_ELECTRODES.iter().map(|s| s.to_string()).collect();
        channels.extend(["FT9".to_string(), "FT10".to_string()]);
        Self {
            subjects: 6,
            subject_prefix: "src".into(),
            duration_s: 600.0,
            rate_hz: 256,
            channels,
            background_uv: 20.0,
            alpha_ratio: 0.5,
            alpha_hz: 10.0,
            burst: BurstConfig {
                frequency_hz: 3.0,
                amplitude_ratio: 5.0,
                min_duration_s: 8.0,
                max_duration_s: 20.0,
                gain_range: (0.3, 1.7),
            },
            bursts_per_recording: 3,
            annotation_kind: AnnotationKind::Seizure,
            domain: Domain::Source,
            seed,
        }
    }

    /// PPR-domain corpus: 19 electrodes at 500 Hz, four minutes each,
    /// shorter bursts than the source.
    pub fn target_desk(seed: u64) -> Self {
        Self {
            subjects: 6,
            subject_prefix: "ppr".into(),
            duration_s: 240.0,
            rate_hz: 500,
            channels: COMMON_ELECTRODES.iter().map(|s| s.to_string()).collect(),
            burst: BurstConfig {
                min_duration_s: 6.0,
                max_duration_s: 14.0,
                ..Self::source_desk(seed).burst
            },
            bursts_per_recording: 3,
            annotation_kind: AnnotationKind::Ppr,
            domain: Domain::Target,
            ..Self::source_desk(seed)
        }
    }

    fn slot_s(&self) -> f64 {
        self.duration_s / self.bursts_per_recording.max(1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.subjects == 0 || self.channels.is_empty() || self.rate_hz == 0 {
            return bad("subjects, channels and rate must be positive".into());
        }
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive".into());
        }
        let b = &self.burst;
        if !(b.amplitude_ratio > 1.0) {
            return bad(format!("amplitude ratio {} must exceed 1", b.amplitude_ratio));
        }
        if !(b.min_duration_s > 0.0 && b.min_duration_s <= b.max_duration_s) {
            return bad("burst duration range is empty".into());
        }
        if !(b.gain_range.0 >= 0.0 && b.gain_range.0 <= b.gain_range.1) {
            return bad("burst gain range is empty".into());
        }
        if self.bursts_per_recording > 0 && b.max_duration_s + 2.0 * GUARD_S > self.slot_s() {
            return bad(format!(
                "{} bursts of up to {} s do not fit in a {} s recording",
                self.bursts_per_recording, b.max_duration_s, self.duration_s
            ));
        }
        Ok(())
    }
}

/// Minimum spacing between a burst and its slot edges.
const GUARD_S: f64 = 1.0;

/// Unit-variance 1/f noise of length `n` (flat below 0.5 Hz).
fn pink_noise(n: usize, rate: f64, r: &mut Rng) -> Vec<f64> {
    let mut spec: Vec<Complex<f64>> = (0..n)
        .map(|k| {
            let f = k.min(n - k) as f64 * rate / n as f64;
            let amp = 1.0 / f.max(0.5).sqrt();
            let re: f64 = StandardNormal.sample(r);
            let im: f64 = StandardNormal.sample(r);
            Complex::new(re * amp, im * amp)
        })
        .collect();
    spec[0] = Complex::new(0.0, 0.0);
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v - mean) / sd.max(f64::MIN_POSITIVE)).collect()
}

/// One cycle of spike-and-wave at phase `p` in `[0, 1)`: a sharp half-sine
/// spike over the first 20% then a broad slow wave of opposite sign.
fn spike_wave(p: f64) -> f64 {
    if p < 0.2 {
        (PI * p / 0.2).sin()
    } else {
        -0.45 * (PI * (p - 0.2) / 0.8).sin()
    }
}

/// RMS of `spike_wave` over a cycle, by quadrature.
fn spike_wave_rms() -> f64 {
    let n = 10_000;
    ((0..n).map(|i| spike_wave(i as f64 / n as f64).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Burst spans for one recording, in whole samples.
fn place_bursts(cfg: &SynthConfig, r: &mut Rng) -> Vec<(usize, usize)> {
    let rate = cfg.rate_hz as f64;
    let slot = cfg.slot_s();
    (0..cfg.bursts_per_recording)
        .map(|k| {
            let b = &cfg.burst;
            let dur = r.random_range(b.min_duration_s..=b.max_duration_s);
            let lo = k as f64 * slot + GUARD_S;
            let hi = (k + 1) as f64 * slot - GUARD_S - dur;
            let start = if hi > lo { r.random_range(lo..hi) } else { lo };
            let s0 = (start * rate).round() as usize;
            let s1 = s0 + ((dur * rate).round() as usize).max(1);
            (s0, s1)
        })
        .collect()
}

fn generate_one(cfg: &SynthConfig, index: usize) -> Result<Recording> {
    let mut r = rng(derive_seed(cfg.seed, "synth-subject", &[index as u64]));
    let rate = cfg.rate_hz as f64;
    let n = (cfg.duration_s * rate).round() as usize;
    let c = cfg.channels.len();
    let mut data = Array2::<f64>::zeros((c, n));
    let bg = cfg.background_uv;

    let alpha_phase: Vec<f64> = (0..c).map(|_| r.random_range(0.0..2.0 * PI)).collect();
    // Slow shared amplitude modulation of the alpha rhythm.
    let mod_phase = r.random_range(0.0..2.0 * PI);
    for ch in 0..c {
        let noise = pink_noise(n, rate, &mut r);
        let mut row = data.row_mut(ch);
        for (t, v) in row.iter_mut().enumerate() {
            let time = t as f64 / rate;
            let envelope = 1.0 + 0.3 * (2.0 * PI * 0.05 * time + mod_phase).sin();
            let alpha = cfg.alpha_ratio * envelope * (2.0 * PI * cfg.alpha_hz * time + alpha_phase[ch]).sin();
            *v = bg * (noise[t] + alpha);
        }
    }

    let spans = place_bursts(cfg, &mut r);
    let b = &cfg.burst;
    let scale = b.amplitude_ratio * bg / spike_wave_rms();
    let mut annotations = Vec::with_capacity(spans.len());
    for &(s0, s1) in &spans {
        let gains: Vec<f64> = (0..c)
            .map(|_| r.random_range(b.gain_range.0..=b.gain_range.1))
            .collect();
        let phase0 = r.random_range(0.0..1.0);
        for t in s0..s1.min(n) {
            let p = (phase0 + (t - s0) as f64 * b.frequency_hz / rate).fract();
            let w = scale * spike_wave(p);
            for (ch, g) in gains.iter().enumerate() {
                data[[ch, t]] += g * w;
            }
        }
        annotations.push(AnnotationSpan::new(
            s0 as f64 / rate,
            s1.min(n) as f64 / rate,
            cfg.annotation_kind,
        )?);
    }

    Recording::new(
        format!("{}{:02}", cfg.subject_prefix, index + 1),
        cfg.channels.clone(),
        data,
        cfg.rate_hz,
        Montage::Referential,
        annotations,
        cfg.domain,
    )
}

/// Generates every subject's recording; annotations are the injected bursts.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    (0..cfg.subjects)
        .into_par_iter()
        .map(|i| generate_one(cfg, i))
        .collect()
}

/// Writes one EDF per recording and its annotations: a seizure summary text
/// for the source domain, a `start_s,end_s,kind` CSV for the target domain.
pub fn write_corpus(dir: &Path, recordings: &[Recording]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for rec in recordings {
        let edf = dir.join(format!("{}.edf", rec.subject_id));
        write_edf(&edf, rec)?;
        match rec.domain {
            Domain::Source => {
                let summary = dir.join(format!("{}-summary.txt", rec.subject_id));
                let mut files = BTreeMap::new();
                files.insert(format!("{}.edf", rec.subject_id), rec.annotations.clone());
                fs::write(&summary, format_seizure_summary(&files)).map_err(|e| Error::io(&summary, e))?;
            }
            Domain::Target => {
                write_ppr_csv(&dir.join(format!("{}.csv", rec.subject_id)), &rec.annotations)?;
            }
        }
        written.push(edf);
    }
    Ok(written)
}
