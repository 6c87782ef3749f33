use log::warn;
use ndarray::s;
use serde::{Deserialize, Serialize};

use super::{AnnotationKind, AnnotationSpan, Label, PprType, Recording, Window, WindowSource};
use crate::error::{Error, Result};

/// Added to the per-channel standard deviation before dividing.
pub const ZNORM_EPSILON: f32 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowingConfig {
    pub window_length_s: f64,
    /// Fraction of a window shared with the next one, in `[0, 1)`.
    pub overlap_fraction: f64,
}

impl WindowingConfig {
    pub fn new(window_length_s: f64, overlap_fraction: f64) -> Result<Self> {
        let cfg = Self {
            window_length_s,
            overlap_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Target-domain default: one-second windows, 90% overlap.
    pub fn target_default() -> Self {
        Self {
            window_length_s: 1.0,
            overlap_fraction: 0.9,
        }
    }

    /// Source-domain default: one-second disjoint windows.
    pub fn source_default() -> Self {
        Self {
            window_length_s: 1.0,
            overlap_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_length_s > 0.0) {
            return Err(Error::Config("window_length_s must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap_fraction must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    pub fn window_samples(&self, rate_hz: u32) -> usize {
        (self.window_length_s * rate_hz as f64).round().max(1.0) as usize
    }

    /// Hop between consecutive window starts, rounded half away from zero,
    /// never below one sample.
    pub fn stride_samples(&self, rate_hz: u32) -> usize {
        let raw = self.window_length_s * rate_hz as f64 * (1.0 - self.overlap_fraction);
        (raw.round() as usize).max(1)
    }

    /// `floor((S - W) / stride) + 1`, or 0 when the recording is shorter than
    /// one window.
    pub fn window_count(&self, total_samples: usize, rate_hz: u32) -> usize {
        let w = self.window_samples(rate_hz);
        if total_samples < w {
            return 0;
        }
        (total_samples - w) / self.stride_samples(rate_hz) + 1
    }
}

/// Cuts a recording into fixed-length windows and labels each from the
/// recording's annotations. A trailing partial window is discarded.
pub fn segment_windows(rec: &Recording, cfg: &WindowingConfig) -> Result<Vec<Window>> {
    cfg.validate()?;
    let rate = rec.sampling_rate_hz;
    let w = cfg.window_samples(rate);
    let stride = cfg.stride_samples(rate);
    let count = cfg.window_count(rec.n_samples(), rate);
    if count == 0 {
        warn!(
            "{}: recording of {:.3} s is shorter than one {} s window",
            rec.subject_id,
            rec.duration_s(),
            cfg.window_length_s
        );
        return Ok(Vec::new());
    }

    let windows = (0..count)
        .map(|i| {
            let start = i * stride;
            let data = rec
                .data
                .slice(s![.., start..start + w])
                .mapv(|v| v as f32)
                .as_standard_layout()
                .into_owned();
            let (label, ppr_type) = label_window(start, w, rate, &rec.annotations);
            Window {
                data,
                label,
                subject_id: rec.subject_id.clone(),
                start_s: start as f64 / rate as f64,
                ppr_type,
                source: WindowSource::Real { index: i as u64 },
            }
        })
        .collect();
    Ok(windows)
}

/// Number of window samples `start_sample + k` (k in `0..len`) whose time lies
/// in `[span.start_s, span.end_s)`.
fn overlap_samples(start_sample: usize, len: usize, rate: u32, span: &AnnotationSpan) -> usize {
    const TOL: f64 = 1e-9;
    let r = rate as f64;
    let first = (span.start_s * r - TOL).ceil() - start_sample as f64;
    let end = (span.end_s * r - TOL).ceil() - start_sample as f64;
    let first = first.max(0.0);
    let end = end.min(len as f64);
    if end > first {
        (end - first) as usize
    } else {
        0
    }
}

fn classify(ws: f64, we: f64, span: &AnnotationSpan) -> PprType {
    let (a, b) = (span.start_s, span.end_s);
    if a <= ws && b >= we {
        PprType::InteriorC
    } else if a >= ws && b <= we {
        PprType::WholeD
    } else if a > ws {
        PprType::OnsetA
    } else {
        PprType::OffsetB
    }
}

/// Labels the window covering samples `[start_sample, start_sample + len)`.
///
/// A window is an anomaly when any annotation covers at least one of its
/// samples. For PPR annotations the span with the largest overlap decides the
/// window type (ties go to the earlier span); seizure windows carry no type.
pub fn label_window(
    start_sample: usize,
    len: usize,
    rate_hz: u32,
    annotations: &[AnnotationSpan],
) -> (Label, Option<PprType>) {
    let best = annotations
        .iter()
        .map(|span| (overlap_samples(start_sample, len, rate_hz, span), span))
        .filter(|(n, _)| *n > 0)
        .max_by(|(na, sa), (nb, sb)| {
            na.cmp(nb)
                .then(sb.start_s.total_cmp(&sa.start_s))
                .then(sb.end_s.total_cmp(&sa.end_s))
        });
    match best {
        None => (Label::Normal, None),
        Some((_, span)) => {
            let ws = start_sample as f64 / rate_hz as f64;
            let we = (start_sample + len) as f64 / rate_hz as f64;
            let ty = match span.kind {
                AnnotationKind::Ppr => Some(classify(ws, we, span)),
                AnnotationKind::Seizure => None,
            };
            (Label::Anomaly, ty)
        }
    }
}

/// Per-channel z-normalization of a `[C, T]` row-major block.
pub fn znormalize(samples: &[f32], channels: usize) -> Vec<f32> {
    let mut out = samples.to_vec();
    if channels == 0 || samples.is_empty() {
        return out;
    }
    let t = samples.len() / channels;
    for row in out.chunks_mut(t) {
        let n = row.len() as f64;
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let denom = var.sqrt() + ZNORM_EPSILON as f64;
        for v in row.iter_mut() {
            *v = ((*v as f64 - mean) / denom) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Domain, Montage};
    use ndarray::Array2;

    fn ppr(a: f64, b: f64) -> AnnotationSpan {
        AnnotationSpan::new(a, b, AnnotationKind::Ppr).unwrap()
    }

    #[test]
    fn stride_and_counts() {
        let t = WindowingConfig::target_default();
        assert_eq!(t.stride_samples(500), 50);
        assert_eq!(t.window_count(300 * 500, 500), 2991);
        let s = WindowingConfig::source_default();
        assert_eq!(s.window_count(3600 * 256, 256), 3600);
        assert_eq!(s.window_count(128, 256), 0);
    }

    #[test]
    fn stride_never_zero() {
        let cfg = WindowingConfig::new(0.01, 0.99).unwrap();
        assert_eq!(cfg.stride_samples(100), 1);
    }

    #[test]
    fn bad_overlap_rejected() {
        assert!(WindowingConfig::new(1.0, 1.0).is_err());
        assert!(WindowingConfig::new(1.0, -0.1).is_err());
    }

    #[test]
    fn label_examples() {
        // [1.5, 2.5) at 500 Hz
        assert_eq!(
            label_window(750, 500, 500, &[ppr(2.0, 4.0)]),
            (Label::Anomaly, Some(PprType::OnsetA))
        );
        // [1.8, 2.8)
        assert_eq!(
            label_window(900, 500, 500, &[ppr(2.0, 2.3)]),
            (Label::Anomaly, Some(PprType::WholeD))
        );
        assert_eq!(
            label_window(0, 500, 500, &[ppr(2.0, 2.3)]),
            (Label::Normal, None)
        );
        assert_eq!(
            label_window(1600, 500, 500, &[ppr(2.0, 4.0)]),
            (Label::Anomaly, Some(PprType::OffsetB))
        );
        assert_eq!(
            label_window(1100, 500, 500, &[ppr(2.0, 4.0)]),
            (Label::Anomaly, Some(PprType::InteriorC))
        );
    }

    #[test]
    fn one_sample_overlap_counts() {
        // Window [0, 1) s, span starting at its very last sample.
        let last = 499.0 / 500.0;
        assert_eq!(label_window(0, 500, 500, &[ppr(last, 3.0)]).0, Label::Anomaly);
        // Span starting exactly at the window end does not overlap.
        assert_eq!(label_window(0, 500, 500, &[ppr(1.0, 3.0)]).0, Label::Normal);
    }

    #[test]
    fn largest_overlap_decides_type() {
        // window [1.0, 2.0): span1 covers 0.1 s at the start (offset),
        // span2 covers 0.5 s at the end (onset).
        let spans = [ppr(0.5, 1.1), ppr(1.5, 3.0)];
        let rev = [spans[1], spans[0]];
        let a = label_window(500, 500, 500, &spans);
        assert_eq!(a, (Label::Anomaly, Some(PprType::OnsetA)));
        assert_eq!(a, label_window(500, 500, 500, &rev));
    }

    #[test]
    fn seizure_windows_have_no_type() {
        let span = AnnotationSpan::new(0.0, 10.0, AnnotationKind::Seizure).unwrap();
        assert_eq!(label_window(0, 256, 256, &[span]), (Label::Anomaly, None));
    }

    #[test]
    fn segment_carries_metadata() {
        let rec = Recording::new(
            "p7",
            vec!["A".into(), "B".into()],
            Array2::from_shape_fn((2, 2000), |(c, t)| (c * 10000 + t) as f64),
            500,
            Montage::Bipolar,
            vec![ppr(1.2, 1.6)],
            Domain::Target,
        )
        .unwrap();
        let ws = segment_windows(&rec, &WindowingConfig::target_default()).unwrap();
        assert_eq!(ws.len(), 31);
        assert_eq!(ws[3].start_s, 0.3);
        assert_eq!(ws[3].data[[1, 0]], 10150.0);
        assert_eq!(ws[3].subject_id, "p7");
        assert_eq!(ws[3].source, WindowSource::Real { index: 3 });
        assert!(ws.iter().all(|w| w.ppr_type.is_some() == w.label.is_anomaly()));
    }

    #[test]
    fn short_recording_gives_no_windows() {
        let rec = Recording::new(
            "p",
            vec!["A".into()],
            Array2::zeros((1, 250)),
            500,
            Montage::Bipolar,
            vec![],
            Domain::Target,
        )
        .unwrap();
        assert!(segment_windows(&rec, &WindowingConfig::target_default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn znorm_moments() {
        let x: Vec<f32> = (0..200).map(|i| (i as f32 * 0.37).sin() * 40.0 + 7.0).collect();
        let z = znormalize(&x, 2);
        for row in z.chunks(100) {
            let m: f32 = row.iter().sum::<f32>() / 100.0;
            let v: f32 = row.iter().map(|a| (a - m) * (a - m)).sum::<f32>() / 100.0;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
