//! Per-channel handcrafted window features.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::signal::Window;

/// Feature names in per-channel order.
pub const FEATURE_NAMES: [&str; 8] = [
    "kurtosis",
    "skewness",
    "variance",
    "abs_sum",
    "line_length",
    "max_power",
    "spectral_centroid",
    "spectral_density",
];

pub const WELCH_SEGMENT: usize = 256;

/// Central moments `(m2, m3, m4)` of `x`.
fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

pub fn variance(x: &[f64]) -> f64 {
    moments(x).0
}

pub fn skewness(x: &[f64]) -> f64 {
    let (m2, m3, _) = moments(x);
    if m2 > 0.0 {
        m3 / m2.powf(1.5)
    } else {
        0.0
    }
}

/// Excess kurtosis (a normal sample gives about 0).
pub fn kurtosis(x: &[f64]) -> f64 {
    let (m2, _, m4) = moments(x);
    if m2 > 0.0 {
        m4 / (m2 * m2) - 3.0
    } else {
        0.0
    }
}

pub fn abs_sum(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

pub fn line_length(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// One-sided Welch power spectral density: Hann-tapered segments of
/// `segment` samples with 50% overlap, mean removed per segment. Returns
/// `(frequencies, density)`. Signals shorter than a segment use a single
/// segment of their own length.
pub fn welch_psd(x: &[f64], rate_hz: f64, segment: usize) -> (Vec<f64>, Vec<f64>) {
    let seg = segment.min(x.len()).max(2);
    let step = (seg / 2).max(1);
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let bins = seg / 2 + 1;
    let mut psd = vec![0.0; bins];
    let mut count = 0usize;
    let mut start = 0;
    while start + seg <= x.len() {
        let part = &x[start..start + seg];
        let mean = part.iter().sum::<f64>() / seg as f64;
        let mut buf: Vec<Complex<f64>> = part
            .iter()
            .zip(&window)
            .map(|(v, w)| Complex::new((v - mean) * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            let mut v = buf[k].norm_sqr() / (rate_hz * wss);
            if k != 0 && !(seg.is_multiple_of(2) && k == seg / 2) {
                v *= 2.0;
            }
            *p += v;
        }
        count += 1;
        start += step;
    }
    psd.iter_mut().for_each(|p| *p /= count.max(1) as f64);
    let freqs = (0..bins).map(|k| k as f64 * rate_hz / seg as f64).collect();
    (freqs, psd)
}

/// The eight features of one channel.
pub fn channel_features(x: &[f64], rate_hz: f64) -> [f64; 8] {
    let (m2, m3, m4) = moments(x);
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let (freqs, psd) = welch_psd(x, rate_hz, WELCH_SEGMENT);
    let df = freqs.get(1).copied().unwrap_or(0.0);
    let total: f64 = psd.iter().sum();
    let max_power = psd.iter().copied().fold(0.0, f64::max);
    let centroid = if total > 0.0 {
        freqs.iter().zip(&psd).map(|(f, p)| f * p).sum::<f64>() / total
    } else {
        0.0
    };
    [kurt, skew, m2, abs_sum(x), line_length(x), max_power, centroid, total * df]
}

/// Flattened `[channel][feature]` vector of a window sampled at `rate_hz`.
pub fn extract_features(win: &Window, rate_hz: f64) -> Vec<f64> {
    let t = win.n_samples();
    win.samples()
        .chunks(t)
        .flat_map(|row| {
            let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            channel_features(&x, rate_hz)
        })
        .collect()
}
