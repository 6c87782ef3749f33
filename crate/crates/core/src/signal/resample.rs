use ndarray::Array2;

use super::Recording;
use crate::error::{Error, Result};

/// Interpolating cubic spline with zero second derivative at both ends.
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivative at each knot.
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    /// Fits the spline through `(xs[i], ys[i])`; `xs` must be strictly increasing.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() {
            return Err(Error::Shape(format!("{} knots but {} values", n, ys.len())));
        }
        if n < 4 {
            return Err(Error::InsufficientData(format!(
                "cubic spline needs at least 4 samples, got {n}"
            )));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidRecording("spline knots must increase strictly".into()));
        }

        // Tridiagonal system for the interior second derivatives, solved with
        // the Thomas algorithm.
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let interior = n - 2;
        let mut diag = vec![0.0; interior];
        let mut upper = vec![0.0; interior];
        let mut rhs = vec![0.0; interior];
        for k in 0..interior {
            let i = k + 1;
            diag[k] = 2.0 * (h[i - 1] + h[i]);
            upper[k] = h[i];
            rhs[k] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
        }
        for k in 1..interior {
            let lower = h[k];
            let w = lower / diag[k - 1];
            diag[k] -= w * upper[k - 1];
            rhs[k] -= w * rhs[k - 1];
        }
        let mut m = vec![0.0; n];
        for k in (0..interior).rev() {
            let next = if k + 1 < interior { m[k + 2] } else { 0.0 };
            m[k + 1] = (rhs[k] - upper[k] * next) / diag[k];
        }

        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    fn eval_in(&self, i: usize, x: f64) -> f64 {
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let (a, b) = (x1 - x, x - x0);
        self.m[i] * a * a * a / (6.0 * h)
            + self.m[i + 1] * b * b * b / (6.0 * h)
            + (self.ys[i] / h - self.m[i] * h / 6.0) * a
            + (self.ys[i + 1] / h - self.m[i + 1] * h / 6.0) * b
    }

    fn segment_of(&self, x: f64) -> usize {
        let last = self.xs.len() - 2;
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(last),
        }
    }

    /// Evaluates at `x`; outside the knot range the end polynomials extend.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_in(self.segment_of(x), x)
    }

    /// Evaluates at a nondecreasing sequence of points in a single pass.
    pub fn eval_sorted(&self, points: &[f64]) -> Vec<f64> {
        let last = self.xs.len() - 2;
        let mut seg = 0;
        points
            .iter()
            .map(|&x| {
                while seg < last && self.xs[seg + 1] <= x {
                    seg += 1;
                }
                self.eval_in(seg, x)
            })
            .collect()
    }
}

/// Resamples every channel onto a uniform `target_rate_hz` grid spanning the
/// same duration, through a natural cubic spline per channel.
pub fn resample_cubic_spline(rec: &Recording, target_rate_hz: u32) -> Result<Recording> {
    if target_rate_hz == 0 {
        return Err(Error::InvalidRecording("target rate must be positive".into()));
    }
    let n_in = rec.n_samples();
    if n_in < 4 {
        return Err(Error::InsufficientData(format!(
            "{}: {} samples per channel, resampling needs at least 4",
            rec.subject_id, n_in
        )));
    }
    if target_rate_hz == rec.sampling_rate_hz {
        return Ok(rec.clone());
    }
    let n_out = (rec.duration_s() * target_rate_hz as f64).round() as usize;
    // Positions measured in input-sample units keep the knots exact integers.
    let step = rec.sampling_rate_hz as f64 / target_rate_hz as f64;
    let knots: Vec<f64> = (0..n_in).map(|i| i as f64).collect();
    let grid: Vec<f64> = (0..n_out).map(|j| j as f64 * step).collect();

    let mut data = Array2::<f64>::zeros((rec.n_channels(), n_out));
    for (c, row) in rec.data.rows().into_iter().enumerate() {
        let ys: Vec<f64> = row.to_vec();
        let spline = NaturalCubicSpline::fit(&knots, &ys)?;
        let values = spline.eval_sorted(&grid);
        data.row_mut(c)
            .iter_mut()
            .zip(values)
            .for_each(|(d, v)| *d = v);
    }

    let mut out = rec.clone();
    out.data = data;
    out.sampling_rate_hz = target_rate_hz;
    let duration = out.duration_s();
    for span in &mut out.annotations {
        span.end_s = span.end_s.min(duration);
    }
    out.annotations.retain(|s| s.start_s < s.end_s);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Domain, Montage};

    fn rec_from(rows: Vec<Vec<f64>>, rate: u32) -> Recording {
        let c = rows.len();
        let t = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Recording::new(
            "s",
            (0..c).map(|i| format!("C{i}")).collect(),
            Array2::from_shape_vec((c, t), flat).unwrap(),
            rate,
            Montage::Referential,
            vec![],
            Domain::Source,
        )
        .unwrap()
    }

    #[test]
    fn constant_is_preserved() {
        let r = rec_from(vec![vec![5.0; 512]], 256);
        let out = resample_cubic_spline(&r, 500).unwrap();
        assert_eq!(out.n_samples(), 1000);
        assert_eq!(out.sampling_rate_hz, 500);
        for v in out.data.iter() {
            assert!((v - 5.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn sine_interior_accuracy() {
        let rate = 256.0;
        let xs: Vec<f64> = (0..512)
            .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / rate).sin())
            .collect();
        let out = resample_cubic_spline(&rec_from(vec![xs], 256), 500).unwrap();
        let mut worst: f64 = 0.0;
        for j in 50..950 {
            let t = j as f64 / 500.0;
            let truth = (2.0 * std::f64::consts::PI * 10.0 * t).sin();
            worst = worst.max((out.data[[0, j]] - truth).abs());
        }
        assert!(worst < 1e-3, "max deviation {worst}");
    }

    #[test]
    fn passes_through_knots() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 1.7).cos() + x * x * 0.1).collect();
        let s = NaturalCubicSpline::fit(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((s.eval(*x) - y).abs() < 1e-12);
        }
        assert_eq!(s.eval_sorted(&xs).len(), xs.len());
    }

    #[test]
    fn too_few_samples() {
        let r = rec_from(vec![vec![1.0, 2.0, 3.0]], 256);
        assert!(matches!(
            resample_cubic_spline(&r, 500),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn natural_end_conditions() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let ys = vec![0.0, 1.0, 4.0, 9.0, 16.0, 25.0, 36.0, 49.0];
        let s = NaturalCubicSpline::fit(&xs, &ys).unwrap();
        assert_eq!(s.m[0], 0.0);
        assert_eq!(s.m[7], 0.0);
    }
}
