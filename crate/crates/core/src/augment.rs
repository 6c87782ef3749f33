//! Synthetic PPR windows from pairs of same-type windows, and class
//! rebalancing of training folds.
//!
//! A synthetic window alternates equal-length segments of two parents `A`
//! and `B` (A, B, A, ...). Around every cut point `x` five samples blend the
//! segment that ends at `x` into the one that starts there:
//!
//! ```text
//! C(x-2) = end(x-2)
//! C(x-1) = 0.75 end(x-1) + 0.25 start(x-1)
//! C(x)   = 0.50 end(x)   + 0.50 start(x)
//! C(x+1) = 0.25 end(x+1) + 0.75 start(x+1)
//! C(x+2) = start(x+2)
//! ```
//!
//! The same cut points are used on every channel.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use log::warn;
use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng};
use crate::signal::{Label, PprType, Window, WindowKey, WindowSource};

/// Subject id carried by synthetic windows.
pub const SYNTHETIC_SUBJECT: &str = "synthetic";

/// Junction blend weights of the segment that ends at the cut point, for
/// offsets -2..=2. The starting segment gets `1 - w`.
pub const JUNCTION_END_WEIGHTS: [f64; 5] = [1.0, 0.75, 0.5, 0.25, 0.0];

/// Lineage record of one synthetic window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub synthetic_id: u64,
    /// Parents `A` and `B`; segment 0 comes from `A`.
    pub parents: [WindowKey; 2],
    pub cut_points: Vec<usize>,
    pub seed: u64,
    pub ppr_type: Option<PprType>,
}

#[derive(Debug, Clone)]
pub struct MergePlan<'a> {
    pub source_a: &'a Window,
    pub source_b: &'a Window,
    pub num_segments: usize,
    pub cut_points: Vec<usize>,
    pub rng_seed: u64,
}

impl<'a> MergePlan<'a> {
    /// Plan with `num_segments` equal-length segments.
    pub fn equal_segments(
        source_a: &'a Window,
        source_b: &'a Window,
        num_segments: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        if num_segments < 2 {
            return Err(Error::Merge(format!(
                "need at least 2 segments, got {num_segments}"
            )));
        }
        let t = source_a.n_samples();
        let cut_points = (1..num_segments)
            .map(|k| ((k * t) as f64 / num_segments as f64).round() as usize)
            .collect();
        let plan = Self {
            source_a,
            source_b,
            num_segments,
            cut_points,
            rng_seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_cut_points(
        source_a: &'a Window,
        source_b: &'a Window,
        cut_points: Vec<usize>,
        rng_seed: u64,
    ) -> Result<Self> {
        let plan = Self {
            source_a,
            source_b,
            num_segments: cut_points.len() + 1,
            cut_points,
            rng_seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.source_a, self.source_b);
        if a.data.dim() != b.data.dim() {
            return Err(Error::Merge(format!(
                "shape mismatch {:?} vs {:?}",
                a.data.dim(),
                b.data.dim()
            )));
        }
        if a.ppr_type != b.ppr_type {
            return Err(Error::Merge(format!(
                "ppr type mismatch {:?} vs {:?}",
                a.ppr_type, b.ppr_type
            )));
        }
        if a.label != b.label {
            return Err(Error::Merge("label mismatch".into()));
        }
        if self.num_segments != self.cut_points.len() + 1 || self.cut_points.is_empty() {
            return Err(Error::Merge("need at least one cut point".into()));
        }
        let t = a.n_samples();
        for (i, &x) in self.cut_points.iter().enumerate() {
            if x < 1 || x + 2 > t {
                return Err(Error::Merge(format!("cut point {x} not interior to (0, {t})")));
            }
            // Junction neighbourhoods must not collide.
            if i > 0 && x < self.cut_points[i - 1] + 3 {
                return Err(Error::Merge(format!(
                    "cut points {} and {x} are closer than 3 samples",
                    self.cut_points[i - 1]
                )));
            }
        }
        Ok(())
    }
}

/// Which parent each sample comes from before smoothing: 0 for `A`, 1 for `B`.
pub fn segment_mask(samples: usize, cut_points: &[usize]) -> Vec<u8> {
    let mut mask = vec![0u8; samples];
    let mut seg = 0usize;
    for (t, m) in mask.iter_mut().enumerate() {
        while seg < cut_points.len() && cut_points[seg] <= t {
            seg += 1;
        }
        *m = (seg % 2) as u8;
    }
    mask
}

/// Merges the two parents of `plan` into one synthetic window.
pub fn merge_windows(plan: &MergePlan<'_>, synthetic_id: u64) -> Result<Window> {
    plan.validate()?;
    let (a, b) = (plan.source_a, plan.source_b);
    let parents = match (a.key(), b.key()) {
        (Some(ka), Some(kb)) => [ka, kb],
        _ => return Err(Error::Merge("parents must be real windows".into())),
    };
    let (c, t) = a.data.dim();
    let mask = segment_mask(t, &plan.cut_points);
    let parent = |p: u8| if p == 0 { &a.data } else { &b.data };

    let mut data = Array2::<f32>::zeros((c, t));
    for ch in 0..c {
        for s in 0..t {
            data[[ch, s]] = parent(mask[s])[[ch, s]];
        }
        for &x in &plan.cut_points {
            let end = parent(mask[x - 1]);
            let start = parent(mask[x]);
            for (off, w) in (-1isize..=1).zip(&JUNCTION_END_WEIGHTS[1..4]) {
                let s = (x as isize + off) as usize;
                let w = *w as f32;
                data[[ch, s]] = w * end[[ch, s]] + (1.0 - w) * start[[ch, s]];
            }
        }
    }

    Ok(Window {
        data,
        label: a.label,
        subject_id: SYNTHETIC_SUBJECT.to_string(),
        start_s: a.start_s,
        ppr_type: a.ppr_type,
        source: WindowSource::Synthetic(Box::new(Provenance {
            synthetic_id,
            parents,
            cut_points: plan.cut_points.clone(),
            seed: plan.rng_seed,
            ppr_type: a.ppr_type,
        })),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    /// Anomaly windows in the balanced fold.
    pub target_ppr: usize,
    /// Total windows in the balanced fold.
    pub target_total: usize,
    pub num_segments: usize,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            target_ppr: 3000,
            target_total: 7500,
            num_segments: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub real_anomalies: usize,
    pub synthetic_anomalies: usize,
    pub normals_kept: usize,
    pub normals_available: usize,
    /// Synthetics generated per window type letter ('-' for untyped).
    pub synthetics_per_type: BTreeMap<char, usize>,
}

/// Splits `demand` over groups proportionally to `weights` (largest
/// remainder, ties to the earlier group).
fn apportion(demand: usize, weights: &[usize]) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut shares: Vec<usize> = weights.iter().map(|w| demand * w / total).collect();
    let mut left = demand - shares.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((demand * weights[i]) % total));
    for i in order {
        if left == 0 {
            break;
        }
        if weights[i] > 0 {
            shares[i] += 1;
            left -= 1;
        }
    }
    shares
}

/// Oversamples anomalies with synthetic merges and undersamples normals so the
/// fold holds exactly `target_ppr` anomalies out of `target_total` windows.
///
/// Parents are drawn only from `fold`. Types with fewer than two members do
/// not produce synthetics; their share of the demand goes to the other types.
pub fn balance_training_fold<W: Borrow<Window>>(
    fold: &[W],
    cfg: &BalanceConfig,
    seed: u64,
) -> Result<(Vec<Window>, BalanceSummary)> {
    if cfg.target_ppr > cfg.target_total {
        return Err(Error::Config(format!(
            "target_ppr {} exceeds target_total {}",
            cfg.target_ppr, cfg.target_total
        )));
    }
    let anomalies: Vec<&Window> = fold
        .iter()
        .map(Borrow::borrow)
        .filter(|w| w.label == Label::Anomaly && !w.is_synthetic())
        .collect();
    let normals: Vec<&Window> = fold.iter().map(Borrow::borrow).filter(|w| w.label == Label::Normal).collect();

    let mut summary = BalanceSummary {
        real_anomalies: anomalies.len(),
        normals_available: normals.len(),
        ..Default::default()
    };
    let mut out: Vec<Window> = Vec::with_capacity(cfg.target_total);

    let target_normal = cfg.target_total - cfg.target_ppr;
    let mut r = rng(derive_seed(seed, "undersample", &[]));
    if normals.len() <= target_normal {
        if normals.len() < target_normal {
            warn!(
                "only {} normal windows available, {} requested; keeping all",
                normals.len(),
                target_normal
            );
        }
        out.extend(normals.iter().map(|w| (*w).clone()));
    } else {
        let mut idx = sample(&mut r, normals.len(), target_normal).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| normals[i].clone()));
    }
    summary.normals_kept = out.len();

    if anomalies.len() >= cfg.target_ppr {
        let mut r = rng(derive_seed(seed, "anomaly-subsample", &[]));
        let mut idx = sample(&mut r, anomalies.len(), cfg.target_ppr).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| anomalies[i].clone()));
        return Ok((out, summary));
    }

    let mut groups: BTreeMap<Option<PprType>, Vec<&Window>> = BTreeMap::new();
    for w in &anomalies {
        groups.entry(w.ppr_type).or_default().push(w);
    }
    let keys: Vec<Option<PprType>> = groups.keys().copied().collect();
    let weights: Vec<usize> = keys
        .iter()
        .map(|k| {
            let n = groups[k].len();
            if n >= 2 {
                n
            } else {
                0
            }
        })
        .collect();
    if weights.iter().all(|&w| w == 0) {
        return Err(Error::AugmentationImpossible(format!(
            "no window type has two members among {} anomaly windows",
            anomalies.len()
        )));
    }
    let demand = cfg.target_ppr - anomalies.len();
    let shares = apportion(demand, &weights);

    // (group, call index) pairs in a fixed order; each call owns a sub-seed.
    let calls: Vec<(usize, u64)> = shares
        .iter()
        .enumerate()
        .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
        .enumerate()
        .map(|(call, g)| (g, call as u64))
        .collect();
    let synthetics: Vec<Window> = calls
        .par_iter()
        .map(|&(g, call)| {
            let pool = &groups[&keys[g]];
            let sub_seed = derive_seed(seed, "merge", &[call]);
            let mut r = rng(sub_seed);
            let ia = r.random_range(0..pool.len());
            let mut ib = r.random_range(0..pool.len() - 1);
            if ib >= ia {
                ib += 1;
            }
            let plan = MergePlan::equal_segments(pool[ia], pool[ib], cfg.num_segments, sub_seed)?;
            merge_windows(&plan, call)
        })
        .collect::<Result<_>>()?;

    for (k, &n) in keys.iter().zip(&shares) {
        let letter = k.map(PprType::letter).unwrap_or('-');
        summary.synthetics_per_type.insert(letter, n);
    }
    summary.synthetic_anomalies = synthetics.len();
    out.extend(anomalies.iter().map(|w| (*w).clone()));
    out.extend(synthetics);
    Ok((out, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn win(value: f32, ty: Option<PprType>, idx: u64, c: usize, t: usize) -> Window {
        Window {
            data: Array2::from_elem((c, t), value),
            label: if ty.is_some() { Label::Anomaly } else { Label::Normal },
            subject_id: "p1".into(),
            start_s: idx as f64 * 0.1,
            ppr_type: ty,
            source: WindowSource::Real { index: idx },
        }
    }

    #[test]
    fn constant_junction() {
        let a = win(1.0, Some(PprType::InteriorC), 0, 1, 20);
        let b = win(0.0, Some(PprType::InteriorC), 1, 1, 20);
        let plan = MergePlan::with_cut_points(&a, &b, vec![10], 3).unwrap();
        let c = merge_windows(&plan, 0).unwrap();
        let got: Vec<f32> = (8..=12).map(|s| c.data[[0, s]]).collect();
        assert_eq!(got, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn identical_parents() {
        let mut a = win(0.0, Some(PprType::OnsetA), 0, 3, 50);
        a.data = Array2::from_shape_fn((3, 50), |(c, t)| (c as f32 - 1.3) * (t as f32).sin());
        let mut b = a.clone();
        b.source = WindowSource::Real { index: 9 };
        let plan = MergePlan::equal_segments(&a, &b, 5, 1).unwrap();
        assert_eq!(merge_windows(&plan, 0).unwrap().data, a.data);
    }

    #[test]
    fn channels_share_cut_points() {
        let mut a = win(0.0, Some(PprType::WholeD), 0, 2, 100);
        let mut b = win(0.0, Some(PprType::WholeD), 1, 2, 100);
        a.data = Array2::from_shape_fn((2, 100), |(c, _)| 10.0 + c as f32);
        b.data = Array2::from_shape_fn((2, 100), |(c, _)| -10.0 - c as f32);
        let plan = MergePlan::equal_segments(&a, &b, 5, 1).unwrap();
        assert_eq!(plan.cut_points, vec![20, 40, 60, 80]);
        let out = merge_windows(&plan, 0).unwrap();
        let mask = segment_mask(100, &plan.cut_points);
        for ch in 0..2 {
            for t in 0..100 {
                let near_cut = plan.cut_points.iter().any(|&x| t + 1 >= x && t <= x + 1);
                if near_cut {
                    continue;
                }
                let expected = if mask[t] == 0 { a.data[[ch, t]] } else { b.data[[ch, t]] };
                assert_eq!(out.data[[ch, t]], expected, "ch {ch} t {t}");
            }
        }
    }

    #[test]
    fn mismatched_sources() {
        let a = win(1.0, Some(PprType::OnsetA), 0, 1, 20);
        let b = win(0.0, Some(PprType::OffsetB), 1, 1, 20);
        assert!(matches!(
            MergePlan::equal_segments(&a, &b, 5, 0),
            Err(Error::Merge(_))
        ));
        let c = win(0.0, Some(PprType::OnsetA), 1, 2, 20);
        assert!(MergePlan::equal_segments(&a, &c, 5, 0).is_err());
        let d = win(0.0, Some(PprType::OnsetA), 1, 1, 20);
        assert!(MergePlan::with_cut_points(&a, &d, vec![0], 0).is_err());
        assert!(MergePlan::with_cut_points(&a, &d, vec![5, 6], 0).is_err());
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(10, &[1, 1, 1]).iter().sum::<usize>(), 10);
        assert_eq!(apportion(7, &[0, 2, 5]), vec![0, 2, 5]);
        assert_eq!(apportion(5, &[0, 0, 3]), vec![0, 0, 5]);
    }

    #[test]
    fn single_anomaly_is_impossible() {
        let mut fold: Vec<Window> = (0..20).map(|i| win(0.0, None, i, 1, 20)).collect();
        fold.push(win(1.0, Some(PprType::OnsetA), 99, 1, 20));
        let cfg = BalanceConfig {
            target_ppr: 10,
            target_total: 25,
            num_segments: 5,
        };
        assert!(matches!(
            balance_training_fold(&fold, &cfg, 1),
            Err(Error::AugmentationImpossible(_))
        ));
    }

    #[test]
    fn enough_real_anomalies_means_no_synthetics() {
        let mut fold: Vec<Window> = (0..30).map(|i| win(0.0, None, i, 1, 20)).collect();
        fold.extend((0..12).map(|i| win(1.0, Some(PprType::InteriorC), 100 + i, 1, 20)));
        let cfg = BalanceConfig {
            target_ppr: 10,
            target_total: 25,
            num_segments: 5,
        };
        let (out, summary) = balance_training_fold(&fold, &cfg, 1).unwrap();
        assert_eq!(summary.synthetic_anomalies, 0);
        assert!(out.iter().all(|w| !w.is_synthetic()));
        assert_eq!(out.iter().filter(|w| w.label.is_anomaly()).count(), 10);
        assert_eq!(out.len(), 25);
    }

    #[test]
    fn singleton_type_demand_moves_elsewhere() {
        let mut fold: Vec<Window> = (0..30).map(|i| win(0.0, None, i, 1, 20)).collect();
        fold.push(win(1.0, Some(PprType::WholeD), 50, 1, 20));
        fold.extend((0..3).map(|i| win(1.0, Some(PprType::OnsetA), 60 + i, 1, 20)));
        let cfg = BalanceConfig {
            target_ppr: 12,
            target_total: 30,
            num_segments: 5,
        };
        let (out, summary) = balance_training_fold(&fold, &cfg, 4).unwrap();
        assert_eq!(summary.synthetics_per_type[&'a'], 8);
        assert_eq!(summary.synthetics_per_type[&'d'], 0);
        assert_eq!(out.iter().filter(|w| w.label.is_anomaly()).count(), 12);
        assert_eq!(out.len(), 30);
    }

    #[test]
    fn too_few_normals_keeps_all() {
        let mut fold: Vec<Window> = (0..5).map(|i| win(0.0, None, i, 1, 20)).collect();
        fold.extend((0..3).map(|i| win(1.0, Some(PprType::OnsetA), 60 + i, 1, 20)));
        let cfg = BalanceConfig {
            target_ppr: 6,
            target_total: 20,
            num_segments: 2,
        };
        let (out, summary) = balance_training_fold(&fold, &cfg, 4).unwrap();
        assert_eq!(summary.normals_kept, 5);
        assert_eq!(out.len(), 11);
    }
}
