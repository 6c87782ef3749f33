//! Inductive transfer: freeze the source-trained feature extractor, rebuild
//! the head and tune the tail on target windows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inception::train::{check_two_classes, predict_source};
use crate::inception::{fit, Batch, BatchSource, Entry, EpochStats, HeadKind, InceptionNetwork, LayerId, Real, TrainConfig};
use crate::seeds::derive_seed;
use crate::signal::{Label, Window};

/// Which layers stay trainable on the target domain and how they are tuned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub tunable_scope: BTreeSet<LayerId>,
    pub head_rebuild: bool,
    pub tuning: TrainConfig,
}

impl Default for TransferPlan {
    fn default() -> Self {
        Self {
            tunable_scope: Self::default_scope(),
            head_rebuild: true,
            tuning: TrainConfig::tuning_default(),
        }
    }
}

impl TransferPlan {
    /// Last two modules of the second block, pooling and head.
    pub fn default_scope() -> BTreeSet<LayerId> {
        [
            LayerId::Module { block: 1, index: 1 },
            LayerId::Module { block: 1, index: 2 },
            LayerId::GlobalAvgPool,
            LayerId::Head,
        ]
        .into_iter()
        .collect()
    }

    /// Parses layer names such as `b2.m3`, `gap`, `head`.
    pub fn scope_from_names<S: AsRef<str>>(names: &[S]) -> Result<BTreeSet<LayerId>> {
        names.iter().map(|n| n.as_ref().trim().parse::<LayerId>()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tunable_scope.is_empty() {
            return Err(Error::Config("tunable scope is empty".into()));
        }
        self.tuning.validate()
    }

    pub fn frozen_layers(&self) -> BTreeSet<LayerId> {
        LayerId::all()
            .into_iter()
            .filter(|l| !self.tunable_scope.contains(l))
            .collect()
    }
}

/// Copies `source`, freezes everything outside the plan's scope and, when
/// asked, swaps in a fresh one-unit sigmoid head.
pub fn apply_transfer<F: Real>(source: &InceptionNetwork<F>, plan: &TransferPlan, seed: u64) -> Result<InceptionNetwork<F>> {
    plan.validate()?;
    let mut net = source.clone();
    if plan.head_rebuild {
        net.rebuild_head(HeadKind::Sigmoid, derive_seed(seed, "transfer-head", &[]));
    }
    net.set_frozen(plan.frozen_layers());
    for (_, _, p) in net.params_mut() {
        p.zero_grad();
        p.reset_moments();
    }
    Ok(net)
}

/// Fails unless every window matches the network input shape.
pub fn check_window_shapes<F: Real>(net: &InceptionNetwork<F>, windows: &[&Window]) -> Result<()> {
    for w in windows {
        net.check_input(&Batch {
            n: 1,
            c: w.n_channels(),
            t: w.n_samples(),
            data: vec![F::zero(); w.data.len()],
        })
        .map_err(|e| Error::Shape(format!("{} window at {:.2} s: {e}", w.subject_id, w.start_s)))?;
    }
    Ok(())
}

/// Activations of the frozen prefix, one row per window.
pub type CachedRow<F> = (Vec<F>, Option<Vec<F>>);

/// Frozen-prefix activations of a set of windows, computed once in
/// inference mode and reusable while the prefix stays frozen.
pub struct FeatureCache<F> {
    pub pos: usize,
    pub c_cur: usize,
    pub c_block: usize,
    pub t: usize,
    pub rows: Vec<CachedRow<F>>,
    pub labels: Vec<Label>,
}

impl<F: Real> FeatureCache<F> {
    pub fn build(net: &mut InceptionNetwork<F>, windows: &[&Window], batch: usize) -> Result<Self> {
        check_window_shapes(net, windows)?;
        let pos = net.frozen_prefix();
        let width = net.width();
        let c_cur = if pos == 0 { net.config.in_channels } else { width };
        let c_block = if pos < 3 { net.config.in_channels } else { width };
        let t = windows.first().map_or(0, |w| w.n_samples());
        let mut rows = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(batch.max(1)) {
            let mut data = Vec::with_capacity(chunk.len() * net.config.in_channels * t);
            for w in chunk {
                data.extend(net.config.window_input::<F>(w));
            }
            let input = Batch {
                n: chunk.len(),
                c: net.config.in_channels,
                t,
                data,
            };
            rows.extend(net.forward_prefix(input, pos)?.split());
        }
        Ok(Self {
            pos,
            c_cur,
            c_block,
            t,
            rows,
            labels: windows.iter().map(|w| w.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Selection of rows from one or more caches sharing the same prefix.
pub struct CachedSource<'a, F> {
    caches: Vec<&'a FeatureCache<F>>,
    items: Vec<(usize, usize)>,
}

impl<'a, F: Real> CachedSource<'a, F> {
    pub fn new() -> Self {
        Self {
            caches: Vec::new(),
            items: Vec::new(),
        }
    }

    /// Adds rows `rows` of `cache`.
    pub fn extend(&mut self, cache: &'a FeatureCache<F>, rows: impl IntoIterator<Item = usize>) {
        if let Some(first) = self.caches.first() {
            assert_eq!(first.pos, cache.pos, "caches at different prefix depths");
        }
        let ci = self.caches.len();
        self.caches.push(cache);
        self.items.extend(rows.into_iter().map(|r| (ci, r)));
    }
}

impl<F: Real> Default for CachedSource<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> BatchSource<F> for CachedSource<'_, F> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, i: usize) -> Label {
        let (c, r) = self.items[i];
        self.caches[c].labels[r]
    }

    fn entry(&self, indices: &[usize]) -> Entry<F> {
        let rows: Vec<&CachedRow<F>> = indices
            .iter()
            .map(|&i| {
                let (c, r) = self.items[i];
                &self.caches[c].rows[r]
            })
            .collect();
        let c0 = self.caches[self.items[indices[0]].0];
        Entry::gather(c0.pos, c0.c_cur, c0.c_block, c0.t, &rows)
    }
}

/// Tunes the non-frozen layers on `windows`.
pub fn tune<F: Real>(
    net: &mut InceptionNetwork<F>,
    windows: &[&Window],
    plan: &TransferPlan,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    plan.validate()?;
    if windows.is_empty() {
        return Err(Error::InsufficientData("tuning set is empty".into()));
    }
    let cache = FeatureCache::build(net, windows, plan.tuning.batch_size.max(64))?;
    let mut source = CachedSource::new();
    source.extend(&cache, 0..cache.len());
    tune_source(net, &source, plan, seed)
}

/// Tunes from an already prepared batch source.
pub fn tune_source<F: Real>(
    net: &mut InceptionNetwork<F>,
    source: &dyn BatchSource<F>,
    plan: &TransferPlan,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    plan.validate()?;
    check_two_classes(source)?;
    fit(net, source, &plan.tuning, derive_seed(seed, "tune", &[]))
}

/// Inference-mode `[normal, anomaly]` probabilities for every cached row.
pub fn predict_cached<F: Real>(net: &mut InceptionNetwork<F>, cache: &FeatureCache<F>, batch: usize) -> Vec<[F; 2]> {
    if cache.is_empty() {
        return Vec::new();
    }
    let mut source = CachedSource::new();
    source.extend(cache, 0..cache.len());
    predict_source(net, &source, batch)
}

/// Bytes of every frozen parameter and running statistic, keyed by tensor.
pub fn frozen_bytes<F: Real>(net: &InceptionNetwork<F>) -> BTreeMap<String, Vec<u8>> {
    let bytes = |v: &[F]| {
        v.iter()
            .flat_map(|x| x.to_f64().unwrap().to_le_bytes())
            .collect::<Vec<u8>>()
    };
    let mut out = BTreeMap::new();
    for (layer, name, p) in net.params() {
        if net.is_frozen(layer) {
            out.insert(name, bytes(&p.value));
        }
    }
    for (layer, name, bn) in net.norm_stats() {
        if net.is_frozen(layer) {
            out.insert(format!("{name}.running_mean"), bytes(&bn.running_mean));
            out.insert(format!("{name}.running_var"), bytes(&bn.running_var));
        }
    }
    out
}

/// Per-layer digests of the frozen layers.
pub fn frozen_checksums<F: Real>(net: &InceptionNetwork<F>) -> BTreeMap<String, u64> {
    net.frozen
        .iter()
        .map(|l| (l.to_string(), net.layer_checksum(*l)))
        .collect()
}

/// Sidecar JSON describing how a checkpoint was transferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferManifest {
    pub tunable_scope: Vec<String>,
    pub frozen: Vec<String>,
    pub head_rebuild: bool,
    pub tuning: TrainConfig,
    pub seed: u64,
    pub frozen_checksums: BTreeMap<String, u64>,
}

impl TransferManifest {
    pub fn new<F: Real>(plan: &TransferPlan, net: &InceptionNetwork<F>, seed: u64) -> Self {
        Self {
            tunable_scope: plan.tunable_scope.iter().map(|l| l.to_string()).collect(),
            frozen: plan.frozen_layers().iter().map(|l| l.to_string()).collect(),
            head_rebuild: plan.head_rebuild,
            tuning: plan.tuning,
            seed,
            frozen_checksums: frozen_checksums(net),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
