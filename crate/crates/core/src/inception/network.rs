use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::layers::{maxpool3_argmax, maxpool3_backward, maxpool3_forward, BatchNorm, BatchNormCache, Conv1d, Dense, Param};
use super::{InceptionConfig, Real};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng, Rng};
use crate::signal::Label;

pub const BLOCKS: usize = 2;
pub const MODULES_PER_BLOCK: usize = 3;
/// Number of Inception modules in the network.
pub const POSITIONS: usize = BLOCKS * MODULES_PER_BLOCK;

/// Addressable layer of an Inception network, the unit of freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerId {
    /// Inception module `index` (0-based) of residual block `block` (0-based).
    Module { block: u8, index: u8 },
    /// Shortcut projection of residual block `block`.
    Shortcut { block: u8 },
    GlobalAvgPool,
    Head,
}

impl LayerId {
    pub fn all() -> Vec<LayerId> {
        let mut v = Vec::new();
        for b in 0..BLOCKS as u8 {
            for i in 0..MODULES_PER_BLOCK as u8 {
                v.push(LayerId::Module { block: b, index: i });
            }
            v.push(LayerId::Shortcut { block: b });
        }
        v.push(LayerId::GlobalAvgPool);
        v.push(LayerId::Head);
        v
    }

    fn module_at(pos: usize) -> LayerId {
        LayerId::Module {
            block: (pos / MODULES_PER_BLOCK) as u8,
            index: (pos % MODULES_PER_BLOCK) as u8,
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerId::Module { block, index } => write!(f, "b{}.m{}", block + 1, index + 1),
            LayerId::Shortcut { block } => write!(f, "b{}.shortcut", block + 1),
            LayerId::GlobalAvgPool => write!(f, "gap"),
            LayerId::Head => write!(f, "head"),
        }
    }
}

impl std::str::FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerId::all()
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer id `{s}`")))
    }
}

/// Output head: two-way softmax, or the single sigmoid unit used after
/// transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Softmax,
    Sigmoid,
}

impl HeadKind {
    fn units(self) -> usize {
        match self {
            HeadKind::Softmax => 2,
            HeadKind::Sigmoid => 1,
        }
    }
}

/// `n` samples of `[c, t]`, contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub data: Vec<F>,
}

impl<F: Real> Batch<F> {
    pub fn zeros(n: usize, c: usize, t: usize) -> Self {
        Self {
            n,
            c,
            t,
            data: vec![F::zero(); n * c * t],
        }
    }

    pub fn from_samples<'a, I: IntoIterator<Item = &'a [F]>>(c: usize, t: usize, samples: I) -> Self {
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            assert_eq!(s.len(), c * t, "sample length");
            data.extend_from_slice(s);
            n += 1;
        }
        Self { n, c, t, data }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.t
    }

    pub fn sample(&self, i: usize) -> &[F] {
        &self.data[i * self.sample_len()..(i + 1) * self.sample_len()]
    }
}

/// Activations entering the network at module position `pos`.
///
/// `cur` is the input of module `pos`; `block_input` is the input of the
/// enclosing residual block and is only present when `pos` is not the first
/// module of a block. `pos == POSITIONS` means `cur` is the last block output.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry<F> {
    pub pos: usize,
    pub block_input: Option<Batch<F>>,
    pub cur: Batch<F>,
}

impl<F: Real> Entry<F> {
    pub fn raw(input: Batch<F>) -> Self {
        Self {
            pos: 0,
            block_input: None,
            cur: input,
        }
    }

    /// Per-sample rows `(cur, block_input)`, used to cache frozen features.
    pub fn split(self) -> Vec<(Vec<F>, Option<Vec<F>>)> {
        (0..self.cur.n)
            .map(|i| {
                (
                    self.cur.sample(i).to_vec(),
                    self.block_input.as_ref().map(|b| b.sample(i).to_vec()),
                )
            })
            .collect()
    }

    /// Inverse of [`Entry::split`] for a selection of cached rows.
    pub fn gather(pos: usize, c_cur: usize, c_block: usize, t: usize, rows: &[&(Vec<F>, Option<Vec<F>>)]) -> Self {
        let cur = Batch::from_samples(c_cur, t, rows.iter().map(|r| r.0.as_slice()));
        let block_input = if rows.first().is_some_and(|r| r.1.is_some()) {
            Some(Batch::from_samples(
                c_block,
                t,
                rows.iter().map(|r| r.1.as_deref().expect("uniform cache rows")),
            ))
        } else {
            None
        };
        Self {
            pos,
            block_input,
            cur,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InceptionModule<F> {
    pub in_ch: usize,
    pub bottleneck: Conv1d<F>,
    pub branches: [Conv1d<F>; 3],
    pub pool_conv: Conv1d<F>,
    pub fusion: Conv1d<F>,
    pub bn: BatchNorm<F>,
}

struct ModuleCache<F> {
    bottleneck: Vec<F>,
    pooled: Vec<F>,
    concat: Vec<F>,
    bn: BatchNormCache<F>,
    out: Vec<F>,
}

impl<F: Real> InceptionModule<F> {
    fn new(in_ch: usize, cfg: &InceptionConfig, rng: &mut Rng) -> Self {
        let f = cfg.filters;
        let fb = cfg.bottleneck;
        Self {
            in_ch,
            bottleneck: Conv1d::new(in_ch, fb, 1, rng),
            branches: [
                Conv1d::new(fb, f, cfg.kernel_sizes[0], rng),
                Conv1d::new(fb, f, cfg.kernel_sizes[1], rng),
                Conv1d::new(fb, f, cfg.kernel_sizes[2], rng),
            ],
            pool_conv: Conv1d::new(in_ch, f, 1, rng),
            fusion: Conv1d::new(4 * f, 4 * f, 1, rng),
            bn: BatchNorm::new(4 * f),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.fusion.out_ch
    }

    fn forward(&mut self, x: &Batch<F>, training: bool) -> (Batch<F>, ModuleCache<F>) {
        let (n, t) = (x.n, x.t);
        let fb = self.bottleneck.out_ch;
        let f = self.pool_conv.out_ch;
        let cat_ch = 4 * f;
        let mut bottleneck = vec![F::zero(); n * fb * t];
        let mut pooled = vec![F::zero(); n * self.in_ch * t];
        let mut concat = vec![F::zero(); n * cat_ch * t];
        let mut fused = vec![F::zero(); n * cat_ch * t];
        for b in 0..n {
            let xs = x.sample(b);
            let bo = &mut bottleneck[b * fb * t..(b + 1) * fb * t];
            self.bottleneck.forward(xs, t, bo);
            let cat = &mut concat[b * cat_ch * t..(b + 1) * cat_ch * t];
            for (k, conv) in self.branches.iter().enumerate() {
                conv.forward(bo, t, &mut cat[k * f * t..(k + 1) * f * t]);
            }
            let po = &mut pooled[b * self.in_ch * t..(b + 1) * self.in_ch * t];
            maxpool3_forward(xs, self.in_ch, t, po);
            self.pool_conv.forward(po, t, &mut cat[3 * f * t..4 * f * t]);
            self.fusion
                .forward(cat, t, &mut fused[b * cat_ch * t..(b + 1) * cat_ch * t]);
        }
        let mut out = vec![F::zero(); fused.len()];
        let bn = self.bn.forward(&fused, n, t, training, &mut out);
        for v in out.iter_mut() {
            if *v < F::zero() {
                *v = F::zero();
            }
        }
        let batch = Batch {
            n,
            c: cat_ch,
            t,
            data: out.clone(),
        };
        (
            batch,
            ModuleCache {
                bottleneck,
                pooled,
                concat,
                bn,
                out,
            },
        )
    }

    /// Back-propagates `dout`; returns the input gradient when `need_dx`.
    fn backward(
        &mut self,
        x: &Batch<F>,
        cache: &ModuleCache<F>,
        dout: &[F],
        accumulate: bool,
        need_dx: bool,
    ) -> Option<Vec<F>> {
        let (n, t) = (x.n, x.t);
        let fb = self.bottleneck.out_ch;
        let f = self.pool_conv.out_ch;
        let cat_ch = 4 * f;
        let mut dfused: Vec<F> = dout
            .iter()
            .zip(&cache.out)
            .map(|(&d, &o)| if o > F::zero() { d } else { F::zero() })
            .collect();
        dfused = self.bn.backward(&cache.bn, &dfused, n, t, accumulate);

        let mut dx = need_dx.then(|| vec![F::zero(); n * self.in_ch * t]);
        let mut dcat = vec![F::zero(); cat_ch * t];
        let mut dbott = vec![F::zero(); fb * t];
        let mut dpooled = vec![F::zero(); self.in_ch * t];
        for b in 0..n {
            let cat = &cache.concat[b * cat_ch * t..(b + 1) * cat_ch * t];
            let dfu = &dfused[b * cat_ch * t..(b + 1) * cat_ch * t];
            dcat.iter_mut().for_each(|v| *v = F::zero());
            self.fusion.backward(cat, dfu, t, Some(&mut dcat), accumulate);

            let bo = &cache.bottleneck[b * fb * t..(b + 1) * fb * t];
            dbott.iter_mut().for_each(|v| *v = F::zero());
            for (k, conv) in self.branches.iter_mut().enumerate() {
                conv.backward(bo, &dcat[k * f * t..(k + 1) * f * t], t, Some(&mut dbott), accumulate);
            }
            let po = &cache.pooled[b * self.in_ch * t..(b + 1) * self.in_ch * t];
            let dcat_pool = &dcat[3 * f * t..4 * f * t];
            if need_dx {
                dpooled.iter_mut().for_each(|v| *v = F::zero());
                self.pool_conv
                    .backward(po, dcat_pool, t, Some(&mut dpooled), accumulate);
            } else {
                self.pool_conv.backward(po, dcat_pool, t, None, accumulate);
            }

            let xs = x.sample(b);
            match dx.as_mut() {
                Some(dx) => {
                    let dxs = &mut dx[b * self.in_ch * t..(b + 1) * self.in_ch * t];
                    self.bottleneck.backward(xs, &dbott, t, Some(dxs), accumulate);
                    maxpool3_backward(xs, &dpooled, self.in_ch, t, dxs);
                }
                None => self.bottleneck.backward(xs, &dbott, t, None, accumulate),
            }
        }
        dx
    }

    fn params(&self) -> Vec<(&'static str, &Param<F>)> {
        vec![
            ("bottleneck.w", &self.bottleneck.weight),
            ("branch1.w", &self.branches[0].weight),
            ("branch2.w", &self.branches[1].weight),
            ("branch3.w", &self.branches[2].weight),
            ("pool_conv.w", &self.pool_conv.weight),
            ("fusion.w", &self.fusion.weight),
            ("bn.gamma", &self.bn.gamma),
            ("bn.beta", &self.bn.beta),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<F>)> {
        let [b1, b2, b3] = &mut self.branches;
        vec![
            ("bottleneck.w", &mut self.bottleneck.weight),
            ("branch1.w", &mut b1.weight),
            ("branch2.w", &mut b2.weight),
            ("branch3.w", &mut b3.weight),
            ("pool_conv.w", &mut self.pool_conv.weight),
            ("fusion.w", &mut self.fusion.weight),
            ("bn.gamma", &mut self.bn.gamma),
            ("bn.beta", &mut self.bn.beta),
        ]
    }
}

/// 1x1 projection plus batch norm carrying the block input to its output.
#[derive(Debug, Clone, PartialEq)]
pub struct Shortcut<F> {
    pub conv: Conv1d<F>,
    pub bn: BatchNorm<F>,
}

struct ShortcutCache<F> {
    bn: BatchNormCache<F>,
}

impl<F: Real> Shortcut<F> {
    fn forward(&mut self, x: &Batch<F>, training: bool) -> (Vec<F>, ShortcutCache<F>) {
        let (n, t) = (x.n, x.t);
        let oc = self.conv.out_ch;
        let mut proj = vec![F::zero(); n * oc * t];
        for b in 0..n {
            self.conv
                .forward(x.sample(b), t, &mut proj[b * oc * t..(b + 1) * oc * t]);
        }
        let mut out = vec![F::zero(); proj.len()];
        let bn = self.bn.forward(&proj, n, t, training, &mut out);
        (out, ShortcutCache { bn })
    }

    fn backward(
        &mut self,
        x: &Batch<F>,
        cache: &ShortcutCache<F>,
        dout: &[F],
        accumulate: bool,
        dx: Option<&mut [F]>,
    ) {
        let (n, t) = (x.n, x.t);
        let oc = self.conv.out_ch;
        let ic = self.conv.in_ch;
        let dproj = self.bn.backward(&cache.bn, dout, n, t, accumulate);
        match dx {
            Some(dx) => {
                for b in 0..n {
                    self.conv.backward(
                        x.sample(b),
                        &dproj[b * oc * t..(b + 1) * oc * t],
                        t,
                        Some(&mut dx[b * ic * t..(b + 1) * ic * t]),
                        accumulate,
                    );
                }
            }
            None if accumulate => {
                for b in 0..n {
                    self.conv
                        .backward(x.sample(b), &dproj[b * oc * t..(b + 1) * oc * t], t, None, true);
                }
            }
            None => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<F> {
    pub modules: [InceptionModule<F>; 3],
    pub shortcut: Shortcut<F>,
}

/// Two residual blocks of three Inception modules, global average pooling
/// and a dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct InceptionNetwork<F> {
    pub config: InceptionConfig,
    pub blocks: [ResidualBlock<F>; 2],
    pub head_kind: HeadKind,
    pub head: Dense<F>,
    pub frozen: BTreeSet<LayerId>,
    pub seed: u64,
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace<F> {
    entry: Entry<F>,
    /// Input of each block that was (partially) run, by block.
    block_inputs: [Option<Batch<F>>; 2],
    /// Input of each module that was run, by position.
    module_inputs: Vec<Option<Batch<F>>>,
    module_caches: Vec<Option<ModuleCache<F>>>,
    shortcut_caches: [Option<ShortcutCache<F>>; 2],
    pooled: Vec<F>,
    logits: Vec<F>,
    /// `[n, 2]` probabilities ordered `[normal, anomaly]`.
    pub probs: Vec<F>,
    pub n: usize,
}

impl<F: Real> Trace<F> {
    /// Digest of the piecewise-linear regime the pass went through: every
    /// ReLU on/off state and every max-pool winner. Two passes with equal
    /// patterns lie on the same smooth piece of the loss.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (x, cache) in self.module_inputs.iter().zip(&self.module_caches) {
            let (Some(x), Some(cache)) = (x, cache) else { continue };
            for row in x.data.chunks_exact(x.t) {
                for s in 0..x.t {
                    feed(maxpool3_argmax(row, s) as u64);
                }
            }
            for &o in &cache.out {
                feed((o > F::zero()) as u64);
            }
        }
        h
    }
}

impl<F: Real> InceptionNetwork<F> {
    pub fn new(config: InceptionConfig, head_kind: HeadKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng(seed);
        let width = 4 * config.filters;
        let make_block = |in_ch: usize, r: &mut Rng| ResidualBlock {
            modules: [
                InceptionModule::new(in_ch, &config, r),
                InceptionModule::new(width, &config, r),
                InceptionModule::new(width, &config, r),
            ],
            shortcut: Shortcut {
                conv: Conv1d::new(in_ch, width, 1, r),
                bn: BatchNorm::new(width),
            },
        };
        let b1 = make_block(config.in_channels, &mut r);
        let b2 = make_block(width, &mut r);
        let head = Dense::new(width, head_kind.units(), &mut r);
        Ok(Self {
            config,
            blocks: [b1, b2],
            head_kind,
            head,
            frozen: BTreeSet::new(),
            seed,
        })
    }

    pub fn width(&self) -> usize {
        4 * self.config.filters
    }

    pub fn module(&self, pos: usize) -> &InceptionModule<F> {
        &self.blocks[pos / MODULES_PER_BLOCK].modules[pos % MODULES_PER_BLOCK]
    }

    fn module_mut(&mut self, pos: usize) -> &mut InceptionModule<F> {
        &mut self.blocks[pos / MODULES_PER_BLOCK].modules[pos % MODULES_PER_BLOCK]
    }

    pub fn is_frozen(&self, layer: LayerId) -> bool {
        self.frozen.contains(&layer)
    }

    pub fn set_frozen(&mut self, frozen: impl IntoIterator<Item = LayerId>) {
        self.frozen = frozen.into_iter().collect();
    }

    /// Replaces the head with a freshly initialized one.
    pub fn rebuild_head(&mut self, kind: HeadKind, seed: u64) {
        let mut r = rng(derive_seed(seed, "head", &[]));
        self.head = Dense::new(self.width(), kind.units(), &mut r);
        self.head_kind = kind;
    }

    /// Number of leading module positions whose outputs do not depend on any
    /// trainable parameter. Features up to that point can be computed once
    /// and reused across epochs.
    pub fn frozen_prefix(&self) -> usize {
        let mut p = 0;
        while p < POSITIONS && self.is_frozen(LayerId::module_at(p)) {
            let block = p / MODULES_PER_BLOCK;
            // Leaving a block also requires its shortcut to be fixed.
            if p % MODULES_PER_BLOCK == MODULES_PER_BLOCK - 1
                && !self.is_frozen(LayerId::Shortcut { block: block as u8 })
            {
                break;
            }
            p += 1;
        }
        p
    }

    /// Runs positions `0..pos` in inference mode.
    pub fn forward_prefix(&mut self, input: Batch<F>, pos: usize) -> Result<Entry<F>> {
        self.check_input(&input)?;
        let mut entry = Entry::raw(input);
        while entry.pos < pos {
            let p = entry.pos;
            let (out, _) = self.module_mut(p).forward(&entry.cur, false);
            let block_input = entry.block_input.take().unwrap_or_else(|| entry.cur.clone());
            if p % MODULES_PER_BLOCK == MODULES_PER_BLOCK - 1 {
                let b = p / MODULES_PER_BLOCK;
                let (s, _) = self.blocks[b].shortcut.forward(&block_input, false);
                let mut out = out;
                out.data.iter_mut().zip(&s).for_each(|(o, &v)| *o += v);
                entry = Entry {
                    pos: p + 1,
                    block_input: None,
                    cur: out,
                };
            } else {
                entry = Entry {
                    pos: p + 1,
                    block_input: Some(block_input),
                    cur: out,
                };
            }
        }
        Ok(entry)
    }

    pub fn check_input(&self, input: &Batch<F>) -> Result<()> {
        if input.c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} channels, got {}",
                self.config.in_channels, input.c
            )));
        }
        let min_t = self.config.min_length();
        if input.t < min_t {
            return Err(Error::Shape(format!(
                "window of {} samples is shorter than the largest kernel ({min_t})",
                input.t
            )));
        }
        if input.data.len() != input.n * input.c * input.t {
            return Err(Error::Shape("batch buffer length mismatch".into()));
        }
        Ok(())
    }

    /// Forward pass from `entry`. Layers that are not frozen run batch norm
    /// with batch statistics when `training` is set.
    pub fn forward(&mut self, entry: Entry<F>, training: bool) -> Trace<F> {
        let n = entry.cur.n;
        let t = entry.cur.t;
        let mut trace = Trace {
            entry: Entry {
                pos: entry.pos,
                block_input: None,
                cur: Batch::zeros(0, 0, 0),
            },
            block_inputs: [None, None],
            module_inputs: (0..POSITIONS).map(|_| None).collect(),
            module_caches: (0..POSITIONS).map(|_| None).collect(),
            shortcut_caches: [None, None],
            pooled: Vec::new(),
            logits: Vec::new(),
            probs: Vec::new(),
            n,
        };
        let start = entry.pos;
        let mut cur = entry.cur;
        if start < POSITIONS {
            let b0 = start / MODULES_PER_BLOCK;
            trace.block_inputs[b0] = Some(entry.block_input.unwrap_or_else(|| cur.clone()));
        }
        for p in start..POSITIONS {
            let b = p / MODULES_PER_BLOCK;
            if p % MODULES_PER_BLOCK == 0 && trace.block_inputs[b].is_none() {
                trace.block_inputs[b] = Some(cur.clone());
            }
            let layer = LayerId::module_at(p);
            let train_here = training && !self.is_frozen(layer);
            let (out, cache) = self.module_mut(p).forward(&cur, train_here);
            trace.module_inputs[p] = Some(cur);
            trace.module_caches[p] = Some(cache);
            cur = out;
            if p % MODULES_PER_BLOCK == MODULES_PER_BLOCK - 1 {
                let train_sc = training && !self.is_frozen(LayerId::Shortcut { block: b as u8 });
                let bi = trace.block_inputs[b].as_ref().expect("block input recorded");
                let (s, sc) = self.blocks[b].shortcut.forward(bi, train_sc);
                cur.data.iter_mut().zip(&s).for_each(|(o, &v)| *o += v);
                trace.shortcut_caches[b] = Some(sc);
            }
        }

        // Global average pooling over time.
        let width = cur.c;
        let inv_t = F::one() / F::from_usize(t).unwrap();
        let mut pooled = vec![F::zero(); n * width];
        for b in 0..n {
            for c in 0..width {
                let row = &cur.data[(b * width + c) * t..(b * width + c + 1) * t];
                pooled[b * width + c] = row.iter().copied().fold(F::zero(), |a, v| a + v) * inv_t;
            }
        }
        let units = self.head_kind.units();
        let mut logits = vec![F::zero(); n * units];
        let mut probs = vec![F::zero(); n * 2];
        for b in 0..n {
            self.head.forward(
                &pooled[b * width..(b + 1) * width],
                &mut logits[b * units..(b + 1) * units],
            );
            let p = probabilities(self.head_kind, &logits[b * units..(b + 1) * units]);
            probs[2 * b] = p[0];
            probs[2 * b + 1] = p[1];
        }
        trace.entry.cur = Batch { n, c: width, t, data: Vec::new() };
        trace.pooled = pooled;
        trace.logits = logits;
        trace.probs = probs;
        trace
    }

    /// Mean cross-entropy of a trace against `labels`.
    pub fn loss(&self, trace: &Trace<F>, labels: &[Label]) -> F {
        let tiny = F::from_f64(1e-30).unwrap();
        let n = F::from_usize(trace.n).unwrap();
        labels
            .iter()
            .enumerate()
            .map(|(b, l)| {
                let p = trace.probs[2 * b + l.index()];
                -(p.max(tiny)).ln()
            })
            .fold(F::zero(), |a, v| a + v)
            / n
    }

    /// Back-propagates the mean cross-entropy loss, accumulating gradients of
    /// every non-frozen parameter.
    pub fn backward(&mut self, trace: &Trace<F>, labels: &[Label]) {
        let n = trace.n;
        let units = self.head_kind.units();
        let nf = F::from_usize(n).unwrap();
        let mut dlogits = vec![F::zero(); n * units];
        for (b, l) in labels.iter().enumerate() {
            match self.head_kind {
                HeadKind::Softmax => {
                    for u in 0..2 {
                        let target = if u == l.index() { F::one() } else { F::zero() };
                        dlogits[b * 2 + u] = (trace.probs[2 * b + u] - target) / nf;
                    }
                }
                HeadKind::Sigmoid => {
                    let y = if l.is_anomaly() { F::one() } else { F::zero() };
                    dlogits[b] = (trace.probs[2 * b + 1] - y) / nf;
                }
            }
        }

        let width = self.width();
        let t = trace.entry.cur.t;
        let head_train = !self.is_frozen(LayerId::Head);
        let start = trace.entry.pos;
        let need_features = start < POSITIONS;
        let mut dpooled = vec![F::zero(); n * width];
        for b in 0..n {
            self.head.backward(
                &trace.pooled[b * width..(b + 1) * width],
                &dlogits[b * units..(b + 1) * units],
                &mut dpooled[b * width..(b + 1) * width],
                head_train,
            );
        }
        if !need_features {
            return;
        }

        let inv_t = F::one() / F::from_usize(t).unwrap();
        let mut dcur = vec![F::zero(); n * width * t];
        for b in 0..n {
            for c in 0..width {
                let g = dpooled[b * width + c] * inv_t;
                dcur[(b * width + c) * t..(b * width + c + 1) * t]
                    .iter_mut()
                    .for_each(|v| *v = g);
            }
        }

        let first_block = start / MODULES_PER_BLOCK;
        for blk in (first_block..BLOCKS).rev() {
            let lo = if blk == first_block { start } else { blk * MODULES_PER_BLOCK };
            let hi = (blk + 1) * MODULES_PER_BLOCK;
            // The block input gradient is only needed when an earlier block ran.
            let need_block_dx = blk > first_block;
            let dblock_out = dcur.clone();
            let mut dh = dcur;
            for p in (lo..hi).rev() {
                let need_dx = p > lo || need_block_dx;
                let accumulate = !self.is_frozen(LayerId::module_at(p));
                let x = trace.module_inputs[p].as_ref().expect("module ran");
                let cache = trace.module_caches[p].as_ref().expect("module ran");
                let dx = self.module_mut(p).backward(x, cache, &dh, accumulate, need_dx);
                dh = dx.unwrap_or_default();
            }
            let sc_train = !self.is_frozen(LayerId::Shortcut { block: blk as u8 });
            let bi = trace.block_inputs[blk].as_ref().expect("block input recorded");
            let cache = trace.shortcut_caches[blk].as_ref().expect("shortcut ran");
            if need_block_dx {
                // dh is the gradient at the block input through the modules;
                // add the shortcut path.
                self.blocks[blk]
                    .shortcut
                    .backward(bi, cache, &dblock_out, sc_train, Some(&mut dh));
            } else {
                self.blocks[blk]
                    .shortcut
                    .backward(bi, cache, &dblock_out, sc_train, None);
            }
            dcur = dh;
        }
    }

    /// Class probabilities `[normal, anomaly]` for each sample of `input`,
    /// in inference mode.
    pub fn predict_batch(&mut self, input: Batch<F>) -> Result<Vec<[F; 2]>> {
        self.check_input(&input)?;
        Ok(self.predict_entry(Entry::raw(input)))
    }

    pub fn predict_entry(&mut self, entry: Entry<F>) -> Vec<[F; 2]> {
        let trace = self.forward(entry, false);
        trace.probs.chunks_exact(2).map(|p| [p[0], p[1]]).collect()
    }

    /// Probabilities for one `[C, T]` sample.
    pub fn predict(&self, sample: &[F], t: usize) -> Result<[F; 2]> {
        let input = Batch {
            n: 1,
            c: self.config.in_channels,
            t,
            data: sample.to_vec(),
        };
        // Inference never touches running statistics, so a scratch copy keeps
        // `predict` read-only.
        let mut scratch = self.clone();
        Ok(scratch.predict_batch(input)?[0])
    }

    /// Every parameter tensor with its owning layer and a stable name.
    pub fn params(&self) -> Vec<(LayerId, String, &Param<F>)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (mi, m) in block.modules.iter().enumerate() {
                let layer = LayerId::Module {
                    block: bi as u8,
                    index: mi as u8,
                };
                for (name, p) in m.params() {
                    out.push((layer, format!("{layer}.{name}"), p));
                }
            }
            let layer = LayerId::Shortcut { block: bi as u8 };
            out.push((layer, format!("{layer}.conv.w"), &block.shortcut.conv.weight));
            out.push((layer, format!("{layer}.bn.gamma"), &block.shortcut.bn.gamma));
            out.push((layer, format!("{layer}.bn.beta"), &block.shortcut.bn.beta));
        }
        out.push((LayerId::Head, "head.w".into(), &self.head.weight));
        out.push((LayerId::Head, "head.b".into(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(LayerId, String, &mut Param<F>)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (mi, m) in block.modules.iter_mut().enumerate() {
                let layer = LayerId::Module {
                    block: bi as u8,
                    index: mi as u8,
                };
                for (name, p) in m.params_mut() {
                    out.push((layer, format!("{layer}.{name}"), p));
                }
            }
            let layer = LayerId::Shortcut { block: bi as u8 };
            let sc = &mut block.shortcut;
            out.push((layer, format!("{layer}.conv.w"), &mut sc.conv.weight));
            out.push((layer, format!("{layer}.bn.gamma"), &mut sc.bn.gamma));
            out.push((layer, format!("{layer}.bn.beta"), &mut sc.bn.beta));
        }
        out.push((LayerId::Head, "head.w".into(), &mut self.head.weight));
        out.push((LayerId::Head, "head.b".into(), &mut self.head.bias));
        out
    }

    /// Batch-norm layers with their owner, name prefix and running statistics.
    pub fn norm_stats(&self) -> Vec<(LayerId, String, &BatchNorm<F>)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (mi, m) in block.modules.iter().enumerate() {
                let layer = LayerId::Module {
                    block: bi as u8,
                    index: mi as u8,
                };
                out.push((layer, format!("{layer}.bn"), &m.bn));
            }
            let layer = LayerId::Shortcut { block: bi as u8 };
            out.push((layer, format!("{layer}.bn"), &block.shortcut.bn));
        }
        out
    }

    pub fn norm_stats_mut(&mut self) -> Vec<(LayerId, String, &mut BatchNorm<F>)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (mi, m) in block.modules.iter_mut().enumerate() {
                let layer = LayerId::Module {
                    block: bi as u8,
                    index: mi as u8,
                };
                out.push((layer, format!("{layer}.bn"), &mut m.bn));
            }
            let layer = LayerId::Shortcut { block: bi as u8 };
            out.push((layer, format!("{layer}.bn"), &mut block.shortcut.bn));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, _, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, _, p)| p.len()).sum()
    }

    /// FNV-1a digest over the bytes of every parameter and running statistic
    /// of `layer`.
    pub fn layer_checksum(&self, layer: LayerId) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: F| {
            for b in v.to_f64().unwrap().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (l, _, p) in self.params() {
            if l == layer {
                p.value.iter().for_each(|&v| feed(v));
            }
        }
        for (l, _, bn) in self.norm_stats() {
            if l == layer {
                bn.running_mean.iter().for_each(|&v| feed(v));
                bn.running_var.iter().for_each(|&v| feed(v));
            }
        }
        h
    }
}

/// `[normal, anomaly]` probabilities from head logits.
pub fn probabilities<F: Real>(kind: HeadKind, logits: &[F]) -> [F; 2] {
    match kind {
        HeadKind::Softmax => {
            let m = logits[0].max(logits[1]);
            let e0 = (logits[0] - m).exp();
            let e1 = (logits[1] - m).exp();
            let s = e0 + e1;
            [e0 / s, e1 / s]
        }
        HeadKind::Sigmoid => {
            let z = logits[0];
            let p = if z >= F::zero() {
                F::one() / (F::one() + (-z).exp())
            } else {
                let e = z.exp();
                e / (F::one() + e)
            };
            [F::one() - p, p]
        }
    }
}
