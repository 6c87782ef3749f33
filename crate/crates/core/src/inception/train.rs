//! Mini-batch Adam training with early stopping on a held-out split.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{Batch, Entry, HeadKind, InceptionNetwork};
use super::{InceptionConfig, Real};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng};
use crate::signal::{Label, Window};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn source_default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
        }
    }

    pub fn tuning_default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 50,
            ..Self::source_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
}

/// Indexed labelled inputs the trainer draws batches from.
pub trait BatchSource<F: Real> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> Label;

    /// Network entry for the selected items, in order.
    fn entry(&self, indices: &[usize]) -> Entry<F>;
}

/// Raw windows fed from position 0.
pub struct WindowSource<'a> {
    windows: Vec<&'a Window>,
    arch: InceptionConfig,
}

impl<'a> WindowSource<'a> {
    pub fn new(windows: impl IntoIterator<Item = &'a Window>, arch: InceptionConfig) -> Self {
        Self {
            windows: windows.into_iter().collect(),
            arch,
        }
    }
}

impl<F: Real> BatchSource<F> for WindowSource<'_> {
    fn len(&self) -> usize {
        self.windows.len()
    }

    fn label(&self, i: usize) -> Label {
        self.windows[i].label
    }

    fn entry(&self, indices: &[usize]) -> Entry<F> {
        let first = self.windows[indices[0]];
        let (c, t) = (first.n_channels(), first.n_samples());
        let mut data = Vec::with_capacity(indices.len() * c * t);
        for &i in indices {
            data.extend(self.arch.window_input::<F>(self.windows[i]));
        }
        Entry::raw(Batch {
            n: indices.len(),
            c,
            t,
            data,
        })
    }
}

/// Stratified shuffle split into `(train, validation)` index lists.
pub fn stratified_split<F: Real>(
    source: &dyn BatchSource<F>,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng(derive_seed(seed, "split", &[]));
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in [Label::Normal, Label::Anomaly] {
        let mut idx: Vec<usize> = (0..source.len()).filter(|&i| source.label(i) == label).collect();
        idx.shuffle(&mut r);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn labels_of<F: Real>(source: &dyn BatchSource<F>, idx: &[usize]) -> Vec<Label> {
    idx.iter().map(|&i| source.label(i)).collect()
}

/// Fails unless `source` holds both labels.
pub fn check_two_classes<F: Real>(source: &dyn BatchSource<F>) -> Result<()> {
    if source.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let anomalies = (0..source.len()).filter(|&i| source.label(i).is_anomaly()).count();
    if anomalies == 0 || anomalies == source.len() {
        return Err(Error::InsufficientData(format!(
            "training set of {} windows holds a single class",
            source.len()
        )));
    }
    Ok(())
}

/// Mean inference-mode loss over `idx`.
fn evaluate_loss<F: Real>(
    net: &mut InceptionNetwork<F>,
    source: &dyn BatchSource<F>,
    idx: &[usize],
    batch: usize,
) -> f64 {
    let mut total = 0.0;
    for chunk in idx.chunks(batch) {
        let trace = net.forward(source.entry(chunk), false);
        let labels = labels_of(source, chunk);
        total += net.loss(&trace, &labels).to_f64().unwrap() * chunk.len() as f64;
    }
    total / idx.len() as f64
}

/// Trains the non-frozen parameters of `net` on `source`, restoring the
/// parameters of the epoch with the best validation loss.
pub fn fit<F: Real>(
    net: &mut InceptionNetwork<F>,
    source: &dyn BatchSource<F>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    check_two_classes(source)?;
    if cfg.max_epochs == 0 {
        return Ok(Vec::new());
    }
    let (mut train_idx, val_idx) = stratified_split(source, cfg.validation_fraction, seed);
    let lr = F::from_f64(cfg.learning_rate).unwrap();
    let (b1, b2) = (F::from_f64(cfg.beta1).unwrap(), F::from_f64(cfg.beta2).unwrap());
    let eps = F::from_f64(cfg.epsilon).unwrap();
    for (_, _, p) in net.params_mut() {
        p.reset_moments();
    }

    let mut step: i32 = 0;
    let mut trace = Vec::new();
    let mut best: Option<(f64, InceptionNetwork<F>)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng(derive_seed(seed, "epoch", &[epoch as u64])));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (bi, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            let labels = labels_of(source, chunk);
            net.zero_grad();
            let t = net.forward(source.entry(chunk), true);
            let loss = net.loss(&t, &labels).to_f64().unwrap();
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {bi} (batch size {})",
                    chunk.len()
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += t
                .probs
                .chunks_exact(2)
                .zip(&labels)
                .filter(|(p, l)| decide(p[0], p[1]) == **l)
                .count();
            net.backward(&t, &labels);
            step += 1;
            let bc1 = F::one() - b1.powi(step);
            let bc2 = F::one() - b2.powi(step);
            let frozen = net.frozen.clone();
            for (layer, name, p) in net.params_mut() {
                if frozen.contains(&layer) {
                    continue;
                }
                if p.grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient in {name} at epoch {epoch}, batch {bi}"
                    )));
                }
                p.adam_step(lr, b1, b2, eps, bc1, bc2);
            }
        }
        let n = train_idx.len() as f64;
        let val_loss = (!val_idx.is_empty()).then(|| evaluate_loss(net, source, &val_idx, cfg.batch_size));
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
        };
        debug!(
            "epoch {epoch}: loss {:.5} acc {:.4} val {:?}",
            stats.train_loss, stats.train_accuracy, stats.val_loss
        );
        trace.push(stats);
        let monitored = val_loss.unwrap_or(stats.train_loss);
        if !monitored.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        match &best {
            Some((b, _)) if monitored >= *b => {
                since_best += 1;
                if since_best >= cfg.patience {
                    info!("early stop after epoch {epoch}");
                    break;
                }
            }
            _ => {
                best = Some((monitored, net.clone()));
                since_best = 0;
            }
        }
    }
    if let Some((_, b)) = best {
        *net = b;
    }
    net.zero_grad();
    Ok(trace)
}

/// Decision rule on a `[normal, anomaly]` pair: ties go to Anomaly.
pub fn decide<F: Real>(p_normal: F, p_anomaly: F) -> Label {
    if p_anomaly >= p_normal {
        Label::Anomaly
    } else {
        Label::Normal
    }
}

/// Inference-mode probabilities for every item of `source`.
pub fn predict_source<F: Real>(
    net: &mut InceptionNetwork<F>,
    source: &dyn BatchSource<F>,
    batch: usize,
) -> Vec<[F; 2]> {
    let idx: Vec<usize> = (0..source.len()).collect();
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch.max(1)) {
        out.extend(net.predict_entry(source.entry(chunk)));
    }
    out
}

pub struct TrainedNetwork<F> {
    pub network: InceptionNetwork<F>,
    pub trace: Vec<EpochStats>,
}

/// Builds a fresh softmax-headed network from `seed` and trains it on
/// `windows`.
pub fn train_network<F: Real>(
    windows: &[Window],
    arch: InceptionConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedNetwork<F>> {
    let source = WindowSource::new(windows, arch);
    check_two_classes::<F>(&source)?;
    let mut network = InceptionNetwork::new(arch, HeadKind::Softmax, seed)?;
    let first = &windows[0];
    network.check_input(&Batch::<F> {
        n: 1,
        c: first.n_channels(),
        t: first.n_samples(),
        data: vec![F::zero(); first.data.len()],
    })?;
    let trace = fit(&mut network, &source, cfg, derive_seed(seed, "fit", &[]))?;
    Ok(TrainedNetwork { network, trace })
}
