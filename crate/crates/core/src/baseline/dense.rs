use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::inception::layers::{Dense, Param};
use crate::inception::train::EpochStats;
use crate::inception::TrainConfig;
use crate::seeds::{derive_seed, rng};
use crate::signal::Label;

/// Hidden-layer widths the comparator is evaluated with.
pub const EVALUATED_WIDTHS: [usize; 5] = [10, 20, 30, 40, 50];

/// One ReLU hidden layer and a sigmoid output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub hidden: Dense<f64>,
    pub output: Dense<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DenseNet {
    pub fn new(inputs: usize, hidden: usize, seed: u64) -> Result<Self> {
        if !EVALUATED_WIDTHS.contains(&hidden) {
            return Err(Error::Config(format!(
                "hidden width {hidden} not in {EVALUATED_WIDTHS:?}"
            )));
        }
        let mut r = rng(derive_seed(seed, "dense-init", &[hidden as u64]));
        Ok(Self {
            hidden: Dense::new(inputs, hidden, &mut r),
            output: Dense::new(hidden, 1, &mut r),
        })
    }

    pub fn width(&self) -> usize {
        self.hidden.out_dim
    }

    /// Anomaly probability.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.width()];
        self.hidden.forward(x, &mut h);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut z = [0.0];
        self.output.forward(&h, &mut z);
        sigmoid(z[0])
    }

    /// Mean binary cross-entropy over the batch; accumulates gradients.
    pub fn loss_and_grad(&mut self, xs: &[&[f64]], labels: &[Label]) -> f64 {
        let n = xs.len() as f64;
        let hdim = self.width();
        let mut loss = 0.0;
        for (x, l) in xs.iter().zip(labels) {
            let mut pre = vec![0.0; hdim];
            self.hidden.forward(x, &mut pre);
            let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            let mut z = [0.0];
            self.output.forward(&h, &mut z);
            let p = sigmoid(z[0]);
            let y = if l.is_anomaly() { 1.0 } else { 0.0 };
            loss -= y * p.max(1e-300).ln() + (1.0 - y) * (1.0 - p).max(1e-300).ln();
            let dz = [(p - y) / n];
            let mut dh = vec![0.0; hdim];
            self.output.backward(&h, &dz, &mut dh, true);
            for (d, &pv) in dh.iter_mut().zip(&pre) {
                if pv <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dx = vec![0.0; x.len()];
            self.hidden.backward(x, &dh, &mut dx, true);
        }
        loss / n
    }

    pub fn loss(&self, xs: &[&[f64]], labels: &[Label]) -> f64 {
        let n = xs.len() as f64;
        xs.iter()
            .zip(labels)
            .map(|(x, l)| {
                let p = self.predict(x);
                if l.is_anomaly() {
                    -p.max(1e-300).ln()
                } else {
                    -(1.0 - p).max(1e-300).ln()
                }
            })
            .sum::<f64>()
            / n
    }

    pub fn params_mut(&mut self) -> [&mut Param<f64>; 4] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }
}

/// Trains a fresh dense network with Adam and validation early stopping.
pub fn train_dense(
    rows: &[Vec<f64>],
    labels: &[Label],
    hidden: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DenseNet, Vec<EpochStats>)> {
    cfg.validate()?;
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::InsufficientData("dense training set is empty".into()));
    }
    let anomalies = labels.iter().filter(|l| l.is_anomaly()).count();
    if anomalies == 0 || anomalies == labels.len() {
        return Err(Error::InsufficientData("dense training set holds a single class".into()));
    }
    let mut net = DenseNet::new(rows[0].len(), hidden, seed)?;

    let mut r = rng(derive_seed(seed, "dense-split", &[]));
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [Label::Normal, Label::Anomaly] {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut r);
        let nv = ((idx.len() as f64 * cfg.validation_fraction).round() as usize).min(idx.len() - 1);
        val.extend_from_slice(&idx[..nv]);
        train.extend_from_slice(&idx[nv..]);
    }
    let gather = |idx: &[usize]| -> (Vec<&[f64]>, Vec<Label>) {
        (idx.iter().map(|&i| rows[i].as_slice()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (vx, vy) = gather(&val);

    let mut step = 0;
    let mut best: Option<(f64, DenseNet)> = None;
    let mut since = 0;
    let mut trace = Vec::new();
    for epoch in 0..cfg.max_epochs {
        train.shuffle(&mut rng(derive_seed(seed, "dense-epoch", &[epoch as u64])));
        let mut total = 0.0;
        for chunk in train.chunks(cfg.batch_size) {
            let (bx, by) = gather(chunk);
            for p in net.params_mut() {
                p.zero_grad();
            }
            let loss = net.loss_and_grad(&bx, &by);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("dense loss {loss} at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for p in net.params_mut() {
                p.adam_step(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, bc1, bc2);
            }
        }
        let train_loss = total / train.len() as f64;
        let val_loss = (!val.is_empty()).then(|| net.loss(&vx, &vy));
        let (tx, ty) = gather(&train);
        let acc = tx
            .iter()
            .zip(&ty)
            .filter(|(x, l)| (net.predict(x) >= 0.5) == l.is_anomaly())
            .count() as f64
            / train.len() as f64;
        trace.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy: acc,
            val_loss,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        match &best {
            Some((b, _)) if monitored >= *b => {
                since += 1;
                if since >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((monitored, net.clone()));
                since = 0;
            }
        }
    }
    if let Some((_, b)) = best {
        net = b;
    }
    Ok((net, trace))
}
