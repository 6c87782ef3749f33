use super::network::InceptionNetwork;
use super::train::decide;
use super::Real;
use crate::error::{Error, Result};
use crate::signal::Label;

/// Independently seeded networks whose probabilities are averaged.
#[derive(Debug, Clone)]
pub struct EnsembleModel<F> {
    pub members: Vec<InceptionNetwork<F>>,
}

impl<F: Real> EnsembleModel<F> {
    pub fn new(members: Vec<InceptionNetwork<F>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
        if members
            .iter()
            .any(|m| m.config != first.config || m.head_kind != first.head_kind)
        {
            return Err(Error::Shape("ensemble members disagree on architecture".into()));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Averaged `[normal, anomaly]` probabilities for one `[C, T]` sample.
    pub fn predict(&self, sample: &[F], t: usize) -> Result<[f64; 2]> {
        let outs = self
            .members
            .iter()
            .map(|m| m.predict(sample, t).map(|p| [p[0].to_f64().unwrap(), p[1].to_f64().unwrap()]))
            .collect::<Result<Vec<_>>>()?;
        ensemble_predict(&outs)
    }
}

/// Arithmetic mean of member probability pairs.
pub fn ensemble_predict(member_probs: &[[f64; 2]]) -> Result<[f64; 2]> {
    if member_probs.is_empty() {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let n = member_probs.len() as f64;
    let (s0, s1) = member_probs
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    Ok([s0 / n, s1 / n])
}

/// Argmax of an averaged pair, ties toward Anomaly.
pub fn ensemble_decision(p: [f64; 2]) -> Label {
    decide(p[0], p[1])
}
