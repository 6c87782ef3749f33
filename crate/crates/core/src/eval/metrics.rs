use serde::{Deserialize, Serialize};

use crate::signal::Label;

/// Confusion counters with Anomaly as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Anomaly, Label::Anomaly) => self.tp += 1,
            (Label::Anomaly, Label::Normal) => self.fn_ += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
            (Label::Normal, Label::Anomaly) => self.fp += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Self::default();
        for (t, p) in pairs {
            c.record(t, p);
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

/// Accuracy, sensitivity and specificity; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub sens: Option<f64>,
    pub spec: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        acc: ratio(c.tp + c.tn, c.total()),
        sens: ratio(c.tp, c.positives()),
        spec: ratio(c.tn, c.negatives()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Acc,
    Sens,
    Spec,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Acc, MetricKind::Sens, MetricKind::Spec];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Acc => "ACC",
            MetricKind::Sens => "SENS",
            MetricKind::Spec => "SPEC",
        }
    }

    pub fn of(self, m: &Metrics) -> Option<f64> {
        match self {
            MetricKind::Acc => m.acc,
            MetricKind::Sens => m.sens,
            MetricKind::Spec => m.spec,
        }
    }
}

/// Mean, median and sample standard deviation of the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

pub fn aggregate(values: &[Option<f64>]) -> Aggregate {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    let n = v.len();
    let undefined = values.len() - n;
    if n == 0 {
        return Aggregate {
            mean: None,
            median: None,
            std: None,
            defined: 0,
            undefined,
        };
    }
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let std = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Aggregate {
        mean: Some(mean),
        median: Some(median),
        std,
        defined: n,
        undefined,
    }
}
