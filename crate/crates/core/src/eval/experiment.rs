//! Leave-one-subject-out runs of the transfer experiments (without and with
//! augmentation) and of the feature baseline.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loso::{loso_split, Fold};
use super::metrics::{ConfusionCounts, Metrics};
use crate::augment::{balance_training_fold, BalanceConfig, BalanceSummary};
use crate::baseline::{extract_features, fit_pca, train_dense, EVALUATED_WIDTHS, PCA_COMPONENTS};
use crate::error::{Error, Result};
use crate::inception::{ensemble_decision, ensemble_predict, InceptionNetwork, TrainConfig};
use crate::inception::train::decide;
use crate::seeds::derive_seed;
use crate::signal::{Label, Window, WindowKey};
use crate::transfer::{apply_transfer, frozen_bytes, tune_source, CachedSource, FeatureCache, TransferPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// Transfer and tune on the raw training folds.
    Exp1,
    /// Transfer and tune on augmented, balanced training folds.
    Exp2,
    /// Feature baseline on augmented, balanced training folds.
    Exp3,
}

impl ExperimentKind {
    pub fn uses_augmentation(self) -> bool {
        !matches!(self, ExperimentKind::Exp1)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Exp1 => "exp1",
            ExperimentKind::Exp2 => "exp2",
            ExperimentKind::Exp3 => "exp3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub plan: TransferPlan,
    pub balance: BalanceConfig,
    pub dense_widths: Vec<usize>,
    pub dense_training: TrainConfig,
    /// Sampling rate of the windows, used by the spectral features.
    pub rate_hz: f64,
    /// Batch size for cache building and inference.
    pub inference_batch: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            plan: TransferPlan::default(),
            balance: BalanceConfig::default(),
            dense_widths: EVALUATED_WIDTHS.to_vec(),
            dense_training: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 64,
                max_epochs: 100,
                ..TrainConfig::source_default()
            },
            rate_hz: 500.0,
            inference_batch: 128,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Per-subject results of one model (an ensemble member, the ensemble, or a
/// baseline width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: String,
    pub subjects: Vec<SubjectResult>,
}

/// What one fold trained on, and whether it stayed clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub test_subject: String,
    pub training_windows: usize,
    pub training_anomalies: usize,
    pub synthetic_windows: usize,
    /// Training windows whose lineage reaches the test subject.
    pub test_lineage_hits: usize,
    /// Per member: frozen tensors byte-identical before and after tuning.
    pub frozen_unchanged: Vec<bool>,
    pub balance: Option<BalanceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub stage: String,
    pub indices: Vec<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub models: Vec<ModelResult>,
    pub audits: Vec<FoldAudit>,
    pub seeds: Vec<SeedRecord>,
    /// Caller-supplied context, such as the configuration file of the run.
    #[serde(default)]
    pub invocation: Option<serde_json::Value>,
}

impl ExperimentReport {
    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.name == name)
    }
}

pub const ENSEMBLE_NAME: &str = "IT";

pub fn member_name(j: usize) -> String {
    format!("IN-{}", j + 1)
}

pub fn dense_name(width: usize) -> String {
    format!("H{width}")
}

fn subject_result(subject: &str, truth: &[Label], predicted: impl IntoIterator<Item = Label>) -> SubjectResult {
    let counts = ConfusionCounts::from_pairs(truth.iter().copied().zip(predicted));
    SubjectResult {
        subject: subject.to_string(),
        counts,
        metrics: super::metrics::metrics(&counts),
    }
}

/// Windows of the corpus grouped by fold role.
struct FoldData<'a> {
    fold: Fold,
    train: Vec<usize>,
    test: Vec<usize>,
    /// Balanced training set (real windows are copies of corpus windows).
    balanced: Option<(Vec<Window>, BalanceSummary)>,
    aug_seed: Option<u64>,
    corpus: &'a [Window],
}

impl FoldData<'_> {
    /// Training windows with their corpus position (`None` for synthetics
    /// and for copies that do not resolve to the corpus).
    fn training(&self, index: &HashMap<WindowKey, usize>) -> Vec<(Option<usize>, &Window)> {
        match &self.balanced {
            None => self.train.iter().map(|&i| (Some(i), &self.corpus[i])).collect(),
            Some((b, _)) => b
                .iter()
                .map(|w| (w.key().and_then(|k| index.get(&k).copied()), w))
                .collect(),
        }
    }

    fn audit(&self, index: &HashMap<WindowKey, usize>) -> FoldAudit {
        let training = self.training(index);
        let hits = training
            .iter()
            .filter(|(_, w)| w.subject_id == self.fold.test || w.lineage().iter().any(|k| k.subject_id == self.fold.test))
            .count();
        // Every real training window must also resolve to a training subject's window.
        let unresolved = training
            .iter()
            .filter(|(i, w)| !w.is_synthetic() && i.is_none())
            .count();
        FoldAudit {
            test_subject: self.fold.test.clone(),
            training_windows: training.len(),
            training_anomalies: training.iter().filter(|(_, w)| w.label.is_anomaly()).count(),
            synthetic_windows: training.iter().filter(|(_, w)| w.is_synthetic()).count(),
            test_lineage_hits: hits + unresolved,
            frozen_unchanged: Vec::new(),
            balance: self.balanced.as_ref().map(|(_, s)| s.clone()),
        }
    }
}

fn check_corpus(corpus: &[Window]) -> Result<HashMap<WindowKey, usize>> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData("evaluation corpus is empty".into()));
    }
    let mut index = HashMap::with_capacity(corpus.len());
    for (i, w) in corpus.iter().enumerate() {
        let key = w
            .key()
            .ok_or_else(|| Error::Config("evaluation corpus must hold only real windows".into()))?;
        if index.insert(key.clone(), i).is_some() {
            return Err(Error::Config(format!(
                "duplicate window {} #{} in corpus",
                key.subject_id, key.index
            )));
        }
    }
    Ok(index)
}

fn prepare_folds<'a>(
    kind: ExperimentKind,
    corpus: &'a [Window],
    cfg: &ExperimentConfig,
    seeds: &mut Vec<SeedRecord>,
) -> Result<Vec<FoldData<'a>>> {
    let subjects: Vec<&str> = corpus.iter().map(|w| w.subject_id.as_str()).collect();
    let folds = loso_split(&subjects)?;
    let mut out = Vec::with_capacity(folds.len());
    for (f, fold) in folds.into_iter().enumerate() {
        let train: Vec<usize> = (0..corpus.len())
            .filter(|&i| corpus[i].subject_id != fold.test)
            .collect();
        let test: Vec<usize> = (0..corpus.len())
            .filter(|&i| corpus[i].subject_id == fold.test)
            .collect();
        let (balanced, aug_seed) = if kind.uses_augmentation() {
            let seed = derive_seed(cfg.seed, "augment", &[f as u64]);
            seeds.push(SeedRecord {
                stage: "augment".into(),
                indices: vec![f as u64],
                seed,
            });
            let pool: Vec<&Window> = train.iter().map(|&i| &corpus[i]).collect();
            let (windows, summary) = balance_training_fold(&pool, &cfg.balance, seed)
                .map_err(|e| Error::InsufficientData(format!("fold {} (test {}): {e}", f, fold.test)))?;
            info!(
                "fold {f} ({}): {} training windows, {} synthetic",
                fold.test,
                windows.len(),
                summary.synthetic_anomalies
            );
            (Some((windows, summary)), Some(seed))
        } else {
            (None, None)
        };
        out.push(FoldData {
            fold,
            train,
            test,
            balanced,
            aug_seed,
            corpus,
        });
    }
    Ok(out)
}

/// Runs one experiment over every leave-one-subject-out fold of `corpus`.
///
/// `members` are the source-trained networks; they are required for the
/// transfer experiments and ignored by the baseline.
pub fn run_experiment(
    kind: ExperimentKind,
    corpus: &[Window],
    members: &[InceptionNetwork<f32>],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let index = check_corpus(corpus)?;
    let mut seeds = Vec::new();
    let folds = prepare_folds(kind, corpus, cfg, &mut seeds)?;
    let mut audits: Vec<FoldAudit> = folds.iter().map(|f| f.audit(&index)).collect();
    let models = match kind {
        ExperimentKind::Exp1 | ExperimentKind::Exp2 => {
            if members.is_empty() {
                return Err(Error::Config(format!("{kind} needs source-trained checkpoints")));
            }
            run_transfer(corpus, &index, members, cfg, &folds, &mut audits, &mut seeds)?
        }
        ExperimentKind::Exp3 => run_baseline(corpus, &index, cfg, &folds, &mut seeds)?,
    };
    debug_assert!(folds.iter().all(|f| f.aug_seed.is_some() == kind.uses_augmentation()));
    Ok(ExperimentReport {
        experiment: kind,
        master_seed: cfg.seed,
        config: cfg.clone(),
        models,
        audits,
        seeds,
        invocation: None,
    })
}

fn run_transfer(
    corpus: &[Window],
    index: &HashMap<WindowKey, usize>,
    members: &[InceptionNetwork<f32>],
    cfg: &ExperimentConfig,
    folds: &[FoldData<'_>],
    audits: &mut [FoldAudit],
    seeds: &mut Vec<SeedRecord>,
) -> Result<Vec<ModelResult>> {
    let all: Vec<&Window> = corpus.iter().collect();
    // probs[j][f] = member j on fold f's test windows
    let mut probs: Vec<Vec<Vec<[f64; 2]>>> = Vec::with_capacity(members.len());
    for (j, member) in members.iter().enumerate() {
        let member_seed = derive_seed(cfg.seed, "member", &[j as u64]);
        seeds.push(SeedRecord {
            stage: "member".into(),
            indices: vec![j as u64],
            seed: member_seed,
        });
        let mut base = apply_transfer(member, &cfg.plan, member_seed)?;
        let reference = frozen_bytes(&base);
        info!("{}: caching frozen-prefix activations of {} windows", member_name(j), all.len());
        let cache = FeatureCache::build(&mut base, &all, cfg.inference_batch)?;

        let fold_seeds: Vec<u64> = (0..folds.len())
            .map(|f| derive_seed(cfg.seed, "fold", &[j as u64, f as u64]))
            .collect();
        for (f, s) in fold_seeds.iter().enumerate() {
            seeds.push(SeedRecord {
                stage: "tune".into(),
                indices: vec![j as u64, f as u64],
                seed: *s,
            });
        }
        let results: Vec<Result<(Vec<[f64; 2]>, bool)>> = folds
            .par_iter()
            .zip(fold_seeds.par_iter())
            .map(|(fd, &seed)| {
                let mut net = apply_transfer(member, &cfg.plan, seed)?;
                if frozen_bytes(&net) != reference {
                    return Err(Error::Config("frozen prefix differs between folds".into()));
                }
                let training = fd.training(index);
                let (real, synthetic): (Vec<_>, Vec<_>) = training.iter().partition(|(i, _)| i.is_some());
                let synthetic: Vec<&Window> = synthetic.iter().map(|(_, w)| *w).collect();
                let synth_cache = FeatureCache::build(&mut net, &synthetic, cfg.inference_batch)?;
                let mut source = CachedSource::new();
                source.extend(&cache, real.iter().filter_map(|(i, _)| *i));
                if !synth_cache.is_empty() {
                    source.extend(&synth_cache, 0..synth_cache.len());
                }
                let before = frozen_bytes(&net);
                tune_source(&mut net, &source, &cfg.plan, seed).map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("{} fold {}: {m}", member_name(j), fd.fold.test)),
                    other => other,
                })?;
                let unchanged = frozen_bytes(&net) == before;
                let mut test = CachedSource::new();
                test.extend(&cache, fd.test.iter().copied());
                let p = crate::inception::train::predict_source(&mut net, &test, cfg.inference_batch);
                Ok((p.iter().map(|q| [q[0] as f64, q[1] as f64]).collect(), unchanged))
            })
            .collect();
        let mut member_probs = Vec::with_capacity(folds.len());
        for (f, r) in results.into_iter().enumerate() {
            let (p, unchanged) = r?;
            audits[f].frozen_unchanged.push(unchanged);
            member_probs.push(p);
        }
        info!("{} done", member_name(j));
        probs.push(member_probs);
    }

    let mut models: Vec<ModelResult> = (0..members.len())
        .map(|j| ModelResult {
            name: member_name(j),
            subjects: Vec::new(),
        })
        .collect();
    let mut ensemble = ModelResult {
        name: ENSEMBLE_NAME.into(),
        subjects: Vec::new(),
    };
    for (f, fd) in folds.iter().enumerate() {
        let truth: Vec<Label> = fd.test.iter().map(|&i| corpus[i].label).collect();
        for (j, m) in models.iter_mut().enumerate() {
            m.subjects.push(subject_result(
                &fd.fold.test,
                &truth,
                probs[j][f].iter().map(|p| decide(p[0], p[1])),
            ));
        }
        let mut decisions = Vec::with_capacity(truth.len());
        for w in 0..truth.len() {
            let member_probs: Vec<[f64; 2]> = probs.iter().map(|pj| pj[f][w]).collect();
            decisions.push(ensemble_decision(ensemble_predict(&member_probs)?));
        }
        ensemble.subjects.push(subject_result(&fd.fold.test, &truth, decisions));
    }
    models.push(ensemble);
    Ok(models)
}

fn run_baseline(
    corpus: &[Window],
    index: &HashMap<WindowKey, usize>,
    cfg: &ExperimentConfig,
    folds: &[FoldData<'_>],
    seeds: &mut Vec<SeedRecord>,
) -> Result<Vec<ModelResult>> {
    if cfg.dense_widths.is_empty() {
        return Err(Error::Config("no dense widths to evaluate".into()));
    }
    let features: Vec<Vec<f64>> = corpus.par_iter().map(|w| extract_features(w, cfg.rate_hz)).collect();
    let mut models: BTreeMap<usize, ModelResult> = cfg
        .dense_widths
        .iter()
        .map(|&h| {
            (
                h,
                ModelResult {
                    name: dense_name(h),
                    subjects: Vec::new(),
                },
            )
        })
        .collect();
    for (f, fd) in folds.iter().enumerate() {
        let training = fd.training(index);
        let rows: Vec<Vec<f64>> = training
            .par_iter()
            .map(|(i, w)| match i {
                Some(i) => features[*i].clone(),
                None => extract_features(w, cfg.rate_hz),
            })
            .collect();
        let labels: Vec<Label> = training.iter().map(|(_, w)| w.label).collect();
        let pca = fit_pca(&rows, PCA_COMPONENTS)?;
        let projected: Vec<Vec<f64>> = rows.iter().map(|r| pca.project(r)).collect();
        let test_rows: Vec<Vec<f64>> = fd.test.iter().map(|&i| pca.project(&features[i])).collect();
        let truth: Vec<Label> = fd.test.iter().map(|&i| corpus[i].label).collect();
        for (&h, model) in models.iter_mut() {
            let seed = derive_seed(cfg.seed, "dense", &[h as u64, f as u64]);
            seeds.push(SeedRecord {
                stage: "dense".into(),
                indices: vec![h as u64, f as u64],
                seed,
            });
            let (net, _) = train_dense(&projected, &labels, h, &cfg.dense_training, seed)?;
            model.subjects.push(subject_result(
                &fd.fold.test,
                &truth,
                test_rows.iter().map(|r| {
                    let p = net.predict(r);
                    decide(1.0 - p, p)
                }),
            ));
        }
    }
    Ok(models.into_values().collect())
}
