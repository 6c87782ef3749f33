use ndarray::Array2;

use pprnet::inception::{
    load_checkpoint, save_checkpoint, train_network, HeadKind, InceptionConfig, InceptionNetwork, TrainConfig,
};
use pprnet::signal::{Label, PprType, Window, WindowSource};
use pprnet::transfer::{apply_transfer, frozen_bytes, tune, TransferPlan};
use pprnet::Error;

/// Normal windows are low-amplitude noise; anomalies add a 3 Hz spike-wave
/// on every channel.
fn toy_windows(n: usize, t: usize, seed: u64) -> Vec<Window> {
    let mut s = seed;
    let mut noise = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 33) as f32 / (1u64 << 31) as f32) - 0.5
    };
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Anomaly } else { Label::Normal };
            let data = Array2::from_shape_fn((18, t), |(_, k)| {
                let wave = if label.is_anomaly() {
                    (k as f32 * 0.6).sin().powi(7) * 4.0
                } else {
                    0.0
                };
                wave + noise()
            });
            Window {
                data,
                label,
                subject_id: format!("s{}", i % 3),
                start_s: i as f64,
                ppr_type: label.is_anomaly().then_some(PprType::InteriorC),
                source: WindowSource::Real { index: i as u64 },
            }
        })
        .collect()
}

fn quick() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 15,
        validation_fraction: 0.0,
        learning_rate: 5e-3,
        ..TrainConfig::source_default()
    }
}

fn param_values(net: &InceptionNetwork<f32>) -> Vec<Vec<f32>> {
    net.params().into_iter().map(|(_, _, p)| p.value.clone()).collect()
}

#[test]
fn tiny_network_fits_a_separable_toy_set() {
    let windows = toy_windows(48, 64, 1);
    let trained = train_network::<f32>(&windows, InceptionConfig::tiny(), &quick(), 3).unwrap();
    let first = trained.trace.first().unwrap();
    let best = trained.trace.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best < first.train_loss * 0.5, "loss {} -> {best}", first.train_loss);
    let net = trained.network;
    let correct = windows
        .iter()
        .filter(|w| {
            let x: Vec<f32> = InceptionConfig::tiny().window_input(w);
            let p = net.predict(&x, 64).unwrap();
            (p[1] >= p[0]) == w.label.is_anomaly()
        })
        .count();
    assert!(correct >= 46, "{correct}/48 correct");
}

#[test]
fn training_is_reproducible_and_seed_dependent() {
    let windows = toy_windows(24, 48, 2);
    let cfg = TrainConfig { max_epochs: 2, ..quick() };
    let a = train_network::<f32>(&windows, InceptionConfig::tiny(), &cfg, 5).unwrap();
    let b = train_network::<f32>(&windows, InceptionConfig::tiny(), &cfg, 5).unwrap();
    let c = train_network::<f32>(&windows, InceptionConfig::tiny(), &cfg, 6).unwrap();
    assert_eq!(param_values(&a.network), param_values(&b.network));
    assert_ne!(param_values(&a.network), param_values(&c.network));
}

#[test]
fn single_class_training_set_is_rejected() {
    let windows: Vec<Window> = toy_windows(20, 48, 3).into_iter().filter(|w| !w.label.is_anomaly()).collect();
    let err = train_network::<f32>(&windows, InceptionConfig::tiny(), &quick(), 1).err().unwrap();
    assert!(matches!(err, Error::InsufficientData(_)), "{err}");
}

#[test]
fn zero_epoch_tuning_changes_nothing() {
    let windows = toy_windows(16, 48, 4);
    let refs: Vec<&Window> = windows.iter().collect();
    let source = InceptionNetwork::<f32>::new(InceptionConfig::tiny(), HeadKind::Softmax, 9).unwrap();
    let plan = TransferPlan {
        tuning: TrainConfig { max_epochs: 0, ..quick() },
        ..TransferPlan::default()
    };
    let mut net = apply_transfer(&source, &plan, 1).unwrap();
    let before = param_values(&net);
    let trace = tune(&mut net, &refs, &plan, 2).unwrap();
    assert!(trace.is_empty());
    assert_eq!(param_values(&net), before);
}

#[test]
fn tuning_moves_only_the_tunable_scope() {
    let windows = toy_windows(32, 48, 5);
    let refs: Vec<&Window> = windows.iter().collect();
    let source = InceptionNetwork::<f32>::new(InceptionConfig::tiny(), HeadKind::Softmax, 10).unwrap();
    let plan = TransferPlan {
        tuning: TrainConfig { max_epochs: 3, ..quick() },
        ..TransferPlan::default()
    };
    let mut net = apply_transfer(&source, &plan, 1).unwrap();
    let frozen = frozen_bytes(&net);
    let before = net.params().into_iter().map(|(l, n, p)| (l, n, p.value.clone())).collect::<Vec<_>>();
    tune(&mut net, &refs, &plan, 2).unwrap();
    assert_eq!(frozen_bytes(&net), frozen);
    let moved = net
        .params()
        .into_iter()
        .zip(&before)
        .filter(|((_, _, p), (_, _, v))| p.value != *v)
        .map(|((l, _, _), _)| l)
        .collect::<Vec<_>>();
    assert!(!moved.is_empty());
    assert!(moved.iter().all(|l| plan.tunable_scope.contains(l)), "{moved:?}");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let windows = toy_windows(16, 48, 6);
    let cfg = TrainConfig { max_epochs: 1, ..quick() };
    let net = train_network::<f32>(&windows, InceptionConfig::tiny(), &cfg, 7).unwrap().network;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&net, serde_json::json!({"epochs": 1}), &path).unwrap();
    let back: InceptionNetwork<f32> = load_checkpoint(&path).unwrap();
    let x = InceptionConfig::tiny().window_input::<f32>(&windows[0]);
    assert_eq!(net.predict(&x, 48).unwrap(), back.predict(&x, 48).unwrap());
    assert_eq!(param_values(&net), param_values(&back));
}
