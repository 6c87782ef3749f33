//! Inception network built from scratch: layers with explicit backward passes,
//! the two-block residual network, training and ensembling.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{znormalize, Window, MODEL_CHANNELS};

pub mod checkpoint;
pub mod ensemble;
pub mod layers;
pub mod network;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_loss_trace};
pub use ensemble::{ensemble_decision, ensemble_predict, EnsembleModel};
pub use network::{Batch, Entry, HeadKind, InceptionNetwork, LayerId, Trace};
pub use train::{fit, train_network, BatchSource, EpochStats, TrainConfig, TrainedNetwork, WindowSource};

/// Scalar type the network is generic over: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Converts a stored `f32` sample.
    fn from_sample(v: f32) -> Self;
}

impl Real for f32 {
    fn from_sample(v: f32) -> Self {
        v
    }
}

impl Real for f64 {
    fn from_sample(v: f32) -> Self {
        v as f64
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionConfig {
    pub in_channels: usize,
    /// Filters per branch (`F`); modules output `4F` channels.
    pub filters: usize,
    /// Bottleneck filters (`F_b`).
    pub bottleneck: usize,
    /// Branch kernel sizes, strictly decreasing.
    pub kernel_sizes: [usize; 3],
    /// Z-normalize each channel of a window right before it enters the
    /// network.
    #[serde(default = "default_true")]
    pub input_znorm: bool,
}

fn default_true() -> bool {
    true
}

impl InceptionConfig {
    pub fn full() -> Self {
        Self {
            in_channels: MODEL_CHANNELS,
            filters: 32,
            bottleneck: 32,
            kernel_sizes: [40, 20, 10],
            input_znorm: true,
        }
    }

    pub fn tiny() -> Self {
        Self {
            in_channels: MODEL_CHANNELS,
            filters: 4,
            bottleneck: 4,
            kernel_sizes: [9, 5, 3],
            input_znorm: true,
        }
    }

    pub fn from_profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown model profile `{other}` (expected full or tiny)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [k1, k2, k3] = self.kernel_sizes;
        if self.in_channels == 0 || self.filters == 0 || self.bottleneck == 0 {
            return Err(Error::Config("channel and filter counts must be positive".into()));
        }
        if !(k1 > k2 && k2 > k3 && k3 >= 1) {
            return Err(Error::Config(format!(
                "kernel sizes must be strictly decreasing, got {k1}/{k2}/{k3}"
            )));
        }
        Ok(())
    }

    /// Converts a stored window into network input.
    pub fn window_input<F: Real>(&self, w: &Window) -> Vec<F> {
        if self.input_znorm {
            znormalize(w.samples(), w.n_channels())
                .into_iter()
                .map(F::from_sample)
                .collect()
        } else {
            w.samples().iter().map(|&v| F::from_sample(v)).collect()
        }
    }

    /// Shortest window the network accepts.
    pub fn min_length(&self) -> usize {
        self.kernel_sizes[0]
    }
}
