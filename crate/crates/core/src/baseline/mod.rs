//! Feature-based comparator: handcrafted window features, standardization
//! and PCA to 12 dimensions, and a one-hidden-layer dense classifier.

pub mod dense;
pub mod features;
pub mod pca;

pub use dense::{train_dense, DenseNet, EVALUATED_WIDTHS};
pub use features::{extract_features, FEATURE_NAMES};
pub use pca::{fit_pca, PcaProjector};

/// Dimensionality the features are reduced to.
pub const PCA_COMPONENTS: usize = 12;
