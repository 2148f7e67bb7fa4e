//! Time-index encodings, weekly statistics, similarity features and sample
//! assembly.

mod encoding;
mod kmeans;
mod sample;

pub use encoding::{holiday_flag, one_hot, stat_features, TimeIndex};
pub use kmeans::{kmeans_fit, nearest_center, similarity, ClusterModel, KMeansOptions};
pub use sample::{assemble_sample, normalized_histories, FeatureMask, WindowSample, FULL_ROW_WIDTH};
