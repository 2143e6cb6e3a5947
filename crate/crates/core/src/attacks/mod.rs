//! Membership, identity and extraction attacks against a trained denoiser.

mod extraction;
mod iia;
mod kmeans;
mod mia;
mod stats;

pub use extraction::{extraction_attack, feature_vector, ClusterResult, ExtractionConfig};
pub use iia::{iia_attack, iia_query, rms_error, IiaQuery, IiaResult, OccludingSuiteParams, QueryOutcome, DEFAULT_IIA_THRESHOLD};
pub use kmeans::{inertia, kmeans, squared_distance, KMeansResult};
pub use mia::{masked_error, mia_attack, MaskOutcome, MiaResult, DEFAULT_MIA_THRESHOLD};
pub use stats::{
    confidence_score, identity_score, sorted_sum, trajectory_stats, LossTrajectory, MaskStats,
};

use crate::image::Image;
use crate::seed;

/// Per-query sampler seed: depends on the attack seed and the query's
/// pixels, never on the query's position in a batch.
pub fn query_seed(base: u64, image: &Image) -> u64 {
    seed::derive(base, seed::hash_f64s(image.pixels()))
}
