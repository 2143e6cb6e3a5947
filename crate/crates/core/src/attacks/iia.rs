//! Identity inference: do several randomly occluded images of one person
//! reconstruct consistently well?

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mia::check_threshold;
use super::stats::{identity_score, sorted_sum, LossTrajectory};
use crate::diffusion::{reconstruct_trajectories, NoisePredictor, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::faces::LandmarkMap;
use crate::image::Image;
use crate::occlusion::build_occluding_suite;
use crate::seed;

pub const DEFAULT_IIA_THRESHOLD: f64 = 0.5;

/// How each query's occluding suite is built from its own landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccludingSuiteParams {
    pub n_random_patches: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for OccludingSuiteParams {
    fn default() -> Self {
        Self {
            n_random_patches: 3,
            patch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IiaQuery {
    pub image: Image,
    pub landmarks: LandmarkMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub mask_label: String,
    pub rng_seed: u64,
    pub mean: f64,
    pub std: f64,
    pub trajectory: LossTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IiaResult {
    pub k: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub score: f64,
    pub threshold: f64,
    pub decision: bool,
    pub sampler: SamplerConfig,
    pub queries: Vec<QueryOutcome>,
}

const MASK_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Root-mean-square distance between the query and a reconstruction.
pub fn rms_error(xq: &Image, x0_hat: &Image) -> Result<f64> {
    Ok(xq.l2_distance(x0_hat)? / (xq.len() as f64).sqrt())
}

/// Scores a list of query images of one identity.
///
/// Mask choice and noise for each query are seeded from
/// `config.rng_seed` and the query's pixels, so reordering the list does
/// not change the score.
pub fn iia_attack<P: NoisePredictor + ?Sized>(
    queries: &[IiaQuery],
    model: &P,
    sched: &NoiseSchedule,
    suite: &OccludingSuiteParams,
    config: &SamplerConfig,
    threshold: f64,
) -> Result<IiaResult> {
    if queries.is_empty() {
        return Err(Error::InsufficientData("identity attack needs at least one query".into()));
    }
    check_threshold(threshold)?;
    config.validate(sched)?;
    let outcomes = queries
        .par_iter()
        .map(|q| iia_query(q, model, sched, suite, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(IiaResult::aggregate(outcomes, threshold, config))
}

impl IiaResult {
    /// Combines per-query outcomes; the result is independent of their order.
    pub fn aggregate(queries: Vec<QueryOutcome>, threshold: f64, config: &SamplerConfig) -> IiaResult {
        let k = queries.len() as f64;
        let mean_error = sorted_sum(queries.iter().map(|o| o.mean)) / k;
        let std_error = sorted_sum(queries.iter().map(|o| o.std)) / k;
        let score = identity_score(mean_error, std_error);
        IiaResult {
            k: queries.len(),
            mean_error,
            std_error,
            score,
            threshold,
            decision: score >= threshold,
            sampler: config.clone(),
            queries,
        }
    }
}

/// Occludes one query with a seeded random suite mask and summarizes its
/// reconstruction error trajectory.
pub fn iia_query<P: NoisePredictor + ?Sized>(
    q: &IiaQuery,
    model: &P,
    sched: &NoiseSchedule,
    params: &OccludingSuiteParams,
    config: &SamplerConfig,
) -> Result<QueryOutcome> {
    let suite = build_occluding_suite(
        &q.landmarks,
        q.image.shape(),
        params.n_random_patches,
        params.patch_size,
        params.seed,
    )?;
    let content = seed::derive(config.rng_seed, seed::hash_f64s(q.image.pixels()));
    let mut pick = ChaCha8Rng::seed_from_u64(seed::derive(content, MASK_STREAM));
    let mask = &suite.masks[pick.random_range(0..suite.len())];
    let run = SamplerConfig {
        rng_seed: seed::derive(content, NOISE_STREAM),
        ..config.clone()
    };
    let traj = reconstruct_trajectories(&q.image, std::slice::from_ref(mask), model, sched, &run)?
        .pop()
        .expect("one trajectory per mask");
    let errors = traj
        .iter()
        .map(|(t, x0_hat)| rms_error(&q.image, x0_hat).map(|e| (*t, e)))
        .collect::<Result<Vec<_>>>()?;
    let trajectory = LossTrajectory::new(mask.label(), errors)?;
    let values = trajectory.values();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(QueryOutcome {
        mask_label: mask.label().to_string(),
        rng_seed: run.rng_seed,
        mean,
        std,
        trajectory,
    })
}
