//! Data extraction: regenerate a target from many partially preserved
//! views and cluster the results.

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, squared_distance, KMeansResult};
use crate::diffusion::{run_chains, standard_normal_row, NoisePredictor, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::faces::{LandmarkMap, Region};
use crate::image::Image;
use crate::occlusion::{apply_mask, MaskSuite, SuiteKind};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub n_samples: usize,
    pub clusters: usize,
    pub max_iters: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            clusters: 10,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub kmeans: KMeansResult,
    /// Index into `samples` of each cluster's representative.
    pub representative_indices: Vec<usize>,
    #[serde(skip)]
    pub representatives: Vec<Image>,
    pub sample_masks: Vec<String>,
    pub sample_seeds: Vec<u64>,
    #[serde(skip)]
    pub samples: Vec<Image>,
}

/// Pixels inside any of the eye, nose and mouth boxes, in raster order.
pub fn feature_vector(img: &Image, landmarks: &LandmarkMap) -> Vec<f64> {
    let shape = img.shape();
    let boxes: Vec<_> = Region::FEATURES.iter().map(|&r| landmarks.get(r)).collect();
    let mut out = Vec::new();
    for y in 0..shape.height {
        for x in 0..shape.width {
            if boxes.iter().any(|b| b.contains(y, x)) {
                out.extend((0..shape.channels).map(|c| img.get(y, x, c)));
            }
        }
    }
    out
}

const ROWS_PER_TASK: usize = 10;

/// Generates `config.n_samples` reconstructions of `xq`, cycling through the
/// preserving masks, and clusters them by their facial-feature pixels.
pub fn extraction_attack<P: NoisePredictor + ?Sized>(
    xq: &Image,
    landmarks: &LandmarkMap,
    model: &P,
    sched: &NoiseSchedule,
    suite: &MaskSuite,
    config: &ExtractionConfig,
    sampler: &SamplerConfig,
) -> Result<ClusterResult> {
    suite.expect_kind(SuiteKind::Preserving)?;
    sampler.validate(sched)?;
    if config.clusters == 0 || config.n_samples < config.clusters {
        return Err(Error::InvalidRange(format!(
            "need n_samples >= clusters >= 1 (n_samples {}, clusters {})",
            config.n_samples, config.clusters
        )));
    }
    let shape = xq.shape();
    if model.image_shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: model.image_shape().to_string(),
            found: shape.to_string(),
        });
    }
    landmarks.validate_frame(shape.height, shape.width)?;
    let masked = suite
        .masks
        .iter()
        .map(|m| apply_mask(xq, m))
        .collect::<Result<Vec<_>>>()?;

    let d = shape.len();
    let ab = sched.alpha_bar(sampler.t_start);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let sample_seeds: Vec<u64> = (0..config.n_samples)
        .map(|j| seed::derive(sampler.rng_seed, j as u64))
        .collect();
    let tasks: Vec<usize> = (0..config.n_samples).step_by(ROWS_PER_TASK).collect();
    let chunks: Vec<Vec<Image>> = tasks
        .par_iter()
        .map(|&start| {
            let end = (start + ROWS_PER_TASK).min(config.n_samples);
            let mut x = Array2::zeros((end - start, d));
            let mut rngs = Vec::with_capacity(end - start);
            for (row, j) in (start..end).enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seeds[j]);
                let eps = standard_normal_row(d, &mut rng);
                let src = masked[j % masked.len()].pixels();
                for (k, v) in x.row_mut(row).iter_mut().enumerate() {
                    *v = s * src[k] + n * eps[k];
                }
                rngs.push(rng);
            }
            let out = run_chains(x, sampler.t_start, model, sched, sampler.kind, &mut rngs, |_| false, |_, _| {});
            out.rows()
                .into_iter()
                .map(|r: ArrayView1<'_, f64>| Image::new(shape, r.to_vec()).expect("shape"))
                .collect()
        })
        .collect();
    let samples: Vec<Image> = chunks.into_iter().flatten().collect();
    if let Some(bad) = samples.iter().position(|img| !img.is_finite()) {
        return Err(Error::NonFinite(format!("extraction sample {bad} diverged")));
    }

    let features: Vec<Vec<f64>> = samples.iter().map(|img| feature_vector(img, landmarks)).collect();
    let km = kmeans(&features, config.clusters, config.max_iters, sampler.rng_seed)?;
    let representative_indices: Vec<usize> = (0..km.k)
        .map(|c| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, f) in features.iter().enumerate() {
                if km.assignments[i] == c {
                    let dist = squared_distance(f, &km.centroids[c]);
                    if dist < best.1 {
                        best = (i, dist);
                    }
                }
            }
            best.0
        })
        .collect();
    Ok(ClusterResult {
        representatives: representative_indices.iter().map(|&i| samples[i].clone()).collect(),
        representative_indices,
        sample_masks: (0..config.n_samples)
            .map(|j| suite.masks[j % suite.len()].label().to_string())
            .collect(),
        sample_seeds,
        samples,
        kmeans: km,
    })
}
