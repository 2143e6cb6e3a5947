//! Membership inference from the variability of masked reconstruction losses.

use serde::{Deserialize, Serialize};

use super::stats::{confidence_score, LossTrajectory, MaskStats};
use crate::diffusion::{reconstruct_trajectories, NoisePredictor, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::occlusion::{MaskSuite, PixelMask, SuiteKind};

pub const DEFAULT_MIA_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskOutcome {
    pub label: String,
    pub visible_count: usize,
    pub stats: MaskStats,
    pub trajectory: LossTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    pub confidence: f64,
    pub threshold: f64,
    pub decision: bool,
    pub sampler: SamplerConfig,
    pub masks: Vec<MaskOutcome>,
}

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidRange(format!("threshold {threshold} must lie in (0, 1)")))
    }
}

/// `(1/N) ‖(x_q − x̂) ⊙ M‖₂` with `N` the number of visible pixels.
pub fn masked_error(xq: &Image, x0_hat: &Image, mask: &PixelMask) -> Result<f64> {
    xq.ensure_same_shape(x0_hat)?;
    mask.check_image(xq.shape())?;
    let weights = mask.expanded(xq.shape().channels);
    let sq: f64 = xq
        .pixels()
        .iter()
        .zip(x0_hat.pixels())
        .zip(&weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum();
    if mask.visible_count() == 0 {
        return Ok(0.0);
    }
    Ok(sq.sqrt() / mask.visible_count() as f64)
}

/// Runs one masked reconstruction per suite entry and scores `xq`.
///
/// All masks share the forward noise drawn from `config.rng_seed`, so the
/// result does not depend on the order of the suite.
pub fn mia_attack<P: NoisePredictor + ?Sized>(
    xq: &Image,
    suite: &MaskSuite,
    model: &P,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
    threshold: f64,
) -> Result<MiaResult> {
    suite.expect_kind(SuiteKind::Occluding)?;
    check_threshold(threshold)?;
    for mask in &suite.masks {
        mask.check_image(xq.shape())?;
    }
    let trajectories = reconstruct_trajectories(xq, &suite.masks, model, sched, config)?;
    let mut masks = Vec::with_capacity(suite.len());
    for (mask, traj) in suite.masks.iter().zip(trajectories) {
        let errors = traj
            .iter()
            .map(|(t, x0_hat)| masked_error(xq, x0_hat, mask).map(|e| (*t, e)))
            .collect::<Result<Vec<_>>>()?;
        let trajectory = LossTrajectory::new(mask.label(), errors)?;
        masks.push(MaskOutcome {
            label: mask.label().to_string(),
            visible_count: mask.visible_count(),
            stats: trajectory.stats(),
            trajectory,
        });
    }
    let stats: Vec<MaskStats> = masks.iter().map(|m| m.stats).collect();
    let confidence = confidence_score(&stats);
    Ok(MiaResult {
        confidence,
        threshold,
        decision: confidence >= threshold,
        sampler: config.clone(),
        masks,
    })
}
