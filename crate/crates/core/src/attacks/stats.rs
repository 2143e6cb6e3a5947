//! Summary statistics of reconstruction-loss trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reconstruction errors `E(t)` of one (image, mask) pair, ordered by
/// decreasing `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrajectory {
    pub label: String,
    pub errors: Vec<(usize, f64)>,
}

impl LossTrajectory {
    pub fn new(label: impl Into<String>, errors: Vec<(usize, f64)>) -> Result<Self> {
        if errors.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "loss trajectory needs at least 2 entries, got {}",
                errors.len()
            )));
        }
        if let Some((t, e)) = errors.iter().find(|(_, e)| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::NonFinite(format!("error {e} at t={t} is not a finite non-negative value")));
        }
        Ok(Self {
            label: label.into(),
            errors,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        self.errors.iter().map(|&(_, e)| e).collect()
    }

    pub fn stats(&self) -> MaskStats {
        MaskStats::from_values(&self.values())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub cv: f64,
    pub skewness: f64,
    pub mean_rate_of_change: f64,
    /// All errors were zero; every statistic is reported as 0.
    pub degenerate: bool,
}

impl MaskStats {
    pub const ZERO: MaskStats = MaskStats {
        mean: 0.0,
        std: 0.0,
        cv: 0.0,
        skewness: 0.0,
        mean_rate_of_change: 0.0,
        degenerate: true,
    };

    /// Assumes at least two finite, non-negative values.
    pub fn from_values(values: &[f64]) -> MaskStats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return MaskStats::ZERO;
        }
        let var = values.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let skewness = if std == 0.0 {
            0.0
        } else {
            values.iter().map(|e| ((e - mean) / std).powi(3)).sum::<f64>() / n
        };
        let mean_rate_of_change =
            values.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (n - 1.0);
        MaskStats {
            mean,
            std,
            cv: std / mean,
            skewness,
            mean_rate_of_change,
            degenerate: false,
        }
    }

    /// The per-mask variability term `CV + |S| + ΔE`.
    pub fn variability(&self) -> f64 {
        self.cv + self.skewness.abs() + self.mean_rate_of_change
    }
}

pub fn trajectory_stats(traj: &LossTrajectory) -> MaskStats {
    traj.stats()
}

/// Order-independent sum: the terms are summed in ascending order so any
/// permutation of the input gives the same bits.
pub fn sorted_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Membership confidence `C = 1 / (1 + mean_i(CV_i + |S_i| + ΔE_i))`.
pub fn confidence_score(stats: &[MaskStats]) -> f64 {
    if stats.is_empty() {
        return 1.0;
    }
    let avg = sorted_sum(stats.iter().map(MaskStats::variability)) / stats.len() as f64;
    1.0 / (1.0 + avg)
}

/// Identity score `S_II = exp(−(σ_E + μ_E))`.
pub fn identity_score(mean_error: f64, std_error: f64) -> f64 {
    (-(std_error + mean_error)).exp()
}
