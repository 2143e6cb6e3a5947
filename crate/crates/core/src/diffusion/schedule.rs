use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Variance schedule for `T` diffusion steps.
///
/// Timesteps are 1-based throughout the crate (`1..=T`); the backing
/// vectors are indexed with `t - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β schedule from `beta_min` to `beta_max` inclusive.
    pub fn linear(timesteps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::InvalidRange(format!(
                "timestep count must be at least 2, got {timesteps}"
            )));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
            )));
        }
        let step = (beta_max - beta_min) / (timesteps - 1) as f64;
        let beta: Vec<f64> = (0..timesteps)
            .map(|i| {
                if i == timesteps - 1 {
                    beta_max
                } else {
                    beta_min + step * i as f64
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar: Vec<f64> = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let posterior_var = (0..timesteps)
            .map(|i| {
                if i == 0 {
                    beta[0]
                } else {
                    (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * beta[i]
                }
            })
            .collect();
        Ok(Self {
            beta_min,
            beta_max,
            beta,
            alpha,
            alpha_bar,
            posterior_var,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::InvalidRange(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `ᾱ_{t-1}`, with `ᾱ_0 = 1`.
    #[inline]
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    #[inline]
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    /// Closed-form sample of `q(x_t | x_0)` for caller-supplied noise.
    pub fn forward_noise(&self, x0: &Image, t: usize, eps: &Image) -> Result<Image> {
        self.check_timestep(t)?;
        x0.ensure_same_shape(eps)?;
        let ab = self.alpha_bar(t);
        Ok(self.forward_noise_with(x0, ab, eps))
    }

    pub(crate) fn forward_noise_with(&self, x0: &Image, alpha_bar: f64, eps: &Image) -> Image {
        let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
        let pixels = x0
            .pixels()
            .iter()
            .zip(eps.pixels())
            .map(|(x, e)| s * x + n * e)
            .collect();
        Image::new(x0.shape(), pixels).expect("shape preserved")
    }
}
