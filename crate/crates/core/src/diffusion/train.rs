use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, DenoiserDims, Layers};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 16,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            embed_dim: 32,
            hidden: 256,
            seed: 0,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Layers,
    v: Layers,
}

impl Adam {
    pub fn new(dims: &DenoiserDims, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Layers::zeros(dims),
            v: Layers::zeros(dims),
        }
    }

    pub fn update(&mut self, params: &mut Layers, grads: &Layers) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub initial_loss: f64,
    /// Mean training loss per epoch, index 0 = epoch 1.
    pub loss_curve: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().copied().unwrap_or(self.initial_loss)
    }

    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", i + 1));
        }
        out
    }
}

/// Trains a fresh denoiser on `images` with the ε-prediction objective.
///
/// Deterministic given `config.seed`: initialization, shuffling, timestep
/// draws and noise all come from one seeded stream.
pub fn train(images: &[Image], sched: &NoiseSchedule, config: &TrainConfig) -> Result<TrainOutcome> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData("training split is empty".into()))?;
    let shape = first.shape();
    for img in images {
        first.ensure_same_shape(img)?;
    }
    if config.epochs == 0 || config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidRange(format!(
            "epochs, batch_size and lr must be positive (epochs={}, batch_size={}, lr={})",
            config.epochs, config.batch_size, config.lr
        )));
    }
    let dims = DenoiserDims::new(shape, config.embed_dim, config.hidden)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Denoiser::init(dims, sched, &mut rng);
    let mut adam = Adam::new(
        &dims,
        config.lr,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );

    let initial_loss = {
        // Separate stream so the training trajectory does not depend on it.
        let mut probe = ChaCha8Rng::seed_from_u64(config.seed ^ PROBE_STREAM);
        let idx: Vec<usize> = (0..images.len()).collect();
        let (x, ts, eps) = noisy_batch(images, &idx, sched, &mut probe);
        model.loss(x.view(), &ts, eps.view())
    };

    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (x, ts, eps) = noisy_batch(images, batch, sched, &mut rng);
            let (loss, grads) = model.loss_and_grad(x.view(), &ts, eps.view());
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adam.update(model.layers_mut(), &grads);
            total += loss * batch.len() as f64;
        }
        if !model.layers().is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        loss_curve.push(total / images.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        initial_loss,
        loss_curve,
    })
}

const PROBE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Draws `(x_t, t, ε)` for the listed images.
fn noisy_batch<R: Rng>(
    images: &[Image],
    idx: &[usize],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> (Array2<f64>, Vec<usize>, Array2<f64>) {
    let d = images[0].len();
    let mut x = Array2::zeros((idx.len(), d));
    let mut eps = Array2::zeros((idx.len(), d));
    let mut ts = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        let t = rng.random_range(1..=sched.timesteps());
        let ab = sched.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (j, &x0) in images[i].pixels().iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            eps[[row, j]] = e;
            x[[row, j]] = s * x0 + n * e;
        }
        ts.push(t);
    }
    (x, ts, eps)
}
