//! Reverse-process sampling and trajectory reconstruction.
//!
//! All chains are driven through [`run_chains`], which advances a batch of
//! rows in lock-step so the denoiser sees one matrix per timestep. Every row
//! owns its RNG, so a row's result does not depend on what else is batched
//! with it.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::occlusion::{apply_mask, PixelMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// DDPM ancestral sampling with fixed posterior variance.
    Ancestral,
    /// DDIM with η = 0.
    Deterministic,
}

impl std::str::FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ancestral" | "ddpm" => Ok(SamplerKind::Ancestral),
            "deterministic" | "ddim" => Ok(SamplerKind::Deterministic),
            other => Err(format!("unknown sampler `{other}` (ancestral|deterministic)")),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Ancestral => "ancestral",
            SamplerKind::Deterministic => "deterministic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub t_start: usize,
    pub record_every: usize,
    pub rng_seed: u64,
}

impl SamplerConfig {
    /// Mid-range start with roughly 25 recorded estimates.
    pub fn for_schedule(sched: &NoiseSchedule, kind: SamplerKind, rng_seed: u64) -> Self {
        let t_start = (sched.timesteps() / 2).max(1);
        Self {
            kind,
            t_start,
            record_every: default_record_every(t_start),
            rng_seed,
        }
    }

    pub fn with_t_start(mut self, t_start: usize) -> Self {
        self.t_start = t_start;
        self
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.t_start == 0 || self.t_start > sched.timesteps() {
            return Err(Error::InvalidRange(format!(
                "t_start {} outside 1..={}",
                self.t_start,
                sched.timesteps()
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidRange("record_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Steps at which an `x̂_0` estimate is emitted: `t = 1, 1 + r, 1 + 2r, …`
    /// up to `t_start`, so the final step is always recorded.
    pub fn records(&self, t: usize) -> bool {
        (t - 1) % self.record_every == 0
    }
}

pub fn default_record_every(t_start: usize) -> usize {
    (t_start / 25).max(1)
}

fn check_shape<P: NoisePredictor + ?Sized>(model: &P, img: &Image) -> Result<()> {
    if img.shape() != model.image_shape() {
        return Err(Error::ShapeMismatch {
            expected: model.image_shape().to_string(),
            found: img.shape().to_string(),
        });
    }
    Ok(())
}

fn row(img: &Image) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, img.len()), img.pixels()).expect("row view")
}

fn x0_from_eps(x: &Array2<f64>, eps: &Array2<f64>, t: usize, sched: &NoiseSchedule) -> Array2<f64> {
    let ab = sched.alpha_bar(t);
    let (n, s) = ((1.0 - ab).sqrt(), ab.sqrt());
    let mut out = x.clone();
    out.zip_mut_with(eps, |xv, &e| *xv = (*xv - n * e) / s);
    out
}

/// One-step clean estimate `x̂_0 = (x_t − √(1−ᾱ_t)·ε_θ(x_t, t)) / √ᾱ_t`.
pub fn predict_x0<P: NoisePredictor + ?Sized>(
    xt: &Image,
    t: usize,
    model: &P,
    sched: &NoiseSchedule,
) -> Result<Image> {
    sched.check_timestep(t)?;
    check_shape(model, xt)?;
    let x = row(xt).to_owned();
    let eps = model.predict_rows(x.view(), t);
    let out = x0_from_eps(&x, &eps, t, sched);
    Image::new(xt.shape(), out.into_raw_vec_and_offset().0)
}

/// Advances every row of `x` from `t` to `t − 1` given the predicted noise.
fn step_rows(
    x: &mut Array2<f64>,
    eps: &Array2<f64>,
    x0_hat: &Array2<f64>,
    t: usize,
    sched: &NoiseSchedule,
    kind: SamplerKind,
    rngs: &mut [ChaCha8Rng],
) {
    match kind {
        SamplerKind::Deterministic => {
            let ab_prev = sched.alpha_bar_prev(t);
            let (s, n) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
            x.zip_mut_with(x0_hat, |xv, &x0| *xv = s * x0);
            x.zip_mut_with(eps, |xv, &e| *xv += n * e);
        }
        SamplerKind::Ancestral => {
            let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
            let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
            x.zip_mut_with(eps, |xv, &e| *xv = inv_sqrt_alpha * (*xv - coef * e));
            if t > 1 {
                let sigma = sched.posterior_var(t).sqrt();
                for (mut r, rng) in x.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
                    r.iter_mut()
                        .for_each(|v| *v += sigma * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
    }
}

/// Runs the reverse chain for a batch of rows from `t_start` down to 1.
///
/// `on_record(t, x̂_0)` is called at every step selected by `record`.
/// Returns the final `x_0` rows.
pub fn run_chains<P, F>(
    mut x: Array2<f64>,
    t_start: usize,
    model: &P,
    sched: &NoiseSchedule,
    kind: SamplerKind,
    rngs: &mut [ChaCha8Rng],
    record: impl Fn(usize) -> bool,
    mut on_record: F,
) -> Array2<f64>
where
    P: NoisePredictor + ?Sized,
    F: FnMut(usize, &Array2<f64>),
{
    assert_eq!(rngs.len(), x.nrows(), "one rng per chain");
    for t in (1..=t_start).rev() {
        let eps = model.predict_rows(x.view(), t);
        let x0_hat = x0_from_eps(&x, &eps, t, sched);
        if record(t) {
            on_record(t, &x0_hat);
        }
        step_rows(&mut x, &eps, &x0_hat, t, sched, kind, rngs);
    }
    x
}

/// A single reverse step `x_t → x_{t−1}`; ancestral noise is drawn from
/// `config.rng_seed`.
pub fn reverse_step<P: NoisePredictor + ?Sized>(
    xt: &Image,
    t: usize,
    model: &P,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<Image> {
    sched.check_timestep(t)?;
    check_shape(model, xt)?;
    let mut x = row(xt).to_owned();
    let eps = model.predict_rows(x.view(), t);
    let x0_hat = x0_from_eps(&x, &eps, t, sched);
    let mut rngs = [ChaCha8Rng::seed_from_u64(config.rng_seed)];
    step_rows(&mut x, &eps, &x0_hat, t, sched, config.kind, &mut rngs);
    Image::new(xt.shape(), x.into_raw_vec_and_offset().0)
}

/// Full reverse chain from an explicit `x_t`.
pub fn sample_from<P: NoisePredictor + ?Sized>(
    xt: &Image,
    t: usize,
    model: &P,
    sched: &NoiseSchedule,
    kind: SamplerKind,
    seed: u64,
) -> Result<Image> {
    sched.check_timestep(t)?;
    check_shape(model, xt)?;
    let mut rngs = [ChaCha8Rng::seed_from_u64(seed)];
    let out = run_chains(row(xt).to_owned(), t, model, sched, kind, &mut rngs, |_| false, |_, _| {});
    Image::new(xt.shape(), out.into_raw_vec_and_offset().0)
}

pub(crate) fn standard_normal_row<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Recorded `(t, x̂_0(t))` pairs, ordered by decreasing `t`.
pub type Trajectory = Vec<(usize, Image)>;

/// Masks `xq`, forward-noises it to `t_start` and records `x̂_0` estimates
/// on the way back down to `t = 1`.
pub fn reconstruct_trajectory<P: NoisePredictor + ?Sized>(
    xq: &Image,
    mask: &PixelMask,
    model: &P,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<Trajectory> {
    Ok(reconstruct_trajectories(xq, std::slice::from_ref(mask), model, sched, config)?
        .pop()
        .expect("one mask"))
}

/// [`reconstruct_trajectory`] for several masks of the same query, batched.
///
/// Every mask shares the forward noise and ancestral noise stream seeded by
/// `config.rng_seed`, so results are invariant to the order of `masks`.
pub fn reconstruct_trajectories<P: NoisePredictor + ?Sized>(
    xq: &Image,
    masks: &[PixelMask],
    model: &P,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<Vec<Trajectory>> {
    config.validate(sched)?;
    check_shape(model, xq)?;
    let shape = xq.shape();
    let d = shape.len();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let eps = Image::new(shape, standard_normal_row(d, &mut noise_rng))?;
    let ab = sched.alpha_bar(config.t_start);

    let mut x = Array2::zeros((masks.len(), d));
    for (i, mask) in masks.iter().enumerate() {
        let masked = apply_mask(xq, mask)?;
        let xt = sched.forward_noise_with(&masked, ab, &eps);
        x.row_mut(i).assign(&ndarray::ArrayView1::from(xt.pixels()));
    }
    // Ancestral streams continue from where the forward noise left off.
    let mut rngs = vec![noise_rng; masks.len()];

    let mut out: Vec<Trajectory> = vec![Vec::new(); masks.len()];
    run_chains(
        x,
        config.t_start,
        model,
        sched,
        config.kind,
        &mut rngs,
        |t| config.records(t),
        |t, x0_hat| {
            for (traj, r) in out.iter_mut().zip(x0_hat.axis_iter(Axis(0))) {
                traj.push((t, Image::new(shape, r.to_vec()).expect("shape")));
            }
        },
    );
    Ok(out)
}
