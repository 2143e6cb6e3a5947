//! Three-layer fully connected noise predictor `ε_θ(x_t, t)`.
//!
//! The input row is the flattened noisy image concatenated with a
//! sinusoidal embedding of the timestep; two SiLU hidden layers feed a
//! linear output `F` of image size. Gradients are computed by hand.
//!
//! The image enters centred and scaled to unit variance, and the noise
//! prediction combines a fixed linear skip path with `F`:
//!
//! ```text
//! y   = x_t − √ᾱ_t·μ            v = ᾱ_t·σ_d² + (1 − ᾱ_t)
//! ε̂   = (√(1−ᾱ_t) / v)·y − (√ᾱ_t·σ_d / √v)·F(y / √v, t)
//! ```
//!
//! With `F = 0` this is the best linear noise estimate for pixels of mean
//! `μ` and standard deviation `σ_d`; the network only learns the
//! correction. Without the skip path a hidden layer narrower than the image
//! cannot carry the noise through, and the loss stalls near 1.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::{Image, Shape};

/// Pixel mean `μ` assumed by the input scaling.
pub const PIXEL_MEAN: f64 = 0.5;
/// Pixel standard deviation `σ_d` assumed by the input scaling.
pub const PIXEL_STD: f64 = 0.1;

/// Per-timestep scalars of the skip path.
#[derive(Debug, Clone, Copy)]
struct Precond {
    shift: f64,
    c_in: f64,
    c_skip: f64,
    c_out: f64,
}

impl Precond {
    fn at(sched: &NoiseSchedule, t: usize) -> Self {
        let ab = sched.alpha_bar(t);
        let (s, sigma) = (ab.sqrt(), (1.0 - ab).sqrt());
        let v = ab * PIXEL_STD * PIXEL_STD + (1.0 - ab);
        Self {
            shift: s * PIXEL_MEAN,
            c_in: 1.0 / v.sqrt(),
            c_skip: sigma / v,
            c_out: s * PIXEL_STD / v.sqrt(),
        }
    }
}

/// Anything that predicts the noise component of a batch of noisy rows
/// sharing one timestep.
pub trait NoisePredictor: Sync {
    fn image_shape(&self) -> Shape;

    /// `x` is `B × (H·W·C)`; returns the predicted noise with the same shape.
    fn predict_rows(&self, x: ArrayView2<'_, f64>, t: usize) -> Array2<f64>;

    fn predict_noise(&self, xt: &Image, t: usize) -> Result<Image> {
        let shape = self.image_shape();
        if xt.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                found: xt.shape().to_string(),
            });
        }
        let row = ArrayView2::from_shape((1, shape.len()), xt.pixels()).expect("row view");
        let out = self.predict_rows(row, t);
        Image::new(shape, out.into_raw_vec_and_offset().0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserDims {
    pub image: Shape,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl DenoiserDims {
    pub fn new(image: Shape, embed_dim: usize, hidden: usize) -> Result<Self> {
        if image.is_empty() || hidden == 0 || embed_dim == 0 || embed_dim % 2 != 0 {
            return Err(Error::InvalidRange(format!(
                "denoiser dims need non-empty image, hidden > 0 and even embed_dim > 0 \
                 (image {image}, embed_dim {embed_dim}, hidden {hidden})"
            )));
        }
        Ok(Self {
            image,
            embed_dim,
            hidden,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.image.len() + self.embed_dim
    }

    pub fn param_count(&self) -> usize {
        let (i, h, o) = (self.input_dim(), self.hidden, self.image.len());
        i * h + h + h * h + h + h * o + o
    }
}

/// Weights and biases of the three layers, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Layers {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl Layers {
    pub fn zeros(dims: &DenoiserDims) -> Self {
        let (i, h, o) = (dims.input_dim(), dims.hidden, dims.image.len());
        Self {
            w1: Array2::zeros((i, h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            w3: Array2::zeros((h, o)),
            b3: Array1::zeros(o),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w3.as_slice().expect("standard layout"),
            self.b3.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w3.as_slice_mut().expect("standard layout"),
            self.b3.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    dims: DenoiserDims,
    layers: Layers,
    sched: NoiseSchedule,
}

/// Activations kept from a forward pass for backprop.
struct Cache {
    y: Array2<f64>,
    pre: Vec<Precond>,
    input: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
}

impl Denoiser {
    /// Xavier-uniform weights, zero biases.
    pub fn init<R: Rng>(dims: DenoiserDims, sched: &NoiseSchedule, rng: &mut R) -> Self {
        let mut layers = Layers::zeros(&dims);
        for w in [&mut layers.w1, &mut layers.w2, &mut layers.w3] {
            let (fan_in, fan_out) = w.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            w.iter_mut().for_each(|v| *v = dist.sample(rng));
        }
        Self {
            dims,
            layers,
            sched: sched.clone(),
        }
    }

    pub fn from_layers(dims: DenoiserDims, sched: &NoiseSchedule, layers: Layers) -> Result<Self> {
        let expect = Layers::zeros(&dims);
        let shapes_match = expect
            .tensors()
            .iter()
            .zip(layers.tensors())
            .all(|(a, b)| a.len() == b.len())
            && expect.w1.dim() == layers.w1.dim()
            && expect.w2.dim() == layers.w2.dim()
            && expect.w3.dim() == layers.w3.dim();
        if !shapes_match {
            return Err(Error::ShapeMismatch {
                expected: format!("layers for {dims:?}"),
                found: "differently sized tensors".into(),
            });
        }
        Ok(Self {
            dims,
            layers,
            sched: sched.clone(),
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn dims(&self) -> DenoiserDims {
        self.dims
    }

    pub fn layers(&self) -> &Layers {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut Layers {
        &mut self.layers
    }

    fn precond(&self, ts: &[usize]) -> Vec<Precond> {
        ts.iter()
            .map(|&t| {
                self.sched.check_timestep(t).expect("timestep within schedule");
                Precond::at(&self.sched, t)
            })
            .collect()
    }

    fn input_rows(&self, y: &Array2<f64>, ts: &[usize], pre: &[Precond]) -> Array2<f64> {
        let d = self.dims.image.len();
        let mut input = Array2::zeros((y.nrows(), self.dims.input_dim()));
        for (((mut row, yr), &t), p) in input.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))).zip(ts).zip(pre) {
            row.slice_mut(s![..d]).assign(&(&yr * p.c_in));
            row.slice_mut(s![d..]).assign(&timestep_embedding(t, self.dims.embed_dim));
        }
        input
    }

    fn forward_cached(&self, x: ArrayView2<'_, f64>, ts: &[usize]) -> (Array2<f64>, Cache) {
        assert_eq!(x.nrows(), ts.len(), "one timestep per row");
        let pre = self.precond(ts);
        let mut y = x.to_owned();
        for (mut row, p) in y.axis_iter_mut(Axis(0)).zip(&pre) {
            row -= p.shift;
        }
        let input = self.input_rows(&y, ts, &pre);
        let l = &self.layers;
        let z1 = input.dot(&l.w1) + &l.b1;
        let h1 = z1.mapv(silu);
        let z2 = h1.dot(&l.w2) + &l.b2;
        let h2 = z2.mapv(silu);
        let f = h2.dot(&l.w3) + &l.b3;
        let mut out = f;
        for ((mut o, yr), p) in out.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))).zip(&pre) {
            o.zip_mut_with(&yr, |o, &yv| *o = p.c_skip * yv - p.c_out * *o);
        }
        (
            out,
            Cache {
                y,
                pre,
                input,
                z1,
                h1,
                z2,
                h2,
            },
        )
    }

    /// Forward pass with a per-row timestep.
    pub fn forward(&self, x: ArrayView2<'_, f64>, ts: &[usize]) -> Array2<f64> {
        self.forward_cached(x, ts).0
    }

    /// Mean-squared noise-prediction loss over a batch and its gradient.
    ///
    /// The loss is `(1/B) Σ_b (1/D) ‖ε_b − ε_θ(x_b, t_b)‖²`.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        ts: &[usize],
        eps: ArrayView2<'_, f64>,
    ) -> (f64, Layers) {
        let (out, cache) = self.forward_cached(x, ts);
        let diff = out - &eps;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
        debug_assert_eq!(cache.y.dim(), diff.dim());

        let l = &self.layers;
        // Gradient with respect to the network output F.
        let mut d_out = diff * (2.0 / n);
        for (mut row, p) in d_out.axis_iter_mut(Axis(0)).zip(&cache.pre) {
            row *= -p.c_out;
        }
        let w3 = cache.h2.t().dot(&d_out);
        let b3 = d_out.sum_axis(Axis(0));
        let d_h2 = d_out.dot(&l.w3.t());
        let d_z2 = d_h2 * cache.z2.mapv(silu_grad);
        let w2 = cache.h1.t().dot(&d_z2);
        let b2 = d_z2.sum_axis(Axis(0));
        let d_h1 = d_z2.dot(&l.w2.t());
        let d_z1 = d_h1 * cache.z1.mapv(silu_grad);
        let w1 = cache.input.t().dot(&d_z1);
        let b1 = d_z1.sum_axis(Axis(0));
        (
            loss,
            Layers {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            },
        )
    }

    /// Loss only; used by finite-difference checks.
    pub fn loss(&self, x: ArrayView2<'_, f64>, ts: &[usize], eps: ArrayView2<'_, f64>) -> f64 {
        let out = self.forward(x, ts);
        let diff = out - &eps;
        diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64
    }
}

impl NoisePredictor for Denoiser {
    fn image_shape(&self) -> Shape {
        self.dims.image
    }

    fn predict_rows(&self, x: ArrayView2<'_, f64>, t: usize) -> Array2<f64> {
        // The embedding contributes the same pre-activation to every row.
        let d = self.dims.image.len();
        let l = &self.layers;
        let p = self.precond(&[t])[0];
        let y = x.mapv(|v| v - p.shift);
        let emb = timestep_embedding(t, self.dims.embed_dim);
        let bias1 = emb.dot(&l.w1.slice(s![d.., ..])) + &l.b1;
        let h1 = ((&y * p.c_in).dot(&l.w1.slice(s![..d, ..])) + &bias1).mapv(silu);
        let h2 = (h1.dot(&l.w2) + &l.b2).mapv(silu);
        let mut out = h2.dot(&l.w3) + &l.b3;
        out.zip_mut_with(&y, |o, &yv| *o = p.c_skip * yv - p.c_out * *o);
        out
    }
}

/// Sinusoidal embedding `[sin(t·ω_i)…, cos(t·ω_i)…]` with
/// `ω_i = 10000^(−i/half)`.
pub fn timestep_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut emb = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        emb[i] = arg.sin();
        emb[half + i] = arg.cos();
    }
    emb
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Denoiser {
        let dims = DenoiserDims::new(Shape::new(4, 4, 1), 8, 8).unwrap();
        let sched = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        Denoiser::init(dims, &sched, &mut ChaCha8Rng::seed_from_u64(7))
    }

    #[test]
    fn output_matches_image_dimensionality() {
        let model = small();
        let x = Array2::from_elem((3, 16), 0.5);
        assert_eq!(model.forward(x.view(), &[1, 5, 9]).dim(), (3, 16));
        assert_eq!(model.predict_rows(x.view(), 4).dim(), (3, 16));
    }

    #[test]
    fn fast_path_agrees_with_generic_forward() {
        let model = small();
        let x = Array2::from_shape_fn((2, 16), |(i, j)| (i * 16 + j) as f64 / 32.0 - 0.4);
        let a = model.forward(x.view(), &[17, 17]);
        let b = model.predict_rows(x.view(), 17);
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_network_gives_linear_noise_estimate() {
        let mut model = small();
        for t in model.layers_mut().tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Array2::from_elem((1, 16), 0.9);
        let t = 12;
        let ab = model.schedule().alpha_bar(t);
        let v = ab * PIXEL_STD * PIXEL_STD + 1.0 - ab;
        let expect = (1.0 - ab).sqrt() / v * (0.9 - ab.sqrt() * PIXEL_MEAN);
        let out = model.predict_rows(x.view(), t);
        assert!(out.iter().all(|o| (o - expect).abs() < 1e-12 * expect.abs().max(1.0)));
    }

    #[test]
    fn embedding_is_bounded_and_distinguishes_steps() {
        let a = timestep_embedding(3, 32);
        let b = timestep_embedding(4, 32);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-3));
        assert_eq!(a[16], (3.0f64).cos());
    }

    #[test]
    fn rejects_odd_embedding() {
        assert!(DenoiserDims::new(Shape::new(4, 4, 1), 7, 8).is_err());
    }

    #[test]
    fn silu_grad_matches_difference_quotient() {
        for z in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(z + 1e-6) - silu(z - 1e-6)) / 2e-6;
            assert!((fd - silu_grad(z)).abs() < 1e-8);
        }
    }
}
