use diffaudit_core::diffusion::*;
use diffaudit_core::image::{Image, Shape};
use diffaudit_core::occlusion::PixelMask;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Double-double running product, exact to ~32 significant digits.
fn dd_product(factors: impl Iterator<Item = f64>) -> Vec<f64> {
    let (mut hi, mut lo) = (1.0f64, 0.0f64);
    let mut out = Vec::new();
    for a in factors {
        let p = hi * a;
        let e = hi.mul_add(a, -p);
        let l = lo.mul_add(a, e);
        let s = p + l;
        lo = l - (s - p);
        hi = s;
        out.push(hi + lo);
    }
    out
}

fn linear_betas(t: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..t).map(|i| lo + (hi - lo) * i as f64 / (t - 1) as f64).collect()
}

#[test]
fn alpha_bar_matches_extended_precision_product() {
    for &(t, lo, hi) in &[(2, 0.1, 0.1), (200, 1e-4, 0.02), (1000, 1e-4, 0.02), (37, 0.003, 0.4)] {
        let sched = NoiseSchedule::linear(t, lo, hi).unwrap();
        let oracle = dd_product(linear_betas(t, lo, hi).into_iter().map(|b| 1.0 - b));
        for (s, want) in oracle.iter().enumerate() {
            let got = sched.alpha_bar(s + 1);
            assert!(((got - want) / want).abs() < 1e-12, "T={t} t={} got {got} want {want}", s + 1);
        }
    }
}

#[test]
fn schedule_examples() {
    let s = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
    assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
    assert!((s.alpha_bar(2) - 0.81).abs() < 1e-15);
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    assert!(s.alpha_bar(1000) < 0.01);
    assert!((2..=1000).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1)));
    assert!(NoiseSchedule::linear(1, 1e-4, 0.02).is_err());
    assert!(NoiseSchedule::linear(10, 0.02, 1e-4).is_err());
    assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
    assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
}

#[test]
fn posterior_variance_formula() {
    let s = NoiseSchedule::linear(50, 1e-4, 0.05).unwrap();
    assert_eq!(s.posterior_var(1), s.beta(1));
    for t in 2..=50 {
        let want = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
        assert!((s.posterior_var(t) - want).abs() <= 1e-15 * want.max(1e-300));
    }
}

fn random_image(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Image {
    Image::new(shape, (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn forward_noise_closed_form() {
    let s = NoiseSchedule::linear(2, 0.19, 0.19).unwrap();
    let x0 = Image::new(Shape::new(1, 3, 1), vec![0.2, 0.5, 1.0]).unwrap();
    let zero = Image::zeros(x0.shape());
    let out = s.forward_noise(&x0, 1, &zero).unwrap();
    for (o, x) in out.pixels().iter().zip(x0.pixels()) {
        assert!((o - 0.9 * x).abs() < 1e-15);
    }
    let wrong = Image::zeros(Shape::new(3, 1, 1));
    assert!(s.forward_noise(&x0, 1, &wrong).is_err());
    assert!(s.forward_noise(&x0, 3, &zero).is_err());
}

/// Mean and variance of the closed-form marginal against iterated one-step
/// noising, 10,000 trials on an 8×8 image.
pub fn forward_marginal_errors() -> (f64, f64) {
    let sched = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
    let t = 100;
    let shape = Shape::new(8, 8, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x0 = random_image(shape, &mut rng, 0.0, 1.0);
    let trials = 10_000;
    let d = shape.len();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut x = vec![0.0; d];
    for _ in 0..trials {
        x.copy_from_slice(x0.pixels());
        for s in 1..=t {
            let (a, b) = (sched.alpha(s).sqrt(), sched.beta(s).sqrt());
            for v in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = a * *v + b * z;
            }
        }
        for i in 0..d {
            sum[i] += x[i];
            sum_sq[i] += x[i] * x[i];
        }
    }
    let n = trials as f64;
    let ab = sched.alpha_bar(t);
    let (mut num, mut den, mut var_sum) = (0.0, 0.0, 0.0);
    for i in 0..d {
        let mean = sum[i] / n;
        let want = ab.sqrt() * x0.pixels()[i];
        num += (mean - want).powi(2);
        den += want * want;
        var_sum += sum_sq[i] / n - mean * mean;
    }
    let mean_err = (num / den).sqrt();
    let var_err = ((var_sum / d as f64) - (1.0 - ab)).abs() / (1.0 - ab);
    (mean_err, var_err)
}

#[test]
fn forward_marginal_matches_iterated_steps() {
    let (mean_err, var_err) = forward_marginal_errors();
    assert!(mean_err < 0.02, "mean relative error {mean_err}");
    assert!(var_err < 0.02, "variance relative error {var_err}");
}

struct ZeroPredictor(Shape);

impl NoisePredictor for ZeroPredictor {
    fn image_shape(&self) -> Shape {
        self.0
    }
    fn predict_rows(&self, x: ArrayView2<'_, f64>, _t: usize) -> Array2<f64> {
        Array2::zeros(x.raw_dim())
    }
}

/// Always predicts a fixed noise image.
struct FixedPredictor(Image);

impl NoisePredictor for FixedPredictor {
    fn image_shape(&self) -> Shape {
        self.0.shape()
    }
    fn predict_rows(&self, x: ArrayView2<'_, f64>, _t: usize) -> Array2<f64> {
        let row = ArrayView2::from_shape((1, self.0.len()), self.0.pixels()).unwrap();
        Array2::from_shape_fn(x.raw_dim(), |(_, j)| row[[0, j]])
    }
}

#[test]
fn predict_x0_examples() {
    let shape = Shape::new(3, 3, 1);
    let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xt = random_image(shape, &mut rng, -1.0, 2.0);
    let out = predict_x0(&xt, 40, &ZeroPredictor(shape), &sched).unwrap();
    let s = sched.alpha_bar(40).sqrt();
    for (o, x) in out.pixels().iter().zip(xt.pixels()) {
        assert!((o - x / s).abs() < 1e-12);
    }

    let x0 = random_image(shape, &mut rng, 0.0, 1.0);
    let eps = random_image(shape, &mut rng, -2.0, 2.0);
    for t in [1, 17, 100] {
        let xt = sched.forward_noise(&x0, t, &eps).unwrap();
        let rec = predict_x0(&xt, t, &FixedPredictor(eps.clone()), &sched).unwrap();
        for (r, x) in rec.pixels().iter().zip(x0.pixels()) {
            assert!((r - x).abs() < 1e-9, "t={t}");
        }
    }

    for t in [3, 50, 99] {
        let xt = random_image(shape, &mut rng, -1.0, 2.0);
        let e = random_image(shape, &mut rng, -2.0, 2.0);
        let got = predict_x0(&xt, t, &FixedPredictor(e.clone()), &sched).unwrap();
        let ab = sched.alpha_bar(t);
        for i in 0..shape.len() {
            let want = (xt.pixels()[i] - (1.0 - ab).sqrt() * e.pixels()[i]) / ab.sqrt();
            assert!((got.pixels()[i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn reverse_step_formulas() {
    let shape = Shape::new(2, 2, 1);
    let sched = NoiseSchedule::linear(30, 1e-3, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xt = random_image(shape, &mut rng, -1.0, 2.0);
    let e = random_image(shape, &mut rng, -2.0, 2.0);
    let model = FixedPredictor(e.clone());
    let t = 12;
    let det = SamplerConfig {
        kind: SamplerKind::Deterministic,
        t_start: t,
        record_every: 1,
        rng_seed: 0,
    };
    let out = reverse_step(&xt, t, &model, &sched, &det).unwrap();
    let (ab, abp) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
    for i in 0..4 {
        let x0 = (xt.pixels()[i] - (1.0 - ab).sqrt() * e.pixels()[i]) / ab.sqrt();
        let want = abp.sqrt() * x0 + (1.0 - abp).sqrt() * e.pixels()[i];
        assert!((out.pixels()[i] - want).abs() < 1e-12);
    }
    assert_eq!(out, reverse_step(&xt, t, &model, &sched, &det).unwrap());

    // At t = 1 the ancestral step is noise free and lands on the posterior mean.
    let anc = SamplerConfig {
        kind: SamplerKind::Ancestral,
        ..det
    };
    let a = reverse_step(&xt, 1, &model, &sched, &anc).unwrap();
    let b = reverse_step(&xt, 1, &model, &sched, &SamplerConfig { rng_seed: 99, ..anc.clone() }).unwrap();
    assert_eq!(a, b);
    let at = reverse_step(&xt, t, &model, &sched, &anc).unwrap();
    assert_eq!(at, reverse_step(&xt, t, &model, &sched, &anc).unwrap());
}

#[test]
fn trajectory_bookkeeping() {
    let shape = Shape::new(4, 4, 1);
    let sched = NoiseSchedule::linear(40, 1e-4, 0.02).unwrap();
    let dims = DenoiserDims::new(shape, 8, 8).unwrap();
    let model = Denoiser::init(dims, &sched, &mut ChaCha8Rng::seed_from_u64(1));
    let xq = Image::filled(shape, 0.5);
    let mask = PixelMask::full(4, 4);
    let cfg = |t_start, record_every| SamplerConfig {
        kind: SamplerKind::Deterministic,
        t_start,
        record_every,
        rng_seed: 3,
    };
    assert_eq!(reconstruct_trajectory(&xq, &mask, &model, &sched, &cfg(20, 20)).unwrap().len(), 1);
    let one = reconstruct_trajectory(&xq, &mask, &model, &sched, &cfg(1, 1)).unwrap();
    assert_eq!(one.iter().map(|(t, _)| *t).collect::<Vec<_>>(), vec![1]);
    let traj = reconstruct_trajectory(&xq, &mask, &model, &sched, &cfg(20, 4)).unwrap();
    let ts: Vec<usize> = traj.iter().map(|(t, _)| *t).collect();
    assert_eq!(ts, vec![17, 13, 9, 5, 1]);
    assert!(reconstruct_trajectory(&xq, &mask, &model, &sched, &cfg(41, 1)).is_err());
    assert!(reconstruct_trajectory(&xq, &mask, &model, &sched, &cfg(10, 0)).is_err());
}

/// Largest mismatch between analytic gradients and central differences,
/// as a relative error, on a 4×4 image and width-8 network.
pub fn gradient_check() -> f64 {
    let shape = Shape::new(4, 4, 1);
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let dims = DenoiserDims::new(shape, 8, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = Denoiser::init(dims, &sched, &mut rng);
    for t in model.layers_mut().tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let x = Array2::from_shape_fn((3, 16), |_| rng.random_range(-0.5..1.5));
    let eps = Array2::from_shape_fn((3, 16), |_| rng.sample::<f64, _>(StandardNormal));
    let ts = [1, 20, 50];
    let (_, grads) = model.loss_and_grad(x.view(), &ts, eps.view());
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 0..6 {
        for i in 0..grads.tensors()[k].len() {
            let orig = model.layers().tensors()[k][i];
            model.layers_mut().tensors_mut()[k][i] = orig + h;
            let up = model.loss(x.view(), &ts, eps.view());
            model.layers_mut().tensors_mut()[k][i] = orig - h;
            let down = model.loss(x.view(), &ts, eps.view());
            model.layers_mut().tensors_mut()[k][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors()[k][i];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-9 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let worst = gradient_check();
    assert!(worst < 1e-3, "worst relative gradient error {worst}");
}

fn tiny_training_set(n: usize) -> Vec<Image> {
    let shape = Shape::new(4, 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    (0..n).map(|_| random_image(shape, &mut rng, 0.0, 1.0)).collect()
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let images = tiny_training_set(6);
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 4,
        hidden: 32,
        embed_dim: 8,
        seed: 4,
        ..Default::default()
    };
    let a = train(&images, &sched, &cfg).unwrap();
    let b = train(&images, &sched, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.loss_curve, b.loss_curve);
    let window = |i: usize| a.loss_curve[i * 100..(i + 1) * 100].iter().sum::<f64>() / 100.0;
    assert!(window(2) <= window(1) && window(1) <= window(0));
    assert!(a.final_loss() < a.initial_loss);
    assert!(a.loss_curve_csv().starts_with("epoch,loss\n1,"));
}

#[test]
fn training_rejects_bad_input() {
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    assert!(train(&[], &sched, &TrainConfig::default()).is_err());
    let images = tiny_training_set(2);
    let bad = TrainConfig {
        lr: 0.0,
        ..Default::default()
    };
    assert!(train(&images, &sched, &bad).is_err());
    let mixed = vec![images[0].clone(), Image::zeros(Shape::new(2, 2, 1))];
    assert!(train(&mixed, &sched, &TrainConfig::default()).is_err());
}

#[test]
fn exploding_learning_rate_is_reported_as_divergence() {
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let images = tiny_training_set(4);
    let cfg = TrainConfig {
        epochs: 200,
        lr: 1e300,
        hidden: 8,
        embed_dim: 4,
        ..Default::default()
    };
    match train(&images, &sched, &cfg) {
        Err(e) => assert_eq!(e.class(), diffaudit_core::ErrorClass::Numeric),
        Ok(o) => panic!("expected divergence, final loss {}", o.final_loss()),
    }
}

#[test]
fn overfit_single_image_is_recovered_from_pure_noise() {
    let shape = Shape::new(6, 6, 1);
    let sched = NoiseSchedule::linear(40, 1e-4, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let target = random_image(shape, &mut rng, 0.1, 0.9);
    let cfg = TrainConfig {
        epochs: 3000,
        batch_size: 1,
        hidden: 64,
        embed_dim: 16,
        seed: 2,
        ..Default::default()
    };
    let out = train(std::slice::from_ref(&target), &sched, &cfg).unwrap();
    let start = Image::new(
        shape,
        (0..shape.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )
    .unwrap();
    let sample = sample_from(&start, 40, &out.model, &sched, SamplerKind::Deterministic, 0).unwrap();
    let det = SamplerConfig {
        kind: SamplerKind::Deterministic,
        t_start: 40,
        record_every: 40,
        rng_seed: 0,
    };
    let rmse = sample.rmse(&target).unwrap();
    assert!(rmse < 0.1, "rmse {rmse}");
    let traj = reconstruct_trajectory(&target, &PixelMask::full(6, 6), &out.model, &sched, &det).unwrap();
    let rec = traj.last().unwrap().1.rmse(&target).unwrap();
    assert!(rec < 0.1, "reconstruction rmse {rec}");
}

#[test]
fn checkpoint_round_trip_on_disk() {
    let sched = NoiseSchedule::linear(30, 1e-4, 0.02).unwrap();
    let dims = DenoiserDims::new(Shape::new(4, 4, 1), 8, 16).unwrap();
    let model = Denoiser::init(dims, &sched, &mut ChaCha8Rng::seed_from_u64(9));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dfa");
    checkpoint::save(&path, &model, &sched).unwrap();
    let (m2, s2) = checkpoint::load(&path).unwrap();
    assert_eq!(model, m2);
    assert_eq!(sched, s2);
    let err = checkpoint::load(&dir.path().join("missing.dfa")).unwrap_err();
    assert!(err.to_string().contains("missing.dfa"));
}
