use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use super::*;
use crate::fields::RealField;
use crate::noise::{uniform_schedule, NoiseKind, NoiseModel};
use crate::seed;
use crate::wavelets::build_bank;
use crate::wph::{ClassMask, NormalizationRef, WphClass};

fn random_field(h: usize, w: usize, s: u64) -> RealField {
    let mut rng = seed::rng(s);
    RealField::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

fn smooth_field(h: usize, w: usize, s: u64) -> RealField {
    let mut rng = seed::rng(s);
    let mut f = crate::noise::colored_gaussian((h, w), -1.5, &mut rng);
    f.as_mut_slice().iter_mut().for_each(|v| *v += 0.1);
    f
}

fn fd_check(rep: &dyn Representation, x: &RealField, noise: &NoiseModel, seed: u64, alpha: f64) {
    let phi_y = rep.eval(&random_field(x.height(), x.width(), 77)).unwrap();
    let draws = Draws::seeded(noise, seed, 6);
    let e = mc_loss_eval(x, &phi_y, rep, draws, alpha, true).unwrap();
    let g = e.gradient.unwrap();
    let mut worst: f64 = 0.0;
    for d in 0..4 {
        let dir = random_field(x.height(), x.width(), 1000 + d);
        let h = 1e-5;
        let plus = &(x + &dir.scaled(h));
        let minus = &(x - &dir.scaled(h));
        let vp = mc_loss_eval(plus, &phi_y, rep, draws, alpha, false).unwrap().value;
        let vm = mc_loss_eval(minus, &phi_y, rep, draws, alpha, false).unwrap().value;
        let fd = (vp - vm) / (2.0 * h);
        let an = g.dot(&dir);
        worst = worst.max((fd - an).abs() / an.abs().max(1e-8));
    }
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn mc_gradient_matches_finite_differences() {
    let noise = NoiseModel::white(0.3, (6, 6)).unwrap();
    let x = random_field(6, 6, 1);
    fd_check(&DiagonalLinear::new(random_field(6, 6, 2)), &x, &noise, 5, 1.0);
    fd_check(&PointwiseSquare::new(6, 6), &x, &noise, 5, 0.7);
    let a = DMatrix::from_fn(4, 36, |i, j| ((i * 36 + j) as f64 * 0.37).sin());
    fd_check(&QuadraticForm::new(a, (6, 6)).unwrap(), &x, &noise, 5, 1.0);

    let bank = build_bank(16, 16, 2, 2).unwrap();
    let x = smooth_field(16, 16, 3);
    let r = NormalizationRef::from_field(&x, &bank).unwrap();
    let rep = WphRepresentation::normalized(bank, ClassMask::ALL, &r).unwrap();
    let noise = NoiseModel::white(0.2, (16, 16)).unwrap();
    fd_check(&rep, &x, &noise, 9, 1.0);
}

#[test]
fn linear_rep_gradient_vanishes_at_observation() {
    let y = random_field(4, 4, 4);
    let rep = DiagonalLinear::new(RealField::from_fn(4, 4, |r, c| 0.5 + (r + c) as f64 * 0.1));
    let noise = NoiseModel::white(1.0, (4, 4)).unwrap();
    let phi_y = rep.eval(&y).unwrap();
    let (_, g) = mc_loss(&y, &phi_y, &rep, &noise, 1.0, 10_000, 3).unwrap();
    // each component is a mean of 1e4 terms 2 w^2 e with sd <= 2 * 1.8^2 * 1
    for v in g.as_slice() {
        assert!(v.abs() < 5.0 * 2.0 * 1.8f64.powi(2) / 100.0, "{v}");
    }
}

#[test]
fn self_match_value_vanishes_with_alpha() {
    let bank = build_bank(16, 16, 2, 2).unwrap();
    let rep = WphRepresentation::new(bank, ClassMask::ALL);
    let x = smooth_field(16, 16, 5);
    let phi = rep.eval(&x).unwrap();
    let noise = NoiseModel::white(1.0, (16, 16)).unwrap();
    let mut prev = f64::INFINITY;
    for alpha in [1e-1, 1e-2, 1e-3, 0.0] {
        let v = mc_loss_eval(&x, &phi, &rep, Draws::seeded(&noise, 1, 4), alpha, false)
            .unwrap()
            .value;
        assert!(v < prev);
        prev = v;
    }
    assert_eq!(prev, 0.0);
}

#[test]
fn mc_loss_is_independent_of_thread_count() {
    let bank = build_bank(16, 16, 2, 2).unwrap();
    let rep = WphRepresentation::new(bank, ClassMask::ALL);
    let x = smooth_field(16, 16, 6);
    let phi_y = rep.eval(&smooth_field(16, 16, 7)).unwrap();
    let noise = NoiseModel::white(0.5, (16, 16)).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| mc_loss(&x, &phi_y, &rep, &noise, 1.0, 100, 11).unwrap())
    };
    let (v1, g1) = run(1);
    let (v3, g3) = run(3);
    assert_eq!(v1.to_bits(), v3.to_bits());
    assert_eq!(g1, g3);
}

#[test]
fn fixed_and_seeded_draws_agree() {
    let noise = NoiseModel::new(NoiseKind::Pink, 0.4, (8, 8)).unwrap();
    let batch = noise.batch(21, 40, false);
    let rep = PointwiseSquare::new(8, 8);
    let x = random_field(8, 8, 2);
    let phi_y = rep.eval(&random_field(8, 8, 3)).unwrap();
    let a = mc_loss_eval(&x, &phi_y, &rep, Draws::seeded(&noise, 21, 40), 1.0, true).unwrap();
    let b = mc_loss_eval(&x, &phi_y, &rep, Draws::Fixed(&batch), 1.0, true).unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.gradient, b.gradient);
    let anti = noise.batch(21, 40, true);
    let c = mc_loss_eval(&x, &phi_y, &rep, Draws::antithetic(&noise, 21, 40), 1.0, false).unwrap();
    let d = mc_loss_eval(&x, &phi_y, &rep, Draws::Fixed(&anti), 1.0, false).unwrap();
    assert_eq!(c.value, d.value);
    assert_eq!(a.sample_values.len(), 40);
    assert!(a.standard_error() > 0.0);
}

#[test]
fn perturbative_limits() {
    let bank = build_bank(16, 16, 2, 2).unwrap();
    let mask = ClassMask::from_classes(&[WphClass::S11, WphClass::S01]);
    let rep = WphRepresentation::new(bank, mask);
    let x = smooth_field(16, 16, 8);
    let y = smooth_field(16, 16, 9);
    let phi_y = rep.eval(&y).unwrap();
    let var = RealField::filled(16, 16, 0.3);
    let (v0, _) = perturbative_loss(&x, &phi_y, &rep, &var, 0.0).unwrap();
    let r2: f64 = rep.eval(&x).unwrap().iter().zip(&phi_y).map(|(a, b)| (a - b).norm_sqr()).sum();
    assert!((v0 - r2).abs() <= 1e-12 * r2);

    let phi_x = rep.eval(&x).unwrap();
    let (vs, _) = perturbative_loss(&x, &phi_x, &rep, &var, 0.5).unwrap();
    let (jn, _) = rep.perturbative(&var).unwrap().terms(&x).unwrap();
    let expect = 0.25 * jn.iter().sum::<f64>();
    assert!((vs - expect).abs() <= 1e-10 * expect);
}

#[test]
fn simple_perturbative_models_match_fd_and_mc() {
    let x = random_field(3, 3, 12);
    let y = random_field(3, 3, 13);
    let var = RealField::from_fn(3, 3, |r, c| 0.2 + 0.05 * (r * 3 + c) as f64);
    let a = DMatrix::from_fn(2, 9, |i, j| ((i * 9 + j) as f64 * 0.61).cos());
    let reps: Vec<Box<dyn Representation>> = vec![
        Box::new(DiagonalLinear::new(random_field(3, 3, 14))),
        Box::new(PointwiseSquare::new(3, 3)),
        Box::new(QuadraticForm::new(a, (3, 3)).unwrap()),
    ];
    for rep in &reps {
        let phi_y = rep.eval(&y).unwrap();
        let (_, g) = perturbative_loss(&x, &phi_y, rep.as_ref(), &var, 0.8).unwrap();
        let dir = random_field(3, 3, 15);
        let h = 1e-6;
        let vp = perturbative_loss(&(&x + &dir.scaled(h)), &phi_y, rep.as_ref(), &var, 0.8).unwrap().0;
        let vm = perturbative_loss(&(&x - &dir.scaled(h)), &phi_y, rep.as_ref(), &var, 0.8).unwrap().0;
        let fd = (vp - vm) / (2.0 * h);
        assert!((fd - g.dot(&dir)).abs() < 1e-6 * fd.abs().max(1.0), "{fd} vs {}", g.dot(&dir));
    }

    // polynomial representations of degree 2: the expansion differs from the
    // exact loss only at order alpha^4
    let rep = PointwiseSquare::new(3, 3);
    let phi_y = rep.eval(&y).unwrap();
    let noise_std = 0.5;
    let noise = NoiseModel::white(noise_std, (3, 3)).unwrap();
    let var = noise.pixelwise_variance();
    let alpha = 0.05;
    let e = mc_loss_eval(&x, &phi_y, &rep, Draws::seeded(&noise, 3, 200_000), alpha, false).unwrap();
    let (p, _) = perturbative_loss(&x, &phi_y, &rep, &var, alpha).unwrap();
    assert!((e.value - p).abs() < 4.0 * e.standard_error() + 1e-6, "{} vs {p}", e.value);
}

fn linear_setup() -> (RealField, NoiseModel, DiagonalLinear) {
    let y = random_field(8, 8, 31);
    let noise = NoiseModel::white(0.5, (8, 8)).unwrap();
    let rep = DiagonalLinear::new(RealField::from_fn(8, 8, |r, c| 1.0 + 0.1 * ((r + 2 * c) % 5) as f64));
    (y, noise, rep)
}

#[test]
fn vanilla_linear_returns_observation() {
    let (y, noise, rep) = linear_setup();
    let start = &y + &random_field(8, 8, 32).scaled(0.3);
    let cfg = SeparationConfig {
        q: 50,
        iterations: 40,
        ..Default::default()
    };
    // plain draws: the batch minimizer is y minus the batch mean of the noise
    let (x, _) = vanilla_separate_from(&y, &start, &noise, &rep, &cfg).unwrap();
    let rms = ((&x - &y).norm_sq() / 64.0).sqrt();
    assert!(rms < 4.0 * 0.5 / 50f64.sqrt(), "rms {rms}");

    let cfg = SeparationConfig {
        antithetic: true,
        ..cfg
    };
    let (x, trace) = vanilla_separate_from(&y, &start, &noise, &rep, &cfg).unwrap();
    let rms = ((&x - &y).norm_sq() / 64.0).sqrt();
    assert!(rms < 1e-3, "rms {rms}");
    assert!(trace.abort.is_none());
    assert_eq!(trace.records.len(), 40);
    assert_eq!(trace.stage_outputs.len(), 1);
}

#[test]
fn vanilla_with_vanishing_noise_keeps_observation() {
    let bank = build_bank(16, 16, 2, 2).unwrap();
    let y = smooth_field(16, 16, 40);
    let r = NormalizationRef::from_field(&y, &bank).unwrap();
    let rep = WphRepresentation::normalized(bank, ClassMask::ALL, &r).unwrap();
    let noise = NoiseModel::white(1e-9, (16, 16)).unwrap();
    let cfg = SeparationConfig {
        q: 4,
        iterations: 5,
        ..Default::default()
    };
    let (x, _) = vanilla_separate(&y, &noise, &rep, &cfg).unwrap();
    assert!(((&x - &y).norm_sq() / 256.0).sqrt() < 1e-6);
}

#[test]
fn single_stage_diffusive_reproduces_vanilla() {
    let bank = build_bank(16, 16, 2, 2).unwrap();
    let y = smooth_field(16, 16, 41);
    let r = NormalizationRef::from_field(&y, &bank).unwrap();
    let rep = WphRepresentation::normalized(bank, ClassMask::ALL, &r).unwrap();
    let noise = NoiseModel::white(0.5, (16, 16)).unwrap();
    let cfg = SeparationConfig {
        q: 8,
        iterations: 6,
        seed: 99,
        ..Default::default()
    };
    let (a, ta) = vanilla_separate(&y, &noise, &rep, &cfg).unwrap();
    let (b, tb) = diffusive_separate(&y, &noise, &rep, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.losses(), tb.losses());
    let (c, _) = vanilla_separate(&y, &noise, &rep, &cfg).unwrap();
    assert_eq!(a, c);
}

#[test]
fn diffusive_stages_and_perturbative_path() {
    let bank = build_bank(16, 16, 2, 2).unwrap();
    let y = smooth_field(16, 16, 42);
    let r = NormalizationRef::from_field(&y, &bank).unwrap();
    let mask = ClassMask::from_classes(&[WphClass::S11, WphClass::S01]);
    let rep = WphRepresentation::normalized(bank, mask, &r).unwrap();
    let noise = NoiseModel::white(0.3, (16, 16)).unwrap();
    let mut cfg = SeparationConfig {
        q: 4,
        iterations: 3,
        schedule: uniform_schedule(3).unwrap(),
        ..Default::default()
    };
    let (_, t) = diffusive_separate(&y, &noise, &rep, &cfg).unwrap();
    assert_eq!(t.stage_outputs.len(), 3);
    assert_eq!(t.records.iter().filter(|r| r.stage == 2).count(), 3);

    cfg.loss_kind = LossKind::Perturbative;
    let (x, t) = diffusive_separate(&y, &noise, &rep, &cfg).unwrap();
    assert!(t.abort.is_none());
    assert!(x.is_finite());
    // within a stage the deterministic objective never increases
    for s in 0..3 {
        let l: Vec<f64> = t.records.iter().filter(|r| r.stage == s).map(|r| r.loss).collect();
        assert!(l.windows(2).all(|w| w[1] <= w[0]), "{l:?}");
    }
    assert!(vanilla_separate(&y, &noise, &rep, &cfg).is_err());
}

#[test]
fn unsupported_perturbative_is_reported() {
    struct Opaque;
    impl Representation for Opaque {
        fn shape(&self) -> (usize, usize) {
            (2, 2)
        }
        fn len(&self) -> usize {
            1
        }
        fn eval(&self, x: &RealField) -> crate::Result<Vec<Complex64>> {
            Ok(vec![Complex64::new(x.mean(), 0.0)])
        }
        fn gradient_adjoint(&self, _x: &RealField, c: &[Complex64]) -> crate::Result<RealField> {
            Ok(RealField::filled(2, 2, c[0].re / 2.0))
        }
    }
    let x = RealField::zeros(2, 2);
    let r = perturbative_loss(&x, &[Complex64::new(0.0, 0.0)], &Opaque, &x, 0.1);
    assert!(matches!(r, Err(crate::Error::Unsupported(_))));
}

#[test]
fn delouis_linear_returns_observation() {
    let (y, noise, rep) = linear_setup();
    let cfg = SeparationConfig {
        q: 64,
        iterations: 20,
        schedule: uniform_schedule(2).unwrap(),
        ..Default::default()
    };
    let (x, t) = delouis_separate(&y, &noise, &rep, &cfg).unwrap();
    // linear statistics: the bias is an average of noise, so the fixed point
    // is y minus that average; it is small at Q = 64
    let rms = ((&x - &y).norm_sq() / 64.0).sqrt();
    assert!(rms < 0.5 / 8.0 * 3.0, "rms {rms}");
    assert_eq!(t.stage_outputs.len(), 2);
    let one = SeparationConfig { q: 1, ..cfg };
    assert!(delouis_separate(&y, &noise, &rep, &one).is_err());
}

#[test]
fn bias_corrected_loss_gradient() {
    let bank = build_bank(16, 16, 2, 2).unwrap();
    let rep = WphRepresentation::new(bank, ClassMask::ALL);
    let x = smooth_field(16, 16, 50);
    let phi_y = rep.eval(&smooth_field(16, 16, 51)).unwrap();
    let mut rng = seed::rng(52);
    let bias: Vec<Complex64> = (0..rep.len())
        .map(|_| Complex64::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        .collect();
    let ones = vec![1.0; rep.len()];
    let (v, g) = bias_corrected_loss(&x, &phi_y, &bias, &ones, &rep).unwrap();
    let direct: f64 = rep
        .eval(&x)
        .unwrap()
        .iter()
        .zip(&bias)
        .zip(&phi_y)
        .map(|((p, b), t)| (p + b - t).norm_sqr())
        .sum();
    assert!((v - direct).abs() < 1e-12 * direct);
    let dir = random_field(16, 16, 53);
    let h = 1e-5;
    let vp = bias_corrected_loss(&(&x + &dir.scaled(h)), &phi_y, &bias, &ones, &rep).unwrap().0;
    let vm = bias_corrected_loss(&(&x - &dir.scaled(h)), &phi_y, &bias, &ones, &rep).unwrap().0;
    let fd = (vp - vm) / (2.0 * h);
    assert!((fd - g.dot(&dir)).abs() < 1e-5 * fd.abs());
}

#[test]
fn mean_plus_variance_decomposition() {
    let rep = PointwiseSquare::new(4, 4);
    let x = random_field(4, 4, 60);
    let phi_y = rep.eval(&random_field(4, 4, 61)).unwrap();
    let noise = NoiseModel::white(0.7, (4, 4)).unwrap();
    let draws = Draws::seeded(&noise, 62, 500);
    let e = mc_loss_eval(&x, &phi_y, &rep, draws, 1.0, false).unwrap();
    let s = corrupted_statistics(&x, &rep, draws, 1.0).unwrap();
    let split: f64 = s.variance.iter().sum::<f64>()
        + s.mean.iter().zip(&phi_y).map(|(m, t)| (m - t).norm_sqr()).sum::<f64>();
    // same draws: the identity holds up to rounding
    assert!((e.value - split).abs() < 1e-9 * e.value);
}

#[test]
fn trace_csv_layout() {
    let (y, noise, rep) = linear_setup();
    let cfg = SeparationConfig {
        q: 2,
        iterations: 3,
        ..Default::default()
    };
    let (_, t) = vanilla_separate(&y, &noise, &rep, &cfg).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], TRACE_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,0,"));
}

#[test]
fn config_validation() {
    let (y, noise, rep) = linear_setup();
    let bad = SeparationConfig {
        q: 0,
        ..Default::default()
    };
    assert!(matches!(vanilla_separate(&y, &noise, &rep, &bad), Err(crate::Error::InvalidConfig(_))));
    let bad = SeparationConfig {
        iterations: 0,
        ..Default::default()
    };
    assert!(vanilla_separate(&y, &noise, &rep, &bad).is_err());
    let small = NoiseModel::white(0.5, (4, 4)).unwrap();
    assert!(vanilla_separate(&y, &small, &rep, &SeparationConfig::default()).is_err());
}
