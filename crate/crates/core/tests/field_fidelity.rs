use fbmlab::field::{orthonormal_complement, FieldRealization, Mode, SamplingStrategy, SpectralMeasure};
use fbmlab::quadrature::QuadConfig;
use fbmlab::theory::{spatial_covariance, time_correlation, SpectrumParams};
use fbmlab::StreamSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn divergence_vanishes_at_random_probes() {
    let p = SpectrumParams::reference();
    let measure = SpectralMeasure::new(&p, 64, SamplingStrategy::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..1000 {
        let f = measure.realize(StreamSeed::new(99, i));
        let x = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        let div = f.divergence_at(&x);
        assert!(div.abs() <= 1e-10 * f.divergence_scale(), "probe {i}: {div}");
    }
}

#[test]
fn tilted_basis_is_detected() {
    let p = SpectrumParams::reference();
    let div_for = |theta: f64| {
        let k = vec![0.8, 0.0];
        let mode = Mode {
            k,
            weight: 1.0,
            rate: 0.0,
            basis: vec![vec![theta.sin(), theta.cos()]],
            xi: vec![0.0],
            eta: vec![1.0],
        };
        let f = FieldRealization::from_modes(&p, vec![mode], StreamSeed::new(0, 0)).unwrap();
        f.divergence_at(&[0.0, 0.0])
    };
    assert_eq!(div_for(0.0), 0.0);
    let (a, b) = (div_for(0.01), div_for(0.2));
    assert!((a / b - 0.01f64.sin() / 0.2f64.sin()).abs() < 1e-12);
}

#[test]
fn complement_basis_in_three_dimensions() {
    let norm = 0.5f64.sqrt();
    let e = [0.3 / norm, -0.4 / norm, 0.5 / norm];
    let basis = orthonormal_complement(&e);
    assert_eq!(basis.len(), 2);
    for b in &basis {
        let dot: f64 = b.iter().zip(&e).map(|(a, c)| a * c).sum();
        assert!(dot.abs() < 1e-14);
        assert!((b.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn one_point_covariance_matches_quadrature() {
    let p = SpectrumParams::reference();
    let exact = spatial_covariance(&p, 0.0, &[0.0, 0.0], &QuadConfig::relative(1e-9))
        .unwrap()
        .tensor;
    let measure = SpectralMeasure::new(&p, 32, SamplingStrategy::default()).unwrap();
    let n = 20_000;
    let mut xx = Vec::with_capacity(n);
    let mut yy = Vec::with_capacity(n);
    let mut xy = Vec::with_capacity(n);
    let x = [3.7, -1.2];
    for i in 0..n {
        let v = measure.realize(StreamSeed::new(5, i as u64)).evaluate(&x);
        xx.push(v[0] * v[0]);
        yy.push(v[1] * v[1]);
        xy.push(v[0] * v[1]);
    }
    for (samples, target) in [(&xx, exact[(0, 0)]), (&yy, exact[(1, 1)]), (&xy, exact[(0, 1)])] {
        let (m, se) = mean_and_se(samples);
        assert!((m - target).abs() < 3.0 * se, "{m} vs {target} (se {se})");
    }
}

#[test]
fn velocity_is_centered_and_stationary() {
    let p = SpectrumParams::reference();
    let measure = SpectralMeasure::new(&p, 16, SamplingStrategy::default()).unwrap();
    let n = 20_000;
    let x = [0.4, 0.9];
    let (mut v0, mut sq0, mut sq1) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let mut f = measure.realize(StreamSeed::new(8, i as u64));
        let a = f.evaluate(&x);
        f.advance(3.3);
        let b = f.evaluate(&x);
        v0.push(a[0]);
        sq0.push(a[0] * a[0]);
        sq1.push(b[0] * b[0]);
    }
    let (m, se) = mean_and_se(&v0);
    assert!(m.abs() < 3.0 * se);
    let (m0, se0) = mean_and_se(&sq0);
    let (m1, se1) = mean_and_se(&sq1);
    assert!((m0 - m1).abs() < 3.0 * (se0 * se0 + se1 * se1).sqrt());
}

#[test]
fn spatial_covariance_depends_on_separation_only() {
    let p = SpectrumParams::reference();
    let measure = SpectralMeasure::new(&p, 16, SamplingStrategy::default()).unwrap();
    let h = [0.7, 0.2];
    let n = 20_000;
    let cov_at = |base: [f64; 2], seed: u64| {
        let mut prod = Vec::with_capacity(n);
        for i in 0..n {
            let f = measure.realize(StreamSeed::new(seed, i as u64));
            let a = f.evaluate(&base);
            let b = f.evaluate(&[base[0] + h[0], base[1] + h[1]]);
            prod.push(a[0] * b[0]);
        }
        mean_and_se(&prod)
    };
    let (c1, s1) = cov_at([0.0, 0.0], 1);
    let (c2, s2) = cov_at([12.0, -7.0], 2);
    assert!((c1 - c2).abs() < 3.0 * (s1 * s1 + s2 * s2).sqrt());
}

/// Lag-`lag` correlation of one OU coordinate, reached by `pieces` equal
/// advances.
fn ou_correlation(rate: f64, lag: f64, pieces: usize, n: usize, master: u64) -> (f64, f64) {
    let p = SpectrumParams::reference();
    let mut before = Vec::with_capacity(n);
    let mut after = Vec::with_capacity(n);
    for i in 0..n {
        let mode = Mode {
            k: vec![1.0, 0.0],
            weight: 1.0,
            rate,
            basis: vec![vec![0.0, 1.0]],
            xi: vec![0.0],
            eta: vec![0.0],
        };
        let mut f = FieldRealization::from_modes(&p, vec![mode], StreamSeed::new(master, i as u64))
            .unwrap();
        f.advance(40.0);
        before.push(f.mode(0).xi[0]);
        for _ in 0..pieces {
            f.advance(lag / pieces as f64);
        }
        after.push(f.mode(0).xi[0]);
    }
    let m = n as f64;
    let corr = before.iter().zip(&after).map(|(a, b)| a * b).sum::<f64>() / m;
    let var = before.iter().map(|a| a * a).sum::<f64>() / m;
    let r = corr / var;
    (r, ((1.0 - r * r) / m).sqrt())
}

#[test]
fn ou_correlation_has_no_step_size_bias() {
    let p = SpectrumParams::reference();
    let target = time_correlation(&p, 1.0, 1.0);
    assert!((target - (-1.0f64).exp()).abs() < 1e-15);
    let (one, se1) = ou_correlation(1.0, 1.0, 1, 30_000, 3);
    let (ten, se10) = ou_correlation(1.0, 1.0, 10, 30_000, 4);
    assert!((one - target).abs() < 3.0 * se1, "{one}");
    assert!((ten - target).abs() < 3.0 * se10, "{ten}");
    assert!((one - ten).abs() < 3.0 * (se1 * se1 + se10 * se10).sqrt());
}

#[test]
fn exact_origin_integral_has_ou_variance() {
    // Var ∫₀^h X = 2(λh − 1 + e^{−λh})/λ² for a stationary unit OU process.
    let p = SpectrumParams::reference();
    let (rate, h) = (0.7, 2.5);
    let n = 30_000;
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let mode = Mode {
            k: vec![1.0, 0.0],
            weight: 1.0,
            rate,
            basis: vec![vec![0.0, 1.0]],
            xi: vec![0.0],
            eta: vec![0.0],
        };
        let mut f = FieldRealization::from_modes(&p, vec![mode], StreamSeed::new(6, i as u64))
            .unwrap();
        f.advance(40.0);
        let mut out = [0.0; 2];
        f.integrate_origin_exact(h, &mut out);
        s.push(out[1] * out[1]);
    }
    let x = rate * h;
    let target = 2.0 * (x - 1.0 + (-x).exp()) / (rate * rate);
    let (m, se) = mean_and_se(&s);
    assert!((m - target).abs() < 3.0 * se, "{m} vs {target}");
}
