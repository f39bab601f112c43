mod common;

use common::*;
use phaselux::spectral::{self, Complex64, PhaseMap, Spectrum};
use phaselux::ImageTensor;
use proptest::prelude::*;
use rand::Rng;

const SIZES: [usize; 5] = [4, 7, 8, 12, 16];

#[test]
fn forward_matches_direct_summation() {
    let mut r = rng(1);
    for &h in &SIZES {
        for &w in &SIZES {
            let img = random_image(&mut r, h, w, 3);
            let spec = spectral::fft2(&img);
            for c in 0..3 {
                let err = max_complex_diff(spec.plane(c), &direct_dft(&real_plane(&img, c), h, w, false));
                assert!(err <= 1e-9, "{h}x{w} channel {c}: {err:e}");
            }
        }
    }
}

#[test]
fn complex_inverse_matches_direct_summation() {
    let mut r = rng(2);
    for &n in &SIZES {
        let data: Vec<Complex64> = (0..n * (n + 1))
            .map(|_| Complex64::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)))
            .collect();
        let spec = Spectrum::new(n, n + 1, 1, data).unwrap();
        let inv = spectral::ifft2_complex(&spec);
        let err = max_complex_diff(inv.plane(0), &direct_dft(spec.plane(0), n, n + 1, true));
        assert!(err <= 1e-9, "{n}: {err:e}");
    }
}

#[test]
fn real_images_have_conjugate_symmetric_spectra() {
    let mut r = rng(3);
    for &n in &SIZES {
        let img = random_image(&mut r, n, n + 3, 1);
        let spec = spectral::fft2(&img);
        let (h, w) = (n, n + 3);
        for u in 0..h {
            for v in 0..w {
                let partner = spec.get((h - u) % h, (w - v) % w, 0);
                assert!((spec.get(u, v, 0) - partner.conj()).norm() <= 1e-10);
            }
        }
    }
}

#[test]
fn transform_is_linear() {
    let mut r = rng(4);
    let (a, b) = (random_image(&mut r, 7, 12, 2), random_image(&mut r, 7, 12, 2));
    let (alpha, beta) = (0.7, -1.3);
    let mix = ImageTensor::new(
        7,
        12,
        2,
        a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + beta * y).collect(),
    )
    .unwrap();
    let (fa, fb, fm) = (spectral::fft2(&a), spectral::fft2(&b), spectral::fft2(&mix));
    let expected: Vec<Complex64> = fa.data().iter().zip(fb.data()).map(|(x, y)| x * alpha + y * beta).collect();
    assert!(max_complex_diff(fm.data(), &expected) <= 1e-10);
}

#[test]
fn forward_and_inverse_are_adjoint_up_to_scale() {
    // <F x, y> = HW <x, F^{-1} y> for the unitary-up-to-scale pair
    let mut r = rng(5);
    let (h, w) = (8, 12);
    let x = random_image(&mut r, h, w, 1);
    let y: Vec<Complex64> = (0..h * w)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let fx = spectral::fft2(&x);
    let finv_y = spectral::ifft2_complex(&Spectrum::new(h, w, 1, y.clone()).unwrap());
    let lhs: Complex64 = fx.data().iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
    let rhs: Complex64 = x
        .data()
        .iter()
        .zip(finv_y.data())
        .map(|(a, b)| Complex64::new(*a, 0.0) * b.conj())
        .sum::<Complex64>()
        * (h * w) as f64;
    assert!((lhs - rhs).norm() <= 1e-9 * lhs.norm().max(1.0));
}

#[test]
fn inverse_rejects_asymmetric_spectra() {
    let mut data = vec![Complex64::new(0.0, 0.0); 16];
    data[1] = Complex64::new(0.0, 1.0);
    let spec = Spectrum::new(4, 4, 1, data).unwrap();
    assert!(matches!(spectral::ifft2(&spec), Err(phaselux::Error::ResidualImag { .. })));
    assert!(spectral::ifft2_real_part(&spec).max_imag > 1e-4);
}

#[test]
fn phase_only_reconstruction_matches_oracle() {
    let mut r = rng(6);
    let (h, w) = (7, 8);
    let phases = ImageTensor::from_fn(h, w, 2, |_, _, _| r.random_range(-3.0..3.0)).unwrap();
    let recon = spectral::phase_only_reconstruction(&PhaseMap(phases.clone()));
    for c in 0..2 {
        let unit: Vec<Complex64> = phases.plane(c).iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
        let expected: Vec<f64> = direct_dft(&unit, h, w, true)
            .iter()
            .map(|z| (z.norm_sqr() + spectral::MAGNITUDE_EPS).sqrt())
            .collect();
        assert!(max_abs_diff(recon.plane(c), &expected) <= 1e-9);
    }
}

#[test]
fn arg_conventions() {
    assert_eq!(spectral::arg(Complex64::new(0.0, 0.0)), 0.0);
    assert_eq!(spectral::arg(Complex64::new(-1.0, 0.0)), std::f64::consts::PI);
    assert_eq!(spectral::arg(Complex64::new(-1.0, -0.0)), std::f64::consts::PI);
    let spec = Spectrum::new(1, 1, 1, vec![Complex64::new(3.0, 4.0)]).unwrap();
    assert_eq!(spectral::magnitude(&spec, 0.0).0.data()[0], 5.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_and_parseval(h in 1usize..20, w in 1usize..20, c in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let img = random_image(&mut r, h, w, c);
        let spec = spectral::fft2(&img);
        let back = spectral::ifft2(&spec).unwrap();
        prop_assert!(max_abs_diff(back.data(), img.data()) <= 1e-9);
        let energy: f64 = img.data().iter().map(|v| v * v).sum();
        let spec_energy: f64 = spec.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (h * w) as f64;
        prop_assert!((energy - spec_energy).abs() <= 1e-9 * energy.max(1e-300));
    }

    #[test]
    fn polar_round_trip(h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
        let mut r = rng(seed);
        let img = random_image(&mut r, h, w, 1);
        let spec = spectral::fft2(&img);
        let back = spectral::recombine(&spectral::magnitude(&spec, 0.0), &spectral::phase(&spec)).unwrap();
        for (a, b) in back.data().iter().zip(spec.data()) {
            if b.norm() > 1e-9 {
                prop_assert!((a - b).norm() <= 1e-6 * b.norm());
            }
        }
    }
}
