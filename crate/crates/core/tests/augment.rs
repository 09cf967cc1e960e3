use std::f64::consts::PI;

use nalgebra::Matrix4;
use proptest::prelude::*;
use rustfft::num_complex::Complex64;
use vbmkit::augment::{apply, bias_field, fft3, monomial_exponents, rician_noise, AugmentKind, AugmentSpec};
use vbmkit::volume::{Grid, Volume3D};
use vbmkit::Error;

fn spec(kind: AugmentKind, m: f64, seed: u64) -> AugmentSpec {
    AugmentSpec::new(kind, m, seed).unwrap()
}

/// A representative in-range magnitude per kind.
fn typical(kind: AugmentKind) -> f64 {
    use AugmentKind::*;
    match kind {
        Flip => 0.0,
        Rotate => 10.0,
        Zoom => 1.08,
        Warp => 0.05,
        Brightness | Contrast => 0.3,
        BiasField => 0.4,
        NoiseRician => 0.05,
        Blur => 3.0,
        Downsample => 2.0,
        Motion | Ghosting | Spike | Gibbs => 0.5,
    }
}

fn neutral(kind: AugmentKind) -> f64 {
    if kind == AugmentKind::Zoom {
        1.0
    } else {
        0.0
    }
}

fn shifted_grid(dims: [usize; 3]) -> Grid {
    let mut a = Matrix4::identity();
    for (k, s) in [1.5, 2.0, 2.5].into_iter().enumerate() {
        a[(k, k)] = s;
        a[(k, 3)] = -10.0 * (k as f64 + 1.0);
    }
    Grid::new(dims, [1.5, 2.0, 2.5], a).unwrap()
}

fn blob(g: &Grid, sigma: f64) -> Volume3D {
    let m = g.dims().map(|n| (n as f64 - 1.0) / 2.0);
    Volume3D::from_fn(g.clone(), |x, y, z| {
        let r2 = (x as f64 - m[0]).powi(2) + (y as f64 - m[1]).powi(2) + (z as f64 - m[2]).powi(2);
        (-r2 / (2.0 * sigma * sigma)).exp()
    })
    .unwrap()
}

fn max_abs_diff(a: &Volume3D, b: &Volume3D) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn every_kind_is_deterministic_and_keeps_geometry() {
    let g = shifted_grid([12, 10, 14]);
    let v = blob(&g, 3.0);
    for kind in AugmentKind::ALL {
        let s = spec(kind, typical(kind), 42);
        let a = apply(&v, &s).unwrap();
        let b = apply(&v, &s).unwrap();
        assert_eq!(a, b, "{kind}");
        assert_eq!(a.grid(), v.grid(), "{kind}");
        assert!(a.data().iter().all(|x| x.is_finite()), "{kind}");
        if kind != AugmentKind::Flip {
            assert_ne!(a, v, "{kind} at magnitude {} changed nothing", typical(kind));
        }
    }
}

#[test]
fn neutral_magnitude_is_identity() {
    let g = Grid::unit([10, 9, 8]);
    let v = Volume3D::from_fn(g, |x, y, z| ((x * 3 + y * 5 + z * 7) % 11) as f64 / 11.0).unwrap();
    for kind in AugmentKind::ALL.into_iter().filter(|k| *k != AugmentKind::Flip) {
        let out = apply(&v, &spec(kind, neutral(kind), 5)).unwrap();
        assert!(max_abs_diff(&out, &v) < 1e-6, "{kind}");
    }
    let flip = spec(AugmentKind::Flip, 0.0, 0);
    assert_eq!(apply(&apply(&v, &flip).unwrap(), &flip).unwrap(), v);
    assert_eq!(apply(&v, &flip).unwrap().get(0, 2, 3), v.get(9, 2, 3));
}

#[test]
fn out_of_range_magnitudes_are_rejected() {
    use AugmentKind::*;
    let bad = [
        (Rotate, 16.0),
        (Zoom, 1.2),
        (Warp, 0.2),
        (Brightness, 0.6),
        (Contrast, -0.6),
        (BiasField, 1.5),
        (NoiseRician, -0.1),
        (Blur, 9.0),
        (Downsample, 5.0),
        (Motion, 1.1),
        (Ghosting, -0.1),
        (Spike, 2.0),
        (Gibbs, 1.0),
    ];
    for (kind, m) in bad {
        assert!(matches!(AugmentSpec::new(kind, m, 0), Err(Error::MagnitudeOutOfRange { .. })), "{kind} {m}");
        let v = Volume3D::zeros(Grid::unit([4, 4, 4]));
        let raw = AugmentSpec { kind, magnitude: m, seed: 0 };
        assert!(apply(&v, &raw).is_err());
    }
}

#[test]
fn zoom_round_trip_on_blob() {
    let g = Grid::unit([32, 32, 32]);
    let v = blob(&g, 4.0);
    let there = apply(&v, &spec(AugmentKind::Zoom, 1.1, 0)).unwrap();
    let back = apply(&there, &spec(AugmentKind::Zoom, 1.0 / 1.1, 0)).unwrap();
    let mse = v.data().iter().zip(back.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / g.len() as f64;
    assert!(mse < 1e-3, "mse {mse}");
    assert!(max_abs_diff(&there, &v) > 0.01);
}

#[test]
fn intensity_examples() {
    let zero = Volume3D::zeros(Grid::unit([5, 5, 5]));
    let b = apply(&zero, &spec(AugmentKind::Brightness, 0.5, 0)).unwrap();
    assert!(b.data().iter().all(|&x| (x - 0.5).abs() < 1e-12));
    let v = blob(&Grid::unit([9, 9, 9]), 2.0);
    for m in [-0.5, 0.2, 0.5] {
        let c = apply(&v, &spec(AugmentKind::Contrast, m, 0)).unwrap();
        assert!((c.mean() - v.mean()).abs() < 1e-6);
        let i = v.data().iter().position(|&x| x == 1.0).unwrap();
        assert!((c.data()[i] - (v.mean() + (1.0 + m) * (1.0 - v.mean()))).abs() < 1e-12);
    }
}

#[test]
fn bias_field_examples() {
    assert_eq!(monomial_exponents(4).len(), 35);
    // C(order + 3, 3) monomials of total degree <= order
    for order in 1..7u32 {
        let n = (order + 1) * (order + 2) * (order + 3) / 6;
        assert_eq!(monomial_exponents(order).len(), n as usize);
    }
    let g = shifted_grid([10, 10, 10]);
    let v = Volume3D::from_fn(g, |x, y, z| 1.0 + (x + y + z) as f64 * 0.1).unwrap();
    assert!(max_abs_diff(&bias_field(&v, 4, 0.0, 3).unwrap(), &v) < 1e-12);
    let out = bias_field(&v, 4, 0.5, 3).unwrap();
    assert_eq!(out.grid(), v.grid());
    let ratio: f64 = out.data().iter().zip(v.data()).map(|(o, i)| o / i).sum::<f64>() / v.len() as f64;
    assert!((ratio - 1.0).abs() < 1e-6);
    assert!(out.data().iter().all(|&x| x > 0.0));
}

#[test]
fn rician_noise_examples() {
    let zero = Volume3D::zeros(Grid::unit([100, 100, 100]));
    let n = rician_noise(&zero, 1.0, 17).unwrap();
    let rayleigh_mean = (PI / 2.0).sqrt();
    assert!((n.mean() - rayleigh_mean).abs() < 0.02 * rayleigh_mean, "mean {}", n.mean());
    assert!(n.data().iter().all(|&x| x >= 0.0));

    let v = blob(&Grid::unit([12, 12, 12]), 3.0);
    let quiet = rician_noise(&v, 1e-12, 17).unwrap();
    assert!(max_abs_diff(&quiet, &v) < 1e-9);
    assert!(rician_noise(&v, 0.0, 1).is_err());
}

/// Looks for a non-DC frequency `k` with `vol(x) = a·cos(2π k·x / N)`.
fn fit_cosine(vol: &Volume3D, a: f64) -> Option<([usize; 3], f64)> {
    let d = vol.dims();
    let g = vol.grid();
    let mut best: Option<([usize; 3], f64)> = None;
    for kz in 0..d[2] {
        for ky in 0..d[1] {
            for kx in 0..d[0] {
                if kx + ky + kz == 0 {
                    continue;
                }
                let err = vol
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let [x, y, z] = g.coords(i);
                        let ph = 2.0
                            * PI
                            * ((kx * x) as f64 / d[0] as f64
                                + (ky * y) as f64 / d[1] as f64
                                + (kz * z) as f64 / d[2] as f64);
                        (v - a * ph.cos()).abs()
                    })
                    .fold(0.0, f64::max);
                if best.is_none_or(|b| err < b.1) {
                    best = Some(([kx, ky, kz], err));
                }
            }
        }
    }
    best
}

#[test]
fn spike_on_zero_volume_is_one_cosine() {
    let zero = Volume3D::zeros(Grid::unit([8, 6, 5]));
    for (m, seed) in [(0.3, 1), (0.8, 9)] {
        let out = apply(&zero, &spec(AugmentKind::Spike, m, seed)).unwrap();
        let (_, err) = fit_cosine(&out, m).unwrap();
        assert!(err < 1e-9, "m {m}: best cosine fit error {err}");
    }
    let a = apply(&zero, &spec(AugmentKind::Spike, 0.2, 4)).unwrap();
    let b = apply(&zero, &spec(AugmentKind::Spike, 0.4, 4)).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| (2.0 * x - y).abs() < 1e-12));
}

#[test]
fn ghosting_keeps_the_mean() {
    let v = blob(&shifted_grid([16, 12, 20]), 3.0);
    for seed in 0..3 {
        let out = apply(&v, &spec(AugmentKind::Ghosting, 0.9, seed)).unwrap();
        assert!((out.mean() - v.mean()).abs() < 1e-6);
        assert!(max_abs_diff(&out, &v) > 1e-6);
    }
}

fn variance(v: &Volume3D) -> f64 {
    let m = v.mean();
    v.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

#[test]
fn downsample_examples() {
    let c = Volume3D::filled(Grid::unit([13, 10, 9]), 2.5);
    for f in [2.0, 3.0, 4.0] {
        assert!(max_abs_diff(&apply(&c, &spec(AugmentKind::Downsample, f, 0)).unwrap(), &c) < 1e-12);
    }
    let checker = Volume3D::from_fn(Grid::unit([16, 16, 16]), |x, y, z| ((x + y + z) % 2) as f64).unwrap();
    let out = apply(&checker, &spec(AugmentKind::Downsample, 2.0, 0)).unwrap();
    assert!(variance(&out) < variance(&checker), "{} vs {}", variance(&out), variance(&checker));
    let blurred = apply(&checker, &spec(AugmentKind::Blur, 0.01, 0)).unwrap();
    assert!(max_abs_diff(&blurred, &checker) < 1e-6);
}

#[test]
fn gibbs_without_truncation_is_identity() {
    // odd sizes have no Nyquist plane, so any magnitude below 1/n keeps every frequency
    let v = Volume3D::from_fn(Grid::unit([9, 7, 11]), |x, y, z| ((x * 7 + y * 3 + z * 5) % 13) as f64).unwrap();
    let out = apply(&v, &spec(AugmentKind::Gibbs, 0.05, 0)).unwrap();
    assert!(max_abs_diff(&out, &v) < 1e-6 * 12.0);
    let cut = apply(&v, &spec(AugmentKind::Gibbs, 0.5, 0)).unwrap();
    assert!(max_abs_diff(&cut, &v) > 0.1);
}

proptest! {
    #[test]
    fn dft_round_trip(data in proptest::collection::vec(-100.0f64..100.0, 4 * 6 * 5)) {
        let dims = [4, 6, 5];
        let mut k: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft3(&mut k, dims, false);
        fft3(&mut k, dims, true);
        let scale = data.iter().map(|v| v.abs()).fold(1e-300, f64::max);
        let err = k.iter().zip(&data).map(|(c, v)| (c - v).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-6 * scale);
    }

    #[test]
    fn seeds_reproduce(seed in any::<u64>(), kind in proptest::sample::select(AugmentKind::ALL.to_vec())) {
        let v = blob(&Grid::unit([8, 8, 8]), 2.0);
        let s = spec(kind, typical(kind), seed);
        prop_assert_eq!(apply(&v, &s).unwrap(), apply(&v, &s).unwrap());
    }
}
