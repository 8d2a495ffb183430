//! Library results against independent numerical oracles.

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orbitscope::families::{case_a, case_b, dilation_1d, spiral_2d};
use orbitscope::linalg::mat_exp;
use orbitscope::quasisection::{is_relatively_compact, meeting_system, BoxSet, Shell};
use orbitscope::wavelet::{fourier, inverse_fourier, sigma, synth_wavelet, BumpFunction, SpatialGrid, SynthOptions};
use orbitscope::{DilationAlgebra, RealMatrix};

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    step(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

/// `xi -> exp(sum t_j X_j) xi` with the acting matrices.
fn act(alg: &DilationAlgebra, t: &[f64], xi: &[f64]) -> Vec<f64> {
    let x = alg.dual_generators();
    let log = x.iter().zip(t).fold(RealMatrix::zeros(alg.n(), alg.n()), |acc, (m, s)| acc + m * *s);
    (mat_exp(&log, 1.0).unwrap() * DVector::from_row_slice(xi)).iter().copied().collect()
}

fn shell(coords: &[usize], lo: f64, hi: f64) -> Shell {
    Shell { coords: coords.to_vec(), lo, hi }
}

#[test]
fn mat_exp_matches_symmetric_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let b = RealMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.5..1.5));
        let s = (&b + b.transpose()) * 0.5;
        let eig = SymmetricEigen::new(s.clone());
        let exp_d = RealMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
        let oracle = &eig.eigenvectors * exp_d * eig.eigenvectors.transpose();
        let got = mat_exp(&s, 1.0).unwrap();
        assert!((got - &oracle).norm() <= 1e-11 * oracle.norm());
    }
}

#[test]
fn mat_exp_of_rotation_generator() {
    for theta in [0.1, 1.0, 3.0, 10.0] {
        let m = RealMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
        let r = mat_exp(&m, 1.0).unwrap();
        let oracle = RealMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        assert!((r - oracle).norm() < 1e-12);
    }
}

#[test]
fn sigma_one_dimensional_against_simpson() {
    let c = BoxSet::new(vec![shell(&[0], 1.0, 2.0)]).unwrap();
    let w = BoxSet::new(vec![shell(&[0], 0.8, 2.5)]).unwrap();
    let bump = BumpFunction::new(vec![c], vec![w]).unwrap();
    let alg = dilation_1d();
    for xi in [0.3, -1.0, 1.7, 4.0, -12.0] {
        let f = |t: f64| bump.eval(&act(&alg, &[t], &[xi])).powi(2);
        let a = (0.8 / xi.abs()).ln();
        let b = (2.5 / xi.abs()).ln();
        let oracle = adaptive_simpson(&f, a, b, 1e-13);
        assert!((sigma(&alg, &bump, &[xi], 64).unwrap() - oracle).abs() < 1e-9, "xi = {xi}");
        // Closed form for this bump: half the log of the radius ratios.
        assert!((oracle - 0.5 * (2.0f64 * 2.5 / 0.8).ln()).abs() < 1e-9);
    }
}

#[test]
fn sigma_spiral_against_simpson() {
    let alg = spiral_2d(1.0);
    let c = BoxSet::new(vec![shell(&[0, 1], 1.0, 2.0)]).unwrap();
    let w = BoxSet::new(vec![shell(&[0, 1], 0.7, 2.6)]).unwrap();
    let bump = BumpFunction::new(vec![c], vec![w]).unwrap();
    for xi in [[0.3f64, 0.4], [-2.0, 1.0], [0.0, 5.0]] {
        let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let f = |t: f64| bump.eval(&act(&alg, &[t], &xi)).powi(2);
        let oracle = adaptive_simpson(&f, (0.7 / r).ln(), (2.6 / r).ln(), 1e-12);
        assert!((sigma(&alg, &bump, &xi, 64).unwrap() - oracle).abs() < 1e-8, "xi = {xi:?}");
    }
}

#[test]
fn sigma_two_parameter_against_nested_simpson() {
    let alg = case_a(1.0);
    let c = BoxSet::new(vec![shell(&[0, 1], 1.0, 2.0), shell(&[2], 1.0, 2.0)]).unwrap();
    let w = BoxSet::new(vec![shell(&[0, 1], 0.8, 2.5), shell(&[2], 0.8, 2.5)]).unwrap();
    let bump = BumpFunction::new(vec![c], vec![w]).unwrap();
    let xi = [0.6f64, -0.9, 1.4];
    let r1 = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
    let r2 = xi[2].abs();
    let inner = |t1: f64| {
        let g = |t2: f64| bump.eval(&act(&alg, &[t1, t2], &xi)).powi(2);
        adaptive_simpson(&g, (0.8 / r2).ln(), (2.5 / r2).ln(), 1e-11)
    };
    let oracle = adaptive_simpson(&inner, (0.8 / r1).ln(), (2.5 / r1).ln(), 1e-10);
    let got = sigma(&alg, &bump, &xi, 64).unwrap();
    assert!((got - oracle).abs() < 1e-7, "{got} vs {oracle}");
}

#[test]
fn calderon_integral_against_simpson() {
    let c = BoxSet::new(vec![shell(&[0], 1.0, 2.0)]).unwrap();
    let spec = synth_wavelet(&dilation_1d(), &[c], &SynthOptions::default()).unwrap();
    for xi in [0.5, 1.0, 3.3, -2.2] {
        let f = |t: f64| spec.ghat(&act(&spec.alg, &[t], &[xi])).powi(2);
        let r = f64::abs(xi);
        let v = adaptive_simpson(&f, (0.8 / r).ln() - 0.1, (2.5 / r).ln() + 0.1, 1e-12);
        assert!((v - 1.0).abs() < 1e-6, "xi = {xi}: {v}");
    }
}

/// Brute-force meeting test for coordinate boxes under a diagonal group:
/// the image of a box is the box with scaled intervals.
fn boxes_meet(alg: &DilationAlgebra, c1: &[(f64, f64)], c2: &[(f64, f64)], t: &[f64]) -> bool {
    let x = alg.dual_generators();
    (0..alg.n()).all(|i| {
        let scale = x.iter().zip(t).map(|(m, s)| m[(i, i)] * s).sum::<f64>().exp();
        let (lo, hi) = (c1[i].0 * scale, c1[i].1 * scale);
        lo.max(c2[i].0) <= hi.min(c2[i].1)
    })
}

#[test]
fn meeting_system_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (alpha, beta) in [(1.0, 1.0), (1.0, -1.0), (2.0, 0.5), (1.0, 0.0)] {
        let alg = case_b(alpha, beta).unwrap();
        for _ in 0..20 {
            let mut rand_box = || -> Vec<(f64, f64)> {
                (0..3)
                    .map(|i| {
                        // Keep coordinate 0 away from zero so the box avoids the origin.
                        let lo = if i > 0 && rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.2..1.5) };
                        (lo, lo + rng.gen_range(0.5..2.0))
                    })
                    .collect()
            };
            let (b1, b2) = (rand_box(), rand_box());
            let sys = meeting_system(&alg, &BoxSet::coordinate(&b1).unwrap(), &BoxSet::coordinate(&b2).unwrap()).unwrap();
            for _ in 0..200 {
                let t = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                let brute = boxes_meet(&alg, &b1, &b2, &t);
                // Skip points within rounding of the boundary.
                if brute != sys.contains(&t, 1e-9) && sys.contains(&t, 1e-6) == sys.contains(&t, -1e-6) {
                    panic!("alpha {alpha}, beta {beta}, t {t:?}: brute {brute}");
                }
            }
        }
    }
}

#[test]
fn boundedness_against_ray_probing() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (alpha, beta) in [(1.0, 1.0), (1.0, -1.0), (0.5, 2.0), (1.0, 0.0), (-1.0, -1.0)] {
        let alg = case_b(alpha, beta).unwrap();
        for _ in 0..10 {
            let b1: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(1.5..3.0))).collect();
            let b2: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(1.5..3.0))).collect();
            let sys = meeting_system(&alg, &BoxSet::coordinate(&b1).unwrap(), &BoxSet::coordinate(&b2).unwrap()).unwrap();
            let rep = is_relatively_compact(&sys).unwrap();
            // 720 directions on the circle; a far point along an unbounded
            // direction stays in the set.
            let escapes = (0..720).any(|k| {
                let a = k as f64 * std::f64::consts::PI / 360.0;
                sys.contains(&[1e4 * a.cos(), 1e4 * a.sin()], 1e-9)
            });
            match rep.witness {
                Some(u) => {
                    assert!(!rep.bounded);
                    let far: Vec<f64> = u.iter().map(|x| 1e6 * x).collect();
                    assert!(sys.contains(&far, 1e-6));
                }
                None => {
                    assert!(rep.bounded);
                    assert!(!escapes, "alpha {alpha}, beta {beta}: bounded set escapes");
                    let bb = rep.bounding_box.unwrap();
                    for _ in 0..500 {
                        let t: Vec<f64> = bb.iter().map(|(a, b)| rng.gen_range(a - 5.0..b + 5.0)).collect();
                        if sys.contains(&t, -1e-9) {
                            assert!(t.iter().zip(&bb).all(|(x, (a, b))| *x >= a - 1e-9 && *x <= b + 1e-9));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn fourier_of_gaussian() {
    // e^{-pi x^2} is its own Fourier transform.
    let grid = SpatialGrid::new(1, 128, 0.1).unwrap();
    let f: Vec<Complex64> = (0..grid.len())
        .map(|k| {
            let x = grid.position(k)[0];
            Complex64::new((-std::f64::consts::PI * x * x).exp(), 0.0)
        })
        .collect();
    let fhat = fourier(&grid, &f);
    for (k, z) in fhat.iter().enumerate() {
        let xi = grid.frequency(k)[0];
        assert!((z - Complex64::new((-std::f64::consts::PI * xi * xi).exp(), 0.0)).norm() < 1e-12);
    }
    let back = inverse_fourier(&grid, &fhat);
    assert!(back.iter().zip(&f).all(|(a, b)| (a - b).norm() < 1e-14));
}

#[test]
fn fourier_is_unitary_up_to_spacing() {
    let grid = SpatialGrid::new(2, 16, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f: Vec<Complex64> = (0..grid.len()).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();
    let fhat = fourier(&grid, &f);
    let spectral: f64 = fhat.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.freq_spacing().powi(2);
    assert!((spectral - grid.norm_sq(&f)).abs() < 1e-12 * spectral);
}
