use std::sync::OnceLock;

use nalgebra::DVector;
use proptest::prelude::*;

use orbitscope::classify::{check_consistency, classify, Integrability, Tri};
use orbitscope::families::{case_1a, case_1c, case_a, case_b, dilation_1d, spiral_2d};
use orbitscope::groupspec::{parse_group_spec, GroupSpec};
use orbitscope::linalg::mat_exp;
use orbitscope::orbit::{dual_act, orbit_dim, GroupElement};
use orbitscope::quasisection::{is_relatively_compact, meeting_system, BoxSet, QuasiSectionError, Shell};
use orbitscope::sections::{normal_form, Case1Family};
use orbitscope::wavelet::{synth_wavelet, SynthOptions, WaveletSpec};
use orbitscope::RealMatrix;

fn shell(coords: &[usize], lo: f64, hi: f64) -> Shell {
    Shell { coords: coords.to_vec(), lo, hi }
}

fn spiral_spec() -> &'static WaveletSpec {
    static SPEC: OnceLock<WaveletSpec> = OnceLock::new();
    SPEC.get_or_init(|| {
        let c = BoxSet::new(vec![shell(&[0, 1], 1.0, 2.0)]).unwrap();
        synth_wavelet(&spiral_2d(1.0), &[c], &SynthOptions::default()).unwrap()
    })
}

fn case_a_spec() -> &'static WaveletSpec {
    static SPEC: OnceLock<WaveletSpec> = OnceLock::new();
    SPEC.get_or_init(|| {
        let c = BoxSet::new(vec![shell(&[0, 1], 1.0, 2.0), shell(&[2], 1.0, 2.0)]).unwrap();
        synth_wavelet(&case_a(1.0), &[c], &SynthOptions::default()).unwrap()
    })
}

fn d_type() -> orbitscope::sections::LayeredFamily {
    let a = RealMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 1.0, 0.0]));
    let mut x = RealMatrix::zeros(3, 3);
    x[(1, 0)] = 1.0;
    normal_form(&a, &x, 1e-9).unwrap()
}

fn nonzero_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n).prop_filter("away from zero", |v| v.iter().all(|x| x.abs() > 0.05))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sigma_is_haar_invariant_one_parameter(xi in nonzero_vec(2), t in -1.5..1.5f64) {
        let spec = spiral_spec();
        let g = GroupElement::new(&spec.alg, &[t]).unwrap();
        let moved = dual_act(&g, &xi);
        let (a, b) = (spec.sigma(&xi).unwrap(), spec.sigma(&moved).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn sigma_is_haar_invariant_two_parameter(xi in nonzero_vec(3), t1 in -1.0..1.0f64, t2 in -1.0..1.0f64) {
        let spec = case_a_spec();
        let g = GroupElement::new(&spec.alg, &[t1, t2]).unwrap();
        let (a, b) = (spec.sigma(&xi).unwrap(), spec.sigma(&dual_act(&g, &xi)).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn ghat_squared_times_sigma_is_bump_squared(xi in nonzero_vec(2)) {
        // The interpolated sigma must agree with the direct one wherever the bump lives.
        let spec = spiral_spec();
        let phi = spec.bump.eval(&xi);
        let expected = phi * phi;
        let got = spec.ghat(&xi).powi(2) * spec.sigma(&xi).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9, "{} vs {}", got, expected);
    }

    #[test]
    fn ghat_support_inside_outer_set(xi in prop::collection::vec(-4.0..4.0f64, 3)) {
        let spec = case_a_spec();
        if spec.ghat(&xi) != 0.0 {
            prop_assert!(spec.bump.outer.iter().any(|w| w.contains(&xi)));
        }
    }

    #[test]
    fn sections_are_idempotent_and_invariant(v in nonzero_vec(3), s in -3.0..3.0f64, t in -3.0..3.0f64) {
        let fam = d_type();
        let p = fam.section_point(&v).unwrap();
        let again = fam.section_point(&p.v_star).unwrap();
        let scale = 1.0 + DVector::from_row_slice(&p.v_star).norm();
        let dist = |a: &[f64], b: &[f64]| DVector::from_row_slice(a).metric_distance(&DVector::from_row_slice(b));
        prop_assert!(dist(&again.v_star, &p.v_star) <= 1e-9 * scale);
        prop_assert!(again.s.abs() <= 1e-9 && again.t.abs() <= 1e-9);
        let moved = fam.act(s, t, &v).unwrap();
        let layer = fam.layer_index(&v).unwrap();
        let moved_layer = fam.layer_index(&moved).unwrap();
        prop_assert_eq!((layer.eigenspace, layer.b), (moved_layer.eigenspace, moved_layer.b));
        prop_assert!(dist(&fam.section_point(&moved).unwrap().v_star, &p.v_star) <= 1e-8 * scale);
    }

    #[test]
    fn case1_layers_are_invariant(v in nonzero_vec(3), s in -2.0..2.0f64, t in -2.0..2.0f64, c in -1.0..1.0f64) {
        for fam in [Case1Family::from_algebra(&case_1a()).unwrap(), Case1Family::from_algebra(&case_1c(c)).unwrap()] {
            let Some(layer) = fam.layer_index(&v) else { continue };
            if layer.near_boundary {
                continue;
            }
            let moved = fam.act(s, t, &v);
            let m = fam.layer_index(&moved).unwrap();
            prop_assert_eq!(layer.b, m.b);
            let p = fam.section_point(&v).unwrap();
            let q = fam.section_point(&p.v_star).unwrap();
            let scale = 1.0 + DVector::from_row_slice(&p.v_star).norm();
            prop_assert!(DVector::from_row_slice(&q.v_star).metric_distance(&DVector::from_row_slice(&p.v_star)) <= 1e-9 * scale);
        }
    }

    #[test]
    fn verdicts_are_consistent(alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
        let v = classify(&case_b(alpha, beta).unwrap()).unwrap();
        prop_assert!(check_consistency(&v).is_ok(), "{:?}", v);
        if v.topological_section == Tri::Yes {
            prop_assert_eq!(v.quasi_section, Tri::Yes);
        }
        if v.integrable == Integrability::Yes {
            prop_assert_eq!(v.orbit_space_compact, Tri::Yes);
        }
        let va = classify(&case_a(alpha)).unwrap();
        prop_assert!(check_consistency(&va).is_ok());
    }

    #[test]
    fn verdicts_are_conjugation_invariant(alpha in 0.2..3.0f64, entries in prop::collection::vec(-0.5..0.5f64, 9)) {
        let p = RealMatrix::identity(3, 3) + RealMatrix::from_row_slice(3, 3, &entries) * 0.5;
        prop_assume!(p.determinant().abs() > 0.1);
        let alg = case_a(alpha);
        let conj = alg.conjugated(&p).unwrap();
        let (a, b) = (classify(&alg).unwrap(), classify(&conj).unwrap());
        prop_assert_eq!(a.summary(), b.summary());
    }

    #[test]
    fn meeting_sets_are_bounded_or_have_a_witness(
        alpha in -2.0..2.0f64,
        beta in -2.0..2.0f64,
        b1 in prop::collection::vec((0.0..1.0f64, 1.5..3.0f64), 3),
        b2 in prop::collection::vec((0.0..1.0f64, 1.5..3.0f64), 3),
    ) {
        let alg = match case_b(alpha, beta) { Ok(a) => a, Err(_) => return Ok(()) };
        let sys = meeting_system(&alg, &BoxSet::coordinate(&b1).unwrap(), &BoxSet::coordinate(&b2).unwrap()).unwrap();
        match is_relatively_compact(&sys) {
            Ok(rep) => {
                prop_assert_eq!(rep.bounded, rep.witness.is_none());
                prop_assert_eq!(rep.bounded, rep.bounding_box.is_some());
                if let Some(u) = rep.witness {
                    prop_assert!(u.iter().any(|x| x.abs() > 1e-9));
                    for row in &sys.rows {
                        let lu: f64 = row.iter().zip(&u).map(|(a, b)| a * b).sum();
                        prop_assert!(lu <= 1e-9);
                    }
                }
            }
            Err(QuasiSectionError::InfeasibleSystem) => {}
            Err(e) => prop_assert!(false, "{}", e),
        }
    }

    #[test]
    fn exponential_is_a_one_parameter_group(entries in prop::collection::vec(-1.0..1.0f64, 16), s in -1.0..1.0f64, t in -1.0..1.0f64) {
        let m = RealMatrix::from_row_slice(4, 4, &entries);
        let lhs = mat_exp(&m, s).unwrap() * mat_exp(&m, t).unwrap();
        let rhs = mat_exp(&m, s + t).unwrap();
        prop_assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn orbit_dimension_is_constant_along_orbits(xi in nonzero_vec(3), t in prop::collection::vec(-1.0..1.0f64, 2), alpha in -2.0..2.0f64) {
        let alg = case_b(1.0, alpha).unwrap();
        let g = GroupElement::new(&alg, &t).unwrap();
        prop_assert_eq!(orbit_dim(&alg, &xi), orbit_dim(&alg, &dual_act(&g, &xi)));
    }

    #[test]
    fn group_specs_round_trip(entries in prop::collection::vec(-2.0..2.0f64, 4)) {
        let m = RealMatrix::from_row_slice(2, 2, &entries);
        prop_assume!(m.norm() > 1e-3);
        let spec = GroupSpec { name: None, n: 2, generators: vec![entries.clone()], tol: 1e-9, dual: false };
        let text = serde_json::to_string(&spec).unwrap();
        prop_assert_eq!(parse_group_spec(&text).unwrap(), spec);
    }
}

#[test]
fn calderon_holds_on_random_covered_points() {
    let c = BoxSet::new(vec![shell(&[0], 1.0, 2.0)]).unwrap();
    let spec = synth_wavelet(&dilation_1d(), &[c], &SynthOptions::default()).unwrap();
    let samples = spec.covered_samples(200, 77);
    let rep = orbitscope::wavelet::calderon_check(&spec, &samples).unwrap();
    assert_eq!(rep.evaluated, 200);
    assert!(rep.max_deviation < 1e-9);
}
