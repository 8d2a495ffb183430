//! Acceptance suite: one pass/fail line per criterion, non-zero exit on failure.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use orbitscope::classify::{check_consistency, classify3, classify_diag_nilpotent, CaseTag, Integrability, Tri, Verdict, Witness};
use orbitscope::families::*;
use orbitscope::linalg::{mat_exp, rank_tol, RealMatrix};
use orbitscope::orbit::{dual_act, orbit_dim, orbit_tangent, GroupElement};
use orbitscope::quasisection::{is_relatively_compact, meeting_system, BoxSet, ParamInequalitySystem, Shell};
use orbitscope::sections::{normal_form, Case1Family};
use orbitscope::wavelet::{
    band_limited_signal, calderon_check, cwt, l1_estimate, param_lattice, synth_wavelet, SpatialGrid, SynthOptions,
    DEFAULT_PARAM_STEP,
};
use orbitscope::DilationAlgebra;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Summary = (Tri, Tri, Tri, Integrability);
const YES: Summary = (Tri::Yes, Tri::Yes, Tri::Yes, Integrability::Yes);
const NO: Summary = (Tri::No, Tri::No, Tri::No, Integrability::No);
const OPEN: Summary = (Tri::Yes, Tri::No, Tri::No, Integrability::Open);

struct Outcome {
    pass: bool,
    detail: String,
}

fn ok(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn golden() -> Vec<(String, DilationAlgebra, Summary)> {
    let mut rows = Vec::new();
    for a in [0.5, 1.0, 2.0] {
        rows.push((format!("(a) alpha={a}"), case_a(a), YES));
    }
    for (a, b, want) in [
        (1.0, 1.0, OPEN),
        (1.0, -1.0, OPEN),
        (2.0, 0.5, OPEN),
        (1.0, 0.0, YES),
        (0.0, 1.0, YES),
        (-1.0, -1.0, NO),
        (-0.5, -2.0, NO),
    ] {
        rows.push((format!("(b) ({a},{b})"), case_b(a, b).unwrap(), want));
    }
    rows.push(("(c)".into(), case_c(), YES));
    rows.push(("(d)".into(), case_d(), YES));
    rows.push(("(e)".into(), case_e(), YES));
    rows.push(("case 0".into(), case_0(), NO));
    rows.push(("case 1(a)".into(), case_1a(), NO));
    rows.push(("case 1(b)".into(), case_1b(), NO));
    rows.push(("case 1(c)".into(), case_1c(0.5), NO));
    rows.push(("case 2".into(), case_2(2.0), NO));
    rows.push(("case 3(b)".into(), case_3b(), NO));
    rows
}

fn criterion_1(verdicts: &mut Vec<Verdict>) -> Outcome {
    let mut bad = Vec::new();
    for (name, alg, want) in golden() {
        match classify3(&alg) {
            Ok(v) => {
                if v.summary() != want {
                    bad.push(format!("{name}: got {:?}", v.summary()));
                }
                verdicts.push(v);
            }
            Err(e) => bad.push(format!("{name}: {e}")),
        }
    }
    ok(bad.is_empty(), if bad.is_empty() { "21 families match".into() } else { bad.join("; ") })
}

fn random_diag_nilpotent(rng: &mut ChaCha8Rng, n: usize) -> (RealMatrix, RealMatrix) {
    loop {
        let mut sizes = Vec::new();
        let mut left = n;
        while left > 0 {
            let s = rng.gen_range(1..=left);
            sizes.push(s);
            left -= s;
        }
        let mut a = RealMatrix::zeros(n, n);
        let mut x = RealMatrix::zeros(n, n);
        let mut lambdas: Vec<f64> = Vec::new();
        let mut off = 0;
        let mut any = false;
        for &s in &sizes {
            let lambda = loop {
                let l = rng.gen_range(0.5..3.0);
                if lambdas.iter().all(|m: &f64| (m - l).abs() > 0.2) {
                    break l;
                }
            };
            lambdas.push(lambda);
            for i in 0..s {
                a[(off + i, off + i)] = lambda;
                if i > 0 && rng.gen_bool(0.6) {
                    x[(off + i, off + i - 1)] = 1.0;
                    any = true;
                }
            }
            off += s;
        }
        if !any {
            continue;
        }
        let p = RealMatrix::identity(n, n) + RealMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
        let Some(pinv) = p.clone().try_inverse() else { continue };
        return (&p * a * &pinv, &p * x * &pinv);
    }
}

fn criterion_2(verdicts: &mut Vec<Verdict>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = Vec::new();
    for k in 0..50 {
        let n = 3 + k % 2;
        let (a, x) = random_diag_nilpotent(&mut rng, n);
        match classify_diag_nilpotent(&a, &x, 1e-9) {
            Ok(v) => {
                if v.summary() != NO {
                    bad.push(format!("pair {k} (n={n}): {:?}", v.summary()));
                }
                verdicts.push(v);
            }
            Err(e) => bad.push(format!("pair {k} (n={n}): {e}")),
        }
    }
    let mut x2 = RealMatrix::zeros(2, 2);
    x2[(1, 0)] = 1.0;
    match classify_diag_nilpotent(&RealMatrix::identity(2, 2), &x2, 1e-9) {
        Ok(v) => {
            if v.orbit_space_compact != Tri::Yes || !v.witnesses.contains(&Witness::OpenOrbits { count: 2 }) {
                bad.push(format!("n = 2 pair: {:?}", v.summary()));
            }
            verdicts.push(v);
        }
        Err(e) => bad.push(format!("n = 2 pair: {e}")),
    }
    ok(bad.is_empty(), if bad.is_empty() { "50 random pairs -> no; n = 2 -> compact, 2 open orbits".into() } else { bad.join("; ") })
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut errors = Vec::new();
    let mut x = RealMatrix::zeros(3, 3);
    x[(1, 0)] = 1.0;
    let d_type = normal_form(&RealMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 1.0, 0.0])), &x, 1e-9).unwrap();
    let case1: Vec<Case1Family> =
        [case_1a(), case_1c(0.5)].iter().map(|alg| Case1Family::from_algebra(alg).unwrap()).collect();
    for trial in 0..1000 {
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (s, t) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let pair = match trial % 3 {
            0 => d_type.act(s, t, &v).map_err(|e| e.to_string()).and_then(|w| {
                let a = d_type.section_point(&v).map_err(|e| e.to_string())?;
                let b = d_type.section_point(&w).map_err(|e| e.to_string())?;
                Ok((a.v_star, b.v_star))
            }),
            k => {
                let fam = &case1[k - 1];
                let w = fam.act(s, t, &v);
                fam.section_point(&v)
                    .and_then(|a| fam.section_point(&w).map(|b| (a.v_star, b.v_star)))
                    .map_err(|e| e.to_string())
            }
        };
        match pair {
            Ok((a, b)) => {
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / (1.0 + na);
                worst = worst.max(diff);
                if diff > 1e-8 {
                    failures += 1;
                }
            }
            Err(e) => errors.push(e),
        }
    }
    ok(
        failures == 0 && errors.is_empty(),
        format!("max relative drift {worst:.2e}, {failures} over tolerance, {} errors", errors.len()),
    )
}

fn fd_rank(alg: &DilationAlgebra, xi: &[f64]) -> usize {
    let h = 1e-5;
    let cols: Vec<DVector<f64>> = (0..alg.d())
        .map(|j| {
            let mut tp = vec![0.0; alg.d()];
            tp[j] = h;
            let tm: Vec<f64> = tp.iter().map(|x| -x).collect();
            let p = dual_act(&GroupElement::new(alg, &tp).unwrap(), xi);
            let m = dual_act(&GroupElement::new(alg, &tm).unwrap(), xi);
            DVector::from_iterator(xi.len(), p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)))
        })
        .collect();
    let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    rank_tol(&DMatrix::from_columns(&cols), 1e-6 * norm * alg.scale().max(1.0))
}

fn criterion_4() -> Outcome {
    let families: Vec<DilationAlgebra> = golden().into_iter().map(|(_, a, _)| a).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut agree, mut flagged, mut mismatch) = (0, 0, Vec::new());
    for draw in 0..500 {
        let alg = &families[rng.gen_range(0..families.len())];
        let xi: Vec<f64> =
            (0..3).map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(-2.0..2.0) }).collect();
        let sv = orbit_tangent(alg, &xi).singular_values();
        let scale = alg.scale().max(1.0) * xi.iter().map(|x| x.abs()).fold(1.0, f64::max);
        if sv.iter().any(|&s| s > 1e-9 * scale && s < 1e-4 * scale) {
            flagged += 1;
            continue;
        }
        let exact = orbit_dim(alg, &xi);
        let fd = fd_rank(alg, &xi);
        if exact == fd {
            agree += 1;
        } else {
            mismatch.push(format!("draw {draw}: {exact} vs {fd} at {xi:?}"));
        }
    }
    ok(mismatch.is_empty(), format!("{agree} agree, {flagged} boundary-flagged, {} mismatches {}", mismatch.len(), mismatch.join("; ")))
}

fn valid_witness(sys: &ParamInequalitySystem, u: &[f64]) -> bool {
    u.iter().any(|x| x.abs() > 1e-9) && sys.rows.iter().all(|r| r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() <= 1e-9)
}

fn criterion_5() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for ((a, b), (i, j)) in [((1.0, 1.0), (0, 1)), ((1.0, -1.0), (1, 2))] {
        let alg = case_b(a, b).unwrap();
        let sys = meeting_system(&alg, &BoxSet::c_i(3, i, 2.0).unwrap(), &BoxSet::c_i(3, j, 2.0).unwrap()).unwrap();
        let res = is_relatively_compact(&sys).unwrap();
        let good = !res.bounded && res.witness.as_deref().is_some_and(|u| valid_witness(&sys, u));
        pass &= good;
        notes.push(format!("({a},{b}) on ((C{},C{})): unbounded along {:?}", i + 1, j + 1, res.witness.unwrap_or_default()));
    }
    let alg = case_b(1.0, 0.0).unwrap();
    let rho: f64 = 2.0;
    let c = BoxSet::new(vec![
        Shell { coords: vec![0, 2], lo: 1.0 / rho, hi: rho },
        Shell { coords: vec![1], lo: 1.0 / rho, hi: rho },
    ])
    .unwrap();
    let res = is_relatively_compact(&meeting_system(&alg, &c, &c).unwrap()).unwrap();
    pass &= res.bounded;
    notes.push(format!("(1,0) thickened section: bounded = {}", res.bounded));
    ok(pass, notes.join("; "))
}

fn shell(coords: &[usize], lo: f64, hi: f64) -> Shell {
    Shell { coords: coords.to_vec(), lo, hi }
}

fn criterion_6() -> Outcome {
    let one_d = synth_wavelet(&dilation_1d(), &[BoxSet::new(vec![shell(&[0], 1.0, 2.0)]).unwrap()], &SynthOptions::default());
    let case_a_c = BoxSet::new(vec![shell(&[0, 1], 1.0, 2.0), shell(&[2], 1.0, 2.0)]).unwrap();
    let three_d = synth_wavelet(&case_a(1.0), &[case_a_c], &SynthOptions::default());
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, spec) in [("1-D dilation", one_d), ("case (a)", three_d)] {
        match spec.and_then(|s| {
            let samples = s.covered_samples(100, 6);
            calderon_check(&s, &samples)
        }) {
            Ok(r) => {
                pass &= r.evaluated == 100 && r.max_deviation < 1e-3;
                notes.push(format!("{name}: max deviation {:.2e} over {}", r.max_deviation, r.evaluated));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{name}: {e}"));
            }
        }
    }
    ok(pass, notes.join("; "))
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let cases = [
        ("n = 1, 256 points", dilation_1d(), BoxSet::new(vec![shell(&[0], 1.0, 2.0)]).unwrap(), SpatialGrid::new(1, 256, 0.16).unwrap()),
        ("n = 2, 64^2 points", spiral_2d(1.0), BoxSet::new(vec![shell(&[0, 1], 1.0, 2.0)]).unwrap(), SpatialGrid::new(2, 64, 0.15).unwrap()),
    ];
    for (name, alg, c, grid) in cases {
        let run = || -> Result<(f64, f64), orbitscope::wavelet::WaveletError> {
            let spec = synth_wavelet(&alg, &[c], &SynthOptions::default())?;
            let params = param_lattice(&spec, &grid, DEFAULT_PARAM_STEP)?;
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for seed in 0..20 {
                let f = band_limited_signal(&grid, 0.9, 700 + seed);
                let tg = cwt(&spec, &grid, &f, &params)?;
                let ratio = tg.norm_sq() / grid.norm_sq(&f);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            Ok((lo, hi))
        };
        match run() {
            Ok((lo, hi)) => {
                pass &= lo >= 0.95 && hi <= 1.05;
                notes.push(format!("{name}: ratio in [{lo:.6}, {hi:.6}]"));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{name}: {e}"));
            }
        }
    }
    ok(pass, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let run = || -> Result<Outcome, orbitscope::wavelet::WaveletError> {
        let spec = synth_wavelet(&dilation_1d(), &[BoxSet::new(vec![shell(&[0], 1.0, 2.0)]).unwrap()], &SynthOptions::default())?;
        let coarse = l1_estimate(&spec, &SpatialGrid::new(1, 128, 0.16)?)?;
        let fine = l1_estimate(&spec, &SpatialGrid::new(1, 256, 0.16)?)?;
        let rel = (coarse.value - fine.value).abs() / fine.value;
        let leak = coarse.leak.max(fine.leak);
        let pass = coarse.value.is_finite() && fine.value.is_finite() && rel < 0.1 && leak <= 1e-12;
        Ok(ok(
            pass,
            format!(
                "L1 {:.6} (128) vs {:.6} (256), relative change {rel:.2e}; support box {:?}; leak {leak:.1e}",
                coarse.value, fine.value, fine.support_box
            ),
        ))
    };
    run().unwrap_or_else(|e| ok(false, e.to_string()))
}

fn series_exp(m: &RealMatrix) -> RealMatrix {
    let n = m.nrows();
    let mut term = RealMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..60 {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=6);
        let mut m = RealMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let target = rng.gen_range(0.0..2.0);
        let norm = m.norm();
        if norm > 0.0 {
            m *= target / norm;
        }
        let err = (mat_exp(&m, 1.0).unwrap() - series_exp(&m)).abs().max();
        worst = worst.max(err);
    }
    ok(worst < 1e-10, format!("max error {worst:.2e} over 1000 matrices"))
}

fn criterion_10(verdicts: &[Verdict]) -> Outcome {
    let mut bad = Vec::new();
    for v in verdicts {
        if let Err(e) = check_consistency(v) {
            bad.push(format!("{}: {e}", v.case_tag.as_str()));
        }
        let json = serde_json::to_value(v).unwrap();
        for key in ["case_tag", "orbit_space_compact", "topological_section", "quasi_section", "integrable"] {
            if json.get(key).is_none() {
                bad.push(format!("{}: missing {key}", v.case_tag.as_str()));
            }
        }
        if v.integrable == Integrability::Open && v.case_tag != CaseTag::FamilyB {
            bad.push(format!("{}: open outside case (b)", v.case_tag.as_str()));
        }
    }
    ok(bad.is_empty(), format!("{} verdicts checked {}", verdicts.len(), bad.join("; ")))
}

fn main() {
    let mut verdicts = Vec::new();
    let mut results: Vec<(usize, &str, Duration, Duration, Outcome)> = Vec::new();
    let mut timed = |id: usize, name: &'static str, limit: u64, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        results.push((id, name, start.elapsed(), Duration::from_secs(limit), out));
    };
    timed(1, "golden classification table", 10, &mut || criterion_1(&mut verdicts));
    timed(2, "diag+nilpotent verdicts", 10, &mut || criterion_2(&mut verdicts));
    timed(3, "section canonicality", 30, &mut criterion_3);
    timed(4, "orbit dimension vs finite differences", 30, &mut criterion_4);
    timed(5, "quasi-section dichotomy", 5, &mut criterion_5);
    timed(6, "Calderon condition", 120, &mut criterion_6);
    timed(7, "discrete isometry", 300, &mut criterion_7);
    timed(8, "L1 finiteness and stability", 300, &mut criterion_8);
    timed(9, "mat_exp accuracy", 5, &mut criterion_9);
    timed(10, "consistency triangle", 5, &mut || criterion_10(&verdicts));

    let mut failed = 0;
    for (id, name, took, limit, out) in &results {
        let pass = out.pass && took <= limit;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {id:>2} {name} ({:.2} s, limit {} s): {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs(),
            out.detail
        );
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
