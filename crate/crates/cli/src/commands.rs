use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use orbitscope::classify::{classify, Verdict};
use orbitscope::families::{case_a, case_b, case_c, case_d, case_e};
use orbitscope::groupspec::{from_json, parse_group_spec, GroupSpec, SpecError};
use orbitscope::orbit::{is_admissible, stratify, SampleSpec};
use orbitscope::quasisection::{quasi_section_verdict, BoxSet, QuasiSectionStatus, Shell, UDescription};
use orbitscope::sections::{normal_form, Case1Family, SectionPoint};
use orbitscope::wavelet::{
    band_limited_signal, calderon_check, cwt, l1_estimate, param_lattice, synth_wavelet, SpatialGrid, SynthOptions,
    WaveletSpec, DEFAULT_QUAD_ORDER,
};
use orbitscope::{DilationAlgebra, RealMatrix};

use crate::report::{read_text, write_csv, write_report, write_stream, CliError, Header};
use crate::{Cli, Command, Common};

const COVERAGE_SAMPLES: usize = 400;
const CALDERON_TOL: f64 = 1e-3;

pub fn run(cli: &Cli, overrides: Map<String, Value>) -> Result<(), CliError> {
    let c = &cli.common;
    if let Some(tol) = c.tol {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(CliError::usage(format!("--tol {tol} outside (0, 1)")));
        }
    }
    if c.quad_order == Some(0) {
        return Err(CliError::usage("--quad-order must be positive"));
    }
    let out = c.out.as_deref();
    match &cli.command {
        Command::Classify { input, table } => {
            let mut h = header("classify", c, overrides);
            let result = if *table {
                let tol = c.tol.unwrap_or(orbitscope::linalg::DEFAULT_TOL);
                h.tolerance("tol", tol);
                classify_table(tol)?
            } else {
                let (spec, alg) = load_algebra(input.as_deref().expect("clap requires --input"), c.tol)?;
                h.tolerance("tol", alg.tol());
                let v = classify(&alg).map_err(CliError::domain)?;
                json!({ "family": spec.name, "n": alg.n(), "d": alg.d(), "verdict": v })
            };
            write_report(out, &h, &result)
        }
        Command::Strata { input, samples, radius, threshold, csv } => {
            let (_, alg) = load_algebra(input, c.tol)?;
            let mut h = header("strata", c, overrides);
            h.tolerance("tol", alg.tol());
            h.tolerance("threshold", threshold);
            let sampling = match c.grid {
                Some(per_axis) => SampleSpec::Grid { lo: -radius, hi: *radius, per_axis },
                None => SampleSpec::Cloud { count: *samples, radius: *radius, seed: c.seed },
            };
            let rep = stratify(&alg, &sampling, *threshold);
            if let Some(path) = csv {
                let cols: Vec<String> =
                    (0..alg.n()).map(|i| format!("xi{i}")).chain(["orbit_dim".to_string()]).collect();
                write_csv(path, &cols, rep.csv_rows())?;
            }
            let admissibility = is_admissible(&alg).map_err(CliError::domain)?;
            let result = json!({
                "sampling": sampling,
                "samples": rep.probes.len(),
                "d": alg.d(),
                "d_max": rep.d_max,
                "census": rep.census,
                "top_fraction": rep.top_fraction,
                "threshold": rep.threshold,
                "top_conull": rep.top_conull,
                "admissibility": admissibility,
            });
            write_report(out, &h, &result)
        }
        Command::Section { input, points } => {
            let (_, alg) = load_algebra(input, c.tol)?;
            let text = read_text(points)?;
            let pts: Vec<Vec<f64>> = from_json(&text).map_err(|e| CliError::spec(points, e))?;
            if let Some(bad) = pts.iter().position(|p| p.len() != alg.n()) {
                return Err(CliError::Parse {
                    path: points.display().to_string(),
                    offset: None,
                    message: format!("point {bad} has {} coordinates, expected {}", pts[bad].len(), alg.n()),
                });
            }
            let mut h = header("section", c, overrides);
            h.tolerance("tol", alg.tol());
            let (family, mut section) = section_family(&alg)?;
            let records: Vec<Value> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| match section(p) {
                    Ok(sp) => json!({ "index": i, "point": p, "section": sp }),
                    Err(e) => json!({ "index": i, "point": p, "error": error_value(e) }),
                })
                .collect();
            write_stream(out, &json!({ "header": h, "family": family }), &records)
        }
        Command::Quasisection { input, boxes } => {
            let (_, alg) = load_algebra(input, c.tol)?;
            let file = load_boxes(boxes, alg.n())?;
            let u = file.u.clone().unwrap_or(UDescription::TopStratum { samples: COVERAGE_SAMPLES, seed: c.seed });
            let mut h = header("quasisection", c, overrides);
            h.tolerance("tol", alg.tol());
            let rep = quasi_section_verdict(&alg, &file.boxes, &u).map_err(CliError::domain)?;
            let witness = rep.pairs.iter().find_map(|p| {
                let b = p.boundedness.as_ref()?;
                (!b.bounded).then(|| json!({ "pair": [p.first, p.second], "direction": b.witness }))
            });
            let result = json!({
                "status": rep.status,
                "quasi_section": rep.status == QuasiSectionStatus::Exists,
                "witness": witness,
                "u": u,
                "sampled": rep.sampled,
                "covered": rep.covered,
                "pairs": rep.pairs,
            });
            write_report(out, &h, &result)
        }
        Command::Wavelet { input, boxes, enlargement, force, csv, lattice, calderon_samples, spacing, no_l1 } => {
            let (spec, alg) = load_algebra(input, c.tol)?;
            let file = load_boxes(boxes, alg.n())?;
            if !(*enlargement > 1.0) {
                return Err(CliError::usage("--enlargement must exceed 1"));
            }
            let opts = SynthOptions {
                outer: file.outer.clone(),
                enlargement: *enlargement,
                quad_order: c.quad_order.unwrap_or(DEFAULT_QUAD_ORDER),
                lattice_per_axis: *lattice,
                sigma_points: None,
                force: *force,
                coverage_samples: COVERAGE_SAMPLES,
                seed: c.seed,
            };
            let mut h = header("wavelet", c, overrides);
            h.tolerance("tol", alg.tol());
            h.tolerance("quad_order", opts.quad_order);
            h.tolerance("calderon", CALDERON_TOL);
            let w = synth_wavelet(&alg, &file.boxes, &opts).map_err(CliError::domain)?;
            if let Some(path) = csv {
                let cols: Vec<String> = (0..w.n()).map(|i| format!("xi{i}")).chain(["ghat".to_string()]).collect();
                let rows = w.lattice.values.iter().enumerate().map(|(i, v)| {
                    w.lattice.point(i).iter().chain([v]).map(|x| x.to_string()).collect()
                });
                write_csv(path, &cols, rows)?;
            }
            let samples = w.covered_samples(*calderon_samples, c.seed);
            let cal = calderon_check(&w, &samples).map_err(CliError::domain)?;
            let l1 = if *no_l1 {
                Value::Null
            } else {
                let grid = spatial_grid(&w, c.grid, *spacing)?;
                json!(l1_estimate(&w, &grid).map_err(CliError::domain)?)
            };
            let result = json!({
                "inputs": { "group": spec, "boxes": file.boxes, "options": opts },
                "summary": w.summary(),
                "calderon": {
                    "samples": samples.len(),
                    "evaluated": cal.evaluated,
                    "uncovered": cal.uncovered,
                    "max_deviation": cal.max_deviation,
                    "pass": cal.max_deviation < CALDERON_TOL && cal.evaluated > 0,
                },
                "lattice": { "per_axis": w.lattice.per_axis, "lo": w.lattice.lo, "hi": w.lattice.hi },
                "l1": l1,
            });
            write_report(out, &h, &result)
        }
        Command::Cwt { wavelet, signal, band, spacing, param_step, csv } => {
            let w = rebuild_wavelet(wavelet, c)?;
            if !(*param_step > 0.0) {
                return Err(CliError::usage("--param-step must be positive"));
            }
            let (grid, f, source) = match signal {
                Some(path) => {
                    let f = read_signal(path)?;
                    let size = (f.len() as f64).powf(1.0 / w.n() as f64).round() as usize;
                    if size.pow(w.n() as u32) != f.len() {
                        return Err(CliError::Parse {
                            path: path.display().to_string(),
                            offset: None,
                            message: format!("{} samples do not fill a grid in dimension {}", f.len(), w.n()),
                        });
                    }
                    (spatial_grid(&w, Some(size), *spacing)?, f, json!({ "path": path }))
                }
                None => {
                    let grid = spatial_grid(&w, c.grid, *spacing)?;
                    let f = band_limited_signal(&grid, *band, c.seed);
                    (grid, f, json!({ "band_limited": band }))
                }
            };
            let mut h = header("cwt", c, overrides);
            h.tolerance("tol", w.alg.tol());
            h.tolerance("quad_order", w.quad_order);
            h.tolerance("param_step", param_step);
            let params = param_lattice(&w, &grid, *param_step).map_err(CliError::domain)?;
            let tg = cwt(&w, &grid, &f, &params).map_err(CliError::domain)?;
            let (norm_f, norm_v) = (grid.norm_sq(&f), tg.norm_sq());
            if let Some(path) = csv {
                let cols: Vec<String> = (0..w.d())
                    .map(|j| format!("t{j}"))
                    .chain((0..w.n()).map(|i| format!("x{i}")))
                    .chain(["re".to_string(), "im".to_string()])
                    .collect();
                let rows = tg.params.points.iter().zip(&tg.coefficients).flat_map(|(t, slice)| {
                    slice.iter().enumerate().map(move |(k, z)| {
                        t.iter()
                            .chain(&grid.position(k))
                            .chain([&z.re, &z.im])
                            .map(|x| x.to_string())
                            .collect::<Vec<_>>()
                    })
                });
                write_csv(path, &cols, rows)?;
            }
            let result = json!({
                "signal": source,
                "grid": grid,
                "params": tg.params.points.len(),
                "param_weight": tg.params.weight,
                "signal_norm_sq": norm_f,
                "transform_norm_sq": norm_v,
                "isometry_ratio": if norm_f > 0.0 { norm_v / norm_f } else { f64::NAN },
                "max_abs": tg.max_abs(),
            });
            write_report(out, &h, &result)
        }
    }
}

fn header(command: &'static str, c: &Common, overrides: Map<String, Value>) -> Header {
    let mut h = Header::new(command, c.seed);
    h.overrides = overrides;
    h
}

fn error_value<E: std::fmt::Debug + ToString>(e: E) -> Value {
    match CliError::domain(e) {
        CliError::Domain { kind, message } => json!({ "kind": kind, "message": message }),
        _ => unreachable!(),
    }
}

fn load_spec(path: &Path) -> Result<GroupSpec, CliError> {
    parse_group_spec(&read_text(path)?).map_err(|e| CliError::spec(path, e))
}

fn load_algebra(path: &Path, tol: Option<f64>) -> Result<(GroupSpec, DilationAlgebra), CliError> {
    let spec = load_spec(path)?;
    let alg = spec.algebra_with_tol(tol.unwrap_or(spec.tol)).map_err(CliError::domain)?;
    Ok((spec, alg))
}

fn classify_table(tol: f64) -> Result<Value, CliError> {
    let b = case_b(1.0, 1.0).map_err(CliError::domain)?;
    let families: Vec<(&str, Value, DilationAlgebra)> = vec![
        ("a", json!({ "alpha": 1.0 }), case_a(1.0)),
        ("b", json!({ "alpha": 1.0, "beta": 1.0 }), b),
        ("c", Value::Null, case_c()),
        ("d", Value::Null, case_d()),
        ("e", Value::Null, case_e()),
    ];
    let rows: Vec<Value> = families
        .into_iter()
        .map(|(name, params, alg)| {
            let alg = GroupSpec::from_algebra(&alg, Some(name)).algebra_with_tol(tol).map_err(CliError::domain)?;
            let v: Verdict = classify(&alg).map_err(CliError::domain)?;
            Ok(json!({
                "family": name,
                "params": params,
                "group": GroupSpec::from_algebra(&alg, Some(name)),
                "verdict": v,
            }))
        })
        .collect::<Result<_, CliError>>()?;
    Ok(json!({ "families": rows }))
}

fn rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

type SectionFn = Box<dyn FnMut(&[f64]) -> Result<SectionPoint, orbitscope::sections::SectionError>>;

/// Section map for a two-generator family: Case 1 (one real root, `n = 3`)
/// or a diagonalizable-plus-nilpotent pair of acting matrices.
fn section_family(alg: &DilationAlgebra) -> Result<(Value, SectionFn), CliError> {
    if alg.d() != 2 {
        return Err(CliError::Domain {
            kind: "UnsupportedFamily".into(),
            message: format!("sections need a two-parameter family, got d = {}", alg.d()),
        });
    }
    if alg.n() == 3 {
        if let Ok(fam) = Case1Family::from_algebra(alg) {
            let q = fam.basis().clone();
            let q_inv = q.clone().try_inverse().expect("triangularizing basis is invertible");
            let desc = json!({
                "kind": "case1",
                "a": rows(&(&q * fam.a() * &q_inv)),
                "x": rows(&(&q * fam.x() * &q_inv)),
            });
            let f: SectionFn = Box::new(move |v: &[f64]| {
                let local = matvec(&q_inv, v);
                let mut sp = fam.section_point(&local)?;
                sp.v_star = matvec(&q, &sp.v_star);
                Ok(sp)
            });
            return Ok((desc, f));
        }
    }
    let acting = alg.dual_generators();
    let first = normal_form(&acting[0], &acting[1], alg.tol());
    let fam = match first {
        Ok(f) => f,
        Err(e) => normal_form(&acting[1], &acting[0], alg.tol()).map_err(|_| CliError::domain(e))?,
    };
    let desc = json!({ "kind": "diag_nilpotent", "a": rows(fam.a()), "x": rows(fam.x()) });
    Ok((desc, Box::new(move |v: &[f64]| fam.section_point(v))))
}

fn matvec(m: &RealMatrix, v: &[f64]) -> Vec<f64> {
    m.row_iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawBox {
    Shells { shells: Vec<Shell> },
    /// `[[lo, hi], ...]` per coordinate.
    Coordinate(Vec<(f64, f64)>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoxFile {
    boxes: Vec<RawBox>,
    outer: Option<Vec<RawBox>>,
    u: Option<UDescription>,
}

struct BoxFile {
    boxes: Vec<BoxSet>,
    outer: Option<Vec<BoxSet>>,
    u: Option<UDescription>,
}

fn load_boxes(path: &Path, n: usize) -> Result<BoxFile, CliError> {
    let text = read_text(path)?;
    let raw: RawBoxFile = from_json(&text).map_err(|e| CliError::spec(path, e))?;
    let invalid = |key: &str, message: String| {
        CliError::spec(path, SpecError::Invalid { offset: text.find(&format!("\"{key}\"")).unwrap_or(0), message })
    };
    let convert = |key: &str, list: Vec<RawBox>| -> Result<Vec<BoxSet>, CliError> {
        if list.is_empty() {
            return Err(invalid(key, "at least one box is required".into()));
        }
        list.into_iter()
            .enumerate()
            .map(|(i, b)| {
                let set = match b {
                    RawBox::Shells { shells } => BoxSet::new(shells),
                    RawBox::Coordinate(bounds) => BoxSet::coordinate(&bounds),
                }
                .map_err(|e| invalid(key, format!("box {i}: {e}")))?;
                if set.dim() != n {
                    return Err(invalid(key, format!("box {i} lives in dimension {}, the family in {n}", set.dim())));
                }
                Ok(set)
            })
            .collect()
    };
    let boxes = convert("boxes", raw.boxes)?;
    let outer = raw.outer.map(|o| convert("outer", o)).transpose()?;
    Ok(BoxFile { boxes, outer, u: raw.u })
}

fn default_size(n: usize) -> usize {
    match n {
        1 => 256,
        2 => 64,
        _ => 16,
    }
}

/// Spacing `0.4 / max r` keeps the outer sets below the Nyquist frequency.
fn default_spacing(w: &WaveletSpec) -> f64 {
    let r = w.bump.outer.iter().flat_map(|b| b.shells.iter().map(|s| s.hi)).fold(0.0f64, f64::max);
    0.4 / r
}

fn spatial_grid(w: &WaveletSpec, size: Option<usize>, spacing: Option<f64>) -> Result<SpatialGrid, CliError> {
    let spacing = spacing.unwrap_or_else(|| default_spacing(w));
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(CliError::usage(format!("spacing {spacing} must be positive")));
    }
    SpatialGrid::new(w.n(), size.unwrap_or_else(|| default_size(w.n())), spacing).map_err(CliError::domain)
}

#[derive(Deserialize)]
struct WaveletInputs {
    group: GroupSpec,
    boxes: Vec<BoxSet>,
    options: SynthOptions,
}

fn rebuild_wavelet(path: &Path, c: &Common) -> Result<WaveletSpec, CliError> {
    let text = read_text(path)?;
    let doc: Value = from_json(&text).map_err(|e| CliError::spec(path, e))?;
    let inputs = doc
        .pointer("/result/inputs")
        .filter(|_| doc.pointer("/header/command") == Some(&json!("wavelet")))
        .ok_or_else(|| CliError::Parse {
            path: path.display().to_string(),
            offset: None,
            message: "not a wavelet report".into(),
        })?;
    let mut inputs: WaveletInputs = serde_json::from_value(inputs.clone()).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        offset: None,
        message: e.to_string(),
    })?;
    let spec_text = serde_json::to_string(&inputs.group).expect("group spec serializes");
    let spec = parse_group_spec(&spec_text).map_err(|e| CliError::spec(path, e))?;
    let alg = spec.algebra_with_tol(c.tol.unwrap_or(spec.tol)).map_err(CliError::domain)?;
    if let Some(q) = c.quad_order {
        inputs.options.quad_order = q;
    }
    let boxes = inputs
        .boxes
        .into_iter()
        .map(|b| BoxSet::new(b.shells))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::domain)?;
    synth_wavelet(&alg, &boxes, &inputs.options).map_err(CliError::domain)
}

fn read_signal(path: &Path) -> Result<Vec<Complex64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            offset: e.position().map(|p| p.byte() as usize),
            message: e.to_string(),
        })?;
        let offset = rec.position().map(|p| p.byte() as usize);
        let vals: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match (vals, rec.len()) {
            (Ok(v), 1) => out.push(Complex64::new(v[0], 0.0)),
            (Ok(v), 2) => out.push(Complex64::new(v[0], v[1])),
            // A non-numeric first row is a column header.
            (Err(_), _) if i == 0 => {}
            (_, len) => {
                return Err(CliError::Parse {
                    path: path.display().to_string(),
                    offset,
                    message: format!("row {i}: expected `re` or `re,im`, found {len} field(s)"),
                })
            }
        }
    }
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(CliError::Parse { path: path.display().to_string(), offset: None, message: "non-finite sample".into() });
    }
    Ok(out)
}
