//! Integrability verdicts: the one-parameter criterion, the complete case
//! ladder for `n = 3`, and the diagonal-plus-nilpotent families.
//!
//! Section and quasi-section fields refer to relatively compact (quasi-)
//! sections of a conull invariant open subset of the top stratum, the notion
//! relevant to integrable admissible vectors.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{rank_tol, roots_decompose, DilationAlgebra, LinalgError, RealMatrix, RootDecomposition};
use crate::sections::{normal_form, SectionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("family is outside the classified range: {0}")]
    UnclassifiedFamily(String),
    #[error("classifier needs n = 3 and d in {{2, 3}}, got n = {n}, d = {d}")]
    UnsupportedDimension { n: usize, d: usize },
    #[error("generator must be nonzero")]
    ZeroGenerator,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Section(#[from] SectionError),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

/// Relative threshold for zero tests on roots and traces.
const ZERO_TOL: f64 = 1e-7;
/// Normalized parameters below this magnitude trigger a degeneracy warning.
const DEGENERATE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tri {
    Yes,
    No,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrability {
    Yes,
    No,
    Open,
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseTag {
    #[serde(rename = "0")]
    Case0,
    #[serde(rename = "1a")]
    Case1a,
    #[serde(rename = "1b")]
    Case1b,
    #[serde(rename = "1c")]
    Case1c,
    #[serde(rename = "2")]
    Case2,
    #[serde(rename = "3a")]
    Case3a,
    #[serde(rename = "3b")]
    Case3b,
    #[serde(rename = "4")]
    Case4,
    #[serde(rename = "(a)")]
    FamilyA,
    #[serde(rename = "(b)")]
    FamilyB,
    #[serde(rename = "(c)")]
    FamilyC,
    #[serde(rename = "(d)")]
    FamilyD,
    #[serde(rename = "(e)")]
    FamilyE,
    #[serde(rename = "one_param")]
    OneParam,
    #[serde(rename = "diag_nilp")]
    DiagNilp,
    #[serde(rename = "unclassified")]
    Unclassified,
}

impl CaseTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseTag::Case0 => "0",
            CaseTag::Case1a => "1a",
            CaseTag::Case1b => "1b",
            CaseTag::Case1c => "1c",
            CaseTag::Case2 => "2",
            CaseTag::Case3a => "3a",
            CaseTag::Case3b => "3b",
            CaseTag::Case4 => "4",
            CaseTag::FamilyA => "(a)",
            CaseTag::FamilyB => "(b)",
            CaseTag::FamilyC => "(c)",
            CaseTag::FamilyD => "(d)",
            CaseTag::FamilyE => "(e)",
            CaseTag::OneParam => "one_param",
            CaseTag::DiagNilp => "diag_nilp",
            CaseTag::Unclassified => "unclassified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Explicit section of the top stratum.
    Section { descriptor: String },
    /// The top stratum is a finite union of open orbits.
    OpenOrbits { count: usize },
    /// A direction in parameter space along which a meeting set is unbounded.
    UnboundedDirection { params: Vec<f64>, note: String },
    Note { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedParams {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub case_tag: CaseTag,
    pub orbit_space_compact: Tri,
    pub topological_section: Tri,
    pub quasi_section: Tri,
    pub integrable: Integrability,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witnesses: Vec<Witness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_params: Option<NormalizedParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Verdicts for the neighbouring parameter regimes when a normalized
    /// parameter is numerically zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<Verdict>,
}

impl Verdict {
    fn new(case_tag: CaseTag, compact: Tri, section: Tri, quasi: Tri, integrable: Integrability) -> Self {
        Verdict {
            case_tag,
            orbit_space_compact: compact,
            topological_section: section,
            quasi_section: quasi,
            integrable,
            witnesses: Vec::new(),
            normalized_params: None,
            warnings: Vec::new(),
            alternatives: Vec::new(),
        }
    }

    fn negative(case_tag: CaseTag, integrable: Integrability) -> Self {
        Verdict::new(case_tag, Tri::No, Tri::No, Tri::No, integrable)
    }

    fn positive(case_tag: CaseTag) -> Self {
        Verdict::new(case_tag, Tri::Yes, Tri::Yes, Tri::Yes, Integrability::Yes)
    }

    fn with(mut self, w: Witness) -> Self {
        self.witnesses.push(w);
        self
    }

    fn note(self, text: &str) -> Self {
        self.with(Witness::Note { text: text.into() })
    }

    /// The four categorical fields, for table comparisons.
    pub fn summary(&self) -> (Tri, Tri, Tri, Integrability) {
        (self.orbit_space_compact, self.topological_section, self.quasi_section, self.integrable)
    }
}

/// Checks the implications every verdict must satisfy: a section is a
/// quasi-section, a quasi-section forces compactness, integrability forces
/// compactness, and `open` only occurs in case (b) with both normalized
/// parameters nonzero.
pub fn check_consistency(v: &Verdict) -> std::result::Result<(), String> {
    if v.topological_section == Tri::Yes && v.quasi_section != Tri::Yes {
        return Err("section without quasi-section".into());
    }
    if v.quasi_section == Tri::Yes && v.orbit_space_compact != Tri::Yes {
        return Err("quasi-section without compact orbit space".into());
    }
    if v.integrable == Integrability::Yes && v.orbit_space_compact != Tri::Yes {
        return Err("integrable without compact orbit space".into());
    }
    if v.integrable == Integrability::Open {
        let ok = v.case_tag == CaseTag::FamilyB
            && v.normalized_params.as_ref().is_some_and(|p| p.alpha != 0.0 && p.beta != 0.0);
        if !ok {
            return Err("integrability reported open outside case (b) with nonzero parameters".into());
        }
    }
    for alt in &v.alternatives {
        check_consistency(alt)?;
    }
    Ok(())
}

/// One-parameter groups `exp(R A)`: integrable iff the real parts of the
/// eigenvalues of `A` all share one strict sign.
pub fn classify_one_param(a: &RealMatrix) -> Result<Verdict> {
    let scale = a.norm();
    if scale == 0.0 {
        return Err(ClassifyError::ZeroGenerator);
    }
    let eig = crate::linalg::eigenvalues(a)
        .ok_or_else(|| LinalgError::IllConditioned("eigenvalue iteration did not converge".into()))?;
    let thr = ZERO_TOL * scale;
    let positive = eig.iter().all(|z| z.re > thr);
    let negative = eig.iter().all(|z| z.re < -thr);
    if positive || negative {
        Ok(Verdict::positive(CaseTag::OneParam).with(Witness::Section {
            descriptor: "unit sphere of the norm contracted by exp(-sA)".into(),
        }))
    } else {
        Ok(Verdict::new(CaseTag::OneParam, Tri::Unknown, Tri::Unknown, Tri::Unknown, Integrability::No)
            .note("real parts of the eigenvalues do not share one strict sign"))
    }
}

/// Dispatches on the shape of the algebra.
pub fn classify(alg: &DilationAlgebra) -> Result<Verdict> {
    if alg.d() == 1 {
        return classify_one_param(&alg.generators()[0]);
    }
    if alg.n() == 3 {
        return classify3(alg);
    }
    if alg.d() == 2 {
        let acting = alg.dual_generators();
        for (a, x) in [(&acting[0], &acting[1]), (&acting[1], &acting[0])] {
            if let Ok(v) = classify_diag_nilpotent(a, x, alg.tol()) {
                return Ok(v);
            }
        }
    }
    Err(ClassifyError::UnclassifiedFamily(format!(
        "no decision procedure for n = {}, d = {} (not a diagonalizable-plus-nilpotent pair)",
        alg.n(),
        alg.d()
    )))
}

fn real_rank(rows: &[Vec<f64>], thr: f64) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let m = RealMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    // absolute threshold: roots are compared at the generator scale
    if m.norm() <= thr {
        return 0;
    }
    rank_tol(&m, thr / m.norm())
}

fn root_row(r: &[Complex64]) -> Vec<f64> {
    r.iter().map(|z| z.re).chain(r.iter().map(|z| z.im)).collect()
}

/// Decision ladder for commuting algebras in `gl(3, R)` with `d = 2` or `3`.
pub fn classify3(alg: &DilationAlgebra) -> Result<Verdict> {
    if alg.n() != 3 || !(2..=3).contains(&alg.d()) {
        return Err(ClassifyError::UnsupportedDimension { n: alg.n(), d: alg.d() });
    }
    let dec = roots_decompose(alg)?;
    let thr = ZERO_TOL * alg.scale().max(1.0);
    if alg.d() == 3 {
        return classify3_full(&dec, thr);
    }

    let rows: Vec<Vec<f64>> = dec.classes.iter().map(|c| root_row(&c.root)).collect();
    let zero_root = rows.iter().any(|r| r.iter().all(|x| x.abs() <= thr));
    let p = dec.p();
    let tag = match p {
        1 if zero_root => CaseTag::Case0,
        1 => case1_subtag(alg, &dec, thr),
        2 if real_rank(&rows, thr) < 2 => CaseTag::Case2,
        2 => CaseTag::Case3a,
        3 => CaseTag::Case4,
        _ => return Err(ClassifyError::UnclassifiedFamily(format!("{p} root classes"))),
    };

    if zero_root {
        let integrable = if dec.all_real() { Integrability::No } else { Integrability::Unclassified };
        let tag = if tag == CaseTag::Case3a { CaseTag::Case3b } else { tag };
        return Ok(Verdict::negative(tag, integrable).note("a root vanishes, so the orbit space has no compact open subset"));
    }

    match tag {
        CaseTag::Case1a | CaseTag::Case1b | CaseTag::Case1c => Ok(Verdict::negative(tag, Integrability::No)
            .note("single nonzero root with nilpotent part: sections of the layers have unbounded components")),
        CaseTag::Case2 => Ok(Verdict::negative(tag, Integrability::No)
            .with(Witness::Section { descriptor: "v1 = ±1, v2 = 0, v3 ∈ R (noncompact)".into() })),
        CaseTag::Case3a => Ok(case3(alg, &dec, thr)),
        CaseTag::Case4 => Ok(case4(&dec)),
        _ => unreachable!(),
    }
}

fn classify3_full(dec: &RootDecomposition, thr: f64) -> Result<Verdict> {
    if !dec.all_real() {
        return Err(ClassifyError::UnclassifiedFamily(
            "three-dimensional algebra with a non-real root is not among the listed families".into(),
        ));
    }
    let nil = dec.nilpotent_basis.len();
    let nonzero = dec.classes.iter().all(|c| c.root.iter().any(|z| z.norm() > thr));
    let mut dims: Vec<usize> = dec.classes.iter().map(|c| c.real_dim()).collect();
    dims.sort_unstable();
    let (tag, orbits) = match (dec.p(), nil, dims.as_slice()) {
        (3, 0, _) => (CaseTag::FamilyE, 8),
        (2, 1, [1, 2]) if nonzero => (CaseTag::FamilyD, 4),
        (1, 2, _) if nonzero => (CaseTag::FamilyC, 2),
        _ => {
            return Err(ClassifyError::UnclassifiedFamily(format!(
                "d = 3 with p = {}, dim n = {nil} does not match a listed family",
                dec.p()
            )))
        }
    };
    Ok(Verdict::positive(tag)
        .with(Witness::OpenOrbits { count: orbits })
        .note("finitely many open orbits with trivial stabilizers; each orbit meets a single point of the section"))
}

fn case1_subtag(alg: &DilationAlgebra, dec: &RootDecomposition, thr: f64) -> CaseTag {
    let n = alg.n();
    let stacked = RealMatrix::from_fn(n * n, alg.d() + 1, |r, c| {
        let (i, j) = (r / n, r % n);
        if c < alg.d() {
            alg.generators()[c][(i, j)]
        } else if i == j {
            1.0
        } else {
            0.0
        }
    });
    if rank_tol(&stacked, ZERO_TOL) == alg.d() {
        return CaseTag::Case1a;
    }
    let root = &dec.classes[0].root;
    let nils: Vec<RealMatrix> = alg
        .generators()
        .iter()
        .zip(root)
        .map(|(g, z)| g - RealMatrix::identity(n, n) * z.re)
        .collect();
    let square_zero = nils.iter().all(|a| nils.iter().all(|b| (a * b).norm() <= thr * alg.scale().max(1.0)));
    if square_zero {
        CaseTag::Case1b
    } else {
        CaseTag::Case1c
    }
}

fn case3(alg: &DilationAlgebra, dec: &RootDecomposition, thr: f64) -> Verdict {
    // lambda2: a real root on a one-dimensional space; A spans its kernel.
    let (i2, i1) = match dec.classes.iter().position(|c| c.is_real && c.real_dim() == 1) {
        Some(k) => (k, 1 - k),
        None => {
            return Verdict::negative(CaseTag::Case3b, Integrability::Unclassified)
                .note("no one-dimensional real root space")
        }
    };
    let l2 = dec.classes[i2].real_part();
    let a = [-l2[1], l2[0]];
    let c = dec.classes[i1].eval(&a);
    let first = &dec.classes[i1];

    // A two-dimensional real root space must carry a scalar action.
    if first.is_real {
        let v = &first.basis;
        let semisimple = alg.generators().iter().zip(&first.root).all(|(g, z)| {
            let r = v.transpose() * g * v;
            (r - RealMatrix::identity(2, 2) * z.re).norm() <= thr
        });
        if !semisimple {
            return Verdict::negative(CaseTag::Case3b, Integrability::No)
                .note("two-dimensional real root space with a non-semisimple action: an invariant affine coordinate survives");
        }
    }

    let mut warnings = Vec::new();
    let re_small = c.re.abs() <= DEGENERATE_TOL * c.norm().max(f64::MIN_POSITIVE);
    if re_small {
        if c.norm() > thr {
            warnings.push(format!("DegenerateParameter: Re c = {:.3e} is numerically zero", c.re));
        }
        let mut v = Verdict::negative(CaseTag::Case3b, Integrability::No)
            .note("c is purely imaginary: |v1 + i v2| is invariant and the orbit space maps onto (0, inf)");
        v.warnings = warnings;
        return v;
    }
    let tag = if first.is_real { CaseTag::FamilyB } else { CaseTag::FamilyA };
    let mut v = Verdict::positive(tag).with(Witness::Section { descriptor: "v1^2 + v2^2 = 1, |v3| = 1".into() });
    if first.is_real {
        v.normalized_params = Some(NormalizedParams { alpha: 1.0, beta: 0.0 });
    }
    v.witnesses.push(Witness::Note { text: format!("c = {:.6} + {:.6}i", c.re / c.re.abs(), c.im / c.re.abs()) });
    v
}

/// Writes `lambda_k = alpha lambda_i + beta lambda_j` for the pair `(i, j)`
/// with the largest determinant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case4Normalization {
    pub pair: (usize, usize),
    pub third: usize,
    pub alpha: f64,
    pub beta: f64,
    pub compact: bool,
}

/// All three normalizations of a Case 4 root triple.
pub fn case4_normalizations(roots: &[[f64; 2]; 3]) -> Vec<Case4Normalization> {
    let mut out = Vec::with_capacity(3);
    for (i, j, k) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
        let (a, b) = (roots[i], roots[j]);
        let det = a[0] * b[1] - a[1] * b[0];
        let r = roots[k];
        let alpha = (r[0] * b[1] - r[1] * b[0]) / det;
        let beta = (a[0] * r[1] - a[1] * r[0]) / det;
        out.push(Case4Normalization { pair: (i, j), third: k, alpha, beta, compact: alpha > 0.0 || beta > 0.0 });
    }
    out
}

fn case4_verdict(alpha: f64, beta: f64) -> Verdict {
    let params = Some(NormalizedParams { alpha, beta });
    let mut v = if alpha > 0.0 || beta > 0.0 {
        if alpha == 0.0 || beta == 0.0 {
            Verdict::positive(CaseTag::FamilyB).with(Witness::Section {
                descriptor: if alpha == 0.0 { "v1 = 1, v2^2 + v3^2 = 1" } else { "v2 = 1, v1^2 + v3^2 = 1" }.into(),
            })
        } else {
            let direction = if beta > 0.0 { vec![beta, -alpha] } else { vec![0.0, 1.0] };
            Verdict::new(CaseTag::FamilyB, Tri::Yes, Tri::No, Tri::No, Integrability::Open).with(
                Witness::UnboundedDirection {
                    params: direction,
                    note: if beta > 0.0 { "meeting set ((C1, C2)) is unbounded" } else { "meeting set ((C2, C3)) is unbounded" }
                        .into(),
                },
            )
        }
    } else {
        Verdict::negative(CaseTag::Case4, Integrability::No).note("neither normalized parameter is positive")
    };
    v.normalized_params = params;
    v
}

fn case4(dec: &RootDecomposition) -> Verdict {
    let roots: Vec<[f64; 2]> = dec.classes.iter().map(|c| [c.root[0].re, c.root[1].re]).collect();
    let roots: [[f64; 2]; 3] = [roots[0], roots[1], roots[2]];
    let norms = case4_normalizations(&roots);
    let best = norms
        .iter()
        .max_by(|x, y| {
            let det = |n: &Case4Normalization| {
                let (a, b) = (roots[n.pair.0], roots[n.pair.1]);
                (a[0] * b[1] - a[1] * b[0]).abs()
            };
            det(x).total_cmp(&det(y))
        })
        .expect("three normalizations");
    let snap = |x: f64| if x.abs() < DEGENERATE_TOL { 0.0 } else { x };
    let (alpha, beta) = (snap(best.alpha), snap(best.beta));
    let mut v = case4_verdict(alpha, beta);
    let mut alternatives: Vec<Verdict> = Vec::new();
    for (name, raw, snapped) in [("alpha", best.alpha, alpha), ("beta", best.beta, beta)] {
        if snapped == 0.0 {
            v.warnings.push(format!("DegenerateParameter: {name} = {raw:.3e} treated as zero"));
            for eps in [-DEGENERATE_TOL, DEGENERATE_TOL] {
                let (a, b) = if name == "alpha" { (eps, beta) } else { (alpha, eps) };
                let alt = case4_verdict(a, b);
                if !alternatives.iter().any(|x| x.summary() == alt.summary()) && alt.summary() != v.summary() {
                    alternatives.push(alt);
                }
            }
        }
    }
    v.alternatives = alternatives;
    v
}

/// Diagonalizable `A` plus nonzero commuting nilpotent `X` on `R^n`
/// (acting matrices).
pub fn classify_diag_nilpotent(a: &RealMatrix, x: &RealMatrix, tol: f64) -> Result<Verdict> {
    let fam = normal_form(a, x, tol)?;
    if x.norm() <= ZERO_TOL * a.norm().max(1.0) || a.norm() == 0.0 {
        return Err(ClassifyError::ZeroGenerator);
    }
    let n = a.nrows();
    if n == 2 {
        return Ok(Verdict::positive(CaseTag::DiagNilp)
            .with(Witness::OpenOrbits { count: 2 })
            .note("top stratum is the union of two open orbits with trivial stabilizer"));
    }
    let zero = fam.eigenspaces().iter().any(|w| w.lambda.abs() <= ZERO_TOL * a.norm());
    let reason = if zero {
        "A has eigenvalue 0: the orbit space of R^n has no nonempty compact open subset"
    } else {
        "n >= 3: no invariant open conull subset of the top stratum has compact orbit space"
    };
    Ok(Verdict::negative(CaseTag::DiagNilp, Integrability::No).note(reason))
}
