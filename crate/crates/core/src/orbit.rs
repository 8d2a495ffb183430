//! The dual action `xi -> h^-T xi`, orbit/stabilizer dimensions, strata and
//! the admissibility test.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{mat_exp, rank_tol, roots_decompose, DilationAlgebra, LinalgError, RealMatrix};

/// Number of deterministic probes used to decide whether the top stratum is
/// nonempty.
pub const ADMISSIBILITY_PROBES: usize = 64;
pub const PROBE_SEED: u64 = 0x5eed_0b17;
pub const DEFAULT_CONULL_THRESHOLD: f64 = 0.99;

/// `h = exp(sum t_j X_j)` together with `h^-T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub params: Vec<f64>,
    pub h: RealMatrix,
    pub h_inv_t: RealMatrix,
}

impl GroupElement {
    pub fn new(alg: &DilationAlgebra, params: &[f64]) -> Result<Self, LinalgError> {
        assert_eq!(params.len(), alg.d(), "parameter vector must have length d");
        let log = alg.combination(params);
        let h = mat_exp(&log, 1.0)?;
        let h_inv_t = mat_exp(&log, -1.0)?.transpose();
        Ok(GroupElement { params: params.to_vec(), h, h_inv_t })
    }

    pub fn identity(alg: &DilationAlgebra) -> Self {
        let n = alg.n();
        GroupElement { params: vec![0.0; alg.d()], h: RealMatrix::identity(n, n), h_inv_t: RealMatrix::identity(n, n) }
    }

    /// Product in `H`; parameters add since `H` is abelian.
    pub fn compose(&self, other: &GroupElement, alg: &DilationAlgebra) -> Result<Self, LinalgError> {
        let params: Vec<f64> = self.params.iter().zip(&other.params).map(|(a, b)| a + b).collect();
        GroupElement::new(alg, &params)
    }

    pub fn det(&self) -> f64 {
        self.h.determinant()
    }
}

pub fn dual_act(g: &GroupElement, xi: &[f64]) -> Vec<f64> {
    (&g.h_inv_t * DVector::from_row_slice(xi)).iter().copied().collect()
}

/// Columns `X_j^T xi` spanning the tangent space of the dual orbit.
pub fn orbit_tangent(alg: &DilationAlgebra, xi: &[f64]) -> RealMatrix {
    let v = DVector::from_row_slice(xi);
    let cols: Vec<DVector<f64>> = alg.generators().iter().map(|g| g.transpose() * &v).collect();
    RealMatrix::from_columns(&cols)
}

pub fn orbit_dim(alg: &DilationAlgebra, xi: &[f64]) -> usize {
    rank_tol(&orbit_tangent(alg, xi), alg.tol())
}

pub fn stabilizer_dim(alg: &DilationAlgebra, xi: &[f64]) -> usize {
    alg.d() - orbit_dim(alg, xi)
}

/// Dimension of the coadjoint orbit through `(xi, Y*)` in the dual of
/// `R^n ⋊ H`; always twice the dual orbit dimension.
pub fn coadjoint_orbit_dim(alg: &DilationAlgebra, xi: &[f64]) -> usize {
    2 * orbit_dim(alg, xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissibility {
    Admissible,
    NotAdmissible,
    HypothesesViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub verdict: Admissibility,
    pub reasons: Vec<String>,
}

/// Deterministic probe points, uniform in `[-1, 1]^n`.
pub fn probe_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn is_admissible(alg: &DilationAlgebra) -> Result<AdmissibilityReport, LinalgError> {
    let dec = roots_decompose(alg)?;
    if !dec.all_real() {
        return Ok(AdmissibilityReport {
            verdict: Admissibility::HypothesesViolated,
            reasons: vec!["a root is non-real, so the spectrum of H is not contained in the positive reals".into()],
        });
    }
    let mut reasons = Vec::new();
    let scale = alg.scale();
    let traced = alg.generators().iter().any(|g| g.trace().abs() > alg.tol() * scale);
    if !traced {
        reasons.push("every generator is traceless, so det is identically 1 on H".into());
    }
    let witness = probe_points(alg.n(), ADMISSIBILITY_PROBES, PROBE_SEED)
        .into_iter()
        .find(|p| orbit_dim(alg, p) == alg.d());
    match &witness {
        Some(p) => reasons.push(format!("free orbit witness at {p:?}")),
        None => reasons.push(format!("no probe among {ADMISSIBILITY_PROBES} reaches orbit dimension {}", alg.d())),
    }
    let verdict = if traced && witness.is_some() { Admissibility::Admissible } else { Admissibility::NotAdmissible };
    Ok(AdmissibilityReport { verdict, reasons })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSpec {
    /// Tensor grid with `per_axis` points on `[lo, hi]` in each coordinate.
    Grid { lo: f64, hi: f64, per_axis: usize },
    /// `count` points uniform in `[-radius, radius]^n`.
    Cloud { count: usize, radius: f64, seed: u64 },
}

impl SampleSpec {
    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        match *self {
            SampleSpec::Grid { lo, hi, per_axis } => {
                let axis: Vec<f64> = if per_axis <= 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..per_axis).map(|k| lo + (hi - lo) * k as f64 / (per_axis - 1) as f64).collect()
                };
                let total = axis.len().pow(n as u32);
                (0..total)
                    .map(|mut idx| {
                        let mut p = vec![0.0; n];
                        for c in p.iter_mut() {
                            *c = axis[idx % axis.len()];
                            idx /= axis.len();
                        }
                        p
                    })
                    .collect()
            }
            SampleSpec::Cloud { count, radius, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count).map(|_| (0..n).map(|_| rng.gen_range(-radius..radius)).collect()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub probes: Vec<(Vec<f64>, usize)>,
    pub d_max: usize,
    /// `census[i]` counts samples with orbit dimension `i`, for `i = 0..=d`.
    pub census: Vec<usize>,
    pub top_fraction: f64,
    pub threshold: f64,
    /// Sampling surrogate for "the top stratum is conull".
    pub top_conull: bool,
}

impl StratumReport {
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.probes
            .iter()
            .map(|(xi, dim)| xi.iter().map(|x| format!("{x}")).chain([dim.to_string()]).collect())
            .collect()
    }
}

pub fn stratify(alg: &DilationAlgebra, spec: &SampleSpec, threshold: f64) -> StratumReport {
    let points = spec.points(alg.n());
    let probes: Vec<(Vec<f64>, usize)> = points.into_par_iter().map(|p| {
        let dim = orbit_dim(alg, &p);
        (p, dim)
    }).collect();
    let mut census = vec![0; alg.d() + 1];
    for (_, dim) in &probes {
        census[*dim] += 1;
    }
    let d_max = census.iter().rposition(|&c| c > 0).unwrap_or(0);
    let top_fraction = if probes.is_empty() { 0.0 } else { census[d_max] as f64 / probes.len() as f64 };
    StratumReport { probes, d_max, census, top_fraction, threshold, top_conull: top_fraction > threshold }
}
