//! Admissible wavelets `ĝ = φ / sqrt(σ)` built from a relatively compact
//! quasi-section, with Calderón verification, a discrete transform and the
//! L¹ bound on `V_g g`.
//!
//! Conventions: `h = exp(sum t_j Y_j)`, so `h^T ξ = exp(sum t_j X_j) ξ` with
//! `X_j` the acting matrices, Haar measure on `H` is `dt`, and
//! `ξ_k = k / (N Δx)` on the discrete frequency lattice.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{null_space, orth, DilationAlgebra, RealMatrix};
use crate::orbit::{dual_act, GroupElement};
use crate::quasisection::{
    is_relatively_compact, meeting_system, polytope_bounds, quasi_section_verdict, BoxSet, PolytopeBounds,
    QuasiSectionError, QuasiSectionStatus, ScalingModel, Shell, UDescription,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveletError {
    #[error("inner set is not contained in the interior of the outer set: {0}")]
    SetsNotNested(String),
    #[error("support of the sigma integrand is not compact for xi = {xi:?}")]
    SupportEscapesBox { xi: Vec<f64> },
    #[error("sigma vanishes at xi = {xi:?}; the point is not covered by H^T W")]
    ZeroSigma { xi: Vec<f64> },
    #[error("sigma changed by {relative:.3e} under quadrature order doubling")]
    QuadratureUnstable { relative: f64 },
    #[error("no relatively compact quasi-section: meeting set of boxes {pair:?} is unbounded along {witness:?}")]
    NoQuasiSection { pair: (usize, usize), witness: Vec<f64> },
    #[error("signal is not band-limited: {fraction:.3e} of its energy sits on the Nyquist frequencies")]
    BandLimitViolation { fraction: f64 },
    #[error("parameter support of g·g_h is unbounded along {witness:?}")]
    SupportUnbounded { witness: Vec<f64> },
    #[error("grid size {0} is not a power of two")]
    GridNotPowerOfTwo(usize),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    QuasiSection(#[from] QuasiSectionError),
}

pub type Result<T> = std::result::Result<T, WaveletError>;

pub const DEFAULT_ENLARGEMENT: f64 = 1.25;
pub const DEFAULT_QUAD_ORDER: usize = 64;
pub const DEFAULT_PARAM_STEP: f64 = 0.025;
const DOUBLING_TOL: f64 = 1e-3;
const DEFAULT_SIGMA_POINTS: usize = 64;

/// `exp(-1/x)`-based smooth step: 0 for `x <= 0`, 1 for `x >= 1`.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

/// `lo / factor`, `hi * factor` on every shell.
pub fn enlarge(c: &BoxSet, factor: f64) -> BoxSet {
    BoxSet {
        shells: c
            .shells
            .iter()
            .map(|s| Shell { coords: s.coords.clone(), lo: s.lo / factor, hi: s.hi * factor })
            .collect(),
    }
}

/// Smooth `φ` with `1_C <= φ <= 1_W` for unions of shell boxes.
///
/// On one box `φ² = prod_k S_rise(ln r_k) S_fall(ln r_k)`; a union combines as
/// `φ² = 1 - prod_i (1 - φ_i²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub inner: Vec<BoxSet>,
    pub outer: Vec<BoxSet>,
}

impl BumpFunction {
    pub fn new(inner: Vec<BoxSet>, outer: Vec<BoxSet>) -> Result<Self> {
        if inner.is_empty() || inner.len() != outer.len() {
            return Err(WaveletError::SetsNotNested("need one outer box per inner box".into()));
        }
        let part = inner[0].partition();
        for (i, (c, w)) in inner.iter().zip(&outer).enumerate() {
            if c.partition() != part || w.partition() != part {
                return Err(QuasiSectionError::PartitionMismatch.into());
            }
            for (k, (sc, sw)) in c.shells.iter().zip(&w.shells).enumerate() {
                let lo_ok = if sc.lo == 0.0 { sw.lo == 0.0 } else { sw.lo < sc.lo };
                if !lo_ok || sc.hi >= sw.hi {
                    return Err(WaveletError::SetsNotNested(format!(
                        "box {i}, block {k}: [{}, {}] vs [{}, {}]",
                        sc.lo, sc.hi, sw.lo, sw.hi
                    )));
                }
            }
        }
        Ok(BumpFunction { inner, outer })
    }

    pub fn partition(&self) -> Vec<Vec<usize>> {
        self.inner[0].partition()
    }

    fn shell_sq(&self, i: usize, k: usize, r: f64) -> f64 {
        let (c, w) = (&self.inner[i].shells[k], &self.outer[i].shells[k]);
        if r >= w.hi {
            return 0.0;
        }
        let fall = smooth_step((w.hi.ln() - r.ln()) / (w.hi / c.hi).ln());
        if w.lo == 0.0 {
            return fall;
        }
        if r <= w.lo {
            return 0.0;
        }
        fall * smooth_step((r.ln() - w.lo.ln()) / (c.lo / w.lo).ln())
    }

    /// `φ²` as a function of the block radii.
    pub fn value_sq_radii(&self, radii: &[f64]) -> f64 {
        let mut miss = 1.0;
        for i in 0..self.inner.len() {
            let mut p = 1.0;
            for (k, &r) in radii.iter().enumerate() {
                p *= self.shell_sq(i, k, r);
                if p == 0.0 {
                    break;
                }
            }
            miss *= 1.0 - p;
        }
        1.0 - miss
    }

    pub fn radii(&self, xi: &[f64]) -> Vec<f64> {
        let b = &self.inner[0];
        (0..b.shells.len()).map(|k| b.block_norm(k, xi)).collect()
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.value_sq_radii(&self.radii(xi)).sqrt()
    }
}

fn gl_rule(order: usize) -> Vec<(f64, f64)> {
    let order = NonZeroUsize::new(order.max(1)).expect("nonzero");
    GaussLegendre::new(order).as_node_weight_pairs().to_vec()
}

/// Tensor Gauss-Legendre rule over a box.
fn tensor_gl<F: FnMut(&[f64]) -> f64>(rule: &[(f64, f64)], bounds: &[(f64, f64)], mut f: F) -> f64 {
    let d = bounds.len();
    let q = rule.len();
    let half: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (b - a)).collect();
    let mid: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (b + a)).collect();
    let jac: f64 = half.iter().product();
    let mut idx = vec![0usize; d];
    let mut t = vec![0.0; d];
    let mut sum = 0.0;
    loop {
        let mut w = 1.0;
        for j in 0..d {
            let (x, wj) = rule[idx[j]];
            t[j] = mid[j] + half[j] * x;
            w *= wj;
        }
        sum += w * f(&t);
        let mut j = 0;
        while j < d {
            idx[j] += 1;
            if idx[j] < q {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == d {
            break;
        }
    }
    jac * sum
}

/// Bounding box of `{ t : φ(h^T ξ) != 0 }` given the block radii of `ξ`.
fn support_box(bump: &BumpFunction, model: &ScalingModel, radii: &[f64]) -> std::result::Result<Option<Vec<(f64, f64)>>, ()> {
    let d = model.mu.first().map_or(0, |m| m.len());
    let mut hull: Option<Vec<(f64, f64)>> = None;
    'boxes: for w in &bump.outer {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (k, s) in w.shells.iter().enumerate() {
            let r = radii[k];
            if r <= 0.0 {
                if s.lo > 0.0 {
                    continue 'boxes;
                }
                continue;
            }
            rows.push(model.mu[k].clone());
            rhs.push((s.hi / r).ln());
            if s.lo > 0.0 {
                rows.push(model.mu[k].iter().map(|m| -m).collect());
                rhs.push(-(s.lo / r).ln());
            }
        }
        match polytope_bounds(&rows, &rhs, d).map_err(|_| ())? {
            PolytopeBounds::Empty => {}
            PolytopeBounds::Unbounded => return Err(()),
            PolytopeBounds::Bounded(b) => {
                hull = Some(match hull {
                    None => b,
                    Some(h) => h.iter().zip(&b).map(|(x, y)| (x.0.min(y.0), x.1.max(y.1))).collect(),
                });
            }
        }
    }
    Ok(hull)
}

fn scaled_radii(model: &ScalingModel, radii: &[f64], t: &[f64], out: &mut [f64]) {
    for (k, r) in radii.iter().enumerate() {
        let e: f64 = model.mu[k].iter().zip(t).map(|(m, x)| m * x).sum();
        out[k] = r * e.exp();
    }
}

/// Panel edges per parameter axis: the support interval split where a
/// block scaling along that axis alone crosses a shell boundary.
fn panel_edges(bump: &BumpFunction, model: &ScalingModel, radii: &[f64], bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mut edges: Vec<Vec<f64>> = bounds.iter().map(|(a, b)| vec![*a, *b]).collect();
    for (k, mu) in model.mu.iter().enumerate() {
        let active: Vec<usize> = (0..mu.len()).filter(|&j| mu[j].abs() > 1e-12).collect();
        if active.len() != 1 || radii[k] <= 0.0 {
            continue;
        }
        let j = active[0];
        for set in bump.inner.iter().chain(&bump.outer) {
            let sh = &set.shells[k];
            for thr in [sh.lo, sh.hi] {
                if thr > 0.0 {
                    let t = (thr / radii[k]).ln() / mu[j];
                    if t > bounds[j].0 && t < bounds[j].1 {
                        edges[j].push(t);
                    }
                }
            }
        }
    }
    for e in edges.iter_mut() {
        e.sort_by(f64::total_cmp);
        e.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    }
    edges
}

/// Tensor Gauss-Legendre on every panel of a product partition.
fn composite_gl<F: FnMut(&[f64]) -> f64>(rule: &[(f64, f64)], edges: &[Vec<f64>], mut f: F) -> f64 {
    let d = edges.len();
    let counts: Vec<usize> = edges.iter().map(|e| e.len() - 1).collect();
    let total: usize = counts.iter().product();
    let mut sum = 0.0;
    let mut sub = vec![(0.0, 0.0); d];
    for flat in 0..total {
        let mut rem = flat;
        for j in 0..d {
            let p = rem % counts[j];
            rem /= counts[j];
            sub[j] = (edges[j][p], edges[j][p + 1]);
        }
        sum += tensor_gl(rule, &sub, &mut f);
    }
    sum
}

/// `σ` at a point with the given block radii; 0 when the orbit misses `W`.
fn sigma_radii(bump: &BumpFunction, model: &ScalingModel, radii: &[f64], rule: &[(f64, f64)]) -> Result<f64> {
    let bounds = match support_box(bump, model, radii) {
        Ok(Some(b)) => b,
        Ok(None) => return Ok(0.0),
        Err(()) => return Err(WaveletError::SupportEscapesBox { xi: radii.to_vec() }),
    };
    let edges = panel_edges(bump, model, radii, &bounds);
    let mut buf = vec![0.0; radii.len()];
    Ok(composite_gl(rule, &edges, |t| {
        scaled_radii(model, radii, t, &mut buf);
        bump.value_sq_radii(&buf)
    }))
}

/// `σ(ξ) = ∫_H φ(h^T ξ)² dh` by tensor Gauss-Legendre quadrature of the given order.
pub fn sigma(alg: &DilationAlgebra, bump: &BumpFunction, xi: &[f64], order: usize) -> Result<f64> {
    let model = ScalingModel::new(alg, &bump.partition())?;
    let radii = bump.radii(xi);
    let s = sigma_radii(bump, &model, &radii, &gl_rule(order)).map_err(|e| match e {
        WaveletError::SupportEscapesBox { .. } => WaveletError::SupportEscapesBox { xi: xi.to_vec() },
        e => e,
    })?;
    if s <= 0.0 {
        return Err(WaveletError::ZeroSigma { xi: xi.to_vec() });
    }
    Ok(s)
}

fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// `σ` tabulated on the orbit space of log block radii.
///
/// `σ` is `H`-invariant and, for block-conformal families, depends on `ξ`
/// only through `ℓ = ln r`. The group moves `ℓ` along the column span of
/// `μ`, so `σ` is a function of `u = P^T ℓ` with `P` an orthonormal basis of
/// the complement; when `μ` has full row rank the table is a single value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaTable {
    /// Rows of `P^T`.
    pub invariants: Vec<Vec<f64>>,
    /// Point of the span of `μ` added to `P u` to form a representative.
    pub base: Vec<f64>,
    pub lo: Vec<f64>,
    pub step: Vec<f64>,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl SigmaTable {
    fn coords(&self, radii: &[f64]) -> Option<Vec<f64>> {
        if radii.iter().any(|&r| r <= 0.0) {
            return None;
        }
        Some(self.invariants.iter().map(|p| p.iter().zip(radii).map(|(a, r)| a * r.ln()).sum()).collect())
    }

    fn representative(&self, u: &[f64]) -> Vec<f64> {
        let mut l = self.base.clone();
        for (p, x) in self.invariants.iter().zip(u) {
            for (li, pi) in l.iter_mut().zip(p) {
                *li += pi * x;
            }
        }
        l.into_iter().map(f64::exp).collect()
    }

    /// Cubic-convolution interpolation; `None` outside the table or when a
    /// stencil value is not positive.
    fn interpolate(&self, radii: &[f64]) -> Option<f64> {
        let u = self.coords(radii)?;
        let k = self.dims.len();
        if k == 0 {
            return (self.values[0] > 0.0).then_some(self.values[0]);
        }
        let mut base = vec![0usize; k];
        let mut weights = vec![[0.0; 4]; k];
        for j in 0..k {
            let x = (u[j] - self.lo[j]) / self.step[j];
            let i0 = x.floor();
            if i0 < 1.0 || i0 + 2.0 > (self.dims[j] - 1) as f64 {
                return None;
            }
            let f = x - i0;
            base[j] = i0 as usize - 1;
            weights[j] = [keys(f + 1.0), keys(f), keys(1.0 - f), keys(2.0 - f)];
        }
        let mut sum = 0.0;
        for combo in 0..4usize.pow(k as u32) {
            let mut rem = combo;
            let mut flat = 0;
            let mut w = 1.0;
            for j in (0..k).rev() {
                let o = rem % 4;
                rem /= 4;
                flat = flat * self.dims[j] + base[j] + o;
                w *= weights[j][o];
            }
            let v = self.values[flat];
            if v <= 0.0 {
                return None;
            }
            sum += w * v;
        }
        (sum > 0.0).then_some(sum)
    }

    fn point(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut u = vec![0.0; self.dims.len()];
        for j in (0..self.dims.len()).rev() {
            u[j] = self.lo[j] + self.step[j] * (rem % self.dims[j]) as f64;
            rem /= self.dims[j];
        }
        u
    }
}

fn build_sigma_table(
    bump: &BumpFunction,
    model: &ScalingModel,
    points: usize,
    rule: &[(f64, f64)],
    fine: &[(f64, f64)],
) -> Result<SigmaTable> {
    let nblocks = model.blocks.len();
    let d = model.mu.first().map_or(0, |m| m.len());
    let mu = RealMatrix::from_fn(nblocks, d, |k, j| model.mu[k][j]);
    let comp = null_space(&mu.transpose(), 1e-9);
    let span = orth(&mu, 1e-9);
    let invariants: Vec<Vec<f64>> = (0..comp.ncols()).map(|c| comp.column(c).iter().copied().collect()).collect();

    let mut log_lo = vec![0.0; nblocks];
    let mut log_hi = vec![0.0; nblocks];
    for k in 0..nblocks {
        log_hi[k] = bump.outer.iter().map(|w| w.shells[k].hi).fold(0.0f64, f64::max).ln();
        let lo_pos = bump.outer.iter().map(|w| w.shells[k].lo).filter(|&l| l > 0.0).fold(f64::INFINITY, f64::min);
        log_lo[k] = if lo_pos.is_finite() { lo_pos.ln() } else { log_hi[k] - 8.0 };
    }
    let center = DVector::from_fn(nblocks, |k, _| 0.5 * (log_lo[k] + log_hi[k]));
    let base: Vec<f64> = (&span * (span.transpose() * &center)).iter().copied().collect();

    let q = invariants.len();
    let mut lo = vec![f64::INFINITY; q];
    let mut hi = vec![f64::NEG_INFINITY; q];
    for corner in 0..(1usize << nblocks) {
        let l: Vec<f64> = (0..nblocks).map(|k| if corner >> k & 1 == 1 { log_hi[k] } else { log_lo[k] }).collect();
        for (j, p) in invariants.iter().enumerate() {
            let u: f64 = p.iter().zip(&l).map(|(a, b)| a * b).sum();
            lo[j] = lo[j].min(u);
            hi[j] = hi[j].max(u);
        }
    }
    let m = points.max(8);
    let mut step = vec![0.0; q];
    for j in 0..q {
        let h = ((hi[j] - lo[j]) / (m - 5) as f64).max(1e-6);
        lo[j] -= 2.0 * h;
        step[j] = h;
    }
    let mut table = SigmaTable { invariants, base, lo, step, dims: vec![m; q], values: vec![] };
    let total = m.pow(q as u32);
    table.values = (0..total)
        .into_par_iter()
        .map(|i| sigma_radii(bump, model, &table.representative(&table.point(i)), rule))
        .collect::<Result<_>>()?;

    let stride = (total / 64).max(1);
    let worst = (0..total)
        .into_par_iter()
        .filter(|i| i % stride == 0 && table.values[*i] > 0.0)
        .map(|i| {
            sigma_radii(bump, model, &table.representative(&table.point(i)), fine)
                .map(|f| ((f - table.values[i]) / f).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    if worst > DOUBLING_TOL {
        return Err(WaveletError::QuadratureUnstable { relative: worst });
    }
    Ok(table)
}

/// `ĝ` sampled on a lattice over the bounding box of `W`, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhatLattice {
    pub per_axis: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub values: Vec<f64>,
}

impl GhatLattice {
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let n = self.lo.len();
        let mut rem = flat;
        let mut p = vec![0.0; n];
        for c in (0..n).rev() {
            let i = rem % self.per_axis;
            rem /= self.per_axis;
            p[c] = self.lo[c] + (self.hi[c] - self.lo[c]) * i as f64 / (self.per_axis - 1) as f64;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Outer sets; defaults to `enlargement`-scaled copies of the inner boxes.
    pub outer: Option<Vec<BoxSet>>,
    pub enlargement: f64,
    pub quad_order: usize,
    pub lattice_per_axis: Option<usize>,
    pub sigma_points: Option<usize>,
    /// Build even when the quasi-section check fails.
    pub force: bool,
    pub coverage_samples: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            outer: None,
            enlargement: DEFAULT_ENLARGEMENT,
            quad_order: DEFAULT_QUAD_ORDER,
            lattice_per_axis: None,
            sigma_points: None,
            force: false,
            coverage_samples: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WaveletSpec {
    pub alg: DilationAlgebra,
    pub bump: BumpFunction,
    pub model: ScalingModel,
    pub quad_order: usize,
    pub sigma_table: SigmaTable,
    pub lattice: GhatLattice,
    /// `tr X_j`, so `|det h| = exp(trace . t)`.
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
    rule: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletSummary {
    pub n: usize,
    pub d: usize,
    pub quad_order: usize,
    pub inner: Vec<BoxSet>,
    pub outer: Vec<BoxSet>,
    pub sigma_points: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub warnings: Vec<String>,
}

fn default_lattice(n: usize) -> usize {
    match n {
        1 => 512,
        2 => 128,
        _ => 32,
    }
}

/// Builds `ĝ = φ / sqrt(σ)` for the quasi-section candidate `C` (a union of boxes).
pub fn synth_wavelet(alg: &DilationAlgebra, inner: &[BoxSet], opts: &SynthOptions) -> Result<WaveletSpec> {
    let mut warnings = Vec::new();
    let u = UDescription::TopStratum { samples: opts.coverage_samples, seed: opts.seed };
    match quasi_section_verdict(alg, inner, &u) {
        Ok(rep) if rep.status == QuasiSectionStatus::Exists => {}
        Ok(rep) => {
            let bad = rep
                .pairs
                .iter()
                .find(|p| p.boundedness.as_ref().is_some_and(|b| !b.bounded))
                .expect("an unbounded pair");
            let witness = bad.boundedness.as_ref().and_then(|b| b.witness.clone()).unwrap_or_default();
            if !opts.force {
                return Err(WaveletError::NoQuasiSection { pair: (bad.first, bad.second), witness });
            }
            warnings.push(format!(
                "forced: meeting set of boxes ({}, {}) is unbounded along {:?}",
                bad.first, bad.second, witness
            ));
        }
        Err(e @ QuasiSectionError::CoverageUnverified { .. }) => {
            if !opts.force {
                return Err(e.into());
            }
            warnings.push(format!("forced: {e}"));
        }
        Err(e) => return Err(e.into()),
    }

    let outer = match &opts.outer {
        Some(w) => w.clone(),
        None => {
            let w: Vec<BoxSet> = inner.iter().map(|c| enlarge(c, opts.enlargement)).collect();
            if inner.iter().any(|c| c.shells.iter().any(|s| s.lo == 0.0)) {
                warnings.push("outer set reaches the lower-dimensional strata (inner shell with lo = 0)".into());
            }
            w
        }
    };
    let bump = BumpFunction::new(inner.to_vec(), outer)?;
    let model = ScalingModel::new(alg, &bump.partition())?;
    let rule = gl_rule(opts.quad_order);

    let points = opts.sigma_points.unwrap_or(DEFAULT_SIGMA_POINTS);
    let sigma_table = build_sigma_table(&bump, &model, points, &rule, &gl_rule(2 * opts.quad_order))?;
    let trace = alg.dual_generators().iter().map(|x| x.trace()).collect();
    let n = alg.n();
    let mut spec = WaveletSpec {
        alg: alg.clone(),
        bump,
        model,
        quad_order: opts.quad_order,
        sigma_table,
        lattice: GhatLattice { per_axis: 0, lo: vec![], hi: vec![], values: vec![] },
        trace,
        warnings,
        rule,
    };
    let per_axis = opts.lattice_per_axis.unwrap_or_else(|| default_lattice(n)).max(2);
    let mut extent = vec![0.0; n];
    for (k, block) in spec.model.blocks.iter().enumerate() {
        let r = spec.bump.outer.iter().map(|w| w.shells[k].hi).fold(0.0f64, f64::max);
        for &c in block {
            extent[c] = r;
        }
    }
    let mut lattice = GhatLattice {
        per_axis,
        lo: extent.iter().map(|r| -r).collect(),
        hi: extent,
        values: vec![],
    };
    lattice.values = (0..per_axis.pow(n as u32)).into_par_iter().map(|i| spec.ghat(&lattice.point(i))).collect();
    spec.lattice = lattice;
    Ok(spec)
}

impl WaveletSpec {
    pub fn n(&self) -> usize {
        self.alg.n()
    }

    pub fn d(&self) -> usize {
        self.alg.d()
    }

    pub fn radii(&self, xi: &[f64]) -> Vec<f64> {
        self.bump.radii(xi)
    }

    /// `ĝ` from block radii: exact `φ`, interpolated `σ` (direct quadrature
    /// where the table does not apply).
    pub fn ghat_radii(&self, radii: &[f64]) -> f64 {
        let phi_sq = self.bump.value_sq_radii(radii);
        if phi_sq == 0.0 {
            return 0.0;
        }
        let s = match self.sigma_table.interpolate(radii) {
            Some(s) => s,
            None => match sigma_radii(&self.bump, &self.model, radii, &self.rule) {
                Ok(s) if s > 0.0 => s,
                _ => return 0.0,
            },
        };
        (phi_sq / s).sqrt()
    }

    pub fn ghat(&self, xi: &[f64]) -> f64 {
        self.ghat_radii(&self.radii(xi))
    }

    /// `ĝ(h^T ξ)` given the block radii of `ξ`.
    pub fn ghat_dilated(&self, radii: &[f64], t: &[f64], buf: &mut [f64]) -> f64 {
        scaled_radii(&self.model, radii, t, buf);
        self.ghat_radii(buf)
    }

    pub fn det(&self, t: &[f64]) -> f64 {
        self.trace.iter().zip(t).map(|(a, b)| a * b).sum::<f64>().exp()
    }

    /// Bounding box of the parameters with `ĝ(h^T ξ) != 0`.
    pub fn support_box(&self, xi: &[f64]) -> Result<Option<Vec<(f64, f64)>>> {
        support_box(&self.bump, &self.model, &self.radii(xi)).map_err(|_| WaveletError::SupportEscapesBox { xi: xi.to_vec() })
    }

    pub fn sigma(&self, xi: &[f64]) -> Result<f64> {
        sigma(&self.alg, &self.bump, xi, self.quad_order)
    }

    /// Points of `H^T C`: random points of `C` moved by random group elements with `|t_j| <= 1`.
    pub fn covered_samples(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let c = &self.bump.inner[rng.gen_range(0..self.bump.inner.len())];
                let v = c.sample(&mut rng);
                let t: Vec<f64> = (0..self.d()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let g = GroupElement::new(&self.alg, &t).expect("small parameters");
                dual_act(&g, &v)
            })
            .collect()
    }

    pub fn summary(&self) -> WaveletSummary {
        let pos = self.sigma_table.values.iter().copied().filter(|v| *v > 0.0);
        WaveletSummary {
            n: self.n(),
            d: self.d(),
            quad_order: self.quad_order,
            inner: self.bump.inner.clone(),
            outer: self.bump.outer.clone(),
            sigma_points: self.sigma_table.values.len(),
            sigma_min: pos.clone().fold(f64::INFINITY, f64::min),
            sigma_max: pos.fold(0.0, f64::max),
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalderonReport {
    pub max_deviation: f64,
    pub evaluated: usize,
    pub uncovered: usize,
    pub values: Vec<Option<f64>>,
}

/// `max |∫_H ĝ(h^T ξ)² dh - 1|` over covered samples; uncovered samples are
/// listed as `None` and excluded from the maximum.
pub fn calderon_check(spec: &WaveletSpec, samples: &[Vec<f64>]) -> Result<CalderonReport> {
    let values: Vec<Option<f64>> = samples
        .par_iter()
        .map(|xi| {
            let radii = spec.radii(xi);
            let Some(bounds) = spec.support_box(xi)? else { return Ok(None) };
            let edges = panel_edges(&spec.bump, &spec.model, &radii, &bounds);
            let mut buf = vec![0.0; radii.len()];
            let v = composite_gl(&spec.rule, &edges, |t| spec.ghat_dilated(&radii, t, &mut buf).powi(2));
            Ok((v > 0.0).then_some(v))
        })
        .collect::<Result<_>>()?;
    let max_deviation = values.iter().flatten().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let evaluated = values.iter().flatten().count();
    Ok(CalderonReport { max_deviation, evaluated, uncovered: values.len() - evaluated, values })
}

/// Periodic lattice of `size^n` points with spacing `spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub n: usize,
    pub size: usize,
    pub spacing: f64,
}

impl SpatialGrid {
    pub fn new(n: usize, size: usize, spacing: f64) -> Result<Self> {
        if !size.is_power_of_two() || size < 2 {
            return Err(WaveletError::GridNotPowerOfTwo(size));
        }
        if !(1..=3).contains(&n) {
            return Err(WaveletError::Unsupported(format!("transforms are implemented for n <= 3, got {n}")));
        }
        Ok(SpatialGrid { n, size, spacing })
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn freq_spacing(&self) -> f64 {
        1.0 / (self.size as f64 * self.spacing)
    }

    fn signed_index(&self, i: usize) -> i64 {
        if i < self.size / 2 {
            i as i64
        } else {
            i as i64 - self.size as i64
        }
    }

    fn multi(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        let mut idx = vec![0; self.n];
        for c in (0..self.n).rev() {
            idx[c] = rem % self.size;
            rem /= self.size;
        }
        idx
    }

    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        let dxi = self.freq_spacing();
        self.multi(flat).into_iter().map(|i| self.signed_index(i) as f64 * dxi).collect()
    }

    pub fn position(&self, flat: usize) -> Vec<f64> {
        self.multi(flat).into_iter().map(|i| self.signed_index(i) as f64 * self.spacing).collect()
    }

    fn is_nyquist(&self, flat: usize) -> bool {
        self.multi(flat).into_iter().any(|i| i == self.size / 2)
    }

    pub fn norm_sq(&self, f: &[Complex64]) -> f64 {
        f.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.spacing.powi(self.n as i32)
    }
}

fn fft_nd(grid: &SpatialGrid, data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(grid.size) } else { planner.plan_fft_forward(grid.size) };
    let n = grid.size;
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..grid.n {
        let stride = n.pow((grid.n - 1 - axis) as u32);
        for start in 0..data.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (i, z) in line.iter_mut().enumerate() {
                *z = data[start + i * stride];
            }
            plan.process(&mut line);
            for (i, z) in line.iter().enumerate() {
                data[start + i * stride] = *z;
            }
        }
    }
}

/// `f̂(ξ_k) ≈ Δx^n sum_j f_j e^{-2πi x_j ξ_k}`.
pub fn fourier(grid: &SpatialGrid, f: &[Complex64]) -> Vec<Complex64> {
    let mut out = f.to_vec();
    fft_nd(grid, &mut out, false);
    let s = grid.spacing.powi(grid.n as i32);
    out.iter_mut().for_each(|z| *z *= s);
    out
}

/// Inverse of `fourier`.
pub fn inverse_fourier(grid: &SpatialGrid, fhat: &[Complex64]) -> Vec<Complex64> {
    let mut out = fhat.to_vec();
    fft_nd(grid, &mut out, true);
    let s = grid.freq_spacing().powi(grid.n as i32);
    out.iter_mut().for_each(|z| *z *= s);
    out
}

/// Random signal whose spectrum lives on `0 < |k|_inf <= band * size / 2`.
pub fn band_limited_signal(grid: &SpatialGrid, band: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = ((band * grid.size as f64 / 2.0).floor() as i64).min(grid.size as i64 / 2 - 1);
    let fhat: Vec<Complex64> = (0..grid.len())
        .map(|flat| {
            let idx = grid.multi(flat);
            let m = idx.iter().map(|&i| grid.signed_index(i).abs()).max().unwrap_or(0);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if m == 0 || m > kmax {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(re, im)
            }
        })
        .collect();
    inverse_fourier(grid, &fhat)
}

/// The wavelet `g` sampled on the spatial grid.
pub fn sample_wavelet(spec: &WaveletSpec, grid: &SpatialGrid) -> Vec<Complex64> {
    let ghat: Vec<Complex64> =
        (0..grid.len()).map(|k| Complex64::new(spec.ghat(&grid.frequency(k)), 0.0)).collect();
    inverse_fourier(grid, &ghat)
}

/// Parameter lattice with Riemann weight `step^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLattice {
    pub points: Vec<Vec<f64>>,
    pub weight: f64,
}

impl ParamLattice {
    /// Lattice `step Z^d` intersected with a box, extended to whole cells.
    pub fn covering(bounds: &[(f64, f64)], step: f64) -> Self {
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .map(|(a, b)| {
                let i0 = (a / step).floor() as i64;
                let i1 = (b / step).ceil() as i64;
                (i0..=i1).map(|i| i as f64 * step).collect()
            })
            .collect();
        let mut points = vec![vec![]];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    axis.iter().map(move |x| {
                        let mut q = p.clone();
                        q.push(*x);
                        q
                    })
                })
                .collect();
        }
        ParamLattice { points, weight: step.powi(bounds.len() as i32) }
    }
}

fn hull(a: Option<Vec<(f64, f64)>>, b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    match a {
        None => b.to_vec(),
        Some(h) => h.iter().zip(b).map(|(x, y)| (x.0.min(y.0), x.1.max(y.1))).collect(),
    }
}

/// Lattice covering the parameter support of `ĝ(h^T ξ_k)` for every nonzero
/// grid frequency.
pub fn param_lattice(spec: &WaveletSpec, grid: &SpatialGrid, step: f64) -> Result<ParamLattice> {
    let boxes: Vec<Option<Vec<(f64, f64)>>> =
        (1..grid.len()).into_par_iter().map(|k| spec.support_box(&grid.frequency(k))).collect::<Result<_>>()?;
    let mut h: Option<Vec<(f64, f64)>> = None;
    for b in boxes.into_iter().flatten() {
        h = Some(hull(h, &b));
    }
    let h = h.ok_or_else(|| WaveletError::Unsupported("no grid frequency is covered by H^T W".into()))?;
    Ok(ParamLattice::covering(&h, step))
}

/// Coefficients `V_g f(x, h)` on the spatial grid for each lattice parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformGrid {
    pub grid: SpatialGrid,
    pub params: ParamLattice,
    pub dets: Vec<f64>,
    pub coefficients: Vec<Vec<Complex64>>,
}

impl TransformGrid {
    /// `sum_t w |det h|^{-1} sum_x Δx^n |V_g f(x, h)|²`: the left Haar
    /// measure of `G` is `|det h|^{-1} dx dh`.
    pub fn norm_sq(&self) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.dets)
            .map(|(c, det)| self.grid.norm_sq(c) / det)
            .sum::<f64>()
            * self.params.weight
    }

    pub fn max_abs(&self) -> f64 {
        self.coefficients.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

const BAND_LIMIT_FRACTION: f64 = 1e-10;

/// Slice `t`: inverse transform of `f̂(ξ) ĝ(h^T ξ) |det h|^{1/2}`.
pub fn cwt(spec: &WaveletSpec, grid: &SpatialGrid, f: &[Complex64], params: &ParamLattice) -> Result<TransformGrid> {
    if grid.n != spec.n() {
        return Err(WaveletError::Unsupported(format!("grid dimension {} for a family on R^{}", grid.n, spec.n())));
    }
    if f.len() != grid.len() {
        return Err(WaveletError::Unsupported(format!("signal has {} samples, grid {}", f.len(), grid.len())));
    }
    let fhat = fourier(grid, f);
    let total: f64 = fhat.iter().map(|z| z.norm_sqr()).sum();
    let edge: f64 = (0..grid.len()).filter(|&k| grid.is_nyquist(k)).map(|k| fhat[k].norm_sqr()).sum();
    if total > 0.0 && edge / total > BAND_LIMIT_FRACTION {
        return Err(WaveletError::BandLimitViolation { fraction: edge / total });
    }
    let radii: Vec<Vec<f64>> = (0..grid.len()).map(|k| spec.radii(&grid.frequency(k))).collect();
    let dets: Vec<f64> = params.points.iter().map(|t| spec.det(t)).collect();
    let coefficients = params
        .points
        .par_iter()
        .zip(&dets)
        .map(|(t, det)| {
            let mut buf = vec![0.0; spec.model.blocks.len()];
            let scale = det.sqrt();
            let prod: Vec<Complex64> = fhat
                .iter()
                .zip(&radii)
                .map(|(z, r)| if *z == Complex64::new(0.0, 0.0) { *z } else { z * spec.ghat_dilated(r, t, &mut buf) * scale })
                .collect();
            inverse_fourier(grid, &prod)
        })
        .collect();
    Ok(TransformGrid { grid: *grid, params: params.clone(), dets, coefficients })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Report {
    pub value: f64,
    pub support_box: Vec<(f64, f64)>,
    pub quad_order: usize,
    pub grid: SpatialGrid,
    /// Largest `|V_g g|` at lattice parameters outside the support box.
    pub leak: f64,
}

impl L1Report {
    /// The same estimate with the integrand multiplied by a constant.
    pub fn scaled(&self, factor: f64) -> Self {
        L1Report { value: self.value * factor, ..self.clone() }
    }
}

/// Parameter box containing every `h` with `ĝ · ĝ_h != 0`, from the meeting
/// sets `((W_i, W_j))`.
pub fn coefficient_support(spec: &WaveletSpec) -> Result<Vec<(f64, f64)>> {
    let mut h: Option<Vec<(f64, f64)>> = None;
    for wi in &spec.bump.outer {
        for wj in &spec.bump.outer {
            let sys = meeting_system(&spec.alg, wi, wj)?;
            match is_relatively_compact(&sys) {
                Ok(b) if b.bounded => h = Some(hull(h, &b.bounding_box.expect("bounded box"))),
                Ok(b) => return Err(WaveletError::SupportUnbounded { witness: b.witness.unwrap_or_default() }),
                Err(QuasiSectionError::InfeasibleSystem) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    h.ok_or_else(|| WaveletError::Unsupported("outer sets never meet".into()))
}

/// `∫_H ||(ĝ · conj ĝ_h)^∨||_{L¹} |det h|^{-1/2} Δ_G^{-1/2}(h) dh` with
/// `Δ_G^{-1/2}(h) = |det h|^{1/2}`.
pub fn l1_estimate(spec: &WaveletSpec, grid: &SpatialGrid) -> Result<L1Report> {
    l1_estimate_weighted(spec, grid, &|t: &[f64]| spec.det(t).sqrt())
}

/// As `l1_estimate` with a caller-supplied weight in place of `Δ_G^{-1/2}`.
pub fn l1_estimate_weighted(
    spec: &WaveletSpec,
    grid: &SpatialGrid,
    weight: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<L1Report> {
    let support = coefficient_support(spec)?;
    if grid.n != spec.n() {
        return Err(WaveletError::Unsupported(format!("grid dimension {} for a family on R^{}", grid.n, spec.n())));
    }
    let radii: Vec<Vec<f64>> = (0..grid.len()).map(|k| spec.radii(&grid.frequency(k))).collect();
    let base: Vec<f64> = radii.iter().map(|r| spec.ghat_radii(r)).collect();
    let dx = grid.spacing.powi(grid.n as i32);
    let inner = |t: &[f64]| -> Vec<Complex64> {
        let mut buf = vec![0.0; spec.model.blocks.len()];
        let prod: Vec<Complex64> = base
            .iter()
            .zip(&radii)
            .map(|(g, r)| Complex64::new(if *g == 0.0 { 0.0 } else { g * spec.ghat_dilated(r, t, &mut buf) }, 0.0))
            .collect();
        inverse_fourier(grid, &prod)
    };

    let rule = &spec.rule;
    let q = rule.len();
    let d = spec.d();
    let nodes: Vec<(Vec<f64>, f64)> = (0..q.pow(d as u32))
        .map(|flat| {
            let mut rem = flat;
            let mut t = vec![0.0; d];
            let mut w = 1.0;
            for j in 0..d {
                let (x, wj) = rule[rem % q];
                rem /= q;
                let (a, b) = support[j];
                t[j] = 0.5 * (a + b) + 0.5 * (b - a) * x;
                w *= 0.5 * (b - a) * wj;
            }
            (t, w)
        })
        .collect();
    let value: f64 = nodes
        .par_iter()
        .map(|(t, w)| {
            let l1: f64 = inner(t).iter().map(|z| z.norm()).sum::<f64>() * dx;
            w * l1 * spec.det(t).powf(-0.5) * weight(t)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();

    let widened: Vec<(f64, f64)> =
        support.iter().map(|(a, b)| (a - 0.5 * (b - a) - 0.5, b + 0.5 * (b - a) + 0.5)).collect();
    let step = widened.iter().map(|(a, b)| (b - a) / 24.0).fold(f64::INFINITY, f64::min);
    let outside: Vec<Vec<f64>> = ParamLattice::covering(&widened, step)
        .points
        .into_iter()
        .filter(|t| t.iter().zip(&support).any(|(x, (a, b))| *x < a - 1e-9 || *x > b + 1e-9))
        .collect();
    let leak = outside
        .par_iter()
        .map(|t| {
            let s = spec.det(t).sqrt();
            inner(t).iter().map(|z| z.norm() * s).fold(0.0, f64::max)
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max);

    Ok(L1Report { value, support_box: support, quad_order: spec.quad_order, grid: *grid, leak })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{dilation_1d, spiral_2d};
    use approx::assert_abs_diff_eq;

    fn shell_1d(lo: f64, hi: f64) -> BoxSet {
        BoxSet::coordinate(&[(lo, hi)]).unwrap()
    }

    #[test]
    fn smooth_step_is_symmetric() {
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert_abs_diff_eq!(smooth_step(x) + smooth_step(1.0 - x), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn bump_sandwich() {
        let b = BumpFunction::new(vec![shell_1d(1.0, 2.0)], vec![shell_1d(0.8, 2.5)]).unwrap();
        assert_eq!(b.eval(&[1.5]), 1.0);
        assert_eq!(b.eval(&[-1.0]), 1.0);
        assert_eq!(b.eval(&[0.79]), 0.0);
        assert_eq!(b.eval(&[2.6]), 0.0);
        let mid = b.eval(&[(2.0f64 * 2.5).sqrt()]);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn nesting_is_enforced() {
        let err = BumpFunction::new(vec![shell_1d(1.0, 2.0)], vec![shell_1d(1.0, 2.5)]).unwrap_err();
        assert!(matches!(err, WaveletError::SetsNotNested(_)));
    }

    #[test]
    fn sigma_closed_form_1d() {
        let alg = dilation_1d();
        let b = BumpFunction::new(vec![shell_1d(1.0, 2.0)], vec![shell_1d(0.8, 2.5)]).unwrap();
        assert_abs_diff_eq!(sigma(&alg, &b, &[1.5], 64).unwrap(), 2.5f64.ln(), epsilon = 1e-9);
        assert!(matches!(sigma(&alg, &b, &[0.0], 64), Err(WaveletError::ZeroSigma { .. })));
    }

    #[test]
    fn spiral_calderon() {
        let alg = spiral_2d(1.0);
        let c = BoxSet::new(vec![Shell { coords: vec![0, 1], lo: 1.0, hi: 2.0 }]).unwrap();
        let spec = synth_wavelet(&alg, &[c], &SynthOptions::default()).unwrap();
        let rep = calderon_check(&spec, &spec.covered_samples(20, 3)).unwrap();
        assert_eq!(rep.evaluated, 20);
        assert!(rep.max_deviation < 1e-6, "{}", rep.max_deviation);
    }

    #[test]
    fn autocorrelation_at_identity() {
        let alg = dilation_1d();
        let spec = synth_wavelet(&alg, &[shell_1d(1.0, 2.0)], &SynthOptions::default()).unwrap();
        let grid = SpatialGrid::new(1, 256, 0.16).unwrap();
        let g = sample_wavelet(&spec, &grid);
        let params = ParamLattice { points: vec![vec![0.0]], weight: 1.0 };
        let tg = cwt(&spec, &grid, &g, &params).unwrap();
        let slice = &tg.coefficients[0];
        let peak = slice.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert_abs_diff_eq!(slice[0].re, grid.norm_sq(&g), epsilon = 1e-10);
        assert_abs_diff_eq!(peak, slice[0].norm(), epsilon = 1e-12);
    }
}
