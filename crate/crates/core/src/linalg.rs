//! Dense small-matrix primitives: exponentials, tolerant ranks, commuting
//! generator sets, joint root decomposition and simultaneous triangularization.
//!
//! Everything here works on matrices of size at most 6, so the routines favour
//! accuracy and determinism over asymptotic speed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-major semantic, column-major storage; nalgebra's `DMatrix`.
pub type RealMatrix = DMatrix<f64>;
type CMatrix = DMatrix<Complex64>;

/// Default numerical tolerance (dimensionless).
pub const DEFAULT_TOL: f64 = 1e-9;
/// Largest ambient dimension handled.
pub const MAX_DIM: usize = 6;
/// `mat_exp` refuses arguments whose 1-norm exceeds this.
pub const EXP_NORM_BOUND: f64 = 700.0;
/// Seed for the generic linear combination used to split joint roots.
pub const ROOT_SEED: u64 = 0x0b17_5c09e;

/// Relative threshold for kernels of derived matrices (restrictions, powers)
/// whose entries carry accumulated rounding from earlier steps.
const STRUCTURAL_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix exponential overflow: |scale * M|_1 = {norm:.3e} exceeds {bound:.1}")]
    Overflow { norm: f64, bound: f64 },
    #[error("ill-conditioned root clustering: {0}")]
    IllConditioned(String),
    #[error("generators have a non-real root; triangularization over the reals is impossible")]
    ComplexSpectrum,
    #[error("generators do not commute (worst commutator norm {worst:.3e})")]
    NonCommuting { worst: f64 },
    #[error("dimension mismatch: expected {expected}x{expected}, found {rows}x{cols}")]
    DimensionMismatch { expected: usize, rows: usize, cols: usize },
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("generators are linearly dependent (rank {rank} < {count})")]
    DependentGenerators { rank: usize, count: usize },
    #[error("a dilation algebra needs between 1 and n generators, got {0}")]
    GeneratorCount(usize),
    #[error("ambient dimension {0} is outside the supported range 1..=6")]
    UnsupportedDimension(usize),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

fn norm1(m: &RealMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(scale * m)` by scaling and squaring with a Taylor kernel.
///
/// The argument is scaled to 1-norm at most 1/2, where 30 Taylor terms are far
/// below double precision, then squared back.
pub fn mat_exp(m: &RealMatrix, scale: f64) -> Result<RealMatrix> {
    if !m.iter().all(|x| x.is_finite()) || !scale.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let a = m * scale;
    let n = a.nrows();
    let norm = norm1(&a);
    if norm > EXP_NORM_BOUND {
        return Err(LinalgError::Overflow { norm, bound: EXP_NORM_BOUND });
    }
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(squarings);

    let mut result = RealMatrix::identity(n, n);
    let mut term = RealMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &b / k as f64;
        result += &term;
        if norm1(&term) <= f64::EPSILON * norm1(&result) * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

pub fn commutator(x: &RealMatrix, y: &RealMatrix) -> RealMatrix {
    x * y - y * x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutingReport {
    pub commuting: bool,
    /// Largest Frobenius norm of a pairwise commutator.
    pub worst: f64,
}

/// Pairwise commutator test: `|[X_i, X_j]| <= tol * |X_i| |X_j|` for all pairs.
pub fn check_commuting(generators: &[RealMatrix], tol: f64) -> CommutingReport {
    let mut worst = 0.0f64;
    let mut commuting = true;
    for (i, x) in generators.iter().enumerate() {
        for y in &generators[i + 1..] {
            let c = commutator(x, y).norm();
            worst = worst.max(c);
            if c > tol * x.norm() * y.norm() {
                commuting = false;
            }
        }
    }
    CommutingReport { commuting, worst }
}

fn singular_values(m: &RealMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `tol` times the largest one. `rank_tol(0) = 0`.
pub fn rank_tol(m: &RealMatrix, tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > tol * top).count(),
        _ => 0,
    }
}

/// Orthonormal basis (as columns) of the numerical kernel of `m`, counting
/// singular values at or below `threshold` as zero.
pub(crate) fn null_space(m: &RealMatrix, threshold: f64) -> RealMatrix {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return RealMatrix::identity(cols, cols);
    }
    // Pad to square so that the SVD returns a full right basis.
    let padded = if m.nrows() < cols {
        let mut p = RealMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let kernel: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= threshold)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if kernel.is_empty() {
        RealMatrix::zeros(cols, 0)
    } else {
        RealMatrix::from_columns(&kernel)
    }
}

/// Orthonormal basis of the column span of `m` (rank decided by `threshold`).
pub(crate) fn orth(m: &RealMatrix, threshold: f64) -> RealMatrix {
    if m.ncols() == 0 {
        return RealMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let mut idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > threshold)
        .collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<DVector<f64>> = idx.iter().map(|&i| u.column(i).into_owned()).collect();
    if cols.is_empty() {
        RealMatrix::zeros(m.nrows(), 0)
    } else {
        RealMatrix::from_columns(&cols)
    }
}

fn complex_null_space(m: &CMatrix, dim: usize) -> (CMatrix, Vec<f64>) {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let cols: Vec<DVector<Complex64>> = order[n - dim..]
        .iter()
        .map(|&i| v_t.row(i).transpose().map(|z| z.conj()))
        .collect();
    (CMatrix::from_columns(&cols), sv)
}

fn to_complex(m: &RealMatrix) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Basis of the abelian Lie algebra of a dilation group `H = exp(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationAlgebra {
    n: usize,
    generators: Vec<RealMatrix>,
    tol: f64,
}

impl DilationAlgebra {
    /// Validates dimensions, finiteness, commutativity and linear independence.
    pub fn new(generators: Vec<RealMatrix>, tol: f64) -> Result<Self> {
        let d = generators.len();
        let n = generators.first().map(|g| g.nrows()).ok_or(LinalgError::GeneratorCount(0))?;
        if n == 0 || n > MAX_DIM {
            return Err(LinalgError::UnsupportedDimension(n));
        }
        if d > n {
            return Err(LinalgError::GeneratorCount(d));
        }
        for g in &generators {
            if g.nrows() != n || g.ncols() != n {
                return Err(LinalgError::DimensionMismatch { expected: n, rows: g.nrows(), cols: g.ncols() });
            }
            if !g.iter().all(|x| x.is_finite()) {
                return Err(LinalgError::NonFinite);
            }
        }
        let report = check_commuting(&generators, tol);
        if !report.commuting {
            return Err(LinalgError::NonCommuting { worst: report.worst });
        }
        let stacked = RealMatrix::from_fn(n * n, d, |r, c| generators[c][(r / n, r % n)]);
        let rank = rank_tol(&stacked, tol);
        if rank < d {
            return Err(LinalgError::DependentGenerators { rank, count: d });
        }
        Ok(DilationAlgebra { n, generators, tol })
    }

    /// Builds the algebra from matrices spanning the transposed algebra, i.e.
    /// the infinitesimal generators of the action `xi -> h^T xi`.
    pub fn from_dual_generators(dual: Vec<RealMatrix>, tol: f64) -> Result<Self> {
        Self::new(dual.into_iter().map(|m| m.transpose()).collect(), tol)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.generators.len()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn generators(&self) -> &[RealMatrix] {
        &self.generators
    }

    pub fn dual_generators(&self) -> Vec<RealMatrix> {
        self.generators.iter().map(|g| g.transpose()).collect()
    }

    /// `sum_j c_j X_j`.
    pub fn combination(&self, coeffs: &[f64]) -> RealMatrix {
        let mut m = RealMatrix::zeros(self.n, self.n);
        for (c, g) in coeffs.iter().zip(&self.generators) {
            m += g * *c;
        }
        m
    }

    /// Largest generator norm; the reference scale for absolute zero tests.
    pub fn scale(&self) -> f64 {
        self.generators.iter().map(|g| g.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE)
    }

    /// Same algebra expressed in another basis: `P^-1 X P` for each generator.
    pub fn conjugated(&self, p: &RealMatrix) -> Result<Self> {
        let p_inv = p.clone().try_inverse().ok_or(LinalgError::NonFinite)?;
        Self::new(self.generators.iter().map(|g| &p_inv * g * p).collect(), self.tol)
    }
}

/// One joint root (or merged conjugate pair) of the algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct RootClass {
    /// Values `lambda(X_j)` on the generators.
    pub root: Vec<Complex64>,
    pub is_real: bool,
    /// Dimension of the complex generalized eigenspace `E_lambda`.
    pub complex_dim: usize,
    /// Orthonormal real basis of `V_j` (`E_lambda ∩ R^n`, or the real span of
    /// `E_lambda` for a non-real root), as columns.
    pub basis: RealMatrix,
}

impl RootClass {
    pub fn real_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.root.iter().map(|z| z.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.root.iter().map(|z| z.im).collect()
    }

    /// Root value on a linear combination of the generators.
    pub fn eval(&self, coeffs: &[f64]) -> Complex64 {
        self.root.iter().zip(coeffs).map(|(z, c)| z * *c).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootDecomposition {
    /// Root classes after merging conjugate pairs; `p = classes.len()`.
    pub classes: Vec<RootClass>,
    /// Coefficient vectors (length d) spanning the nilpotent ideal `n`.
    pub nilpotent_basis: Vec<Vec<f64>>,
    /// Per class: the 0/1 subdiagonal pattern `(eps_2, ..., eps_m)` of the
    /// first nilpotent basis element restricted to that class, Jordan chains
    /// ordered longest first. Empty when `n = 0`.
    pub epsilon: Vec<Vec<u8>>,
}

impl RootDecomposition {
    pub fn p(&self) -> usize {
        self.classes.len()
    }

    pub fn all_real(&self) -> bool {
        self.classes.iter().all(|c| c.is_real)
    }
}

/// Jordan block sizes (descending) of a nilpotent matrix, from ranks of powers.
pub(crate) fn nilpotent_block_sizes(r: &RealMatrix, threshold: f64) -> Vec<usize> {
    let m = r.nrows();
    let mut ranks = vec![m];
    let mut power = RealMatrix::identity(m, m);
    for _ in 0..m {
        power = &power * r;
        let sv = singular_values(&power);
        ranks.push(sv.iter().filter(|&&s| s > threshold).count());
        if *ranks.last().unwrap() == 0 {
            break;
        }
    }
    // blocks of size >= k: ranks[k-1] - ranks[k]
    let mut sizes = Vec::new();
    for k in (1..ranks.len()).rev() {
        let at_least_k = ranks[k - 1] - ranks[k];
        let at_least_k1 = if k + 1 < ranks.len() { ranks[k] - ranks[k + 1] } else { 0 };
        for _ in 0..at_least_k.saturating_sub(at_least_k1) {
            sizes.push(k);
        }
    }
    sizes
}

pub(crate) fn epsilon_from_blocks(sizes: &[usize]) -> Vec<u8> {
    let mut eps = Vec::new();
    for (i, &len) in sizes.iter().enumerate() {
        if i > 0 {
            eps.push(0);
        }
        eps.extend(std::iter::repeat(1).take(len - 1));
    }
    eps
}

/// Joint generalized eigenspace decomposition of a commuting generator set.
///
/// Eigenvalues of a random combination seed the clustering; each cluster is
/// validated as a joint generalized eigenspace of every generator and the
/// combination is redrawn when two roots collide.
pub fn roots_decompose(alg: &DilationAlgebra) -> Result<RootDecomposition> {
    let mut last_err = LinalgError::IllConditioned("no attempt made".into());
    for attempt in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(ROOT_SEED.wrapping_add(attempt));
        let coeffs: Vec<f64> = (0..alg.d())
            .map(|_| {
                let mag: f64 = rng.gen_range(0.5..1.5);
                if rng.gen_bool(0.5) { mag } else { -mag }
            })
            .collect();
        match decompose_with(alg, &coeffs) {
            Ok(dec) => return Ok(dec),
            Err(e @ LinalgError::IllConditioned(_)) => last_err = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

fn cluster(eigs: &[Complex64], delta: f64) -> Vec<Vec<usize>> {
    let n = eigs.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(l: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while l[r] != r {
            r = l[r];
        }
        l[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eigs[i] - eigs[j]).norm() <= delta {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for i in 0..n {
        let r = find(&mut label, i);
        match roots.iter().position(|&x| x == r) {
            Some(k) => groups[k].push(i),
            None => {
                roots.push(r);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// Eigenvalues via a Schur decomposition with a capped iteration count.
/// The unshifted QR sweep can cycle on some defective matrices, so on a
/// stall the matrix is conjugated by a fixed orthogonal matrix and retried.
pub fn eigenvalues(m: &RealMatrix) -> Option<Vec<Complex64>> {
    let n = m.nrows();
    let mut work = m.clone();
    for attempt in 0..4u32 {
        if let Some(schur) = work.clone().try_schur(f64::EPSILON, 2_000) {
            let eig: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
            if eig.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Some(eig);
            }
        }
        let seed = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3 + attempt as usize + 1) as f64).sin());
        let q = seed.qr().q();
        work = q.transpose() * m * &q;
    }
    None
}

struct RawRoot {
    root: Vec<Complex64>,
    basis: CMatrix,
}

fn decompose_with(alg: &DilationAlgebra, coeffs: &[f64]) -> Result<RootDecomposition> {
    let n = alg.n();
    let m = alg.combination(coeffs);
    let scale = m.norm().max(1e-300);
    let eigs = eigenvalues(&m)
        .ok_or_else(|| LinalgError::IllConditioned("eigenvalue iteration did not converge".into()))?;
    let mc = to_complex(&m);

    let mut raw: Option<Vec<RawRoot>> = None;
    for delta_rel in [1e-10, 1e-8, 1e-6, 1e-4, 1e-3, 3e-3, 1e-2] {
        if let Some(r) = try_clusters(alg, &mc, &eigs, delta_rel * scale) {
            raw = Some(r);
            break;
        }
    }
    let raw = raw.ok_or_else(|| {
        LinalgError::IllConditioned("generalized eigenspaces of the generic combination did not validate".into())
    })?;

    let gscale = alg.scale();
    let root_tol = STRUCTURAL_TOL * gscale;
    for (i, a) in raw.iter().enumerate() {
        for b in &raw[i + 1..] {
            let dist = a.root.iter().zip(&b.root).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            if dist <= alg.tol() * gscale {
                return Err(LinalgError::IllConditioned(format!("two roots closer than tolerance ({dist:.2e})")));
            }
        }
    }

    // Merge conjugate pairs, keeping the member with positive imaginary part
    // on the first generator where the root is non-real.
    let mut classes = Vec::new();
    for r in &raw {
        let first_nonreal = r.root.iter().position(|z| z.im.abs() > root_tol);
        let is_real = first_nonreal.is_none();
        if let Some(k) = first_nonreal {
            if r.root[k].im < 0.0 {
                continue;
            }
        }
        let stacked = RealMatrix::from_fn(n, 2 * r.basis.ncols(), |i, j| {
            let z = r.basis[(i, j / 2)];
            if j % 2 == 0 { z.re } else { z.im }
        });
        let basis = orth(&stacked, STRUCTURAL_TOL);
        let expected = if is_real { r.basis.ncols() } else { 2 * r.basis.ncols() };
        if basis.ncols() != expected {
            return Err(LinalgError::IllConditioned(format!(
                "real form of a root space has dimension {} (expected {expected})",
                basis.ncols()
            )));
        }
        let root = if is_real {
            r.root.iter().map(|z| Complex64::new(z.re, 0.0)).collect()
        } else {
            r.root.clone()
        };
        classes.push(RootClass { root, is_real, complex_dim: r.basis.ncols(), basis });
    }
    let total: usize = classes.iter().map(|c| c.real_dim()).sum();
    if total != n {
        return Err(LinalgError::IllConditioned(format!("merged root spaces span {total} of {n} dimensions")));
    }
    classes.sort_by(|a, b| {
        let ka: Vec<f64> = a.root.iter().flat_map(|z| [z.re, z.im]).collect();
        let kb: Vec<f64> = b.root.iter().flat_map(|z| [z.re, z.im]).collect();
        kb.partial_cmp(&ka).unwrap_or(std::cmp::Ordering::Equal)
    });

    // Nilpotent ideal: common kernel of Re/Im parts of every root.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for c in &classes {
        rows.push(c.real_part());
        if !c.is_real {
            rows.push(c.imag_part());
        }
    }
    let l = RealMatrix::from_fn(rows.len(), alg.d(), |i, j| rows[i][j]);
    let kernel = null_space(&l, STRUCTURAL_TOL * gscale.max(1.0));
    let nilpotent_basis: Vec<Vec<f64>> = kernel.column_iter().map(|c| c.iter().copied().collect()).collect();

    let epsilon = match nilpotent_basis.first() {
        Some(c) => {
            let x = alg.combination(c);
            classes
                .iter()
                .map(|cl| {
                    let r = cl.basis.transpose() * &x * &cl.basis;
                    epsilon_from_blocks(&nilpotent_block_sizes(&r, STRUCTURAL_TOL * gscale.max(1.0)))
                })
                .collect()
        }
        None => Vec::new(),
    };

    Ok(RootDecomposition { classes, nilpotent_basis, epsilon })
}

fn try_clusters(alg: &DilationAlgebra, mc: &CMatrix, eigs: &[Complex64], delta: f64) -> Option<Vec<RawRoot>> {
    let n = alg.n();
    let mut out = Vec::new();
    for group in cluster(eigs, delta) {
        let mult = group.len();
        let mu: Complex64 = group.iter().map(|&i| eigs[i]).sum::<Complex64>() / mult as f64;
        let shifted = mc - CMatrix::identity(n, n) * mu;
        let mut power = CMatrix::identity(n, n);
        for _ in 0..mult {
            power = &power * &shifted;
        }
        let (q, sv) = complex_null_space(&power, mult);
        // Reference size of the power; when the cluster fills the space every
        // singular value is tiny and a purely relative test would fail.
        let top = sv[0].max(mc.norm().powi(mult as i32)).max(1e-300);
        if sv[n - mult] > alg.tol() * top {
            return None;
        }
        if mult < n && sv[n - mult - 1] <= alg.tol() * top {
            return None;
        }
        // Root values and joint validation on every generator.
        let mut root = Vec::with_capacity(alg.d());
        for g in alg.generators() {
            let gc = to_complex(g);
            let restricted = q.adjoint() * &gc * &q;
            let invariance = (&gc * &q - &q * &restricted).norm();
            if invariance > STRUCTURAL_TOL * g.norm().max(1.0) {
                return None;
            }
            let lambda = restricted.trace() / mult as f64;
            let nil = restricted - CMatrix::identity(mult, mult) * lambda;
            let mut p = CMatrix::identity(mult, mult);
            for _ in 0..mult {
                p = &p * &nil;
            }
            if p.norm() > 1e-6 * (1.0 + g.norm()).powi(mult as i32) {
                return None;
            }
            root.push(lambda);
        }
        out.push(RawRoot { root, basis: q });
    }
    // Split clusters of one defective eigenvalue all return the same vectors.
    let cols: Vec<DVector<Complex64>> =
        out.iter().flat_map(|r| r.basis.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>()).collect();
    let joint = CMatrix::from_columns(&cols);
    let sv = joint.svd(false, false).singular_values;
    if sv.iter().copied().fold(f64::INFINITY, f64::min) < 1e-6 {
        return None;
    }
    Some(out)
}

/// Invertible `P` with `P^-1 X P` upper triangular for every generator.
///
/// Works root space by root space: inside each, the nilpotent parts commute,
/// so the chain `K_1 ⊂ K_2 ⊂ ...` with `K_{i+1} = {v : N_k v ∈ K_i ∀k}` is a
/// common invariant flag.
pub fn triangularize(alg: &DilationAlgebra) -> Result<RealMatrix> {
    let n = alg.n();
    let lower_ok = |p: &RealMatrix| -> bool {
        let Some(p_inv) = p.clone().try_inverse() else { return false };
        alg.generators().iter().all(|g| {
            let t = &p_inv * g * p;
            (0..n).all(|i| (0..i).all(|j| t[(i, j)].abs() <= alg.tol() * alg.scale().max(1.0) * 10.0))
        })
    };
    let dec = roots_decompose(alg)?;
    if !dec.all_real() {
        return Err(LinalgError::ComplexSpectrum);
    }
    let identity = RealMatrix::identity(n, n);
    if lower_ok(&identity) {
        return Ok(identity);
    }
    // Lower triangular input only needs the coordinate order reversed.
    let reversal = RealMatrix::from_fn(n, n, |i, j| if i + j == n - 1 { 1.0 } else { 0.0 });
    if lower_ok(&reversal) {
        return Ok(reversal);
    }
    let thresh = STRUCTURAL_TOL * alg.scale().max(1.0);
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(n);
    for class in &dec.classes {
        let v = &class.basis;
        let m = v.ncols();
        let nils: Vec<RealMatrix> = alg
            .generators()
            .iter()
            .zip(&class.root)
            .map(|(g, z)| v.transpose() * g * v - RealMatrix::identity(m, m) * z.re)
            .collect();
        let mut flag = RealMatrix::zeros(m, 0);
        while flag.ncols() < m {
            let proj = RealMatrix::identity(m, m) - &flag * flag.transpose();
            let stacked = RealMatrix::from_fn(m * nils.len(), m, |r, c| (&proj * &nils[r / m])[(r % m, c)]);
            let next = null_space(&stacked, thresh);
            let fresh = orth(&(&proj * next), 1e-6);
            if fresh.ncols() == 0 {
                return Err(LinalgError::IllConditioned("common flag construction stalled".into()));
            }
            let mut cols: Vec<DVector<f64>> = flag.column_iter().map(|c| c.into_owned()).collect();
            cols.extend(fresh.column_iter().map(|c| c.into_owned()));
            cols.truncate(m);
            flag = RealMatrix::from_columns(&cols);
        }
        for c in flag.column_iter() {
            columns.push(v * c);
        }
    }
    let p = RealMatrix::from_columns(&columns);
    if !lower_ok(&p) {
        return Err(LinalgError::IllConditioned("triangular form failed verification".into()));
    }
    Ok(p)
}
