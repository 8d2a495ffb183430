//! Layer decompositions and explicit topological sections for families
//! spanned by a diagonalizable `A` and a commuting nilpotent `X`.
//!
//! Matrices here are the acting ones: the group element with parameters
//! `(s, t)` sends `v` to `exp(sA + tX) v`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    check_commuting, mat_exp, null_space, rank_tol, roots_decompose, triangularize, DilationAlgebra, LinalgError,
    RealMatrix,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SectionError {
    #[error("A is not diagonalizable over the reals")]
    NotDiagonalizable,
    #[error("X is not nilpotent")]
    NotNilpotent,
    #[error("A and X do not commute (commutator norm {worst:.3e})")]
    NonCommuting { worst: f64 },
    #[error("the active eigenvalue is zero; the section formula needs a nonzero eigenvalue")]
    ZeroEigenvalue,
    #[error("point lies in no layer (X v vanishes on every candidate coordinate)")]
    NotInLayer,
    #[error("not a Case 1 family: {0}")]
    NotCase1(String),
    #[error("A and X must be square of the same size")]
    DimensionMismatch,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, SectionError>;

/// Relative tolerance for structural decisions on the input pair.
const STRUCT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenspace {
    pub lambda: f64,
    /// Index of the first adapted-basis vector belonging to this eigenspace.
    pub offset: usize,
    pub dim: usize,
    /// `(eps_2, ..., eps_dim)`: `X e_i = eps_{i+1} e_{i+1}` inside the eigenspace.
    pub epsilon: Vec<u8>,
    /// The 1-based indices `i >= 2` with `eps_i != 0`.
    pub active: Vec<usize>,
}

/// A commuting pair `(A, X)` brought to normal form: on each real eigenspace
/// of `A` the nilpotent `X` is a sum of Jordan chains, longest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredFamily {
    a: RealMatrix,
    x: RealMatrix,
    basis: RealMatrix,
    basis_inv: RealMatrix,
    eigenspaces: Vec<Eigenspace>,
    tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub eigenspace: usize,
    pub lambda: f64,
    pub b: usize,
    /// `|p_b(Xv)|` is within three orders of magnitude of the zero threshold.
    pub near_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub eigenspace: usize,
    pub b: usize,
    pub v_star: Vec<f64>,
    pub s: f64,
    pub t: f64,
    /// Sign of `p_b(X v*)`, i.e. which of the two section sheets.
    pub sign: i8,
    pub near_boundary: bool,
}

fn matrix_power_norm(m: &RealMatrix, k: usize) -> f64 {
    let mut p = RealMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        p = &p * m;
    }
    p.norm()
}

/// Orthonormal basis of the column space of `u`, built greedily from
/// projected coordinate vectors so coordinate subspaces keep coordinate axes.
fn coordinate_preferring_basis(u: &RealMatrix) -> RealMatrix {
    let n = u.nrows();
    let m = u.ncols();
    let proj = u * u.transpose();
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(m);
    for i in 0..n {
        if chosen.len() == m {
            break;
        }
        let mut c = proj.column(i).into_owned();
        for q in &chosen {
            c -= q * q.dot(&c);
        }
        let norm = c.norm();
        if norm > 1e-6 {
            chosen.push(c / norm);
        }
    }
    RealMatrix::from_columns(&chosen)
}

/// Jordan chains of a nilpotent `r`, returned as vectors ordered chain by chain
/// (`top, r top, r^2 top, ...`), longest chains first, plus the chain lengths.
fn jordan_chains(r: &RealMatrix, thresh: f64) -> (Vec<DVector<f64>>, Vec<usize>) {
    let m = r.nrows();
    let mut kernels = vec![RealMatrix::zeros(m, 0)];
    let mut power = RealMatrix::identity(m, m);
    while kernels.last().unwrap().ncols() < m {
        power = &power * r;
        let k = null_space(&power, thresh);
        if k.ncols() <= kernels.last().unwrap().ncols() {
            // Should not happen for a nilpotent input; treat the remainder as kernel.
            kernels.push(RealMatrix::identity(m, m));
            break;
        }
        kernels.push(k);
    }
    let depth = kernels.len() - 1;
    let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut lengths = Vec::new();
    for k in (1..=depth).rev() {
        let below = &kernels[k - 1];
        let here = &kernels[k];
        let here_proj = here * here.transpose();
        let mut base: Vec<DVector<f64>> = below.column_iter().map(|c| c.into_owned()).collect();
        base.extend(vectors.iter().cloned());
        let mut rank = if base.is_empty() { 0 } else { rank_tol(&RealMatrix::from_columns(&base), 1e-8) };
        for i in 0..m {
            let cand = here_proj.column(i).into_owned();
            if cand.norm() <= 1e-8 {
                continue;
            }
            let mut trial = base.clone();
            trial.push(cand.clone());
            let r_new = rank_tol(&RealMatrix::from_columns(&trial), 1e-8);
            if r_new > rank {
                rank = r_new;
                base = trial;
                let mut v = cand;
                for _ in 0..k {
                    let next = r * &v;
                    vectors.push(v);
                    v = next;
                }
                lengths.push(k);
            }
        }
    }
    (vectors, lengths)
}

/// Puts `(A, X)` into normal form.
pub fn normal_form(a: &RealMatrix, x: &RealMatrix, tol: f64) -> Result<LayeredFamily> {
    let n = a.nrows();
    if a.ncols() != n || x.nrows() != n || x.ncols() != n || n == 0 {
        return Err(SectionError::DimensionMismatch);
    }
    if !a.iter().chain(x.iter()).all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite.into());
    }
    let report = check_commuting(&[a.clone(), x.clone()], tol);
    if !report.commuting {
        return Err(SectionError::NonCommuting { worst: report.worst });
    }
    let xs = x.norm();
    if xs > 0.0 && matrix_power_norm(&(x / xs), n) > STRUCT_TOL {
        return Err(SectionError::NotNilpotent);
    }

    let ascale = a.norm().max(1.0);
    let mut eigs: Vec<f64> = Vec::with_capacity(n);
    let spectrum = crate::linalg::eigenvalues(a)
        .ok_or_else(|| LinalgError::IllConditioned("eigenvalue iteration did not converge".into()))?;
    for z in spectrum.iter() {
        if z.im.abs() > 1e-6 * ascale {
            return Err(SectionError::NotDiagonalizable);
        }
        eigs.push(z.re);
    }
    eigs.sort_by(|p, q| q.total_cmp(p));
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for e in eigs {
        match clusters.last_mut() {
            Some(c) if (c[c.len() - 1] - e).abs() <= 1e-6 * ascale => c.push(e),
            _ => clusters.push(vec![e]),
        }
    }

    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut eigenspaces = Vec::with_capacity(clusters.len());
    for c in clusters {
        let lambda = c.iter().sum::<f64>() / c.len() as f64;
        let shifted = a - RealMatrix::identity(n, n) * lambda;
        let kernel = null_space(&shifted, STRUCT_TOL * ascale);
        if kernel.ncols() != c.len() {
            return Err(SectionError::NotDiagonalizable);
        }
        let u = coordinate_preferring_basis(&kernel);
        if u.ncols() != c.len() {
            return Err(SectionError::NotDiagonalizable);
        }
        let r = u.transpose() * x * &u;
        let (chain, lengths) = jordan_chains(&r, STRUCT_TOL * xs.max(1.0));
        if chain.len() != u.ncols() {
            return Err(SectionError::NotNilpotent);
        }
        let mut epsilon = Vec::new();
        for (i, len) in lengths.iter().enumerate() {
            if i > 0 {
                epsilon.push(0);
            }
            epsilon.extend(std::iter::repeat(1u8).take(len - 1));
        }
        let active = epsilon.iter().enumerate().filter(|(_, &e)| e != 0).map(|(i, _)| i + 2).collect();
        eigenspaces.push(Eigenspace { lambda, offset: columns.len(), dim: u.ncols(), epsilon, active });
        columns.extend(chain.iter().map(|v| &u * v));
    }
    let basis = RealMatrix::from_columns(&columns);
    let basis_inv = basis.clone().try_inverse().ok_or(SectionError::NotDiagonalizable)?;
    Ok(LayeredFamily { a: a.clone(), x: x.clone(), basis, basis_inv, eigenspaces, tol })
}

impl LayeredFamily {
    pub fn a(&self) -> &RealMatrix {
        &self.a
    }

    pub fn x(&self) -> &RealMatrix {
        &self.x
    }

    /// Adapted basis as columns.
    pub fn basis(&self) -> &RealMatrix {
        &self.basis
    }

    pub fn eigenspaces(&self) -> &[Eigenspace] {
        &self.eigenspaces
    }

    /// `X` expressed in the adapted basis.
    pub fn x_normal(&self) -> RealMatrix {
        &self.basis_inv * &self.x * &self.basis
    }

    /// Coordinates `p_i` of `v` in the adapted basis.
    pub fn coords(&self, v: &[f64]) -> Vec<f64> {
        (&self.basis_inv * DVector::from_row_slice(v)).iter().copied().collect()
    }

    pub fn act(&self, s: f64, t: f64, v: &[f64]) -> Result<Vec<f64>> {
        let h = mat_exp(&(&self.a * s + &self.x * t), 1.0)?;
        Ok((h * DVector::from_row_slice(v)).iter().copied().collect())
    }

    pub fn layer_index(&self, v: &[f64]) -> Option<Layer> {
        let vn = DVector::from_row_slice(v);
        let xv = self.coords((&self.x * &vn).as_slice());
        let thr = self.tol * vn.norm();
        for (k, w) in self.eigenspaces.iter().enumerate() {
            let slice = &xv[w.offset..w.offset + w.dim];
            if let Some(i) = (1..w.dim).find(|&i| slice[i].abs() > thr) {
                return Some(Layer {
                    eigenspace: k,
                    lambda: w.lambda,
                    b: i + 1,
                    near_boundary: slice[i].abs() <= 1e3 * thr,
                });
            }
        }
        None
    }

    pub fn section_point(&self, v: &[f64]) -> Result<SectionPoint> {
        let layer = self.layer_index(v).ok_or(SectionError::NotInLayer)?;
        if layer.lambda.abs() <= self.tol * self.a.norm().max(1.0) {
            return Err(SectionError::ZeroEigenvalue);
        }
        let w = &self.eigenspaces[layer.eigenspace];
        let idx = w.offset + layer.b - 1;
        let pv = self.coords(v)[idx];
        let pxv = self.coords((&self.x * DVector::from_row_slice(v)).as_slice())[idx];
        let t = -pv / pxv;
        let s = -pxv.abs().ln() / layer.lambda;
        let v_star = self.act(s, t, v)?;
        Ok(SectionPoint {
            eigenspace: layer.eigenspace,
            b: layer.b,
            v_star,
            s,
            t,
            sign: if pxv > 0.0 { 1 } else { -1 },
            near_boundary: layer.near_boundary,
        })
    }
}

/// A three-dimensional family with one nonzero real root, in a basis where
/// both generators are lower triangular: `A = lambda I + Y`, `X` nilpotent.
/// `A` need not be semisimple.
#[derive(Debug, Clone, PartialEq)]
pub struct Case1Family {
    a: RealMatrix,
    x: RealMatrix,
    lambda: f64,
    /// Columns of the lower-triangularizing basis in the original coordinates.
    basis: RealMatrix,
    tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub b: usize,
    pub nonempty: bool,
    /// Row `b` of `X`: the functional `v -> p_b(Xv)`.
    pub functional: Vec<f64>,
    pub layer: String,
    pub section: String,
}

fn is_lower(m: &RealMatrix, thr: f64) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| m[(i, j)].abs() <= thr))
}

impl Case1Family {
    /// Takes acting matrices already in lower triangular form.
    pub fn new(a: &RealMatrix, x: &RealMatrix, tol: f64) -> Result<Self> {
        if a.shape() != (3, 3) || x.shape() != (3, 3) {
            return Err(SectionError::NotCase1("ambient dimension must be 3".into()));
        }
        let scale = a.norm().max(x.norm()).max(1.0);
        let thr = STRUCT_TOL * scale;
        let report = check_commuting(&[a.clone(), x.clone()], tol);
        if !report.commuting {
            return Err(SectionError::NonCommuting { worst: report.worst });
        }
        if !is_lower(a, thr) || !is_lower(x, thr) {
            return Err(SectionError::NotCase1("generators must be lower triangular".into()));
        }
        let lambda = a[(0, 0)];
        if (0..3).any(|i| (a[(i, i)] - lambda).abs() > thr) {
            return Err(SectionError::NotCase1("A has more than one eigenvalue".into()));
        }
        if lambda.abs() <= thr {
            return Err(SectionError::ZeroEigenvalue);
        }
        if (0..3).any(|i| x[(i, i)].abs() > thr) {
            return Err(SectionError::NotNilpotent);
        }
        if x.norm() <= thr {
            return Err(SectionError::NotCase1("X vanishes".into()));
        }
        Ok(Case1Family { a: a.clone(), x: x.clone(), lambda, basis: RealMatrix::identity(3, 3), tol })
    }

    /// Extracts `(A, X)` from a Case 1 algebra (`n = 3`, `d = 2`, one nonzero
    /// real root) and moves to a basis where the acting matrices are lower
    /// triangular.
    pub fn from_algebra(alg: &DilationAlgebra) -> Result<Self> {
        if alg.n() != 3 || alg.d() != 2 {
            return Err(SectionError::NotCase1(format!("need n = 3 and d = 2, got n = {}, d = {}", alg.n(), alg.d())));
        }
        let acting = DilationAlgebra::new(alg.dual_generators(), alg.tol())?;
        let dec = roots_decompose(&acting)?;
        if dec.p() != 1 || !dec.all_real() {
            return Err(SectionError::NotCase1(format!("{} root classes", dec.p())));
        }
        let root = dec.classes[0].real_part();
        let r2: f64 = root.iter().map(|r| r * r).sum();
        if r2.sqrt() <= STRUCT_TOL * acting.scale() {
            return Err(SectionError::ZeroEigenvalue);
        }
        let a = acting.combination(&root.iter().map(|r| r / r2).collect::<Vec<_>>());
        let x = acting.combination(&dec.nilpotent_basis[0]);
        let thr = STRUCT_TOL * acting.scale().max(1.0);
        let q = if is_lower(&a, thr) && is_lower(&x, thr) {
            RealMatrix::identity(3, 3)
        } else {
            let reversal = RealMatrix::from_fn(3, 3, |i, j| if i + j == 2 { 1.0 } else { 0.0 });
            triangularize(&acting)? * reversal
        };
        let q_inv = q.clone().try_inverse().ok_or(LinalgError::NonFinite)?;
        let clean = |m: RealMatrix| RealMatrix::from_fn(3, 3, |i, j| if j > i { 0.0 } else { m[(i, j)] });
        let mut fam = Case1Family::new(&clean(&q_inv * &a * &q), &clean(&q_inv * &x * &q), alg.tol())?;
        fam.basis = q;
        Ok(fam)
    }

    pub fn a(&self) -> &RealMatrix {
        &self.a
    }

    pub fn x(&self) -> &RealMatrix {
        &self.x
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn basis(&self) -> &RealMatrix {
        &self.basis
    }

    /// Whether the nilpotent part `Y = A - lambda I` vanishes, squares to zero,
    /// or has a nonzero square.
    pub fn y_order(&self) -> usize {
        let y = &self.a - RealMatrix::identity(3, 3) * self.lambda;
        let thr = STRUCT_TOL * self.a.norm().max(1.0);
        if y.norm() <= thr {
            0
        } else if (&y * &y).norm() <= thr {
            1
        } else {
            2
        }
    }

    /// `exp(sA + tX) v`, exact since `sY + tX` is strictly lower triangular.
    pub fn act(&self, s: f64, t: f64, v: &[f64]) -> Vec<f64> {
        let y = &self.a - RealMatrix::identity(3, 3) * self.lambda;
        let nil = y * s + &self.x * t;
        let vv = DVector::from_row_slice(v);
        let out = (&vv + &nil * &vv + &nil * (&nil * &vv) * 0.5) * (s * self.lambda).exp();
        out.iter().copied().collect()
    }

    pub fn layer_index(&self, v: &[f64]) -> Option<Layer> {
        let vv = DVector::from_row_slice(v);
        let xv = &self.x * &vv;
        let thr = self.tol * vv.norm();
        (1..3).find(|&i| xv[i].abs() > thr).map(|i| Layer {
            eigenspace: 0,
            lambda: self.lambda,
            b: i + 1,
            near_boundary: xv[i].abs() <= 1e3 * thr,
        })
    }

    pub fn section_point(&self, v: &[f64]) -> Result<SectionPoint> {
        let layer = self.layer_index(v).ok_or(SectionError::NotInLayer)?;
        let xv = &self.x * DVector::from_row_slice(v);
        let p = xv[layer.b - 1];
        let s = -p.abs().ln() / self.lambda;
        let y = &self.a - RealMatrix::identity(3, 3) * self.lambda;
        let x = &self.x;
        // p_b(exp(sY + tX) v) = c0 + c1 t; the quadratic term cancels on the layer.
        let (c0, c1) = if layer.b == 2 {
            (v[1] + s * y[(1, 0)] * v[0], x[(1, 0)] * v[0])
        } else {
            let (a, bb) = (s * y[(2, 1)], x[(2, 1)]);
            let (c, e) = (s * y[(1, 0)], x[(1, 0)]);
            let (f, g) = (s * y[(2, 0)], x[(2, 0)]);
            (
                v[2] + f * v[0] + a * v[1] + 0.5 * a * c * v[0],
                g * v[0] + bb * v[1] + 0.5 * (a * e + bb * c) * v[0],
            )
        };
        let t = -c0 / c1;
        Ok(SectionPoint {
            eigenspace: 0,
            b: layer.b,
            v_star: self.act(s, t, v),
            s,
            t,
            sign: if p > 0.0 { 1 } else { -1 },
            near_boundary: layer.near_boundary,
        })
    }
}

/// Descriptors of the layers `Omega_2`, `Omega_3` and their sections.
pub fn case1_sections(fam: &Case1Family) -> Vec<LayerDescriptor> {
    let x = fam.x();
    let thr = STRUCT_TOL * x.norm().max(1.0);
    let (x21, x31, x32) = (x[(1, 0)], x[(2, 0)], x[(2, 1)]);
    let omega2 = x21.abs() > thr;
    let omega3 = x32.abs() > thr || (!omega2 && x31.abs() > thr);
    vec![
        LayerDescriptor {
            b: 2,
            nonempty: omega2,
            functional: vec![x21, 0.0, 0.0],
            layer: format!("{x21}*v1 != 0"),
            section: format!("v2 = 0, {x21}*v1 = ±1"),
        },
        LayerDescriptor {
            b: 3,
            nonempty: omega3,
            functional: vec![x31, x32, 0.0],
            layer: format!("{x21}*v1 = 0, {x31}*v1 + {x32}*v2 != 0"),
            section: format!("v3 = 0, {x31}*v1 + {x32}*v2 = ±1"),
        },
    ]
}
