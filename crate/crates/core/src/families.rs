//! Named three-dimensional families. Each constructor takes the acting
//! matrices (spanning the transposed algebra) and returns the algebra itself.

use nalgebra::DVector;

use crate::linalg::{DilationAlgebra, LinalgError, RealMatrix, DEFAULT_TOL};

fn diag(v: &[f64]) -> RealMatrix {
    RealMatrix::from_diagonal(&DVector::from_row_slice(v))
}

/// `e_{ij}` with 1-based indices.
pub fn unit(n: usize, i: usize, j: usize) -> RealMatrix {
    let mut m = RealMatrix::zeros(n, n);
    m[(i - 1, j - 1)] = 1.0;
    m
}

fn dual(ms: Vec<RealMatrix>) -> DilationAlgebra {
    DilationAlgebra::from_dual_generators(ms, DEFAULT_TOL).expect("named family is a valid algebra")
}

/// Rotation-scaling block `[[re, -im], [im, re]] ⊕ 0`.
pub fn rotation_scaling(re: f64, im: f64) -> RealMatrix {
    RealMatrix::from_row_slice(3, 3, &[re, -im, 0.0, im, re, 0.0, 0.0, 0.0, 0.0])
}

pub fn case_a(alpha: f64) -> DilationAlgebra {
    dual(vec![rotation_scaling(1.0, alpha), diag(&[0.0, 0.0, 1.0])])
}

pub fn case_b(alpha: f64, beta: f64) -> Result<DilationAlgebra, LinalgError> {
    DilationAlgebra::from_dual_generators(vec![diag(&[1.0, 0.0, alpha]), diag(&[0.0, 1.0, beta])], DEFAULT_TOL)
}

pub fn case_c() -> DilationAlgebra {
    dual(vec![RealMatrix::identity(3, 3), unit(3, 2, 1), unit(3, 3, 1)])
}

pub fn case_d() -> DilationAlgebra {
    dual(vec![diag(&[1.0, 1.0, 0.0]), diag(&[0.0, 0.0, 1.0]), unit(3, 2, 1)])
}

pub fn case_e() -> DilationAlgebra {
    dual(vec![diag(&[1.0, 0.0, 0.0]), diag(&[0.0, 1.0, 0.0]), diag(&[0.0, 0.0, 1.0])])
}

/// Purely nilpotent algebra.
pub fn case_0() -> DilationAlgebra {
    dual(vec![unit(3, 2, 1), unit(3, 3, 1)])
}

/// `A = I`, `X` a full Jordan block.
pub fn case_1a() -> DilationAlgebra {
    dual(vec![RealMatrix::identity(3, 3), unit(3, 2, 1) + unit(3, 3, 2)])
}

/// `A = I + e21`, `X = e31`.
pub fn case_1b() -> DilationAlgebra {
    dual(vec![RealMatrix::identity(3, 3) + unit(3, 2, 1), unit(3, 3, 1)])
}

/// `A` a single Jordan block, `X = e21 + e32 + c e31`.
pub fn case_1c(c: f64) -> DilationAlgebra {
    let jordan = unit(3, 2, 1) + unit(3, 3, 2);
    dual(vec![RealMatrix::identity(3, 3) + &jordan, jordan + unit(3, 3, 1) * c])
}

pub fn case_2(alpha: f64) -> DilationAlgebra {
    dual(vec![diag(&[1.0, 1.0, alpha]), unit(3, 2, 1)])
}

/// Rotation on the first two coordinates, dilation on the third.
pub fn case_3b() -> DilationAlgebra {
    dual(vec![rotation_scaling(0.0, 1.0), diag(&[0.0, 0.0, 1.0])])
}

/// The one-dimensional dilation group `exp(R)` on `R`.
pub fn dilation_1d() -> DilationAlgebra {
    DilationAlgebra::new(vec![RealMatrix::identity(1, 1)], DEFAULT_TOL).expect("valid")
}

/// The first block of case (a): the spiral one-parameter group
/// `exp(s [[1, -alpha], [alpha, 1]])` on `R^2`.
pub fn spiral_2d(alpha: f64) -> DilationAlgebra {
    DilationAlgebra::from_dual_generators(
        vec![RealMatrix::from_row_slice(2, 2, &[1.0, -alpha, alpha, 1.0])],
        DEFAULT_TOL,
    )
    .expect("valid")
}
