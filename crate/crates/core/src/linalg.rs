//! Complex dense linear algebra on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Systems whose condition estimate exceeds this are reported, not solved.
pub const CONDITION_LIMIT: f64 = 1e12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `exp(-j x)`
pub fn expj_neg(x: f64) -> C64 {
    let (s, co) = x.sin_cos();
    C64::new(co, -s)
}

pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Solve `A X = B` for Hermitian positive definite `A`.
///
/// The condition number is estimated from the Cholesky diagonal; anything
/// beyond [`CONDITION_LIMIT`] is rejected.
pub fn hermitian_solve(a: &CMat, b: &CMat, context: &'static str) -> Result<CMat> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::dimension(
            context,
            format!("square system with {} rows", b.nrows()),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let chol = a.clone().cholesky().ok_or(Error::IllConditioned {
        context,
        condition: f64::INFINITY,
    })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .map(|d| d.re * d.re)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let condition = hi / lo;
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned { context, condition });
    }
    let x = chol.solve(b);
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite(context.to_string()));
    }
    Ok(x)
}

/// Dominant eigenpair of `leakage^{-1} signal` for Hermitian positive definite
/// `leakage` and Hermitian positive semidefinite `signal`.
///
/// The pencil is reduced to a Hermitian problem with the Cholesky factor of
/// `leakage`; the eigenvalues of `leakage^{-1} signal` are those of
/// `L^{-1} signal L^{-H}`, and `v = L^{-H} y`. The returned vector is unit norm.
pub fn dominant_generalized_eigvec(
    signal: &CMat,
    leakage: &CMat,
    context: &'static str,
) -> Result<(f64, CVec)> {
    let n = signal.nrows();
    if signal.ncols() != n || leakage.nrows() != n || leakage.ncols() != n {
        return Err(Error::dimension(context, format!("{n}x{n} pencil"), "mismatched"));
    }
    let chol = leakage.clone().cholesky().ok_or(Error::IllConditioned {
        context,
        condition: f64::INFINITY,
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Eigen(format!("{context}: singular Cholesky factor")))?;
    let mut reduced = &l_inv * signal * l_inv.adjoint();
    // symmetrize round-off
    let herm = (&reduced + reduced.adjoint()) * C64::new(0.5, 0.0);
    reduced = herm;
    let eig = SymmetricEigen::try_new(reduced, 1e-15, 10_000)
        .ok_or_else(|| Error::Eigen(format!("{context}: no convergence")))?;
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .ok_or_else(|| Error::Eigen(format!("{context}: empty spectrum")))?;
    let y = eig.eigenvectors.column(idx).into_owned();
    let mut v = l_inv.adjoint() * y;
    let norm = v.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Eigen(format!("{context}: degenerate eigenvector")));
    }
    v /= C64::new(norm, 0.0);
    Ok((lambda, v))
}
