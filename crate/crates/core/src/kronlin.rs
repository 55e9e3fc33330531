//! Kronecker-structured Gaussian algebra.
//!
//! The training covariance of a tensor design is `K = K_x ⊗ K_f`, with `K_f`
//! the `R × R` scenario correlation and `K_x` the `S × S` spatial covariance.
//! Observations are held as an `R × S` matrix `Y` (row = scenario, column =
//! location) and flattened column by column: the flat index of `Y[r, s]` is
//! `s·R + r`. This is the vectorization under which `(A ⊗ B) vec(U) =
//! vec(B U Aᵀ)`, so every operation below reduces to products and triangular
//! solves with the two factors. No routine here forms an `RS × RS` matrix.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{shape_err, Error, Result};

/// Diagonal jitter escalation used when a Gram matrix is not numerically
/// positive definite. Jitter levels are relative to the mean diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub initial: f64,
    pub max: f64,
    pub growth: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-10,
            max: 1e-4,
            growth: 10.0,
        }
    }
}

impl JitterPolicy {
    /// Fail on the first unsuccessful factorization.
    pub fn none() -> Self {
        Self {
            initial: 0.0,
            max: 0.0,
            growth: 10.0,
        }
    }
}

/// Lower Cholesky factor of a (possibly jittered) SPD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter_applied: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Absolute diagonal jitter added before factorization.
    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.lower
            .solve_lower_triangular(b)
            .ok_or_else(|| singular("triangular factor"))
    }

    /// `L⁻¹ B` for a matrix right-hand side.
    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lower
            .solve_lower_triangular(b)
            .ok_or_else(|| singular("triangular factor"))
    }

    /// `(L Lᵀ)⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let z = self.solve_lower(b)?;
        self.lower
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| singular("triangular factor"))
    }

    /// `log |L Lᵀ|`.
    pub fn logdet(&self) -> Result<f64> {
        let mut acc = 0.0;
        for d in self.lower.diagonal().iter() {
            if !(*d > 0.0) {
                return Err(Error::Factorization {
                    matrix: "Cholesky factor".into(),
                    detail: format!("nonpositive diagonal entry {d}"),
                });
            }
            acc += d.ln();
        }
        Ok(2.0 * acc)
    }

    /// Wraps an existing lower-triangular matrix.
    pub fn from_lower(lower: DMatrix<f64>) -> Result<Self> {
        if !lower.is_square() {
            return shape_err("Cholesky factor must be square");
        }
        if lower.diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Factorization {
                matrix: "Cholesky factor".into(),
                detail: "diagonal must be strictly positive".into(),
            });
        }
        Ok(Self {
            lower: lower.lower_triangle(),
            jitter_applied: 0.0,
        })
    }
}

fn singular(what: &str) -> Error {
    Error::Factorization {
        matrix: what.into(),
        detail: "singular triangular system".into(),
    }
}

/// Lower Cholesky factorization with jitter escalation.
///
/// Tries the matrix as given, then adds `initial · mean(diag)` to the
/// diagonal, growing by `growth` until `max · mean(diag)` is exceeded.
pub fn cholesky(matrix: &DMatrix<f64>, policy: JitterPolicy, name: &str) -> Result<CholeskyFactor> {
    if !matrix.is_square() {
        return shape_err(format!("{name} is {}×{}, not square", matrix.nrows(), matrix.ncols()));
    }
    let n = matrix.nrows();
    if n == 0 {
        return shape_err(format!("{name} is empty"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization {
            matrix: name.into(),
            detail: "non-finite entries".into(),
        });
    }
    let scale = matrix.amax();
    for j in 0..n {
        for i in 0..j {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Data(format!("{name} is not symmetric at ({i}, {j})")));
            }
        }
    }

    if let Some(c) = Cholesky::new(matrix.clone()) {
        return Ok(CholeskyFactor {
            lower: c.unpack(),
            jitter_applied: 0.0,
        });
    }
    let mean_diag = matrix.diagonal().mean();
    if policy.initial > 0.0 && mean_diag > 0.0 {
        let mut rel = policy.initial;
        while rel <= policy.max * (1.0 + 1e-9) {
            let jitter = rel * mean_diag;
            let mut m = matrix.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(c) = Cholesky::new(m) {
                return Ok(CholeskyFactor {
                    lower: c.unpack(),
                    jitter_applied: jitter,
                });
            }
            rel *= policy.growth;
        }
    }
    Err(Error::Factorization {
        matrix: name.into(),
        detail: format!(
            "not positive definite after jitter up to {:e} x mean diagonal",
            policy.max
        ),
    })
}

/// `(A ⊗ B) u`, computed as `vec(B U Aᵀ)` with `U` the `Q × N` column-wise
/// reshaping of `u`.
pub fn kron_apply(a: &DMatrix<f64>, b: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    if u.len() != n * q {
        return shape_err(format!(
            "vector of length {} for a ({m}×{n}) ⊗ ({p}×{q}) product",
            u.len()
        ));
    }
    let u_mat = DMatrix::from_column_slice(q, n, u.as_slice());
    let v = b * u_mat * a.transpose();
    Ok(DVector::from_column_slice(v.as_slice()))
}

fn check_factor_dims(l_f: &CholeskyFactor, l_x: &CholeskyFactor, len: usize) -> Result<(usize, usize)> {
    let (r, s) = (l_f.dim(), l_x.dim());
    if len != r * s {
        return shape_err(format!("vector of length {len} for R = {r}, S = {s}"));
    }
    Ok((r, s))
}

/// `A = L_f⁻¹ Y L_x⁻ᵀ` for an `R × S` observation matrix.
pub fn kron_tri_solve_mat(l_f: &CholeskyFactor, l_x: &CholeskyFactor, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if y.nrows() != l_f.dim() || y.ncols() != l_x.dim() {
        return shape_err(format!(
            "observation matrix {}×{} for R = {}, S = {}",
            y.nrows(),
            y.ncols(),
            l_f.dim(),
            l_x.dim()
        ));
    }
    let b = l_f.solve_lower_mat(y)?;
    let at = l_x.solve_lower_mat(&b.transpose())?;
    Ok(at.transpose())
}

/// `a = (L_x ⊗ L_f)⁻¹ y`.
pub fn kron_tri_solve(l_f: &CholeskyFactor, l_x: &CholeskyFactor, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (r, s) = check_factor_dims(l_f, l_x, y.len())?;
    let y_mat = DMatrix::from_column_slice(r, s, y.as_slice());
    let a = kron_tri_solve_mat(l_f, l_x, &y_mat)?;
    Ok(DVector::from_column_slice(a.as_slice()))
}

/// `yᵀ (K_x ⊗ K_f)⁻¹ y = ‖a‖²`.
pub fn kron_quadratic(y: &DVector<f64>, l_f: &CholeskyFactor, l_x: &CholeskyFactor) -> Result<f64> {
    Ok(kron_tri_solve(l_f, l_x, y)?.norm_squared())
}

/// `log |K_x ⊗ K_f| = S log|K_f| + R log|K_x|`.
pub fn kron_logdet(l_f: &CholeskyFactor, l_x: &CholeskyFactor) -> Result<f64> {
    let (r, s) = (l_f.dim() as f64, l_x.dim() as f64);
    Ok(s * l_f.logdet()? + r * l_x.logdet()?)
}

/// Conditional mean `(b_xᵀ ⊗ b_fᵀ) a` with `b_f = L_f⁻¹ k_f*`,
/// `b_x = L_x⁻¹ k_x*`.
pub fn kron_posterior_mean(
    l_f: &CholeskyFactor,
    l_x: &CholeskyFactor,
    a: &DVector<f64>,
    k_f_star: &DVector<f64>,
    k_x_star: &DVector<f64>,
) -> Result<f64> {
    let (r, s) = check_factor_dims(l_f, l_x, a.len())?;
    if k_f_star.len() != r || k_x_star.len() != s {
        return shape_err("cross-covariance vectors do not match the factors");
    }
    let b_f = l_f.solve_lower(k_f_star)?;
    let b_x = l_x.solve_lower(k_x_star)?;
    let a_mat = DMatrix::from_column_slice(r, s, a.as_slice());
    Ok(b_f.dot(&(a_mat * b_x)))
}

/// Conditional covariance `k − (b_xᵀ b'_x)(b_fᵀ b'_f)` between two queries.
#[allow(clippy::too_many_arguments)]
pub fn kron_posterior_cov(
    l_f: &CholeskyFactor,
    l_x: &CholeskyFactor,
    prior: f64,
    k_f: &DVector<f64>,
    k_x: &DVector<f64>,
    k_f2: &DVector<f64>,
    k_x2: &DVector<f64>,
) -> Result<f64> {
    if k_f.len() != l_f.dim() || k_f2.len() != l_f.dim() || k_x.len() != l_x.dim() || k_x2.len() != l_x.dim() {
        return shape_err("cross-covariance vectors do not match the factors");
    }
    let bx = l_x.solve_lower(k_x)?;
    let bx2 = l_x.solve_lower(k_x2)?;
    let bf = l_f.solve_lower(k_f)?;
    let bf2 = l_f.solve_lower(k_f2)?;
    Ok(prior - bx.dot(&bx2) * bf.dot(&bf2))
}

/// Conditional variance of one query, clamped at zero when roundoff drives it
/// slightly negative.
pub fn kron_posterior_var(
    l_f: &CholeskyFactor,
    l_x: &CholeskyFactor,
    prior: f64,
    k_f: &DVector<f64>,
    k_x: &DVector<f64>,
) -> Result<f64> {
    if k_f.len() != l_f.dim() || k_x.len() != l_x.dim() {
        return shape_err("cross-covariance vectors do not match the factors");
    }
    let bx = l_x.solve_lower(k_x)?;
    let bf = l_f.solve_lower(k_f)?;
    clamp_variance(prior - bx.norm_squared() * bf.norm_squared(), prior)
}

/// Clamps `[-1e-10·prior, 0)` to zero; anything more negative is an error.
pub fn clamp_variance(raw: f64, prior: f64) -> Result<f64> {
    if raw >= 0.0 {
        Ok(raw)
    } else if raw >= -1e-10 * prior.abs() {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "posterior variance {raw:e} is negative beyond roundoff (prior {prior:e})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let c = cholesky(&id, JitterPolicy::default(), "I").unwrap();
        assert_eq!(c.lower(), &id);
        assert_eq!(c.jitter_applied(), 0.0);

        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let c = cholesky(&m, JitterPolicy::default(), "m").unwrap();
        assert_relative_eq!(c.lower()[(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(c.lower()[(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(c.lower()[(1, 1)], 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(c.lower()[(0, 1)], 0.0);
    }

    #[test]
    fn rank_one_needs_jitter() {
        let m = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            cholesky(&m, JitterPolicy::none(), "ones"),
            Err(Error::Factorization { .. })
        ));
        let c = cholesky(&m, JitterPolicy::default(), "ones").unwrap();
        assert!(c.jitter_applied() > 0.0);
        assert!(c.jitter_applied() <= 1e-4);
        let rebuilt = c.lower() * c.lower().transpose();
        assert_relative_eq!(rebuilt[(0, 0)], 1.0 + c.jitter_applied(), max_relative = 1e-10);
    }

    #[test]
    fn indefinite_fails_with_name() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky(&m, JitterPolicy::default(), "K_x") {
            Err(Error::Factorization { matrix, .. }) => assert_eq!(matrix, "K_x"),
            other => panic!("unexpected {other:?}"),
        }
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(cholesky(&asym, JitterPolicy::default(), "a"), Err(Error::Data(_))));
    }

    #[test]
    fn kron_apply_degenerate() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let u = DVector::from_vec(vec![1.0, -1.0]);
        let c = DMatrix::from_element(1, 1, 3.0);
        assert_eq!(kron_apply(&c, &b, &u).unwrap(), (&b * &u) * 3.0);
        let i2 = DMatrix::identity(2, 2);
        let i3 = DMatrix::identity(3, 3);
        let u6 = DVector::from_fn(6, |i, _| i as f64);
        assert_eq!(kron_apply(&i2, &i3, &u6).unwrap(), u6);
        assert!(kron_apply(&i2, &i3, &u).is_err());
    }

    #[test]
    fn identity_factors() {
        let lf = cholesky(&DMatrix::identity(2, 2), JitterPolicy::none(), "f").unwrap();
        let lx = cholesky(&DMatrix::identity(3, 3), JitterPolicy::none(), "x").unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0, -3.0, 0.5, 0.0, 4.0]);
        assert_eq!(kron_tri_solve(&lf, &lx, &y).unwrap(), y);
        assert_relative_eq!(kron_quadratic(&y, &lf, &lx).unwrap(), y.norm_squared());
        assert_eq!(kron_logdet(&lf, &lx).unwrap(), 0.0);
        assert_eq!(kron_tri_solve(&lf, &lx, &DVector::zeros(6)).unwrap(), DVector::zeros(6));
    }

    #[test]
    fn logdet_scalar_factor() {
        let lf = cholesky(&DMatrix::from_element(1, 1, 4.0), JitterPolicy::none(), "f").unwrap();
        let lx = cholesky(&DMatrix::identity(3, 3), JitterPolicy::none(), "x").unwrap();
        assert_relative_eq!(kron_logdet(&lf, &lx).unwrap(), 3.0 * 4f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn clamp_band() {
        assert_eq!(clamp_variance(-1e-12, 1.0).unwrap(), 0.0);
        assert_eq!(clamp_variance(0.3, 1.0).unwrap(), 0.3);
        assert!(matches!(clamp_variance(-1e-6, 1.0), Err(Error::Numerical(_))));
    }
}
