//! Ridge estimation and optimistic scoring.
//!
//! All linear solves go through a Cholesky factorization of the Gram matrix.
//! Private noise can push the Gram matrix slightly out of the positive-definite
//! cone, so factorization retries with a small diagonal jitter before giving
//! up with [`Error::DegenerateMatrix`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{shape_err, Error, Result};

/// Tolerance on the unit-ball constraint for feature vectors.
const NORM_SLACK: f64 = 1e-9;

/// Number of jitter doublings attempted after the first jittered retry.
const JITTER_DOUBLINGS: usize = 3;

/// Plain left-to-right dot product. Used wherever results must be
/// reproducible bit-for-bit by straightforward reference code.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Arm representation with Euclidean norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(DVector<f64>);

impl FeatureVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("feature vector"));
        }
        let v = DVector::from_vec(entries);
        let norm = v.norm();
        if !norm.is_finite() || norm > 1.0 + NORM_SLACK {
            return Err(Error::InvalidParameter(format!(
                "feature vector norm {norm} exceeds 1"
            )));
        }
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(self.as_slice(), other)
    }

    /// `φ y`, the vector-channel statistic of one user.
    pub fn scaled(&self, y: f64) -> DVector<f64> {
        &self.0 * y
    }

    /// `φ φᵀ`, the matrix-channel statistic of one user.
    pub fn outer(&self) -> GramMatrix {
        GramMatrix(&self.0 * self.0.transpose())
    }
}

/// Square matrix whose `(i, j)` and `(j, i)` entries are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(shape_err("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)].to_bits() != m[(j, i)].to_bits() {
                    return Err(shape_err(
                        "symmetric matrix",
                        format!("entry ({i},{j}) differs from ({j},{i})"),
                    ));
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds a symmetric matrix by copying the upper triangle (diagonal
    /// included) onto the lower one.
    pub fn from_upper(mut m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(shape_err("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
        }
        m.fill_lower_triangle_with_upper_triangle();
        Ok(Self(m))
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn scaled_identity(d: usize, c: f64) -> Self {
        Self(DMatrix::identity(d, d) * c)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Entrywise sum. Symmetry is preserved exactly because `(i, j)` and
    /// `(j, i)` see the same operands.
    pub fn add(&self, other: &GramMatrix) -> Result<GramMatrix> {
        if self.dim() != other.dim() {
            return Err(shape_err(
                format!("{0}x{0}", self.dim()),
                format!("{0}x{0}", other.dim()),
            ));
        }
        Ok(GramMatrix(&self.0 + &other.0))
    }

    pub fn scale(&self, c: f64) -> GramMatrix {
        GramMatrix(&self.0 * c)
    }

    pub fn transpose(&self) -> GramMatrix {
        GramMatrix(self.0.transpose())
    }
}

/// Cholesky factor of a (possibly jittered) Gram matrix.
#[derive(Debug, Clone)]
pub struct Factorization {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factorization {
    pub fn new(v: &GramMatrix) -> Result<Self> {
        if let Some(chol) = Cholesky::new(v.0.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let base = 10.0 * f64::EPSILON * v.trace();
        if !(base > 0.0) || !base.is_finite() {
            return Err(Error::DegenerateMatrix { attempts: 0 });
        }
        let d = v.dim();
        let mut jitter = base;
        for _ in 0..=JITTER_DOUBLINGS {
            let shifted = &v.0 + DMatrix::identity(d, d) * jitter;
            if let Some(chol) = Cholesky::new(shifted) {
                return Ok(Self { chol, jitter });
            }
            jitter *= 2.0;
        }
        Err(Error::DegenerateMatrix {
            attempts: JITTER_DOUBLINGS + 1,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal shift that was needed to factor the matrix (zero if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// `xᵀ V⁻¹ x`, computed as `‖L⁻¹ x‖²`.
    pub fn inverse_quadratic(&self, x: &DVector<f64>) -> f64 {
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(x)
            .expect("Cholesky factor has a positive diagonal");
        y.norm_squared()
    }
}

/// Ridge regularizer and confidence level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub lambda: f64,
    pub alpha: f64,
}

impl RidgeConfig {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must be in (0, 1], got {alpha}")));
        }
        Ok(Self { lambda, alpha })
    }
}

/// The model broadcast to users for one batch.
#[derive(Debug, Clone)]
pub struct ModelState {
    theta_hat: DVector<f64>,
    gram: GramMatrix,
    beta: f64,
    batch_index: usize,
    batch_end_time: usize,
    factor: Factorization,
}

impl ModelState {
    pub fn new(
        theta_hat: DVector<f64>,
        gram: GramMatrix,
        beta: f64,
        batch_index: usize,
        batch_end_time: usize,
    ) -> Result<Self> {
        if theta_hat.len() != gram.dim() {
            return Err(shape_err(gram.dim(), theta_hat.len()));
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
        }
        let factor = Factorization::new(&gram)?;
        Ok(Self {
            theta_hat,
            gram,
            beta,
            batch_index,
            batch_end_time,
            factor,
        })
    }

    /// Factors `gram` once and solves `θ̂ = V⁻¹ u` with the same factor.
    pub fn from_statistics(
        u: &DVector<f64>,
        gram: GramMatrix,
        beta: f64,
        batch_index: usize,
        batch_end_time: usize,
    ) -> Result<Self> {
        if u.len() != gram.dim() {
            return Err(shape_err(gram.dim(), u.len()));
        }
        let factor = Factorization::new(&gram)?;
        let theta_hat = factor.solve(u);
        Ok(Self {
            theta_hat,
            gram,
            beta,
            batch_index,
            batch_end_time,
            factor,
        })
    }

    /// Model before any data: `θ̂ = 0`, `V = λI`, radius at `t = 0`.
    pub fn initial(d: usize, ridge: RidgeConfig) -> Result<Self> {
        let beta = confidence_radius(ridge.alpha, d, 0, ridge.lambda)?;
        Self::new(
            DVector::zeros(d),
            GramMatrix::scaled_identity(d, ridge.lambda),
            beta,
            0,
            0,
        )
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn batch_index(&self) -> usize {
        self.batch_index
    }

    pub fn batch_end_time(&self) -> usize {
        self.batch_end_time
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factor
    }
}

/// `θ̂ = V⁻¹ u`.
pub fn ridge_solve(u: &DVector<f64>, v: &GramMatrix) -> Result<DVector<f64>> {
    if u.len() != v.dim() {
        return Err(shape_err(v.dim(), u.len()));
    }
    Ok(Factorization::new(v)?.solve(u))
}

/// `‖φ‖_{V⁻¹} = √(φᵀ V⁻¹ φ)`.
pub fn mahalanobis_norm(phi: &FeatureVector, v: &GramMatrix) -> Result<f64> {
    if phi.dim() != v.dim() {
        return Err(shape_err(v.dim(), phi.dim()));
    }
    Ok(Factorization::new(v)?
        .inverse_quadratic(phi.as_vector())
        .max(0.0)
        .sqrt())
}

/// `⟨φ, θ̂⟩ + β ‖φ‖_{V⁻¹}`.
pub fn ucb_score(phi: &FeatureVector, model: &ModelState) -> Result<f64> {
    if phi.dim() != model.dim() {
        return Err(shape_err(model.dim(), phi.dim()));
    }
    let width = model.factor.inverse_quadratic(phi.as_vector()).max(0.0).sqrt();
    Ok(phi.dot(model.theta_hat.as_slice()) + model.beta * width)
}

/// `β = √(2 log(2/α) + d log(1 + t/(dλ))) + √λ`.
pub fn confidence_radius(alpha: f64, d: usize, t: usize, lambda: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0, 1], got {alpha}")));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("d must be >= 1".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
    }
    let d = d as f64;
    let inner = 2.0 * (2.0 / alpha).ln() + d * (1.0 + t as f64 / (d * lambda)).ln();
    Ok(inner.sqrt() + lambda.sqrt())
}
