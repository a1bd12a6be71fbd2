//! Gram matrices, symmetric factorization, and conditional (posterior)
//! moments, including the regularised variants and the degenerate flat-limit
//! case.
//!
//! Factorization failure is surfaced as [`GpError::NotPositiveDefinite`]
//! rather than silently jittered: loss of positive definiteness at large
//! lengthscales is one of the observables this library exists to expose.

use crate::error::{GpError, Result};
use crate::kernels::KernelSpec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Relative floor for conditional variances: raw values within
/// `VARIANCE_FLOOR_FACTOR * sigma^2` of zero are clamped to exactly zero.
/// At data points the variance is a difference of nearly equal quantities,
/// and the floor is what makes the interpolation property testable.
pub const VARIANCE_FLOOR_FACTOR: f64 = 1e-10;

/// Pivot-ratio ceiling beyond which a factorization is rejected as
/// numerically singular. Past this point a double-precision solve retains
/// roughly three decimal digits, not enough for quantities derived from the
/// factorization to be trusted.
pub const CONDITION_BREAKDOWN: f64 = 3e12;

/// A monomial in `d` variables, `x -> prod_i x_i^e_i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial {
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.exponents.len() {
            return Err(GpError::DimensionMismatch {
                expected: self.exponents.len(),
                got: x.len(),
            });
        }
        Ok(self
            .exponents
            .iter()
            .zip(x)
            .map(|(&e, &v)| v.powi(e as i32))
            .product())
    }

    pub fn total_degree(&self) -> u32 {
        self.exponents.iter().sum()
    }
}

/// Prior mean specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeanSpec {
    Zero,
    Constant { c: f64 },
    /// Mean in the span of monomial basis functions. With `coefficients`
    /// present the mean is `m(x) = sum_j beta_j phi_j(x)`; without them the
    /// coefficients are to be estimated (the universal-kriging path).
    Basis {
        functions: Vec<Monomial>,
        coefficients: Option<Vec<f64>>,
    },
}

impl MeanSpec {
    /// All monomials in `dim` variables with total degree at most `degree`,
    /// in graded lexicographic order (constant first).
    pub fn monomial_basis(dim: usize, degree: u32) -> Vec<Monomial> {
        let mut out = Vec::new();
        for total in 0..=degree {
            let mut exps = vec![0u32; dim];
            collect_monomials(dim, total, 0, &mut exps, &mut out);
        }
        out
    }

    /// Evaluates the mean at `x`; a basis mean must have resolved coefficients.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            MeanSpec::Zero => Ok(0.0),
            MeanSpec::Constant { c } => Ok(*c),
            MeanSpec::Basis {
                functions,
                coefficients,
            } => {
                let beta = coefficients
                    .as_ref()
                    .ok_or(GpError::UnresolvedMeanCoefficients)?;
                let mut acc = 0.0;
                for (phi, b) in functions.iter().zip(beta) {
                    acc += b * phi.eval(x)?;
                }
                Ok(acc)
            }
        }
    }

    pub fn is_resolved(&self) -> bool {
        !matches!(
            self,
            MeanSpec::Basis {
                coefficients: None,
                ..
            }
        )
    }
}

fn collect_monomials(dim: usize, remaining: u32, pos: usize, exps: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if pos == dim - 1 {
        exps[pos] = remaining;
        out.push(Monomial {
            exponents: exps.clone(),
        });
        return;
    }
    for e in (0..=remaining).rev() {
        exps[pos] = e;
        collect_monomials(dim, remaining - e, pos + 1, exps, out);
    }
}

/// A noiseless training dataset: distinct covariates `X`, responses `Y`, and
/// a prior mean specification.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    mean: MeanSpec,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>, mean: MeanSpec) -> Result<Self> {
        if points.is_empty() {
            return Err(GpError::EmptyDataset);
        }
        if points.len() != values.len() {
            return Err(GpError::LengthMismatch {
                points: points.len(),
                values: values.len(),
            });
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(GpError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        for p in &points {
            if p.len() != dim {
                return Err(GpError::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(GpError::InvalidParameter {
                    name: "point coordinate",
                    value: p.iter().copied().find(|v| !v.is_finite()).unwrap(),
                });
            }
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(GpError::InvalidParameter {
                name: "response value",
                value: bad,
            });
        }
        check_distinct(&points)?;
        Ok(Dataset {
            points,
            values,
            mean,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> &MeanSpec {
        &self.mean
    }

    /// Replaces the mean specification (for coefficient resolution).
    pub fn with_mean(&self, mean: MeanSpec) -> Dataset {
        Dataset {
            points: self.points.clone(),
            values: self.values.clone(),
            mean,
        }
    }

    /// Centred responses `Y_m = Y - m(X)`.
    pub fn centered(&self) -> Result<Vec<f64>> {
        self.points
            .iter()
            .zip(&self.values)
            .map(|(x, y)| Ok(y - self.mean.eval(x)?))
            .collect()
    }

    /// The dataset with point `k` left out (mean spec shared).
    pub fn leave_one_out(&self, k: usize) -> Result<Dataset> {
        if self.len() < 2 {
            return Err(GpError::InsufficientData {
                needed: 2,
                got: self.len(),
            });
        }
        let points = self
            .points
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .map(|(_, p)| p.clone())
            .collect();
        let values = self
            .values
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .map(|(_, v)| *v)
            .collect();
        Dataset::new(points, values, self.mean.clone())
    }
}

/// Exact distinctness after canonicalizing -0.0 to 0.0.
fn check_distinct(points: &[Vec<f64>]) -> Result<()> {
    let canon: Vec<Vec<u64>> = points
        .iter()
        .map(|p| {
            p.iter()
                .map(|&v| (if v == 0.0 { 0.0f64 } else { v }).to_bits())
                .collect()
        })
        .collect();
    for i in 0..canon.len() {
        for j in (i + 1)..canon.len() {
            if canon[i] == canon[j] {
                return Err(GpError::DuplicatePoints { i, j });
            }
        }
    }
    Ok(())
}

/// Conditional mean and variance at a list of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub queries: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// True for the lambda = infinity limit, where the variance is
    /// identically zero.
    pub degenerate: bool,
}

impl PosteriorMoments {
    pub fn mean_at(&self, idx: usize) -> f64 {
        self.means[idx]
    }

    pub fn var_at(&self, idx: usize) -> f64 {
        self.variances[idx]
    }
}

/// Builds `K(X, X) + delta^2 I`. The matrix is exactly symmetric: each
/// off-diagonal entry is evaluated once and mirrored.
pub fn assemble_gram(spec: &KernelSpec, points: &[Vec<f64>], delta: f64) -> Result<DMatrix<f64>> {
    if delta < 0.0 || !delta.is_finite() {
        return Err(GpError::InvalidParameter {
            name: "delta",
            value: delta,
        });
    }
    if points.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    check_distinct(points)?;
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval(&points[i], &points[j])?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m[(i, i)] += delta * delta;
    }
    Ok(m)
}

/// A Cholesky factorization `A = L L^T` exposing the log-determinant and a
/// triangular solver.
#[derive(Debug, Clone)]
pub struct GramFactor {
    l: DMatrix<f64>,
    logdet: f64,
    pivot_ratio: f64,
}

impl GramFactor {
    /// `log det A`, accumulated from the factor diagonal; never forms the
    /// determinant itself, so it does not overflow or underflow.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Ratio of the largest to the smallest pivot; a cheap condition
    /// estimate (a lower bound on the 2-norm condition number).
    pub fn condition_estimate(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.l.nrows();
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let mut acc = rhs[i];
            for k in 0..i {
                acc -= self.l[(i, k)] * z[k];
            }
            z[i] = acc / self.l[(i, i)];
        }
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut acc = z[i];
            for k in (i + 1)..n {
                acc -= self.l[(k, i)] * x[k];
            }
            x[i] = acc / self.l[(i, i)];
        }
        x
    }

    /// Solves `A X = rhs` column by column.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for j in 0..rhs.ncols() {
            let col = self.solve(&rhs.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }
}

/// Factorizes a symmetric positive-definite matrix. A non-positive pivot, or
/// a pivot ratio past [`CONDITION_BREAKDOWN`], yields
/// [`GpError::NotPositiveDefinite`] carrying the offending pivot index and a
/// condition estimate.
pub fn factorize(gram: &DMatrix<f64>) -> Result<GramFactor> {
    let n = gram.nrows();
    let mut l = DMatrix::zeros(n, n);
    let mut logdet = 0.0;
    let mut max_pivot = f64::MIN_POSITIVE;
    let mut min_pivot = f64::MAX;
    let mut min_pivot_index = 0;
    for j in 0..n {
        let mut d = gram[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(GpError::NotPositiveDefinite {
                pivot: j,
                condition_estimate: max_pivot / d.abs().max(f64::MIN_POSITIVE),
            });
        }
        max_pivot = max_pivot.max(d);
        if d < min_pivot {
            min_pivot = d;
            min_pivot_index = j;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        logdet += d.ln();
        for i in (j + 1)..n {
            let mut acc = gram[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / ljj;
        }
    }
    let pivot_ratio = max_pivot / min_pivot;
    if pivot_ratio > CONDITION_BREAKDOWN {
        return Err(GpError::NotPositiveDefinite {
            pivot: min_pivot_index,
            condition_estimate: pivot_ratio,
        });
    }
    Ok(GramFactor {
        l,
        logdet,
        pivot_ratio,
    })
}

/// Conditional mean and variance at `queries` given the dataset, with an
/// optional nugget (`delta` is the noise standard deviation; `delta^2` lands
/// on the Gram diagonal). `delta = 0` gives the interpolant.
pub fn posterior_moments(
    spec: &KernelSpec,
    data: &Dataset,
    delta: f64,
    queries: &[Vec<f64>],
) -> Result<PosteriorMoments> {
    let gram = assemble_gram(spec, data.points(), delta)?;
    let factor = factorize(&gram)?;
    let y_m = DVector::from_vec(data.centered()?);
    let alpha = factor.solve(&y_m);
    let sigma_sq = spec.sigma() * spec.sigma();
    let floor = VARIANCE_FLOOR_FACTOR * sigma_sq;

    let mut means = Vec::with_capacity(queries.len());
    let mut variances = Vec::with_capacity(queries.len());
    for q in queries {
        let k = kernel_vector(spec, data.points(), q)?;
        let m_q = data.mean().eval(q)?;
        means.push(m_q + k.dot(&alpha));
        let raw = sigma_sq - k.dot(&factor.solve(&k));
        variances.push(if raw <= floor { 0.0 } else { raw });
    }
    Ok(PosteriorMoments {
        queries: queries.to_vec(),
        means,
        variances,
        degenerate: false,
    })
}

/// Conditional cross-covariance `P(x, y)` (unclamped); the variance path with
/// `x = y` recovers the raw conditional variance.
pub(crate) fn cross_covariance(
    spec: &KernelSpec,
    data: &Dataset,
    delta: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let gram = assemble_gram(spec, data.points(), delta)?;
    let factor = factorize(&gram)?;
    let kx = kernel_vector(spec, data.points(), x)?;
    let ky = kernel_vector(spec, data.points(), y)?;
    Ok(spec.eval(x, y)? - kx.dot(&factor.solve(&ky)))
}

fn kernel_vector(spec: &KernelSpec, points: &[Vec<f64>], q: &[f64]) -> Result<DVector<f64>> {
    let mut k = DVector::zeros(points.len());
    for (i, p) in points.iter().enumerate() {
        k[i] = spec.eval(q, p)?;
    }
    Ok(k)
}

/// Closed-form lambda -> infinity limits of the regularised moments, for a
/// kernel normalized so that `K_lambda(x, y) -> 1` (sigma = 1 families):
/// variance `1 / (1 + n delta^-2)` and mean
/// `m(x) + delta^-2 / (1 + n delta^-2) * sum_i (y_i - m(x_i))`.
pub fn regularized_flat_limit(delta: f64, data: &Dataset, query: &[f64]) -> Result<(f64, f64)> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(GpError::InvalidParameter {
            name: "delta",
            value: delta,
        });
    }
    let n = data.len() as f64;
    let inv_d2 = delta.powi(-2);
    let denom = 1.0 + n * inv_d2;
    let shift: f64 = data.centered()?.iter().sum();
    let mean = data.mean().eval(query)? + inv_d2 / denom * shift;
    Ok((mean, 1.0 / denom))
}

/// The degenerate lambda = infinity moments for m-constant data with shift
/// `c`: mean `m(x) + c`, variance identically zero. Whether the data really
/// are m-constant is the caller's business (see the diagnostics module).
pub fn flat_limit_moments(data: &Dataset, c: f64, queries: &[Vec<f64>]) -> Result<PosteriorMoments> {
    let mut means = Vec::with_capacity(queries.len());
    for q in queries {
        means.push(data.mean().eval(q)? + c);
    }
    Ok(PosteriorMoments {
        queries: queries.to_vec(),
        means,
        variances: vec![0.0; queries.len()],
        degenerate: true,
    })
}
