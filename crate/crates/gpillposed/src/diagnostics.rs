//! Ill-posedness diagnostics: m-constant detection, Hellinger distances
//! between predictive distributions, and the constant-vs-perturbed probe
//! showing that the fitted predictive distribution is not Lipschitz in the
//! data.

use crate::error::{GpError, Result};
use crate::estimation::{grid_minimize, EstimateResult, GridSpec};
use crate::kernels::KernelSpec;
use crate::objectives::ObjectiveKind;
use crate::posterior::{flat_limit_moments, posterior_moments, Dataset, MeanSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default relative tolerance for the constancy checks.
pub const DEFAULT_CONSTANCY_TOL: f64 = 1e-12;

/// Outcome of an m-constancy check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstancyReport {
    pub is_constant: bool,
    /// The best constant shift; present iff `is_constant`.
    pub shift_c: Option<f64>,
    /// Max deviation of the centred data from the best constant shift.
    pub residual: f64,
    /// Fitted basis coefficients (generalized check only).
    pub beta_star: Option<Vec<f64>>,
    /// Set when the constant function lies in the basis span, making the
    /// (beta, c) decomposition non-unique.
    pub non_unique: bool,
}

/// Best constant under the max norm (the midrange) and its residual.
pub(crate) fn midrange_shift(values: &[f64]) -> (f64, f64) {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    (0.5 * (min + max), 0.5 * (max - min))
}

/// Checks whether `Y - m(X)` is a constant vector: the residual is the max
/// deviation from the best constant shift, and the data are m-constant when
/// it falls under `tol * (1 + max|Y_m|)`.
pub fn check_m_constant(data: &Dataset, tol: f64) -> Result<ConstancyReport> {
    let y_m = data.centered()?;
    let (c, residual) = midrange_shift(&y_m);
    let scale = 1.0 + y_m.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
    let is_constant = residual <= tol * scale;
    Ok(ConstancyReport {
        is_constant,
        shift_c: is_constant.then_some(c),
        residual,
        beta_star: None,
        non_unique: false,
    })
}

/// Generalized constancy: do coefficients `beta` and a constant `c` exist
/// with `Y - V(X) beta = (c, ..., c)`? Solved by least squares on the
/// augmented design `[V(X) | 1]`, then the same max-residual test as
/// [`check_m_constant`]. A rank-deficient augmented design (the constant
/// function lies in the basis span) is reported with the `non_unique` flag.
pub fn check_generalized_constant(data: &Dataset, tol: f64) -> Result<ConstancyReport> {
    let functions = match data.mean() {
        MeanSpec::Basis { functions, .. } => functions,
        _ => return Err(GpError::UnresolvedMeanCoefficients),
    };
    let n = data.len();
    let q = functions.len();
    if n < q + 1 {
        return Err(GpError::InsufficientData {
            needed: q + 1,
            got: n,
        });
    }
    let mut a = DMatrix::zeros(n, q + 1);
    for (i, x) in data.points().iter().enumerate() {
        for (j, phi) in functions.iter().enumerate() {
            a[(i, j)] = phi.eval(x)?;
        }
        a[(i, q)] = 1.0;
    }
    let y = DVector::from_column_slice(data.values());
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let rank_tol = s_max * 1e-12 * (n.max(q + 1) as f64);
    let non_unique = svd.singular_values.iter().any(|&s| s <= rank_tol);
    let theta = svd
        .solve(&y, rank_tol)
        .map_err(|_| GpError::RankDeficientBasis)?;
    let resid = &y - &a * &theta;
    let residual = resid.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
    let beta: Vec<f64> = theta.iter().take(q).copied().collect();
    let c = theta[q];
    // Scale by the centred data, as in the plain check.
    let centred_max = y
        .iter()
        .zip((&a * &theta).iter())
        .map(|(yv, fit)| (yv - (fit - c)).abs())
        .fold(0.0f64, f64::max);
    let is_constant = residual <= tol * (1.0 + centred_max);
    Ok(ConstancyReport {
        is_constant,
        shift_c: is_constant.then_some(c),
        residual,
        beta_star: Some(beta),
        non_unique,
    })
}

/// A univariate Gaussian predictive distribution; `variance = 0` marks the
/// degenerate case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

/// Hellinger distance between two univariate Gaussians.
///
/// Degenerate conventions (the paper's "purely formal computation", adopted
/// here as conventions, not theorems): exactly one variance zero gives 1;
/// both zero gives 0 for equal means and 1 otherwise.
pub fn hellinger(p: &PredictiveDistribution, q: &PredictiveDistribution) -> Result<f64> {
    for d in [p, q] {
        if d.variance < 0.0 || !d.variance.is_finite() {
            return Err(GpError::NegativeVariance(d.variance));
        }
    }
    let (v1, v2) = (p.variance, q.variance);
    if v1 == 0.0 && v2 == 0.0 {
        return Ok(if p.mean == q.mean { 0.0 } else { 1.0 });
    }
    if v1 == 0.0 || v2 == 0.0 {
        return Ok(1.0);
    }
    let dm = p.mean - q.mean;
    let sq = 1.0
        - std::f64::consts::SQRT_2 * (v1 * v2).powf(0.25) / (v1 + v2).sqrt()
            * (-dm * dm / (4.0 * (v1 + v2))).exp();
    Ok(sq.clamp(0.0, 1.0).sqrt())
}

/// Output of the ill-posedness probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    /// Hellinger distance between the two fitted predictive distributions.
    pub distance: f64,
    /// Euclidean distance between the response vectors.
    pub data_distance: f64,
    /// Empirical Lipschitz quotient `distance / data_distance`
    /// (0 when the datasets coincide).
    pub quotient: f64,
    pub predictive_a: PredictiveDistribution,
    pub predictive_b: PredictiveDistribution,
    pub estimate_a: EstimateResult,
    pub estimate_b: EstimateResult,
}

/// Fits the lengthscale by maximum likelihood for both datasets, forms each
/// predictive distribution at `x0` (a divergent estimate yields the
/// degenerate flat-limit distribution), and reports the Hellinger distance
/// together with the empirical Lipschitz quotient.
pub fn lipschitz_probe(
    spec: &KernelSpec,
    data_a: &Dataset,
    data_b: &Dataset,
    x0: &[f64],
    grid: &GridSpec,
) -> Result<LipschitzProbe> {
    if data_a.points() != data_b.points() {
        return Err(GpError::InvalidGrid(
            "probe datasets must share the same covariates".into(),
        ));
    }
    if data_a.points().iter().any(|p| p == x0) {
        return Err(GpError::InvalidParameter {
            name: "x0 (must not be a data site)",
            value: x0[0],
        });
    }
    let (pred_a, est_a) = fitted_predictive(spec, data_a, x0, grid)?;
    let (pred_b, est_b) = fitted_predictive(spec, data_b, x0, grid)?;
    let distance = hellinger(&pred_a, &pred_b)?;
    let data_distance = data_a
        .values()
        .iter()
        .zip(data_b.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let quotient = if data_distance == 0.0 {
        0.0
    } else {
        distance / data_distance
    };
    Ok(LipschitzProbe {
        distance,
        data_distance,
        quotient,
        predictive_a: pred_a,
        predictive_b: pred_b,
        estimate_a: est_a,
        estimate_b: est_b,
    })
}

fn fitted_predictive(
    spec: &KernelSpec,
    data: &Dataset,
    x0: &[f64],
    grid: &GridSpec,
) -> Result<(PredictiveDistribution, EstimateResult)> {
    let est = grid_minimize(ObjectiveKind::Ml, spec, data, grid)?;
    let pred = match &est {
        EstimateResult::Finite { lambda_star, .. } => {
            let at = spec.with_lengthscale(*lambda_star)?;
            let m = posterior_moments(&at, data, 0.0, &[x0.to_vec()])?;
            PredictiveDistribution {
                mean: m.mean_at(0),
                variance: m.var_at(0),
            }
        }
        EstimateResult::DivergesToInfinity { .. } => {
            let (c, _) = midrange_shift(&data.centered()?);
            let m = flat_limit_moments(data, c, &[x0.to_vec()])?;
            PredictiveDistribution {
                mean: m.mean_at(0),
                variance: 0.0,
            }
        }
        EstimateResult::Inconclusive { reason } => {
            return Err(GpError::Inconclusive(reason.clone()));
        }
    };
    Ok((pred, est))
}
