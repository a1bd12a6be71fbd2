//! Hyperparameter-estimation objectives.
//!
//! Everything here is a function of the lengthscale to be minimized:
//! the modified log-likelihood (data-fit quadratic form plus Gram
//! log-determinant), its regularised variant, its recursive one-point-at-a-time
//! decomposition, both leave-one-out cross-validation objectives, the
//! profiled scale objective, and generalized-least-squares coefficient
//! estimation for a parametric mean.

use crate::error::{GpError, Result};
use crate::kernels::KernelSpec;
use crate::posterior::{assemble_gram, factorize, Dataset, MeanSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which objective to evaluate.
///
/// `MlRegularized` requires `delta > 0`; the others take no parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    Ml,
    MlRegularized { delta: f64 },
    Cv,
    Cv2,
    MlProfiledSigma,
    MlParametricMean,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::Ml => write!(f, "ml"),
            ObjectiveKind::MlRegularized { delta } => write!(f, "ml-regularized(delta={delta})"),
            ObjectiveKind::Cv => write!(f, "cv"),
            ObjectiveKind::Cv2 => write!(f, "cv2"),
            ObjectiveKind::MlProfiledSigma => write!(f, "ml-profiled-sigma"),
            ObjectiveKind::MlParametricMean => write!(f, "ml-parametric-mean"),
        }
    }
}

/// Modified log-likelihood `Y_m^T (K + delta^2 I)^-1 Y_m + log det (K + delta^2 I)`.
/// `delta = 0` is the unregularised objective.
pub fn nll(spec: &KernelSpec, data: &Dataset, delta: f64) -> Result<f64> {
    let (datafit, complexity) = nll_parts(spec, data, delta)?;
    Ok(datafit + complexity)
}

/// The two terms of the modified log-likelihood: (data-fit, model complexity).
pub fn nll_parts(spec: &KernelSpec, data: &Dataset, delta: f64) -> Result<(f64, f64)> {
    let gram = assemble_gram(spec, data.points(), delta)?;
    let factor = factorize(&gram)?;
    let y_m = DVector::from_vec(data.centered()?);
    let datafit = y_m.dot(&factor.solve(&y_m));
    Ok((datafit, factor.logdet()))
}

/// The modified log-likelihood split into per-point terms by conditioning on
/// one data point at a time, in the dataset's given order. Individual terms
/// are order-dependent; their sums are not.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveDecomposition {
    /// `((y_{k+1} - m(x_{k+1}) - s_k(x_{k+1})) / P_k(x_{k+1}))^2` for k = 0..n-1.
    pub datafit_terms: Vec<f64>,
    /// `log P_k(x_{k+1})^2` for k = 0..n-1, with `P_0(x_1)^2 = K(x_1, x_1)`.
    pub complexity_terms: Vec<f64>,
}

impl RecursiveDecomposition {
    pub fn total(&self) -> f64 {
        self.datafit_terms.iter().sum::<f64>() + self.complexity_terms.iter().sum::<f64>()
    }
}

/// Decomposes the unregularised modified log-likelihood per-point; the sums
/// of the two term lists reproduce `nll(spec, data, 0.0)`.
pub fn nll_recursive(spec: &KernelSpec, data: &Dataset) -> Result<RecursiveDecomposition> {
    let n = data.len();
    let sigma_sq = spec.sigma() * spec.sigma();
    let mut datafit_terms = Vec::with_capacity(n);
    let mut complexity_terms = Vec::with_capacity(n);
    let y_m = data.centered()?;

    // k = 0: no conditioning, P_0^2 = K(x_1, x_1).
    datafit_terms.push(y_m[0] * y_m[0] / sigma_sq);
    complexity_terms.push(sigma_sq.ln());

    for k in 1..n {
        let prefix = &data.points()[..k];
        let gram = assemble_gram(spec, prefix, 0.0)?;
        let factor = factorize(&gram)?;
        let target = &data.points()[k];
        let mut kv = DVector::zeros(k);
        for (i, p) in prefix.iter().enumerate() {
            kv[i] = spec.eval(target, p)?;
        }
        let alpha = factor.solve(&DVector::from_column_slice(&y_m[..k]));
        let s_k = kv.dot(&alpha);
        let p2 = sigma_sq - kv.dot(&factor.solve(&kv));
        if !(p2 > 0.0) {
            return Err(GpError::NotPositiveDefinite {
                pivot: k,
                condition_estimate: factor.condition_estimate(),
            });
        }
        let resid = y_m[k] - s_k;
        datafit_terms.push(resid * resid / p2);
        complexity_terms.push(p2.ln());
    }
    Ok(RecursiveDecomposition {
        datafit_terms,
        complexity_terms,
    })
}

/// Held-out mean and raw (unclamped) variance at point `k` from the posterior
/// on `X \ {x_k}`.
fn loo_moment(spec: &KernelSpec, data: &Dataset, k: usize) -> Result<(f64, f64)> {
    let loo = data.leave_one_out(k)?;
    let gram = assemble_gram(spec, loo.points(), 0.0)?;
    let factor = factorize(&gram)?;
    let target = &data.points()[k];
    let mut kv = DVector::zeros(loo.len());
    for (i, p) in loo.points().iter().enumerate() {
        kv[i] = spec.eval(target, p)?;
    }
    let alpha = factor.solve(&DVector::from_vec(loo.centered()?));
    let mu = data.mean().eval(target)? + kv.dot(&alpha);
    let p2 = spec.sigma() * spec.sigma() - kv.dot(&factor.solve(&kv));
    if !(p2 > 0.0) {
        return Err(GpError::NotPositiveDefinite {
            pivot: loo.len(),
            condition_estimate: factor.condition_estimate(),
        });
    }
    Ok((mu, p2))
}

/// Per-point cross-validation terms: (standardized squared error, log variance).
pub(crate) fn cv_terms(spec: &KernelSpec, data: &Dataset) -> Result<Vec<(f64, f64)>> {
    if data.len() < 2 {
        return Err(GpError::InsufficientData {
            needed: 2,
            got: data.len(),
        });
    }
    let mut terms = Vec::with_capacity(data.len());
    for k in 0..data.len() {
        let (mu, p2) = loo_moment(spec, data, k)?;
        let resid = data.values()[k] - mu;
        terms.push((resid * resid / p2, p2.ln()));
    }
    Ok(terms)
}

/// Leave-one-out cross-validation objective: the sum over held-out points of
/// the standardized squared error plus the log held-out variance.
pub fn cv_objective(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    Ok(cv_terms(spec, data)?
        .into_iter()
        .map(|(a, b)| a + b)
        .sum())
}

/// Sum of squared leave-one-out errors; non-negative.
pub fn cv2_objective(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    if data.len() < 2 {
        return Err(GpError::InsufficientData {
            needed: 2,
            got: data.len(),
        });
    }
    let mut acc = 0.0;
    for k in 0..data.len() {
        let (mu, _) = loo_moment(spec, data, k)?;
        let resid = data.values()[k] - mu;
        acc += resid * resid;
    }
    Ok(acc)
}

/// Scale estimate profiled out of the likelihood at a fixed lengthscale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfiledSigma {
    pub sigma_ml: f64,
    pub profiled_nll: f64,
}

/// Profiles the scale out of the modified log-likelihood at the spec's
/// lengthscale: `sigma_ML = sqrt(Y_m^T K^-1 Y_m / n)` on the unit-scale Gram
/// (the spec's own `sigma` is ignored), and
/// `profiled_nll = n + log det K + n log(Y_m^T K^-1 Y_m) - n log n`.
pub fn profile_sigma(spec: &KernelSpec, data: &Dataset) -> Result<ProfiledSigma> {
    let unit = spec.with_sigma(1.0)?;
    let y_m = data.centered()?;
    if y_m.iter().all(|&v| v == 0.0) {
        return Err(GpError::DegenerateScale);
    }
    let gram = assemble_gram(&unit, data.points(), 0.0)?;
    let factor = factorize(&gram)?;
    let y = DVector::from_vec(y_m);
    let quad = y.dot(&factor.solve(&y));
    if !(quad > 0.0) {
        // The quadratic form of a positive-definite matrix lost positivity:
        // the factorization is past its numerical validity.
        return Err(GpError::NotPositiveDefinite {
            pivot: factor.dim(),
            condition_estimate: factor.condition_estimate(),
        });
    }
    let n = data.len() as f64;
    Ok(ProfiledSigma {
        sigma_ml: (quad / n).sqrt(),
        profiled_nll: n + factor.logdet() + n * quad.ln() - n * n.ln(),
    })
}

/// Generalized-least-squares estimate of the basis-mean coefficients,
/// `beta = [V^T K^-1 V]^-1 V^T K^-1 Y`; when `q = n` this reduces to the
/// exact solve `V^-1 Y`.
pub fn estimate_beta(spec: &KernelSpec, data: &Dataset, delta: f64) -> Result<Vec<f64>> {
    let functions = match data.mean() {
        MeanSpec::Basis { functions, .. } => functions,
        _ => return Err(GpError::UnresolvedMeanCoefficients),
    };
    let n = data.len();
    let q = functions.len();
    if q == 0 || q > n {
        return Err(GpError::RankDeficientBasis);
    }
    let mut v = DMatrix::zeros(n, q);
    for (i, x) in data.points().iter().enumerate() {
        for (j, phi) in functions.iter().enumerate() {
            v[(i, j)] = phi.eval(x)?;
        }
    }
    let y = DVector::from_column_slice(data.values());
    if q == n {
        let beta = v
            .lu()
            .solve(&y)
            .ok_or(GpError::RankDeficientBasis)?;
        return Ok(beta.iter().copied().collect());
    }
    let gram = assemble_gram(spec, data.points(), delta)?;
    let factor = factorize(&gram)?;
    let w = factor.solve_matrix(&v); // K^-1 V
    let mut a = v.transpose() * &w;
    // Symmetrize before factorizing; rank deficiency of V makes this singular.
    for i in 0..q {
        for j in 0..i {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let b = w.transpose() * &y;
    let small = factorize(&a).map_err(|_| GpError::RankDeficientBasis)?;
    Ok(small.solve(&b).iter().copied().collect())
}

/// Joint-minimization value for the parametric-mean objective: re-estimates
/// the coefficients at this lengthscale and evaluates the likelihood with the
/// fitted mean.
fn parametric_mean_nll(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    let functions = match data.mean() {
        MeanSpec::Basis { functions, .. } => functions.clone(),
        _ => return Err(GpError::UnresolvedMeanCoefficients),
    };
    let beta = estimate_beta(spec, data, 0.0)?;
    let resolved = data.with_mean(MeanSpec::Basis {
        functions,
        coefficients: Some(beta),
    });
    nll(spec, &resolved, 0.0)
}

/// Evaluates an objective at the spec's lengthscale.
pub fn objective_value(kind: ObjectiveKind, spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    match kind {
        ObjectiveKind::Ml => nll(spec, data, 0.0),
        ObjectiveKind::MlRegularized { delta } => {
            if !(delta > 0.0) {
                return Err(GpError::InvalidParameter {
                    name: "delta",
                    value: delta,
                });
            }
            nll(spec, data, delta)
        }
        ObjectiveKind::Cv => cv_objective(spec, data),
        ObjectiveKind::Cv2 => cv2_objective(spec, data),
        ObjectiveKind::MlProfiledSigma => Ok(profile_sigma(spec, data)?.profiled_nll),
        ObjectiveKind::MlParametricMean => parametric_mean_nll(spec, data),
    }
}

/// Evaluation status of one trace point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Ok,
    NotPositiveDefinite,
}

impl fmt::Display for TraceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceStatus::Ok => write!(f, "ok"),
            TraceStatus::NotPositiveDefinite => write!(f, "not_positive_definite"),
        }
    }
}

impl FromStr for TraceStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ok" => Ok(TraceStatus::Ok),
            "not_positive_definite" => Ok(TraceStatus::NotPositiveDefinite),
            other => Err(format!("unknown trace status `{other}`")),
        }
    }
}

/// One grid point of an objective trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub lambda: f64,
    pub value: Option<f64>,
    pub status: TraceStatus,
}

/// Objective values on a lengthscale grid; factorization failures are
/// recorded per point rather than aborting the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTrace {
    points: Vec<TracePoint>,
}

impl ObjectiveTrace {
    /// Validates: strictly increasing lambdas, at least two finite values.
    pub fn new(points: Vec<TracePoint>) -> Result<Self> {
        for w in points.windows(2) {
            if !(w[1].lambda > w[0].lambda) {
                return Err(GpError::InvalidGrid(
                    "trace lambdas must be strictly increasing".into(),
                ));
            }
        }
        let finite = points.iter().filter(|p| p.value.is_some()).count();
        if finite < 2 {
            return Err(GpError::InvalidGrid(format!(
                "trace needs at least 2 finite values, got {finite}"
            )));
        }
        Ok(ObjectiveTrace { points })
    }

    /// Evaluates `kind` at every lambda in the grid. `NotPositiveDefinite` is
    /// recorded in place; any other error is an input error and aborts.
    pub fn compute(
        kind: ObjectiveKind,
        spec: &KernelSpec,
        data: &Dataset,
        lambdas: &[f64],
    ) -> Result<Self> {
        let mut points = Vec::with_capacity(lambdas.len());
        for &lam in lambdas {
            let at = spec.with_lengthscale(lam)?;
            match objective_value(kind, &at, data) {
                Ok(v) => points.push(TracePoint {
                    lambda: lam,
                    value: Some(v),
                    status: TraceStatus::Ok,
                }),
                Err(GpError::NotPositiveDefinite { .. }) => points.push(TracePoint {
                    lambda: lam,
                    value: None,
                    status: TraceStatus::NotPositiveDefinite,
                }),
                Err(e) => return Err(e),
            }
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    /// Writes `lambda,value,status` rows. Floats use the shortest
    /// representation that round-trips, so parsing the file back is lossless.
    pub fn to_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "value", "status"])?;
        for p in &self.points {
            w.write_record([
                p.lambda.to_string(),
                p.value.map(|v| v.to_string()).unwrap_or_default(),
                p.status.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn from_csv<R: std::io::Read>(input: R) -> std::result::Result<Self, String> {
        let mut r = csv::Reader::from_reader(input);
        let mut points = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| format!("row {}: {e}", i + 2))?;
            if rec.len() != 3 {
                return Err(format!("row {}: expected 3 fields, got {}", i + 2, rec.len()));
            }
            let lambda: f64 = rec[0]
                .parse()
                .map_err(|e| format!("row {}: bad lambda: {e}", i + 2))?;
            let value = if rec[1].is_empty() {
                None
            } else {
                Some(
                    rec[1]
                        .parse()
                        .map_err(|e| format!("row {}: bad value: {e}", i + 2))?,
                )
            };
            let status: TraceStatus = rec[2].parse().map_err(|e| format!("row {}: {e}", i + 2))?;
            points.push(TracePoint {
                lambda,
                value,
                status,
            });
        }
        Self::new(points).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::HalfInteger;
    use crate::test_util::{d1, random_instance};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matern(nu: HalfInteger, lam: f64) -> KernelSpec {
        KernelSpec::matern(nu, 1.0, lam).unwrap()
    }

    #[test]
    fn nll_single_point() {
        let data = d1(&[0.3], &[2.0], MeanSpec::Zero);
        for lam in [0.37, 1.0, 5.0] {
            let v = nll(&matern(HalfInteger::ThreeHalves, lam), &data, 0.0).unwrap();
            assert_relative_eq!(v, 4.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn nll_small_lengthscale_limit() {
        // Well separated points at tiny lengthscale: Gram is the identity,
        // so the value is ||Y_m||^2.
        let data = d1(&[0.0, 100.0], &[1.0, 1.0], MeanSpec::Zero);
        let v = nll(&matern(HalfInteger::ThreeHalves, 1e-6), &data, 0.0).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn recursive_single_point() {
        let data = d1(&[0.3], &[2.0], MeanSpec::Zero);
        let dec = nll_recursive(&matern(HalfInteger::ThreeHalves, 1.0), &data).unwrap();
        assert_eq!(dec.datafit_terms, vec![4.0]);
        assert_eq!(dec.complexity_terms, vec![0.0]);
    }

    #[test]
    fn recursive_second_term_closed_form() {
        // Term k = 1 numerator is y_2 - rho * y_1 with rho = Phi((x_2-x_1)/lambda).
        let spec = matern(HalfInteger::ThreeHalves, 0.7);
        let data = d1(&[0.0, 0.5], &[1.3, -0.4], MeanSpec::Zero);
        let rho = spec.eval(&[0.0], &[0.5]).unwrap();
        let dec = nll_recursive(&spec, &data).unwrap();
        let expected = (-0.4 - rho * 1.3).powi(2) / (1.0 - rho * rho);
        assert_relative_eq!(dec.datafit_terms[1], expected, max_relative = 1e-12);
        assert_relative_eq!(dec.complexity_terms[1], (1.0 - rho * rho).ln(), max_relative = 1e-12);
    }

    #[test]
    fn recursive_sum_reproduces_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..100 {
            let (spec, data) = random_instance(&mut rng, 8);
            let direct = nll(&spec, &data, 0.0).unwrap();
            let dec = nll_recursive(&spec, &data).unwrap();
            assert_relative_eq!(dec.total(), direct, max_relative = 1e-8);
        }
    }

    #[test]
    fn nll_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (spec, data) = random_instance(&mut rng, 6);
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            let permuted = Dataset::new(
                idx.iter().map(|&i| data.points()[i].clone()).collect(),
                idx.iter().map(|&i| data.values()[i]).collect(),
                data.mean().clone(),
            )
            .unwrap();
            let a = nll(&spec, &data, 0.0).unwrap();
            let b = nll(&spec, &permuted, 0.0).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            // Per-term values move around, their sums do not.
            let da = nll_recursive(&spec, &data).unwrap();
            let db = nll_recursive(&spec, &permuted).unwrap();
            assert_abs_diff_eq!(da.total(), db.total(), epsilon = 1e-8);
        }
    }

    /// Objective values at lambda = 10^k, k = 0..=6, with trailing
    /// factorization failures tolerated (they mark the conditioning
    /// breakdown the theory predicts at large lambda).
    fn decade_values(kind: ObjectiveKind, spec: &KernelSpec, data: &Dataset) -> Vec<f64> {
        let mut out = Vec::new();
        for k in 0..=6 {
            let at = spec.with_lengthscale(10f64.powi(k)).unwrap();
            match objective_value(kind, &at, data) {
                Ok(v) => out.push(v),
                Err(GpError::NotPositiveDefinite { .. }) => break,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        out
    }

    #[test]
    fn constant_data_drives_nll_down() {
        for nu in [HalfInteger::ThreeHalves, HalfInteger::FiveHalves] {
            for n in [2usize, 3, 5] {
                let xs: Vec<f64> = (0..n).map(|i| 3.0 * i as f64 / n as f64).collect();
                let data = d1(&xs, &vec![1.0; n], MeanSpec::Zero);
                let vals = decade_values(ObjectiveKind::Ml, &matern(nu, 1.0), &data);
                assert!(vals.len() >= 3, "nu={nu:?} n={n}: too few finite values");
                let tail = &vals[vals.len().saturating_sub(3)..];
                assert!(
                    tail.windows(2).all(|w| w[1] < w[0]),
                    "nu={nu:?} n={n}: tail not strictly decreasing: {tail:?}"
                );
                let min = vals.iter().cloned().fold(f64::MAX, f64::min);
                assert_eq!(min, *vals.last().unwrap());
                assert!(vals.last().unwrap() < vals.first().unwrap());
            }
        }
    }

    #[test]
    fn non_constant_data_drives_nll_up() {
        for nu in [HalfInteger::ThreeHalves, HalfInteger::FiveHalves] {
            for n in [2usize, 3, 5] {
                let xs: Vec<f64> = (0..n).map(|i| 3.0 * i as f64 / n as f64).collect();
                let mut ys = vec![1.0; n];
                ys[0] = 2.0; // y_1 - m(x_1) != y_2 - m(x_2)
                let data = d1(&xs, &ys, MeanSpec::Zero);
                let vals = decade_values(ObjectiveKind::Ml, &matern(nu, 1.0), &data);
                assert!(vals.len() >= 3);
                let tail = &vals[vals.len().saturating_sub(3)..];
                assert!(
                    tail.windows(2).all(|w| w[1] > w[0]),
                    "nu={nu:?} n={n}: tail not strictly increasing: {tail:?}"
                );
            }
        }
    }

    #[test]
    fn constant_datafit_term_is_bounded() {
        // The quadratic form alone stays under its lambda -> 0 limit
        // ||Y_m||^2 / Phi(0), with 10% margin.
        let spec = matern(HalfInteger::ThreeHalves, 1.0);
        let data = d1(&[0.5, 1.7, 2.9], &[1.0, 1.0, 1.0], MeanSpec::Zero);
        let bound = 1.1 * 3.0;
        for k in 0..=40 {
            let lam = 10f64.powf(-3.0 + 9.0 * k as f64 / 40.0);
            match nll_parts(&spec.with_lengthscale(lam).unwrap(), &data, 0.0) {
                Ok((datafit, _)) => assert!(datafit <= bound, "lambda={lam}: {datafit}"),
                Err(GpError::NotPositiveDefinite { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn cv_small_lengthscale_limit() {
        // lambda -> 0: held-out predictions go to the prior, so the value is
        // sum((y_k - m(x_k))^2) / Phi(0) + n log Phi(0).
        let data = d1(&[0.0, 10.0, 25.0], &[1.0, -2.0, 0.5], MeanSpec::Zero);
        let v = cv_objective(&matern(HalfInteger::ThreeHalves, 1e-6), &data).unwrap();
        assert_relative_eq!(v, 1.0 + 4.0 + 0.25, max_relative = 1e-12);
    }

    #[test]
    fn cv_decreases_for_constant_data() {
        let data = d1(&[1.0, 1.2, 2.0], &[1.0, 1.0, 1.0], MeanSpec::Zero);
        let v1 = cv_objective(&matern(HalfInteger::FiveHalves, 1e1), &data).unwrap();
        let v3 = cv_objective(&matern(HalfInteger::FiveHalves, 1e3), &data).unwrap();
        assert!(v3 < v1);
    }

    #[test]
    fn cv_terms_exchangeable_for_symmetric_pair() {
        let spec = matern(HalfInteger::ThreeHalves, 1.3);
        let data = d1(&[-1.0, 1.0], &[0.7, 0.7], MeanSpec::Zero);
        let terms = cv_terms(&spec, &data).unwrap();
        assert_eq!(terms[0], terms[1]);
    }

    #[test]
    fn cv2_vanishes_in_flat_limit_for_constant_data() {
        let data = d1(&[1.0, 1.2, 2.0], &[1.0, 1.0, 1.0], MeanSpec::Zero);
        let v = cv2_objective(&matern(HalfInteger::ThreeHalves, 1e4), &data).unwrap();
        assert!(v <= 1e-2, "cv2 = {v}");
    }

    #[test]
    fn cv2_zero_when_loo_predictors_reproduce_data() {
        let data = d1(&[0.0, 1.0], &[0.0, 0.0], MeanSpec::Zero);
        let v = cv2_objective(&matern(HalfInteger::ThreeHalves, 1.0), &data).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn cv2_two_point_closed_form() {
        let spec = matern(HalfInteger::FiveHalves, 0.8);
        let (y1, y2) = (1.1, -0.3);
        let data = d1(&[0.0, 0.6], &[y1, y2], MeanSpec::Zero);
        let rho = spec.eval(&[0.0], &[0.6]).unwrap();
        let expected = (y1 - rho * y2).powi(2) + (y2 - rho * y1).powi(2);
        let v = cv2_objective(&spec, &data).unwrap();
        assert_relative_eq!(v, expected, max_relative = 1e-12);
    }

    #[test]
    fn cv_needs_two_points() {
        let data = d1(&[0.0], &[1.0], MeanSpec::Zero);
        assert!(matches!(
            cv_objective(&matern(HalfInteger::ThreeHalves, 1.0), &data),
            Err(GpError::InsufficientData { .. })
        ));
    }

    #[test]
    fn profiled_sigma_is_one_for_normalized_data() {
        let spec = matern(HalfInteger::ThreeHalves, 1.7);
        let data = d1(&[0.0, 1.0, 2.5], &[1.0, -0.5, 0.3], MeanSpec::Zero);
        let quad = {
            let gram = assemble_gram(&spec.with_sigma(1.0).unwrap(), data.points(), 0.0).unwrap();
            let f = factorize(&gram).unwrap();
            let y = DVector::from_column_slice(data.values());
            y.dot(&f.solve(&y))
        };
        let scale = (3.0 / quad).sqrt();
        let scaled = d1(
            &[0.0, 1.0, 2.5],
            &[scale, -0.5 * scale, 0.3 * scale],
            MeanSpec::Zero,
        );
        let p = profile_sigma(&spec, &scaled).unwrap();
        assert_relative_eq!(p.sigma_ml, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn profiled_nll_is_optimal_over_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut tested = 0;
        while tested < 50 {
            let (spec, data) = random_instance(&mut rng, 6);
            if data.centered().unwrap().iter().all(|&v| v == 0.0) {
                continue;
            }
            let p = profile_sigma(&spec, &data).unwrap();
            for factor in [0.5, 1.0, 2.0] {
                let sigma = factor * p.sigma_ml;
                let at = spec.with_sigma(sigma).unwrap();
                let full = nll(&at, &data, 0.0).unwrap();
                assert!(
                    p.profiled_nll <= full + 1e-9,
                    "profiled {} > nll {} at sigma factor {}",
                    p.profiled_nll,
                    full,
                    factor
                );
            }
            tested += 1;
        }
    }

    #[test]
    fn profiled_trace_decreases_for_constant_data() {
        // Matérn 1/2 keeps the Gram factorizable out to lambda = 1e6.
        let spec = matern(HalfInteger::Half, 1.0);
        let data = d1(&[1.0, 1.2, 2.0], &[1.0, 1.0, 1.0], MeanSpec::Zero);
        let mut prev = f64::MAX;
        for k in 1..=6 {
            let p = profile_sigma(&spec.with_lengthscale(10f64.powi(k)).unwrap(), &data).unwrap();
            assert!(p.profiled_nll < prev, "not decreasing at k={k}");
            prev = p.profiled_nll;
        }
    }

    #[test]
    fn degenerate_scale_is_reported() {
        let data = d1(&[0.0, 1.0], &[0.0, 0.0], MeanSpec::Zero);
        assert!(matches!(
            profile_sigma(&matern(HalfInteger::ThreeHalves, 1.0), &data),
            Err(GpError::DegenerateScale)
        ));
    }

    fn basis_mean(degree: u32) -> MeanSpec {
        MeanSpec::Basis {
            functions: MeanSpec::monomial_basis(1, degree),
            coefficients: None,
        }
    }

    #[test]
    fn beta_square_case_is_exact_solve() {
        let spec = matern(HalfInteger::ThreeHalves, 1.0);
        let data = d1(&[0.0, 1.0, 2.0], &[0.3, 1.9, -0.7], basis_mean(2));
        let beta = estimate_beta(&spec, &data, 0.0).unwrap();
        // q = n: V beta must reproduce Y exactly.
        for (i, &x) in [0.0, 1.0, 2.0].iter().enumerate() {
            let fit = beta[0] + beta[1] * x + beta[2] * x * x;
            assert_abs_diff_eq!(fit, data.values()[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn beta_tends_to_least_squares_at_tiny_lengthscale() {
        let xs = [0.0, 5.0, 10.0, 15.0, 20.0];
        let ys = [1.0, 2.2, 2.8, 4.1, 5.2];
        let spec = matern(HalfInteger::ThreeHalves, 1e-9);
        let data = d1(&xs, &ys, basis_mean(1));
        let beta = estimate_beta(&spec, &data, 0.0).unwrap();
        // Ordinary least squares via normal equations.
        let v = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = DVector::from_column_slice(&ys);
        let ols = (v.transpose() * &v)
            .lu()
            .solve(&(v.transpose() * y))
            .unwrap();
        assert_relative_eq!(beta[0], ols[0], max_relative = 1e-8);
        assert_relative_eq!(beta[1], ols[1], max_relative = 1e-8);
    }

    #[test]
    fn beta_in_span_eliminates_datafit() {
        // Y exactly in the column span of V: residual vanishes and the
        // fitted-mean likelihood is the bare log-determinant.
        let xs = [0.0, 0.8, 1.6, 2.4, 3.2];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let data = d1(&xs, &ys, basis_mean(1));
        for lam in [0.3, 1.0, 4.0, 20.0] {
            let spec = matern(HalfInteger::FiveHalves, lam);
            let beta = estimate_beta(&spec, &data, 0.0).unwrap();
            for (&x, &y) in xs.iter().zip(&ys) {
                assert_abs_diff_eq!(beta[0] + beta[1] * x, y, epsilon = 1e-10);
            }
            let v = objective_value(ObjectiveKind::MlParametricMean, &spec, &data).unwrap();
            let gram = assemble_gram(&spec, data.points(), 0.0).unwrap();
            assert_abs_diff_eq!(v, factorize(&gram).unwrap().logdet(), epsilon = 1e-10);
        }
    }

    #[test]
    fn cv_and_ml_share_the_degenerate_ray() {
        let data = d1(&[1.0, 1.2, 2.0], &[1.0, 1.0, 1.0], MeanSpec::Zero);
        let spec = matern(HalfInteger::ThreeHalves, 1.0);
        let mut prev_ml = f64::MAX;
        let mut prev_cv = f64::MAX;
        for k in 1..=4 {
            let at = spec.with_lengthscale(10f64.powi(k)).unwrap();
            let ml = nll(&at, &data, 0.0).unwrap();
            let cv = cv_objective(&at, &data).unwrap();
            assert!(ml < prev_ml && cv < prev_cv, "k={k}");
            prev_ml = ml;
            prev_cv = cv;
        }
    }

    #[test]
    fn regularized_objective_validates_delta() {
        let data = d1(&[0.0, 1.0], &[1.0, 2.0], MeanSpec::Zero);
        let spec = matern(HalfInteger::ThreeHalves, 1.0);
        assert!(matches!(
            objective_value(ObjectiveKind::MlRegularized { delta: 0.0 }, &spec, &data),
            Err(GpError::InvalidParameter { .. })
        ));
        assert!(
            objective_value(ObjectiveKind::MlRegularized { delta: 0.5 }, &spec, &data).is_ok()
        );
    }

    #[test]
    fn trace_records_breakdown_and_round_trips() {
        let spec = matern(HalfInteger::FiveHalves, 1.0);
        let data = d1(&[1.0, 1.2, 2.0], &[1.0, 1.0, 1.0], MeanSpec::Zero);
        let lambdas: Vec<f64> = (0..=24).map(|k| 10f64.powf(-2.0 + k as f64 * 0.5)).collect();
        let trace = ObjectiveTrace::compute(ObjectiveKind::Ml, &spec, &data, &lambdas).unwrap();
        assert!(trace
            .points()
            .iter()
            .any(|p| p.status == TraceStatus::NotPositiveDefinite));
        assert!(trace.points().iter().any(|p| p.status == TraceStatus::Ok));

        let mut buf = Vec::new();
        trace.to_csv(&mut buf).unwrap();
        let back = ObjectiveTrace::from_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn trace_invariants_enforced() {
        let p = |lambda: f64, value: Option<f64>| TracePoint {
            lambda,
            value,
            status: if value.is_some() {
                TraceStatus::Ok
            } else {
                TraceStatus::NotPositiveDefinite
            },
        };
        assert!(ObjectiveTrace::new(vec![p(1.0, Some(0.0)), p(1.0, Some(1.0))]).is_err());
        assert!(ObjectiveTrace::new(vec![p(1.0, Some(0.0)), p(2.0, None)]).is_err());
        assert!(ObjectiveTrace::new(vec![p(1.0, Some(0.0)), p(2.0, Some(1.0))]).is_ok());
    }
}
