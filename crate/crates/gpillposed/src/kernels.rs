//! Stationary covariance kernels.
//!
//! All kernels have the form `K(x, y) = sigma^2 * Phi((x - y) / lambda)` for a
//! shape function `Phi` with `Phi(0) = 1`. Matérn smoothness is restricted to
//! half-integer values, for which `Phi` is a polynomial times an exponential;
//! the Gaussian and inverse quadratic shapes cover the infinitely smooth case.

use crate::error::{GpError, Result};
use serde::{Deserialize, Serialize};

/// Half-integer Matérn smoothness values with closed-form kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfInteger {
    /// ν = 1/2, the exponential kernel.
    Half,
    /// ν = 3/2.
    ThreeHalves,
    /// ν = 5/2.
    FiveHalves,
    /// ν = 7/2.
    SevenHalves,
}

impl HalfInteger {
    pub fn as_f64(self) -> f64 {
        self.two_nu() as f64 / 2.0
    }

    /// 2ν as an integer.
    pub fn two_nu(self) -> u32 {
        match self {
            HalfInteger::Half => 1,
            HalfInteger::ThreeHalves => 3,
            HalfInteger::FiveHalves => 5,
            HalfInteger::SevenHalves => 7,
        }
    }

    /// Maps 0.5 / 1.5 / 2.5 / 3.5 back to the enum.
    pub fn from_f64(nu: f64) -> Option<Self> {
        match nu {
            v if v == 0.5 => Some(HalfInteger::Half),
            v if v == 1.5 => Some(HalfInteger::ThreeHalves),
            v if v == 2.5 => Some(HalfInteger::FiveHalves),
            v if v == 3.5 => Some(HalfInteger::SevenHalves),
            _ => None,
        }
    }
}

/// Kernel shape families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    MaternHalfInteger(HalfInteger),
    Gaussian,
    InverseQuadratic,
}

/// A stationary kernel: family, output scale `sigma` and lengthscale `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecJson", into = "KernelSpecJson")]
pub struct KernelSpec {
    family: KernelFamily,
    sigma: f64,
    lengthscale: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64, lengthscale: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(GpError::InvalidParameter {
                name: "sigma",
                value: sigma,
            });
        }
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(GpError::InvalidParameter {
                name: "lengthscale",
                value: lengthscale,
            });
        }
        Ok(KernelSpec {
            family,
            sigma,
            lengthscale,
        })
    }

    pub fn matern(nu: HalfInteger, sigma: f64, lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::MaternHalfInteger(nu), sigma, lengthscale)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Same kernel with a different lengthscale.
    pub fn with_lengthscale(&self, lengthscale: f64) -> Result<Self> {
        Self::new(self.family, self.sigma, lengthscale)
    }

    /// Same kernel with a different output scale.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.family, sigma, self.lengthscale)
    }

    /// Evaluates `K(x, y) = sigma^2 * Phi(||x - y|| / lambda)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(GpError::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let r = euclidean(x, y) / self.lengthscale;
        Ok(self.sigma * self.sigma * shape(self.family, r))
    }

    /// Spectral density of a Matérn kernel at frequency `xi`.
    ///
    /// Decays like `(2nu + ||xi||^2)^-(nu + d/2)`, so the two-sided polynomial
    /// bound holds with exponent `alpha = nu + d/2`. The Gaussian and inverse
    /// quadratic transforms decay super-polynomially and are rejected.
    pub fn matern_spectral_density(&self, xi: &[f64]) -> Result<f64> {
        let nu = match self.family {
            KernelFamily::MaternHalfInteger(nu) => nu,
            _ => {
                return Err(GpError::UnsupportedKernel(
                    "spectral density is implemented for Matérn kernels only",
                ))
            }
        };
        let d = xi.len();
        if d == 0 {
            return Err(GpError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let two_nu = nu.two_nu();
        let nu_f = nu.as_f64();
        let alpha = nu_f + d as f64 / 2.0;
        // sigma^2 Gamma(nu + d/2) / (pi^(d/2) Gamma(nu)) (2nu)^nu (2nu + |xi|^2)^-alpha,
        // with the lengthscale folded in by xi -> lambda * xi and a lambda^d volume factor.
        let xi_scaled_sq: f64 = xi
            .iter()
            .map(|v| v * self.lengthscale * v * self.lengthscale)
            .sum();
        let lam_d = self.lengthscale.powi(d as i32);
        let c = gamma_half(two_nu + d as u32) / (std::f64::consts::PI.powf(d as f64 / 2.0) * gamma_half(two_nu));
        Ok(self.sigma * self.sigma
            * lam_d
            * c
            * (two_nu as f64).powf(nu_f)
            * (two_nu as f64 + xi_scaled_sq).powf(-alpha))
    }
}

/// Shape function `Phi(r)` with `r = ||x - y|| / lambda >= 0`; `Phi(0) = 1`.
fn shape(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::MaternHalfInteger(HalfInteger::Half) => (-r).exp(),
        KernelFamily::MaternHalfInteger(HalfInteger::ThreeHalves) => {
            let t = 3.0_f64.sqrt() * r;
            (1.0 + t) * (-t).exp()
        }
        KernelFamily::MaternHalfInteger(HalfInteger::FiveHalves) => {
            let t = 5.0_f64.sqrt() * r;
            (1.0 + t + t * t / 3.0) * (-t).exp()
        }
        KernelFamily::MaternHalfInteger(HalfInteger::SevenHalves) => {
            let t = 7.0_f64.sqrt() * r;
            (1.0 + t + 2.0 * t * t / 5.0 + t * t * t / 15.0) * (-t).exp()
        }
        KernelFamily::Gaussian => (-(r * r)).exp(),
        KernelFamily::InverseQuadratic => 1.0 / (1.0 + r * r),
    }
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Gamma(k/2) for positive integer k, in closed form.
fn gamma_half(k: u32) -> f64 {
    if k % 2 == 0 {
        // Gamma(m) = (m-1)!
        let m = k / 2;
        (1..m).map(|i| i as f64).product()
    } else {
        // Gamma(m + 1/2) = (2m)! / (4^m m!) sqrt(pi)
        let m = (k - 1) / 2;
        let mut v = std::f64::consts::PI.sqrt();
        for i in 1..=m {
            // multiply by (i - 1/2)
            v *= i as f64 - 0.5;
        }
        v
    }
}

#[derive(Serialize, Deserialize)]
struct KernelSpecJson {
    family: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    sigma: f64,
    lengthscale: f64,
}

impl From<KernelSpec> for KernelSpecJson {
    fn from(spec: KernelSpec) -> Self {
        let (family, nu) = match spec.family {
            KernelFamily::MaternHalfInteger(nu) => ("matern".to_string(), Some(nu.as_f64())),
            KernelFamily::Gaussian => ("gaussian".to_string(), None),
            KernelFamily::InverseQuadratic => ("inverse_quadratic".to_string(), None),
        };
        KernelSpecJson {
            family,
            nu,
            sigma: spec.sigma,
            lengthscale: spec.lengthscale,
        }
    }
}

impl TryFrom<KernelSpecJson> for KernelSpec {
    type Error = String;

    fn try_from(j: KernelSpecJson) -> std::result::Result<Self, String> {
        let family = match j.family.as_str() {
            "matern" => {
                let nu = j.nu.ok_or("matern kernel requires a `nu` field")?;
                let nu = HalfInteger::from_f64(nu)
                    .ok_or_else(|| format!("unsupported nu {nu}; use 0.5, 1.5, 2.5 or 3.5"))?;
                KernelFamily::MaternHalfInteger(nu)
            }
            "gaussian" => KernelFamily::Gaussian,
            "inverse_quadratic" => KernelFamily::InverseQuadratic,
            other => return Err(format!("unknown kernel family `{other}`")),
        };
        KernelSpec::new(family, j.sigma, j.lengthscale).map_err(|e| e.to_string())
    }
}
