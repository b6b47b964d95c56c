//! Market definitions and their Itô forms.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::ScalarFn;
use crate::error::{Error, Result};
use crate::interpretation::Interpretation;
use crate::linalg::semidefinite_cholesky;

/// Points used when checking "for all x" conditions on a factor domain.
pub const DOMAIN_GRID_POINTS: usize = 1000;

/// A violated invariant: which field, and what went wrong.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub constraint: String,
}

impl Violation {
    fn new(field: &'static str, constraint: impl Into<String>) -> Self {
        Violation {
            field,
            constraint: constraint.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.constraint)
    }
}

pub trait Validate {
    /// Every violated invariant; empty when the value is well formed.
    fn validate(&self) -> Vec<Violation>;

    fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::parameter(
                "market",
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "),
            ))
        }
    }
}

fn check_rho_corr(rho: f64, out: &mut Vec<Violation>) {
    if !(-1.0..=1.0).contains(&rho) {
        out.push(Violation::new("rho_corr", "rho_corr out of [-1,1]"));
    }
}

fn check_finite(field: &'static str, v: f64, out: &mut Vec<Violation>) -> bool {
    if !v.is_finite() {
        out.push(Violation::new(field, "must be finite"));
        return false;
    }
    true
}

/// `n` risky assets with constant per-unit drift `mu` and loading `gamma`
/// (`V = Γ Γ^T`), plus a money-market rate `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantVolMarket {
    pub mu: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub r: f64,
}

impl ConstantVolMarket {
    pub fn single(mu: f64, sigma: f64, r: f64) -> Self {
        ConstantVolMarket {
            mu: vec![mu],
            gamma: vec![vec![sigma]],
            r,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        let n = self.mu.len();
        let m = self.gamma.first().map_or(0, Vec::len);
        DMatrix::from_fn(n.min(self.gamma.len()), m, |i, k| {
            self.gamma[i].get(k).copied().unwrap_or(f64::NAN)
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let g = self.gamma_matrix();
        &g * g.transpose()
    }
}

impl Validate for ConstantVolMarket {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.mu.len();
        if n == 0 {
            out.push(Violation::new("mu", "at least one asset required"));
            return out;
        }
        check_finite("r", self.r, &mut out);
        if self.mu.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new("mu", "must be finite"));
        }
        if self.gamma.len() != n || self.gamma.iter().any(|row| row.len() != n) {
            out.push(Violation::new("gamma", format!("must be {n}x{n}")));
            return out;
        }
        if self.gamma.iter().flatten().any(|v| !v.is_finite()) {
            out.push(Violation::new("gamma", "must be finite"));
            return out;
        }
        if semidefinite_cholesky(&self.covariance())
            .map(|c| (0..n).any(|i| c[(i, i)] == 0.0))
            .unwrap_or(true)
        {
            out.push(Violation::new("gamma", "V not positive definite"));
        }
        out
    }
}

/// Open interval of admissible factor values; `None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorDomain {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl FactorDomain {
    pub const REAL_LINE: FactorDomain = FactorDomain {
        lower: None,
        upper: None,
    };
    pub const POSITIVE: FactorDomain = FactorDomain {
        lower: Some(0.0),
        upper: None,
    };

    pub fn contains(&self, x: f64) -> bool {
        x.is_finite()
            && self.lower.map_or(true, |lo| x > lo)
            && self.upper.map_or(true, |hi| x < hi)
    }

    /// Interior validation grid. Unbounded ends are covered geometrically
    /// out to 10^3 around the finite end (or around 0).
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let span = 1e3;
        match (self.lower, self.upper) {
            (Some(lo), Some(hi)) => (1..=n)
                .map(|i| lo + (hi - lo) * i as f64 / (n + 1) as f64)
                .collect(),
            (Some(lo), None) => geometric(1e-3, span, n).into_iter().map(|d| lo + d).collect(),
            (None, Some(hi)) => geometric(1e-3, span, n).into_iter().map(|d| hi - d).collect(),
            (None, None) => (0..n)
                .map(|i| -span + 2.0 * span * i as f64 / (n - 1).max(1) as f64)
                .collect(),
        }
    }
}

impl fmt::Display for FactorDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lo = self.lower.map_or("-inf".to_string(), |v| v.to_string());
        let hi = self.upper.map_or("inf".to_string(), |v| v.to_string());
        write!(f, "({lo}, {hi})")
    }
}

/// `n` points geometrically spaced over `[lo, hi]`.
pub fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo; n];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    out[0] = lo;
    out[n - 1] = hi;
    out
}

/// Risky asset whose drift and volatility depend on a scalar factor `X`:
///
/// ```text
/// dS/S = mu(X) dt + sigma(X) ∘ dW^S
/// dX   = b(X) dt  + nu(X)    ∘ dW^X,   d<W^S, W^X> = rho_corr dt
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorMarket {
    pub mu_fn: ScalarFn,
    pub sigma_fn: ScalarFn,
    pub b_fn: ScalarFn,
    pub nu_fn: ScalarFn,
    pub rho_corr: f64,
    pub r: f64,
    pub domain: FactorDomain,
    /// Initial factor value for simulation.
    pub x0: f64,
}

impl FactorMarket {
    pub fn check_domain(&self, x: f64) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: x,
                domain: self.domain.to_string(),
            })
        }
    }

    /// Itô drift of the factor: `b(x) + alpha * nu(x) * nu'(x)`.
    pub fn factor_ito_drift(&self, alpha: Interpretation, x: f64) -> Result<f64> {
        let b = self.b_fn.eval(x)?;
        if alpha.is_ito() {
            return Ok(b);
        }
        Ok(b + alpha.alpha() * self.nu_fn.eval(x)? * self.nu_fn.derivative(x)?)
    }
}

impl Validate for FactorMarket {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        check_rho_corr(self.rho_corr, &mut out);
        check_finite("r", self.r, &mut out);
        if let (Some(lo), Some(hi)) = (self.domain.lower, self.domain.upper) {
            if !(lo < hi) {
                out.push(Violation::new("domain", "empty interval"));
                return out;
            }
        }
        if !self.domain.contains(self.x0) {
            out.push(Violation::new("x0", format!("outside domain {}", self.domain)));
        }
        // A sign change between grid points brackets a zero.
        let mut prev: Option<f64> = None;
        let bad_sigma = self.domain.grid(DOMAIN_GRID_POINTS).into_iter().find(|&x| {
            match self.sigma_fn.eval(x) {
                Ok(s) if s != 0.0 && s.is_finite() => {
                    let flipped = prev.is_some_and(|p| p.signum() != s.signum());
                    prev = Some(s);
                    flipped
                }
                _ => true,
            }
        });
        if let Some(x) = bad_sigma {
            out.push(Violation::new(
                "sigma_fn",
                format!("sigma must be finite and nonzero on the domain (fails at {x})"),
            ));
        }
        out
    }
}

/// Heston market with the variance as the factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HestonMarket {
    pub mu: f64,
    pub r: f64,
    pub kappa: f64,
    pub long_run_mean: f64,
    pub xi: f64,
    pub rho_corr: f64,
    pub v0: f64,
}

impl HestonMarket {
    /// The same market in generic factor form:
    /// `sigma(v) = sqrt(v)`, `b(v) = kappa (theta - v)`, `nu(v) = xi sqrt(v)`.
    pub fn to_factor_market(&self) -> FactorMarket {
        FactorMarket {
            mu_fn: ScalarFn::constant(self.mu),
            sigma_fn: ScalarFn::sqrt(1.0),
            b_fn: ScalarFn::Affine {
                intercept: self.kappa * self.long_run_mean,
                slope: -self.kappa,
            },
            nu_fn: ScalarFn::sqrt(self.xi),
            rho_corr: self.rho_corr,
            r: self.r,
            domain: FactorDomain::POSITIVE,
            x0: self.v0,
        }
    }
}

impl Validate for HestonMarket {
    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, v) in [("mu", self.mu), ("r", self.r)] {
            check_finite(name, v, &mut out);
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("long_run_mean", self.long_run_mean),
            ("xi", self.xi),
            ("v0", self.v0),
        ] {
            if check_finite(name, v, &mut out) && v <= 0.0 {
                out.push(Violation::new(name, "must be strictly positive"));
            }
        }
        check_rho_corr(self.rho_corr, &mut out);
        out
    }
}

/// Itô-form square-root variance parameters:
/// `dV = kappa (theta_alpha - V) dt + xi sqrt(V) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub kappa: f64,
    pub theta_alpha: f64,
    pub xi: f64,
}

impl CirParams {
    pub fn new(kappa: f64, theta_alpha: f64, xi: f64) -> Result<Self> {
        for (name, v) in [("kappa", kappa), ("theta_alpha", theta_alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::parameter(name, "must be strictly positive"));
            }
        }
        if !(xi >= 0.0 && xi.is_finite()) {
            return Err(Error::parameter("xi", "must be nonnegative"));
        }
        Ok(CirParams {
            kappa,
            theta_alpha,
            xi,
        })
    }
}

/// Itô-form Heston: return drift `mu + alpha rho xi / 2` and long-run
/// variance `theta + alpha xi^2 / (2 kappa)`.
pub fn heston_ito_form(m: &HestonMarket, alpha: Interpretation) -> (f64, CirParams) {
    let a = alpha.alpha();
    let mu_eff = m.mu + a * m.rho_corr * m.xi / 2.0;
    let theta_alpha = m.long_run_mean + a * m.xi * m.xi / (2.0 * m.kappa);
    (
        mu_eff,
        CirParams {
            kappa: m.kappa,
            theta_alpha,
            xi: m.xi,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FellerCheck {
    pub pass: bool,
    /// `2 kappa theta_alpha - xi^2`
    pub margin: f64,
}

pub fn feller_check(cir: &CirParams) -> FellerCheck {
    let margin = 2.0 * cir.kappa * cir.theta_alpha - cir.xi * cir.xi;
    FellerCheck {
        pass: margin >= 0.0,
        margin,
    }
}

/// Any supported market, tagged by `type` in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Market {
    ConstantVol(ConstantVolMarket),
    Factor(FactorMarket),
    Heston(HestonMarket),
}

impl Market {
    pub fn r(&self) -> f64 {
        match self {
            Market::ConstantVol(m) => m.r,
            Market::Factor(m) => m.r,
            Market::Heston(m) => m.r,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Market::ConstantVol(_) => "constant_vol",
            Market::Factor(_) => "factor",
            Market::Heston(_) => "heston",
        }
    }
}

impl Validate for Market {
    fn validate(&self) -> Vec<Violation> {
        match self {
            Market::ConstantVol(m) => m.validate(),
            Market::Factor(m) => m.validate(),
            Market::Heston(m) => m.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn heston() -> HestonMarket {
        HestonMarket {
            mu: 0.08,
            r: 0.03,
            kappa: 2.0,
            long_run_mean: 0.04,
            xi: 0.3,
            rho_corr: -0.7,
            v0: 0.04,
        }
    }

    #[test]
    fn heston_ito_examples() {
        let m = heston();
        let (mu0, cir0) = heston_ito_form(&m, Interpretation::ITO);
        assert_eq!(mu0, m.mu);
        assert_eq!(cir0, CirParams::new(2.0, 0.04, 0.3).unwrap());

        let (mu1, cir1) = heston_ito_form(&m, Interpretation::KLIMONTOVICH);
        assert_abs_diff_eq!(mu1, -0.025, epsilon = 1e-15);
        assert_abs_diff_eq!(cir1.theta_alpha, 0.0625, epsilon = 1e-15);
    }

    #[test]
    fn feller_examples() {
        let f = feller_check(&CirParams::new(2.0, 0.0625, 0.3).unwrap());
        assert!(f.pass);
        assert_abs_diff_eq!(f.margin, 0.16, epsilon = 1e-15);

        let f = feller_check(&CirParams::new(1.0, 0.005, 0.2).unwrap());
        assert!(!f.pass);
        assert_abs_diff_eq!(f.margin, -0.03, epsilon = 1e-15);

        assert!(feller_check(&CirParams::new(1.0, 0.01, 0.0).unwrap()).pass);
    }

    #[test]
    fn theta_alpha_and_feller_are_monotone_in_alpha() {
        let m = HestonMarket {
            long_run_mean: 0.01,
            ..heston()
        };
        let mut prev = f64::NEG_INFINITY;
        let mut passed = false;
        for i in 0..=20 {
            let a = Interpretation::new(i as f64 / 20.0).unwrap();
            let (_, cir) = heston_ito_form(&m, a);
            assert!(cir.theta_alpha > prev);
            prev = cir.theta_alpha;
            let f = feller_check(&cir);
            assert!(!(passed && !f.pass));
            passed |= f.pass;
        }
        assert!(passed);
    }

    #[test]
    fn validation_messages() {
        assert!(heston().validate().is_empty());

        let singular = ConstantVolMarket {
            mu: vec![0.05, 0.06],
            gamma: vec![vec![0.2, 0.1], vec![0.0, 0.0]],
            r: 0.02,
        };
        let v = singular.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, "V not positive definite");

        let bad_rho = HestonMarket {
            rho_corr: 1.2,
            ..heston()
        };
        let v = bad_rho.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "rho_corr");
        assert_eq!(v[0].constraint, "rho_corr out of [-1,1]");

        let neg = HestonMarket {
            kappa: -1.0,
            v0: 0.0,
            ..heston()
        };
        assert_eq!(neg.validate().len(), 2);
    }

    #[test]
    fn factor_validation_samples_sigma() {
        let mut fm = heston().to_factor_market();
        assert!(fm.validate().is_empty());
        fm.sigma_fn = ScalarFn::Affine {
            intercept: -1.0,
            slope: 1.0,
        };
        let v = fm.validate();
        assert!(v.iter().any(|x| x.field == "sigma_fn"));
        fm.sigma_fn = ScalarFn::constant(0.2);
        fm.x0 = -1.0;
        assert!(fm.validate().iter().any(|x| x.field == "x0"));
    }

    #[test]
    fn domain_grid_is_interior() {
        for d in [
            FactorDomain::POSITIVE,
            FactorDomain::REAL_LINE,
            FactorDomain {
                lower: Some(-1.0),
                upper: Some(2.0),
            },
        ] {
            let g = d.grid(DOMAIN_GRID_POINTS);
            assert_eq!(g.len(), DOMAIN_GRID_POINTS);
            assert!(g.iter().all(|&x| d.contains(x)), "{d}");
        }
    }
}
