//! Closed-form log-utility consumption/investment rules, the log value
//! function and the HJB residual used to verify them.
//!
//! Under log utility the optimal rules are myopic: consume `rho * a` and hold
//! the mean-variance weights built from the Itô excess return. The
//! interpretation enters only through that excess return.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::calculus::{effective_drift_factor, ito_drift_diagonal_multiplicative};
use crate::error::{Error, Result};
use crate::interpretation::Interpretation;
use crate::linalg::symmetric_condition;
use crate::market::{heston_ito_form, ConstantVolMarket, FactorMarket, HestonMarket, Validate};

/// Covariance matrices at or above this condition estimate are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Fraction of wealth held in the risky asset(s).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskyRule {
    Constant { weights: Vec<f64> },
    /// `excess_return / v`, the Heston rule as a function of variance `v`.
    InverseVariance { excess_return: f64 },
    /// `(mu_eff(x) - r) / sigma(x)^2` with the factor-market Itô drift.
    Factor {
        market: FactorMarket,
        alpha: Interpretation,
    },
    /// `base(x) + offset`
    Shifted { base: Box<RiskyRule>, offset: f64 },
}

impl RiskyRule {
    /// Weight at factor value `x` for single-risky-asset rules.
    pub fn weight_at(&self, x: f64) -> Result<f64> {
        match self {
            RiskyRule::Constant { weights } => match weights.as_slice() {
                [w] => Ok(*w),
                _ => Err(Error::Dimension {
                    axis: "risky weights",
                    expected: 1,
                    found: weights.len(),
                }),
            },
            RiskyRule::InverseVariance { excess_return } => {
                if !(x > 0.0) {
                    return Err(Error::Domain {
                        value: x,
                        domain: "(0, inf)".into(),
                    });
                }
                Ok(excess_return / x)
            }
            RiskyRule::Factor { market, alpha } => {
                let mu_eff = effective_drift_factor(market, *alpha, x)?;
                let s = market.sigma_fn.eval(x)?;
                Ok((mu_eff - market.r) / (s * s))
            }
            RiskyRule::Shifted { base, offset } => Ok(base.weight_at(x)? + offset),
        }
    }

    /// Weights of a state-independent rule.
    pub fn constant_weights(&self) -> Option<Vec<f64>> {
        match self {
            RiskyRule::Constant { weights } => Some(weights.clone()),
            RiskyRule::Shifted { base, offset } => base
                .constant_weights()
                .map(|w| w.into_iter().map(|x| x + offset).collect()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Policy {
    /// Consumption per unit wealth per unit time.
    pub consumption_fraction: f64,
    pub rule: RiskyRule,
}

impl Policy {
    pub fn constant(consumption_fraction: f64, weights: Vec<f64>) -> Self {
        Policy {
            consumption_fraction,
            rule: RiskyRule::Constant { weights },
        }
    }

    /// The same policy with every risky weight moved by `delta`.
    pub fn perturbed(&self, delta: f64) -> Policy {
        let rule = match &self.rule {
            RiskyRule::Constant { weights } => RiskyRule::Constant {
                weights: weights.iter().map(|w| w + delta).collect(),
            },
            other => RiskyRule::Shifted {
                base: Box::new(other.clone()),
                offset: delta,
            },
        };
        Policy {
            consumption_fraction: self.consumption_fraction,
            rule,
        }
    }

    pub fn constant_weights(&self) -> Option<Vec<f64>> {
        self.rule.constant_weights()
    }
}

/// `J(a, t) = (beta0 + ln(a) / rho) * exp(-rho t)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogValueFunction {
    pub beta0: f64,
    pub rho: f64,
    pub r: f64,
}

impl LogValueFunction {
    /// `beta0` for excess-return quadratic form `q = λ^T V^{-1} λ`.
    pub fn from_quadratic_form(r: f64, rho: f64, q: f64) -> Self {
        let beta0 = (r / rho + rho.ln() - 1.0) / rho + q / (2.0 * rho * rho);
        LogValueFunction { beta0, rho, r }
    }

    pub fn value(&self, a: f64, t: f64) -> f64 {
        (self.beta0 + a.ln() / self.rho) * (-self.rho * t).exp()
    }

    pub fn d_wealth(&self, a: f64, t: f64) -> f64 {
        (-self.rho * t).exp() / (self.rho * a)
    }

    pub fn d2_wealth(&self, a: f64, t: f64) -> f64 {
        -(-self.rho * t).exp() / (self.rho * a * a)
    }

    pub fn d_time(&self, a: f64, t: f64) -> f64 {
        -self.rho * self.value(a, t)
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::parameter(name, format!("{v} must be strictly positive")))
    }
}

/// One risky asset `dS/S = mu dt + sigma ∘_alpha dW`.
pub fn solve_single_asset(
    mu: f64,
    sigma: f64,
    r: f64,
    rho: f64,
    alpha: Interpretation,
) -> Result<(Policy, LogValueFunction)> {
    check_positive("sigma", sigma)?;
    check_positive("rho", rho)?;
    if !mu.is_finite() || !r.is_finite() {
        return Err(Error::NonFinite("drift or rate"));
    }
    let var = sigma * sigma;
    let weight = (mu - r) / var + alpha.alpha();
    let excess = mu + alpha.alpha() * var - r;
    let value = LogValueFunction::from_quadratic_form(r, rho, excess * excess / var);
    Ok((Policy::constant(rho, vec![weight]), value))
}

/// Itô excess returns `mu + alpha diag(V) - r 1` of a constant-vol market.
pub fn ito_excess_returns(market: &ConstantVolMarket, alpha: Interpretation) -> Result<DVector<f64>> {
    let mu_ito = ito_drift_diagonal_multiplicative(&market.mu_vector(), &market.gamma_matrix(), alpha)?;
    Ok(mu_ito.add_scalar(-market.r))
}

/// `n` risky assets: weights solve `V θ = μ^Itô - r 1` through a Cholesky
/// factor of `V`.
pub fn solve_n_asset(
    market: &ConstantVolMarket,
    rho: f64,
    alpha: Interpretation,
) -> Result<(Policy, LogValueFunction)> {
    check_positive("rho", rho)?;
    market.ensure_valid()?;
    let v = market.covariance();
    let condition = symmetric_condition(&v);
    if !(condition < MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let chol = v
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("covariance".into()))?;
    let excess = ito_excess_returns(market, alpha)?;
    let theta = chol.solve(&excess);
    let q = excess.dot(&theta);
    let value = LogValueFunction::from_quadratic_form(market.r, rho, q);
    Ok((Policy::constant(rho, theta.iter().copied().collect()), value))
}

/// Any constant-vol market. One asset with one driver goes through
/// [`solve_single_asset`], which keeps the interpretation shift exact.
pub fn solve_constant_vol(
    market: &ConstantVolMarket,
    rho: f64,
    alpha: Interpretation,
) -> Result<(Policy, LogValueFunction)> {
    match (market.mu.as_slice(), market.gamma.as_slice()) {
        ([mu], [row]) if row.len() == 1 => {
            market.ensure_valid()?;
            solve_single_asset(*mu, row[0].abs(), market.r, rho, alpha)
        }
        _ => solve_n_asset(market, rho, alpha),
    }
}

/// Factor-driven market: `x -> (mu_eff(x) - r) / sigma(x)^2`.
pub fn solve_factor(market: &FactorMarket, rho: f64, alpha: Interpretation) -> Result<Policy> {
    check_positive("rho", rho)?;
    market.ensure_valid()?;
    Ok(Policy {
        consumption_fraction: rho,
        rule: RiskyRule::Factor {
            market: market.clone(),
            alpha,
        },
    })
}

/// Heston market: `v -> (mu + alpha rho xi / 2 - r) / v`.
pub fn solve_heston(market: &HestonMarket, rho: f64, alpha: Interpretation) -> Result<Policy> {
    check_positive("rho", rho)?;
    market.ensure_valid()?;
    let (mu_eff, _) = heston_ito_form(market, alpha);
    Ok(Policy {
        consumption_fraction: rho,
        rule: RiskyRule::InverseVariance {
            excess_return: mu_eff - market.r,
        },
    })
}

/// Drift and variance rate of `ln a` under a constant policy in a
/// constant-vol market: `r + θ^T λ - c - θ^T V θ / 2` and `θ^T V θ`.
pub fn log_wealth_moments(
    market: &ConstantVolMarket,
    alpha: Interpretation,
    policy: &Policy,
) -> Result<(f64, f64)> {
    let theta = constant_theta(policy, market.n_assets())?;
    let excess = ito_excess_returns(market, alpha)?;
    let v = market.covariance();
    let quad = theta.dot(&(&v * &theta));
    let drift = market.r + theta.dot(&excess) - policy.consumption_fraction - 0.5 * quad;
    Ok((drift, quad))
}

fn constant_theta(policy: &Policy, n: usize) -> Result<DVector<f64>> {
    let w = policy.constant_weights().ok_or(Error::parameter(
        "policy",
        "state-dependent rule where constant weights are required",
    ))?;
    if w.len() != n {
        return Err(Error::Dimension {
            axis: "risky weights",
            expected: n,
            found: w.len(),
        });
    }
    Ok(DVector::from_vec(w))
}

/// HJB expression at the policy's controls for the present-value function
/// `J(a, t)`:
///
/// ```text
/// e^{-rho t} ln c + J_t + J_a (a (r + θ^T(μ^Itô - r1)) - c) + J_aa a² θ^T V θ / 2
/// ```
///
/// Zero at the optimal policy with the matching `beta0`, negative elsewhere.
pub fn hjb_residual(
    mu_ito: &DVector<f64>,
    cov: &DMatrix<f64>,
    r: f64,
    policy: &Policy,
    value: &LogValueFunction,
    a: f64,
    t: f64,
) -> Result<f64> {
    Ok(hjb_terms(mu_ito, cov, r, policy, value, a, t)?.iter().sum())
}

fn hjb_terms(
    mu_ito: &DVector<f64>,
    cov: &DMatrix<f64>,
    r: f64,
    policy: &Policy,
    value: &LogValueFunction,
    a: f64,
    t: f64,
) -> Result<[f64; 4]> {
    if !(a > 0.0) {
        return Err(Error::Domain {
            value: a,
            domain: "wealth (0, inf)".into(),
        });
    }
    let n = mu_ito.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::Dimension {
            axis: "covariance",
            expected: n,
            found: cov.nrows(),
        });
    }
    let theta = constant_theta(policy, n)?;
    let c = policy.consumption_fraction * a;
    if c < 0.0 {
        return Err(Error::parameter("consumption_fraction", "negative consumption"));
    }
    let discount = (-value.rho * t).exp();
    let excess = mu_ito.add_scalar(-r);
    let wealth_drift = a * (r + theta.dot(&excess)) - c;
    let quad = theta.dot(&(cov * &theta));
    Ok([
        discount * c.ln(),
        value.d_time(a, t),
        value.d_wealth(a, t) * wealth_drift,
        0.5 * value.d2_wealth(a, t) * a * a * quad,
    ])
}

/// [`hjb_residual`] divided by the sum of the magnitudes of its terms.
pub fn hjb_relative_residual(
    mu_ito: &DVector<f64>,
    cov: &DMatrix<f64>,
    r: f64,
    policy: &Policy,
    value: &LogValueFunction,
    a: f64,
    t: f64,
) -> Result<f64> {
    let terms = hjb_terms(mu_ito, cov, r, policy, value, a, t)?;
    let scale: f64 = terms.iter().map(|v| v.abs()).sum();
    let sum: f64 = terms.iter().sum();
    Ok(if scale > 0.0 { sum / scale } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn alpha(a: f64) -> Interpretation {
        Interpretation::new(a).unwrap()
    }

    #[test]
    fn single_asset_examples() {
        let (p0, _) = solve_single_asset(0.08, 0.2, 0.03, 0.1, Interpretation::ITO).unwrap();
        let (ph, _) = solve_single_asset(0.08, 0.2, 0.03, 0.1, Interpretation::STRATONOVICH).unwrap();
        let w0 = p0.constant_weights().unwrap()[0];
        assert_abs_diff_eq!(w0, 1.25, epsilon = 1e-15);
        assert_abs_diff_eq!(ph.constant_weights().unwrap()[0] - w0, 0.5, epsilon = 1e-15);
        assert_eq!(p0.consumption_fraction, 0.1);

        let (pz, vz) = solve_single_asset(0.03, 0.2, 0.03, 0.1, Interpretation::ITO).unwrap();
        assert_eq!(pz.constant_weights().unwrap(), vec![0.0]);
        assert_abs_diff_eq!(vz.beta0, (0.03 / 0.1 + 0.1f64.ln() - 1.0) / 0.1, epsilon = 1e-13);
    }

    #[test]
    fn single_asset_parameter_errors() {
        assert!(solve_single_asset(0.08, 0.0, 0.03, 0.1, Interpretation::ITO).is_err());
        assert!(solve_single_asset(0.08, 0.2, 0.03, -0.1, Interpretation::ITO).is_err());
    }

    #[test]
    fn n_asset_reduces_to_single() {
        for a in [0.0, 0.3, 1.0] {
            let m = ConstantVolMarket::single(0.07, 0.25, 0.02);
            let (pn, vn) = solve_n_asset(&m, 0.05, alpha(a)).unwrap();
            let (p1, v1) = solve_single_asset(0.07, 0.25, 0.02, 0.05, alpha(a)).unwrap();
            let (wn, w1) = (pn.constant_weights().unwrap()[0], p1.constant_weights().unwrap()[0]);
            assert!((wn - w1).abs() <= 1e-13 * w1.abs().max(1.0));
            assert!((vn.beta0 - v1.beta0).abs() <= 1e-12 * v1.beta0.abs());
        }
    }

    #[test]
    fn diagonal_market_decouples() {
        let m = ConstantVolMarket {
            mu: vec![0.06, 0.09],
            gamma: vec![vec![0.2, 0.0], vec![0.0, 0.35]],
            r: 0.01,
        };
        let (p, _) = solve_n_asset(&m, 0.1, alpha(0.4)).unwrap();
        let w = p.constant_weights().unwrap();
        assert_abs_diff_eq!(w[0], 0.05 / 0.04 + 0.4, epsilon = 1e-13);
        assert_abs_diff_eq!(w[1], 0.08 / 0.1225 + 0.4, epsilon = 1e-13);

        let flat = ConstantVolMarket {
            mu: vec![0.01, 0.01],
            ..m
        };
        let (p, _) = solve_n_asset(&flat, 0.1, Interpretation::ITO).unwrap();
        assert!(p.constant_weights().unwrap().iter().all(|w| w.abs() < 1e-15));
    }

    #[test]
    fn singular_covariance_is_refused() {
        let m = ConstantVolMarket {
            mu: vec![0.05, 0.05],
            gamma: vec![vec![0.2, 0.1], vec![0.4, 0.2]],
            r: 0.01,
        };
        assert!(solve_n_asset(&m, 0.1, Interpretation::ITO).is_err());

        // Positive definite but badly conditioned.
        let eps = 1e-7;
        let m = ConstantVolMarket {
            mu: vec![0.05, 0.05],
            gamma: vec![vec![1.0, 0.0], vec![1.0, eps]],
            r: 0.01,
        };
        assert!(matches!(
            solve_n_asset(&m, 0.1, Interpretation::ITO),
            Err(Error::IllConditioned { .. }) | Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn heston_rule() {
        let m = HestonMarket {
            mu: 0.08,
            r: 0.03,
            kappa: 2.0,
            long_run_mean: 0.04,
            xi: 0.3,
            rho_corr: -0.7,
            v0: 0.04,
        };
        let p = solve_heston(&m, 0.1, Interpretation::KLIMONTOVICH).unwrap();
        assert_abs_diff_eq!(p.rule.weight_at(0.04).unwrap(), -1.375, epsilon = 1e-13);
        let w1 = p.rule.weight_at(0.1).unwrap();
        let w2 = p.rule.weight_at(0.2).unwrap();
        assert_abs_diff_eq!(w1, 2.0 * w2, epsilon = 1e-15);
        assert!(p.rule.weight_at(0.0).is_err());

        let p0 = solve_heston(&m, 0.1, Interpretation::ITO).unwrap();
        assert_abs_diff_eq!(p0.rule.weight_at(0.05).unwrap(), 0.05 / 0.05, epsilon = 1e-15);
    }

    #[test]
    fn factor_rule_special_cases() {
        let heston = HestonMarket {
            mu: 0.08,
            r: 0.03,
            kappa: 2.0,
            long_run_mean: 0.04,
            xi: 0.3,
            rho_corr: 0.0,
            v0: 0.04,
        };
        let fm = heston.to_factor_market();
        let p = solve_factor(&fm, 0.1, Interpretation::KLIMONTOVICH).unwrap();
        for v in [0.01, 0.1, 1.0] {
            assert!((p.rule.weight_at(v).unwrap() - 0.05 / v).abs() <= 1e-14 / v);
        }

        let mut constant_vol = fm.clone();
        constant_vol.rho_corr = 0.6;
        constant_vol.sigma_fn = crate::calculus::ScalarFn::constant(0.2);
        let p = solve_factor(&constant_vol, 0.1, Interpretation::KLIMONTOVICH).unwrap();
        assert_abs_diff_eq!(p.rule.weight_at(0.3).unwrap(), 0.05 / 0.04, epsilon = 1e-13);
    }

    #[test]
    fn hjb_examples() {
        let (mu, sigma, r, rho) = (0.08, 0.2, 0.03, 0.1);
        let (p, v) = solve_single_asset(mu, sigma, r, rho, Interpretation::ITO).unwrap();
        let mu_ito = DVector::from_element(1, mu);
        let cov = DMatrix::from_element(1, 1, sigma * sigma);
        for a in [0.1, 1.0, 10.0, 100.0] {
            for t in [0.0, 1.0, 10.0] {
                let res = hjb_residual(&mu_ito, &cov, r, &p, &v, a, t).unwrap();
                assert!(res.abs() <= 1e-10 * (1.0 + v.beta0.abs()), "{res}");
            }
        }
        let bumped = p.perturbed(0.1);
        let res = hjb_residual(&mu_ito, &cov, r, &bumped, &v, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(res, -0.002, epsilon = 1e-12);

        for eps in [-0.05, 0.05] {
            let pc = Policy {
                consumption_fraction: rho + eps,
                ..p.clone()
            };
            assert!(hjb_residual(&mu_ito, &cov, r, &pc, &v, 2.0, 1.0).unwrap() < 0.0);
        }
        assert!(hjb_residual(&mu_ito, &cov, r, &p, &v, 0.0, 0.0).is_err());
    }

    #[test]
    fn value_function_shape() {
        let v = LogValueFunction::from_quadratic_form(0.03, 0.1, 0.0625);
        let grid: Vec<f64> = (1..50).map(|i| 0.1 * i as f64).collect();
        let j: Vec<f64> = grid.iter().map(|&a| v.value(a, 0.5)).collect();
        for w in j.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[2] - 2.0 * w[1] + w[0] < 0.0);
        }
    }
}
