use super::cir::cir_step;
use super::{run_ensemble, PathEnsemble, PathKernel, PathRng, Scheme, SimConfig, Stepper};
use crate::calculus::{convert, CoefficientField, FactorSystem};
use crate::error::{Error, Result};
use crate::interpretation::Interpretation;
use crate::market::{heston_ito_form, CirParams, FactorMarket, HestonMarket, Market, Validate};
use crate::policy::{log_wealth_moments, Policy, RiskyRule};

/// Constant coefficients: the log-wealth step is exact.
struct ConstantKernel {
    ln_a0: f64,
    drift: f64,
    loading: Vec<f64>,
    dt: f64,
}

impl PathKernel for ConstantKernel {
    fn dim(&self) -> usize {
        1
    }

    fn run(&self, rng: &mut PathRng, saved: &[usize], out: &mut [f64]) -> Result<u64> {
        let sdt = self.dt.sqrt();
        let last = *saved.last().unwrap();
        let mut y = self.ln_a0;
        let mut slot = 0;
        for k in 0..=last {
            if saved[slot] == k {
                out[slot] = y;
                slot += 1;
            }
            if k == last {
                break;
            }
            let mut noise = 0.0;
            for l in &self.loading {
                noise += l * rng.normal();
            }
            y += self.drift * self.dt + noise * sdt;
        }
        Ok(0)
    }
}

/// Log wealth and factor for a generic factor market. The return/factor
/// system is stepped with the configured scheme and the wealth picks up the
/// simulated return increment at the start-of-step weight.
struct FactorKernel<'a> {
    alpha_form: &'a FactorSystem,
    ito_form: crate::calculus::Converted<&'a FactorSystem>,
    alpha: Interpretation,
    scheme: Scheme,
    rule: &'a RiskyRule,
    consumption: f64,
    ln_a0: f64,
    dt: f64,
}

impl PathKernel for FactorKernel<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn run(&self, rng: &mut PathRng, saved: &[usize], out: &mut [f64]) -> Result<u64> {
        let market = self.alpha_form.market();
        let r = market.r;
        let sdt = self.dt.sqrt();
        let last = *saved.last().unwrap();
        let mut stepper = Stepper::new(2, 2);
        let mut x = [0.0, market.x0];
        let mut next = [0.0; 2];
        let mut dw = [0.0; 2];
        let mut y = self.ln_a0;
        let mut slot = 0;
        for k in 0..=last {
            if saved[slot] == k {
                out[2 * slot] = y;
                out[2 * slot + 1] = x[1];
                slot += 1;
            }
            if k == last {
                break;
            }
            let theta = self.rule.weight_at(x[1])?;
            let s = market.sigma_fn.eval(x[1])?;
            rng.fill_normal(&mut dw);
            dw.iter_mut().for_each(|z| *z *= sdt);
            match self.scheme {
                Scheme::ItoEuler => stepper.euler(&self.ito_form, &x, &dw, self.dt, &mut next)?,
                Scheme::AlphaPoint => {
                    stepper.alpha_point(self.alpha_form, self.alpha, &x, &dw, self.dt, &mut next)?
                }
            }
            market.check_domain(next[1])?;
            let d_ret = next[0] - x[0];
            y += (r - self.consumption - 0.5 * theta * theta * s * s) * self.dt + theta * (d_ret - r * self.dt);
            if !y.is_finite() {
                return Err(Error::NonFinite("log wealth"));
            }
            x = next;
        }
        Ok(0)
    }
}

/// Heston: full-truncation variance, policy evaluated at `max(v, 0)`.
/// Truncated steps carry no risky exposure.
struct HestonKernel<'a> {
    mu_eff: f64,
    r: f64,
    cir: CirParams,
    rho: f64,
    v0: f64,
    rule: &'a RiskyRule,
    consumption: f64,
    ln_a0: f64,
    dt: f64,
}

impl PathKernel for HestonKernel<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn run(&self, rng: &mut PathRng, saved: &[usize], out: &mut [f64]) -> Result<u64> {
        let sdt = self.dt.sqrt();
        let orth = (1.0 - self.rho * self.rho).max(0.0).sqrt();
        let last = *saved.last().unwrap();
        let mut v = self.v0;
        let mut y = self.ln_a0;
        let mut truncated = 0;
        let mut slot = 0;
        for k in 0..=last {
            let vp = v.max(0.0);
            if saved[slot] == k {
                out[2 * slot] = y;
                out[2 * slot + 1] = vp;
                slot += 1;
            }
            if k == last {
                break;
            }
            // The rule is singular at zero variance, which the scheme only
            // reaches through truncation; such steps hold no risky position.
            let theta = if vp > 0.0 { self.rule.weight_at(vp)? } else { 0.0 };
            let z1 = rng.normal();
            let z2 = rng.normal();
            let dws = z1 * sdt;
            let dwv = (self.rho * z1 + orth * z2) * sdt;
            y += (self.r + theta * (self.mu_eff - self.r) - self.consumption - 0.5 * theta * theta * vp) * self.dt
                + theta * vp.sqrt() * dws;
            if !y.is_finite() {
                return Err(Error::NonFinite("log wealth"));
            }
            v = cir_step(&self.cir, v, dwv, self.dt);
            if v < 0.0 {
                truncated += 1;
            }
        }
        Ok(truncated)
    }
}

/// Wealth paths under `policy`, stored as `ln a` in coordinate `log_wealth`.
/// Factor and Heston markets add a `factor` coordinate (the variance for
/// Heston). Heston variance always uses full-truncation Euler on the Itô form
/// regardless of `cfg.scheme`.
pub fn simulate_wealth(
    market: &Market,
    alpha: Interpretation,
    policy: &Policy,
    a0: f64,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    market.ensure_valid()?;
    if !(a0 > 0.0 && a0.is_finite()) {
        return Err(Error::parameter("a0", "must be strictly positive"));
    }
    let c = policy.consumption_fraction;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::parameter("consumption_fraction", "must be strictly positive"));
    }
    let ln_a0 = a0.ln();
    let label = format!("{}:alpha={}", market.kind(), alpha.alpha());
    match market {
        Market::ConstantVol(m) => {
            let (drift, _) = log_wealth_moments(m, alpha, policy)?;
            let theta = nalgebra::DVector::from_vec(policy.constant_weights().unwrap());
            let loading = m.gamma_matrix().transpose() * theta;
            let kernel = ConstantKernel {
                ln_a0,
                drift,
                loading: loading.iter().copied().collect(),
                dt: cfg.dt,
            };
            run_ensemble(&kernel, cfg, vec!["log_wealth".into()], label)
        }
        Market::Factor(m) => simulate_factor_wealth(m, alpha, policy, ln_a0, cfg, label),
        Market::Heston(m) => simulate_heston_wealth(m, alpha, policy, ln_a0, cfg, label),
    }
}

fn simulate_factor_wealth(
    m: &FactorMarket,
    alpha: Interpretation,
    policy: &Policy,
    ln_a0: f64,
    cfg: &SimConfig,
    label: String,
) -> Result<PathEnsemble> {
    let system = FactorSystem::new(m.clone())?;
    let kernel = FactorKernel {
        alpha_form: &system,
        ito_form: convert(&system, alpha, Interpretation::ITO),
        alpha,
        scheme: cfg.scheme,
        rule: &policy.rule,
        consumption: policy.consumption_fraction,
        ln_a0,
        dt: cfg.dt,
    };
    debug_assert_eq!(kernel.ito_form.state_dim(), 2);
    run_ensemble(&kernel, cfg, vec!["log_wealth".into(), "factor".into()], label)
}

fn simulate_heston_wealth(
    m: &HestonMarket,
    alpha: Interpretation,
    policy: &Policy,
    ln_a0: f64,
    cfg: &SimConfig,
    label: String,
) -> Result<PathEnsemble> {
    let (mu_eff, cir) = heston_ito_form(m, alpha);
    let kernel = HestonKernel {
        mu_eff,
        r: m.r,
        cir,
        rho: m.rho_corr,
        v0: m.v0,
        rule: &policy.rule,
        consumption: policy.consumption_fraction,
        ln_a0,
        dt: cfg.dt,
    };
    run_ensemble(&kernel, cfg, vec!["log_wealth".into(), "factor".into()], label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ConstantVolMarket;
    use crate::policy::solve_single_asset;

    #[test]
    fn riskless_policy_is_deterministic() {
        let m = Market::ConstantVol(ConstantVolMarket::single(0.08, 0.2, 0.03));
        let p = Policy::constant(0.1, vec![0.0]);
        let cfg = SimConfig::new(2.0, 0.01, 20, 5);
        let e = simulate_wealth(&m, Interpretation::ITO, &p, 2.0, &cfg).unwrap();
        let expected = 2.0f64.ln() + (0.03 - 0.1) * 2.0;
        for y in e.terminal(0) {
            assert!((y - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_log_drift() {
        let (mu, sigma, r, rho) = (0.08, 0.2, 0.02, 0.1);
        let a = Interpretation::STRATONOVICH;
        let (p, _) = solve_single_asset(mu, sigma, r, rho, a).unwrap();
        let m = Market::ConstantVol(ConstantVolMarket::single(mu, sigma, r));
        let cfg = SimConfig::new(1.0, 0.1, 20_000, 9);
        let e = simulate_wealth(&m, a, &p, 1.0, &cfg).unwrap();
        let y = e.terminal(0);
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let mu_ito = mu + 0.5 * sigma * sigma;
        let g = r - rho + 0.5 * (mu_ito - r).powi(2) / (sigma * sigma);
        let sd = (mu_ito - r) / sigma;
        assert!((mean - g).abs() < 3.0 * sd / n.sqrt());
    }

    #[test]
    fn factor_market_with_constant_coefficients_matches_gbm() {
        use crate::calculus::ScalarFn;
        use crate::market::FactorDomain;
        let fm = FactorMarket {
            mu_fn: ScalarFn::constant(0.07),
            sigma_fn: ScalarFn::constant(0.25),
            b_fn: ScalarFn::constant(0.0),
            nu_fn: ScalarFn::constant(0.1),
            rho_corr: 0.5,
            r: 0.01,
            domain: FactorDomain::REAL_LINE,
            x0: 0.0,
        };
        let p = Policy::constant(0.1, vec![0.8]);
        let cfg = SimConfig::new(1.0, 0.05, 4000, 3);
        let e = simulate_wealth(&Market::Factor(fm), Interpretation::ITO, &p, 1.0, &cfg).unwrap();
        let y = e.terminal(0);
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let g = 0.01 + 0.8 * 0.06 - 0.1 - 0.5 * 0.64 * 0.0625;
        assert!((mean - g).abs() < 3.0 * 0.8 * 0.25 / n.sqrt());
    }

    #[test]
    fn heston_variance_is_nonnegative() {
        let h = HestonMarket {
            mu: 0.06,
            r: 0.02,
            kappa: 2.0,
            long_run_mean: 0.04,
            xi: 0.3,
            rho_corr: -0.5,
            v0: 0.04,
        };
        let p = crate::policy::solve_heston(&h, 0.1, Interpretation::KLIMONTOVICH).unwrap();
        let cfg = SimConfig::new(2.0, 1e-3, 50, 1).with_save_every(100);
        let e = simulate_wealth(&Market::Heston(h), Interpretation::KLIMONTOVICH, &p, 1.0, &cfg).unwrap();
        assert_eq!(e.dim(), 2);
        assert!(e.raw_states().iter().skip(1).step_by(2).all(|&v| v >= 0.0));
    }
}
