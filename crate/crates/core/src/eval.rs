//! Verdicts from ensembles: discounted log utility with an analytic tail,
//! log-wealth moment checks, perturbation studies and cross-α tables.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interpretation::Interpretation;
use crate::market::{feller_check, heston_ito_form, FellerCheck, Market};
use crate::policy::{
    hjb_relative_residual, ito_excess_returns, log_wealth_moments, solve_constant_vol, solve_factor, solve_heston,
    LogValueFunction, Policy,
};
use crate::sim::{simulate_wealth, PathEnsemble, SimConfig};

/// Band width, in standard errors, of every statistical check.
pub const Z_BAND: f64 = 3.0;

/// Horizons with more than this discount mass left are flagged.
pub const SHORT_HORIZON_MASS: f64 = 0.5;

/// Minimum `rho * T` accepted when the tail is only approximate.
pub const MIN_RHO_T_APPROX_TAIL: f64 = 5.0;

/// Relative HJB residual accepted in comparison rows.
pub const HJB_TOLERANCE: f64 = 1e-10;

/// Smallest ensemble accepted by the moment checks.
pub const MIN_PATHS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilityEstimate {
    pub point_estimate: f64,
    pub standard_error: f64,
    pub n_paths: usize,
    pub horizon: f64,
    /// Mean of the per-path analytic tails beyond the horizon.
    pub tail_correction: f64,
    /// `e^{-rho T}` exceeds [`SHORT_HORIZON_MASS`].
    pub short_horizon_warning: bool,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn log_wealth_coord(e: &PathEnsemble) -> Result<usize> {
    e.coord_index("log_wealth")
        .ok_or_else(|| Error::parameter("ensemble", "no log_wealth coordinate"))
}

/// Expected discounted utility `E ∫ e^{-rho s} ln(c_s) ds` with
/// `c_s = rho_c a_s`: trapezoid over the saved grid, then per path the tail
/// `e^{-rho T} [(ln rho_c + ln a_T) / rho + g / rho^2]` for log-wealth drift `g`.
pub fn estimate_utility(ensemble: &PathEnsemble, policy: &Policy, rho: f64, g: f64) -> Result<UtilityEstimate> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::parameter("rho", "must be strictly positive"));
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("log-wealth drift"));
    }
    let ln_c = policy.consumption_fraction.ln();
    if !ln_c.is_finite() {
        return Err(Error::parameter("consumption_fraction", "must be strictly positive"));
    }
    let coord = log_wealth_coord(ensemble)?;
    let times = ensemble.times();
    let horizon = *times.last().unwrap();
    let weights: Vec<f64> = times.iter().map(|t| (-rho * t).exp()).collect();
    let end_mass = weights[weights.len() - 1];

    let mut per_path = Vec::with_capacity(ensemble.n_paths());
    let mut tail_sum = 0.0;
    for p in 0..ensemble.n_paths() {
        let mut integral = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        let mut last_y = 0.0;
        for (k, y) in ensemble.series(p, coord).enumerate() {
            let f = weights[k] * (ln_c + y);
            if let Some((t0, f0)) = prev {
                integral += 0.5 * (times[k] - t0) * (f0 + f);
            }
            prev = Some((times[k], f));
            last_y = y;
        }
        let tail = end_mass * ((ln_c + last_y) / rho + g / (rho * rho));
        tail_sum += tail;
        per_path.push(integral + tail);
    }
    let (point_estimate, standard_error) = mean_and_se(&per_path);
    Ok(UtilityEstimate {
        point_estimate,
        standard_error,
        n_paths: per_path.len(),
        horizon,
        tail_correction: tail_sum / per_path.len() as f64,
        short_horizon_warning: end_mass > SHORT_HORIZON_MASS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogDriftReport {
    pub sample_mean: f64,
    pub expected_mean: f64,
    pub z_mean: f64,
    pub sample_variance: f64,
    pub expected_variance: f64,
    pub z_variance: f64,
    pub pass: bool,
}

/// Compares the mean and variance of `ln a_T - ln a_0` with
/// `expected_drift * T` and `expected_diffusion^2 * T`.
pub fn log_drift_check(ensemble: &PathEnsemble, expected_drift: f64, expected_diffusion: f64) -> Result<LogDriftReport> {
    let n = ensemble.n_paths();
    if n < MIN_PATHS {
        return Err(Error::DegenerateEnsemble { n_paths: n, min: MIN_PATHS });
    }
    let coord = log_wealth_coord(ensemble)?;
    let horizon = *ensemble.times().last().unwrap();
    let y: Vec<f64> = ensemble
        .terminal(coord)
        .into_iter()
        .enumerate()
        .map(|(p, y)| y - ensemble.state(p, 0)[coord])
        .collect();
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let expected_mean = expected_drift * horizon;
    let expected_variance = expected_diffusion * expected_diffusion * horizon;

    let z = |diff: f64, scale: f64| if scale > 0.0 { diff / scale } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    let z_mean = z(mean - expected_mean, (var / nf).sqrt());
    let (z_variance, var_ok) = if expected_variance == 0.0 {
        (z(var, 0.0), var <= 1e-20)
    } else {
        let band = (2.0 / (nf - 1.0)).sqrt() * expected_variance;
        let zv = (var - expected_variance) / band;
        (zv, zv.abs() <= Z_BAND)
    };
    let mean_ok = if expected_variance == 0.0 {
        (mean - expected_mean).abs() <= 1e-9 * (1.0 + expected_mean.abs())
    } else {
        z_mean.abs() <= Z_BAND
    };
    Ok(LogDriftReport {
        sample_mean: mean,
        expected_mean,
        z_mean,
        sample_variance: var,
        expected_variance,
        z_variance,
        pass: mean_ok && var_ok,
    })
}

/// Drift of `E[ln a_t]` used for the utility tail, and whether it is exact.
/// Constant-vol markets give the exact constant; factor markets use the rule
/// at the initial factor value and Heston at the long-run variance.
pub fn asymptotic_log_drift(market: &Market, alpha: Interpretation, policy: &Policy) -> Result<(f64, bool)> {
    let c = policy.consumption_fraction;
    match market {
        Market::ConstantVol(m) => Ok((log_wealth_moments(m, alpha, policy)?.0, true)),
        Market::Factor(m) => {
            let x = m.x0;
            let theta = policy.rule.weight_at(x)?;
            let mu_eff = crate::calculus::effective_drift_factor(m, alpha, x)?;
            let s = m.sigma_fn.eval(x)?;
            Ok((m.r - c + theta * (mu_eff - m.r) - 0.5 * theta * theta * s * s, false))
        }
        Market::Heston(m) => {
            let (mu_eff, cir) = heston_ito_form(m, alpha);
            let v = cir.theta_alpha;
            let theta = policy.rule.weight_at(v)?;
            Ok((m.r - c + theta * (mu_eff - m.r) - 0.5 * theta * theta * v, false))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationPoint {
    pub delta: f64,
    pub estimate: UtilityEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationStudy {
    pub points: Vec<PerturbationPoint>,
    /// The unperturbed estimate is the largest.
    pub zero_is_max: bool,
    /// Vertex of the least-squares quadratic through the estimates, when
    /// the fit is concave.
    pub vertex: Option<f64>,
}

/// Utility of `base_policy` with every weight moved by each of `deltas`,
/// all on the same random numbers.
pub fn perturbation_study(
    market: &Market,
    alpha: Interpretation,
    base_policy: &Policy,
    deltas: &[f64],
    cfg: &SimConfig,
    rho: f64,
    a0: f64,
) -> Result<PerturbationStudy> {
    if !deltas.contains(&0.0) {
        return Err(Error::parameter("deltas", "must include 0"));
    }
    let mut points = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let policy = base_policy.perturbed(delta);
        let ensemble = simulate_wealth(market, alpha, &policy, a0, cfg)?;
        let (g, _) = asymptotic_log_drift(market, alpha, &policy)?;
        let estimate = estimate_utility(&ensemble, &policy, rho, g)?;
        points.push(PerturbationPoint { delta, estimate });
    }
    let at_zero = points.iter().find(|p| p.delta == 0.0).unwrap().estimate.point_estimate;
    let zero_is_max = points.iter().all(|p| p.estimate.point_estimate <= at_zero);
    let vertex = quadratic_vertex(
        &points.iter().map(|p| p.delta).collect::<Vec<_>>(),
        &points.iter().map(|p| p.estimate.point_estimate).collect::<Vec<_>>(),
    );
    Ok(PerturbationStudy {
        points,
        zero_is_max,
        vertex,
    })
}

/// Least-squares fit `y = a x^2 + b x + c`; returns `-b / 2a` when `a < 0`.
pub fn quadratic_vertex(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 3 || x.len() != y.len() {
        return None;
    }
    let design = nalgebra::DMatrix::from_fn(x.len(), 3, |i, j| x[i].powi(2 - j as i32));
    let rhs = nalgebra::DVector::from_column_slice(y);
    let coef = design.svd(true, true).solve(&rhs, 1e-12).ok()?;
    if coef[0] < 0.0 {
        Some(-coef[1] / (2.0 * coef[0]))
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub alpha: f64,
    /// Risky weights; state-dependent rules are evaluated at the initial
    /// factor value.
    pub weights: Vec<f64>,
    pub beta0: Option<f64>,
    pub j_closed: Option<f64>,
    pub j_mc: Option<f64>,
    pub j_se: Option<f64>,
    pub hjb_residual: Option<f64>,
    pub mc_pass: Option<bool>,
    pub hjb_pass: Option<bool>,
    /// SE above one percent of `max(1, |J|)`.
    pub se_too_wide: bool,
    pub short_horizon_warning: bool,
    pub tail_exact: bool,
    pub discount_mass: f64,
    pub feller: Option<FellerCheck>,
    pub truncation_fraction: f64,
    pub flagged_paths: usize,
    pub error: Option<String>,
}

impl ComparisonRow {
    fn empty(alpha: f64) -> Self {
        ComparisonRow {
            alpha,
            weights: Vec::new(),
            beta0: None,
            j_closed: None,
            j_mc: None,
            j_se: None,
            hjb_residual: None,
            mc_pass: None,
            hjb_pass: None,
            se_too_wide: false,
            short_horizon_warning: false,
            tail_exact: false,
            discount_mass: f64::NAN,
            feller: None,
            truncation_fraction: 0.0,
            flagged_paths: 0,
            error: None,
        }
    }

    /// Every available check passed and the row carries no error.
    pub fn pass(&self) -> bool {
        self.error.is_none() && self.mc_pass.unwrap_or(true) && self.hjb_pass.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub market: String,
    pub rows: Vec<ComparisonRow>,
}

/// One solved, simulated and checked row per α. Row failures are recorded in
/// the row rather than aborting the table.
pub fn compare_interpretations(
    market: &Market,
    alphas: &[Interpretation],
    rho: f64,
    a0: f64,
    cfg: &SimConfig,
) -> Result<ComparisonTable> {
    if alphas.is_empty() {
        return Err(Error::parameter("alphas", "at least one interpretation required"));
    }
    let rows = alphas
        .iter()
        .map(|&alpha| {
            let mut row = ComparisonRow::empty(alpha.alpha());
            if let Err(e) = fill_row(&mut row, market, alpha, rho, a0, cfg) {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect();
    Ok(ComparisonTable {
        market: market.kind().to_string(),
        rows,
    })
}

fn fill_row(
    row: &mut ComparisonRow,
    market: &Market,
    alpha: Interpretation,
    rho: f64,
    a0: f64,
    cfg: &SimConfig,
) -> Result<()> {
    let mut value: Option<LogValueFunction> = None;
    let policy = match market {
        Market::ConstantVol(m) => {
            let (p, v) = solve_constant_vol(m, rho, alpha)?;
            value = Some(v);
            p
        }
        Market::Factor(m) => solve_factor(m, rho, alpha)?,
        Market::Heston(m) => {
            row.feller = Some(feller_check(&heston_ito_form(m, alpha).1));
            solve_heston(m, rho, alpha)?
        }
    };
    row.weights = match (&policy.constant_weights(), market) {
        (Some(w), _) => w.clone(),
        (None, Market::Factor(m)) => vec![policy.rule.weight_at(m.x0)?],
        (None, Market::Heston(m)) => vec![policy.rule.weight_at(m.v0)?],
        (None, Market::ConstantVol(_)) => unreachable!("constant-vol policies have constant weights"),
    };

    let (g, exact) = asymptotic_log_drift(market, alpha, &policy)?;
    row.tail_exact = exact;
    row.discount_mass = (-rho * cfg.horizon).exp();
    if !exact && rho * cfg.horizon < MIN_RHO_T_APPROX_TAIL {
        return Err(Error::parameter(
            "horizon",
            format!("rho * T must be at least {MIN_RHO_T_APPROX_TAIL} when the utility tail is approximate"),
        ));
    }

    if let (Market::ConstantVol(m), Some(v)) = (market, value) {
        row.beta0 = Some(v.beta0);
        row.j_closed = Some(v.value(a0, 0.0));
        let mu_ito = ito_excess_returns(m, alpha)?.add_scalar(m.r);
        let res = hjb_relative_residual(&mu_ito, &m.covariance(), m.r, &policy, &v, a0, 0.0)?;
        row.hjb_residual = Some(res);
        row.hjb_pass = Some(res.abs() <= HJB_TOLERANCE);
    }

    let ensemble = simulate_wealth(market, alpha, &policy, a0, cfg)?;
    row.truncation_fraction = ensemble.meta.truncation_fraction();
    row.flagged_paths = ensemble.meta.flagged_paths.len();
    let est = estimate_utility(&ensemble, &policy, rho, g)?;
    row.j_mc = Some(est.point_estimate);
    row.j_se = Some(est.standard_error);
    row.short_horizon_warning = est.short_horizon_warning;
    let scale = row.j_closed.unwrap_or(est.point_estimate).abs().max(1.0);
    row.se_too_wide = est.standard_error > 0.01 * scale;
    if let Some(j) = row.j_closed {
        row.mc_pass = Some((est.point_estimate - j).abs() <= Z_BAND * est.standard_error);
    }
    Ok(())
}
