use alpha_merton::calculus::{
    convert, correction_vector, effective_drift_factor, ito_drift_diagonal_multiplicative, CoefficientField,
    DiagonalMultiplicative, FactorSystem, FnField, ScalarFn,
};
use alpha_merton::market::{heston_ito_form, FactorDomain, FactorMarket, HestonMarket};
use alpha_merton::policy::{solve_factor, solve_heston, solve_single_asset, LogValueFunction};
use alpha_merton::Interpretation;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn interp() -> impl Strategy<Value = Interpretation> {
    (0.0..=1.0f64).prop_map(|a| Interpretation::new(a).unwrap())
}

/// `Σ_ik(x) = a_ik + b_ik sin(w_ik · x)` with its exact Jacobian.
fn trig_field(d: usize, m: usize, a: Vec<f64>, b: Vec<f64>, w: Vec<f64>) -> FnField {
    let (b2, w2) = (b.clone(), w.clone());
    let sigma = move |x: &[f64]| {
        DMatrix::from_fn(d, m, |i, k| {
            let idx = i * m + k;
            let phase: f64 = (0..d).map(|j| w[idx * d + j] * x[j]).sum();
            a[idx] + b[idx] * phase.sin()
        })
    };
    let jac = move |x: &[f64]| {
        (0..d)
            .map(|j| {
                DMatrix::from_fn(d, m, |i, k| {
                    let idx = i * m + k;
                    let phase: f64 = (0..d).map(|l| w2[idx * d + l] * x[l]).sum();
                    b2[idx] * phase.cos() * w2[idx * d + j]
                })
            })
            .collect()
    };
    FnField::new(d, m, move |x| DVector::from_iterator(d, x.iter().map(|v| -v.sin())), sigma).with_jacobian(jac)
}

fn field_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(d, m)| {
        (
            Just(d),
            Just(m),
            prop::collection::vec(-1.0..1.0f64, d * m),
            prop::collection::vec(-1.0..1.0f64, d * m),
            prop::collection::vec(-2.0..2.0f64, d * m * d),
        )
    })
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, d)
}

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convert_to_self_is_identity((d, m, a, b, w) in field_strategy(), alpha in interp(), seed in point(3)) {
        let f = trig_field(d, m, a, b, w);
        let x = &seed[..d];
        let same = convert(&f, alpha, alpha);
        prop_assert_eq!(same.drift(x).unwrap(), f.drift(x).unwrap());
        prop_assert_eq!(same.diffusion(x).unwrap(), f.diffusion(x).unwrap());
    }

    #[test]
    fn conversions_compose((d, m, a, b, w) in field_strategy(), p in interp(), q in interp(), r in interp(), seed in point(3)) {
        let f = trig_field(d, m, a, b, w);
        let x = &seed[..d];
        let two_steps = convert(convert(&f, p, q), q, r).drift(x).unwrap();
        let direct = convert(&f, p, r).drift(x).unwrap();
        prop_assert!(close(&two_steps, &direct, 1e-12), "{} vs {}", two_steps, direct);
    }

    #[test]
    fn conversion_round_trip((d, m, a, b, w) in field_strategy(), p in interp(), q in interp(), seed in point(3)) {
        let f = trig_field(d, m, a, b, w);
        let x = &seed[..d];
        let back = convert(convert(&f, p, q), q, p).drift(x).unwrap();
        prop_assert!(close(&back, &f.drift(x).unwrap(), 1e-12));
    }

    #[test]
    fn finite_differences_agree_with_analytic((d, m, a, b, w) in field_strategy(), seed in point(3)) {
        let exact = trig_field(d, m, a.clone(), b.clone(), w.clone());
        let x = seed[..d].to_vec();
        let sigma_only = {
            let e = exact.clone();
            let e2 = exact.clone();
            FnField::new(d, m, move |x| e.drift(x).unwrap(), move |x| e2.diffusion(x).unwrap())
        };
        let c_exact = correction_vector(&exact, &x).unwrap();
        let c_fd = correction_vector(&sigma_only, &x).unwrap();
        prop_assert!(close(&c_exact, &c_fd, 1e-6), "{} vs {}", c_exact, c_fd);
    }

    #[test]
    fn diagonal_multiplicative_specialization(
        n in 1usize..=4,
        seed in prop::collection::vec(-0.5..0.5f64, 16),
        prices in prop::collection::vec(0.1..10.0f64, 4),
        alpha in interp(),
    ) {
        let gamma = DMatrix::from_fn(n, n, |i, k| seed[i * 4 + k]);
        let mu = DVector::from_fn(n, |i, _| 0.01 * i as f64);
        let field = DiagonalMultiplicative::new(mu.clone(), gamma.clone()).unwrap();
        let x = &prices[..n];
        let converted = convert(&field, alpha, Interpretation::ITO).drift(x).unwrap();
        let per_unit = ito_drift_diagonal_multiplicative(&mu, &gamma, alpha).unwrap();
        let expected = DVector::from_fn(n, |i, _| x[i] * per_unit[i]);
        prop_assert!(close(&converted, &expected, 1e-13));
    }

    #[test]
    fn factor_system_conversion_matches_effective_drift(
        mu0 in -0.1..0.2f64, mu1 in -0.5..0.5f64,
        s_scale in 0.05..0.5f64, s_exp in 0.2..2.0f64,
        nu_scale in 0.05..0.6f64, nu_rate in -0.5..0.5f64,
        rho in -1.0..=1.0f64, x in 0.05..3.0f64, alpha in interp(),
    ) {
        let market = FactorMarket {
            mu_fn: ScalarFn::Affine { intercept: mu0, slope: mu1 },
            sigma_fn: ScalarFn::Power { scale: s_scale, exponent: s_exp },
            b_fn: ScalarFn::Affine { intercept: 0.1, slope: -0.3 },
            nu_fn: ScalarFn::Exp { scale: nu_scale, rate: nu_rate },
            rho_corr: rho,
            r: 0.01,
            domain: FactorDomain::POSITIVE,
            x0: 1.0,
        };
        let system = FactorSystem::new(market.clone()).unwrap();
        let ito = convert(&system, alpha, Interpretation::ITO).drift(&[0.0, x]).unwrap();
        let mu_eff = effective_drift_factor(&market, alpha, x).unwrap();
        let b_ito = market.factor_ito_drift(alpha, x).unwrap();
        prop_assert!((ito[0] - mu_eff).abs() <= 1e-12 * (1.0 + mu_eff.abs()));
        prop_assert!((ito[1] - b_ito).abs() <= 1e-12 * (1.0 + b_ito.abs()));
    }

    #[test]
    fn heston_form_agrees_with_system_conversion(
        kappa in 0.5..4.0f64, theta in 0.01..0.2f64, xi in 0.05..0.8f64,
        rho in -1.0..=1.0f64, v in 0.001..1.0f64, alpha in interp(),
    ) {
        let h = HestonMarket { mu: 0.07, r: 0.02, kappa, long_run_mean: theta, xi, rho_corr: rho, v0: 0.04 };
        let (mu_eff, cir) = heston_ito_form(&h, alpha);
        let system = FactorSystem::new(h.to_factor_market()).unwrap();
        let ito = convert(&system, alpha, Interpretation::ITO).drift(&[0.0, v]).unwrap();
        prop_assert!((ito[0] - mu_eff).abs() <= 1e-12);
        let factor_drift = cir.kappa * (cir.theta_alpha - v);
        prop_assert!((ito[1] - factor_drift).abs() <= 1e-12 * (1.0 + factor_drift.abs()));
    }

    #[test]
    fn weight_shift_law(mu in -0.2..0.3f64, sigma in 0.05..0.8f64, r in 0.0..0.08f64, rho in 0.01..0.3f64, alpha in interp()) {
        let (p0, _) = solve_single_asset(mu, sigma, r, rho, Interpretation::ITO).unwrap();
        let (pa, _) = solve_single_asset(mu, sigma, r, rho, alpha).unwrap();
        let shift = pa.constant_weights().unwrap()[0] - p0.constant_weights().unwrap()[0];
        prop_assert!((shift - alpha.alpha()).abs() <= 1e-14);
        prop_assert_eq!(pa.consumption_fraction, rho);
    }

    #[test]
    fn beta0_grows_with_alpha_when_excess_return_is_nonnegative(
        excess in 0.0..0.2f64, sigma in 0.05..0.8f64, r in 0.0..0.08f64, rho in 0.01..0.3f64,
        a in 0.0..=1.0f64, b in 0.0..=1.0f64,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let beta = |al: f64| solve_single_asset(r + excess, sigma, r, rho, Interpretation::new(al).unwrap()).unwrap().1.beta0;
        prop_assert!(beta(hi) >= beta(lo));
        let classical = LogValueFunction::from_quadratic_form(r, rho, 0.0).beta0;
        prop_assert!(beta(lo) >= classical);
    }

    #[test]
    fn factor_rule_reduces_to_heston_rule(
        kappa in 0.5..4.0f64, xi in 0.05..0.8f64, rho in -1.0..=1.0f64, v in 0.001..1.0f64, alpha in interp(),
    ) {
        let h = HestonMarket { mu: 0.07, r: 0.02, kappa, long_run_mean: 0.05, xi, rho_corr: rho, v0: 0.04 };
        let heston = solve_heston(&h, 0.1, alpha).unwrap().rule.weight_at(v).unwrap();
        let factor = solve_factor(&h.to_factor_market(), 0.1, alpha).unwrap().rule.weight_at(v).unwrap();
        prop_assert!((heston - factor).abs() <= 1e-12 * (1.0 + heston.abs()));
    }
}
