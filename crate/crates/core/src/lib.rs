//! Stochastic calculus under a family of noise interpretations and the
//! log-utility Merton consumption/investment problem built on it.
//!
//! An interpretation `α ∈ [0, 1]` fixes where a stochastic integral
//! evaluates its integrand: `α = 0` is Itô, `½` Stratonovich and `1`
//! Klimontovich. [`calculus`] converts coefficient fields between
//! interpretations, [`market`] and [`policy`] give the closed-form optimal
//! rules, [`sim`] generates Monte Carlo paths and [`eval`] checks one
//! against the other.

pub mod calculus;
pub mod error;
pub mod eval;
pub mod interpretation;
pub mod linalg;
pub mod market;
pub mod policy;
pub mod sim;

pub use calculus::{convert, correction_vector, CoefficientField, FactorSystem, ScalarField, ScalarFn};
pub use error::{Error, Result};
pub use eval::{
    compare_interpretations, estimate_utility, log_drift_check, perturbation_study, ComparisonRow, ComparisonTable,
    UtilityEstimate,
};
pub use interpretation::Interpretation;
pub use linalg::CorrelationMatrix;
pub use market::{ConstantVolMarket, FactorMarket, HestonMarket, Market, Validate};
pub use policy::{solve_constant_vol, solve_factor, solve_heston, solve_n_asset, solve_single_asset, LogValueFunction, Policy};
pub use sim::{simulate_cir, simulate_sde, simulate_wealth, PathEnsemble, Scheme, SimConfig};
