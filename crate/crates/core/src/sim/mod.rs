//! Monte Carlo path generation.
//!
//! Paths are independent: each owns a random stream derived from the seed and
//! its index, runs on whichever rayon worker picks it up, and writes into its
//! own slice of the ensemble. Output is therefore identical for any number of
//! worker threads.

mod cir;
mod ensemble;
pub mod rng;
mod step;
mod wealth;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{convert, CoefficientField};
use crate::error::{Error, Result};
use crate::interpretation::Interpretation;

pub use cir::simulate_cir;
pub use ensemble::{EnsembleMeta, EnsembleSummary, PathEnsemble};
pub use rng::{correlated_increments, PathRng};
pub use step::{alpha_point_step, euler_step, Stepper};
pub use wealth::simulate_wealth;

/// Fraction of paths allowed to fail before a run is rejected.
pub const PATH_FAILURE_BUDGET: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler–Maruyama on the Itô-converted coefficients.
    #[default]
    ItoEuler,
    /// Predictor–corrector on the α-form coefficients.
    AlphaPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Keep every `save_every`-th step (the last step is always kept).
    #[serde(default = "default_save_every")]
    pub save_every: usize,
}

fn default_save_every() -> usize {
    1
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            horizon,
            dt,
            n_paths,
            seed,
            scheme: Scheme::ItoEuler,
            save_every: 1,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_save_every(mut self, save_every: usize) -> Self {
        self.save_every = save_every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::parameter("horizon", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(Error::parameter("dt", "must lie in (0, horizon]"));
        }
        if self.n_paths == 0 {
            return Err(Error::parameter("n_paths", "must be at least 1"));
        }
        if self.save_every == 0 {
            return Err(Error::parameter("save_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    /// Step indices written to the ensemble.
    pub fn saved_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut out: Vec<usize> = (0..=n).step_by(self.save_every).collect();
        if *out.last().unwrap() != n {
            out.push(n);
        }
        out
    }

    pub fn times(&self) -> Vec<f64> {
        self.saved_steps().into_iter().map(|k| k as f64 * self.dt).collect()
    }
}

/// Work done by one path: states at saved steps are written into `out`, the
/// return value counts truncated proposals.
pub(crate) trait PathKernel: Sync {
    fn dim(&self) -> usize;
    fn run(&self, rng: &mut PathRng, saved: &[usize], out: &mut [f64]) -> Result<u64>;
}

/// Runs every path of `cfg` in parallel and assembles the ensemble, dropping
/// failed paths. More than [`PATH_FAILURE_BUDGET`] failures is an error.
pub(crate) fn run_ensemble<K: PathKernel>(
    kernel: &K,
    cfg: &SimConfig,
    coords: Vec<String>,
    market: String,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    let saved = cfg.saved_steps();
    let d = kernel.dim();
    let stride = saved.len() * d;
    let mut states = vec![0.0; cfg.n_paths * stride];
    let status: Vec<Result<u64>> = states
        .par_chunks_mut(stride)
        .enumerate()
        .map(|(p, chunk)| {
            let mut rng = PathRng::new(cfg.seed, p as u64);
            kernel.run(&mut rng, &saved, chunk)
        })
        .collect();

    let mut flagged = Vec::new();
    let mut truncations = 0u64;
    let mut keep = Vec::with_capacity(cfg.n_paths);
    for (p, s) in status.iter().enumerate() {
        match s {
            Ok(t) => {
                truncations += t;
                keep.push(p as u64);
            }
            Err(_) => flagged.push(p as u64),
        }
    }
    if flagged.len() as f64 > PATH_FAILURE_BUDGET * cfg.n_paths as f64 {
        return Err(Error::PathFailureBudget {
            failed: flagged.len(),
            total: cfg.n_paths,
        });
    }
    if !flagged.is_empty() {
        let mut w = 0;
        for &p in &keep {
            let p = p as usize;
            if p != w {
                states.copy_within(p * stride..(p + 1) * stride, w * stride);
            }
            w += 1;
        }
        states.truncate(keep.len() * stride);
    }
    if keep.is_empty() {
        return Err(Error::PathFailureBudget {
            failed: flagged.len(),
            total: cfg.n_paths,
        });
    }
    let meta = EnsembleMeta {
        config: *cfg,
        market,
        flagged_paths: flagged,
        truncations,
        proposals: (cfg.n_paths * cfg.n_steps()) as u64,
    };
    Ok(PathEnsemble::new(cfg.times(), coords, keep, states, meta))
}

struct SdeKernel<'a, F, G> {
    alpha_form: &'a F,
    ito_form: G,
    alpha: Interpretation,
    scheme: Scheme,
    x0: &'a [f64],
    dt: f64,
}

impl<F: CoefficientField, G: CoefficientField> PathKernel for SdeKernel<'_, F, G> {
    fn dim(&self) -> usize {
        self.alpha_form.state_dim()
    }

    fn run(&self, rng: &mut PathRng, saved: &[usize], out: &mut [f64]) -> Result<u64> {
        let d = self.dim();
        let m = self.alpha_form.noise_dim();
        let mut stepper = Stepper::new(d, m);
        let mut x = self.x0.to_vec();
        let mut next = vec![0.0; d];
        let mut dw = vec![0.0; m];
        let sdt = self.dt.sqrt();
        let last = *saved.last().unwrap();
        let mut slot = 0;
        for k in 0..=last {
            if saved[slot] == k {
                out[slot * d..(slot + 1) * d].copy_from_slice(&x);
                slot += 1;
            }
            if k == last {
                break;
            }
            rng.fill_normal(&mut dw);
            dw.iter_mut().for_each(|z| *z *= sdt);
            match self.scheme {
                Scheme::ItoEuler => stepper.euler(&self.ito_form, &x, &dw, self.dt, &mut next)?,
                Scheme::AlphaPoint => {
                    stepper.alpha_point(self.alpha_form, self.alpha, &x, &dw, self.dt, &mut next)?
                }
            }
            std::mem::swap(&mut x, &mut next);
        }
        Ok(0)
    }
}

/// Paths of `dX = b dt + Σ ∘_alpha dW` started at `x0`. With
/// [`Scheme::ItoEuler`] the field is first converted to Itô form; with
/// [`Scheme::AlphaPoint`] it is stepped directly.
pub fn simulate_sde<F: CoefficientField>(
    alpha_form: &F,
    alpha: Interpretation,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    if x0.len() != alpha_form.state_dim() {
        return Err(Error::Dimension {
            axis: "state",
            expected: alpha_form.state_dim(),
            found: x0.len(),
        });
    }
    let kernel = SdeKernel {
        alpha_form,
        ito_form: convert(alpha_form, alpha, Interpretation::ITO),
        alpha,
        scheme: cfg.scheme,
        x0,
        dt: cfg.dt,
    };
    let coords = (1..=x0.len()).map(|i| format!("x{i}")).collect();
    run_ensemble(&kernel, cfg, coords, "sde".into())
}
