use super::{run_ensemble, PathEnsemble, PathKernel, PathRng, SimConfig};
use crate::error::{Error, Result};
use crate::market::CirParams;

/// One full-truncation Euler step. Returns the raw (possibly negative) next
/// value; callers report `max(v, 0)`.
#[inline]
pub(crate) fn cir_step(cir: &CirParams, v: f64, dw: f64, dt: f64) -> f64 {
    let vp = v.max(0.0);
    v + cir.kappa * (cir.theta_alpha - vp) * dt + cir.xi * vp.sqrt() * dw
}

struct CirKernel<'a> {
    cir: &'a CirParams,
    v0: f64,
    dt: f64,
}

impl PathKernel for CirKernel<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn run(&self, rng: &mut PathRng, saved: &[usize], out: &mut [f64]) -> Result<u64> {
        let sdt = self.dt.sqrt();
        let last = *saved.last().unwrap();
        let mut v = self.v0;
        let mut truncated = 0;
        let mut slot = 0;
        for k in 0..=last {
            if saved[slot] == k {
                out[slot] = v.max(0.0);
                slot += 1;
            }
            if k == last {
                break;
            }
            v = cir_step(self.cir, v, rng.normal() * sdt, self.dt);
            if v < 0.0 {
                truncated += 1;
            }
        }
        Ok(truncated)
    }
}

/// Square-root variance paths by full-truncation Euler. The ensemble has one
/// coordinate, `variance`, holding `max(v, 0)`; `meta.truncations` counts
/// negative proposals.
pub fn simulate_cir(cir: &CirParams, v0: f64, cfg: &SimConfig) -> Result<PathEnsemble> {
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::parameter("v0", "must be strictly positive"));
    }
    let kernel = CirKernel {
        cir,
        v0,
        dt: cfg.dt,
    };
    run_ensemble(&kernel, cfg, vec!["variance".into()], "cir".into())
}
