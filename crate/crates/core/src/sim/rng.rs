//! Per-path random streams.
//!
//! Every path owns a ChaCha8 stream keyed by `(seed, path index)`. ChaCha is
//! counter based, so a path's draws depend only on that pair and not on how
//! paths are scheduled across workers.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::CorrelationMatrix;

#[derive(Debug, Clone)]
pub struct PathRng {
    inner: ChaCha8Rng,
}

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(path);
        PathRng { inner }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    #[inline]
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for z in out {
            *z = self.normal();
        }
    }
}

/// `n` rows of Brownian increments over `dt` with covariance `R dt`; row `i`
/// is `C z_i sqrt(dt)` for standard normal `z_i`.
pub fn correlated_increments(corr: &CorrelationMatrix, dt: f64, n: usize, rng: &mut PathRng) -> DMatrix<f64> {
    let m = corr.dim();
    let c = corr.factor();
    let sdt = dt.sqrt();
    let mut z = vec![0.0; m];
    let mut out = DMatrix::zeros(n, m);
    for i in 0..n {
        rng.fill_normal(&mut z);
        for a in 0..m {
            let mut acc = 0.0;
            for (k, zk) in z.iter().enumerate().take(a + 1) {
                acc += c[(a, k)] * zk;
            }
            out[(i, a)] = acc * sdt;
        }
    }
    out
}
