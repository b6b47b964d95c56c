use std::io::{self, Read, Write};

use serde::Serialize;

use super::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMeta {
    pub config: SimConfig,
    pub market: String,
    /// Paths dropped after a failed step or policy evaluation.
    pub flagged_paths: Vec<u64>,
    /// Steps whose proposal left the state space and was truncated.
    pub truncations: u64,
    /// Total steps attempted (`n_paths * n_steps`).
    pub proposals: u64,
}

impl EnsembleMeta {
    pub fn truncation_fraction(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.truncations as f64 / self.proposals as f64
        }
    }
}

/// Saved states of a set of paths, laid out `[path][time][coordinate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    times: Vec<f64>,
    coords: Vec<String>,
    path_ids: Vec<u64>,
    states: Vec<f64>,
    pub meta: EnsembleMeta,
}

impl PathEnsemble {
    pub(crate) fn new(
        times: Vec<f64>,
        coords: Vec<String>,
        path_ids: Vec<u64>,
        states: Vec<f64>,
        meta: EnsembleMeta,
    ) -> Self {
        debug_assert_eq!(states.len(), path_ids.len() * times.len() * coords.len());
        PathEnsemble {
            times,
            coords,
            path_ids,
            states,
            meta,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn coord_index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c == name)
    }

    pub fn path_ids(&self) -> &[u64] {
        &self.path_ids
    }

    pub fn n_paths(&self) -> usize {
        self.path_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn raw_states(&self) -> &[f64] {
        &self.states
    }

    /// All saved states of the `p`-th kept path.
    pub fn path(&self, p: usize) -> &[f64] {
        let stride = self.n_times() * self.dim();
        &self.states[p * stride..(p + 1) * stride]
    }

    pub fn state(&self, p: usize, t: usize) -> &[f64] {
        let d = self.dim();
        &self.path(p)[t * d..(t + 1) * d]
    }

    /// One coordinate along one path.
    pub fn series(&self, p: usize, coord: usize) -> impl Iterator<Item = f64> + '_ {
        let d = self.dim();
        self.path(p).iter().skip(coord).step_by(d).copied()
    }

    /// Terminal values of one coordinate across paths.
    pub fn terminal(&self, coord: usize) -> Vec<f64> {
        let last = self.n_times() - 1;
        (0..self.n_paths()).map(|p| self.state(p, last)[coord]).collect()
    }

    /// Per-time mean and (unbiased) variance of every coordinate.
    pub fn summary(&self) -> EnsembleSummary {
        let (nt, d, n) = (self.n_times(), self.dim(), self.n_paths());
        let mut mean = vec![0.0; nt * d];
        let mut m2 = vec![0.0; nt * d];
        // Welford in path order keeps the reduction deterministic.
        for p in 0..n {
            let k = (p + 1) as f64;
            for (i, &x) in self.path(p).iter().enumerate() {
                let delta = x - mean[i];
                mean[i] += delta / k;
                m2[i] += delta * (x - mean[i]);
            }
        }
        let variance = m2
            .into_iter()
            .map(|s| if n > 1 { s / (n - 1) as f64 } else { 0.0 })
            .collect();
        EnsembleSummary {
            n_paths: n as u64,
            n_coords: d as u64,
            times: self.times.clone(),
            mean,
            variance,
        }
    }
}

/// Compact per-time moments of an ensemble.
///
/// Binary layout, all little endian: magic `AMES`, `u32` version, `u64`
/// path count, `u64` time count, `u64` coordinate count, the time grid as
/// `f64`, then for each time and coordinate the pair `(mean, variance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub n_paths: u64,
    pub n_coords: u64,
    pub times: Vec<f64>,
    /// `[time][coordinate]`
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"AMES";
const VERSION: u32 = 1;

impl EnsembleSummary {
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.n_paths.to_le_bytes())?;
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        w.write_all(&self.n_coords.to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for (m, v) in self.mean.iter().zip(&self.variance) {
            w.write_all(&m.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != VERSION {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "unsupported version"));
        }
        let mut next_u64 = || -> io::Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let n_paths = next_u64()?;
        let n_times = next_u64()? as usize;
        let n_coords = next_u64()?;
        let mut read_f64 = || -> io::Result<f64> { next_u64().map(f64::from_bits) };
        let times = (0..n_times).map(|_| read_f64()).collect::<io::Result<Vec<_>>>()?;
        let cells = n_times * n_coords as usize;
        let mut mean = Vec::with_capacity(cells);
        let mut variance = Vec::with_capacity(cells);
        for _ in 0..cells {
            mean.push(read_f64()?);
            variance.push(read_f64()?);
        }
        Ok(EnsembleSummary {
            n_paths,
            n_coords,
            times,
            mean,
            variance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PathEnsemble {
        let cfg = SimConfig::new(1.0, 0.5, 3, 0);
        let meta = EnsembleMeta {
            config: cfg,
            market: "test".into(),
            flagged_paths: vec![],
            truncations: 0,
            proposals: 6,
        };
        // 3 paths, 3 times, 2 coords
        let states: Vec<f64> = (0..18).map(|i| i as f64).collect();
        PathEnsemble::new(vec![0.0, 0.5, 1.0], vec!["a".into(), "b".into()], vec![0, 1, 2], states, meta)
    }

    #[test]
    fn indexing() {
        let e = tiny();
        assert_eq!(e.state(1, 2), &[10.0, 11.0]);
        assert_eq!(e.series(2, 1).collect::<Vec<_>>(), vec![13.0, 15.0, 17.0]);
        assert_eq!(e.terminal(0), vec![4.0, 10.0, 16.0]);
        assert_eq!(e.coord_index("b"), Some(1));
    }

    #[test]
    fn summary_round_trips_through_binary() {
        let s = tiny().summary();
        assert_eq!(s.mean[0], 6.0);
        assert_eq!(s.variance[0], 36.0);
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 24 + 3 * 8 + 6 * 16);
        assert_eq!(EnsembleSummary::read_binary(buf.as_slice()).unwrap(), s);
        buf[0] = b'X';
        assert!(EnsembleSummary::read_binary(buf.as_slice()).is_err());
    }
}
