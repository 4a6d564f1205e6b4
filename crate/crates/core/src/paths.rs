//! Exact log-normal simulation of (X, Mⁱ, Zⁱ, Yⁱ) on a time grid, plus Poisson
//! arrival sampling by thinning.
//!
//! Every random draw comes from a ChaCha8 substream keyed by (seed, path, component),
//! so path j is a pure function of (seed, j) regardless of execution order.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{IntensityTable, ModelSpec};

/// Component ids for substreams; agents offset from these bases.
pub const STREAM_X: u64 = 0;
pub const STREAM_NOISE_BASE: u64 = 1;
pub const STREAM_ARRIVAL_BASE: u64 = 1 << 20;
/// Free component range for oracle-specific draws.
pub const STREAM_ORACLE_BASE: u64 = 1 << 21;

/// Independent generator for one (path, component) pair.
pub fn substream(seed: u64, path: u64, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((path << 24) | component);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("need at least two points".into()));
        }
        if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
            return Err(Error::InvalidGrid(
                "grid must start at 0 and end at 1".into(),
            ));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid(
                "grid must be strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { points })
    }

    /// K uniform steps, t_k = k/K.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("step count must be positive".into()));
        }
        TimeGrid::new((0..=steps).map(|k| k as f64 / steps as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last_index(&self) -> usize {
        self.points.len() - 1
    }

    /// Smallest index k with t_k ≥ t (clamped to the last point).
    pub fn index_at_or_after(&self, t: f64) -> usize {
        self.points
            .partition_point(|&x| x < t)
            .min(self.last_index())
    }

    /// Index of a time that is exactly on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.points.partition_point(|&x| x < t);
        (k < self.points.len() && self.points[k] == t).then_some(k)
    }
}

#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: Arc<TimeGrid>,
    pub index: u64,
    pub seed: u64,
    pub x: Vec<f64>,
    /// `m_noise[i][k]` = Mⁱ at t_k.
    pub m_noise: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Per-agent sorted private arrival times in (0,1).
    pub arrivals: Vec<Vec<f64>>,
}

impl PathBundle {
    pub fn agents(&self) -> usize {
        self.y.len()
    }

    /// Observation vector (Y¹..Yᵐ) at grid index k.
    pub fn y_at(&self, k: usize) -> Vec<f64> {
        self.y.iter().map(|s| s[k]).collect()
    }
}

/// Log-normal stepping of a driftless GBM from `start` with volatility `sigma`.
fn gbm_log_series(start: f64, sigma: f64, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let pts = grid.points();
    let mut out = Vec::with_capacity(pts.len());
    let mut lx = start.ln();
    out.push(lx);
    for w in pts.windows(2) {
        let h = w[1] - w[0];
        if sigma > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            lx += sigma * h.sqrt() * xi - 0.5 * sigma * sigma * h;
        }
        out.push(lx);
    }
    out
}

/// Arrival times of an inhomogeneous Poisson process on (0,1), by thinning against max λ.
pub fn sample_arrivals_with<R: Rng>(table: &IntensityTable, rng: &mut R) -> Vec<f64> {
    let lmax = table.max();
    let mut out = Vec::new();
    if lmax <= 0.0 {
        return out;
    }
    let mut t = 0.0;
    loop {
        let e: f64 = rng.sample(Exp1);
        t += e / lmax;
        if t >= 1.0 {
            break;
        }
        let u: f64 = rng.random();
        if u * lmax < table.value_at(t) {
            out.push(t);
        }
    }
    out
}

pub fn sample_arrivals(table: &IntensityTable, seed: u64) -> Vec<f64> {
    sample_arrivals_with(table, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Path `index` of the family determined by `seed`.
pub fn simulate_path(spec: &ModelSpec, grid: &Arc<TimeGrid>, seed: u64, index: u64) -> PathBundle {
    let mut rng = substream(seed, index, STREAM_X);
    let lx = gbm_log_series(spec.x0, spec.sigma0, grid, &mut rng);
    let x: Vec<f64> = lx.iter().map(|v| v.exp()).collect();
    let mut m_noise = Vec::with_capacity(spec.m);
    let mut z = Vec::with_capacity(spec.m);
    let mut y = Vec::with_capacity(spec.m);
    let mut arrivals = Vec::with_capacity(spec.m);
    for i in 0..spec.m {
        let mut rng = substream(seed, index, STREAM_NOISE_BASE + i as u64);
        let mi: Vec<f64> = gbm_log_series(spec.m0[i], spec.sigma_m[i], grid, &mut rng)
            .into_iter()
            .map(f64::exp)
            .collect();
        let lf = spec.f[i].ln();
        let zi: Vec<f64> = lx.iter().map(|l| (lf + spec.alpha[i] * l).exp()).collect();
        let yi: Vec<f64> = zi.iter().zip(&mi).map(|(a, b)| a * b).collect();
        let mut rng = substream(seed, index, STREAM_ARRIVAL_BASE + i as u64);
        arrivals.push(sample_arrivals_with(&spec.lambda[i], &mut rng));
        m_noise.push(mi);
        z.push(zi);
        y.push(yi);
    }
    PathBundle {
        grid: Arc::clone(grid),
        index,
        seed,
        x,
        m_noise,
        z,
        y,
        arrivals,
    }
}

/// Paths `0..count`, generated in parallel; output order and content independent of worker count.
pub fn simulate_paths(
    spec: &ModelSpec,
    grid: &TimeGrid,
    seed: u64,
    count: usize,
) -> Vec<PathBundle> {
    let grid = Arc::new(grid.clone());
    (0..count as u64)
        .into_par_iter()
        .map(|j| simulate_path(spec, &grid, seed, j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        let g = TimeGrid::uniform(4).unwrap();
        assert_eq!(g.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.index_at_or_after(0.3), 2);
        assert_eq!(g.index_at_or_after(0.5), 2);
        assert_eq!(g.index_of(0.75), Some(3));
        assert_eq!(g.index_of(0.7), None);
    }

    #[test]
    fn noiseless_paths_are_constant() {
        let mut spec = ModelSpec::symmetric(2, 1.0, 0.0, 1.5, 2.0, 0.0);
        spec.sigma0 = 0.0;
        spec.x0 = 1.7;
        let p = simulate_path(&spec, &Arc::new(TimeGrid::uniform(10).unwrap()), 1, 0);
        for k in 0..p.x.len() {
            assert!((p.x[k] - 1.7).abs() < 1e-14);
            assert_eq!(p.m_noise[1][k], 1.0);
        }
        assert!(p.arrivals.iter().all(|a| a.is_empty()));
    }

    #[test]
    fn path_invariants_and_reproducibility() {
        let mut spec = ModelSpec::symmetric(2, 0.3, 0.4, 1.3, 2.0, 3.0);
        spec.alpha[1] = 0.6;
        let grid = TimeGrid::uniform(50).unwrap();
        let a = simulate_paths(&spec, &grid, 11, 20);
        let b = simulate_paths(&spec, &grid, 11, 20);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.x, q.x);
            assert_eq!(p.y, q.y);
            assert_eq!(p.arrivals, q.arrivals);
            for i in 0..2 {
                for k in 0..grid.len() {
                    assert!(p.x[k] > 0.0 && p.y[i][k] > 0.0);
                    assert_eq!(p.y[i][k], p.z[i][k] * p.m_noise[i][k]);
                    let lz = spec.f[i].ln() + spec.alpha[i] * p.x[k].ln();
                    assert!((p.z[i][k].ln() - lz).abs() < 1e-12);
                }
                assert!(p.arrivals[i].windows(2).all(|w| w[0] < w[1]));
                assert!(p.arrivals[i].iter().all(|&t| t > 0.0 && t < 1.0));
            }
        }
        assert_ne!(a[0].x, a[1].x);
    }

    #[test]
    fn arrivals_respect_support() {
        let table = IntensityTable::new(vec![0.0, 0.5, 1.0], vec![4.0, 0.0]).unwrap();
        for seed in 0..200 {
            assert!(sample_arrivals(&table, seed).iter().all(|&t| t < 0.5));
        }
        assert!(sample_arrivals(&IntensityTable::constant(0.0), 3).is_empty());
    }
}
