use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::TimeGrid;
use crate::error::{Error, Result};

/// Name recorded in output metadata for the Gaussian generator.
pub const GENERATOR_VARIANT: &str = "chacha8-stream-per-path/ziggurat-standard-normal";

/// Default cap on `n_paths * n_steps * dims` for materialized bundles (1 GiB of f64).
pub const DEFAULT_MEMORY_CAP: usize = 1 << 27;

/// On-demand Brownian increments. Path `j` is drawn from ChaCha8 stream `j` of
/// `seed`, so it does not depend on how many other paths are requested.
#[derive(Debug, Clone, Copy)]
pub struct BrownianSource {
    pub seed: u64,
    pub dims: usize,
    pub grid: TimeGrid,
}

impl BrownianSource {
    pub fn new(grid: TimeGrid, dims: usize, seed: u64) -> Self {
        BrownianSource { seed, dims, grid }
    }

    pub fn path_len(&self) -> usize {
        self.grid.n_steps * self.dims
    }

    /// Writes path `j` into `out`, laid out as `[step][dim]`.
    pub fn fill_path(&self, j: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.path_len());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(j as u64);
        let sd = self.grid.dt().sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
    }

    pub fn path(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.path_len()];
        self.fill_path(j, &mut out);
        out
    }
}

/// Materialized Gaussian increments indexed `(path, step, dim)`, each `N(0, dt)`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub seed: u64,
    pub n_paths: usize,
    pub dims: usize,
    pub grid: TimeGrid,
    increments: Vec<f64>,
}

impl PathBundle {
    #[inline]
    pub fn increment(&self, path: usize, step: usize, dim: usize) -> f64 {
        self.increments[(path * self.grid.n_steps + step) * self.dims + dim]
    }

    /// Increments of one path, `[step][dim]`.
    pub fn path(&self, path: usize) -> &[f64] {
        let len = self.grid.n_steps * self.dims;
        &self.increments[path * len..(path + 1) * len]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn source(&self) -> BrownianSource {
        BrownianSource::new(self.grid, self.dims, self.seed)
    }
}

pub fn generate_brownian(
    grid: TimeGrid,
    n_paths: usize,
    dims: usize,
    seed: u64,
) -> Result<PathBundle> {
    generate_brownian_capped(grid, n_paths, dims, seed, DEFAULT_MEMORY_CAP)
}

pub fn generate_brownian_capped(
    grid: TimeGrid,
    n_paths: usize,
    dims: usize,
    seed: u64,
    cap: usize,
) -> Result<PathBundle> {
    grid.validate()?;
    if n_paths == 0 || dims == 0 {
        return Err(Error::Config("n_paths and dims must be at least 1".into()));
    }
    let requested = n_paths
        .checked_mul(grid.n_steps)
        .and_then(|v| v.checked_mul(dims))
        .ok_or(Error::MemoryCap {
            requested: usize::MAX,
            cap,
        })?;
    if requested > cap {
        return Err(Error::MemoryCap { requested, cap });
    }
    let source = BrownianSource::new(grid, dims, seed);
    let mut increments = vec![0.0; requested];
    increments
        .par_chunks_mut(source.path_len())
        .enumerate()
        .for_each(|(j, chunk)| source.fill_path(j, chunk));
    Ok(PathBundle {
        seed,
        n_paths,
        dims,
        grid,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_have_brownian_moments() {
        let grid = TimeGrid::new(0.5, 1).unwrap();
        let n = 100_000;
        let b = generate_brownian(grid, n, 1, 42).unwrap();
        let dt = grid.dt();
        let mean = b.increments().iter().sum::<f64>() / n as f64;
        let var = b
            .increments()
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn bit_identical_and_prefix_stable() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let a = generate_brownian(grid, 20, 3, 9).unwrap();
        let b = generate_brownian(grid, 20, 3, 9).unwrap();
        assert_eq!(a.increments(), b.increments());
        let small = generate_brownian(grid, 5, 3, 9).unwrap();
        assert_eq!(small.path(4), a.path(4));
        assert_eq!(a.source().path(7), a.path(7));
        let other = generate_brownian(grid, 5, 3, 10).unwrap();
        assert_ne!(other.path(0), a.path(0));
    }

    #[test]
    fn memory_cap_enforced() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let err = generate_brownian_capped(grid, 1000, 10, 1, 10_000).unwrap_err();
        assert!(matches!(err, Error::MemoryCap { .. }));
        assert!(generate_brownian(grid, 0, 1, 1).is_err());
    }

    #[test]
    fn independent_of_thread_count() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| generate_brownian(grid, 64, 2, 5).unwrap());
        let b = four.install(|| generate_brownian(grid, 64, 2, 5).unwrap());
        assert_eq!(a.increments(), b.increments());
    }
}
