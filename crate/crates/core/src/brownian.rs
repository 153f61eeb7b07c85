//! Brownian increments on a time grid.
//!
//! Increments are stored on a fixed-point lattice of spacing `2^-40`. Sums
//! and differences of lattice values are exact in `f64` (for the magnitudes a
//! Brownian increment can reach), so refining a batch with a Brownian bridge
//! and summing the fine increments back reproduces the coarse ones bit for
//! bit, independent of summation order.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{self, tag};

const LATTICE: f64 = 1099511627776.0; // 2^40

#[inline]
fn to_lattice(v: f64) -> f64 {
    (v * LATTICE).round() / LATTICE
}

/// Gaussian increments `[path][step][l]`, each with variance `h`.
#[derive(Debug, Clone)]
pub struct BrownianBatch {
    grid: TimeGrid,
    n_paths: usize,
    dim_l: usize,
    master_seed: u64,
    increments: Arc<[f64]>,
}

impl BrownianBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim_l(&self) -> usize {
        self.dim_l
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Flat `[path][step][l]` array.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increment of `path` over `[t_step, t_step+1]`.
    #[inline]
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let stride = self.grid.n_steps() * self.dim_l;
        let start = path * stride + step * self.dim_l;
        &self.increments[start..start + self.dim_l]
    }

    pub fn path_increments(&self, path: usize) -> &[f64] {
        let stride = self.grid.n_steps() * self.dim_l;
        &self.increments[path * stride..(path + 1) * stride]
    }

    /// True when both batches carry the very same noise (shared storage or
    /// equal contents on equal grids).
    pub fn shares_noise_with(&self, other: &BrownianBatch) -> bool {
        self.grid.same_as(&other.grid)
            && self.n_paths == other.n_paths
            && self.dim_l == other.dim_l
            && (Arc::ptr_eq(&self.increments, &other.increments)
                || self.increments[..] == other.increments[..])
    }

    /// Sums consecutive groups of `factor` increments onto a grid with
    /// `n_steps / factor` steps.
    pub fn aggregate(&self, factor: usize) -> Result<BrownianBatch> {
        if factor == 0 || !self.grid.n_steps().is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "cannot aggregate {} steps by factor {factor}",
                self.grid.n_steps()
            )));
        }
        let coarse_steps = self.grid.n_steps() / factor;
        let grid = TimeGrid::new(self.grid.t0(), self.grid.horizon(), coarse_steps)?;
        let l = self.dim_l;
        let mut out = vec![0.0; self.n_paths * coarse_steps * l];
        out.par_chunks_mut(coarse_steps * l)
            .enumerate()
            .for_each(|(p, chunk)| {
                for k in 0..coarse_steps {
                    for j in 0..factor {
                        let inc = self.increment(p, k * factor + j);
                        for (c, v) in chunk[k * l..(k + 1) * l].iter_mut().zip(inc) {
                            *c += *v;
                        }
                    }
                }
            });
        Ok(BrownianBatch {
            grid,
            n_paths: self.n_paths,
            dim_l: l,
            master_seed: self.master_seed,
            increments: out.into(),
        })
    }
}

/// Draws `n_paths` independent `dim_l`-dimensional Brownian paths on `grid`.
///
/// The increment of path `p` at step `k` is a pure function of
/// `(master_seed, p, k)`.
pub fn sample_brownian(
    grid: &TimeGrid,
    n_paths: usize,
    dim_l: usize,
    master_seed: u64,
) -> Result<BrownianBatch> {
    if n_paths == 0 {
        return Err(Error::Config("n_paths must be at least 1".into()));
    }
    if dim_l == 0 {
        return Err(Error::Config("Brownian dimension must be at least 1".into()));
    }
    let n = grid.n_steps();
    let sqrt_h = grid.h().sqrt();
    let mut data = vec![0.0; n_paths * n * dim_l];
    data.par_chunks_mut(n * dim_l)
        .enumerate()
        .for_each(|(p, chunk)| {
            for k in 0..n {
                let mut rng = rng::stream(master_seed, p as u64, k as u64, tag::INCREMENT);
                for v in &mut chunk[k * dim_l..(k + 1) * dim_l] {
                    *v = to_lattice(sqrt_h * rng::standard_normal(&mut rng));
                }
            }
        });
    Ok(BrownianBatch {
        grid: *grid,
        n_paths,
        dim_l,
        master_seed,
        increments: data.into(),
    })
}

/// Splits every increment into `factor` sub-increments by Brownian-bridge
/// conditional sampling; the sub-increments sum exactly to the original.
pub fn refine_brownian(batch: &BrownianBatch, factor: usize) -> Result<BrownianBatch> {
    if factor == 0 {
        return Err(Error::Config("refinement factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(batch.clone());
    }
    let grid = batch.grid.refined(factor)?;
    let coarse = batch.grid.n_steps();
    let l = batch.dim_l;
    let fine_h = grid.h();
    let seed = batch.master_seed;
    let mut data = vec![0.0; batch.n_paths * coarse * factor * l];
    data.par_chunks_mut(coarse * factor * l)
        .enumerate()
        .for_each(|(p, chunk)| {
            let mut remaining = vec![0.0; l];
            for k in 0..coarse {
                remaining.copy_from_slice(batch.increment(p, k));
                for j in 0..factor {
                    let out = &mut chunk[(k * factor + j) * l..(k * factor + j + 1) * l];
                    let left = (factor - j) as f64;
                    if j + 1 == factor {
                        out.copy_from_slice(&remaining);
                        continue;
                    }
                    let level = rng::stream_key(tag::BRIDGE, coarse as u64, j as u64, factor as u64);
                    let mut rng = rng::stream(seed, p as u64, k as u64, level);
                    let sd = (fine_h * (left - 1.0) / left).sqrt();
                    for (o, r) in out.iter_mut().zip(remaining.iter_mut()) {
                        let v = to_lattice(*r / left + sd * rng::standard_normal(&mut rng));
                        *o = v;
                        *r -= v;
                    }
                }
            }
        });
    Ok(BrownianBatch {
        grid,
        n_paths: batch.n_paths,
        dim_l: l,
        master_seed: seed,
        increments: data.into(),
    })
}
