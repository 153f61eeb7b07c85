//! Cross-sectional least squares on a finite basis of the forward state,
//! used to approximate conditional expectations `E[. | X_k]`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionBasis {
    /// All monomials of total degree `<= max_degree` in the standardized state.
    Polynomial { max_degree: usize },
    /// Indicators of a tensor grid of `n_bins` per coordinate on
    /// `[lower, upper]`; outside points fall in the boundary bins.
    PiecewiseConstant { n_bins: usize, lower: f64, upper: f64 },
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis::Polynomial { max_degree: 3 }
    }
}

impl RegressionBasis {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegressionBasis::Polynomial { .. } => Ok(()),
            RegressionBasis::PiecewiseConstant { n_bins, lower, upper } => {
                if n_bins == 0 {
                    Err(Error::Config("piecewise basis needs at least one bin".into()))
                } else if !(upper > lower) {
                    Err(Error::Config(format!("bin range [{lower}, {upper}] is empty")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

fn monomials(dim: usize, max_degree: usize) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for e in 0..=left {
            prefix.push(e as u32);
            rec(dim, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, max_degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| e.iter().sum::<u32>());
    out
}

/// Feature map fixed for one regression step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    basis: RegressionBasis,
    dim: usize,
    /// Every sample shared one state; the basis collapses to a constant.
    degenerate: bool,
    center: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    /// Indices of raw features kept after dropping all-zero columns.
    active: Vec<usize>,
}

impl FeatureMap {
    fn raw_len(&self) -> usize {
        if self.degenerate {
            return 1;
        }
        match self.basis {
            RegressionBasis::Polynomial { .. } => self.exponents.len(),
            RegressionBasis::PiecewiseConstant { n_bins, .. } => n_bins.pow(self.dim as u32),
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    fn raw(&self, x: &[f64], out: &mut [f64]) {
        if self.degenerate {
            out[0] = 1.0;
            return;
        }
        match self.basis {
            RegressionBasis::Polynomial { .. } => {
                let u: Vec<f64> = x
                    .iter()
                    .zip(self.center.iter().zip(&self.scale))
                    .map(|(v, (c, s))| (v - c) / s)
                    .collect();
                for (o, e) in out.iter_mut().zip(&self.exponents) {
                    *o = u.iter().zip(e).map(|(v, k)| v.powi(*k as i32)).product();
                }
            }
            RegressionBasis::PiecewiseConstant { .. } => {
                out.fill(0.0);
                out[self.bin_index(x)] = 1.0;
            }
        }
    }

    /// Flat tensor-grid bin of `x`; only meaningful for the piecewise basis.
    fn bin_index(&self, x: &[f64]) -> usize {
        let RegressionBasis::PiecewiseConstant { n_bins, lower, upper } = self.basis else {
            return 0;
        };
        let width = (upper - lower) / n_bins as f64;
        let mut index = 0;
        let mut stride = 1;
        for v in x {
            let b = ((v - lower) / width).floor().clamp(0.0, (n_bins - 1) as f64) as usize;
            index += b * stride;
            stride *= n_bins;
        }
        index
    }

    /// Active features of `x`.
    pub fn features(&self, x: &[f64], out: &mut [f64]) {
        let mut raw = vec![0.0; self.raw_len()];
        self.raw(x, &mut raw);
        for (o, i) in out.iter_mut().zip(&self.active) {
            *o = raw[*i];
        }
    }
}

/// Least-squares fit of `targets` (`n x n_out`) on the basis features of
/// `states` (`n x dim`), minimal-norm under rank deficiency.
#[derive(Debug, Clone)]
pub struct Fit {
    pub features: FeatureMap,
    /// `p x n_out`
    pub coef: DMatrix<f64>,
    /// Pseudo-inverse of the Gram matrix `A^T A` (`p x p`).
    pub gram_pinv: DMatrix<f64>,
    /// Residual variance per output column.
    pub residual_var: Vec<f64>,
    pub condition_number: f64,
    pub rank: usize,
    pub n_samples: usize,
}

impl Fit {
    pub fn predict(&self, x: &[f64], out: &mut [f64]) {
        let mut phi = vec![0.0; self.features.len()];
        self.features.features(x, &mut phi);
        for (j, o) in out.iter_mut().enumerate() {
            *o = phi.iter().enumerate().map(|(i, f)| f * self.coef[(i, j)]).sum();
        }
    }

    /// `phi(x)^T (A^T A)^+ phi(x)`.
    pub fn leverage(&self, x: &[f64]) -> f64 {
        let p = self.features.len();
        let mut phi = vec![0.0; p];
        self.features.features(x, &mut phi);
        let v = DVector::from_vec(phi);
        (v.transpose() * &self.gram_pinv * &v)[(0, 0)]
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }
}

pub fn fit(
    basis: &RegressionBasis,
    states: &[f64],
    dim: usize,
    targets: &[f64],
    n_out: usize,
) -> Result<Fit> {
    basis.validate()?;
    let n = states.len() / dim;
    if n == 0 || states.len() != n * dim || targets.len() != n * n_out {
        return Err(Error::Config("regression inputs have inconsistent sizes".into()));
    }
    let mut center = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    let mut degenerate = true;
    for i in 0..dim {
        let col: Vec<f64> = states.iter().skip(i).step_by(dim).copied().collect();
        let c = crate::stats::mean(&col);
        let sd = crate::stats::sample_variance(&col).sqrt();
        let spread = col.iter().fold(0.0f64, |a, v| a.max((v - c).abs()));
        if spread > 1e-14 * (1.0 + c.abs()) {
            degenerate = false;
        }
        center[i] = c;
        scale[i] = if sd > 0.0 { sd } else { 1.0 };
    }
    let exponents = match basis {
        RegressionBasis::Polynomial { max_degree } => monomials(dim, *max_degree),
        _ => Vec::new(),
    };
    let mut map = FeatureMap {
        basis: *basis,
        dim,
        degenerate,
        center,
        scale,
        exponents,
        active: Vec::new(),
    };
    if matches!(basis, RegressionBasis::PiecewiseConstant { .. }) && !map.degenerate {
        return Ok(fit_bins(map, states, targets, n_out));
    }
    let raw_len = map.raw_len();
    let raw_rows: Vec<Vec<f64>> = states
        .par_chunks(dim)
        .map(|x| {
            let mut r = vec![0.0; raw_len];
            map.raw(x, &mut r);
            r
        })
        .collect();
    map.active = (0..raw_len)
        .filter(|&j| raw_rows.iter().any(|r| r[j] != 0.0))
        .collect();
    if map.active.is_empty() {
        return Err(Error::Numeric("regression design has no non-zero column".into()));
    }
    let p = map.active.len();
    let a = DMatrix::from_fn(n, p, |i, j| raw_rows[i][map.active[j]]);
    let b = DMatrix::from_row_slice(n, n_out, targets);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let eps = smax * (n.max(p) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let coef = svd
        .solve(&b, eps)
        .map_err(|e| Error::Numeric(format!("least-squares solve failed: {e}")))?;
    let v_t = svd.v_t.as_ref().expect("V^T requested");
    let inv_sq = DMatrix::from_diagonal(&svd.singular_values.map(|s| if s > eps { 1.0 / (s * s) } else { 0.0 }));
    let gram_pinv = v_t.transpose() * inv_sq * v_t;
    let resid = b - &a * &coef;
    let dof = n.saturating_sub(rank).max(1) as f64;
    let residual_var = (0..n_out)
        .map(|j| resid.column(j).iter().map(|r| r * r).sum::<f64>() / dof)
        .collect();
    Ok(Fit {
        features: map,
        coef,
        gram_pinv,
        residual_var,
        condition_number: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        rank,
        n_samples: n,
    })
}

/// Indicator design: the columns are orthogonal, so the least-squares
/// coefficients are bin means and `A^T A` is the diagonal of bin counts.
fn fit_bins(mut map: FeatureMap, states: &[f64], targets: &[f64], n_out: usize) -> Fit {
    let dim = map.dim;
    let n = states.len() / dim;
    let bins: Vec<usize> = states.par_chunks(dim).map(|x| map.bin_index(x)).collect();
    let mut counts = vec![0usize; map.raw_len()];
    for b in &bins {
        counts[*b] += 1;
    }
    map.active = (0..counts.len()).filter(|&j| counts[j] > 0).collect();
    let mut column = vec![usize::MAX; counts.len()];
    for (c, &j) in map.active.iter().enumerate() {
        column[j] = c;
    }
    let p = map.active.len();
    let mut coef = DMatrix::zeros(p, n_out);
    for (i, b) in bins.iter().enumerate() {
        for o in 0..n_out {
            coef[(column[*b], o)] += targets[i * n_out + o];
        }
    }
    for (c, &j) in map.active.iter().enumerate() {
        for o in 0..n_out {
            coef[(c, o)] /= counts[j] as f64;
        }
    }
    let dof = n.saturating_sub(p).max(1) as f64;
    let residual_var = (0..n_out)
        .map(|o| {
            bins.iter()
                .enumerate()
                .map(|(i, b)| {
                    let r = targets[i * n_out + o] - coef[(column[*b], o)];
                    r * r
                })
                .sum::<f64>()
                / dof
        })
        .collect();
    let active_counts: Vec<f64> = map.active.iter().map(|&j| counts[j] as f64).collect();
    let gram_pinv = DMatrix::from_diagonal(&DVector::from_iterator(p, active_counts.iter().map(|c| 1.0 / c)));
    let (cmin, cmax) = active_counts
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), c| (lo.min(*c), hi.max(*c)));
    Fit {
        features: map,
        coef,
        gram_pinv,
        residual_var,
        condition_number: (cmax / cmin).sqrt(),
        rank: p,
        n_samples: n,
    }
}
