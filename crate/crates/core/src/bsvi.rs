//! Backward solver for `dY in dphi(Y) ds - [f1(s/eps, X, Y) + f2(Z)] ds + Z dW`,
//! `Y_T = g(X_T)`.
//!
//! One step `k = N-1, .., 0`:
//!
//! 1. regress `c_k(X_k) ~ E[Y_{k+1} | X_k]` and
//!    `z_k(X_k) ~ E[Y_{k+1} dW_k^T | X_k] / h` across paths;
//! 2. a short Picard loop `y <- c_k + h (f1(t_k, X_k, y) + f2(z_k))` starting
//!    from `y = c_k`, giving `y_tilde`;
//! 3. the implicit step `Y_k = prox(phi, h, y_tilde)` with
//!    `dK_k = y_tilde - Y_k in h dphi(Y_k)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convex::{ConvexFunction, DOMAIN_TOL};
use crate::error::{Error, Result};
use crate::forward::{ForwardPathBatch, Mode};
use crate::grid::TimeGrid;
use crate::regression::{self, Fit, RegressionBasis};
use crate::rng::tag;
use crate::scenario::Scenario;
use crate::stats::{self, MeanEstimate};

/// Condition numbers above this are recorded as warnings.
pub const CONDITION_WARN: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsviOptions {
    pub basis: RegressionBasis,
    pub n_picard: usize,
}

impl Default for BsviOptions {
    fn default() -> Self {
        Self {
            basis: RegressionBasis::default(),
            n_picard: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub n_features: usize,
    pub rank: usize,
    pub condition_number: f64,
    /// RMS regression residual of the `Y` targets.
    pub residual_rms_y: f64,
    /// RMS regression residual of the `Z` targets.
    pub residual_rms_z: f64,
    /// Max over paths of `|y_{j+1} - y_j|` for every Picard iteration.
    pub picard_gaps: Vec<f64>,
}

/// Discrete triple `(Y, Z, dK)` on every path.
#[derive(Debug, Clone)]
pub struct BsviSolution {
    pub grid: TimeGrid,
    pub mode: Mode,
    pub n_paths: usize,
    pub dim_d: usize,
    pub dim_l: usize,
    pub deterministic_start: bool,
    /// `[path][step + 1][d]`
    pub y: Vec<f64>,
    /// `[path][step][d * l]`
    pub z: Vec<f64>,
    /// `[path][step][d]`
    pub dk: Vec<f64>,
    /// `h (f1 + f2)` actually applied, `[path][step][d]`.
    pub driver_step: Vec<f64>,
    /// `sum_k |dK_k|` per path.
    pub k_variation: Vec<f64>,
    /// Indexed by step.
    pub diagnostics: Vec<StepDiagnostics>,
    pub warnings: Vec<String>,
    /// Regression fits, indexed by step.
    pub fits: Vec<Fit>,
}

impl BsviSolution {
    fn n(&self) -> usize {
        self.grid.n_steps()
    }

    #[inline]
    pub fn y_at(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim_d;
        let i = (path * (self.n() + 1) + step) * d;
        &self.y[i..i + d]
    }

    #[inline]
    pub fn z_at(&self, path: usize, step: usize) -> &[f64] {
        let w = self.dim_d * self.dim_l;
        let i = (path * self.n() + step) * w;
        &self.z[i..i + w]
    }

    #[inline]
    pub fn dk_at(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim_d;
        let i = (path * self.n() + step) * d;
        &self.dk[i..i + d]
    }

    #[inline]
    pub fn driver_at(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim_d;
        let i = (path * self.n() + step) * d;
        &self.driver_step[i..i + d]
    }

    /// `g(X_N) + sum_k (h f_k - dK_k)` on one path. With an intercept in the
    /// basis its cross-path mean equals the mean of `Y_0`.
    pub fn telescoped_value(&self, path: usize) -> Vec<f64> {
        let mut v = self.y_at(path, self.n()).to_vec();
        for k in 0..self.n() {
            for ((o, f), dk) in v.iter_mut().zip(self.driver_at(path, k)).zip(self.dk_at(path, k)) {
                *o += f - dk;
            }
        }
        v
    }
}

/// Solves the backward inequality on the paths of `forward`; the mode of the
/// forward batch selects `f1(t_k/eps, .)` or the averaged driver.
pub fn solve_bsvi(
    forward: &ForwardPathBatch,
    scenario: &Scenario,
    options: &BsviOptions,
) -> Result<BsviSolution> {
    options.basis.validate()?;
    if options.n_picard == 0 {
        return Err(Error::Config("n_picard must be at least 1".into()));
    }
    if forward.dim_m() != scenario.dim_m || forward.brownian().dim_l() != scenario.dim_l {
        return Err(Error::Config("forward batch does not match the scenario dimensions".into()));
    }
    let (m, d, l) = (scenario.dim_m, scenario.dim_d, scenario.dim_l);
    let phi = &scenario.phi;
    if phi.dim() != d {
        return Err(Error::Config("phi dimension differs from d".into()));
    }
    let averaged_driver = match forward.mode {
        Mode::Averaged => Some(scenario.averaged_driver.clone().ok_or_else(|| {
            Error::Config(format!("scenario '{}' lacks the averaged driver f1_bar", scenario.name))
        })?),
        Mode::Oscillating(_) => None,
    };
    let grid = *forward.grid();
    let n = grid.n_steps();
    let h = grid.h();
    let n_paths = forward.n_paths();
    let dw_width = d * l;

    let mut y = vec![0.0; n_paths * (n + 1) * d];
    let mut z = vec![0.0; n_paths * n * dw_width];
    let mut dk = vec![0.0; n_paths * n * d];
    let mut driver_step = vec![0.0; n_paths * n * d];
    let mut k_variation = vec![0.0; n_paths];

    // terminal condition
    let terminal: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut g = vec![0.0; d];
            (scenario.terminal)(forward.state(p, n), &mut g);
            g
        })
        .collect();
    for (p, g) in terminal.iter().enumerate() {
        let violation = phi.domain_violation(g);
        if !(violation <= DOMAIN_TOL) {
            return Err(Error::Scenario(format!(
                "terminal value g(X_T) = {g:?} on path {p} lies outside the closed domain of phi \
                 (distance {violation:e})"
            )));
        }
        let i = (p * (n + 1) + n) * d;
        y[i..i + d].copy_from_slice(g);
    }

    let mut diagnostics = Vec::with_capacity(n);
    let mut fits: Vec<Option<Fit>> = vec![None; n];
    let mut warnings = Vec::new();
    for k in (0..n).rev() {
        let t = grid.t(k);
        let fast = match forward.mode {
            Mode::Oscillating(eps) => t / eps,
            Mode::Averaged => t,
        };
        let states: Vec<f64> = (0..n_paths).flat_map(|p| forward.state(p, k).to_vec()).collect();
        let next = |p: usize| {
            let i = (p * (n + 1) + k + 1) * d;
            &y[i..i + d]
        };
        let y_targets: Vec<f64> = (0..n_paths).flat_map(|p| next(p).to_vec()).collect();
        let fit = regression::fit(&options.basis, &states, m, &y_targets, d)?;
        if fit.condition_number > CONDITION_WARN {
            warnings.push(format!(
                "step {k}: regression condition number {:e} exceeds {CONDITION_WARN:e}",
                fit.condition_number
            ));
        }
        // Z targets use Y_{k+1} - c_k(X_k); the subtracted term is
        // X_k-measurable, so the conditional mean is unchanged.
        let mut z_targets = vec![0.0; n_paths * dw_width];
        z_targets
            .par_chunks_mut(dw_width.max(1))
            .enumerate()
            .for_each(|(p, row)| {
                let mut c = vec![0.0; d];
                fit.predict(forward.state(p, k), &mut c);
                let dw = forward.brownian().increment(p, k);
                for (a, (yn, ca)) in next(p).iter().zip(&c).enumerate() {
                    for b in 0..l {
                        row[a * l + b] = (yn - ca) * dw[b] / h;
                    }
                }
            });
        let z_fit = regression::fit(&options.basis, &states, m, &z_targets, dw_width)?;

        struct PathStep {
            y: Vec<f64>,
            z: Vec<f64>,
            dk: Vec<f64>,
            drive: Vec<f64>,
            gaps: Vec<f64>,
        }
        let steps: Vec<PathStep> = (0..n_paths)
            .into_par_iter()
            .map(|p| -> Result<PathStep> {
                let x = forward.state(p, k);
                let mut c = vec![0.0; d];
                fit.predict(x, &mut c);
                let mut zk = vec![0.0; dw_width];
                z_fit.predict(x, &mut zk);
                let (c, zk) = (c.as_slice(), zk.as_slice());
                let mut f2 = vec![0.0; d];
                (scenario.z_driver)(zk, &mut f2);
                let mut f1 = vec![0.0; d];
                let mut y_prev = c.to_vec();
                let mut y_next = vec![0.0; d];
                let mut drive = vec![0.0; d];
                let mut gaps = Vec::with_capacity(options.n_picard);
                for _ in 0..options.n_picard {
                    match &averaged_driver {
                        Some(fbar) => fbar(x, &y_prev, &mut f1),
                        None => (scenario.driver)(fast, x, &y_prev, &mut f1),
                    }
                    let mut gap = 0.0f64;
                    for i in 0..d {
                        drive[i] = h * (f1[i] + f2[i]);
                        y_next[i] = c[i] + drive[i];
                        gap = gap.max((y_next[i] - y_prev[i]).abs());
                    }
                    gaps.push(gap);
                    std::mem::swap(&mut y_prev, &mut y_next);
                }
                let y_tilde = y_prev;
                let mut yk = vec![0.0; d];
                phi.prox_into(h, &y_tilde, &mut yk)?;
                let dkk: Vec<f64> = y_tilde.iter().zip(&yk).map(|(a, b)| a - b).collect();
                if yk.iter().chain(zk).any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite Y/Z on path {p} at step {k}")));
                }
                Ok(PathStep {
                    y: yk,
                    z: zk.to_vec(),
                    dk: dkk,
                    drive,
                    gaps,
                })
            })
            .collect::<Result<_>>()?;

        let mut picard_gaps = vec![0.0f64; options.n_picard];
        for (p, s) in steps.iter().enumerate() {
            let iy = (p * (n + 1) + k) * d;
            y[iy..iy + d].copy_from_slice(&s.y);
            let iz = (p * n + k) * dw_width;
            z[iz..iz + dw_width].copy_from_slice(&s.z);
            let ik = (p * n + k) * d;
            dk[ik..ik + d].copy_from_slice(&s.dk);
            driver_step[ik..ik + d].copy_from_slice(&s.drive);
            k_variation[p] += s.dk.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (g, v) in picard_gaps.iter_mut().zip(&s.gaps) {
                *g = g.max(*v);
            }
        }
        let rms = |v: &[f64]| (v.iter().sum::<f64>() / v.len().max(1) as f64).sqrt();
        diagnostics.push(StepDiagnostics {
            step: k,
            n_features: fit.n_features(),
            rank: fit.rank,
            condition_number: fit.condition_number,
            residual_rms_y: rms(&fit.residual_var),
            residual_rms_z: rms(&z_fit.residual_var),
            picard_gaps,
        });
        fits[k] = Some(fit);
    }
    diagnostics.reverse();
    Ok(BsviSolution {
        grid,
        mode: forward.mode,
        n_paths,
        dim_d: d,
        dim_l: l,
        deterministic_start: forward.start.is_deterministic(),
        y,
        z,
        dk,
        driver_step,
        k_variation,
        diagnostics,
        warnings,
        fits: fits.into_iter().map(|f| f.expect("every step fitted")).collect(),
    })
}

/// Value `u(t, x) = Y_t` at the start of a deterministic-start solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointValue {
    pub value: Vec<f64>,
    /// Standard error of the mean of the telescoped pathwise values.
    pub std_error: Vec<f64>,
    /// Cross-path standard deviation of `Y_0`.
    pub dispersion: Vec<f64>,
    pub warning: Option<String>,
}

pub fn point_value(solution: &BsviSolution) -> Result<PointValue> {
    if !solution.deterministic_start {
        return Err(Error::Config("point values need a deterministic starting point".into()));
    }
    let d = solution.dim_d;
    let n = solution.n_paths as f64;
    let tele: Vec<Vec<f64>> = (0..solution.n_paths).map(|p| solution.telescoped_value(p)).collect();
    let mut value = Vec::with_capacity(d);
    let mut std_error = Vec::with_capacity(d);
    let mut dispersion = Vec::with_capacity(d);
    let mut warning = None;
    for i in 0..d {
        let y0: Vec<f64> = (0..solution.n_paths).map(|p| solution.y_at(p, 0)[i]).collect();
        let t: Vec<f64> = tele.iter().map(|v| v[i]).collect();
        let se = (stats::sample_variance(&t) / n).sqrt();
        let disp = stats::sample_variance(&y0).sqrt();
        if disp > 10.0 * se && disp > 0.0 {
            warning = Some(format!(
                "coordinate {i}: cross-path dispersion {disp:e} exceeds 10 standard errors ({se:e}); \
                 the basis is too poor"
            ));
        }
        value.push(stats::mean(&y0));
        std_error.push(se);
        dispersion.push(disp);
    }
    Ok(PointValue {
        value,
        std_error,
        dispersion,
        warning,
    })
}

/// `u(T, x) = g(x)`.
pub fn terminal_point_value(scenario: &Scenario, x: &[f64]) -> PointValue {
    let mut g = vec![0.0; scenario.dim_d];
    (scenario.terminal)(x, &mut g);
    PointValue {
        value: g,
        std_error: vec![0.0; scenario.dim_d],
        dispersion: vec![0.0; scenario.dim_d],
        warning: None,
    }
}

/// Monte Carlo estimates of `E sup_k |Y_k|^2`, `sum_k h E ||Z_k||^2` and
/// `E sum_k |dK_k|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriBounds {
    pub sup_y_sq: MeanEstimate,
    pub int_z_sq: MeanEstimate,
    pub k_var: MeanEstimate,
}

pub fn apriori_bounds(solution: &BsviSolution) -> AprioriBounds {
    let n = solution.grid.n_steps();
    let h = solution.grid.h();
    let sup_y: Vec<f64> = (0..solution.n_paths)
        .map(|p| {
            (0..=n)
                .map(|k| solution.y_at(p, k).iter().map(|v| v * v).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .collect();
    let int_z: Vec<f64> = (0..solution.n_paths)
        .map(|p| {
            let per_step: Vec<f64> = (0..n)
                .map(|k| h * solution.z_at(p, k).iter().map(|v| v * v).sum::<f64>())
                .collect();
            stats::pairwise_sum(&per_step)
        })
        .collect();
    AprioriBounds {
        sup_y_sq: MeanEstimate::from_samples(&sup_y),
        int_z_sq: MeanEstimate::from_samples(&int_z),
        k_var: MeanEstimate::from_samples(&solution.k_variation),
    }
}

/// Worst value of `sum_k <Y_k - x, dK_k - y h>` over paths and test pairs,
/// with the tolerance it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub worst: f64,
    pub tol: f64,
    pub n_pairs: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.worst >= -self.tol
    }
}

/// Checks the discrete variational inequality against explicit graph points
/// `(x, y)`, `y in dphi(x)`; pairs that fail the sampled subgradient
/// certificate are rejected.
pub fn monotonicity_check_pairs(
    solution: &BsviSolution,
    phi: &ConvexFunction,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<MonotonicityReport> {
    let d = solution.dim_d;
    for (i, (x, yv)) in pairs.iter().enumerate() {
        if x.len() != d || yv.len() != d {
            return Err(Error::Config(format!("test pair {i} has the wrong dimension")));
        }
        let samples = phi.probe_samples(x, 32, i as u64);
        let gap = phi.subgradient_gap(x, yv, &samples);
        if !(phi.eval(x).is_finite() && gap <= 1e-12) {
            return Err(Error::Config(format!(
                "test pair {i}: {yv:?} is not a subgradient of phi at {x:?} (gap {gap:e})"
            )));
        }
    }
    let n = solution.grid.n_steps();
    let h = solution.grid.h();
    let per_path: Vec<(f64, f64)> = (0..solution.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut worst = f64::INFINITY;
            let mut scale = 0.0f64;
            for (x, yv) in pairs {
                let mut acc = 0.0;
                let mut mag = 0.0;
                for k in 0..n {
                    let yk = solution.y_at(p, k);
                    let dkk = solution.dk_at(p, k);
                    for i in 0..d {
                        let a = yk[i] - x[i];
                        let b = dkk[i] - yv[i] * h;
                        acc += a * b;
                        mag += (a * b).abs();
                    }
                }
                worst = worst.min(acc);
                scale = scale.max(mag);
            }
            (worst, scale)
        })
        .collect();
    let worst = per_path.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let scale = per_path.iter().map(|v| v.1).fold(0.0, f64::max);
    Ok(MonotonicityReport {
        worst: if pairs.is_empty() { 0.0 } else { worst },
        tol: 1e-8 * (1.0 + scale),
        n_pairs: pairs.len(),
    })
}

/// [`monotonicity_check_pairs`] on `n_test_pairs` sampled graph points.
pub fn monotonicity_check(
    solution: &BsviSolution,
    phi: &ConvexFunction,
    n_test_pairs: usize,
) -> Result<MonotonicityReport> {
    let pairs = phi.sample_graph_pairs(n_test_pairs, 1.0, tag::TEST_PAIRS)?;
    monotonicity_check_pairs(solution, phi, &pairs)
}

/// Domain confinement, subgradient certification of `dK / h` and the
/// discrete variational inequality for one solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub max_domain_violation: f64,
    pub max_subgradient_gap: f64,
    pub monotonicity: MonotonicityReport,
}

impl Certificate {
    /// Thresholds: domain `1e-12`, subgradient gap `1e-9` (closed-form
    /// kinds; `1e-6` for bisection), monotonicity `-1e-8 * scale`.
    pub fn passed(&self, phi: &ConvexFunction) -> bool {
        let gap_tol = if phi.has_closed_form_prox() { 1e-9 } else { 1e-6 };
        self.max_domain_violation <= DOMAIN_TOL
            && self.max_subgradient_gap <= gap_tol
            && self.monotonicity.passed()
    }
}

pub fn certify(solution: &BsviSolution, phi: &ConvexFunction, n_test_pairs: usize) -> Result<Certificate> {
    let n = solution.grid.n_steps();
    let h = solution.grid.h();
    let per_path: Vec<(f64, f64)> = (0..solution.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut dom = 0.0f64;
            let mut gap = f64::NEG_INFINITY;
            for k in 0..=n {
                dom = dom.max(phi.domain_violation(solution.y_at(p, k)));
            }
            for k in 0..n {
                let yk = solution.y_at(p, k);
                let v: Vec<f64> = solution.dk_at(p, k).iter().map(|a| a / h).collect();
                let samples = phi.probe_samples(yk, 2, (p * n + k) as u64);
                gap = gap.max(phi.subgradient_gap(yk, &v, &samples));
            }
            (dom, gap)
        })
        .collect();
    Ok(Certificate {
        max_domain_violation: per_path.iter().map(|v| v.0).fold(0.0, f64::max),
        max_subgradient_gap: per_path.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max),
        monotonicity: monotonicity_check(solution, phi, n_test_pairs)?,
    })
}

/// Accumulated regression standard error of `Y_k` on every path:
/// `sqrt(sum_{j >= k} s_j^2 lev_j(X_k))` with `s_j^2` the residual variance
/// and `lev_j` the leverage of step `j`'s fit.
pub fn regression_standard_error(
    solution: &BsviSolution,
    forward: &ForwardPathBatch,
    k: usize,
) -> Vec<f64> {
    let n = solution.grid.n_steps();
    let d = solution.dim_d;
    (0..solution.n_paths)
        .into_par_iter()
        .map(|p| {
            let x = forward.state(p, k);
            let var: f64 = (k..n)
                .map(|j| {
                    let fit = &solution.fits[j];
                    let s2 = fit.residual_var[..d].iter().cloned().fold(0.0, f64::max);
                    s2 * fit.leverage(x)
                })
                .sum();
            var.sqrt()
        })
        .collect()
}

/// Per-step residuals of the discrete integral identity
/// `Y_k = Y_{k+1} - dK_k + h f_k - Z_k dW_k + r_k`, `[path][step][d]`.
pub fn identity_residuals(solution: &BsviSolution, forward: &ForwardPathBatch) -> Vec<f64> {
    let n = solution.grid.n_steps();
    let (d, l) = (solution.dim_d, solution.dim_l);
    let mut out = vec![0.0; solution.n_paths * n * d];
    for p in 0..solution.n_paths {
        for k in 0..n {
            let dw = forward.brownian().increment(p, k);
            let zk = solution.z_at(p, k);
            for i in 0..d {
                let zdw: f64 = (0..l).map(|b| zk[i * l + b] * dw[b]).sum();
                let rhs = solution.y_at(p, k + 1)[i] - solution.dk_at(p, k)[i]
                    + solution.driver_at(p, k)[i]
                    - zdw;
                out[(p * n + k) * d + i] = solution.y_at(p, k)[i] - rhs;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::forward::{euler_averaged, Start};
    use crate::grid::make_grid;
    use crate::scenario::builtin;

    fn averaged(s: &Scenario, n_steps: usize, n_paths: usize, x0: f64, seed: u64) -> ForwardPathBatch {
        let g = make_grid(0.0, s.horizon, n_steps).unwrap();
        let w = sample_brownian(&g, n_paths, s.dim_l, seed).unwrap();
        euler_averaged(s, &Start::point(0.0, vec![x0]), &w).unwrap()
    }

    #[test]
    fn constant_terminal_gives_constant_solution() {
        let s = builtin::martingale().with_terminal(|_, o| o[0] = 0.7);
        let fwd = averaged(&s, 20, 500, 0.0, 1);
        let sol = solve_bsvi(&fwd, &s, &BsviOptions::default()).unwrap();
        for p in 0..sol.n_paths {
            for k in 0..=20 {
                assert!((sol.y_at(p, k)[0] - 0.7).abs() < 1e-12);
            }
            for k in 0..20 {
                assert!(sol.z_at(p, k)[0].abs() < 1e-10);
                assert_eq!(sol.dk_at(p, k)[0], 0.0);
            }
        }
        let b = apriori_bounds(&sol);
        assert!((b.sup_y_sq.mean - 0.49).abs() < 1e-10);
        assert!(b.int_z_sq.mean < 1e-18);
        assert_eq!(b.k_var.mean, 0.0);
    }

    #[test]
    fn zero_phi_keeps_dk_exactly_zero() {
        let s = builtin::martingale().with_terminal(|x, o| o[0] = x[0].sin());
        let fwd = averaged(&s, 20, 400, 0.3, 2);
        let sol = solve_bsvi(&fwd, &s, &BsviOptions::default()).unwrap();
        assert!(sol.dk.iter().all(|v| v.to_bits() == 0.0f64.to_bits()));
        assert!(sol.k_variation.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn terminal_outside_domain_is_rejected() {
        let s = builtin::martingale()
            .with_phi(ConvexFunction::indicator_box(vec![-0.5], vec![0.5]).unwrap());
        let fwd = averaged(&s, 10, 100, 0.0, 3);
        let err = solve_bsvi(&fwd, &s, &BsviOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Scenario(ref m) if m.contains("path")));
    }

    #[test]
    fn terminal_on_boundary_within_band_accepted() {
        let s = builtin::martingale()
            .with_terminal(|_, o| o[0] = 0.5 + 5e-13)
            .with_phi(ConvexFunction::indicator_box(vec![-0.5], vec![0.5]).unwrap());
        let fwd = averaged(&s, 10, 100, 0.0, 3);
        let sol = solve_bsvi(&fwd, &s, &BsviOptions::default()).unwrap();
        assert_eq!(sol.y_at(0, 10)[0], 0.5 + 5e-13);
        assert!(sol.y_at(0, 9)[0] <= 0.5);
    }

    #[test]
    fn missing_averaged_driver_rejected() {
        let mut s = builtin::martingale();
        s.averaged_driver = None;
        let fwd = averaged(&s, 10, 50, 0.0, 3);
        assert!(matches!(solve_bsvi(&fwd, &s, &BsviOptions::default()), Err(Error::Config(_))));
        let zero = BsviOptions { n_picard: 0, ..Default::default() };
        assert!(solve_bsvi(&fwd, &builtin::martingale(), &zero).is_err());
    }

    #[test]
    fn dk_certified_and_confined_for_binding_obstacle() {
        // constant upward driver pushes Y into the upper face of the box
        let s = builtin::martingale()
            .with_terminal(|x, o| o[0] = x[0].clamp(-0.5, 0.5))
            .with_driver(|_, _, _, o| o[0] = 2.0, Some(std::sync::Arc::new(|_, _, o: &mut [f64]| o[0] = 2.0)))
            .with_phi(ConvexFunction::indicator_box(vec![-0.5], vec![0.5]).unwrap());
        let fwd = averaged(&s, 40, 1000, 0.2, 4);
        let sol = solve_bsvi(&fwd, &s, &BsviOptions::default()).unwrap();
        let cert = certify(&sol, &s.phi, 16).unwrap();
        assert!(cert.passed(&s.phi), "{cert:?}");
        assert!(sol.k_variation.iter().any(|v| *v > 0.0));
        // the upward driver makes the upper face dominate the reflection
        assert!(sol.dk.iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn hand_built_violation_detected() {
        let s = builtin::martingale()
            .with_phi(ConvexFunction::indicator_box(vec![0.0], vec![f64::INFINITY]).unwrap());
        let fwd = averaged(&s, 4, 3, 1.0, 5);
        let mut sol = solve_bsvi(&fwd, &s.clone().with_phi(ConvexFunction::zero(1)), &BsviOptions::default()).unwrap();
        sol.y.iter_mut().for_each(|v| *v = 0.0);
        // outward push at the lower face: dK > 0 is not in the normal cone
        sol.dk.iter_mut().for_each(|v| *v = 1.0);
        let rep = monotonicity_check_pairs(&sol, &s.phi, &[(vec![1.0], vec![0.0])]).unwrap();
        assert!(rep.worst < 0.0 && !rep.passed());
        // a correct inward push at the same point passes
        sol.dk.iter_mut().for_each(|v| *v = -1.0);
        let rep = monotonicity_check_pairs(&sol, &s.phi, &[(vec![1.0], vec![0.0])]).unwrap();
        assert!(rep.passed());
    }

    #[test]
    fn invalid_test_pair_rejected() {
        let s = builtin::martingale();
        let fwd = averaged(&s, 4, 3, 1.0, 5);
        let sol = solve_bsvi(&fwd, &s, &BsviOptions::default()).unwrap();
        let phi = ConvexFunction::scaled_abs(vec![1.0]).unwrap();
        assert!(matches!(
            monotonicity_check_pairs(&sol, &phi, &[(vec![0.0], vec![2.0])]),
            Err(Error::Config(_))
        ));
        let zero = ConvexFunction::zero(1);
        let rep = monotonicity_check(&sol, &zero, 10).unwrap();
        assert_eq!(rep.worst, 0.0);
    }

    #[test]
    fn picard_contracts_with_driver_lipschitz_constant() {
        let l4 = 0.8;
        let s = builtin::martingale()
            .with_terminal(|x, o| o[0] = x[0].sin())
            .with_driver(
                move |_, x, y, o| o[0] = -l4 * y[0].sin() + x[0].cos(),
                Some(std::sync::Arc::new(move |x: &[f64], y: &[f64], o: &mut [f64]| {
                    o[0] = -l4 * y[0].sin() + x[0].cos()
                })),
            )
            .with_z_driver(|z, o| o[0] = 0.3 * z[0]);
        let fwd = averaged(&s, 10, 300, 0.1, 6);
        let sol = solve_bsvi(&fwd, &s, &BsviOptions { n_picard: 4, ..Default::default() }).unwrap();
        let h = sol.grid.h();
        for diag in &sol.diagnostics {
            for w in diag.picard_gaps.windows(2) {
                assert!(w[1] <= l4 * h * w[0] * (1.0 + 1e-9) + 1e-300, "{:?}", diag.picard_gaps);
            }
        }
    }

    #[test]
    fn point_value_requires_deterministic_start() {
        let s = builtin::martingale();
        let g = make_grid(0.0, 1.0, 5).unwrap();
        let w = sample_brownian(&g, 10, 1, 1).unwrap();
        let start = Start::Sample { t: 0.0, points: vec![vec![0.0], vec![1.0]] };
        let fwd = euler_averaged(&s, &start, &w).unwrap();
        let sol = solve_bsvi(&fwd, &s, &BsviOptions::default()).unwrap();
        assert!(point_value(&sol).is_err());
    }

    #[test]
    fn terminal_point_value_is_g() {
        let s = builtin::example71();
        let v = terminal_point_value(&s, &[0.4]);
        assert_eq!(v.value, vec![0.4f64.sin()]);
        assert_eq!(v.std_error, vec![0.0]);
    }

    #[test]
    fn telescoped_mean_matches_y0() {
        let s = builtin::obstacle_tree()
            .with_driver(|_, x, y, o| o[0] = 0.5 * x[0] - 0.2 * y[0], Some(std::sync::Arc::new(|x: &[f64], y: &[f64], o: &mut [f64]| o[0] = 0.5 * x[0] - 0.2 * y[0])));
        let fwd = averaged(&s, 25, 2000, 0.1, 7);
        let sol = solve_bsvi(&fwd, &s, &BsviOptions::default()).unwrap();
        let pv = point_value(&sol).unwrap();
        let tele: Vec<f64> = (0..sol.n_paths).map(|p| sol.telescoped_value(p)[0]).collect();
        assert!((stats::mean(&tele) - pv.value[0]).abs() < 1e-10);
        assert!(pv.warning.is_none());
    }
}
