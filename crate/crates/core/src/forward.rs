//! Euler–Maruyama for the oscillating system `dX = b(s/eps, X) ds +
//! sigma(s/eps, X) dW` and its averaged counterpart, driven by a shared
//! [`BrownianBatch`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brownian::BrownianBatch;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scenario::{Scenario, StateFn, TimeStateFn};
use crate::stats::MeanEstimate;

pub const DEFAULT_ETA_OSC: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    Oscillating(f64),
    Averaged,
}

impl Mode {
    pub fn label(&self) -> String {
        match self {
            Mode::Oscillating(eps) => format!("eps={eps}"),
            Mode::Averaged => "averaged".into(),
        }
    }
}

/// Initial condition at time `t`: one point, or a finite sample of points
/// assigned to paths cyclically (`path i` starts at `points[i % len]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Start {
    Point { t: f64, x: Vec<f64> },
    Sample { t: f64, points: Vec<Vec<f64>> },
}

impl Start {
    pub fn point(t: f64, x: Vec<f64>) -> Self {
        Start::Point { t, x }
    }

    pub fn t(&self) -> f64 {
        match self {
            Start::Point { t, .. } | Start::Sample { t, .. } => *t,
        }
    }

    pub fn for_path(&self, path: usize) -> &[f64] {
        match self {
            Start::Point { x, .. } => x,
            Start::Sample { points, .. } => &points[path % points.len()],
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Start::Point { .. } => true,
            Start::Sample { points, .. } => points.windows(2).all(|w| w[0] == w[1]),
        }
    }

    fn validate(&self, dim_m: usize, grid: &TimeGrid) -> Result<()> {
        if self.t() != grid.t0() {
            return Err(Error::Config(format!(
                "start time {} differs from grid start {}",
                self.t(),
                grid.t0()
            )));
        }
        let bad_dim = match self {
            Start::Point { x, .. } => x.len() != dim_m,
            Start::Sample { points, .. } => {
                points.is_empty() || points.iter().any(|p| p.len() != dim_m)
            }
        };
        if bad_dim {
            return Err(Error::Config(format!(
                "initial condition must be non-empty with dimension {dim_m}"
            )));
        }
        Ok(())
    }
}

/// Simulated states `[path][step + 1][m]` together with the noise that
/// produced them.
#[derive(Debug, Clone)]
pub struct ForwardPathBatch {
    pub mode: Mode,
    pub start: Start,
    dim_m: usize,
    states: Vec<f64>,
    brownian: BrownianBatch,
}

impl ForwardPathBatch {
    pub fn grid(&self) -> &TimeGrid {
        self.brownian.grid()
    }

    pub fn n_paths(&self) -> usize {
        self.brownian.n_paths()
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn brownian(&self) -> &BrownianBatch {
        &self.brownian
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    #[inline]
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let stride = (self.grid().n_steps() + 1) * self.dim_m;
        let start = path * stride + step * self.dim_m;
        &self.states[start..start + self.dim_m]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let stride = (self.grid().n_steps() + 1) * self.dim_m;
        &self.states[path * stride..(path + 1) * stride]
    }

    /// Estimator of `E sup_k |X_k|^power`.
    pub fn sup_moment(&self, power: f64) -> MeanEstimate {
        let m = self.dim_m;
        let per_path: Vec<f64> = (0..self.n_paths())
            .map(|p| {
                self.path(p)
                    .chunks(m)
                    .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(power))
                    .fold(0.0, f64::max)
            })
            .collect();
        MeanEstimate::from_samples(&per_path)
    }
}

/// Smallest step count on `[t0, T]` with `h <= eps / eta_osc`.
pub fn required_steps(t0: f64, horizon: f64, epsilon: f64, eta_osc: f64) -> usize {
    let steps = ((horizon - t0) * eta_osc / epsilon).ceil() as usize;
    // guard against the ceiling landing one short through rounding
    if (horizon - t0) / steps as f64 > epsilon / eta_osc {
        steps + 1
    } else {
        steps.max(1)
    }
}

/// `(t, x, drift_out, diffusion_out)`
type StepFn<'a> = dyn Fn(f64, &[f64], &mut [f64], &mut [f64]) + Sync + 'a;

fn simulate(
    dims: (usize, usize),
    start: &Start,
    brownian: &BrownianBatch,
    mode: Mode,
    step_fn: &StepFn<'_>,
) -> Result<ForwardPathBatch> {
    let (m, l) = dims;
    let grid = *brownian.grid();
    start.validate(m, &grid)?;
    if brownian.dim_l() != l {
        return Err(Error::Config(format!(
            "Brownian dimension {} does not match scenario l = {l}",
            brownian.dim_l()
        )));
    }
    let n = grid.n_steps();
    let h = grid.h();
    let stride = (n + 1) * m;
    let mut states = vec![0.0; brownian.n_paths() * stride];
    states
        .par_chunks_mut(stride)
        .enumerate()
        .try_for_each(|(p, path)| {
            let mut drift = vec![0.0; m];
            let mut diff = vec![0.0; m * l];
            path[..m].copy_from_slice(start.for_path(p));
            for k in 0..n {
                let (done, rest) = path.split_at_mut((k + 1) * m);
                let x = &done[k * m..];
                step_fn(grid.t(k), x, &mut drift, &mut diff);
                let dw = brownian.increment(p, k);
                let next = &mut rest[..m];
                for i in 0..m {
                    let noise: f64 = (0..l).map(|j| diff[i * l + j] * dw[j]).sum();
                    next[i] = x[i] + drift[i] * h + noise;
                }
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite state on path {p} at step {} ({})",
                        k + 1,
                        mode.label()
                    )));
                }
            }
            Ok(())
        })?;
    Ok(ForwardPathBatch {
        mode,
        start: start.clone(),
        dim_m: m,
        states,
        brownian: brownian.clone(),
    })
}

/// `X_{k+1} = X_k + b(t_k/eps, X_k) h + sigma(t_k/eps, X_k) dW_k`.
///
/// Requires `h <= eps / eta_osc`; otherwise the error names the step count
/// that would be needed.
pub fn euler_multiscale(
    scenario: &Scenario,
    epsilon: f64,
    start: &Start,
    brownian: &BrownianBatch,
    eta_osc: f64,
) -> Result<ForwardPathBatch> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    if !(eta_osc > 0.0) {
        return Err(Error::Config(format!("eta_osc = {eta_osc} must be positive")));
    }
    let grid = brownian.grid();
    if grid.h() > epsilon / eta_osc * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "step h = {} does not resolve epsilon = {epsilon} (need h <= eps/{eta_osc}); \
             use n_steps >= {}",
            grid.h(),
            required_steps(grid.t0(), grid.horizon(), epsilon, eta_osc)
        )));
    }
    let b: &TimeStateFn = &scenario.drift;
    let sigma: &TimeStateFn = &scenario.diffusion;
    let inv = 1.0 / epsilon;
    simulate(
        (scenario.dim_m, scenario.dim_l),
        start,
        brownian,
        Mode::Oscillating(epsilon),
        &|t, x, drift, diff| {
            let fast = t * inv;
            b(fast, x, drift);
            sigma(fast, x, diff);
        },
    )
}

/// `X_{k+1} = X_k + b_bar(X_k) h + sigma_bar(X_k) dW_k` on the same noise.
pub fn euler_averaged(
    scenario: &Scenario,
    start: &Start,
    brownian: &BrownianBatch,
) -> Result<ForwardPathBatch> {
    let (Some(b), Some(sigma)) = (&scenario.averaged_drift, &scenario.averaged_diffusion) else {
        return Err(Error::Config(format!(
            "scenario '{}' has no averaged drift/diffusion; infer them first",
            scenario.name
        )));
    };
    let b: &StateFn = b;
    let sigma: &StateFn = sigma;
    simulate(
        (scenario.dim_m, scenario.dim_l),
        start,
        brownian,
        Mode::Averaged,
        &|_, x, drift, diff| {
            b(x, drift);
            sigma(x, diff);
        },
    )
}

/// Per-path `sup_k |X^a_k - X^b_k|^{2p}` and its Monte Carlo mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SupDistance {
    pub per_path: Vec<f64>,
    pub estimate: MeanEstimate,
}

pub fn sup_distance_sq(
    a: &ForwardPathBatch,
    b: &ForwardPathBatch,
    power_p: f64,
) -> Result<SupDistance> {
    if !a.grid().same_as(b.grid()) || a.n_paths() != b.n_paths() || a.dim_m != b.dim_m {
        return Err(Error::Config("batches have different grids, path counts or dimensions".into()));
    }
    if !a.brownian.shares_noise_with(&b.brownian) {
        return Err(Error::Config("batches are not driven by the same Brownian increments".into()));
    }
    let m = a.dim_m;
    let per_path: Vec<f64> = (0..a.n_paths())
        .into_par_iter()
        .map(|p| {
            a.path(p)
                .chunks(m)
                .zip(b.path(p).chunks(m))
                .map(|(xa, xb)| {
                    let sq: f64 = xa.iter().zip(xb).map(|(u, v)| (u - v) * (u - v)).sum();
                    sq.powf(power_p)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let estimate = MeanEstimate::from_samples(&per_path);
    Ok(SupDistance { per_path, estimate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::grid::make_grid;
    use crate::scenario::{builtin, Scenario};

    fn frozen() -> Scenario {
        Scenario::new("frozen", (1, 1, 1), 1.0, |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 0.0)
            .with_averaged(|_, o| o[0] = 0.0, |_, o| o[0] = 0.0)
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let g = make_grid(0.0, 1.0, 100).unwrap();
        let w = sample_brownian(&g, 20, 1, 1).unwrap();
        let start = Start::point(0.0, vec![1.7]);
        let osc = euler_multiscale(&frozen(), 0.1, &start, &w, 10.0).unwrap();
        assert!(osc.states().iter().all(|v| *v == 1.7));
        let avg = euler_averaged(&frozen(), &start, &w).unwrap();
        assert!(avg.states().iter().all(|v| *v == 1.7));
    }

    #[test]
    fn pure_brownian_is_cumulative_sum() {
        let g = make_grid(0.0, 1.0, 50).unwrap();
        let w = sample_brownian(&g, 5, 1, 3).unwrap();
        let s = builtin::martingale();
        let batch = euler_multiscale(&s, 0.2, &Start::point(0.0, vec![0.0]), &w, 10.0).unwrap();
        for p in 0..5 {
            let mut acc = 0.0;
            assert_eq!(batch.state(p, 0)[0], 0.0);
            for k in 0..50 {
                acc += w.increment(p, k)[0];
                assert_eq!(batch.state(p, k + 1)[0], acc);
            }
        }
    }

    #[test]
    fn coarse_grid_rejected_with_required_steps() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let w = sample_brownian(&g, 2, 1, 3).unwrap();
        let err = euler_multiscale(&builtin::example71(), 0.1, &Start::point(0.0, vec![1.0]), &w, 20.0)
            .unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("n_steps >= 200"), "{msg}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn epsilon_range_checked() {
        let g = make_grid(0.0, 1.0, 1000).unwrap();
        let w = sample_brownian(&g, 2, 1, 3).unwrap();
        let start = Start::point(0.0, vec![1.0]);
        for eps in [0.0, 1.0, -0.1] {
            assert!(euler_multiscale(&builtin::example71(), eps, &start, &w, 20.0).is_err());
        }
    }

    #[test]
    fn missing_averages_rejected() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let w = sample_brownian(&g, 2, 1, 3).unwrap();
        let mut s = builtin::example71();
        s.averaged_drift = None;
        assert!(matches!(
            euler_averaged(&s, &Start::point(0.0, vec![1.0]), &w),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let s = Scenario::new("blowup", (1, 1, 1), 1.0, |_, x, o| o[0] = x[0] * x[0] * 1e200, |_, _, o| o[0] = 0.0);
        let g = make_grid(0.0, 1.0, 400).unwrap();
        let w = sample_brownian(&g, 2, 1, 3).unwrap();
        let err = euler_multiscale(&s, 0.1, &Start::point(0.0, vec![1.0]), &w, 20.0).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("path")));
    }

    #[test]
    fn coinciding_coefficients_give_identical_paths() {
        let g = make_grid(0.0, 1.0, 400).unwrap();
        let w = sample_brownian(&g, 30, 1, 8).unwrap();
        let s = builtin::example71_constant();
        let start = Start::point(0.0, vec![1.0]);
        let osc = euler_multiscale(&s, 0.05, &start, &w, 20.0).unwrap();
        let avg = euler_averaged(&s, &start, &w).unwrap();
        assert_eq!(osc.states(), avg.states());
        assert!(osc.brownian().shares_noise_with(avg.brownian()));
        assert_eq!(sup_distance_sq(&osc, &avg, 1.0).unwrap().estimate.mean, 0.0);
    }

    #[test]
    fn constant_offset_distance() {
        let g = make_grid(0.0, 1.0, 20).unwrap();
        let w = sample_brownian(&g, 10, 1, 8).unwrap();
        let a = euler_averaged(&frozen(), &Start::point(0.0, vec![1.0]), &w).unwrap();
        let b = euler_averaged(&frozen(), &Start::point(0.0, vec![2.0]), &w).unwrap();
        let d = sup_distance_sq(&a, &b, 1.0).unwrap();
        assert_eq!(d.estimate.mean, 1.0);
        assert_eq!(d.estimate.std_error, 0.0);
        assert_eq!(sup_distance_sq(&a, &a, 1.0).unwrap().estimate.mean, 0.0);
    }

    #[test]
    fn mismatched_batches_rejected() {
        let w1 = sample_brownian(&make_grid(0.0, 1.0, 20).unwrap(), 10, 1, 8).unwrap();
        let w2 = sample_brownian(&make_grid(0.0, 1.0, 40).unwrap(), 10, 1, 8).unwrap();
        let w3 = sample_brownian(&make_grid(0.0, 1.0, 20).unwrap(), 10, 1, 9).unwrap();
        let start = Start::point(0.0, vec![1.0]);
        let a = euler_averaged(&frozen(), &start, &w1).unwrap();
        let b = euler_averaged(&frozen(), &start, &w2).unwrap();
        let c = euler_averaged(&frozen(), &start, &w3).unwrap();
        assert!(matches!(sup_distance_sq(&a, &b, 1.0), Err(Error::Config(_))));
        assert!(matches!(sup_distance_sq(&a, &c, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn sampled_initial_points_cycle() {
        let g = make_grid(0.0, 1.0, 4).unwrap();
        let w = sample_brownian(&g, 5, 1, 8).unwrap();
        let start = Start::Sample {
            t: 0.0,
            points: vec![vec![1.0], vec![2.0]],
        };
        let b = euler_averaged(&frozen(), &start, &w).unwrap();
        let firsts: Vec<f64> = (0..5).map(|p| b.state(p, 0)[0]).collect();
        assert_eq!(firsts, vec![1.0, 2.0, 1.0, 2.0, 1.0]);
        assert!(!start.is_deterministic());
    }

    #[test]
    fn start_time_must_match_grid() {
        let g = make_grid(0.5, 1.0, 4).unwrap();
        let w = sample_brownian(&g, 2, 1, 8).unwrap();
        assert!(euler_averaged(&frozen(), &Start::point(0.0, vec![1.0]), &w).is_err());
        assert!(euler_averaged(&frozen(), &Start::point(0.5, vec![1.0]), &w).is_ok());
    }

    #[test]
    fn required_steps_is_tight() {
        assert_eq!(required_steps(0.0, 1.0, 0.1, 20.0), 200);
        assert_eq!(required_steps(0.0, 1.0, 0.0125, 20.0), 1600);
        let n = required_steps(0.0, 1.0, 0.03, 20.0);
        assert!(1.0 / n as f64 <= 0.03 / 20.0);
        assert!(1.0 / (n - 1) as f64 > 0.03 / 20.0);
    }
}
