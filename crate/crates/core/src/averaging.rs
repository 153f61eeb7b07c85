//! Cesàro time-averages `(1/T) int_0^T f(s, .) ds` of coefficients, empirical
//! estimates of the averaging rates (the kappa functions) and inference of
//! averaged coefficients when no closed form is available.
//!
//! The kappa estimates are surrogates: suprema over all `x` are replaced by a
//! maximum over a finite probe grid on `[-R, R]^dim`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{AveragedDriverFn, Scenario, StateFn};

pub const DEFAULT_PROBE_RADIUS: f64 = 5.0;
pub const DEFAULT_PROBES_PER_AXIS: usize = 41;
/// Initial Simpson intervals used by the scenario-level helpers.
pub const DEFAULT_QUAD_INTERVALS: usize = 16;

const QUAD_REL_TOL: f64 = 1e-10;
const MAX_DOUBLINGS: usize = 20;

/// Composite Simpson rule on `[0, t_hat]` for a vector integrand, doubling
/// the number of intervals until two successive estimates agree to
/// `1e-10` relative to `|I| + int |f|`. Returns the integral.
pub fn simpson_adaptive<F>(mut f: F, dim: usize, t_hat: f64, n_quad: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(t_hat > 0.0 && t_hat.is_finite()) {
        return Err(Error::Config(format!("averaging horizon {t_hat} must be positive")));
    }
    if n_quad < 2 {
        return Err(Error::Config(format!("n_quad = {n_quad} must be at least 2")));
    }
    let mut n = n_quad + n_quad % 2;
    let mut buf = vec![0.0; dim];
    let mut ends = vec![0.0; dim];
    let mut abs_ends = 0.0;
    for s in [0.0, t_hat] {
        f(s, &mut buf);
        for (e, v) in ends.iter_mut().zip(&buf) {
            *e += v;
            abs_ends += v.abs() / dim as f64;
        }
    }
    let mut odd = vec![0.0; dim];
    let mut even = vec![0.0; dim];
    let mut abs_interior = 0.0;
    let mut sum_over = |lo: usize, step: usize, n: usize, acc: &mut Vec<f64>, abs: &mut f64| {
        let h = t_hat / n as f64;
        let mut i = lo;
        while i < n {
            f(i as f64 * h, &mut buf);
            for (a, v) in acc.iter_mut().zip(&buf) {
                *a += v;
                *abs += v.abs() / dim as f64;
            }
            i += step;
        }
    };
    sum_over(1, 2, n, &mut odd, &mut abs_interior);
    sum_over(2, 2, n, &mut even, &mut abs_interior);
    let simpson = |n: usize, odd: &[f64], even: &[f64]| -> Vec<f64> {
        let h = t_hat / n as f64;
        (0..dim)
            .map(|i| h / 3.0 * (ends[i] + 4.0 * odd[i] + 2.0 * even[i]))
            .collect()
    };
    let mut prev = simpson(n, &odd, &even);
    let mut agreed = 0;
    for _ in 0..MAX_DOUBLINGS {
        for (e, o) in even.iter_mut().zip(odd.iter_mut()) {
            *e += *o;
            *o = 0.0;
        }
        n *= 2;
        sum_over(1, 2, n, &mut odd, &mut abs_interior);
        let cur = simpson(n, &odd, &even);
        let l1 = t_hat * (abs_ends + abs_interior) / (n + 1) as f64;
        let diff = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = cur.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if diff <= QUAD_REL_TOL * (size + l1) {
            agreed += 1;
            if agreed == 2 {
                return Ok(cur);
            }
        } else {
            agreed = 0;
        }
        prev = cur;
    }
    Err(Error::Numeric(format!(
        "Simpson quadrature on [0, {t_hat}] did not converge after {MAX_DOUBLINGS} doublings"
    )))
}

/// `(1/T) int_0^T b(s, x) ds`.
pub fn cesaro_average_drift<F>(b: F, x: &[f64], dim_out: usize, t_hat: f64, n_quad: usize) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let mut integral = simpson_adaptive(|s, out| b(s, x, out), dim_out, t_hat, n_quad)?;
    integral.iter_mut().for_each(|v| *v /= t_hat);
    Ok(integral)
}

/// `(1/T) int_0^T ||sigma(s, x) - sigma_bar(x)||^2 ds` (Frobenius norm).
pub fn cesaro_average_diffusion_sq<F, G>(
    sigma: F,
    sigma_bar: G,
    x: &[f64],
    dim_out: usize,
    t_hat: f64,
    n_quad: usize,
) -> Result<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
    G: Fn(&[f64], &mut [f64]),
{
    let mut bar = vec![0.0; dim_out];
    sigma_bar(x, &mut bar);
    let mut buf = vec![0.0; dim_out];
    let integral = simpson_adaptive(
        |s, out| {
            sigma(s, x, &mut buf);
            out[0] = buf.iter().zip(&bar).map(|(a, b)| (a - b) * (a - b)).sum();
        },
        1,
        t_hat,
        n_quad,
    )?;
    Ok(integral[0] / t_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaKind {
    Drift,
    Diffusion,
    Driver,
}

impl KappaKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KappaKind::Drift => "drift",
            KappaKind::Diffusion => "diffusion",
            KappaKind::Driver => "driver",
        }
    }
}

/// Probe box and quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub radius: f64,
    pub per_axis: usize,
    pub n_quad: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            radius: DEFAULT_PROBE_RADIUS,
            per_axis: DEFAULT_PROBES_PER_AXIS,
            n_quad: DEFAULT_QUAD_INTERVALS,
        }
    }
}

/// Uniform tensor grid on `[-R, R]^dim`. For `dim > 2` the per-axis count is
/// reduced so the total stays below `per_axis^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub dim: usize,
    pub radius: f64,
    pub per_axis: usize,
}

impl ProbeGrid {
    pub fn new(dim: usize, radius: f64, per_axis: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("probe radius {radius} must be positive")));
        }
        if per_axis < 2 || dim == 0 {
            return Err(Error::Config("probe grid needs dim >= 1 and >= 2 points per axis".into()));
        }
        let per_axis = if dim > 2 {
            let cap = (per_axis * per_axis) as f64;
            (cap.powf(1.0 / dim as f64).floor() as usize).clamp(2, per_axis)
        } else {
            per_axis
        };
        Ok(Self { dim, radius, per_axis })
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.radius + 2.0 * self.radius * i as f64 / (self.per_axis - 1) as f64
    }

    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        for v in p.iter_mut() {
            *v = self.node(index % self.per_axis);
            index /= self.per_axis;
        }
        p
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// `(probe, T_hat) -> squared deviation`.
type DeviationFn<'a> = dyn Fn(&[f64], f64) -> Result<f64> + Sync + 'a;

/// Empirical kappa table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub kind: KappaKind,
    pub t_hats: Vec<f64>,
    pub kappa_hat: Vec<f64>,
    /// Probe attaining the maximum, per `t_hat`.
    pub argmax_probe: Vec<Vec<f64>>,
    pub probes: ProbeGrid,
    pub n_quad: usize,
    pub strictly_decreasing: bool,
    pub nonincreasing: bool,
}

/// `kappa_hat(T) = max_probe deviation(T, probe) / (1 + |probe|^2)`.
pub fn estimate_kappa(
    kind: KappaKind,
    scenario: &Scenario,
    t_hats: &[f64],
    settings: &ProbeSettings,
) -> Result<KappaEstimate> {
    if t_hats.is_empty() {
        return Err(Error::Config("kappa estimation needs at least one T_hat".into()));
    }
    let (m, d, l) = (scenario.dim_m, scenario.dim_d, scenario.dim_l);
    let probe_dim = match kind {
        KappaKind::Driver => m + d,
        _ => m,
    };
    let probes = ProbeGrid::new(probe_dim, settings.radius, settings.per_axis)?;
    let missing = || {
        Error::Config(format!(
            "scenario '{}' lacks the averaged {} coefficient",
            scenario.name,
            kind.as_str()
        ))
    };
    let deviation: Box<DeviationFn<'_>> = match kind {
        KappaKind::Drift => {
            let bar = scenario.averaged_drift.clone().ok_or_else(missing)?;
            let b = scenario.drift.clone();
            Box::new(move |x, t_hat| {
                let mut target = vec![0.0; m];
                bar(x, &mut target);
                let gap = cesaro_average_drift(
                    |s, x, o| {
                        b(s, x, o);
                        o.iter_mut().zip(&target).for_each(|(v, t)| *v -= t);
                    },
                    x,
                    m,
                    t_hat,
                    settings.n_quad,
                )?;
                Ok(gap.iter().map(|v| v * v).sum())
            })
        }
        KappaKind::Diffusion => {
            let bar = scenario.averaged_diffusion.clone().ok_or_else(missing)?;
            let sigma = scenario.diffusion.clone();
            Box::new(move |x, t_hat| {
                cesaro_average_diffusion_sq(|s, x, o| sigma(s, x, o), |x, o| bar(x, o), x, m * l, t_hat, settings.n_quad)
            })
        }
        KappaKind::Driver => {
            let bar = scenario.averaged_driver.clone().ok_or_else(missing)?;
            let f1 = scenario.driver.clone();
            Box::new(move |xy, t_hat| {
                let (x, y) = xy.split_at(m);
                let mut target = vec![0.0; d];
                bar(x, y, &mut target);
                let integral = simpson_adaptive(
                    |s, o| {
                        f1(s, x, y, o);
                        o.iter_mut().zip(&target).for_each(|(v, t)| *v -= t);
                    },
                    d,
                    t_hat,
                    settings.n_quad,
                )?;
                Ok(integral.iter().map(|a| (a / t_hat) * (a / t_hat)).sum())
            })
        }
    };
    let points = probes.points();
    let mut kappa_hat = Vec::with_capacity(t_hats.len());
    let mut argmax_probe = Vec::with_capacity(t_hats.len());
    for &t_hat in t_hats {
        let values: Vec<f64> = points
            .par_iter()
            .map(|p| {
                let norm: f64 = p.iter().map(|v| v * v).sum();
                Ok(deviation(p, t_hat)? / (1.0 + norm))
            })
            .collect::<Result<_>>()?;
        let (best, val) = values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        kappa_hat.push(val.max(0.0));
        argmax_probe.push(points[best].clone());
    }
    let strictly_decreasing = kappa_hat.windows(2).all(|w| w[1] < w[0]);
    let nonincreasing = kappa_hat.windows(2).all(|w| w[1] <= w[0]);
    Ok(KappaEstimate {
        kind,
        t_hats: t_hats.to_vec(),
        kappa_hat,
        argmax_probe,
        probes,
        n_quad: settings.n_quad,
        strictly_decreasing,
        nonincreasing,
    })
}

/// Tabulated average on a probe grid with multilinear interpolation
/// (clamped to the probe box outside it).
#[derive(Debug, Clone, PartialEq)]
pub struct InferredAverage {
    pub grid: ProbeGrid,
    pub dim_out: usize,
    /// `[probe][dim_out]`
    pub values: Vec<f64>,
    pub t_schedule: Vec<f64>,
    /// Schedule index from which every later pair of successive averages
    /// agreed within tolerance at every probe.
    pub converged_at: usize,
    /// Largest difference quotient over probe pairs.
    pub lipschitz_estimate: f64,
}

impl InferredAverage {
    pub fn value_at_probe(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim_out..(i + 1) * self.dim_out]
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let n = g.per_axis;
        let step = 2.0 * g.radius / (n - 1) as f64;
        let mut cells = Vec::with_capacity(g.dim);
        for &v in x.iter().take(g.dim) {
            let pos = ((v.clamp(-g.radius, g.radius) + g.radius) / step).min((n - 1) as f64);
            let i = (pos.floor() as usize).min(n - 2);
            cells.push((i, pos - i as f64));
        }
        out.fill(0.0);
        for corner in 0..(1usize << g.dim) {
            let mut weight = 1.0;
            let mut index = 0;
            let mut stride = 1;
            for (k, (i, w)) in cells.iter().enumerate() {
                let up = (corner >> k) & 1 == 1;
                weight *= if up { *w } else { 1.0 - w };
                index += (i + up as usize) * stride;
                stride *= n;
            }
            if weight == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.value_at_probe(index)) {
                *o += weight * v;
            }
        }
    }
}

/// Infers `f_bar(p) = lim (1/T) int_0^T f(s, p) ds` on a probe grid: the
/// average at the largest `T` of the schedule is kept once successive
/// schedule entries agree within `tol (1 + |p|)`.
pub fn infer_average<F>(
    f: F,
    dim_in: usize,
    dim_out: usize,
    settings: &ProbeSettings,
    t_schedule: &[f64],
    tol: f64,
) -> Result<InferredAverage>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    if t_schedule.len() < 3 || t_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "averaging schedule must be increasing with at least 3 entries".into(),
        ));
    }
    let grid = ProbeGrid::new(dim_in, settings.radius, settings.per_axis)?;
    let points = grid.points();
    let rows: Vec<(Vec<f64>, usize)> = points
        .par_iter()
        .map(|p| {
            let mut avgs = Vec::with_capacity(t_schedule.len());
            for &t in t_schedule {
                let n_quad = settings.n_quad.max(2 * t.ceil() as usize);
                let mut v = simpson_adaptive(|s, o| f(s, p, o), dim_out, t, n_quad)?;
                v.iter_mut().for_each(|x| *x /= t);
                avgs.push(v);
            }
            let band = tol * (1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt());
            let agree: Vec<bool> = avgs
                .windows(2)
                .map(|w| w[0].iter().zip(&w[1]).all(|(a, b)| (a - b).abs() <= band))
                .collect();
            if !agree.last().copied().unwrap_or(false) {
                return Err(Error::Numeric(format!(
                    "Cesàro averages at probe {p:?} still move by more than {band} at T = {}; \
                     extend the schedule to larger T",
                    t_schedule[t_schedule.len() - 1]
                )));
            }
            let first = agree.iter().rposition(|a| !a).map_or(1, |i| i + 2);
            Ok((avgs.pop().expect("non-empty schedule"), first))
        })
        .collect::<Result<_>>()?;
    let converged_at = rows.iter().map(|r| r.1).max().unwrap_or(1);
    let values: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    let mut lip = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let dx: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let dv: f64 = values[i * dim_out..(i + 1) * dim_out]
                .iter()
                .zip(&values[j * dim_out..(j + 1) * dim_out])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            lip = lip.max(dv / dx);
        }
    }
    Ok(InferredAverage {
        grid,
        dim_out,
        values,
        t_schedule: t_schedule.to_vec(),
        converged_at,
        lipschitz_estimate: lip,
    })
}

/// Averaged drift of `b(s, x)` on `[-R, R]^m`.
pub fn infer_averaged_drift<F>(
    b: F,
    dim_m: usize,
    settings: &ProbeSettings,
    t_schedule: &[f64],
    tol: f64,
) -> Result<InferredAverage>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    infer_average(b, dim_m, dim_m, settings, t_schedule, tol)
}

/// Which averaged coefficients had to be inferred.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub drift: Option<f64>,
    pub diffusion: Option<f64>,
    pub driver: Option<f64>,
}

/// Fills every missing averaged coefficient by [`infer_average`]; the report
/// carries the Lipschitz estimate of each inferred table.
pub fn fill_missing_averages(
    scenario: &Scenario,
    settings: &ProbeSettings,
    t_schedule: &[f64],
    tol: f64,
) -> Result<(Scenario, InferenceReport)> {
    let mut out = scenario.clone();
    let mut report = InferenceReport::default();
    let (m, d, l) = (scenario.dim_m, scenario.dim_d, scenario.dim_l);
    if out.averaged_drift.is_none() {
        let b = scenario.drift.clone();
        let table = infer_average(|s, x, o| b(s, x, o), m, m, settings, t_schedule, tol)?;
        report.drift = Some(table.lipschitz_estimate);
        let f: StateFn = Arc::new(move |x, o| table.eval(x, o));
        out.averaged_drift = Some(f);
    }
    if out.averaged_diffusion.is_none() {
        let sigma = scenario.diffusion.clone();
        let table = infer_average(|s, x, o| sigma(s, x, o), m, m * l, settings, t_schedule, tol)?;
        report.diffusion = Some(table.lipschitz_estimate);
        let f: StateFn = Arc::new(move |x, o| table.eval(x, o));
        out.averaged_diffusion = Some(f);
    }
    if out.averaged_driver.is_none() {
        let f1 = scenario.driver.clone();
        let table = infer_average(
            |s, xy, o| {
                let (x, y) = xy.split_at(m);
                f1(s, x, y, o)
            },
            m + d,
            d,
            settings,
            t_schedule,
            tol,
        )?;
        report.driver = Some(table.lipschitz_estimate);
        let f: AveragedDriverFn = Arc::new(move |x, y, o| {
            let xy: Vec<f64> = x.iter().chain(y).copied().collect();
            table.eval(&xy, o)
        });
        out.averaged_driver = Some(f);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;

    fn ex71_drift(s: f64, x: &[f64], o: &mut [f64]) {
        o[0] = s / (1.0 + s) * x[0].cos();
    }

    #[test]
    fn constant_integrand() {
        for t in [0.5, 10.0, 1e4] {
            let v = cesaro_average_drift(|_, _, o| o[0] = 2.5, &[1.0], 1, t, 2).unwrap();
            assert!((v[0] - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn simpson_exact_on_cubics() {
        // int_0^3 (1 - 2s + 0.5 s^2 + s^3) ds = 3 - 9 + 4.5 + 20.25
        let exact = 18.75;
        let v = simpson_adaptive(|s, o| o[0] = 1.0 - 2.0 * s + 0.5 * s * s + s * s * s, 1, 3.0, 2).unwrap();
        assert!(((v[0] - exact) / exact).abs() < 1e-12);
    }

    #[test]
    fn ex71_drift_closed_form() {
        let v = cesaro_average_drift(ex71_drift, &[0.0], 1, 10.0, 2).unwrap();
        let expect = 1.0 - 11f64.ln() / 10.0;
        assert!((v[0] - expect).abs() < 1e-8, "{} vs {expect}", v[0]);
        assert!((expect - 0.7602105).abs() < 1e-6);
        let far = cesaro_average_drift(ex71_drift, &[0.3], 1, 1e4, 2).unwrap();
        assert!((far[0] - 0.3f64.cos()).abs() < 1e-3);
    }

    #[test]
    fn ex71_diffusion_closed_form_and_bound() {
        let sigma = |s: f64, x: &[f64], o: &mut [f64]| o[0] = (1.0 - (-0.5 * s).exp()) * x[0].sin();
        let bar = |x: &[f64], o: &mut [f64]| o[0] = x[0].sin();
        let v = cesaro_average_diffusion_sq(sigma, bar, &[std::f64::consts::FRAC_PI_2], 1, 1.0, 2).unwrap();
        assert!((v - (1.0 - (-1f64).exp())).abs() < 1e-9);
        for x in [-3.0, -0.5, 0.0, 1.0, 4.0] {
            for t in [0.1, 1.0, 7.0, 100.0] {
                let v = cesaro_average_diffusion_sq(sigma, bar, &[x], 1, t, 2).unwrap();
                assert!(v <= (1.0 + x * x) / t + 1e-12);
            }
        }
        let zero = cesaro_average_diffusion_sq(|_, x, o| o[0] = x[0], |x, o| o[0] = x[0], &[2.0], 1, 5.0, 2).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn quadrature_argument_errors() {
        assert!(matches!(simpson_adaptive(|_, o| o[0] = 1.0, 1, 0.0, 2), Err(Error::Config(_))));
        assert!(matches!(simpson_adaptive(|_, o| o[0] = 1.0, 1, 1.0, 1), Err(Error::Config(_))));
        // an integrand with no limit defeats the doubling
        let noisy = simpson_adaptive(
            |s, o| o[0] = ((s * 1e9).sin() * 1e6).sin(),
            1,
            1.0,
            2,
        );
        assert!(matches!(noisy, Err(Error::Numeric(_))));
    }

    #[test]
    fn kappa_ex71_bounded_and_decreasing() {
        let s = builtin::example71();
        let settings = ProbeSettings::default();
        let t = [1.0, 10.0, 100.0];
        for kind in [KappaKind::Drift, KappaKind::Diffusion] {
            let k = estimate_kappa(kind, &s, &t, &settings).unwrap();
            for (kh, th) in k.kappa_hat.iter().zip(&t) {
                assert!(*kh <= 1.0 / th, "{kind:?}: {kh} > 1/{th}");
            }
            assert!(k.strictly_decreasing);
            assert_eq!(k.probes.len(), 41);
        }
    }

    #[test]
    fn kappa_zero_for_time_constant() {
        let s = builtin::example71_constant();
        for kind in [KappaKind::Drift, KappaKind::Diffusion, KappaKind::Driver] {
            let k = estimate_kappa(kind, &s, &[1.0, 10.0], &ProbeSettings { per_axis: 5, ..Default::default() }).unwrap();
            assert!(k.kappa_hat.iter().all(|v| *v == 0.0), "{kind:?} {:?}", k.kappa_hat);
            assert!(k.nonincreasing);
        }
    }

    #[test]
    fn kappa_needs_t_hats_and_averages() {
        let s = builtin::example71();
        assert!(estimate_kappa(KappaKind::Drift, &s, &[], &ProbeSettings::default()).is_err());
        let mut no_bar = s.clone();
        no_bar.averaged_drift = None;
        assert!(estimate_kappa(KappaKind::Drift, &no_bar, &[1.0], &ProbeSettings::default()).is_err());
    }

    #[test]
    fn driver_kappa_probes_jointly() {
        // f1 = e^{-s} y, average 0: deviation = (1 - e^{-T})^2 y^2 / T^2
        let s = builtin::example71().with_driver(
            |s, _, y, o| o[0] = (-s).exp() * y[0],
            Some(Arc::new(|_, _, o: &mut [f64]| o[0] = 0.0)),
        );
        let k = estimate_kappa(KappaKind::Driver, &s, &[1.0, 10.0], &ProbeSettings { per_axis: 11, ..Default::default() }).unwrap();
        assert_eq!(k.probes.dim, 2);
        assert_eq!(k.probes.len(), 121);
        for (kh, t) in k.kappa_hat.iter().zip([1.0f64, 10.0]) {
            let factor = (1.0 - (-t).exp()) / t;
            // sup over y of y^2/(1 + x^2 + y^2) on the grid is at x = 0, |y| = 5
            let expect = factor * factor * 25.0 / 26.0;
            assert!((kh - expect).abs() < 1e-9, "{kh} vs {expect}");
        }
    }

    #[test]
    fn probe_grid_caps_high_dimensions() {
        let g = ProbeGrid::new(4, 5.0, 41).unwrap();
        assert!(g.len() <= 41 * 41);
        assert!(g.per_axis >= 2);
        assert_eq!(ProbeGrid::new(2, 5.0, 41).unwrap().len(), 1681);
    }

    #[test]
    fn infer_constant_drift_converges_immediately() {
        let t = infer_averaged_drift(|_, x, o| o[0] = 0.5 * x[0], 1, &ProbeSettings { per_axis: 11, ..Default::default() }, &[1.0, 2.0, 4.0], 1e-6).unwrap();
        assert_eq!(t.converged_at, 1);
        for i in 0..t.grid.len() {
            let x = t.grid.point(i)[0];
            assert!((t.value_at_probe(i)[0] - 0.5 * x).abs() < 1e-14);
        }
        assert!((t.lipschitz_estimate - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infer_ex71_drift() {
        let t = infer_averaged_drift(ex71_drift, 1, &ProbeSettings::default(), &[1e2, 1e3, 1e4], 1e-2).unwrap();
        for i in 0..t.grid.len() {
            let x = t.grid.point(i)[0];
            let closed = (1e4 - (1.0 + 1e4f64).ln()) / 1e4 * x.cos();
            assert!((t.value_at_probe(i)[0] - closed).abs() < 1e-8);
            assert!((t.value_at_probe(i)[0] - x.cos()).abs() < 1e-2);
        }
        // L1 = 2 for this scenario
        assert!(t.lipschitz_estimate <= 3f64.sqrt() * 2.0 + 1e-2);
        let mut out = [0.0];
        t.eval(&[0.1], &mut out);
        assert!((out[0] - 0.1f64.cos()).abs() < 0.02);
    }

    #[test]
    fn infer_mean_zero_oscillation() {
        let t = infer_averaged_drift(|s, x, o| o[0] = s.sin() * x[0], 1, &ProbeSettings { per_axis: 11, ..Default::default() }, &[1e2, 1e3, 1e4], 1e-2).unwrap();
        for i in 0..t.grid.len() {
            let x = t.grid.point(i)[0];
            assert!(t.value_at_probe(i)[0].abs() <= 1e-2 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn infer_reports_non_convergence() {
        // average of s x grows without bound
        let r = infer_averaged_drift(|s, x, o| o[0] = s * x[0], 1, &ProbeSettings { per_axis: 5, ..Default::default() }, &[1.0, 2.0, 4.0], 1e-3);
        assert!(matches!(r, Err(Error::Numeric(ref m)) if m.contains("larger T")));
        let short = infer_averaged_drift(ex71_drift, 1, &ProbeSettings::default(), &[1.0, 2.0], 1e-3);
        assert!(matches!(short, Err(Error::Config(_))));
    }

    #[test]
    fn multilinear_interpolation_is_exact_for_affine_maps() {
        let t = infer_average(
            |_, x, o| o[0] = 1.0 + 2.0 * x[0] - 0.5 * x[1],
            2,
            1,
            &ProbeSettings { radius: 2.0, per_axis: 5, n_quad: 2 },
            &[1.0, 2.0, 4.0],
            1e-9,
        )
        .unwrap();
        let mut o = [0.0];
        for p in [[0.3, -1.1], [1.9, 1.9], [-2.0, 0.0]] {
            t.eval(&p, &mut o);
            assert!((o[0] - (1.0 + 2.0 * p[0] - 0.5 * p[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn fill_missing_averages_for_ex71() {
        let mut s = builtin::example71();
        s.averaged_drift = None;
        s.averaged_diffusion = None;
        let (filled, report) = fill_missing_averages(&s, &ProbeSettings::default(), &[1e2, 1e3, 1e4], 1e-2).unwrap();
        assert!(filled.has_averaged_forward());
        assert!(report.drift.is_some() && report.diffusion.is_some() && report.driver.is_none());
        let mut o = [0.0];
        (filled.averaged_diffusion.as_ref().unwrap())(&[1.0], &mut o);
        assert!((o[0] - 1f64.sin()).abs() < 0.02);
    }
}
