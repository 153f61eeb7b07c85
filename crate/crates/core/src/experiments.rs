//! Epsilon sweeps on coupled noise, homogenization tables and the bundled
//! example study.

use serde::{Deserialize, Serialize};

use crate::averaging::{estimate_kappa, KappaEstimate, KappaKind, ProbeSettings};
use crate::brownian::sample_brownian;
use crate::bsvi::{self, BsviOptions, BsviSolution, Certificate};
use crate::error::{Error, Result};
use crate::forward::{self, euler_averaged, euler_multiscale, ForwardPathBatch, Start, DEFAULT_ETA_OSC};
use crate::grid::make_grid;
use crate::regression::RegressionBasis;
use crate::rng::{self, tag};
use crate::scenario::{builtin, Scenario};
use crate::stats::{self, LineFit, MeanEstimate, MonotoneReport, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Strictly decreasing, each in `(0, 1)`.
    pub epsilons: Vec<f64>,
    pub gamma: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub eta_osc: f64,
    pub basis: RegressionBasis,
    pub n_picard: usize,
    pub start_t: f64,
    pub start_x: Vec<f64>,
    /// Moment power `p` of `E sup |X^eps - X_bar|^{2p}`.
    pub moment_p: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            gamma: 0.5,
            n_paths: 2000,
            master_seed: 20_240_601,
            eta_osc: DEFAULT_ETA_OSC,
            basis: RegressionBasis::default(),
            n_picard: 2,
            start_t: 0.0,
            start_x: vec![1.0],
            moment_p: 1.0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilon list is empty".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::Config(format!("epsilon = {e} must lie in (0, 1)")));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("epsilon list must be strictly decreasing".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma = {} must lie in (0, 1)", self.gamma)));
        }
        if self.n_paths < 2 {
            return Err(Error::Config("n_paths must be at least 2".into()));
        }
        if !(self.eta_osc > 0.0 && self.eta_osc.is_finite()) {
            return Err(Error::Config(format!("eta_osc = {} must be positive", self.eta_osc)));
        }
        if self.n_picard == 0 {
            return Err(Error::Config("n_picard must be at least 1".into()));
        }
        if !(self.moment_p >= 1.0 && self.moment_p.is_finite()) {
            return Err(Error::Config(format!("moment power p = {} must be at least 1", self.moment_p)));
        }
        if !(self.start_t >= 0.0) || self.start_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("start (t, x) must be finite with t >= 0".into()));
        }
        self.basis.validate()
    }

    pub fn start(&self) -> Start {
        Start::point(self.start_t, self.start_x.clone())
    }

    pub fn bsvi_options(&self) -> BsviOptions {
        BsviOptions {
            basis: self.basis,
            n_picard: self.n_picard,
        }
    }

    fn epsilon_min(&self) -> f64 {
        *self.epsilons.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub error: MeanEstimate,
    pub n_steps: usize,
    /// Fitted rate bound at this epsilon, forward sweeps only.
    pub predicted: Option<f64>,
    /// Regression noise floor of the pair, backward sweeps only.
    pub noise_floor: Option<f64>,
}

/// Rate bound `C (eps^g + eps^{2g} + k1(eps^{g-1}) + k2(eps^{g-1}))` with `C`
/// fitted in log space to the measured errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedRate {
    pub gamma: f64,
    pub c_fit: f64,
    pub t_hats: Vec<f64>,
    pub kappa_drift: Vec<f64>,
    pub kappa_diffusion: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub study: String,
    pub scenario: String,
    pub rows: Vec<SweepRow>,
    /// `None` for fewer than two usable rows.
    pub slope: Option<LineFit>,
    pub monotone: MonotoneReport,
    pub verdict: Verdict,
    pub predicted: Option<PredictedRate>,
    /// Certificates of every solved backward system, labelled by mode.
    pub certificates: Vec<(String, Certificate)>,
    pub warnings: Vec<String>,
}

fn rate_shape(eps: f64, gamma: f64, k1: f64, k2: f64) -> f64 {
    eps.powf(gamma) + eps.powf(2.0 * gamma) + k1 + k2
}

/// `E sup_k |X^eps_k - X_bar_k|^{2p}` per epsilon on one shared noise batch.
/// Every row uses the step count required by the smallest epsilon, so the
/// rows share one grid.
pub fn rate_sweep_forward(scenario: &Scenario, cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    scenario.validate()?;
    if !scenario.has_averaged_forward() {
        return Err(Error::Config(format!(
            "scenario '{}' has no averaged drift/diffusion",
            scenario.name
        )));
    }
    let n_steps = forward::required_steps(cfg.start_t, scenario.horizon, cfg.epsilon_min(), cfg.eta_osc);
    let grid = make_grid(cfg.start_t, scenario.horizon, n_steps)?;
    let noise = sample_brownian(&grid, cfg.n_paths, scenario.dim_l, cfg.master_seed)?;
    let start = cfg.start();
    let averaged = euler_averaged(scenario, &start, &noise)?;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let osc = euler_multiscale(scenario, eps, &start, &noise, cfg.eta_osc)?;
        let dist = forward::sup_distance_sq(&osc, &averaged, cfg.moment_p)?;
        rows.push(SweepRow {
            epsilon: eps,
            error: dist.estimate,
            n_steps,
            predicted: None,
            noise_floor: None,
        });
    }
    let predicted = predicted_rate(scenario, cfg, &mut rows)?;
    Ok(finish("rate_forward", scenario, rows, Some(predicted), Vec::new(), Vec::new()))
}

fn predicted_rate(scenario: &Scenario, cfg: &SweepConfig, rows: &mut [SweepRow]) -> Result<PredictedRate> {
    let t_hats: Vec<f64> = rows.iter().map(|r| r.epsilon.powf(cfg.gamma - 1.0)).collect();
    let settings = ProbeSettings::default();
    let k1 = estimate_kappa(KappaKind::Drift, scenario, &t_hats, &settings)?.kappa_hat;
    let k2 = estimate_kappa(KappaKind::Diffusion, scenario, &t_hats, &settings)?.kappa_hat;
    let shapes: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| rate_shape(r.epsilon, cfg.gamma, k1[i], k2[i]))
        .collect();
    let logs: Vec<f64> = rows
        .iter()
        .zip(&shapes)
        .filter(|(r, s)| r.error.mean > 0.0 && **s > 0.0)
        .map(|(r, s)| (r.error.mean / s).ln())
        .collect();
    let c_fit = if logs.is_empty() { 0.0 } else { stats::mean(&logs).exp() };
    for (r, s) in rows.iter_mut().zip(&shapes) {
        r.predicted = Some(c_fit * s);
    }
    Ok(PredictedRate {
        gamma: cfg.gamma,
        c_fit,
        t_hats,
        kappa_drift: k1,
        kappa_diffusion: k2,
    })
}

fn finish(
    study: &str,
    scenario: &Scenario,
    rows: Vec<SweepRow>,
    predicted: Option<PredictedRate>,
    certificates: Vec<(String, Certificate)>,
    mut warnings: Vec<String>,
) -> SweepResult {
    let estimates: Vec<MeanEstimate> = rows.iter().map(|r| r.error).collect();
    let monotone = stats::monotone_decrease(&estimates);
    for i in &monotone.violations {
        warnings.push(format!(
            "error increased from eps = {} to eps = {} beyond the confidence intervals",
            rows[*i].epsilon,
            rows[*i + 1].epsilon
        ));
    }
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let slope = stats::loglog_slope(&eps, &estimates.iter().map(|e| e.mean).collect::<Vec<_>>());
    SweepResult {
        study: study.into(),
        scenario: scenario.name.clone(),
        rows,
        slope,
        verdict: monotone.verdict,
        monotone,
        predicted,
        certificates,
        warnings,
    }
}

/// Regression noise floor of one solution: `sum_j s_j^2 rank_j / n`, the
/// average accumulated variance of the fitted `Y_0`.
pub fn noise_floor(solution: &BsviSolution) -> f64 {
    solution
        .fits
        .iter()
        .map(|f| {
            let s2 = f.residual_var.iter().cloned().fold(0.0, f64::max);
            s2 * f.rank as f64 / f.n_samples as f64
        })
        .sum()
}

/// Number of sampled graph pairs in monotonicity certificates.
pub const CERT_TEST_PAIRS: usize = 16;

/// Per-path `sup_k |Y^a_k - Y^b_k|^2`.
pub fn sup_gap_sq(a: &BsviSolution, b: &BsviSolution) -> Result<Vec<f64>> {
    if !a.grid.same_as(&b.grid) || a.n_paths != b.n_paths || a.dim_d != b.dim_d {
        return Err(Error::Config("solutions live on different grids or path sets".into()));
    }
    let n = a.grid.n_steps();
    Ok((0..a.n_paths)
        .map(|p| {
            (0..=n)
                .map(|k| {
                    a.y_at(p, k)
                        .iter()
                        .zip(b.y_at(p, k))
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Coupled oscillating/averaged backward solutions for every epsilon and
/// the estimate of `E sup_k |Y^eps_k - Y_bar_k|^2`. No slope target: any
/// fitted slope is informational.
pub fn converge_backward(scenario: &Scenario, cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    scenario.validate()?;
    let n_steps = forward::required_steps(cfg.start_t, scenario.horizon, cfg.epsilon_min(), cfg.eta_osc);
    let grid = make_grid(cfg.start_t, scenario.horizon, n_steps)?;
    let noise = sample_brownian(&grid, cfg.n_paths, scenario.dim_l, cfg.master_seed)?;
    let start = cfg.start();
    let options = cfg.bsvi_options();
    let averaged = euler_averaged(scenario, &start, &noise)?;
    let y_bar = bsvi::solve_bsvi(&averaged, scenario, &options)?;
    let floor_bar = noise_floor(&y_bar);
    let mut warnings: Vec<String> = y_bar.warnings.iter().map(|w| format!("averaged: {w}")).collect();
    let mut certificates = vec![("averaged".to_string(), bsvi::certify(&y_bar, &scenario.phi, CERT_TEST_PAIRS)?)];
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let osc = euler_multiscale(scenario, eps, &start, &noise, cfg.eta_osc)?;
        let y_eps = bsvi::solve_bsvi(&osc, scenario, &options)?;
        warnings.extend(y_eps.warnings.iter().map(|w| format!("eps = {eps}: {w}")));
        certificates.push((osc.mode.label(), bsvi::certify(&y_eps, &scenario.phi, CERT_TEST_PAIRS)?));
        rows.push(SweepRow {
            epsilon: eps,
            error: MeanEstimate::from_samples(&sup_gap_sq(&y_eps, &y_bar)?),
            n_steps,
            predicted: None,
            noise_floor: Some(noise_floor(&y_eps) + floor_bar),
        });
    }
    let mut result = finish("converge_backward", scenario, rows, None, certificates, warnings);
    for (label, cert) in &result.certificates {
        if !cert.passed(&scenario.phi) {
            result.verdict = Verdict::Fail;
            result.warnings.push(format!("{label}: variational-inequality certificate failed: {cert:?}"));
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizeRow {
    pub point: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub epsilon: f64,
    pub u_eps: f64,
    pub u_eps_se: f64,
    pub u_bar: f64,
    pub u_bar_se: f64,
    /// `|u_eps - u_bar|` with the standard error of the paired difference.
    pub gap: MeanEstimate,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizeTable {
    pub scenario: String,
    /// Sorted by point, then by decreasing epsilon. First output coordinate.
    pub rows: Vec<HomogenizeRow>,
    /// Monotone verdict per point.
    pub point_verdicts: Vec<MonotoneReport>,
    pub verdict: Verdict,
    pub certificates: Vec<(String, Certificate)>,
    pub warnings: Vec<String>,
}

/// `u^eps(t, x)` and `u_bar(t, x)` as point values of the oscillating and
/// averaged backward systems started at `(t, x)`, per epsilon. Each point
/// gets its own noise seed derived from the master seed.
pub fn homogenize_pde(
    scenario: &Scenario,
    points: &[(f64, Vec<f64>)],
    cfg: &SweepConfig,
) -> Result<HomogenizeTable> {
    cfg.validate()?;
    scenario.validate()?;
    let options = cfg.bsvi_options();
    let mut rows = Vec::new();
    let mut point_verdicts = Vec::new();
    let mut certificates = Vec::new();
    let mut warnings = Vec::new();
    for (i, (t, x)) in points.iter().enumerate() {
        if x.len() != scenario.dim_m || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("point {i}: x must be finite with dimension {}", scenario.dim_m)));
        }
        if !(*t >= 0.0 && *t <= scenario.horizon) {
            return Err(Error::Config(format!("point {i}: t = {t} must lie in [0, {}]", scenario.horizon)));
        }
        let mut gaps = Vec::new();
        if *t == scenario.horizon {
            let g = bsvi::terminal_point_value(scenario, x).value[0];
            for &eps in &cfg.epsilons {
                let gap = MeanEstimate::from_mean_se(0.0, 0.0, cfg.n_paths);
                gaps.push(gap);
                rows.push(HomogenizeRow {
                    point: i,
                    t: *t,
                    x: x.clone(),
                    epsilon: eps,
                    u_eps: g,
                    u_eps_se: 0.0,
                    u_bar: g,
                    u_bar_se: 0.0,
                    gap,
                    n_steps: 0,
                });
            }
            point_verdicts.push(stats::monotone_decrease(&gaps));
            continue;
        }
        let n_steps = forward::required_steps(*t, scenario.horizon, cfg.epsilon_min(), cfg.eta_osc);
        let grid = make_grid(*t, scenario.horizon, n_steps)?;
        let seed = rng::derive_seed(cfg.master_seed, i as u64, tag::POINT_SEED);
        let noise = sample_brownian(&grid, cfg.n_paths, scenario.dim_l, seed)?;
        let start = Start::point(*t, x.clone());
        let averaged = euler_averaged(scenario, &start, &noise)?;
        let y_bar = bsvi::solve_bsvi(&averaged, scenario, &options)?;
        let v_bar = bsvi::point_value(&y_bar)?;
        warnings.extend(v_bar.warning.iter().map(|w| format!("point {i}, averaged: {w}")));
        certificates.push((
            format!("point {i} averaged"),
            bsvi::certify(&y_bar, &scenario.phi, CERT_TEST_PAIRS)?,
        ));
        let tele_bar: Vec<f64> = (0..cfg.n_paths).map(|p| y_bar.telescoped_value(p)[0]).collect();
        for &eps in &cfg.epsilons {
            let osc = euler_multiscale(scenario, eps, &start, &noise, cfg.eta_osc)?;
            let y_eps = bsvi::solve_bsvi(&osc, scenario, &options)?;
            let v_eps = bsvi::point_value(&y_eps)?;
            warnings.extend(v_eps.warning.iter().map(|w| format!("point {i}, eps = {eps}: {w}")));
            certificates.push((
                format!("point {i} {}", osc.mode.label()),
                bsvi::certify(&y_eps, &scenario.phi, CERT_TEST_PAIRS)?,
            ));
            let diff: Vec<f64> = (0..cfg.n_paths)
                .map(|p| y_eps.telescoped_value(p)[0] - tele_bar[p])
                .collect();
            let se = (stats::sample_variance(&diff) / cfg.n_paths as f64).sqrt();
            let gap = MeanEstimate::from_mean_se((v_eps.value[0] - v_bar.value[0]).abs(), se, cfg.n_paths);
            gaps.push(gap);
            rows.push(HomogenizeRow {
                point: i,
                t: *t,
                x: x.clone(),
                epsilon: eps,
                u_eps: v_eps.value[0],
                u_eps_se: v_eps.std_error[0],
                u_bar: v_bar.value[0],
                u_bar_se: v_bar.std_error[0],
                gap,
                n_steps,
            });
        }
        point_verdicts.push(stats::monotone_decrease(&gaps));
    }
    let mut verdict = point_verdicts.iter().fold(Verdict::Pass, |v, r| v.worst(r.verdict));
    for (label, cert) in &certificates {
        if !cert.passed(&scenario.phi) {
            verdict = Verdict::Fail;
            warnings.push(format!("{label}: variational-inequality certificate failed: {cert:?}"));
        }
    }
    Ok(HomogenizeTable {
        scenario: scenario.name.clone(),
        rows,
        point_verdicts,
        verdict,
        certificates,
        warnings,
    })
}

/// Settings of the bundled example study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example71Config {
    /// Forward sweep; its `epsilons` are the forward list.
    pub sweep: SweepConfig,
    pub backward_epsilons: Vec<f64>,
    pub kappa_t_hats: Vec<f64>,
    pub min_slope: f64,
    pub homogenize_points: Vec<(f64, Vec<f64>)>,
}

impl Default for Example71Config {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::default(),
            backward_epsilons: vec![0.2, 0.1, 0.05],
            kappa_t_hats: vec![1.0, 10.0, 100.0],
            min_slope: 0.4,
            homogenize_points: vec![(0.0, vec![1.0])],
        }
    }
}

impl Example71Config {
    pub fn backward_sweep(&self) -> SweepConfig {
        SweepConfig {
            epsilons: self.backward_epsilons.clone(),
            ..self.sweep.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example71Report {
    pub kappa: Vec<KappaEstimate>,
    pub forward: SweepResult,
    pub backward: SweepResult,
    pub homogenize: HomogenizeTable,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
}

impl Example71Report {
    /// Names of the checks with the overall verdict.
    pub fn failing(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.verdict == self.verdict && c.verdict != Verdict::Pass)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Kappa bounds, forward sweep, backward sweep and the PDE table for the
/// built-in example system.
pub fn example71(cfg: &Example71Config) -> Result<Example71Report> {
    let scenario = builtin::example71();
    let mut checks = Vec::new();
    let mut kappa = Vec::new();
    for kind in [KappaKind::Drift, KappaKind::Diffusion] {
        let k = estimate_kappa(kind, &scenario, &cfg.kappa_t_hats, &ProbeSettings::default())?;
        let worst = k
            .kappa_hat
            .iter()
            .zip(&k.t_hats)
            .map(|(v, t)| v * t)
            .fold(0.0, f64::max);
        checks.push(Check {
            name: format!("kappa_{}", kind.as_str()),
            verdict: if worst <= 1.0 { Verdict::Pass } else { Verdict::Fail },
            detail: format!("max T_hat * kappa_hat = {worst:.6}"),
        });
        kappa.push(k);
    }
    let forward = rate_sweep_forward(&scenario, &cfg.sweep)?;
    checks.push(Check {
        name: "forward_monotone".into(),
        verdict: forward.verdict,
        detail: format!("violations at {:?}", forward.monotone.violations),
    });
    let slope_verdict = match forward.slope {
        Some(f) if f.slope >= cfg.min_slope => Verdict::Pass,
        Some(_) => Verdict::Fail,
        None => Verdict::Warn,
    };
    checks.push(Check {
        name: "forward_slope".into(),
        verdict: slope_verdict,
        detail: match forward.slope {
            Some(f) => format!("slope {:.4} against minimum {}", f.slope, cfg.min_slope),
            None => "slope undefined".into(),
        },
    });
    let backward_cfg = cfg.backward_sweep();
    let backward = converge_backward(&scenario, &backward_cfg)?;
    checks.push(Check {
        name: "backward_monotone".into(),
        verdict: backward.verdict,
        detail: format!("violations at {:?}", backward.monotone.violations),
    });
    let homogenize = homogenize_pde(&scenario, &cfg.homogenize_points, &backward_cfg)?;
    checks.push(Check {
        name: "homogenize_monotone".into(),
        verdict: homogenize.verdict,
        detail: format!("{} rows", homogenize.rows.len()),
    });
    let verdict = checks.iter().fold(Verdict::Pass, |v, c| v.worst(c.verdict));
    Ok(Example71Report {
        kappa,
        forward,
        backward,
        homogenize,
        checks,
        verdict,
    })
}

/// Forward batch for a single run at `n_steps` (the `h <= eps / eta_osc`
/// budget is enforced for oscillating mode).
pub fn simulate_single(
    scenario: &Scenario,
    epsilon: Option<f64>,
    cfg: &SweepConfig,
    n_steps: Option<usize>,
) -> Result<ForwardPathBatch> {
    cfg.validate()?;
    scenario.validate()?;
    let n = match (n_steps, epsilon) {
        (Some(n), _) => n,
        (None, Some(eps)) => forward::required_steps(cfg.start_t, scenario.horizon, eps, cfg.eta_osc),
        (None, None) => forward::required_steps(cfg.start_t, scenario.horizon, cfg.epsilon_min(), cfg.eta_osc),
    };
    let grid = make_grid(cfg.start_t, scenario.horizon, n)?;
    let noise = sample_brownian(&grid, cfg.n_paths, scenario.dim_l, cfg.master_seed)?;
    match epsilon {
        Some(eps) => euler_multiscale(scenario, eps, &cfg.start(), &noise, cfg.eta_osc),
        None => euler_averaged(scenario, &cfg.start(), &noise),
    }
}
