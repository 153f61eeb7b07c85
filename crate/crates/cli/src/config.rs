//! Run configuration: TOML text (or the `config` object of a previous
//! `manifest.json`) resolved into a scenario and sweep settings.

use std::sync::Arc;

use fbsvi::averaging::ProbeSettings;
use fbsvi::convex::{ConvexFunction, ConvexKind};
use fbsvi::experiments::{Example71Config, SweepConfig};
use fbsvi::scenario::{builtin, Constants, Scenario};
use fbsvi::RegressionBasis;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Location};
use crate::expr::{Env, Expr, Vars};

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<String>,
    pub scenario: ScenarioSection,
    pub phi: Option<PhiSection>,
    pub sweep: SweepSection,
    pub example71: Example71Section,
    pub averaging: AveragingSection,
    pub homogenize: HomogenizeSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            out_dir: None,
            scenario: ScenarioSection::default(),
            phi: None,
            sweep: SweepSection::default(),
            example71: Example71Section::default(),
            averaging: AveragingSection::default(),
            homogenize: HomogenizeSection::default(),
            run: RunSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// One of the built-in names; excludes the expression keys.
    pub builtin: Option<String>,
    pub name: Option<String>,
    /// `[m, d, l]`
    pub dims: Option<[usize; 3]>,
    pub horizon: Option<f64>,
    pub b: Option<Vec<String>>,
    /// Row-major `m x l`.
    pub sigma: Option<Vec<String>>,
    pub b_bar: Option<Vec<String>>,
    pub sigma_bar: Option<Vec<String>>,
    pub f1: Option<Vec<String>>,
    pub f1_bar: Option<Vec<String>>,
    pub f2: Option<Vec<String>>,
    pub g: Option<Vec<String>>,
    /// Parameters of the `gbm` built-in.
    pub mu: Option<f64>,
    pub vol: Option<f64>,
    pub constants: Option<ConstantsSection>,
}

/// Partial override of the scenario constants; unset fields keep the
/// scenario's own values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSection {
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub l4: Option<f64>,
    pub l5: Option<f64>,
    pub q1: Option<u32>,
    pub q2: Option<u32>,
    pub q3: Option<u32>,
}

impl ConstantsSection {
    pub fn merged(&self, base: Constants) -> Constants {
        Constants {
            l1: self.l1.unwrap_or(base.l1),
            l2: self.l2.unwrap_or(base.l2),
            l3: self.l3.unwrap_or(base.l3),
            l4: self.l4.unwrap_or(base.l4),
            l5: self.l5.unwrap_or(base.l5),
            q1: self.q1.unwrap_or(base.q1),
            q2: self.q2.unwrap_or(base.q2),
            q3: self.q3.unwrap_or(base.q3),
        }
    }
}

impl From<Constants> for ConstantsSection {
    fn from(c: Constants) -> Self {
        Self {
            l1: Some(c.l1),
            l2: Some(c.l2),
            l3: Some(c.l3),
            l4: Some(c.l4),
            l5: Some(c.l5),
            q1: Some(c.q1),
            q2: Some(c.q2),
            q3: Some(c.q3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

pub const PHI_KINDS: [&str; 3] = ["zero", "indicator_box", "scaled_abs"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub gamma: f64,
    pub n_paths: usize,
    pub eta_osc: f64,
    pub basis: RegressionBasis,
    pub n_picard: usize,
    pub start_t: f64,
    /// Defaults to `1` in every coordinate.
    pub start_x: Option<Vec<f64>>,
    pub moment_p: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self {
            epsilons: s.epsilons,
            gamma: s.gamma,
            n_paths: s.n_paths,
            eta_osc: s.eta_osc,
            basis: s.basis,
            n_picard: s.n_picard,
            start_t: s.start_t,
            start_x: None,
            moment_p: s.moment_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example71Section {
    pub backward_epsilons: Vec<f64>,
    pub kappa_t_hats: Vec<f64>,
    pub min_slope: f64,
}

impl Default for Example71Section {
    fn default() -> Self {
        let e = Example71Config::default();
        Self {
            backward_epsilons: e.backward_epsilons,
            kappa_t_hats: e.kappa_t_hats,
            min_slope: e.min_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AveragingSection {
    pub t_hats: Vec<f64>,
    pub radius: f64,
    pub per_axis: usize,
    pub n_quad: usize,
    /// Increasing horizons for inferring missing averaged coefficients.
    pub infer_schedule: Vec<f64>,
    pub infer_tol: f64,
}

impl Default for AveragingSection {
    fn default() -> Self {
        let p = ProbeSettings::default();
        Self {
            t_hats: vec![1.0, 10.0, 100.0],
            radius: p.radius,
            per_axis: p.per_axis,
            n_quad: p.n_quad,
            infer_schedule: vec![10.0, 100.0, 1000.0, 10000.0],
            infer_tol: 1e-3,
        }
    }
}

impl AveragingSection {
    pub fn probe_settings(&self) -> ProbeSettings {
        ProbeSettings {
            radius: self.radius,
            per_axis: self.per_axis,
            n_quad: self.n_quad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogenizeSection {
    /// Rows `[t, x_0, .., x_{m-1}]`; defaults to the sweep start.
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Oscillating mode for `simulate-forward` and `solve-bsvi`; averaged
    /// when absent.
    pub epsilon: Option<f64>,
    /// Defaults to the step budget of `epsilon` (or of the smallest sweep
    /// epsilon).
    pub n_steps: Option<usize>,
    /// Paths written to the path and solution dumps.
    pub dump_paths: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            epsilon: None,
            n_steps: None,
            dump_paths: 10,
        }
    }
}

/// Everything a subcommand needs.
pub struct Resolved {
    /// Input with every default filled in; echoed into the manifest.
    pub config: RunConfig,
    pub scenario: Scenario,
    pub sweep: SweepConfig,
}

impl Resolved {
    pub fn example71_config(&self) -> Example71Config {
        Example71Config {
            sweep: self.sweep.clone(),
            backward_epsilons: self.config.example71.backward_epsilons.clone(),
            kappa_t_hats: self.config.example71.kappa_t_hats.clone(),
            min_slope: self.config.example71.min_slope,
            homogenize_points: self.points(),
        }
    }

    pub fn points(&self) -> Vec<(f64, Vec<f64>)> {
        self.config
            .homogenize
            .points
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|row| (row[0], row[1..].to_vec()))
            .collect()
    }
}

/// Parses TOML, or JSON when the text is a manifest written by a previous
/// run. `text` is kept for error locations.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            CliError::config(e.to_string(), Some(Location::at(e.line(), e.column(), None)))
        })?;
        let config = value
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::config("manifest has no 'config' object", None))?;
        return serde_json::from_value(config).map_err(|e| CliError::config(format!("manifest config: {e}"), None));
    }
    toml::from_str(text).map_err(|e| {
        let mut message = e.message().to_string();
        let location = e.span().map(|span| {
            let snippet = text.get(span.clone()).unwrap_or("").trim();
            if !snippet.is_empty() && !snippet.contains('\n') && !message.contains(snippet) {
                message = format!("{message} `{snippet}`");
            }
            let (line, column) = line_col(text, span.start);
            Location::at(line, column, None)
        });
        CliError::config(message, location)
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, column)
}

/// Line of `key` (dotted, e.g. `sweep.epsilons`) in TOML text, if present.
pub fn locate(text: &str, dotted: &str) -> Location {
    let (section, leaf) = match dotted.rsplit_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, dotted),
    };
    let leaf = leaf.split('[').next().unwrap_or(leaf);
    let key_line = |line: &str| {
        let t = line.trim_start();
        t.strip_prefix(leaf)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    };
    let mut current: Option<String> = None;
    let mut fallback = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            current = Some(t.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            continue;
        }
        if key_line(line) {
            let column = line.len() - line.trim_start().len() + 1;
            if current.as_deref() == section {
                return Location::at(i + 1, column, Some(dotted));
            }
            fallback.get_or_insert(Location::at(i + 1, column, Some(dotted)));
        }
        // inline tables such as `constants = { l5 = 1.2 }`
        if fallback.is_none() {
            if let Some(pos) = line.find(&format!("{leaf} =")).or_else(|| line.find(&format!("{leaf}="))) {
                let boundary = pos == 0 || !line.as_bytes()[pos - 1].is_ascii_alphanumeric();
                if boundary {
                    fallback = Some(Location::at(i + 1, pos + 1, Some(dotted)));
                }
            }
        }
    }
    fallback.unwrap_or_else(|| Location::key(dotted))
}

/// Checks semantics and builds the scenario; errors name the offending key.
pub fn resolve(mut config: RunConfig, text: &str) -> Result<Resolved, CliError> {
    let at = |key: &str, message: String| CliError::config(message, Some(locate(text, key)));
    let mut scenario = build_scenario(&mut config.scenario, text)?;
    if let Some(section) = &config.scenario.constants {
        let c = section.merged(scenario.constants);
        if !(c.l5 > 0.0 && c.l5 < 1.0) {
            return Err(at(
                "scenario.constants.l5",
                format!("l5 = {} breaks the contraction condition on f2: l5 must lie in (0, 1)", c.l5),
            ));
        }
        scenario = scenario.with_constants(c);
    }
    config.scenario.constants = Some(ConstantsSection::from(scenario.constants));
    if let Some(phi) = &config.phi {
        let built = build_phi(phi, scenario.dim_d, text)?;
        scenario = scenario.with_phi(built);
    }
    config.phi = Some(phi_section(&scenario.phi));
    scenario.validate().map_err(|e| CliError::from_core(e, Some(locate(text, "scenario"))))?;

    let m = scenario.dim_m;
    let start_x = config.sweep.start_x.clone().unwrap_or_else(|| vec![1.0; m]);
    if start_x.len() != m {
        return Err(at("sweep.start_x", format!("start_x needs {m} entries, got {}", start_x.len())));
    }
    config.sweep.start_x = Some(start_x.clone());
    let s = &config.sweep;
    let sweep = SweepConfig {
        epsilons: s.epsilons.clone(),
        gamma: s.gamma,
        n_paths: s.n_paths,
        master_seed: config.seed,
        eta_osc: s.eta_osc,
        basis: s.basis,
        n_picard: s.n_picard,
        start_t: s.start_t,
        start_x,
        moment_p: s.moment_p,
    };
    if let Some(e) = sweep.epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(at("sweep.epsilons", format!("epsilon = {e} must lie in (0, 1)")));
    }
    if sweep.epsilons.is_empty() || sweep.epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(at("sweep.epsilons", "epsilons must be non-empty and strictly decreasing".into()));
    }
    if !(sweep.gamma > 0.0 && sweep.gamma < 1.0) {
        return Err(at("sweep.gamma", format!("gamma = {} must lie in (0, 1)", sweep.gamma)));
    }
    sweep.validate().map_err(|e| CliError::from_core(e, Some(locate(text, "sweep"))))?;

    let e71 = &config.example71;
    if let Some(e) = e71.backward_epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(at("example71.backward_epsilons", format!("epsilon = {e} must lie in (0, 1)")));
    }
    if e71.backward_epsilons.is_empty() || e71.backward_epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(at(
            "example71.backward_epsilons",
            "backward_epsilons must be non-empty and strictly decreasing".into(),
        ));
    }
    if e71.kappa_t_hats.is_empty() || e71.kappa_t_hats.iter().any(|t| !(*t > 0.0)) {
        return Err(at("example71.kappa_t_hats", "kappa_t_hats must be positive".into()));
    }
    let avg = &config.averaging;
    if avg.t_hats.is_empty() || avg.t_hats.iter().any(|t| !(*t > 0.0)) {
        return Err(at("averaging.t_hats", "t_hats must be non-empty and positive".into()));
    }
    if avg.per_axis < 2 || !(avg.radius > 0.0) || avg.n_quad < 2 {
        return Err(at("averaging", "probe grid needs radius > 0, per_axis >= 2, n_quad >= 2".into()));
    }
    if avg.infer_schedule.len() < 3 || avg.infer_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(at(
            "averaging.infer_schedule",
            "infer_schedule needs at least three increasing horizons".into(),
        ));
    }
    if !(avg.infer_tol > 0.0) {
        return Err(at("averaging.infer_tol", "infer_tol must be positive".into()));
    }

    let points = config
        .homogenize
        .points
        .clone()
        .unwrap_or_else(|| vec![std::iter::once(sweep.start_t).chain(sweep.start_x.iter().copied()).collect()]);
    for (i, row) in points.iter().enumerate() {
        if row.len() != m + 1 {
            return Err(at(
                "homogenize.points",
                format!("point {i} needs {} numbers [t, x...], got {}", m + 1, row.len()),
            ));
        }
        if !(row[0] >= 0.0 && row[0] <= scenario.horizon) {
            return Err(at(
                "homogenize.points",
                format!("point {i}: t = {} must lie in [0, {}]", row[0], scenario.horizon),
            ));
        }
    }
    config.homogenize.points = Some(points);
    if let Some(e) = config.run.epsilon {
        if !(e > 0.0 && e < 1.0) {
            return Err(at("run.epsilon", format!("epsilon = {e} must lie in (0, 1)")));
        }
    }
    if config.run.n_steps == Some(0) {
        return Err(at("run.n_steps", "n_steps must be positive".into()));
    }
    Ok(Resolved { config, scenario, sweep })
}

fn build_phi(phi: &PhiSection, d: usize, text: &str) -> Result<ConvexFunction, CliError> {
    let at = |key: &str, e: fbsvi::Error| CliError::from_core(e, Some(locate(text, key)));
    let need = |v: &Option<Vec<f64>>, key: &str| -> Result<Vec<f64>, CliError> {
        let v = v
            .clone()
            .ok_or_else(|| CliError::config(format!("phi kind '{}' needs '{key}'", phi.kind), Some(locate(text, "phi.kind"))))?;
        if v.len() != d {
            return Err(CliError::config(
                format!("phi.{key} needs {d} entries, got {}", v.len()),
                Some(locate(text, &format!("phi.{key}"))),
            ));
        }
        Ok(v)
    };
    match phi.kind.as_str() {
        "zero" => Ok(ConvexFunction::zero(d)),
        "indicator_box" => {
            let lower = need(&phi.lower, "lower")?;
            let upper = need(&phi.upper, "upper")?;
            ConvexFunction::indicator_box(lower, upper).map_err(|e| at("phi.lower", e))
        }
        "scaled_abs" => ConvexFunction::scaled_abs(need(&phi.weights, "weights")?).map_err(|e| at("phi.weights", e)),
        other => Err(CliError::config(
            format!("unknown phi kind '{other}' (expected one of {})", PHI_KINDS.join(", ")),
            Some(locate(text, "phi.kind")),
        )),
    }
}

fn phi_section(phi: &ConvexFunction) -> PhiSection {
    let mut out = PhiSection {
        kind: "zero".into(),
        lower: None,
        upper: None,
        weights: None,
    };
    match phi.kind() {
        ConvexKind::IndicatorBox { lower, upper } => {
            out.kind = "indicator_box".into();
            out.lower = Some(lower.clone());
            out.upper = Some(upper.clone());
        }
        ConvexKind::ScaledAbs { weights } => {
            out.kind = "scaled_abs".into();
            out.weights = Some(weights.clone());
        }
        _ => {}
    }
    out
}

const EXPRESSION_KEYS: [&str; 8] = ["b", "sigma", "b_bar", "sigma_bar", "f1", "f1_bar", "f2", "g"];

fn build_scenario(sec: &mut ScenarioSection, text: &str) -> Result<Scenario, CliError> {
    let has_expr = [
        &sec.b,
        &sec.sigma,
        &sec.b_bar,
        &sec.sigma_bar,
        &sec.f1,
        &sec.f1_bar,
        &sec.f2,
        &sec.g,
    ]
    .iter()
    .any(|v| v.is_some());
    if has_expr || sec.dims.is_some() {
        if sec.builtin.is_some() {
            return Err(CliError::config(
                format!(
                    "scenario.builtin excludes dims and the expression keys {}",
                    EXPRESSION_KEYS.join(", ")
                ),
                Some(locate(text, "scenario.builtin")),
            ));
        }
        return expression_scenario(sec, text);
    }
    let name = sec.builtin.get_or_insert_with(|| "example71".into()).clone();
    let mut s = if name == "gbm" {
        let (mu, vol) = (*sec.mu.get_or_insert(0.1), *sec.vol.get_or_insert(0.5));
        builtin::gbm(mu, vol)
    } else {
        if sec.mu.is_some() || sec.vol.is_some() {
            return Err(CliError::config(
                "mu and vol apply to the gbm builtin only",
                Some(locate(text, "scenario.mu")),
            ));
        }
        builtin::by_name(&name).ok_or_else(|| {
            CliError::config(
                format!("unknown builtin '{name}' (expected one of {})", builtin::NAMES.join(", ")),
                Some(locate(text, "scenario.builtin")),
            )
        })?
    };
    if let Some(h) = sec.horizon {
        s.horizon = h;
    }
    sec.horizon = Some(s.horizon);
    Ok(s)
}

fn compile(
    list: &[String],
    expected: usize,
    vars: Vars,
    key: &str,
    text: &str,
) -> Result<Arc<Vec<Expr>>, CliError> {
    if list.len() != expected {
        return Err(CliError::config(
            format!("scenario.{key} needs {expected} expression(s), got {}", list.len()),
            Some(locate(text, &format!("scenario.{key}"))),
        ));
    }
    list.iter()
        .enumerate()
        .map(|(i, src)| {
            Expr::parse(src, vars).map_err(|e| {
                CliError::config(
                    format!("scenario.{key}[{i}] = \"{src}\": {e}"),
                    Some(locate(text, &format!("scenario.{key}"))),
                )
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Arc::new)
}

fn expression_scenario(sec: &ScenarioSection, text: &str) -> Result<Scenario, CliError> {
    let [m, d, l] = sec.dims.ok_or_else(|| {
        CliError::config("expression scenarios need dims = [m, d, l]", Some(locate(text, "scenario")))
    })?;
    if m == 0 || d == 0 || l == 0 {
        return Err(CliError::config("dims must be positive", Some(locate(text, "scenario.dims"))));
    }
    let required = |v: &Option<Vec<String>>, key: &str| {
        v.clone().ok_or_else(|| {
            CliError::config(format!("expression scenarios need scenario.{key}"), Some(locate(text, "scenario")))
        })
    };
    let b = compile(&required(&sec.b, "b")?, m, Vars::new(true, m, 0, 0), "b", text)?;
    let sigma = compile(&required(&sec.sigma, "sigma")?, m * l, Vars::new(true, m, 0, 0), "sigma", text)?;
    let horizon = sec.horizon.unwrap_or(1.0);
    let name = sec.name.clone().unwrap_or_else(|| "custom".into());
    let mut s = Scenario::new(
        name,
        (m, d, l),
        horizon,
        eval_ts(b),
        eval_ts(sigma),
    );
    s.averaged_drift = None;
    s.averaged_diffusion = None;
    if let Some(list) = &sec.b_bar {
        let e = compile(list, m, Vars::new(false, m, 0, 0), "b_bar", text)?;
        s.averaged_drift = Some(Arc::new(eval_x(e)));
    }
    if let Some(list) = &sec.sigma_bar {
        let e = compile(list, m * l, Vars::new(false, m, 0, 0), "sigma_bar", text)?;
        s.averaged_diffusion = Some(Arc::new(eval_x(e)));
    }
    if let Some(list) = &sec.f1 {
        let e = compile(list, d, Vars::new(true, m, d, 0), "f1", text)?;
        let f = move |t: f64, x: &[f64], y: &[f64], out: &mut [f64]| {
            let env = Env { s: t, x, y, z: &[] };
            for (o, e) in out.iter_mut().zip(e.iter()) {
                *o = e.eval(&env);
            }
        };
        s = s.with_driver(f, None);
    }
    if let Some(list) = &sec.f1_bar {
        let e = compile(list, d, Vars::new(false, m, d, 0), "f1_bar", text)?;
        s.averaged_driver = Some(Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
            let env = Env { s: 0.0, x, y, z: &[] };
            for (o, e) in out.iter_mut().zip(e.iter()) {
                *o = e.eval(&env);
            }
        }));
    }
    if let Some(list) = &sec.f2 {
        let e = compile(list, d, Vars::new(false, 0, 0, d * l), "f2", text)?;
        s = s.with_z_driver(move |z, out| {
            let env = Env { s: 0.0, x: &[], y: &[], z };
            for (o, e) in out.iter_mut().zip(e.iter()) {
                *o = e.eval(&env);
            }
        });
    }
    if let Some(list) = &sec.g {
        let e = compile(list, d, Vars::new(false, m, 0, 0), "g", text)?;
        s = s.with_terminal(eval_x(e));
    }
    Ok(s)
}

fn eval_ts(e: Arc<Vec<Expr>>) -> impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static {
    move |t, x, out| {
        let env = Env { s: t, x, y: &[], z: &[] };
        for (o, e) in out.iter_mut().zip(e.iter()) {
            *o = e.eval(&env);
        }
    }
}

fn eval_x(e: Arc<Vec<Expr>>) -> impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static {
    move |x, out| {
        let env = Env { s: 0.0, x, y: &[], z: &[] };
        for (o, e) in out.iter_mut().zip(e.iter()) {
            *o = e.eval(&env);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve_text(text: &str) -> Result<Resolved, CliError> {
        resolve(parse_config(text)?, text)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let r = resolve_text("[scenario]\nbuiltin = \"example71\"\n").unwrap();
        assert_eq!(r.sweep.gamma, 0.5);
        assert_eq!(r.sweep.eta_osc, 20.0);
        assert_eq!(r.sweep.basis, RegressionBasis::Polynomial { max_degree: 3 });
        assert_eq!(r.sweep.master_seed, DEFAULT_SEED);
        assert_eq!(r.config.phi.as_ref().unwrap().kind, "indicator_box");
        assert_eq!(r.config.homogenize.points, Some(vec![vec![0.0, 1.0]]));
        assert_eq!(r.scenario.name, "example71");
    }

    #[test]
    fn empty_config_is_example71() {
        let r = resolve_text("").unwrap();
        assert_eq!(r.scenario.name, "example71");
    }

    #[test]
    fn l5_outside_unit_interval_rejected_with_line() {
        let text = "[scenario]\nbuiltin = \"martingale\"\n\n[scenario.constants]\nl1 = 1.0\nl2 = 1.0\nl3 = 1.0\nl4 = 1.0\nl5 = 1.2\nq1 = 0\nq2 = 1\nq3 = 1\n";
        let err = resolve_text(text).err().unwrap();
        assert_eq!(err.code, "config");
        assert!(err.message.contains("l5"), "{}", err.message);
        assert_eq!(err.location.unwrap().line, Some(9));
    }

    #[test]
    fn duplicate_key_rejected_naming_key() {
        let err = parse_config("seed = 1\nseed = 2\n").unwrap_err();
        assert!(err.message.contains("seed"), "{}", err.message);
        assert_eq!(err.location.unwrap().line, Some(2));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("[sweep]\nepsilon = [0.1]\n").unwrap_err();
        assert!(err.message.contains("epsilon"), "{}", err.message);
        assert_eq!(err.location.unwrap().line, Some(2));
    }

    #[test]
    fn epsilon_outside_unit_interval_rejected() {
        let err = resolve_text("[sweep]\nn_paths = 10\nepsilons = [1.5, 0.1]\n").err().unwrap();
        assert!(err.message.contains("1.5"));
        let loc = err.location.unwrap();
        assert_eq!(loc.line, Some(3));
        assert_eq!(loc.key.as_deref(), Some("sweep.epsilons"));
    }

    #[test]
    fn unknown_phi_kind_rejected() {
        let err = resolve_text("[phi]\nkind = \"huber\"\n").err().unwrap();
        assert!(err.message.contains("huber") && err.message.contains("indicator_box"));
        assert_eq!(err.location.unwrap().line, Some(2));
    }

    #[test]
    fn expression_scenario_matches_builtin() {
        let text = r#"
[scenario]
dims = [1, 1, 1]
b = ["s/(1+s)*cos(x)"]
sigma = ["(1-exp(-s/2))*sin(x)"]
b_bar = ["cos(x)"]
sigma_bar = ["sin(x)"]
g = ["sin(x)"]

[phi]
kind = "indicator_box"
lower = [-1.0]
upper = [1.0]
"#;
        let r = resolve_text(text).unwrap();
        let e = builtin::example71();
        let (mut a, mut b) = ([0.0], [0.0]);
        for (s, x) in [(0.0, 0.3), (2.5, -1.0), (40.0, 2.0)] {
            (r.scenario.drift)(s, &[x], &mut a);
            (e.drift)(s, &[x], &mut b);
            assert_eq!(a, b);
            (r.scenario.diffusion)(s, &[x], &mut a);
            (e.diffusion)(s, &[x], &mut b);
            assert!((a[0] - b[0]).abs() < 1e-15);
        }
        assert!(r.scenario.averaged_driver.is_some());
    }

    #[test]
    fn bad_expression_located() {
        let text = "[scenario]\ndims = [1, 1, 1]\nb = [\"cos(y)\"]\nsigma = [\"1\"]\n";
        let err = resolve_text(text).err().unwrap();
        assert!(err.message.contains("'y'"), "{}", err.message);
        assert_eq!(err.location.unwrap().line, Some(3));
    }

    #[test]
    fn builtin_and_expressions_conflict() {
        assert!(resolve_text("[scenario]\nbuiltin = \"gbm\"\nb = [\"x\"]\n").is_err());
        assert!(resolve_text("[scenario]\nbuiltin = \"nope\"\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips_through_json_manifest() {
        let r = resolve_text("seed = 5\n[sweep]\nepsilons = [0.2, 0.1]\n").unwrap();
        let manifest = serde_json::json!({ "config": r.config });
        let text = serde_json::to_string_pretty(&manifest).unwrap();
        let again = resolve(parse_config(&text).unwrap(), &text).unwrap();
        assert_eq!(again.config, r.config);
        assert_eq!(again.sweep, r.sweep);
    }
}
