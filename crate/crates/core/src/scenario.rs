//! Coefficient set of a forward-backward system: drift `b(s, x)`, diffusion
//! `sigma(s, x)` (row-major `m x l`), driver `f1(s, x, y)`, gradient driver
//! `f2(z)` (`z` row-major `d x l`), terminal map `g(x)`, convex function
//! `phi`, growth constants and optional time-averaged coefficients.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convex::ConvexFunction;
use crate::error::{Error, Result};

/// `(s, x, out)`
pub type TimeStateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(x, out)`
pub type StateFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(s, x, y, out)`
pub type DriverFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, y, out)`
pub type AveragedDriverFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Lipschitz/growth constants `L1..L5` and exponents `q1..q3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Lipschitz and growth bound of `b`, `sigma`.
    pub l1: f64,
    /// Growth bound of `phi(g(x))`.
    pub l2: f64,
    /// Local Lipschitz bound of `g`.
    pub l3: f64,
    /// Lipschitz bound of `f1` in `(x, y)`.
    pub l4: f64,
    /// Lipschitz bound of `f2`; must lie in `(0, 1)`.
    pub l5: f64,
    pub q1: u32,
    pub q2: u32,
    pub q3: u32,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            l4: 1.0,
            l5: 0.5,
            q1: 0,
            q2: 1,
            q3: 1,
        }
    }
}

#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub dim_m: usize,
    pub dim_d: usize,
    pub dim_l: usize,
    pub horizon: f64,
    pub drift: TimeStateFn,
    pub diffusion: TimeStateFn,
    pub driver: DriverFn,
    pub z_driver: StateFn,
    pub terminal: StateFn,
    pub phi: ConvexFunction,
    pub constants: Constants,
    pub averaged_drift: Option<StateFn>,
    pub averaged_diffusion: Option<StateFn>,
    pub averaged_driver: Option<AveragedDriverFn>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("dims", &(self.dim_m, self.dim_d, self.dim_l))
            .field("horizon", &self.horizon)
            .field("phi", &self.phi.kind_name())
            .field("constants", &self.constants)
            .field("averaged_drift", &self.averaged_drift.is_some())
            .field("averaged_diffusion", &self.averaged_diffusion.is_some())
            .field("averaged_driver", &self.averaged_driver.is_some())
            .finish()
    }
}

impl Scenario {
    /// Forward part only; backward coefficients default to `f1 = f2 = 0`,
    /// `phi = 0` and `g(x) = (x_0, .., x_{d-1})` (requires `d <= m`).
    pub fn new(
        name: impl Into<String>,
        dims: (usize, usize, usize),
        horizon: f64,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        let (m, d, l) = dims;
        Self {
            name: name.into(),
            dim_m: m,
            dim_d: d,
            dim_l: l,
            horizon,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            driver: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            z_driver: Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
            terminal: Arc::new(move |x: &[f64], out: &mut [f64]| {
                let k = out.len().min(x.len());
                out[..k].copy_from_slice(&x[..k]);
                out[k..].fill(0.0);
            }),
            phi: ConvexFunction::zero(d),
            constants: Constants::default(),
            averaged_drift: None,
            averaged_diffusion: None,
            averaged_driver: Some(Arc::new(|_, _, out: &mut [f64]| out.fill(0.0))),
        }
    }

    pub fn with_averaged(
        mut self,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.averaged_drift = Some(Arc::new(drift));
        self.averaged_diffusion = Some(Arc::new(diffusion));
        self
    }

    /// Driver `f1(s, x, y)` with its average `f1_bar(x, y)` when known.
    pub fn with_driver(
        mut self,
        driver: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        averaged: Option<AveragedDriverFn>,
    ) -> Self {
        self.driver = Arc::new(driver);
        self.averaged_driver = averaged;
        self
    }

    pub fn with_z_driver(mut self, f2: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.z_driver = Arc::new(f2);
        self
    }

    pub fn with_terminal(mut self, g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(g);
        self
    }

    pub fn with_phi(mut self, phi: ConvexFunction) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }

    pub fn has_averaged_forward(&self) -> bool {
        self.averaged_drift.is_some() && self.averaged_diffusion.is_some()
    }

    /// Structural checks: dimensions, `0 < L5 < 1`, `phi` dimension and
    /// finiteness of every coefficient on a few sample points.
    pub fn validate(&self) -> Result<()> {
        if self.dim_m == 0 || self.dim_d == 0 || self.dim_l == 0 {
            return Err(Error::Config("scenario dimensions must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon {} must be positive", self.horizon)));
        }
        let c = &self.constants;
        if !(c.l5 > 0.0 && c.l5 < 1.0) {
            return Err(Error::Config(format!(
                "l5 = {} must lie in (0, 1): f2 must be a strict contraction in z",
                c.l5
            )));
        }
        for (name, v) in [("l1", c.l1), ("l2", c.l2), ("l3", c.l3), ("l4", c.l4)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if self.phi.dim() != self.dim_d {
            return Err(Error::Config(format!(
                "phi has dimension {} but the backward state has dimension {}",
                self.phi.dim(),
                self.dim_d
            )));
        }
        let (m, d, l) = (self.dim_m, self.dim_d, self.dim_l);
        let mut bm = vec![0.0; m];
        let mut sm = vec![0.0; m * l];
        let mut fd = vec![0.0; d];
        let z = vec![0.25; d * l];
        for (s, v) in [(0.0, 0.0), (0.7, 1.3), (50.0, -2.1)] {
            let x = vec![v; m];
            let y = vec![0.5 * v; d];
            let check = |what: &str, out: &[f64]| {
                if out.iter().all(|o| o.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Scenario(format!(
                        "{what} is not finite at s = {s}, x = {v}"
                    )))
                }
            };
            (self.drift)(s, &x, &mut bm);
            check("b", &bm)?;
            (self.diffusion)(s, &x, &mut sm);
            check("sigma", &sm)?;
            (self.driver)(s, &x, &y, &mut fd);
            check("f1", &fd)?;
            (self.z_driver)(&z, &mut fd);
            check("f2", &fd)?;
            (self.terminal)(&x, &mut fd);
            check("g", &fd)?;
            if let Some(f) = &self.averaged_drift {
                f(&x, &mut bm);
                check("b_bar", &bm)?;
            }
            if let Some(f) = &self.averaged_diffusion {
                f(&x, &mut sm);
                check("sigma_bar", &sm)?;
            }
            if let Some(f) = &self.averaged_driver {
                f(&x, &y, &mut fd);
                check("f1_bar", &fd)?;
            }
        }
        Ok(())
    }
}

/// Builtin scenarios.
pub mod builtin {
    use super::*;

    pub const NAMES: [&str; 5] = [
        "example71",
        "example71-constant",
        "martingale",
        "gbm",
        "obstacle-tree",
    ];

    /// One-dimensional system with `b(s, x) = s/(1+s) cos x`,
    /// `sigma(s, x) = (1 - e^{-s/2}) sin x`, averaged to `cos x`, `sin x`;
    /// `f1 = f2 = 0`, `phi` the indicator of `[-1, 1]` and `g = sin`.
    pub fn example71() -> Scenario {
        Scenario::new(
            "example71",
            (1, 1, 1),
            1.0,
            |s, x, out| out[0] = s / (1.0 + s) * x[0].cos(),
            |s, x, out| out[0] = (1.0 - (-0.5 * s).exp()) * x[0].sin(),
        )
        .with_averaged(|x, out| out[0] = x[0].cos(), |x, out| out[0] = x[0].sin())
        .with_terminal(|x, out| out[0] = x[0].sin())
        .with_phi(ConvexFunction::indicator_box(vec![-1.0], vec![1.0]).expect("valid box"))
        .with_constants(Constants {
            l1: 2.0,
            l2: 1.0,
            l3: 1.0,
            l4: 1.0,
            l5: 0.5,
            q1: 0,
            q2: 1,
            q3: 1,
        })
    }

    /// Control system whose oscillating coefficients already equal the
    /// averaged ones (`cos x`, `sin x`).
    pub fn example71_constant() -> Scenario {
        let mut s = example71();
        s.name = "example71-constant".into();
        s.drift = Arc::new(|_, x, out| out[0] = x[0].cos());
        s.diffusion = Arc::new(|_, x, out| out[0] = x[0].sin());
        s
    }

    /// `X = x + W`, `g(x) = x`, `phi = 0`: `Y_t = X_t`, `Z = 1`.
    pub fn martingale() -> Scenario {
        Scenario::new(
            "martingale",
            (1, 1, 1),
            1.0,
            |_, _, out| out[0] = 0.0,
            |_, _, out| out[0] = 1.0,
        )
        .with_averaged(|_, out| out[0] = 0.0, |_, out| out[0] = 1.0)
    }

    /// Geometric Brownian motion `dX = mu X ds + vol X dW`, `g(x) = x`.
    pub fn gbm(mu: f64, vol: f64) -> Scenario {
        Scenario::new(
            "gbm",
            (1, 1, 1),
            1.0,
            move |_, x, out| out[0] = mu * x[0],
            move |_, x, out| out[0] = vol * x[0],
        )
        .with_averaged(move |x, out| out[0] = mu * x[0], move |x, out| out[0] = vol * x[0])
        .with_constants(Constants {
            l1: mu.abs() + vol.abs(),
            ..Constants::default()
        })
    }

    /// `X = x + W`, `phi` the indicator of `[-0.5, 0.5]`, `g` the clip onto
    /// that interval.
    pub fn obstacle_tree() -> Scenario {
        martingale()
            .with_terminal(|x, out| out[0] = x[0].clamp(-0.5, 0.5))
            .with_phi(ConvexFunction::indicator_box(vec![-0.5], vec![0.5]).expect("valid box"))
            .with_name("obstacle-tree")
    }

    pub fn by_name(name: &str) -> Option<Scenario> {
        match name {
            "example71" => Some(example71()),
            "example71-constant" => Some(example71_constant()),
            "martingale" => Some(martingale()),
            "gbm" => Some(gbm(0.1, 0.5)),
            "obstacle-tree" => Some(obstacle_tree()),
            _ => None,
        }
    }
}

impl Scenario {
    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}
