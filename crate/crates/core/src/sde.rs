//! Path simulation for `dX = (a(X) + b(Y)) dt + sigma(X) dW1` driven by an
//! exogenous explanatory process `Y` independent of `W1`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{path_rng, stream_rng, Noise};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The data-generating truth `(a, b, sigma, x0)`.
#[derive(Clone)]
pub struct SdeModel {
    a: ScalarFn,
    b: ScalarFn,
    sigma: ScalarFn,
    x0: f64,
    sigma_const: Option<f64>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("x0", &self.x0)
            .field("sigma_const", &self.sigma_const)
            .finish_non_exhaustive()
    }
}

const PROBE: [f64; 9] = [-100.0, -10.0, -2.5, -1.0, 0.0, 0.5, 1.0, 7.5, 100.0];

impl SdeModel {
    pub fn new(a: ScalarFn, b: ScalarFn, sigma: ScalarFn, x0: f64) -> Result<Self> {
        if !x0.is_finite() {
            return Err(Error::invalid("x0 must be finite"));
        }
        for (name, f) in [("a", &a), ("b", &b), ("sigma", &sigma)] {
            if let Some(&p) = PROBE.iter().find(|&&p| !f(p).is_finite()) {
                return Err(Error::invalid(format!("{name}({p}) is not finite")));
            }
        }
        Ok(SdeModel {
            a,
            b,
            sigma,
            x0,
            sigma_const: None,
        })
    }

    pub fn with_constant_sigma(a: ScalarFn, b: ScalarFn, sigma: f64, x0: f64) -> Result<Self> {
        let mut model = Self::new(a, b, Arc::new(move |_| sigma), x0)?;
        model.sigma_const = Some(sigma);
        Ok(model)
    }

    /// One of the three benchmark couples with `sigma = 1.5` and `x0 = 0`.
    pub fn preset(id: ModelId) -> Self {
        let (a, b): (ScalarFn, ScalarFn) = match id {
            ModelId::One => (
                Arc::new(|x: f64| -1.5 * (2.0 * x).cos()),
                Arc::new(|y: f64| (4.0 * y).sin()),
            ),
            ModelId::Two => (
                Arc::new(|x: f64| -1.5 * x / (1.0 + x * x)),
                Arc::new(|y: f64| y / (1.0 + y * y)),
            ),
            ModelId::Three => (Arc::new(|x: f64| -x + 0.5), Arc::new(|y: f64| -0.5 * y.tanh())),
        };
        Self::with_constant_sigma(a, b, DEFAULT_SIGMA, 0.0).expect("preset models are finite")
    }

    pub fn a(&self, x: f64) -> f64 {
        (self.a)(x)
    }

    pub fn b(&self, y: f64) -> f64 {
        (self.b)(y)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// The diffusion level when it was declared constant.
    pub fn sigma_const(&self) -> Option<f64> {
        self.sigma_const
    }
}

pub const DEFAULT_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    One,
    Two,
    Three,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::One, ModelId::Two, ModelId::Three];

    pub fn number(&self) -> u8 {
        match self {
            ModelId::One => 1,
            ModelId::Two => 2,
            ModelId::Three => 3,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(ModelId::One),
            "2" => Ok(ModelId::Two),
            "3" => Ok(ModelId::Three),
            other => Err(Error::invalid(format!("unknown model '{other}' (expected 1, 2 or 3)"))),
        }
    }
}

/// Explanatory process type of the benchmark: (A) polynomial in Brownian
/// motion, (B) stationary Ornstein-Uhlenbeck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum YType {
    A,
    B,
}

impl YType {
    pub const ALL: [YType; 2] = [YType::A, YType::B];
}

impl fmt::Display for YType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            YType::A => "A",
            YType::B => "B",
        })
    }
}

impl FromStr for YType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(YType::A),
            "B" | "b" => Ok(YType::B),
            other => Err(Error::invalid(format!("unknown Y type '{other}' (expected A or B)"))),
        }
    }
}

#[derive(Clone)]
pub enum ExplanatorySpec {
    /// `Y = sigma_y W (1 + W^2)`.
    PolynomialBM { sigma_y: f64 },
    /// `Y = sigma_y U` with `dU = -(rate/2) U dt + (gamma/2) dW`, started
    /// from its stationary law.
    OrnsteinUhlenbeck { sigma_y: f64, rate: f64, gamma: f64 },
    /// `Y_t = g(int_0^t h(s) dW_s)`.
    TransformedIto { g: ScalarFn, h: ScalarFn },
}

impl fmt::Debug for ExplanatorySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExplanatorySpec::PolynomialBM { sigma_y } => {
                f.debug_struct("PolynomialBM").field("sigma_y", sigma_y).finish()
            }
            ExplanatorySpec::OrnsteinUhlenbeck { sigma_y, rate, gamma } => f
                .debug_struct("OrnsteinUhlenbeck")
                .field("sigma_y", sigma_y)
                .field("rate", rate)
                .field("gamma", gamma)
                .finish(),
            ExplanatorySpec::TransformedIto { .. } => f.write_str("TransformedIto"),
        }
    }
}

pub const DEFAULT_SIGMA_Y: f64 = 2.0;
pub const DEFAULT_OU_RATE: f64 = 2.0;
pub const DEFAULT_OU_GAMMA: f64 = 1.0;

impl ExplanatorySpec {
    pub fn preset(y: YType) -> Self {
        match y {
            YType::A => ExplanatorySpec::PolynomialBM {
                sigma_y: DEFAULT_SIGMA_Y,
            },
            YType::B => ExplanatorySpec::OrnsteinUhlenbeck {
                sigma_y: DEFAULT_SIGMA_Y,
                rate: DEFAULT_OU_RATE,
                gamma: DEFAULT_OU_GAMMA,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            ExplanatorySpec::PolynomialBM { sigma_y } => positive("sigma_y", sigma_y),
            ExplanatorySpec::OrnsteinUhlenbeck { sigma_y, rate, gamma } => {
                positive("sigma_y", sigma_y)?;
                positive("ou_rate", rate)?;
                positive("ou_gamma", gamma)
            }
            ExplanatorySpec::TransformedIto { .. } => Ok(()),
        }
    }
}

/// Exact one-step transition of `dU = -(rate/2) U dt + (gamma/2) dW`:
/// `U_{t+dt} | U_t = u ~ N(factor * u, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuTransition {
    pub factor: f64,
    pub variance: f64,
    pub stationary_variance: f64,
}

impl OuTransition {
    pub fn new(rate: f64, gamma: f64, dt: f64) -> Self {
        let stationary_variance = gamma * gamma / (4.0 * rate);
        OuTransition {
            factor: (-0.5 * rate * dt).exp(),
            variance: stationary_variance * -(-rate * dt).exp_m1(),
            stationary_variance,
        }
    }
}

/// Uniform time grid `t_l = l * dt`, `l = 0..=n_steps`. The first
/// `drop_first` observations are excluded from estimation, so the
/// estimation window is `[t0, T]` with `t0 = drop_first * dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_steps: usize,
    pub dt: f64,
    pub drop_first: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_steps: 500,
            dt: 0.02,
            drop_first: 20,
        }
    }
}

impl GridSpec {
    pub fn new(n_steps: usize, dt: f64, drop_first: usize) -> Result<Self> {
        let grid = GridSpec {
            n_steps,
            dt,
            drop_first,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.drop_first >= self.n_steps {
            return Err(Error::invalid(format!(
                "drop_first ({}) must be below n_steps ({})",
                self.drop_first, self.n_steps
            )));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn t0(&self) -> f64 {
        self.drop_first as f64 * self.dt
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }
}

/// `n_paths` discretized pairs `(X^i, Y^i)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    n_paths: usize,
    grid: GridSpec,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PathSample {
    /// Builds a sample from explicit paths, each of length `n_steps + 1`.
    pub fn from_paths(grid: GridSpec, xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>) -> Result<Self> {
        grid.validate()?;
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::invalid(format!(
                "need the same positive number of X and Y paths, got {} and {}",
                xs.len(),
                ys.len()
            )));
        }
        let len = grid.n_points();
        let n_paths = xs.len();
        let mut x = Vec::with_capacity(n_paths * len);
        let mut y = Vec::with_capacity(n_paths * len);
        for (i, (xp, yp)) in xs.into_iter().zip(ys).enumerate() {
            if xp.len() != len || yp.len() != len {
                return Err(Error::invalid(format!(
                    "path {i} has lengths ({}, {}), expected {len}",
                    xp.len(),
                    yp.len()
                )));
            }
            if let Some(step) = xp.iter().chain(&yp).position(|v| !v.is_finite()) {
                return Err(Error::Simulation {
                    path: i,
                    step: step % len,
                    reason: "non-finite observation".into(),
                });
            }
            x.extend(xp);
            y.extend(yp);
        }
        Ok(PathSample { n_paths, grid, x, y })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn x_path(&self, i: usize) -> &[f64] {
        let len = self.grid.n_points();
        &self.x[i * len..(i + 1) * len]
    }

    pub fn y_path(&self, i: usize) -> &[f64] {
        let len = self.grid.n_points();
        &self.y[i * len..(i + 1) * len]
    }
}

pub fn simulate_y(spec: &ExplanatorySpec, grid: &GridSpec, seed: u64) -> Result<Vec<f64>> {
    simulate_y_with(spec, grid, &mut stream_rng(seed, 0))
}

pub fn simulate_y_with<R: Rng + ?Sized>(spec: &ExplanatorySpec, grid: &GridSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    grid.validate()?;
    let n = grid.n_steps;
    let sqrt_dt = grid.dt.sqrt();
    let mut out = Vec::with_capacity(n + 1);
    match *spec {
        ExplanatorySpec::PolynomialBM { sigma_y } => {
            let mut w = 0.0;
            out.push(0.0);
            for _ in 0..n {
                let xi: f64 = rng.sample(StandardNormal);
                w += sqrt_dt * xi;
                out.push(sigma_y * w * (1.0 + w * w));
            }
        }
        ExplanatorySpec::OrnsteinUhlenbeck { sigma_y, rate, gamma } => {
            let tr = OuTransition::new(rate, gamma, grid.dt);
            let noise_sd = tr.variance.sqrt();
            let xi: f64 = rng.sample(StandardNormal);
            let mut u = tr.stationary_variance.sqrt() * xi;
            out.push(sigma_y * u);
            for _ in 0..n {
                let xi: f64 = rng.sample(StandardNormal);
                u = tr.factor * u + noise_sd * xi;
                out.push(sigma_y * u);
            }
        }
        ExplanatorySpec::TransformedIto { ref g, ref h } => {
            let mut integral = 0.0;
            out.push(g(0.0));
            for l in 0..n {
                let xi: f64 = rng.sample(StandardNormal);
                integral += h(l as f64 * grid.dt) * sqrt_dt * xi;
                out.push(g(integral));
            }
        }
    }
    if let Some(step) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Simulation {
            path: 0,
            step,
            reason: "explanatory process is not finite".into(),
        });
    }
    Ok(out)
}

pub fn simulate_x(model: &SdeModel, y_path: &[f64], grid: &GridSpec, seed: u64) -> Result<Vec<f64>> {
    simulate_x_with(model, y_path, grid, &mut stream_rng(seed, 1))
}

/// Euler scheme; `b` is evaluated at the left endpoint `Y_l`.
pub fn simulate_x_with<R: Rng + ?Sized>(
    model: &SdeModel,
    y_path: &[f64],
    grid: &GridSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    grid.validate()?;
    if y_path.len() != grid.n_points() {
        return Err(Error::invalid(format!(
            "Y path has {} points, grid needs {}",
            y_path.len(),
            grid.n_points()
        )));
    }
    let dt = grid.dt;
    let sqrt_dt = dt.sqrt();
    let mut out = Vec::with_capacity(grid.n_points());
    let mut x = model.x0;
    out.push(x);
    for (l, &y) in y_path[..grid.n_steps].iter().enumerate() {
        let xi: f64 = rng.sample(StandardNormal);
        x += (model.a(x) + model.b(y)) * dt + model.sigma(x) * sqrt_dt * xi;
        if !x.is_finite() {
            return Err(Error::Simulation {
                path: 0,
                step: l + 1,
                reason: "state is not finite".into(),
            });
        }
        out.push(x);
    }
    Ok(out)
}

/// `n_paths` independent pairs; path `i` draws W2 and W1 from their own
/// streams addressed by `(seed, i)`.
pub fn generate_sample(
    model: &SdeModel,
    spec: &ExplanatorySpec,
    grid: &GridSpec,
    n_paths: usize,
    seed: u64,
) -> Result<PathSample> {
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be at least 1"));
    }
    spec.validate()?;
    grid.validate()?;
    let with_path = |path: usize, e: Error| match e {
        Error::Simulation { step, reason, .. } => Error::Simulation { path, step, reason },
        other => other,
    };
    let paths: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let y =
                simulate_y_with(spec, grid, &mut path_rng(seed, i, Noise::Explanatory)).map_err(|e| with_path(i, e))?;
            let x =
                simulate_x_with(model, &y, grid, &mut path_rng(seed, i, Noise::State)).map_err(|e| with_path(i, e))?;
            Ok((x, y))
        })
        .collect::<Result<_>>()?;

    let len = grid.n_points();
    let mut x = Vec::with_capacity(n_paths * len);
    let mut y = Vec::with_capacity(n_paths * len);
    for (xp, yp) in paths {
        x.extend(xp);
        y.extend(yp);
    }
    Ok(PathSample {
        n_paths,
        grid: *grid,
        x,
        y,
    })
}
