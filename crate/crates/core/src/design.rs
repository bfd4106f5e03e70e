//! Empirical Gram matrix, observation vector and empirical norm.
//!
//! Time integrals over the window `[t0, T]` are Riemann sums on the
//! observation grid; stochastic integrals `int f(X) dX` use left-point (Itô)
//! sums. All sums are normalized by `N * T_norm`, see [`Normalization`].

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bases::BasisFamily;
use crate::error::{Error, Result};
use crate::sde::PathSample;

/// Dimensions `(m1, m2)` of the spaces spanned for `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DimPair {
    pub m1: usize,
    pub m2: usize,
}

impl DimPair {
    pub const fn new(m1: usize, m2: usize) -> Self {
        DimPair { m1, m2 }
    }

    pub fn total(&self) -> usize {
        self.m1 + self.m2
    }

    /// Component-wise `self <= other`.
    pub fn nested_in(&self, other: &DimPair) -> bool {
        self.m1 <= other.m1 && self.m2 <= other.m2
    }

    pub fn validate(&self, n_paths: usize) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::invalid("at least one basis function is required"));
        }
        if self.m1 > n_paths || self.m2 > n_paths {
            return Err(Error::invalid(format!(
                "dimensions ({}, {}) exceed the number of paths {n_paths}",
                self.m1, self.m2
            )));
        }
        Ok(())
    }
}

impl fmt::Display for DimPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.m1, self.m2)
    }
}

/// Quadrature rule for the `ds` time integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeRule {
    /// `sum_{l = l0}^{n-1} f(t_l) dt`.
    #[default]
    LeftPoint,
    /// Trapezoid over `t_{l0}, ..., t_n`.
    Trapezoid,
}

/// Length used in the `1 / (N T_norm)` normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `T_norm = T - t0`, the window length.
    #[default]
    Window,
    /// `T_norm = T`, the full horizon (the benchmark convention).
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DesignOptions {
    pub rule: TimeRule,
    pub normalization: Normalization,
}

impl DesignOptions {
    /// Left-point sums normalized by the full horizon.
    pub fn benchmark() -> Self {
        DesignOptions {
            rule: TimeRule::LeftPoint,
            normalization: Normalization::Horizon,
        }
    }
}

/// Integration window and weights derived from a grid and options.
#[derive(Debug, Clone)]
struct Window {
    first: usize,
    /// `weights[k]` multiplies the integrand at grid index `first + k`.
    weights: Vec<f64>,
    /// Last grid index whose increment enters the Itô sum, exclusive.
    ito_end: usize,
    t0: f64,
    horizon: f64,
    t_norm: f64,
}

impl Window {
    fn new(sample: &PathSample, opts: &DesignOptions) -> Window {
        let grid = sample.grid();
        let first = grid.drop_first;
        let n = grid.n_steps;
        let dt = grid.dt;
        let weights = match opts.rule {
            TimeRule::LeftPoint => vec![dt; n - first],
            TimeRule::Trapezoid => {
                let mut w = vec![dt; n - first + 1];
                w[0] = 0.5 * dt;
                *w.last_mut().expect("window is nonempty") = 0.5 * dt;
                w
            }
        };
        let (t0, horizon) = (grid.t0(), grid.horizon());
        let t_norm = match opts.normalization {
            Normalization::Window => horizon - t0,
            Normalization::Horizon => horizon,
        };
        Window {
            first,
            weights,
            ito_end: n,
            t0,
            horizon,
            t_norm,
        }
    }

    fn scale(&self, n_paths: usize) -> f64 {
        1.0 / (n_paths as f64 * self.t_norm)
    }
}

/// `Psi_m`, `Z_m` and `d_m` for one dimension pair.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    pub dims: DimPair,
    pub gram: DMatrix<f64>,
    pub zvec: DVector<f64>,
    pub dvec: DVector<f64>,
    pub t0: f64,
    pub horizon: f64,
    /// The normalizing length `T_0`.
    pub t_norm: f64,
    pub n_paths: usize,
    pub phi: BasisFamily,
    pub psi: BasisFamily,
}

/// Gram matrix and observation vector at the largest dimensions of a scan.
///
/// Nested systems are sub-blocks, so one pass over the sample serves every
/// `(m1, m2) <= max`.
#[derive(Debug, Clone)]
pub struct DesignCache {
    max: DimPair,
    gram: DMatrix<f64>,
    zvec: DVector<f64>,
    phi: BasisFamily,
    psi: BasisFamily,
    t0: f64,
    horizon: f64,
    t_norm: f64,
    n_paths: usize,
}

const PATH_CHUNK: usize = 16;

impl DesignCache {
    pub fn build(
        sample: &PathSample,
        phi: BasisFamily,
        psi: BasisFamily,
        max: DimPair,
        opts: &DesignOptions,
    ) -> Result<Self> {
        max.validate(sample.n_paths())?;
        let window = Window::new(sample, opts);
        let dim = max.total();
        let n_paths = sample.n_paths();

        // Fixed chunking and in-order reduction keep the sums bit-identical
        // for any thread count.
        let chunks: Vec<(DMatrix<f64>, DVector<f64>)> = (0..n_paths)
            .collect::<Vec<_>>()
            .par_chunks(PATH_CHUNK)
            .map(|paths| {
                let mut g = DMatrix::zeros(dim, dim);
                let mut z = DVector::zeros(dim);
                for &i in paths {
                    accumulate_path(sample, i, phi, psi, max, &window, &mut g, &mut z);
                }
                (g, z)
            })
            .collect();

        let mut gram = DMatrix::zeros(dim, dim);
        let mut zvec = DVector::zeros(dim);
        for (g, z) in chunks {
            gram += g;
            zvec += z;
        }
        let scale = window.scale(n_paths);
        gram *= scale;
        zvec *= scale;
        // Exact symmetry; the product kernel may round (i, j) and (j, i) differently.
        let gram = (&gram + gram.transpose()) * 0.5;

        Ok(DesignCache {
            max,
            gram,
            zvec,
            phi,
            psi,
            t0: window.t0,
            horizon: window.horizon,
            t_norm: window.t_norm,
            n_paths,
        })
    }

    pub fn max_dims(&self) -> DimPair {
        self.max
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn phi(&self) -> BasisFamily {
        self.phi
    }

    pub fn psi(&self) -> BasisFamily {
        self.psi
    }

    pub fn t_norm(&self) -> f64 {
        self.t_norm
    }

    /// Row/column indices of the `(m1, m2)` sub-system inside the cache.
    fn indices(&self, dims: DimPair) -> Vec<usize> {
        (0..dims.m1).chain((0..dims.m2).map(|k| self.max.m1 + k)).collect()
    }

    pub fn system(&self, dims: DimPair) -> Result<DesignSystem> {
        dims.validate(self.n_paths)?;
        if !dims.nested_in(&self.max) {
            return Err(Error::invalid(format!(
                "dimensions {dims} exceed the cached maximum {}",
                self.max
            )));
        }
        let idx = self.indices(dims);
        let d = idx.len();
        let gram = DMatrix::from_fn(d, d, |r, c| self.gram[(idx[r], idx[c])]);
        let zvec = DVector::from_fn(d, |r, _| self.zvec[idx[r]]);
        let dvec = if dims.m2 > 0 {
            DVector::from_vec(self.psi.delta_vector(dims.m2)?.padded(dims.m1))
        } else {
            DVector::zeros(d)
        };
        Ok(DesignSystem {
            dims,
            gram,
            zvec,
            dvec,
            t0: self.t0,
            horizon: self.horizon,
            t_norm: self.t_norm,
            n_paths: self.n_paths,
            phi: self.phi,
            psi: self.psi,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_path(
    sample: &PathSample,
    path: usize,
    phi: BasisFamily,
    psi: BasisFamily,
    dims: DimPair,
    window: &Window,
    gram: &mut DMatrix<f64>,
    zvec: &mut DVector<f64>,
) {
    let x = sample.x_path(path);
    let y = sample.y_path(path);
    let dim = dims.total();
    let n_pts = window.weights.len();

    // Column l holds the stacked basis vector at grid index first + l.
    let mut evals = DMatrix::zeros(dim, n_pts);
    for (l, mut col) in evals.column_iter_mut().enumerate() {
        let t = window.first + l;
        let (phi_part, psi_part) = col.as_mut_slice().split_at_mut(dims.m1);
        phi.eval_into(x[t], phi_part);
        psi.eval_into(y[t], psi_part);
    }

    let mut weighted = evals.clone();
    for (mut col, &w) in weighted.column_iter_mut().zip(&window.weights) {
        col *= w;
    }
    gram.gemm(1.0, &weighted, &evals.transpose(), 1.0);

    let n_ito = window.ito_end - window.first;
    let increments = DVector::from_fn(n_ito, |l, _| {
        let t = window.first + l;
        x[t + 1] - x[t]
    });
    zvec.gemv(1.0, &evals.columns(0, n_ito), &increments, 1.0);
}

pub fn assemble_system(
    sample: &PathSample,
    phi: BasisFamily,
    psi: BasisFamily,
    dims: DimPair,
    opts: &DesignOptions,
) -> Result<DesignSystem> {
    DesignCache::build(sample, phi, psi, dims, opts)?.system(dims)
}

pub fn assemble_gram(
    sample: &PathSample,
    phi: BasisFamily,
    psi: BasisFamily,
    dims: DimPair,
    opts: &DesignOptions,
) -> Result<DMatrix<f64>> {
    Ok(assemble_system(sample, phi, psi, dims, opts)?.gram)
}

pub fn assemble_z(
    sample: &PathSample,
    phi: BasisFamily,
    psi: BasisFamily,
    dims: DimPair,
    opts: &DesignOptions,
) -> Result<DVector<f64>> {
    Ok(assemble_system(sample, phi, psi, dims, opts)?.zvec)
}

/// `||(tau, nu)||_N^2` for `tau = sum coeffs[j] phi_j`, `nu = sum coeffs[m1+k] psi_k`,
/// summed directly over the sample without forming the Gram matrix.
pub fn empirical_norm_sq(
    sample: &PathSample,
    phi: BasisFamily,
    psi: BasisFamily,
    coeffs: &[f64],
    dims: DimPair,
    opts: &DesignOptions,
) -> Result<f64> {
    dims.validate(sample.n_paths())?;
    if coeffs.len() != dims.total() {
        return Err(Error::invalid(format!(
            "expected {} coefficients, got {}",
            dims.total(),
            coeffs.len()
        )));
    }
    let window = Window::new(sample, opts);
    let (ca, cb) = coeffs.split_at(dims.m1);
    let mut phi_buf = vec![0.0; dims.m1];
    let mut psi_buf = vec![0.0; dims.m2];
    let mut total = 0.0;
    for i in 0..sample.n_paths() {
        let x = sample.x_path(i);
        let y = sample.y_path(i);
        for (l, &w) in window.weights.iter().enumerate() {
            let t = window.first + l;
            phi.eval_into(x[t], &mut phi_buf);
            psi.eval_into(y[t], &mut psi_buf);
            let tau: f64 = ca.iter().zip(&phi_buf).map(|(c, v)| c * v).sum();
            let nu: f64 = cb.iter().zip(&psi_buf).map(|(c, v)| c * v).sum();
            total += w * (tau + nu) * (tau + nu);
        }
    }
    Ok(total / (sample.n_paths() as f64 * window.t_norm))
}

/// Eigenvalues at or below this are treated as zero.
pub fn singularity_threshold(dim: usize) -> f64 {
    1e-12 * dim as f64
}

pub fn min_eigenvalue(gram: &DMatrix<f64>) -> f64 {
    if gram.nrows() == 0 {
        return f64::INFINITY;
    }
    gram.symmetric_eigenvalues().min()
}

/// `||Psi^{-1}||_op = 1 / lambda_min`, or `+inf` when the matrix is
/// numerically singular.
pub fn inv_opnorm(gram: &DMatrix<f64>) -> f64 {
    inv_opnorm_from_min_eigenvalue(min_eigenvalue(gram), gram.nrows())
}

pub(crate) fn inv_opnorm_from_min_eigenvalue(lambda_min: f64, dim: usize) -> f64 {
    if lambda_min > singularity_threshold(dim) {
        1.0 / lambda_min
    } else {
        f64::INFINITY
    }
}

/// Writes a matrix as plain CSV, one row per line.
pub fn write_matrix_csv(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in 0..matrix.nrows() {
        writer.write_record(matrix.row(r).iter().map(|v| format!("{v:e}")))?;
    }
    writer.flush()?;
    Ok(())
}
