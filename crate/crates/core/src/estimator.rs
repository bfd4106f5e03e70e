//! Constrained projection least squares.
//!
//! Minimizes `J(theta) = theta' Psi theta - 2 theta' Z` subject to
//! `<theta, d> = 0`, where `d` carries the integrals of the `b`-basis. The
//! Lagrangian gives
//!
//! ```text
//! theta = Psi^{-1} Z - (d' Psi^{-1} Z / d' Psi^{-1} d) Psi^{-1} d
//! ```
//!
//! and the constraint disappears when `d = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bases::BasisFamily;
use crate::design::{inv_opnorm_from_min_eigenvalue, min_eigenvalue, singularity_threshold, DesignSystem, DimPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub dims: DimPair,
    /// First `m1` entries are the `a`-coefficients, the rest the `b`-coefficients.
    pub theta: DVector<f64>,
    /// The design failed the stability event and the estimate was zeroed.
    pub truncated: bool,
    /// Lagrange multiplier of the integral constraint, 0 when `d = 0`.
    pub lambda_multiplier: f64,
    /// `gamma_N(a_hat, b_hat) = -theta' Psi theta`.
    pub gamma_value: f64,
    pub inv_opnorm: f64,
}

impl FitResult {
    pub fn truncated(dims: DimPair) -> Self {
        FitResult {
            dims,
            theta: DVector::zeros(dims.total()),
            truncated: true,
            lambda_multiplier: 0.0,
            gamma_value: 0.0,
            inv_opnorm: f64::INFINITY,
        }
    }

    pub fn a_coeffs(&self) -> &[f64] {
        &self.theta.as_slice()[..self.dims.m1]
    }

    pub fn b_coeffs(&self) -> &[f64] {
        &self.theta.as_slice()[self.dims.m1..]
    }

    /// Relative residuals of the optimality identities on `system`.
    pub fn residuals(&self, system: &DesignSystem) -> FitResiduals {
        FitResiduals::compute(self, system)
    }
}

/// Relative residuals of a fit:
///
/// * `constraint`: `|<theta, d>| / (|theta| |d|)`
/// * `optimality`: `|theta' (Psi theta - Z)| / (|theta| (|Psi| |theta| + |Z|))`
/// * `kkt`: `|2 (Psi theta - Z) - lambda d| / (2 |Psi| |theta| + 2 |Z| + |lambda| |d|)`
///
/// with `|Psi|` the spectral norm. Each is 0 when its denominator is.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitResiduals {
    pub constraint: f64,
    pub optimality: f64,
    pub kkt: f64,
}

impl FitResiduals {
    fn compute(fit: &FitResult, sys: &DesignSystem) -> Self {
        let theta = &fit.theta;
        let psi_norm = sys.gram.symmetric_eigenvalues().amax();
        let t_norm = theta.norm();
        let z_norm = sys.zvec.norm();
        let d_norm = sys.dvec.norm();
        let grad = &sys.gram * theta - &sys.zvec;
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };

        let constraint = ratio(theta.dot(&sys.dvec).abs(), t_norm * d_norm);
        let optimality = ratio(theta.dot(&grad).abs(), t_norm * (psi_norm * t_norm + z_norm));
        let kkt_vec = grad * 2.0 - &sys.dvec * fit.lambda_multiplier;
        let kkt = ratio(
            kkt_vec.norm(),
            2.0 * psi_norm * t_norm + 2.0 * z_norm + fit.lambda_multiplier.abs() * d_norm,
        );
        FitResiduals {
            constraint,
            optimality,
            kkt,
        }
    }

    pub fn max(&self) -> f64 {
        self.constraint.max(self.optimality).max(self.kkt)
    }

    /// Component-wise maximum.
    pub fn merge(self, other: FitResiduals) -> FitResiduals {
        FitResiduals {
            constraint: self.constraint.max(other.constraint),
            optimality: self.optimality.max(other.optimality),
            kkt: self.kkt.max(other.kkt),
        }
    }
}

/// Linear solver for a symmetric positive definite Gram matrix: Cholesky,
/// falling back to the eigendecomposition when Cholesky breaks down on a
/// marginally conditioned matrix.
enum SpdSolver {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Eigen(nalgebra::SymmetricEigen<f64, nalgebra::Dyn>),
}

impl SpdSolver {
    fn new(gram: &DMatrix<f64>) -> Self {
        match gram.clone().cholesky() {
            Some(chol) => SpdSolver::Cholesky(chol),
            None => SpdSolver::Eigen(gram.clone().symmetric_eigen()),
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdSolver::Cholesky(chol) => chol.solve(rhs),
            SpdSolver::Eigen(eig) => {
                let v = &eig.eigenvectors;
                let mut coef = v.tr_mul(rhs);
                for (c, lambda) in coef.iter_mut().zip(eig.eigenvalues.iter()) {
                    *c /= lambda;
                }
                v * coef
            }
        }
    }
}

/// Closed-form constrained solution. Fails with [`Error::SingularDesign`]
/// when the Gram matrix is numerically singular.
pub fn solve_constrained(system: &DesignSystem) -> Result<FitResult> {
    let lambda_min = min_eigenvalue(&system.gram);
    solve_with_min_eigenvalue(system, lambda_min)
}

pub(crate) fn solve_with_min_eigenvalue(system: &DesignSystem, lambda_min: f64) -> Result<FitResult> {
    let dim = system.gram.nrows();
    let threshold = singularity_threshold(dim);
    if lambda_min.is_nan() || lambda_min <= threshold {
        return Err(Error::SingularDesign {
            min_eigenvalue: lambda_min,
            threshold,
        });
    }
    let solver = SpdSolver::new(&system.gram);
    let unconstrained = solver.solve(&system.zvec);
    let d = &system.dvec;

    let (theta, lambda_multiplier) = if d.iter().all(|&v| v == 0.0) {
        (unconstrained, 0.0)
    } else {
        let pd = solver.solve(d);
        let denom = d.dot(&pd);
        let c = d.dot(&unconstrained) / denom;
        let mut theta = unconstrained - &pd * c;
        // One correction step along Psi^{-1} d removes the rounding left in
        // <theta, d> without leaving the stationarity manifold.
        let c2 = d.dot(&theta) / denom;
        theta -= &pd * c2;
        (theta, -2.0 * (c + c2))
    };

    let gamma_value = -theta.dot(&(&system.gram * &theta));
    Ok(FitResult {
        dims: system.dims,
        theta,
        truncated: false,
        lambda_multiplier,
        gamma_value,
        inv_opnorm: inv_opnorm_from_min_eigenvalue(lambda_min, dim),
    })
}

/// The objective `theta' Psi theta - 2 theta' Z`.
pub fn contrast(system: &DesignSystem, theta: &DVector<f64>) -> f64 {
    theta.dot(&(&system.gram * theta)) - 2.0 * theta.dot(&system.zvec)
}

/// Empirical well-conditioning test on the Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityMode {
    /// `(m1 + m2) |Psi^{-1}|_op <= constant * N / log N`.
    PracticalCutoff { constant: f64 },
    /// `(L_phi(m1) + L_psi(m2)) max(|Psi^{-1}|_op, 1) <= c_r N / log N`
    /// with `c_r = (1 - log 2) / (1 + r)`.
    TheoreticalLambda { r: f64 },
}

/// `e^{14 log 10}`.
pub const DEFAULT_CUTOFF: f64 = 1e14;

impl Default for StabilityMode {
    fn default() -> Self {
        StabilityMode::PracticalCutoff {
            constant: DEFAULT_CUTOFF,
        }
    }
}

pub fn c_r(r: f64) -> f64 {
    (1.0 - std::f64::consts::LN_2) / (1.0 + r)
}

impl StabilityMode {
    pub fn admits(&self, dims: DimPair, inv_opnorm: f64, n_paths: usize, phi: BasisFamily, psi: BasisFamily) -> bool {
        if n_paths < 2 || !inv_opnorm.is_finite() {
            return false;
        }
        let n = n_paths as f64;
        let budget = n / n.ln();
        match *self {
            StabilityMode::PracticalCutoff { constant } => dims.total() as f64 * inv_opnorm <= constant * budget,
            StabilityMode::TheoreticalLambda { r } => {
                let bound = |family: BasisFamily, m: usize| {
                    if m > 0 {
                        family.sup_norm_bound(m)
                    } else {
                        0.0
                    }
                };
                let sup = bound(phi, dims.m1) + bound(psi, dims.m2);
                sup * inv_opnorm.max(1.0) <= c_r(r) * budget
            }
        }
    }
}

pub fn stability_event(system: &DesignSystem, mode: &StabilityMode) -> bool {
    let inv = crate::design::inv_opnorm(&system.gram);
    mode.admits(system.dims, inv, system.n_paths, system.phi, system.psi)
}

/// Solves and applies the truncation: a design outside the stability event
/// (or numerically singular) yields the zero estimate flagged `truncated`.
pub fn fit_truncated(system: &DesignSystem, mode: &StabilityMode) -> FitResult {
    let lambda_min = min_eigenvalue(&system.gram);
    let inv = inv_opnorm_from_min_eigenvalue(lambda_min, system.gram.nrows());
    if !mode.admits(system.dims, inv, system.n_paths, system.phi, system.psi) {
        return FitResult::truncated(system.dims);
    }
    solve_with_min_eigenvalue(system, lambda_min).unwrap_or_else(|_| FitResult::truncated(system.dims))
}

/// `(a_hat(x), b_hat(y))`.
pub fn evaluate_fit(fit: &FitResult, phi: BasisFamily, psi: BasisFamily, x: f64, y: f64) -> (f64, f64) {
    (eval_a(fit, phi, x), eval_b(fit, psi, y))
}

pub fn eval_a(fit: &FitResult, phi: BasisFamily, x: f64) -> f64 {
    expand(fit.a_coeffs(), phi, x)
}

pub fn eval_b(fit: &FitResult, psi: BasisFamily, y: f64) -> f64 {
    expand(fit.b_coeffs(), psi, y)
}

fn expand(coeffs: &[f64], family: BasisFamily, x: f64) -> f64 {
    if coeffs.is_empty() || coeffs.iter().all(|&c| c == 0.0) {
        return 0.0;
    }
    let mut buf = vec![0.0; coeffs.len()];
    family.eval_into(x, &mut buf);
    coeffs.iter().zip(&buf).map(|(c, v)| c * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(gram: DMatrix<f64>, z: Vec<f64>, d: Vec<f64>, dims: DimPair) -> DesignSystem {
        DesignSystem {
            dims,
            gram,
            zvec: DVector::from_vec(z),
            dvec: DVector::from_vec(d),
            t0: 0.4,
            horizon: 10.0,
            t_norm: 10.0,
            n_paths: 400,
            phi: BasisFamily::Hermite,
            psi: BasisFamily::Hermite,
        }
    }

    #[test]
    fn identity_gram_projects_onto_hyperplane() {
        let z = vec![0.3, -1.2, 0.7, 2.0];
        let d = vec![0.0, 0.0, 0.0, 1.5];
        let sys = system(DMatrix::identity(4, 4), z.clone(), d.clone(), DimPair::new(2, 2));
        let fit = solve_constrained(&sys).unwrap();
        let zd: f64 = z.iter().zip(&d).map(|(a, b)| a * b).sum();
        let dd: f64 = d.iter().map(|v| v * v).sum();
        for i in 0..4 {
            let expected = z[i] - zd / dd * d[i];
            assert!((fit.theta[i] - expected).abs() < 1e-15);
        }
        assert!(!fit.truncated);
        assert!(fit.residuals(&sys).max() < 1e-15);
    }

    #[test]
    fn zero_constraint_is_plain_solve() {
        let gram = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let sys = system(gram.clone(), vec![1.0, -1.0], vec![0.0, 0.0], DimPair::new(1, 1));
        let fit = solve_constrained(&sys).unwrap();
        let direct = gram.lu().solve(&DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert!((fit.theta - direct).norm() < 1e-15);
        assert_eq!(fit.lambda_multiplier, 0.0);
    }

    #[test]
    fn singular_design_is_an_error() {
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let sys = system(gram, vec![1.0, 1.0], vec![0.0, 1.0], DimPair::new(1, 1));
        assert!(matches!(solve_constrained(&sys), Err(Error::SingularDesign { .. })));
        let fit = fit_truncated(&sys, &StabilityMode::default());
        assert!(fit.truncated);
        assert!(fit.theta.iter().all(|&v| v == 0.0));
        assert_eq!(
            evaluate_fit(&fit, BasisFamily::Hermite, BasisFamily::Hermite, 0.3, 0.1),
            (0.0, 0.0)
        );
    }

    #[test]
    fn practical_cutoff_examples() {
        let sys = system(DMatrix::identity(2, 2), vec![0.0; 2], vec![0.0; 2], DimPair::new(1, 1));
        assert!(stability_event(&sys, &StabilityMode::default()));
        let sing = system(DMatrix::zeros(2, 2), vec![0.0; 2], vec![0.0; 2], DimPair::new(1, 1));
        assert!(!stability_event(&sing, &StabilityMode::default()));
    }

    #[test]
    fn theoretical_lambda_hand_check() {
        // L(1) + L(1) = 4 for Laguerre; |Psi^{-1}| = 1/0.5 = 2.
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let mut sys = system(gram, vec![0.0; 2], vec![0.0; 2], DimPair::new(1, 1));
        sys.phi = BasisFamily::Laguerre;
        sys.psi = BasisFamily::Laguerre;
        let mode = StabilityMode::TheoreticalLambda { r: 5.0 };
        assert!((c_r(5.0) - 0.051_142_2).abs() < 1e-6);
        // 8 <= 0.05114 N / log N requires N / log N >= 156.4
        let needed = 8.0 / c_r(5.0);
        let mut admits = |n: usize| {
            sys.n_paths = n;
            stability_event(&sys, &mode)
        };
        let n_ok = (2..20000).find(|&n| n as f64 / (n as f64).ln() >= needed).unwrap();
        assert!(admits(n_ok));
        assert!(!admits(n_ok - 1));
    }

    #[test]
    fn evaluate_constant_trig() {
        let fit = FitResult {
            dims: DimPair::new(1, 1),
            theta: DVector::from_vec(vec![2.5, 0.0]),
            truncated: false,
            lambda_multiplier: 0.0,
            gamma_value: 0.0,
            inv_opnorm: 1.0,
        };
        for &x in &[0.0, 0.25, 0.9] {
            let (a, b) = evaluate_fit(
                &fit,
                BasisFamily::Trigonometric01,
                BasisFamily::TrigonometricNoConstant01,
                x,
                x,
            );
            assert_eq!(a, 2.5);
            assert_eq!(b, 0.0);
        }
    }
}
