//! Orthonormal function families used to span the drift spaces.
//!
//! Indexing is 1-based in the mathematical sense: `eval_vector(m, x)` returns
//! the first `m` members `(f_1(x), ..., f_m(x))`. For Laguerre and Hermite the
//! k-th member is `l_{k-1}` resp. `h_{k-1}`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::SimpsonRule;

/// Interval carrying the family; infinite bounds are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub lower: f64,
    pub upper: f64,
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    /// `1, sqrt2 cos(2 pi x), sqrt2 sin(2 pi x), ...` on `[0, 1]`.
    Trigonometric01,
    /// `sqrt2 cos(2 pi x), sqrt2 sin(2 pi x), ...` on `[0, 1]`; integrals vanish.
    TrigonometricNoConstant01,
    /// `sqrt2 L_k(2x) e^{-x}` on `[0, inf)`.
    Laguerre,
    /// Normalized Hermite functions on the real line.
    Hermite,
}

impl BasisFamily {
    pub const ALL: [BasisFamily; 4] = [
        BasisFamily::Trigonometric01,
        BasisFamily::TrigonometricNoConstant01,
        BasisFamily::Laguerre,
        BasisFamily::Hermite,
    ];

    pub fn support(&self) -> Support {
        match self {
            BasisFamily::Trigonometric01 | BasisFamily::TrigonometricNoConstant01 => Support { lower: 0.0, upper: 1.0 },
            BasisFamily::Laguerre => Support {
                lower: 0.0,
                upper: f64::INFINITY,
            },
            BasisFamily::Hermite => Support {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            },
        }
    }

    /// Identifier used on the command line and in config files.
    pub fn name(&self) -> &'static str {
        match self {
            BasisFamily::Trigonometric01 => "trig",
            BasisFamily::TrigonometricNoConstant01 => "trig-noconst",
            BasisFamily::Laguerre => "laguerre",
            BasisFamily::Hermite => "hermite",
        }
    }

    /// Writes `(f_1(x), ..., f_m(x))` into `out`, with `m = out.len()`.
    ///
    /// Points outside the support yield zeros. No validation is done here;
    /// this is the hot path of Gram assembly.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        if !self.support().contains(x) {
            out.fill(0.0);
            return;
        }
        match self {
            BasisFamily::Trigonometric01 => {
                out[0] = 1.0;
                fill_trig_pairs(x, &mut out[1..]);
            }
            BasisFamily::TrigonometricNoConstant01 => fill_trig_pairs(x, out),
            BasisFamily::Laguerre => laguerre_into(x, out),
            BasisFamily::Hermite => hermite_into(x, out),
        }
    }

    pub fn eval_vector(&self, m: usize, x: f64) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(Error::invalid("basis dimension must be at least 1"));
        }
        if !x.is_finite() {
            return Err(Error::invalid(format!("evaluation point {x} is not finite")));
        }
        let mut out = vec![0.0; m];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Closed-form integrals `(int f_1, ..., int f_m)` over the support.
    pub fn delta_vector(&self, m: usize) -> Result<DeltaVector> {
        if m == 0 {
            return Err(Error::invalid("basis dimension must be at least 1"));
        }
        let values = match self {
            BasisFamily::Trigonometric01 => {
                let mut v = vec![0.0; m];
                v[0] = 1.0;
                v
            }
            BasisFamily::TrigonometricNoConstant01 => vec![0.0; m],
            BasisFamily::Laguerre => (0..m).map(|k| if k % 2 == 0 { SQRT_2 } else { -SQRT_2 }).collect(),
            BasisFamily::Hermite => {
                // int h_{2j} = sqrt((2j-1)/(2j)) int h_{2j-2}, int h_0 = sqrt2 pi^{1/4}
                let mut v = vec![0.0; m];
                let mut even = SQRT_2 * PI.powf(0.25);
                for (k, slot) in v.iter_mut().enumerate() {
                    if k % 2 == 0 {
                        if k > 0 {
                            let kk = k as f64;
                            even *= ((kk - 1.0) / kk).sqrt();
                        }
                        *slot = even;
                    }
                }
                v
            }
        };
        Ok(DeltaVector(values))
    }

    /// Upper bound on `sup_x sum_{j<=m} f_j(x)^2`.
    ///
    /// Exact `2m` for Laguerre, the bound `2m` for both trigonometric
    /// families, and a numerical estimate for Hermite (dense grid search on
    /// `[-10, 10]` with local refinement of the leading peaks).
    pub fn sup_norm_bound(&self, m: usize) -> f64 {
        match self {
            BasisFamily::Trigonometric01 | BasisFamily::TrigonometricNoConstant01 | BasisFamily::Laguerre => {
                2.0 * m as f64
            }
            BasisFamily::Hermite => hermite_sup(m),
        }
    }

    /// Finite window used for numerical integration over the support.
    ///
    /// Hermite functions are negligible beyond |x| = 20 and Laguerre
    /// functions beyond x = 150 for dimensions up to about 60.
    pub fn quadrature_window(&self) -> (f64, f64) {
        match self {
            BasisFamily::Trigonometric01 | BasisFamily::TrigonometricNoConstant01 => (0.0, 1.0),
            BasisFamily::Laguerre => (0.0, 150.0),
            BasisFamily::Hermite => (-20.0, 20.0),
        }
    }

    /// Largest entry of `|G - I|`, where `G` is the composite-Simpson Gram
    /// matrix of the first `m` members over [`Self::quadrature_window`].
    pub fn orthonormality_residual(&self, m: usize) -> Result<f64> {
        if m == 0 {
            return Err(Error::invalid("basis dimension must be at least 1"));
        }
        let (a, b) = self.quadrature_window();
        let n_nodes = ((b - a) * 1000.0) as usize * 2 + 1;
        let rule = SimpsonRule::new(a, b, n_nodes.max(20001));
        let mut gram = vec![0.0; m * m];
        let mut buf = vec![0.0; m];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            self.eval_into(x, &mut buf);
            for j in 0..m {
                let wj = w * buf[j];
                for k in j..m {
                    gram[j * m + k] += wj * buf[k];
                }
            }
        }
        let mut worst: f64 = 0.0;
        for j in 0..m {
            for k in j..m {
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((gram[j * m + k] - target).abs());
            }
        }
        Ok(worst)
    }
}

impl fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trig" => Ok(BasisFamily::Trigonometric01),
            "trig-noconst" => Ok(BasisFamily::TrigonometricNoConstant01),
            "laguerre" => Ok(BasisFamily::Laguerre),
            "hermite" => Ok(BasisFamily::Hermite),
            other => Err(Error::invalid(format!(
                "unknown basis '{other}' (expected trig, trig-noconst, laguerre, hermite)"
            ))),
        }
    }
}

/// Integrals of the first `m` family members over the support.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaVector(pub Vec<f64>);

impl DeltaVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// The constraint vector `d_m = (0, ..., 0, delta)` with `m1` leading zeros.
    pub fn padded(&self, m1: usize) -> Vec<f64> {
        let mut d = vec![0.0; m1];
        d.extend_from_slice(&self.0);
        d
    }
}

// cos/sin pairs at frequencies 1, 2, ...: (sqrt2 cos, sqrt2 sin, sqrt2 cos, ...)
fn fill_trig_pairs(x: f64, out: &mut [f64]) {
    let theta = 2.0 * PI * x;
    for (i, slot) in out.iter_mut().enumerate() {
        let freq = (i / 2 + 1) as f64;
        *slot = if i % 2 == 0 {
            SQRT_2 * (freq * theta).cos()
        } else {
            SQRT_2 * (freq * theta).sin()
        };
    }
}

// The recurrence is linear, so it is run directly on the scaled functions
// l_k = sqrt2 e^{-x} L_k(2x); every iterate is bounded by sqrt2.
fn laguerre_into(x: f64, out: &mut [f64]) {
    let z = 2.0 * x;
    let scale = SQRT_2 * (-x).exp();
    out[0] = scale;
    if out.len() == 1 {
        return;
    }
    out[1] = scale * (1.0 - z);
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0 - z) * out[k] - kf * out[k - 1]) / (kf + 1.0);
    }
}

fn hermite_into(x: f64, out: &mut [f64]) {
    out[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if out.len() == 1 {
        return;
    }
    out[1] = SQRT_2 * x * out[0];
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = x * (2.0 / (kf + 1.0)).sqrt() * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
}

const HERMITE_SUP_TABLE: usize = 200;
const HERMITE_SUP_HALF_WIDTH: f64 = 10.0;
const HERMITE_SUP_STEP: f64 = 1e-3;

fn hermite_sq_sum(x: f64, m: usize, buf: &mut [f64]) -> f64 {
    let buf = &mut buf[..m];
    hermite_into(x, buf);
    buf.iter().map(|v| v * v).sum()
}

fn hermite_sup(m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    if m <= HERMITE_SUP_TABLE {
        static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
        let table = TABLE.get_or_init(|| hermite_sup_table(HERMITE_SUP_TABLE));
        return table[m - 1];
    }
    hermite_sup_table(m)[m - 1]
}

// One grid pass yields the squared partial sums for every m <= max_m at once.
fn hermite_sup_table(max_m: usize) -> Vec<f64> {
    let n_grid = (2.0 * HERMITE_SUP_HALF_WIDTH / HERMITE_SUP_STEP).round() as usize + 1;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| -HERMITE_SUP_HALF_WIDTH + HERMITE_SUP_STEP * i as f64)
        .collect();
    // partial[m-1][i] = sum_{k<m} h_k(grid[i])^2
    let mut partial = vec![vec![0.0; n_grid]; max_m];
    let mut buf = vec![0.0; max_m];
    for (i, &x) in grid.iter().enumerate() {
        hermite_into(x, &mut buf);
        let mut acc = 0.0;
        for (m, row) in partial.iter_mut().enumerate() {
            acc += buf[m] * buf[m];
            row[i] = acc;
        }
    }

    partial
        .iter()
        .enumerate()
        .map(|(idx, row)| {
            let m = idx + 1;
            let grid_max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut best = grid_max;
            for i in 0..n_grid {
                let left = if i > 0 { row[i - 1] } else { f64::NEG_INFINITY };
                let right = if i + 1 < n_grid { row[i + 1] } else { f64::NEG_INFINITY };
                if row[i] >= left && row[i] >= right && row[i] >= grid_max * (1.0 - 1e-3) {
                    let peak = refine_peak(grid[i] - HERMITE_SUP_STEP, grid[i] + HERMITE_SUP_STEP, m, &mut buf);
                    best = best.max(peak);
                }
            }
            best
        })
        .collect()
}

// Golden-section search for the local maximum bracketed by [lo, hi].
fn refine_peak(mut lo: f64, mut hi: f64, m: usize, buf: &mut [f64]) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let mut fc = hermite_sq_sum(c, m, buf);
    let mut fd = hermite_sq_sum(d, m, buf);
    for _ in 0..60 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = hermite_sq_sum(c, m, buf);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = hermite_sq_sum(d, m, buf);
        }
    }
    fc.max(fd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_first_member_is_constant() {
        let v = BasisFamily::Trigonometric01.eval_vector(1, 0.3).unwrap();
        assert_eq!(v, vec![1.0]);
    }

    #[test]
    fn trig_index_layout() {
        let x = 0.137;
        let phi = BasisFamily::Trigonometric01.eval_vector(5, x).unwrap();
        let psi = BasisFamily::TrigonometricNoConstant01.eval_vector(4, x).unwrap();
        let t = 2.0 * PI * x;
        assert!((phi[1] - SQRT_2 * t.cos()).abs() < 1e-15);
        assert!((phi[2] - SQRT_2 * t.sin()).abs() < 1e-15);
        assert!((phi[3] - SQRT_2 * (2.0 * t).cos()).abs() < 1e-15);
        assert!((phi[4] - SQRT_2 * (2.0 * t).sin()).abs() < 1e-15);
        assert_eq!(&phi[1..5], &psi[..]);
    }

    #[test]
    fn laguerre_at_origin() {
        let v = BasisFamily::Laguerre.eval_vector(1, 0.0).unwrap();
        assert_eq!(v, vec![SQRT_2]);
        // L_k(0) = 1 for every k
        let v = BasisFamily::Laguerre.eval_vector(6, 0.0).unwrap();
        for val in v {
            assert!((val - SQRT_2).abs() < 1e-14);
        }
    }

    #[test]
    fn laguerre_matches_binomial_sum_for_small_k() {
        fn binom(n: u64, k: u64) -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        }
        fn fact(n: u64) -> f64 {
            (1..=n).map(|v| v as f64).product()
        }
        let x = 0.85;
        let v = BasisFamily::Laguerre.eval_vector(8, x).unwrap();
        for (k, got) in v.iter().enumerate() {
            let k = k as u64;
            let lk: f64 = (0..=k)
                .map(|j| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * binom(k, j) * (2.0 * x).powi(j as i32) / fact(j)
                })
                .sum();
            let expected = SQRT_2 * lk * (-x).exp();
            assert!((got - expected).abs() < 1e-12, "k={k}: {got} vs {expected}");
        }
    }

    #[test]
    fn hermite_at_origin() {
        let v = BasisFamily::Hermite.eval_vector(3, 0.0).unwrap();
        let c = PI.powf(-0.25);
        assert!((v[0] - c).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert!((v[2] + c / SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn hermite_matches_closed_form_polynomials() {
        // H_3 = 8x^3 - 12x, H_4 = 16x^4 - 48x^2 + 12
        let x = 0.7;
        let v = BasisFamily::Hermite.eval_vector(5, x).unwrap();
        let norm = |k: i32, hk: f64| {
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            hk * (-(x * x) / 2.0).exp() / (2f64.powi(k) * fact * PI.sqrt()).sqrt()
        };
        assert!((v[3] - norm(3, 8.0 * x.powi(3) - 12.0 * x)).abs() < 1e-14);
        assert!((v[4] - norm(4, 16.0 * x.powi(4) - 48.0 * x * x + 12.0)).abs() < 1e-14);
    }

    #[test]
    fn outside_support_is_zero() {
        assert_eq!(BasisFamily::Laguerre.eval_vector(3, -0.1).unwrap(), vec![0.0; 3]);
        assert_eq!(BasisFamily::Trigonometric01.eval_vector(3, 1.5).unwrap(), vec![0.0; 3]);
        assert_eq!(
            BasisFamily::TrigonometricNoConstant01.eval_vector(2, -2.0).unwrap(),
            vec![0.0; 2]
        );
    }

    #[test]
    fn invalid_arguments() {
        assert!(BasisFamily::Hermite.eval_vector(0, 0.0).is_err());
        assert!(BasisFamily::Hermite.eval_vector(3, f64::NAN).is_err());
        assert!(BasisFamily::Hermite.eval_vector(3, f64::INFINITY).is_err());
        assert!(BasisFamily::Laguerre.delta_vector(0).is_err());
    }

    #[test]
    fn high_order_evaluations_stay_finite() {
        for family in BasisFamily::ALL {
            for &x in &[0.0, 0.5, 1.0, 3.0, 19.9, 37.0, 60.0, 250.0, 800.0, 5000.0, -30.0] {
                let v = family.eval_vector(201, x).unwrap();
                assert!(v.iter().all(|a| a.is_finite()), "{family} at {x}");
            }
        }
    }

    #[test]
    fn delta_examples() {
        let d = BasisFamily::TrigonometricNoConstant01.delta_vector(4).unwrap();
        assert!(d.is_zero());
        let d = BasisFamily::Laguerre.delta_vector(3).unwrap();
        assert_eq!(d.values(), &[SQRT_2, -SQRT_2, SQRT_2]);
        let d = BasisFamily::Hermite.delta_vector(2).unwrap();
        assert!((d.values()[0] - SQRT_2 * PI.powf(0.25)).abs() < 1e-15);
        assert_eq!(d.values()[1], 0.0);
        assert_eq!(d.padded(2), vec![0.0, 0.0, d.values()[0], 0.0]);
    }

    #[test]
    fn hermite_even_integrals_match_factorial_form() {
        let d = BasisFamily::Hermite.delta_vector(11).unwrap();
        for k in 0..=5u32 {
            let fact = |n: u32| (1..=n).map(|i| i as f64).product::<f64>();
            let expected = SQRT_2 * PI.powf(0.25) * fact(2 * k).sqrt() / (2f64.powi(k as i32) * fact(k));
            assert!((d.values()[2 * k as usize] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(BasisFamily::Laguerre.sup_norm_bound(5), 10.0);
        let t = BasisFamily::Trigonometric01.sup_norm_bound(1);
        assert!((1.0..=2.0).contains(&t));
        let h1 = BasisFamily::Hermite.sup_norm_bound(1);
        assert!((h1 - 1.0 / PI.sqrt()).abs() < 1e-12);
        let h8 = BasisFamily::Hermite.sup_norm_bound(8);
        assert!(h8.is_finite() && h8 > h1);
    }

    #[test]
    fn parse_names_round_trip() {
        for family in BasisFamily::ALL {
            assert_eq!(family.name().parse::<BasisFamily>().unwrap(), family);
        }
        assert!("legendre".parse::<BasisFamily>().is_err());
    }
}
