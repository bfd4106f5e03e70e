//! Composite and adaptive Simpson rules on finite intervals.

/// Nodes and weights of the composite Simpson rule with `n_nodes` equispaced
/// points on `[a, b]`. `n_nodes` must be odd and at least 3.
#[derive(Debug, Clone)]
pub struct SimpsonRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SimpsonRule {
    pub fn new(a: f64, b: f64, n_nodes: usize) -> Self {
        assert!(n_nodes >= 3 && n_nodes % 2 == 1, "Simpson needs an odd node count >= 3");
        let intervals = n_nodes - 1;
        let h = (b - a) / intervals as f64;
        let nodes = (0..n_nodes).map(|i| a + h * i as f64).collect();
        let weights = (0..n_nodes)
            .map(|i| {
                let c = if i == 0 || i == intervals {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        SimpsonRule { nodes, weights }
    }

    /// Weighted sum of precomputed integrand values at `self.nodes`.
    pub fn apply(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, w)| w * f(x)).sum()
    }
}

/// Composite Simpson integral of `f` over `[a, b]` with `n_nodes` (odd) points.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n_nodes: usize) -> f64 {
    SimpsonRule::new(a, b, n_nodes).integrate(f)
}

/// Adaptive Simpson quadrature with Richardson correction.
///
/// The interval is first split into `seed_intervals` pieces so that
/// oscillatory integrands are not mistaken for converged on the first pass.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, seed_intervals: usize) -> f64 {
    const MAX_DEPTH: u32 = 50;
    let pieces = seed_intervals.max(1);
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == pieces { b } else { lo + h };
            let (flo, fhi) = (f(lo), f(hi));
            let mid = 0.5 * (lo + hi);
            let fmid = f(mid);
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            recurse(&f, lo, hi, flo, fmid, fhi, whole, tol / pieces as f64, MAX_DEPTH)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
