//! Dimension selection over the grid `[1, max_m1] x [1, max_m2]`.
//!
//! The adaptive selector minimizes `gamma_N + pen`; the oracle selector
//! minimizes the integrated squared error against the true drifts over a
//! quantile box. Both share one [`ModelScan`] of the admissible pairs.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bases::BasisFamily;
use crate::design::{inv_opnorm_from_min_eigenvalue, min_eigenvalue, DesignCache, DesignOptions, DimPair};
use crate::error::{Error, Result};
use crate::estimator::{solve_with_min_eigenvalue, FitResiduals, FitResult, StabilityMode};
use crate::experiments::{BoxErrorEvaluator, QuantileBox};
use crate::sde::{PathSample, SdeModel, DEFAULT_SIGMA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub kappa: f64,
    /// `||sigma||_inf^2`, assumed known.
    pub sigma_sq: f64,
    pub max_m1: usize,
    pub max_m2: usize,
    pub stability: StabilityMode,
}

pub const DEFAULT_KAPPA: f64 = 8.0;
pub const DEFAULT_MAX_DIM: usize = 25;

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            kappa: DEFAULT_KAPPA,
            sigma_sq: DEFAULT_SIGMA * DEFAULT_SIGMA,
            max_m1: DEFAULT_MAX_DIM,
            max_m2: DEFAULT_MAX_DIM,
            stability: StabilityMode::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, n_paths: usize) -> Result<()> {
        if self.kappa.is_nan() || self.kappa <= 0.0 {
            return Err(Error::invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.sigma_sq.is_nan() || self.sigma_sq < 0.0 {
            return Err(Error::invalid("sigma_sq must be nonnegative"));
        }
        if self.max_m1 == 0 || self.max_m2 == 0 {
            return Err(Error::invalid("scan bounds must be at least 1"));
        }
        DimPair::new(self.max_m1, self.max_m2).validate(n_paths)
    }

    pub fn max_dims(&self) -> DimPair {
        DimPair::new(self.max_m1, self.max_m2)
    }

    /// `kappa sigma^2 (m1 + m2) / (N T0)`.
    pub fn penalty(&self, dims: DimPair, n_paths: usize, t_norm: f64) -> f64 {
        self.kappa * self.sigma_sq * dims.total() as f64 / (n_paths as f64 * t_norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionEntry {
    /// `gamma_N` of the fit; `None` when the pair is not admissible.
    pub gamma: Option<f64>,
    pub penalty: f64,
    pub admissible: bool,
    /// The minimized quantity; `None` when the pair is not admissible.
    pub criterion: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub chosen: DimPair,
    pub criterion_table: BTreeMap<DimPair, CriterionEntry>,
    pub fit: FitResult,
    /// No pair passed the stability event; `fit` is the truncated zero fit.
    pub all_inadmissible: bool,
}

impl SelectionResult {
    /// CSV with columns `m1, m2, gamma, pen, admissible, criterion`.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["m1", "m2", "gamma", "pen", "admissible", "criterion"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for (dims, e) in &self.criterion_table {
            w.write_record([
                dims.m1.to_string(),
                dims.m2.to_string(),
                opt(e.gamma),
                format!("{:e}", e.penalty),
                e.admissible.to_string(),
                opt(e.criterion),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScanEntry {
    pub dims: DimPair,
    pub inv_opnorm: f64,
    /// Present iff the pair is admissible.
    pub fit: Option<FitResult>,
}

/// Fits at every admissible pair of the scan grid, computed once from a
/// shared [`DesignCache`].
#[derive(Debug, Clone)]
pub struct ModelScan {
    entries: Vec<ScanEntry>,
    n_paths: usize,
    t_norm: f64,
    phi: BasisFamily,
    psi: BasisFamily,
}

impl ModelScan {
    pub fn run(cache: &DesignCache, config: &SelectionConfig) -> Result<Self> {
        config.validate(cache.n_paths())?;
        let max = config.max_dims();
        if !max.nested_in(&cache.max_dims()) {
            return Err(Error::invalid(format!(
                "scan bounds {max} exceed the cached dimensions {}",
                cache.max_dims()
            )));
        }
        let n_paths = cache.n_paths();
        let (phi, psi) = (cache.phi(), cache.psi());
        let mut entries = Vec::with_capacity(max.m1 * max.m2);
        for m1 in 1..=max.m1 {
            for m2 in 1..=max.m2 {
                let dims = DimPair::new(m1, m2);
                let system = cache.system(dims)?;
                let lambda_min = min_eigenvalue(&system.gram);
                let inv = inv_opnorm_from_min_eigenvalue(lambda_min, dims.total());
                let fit = if config.stability.admits(dims, inv, n_paths, phi, psi) {
                    solve_with_min_eigenvalue(&system, lambda_min).ok()
                } else {
                    None
                };
                entries.push(ScanEntry {
                    dims,
                    inv_opnorm: inv,
                    fit,
                });
            }
        }
        // Tie-break order: smallest m1 + m2, then smallest m1.
        entries.sort_by_key(|e| (e.dims.total(), e.dims.m1));
        Ok(ModelScan {
            entries,
            n_paths,
            t_norm: cache.t_norm(),
            phi,
            psi,
        })
    }

    pub fn entries(&self) -> &[ScanEntry] {
        &self.entries
    }

    /// Worst relative residuals over every admissible fit.
    pub fn residuals(&self, cache: &DesignCache) -> Result<FitResiduals> {
        let mut worst = FitResiduals::default();
        for entry in &self.entries {
            if let Some(fit) = &entry.fit {
                worst = worst.merge(fit.residuals(&cache.system(entry.dims)?));
            }
        }
        Ok(worst)
    }

    /// Penalized empirical contrast `gamma_N + pen`.
    pub fn adaptive(&self, config: &SelectionConfig) -> SelectionResult {
        self.select(
            |_, fit| fit.gamma_value,
            |dims| config.penalty(dims, self.n_paths, self.t_norm),
        )
    }

    /// Integrated squared error against the truth over `qbox`.
    pub fn oracle(&self, truth: &SdeModel, qbox: &QuantileBox) -> SelectionResult {
        let max = self.entries.iter().fold(DimPair::new(1, 1), |acc, e| {
            DimPair::new(acc.m1.max(e.dims.m1), acc.m2.max(e.dims.m2))
        });
        self.oracle_with(&BoxErrorEvaluator::new(truth, qbox, self.phi, self.psi, max))
    }

    /// Oracle selection with a prebuilt evaluator covering every scanned dimension.
    pub fn oracle_with(&self, evaluator: &BoxErrorEvaluator) -> SelectionResult {
        self.select(
            |_, fit| {
                let (ea, eb) = evaluator.errors(fit);
                ea + eb
            },
            |_| 0.0,
        )
    }

    fn select<C, P>(&self, criterion: C, penalty: P) -> SelectionResult
    where
        C: Fn(DimPair, &FitResult) -> f64,
        P: Fn(DimPair) -> f64,
    {
        let mut table = BTreeMap::new();
        let mut best: Option<(f64, &ScanEntry)> = None;
        for entry in &self.entries {
            let pen = penalty(entry.dims);
            let record = match &entry.fit {
                Some(fit) => {
                    let value = criterion(entry.dims, fit) + pen;
                    if best.is_none_or(|(b, _)| value < b) {
                        best = Some((value, entry));
                    }
                    CriterionEntry {
                        gamma: Some(fit.gamma_value),
                        penalty: pen,
                        admissible: true,
                        criterion: Some(value),
                    }
                }
                None => CriterionEntry {
                    gamma: None,
                    penalty: pen,
                    admissible: false,
                    criterion: None,
                },
            };
            table.insert(entry.dims, record);
        }
        match best {
            Some((_, entry)) => SelectionResult {
                chosen: entry.dims,
                criterion_table: table,
                fit: entry.fit.clone().expect("admissible entries carry a fit"),
                all_inadmissible: false,
            },
            None => {
                let dims = DimPair::new(1, 1);
                SelectionResult {
                    chosen: dims,
                    criterion_table: table,
                    fit: FitResult::truncated(dims),
                    all_inadmissible: true,
                }
            }
        }
    }
}

pub fn select_adaptive(
    sample: &PathSample,
    phi: BasisFamily,
    psi: BasisFamily,
    config: &SelectionConfig,
    opts: &DesignOptions,
) -> Result<SelectionResult> {
    config.validate(sample.n_paths())?;
    let cache = DesignCache::build(sample, phi, psi, config.max_dims(), opts)?;
    Ok(ModelScan::run(&cache, config)?.adaptive(config))
}

#[allow(clippy::too_many_arguments)]
pub fn select_oracle(
    sample: &PathSample,
    phi: BasisFamily,
    psi: BasisFamily,
    truth: &SdeModel,
    qbox: &QuantileBox,
    config: &SelectionConfig,
    opts: &DesignOptions,
) -> Result<SelectionResult> {
    config.validate(sample.n_paths())?;
    let cache = DesignCache::build(sample, phi, psi, config.max_dims(), opts)?;
    Ok(ModelScan::run(&cache, config)?.oracle(truth, qbox))
}
