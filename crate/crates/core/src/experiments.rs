//! Monte-Carlo harness for the benchmark grid: three drift couples, two
//! explanatory processes, Hermite bases on both sides.
//!
//! Each repetition simulates a fresh sample, fixes the quantile box from its
//! first path, runs the adaptive and oracle selections on one shared scan,
//! and records the integrated squared errors over the box.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bases::BasisFamily;
use crate::design::{DesignCache, DesignOptions, DimPair};
use crate::error::{Error, Result};
use crate::estimator::{eval_a, eval_b, FitResiduals, FitResult};
use crate::quadrature::SimpsonRule;
use crate::rng::derive_seed;
use crate::sde::{generate_sample, ExplanatorySpec, GridSpec, ModelId, SdeModel, YType};
use crate::selection::{ModelScan, SelectionConfig};

/// Simpson nodes per interval for box integrals.
pub const BOX_NODES: usize = 2001;

/// Integration box: `[a_x, b_x]` from the 2%/98% quantiles of an X path and
/// `[a_y, b_y]` from the 1%/99% quantiles of a Y path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileBox {
    pub a_x: f64,
    pub b_x: f64,
    pub a_y: f64,
    pub b_y: f64,
}

impl QuantileBox {
    pub fn new(a_x: f64, b_x: f64, a_y: f64, b_y: f64) -> Result<Self> {
        let qbox = QuantileBox { a_x, b_x, a_y, b_y };
        if !(a_x < b_x && a_y < b_y) || [a_x, b_x, a_y, b_y].iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("degenerate quantile box {qbox:?}")));
        }
        Ok(qbox)
    }

    pub fn from_paths(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(
            quantile(x, 0.02)?,
            quantile(x, 0.98)?,
            quantile(y, 0.01)?,
            quantile(y, 0.99)?,
        )
    }
}

/// Empirical quantile by linear interpolation between order statistics
/// (position `p (n - 1)` in the sorted data).
pub fn quantile(data: &[f64], p: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("quantile of an empty sequence"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("quantile level {p} outside [0, 1]")));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Precomputed Simpson nodes, basis values and truth on a quantile box, so
/// that the box errors of many fits cost one matrix-vector product each.
#[derive(Debug, Clone)]
pub struct BoxErrorEvaluator {
    x_rule: SimpsonRule,
    y_rule: SimpsonRule,
    a_truth: Vec<f64>,
    b_truth: Vec<f64>,
    /// `(node, j)` entry is `phi_j(x_node)`.
    phi_values: DMatrix<f64>,
    psi_values: DMatrix<f64>,
}

impl BoxErrorEvaluator {
    pub fn new(truth: &SdeModel, qbox: &QuantileBox, phi: BasisFamily, psi: BasisFamily, max: DimPair) -> Self {
        let x_rule = SimpsonRule::new(qbox.a_x, qbox.b_x, BOX_NODES);
        let y_rule = SimpsonRule::new(qbox.a_y, qbox.b_y, BOX_NODES);
        let table = |rule: &SimpsonRule, family: BasisFamily, m: usize| {
            let mut values = DMatrix::zeros(rule.nodes.len(), m);
            let mut buf = vec![0.0; m];
            for (i, &x) in rule.nodes.iter().enumerate() {
                family.eval_into(x, &mut buf);
                for (j, v) in buf.iter().enumerate() {
                    values[(i, j)] = *v;
                }
            }
            values
        };
        BoxErrorEvaluator {
            a_truth: x_rule.nodes.iter().map(|&x| truth.a(x)).collect(),
            b_truth: y_rule.nodes.iter().map(|&y| truth.b(y)).collect(),
            phi_values: table(&x_rule, phi, max.m1),
            psi_values: table(&y_rule, psi, max.m2),
            x_rule,
            y_rule,
        }
    }

    /// `(int (a_hat - a)^2, int (b_hat - b)^2)` over the box.
    pub fn errors(&self, fit: &FitResult) -> (f64, f64) {
        let side = |values: &DMatrix<f64>, coeffs: &[f64], truth: &[f64], rule: &SimpsonRule| {
            let fitted = values.columns(0, coeffs.len()) * nalgebra::DVector::from_column_slice(coeffs);
            let sq: Vec<f64> = fitted.iter().zip(truth).map(|(f, t)| (f - t) * (f - t)).collect();
            rule.apply(&sq)
        };
        (
            side(&self.phi_values, fit.a_coeffs(), &self.a_truth, &self.x_rule),
            side(&self.psi_values, fit.b_coeffs(), &self.b_truth, &self.y_rule),
        )
    }
}

/// `(int_{a_x}^{b_x} (a_hat - a)^2, int_{a_y}^{b_y} (b_hat - b)^2)` by
/// composite Simpson with [`BOX_NODES`] nodes per interval.
pub fn mse_box(
    fit: &FitResult,
    truth: &SdeModel,
    qbox: &QuantileBox,
    phi: BasisFamily,
    psi: BasisFamily,
) -> (f64, f64) {
    BoxErrorEvaluator::new(truth, qbox, phi, psi, fit.dims).errors(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelId,
    pub y_type: YType,
    pub n_paths: usize,
    pub reps: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub phi: BasisFamily,
    pub psi: BasisFamily,
    pub selection: SelectionConfig,
    pub design: DesignOptions,
    /// Keep the selected fits of every repetition for beam plots.
    pub keep_curves: bool,
    /// Record the worst optimality residuals over every fit of each scan.
    pub check_residuals: bool,
}

impl ExperimentConfig {
    /// Benchmark defaults: Hermite bases, `kappa = 8`, `sigma = 1.5`,
    /// cutoff `1e14`, `n = 500`, `dt = 0.02`, first 20 observations dropped.
    pub fn new(model: ModelId, y_type: YType, n_paths: usize, reps: usize, seed: u64) -> Self {
        ExperimentConfig {
            model,
            y_type,
            n_paths,
            reps,
            seed,
            grid: GridSpec::default(),
            phi: BasisFamily::Hermite,
            psi: BasisFamily::Hermite,
            selection: SelectionConfig::default(),
            design: DesignOptions::benchmark(),
            keep_curves: false,
            check_residuals: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.n_paths < 2 {
            return Err(Error::invalid("at least two paths are required"));
        }
        self.grid.validate()?;
        self.selection.validate(self.n_paths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub qbox: QuantileBox,
    pub mse_a: f64,
    pub mse_b: f64,
    pub oracle_mse_a: f64,
    pub oracle_mse_b: f64,
    pub dims: DimPair,
    pub oracle_dims: DimPair,
    pub truncated: bool,
    pub oracle_truncated: bool,
    pub residuals: Option<FitResiduals>,
    pub fit: Option<FitResult>,
    pub oracle_fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub reason: String,
}

/// Mean and per-repetition standard deviation of `100 * MSE`, and mean
/// selected dimensions, for one drift component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub mse: f64,
    pub mse_std: f64,
    pub oracle_mse: f64,
    pub oracle_mse_std: f64,
    pub dim: f64,
    pub oracle_dim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub completed: usize,
    pub failed: usize,
    pub truncated: usize,
    pub a: ComponentSummary,
    pub b: ComponentSummary,
}

impl Summary {
    pub fn from_records(records: &[RepRecord], failed: usize) -> Self {
        let component = |mse: fn(&RepRecord) -> f64,
                         oracle: fn(&RepRecord) -> f64,
                         dim: fn(&RepRecord) -> usize,
                         odim: fn(&RepRecord) -> usize| {
            let (m, s) = mean_std(records.iter().map(|r| 100.0 * mse(r)));
            let (mo, so) = mean_std(records.iter().map(|r| 100.0 * oracle(r)));
            ComponentSummary {
                mse: m,
                mse_std: s,
                oracle_mse: mo,
                oracle_mse_std: so,
                dim: mean_std(records.iter().map(|r| dim(r) as f64)).0,
                oracle_dim: mean_std(records.iter().map(|r| odim(r) as f64)).0,
            }
        };
        Summary {
            completed: records.len(),
            failed,
            truncated: records.iter().filter(|r| r.truncated).count(),
            a: component(|r| r.mse_a, |r| r.oracle_mse_a, |r| r.dims.m1, |r| r.oracle_dims.m1),
            b: component(|r| r.mse_b, |r| r.oracle_mse_b, |r| r.dims.m2, |r| r.oracle_dims.m2),
        }
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for `n < 2`).
fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Successful repetitions, sorted by repetition index.
    pub per_rep: Vec<RepRecord>,
    pub failures: Vec<RepFailure>,
    pub summary: Summary,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let truth = SdeModel::preset(config.model);
    let spec = ExplanatorySpec::preset(config.y_type);

    let outcomes: Vec<std::result::Result<RepRecord, RepFailure>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            run_repetition(config, &truth, &spec, rep).map_err(|e| RepFailure {
                rep,
                reason: e.to_string(),
            })
        })
        .collect();

    let mut per_rep = Vec::with_capacity(config.reps);
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(record) => per_rep.push(record),
            Err(failure) => failures.push(failure),
        }
    }
    per_rep.sort_by_key(|r| r.rep);
    let summary = Summary::from_records(&per_rep, failures.len());
    Ok(ExperimentReport {
        config: config.clone(),
        per_rep,
        failures,
        summary,
    })
}

fn run_repetition(
    config: &ExperimentConfig,
    truth: &SdeModel,
    spec: &ExplanatorySpec,
    rep: usize,
) -> Result<RepRecord> {
    let seed = derive_seed(config.seed, rep as u64);
    let sample = generate_sample(truth, spec, &config.grid, config.n_paths, seed)?;
    let first = config.grid.drop_first;
    let qbox = QuantileBox::from_paths(&sample.x_path(0)[first..], &sample.y_path(0)[first..])?;

    let max = config.selection.max_dims();
    let cache = DesignCache::build(&sample, config.phi, config.psi, max, &config.design)?;
    let scan = ModelScan::run(&cache, &config.selection)?;
    let adaptive = scan.adaptive(&config.selection);
    let evaluator = BoxErrorEvaluator::new(truth, &qbox, config.phi, config.psi, max);
    let oracle = scan.oracle_with(&evaluator);
    let (mse_a, mse_b) = evaluator.errors(&adaptive.fit);
    let (oracle_mse_a, oracle_mse_b) = evaluator.errors(&oracle.fit);
    let residuals = if config.check_residuals {
        Some(scan.residuals(&cache)?)
    } else {
        None
    };

    Ok(RepRecord {
        rep,
        seed,
        qbox,
        mse_a,
        mse_b,
        oracle_mse_a,
        oracle_mse_b,
        dims: adaptive.chosen,
        oracle_dims: oracle.chosen,
        truncated: adaptive.fit.truncated,
        oracle_truncated: oracle.fit.truncated,
        residuals,
        fit: config.keep_curves.then(|| adaptive.fit.clone()),
        oracle_fit: config.keep_curves.then(|| oracle.fit.clone()),
    })
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

impl ExperimentReport {
    /// One row per completed repetition (raw MSEs, not scaled).
    pub fn write_reps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "rep",
            "seed",
            "m1",
            "m2",
            "m1_oracle",
            "m2_oracle",
            "mse_a",
            "mse_b",
            "mse_oracle_a",
            "mse_oracle_b",
            "truncated",
            "oracle_truncated",
            "a_x",
            "b_x",
            "a_y",
            "b_y",
        ])?;
        for r in &self.per_rep {
            w.write_record([
                r.rep.to_string(),
                r.seed.to_string(),
                r.dims.m1.to_string(),
                r.dims.m2.to_string(),
                r.oracle_dims.m1.to_string(),
                r.oracle_dims.m2.to_string(),
                fmt_f(r.mse_a),
                fmt_f(r.mse_b),
                fmt_f(r.oracle_mse_a),
                fmt_f(r.oracle_mse_b),
                r.truncated.to_string(),
                r.oracle_truncated.to_string(),
                fmt_f(r.qbox.a_x),
                fmt_f(r.qbox.b_x),
                fmt_f(r.qbox.a_y),
                fmt_f(r.qbox.b_y),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per drift component: `100 * MSE` with its per-repetition
    /// standard deviation for the adaptive and oracle estimators, and the mean
    /// selected dimensions.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "model",
            "y",
            "n",
            "function",
            "mse",
            "mse_std",
            "mse_oracle",
            "mse_oracle_std",
            "dim",
            "dim_oracle",
            "completed",
            "failed",
            "truncated",
        ])?;
        let c = &self.config;
        for (name, s) in [("a", &self.summary.a), ("b", &self.summary.b)] {
            w.write_record([
                c.model.to_string(),
                c.y_type.to_string(),
                c.n_paths.to_string(),
                name.to_string(),
                fmt_f(s.mse),
                fmt_f(s.mse_std),
                fmt_f(s.oracle_mse),
                fmt_f(s.oracle_mse_std),
                fmt_f(s.dim),
                fmt_f(s.oracle_dim),
                self.summary.completed.to_string(),
                self.summary.failed.to_string(),
                self.summary.truncated.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row per experiment setting, both drift components side by side.
pub fn write_table1_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model".to_string(), "y".into(), "n".into()];
    for f in ["a", "b"] {
        for col in ["mse", "mse_std", "mse_oracle", "mse_oracle_std", "dim", "dim_oracle"] {
            header.push(format!("{col}_{f}"));
        }
    }
    header.extend(["completed".into(), "failed".into(), "truncated".into()]);
    w.write_record(&header)?;
    for report in reports {
        let c = &report.config;
        let s = &report.summary;
        let mut row = vec![c.model.to_string(), c.y_type.to_string(), c.n_paths.to_string()];
        for comp in [&s.a, &s.b] {
            row.extend(
                [
                    comp.mse,
                    comp.mse_std,
                    comp.oracle_mse,
                    comp.oracle_mse_std,
                    comp.dim,
                    comp.oracle_dim,
                ]
                .map(fmt_f),
            );
        }
        row.extend([s.completed.to_string(), s.failed.to_string(), s.truncated.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftComponent {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamSource {
    Adaptive,
    Oracle,
}

pub const BEAM_POINTS: usize = 400;

/// Sampled curves of the first `n_curves` repetitions plus the truth, on a
/// [`BEAM_POINTS`]-point grid over the first repetition's box.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    /// `(repetition index, values)` per curve.
    pub curves: Vec<(usize, Vec<f64>)>,
}

pub fn beam(report: &ExperimentReport, which: DriftComponent, source: BeamSource, n_curves: usize) -> Result<Beam> {
    let first = report
        .per_rep
        .first()
        .ok_or_else(|| Error::Precondition("report has no completed repetitions".into()))?;
    if n_curves > report.per_rep.len() {
        return Err(Error::Precondition(format!(
            "requested {n_curves} curves but only {} repetitions completed",
            report.per_rep.len()
        )));
    }
    let (lo, hi) = match which {
        DriftComponent::A => (first.qbox.a_x, first.qbox.b_x),
        DriftComponent::B => (first.qbox.a_y, first.qbox.b_y),
    };
    let grid: Vec<f64> = (0..BEAM_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (BEAM_POINTS - 1) as f64)
        .collect();
    let truth_model = SdeModel::preset(report.config.model);
    let truth = grid
        .iter()
        .map(|&v| match which {
            DriftComponent::A => truth_model.a(v),
            DriftComponent::B => truth_model.b(v),
        })
        .collect();

    let mut curves = Vec::with_capacity(n_curves);
    for record in report.per_rep.iter().take(n_curves) {
        let fit = match source {
            BeamSource::Adaptive => record.fit.as_ref(),
            BeamSource::Oracle => record.oracle_fit.as_ref(),
        }
        .ok_or_else(|| Error::Precondition("curves were not retained; rerun with keep_curves".into()))?;
        let values = grid
            .iter()
            .map(|&v| match which {
                DriftComponent::A => eval_a(fit, report.config.phi, v),
                DriftComponent::B => eval_b(fit, report.config.psi, v),
            })
            .collect();
        curves.push((record.rep, values));
    }
    Ok(Beam { grid, truth, curves })
}

/// Writes a beam as CSV with columns `x, truth, rep_1, ..., rep_k`
/// (repetitions numbered from 1).
pub fn emit_beam(
    report: &ExperimentReport,
    which: DriftComponent,
    source: BeamSource,
    n_curves: usize,
    path: &Path,
) -> Result<()> {
    let beam = beam(report, which, source, n_curves)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string(), "truth".to_string()];
    header.extend(beam.curves.iter().map(|(rep, _)| format!("rep_{}", rep + 1)));
    w.write_record(&header)?;
    for (i, x) in beam.grid.iter().enumerate() {
        let mut row = vec![fmt_f(*x), fmt_f(beam.truth[i])];
        row.extend(beam.curves.iter().map(|(_, v)| fmt_f(v[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
