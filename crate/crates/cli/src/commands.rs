use std::fs;
use std::path::{Path, PathBuf};

use cpls_core::design::{write_matrix_csv, DesignCache};
use cpls_core::estimator::{FitResult, StabilityMode, DEFAULT_CUTOFF};
use cpls_core::experiments::{emit_beam, write_table1_csv, BeamSource, DriftComponent, ExperimentReport};
use cpls_core::rng::derive_seed;
use cpls_core::sde::generate_sample;
use cpls_core::{
    BasisFamily, DesignOptions, ExperimentConfig, ExplanatorySpec, GridSpec, ModelId, ModelScan, QuantileBox, SdeModel,
    SelectionConfig, SelectionResult, YType,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{resolve, resolve_out_dir, ConfigFile};
use crate::error::{CliError, Stage};
use crate::{BasesCheckArgs, Cli, Command, ExperimentArgs, FitArgs, SelectionArgs, Table1Args};

const KNOWN_KEYS: &[&str] = &[
    "model",
    "y",
    "n",
    "reps",
    "seed",
    "kappa",
    "max-m1",
    "max-m2",
    "cutoff",
    "basis-phi",
    "basis-psi",
    "basis",
    "m",
    "threads",
    "out-dir",
    "beam",
    "sizes",
    "oracle",
    "dump-matrices",
];

const ORTHONORMALITY_TOLERANCE: f64 = 1e-6;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    file.check_keys(KNOWN_KEYS)?;

    let threads: Option<usize> = match cli.threads {
        Some(t) => Some(t),
        None => file.get("threads")?,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }

    let ctx = Context {
        out_dir: resolve_out_dir(cli.out_dir.clone(), &file)?,
        threads: rayon::current_num_threads(),
        file,
    };
    match cli.command {
        Command::Fit(args) => fit(&ctx, args),
        Command::Experiment(args) => experiment(&ctx, args),
        Command::Table1(args) => table1(&ctx, args),
        Command::BasesCheck(args) => bases_check(&ctx, args),
    }
}

struct Context {
    file: ConfigFile,
    out_dir: PathBuf,
    threads: usize,
}

impl Context {
    fn prepare_out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }

    fn selection(&self, args: &SelectionArgs) -> Result<(SelectionConfig, BasisFamily, BasisFamily), CliError> {
        let defaults = SelectionConfig::default();
        let config = SelectionConfig {
            kappa: resolve(args.kappa, &self.file, "kappa", defaults.kappa)?,
            max_m1: resolve(args.max_m1, &self.file, "max-m1", defaults.max_m1)?,
            max_m2: resolve(args.max_m2, &self.file, "max-m2", defaults.max_m2)?,
            stability: StabilityMode::PracticalCutoff {
                constant: resolve(args.cutoff, &self.file, "cutoff", DEFAULT_CUTOFF)?,
            },
            ..defaults
        };
        let phi = resolve(args.basis_phi, &self.file, "basis-phi", BasisFamily::Hermite)?;
        let psi = resolve(args.basis_psi, &self.file, "basis-psi", BasisFamily::Hermite)?;
        Ok((config, phi, psi))
    }
}

#[derive(Serialize)]
struct Metadata<'a, C: Serialize> {
    command: &'static str,
    version: &'static str,
    threads: usize,
    out_dir: &'a Path,
    config: C,
    seeds: Vec<SeedRecord>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct SeedRecord {
    label: String,
    seed: u64,
}

fn write_metadata<C: Serialize>(
    ctx: &Context,
    command: &'static str,
    config: C,
    seeds: Vec<SeedRecord>,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        threads: ctx.threads,
        out_dir: &ctx.out_dir,
        config,
        seeds,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = ctx.out_dir.join("metadata.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn rep_seeds(master: u64, reps: usize) -> Vec<SeedRecord> {
    (0..reps)
        .map(|rep| SeedRecord {
            label: format!("rep_{}", rep + 1),
            seed: derive_seed(master, rep as u64),
        })
        .collect()
}

#[derive(Serialize)]
struct FitConfig {
    model: ModelId,
    y: YType,
    n: usize,
    seed: u64,
    grid: GridSpec,
    phi: BasisFamily,
    psi: BasisFamily,
    selection: SelectionConfig,
    design: DesignOptions,
    oracle: bool,
}

fn fit(ctx: &Context, args: FitArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let (selection, phi, psi) = ctx.selection(&args.selection)?;
    let config = FitConfig {
        model: resolve(args.model, f, "model", ModelId::Two)?,
        y: resolve(args.y, f, "y", YType::A)?,
        n: resolve(args.n, f, "n", 400)?,
        seed: resolve(args.seed, f, "seed", 1)?,
        grid: GridSpec::default(),
        phi,
        psi,
        selection,
        design: DesignOptions::benchmark(),
        oracle: args.oracle || f.get("oracle")?.unwrap_or(false),
    };
    let dump = args.dump_matrices || f.get("dump-matrices")?.unwrap_or(false);
    config.selection.validate(config.n).stage("selection")?;

    let truth = SdeModel::preset(config.model);
    let sample = generate_sample(
        &truth,
        &ExplanatorySpec::preset(config.y),
        &config.grid,
        config.n,
        config.seed,
    )
    .stage("sde_sim")?;
    let cache = DesignCache::build(&sample, phi, psi, config.selection.max_dims(), &config.design).stage("design")?;
    let scan = ModelScan::run(&cache, &config.selection).stage("selection")?;
    let adaptive = scan.adaptive(&config.selection);

    let out = ctx.prepare_out_dir()?;
    let mut outputs = Vec::new();
    let coeffs = out.join("coefficients.csv");
    write_coefficients(&coeffs, &adaptive.fit)?;
    outputs.push(coeffs);
    let table = out.join("criterion_table.csv");
    adaptive.write_table_csv(fs::File::create(&table)?).stage("selection")?;
    outputs.push(table);
    report_choice("adaptive", &adaptive);

    if config.oracle {
        let first = config.grid.drop_first;
        let qbox =
            QuantileBox::from_paths(&sample.x_path(0)[first..], &sample.y_path(0)[first..]).stage("experiments")?;
        let oracle = scan.oracle(&truth, &qbox);
        let path = out.join("oracle_coefficients.csv");
        write_coefficients(&path, &oracle.fit)?;
        outputs.push(path);
        report_choice("oracle", &oracle);
    }

    if dump {
        let sys = cache.system(adaptive.chosen).stage("design")?;
        for (name, matrix) in [
            ("gram.csv", sys.gram.clone()),
            ("z.csv", column(&sys.zvec)),
            ("d.csv", column(&sys.dvec)),
        ] {
            let path = out.join(name);
            write_matrix_csv(&path, &matrix).stage("design")?;
            outputs.push(path);
        }
    }

    let seeds = vec![SeedRecord {
        label: "sample".into(),
        seed: config.seed,
    }];
    write_metadata(ctx, "fit", &config, seeds, &outputs)
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn report_choice(label: &str, res: &SelectionResult) {
    if res.all_inadmissible {
        println!("{label}: no admissible dimensions; truncated to zero");
    } else {
        println!("{label}: m1 = {}, m2 = {}", res.chosen.m1, res.chosen.m2);
    }
}

fn write_coefficients(path: &Path, fit: &FitResult) -> Result<(), CliError> {
    let mut text = String::from("function,index,coefficient\n");
    for (k, c) in fit.a_coeffs().iter().enumerate() {
        text.push_str(&format!("a,{},{c}\n", k + 1));
    }
    for (k, c) in fit.b_coeffs().iter().enumerate() {
        text.push_str(&format!("b,{},{c}\n", k + 1));
    }
    fs::write(path, text)?;
    Ok(())
}

fn experiment_config(
    ctx: &Context,
    selection: &SelectionArgs,
    model: ModelId,
    y: YType,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<ExperimentConfig, CliError> {
    let (selection, phi, psi) = ctx.selection(selection)?;
    let mut config = ExperimentConfig::new(model, y, n, reps, seed);
    config.selection = selection;
    config.phi = phi;
    config.psi = psi;
    config.validate().stage("experiments")?;
    Ok(config)
}

fn experiment(ctx: &Context, args: ExperimentArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let mut config = experiment_config(
        ctx,
        &args.selection,
        resolve(args.model, f, "model", ModelId::Two)?,
        resolve(args.y, f, "y", YType::A)?,
        resolve(args.n, f, "n", 400)?,
        resolve(args.reps, f, "reps", 50)?,
        resolve(args.seed, f, "seed", 1)?,
    )?;
    let beam: Option<usize> = match args.beam {
        Some(k) => Some(k),
        None => f.get("beam")?,
    };
    config.keep_curves = beam.is_some();

    let report = cpls_core::run_experiment(&config).stage("experiments")?;
    let out = ctx.prepare_out_dir()?;
    let mut outputs = Vec::new();
    let reps_path = out.join("reps.csv");
    report
        .write_reps_csv(fs::File::create(&reps_path)?)
        .stage("experiments")?;
    outputs.push(reps_path);
    let summary_path = out.join("summary.csv");
    report
        .write_summary_csv(fs::File::create(&summary_path)?)
        .stage("experiments")?;
    outputs.push(summary_path);

    if let Some(k) = beam {
        let k = k.min(report.per_rep.len());
        for (which, wname) in [(DriftComponent::A, "a"), (DriftComponent::B, "b")] {
            for (source, sname) in [(BeamSource::Adaptive, "beam"), (BeamSource::Oracle, "oracle_beam")] {
                let path = out.join(format!("{sname}_{wname}.csv"));
                emit_beam(&report, which, source, k, &path).stage("experiments")?;
                outputs.push(path);
            }
        }
    }

    print_summary(&report);
    write_metadata(
        ctx,
        "experiment",
        &config,
        rep_seeds(config.seed, config.reps),
        &outputs,
    )?;
    failure_check(&report)
}

fn print_summary(report: &ExperimentReport) {
    let c = &report.config;
    let s = &report.summary;
    println!(
        "model {} Y {} N {}: {} reps ({} failed, {} truncated)",
        c.model, c.y_type, c.n_paths, s.completed, s.failed, s.truncated
    );
    for (name, comp) in [("a", &s.a), ("b", &s.b)] {
        println!(
            "  {name}: 100*MSE {:.3} ({:.3})  oracle {:.3} ({:.3})  dim {:.2}  oracle dim {:.2}",
            comp.mse, comp.mse_std, comp.oracle_mse, comp.oracle_mse_std, comp.dim, comp.oracle_dim
        );
    }
}

/// A run where every repetition failed is a runtime failure.
fn failure_check(report: &ExperimentReport) -> Result<(), CliError> {
    match report.failures.first() {
        Some(first) if report.per_rep.is_empty() => Err(CliError::Failed {
            module: "experiments",
            message: format!("all repetitions failed; first: {}", first.reason),
        }),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct Table1Config<'a> {
    reps: usize,
    seed: u64,
    sizes: &'a [usize],
    settings: Vec<&'a ExperimentConfig>,
}

fn table1(ctx: &Context, args: Table1Args) -> Result<(), CliError> {
    let f = &ctx.file;
    let reps = resolve(args.reps, f, "reps", 50)?;
    let seed = resolve(args.seed, f, "seed", 1)?;
    let sizes = match args.sizes {
        Some(s) => s,
        None => match f.get::<String>("sizes")? {
            Some(text) => text
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Usage(format!("config key 'sizes': {e}")))?,
            None => vec![400, 1000],
        },
    };
    if sizes.is_empty() {
        return Err(CliError::Usage("at least one sample size is required".into()));
    }

    let mut configs = Vec::new();
    for model in ModelId::ALL {
        for y in YType::ALL {
            for &n in &sizes {
                // one master seed per setting keeps settings independent
                let setting_seed = derive_seed(seed, configs.len() as u64);
                configs.push(experiment_config(
                    ctx,
                    &args.selection,
                    model,
                    y,
                    n,
                    reps,
                    setting_seed,
                )?);
            }
        }
    }
    let mut reports = Vec::with_capacity(configs.len());
    for config in &configs {
        let report = cpls_core::run_experiment(config).stage("experiments")?;
        print_summary(&report);
        failure_check(&report)?;
        reports.push(report);
    }

    let out = ctx.prepare_out_dir()?;
    let path = out.join("table1.csv");
    write_table1_csv(&reports, fs::File::create(&path)?).stage("experiments")?;
    let seeds = configs
        .iter()
        .map(|c| SeedRecord {
            label: format!("model_{}_y_{}_n_{}", c.model, c.y_type, c.n_paths),
            seed: c.seed,
        })
        .collect();
    let meta = Table1Config {
        reps,
        seed,
        sizes: &sizes,
        settings: configs.iter().collect(),
    };
    write_metadata(ctx, "table1", meta, seeds, &[path])
}

fn bases_check(ctx: &Context, args: BasesCheckArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let basis = match args.basis {
        Some(b) => b,
        None => f
            .get("basis")?
            .ok_or_else(|| CliError::Usage("--basis is required".into()))?,
    };
    let m = resolve(args.m, f, "m", 20usize)?;
    let residual = basis.orthonormality_residual(m).stage("bases")?;
    println!("basis {basis} m {m}: orthonormality residual {residual:.3e}");
    if residual < ORTHONORMALITY_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Failed {
            module: "bases",
            message: format!("residual {residual:.3e} exceeds {ORTHONORMALITY_TOLERANCE:e}"),
        })
    }
}
