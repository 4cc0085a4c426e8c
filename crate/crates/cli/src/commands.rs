use crate::cli::{
    Cli, Command, CommonArgs, CoverageArgs, GammaOptArgs, PowerCalcArgs, SimArgs, SimulateArgs,
    TestArgs,
};
use crate::config::{load_config, GammaOptConfig, PowerCalcConfig, TestConfig};
use crate::error::{CliError, CliResult, DataError};
use crate::manifest::{check_model, load_blocks, BlockManifest};
use crate::report::{to_csv, to_json, CsvRows, Document, Format, PowerCalcResults, TestResults};
use hetdetect_core::inference::{run_tests, BlockFits};
use hetdetect_core::power::{classify_regime, detection_boundary, gamma_recommendation, snr_ect, snr_wald, LocalAlternative};
use hetdetect_core::simlab::{coverage_table, run_experiment, SimConfig};
use hetdetect_core::{fit_block, split_block, HetError, LocalFit, SolverSettings, SplitMode};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

/// Executes a parsed command line inside a dedicated thread pool.
pub fn run(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::Test(a) => &a.common,
        Command::Simulate(a) => &a.common,
        Command::Coverage(a) => &a.common,
        Command::PowerCalc(a) => &a.common,
        Command::GammaOpt(a) => &a.common,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Coverage(a) => cmd_coverage(a),
        Command::PowerCalc(a) => cmd_power_calc(a),
        Command::GammaOpt(a) => cmd_gamma_opt(a),
    })
}

fn emit<C: Serialize, R: Serialize + CsvRows>(
    common: &CommonArgs,
    command: &str,
    config: C,
    results: R,
) -> CliResult<()> {
    let text = match common.format {
        Format::Json => to_json(&Document::new(command, config, results))
            .map_err(|e| CliError::Usage(format!("cannot serialize output: {e}")))?,
        Format::Csv => to_csv(&results.csv_rows())
            .map_err(|e| CliError::Usage(format!("cannot serialize output: {e}")))?,
    };
    match &common.out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}

pub fn resolve_test_config(args: &TestArgs) -> CliResult<TestConfig> {
    let mut cfg: TestConfig = load_config(args.common.config.as_deref())?;
    if let Some(b) = &args.blocks {
        cfg.blocks = Some(b.clone());
    }
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    if let Some(w) = args.weight {
        cfg.weight = w;
    }
    if let Some(seed) = args.shuffle_seed {
        cfg.split = SplitMode::SeededShuffle { seed };
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::Usage(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(CliError::Usage(format!("gamma must lie in (0, 1), got {}", cfg.gamma)));
    }
    Ok(cfg)
}

/// Fits, splits and tests every block listed in the manifest.
pub fn run_test_command(cfg: &TestConfig) -> CliResult<TestResults> {
    let path = cfg
        .blocks
        .as_deref()
        .ok_or_else(|| CliError::Usage("a block manifest is required (--blocks)".into()))?;
    let manifest = BlockManifest::from_path(path)?;
    manifest.validate()?;
    if manifest.k() < 2 {
        return Err(HetError::KTooSmall(manifest.k()).into());
    }
    let ids: Vec<String> = manifest.blocks.iter().map(|b| b.id.clone()).collect();
    let blocks = load_blocks(&manifest)?;
    check_model(&blocks, &ids, cfg.model)?;

    let settings = SolverSettings::default();
    let fits: Vec<(LocalFit, LocalFit, LocalFit)> = blocks
        .par_iter()
        .zip(ids.par_iter())
        .enumerate()
        .map(|(k, (data, id))| {
            let ctx = |source| DataError::Block {
                block: id.clone(),
                source,
            };
            let mode = match cfg.split {
                SplitMode::SeededShuffle { seed } => SplitMode::SeededShuffle {
                    seed: block_seed(seed, k),
                },
                m => m,
            };
            let (a, b) = split_block(data, cfg.gamma, mode).map_err(ctx)?;
            Ok((
                fit_block(data, cfg.model, &settings).map_err(ctx)?,
                fit_block(&a, cfg.model, &settings).map_err(ctx)?,
                fit_block(&b, cfg.model, &settings).map_err(ctx)?,
            ))
        })
        .collect::<Result<_, DataError>>()?;
    let mut full = Vec::with_capacity(fits.len());
    let mut first = Vec::with_capacity(fits.len());
    let mut second = Vec::with_capacity(fits.len());
    for (f, a, b) in fits {
        full.push(f);
        first.push(a);
        second.push(b);
    }
    let n_min = blocks.iter().map(|b| b.n()).min().unwrap_or(0);
    let report = run_tests(
        &BlockFits {
            full: &full,
            first: &first,
            second: &second,
        },
        cfg.gamma,
        cfg.alpha,
        cfg.weight,
    )?;
    Ok(TestResults::from_report(&report, &manifest.features, &ids, n_min))
}

// Each block gets its own shuffle so that equally sized blocks are not
// permuted identically.
fn block_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn cmd_test(args: &TestArgs) -> CliResult<()> {
    let cfg = resolve_test_config(args)?;
    let results = run_test_command(&cfg)?;
    emit(&args.common, "test", cfg, results)
}

fn apply_sim_args(cfg: &mut SimConfig, a: &SimArgs) {
    if let Some(v) = a.model {
        cfg.model = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = a.weight {
        cfg.weight = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.replicates {
        cfg.replicates = v;
    }
}

fn config_error(e: HetError) -> CliError {
    CliError::Usage(format!("invalid configuration: {e}"))
}

pub fn resolve_sim_config(args: &SimulateArgs) -> CliResult<SimConfig> {
    let mut cfg: SimConfig = load_config(args.common.config.as_deref())?;
    apply_sim_args(&mut cfg, &args.sim);
    if args.beta.is_some() {
        cfg.beta = args.beta;
    }
    if let Some(c) = args.calibration {
        cfg.calibration = c.into();
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = resolve_sim_config(args)?;
    let result = run_experiment(&cfg)?;
    emit(&args.common, "simulate", cfg, result)
}

fn cmd_coverage(args: &CoverageArgs) -> CliResult<()> {
    let mut cfg: SimConfig = load_config(args.common.config.as_deref())?;
    apply_sim_args(&mut cfg, &args.sim);
    if let Some(levels) = &args.levels {
        cfg.coverage_levels = levels.clone();
    }
    cfg.validate().map_err(config_error)?;
    if cfg.beta.is_some() {
        return Err(CliError::Usage("coverage needs a null configuration; remove beta".into()));
    }
    let table = coverage_table(&cfg, &cfg.coverage_levels)?;
    emit(&args.common, "coverage", cfg, table)
}

fn cmd_power_calc(args: &PowerCalcArgs) -> CliResult<()> {
    let mut cfg: PowerCalcConfig = load_config(args.common.config.as_deref())?;
    macro_rules! set {
        ($($f:ident),*) => {$(if let Some(v) = args.$f { cfg.$f = v; })*};
    }
    set!(k, n, beta, c, sigma, gamma);
    if args.sigma_minus.is_some() {
        cfg.sigma_minus = args.sigma_minus;
    }
    if args.sigma_plus.is_some() {
        cfg.sigma_plus = args.sigma_plus;
    }
    cfg.materialize();
    let alt = LocalAlternative::new(cfg.k, cfg.n, cfg.beta, cfg.c, cfg.sigma, cfg.gamma)
        .map_err(config_error)?;
    let (lo, hi) = (cfg.sigma_minus.unwrap_or(cfg.sigma), cfg.sigma_plus.unwrap_or(cfg.sigma));
    let results = PowerCalcResults {
        sparsity: alt.sparsity(),
        shift: alt.shift(),
        detection_boundary: detection_boundary(alt.beta).map_err(config_error)?,
        snr_wald: snr_wald(&alt),
        snr_ect: snr_ect(&alt).map_err(config_error)?,
        regime: classify_regime(&alt, lo, hi).map_err(config_error)?,
    };
    emit(&args.common, "power-calc", cfg, results)
}

fn cmd_gamma_opt(args: &GammaOptArgs) -> CliResult<()> {
    let mut cfg: GammaOptConfig = load_config(args.common.config.as_deref())?;
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.mu {
        cfg.mu = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    let rec = gamma_recommendation(cfg.n, cfg.mu, cfg.k).map_err(config_error)?;
    emit(&args.common, "gamma-opt", cfg, rec)
}
