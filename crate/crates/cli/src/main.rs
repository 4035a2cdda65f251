use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use lpvmax::harness::{
    random_inputs, run_monte_carlo_with, simulate_with_snr, write_runs_csv, write_summary_csv,
    ExperimentConfig, HankelConfig, Snr, Summary,
};
use lpvmax::ho_kalman::{realize, HankelSpec, RealizedModel, StateDim};
use lpvmax::lpv_ss::random_stable_model;
use lpvmax::plr::{plr_fit, Orders, PlrConfig};
use lpvmax::{DataSet, Dims, LpvSsModel, Path, SubMarkovTable};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "lpvmax", version, about = "LPV state-space identification via MAX models and Ho-Kalman realization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random stable LPV-SS model and write it as JSON.
    GenerateModel(GenerateArgs),
    /// Simulate a model on given or random inputs and write a data CSV.
    Simulate(SimulateArgs),
    /// Fit a MAX model by pseudo-linear regression and realize it as LPV-SS.
    Identify(IdentifyArgs),
    /// Realize an LPV-SS model from sub-Markov tables.
    Realize(RealizeArgs),
    /// Monte-Carlo benchmark over one or more noise levels.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Dimensions as n_x,n_u,n_y,n_p.
    #[arg(long, value_parser = parse_dims)]
    dims: Dims,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Upper bound on the spectral radius of every vertex state matrix.
    #[arg(long, default_value_t = 0.8)]
    margin: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with columns t,u1..,p1..; any y columns are ignored.
    #[arg(long, conflicts_with = "samples")]
    inputs: Option<PathBuf>,
    /// Length of a random white input and scheduling sequence.
    #[arg(long, required_unless_present = "inputs")]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output SNR in dB, or "inf" for noise-free data.
    #[arg(long, default_value = "inf")]
    snr: Snr,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the noise-free output as a data CSV.
    #[arg(long)]
    clean_out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML with optional [orders], [plr] and hankel sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_b: Option<usize>,
    #[arg(long)]
    n_c: Option<usize>,
    #[arg(long)]
    lambda_proc: Option<f64>,
    #[arg(long)]
    lambda_noise: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// State dimension, or "auto" to pick it from the singular value gap.
    #[arg(long)]
    n_x: Option<StateDim>,
    /// Estimation report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Realized LPV-SS model (JSON).
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    process_table: Option<PathBuf>,
    #[arg(long)]
    noise_table: Option<PathBuf>,
    #[arg(long)]
    residuals: Option<PathBuf>,
    #[arg(long)]
    spectrum: Option<PathBuf>,
}

#[derive(Args)]
struct RealizeArgs {
    #[arg(long)]
    process_table: PathBuf,
    #[arg(long)]
    noise_table: PathBuf,
    #[arg(long)]
    n_p: usize,
    #[arg(long, default_value = "auto")]
    n_x: StateDim,
    /// Comma-separated row strings; defaults to all strings of length 1-2.
    #[arg(long, value_delimiter = ',', requires = "cols")]
    rows: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', requires = "rows")]
    cols: Option<Vec<String>>,
    /// Treat entries missing from the tables as zero.
    #[arg(long)]
    zero_fill: bool,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    spectrum: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_mc: Option<usize>,
    /// Noise levels to sweep; repeat the flag. Defaults to the config's.
    #[arg(long)]
    snr: Vec<Snr>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    /// Samples simulated and discarded before each data set.
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
    /// Per-run results, including failures.
    #[arg(long)]
    runs: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentifyFile {
    orders: Option<Orders>,
    plr: Option<PlrConfig>,
    #[serde(default)]
    hankel: HankelConfig,
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad dimension {x:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [n_x, n_u, n_y, n_p] => Ok(Dims::new(n_x, n_u, n_y, n_p)),
        _ => Err("expected n_x,n_u,n_y,n_p".into()),
    }
}

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &FsPath) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_model(path: &FsPath) -> Result<LpvSsModel> {
    LpvSsModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn write_table(table: &SubMarkovTable, path: &FsPath) -> Result<()> {
    let mut w = create(path)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_spectrum(realized: &RealizedModel, path: &FsPath) -> Result<()> {
    let mut w = create(path)?;
    realized.write_spectrum_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let model = random_stable_model(args.dims, args.seed, args.margin)?;
    model.save(&args.out)?;
    info!("vertex spectral radius {:.4}", model.vertex_spectral_radius());
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let dims = model.dims();
    let (u, p) = match (&args.inputs, args.samples) {
        (Some(path), _) => {
            let d = DataSet::read_csv(open(path)?)?;
            if (d.n_u(), d.n_p()) != (dims.n_u, dims.n_p) {
                bail!(
                    "inputs have n_u = {}, n_p = {}; model expects {}, {}",
                    d.n_u(),
                    d.n_p(),
                    dims.n_u,
                    dims.n_p
                );
            }
            (d.u, d.p)
        }
        (None, Some(n)) => random_inputs(n, dims.n_u, dims.n_p, args.seed),
        (None, None) => bail!("give --inputs or --samples"),
    };
    let (clean, noisy, _) = simulate_with_snr(&model, &u, &p, args.seed, args.snr)?;
    if let Some(path) = &args.clean_out {
        let mut w = create(path)?;
        DataSet::new(u.clone(), p.clone(), clean)?.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut w = create(&args.out)?;
    DataSet::new(u, p, noisy)?.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn identify(args: IdentifyArgs) -> Result<()> {
    let file: IdentifyFile = match &args.config {
        Some(path) => toml::from_str(
            &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => IdentifyFile::default(),
    };
    let orders = match (file.orders, args.n_b, args.n_c) {
        (_, Some(n_b), Some(n_c)) => Orders::new(n_b, n_c),
        (Some(o), n_b, n_c) => Orders::new(n_b.unwrap_or(o.n_b), n_c.unwrap_or(o.n_c)),
        _ => bail!("model orders missing: give --n-b and --n-c or an [orders] section"),
    };
    let mut plr = file.plr.unwrap_or_default();
    if let Some(v) = args.lambda_proc {
        plr.lambda_proc = v;
    }
    if let Some(v) = args.lambda_noise {
        plr.lambda_noise = v;
    }
    if let Some(v) = args.max_iters {
        plr.max_iters = v;
    }
    if let Some(v) = args.tol {
        plr.tol = v;
    }
    if let Some(v) = args.burn_in {
        plr.burn_in = v;
    }

    let data = DataSet::read_csv(open(&args.data)?)?;
    let mut spec = file.hankel.to_spec(data.n_p(), StateDim::Auto)?;
    if let Some(n_x) = args.n_x {
        spec.n_x = n_x;
    }

    let report = plr_fit(&data, orders, &plr)?;
    info!(
        "PLR: {} iterations, converged {}, V_N {:.6e}",
        report.iterations_used,
        report.converged,
        report.loss_per_iter.last().copied().unwrap_or(f64::NAN)
    );
    if !report.excitation.sufficient() {
        log::warn!(
            "input is not persistently exciting of order {} (found {})",
            report.excitation.required,
            report.excitation.order
        );
    }
    if let Some(path) = &args.report {
        let mut w = create(path)?;
        report.write_json(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &args.process_table {
        write_table(report.model.proc(), path)?;
    }
    if let Some(path) = &args.noise_table {
        write_table(report.model.noise(), path)?;
    }
    if let Some(path) = &args.residuals {
        let mut w = create(path)?;
        report.residuals.write_csv(&mut w)?;
        w.flush()?;
    }

    let realized = realize(report.model.proc(), report.model.noise(), &spec)?;
    if let Some(path) = &args.spectrum {
        write_spectrum(&realized, path)?;
    }
    let model = realized.model.clone().with_sigma_e(report.sigma_e.clone())?;
    model.save(&args.out)?;
    println!(
        "iterations {} converged {} loss {:.6e} n_x {}",
        report.iterations_used,
        report.converged,
        report.loss_per_iter.last().copied().unwrap_or(f64::NAN),
        realized.n_x()
    );
    Ok(())
}

fn realize_cmd(args: RealizeArgs) -> Result<()> {
    let proc = SubMarkovTable::read_csv(open(&args.process_table)?, Path::Process, args.n_p)?;
    let noise = SubMarkovTable::read_csv(open(&args.noise_table)?, Path::Noise, args.n_p)?;
    let mut spec = match (&args.rows, &args.cols) {
        (Some(rows), Some(cols)) => HankelSpec::from_encoded(args.n_p, rows, cols, args.n_x)?,
        _ => HankelSpec::full(args.n_p, 2, args.n_x)?,
    };
    spec.zero_fill = args.zero_fill;
    let realized = realize(&proc, &noise, &spec)?;
    if let Some(path) = &args.spectrum {
        write_spectrum(&realized, path)?;
    }
    realized.model.save(&args.out)?;
    println!("n_x {}", realized.n_x());
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = args.n_mc {
        cfg.n_mc = n;
    }
    if let Some(n) = args.n_train {
        cfg.n_train = n;
    }
    if let Some(n) = args.n_val {
        cfg.n_val = n;
    }
    if let Some(n) = args.burn_in {
        cfg.burn_in = n;
    }
    let levels = if args.snr.is_empty() {
        vec![cfg.snr_db]
    } else {
        args.snr.clone()
    };
    let truth = cfg.model.load()?;
    let mut summaries: Vec<Summary> = Vec::with_capacity(levels.len());
    for snr in levels {
        let level = ExperimentConfig {
            snr_db: snr,
            ..cfg.clone()
        };
        let s = run_monte_carlo_with(&truth, &level)?;
        println!(
            "snr {}: sim BFR {:.2} ({:.2}), pred BFR {:.2} ({:.2}), {} failed",
            s.snr_db,
            s.mean_bfr_sim,
            s.std_bfr_sim,
            s.mean_bfr_pred,
            s.std_bfr_pred,
            s.failures.len()
        );
        summaries.push(s);
    }
    let mut w = create(&args.out)?;
    write_summary_csv(&summaries, &mut w)?;
    w.flush()?;
    if let Some(path) = &args.runs {
        let mut w = create(path)?;
        write_runs_csv(&summaries, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateModel(a) => generate(a),
        Command::Simulate(a) => simulate(a),
        Command::Identify(a) => identify(a),
        Command::Realize(a) => realize_cmd(a),
        Command::Benchmark(a) => benchmark(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
