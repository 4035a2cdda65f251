//! Seeded Monte-Carlo studies: data generation, identification, realization
//! and best-fit-rate scoring against the true system.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ho_kalman::{realize, HankelSpec, RealizedModel, StateDim};
use crate::lpv_ss::{random_stable_model, simulate, DataSet, Dims, LpvSsModel, NoiseSource};
use crate::plr::{plr_fit, EstimationReport, Orders, PlrConfig};
use crate::predictor::{predict, MaxModel};
use crate::signal::Signal;

/// Output signal-to-noise ratio; `Inf` means noise-free data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Snr {
    Inf,
    Db(f64),
}

impl Snr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Snr::Inf => None,
            Snr::Db(v) => Some(*v),
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Inf => f.write_str("inf"),
            Snr::Db(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for Snr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Snr::Inf);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Config(format!("SNR must be a number or \"inf\", got {s:?}")))?;
        if v.is_infinite() && v > 0.0 {
            Ok(Snr::Inf)
        } else if v.is_finite() {
            Ok(Snr::Db(v))
        } else {
            Err(Error::Config(format!("invalid SNR {s:?}")))
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Inf => s.serialize_str("inf"),
            Snr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => format!("{v}").parse(),
            Repr::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum ModelSource {
    /// Model document on disk.
    File { path: PathBuf },
    Random {
        seed: u64,
        dims: Dims,
        #[serde(default = "default_margin")]
        spectral_margin: f64,
    },
}

fn default_margin() -> f64 {
    0.8
}

impl ModelSource {
    pub fn load(&self) -> Result<LpvSsModel> {
        match self {
            ModelSource::File { path } => LpvSsModel::load(path),
            ModelSource::Random {
                seed,
                dims,
                spectral_margin,
            } => random_stable_model(*dims, *seed, *spectral_margin),
        }
    }
}

/// Realization basis; `Default` uses all strings of length 1-2 on both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HankelConfig {
    Named(String),
    Strings {
        rows: Vec<String>,
        cols: Vec<String>,
        #[serde(default)]
        n_x: Option<StateDim>,
        #[serde(default)]
        zero_fill: bool,
    },
}

impl Default for HankelConfig {
    fn default() -> Self {
        HankelConfig::Named("default".into())
    }
}

impl HankelConfig {
    /// `default_n_x` applies when the configuration leaves the state
    /// dimension open.
    pub fn to_spec(&self, n_p: usize, default_n_x: StateDim) -> Result<HankelSpec> {
        match self {
            HankelConfig::Named(name) if name == "default" => HankelSpec::full(n_p, 2, default_n_x),
            HankelConfig::Named(name) => Err(Error::Config(format!("unknown Hankel basis {name:?}"))),
            HankelConfig::Strings {
                rows,
                cols,
                n_x,
                zero_fill,
            } => {
                let mut spec =
                    HankelSpec::from_encoded(n_p, rows, cols, n_x.unwrap_or(default_n_x))?;
                spec.zero_fill = *zero_fill;
                Ok(spec)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_val")]
    pub n_val: usize,
    /// Leading samples simulated and then discarded from every set, so the
    /// zero initial state has died out.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub snr_db: Snr,
    pub orders: Orders,
    /// Ridge weights etc.; chosen from the SNR when absent.
    #[serde(default)]
    pub plr: Option<PlrConfig>,
    #[serde(default)]
    pub hankel: HankelConfig,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_n_train() -> usize {
    5000
}

fn default_n_val() -> usize {
    1000
}

fn default_burn_in() -> usize {
    100
}

fn default_n_mc() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn plr_config(&self) -> PlrConfig {
        self.plr.unwrap_or_else(|| PlrConfig::for_snr(self.snr_db.db()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be at least 1".into()));
        }
        let plr = self.plr_config();
        plr.validate()?;
        let min = self.orders.max() + plr.burn_in + 2;
        if self.n_train < min {
            return Err(Error::Config(format!("n_train must be at least {min}")));
        }
        if self.n_val < self.orders.max() + 2 {
            return Err(Error::Config(format!(
                "n_val must be at least {}",
                self.orders.max() + 2
            )));
        }
        Ok(())
    }
}

/// One run's data: noisy training set, noise-free and noisy validation sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Signals {
    pub train: DataSet,
    pub val_clean: DataSet,
    pub val_noisy: DataSet,
    /// Innovations actually added, after SNR scaling.
    pub e_train: Signal,
    pub e_val: Signal,
}

fn stream(run_seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut impl RngCore, len: usize, dim: usize) -> Signal {
    if dim == 0 {
        return Signal::empty_channels(len);
    }
    let data = (0..len * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Signal::from_vec(dim, data).expect("length is a multiple of dim")
}

fn uniform(rng: &mut impl RngCore, len: usize, dim: usize) -> Signal {
    if dim == 0 {
        return Signal::empty_channels(len);
    }
    let data = (0..len * dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Signal::from_vec(dim, data).expect("length is a multiple of dim")
}

/// Channel-averaged `10 log10(var(clean) / var(noise))`.
pub fn measured_snr_db(clean: &Signal, noise: &Signal) -> Result<f64> {
    let (pc, pn) = (clean.variance(), noise.variance());
    if pc.is_empty() {
        return Err(Error::Config("no output channels".into()));
    }
    let mut acc = 0.0;
    for (s, n) in pc.iter().zip(&pn) {
        if !(*s > 0.0) || !(*n > 0.0) {
            return Err(Error::Config("SNR undefined: a channel has zero signal or noise power".into()));
        }
        acc += 10.0 * (s / n).log10();
    }
    Ok(acc / pc.len() as f64)
}

/// Simulates one set and returns `(clean, noisy, e)` outputs with the first
/// `skip` samples dropped. `e` is scaled by a single scalar so the
/// channel-averaged SNR over the kept samples equals `snr`.
fn simulate_set(
    truth: &LpvSsModel,
    u: &Signal,
    p: &Signal,
    e_raw: &Signal,
    snr: Snr,
    skip: usize,
) -> Result<(Signal, Signal, Signal)> {
    let n = u.len();
    let (clean, _) = simulate(truth, u, p, NoiseSource::None, None)?;
    let clean = clean.slice(skip, n);
    match snr {
        Snr::Inf => Ok((clean.clone(), clean, Signal::zeros(n - skip, truth.dims().n_y))),
        Snr::Db(target) => {
            let zero_u = Signal::zeros(n, u.dim());
            let (noise_out, _) = simulate(truth, &zero_u, p, NoiseSource::Sequence(e_raw), None)?;
            let noise_out = noise_out.slice(skip, n);
            let raw = measured_snr_db(&clean, &noise_out)?;
            // contributions scale linearly in e, so one scalar hits the target
            let s = 10f64.powf((raw - target) / 20.0);
            let noisy = clean.add(&noise_out.scaled(s))?;
            Ok((clean, noisy, e_raw.slice(skip, n).scaled(s)))
        }
    }
}

/// Innovations `L z` with `L Lᵀ = Σ_e` and `z` standard normal.
fn innovations(truth: &LpvSsModel, rng: &mut impl RngCore, n: usize) -> Result<Signal> {
    let n_y = truth.dims().n_y;
    let chol = truth
        .sigma_e()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("Sigma_e not positive definite".into()))?
        .l();
    let z = gaussian(rng, n, n_y);
    let mut e = Signal::zeros(n, n_y);
    for t in 0..n {
        let zt = nalgebra::DVector::from_column_slice(z.row(t));
        e.row_mut(t).copy_from_slice((&chol * zt).as_slice());
    }
    Ok(e)
}

struct Streams {
    u: ChaCha8Rng,
    p: ChaCha8Rng,
    e: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            u: stream(seed, 0),
            p: stream(seed, 1),
            e: stream(seed, 2),
        }
    }

    fn inputs(&mut self, n: usize, n_u: usize, n_p: usize) -> (Signal, Signal) {
        (gaussian(&mut self.u, n, n_u), uniform(&mut self.p, n, n_p))
    }
}

/// Simulated data for given inputs: `(clean, noisy, e)` outputs with
/// innovations drawn from `seed` and scaled to `snr`.
pub fn simulate_with_snr(
    truth: &LpvSsModel,
    u: &Signal,
    p: &Signal,
    seed: u64,
    snr: Snr,
) -> Result<(Signal, Signal, Signal)> {
    let e = innovations(truth, &mut Streams::new(seed).e, u.len())?;
    simulate_set(truth, u, p, &e, snr, 0)
}

/// Unit-variance white Gaussian input and uniform white scheduling on
/// `[−1, 1]`, from independent streams of `seed`.
pub fn random_inputs(len: usize, n_u: usize, n_p: usize, seed: u64) -> (Signal, Signal) {
    Streams::new(seed).inputs(len, n_u, n_p)
}

/// Draws independent input, scheduling and innovation streams from `run_seed`
/// and simulates `truth` on a training and a validation set, each preceded by
/// `burn_in` discarded samples.
pub fn generate_signals(truth: &LpvSsModel, cfg: &ExperimentConfig, run_seed: u64) -> Result<Signals> {
    let Dims { n_u, n_p, .. } = truth.dims();
    let mut streams = Streams::new(run_seed);
    let mut make = |n: usize| -> Result<(DataSet, DataSet, Signal)> {
        let len = n + cfg.burn_in;
        let (u, p) = streams.inputs(len, n_u, n_p);
        let e = innovations(truth, &mut streams.e, len)?;
        let (clean, noisy, e) = simulate_set(truth, &u, &p, &e, cfg.snr_db, cfg.burn_in)?;
        let (u, p) = (u.slice(cfg.burn_in, len), p.slice(cfg.burn_in, len));
        Ok((
            DataSet::new(u.clone(), p.clone(), clean)?,
            DataSet::new(u, p, noisy)?,
            e,
        ))
    };
    let (_, train, e_train) = make(cfg.n_train)?;
    let (val_clean, val_noisy, e_val) = make(cfg.n_val)?;
    Ok(Signals {
        train,
        val_clean,
        val_noisy,
        e_train,
        e_val,
    })
}

fn check_bfr_inputs(y_ref: &Signal, y_hat: &Signal) -> Result<()> {
    if y_ref.len() != y_hat.len() || y_ref.dim() != y_hat.dim() {
        return crate::error::arg("BFR inputs differ in shape");
    }
    if y_ref.len() < 2 {
        return crate::error::arg("BFR needs at least two samples");
    }
    Ok(())
}

fn fit_rate(num: f64, den: f64, what: &str) -> Result<f64> {
    if !(den > 0.0) {
        return Err(Error::DegenerateReference(format!("{what} is constant")));
    }
    Ok((1.0 - num / den).max(0.0) * 100.0)
}

/// Best fit rate in percent using joint Euclidean norms over all channels.
pub fn bfr(y_ref: &Signal, y_hat: &Signal) -> Result<f64> {
    check_bfr_inputs(y_ref, y_hat)?;
    let mean = y_ref.mean();
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..y_ref.len() {
        let (r, h) = (y_ref.row(t), y_hat.row(t));
        num += r.iter().zip(h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        den += r.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>().sqrt();
    }
    fit_rate(num, den, "reference output")
}

/// Best fit rate of each channel separately.
pub fn bfr_channels(y_ref: &Signal, y_hat: &Signal) -> Result<Vec<f64>> {
    check_bfr_inputs(y_ref, y_hat)?;
    let mean = y_ref.mean();
    (0..y_ref.dim())
        .map(|c| {
            let (mut num, mut den) = (0.0, 0.0);
            for t in 0..y_ref.len() {
                num += (y_ref.row(t)[c] - y_hat.row(t)[c]).abs();
                den += (y_ref.row(t)[c] - mean[c]).abs();
            }
            fit_rate(num, den, &format!("reference channel {}", c + 1))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub bfr_sim: f64,
    pub bfr_pred: f64,
    pub bfr_sim_channels: Vec<f64>,
    pub bfr_pred_channels: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub n_x: usize,
    pub final_loss: f64,
}

/// Everything a single pipeline run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub result: RunResult,
    pub signals: Signals,
    pub report: EstimationReport,
    pub realized: RealizedModel,
}

/// Seed of run `index`; independent of how many runs are requested.
pub fn run_seed(master_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Data generation, PLR fit, realization and scoring on the validation set.
pub fn run_pipeline(truth: &LpvSsModel, cfg: &ExperimentConfig, run: usize, seed: u64) -> Result<RunOutcome> {
    let tag = |e: Error| Error::Run {
        seed,
        source: Box::new(e),
    };
    run_untagged(truth, cfg, run, seed).map_err(tag)
}

fn run_untagged(truth: &LpvSsModel, cfg: &ExperimentConfig, run: usize, seed: u64) -> Result<RunOutcome> {
    let dims = truth.dims();
    let signals = generate_signals(truth, cfg, seed)?;
    let report = plr_fit(&signals.train, cfg.orders, &cfg.plr_config())?;
    let spec = cfg.hankel.to_spec(dims.n_p, StateDim::Fixed(dims.n_x))?;
    let mut realized = realize(report.model.proc(), report.model.noise(), &spec)?;
    if let Ok(m) = realized.model.clone().with_sigma_e(report.sigma_e.clone()) {
        realized.model = m;
    }

    let from = cfg.orders.max();
    let window = |s: &Signal| s.slice(from, s.len());

    let val = &signals.val_clean;
    let (y_sim, _) = simulate(&realized.model, &val.u, &val.p, NoiseSource::None, None)?;
    let (ref_sim, est_sim) = (window(&val.y), window(&y_sim));

    let oracle = MaxModel::from_ss(truth, cfg.orders.n_b, cfg.orders.n_c);
    let (y_oracle, _) = predict(&oracle, &signals.val_noisy)?;
    let (y_pred, _) = predict(&report.model, &signals.val_noisy)?;
    let (ref_pred, est_pred) = (window(&y_oracle), window(&y_pred));

    let result = RunResult {
        run,
        seed,
        bfr_sim: bfr(&ref_sim, &est_sim)?,
        bfr_pred: bfr(&ref_pred, &est_pred)?,
        bfr_sim_channels: bfr_channels(&ref_sim, &est_sim)?,
        bfr_pred_channels: bfr_channels(&ref_pred, &est_pred)?,
        iterations: report.iterations_used,
        converged: report.converged,
        n_x: realized.n_x(),
        final_loss: *report.loss_per_iter.last().expect("at least one iteration"),
    };
    Ok(RunOutcome {
        result,
        signals,
        report,
        realized,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub snr_db: Snr,
    pub n_mc: usize,
    pub mean_bfr_sim: f64,
    pub std_bfr_sim: f64,
    pub mean_bfr_pred: f64,
    pub std_bfr_pred: f64,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

/// Mean and sample standard deviation (`n − 1` divisor; 0 for one value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `n_mc` independent pipelines in parallel and aggregates the
/// successful ones; failures are counted and reported, not dropped.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let truth = cfg.model.load()?;
    run_monte_carlo_with(&truth, cfg)
}

pub fn run_monte_carlo_with(truth: &LpvSsModel, cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let outcomes: Vec<(usize, u64, Result<RunResult>)> = (0..cfg.n_mc)
        .into_par_iter()
        .map(|i| {
            let seed = run_seed(cfg.master_seed, i);
            (i, seed, run_pipeline(truth, cfg, i, seed).map(|o| o.result))
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (run, seed, r) in outcomes {
        match r {
            Ok(res) => runs.push(res),
            Err(e) => {
                log::warn!("run {run} failed: {e}");
                failures.push(RunFailure {
                    run,
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::AllRunsFailed(cfg.n_mc));
    }
    let sim: Vec<f64> = runs.iter().map(|r| r.bfr_sim).collect();
    let pred: Vec<f64> = runs.iter().map(|r| r.bfr_pred).collect();
    let (mean_bfr_sim, std_bfr_sim) = mean_std(&sim);
    let (mean_bfr_pred, std_bfr_pred) = mean_std(&pred);
    Ok(Summary {
        snr_db: cfg.snr_db,
        n_mc: cfg.n_mc,
        mean_bfr_sim,
        std_bfr_sim,
        mean_bfr_pred,
        std_bfr_pred,
        runs,
        failures,
    })
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "snr_db",
    "n_mc",
    "mean_bfr_sim",
    "std_bfr_sim",
    "mean_bfr_pred",
    "std_bfr_pred",
    "failures",
];

/// Writes the header followed by one row per summary.
pub fn write_summary_csv<W: Write>(summaries: &[Summary], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        wr.write_record([
            s.snr_db.to_string(),
            s.n_mc.to_string(),
            s.mean_bfr_sim.to_string(),
            s.std_bfr_sim.to_string(),
            s.mean_bfr_pred.to_string(),
            s.std_bfr_pred.to_string(),
            s.failures.len().to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// One row per run, failed runs included with their error message.
pub fn write_runs_csv<W: Write>(summaries: &[Summary], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "snr_db",
        "run",
        "seed",
        "status",
        "bfr_sim",
        "bfr_pred",
        "iterations",
        "converged",
        "n_x",
        "final_loss",
        "error",
    ])?;
    for s in summaries {
        let mut rows: Vec<(usize, Vec<String>)> = s
            .runs
            .iter()
            .map(|r| {
                (
                    r.run,
                    vec![
                        s.snr_db.to_string(),
                        r.run.to_string(),
                        r.seed.to_string(),
                        "ok".into(),
                        r.bfr_sim.to_string(),
                        r.bfr_pred.to_string(),
                        r.iterations.to_string(),
                        r.converged.to_string(),
                        r.n_x.to_string(),
                        r.final_loss.to_string(),
                        String::new(),
                    ],
                )
            })
            .collect();
        rows.extend(s.failures.iter().map(|f| {
            let mut row = vec![String::new(); 11];
            row[0] = s.snr_db.to_string();
            row[1] = f.run.to_string();
            row[2] = f.seed.to_string();
            row[3] = "failed".into();
            row[10] = f.message.clone();
            (f.run, row)
        }));
        rows.sort_by_key(|(i, _)| *i);
        for (_, row) in rows {
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(snr: Snr) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelSource::Random {
                seed: 3,
                dims: Dims::new(2, 1, 1, 1),
                spectral_margin: 0.7,
            },
            n_train: 1500,
            n_val: 400,
            burn_in: 100,
            snr_db: snr,
            orders: Orders::new(4, 2),
            plr: None,
            hankel: HankelConfig::default(),
            n_mc: 3,
            master_seed: 7,
        }
    }

    #[test]
    fn bfr_examples() {
        let y = Signal::from_scalar(&[0.0, 2.0]);
        assert_eq!(bfr(&y, &y).unwrap(), 100.0);
        assert_eq!(bfr(&y, &Signal::from_scalar(&[1.0, 1.0])).unwrap(), 0.0);
        assert!((bfr(&y, &Signal::from_scalar(&[0.5, 1.5])).unwrap() - 50.0).abs() < 1e-12);
        assert!(matches!(
            bfr(&Signal::from_scalar(&[1.0, 1.0]), &y),
            Err(Error::DegenerateReference(_))
        ));
        // far-off predictions clamp at zero
        assert_eq!(bfr(&y, &Signal::from_scalar(&[10.0, -10.0])).unwrap(), 0.0);
    }

    #[test]
    fn snr_parsing() {
        assert_eq!("inf".parse::<Snr>().unwrap(), Snr::Inf);
        assert_eq!("40".parse::<Snr>().unwrap(), Snr::Db(40.0));
        assert!("loud".parse::<Snr>().is_err());
        let cfg = small_config(Snr::Db(10.0));
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let cfg = small_config(Snr::Inf);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn lti_truth_without_scheduling() {
        let mut cfg = small_config(Snr::Db(30.0));
        cfg.model = ModelSource::Random {
            seed: 4,
            dims: Dims::new(2, 1, 1, 0),
            spectral_margin: 0.7,
        };
        let truth = cfg.model.load().unwrap();
        let s = generate_signals(&truth, &cfg, 1).unwrap();
        assert_eq!(s.train.n_p(), 0);
        assert_eq!(s.train.len(), cfg.n_train);
    }

    #[test]
    fn noiseless_signals_have_no_noise() {
        let cfg = small_config(Snr::Inf);
        let truth = cfg.model.load().unwrap();
        let s = generate_signals(&truth, &cfg, 1).unwrap();
        assert_eq!(s.val_clean, s.val_noisy);
        assert!(s.e_train.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn burn_in_drops_the_leading_samples() {
        let cfg = small_config(Snr::Inf);
        let truth = cfg.model.load().unwrap();
        let skipped = generate_signals(&truth, &cfg, 5).unwrap().train;
        let full = ExperimentConfig {
            n_train: cfg.n_train + cfg.burn_in,
            burn_in: 0,
            ..cfg.clone()
        };
        let full = generate_signals(&truth, &full, 5).unwrap().train;
        assert_eq!(skipped.len(), cfg.n_train);
        assert_eq!(skipped, full.slice(cfg.burn_in, full.len()).unwrap());
    }

    #[test]
    fn snr_is_hit() {
        for target in [40.0, 10.0] {
            let cfg = small_config(Snr::Db(target));
            let truth = cfg.model.load().unwrap();
            let s = generate_signals(&truth, &cfg, 2).unwrap();
            let noise = s.val_noisy.y.sub(&s.val_clean.y).unwrap();
            let got = measured_snr_db(&s.val_clean.y, &noise).unwrap();
            assert!((got - target).abs() < 0.5, "{got} vs {target}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = small_config(Snr::Db(20.0));
        let truth = cfg.model.load().unwrap();
        assert_eq!(
            generate_signals(&truth, &cfg, 9).unwrap(),
            generate_signals(&truth, &cfg, 9).unwrap()
        );
        assert_ne!(
            generate_signals(&truth, &cfg, 9).unwrap().train,
            generate_signals(&truth, &cfg, 10).unwrap().train
        );
    }

    #[test]
    fn single_run_summary() {
        let mut cfg = small_config(Snr::Inf);
        cfg.n_mc = 1;
        let s = run_monte_carlo(&cfg).unwrap();
        assert_eq!(s.runs.len() + s.failures.len(), 1);
        assert_eq!(s.std_bfr_sim, 0.0);
    }

    #[test]
    fn run_results_do_not_depend_on_n_mc() {
        let mut cfg = small_config(Snr::Db(40.0));
        cfg.n_mc = 2;
        let a = run_monte_carlo(&cfg).unwrap();
        cfg.n_mc = 3;
        let b = run_monte_carlo(&cfg).unwrap();
        assert_eq!(a.runs[..], b.runs[..2]);
        assert_eq!(a.runs.len() + a.failures.len(), 2);
    }

    #[test]
    fn summary_csv_layout() {
        let cfg = small_config(Snr::Inf);
        let s = run_monte_carlo(&cfg).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(std::slice::from_ref(&s), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SUMMARY_HEADER.join(","));
        assert!(lines.next().unwrap().starts_with("inf,3,"));
    }
}
