//! Pseudo-linear regression for LPV-MAX models.
//!
//! The model is linear in its sub-Markov parameters once the unknown
//! innovations are replaced by the previous iterate's residuals, so each
//! iteration is a single ridge-regularized least-squares solve.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::lpv_ss::DataSet;
use crate::markov::{Path, SubMarkovTable};
use crate::multi_index::lifted_products;
use crate::predictor::{loss, residuals, MaxModel, ResidualSeries};
use crate::signal::Signal;

/// Relative singular-value threshold for the numerical rank.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orders {
    pub n_b: usize,
    pub n_c: usize,
}

impl Orders {
    pub fn new(n_b: usize, n_c: usize) -> Self {
        Self { n_b, n_c }
    }

    pub fn max(&self) -> usize {
        self.n_b.max(self.n_c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlrConfig {
    /// Ridge weight on the process parameters.
    pub lambda_proc: f64,
    /// Ridge weight on the noise parameters.
    pub lambda_noise: f64,
    pub max_iters: usize,
    /// Stop when `‖θ_k − θ_{k−1}‖ / ‖θ_{k−1}‖` drops below this.
    pub tol: f64,
    /// Leading samples left out of the regression and the loss.
    pub burn_in: usize,
}

impl Default for PlrConfig {
    fn default() -> Self {
        Self::noisy()
    }
}

impl PlrConfig {
    /// Regularization tuned for noise-free data.
    pub fn noiseless() -> Self {
        Self {
            lambda_proc: 1.0,
            lambda_noise: 100.0,
            max_iters: 50,
            tol: 1e-6,
            burn_in: 0,
        }
    }

    /// Regularization tuned for noisy data.
    pub fn noisy() -> Self {
        Self {
            lambda_proc: 0.1,
            lambda_noise: 1.0,
            ..Self::noiseless()
        }
    }

    /// `None` means an infinite SNR.
    pub fn for_snr(snr_db: Option<f64>) -> Self {
        match snr_db {
            None => Self::noiseless(),
            Some(_) => Self::noisy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_proc >= 0.0 && self.lambda_noise >= 0.0) {
            return Err(Error::Config("ridge weights must be nonnegative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Regressor of one time sample, shared by every output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorRow {
    pub t: usize,
    /// `p_η(t) · u(t − |η| + 1)` stacked over the process strings.
    pub phi_u: Vec<f64>,
    /// `p_η(t) · ε(t − |η| + 1)` stacked over the noise strings; empty when
    /// no residuals are supplied.
    pub phi_eps: Vec<f64>,
}

/// Process regressor width `n_u Σ_{i=1}^{n_b+1} (1+n_p)^i`.
pub fn process_width(n_u: usize, n_p: usize, n_b: usize) -> usize {
    let base = n_p + 1;
    n_u * (1..=n_b + 1).map(|i| base.pow(i as u32)).sum::<usize>()
}

/// Noise regressor width `n_y Σ_{j=2}^{n_c+1} (1+n_p)^j`.
pub fn noise_width(n_y: usize, n_p: usize, n_c: usize) -> usize {
    let base = n_p + 1;
    n_y * (2..=n_c + 1).map(|j| base.pow(j as u32)).sum::<usize>()
}

/// Fills `row` with `z_η · x(t − |η| + 1)` for strings of length `min_len..=max_len`.
fn lift_into(z: &[f64], x: &Signal, t: usize, base: usize, min_len: usize, max_len: usize, row: &mut [f64]) {
    let dim = x.dim();
    let mut z_off = 0;
    let mut width = 1;
    let mut col = 0;
    for len in 1..=max_len {
        width *= base;
        if len >= min_len {
            let xs = x.row(t - (len - 1));
            for &w in &z[z_off..z_off + width] {
                for (dst, &v) in row[col..col + dim].iter_mut().zip(xs) {
                    *dst = w * v;
                }
                col += dim;
            }
        }
        z_off += width;
    }
}

struct Regressors {
    rows: Vec<usize>,
    phi_u: DMatrix<f64>,
    phi_e: Option<DMatrix<f64>>,
}

fn first_row(data: &DataSet, orders: Orders, burn_in: usize) -> Result<usize> {
    let start = orders.max() + burn_in;
    if data.len() <= start {
        return Err(Error::OutOfRange(format!(
            "{} samples do not exceed max order {} + burn-in {burn_in}",
            data.len(),
            orders.max()
        )));
    }
    Ok(start)
}

fn regressor_matrices(
    data: &DataSet,
    prev_eps: Option<&ResidualSeries>,
    orders: Orders,
    burn_in: usize,
) -> Result<Regressors> {
    let start = first_row(data, orders, burn_in)?;
    if let Some(eps) = prev_eps {
        if eps.eps.len() != data.len() || eps.eps.dim() != data.n_y() {
            return arg(format!(
                "residual series has {} samples of dim {}, data has {} of dim {}",
                eps.eps.len(),
                eps.eps.dim(),
                data.len(),
                data.n_y()
            ));
        }
    }
    let n_p = data.n_p();
    let base = n_p + 1;
    let du = process_width(data.n_u(), n_p, orders.n_b);
    let de = noise_width(data.n_y(), n_p, orders.n_c);
    let rows: Vec<usize> = (start..data.len()).collect();
    let mut phi_u = DMatrix::zeros(rows.len(), du);
    let mut phi_e = prev_eps.map(|_| DMatrix::zeros(rows.len(), de));
    let max_len = orders.max() + 1;
    let mut z = Vec::new();
    let mut buf_u = vec![0.0; du];
    let mut buf_e = vec![0.0; de];
    for (i, &t) in rows.iter().enumerate() {
        lifted_products(&data.p, t, max_len, &mut z);
        lift_into(&z, &data.u, t, base, 1, orders.n_b + 1, &mut buf_u);
        for (j, v) in buf_u.iter().enumerate() {
            phi_u[(i, j)] = *v;
        }
        if let (Some(m), Some(eps)) = (phi_e.as_mut(), prev_eps) {
            lift_into(&z, &eps.eps, t, base, 2, orders.n_c + 1, &mut buf_e);
            for (j, v) in buf_e.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
    }
    Ok(Regressors { rows, phi_u, phi_e })
}

/// Regressor rows for every sample with full history past the burn-in.
pub fn build_regressor(
    data: &DataSet,
    prev_eps: Option<&ResidualSeries>,
    orders: Orders,
    burn_in: usize,
) -> Result<Vec<RegressorRow>> {
    let reg = regressor_matrices(data, prev_eps, orders, burn_in)?;
    Ok(reg
        .rows
        .iter()
        .enumerate()
        .map(|(i, &t)| RegressorRow {
            t,
            phi_u: reg.phi_u.row(i).iter().copied().collect(),
            phi_eps: reg
                .phi_e
                .as_ref()
                .map(|m| m.row(i).iter().copied().collect())
                .unwrap_or_default(),
        })
        .collect())
}

/// `aᵀ b` through the blocked matrix product.
fn cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

/// Numerical rank of a symmetric positive semidefinite matrix and the ratio of
/// its extreme eigenvalues.
fn rank_and_condition(m: &DMatrix<f64>) -> (usize, f64) {
    if m.nrows() == 0 {
        return (0, 1.0);
    }
    let eig = m.symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return (0, f64::INFINITY);
    }
    let rank = eig.iter().filter(|&&v| v > max * RANK_TOL).count();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (rank, cond)
}

/// Solves `(G + diag(penalty)) Θᵀ = rhs`; `rhs` has one column per output.
fn solve_normal(gram: &DMatrix<f64>, rhs: &DMatrix<f64>, penalty: &[f64]) -> Result<DMatrix<f64>> {
    // penalized directions are always well posed, so the regularized matrix
    // is definite exactly when the unpenalized block of the Gram is
    let free: Vec<usize> = (0..penalty.len()).filter(|&i| penalty[i] == 0.0).collect();
    let free_rank = || {
        let sub = gram.select_rows(&free).select_columns(&free);
        rank_and_condition(&sub).0
    };
    if !free.is_empty() {
        let rank = free_rank();
        if rank < free.len() {
            return Err(Error::RankDeficient { rank, required: free.len() });
        }
    }
    let mut m = gram.clone();
    for (i, &l) in penalty.iter().enumerate() {
        m[(i, i)] += l;
    }
    match m.cholesky() {
        Some(ch) => Ok(ch.solve(rhs).transpose()),
        None => Err(Error::RankDeficient {
            rank: free_rank(),
            required: free.len(),
        }),
    }
}

/// Ridge estimate minimizing `Σ_t ‖y(t) − Θ φ(t)‖² + λ_proc ‖θ_proc‖² + λ_noise ‖θ_noise‖²`.
/// Returns `Θ` with one row per output, process columns first.
pub fn ridge_solve(rows: &[RegressorRow], y: &Signal, config: &PlrConfig) -> Result<DMatrix<f64>> {
    config.validate()?;
    let Some(first) = rows.first() else {
        return arg("no regressor rows");
    };
    let (du, de) = (first.phi_u.len(), first.phi_eps.len());
    let d = du + de;
    let mut phi = DMatrix::zeros(rows.len(), d);
    let mut targets = DMatrix::zeros(rows.len(), y.dim());
    for (i, r) in rows.iter().enumerate() {
        if r.phi_u.len() != du || r.phi_eps.len() != de {
            return arg("regressor rows differ in width");
        }
        if r.t >= y.len() {
            return Err(Error::OutOfRange(format!("row time {} beyond targets", r.t)));
        }
        for (j, v) in r.phi_u.iter().chain(&r.phi_eps).enumerate() {
            phi[(i, j)] = *v;
        }
        for (j, v) in y.row(r.t).iter().enumerate() {
            targets[(i, j)] = *v;
        }
    }
    let penalty: Vec<f64> = std::iter::repeat_n(config.lambda_proc, du)
        .chain(std::iter::repeat_n(config.lambda_noise, de))
        .collect();
    solve_normal(&cross(&phi, &phi), &cross(&phi, &targets), &penalty)
}

/// Persistency-of-excitation diagnostic for the lifted input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    /// Numerical rank of the sample covariance of the lifted process regressor.
    pub order: usize,
    /// Order needed to identify every process parameter.
    pub required: usize,
    pub condition: f64,
}

impl Excitation {
    pub fn sufficient(&self) -> bool {
        self.order >= self.required
    }
}

/// Numerical rank and condition number of `(1/N) Σ φ_u φ_uᵀ`, where `φ_u`
/// stacks `p_η(t) u(t − |η| + 1)` over all process strings up to `n_b_hat`.
pub fn excitation_order(data: &DataSet, n_b_hat: usize) -> Result<Excitation> {
    let reg = regressor_matrices(data, None, Orders::new(n_b_hat, 0), 0)?;
    Ok(excitation_of(&cross(&reg.phi_u, &reg.phi_u), reg.rows.len()))
}

fn excitation_of(gram: &DMatrix<f64>, rows: usize) -> Excitation {
    let (order, condition) = rank_and_condition(&(gram / rows as f64));
    Excitation {
        order,
        required: gram.nrows(),
        condition,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationReport {
    pub model: MaxModel,
    pub orders: Orders,
    pub config: PlrConfig,
    /// `V_N` after each iteration; entry 0 is the FIR bootstrap or the
    /// supplied initial model.
    pub loss_per_iter: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub excitation: Excitation,
    /// Condition number of the final regularized normal matrix.
    pub condition_number: f64,
    /// Sample covariance of the final residuals.
    pub sigma_e: DMatrix<f64>,
    pub residuals: ResidualSeries,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    orders: Orders,
    lambda_proc: f64,
    lambda_noise: f64,
    loss_per_iter: &'a [f64],
    iterations_used: usize,
    converged: bool,
    excitation_order: usize,
    excitation_required: usize,
    condition_number: f64,
    sigma_e: Vec<Vec<f64>>,
    process_tail_norm: f64,
    noise_tail_norm: f64,
    process_table_csv: String,
    noise_table_csv: String,
}

impl EstimationReport {
    /// JSON document with the fit summary and both tables in CSV form.
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let csv_of = |t: &SubMarkovTable| -> Result<String> {
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            Ok(String::from_utf8(buf).expect("csv is utf-8"))
        };
        let doc = ReportDoc {
            orders: self.orders,
            lambda_proc: self.config.lambda_proc,
            lambda_noise: self.config.lambda_noise,
            loss_per_iter: &self.loss_per_iter,
            iterations_used: self.iterations_used,
            converged: self.converged,
            excitation_order: self.excitation.order,
            excitation_required: self.excitation.required,
            condition_number: self.condition_number,
            sigma_e: crate::lpv_ss::to_rows(&self.sigma_e),
            process_tail_norm: self.model.proc().tail_norm(),
            noise_tail_norm: self.model.noise().tail_norm(),
            process_table_csv: csv_of(self.model.proc())?,
            noise_table_csv: csv_of(self.model.noise())?,
        };
        serde_json::to_writer_pretty(w, &doc)?;
        Ok(())
    }
}

fn residual_covariance(res: &ResidualSeries) -> DMatrix<f64> {
    let n_y = res.eps.dim();
    let mut s = DMatrix::zeros(n_y, n_y);
    for t in res.valid_from..res.eps.len() {
        let e = res.eps.row(t);
        for i in 0..n_y {
            for j in 0..n_y {
                s[(i, j)] += e[i] * e[j];
            }
        }
    }
    s / res.valid_count().max(1) as f64
}

fn model_from_theta(theta: &DMatrix<f64>, data: &DataSet, orders: Orders, du: usize) -> Result<MaxModel> {
    let n_y = data.n_y();
    let g = theta.columns(0, du).into_owned();
    let h = theta.columns(du, theta.ncols() - du).into_owned();
    let h = if h.ncols() == 0 {
        DMatrix::zeros(n_y, noise_width(n_y, data.n_p(), orders.n_c))
    } else {
        h
    };
    MaxModel::new(
        SubMarkovTable::from_param_matrix(Path::Process, data.n_u(), data.n_p(), orders.n_b, &g)?,
        SubMarkovTable::from_param_matrix(Path::Noise, n_y, data.n_p(), orders.n_c, &h)?,
    )
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let denom = old.norm();
    let diff = (new - old).norm();
    if denom > 0.0 {
        diff / denom
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Pseudo-linear regression starting from the FIR bootstrap (`Ĉ = I`).
pub fn plr_fit(data: &DataSet, orders: Orders, config: &PlrConfig) -> Result<EstimationReport> {
    plr_fit_from(data, orders, config, None)
}

/// Pseudo-linear regression; with `init`, the first residuals come from that
/// model instead of the FIR bootstrap.
pub fn plr_fit_from(
    data: &DataSet,
    orders: Orders,
    config: &PlrConfig,
    init: Option<&MaxModel>,
) -> Result<EstimationReport> {
    config.validate()?;
    let base = regressor_matrices(data, None, orders, config.burn_in)?;
    let du = base.phi_u.ncols();
    let de = noise_width(data.n_y(), data.n_p(), orders.n_c);
    let mut targets = DMatrix::zeros(base.rows.len(), data.n_y());
    for (i, &t) in base.rows.iter().enumerate() {
        for (j, v) in data.y.row(t).iter().enumerate() {
            targets[(i, j)] = *v;
        }
    }
    let g_uu = cross(&base.phi_u, &base.phi_u);
    let b_u = cross(&base.phi_u, &targets);
    // excitation is judged on the same window the regression uses
    let excitation = excitation_of(&g_uu, base.rows.len());

    let tag = |iteration: usize| move |e: Error| Error::Iteration {
        iteration,
        source: Box::new(e),
    };

    let (mut theta, mut model) = match init {
        Some(m) => {
            if m.n_b() != orders.n_b || m.n_c() != orders.n_c {
                return arg("initial model orders differ from the requested orders");
            }
            let g = m.proc().to_param_matrix();
            let h = m.noise().to_param_matrix();
            let mut th = DMatrix::zeros(data.n_y(), du + de);
            th.columns_mut(0, du).copy_from(&g);
            th.columns_mut(du, de).copy_from(&h);
            (th, m.clone())
        }
        None => {
            let g = solve_normal(&g_uu, &b_u, &vec![config.lambda_proc; du]).map_err(tag(0))?;
            let mut th = DMatrix::zeros(data.n_y(), du + de);
            th.columns_mut(0, du).copy_from(&g);
            let m = model_from_theta(&th, data, orders, du)?;
            (th, m)
        }
    };
    let mut res = residuals(&model, data).map_err(tag(0))?.with_burn_in(config.burn_in);
    let mut losses = vec![loss(&res)];
    let penalty: Vec<f64> = std::iter::repeat_n(config.lambda_proc, du)
        .chain(std::iter::repeat_n(config.lambda_noise, de))
        .collect();
    let mut last_normal: Option<DMatrix<f64>> = None;
    let mut converged = false;

    if de == 0 {
        // no noise parameters: the bootstrap already is the least-squares fit
        converged = init.is_none();
    }

    let mut iteration = 0;
    while !converged && iteration + 1 < config.max_iters {
        iteration += 1;
        // residuals before the regression window still feed lagged regressors
        let full_res = ResidualSeries {
            eps: res.eps.clone(),
            valid_from: model.valid_from(),
        };
        let reg = regressor_matrices(data, Some(&full_res), orders, config.burn_in)?;
        let phi_e = reg.phi_e.expect("residuals supplied");
        let mut gram = DMatrix::zeros(du + de, du + de);
        gram.view_mut((0, 0), (du, du)).copy_from(&g_uu);
        let g_ue = cross(&base.phi_u, &phi_e);
        gram.view_mut((0, du), (du, de)).copy_from(&g_ue);
        gram.view_mut((du, 0), (de, du)).copy_from(&g_ue.transpose());
        gram.view_mut((du, du), (de, de)).copy_from(&cross(&phi_e, &phi_e));
        let mut rhs = DMatrix::zeros(du + de, data.n_y());
        rhs.view_mut((0, 0), (du, data.n_y())).copy_from(&b_u);
        rhs.view_mut((du, 0), (de, data.n_y())).copy_from(&cross(&phi_e, &targets));

        let new_theta = solve_normal(&gram, &rhs, &penalty).map_err(tag(iteration))?;
        let change = relative_change(&new_theta, &theta);
        theta = new_theta;
        model = model_from_theta(&theta, data, orders, du).map_err(tag(iteration))?;
        res = residuals(&model, data)
            .map_err(tag(iteration))?
            .with_burn_in(config.burn_in);
        losses.push(loss(&res));
        last_normal = Some(gram);
        if change < config.tol {
            converged = true;
        }
    }

    let condition_number = {
        let mut m = match last_normal {
            Some(g) => g,
            None => {
                let mut g = DMatrix::zeros(du + de, du + de);
                g.view_mut((0, 0), (du, du)).copy_from(&g_uu);
                g
            }
        };
        for (i, &l) in penalty.iter().enumerate() {
            m[(i, i)] += l;
        }
        rank_and_condition(&m).1
    };

    Ok(EstimationReport {
        sigma_e: residual_covariance(&res),
        model,
        orders,
        config: *config,
        iterations_used: losses.len(),
        loss_per_iter: losses,
        converged,
        excitation,
        condition_number,
        residuals: res,
    })
}
