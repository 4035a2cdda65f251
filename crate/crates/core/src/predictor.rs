//! One-step-ahead prediction with an LPV-MAX model
//! `y = B̂(p, q⁻¹) u + Ĉ(p, q⁻¹) ε`, where `Ĉ` is monic.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{arg, Error, Result};
use crate::lpv_ss::{DataSet, LpvSsModel};
use crate::markov::{check_pair, sub_markov_from_ss, Path, SubMarkovTable};
use crate::multi_index::lifted_products;
use crate::signal::Signal;

#[derive(Clone, Debug, PartialEq)]
pub struct MaxModel {
    proc: SubMarkovTable,
    noise: SubMarkovTable,
}

impl MaxModel {
    pub fn new(proc: SubMarkovTable, noise: SubMarkovTable) -> Result<Self> {
        check_pair(&proc, &noise, proc.n_in(), proc.n_p())?;
        let finite = |t: &SubMarkovTable| t.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite(&proc) || !finite(&noise) {
            return arg("MAX model coefficients must be finite");
        }
        Ok(Self { proc, noise })
    }

    /// Truncated impulse-response tables of a state-space model.
    pub fn from_ss(model: &LpvSsModel, n_b: usize, n_c: usize) -> Self {
        Self {
            proc: sub_markov_from_ss(model, Path::Process, n_b),
            noise: sub_markov_from_ss(model, Path::Noise, n_c),
        }
    }

    pub fn proc(&self) -> &SubMarkovTable {
        &self.proc
    }
    pub fn noise(&self) -> &SubMarkovTable {
        &self.noise
    }
    pub fn n_u(&self) -> usize {
        self.proc.n_in()
    }
    pub fn n_y(&self) -> usize {
        self.proc.n_y()
    }
    pub fn n_p(&self) -> usize {
        self.proc.n_p()
    }
    pub fn n_b(&self) -> usize {
        self.proc.order()
    }
    pub fn n_c(&self) -> usize {
        self.noise.order()
    }

    /// First sample with complete regressor history.
    pub fn valid_from(&self) -> usize {
        self.n_b().max(self.n_c())
    }

    /// Parameter vector: for each output row, process parameters followed by
    /// noise parameters, rows concatenated.
    pub fn to_theta(&self) -> Vec<f64> {
        let g = self.proc.to_param_matrix();
        let h = self.noise.to_param_matrix();
        let mut out = Vec::with_capacity(g.len() + h.len());
        for r in 0..self.n_y() {
            out.extend(g.row(r).iter());
            out.extend(h.row(r).iter());
        }
        out
    }

    /// Same orders and dimensions with parameters replaced by `theta`.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let n_y = self.n_y();
        let (dg, dh) = (
            self.proc.blocks().len() * self.n_u(),
            self.noise.blocks().len() * n_y,
        );
        if theta.len() != n_y * (dg + dh) {
            return arg(format!(
                "theta has {} entries, model needs {}",
                theta.len(),
                n_y * (dg + dh)
            ));
        }
        let g = DMatrix::from_fn(n_y, dg, |r, c| theta[r * (dg + dh) + c]);
        let h = DMatrix::from_fn(n_y, dh, |r, c| theta[r * (dg + dh) + dg + c]);
        Self::new(
            SubMarkovTable::from_param_matrix(Path::Process, self.n_u(), self.n_p(), self.n_b(), &g)?,
            SubMarkovTable::from_param_matrix(Path::Noise, n_y, self.n_p(), self.n_c(), &h)?,
        )
    }

    fn check_data(&self, data: &DataSet) -> Result<()> {
        if data.n_u() != self.n_u() || data.n_y() != self.n_y() || data.n_p() != self.n_p() {
            return arg("data dimensions do not match the MAX model");
        }
        Ok(())
    }
}

/// One-step-ahead prediction errors `ε(θ, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSeries {
    pub eps: Signal,
    /// Samples before this index are zero-initialized and excluded from
    /// every statistic.
    pub valid_from: usize,
}

impl ResidualSeries {
    pub fn valid_count(&self) -> usize {
        self.eps.len().saturating_sub(self.valid_from)
    }

    /// Drops `burn_in` further samples from the statistics.
    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.valid_from = (self.valid_from + burn_in).min(self.eps.len());
        self
    }

    /// CSV with header `t,eps1..eps{n_y}` over the valid samples; `t` is 1-based.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.eps.dim()).map(|i| format!("eps{i}")));
        wr.write_record(&header)?;
        for t in self.valid_from..self.eps.len() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(self.eps.row(t).iter().map(|v| format!("{v:e}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `out += sign · Σ_η w_η · block_η · x(t − (|η| − 1))` over the stored strings.
pub(crate) fn accumulate(
    table: &SubMarkovTable,
    z: &[f64],
    x: &Signal,
    t: usize,
    sign: f64,
    out: &mut [f64],
) {
    let base = table.n_p() + 1;
    let n_in = table.n_in();
    let blocks = table.blocks();
    let mut block = 0;
    let mut z_off = 0;
    let mut width = 1;
    for len in 1..=table.order() + 1 {
        width *= base;
        if len >= table.path().min_len() {
            let lag = len - 1;
            if lag <= t {
                let xs = x.row(t - lag);
                for &w in &z[z_off..z_off + width] {
                    if w != 0.0 {
                        let b = &blocks[block];
                        for (c, &xc) in xs.iter().enumerate().take(n_in) {
                            let f = sign * w * xc;
                            if f != 0.0 {
                                for (o, &bv) in out.iter_mut().zip(b.column(c).iter()) {
                                    *o += f * bv;
                                }
                            }
                        }
                    }
                    block += 1;
                }
            } else {
                block += width;
            }
        }
        z_off += width;
    }
}

/// Runs the inverse noise filter:
/// `ε(t) = y(t) − Σ_m B̂_m(p,t) u(t−m) − Σ_{m≥1} Ĉ_m(p,t) ε(t−m)`,
/// with `ε(t) = 0` before [`MaxModel::valid_from`].
pub fn residuals(model: &MaxModel, data: &DataSet) -> Result<ResidualSeries> {
    model.check_data(data)?;
    let n = data.len();
    let valid_from = model.valid_from();
    if n <= valid_from {
        return Err(Error::OutOfRange(format!(
            "{n} samples do not exceed the model order {valid_from}"
        )));
    }
    let max_len = valid_from + 1;
    let n_y = model.n_y();
    let mut eps = Signal::zeros(n, n_y);
    let mut z = Vec::new();
    let mut cur = vec![0.0; n_y];
    for t in valid_from..n {
        lifted_products(&data.p, t, max_len, &mut z);
        cur.copy_from_slice(data.y.row(t));
        accumulate(model.proc(), &z, &data.u, t, -1.0, &mut cur);
        accumulate(model.noise(), &z, &eps, t, -1.0, &mut cur);
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(Error::FilterDiverged { t });
        }
        eps.row_mut(t).copy_from_slice(&cur);
    }
    Ok(ResidualSeries { eps, valid_from })
}

/// One-step-ahead predicted output `ŷ = y − ε`.
pub fn predict(model: &MaxModel, data: &DataSet) -> Result<(Signal, usize)> {
    let res = residuals(model, data)?;
    Ok((data.y.sub(&res.eps)?, res.valid_from))
}

/// Lag-`k` noise coefficient `Ĉ_k(p, s)`.
fn noise_coefficient(model: &MaxModel, p: &Signal, s: usize, k: usize, z: &mut Vec<f64>) -> DMatrix<f64> {
    lifted_products(p, s, model.n_c() + 1, z);
    let coefs = model.noise().lag_coefficients(z);
    coefs
        .get(k)
        .cloned()
        .unwrap_or_else(|| DMatrix::zeros(model.n_y(), model.n_y()))
}

/// Impulse-response coefficients `Γ̂_0 … Γ̂_depth` of the inverse noise
/// filter at time `t`:
/// `Γ̂_0 = I`, `Γ̂_i = −Σ_{k=1}^{min(i, n̂_c)} Γ̂_{i−k}(t) Ĉ_k(t − i + k)`.
pub fn gamma_coefficients(
    model: &MaxModel,
    p: &Signal,
    t: usize,
    depth: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if p.dim() != model.n_p() {
        return arg("scheduling dimension does not match the model");
    }
    if t >= p.len() {
        return Err(Error::OutOfRange(format!("t = {t} beyond trajectory")));
    }
    // Ĉ_k(t − i + k) reaches back to p(t − i)
    if depth > t {
        return Err(Error::OutOfRange(format!(
            "depth {depth} needs scheduling history back to t - {depth}, have t = {t}"
        )));
    }
    let n_y = model.n_y();
    let n_c = model.n_c();
    let mut z = Vec::new();
    let mut gamma = vec![DMatrix::identity(n_y, n_y)];
    for i in 1..=depth {
        let mut g = DMatrix::zeros(n_y, n_y);
        for k in 1..=i.min(n_c) {
            let c_k = noise_coefficient(model, p, t - i + k, k, &mut z);
            g -= &gamma[i - k] * c_k;
        }
        gamma.push(g);
    }
    Ok(gamma)
}

/// `V_N = Tr((1/N_valid) Σ ε εᵀ)` over the valid samples.
pub fn loss(res: &ResidualSeries) -> f64 {
    let n = res.valid_count();
    if n == 0 {
        return f64::NAN;
    }
    let sum: f64 = (res.valid_from..res.eps.len())
        .map(|t| res.eps.row(t).iter().map(|v| v * v).sum::<f64>())
        .sum();
    sum / n as f64
}

/// Sample residual correlations `R̄_k = (1/(N_valid − k)) Σ_t ε(t−k) ε(t)ᵀ`,
/// `k = 0..=max_lag`, summing over the pairs that lie inside the valid range.
pub fn residual_autocorr(res: &ResidualSeries, max_lag: usize) -> Result<Vec<DMatrix<f64>>> {
    let n_valid = res.valid_count();
    if max_lag >= n_valid {
        return arg(format!(
            "max_lag {max_lag} must be below the {n_valid} valid residuals"
        ));
    }
    let n_y = res.eps.dim();
    let mut out = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut r = DMatrix::zeros(n_y, n_y);
        for t in res.valid_from + k..res.eps.len() {
            let a = res.eps.row(t - k);
            let b = res.eps.row(t);
            for i in 0..n_y {
                for j in 0..n_y {
                    r[(i, j)] += a[i] * b[j];
                }
            }
        }
        out.push(r / (n_valid - k) as f64);
    }
    Ok(out)
}
