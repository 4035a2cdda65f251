//! Ho-Kalman realization of an LPV state-space model from sub-Markov tables.
//!
//! Block `(r, c)` of the Hankel matrix is the sub-Markov matrix of the
//! concatenated string `r · c`, so `H = O R` with `O` stacking
//! `C_{r1} A_{r2} ⋯ A_{rk}` and `R` stacking `A_{c1} ⋯ A_{c(l−1)} B̃_{cl}`, where
//! `B̃_j = [B_j K_j]` treats the innovation as a second input.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::lpv_ss::{Dims, LpvSsModel};
use crate::markov::{sub_markov_from_ss, Path, SubMarkovTable};
use crate::multi_index::{concat, enumerate_strings, IndexString};

/// Singular values below this fraction of the largest count as zero.
pub const COLLAPSE_TOL: f64 = 1e-12;

/// Default tolerance of [`similarity_check`].
pub const SIMILARITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateDim {
    /// Cut at the largest ratio `σ_k / σ_{k+1}` among values at or above
    /// the median singular value.
    Auto,
    #[serde(untagged)]
    Fixed(usize),
}

impl std::str::FromStr for StateDim {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(StateDim::Auto),
            t => t
                .parse()
                .map(StateDim::Fixed)
                .map_err(|_| Error::Argument(format!("state dimension must be a count or \"auto\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HankelSpec {
    n_p: usize,
    rows: Vec<IndexString>,
    cols: Vec<IndexString>,
    pub n_x: StateDim,
    /// Resolve strings beyond the table order to zero blocks instead of
    /// failing.
    pub zero_fill: bool,
}

impl HankelSpec {
    pub fn new(n_p: usize, rows: Vec<IndexString>, cols: Vec<IndexString>, n_x: StateDim) -> Result<Self> {
        for (name, set) in [("row", &rows), ("column", &cols)] {
            if set.is_empty() {
                return arg(format!("{name} strings must be non-empty"));
            }
            let mut seen = BTreeSet::new();
            for s in set.iter() {
                if s.is_empty() {
                    return arg(format!("{name} strings must not contain the empty string"));
                }
                if s.max_char().unwrap_or(0) > n_p {
                    return arg(format!("{name} string {} exceeds n_p = {n_p}", s.encode(n_p)));
                }
                if !seen.insert(s.clone()) {
                    return arg(format!("duplicate {name} string {}", s.encode(n_p)));
                }
            }
        }
        if n_x == StateDim::Fixed(0) {
            return arg("state dimension must be positive");
        }
        Ok(Self {
            n_p,
            rows,
            cols,
            n_x,
            zero_fill: false,
        })
    }

    /// Rows and columns both hold every string of length `1..=depth`.
    pub fn full(n_p: usize, depth: usize, n_x: StateDim) -> Result<Self> {
        if depth == 0 {
            return arg("basis depth must be at least 1");
        }
        let set = enumerate_strings(n_p, 1, depth)?.strings().to_vec();
        Self::new(n_p, set.clone(), set, n_x)
    }

    /// Parses encoded row and column strings.
    pub fn from_encoded(n_p: usize, rows: &[String], cols: &[String], n_x: StateDim) -> Result<Self> {
        let parse = |v: &[String]| -> Result<Vec<IndexString>> {
            v.iter().map(|s| IndexString::decode(s, n_p)).collect()
        };
        Self::new(n_p, parse(rows)?, parse(cols)?, n_x)
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn rows(&self) -> &[IndexString] {
        &self.rows
    }

    pub fn cols(&self) -> &[IndexString] {
        &self.cols
    }

    fn max_row(&self) -> usize {
        self.rows.iter().map(IndexString::len).max().unwrap_or(0)
    }

    fn max_col(&self) -> usize {
        self.cols.iter().map(IndexString::len).max().unwrap_or(0)
    }

    /// Table order needed for the shifted Hankels.
    pub fn required_order(&self) -> usize {
        self.max_row() + self.max_col()
    }
}

/// `None` is the unshifted Hankel; `Some(i)` inserts character `i` between
/// row and column strings.
pub type Shift = Option<usize>;

/// Which tables contribute columns to a Hankel block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Columns {
    Process,
    Joint,
}

struct Lookup<'a> {
    proc: &'a SubMarkovTable,
    noise: &'a SubMarkovTable,
    zero_fill: bool,
    missing: BTreeSet<IndexString>,
}

impl Lookup<'_> {
    fn block(&mut self, table: &SubMarkovTable, s: &IndexString) -> DMatrix<f64> {
        match table.get(s) {
            Some(b) => b.clone(),
            None => {
                self.missing.insert(s.clone());
                DMatrix::zeros(table.n_y(), table.n_in())
            }
        }
    }

    fn joint(&mut self, s: &IndexString, columns: Columns) -> DMatrix<f64> {
        let g = self.block(self.proc, s);
        if columns == Columns::Process {
            return g;
        }
        let h = self.block(self.noise, s);
        let mut out = DMatrix::zeros(g.nrows(), g.ncols() + h.ncols());
        out.columns_mut(0, g.ncols()).copy_from(&g);
        out.columns_mut(g.ncols(), h.ncols()).copy_from(&h);
        out
    }

    fn finish(self, n_p: usize) -> Result<()> {
        if self.missing.is_empty() {
            return Ok(());
        }
        let names: Vec<String> = self.missing.iter().map(|s| s.encode(n_p)).collect();
        if self.zero_fill {
            log::warn!("hankel truncated: {} strings beyond table order read as zero", names.len());
            Ok(())
        } else {
            Err(Error::Coverage { missing: names })
        }
    }
}

fn stack(
    lookup: &mut Lookup<'_>,
    rows: &[IndexString],
    cols: &[IndexString],
    shift: Shift,
    columns: Columns,
    n_p: usize,
) -> Result<DMatrix<f64>> {
    let n_y = lookup.proc.n_y();
    let width = match columns {
        Columns::Process => lookup.proc.n_in(),
        Columns::Joint => lookup.proc.n_in() + lookup.noise.n_in(),
    };
    let mut h = DMatrix::zeros(rows.len() * n_y, cols.len() * width);
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            let s = concat(r, shift, c, n_p)?;
            let b = lookup.joint(&s, columns);
            h.view_mut((i * n_y, j * width), (n_y, width)).copy_from(&b);
        }
    }
    Ok(h)
}

fn check_tables(proc: &SubMarkovTable, noise: &SubMarkovTable) -> Result<()> {
    if proc.path() != Path::Process || noise.path() != Path::Noise {
        return arg("expected a process table and a noise table");
    }
    if proc.n_y() != noise.n_y() || noise.n_in() != noise.n_y() || proc.n_p() != noise.n_p() {
        return arg("process and noise tables disagree in dimensions");
    }
    Ok(())
}

/// Hankel matrix of the given tables; `columns` selects process-only or
/// joint `[process | noise]` column blocks.
pub fn build_hankel(
    proc: &SubMarkovTable,
    noise: &SubMarkovTable,
    spec: &HankelSpec,
    shift: Shift,
    columns: Columns,
) -> Result<DMatrix<f64>> {
    check_tables(proc, noise)?;
    if spec.n_p != proc.n_p() {
        return arg("basis and tables disagree in n_p");
    }
    if let Some(i) = shift {
        if i > spec.n_p {
            return arg(format!("shift character {i} exceeds n_p"));
        }
    }
    let mut lookup = Lookup {
        proc,
        noise,
        zero_fill: spec.zero_fill,
        missing: BTreeSet::new(),
    };
    let h = stack(&mut lookup, &spec.rows, &spec.cols, shift, columns, spec.n_p)?;
    lookup.finish(spec.n_p)?;
    Ok(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealizedModel {
    /// Realized model with `Σ_e = I`; the innovation covariance is left to
    /// residual statistics.
    pub model: LpvSsModel,
    /// Full spectrum of the factored Hankel, nonincreasing.
    pub singular_values: Vec<f64>,
    /// `σ_{n_x} / σ_{n_x+1}`; infinite when `σ_{n_x+1}` is zero or absent.
    pub rank_gap: f64,
    /// Whether noise columns entered the factored Hankel.
    pub joint_factorization: bool,
}

impl RealizedModel {
    pub fn n_x(&self) -> usize {
        self.model.dims().n_x
    }

    /// One singular value per line with header `index,sigma`.
    pub fn write_spectrum_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "sigma"])?;
        for (i, s) in self.singular_values.iter().enumerate() {
            wr.write_record([(i + 1).to_string(), format!("{s:e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn pick_rank(sv: &[f64], target: StateDim) -> Result<(usize, f64)> {
    let top = sv.first().copied().unwrap_or(0.0);
    let ratio = |k: usize| -> f64 {
        // k is 1-based
        match sv.get(k) {
            Some(&next) if next > 0.0 => sv[k - 1] / next,
            _ => f64::INFINITY,
        }
    };
    let n_x = match target {
        StateDim::Fixed(n) => {
            if n > sv.len() {
                return arg(format!("target state dimension {n} exceeds Hankel rank bound {}", sv.len()));
            }
            n
        }
        StateDim::Auto => {
            let numerical = sv.iter().filter(|&&s| s > COLLAPSE_TOL * top).count();
            // a gap needs a successor, so full rank is never picked by ratio
            let last = numerical.min(sv.len().saturating_sub(1));
            if last == 0 {
                numerical.max(1)
            } else {
                // estimated tables have a noise tail whose own ratios can beat
                // the true gap; only cut above the median singular value
                let floor = sv[sv.len() / 2];
                let mut best = 1;
                let mut best_ratio = 0.0;
                for k in (1..=last).filter(|&k| sv[k - 1] >= floor) {
                    let r = ratio(k);
                    if r > best_ratio {
                        best = k;
                        best_ratio = r;
                    }
                }
                log::debug!("auto state dimension {best} (gap {best_ratio:e})");
                best
            }
        }
    };
    if !(top > 0.0) || sv[n_x - 1] <= COLLAPSE_TOL * top {
        return Err(Error::RankCollapse {
            n_x,
            singular_values: sv.to_vec(),
        });
    }
    Ok((n_x, ratio(n_x)))
}

/// Thin SVD `h = U diag(σ) Vᵀ` with `σ` nonincreasing.
pub fn thin_svd(h: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let m = faer::Mat::<f64>::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)]);
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Internal(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let sv = (0..s.nrows()).map(|i| s[i]).collect();
    let to_dm = |m: faer::MatRef<'_, f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    Ok((sv, to_dm(u), to_dm(v)))
}

/// Realizes `A_i, B_i, C_i, D_i, K_i` from the tables.
///
/// Noise columns join the factored Hankel when the noise table covers every
/// required string; otherwise the factorization uses process columns only and
/// `K_j` is read off the noise blocks `r · j`, which need only one lag beyond
/// the longest row string.
pub fn realize(proc: &SubMarkovTable, noise: &SubMarkovTable, spec: &HankelSpec) -> Result<RealizedModel> {
    check_tables(proc, noise)?;
    if spec.n_p != proc.n_p() {
        return arg("basis and tables disagree in n_p");
    }
    let n_p = spec.n_p;
    let (n_y, n_u) = (proc.n_y(), proc.n_in());
    let joint = noise.order() >= spec.required_order();
    let columns = if joint { Columns::Joint } else { Columns::Process };

    let mut lookup = Lookup {
        proc,
        noise,
        zero_fill: spec.zero_fill,
        missing: BTreeSet::new(),
    };
    let h = stack(&mut lookup, &spec.rows, &spec.cols, None, columns, n_p)?;
    let shifted = (0..=n_p)
        .map(|i| stack(&mut lookup, &spec.rows, &spec.cols, Some(i), columns, n_p))
        .collect::<Result<Vec<_>>>()?;
    let singles: Vec<IndexString> = (0..=n_p).map(IndexString::single).collect();
    // C_i from row string (i); B̃_j from column string (j)
    let c_rows = singles
        .iter()
        .map(|s| stack(&mut lookup, std::slice::from_ref(s), &spec.cols, None, columns, n_p))
        .collect::<Result<Vec<_>>>()?;
    let b_cols = singles
        .iter()
        .map(|s| stack(&mut lookup, &spec.rows, std::slice::from_ref(s), None, Columns::Joint, n_p))
        .collect::<Result<Vec<_>>>()?;
    lookup.finish(n_p)?;

    let (sv, u, v) = thin_svd(&h)?;
    let (n_x, rank_gap) = pick_rank(&sv, spec.n_x)?;

    let mut o_pinv = DMatrix::zeros(n_x, h.nrows());
    let mut r_pinv = DMatrix::zeros(h.ncols(), n_x);
    for (k, s) in sv.iter().take(n_x).map(|s| s.sqrt()).enumerate() {
        o_pinv.row_mut(k).copy_from(&(u.column(k).transpose() / s));
        r_pinv.column_mut(k).copy_from(&(v.column(k) / s));
    }

    let a: Vec<_> = shifted.iter().map(|hi| &o_pinv * hi * &r_pinv).collect();
    let c: Vec<_> = c_rows.iter().map(|hc| hc * &r_pinv).collect();
    let mut b = Vec::with_capacity(n_p + 1);
    let mut k = Vec::with_capacity(n_p + 1);
    for hb in &b_cols {
        let bt = &o_pinv * hb;
        b.push(bt.columns(0, n_u).into_owned());
        k.push(bt.columns(n_u, n_y).into_owned());
    }
    let d: Vec<_> = singles.iter().map(|s| proc.get_or_zero(s)).collect();
    let model = LpvSsModel::new(
        Dims::new(n_x, n_u, n_y, n_p),
        a,
        b,
        c,
        d,
        k,
        DMatrix::identity(n_y, n_y),
    )?;
    Ok(RealizedModel {
        model,
        singular_values: sv,
        rank_gap,
        joint_factorization: joint,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub isomorphic: bool,
    pub max_deviation: f64,
}

/// Compares the process and noise sub-Markov tables of two models for all
/// strings up to length `depth`; equal tables mean equal input-output
/// behavior regardless of state basis.
pub fn similarity_check(a: &LpvSsModel, b: &LpvSsModel, depth: usize) -> Result<Similarity> {
    similarity_check_tol(a, b, depth, SIMILARITY_TOL)
}

pub fn similarity_check_tol(a: &LpvSsModel, b: &LpvSsModel, depth: usize, tol: f64) -> Result<Similarity> {
    let (da, db) = (a.dims(), b.dims());
    if (da.n_u, da.n_y, da.n_p) != (db.n_u, db.n_y, db.n_p) {
        return arg("models differ in input, output or scheduling dimension");
    }
    if depth == 0 {
        return arg("depth must be at least 1");
    }
    let order = depth - 1;
    let mut dev = 0.0_f64;
    for path in [Path::Process, Path::Noise] {
        let ta = sub_markov_from_ss(a, path, order);
        let tb = sub_markov_from_ss(b, path, order);
        dev = dev.max(ta.max_deviation(&tb));
    }
    Ok(Similarity {
        isomorphic: dev < tol,
        max_deviation: dev,
    })
}
