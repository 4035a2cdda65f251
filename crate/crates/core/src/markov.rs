//! Sub-Markov parameters of the process and noise paths.
//!
//! The lag-`m` Markov coefficient of the process path expands as
//! `Σ_η 𝚐_η p_η(t)` over strings `η` of length `m + 1` with
//! `𝚐_η = C_{[η]_1} A_{[η]_2} ⋯ A_{[η]_m} B_{[η]_{m+1}}`; the noise path swaps
//! `B` for `K` and has the identity at lag 0.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{arg, Error, Result};
use crate::lpv_ss::{simulate, LpvSsModel, NoiseSource};
use crate::multi_index::{enumerate_strings, lifted_products, IndexString, StringSet};
use crate::signal::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Path {
    Process,
    Noise,
}

impl Path {
    /// Shortest stored string; the noise lag-0 coefficient is the fixed identity.
    pub fn min_len(self) -> usize {
        match self {
            Path::Process => 1,
            Path::Noise => 2,
        }
    }
}

/// Dense table of sub-Markov matrices keyed by string, lags `0..=order`
/// (noise: `1..=order`). Strings never set are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SubMarkovTable {
    path: Path,
    n_y: usize,
    n_in: usize,
    order: usize,
    strings: StringSet,
    blocks: Vec<DMatrix<f64>>,
}

impl SubMarkovTable {
    pub fn zeros(path: Path, n_y: usize, n_in: usize, n_p: usize, order: usize) -> Self {
        // a noise table of order 0 is just the identity and stores nothing
        let (lo, hi) = (path.min_len(), order + 1);
        let strings = if hi < lo {
            StringSet::empty(n_p)
        } else {
            enumerate_strings(n_p, lo, hi).expect("bounds are ordered")
        };
        let blocks = vec![DMatrix::zeros(n_y, n_in); strings.len()];
        Self {
            path,
            n_y,
            n_in,
            order,
            strings,
            blocks,
        }
    }

    pub fn path(&self) -> Path {
        self.path
    }
    pub fn n_y(&self) -> usize {
        self.n_y
    }
    pub fn n_in(&self) -> usize {
        self.n_in
    }
    pub fn n_p(&self) -> usize {
        self.strings.n_p()
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn is_monic(&self) -> bool {
        self.path == Path::Noise
    }
    pub fn strings(&self) -> &StringSet {
        &self.strings
    }
    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn iter(&self) -> impl Iterator<Item = (&IndexString, &DMatrix<f64>)> {
        self.strings.iter().zip(&self.blocks)
    }

    /// Entry for `eta`; `None` when `eta` lies outside the table's lag range.
    pub fn get(&self, eta: &IndexString) -> Option<&DMatrix<f64>> {
        self.strings.position(eta).map(|i| &self.blocks[i])
    }

    /// Entry for `eta`, zero outside the stored range.
    pub fn get_or_zero(&self, eta: &IndexString) -> DMatrix<f64> {
        self.get(eta)
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.n_y, self.n_in))
    }

    pub fn set(&mut self, eta: &IndexString, value: DMatrix<f64>) -> Result<()> {
        if value.shape() != (self.n_y, self.n_in) {
            return arg("sub-Markov block has the wrong shape");
        }
        match self.strings.position(eta) {
            Some(i) => {
                self.blocks[i] = value;
                Ok(())
            }
            None => arg(format!(
                "string {} outside table range (lengths {}..={})",
                eta.encode(self.n_p()),
                self.path.min_len(),
                self.order + 1
            )),
        }
    }

    pub fn map_blocks(&self, f: impl FnMut(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let mut out = self.clone();
        out.blocks = self.blocks.iter().map(f).collect();
        out
    }

    /// Number of scalar parameters held.
    pub fn parameter_count(&self) -> usize {
        self.blocks.len() * self.n_y * self.n_in
    }

    /// Largest Frobenius norm among the entries at the truncation lag.
    pub fn tail_norm(&self) -> f64 {
        self.iter()
            .filter(|(s, _)| s.len() == self.order + 1)
            .map(|(_, m)| m.norm())
            .fold(0.0, f64::max)
    }

    /// Max absolute entrywise difference, treating missing strings as zero.
    pub fn max_deviation(&self, other: &Self) -> f64 {
        let mut dev = 0.0f64;
        for (s, m) in self.iter() {
            dev = dev.max((m - other.get_or_zero(s)).amax());
        }
        for (s, m) in other.iter() {
            if self.get(s).is_none() {
                dev = dev.max(m.amax());
            }
        }
        dev
    }

    /// Row `r` holds the parameters of output `r`: blocks side by side in
    /// string order, `n_in` columns each.
    pub fn to_param_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_y, self.blocks.len() * self.n_in);
        for (i, b) in self.blocks.iter().enumerate() {
            out.view_mut((0, i * self.n_in), (self.n_y, self.n_in)).copy_from(b);
        }
        out
    }

    pub fn from_param_matrix(
        path: Path,
        n_in: usize,
        n_p: usize,
        order: usize,
        params: &DMatrix<f64>,
    ) -> Result<Self> {
        let mut t = Self::zeros(path, params.nrows(), n_in, n_p, order);
        if params.ncols() != t.blocks.len() * n_in {
            return arg(format!(
                "parameter matrix has {} columns, table needs {}",
                params.ncols(),
                t.blocks.len() * n_in
            ));
        }
        for (i, b) in t.blocks.iter_mut().enumerate() {
            b.copy_from(&params.view((0, i * n_in), (params.nrows(), n_in)));
        }
        Ok(t)
    }

    /// Lag coefficients `[coef_0, …, coef_order]` at one time instant given the
    /// lifted scheduling products `z` from [`lifted_products`]. The noise path
    /// reports the identity at lag 0.
    pub fn lag_coefficients(&self, z: &[f64]) -> Vec<DMatrix<f64>> {
        let base = self.n_p() + 1;
        let mut out = Vec::with_capacity(self.order + 1);
        if self.path == Path::Noise {
            out.push(DMatrix::identity(self.n_y, self.n_in));
        }
        let mut block = 0;
        // offset of the first length-L string in z
        let mut z_off = 0;
        let mut width = 1;
        for len in 1..=self.order + 1 {
            width *= base;
            if len >= self.path.min_len() {
                let mut acc = DMatrix::zeros(self.n_y, self.n_in);
                for w in &z[z_off..z_off + width] {
                    if *w != 0.0 {
                        acc += &self.blocks[block] * *w;
                    }
                    block += 1;
                }
                out.push(acc);
            }
            z_off += width;
        }
        out
    }

    /// CSV with header `string,row,col,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["string", "row", "col", "value"])?;
        let n_p = self.n_p();
        for (s, m) in self.iter() {
            for r in 0..self.n_y {
                for c in 0..self.n_in {
                    wr.write_record([
                        s.encode(n_p),
                        r.to_string(),
                        c.to_string(),
                        format!("{:e}", m[(r, c)]),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). Dimensions and
    /// order are inferred from the largest indices present.
    pub fn read_csv<R: Read>(r: R, path: Path, n_p: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return arg("table rows need 4 fields");
            }
            let s = IndexString::decode(&rec[0], n_p)?;
            let parse_idx = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Argument(format!("bad index {v:?}")))
            };
            let val = rec[3]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Argument(format!("bad value {:?}", &rec[3])))?;
            rows.push((s, parse_idx(&rec[1])?, parse_idx(&rec[2])?, val));
        }
        if rows.is_empty() {
            return arg("empty sub-Markov table");
        }
        let n_y = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
        let n_in = rows.iter().map(|r| r.2).max().unwrap_or(0) + 1;
        let max_len = rows.iter().map(|r| r.0.len()).max().unwrap_or(1);
        let mut table = Self::zeros(path, n_y, n_in, n_p, max_len.saturating_sub(1));
        for (s, r, c, v) in rows {
            let idx = table.strings.position(&s).ok_or_else(|| {
                Error::Argument(format!("string {} not valid for this table", s.encode(n_p)))
            })?;
            table.blocks[idx][(r, c)] = v;
        }
        Ok(table)
    }
}

/// Closed-form sub-Markov table of a state-space model up to lag `order`.
pub fn sub_markov_from_ss(model: &LpvSsModel, path: Path, order: usize) -> SubMarkovTable {
    let dims = model.dims();
    let n_in = match path {
        Path::Process => dims.n_u,
        Path::Noise => dims.n_y,
    };
    let last = match path {
        Path::Process => model.b(),
        Path::Noise => model.k(),
    };
    let mut table = SubMarkovTable::zeros(path, dims.n_y, n_in, dims.n_p, order);
    let base = dims.n_p + 1;

    // prefixes[w] = C_{w1} A_{w2} ⋯ A_{wℓ} for all words of the current length
    let mut prefixes: Vec<DMatrix<f64>> = model.c().to_vec();
    let mut block = 0;
    if path == Path::Process {
        for d in model.d() {
            table.blocks[block] = d.clone();
            block += 1;
        }
    }
    for lag in 1..=order {
        for pre in &prefixes {
            for l in last {
                table.blocks[block] = pre * l;
                block += 1;
            }
        }
        if lag < order {
            let mut next = Vec::with_capacity(prefixes.len() * base);
            for pre in &prefixes {
                for a in model.a() {
                    next.push(pre * a);
                }
            }
            prefixes = next;
        }
    }
    debug_assert_eq!(block, table.blocks.len());
    table
}

/// Sub-Markov matrix for `eta` recovered purely from impulse-response
/// simulations of `model`.
///
/// For a string of length `L` every elementary scheduling assignment
/// `p(m − k + 1) ∈ {0, e_1, …, e_{n_p}}` (`k = 1..L`, `m = L − 1`) is simulated;
/// each output `y(m)` is the sum of the sub-Markov matrices whose characters
/// are either `0` or the assigned channel at every position. The resulting
/// 0/1 system is solved for all strings of length `L` at once.
pub fn impulse_oracle(model: &LpvSsModel, path: Path, eta: &IndexString) -> Result<DMatrix<f64>> {
    let dims = model.dims();
    let n_p = dims.n_p;
    if eta.len() < path.min_len() {
        return arg(format!(
            "string length {} below the minimum {} for this path",
            eta.len(),
            path.min_len()
        ));
    }
    if eta.max_char().unwrap_or(0) > n_p {
        return arg("string uses characters beyond n_p");
    }
    let len = eta.len();
    let m = len - 1;
    let n_in = match path {
        Path::Process => dims.n_u,
        Path::Noise => dims.n_y,
    };
    let set = enumerate_strings(n_p, len, len)?;
    let count = set.len();

    // responses[a] stacks y(m) for an impulse on each input channel
    let mut responses = DMatrix::zeros(count, dims.n_y * n_in);
    for (a_idx, assignment) in set.iter().enumerate() {
        let mut p = Signal::zeros(len, n_p);
        for (k, &ch) in assignment.chars().iter().enumerate() {
            if ch > 0 {
                p.row_mut(m - k)[ch - 1] = 1.0;
            }
        }
        for j in 0..n_in {
            let mut u = Signal::zeros(len, dims.n_u);
            let mut e = Signal::zeros(len, dims.n_y);
            match path {
                Path::Process => u.row_mut(0)[j] = 1.0,
                Path::Noise => e.row_mut(0)[j] = 1.0,
            }
            let (y, _) = simulate(model, &u, &p, NoiseSource::Sequence(&e), None)?;
            for r in 0..dims.n_y {
                responses[(a_idx, r * n_in + j)] = y.row(m)[r];
            }
        }
    }

    let mut system = DMatrix::zeros(count, count);
    for (a_idx, a) in set.iter().enumerate() {
        for (s_idx, s) in set.iter().enumerate() {
            let hit = s
                .chars()
                .iter()
                .zip(a.chars())
                .all(|(&sc, &ac)| sc == 0 || sc == ac);
            if hit {
                system[(a_idx, s_idx)] = 1.0;
            }
        }
    }
    let solution = system
        .lu()
        .solve(&responses)
        .ok_or_else(|| Error::Internal("singular disentangling system".into()))?;
    let row = set
        .position(eta)
        .ok_or_else(|| Error::Internal("string missing from its own length set".into()))?;
    Ok(DMatrix::from_fn(dims.n_y, n_in, |r, j| {
        solution[(row, r * n_in + j)]
    }))
}

/// Output of a truncated impulse-response model.
#[derive(Clone, Debug, PartialEq)]
pub struct FirOutput {
    pub y: Signal,
    /// First index whose regressor history lies entirely inside the data.
    pub valid_from: usize,
}

/// `y(t) = Σ_m B_m(p,t) u(t−m) + e(t) + Σ_{m≥1} C_m(p,t) e(t−m)`, with signals
/// taken as zero before `t = 0`.
pub fn fir_output(
    proc: &SubMarkovTable,
    noise: &SubMarkovTable,
    u: &Signal,
    p: &Signal,
    e: &Signal,
) -> Result<FirOutput> {
    let n = u.len();
    if p.len() != n || e.len() != n {
        return arg("u, p, e must have equal length");
    }
    check_pair(proc, noise, u.dim(), p.dim())?;
    if e.dim() != noise.n_y() {
        return arg("e has the wrong dimension");
    }
    let valid_from = proc.order().max(noise.order());
    if n <= valid_from {
        return Err(Error::OutOfRange(format!(
            "{n} samples do not cover truncation order {valid_from}"
        )));
    }
    let n_y = proc.n_y();
    let max_len = valid_from + 1;
    let mut y = Signal::zeros(n, n_y);
    let mut z = Vec::new();
    for t in 0..n {
        lifted_products(p, t, max_len, &mut z);
        let mut yt = nalgebra::DVector::from_column_slice(e.row(t));
        for (m, coef) in proc.lag_coefficients(&z).iter().enumerate() {
            if m <= t {
                yt += coef * nalgebra::DVector::from_column_slice(u.row(t - m));
            }
        }
        for (m, coef) in noise.lag_coefficients(&z).iter().enumerate().skip(1) {
            if m <= t {
                yt += coef * nalgebra::DVector::from_column_slice(e.row(t - m));
            }
        }
        y.row_mut(t).copy_from_slice(yt.as_slice());
    }
    Ok(FirOutput { y, valid_from })
}

pub(crate) fn check_pair(
    proc: &SubMarkovTable,
    noise: &SubMarkovTable,
    n_u: usize,
    n_p: usize,
) -> Result<()> {
    if proc.path() != Path::Process || noise.path() != Path::Noise {
        return arg("expected a (process, noise) table pair");
    }
    if proc.n_y() != noise.n_y() || noise.n_in() != noise.n_y() {
        return arg("process and noise tables disagree on n_y");
    }
    if proc.n_in() != n_u || proc.n_p() != n_p || noise.n_p() != n_p {
        return arg("tables do not match the signal dimensions");
    }
    Ok(())
}

/// Model family for [`count_parameters`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Truncated MAX model with process order `n_b` and noise order `n_c`.
    Max { n_b: usize, n_c: usize },
    /// Truncated LPV-ARX form with input order `n_a` and output order `n_d`.
    Arx { n_a: usize, n_d: usize },
}

/// Number of scalar parameters of an LPV-MAX or LPV-ARX model.
pub fn count_parameters(kind: ModelKind, n_u: usize, n_y: usize, n_p: usize) -> u128 {
    let base = 1 + n_p as u128;
    let (n_u, n_y) = (n_u as u128, n_y as u128);
    let pow = |e: usize| base.pow(e as u32);
    match kind {
        ModelKind::Max { n_b, n_c } => {
            let proc: u128 = (1..=n_b + 1).map(pow).sum();
            let noise: u128 = (2..=n_c + 1).map(pow).sum();
            n_y * (n_u * proc + n_y * noise)
        }
        ModelKind::Arx { n_a, n_d } => {
            let proc: u128 = (0..=n_a).map(|i| pow(2 * i + 1)).sum();
            let out: u128 = (1..=n_d).map(|j| pow(2 * j)).sum();
            n_y * (n_u * proc + n_y * out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpv_ss::{random_stable_model, Dims};

    #[test]
    fn benchmark_size_parameter_counts() {
        assert_eq!(count_parameters(ModelKind::Max { n_b: 2, n_c: 2 }, 2, 2, 2), 300);
        assert_eq!(count_parameters(ModelKind::Arx { n_a: 2, n_d: 2 }, 2, 2, 2), 1452);
        assert_eq!(count_parameters(ModelKind::Max { n_b: 3, n_c: 2 }, 1, 1, 0), 6);
    }

    #[test]
    fn table_sizes_match_counts() {
        let dims = Dims::new(2, 2, 2, 2);
        let m = random_stable_model(dims, 0, 0.5).unwrap();
        let g = sub_markov_from_ss(&m, Path::Process, 4);
        let h = sub_markov_from_ss(&m, Path::Noise, 2);
        assert_eq!(g.blocks().len(), 3 + 9 + 27 + 81 + 243);
        assert_eq!(
            (g.parameter_count() + h.parameter_count()) as u128,
            count_parameters(ModelKind::Max { n_b: 4, n_c: 2 }, 2, 2, 2)
        );
    }

    #[test]
    fn lti_scalar_entry() {
        let mut m = LpvSsModel::zeros(Dims::new(1, 1, 1, 0));
        m.a_mut()[0][(0, 0)] = 0.5;
        m.b_mut()[0][(0, 0)] = 2.0;
        m.c_mut()[0][(0, 0)] = 3.0;
        m.d_mut()[0][(0, 0)] = 7.0;
        let g = sub_markov_from_ss(&m, Path::Process, 2);
        assert_eq!(g.get(&IndexString::from_chars(&[0])).unwrap()[(0, 0)], 7.0);
        assert_eq!(g.get(&IndexString::from_chars(&[0, 0, 0])).unwrap()[(0, 0)], 3.0 * 0.5 * 2.0);
        let oracle = impulse_oracle(&m, Path::Process, &IndexString::from_chars(&[0, 0])).unwrap();
        assert!((oracle[(0, 0)] - 6.0).abs() < 1e-14);
    }

    #[test]
    fn noise_lag_one_is_c_times_k() {
        let m = random_stable_model(Dims::new(3, 1, 2, 2), 5, 0.6).unwrap();
        let h = sub_markov_from_ss(&m, Path::Noise, 1);
        for i in 0..=2 {
            for j in 0..=2 {
                let got = h.get(&IndexString::from_chars(&[i, j])).unwrap();
                assert!((got - &m.c()[i] * &m.k()[j]).amax() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_model_oracle_is_zero() {
        let m = LpvSsModel::zeros(Dims::new(2, 1, 1, 2));
        for s in enumerate_strings(2, 2, 3).unwrap().iter() {
            assert_eq!(impulse_oracle(&m, Path::Noise, s).unwrap().amax(), 0.0);
        }
    }

    #[test]
    fn noise_oracle_rejects_lag_zero() {
        let m = LpvSsModel::zeros(Dims::new(1, 1, 1, 1));
        assert!(impulse_oracle(&m, Path::Noise, &IndexString::single(0)).is_err());
    }

    #[test]
    fn feedthrough_fir() {
        let mut m = LpvSsModel::zeros(Dims::new(1, 2, 2, 1));
        m.d_mut()[0] = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        m.d_mut()[1] = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -1.0]);
        let g = sub_markov_from_ss(&m, Path::Process, 0);
        let h = sub_markov_from_ss(&m, Path::Noise, 0);
        let u = Signal::from_rows(2, &[vec![1.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let p = Signal::from_rows(1, &[vec![0.5], vec![-1.0]]).unwrap();
        let e = Signal::from_rows(2, &[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let out = fir_output(&g, &h, &u, &p, &e).unwrap();
        let (y_ss, _) = simulate(&m, &u, &p, NoiseSource::Sequence(&e), None).unwrap();
        for (a, b) in out.y.as_slice().iter().zip(y_ss.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fir_needs_history() {
        let g = SubMarkovTable::zeros(Path::Process, 1, 1, 0, 3);
        let h = SubMarkovTable::zeros(Path::Noise, 1, 1, 0, 1);
        let s = Signal::zeros(3, 1);
        let err = fir_output(&g, &h, &s, &Signal::empty_channels(3), &s).unwrap_err();
        assert!(matches!(err, Error::OutOfRange(_)));
    }

    #[test]
    fn csv_round_trip() {
        let m = random_stable_model(Dims::new(2, 2, 2, 2), 9, 0.5).unwrap();
        let g = sub_markov_from_ss(&m, Path::Process, 2);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("string,row,col,value\n0,0,0,"));
        let back = SubMarkovTable::read_csv(&buf[..], Path::Process, 2).unwrap();
        assert!(back.max_deviation(&g) == 0.0);
    }

    #[test]
    fn param_matrix_round_trip() {
        let m = random_stable_model(Dims::new(2, 1, 2, 1), 2, 0.5).unwrap();
        let h = sub_markov_from_ss(&m, Path::Noise, 3);
        let back =
            SubMarkovTable::from_param_matrix(Path::Noise, 2, 1, 3, &h.to_param_matrix()).unwrap();
        assert_eq!(back, h);
    }
}
