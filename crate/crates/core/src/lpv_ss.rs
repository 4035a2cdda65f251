//! LPV state-space models in innovation form with affine, static scheduling
//! dependence:
//!
//! ```text
//! x(t+1) = A(p) x(t) + B(p) u(t) + K(p) e(t)
//! y(t)   = C(p) x(t) + D(p) u(t) + e(t)
//! ```
//!
//! with `A(p) = A_0 + Σ_i A_i p_i` and likewise for `B, C, D, K`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::signal::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_p: usize,
}

impl Dims {
    pub fn new(n_x: usize, n_u: usize, n_y: usize, n_p: usize) -> Self {
        Self { n_x, n_u, n_y, n_p }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpvSsModel {
    dims: Dims,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    d: Vec<DMatrix<f64>>,
    k: Vec<DMatrix<f64>>,
    sigma_e: DMatrix<f64>,
}

fn check_blocks(name: &str, blocks: &[DMatrix<f64>], n_p: usize, r: usize, c: usize) -> Result<()> {
    if blocks.len() != n_p + 1 {
        return arg(format!("{name}: expected {} blocks, got {}", n_p + 1, blocks.len()));
    }
    for (i, m) in blocks.iter().enumerate() {
        if m.shape() != (r, c) {
            return arg(format!(
                "{name}[{i}] is {}x{}, expected {r}x{c}",
                m.nrows(),
                m.ncols()
            ));
        }
    }
    Ok(())
}

impl LpvSsModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dims: Dims,
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
        d: Vec<DMatrix<f64>>,
        k: Vec<DMatrix<f64>>,
        sigma_e: DMatrix<f64>,
    ) -> Result<Self> {
        let Dims { n_x, n_u, n_y, n_p } = dims;
        check_blocks("A", &a, n_p, n_x, n_x)?;
        check_blocks("B", &b, n_p, n_x, n_u)?;
        check_blocks("C", &c, n_p, n_y, n_x)?;
        check_blocks("D", &d, n_p, n_y, n_u)?;
        check_blocks("K", &k, n_p, n_x, n_y)?;
        if sigma_e.shape() != (n_y, n_y) {
            return arg("Sigma_e must be n_y x n_y");
        }
        let asym = (&sigma_e - sigma_e.transpose()).amax();
        if asym > 1e-12 * sigma_e.amax().max(1.0) {
            return arg("Sigma_e is not symmetric");
        }
        if n_y > 0 && sigma_e.clone().cholesky().is_none() {
            return arg("Sigma_e is not positive definite");
        }
        Ok(Self {
            dims,
            a,
            b,
            c,
            d,
            k,
            sigma_e,
        })
    }

    /// All coefficient blocks zero, `Σ_e = I`.
    pub fn zeros(dims: Dims) -> Self {
        let Dims { n_x, n_u, n_y, n_p } = dims;
        let rep = |r, c| vec![DMatrix::zeros(r, c); n_p + 1];
        Self {
            dims,
            a: rep(n_x, n_x),
            b: rep(n_x, n_u),
            c: rep(n_y, n_x),
            d: rep(n_y, n_u),
            k: rep(n_x, n_y),
            sigma_e: DMatrix::identity(n_y, n_y),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn a(&self) -> &[DMatrix<f64>] {
        &self.a
    }
    pub fn b(&self) -> &[DMatrix<f64>] {
        &self.b
    }
    pub fn c(&self) -> &[DMatrix<f64>] {
        &self.c
    }
    pub fn d(&self) -> &[DMatrix<f64>] {
        &self.d
    }
    pub fn k(&self) -> &[DMatrix<f64>] {
        &self.k
    }
    pub fn sigma_e(&self) -> &DMatrix<f64> {
        &self.sigma_e
    }

    pub fn a_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.a
    }
    pub fn b_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.b
    }
    pub fn c_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.c
    }
    pub fn d_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.d
    }
    pub fn k_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.k
    }

    pub fn with_sigma_e(self, sigma_e: DMatrix<f64>) -> Result<Self> {
        let Self { dims, a, b, c, d, k, .. } = self;
        Self::new(dims, a, b, c, d, k, sigma_e)
    }

    /// State transformation `x' = T x`: `(T A T⁻¹, T B, C T⁻¹, D, T K)`.
    pub fn transformed(&self, t: &DMatrix<f64>) -> Result<Self> {
        let n_x = self.dims.n_x;
        if t.shape() != (n_x, n_x) {
            return arg("transformation must be n_x x n_x");
        }
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Argument("transformation is singular".into()))?;
        let mut out = self.clone();
        for i in 0..=self.dims.n_p {
            out.a[i] = t * &self.a[i] * &t_inv;
            out.b[i] = t * &self.b[i];
            out.c[i] = &self.c[i] * &t_inv;
            out.k[i] = t * &self.k[i];
        }
        Ok(out)
    }

    /// Max spectral radius of `A(p)` over the vertices `p ∈ {−1, 1}^{n_p}`.
    pub fn vertex_spectral_radius(&self) -> f64 {
        vertex_radius(&self.a, self.dims.n_p)
    }

    /// Max spectral radius of the predictor dynamics `A(p) − K(p) C(p)` over
    /// the vertices.
    pub fn predictor_vertex_spectral_radius(&self) -> f64 {
        let n_p = self.dims.n_p;
        let mut worst = 0.0f64;
        for v in vertices(n_p) {
            let a = eval_coefficient(&self.a, &v).expect("dims checked");
            let k = eval_coefficient(&self.k, &v).expect("dims checked");
            let c = eval_coefficient(&self.c, &v).expect("dims checked");
            worst = worst.max(spectral_radius(&(a - k * c)));
        }
        worst
    }
}

fn vertices(n_p: usize) -> Vec<Vec<f64>> {
    (0..1usize << n_p)
        .map(|mask| {
            (0..n_p)
                .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect()
        })
        .collect()
}

fn vertex_radius(blocks: &[DMatrix<f64>], n_p: usize) -> f64 {
    vertices(n_p)
        .iter()
        .map(|v| spectral_radius(&eval_coefficient(blocks, v).expect("dims checked")))
        .fold(0.0, f64::max)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `blocks[0] + Σ_{i≥1} blocks[i] · p_t[i−1]`.
pub fn eval_coefficient(blocks: &[DMatrix<f64>], p_t: &[f64]) -> Result<DMatrix<f64>> {
    if blocks.is_empty() {
        return arg("no coefficient blocks");
    }
    if blocks.len() != p_t.len() + 1 {
        return arg(format!(
            "{} blocks but scheduling vector has {} entries",
            blocks.len(),
            p_t.len()
        ));
    }
    let mut out = blocks[0].clone();
    for (blk, &pi) in blocks[1..].iter().zip(p_t) {
        if blk.shape() != out.shape() {
            return arg("coefficient blocks differ in shape");
        }
        out += blk * pi;
    }
    Ok(out)
}

/// Aligned input, scheduling and output samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSet {
    pub u: Signal,
    pub p: Signal,
    pub y: Signal,
}

impl DataSet {
    pub fn new(u: Signal, p: Signal, y: Signal) -> Result<Self> {
        if u.len() != p.len() || u.len() != y.len() {
            return arg(format!(
                "lengths differ: u {}, p {}, y {}",
                u.len(),
                p.len(),
                y.len()
            ));
        }
        if u.is_empty() {
            return arg("data set must hold at least one sample");
        }
        Ok(Self { u, p, y })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.u.dim()
    }
    pub fn n_p(&self) -> usize {
        self.p.dim()
    }
    pub fn n_y(&self) -> usize {
        self.y.dim()
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.u.slice(start, end),
            self.p.slice(start, end),
            self.y.slice(start, end),
        )
    }

    /// CSV with header `t,u1..,p1..,y1..`; `t` is 1-based.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_u()).map(|i| format!("u{i}")));
        header.extend((1..=self.n_p()).map(|i| format!("p{i}")));
        header.extend((1..=self.n_y()).map(|i| format!("y{i}")));
        wr.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![(t + 1).to_string()];
            for sig in [&self.u, &self.p, &self.y] {
                rec.extend(sig.row(t).iter().map(|v| format!("{v:e}")));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let count = |prefix: char| {
            header
                .iter()
                .filter(|h| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
                .count()
        };
        let (n_u, n_p, n_y) = (count('u'), count('p'), count('y'));
        let mut expected = vec!["t".to_string()];
        expected.extend((1..=n_u).map(|i| format!("u{i}")));
        expected.extend((1..=n_p).map(|i| format!("p{i}")));
        expected.extend((1..=n_y).map(|i| format!("y{i}")));
        if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return arg(format!("unexpected data set header {header:?}"));
        }
        let (mut u, mut p, mut y) = (Vec::new(), Vec::new(), Vec::new());
        let mut rows = 0;
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Argument(format!("bad number {s:?}")))
                })
                .collect::<Result<_>>()?;
            u.extend_from_slice(&vals[..n_u]);
            p.extend_from_slice(&vals[n_u..n_u + n_p]);
            y.extend_from_slice(&vals[n_u + n_p..]);
            rows += 1;
        }
        let build = |dim: usize, data: Vec<f64>| {
            if dim == 0 {
                Ok(Signal::empty_channels(rows))
            } else {
                Signal::from_vec(dim, data)
            }
        };
        Self::new(build(n_u, u)?, build(n_p, p)?, build(n_y, y)?)
    }
}

/// Where the innovation sequence `e` comes from.
pub enum NoiseSource<'a> {
    None,
    /// `e(t) = L z(t)`, `L Lᵀ = Σ_e`, `z` standard normal.
    Gaussian(&'a mut dyn RngCore),
    /// A caller-provided realization.
    Sequence(&'a Signal),
}

/// Iterates the innovation-form state equations. Returns `(y, e)`.
pub fn simulate(
    model: &LpvSsModel,
    u: &Signal,
    p: &Signal,
    noise: NoiseSource<'_>,
    x0: Option<&DVector<f64>>,
) -> Result<(Signal, Signal)> {
    let Dims { n_x, n_u, n_y, n_p } = model.dims;
    let n = u.len();
    if p.len() != n {
        return arg(format!("u has {n} samples, p has {}", p.len()));
    }
    if u.dim() != n_u || p.dim() != n_p {
        return arg("signal dimensions do not match the model");
    }
    let mut x = match x0 {
        Some(x0) if x0.len() != n_x => return arg("x0 has wrong length"),
        Some(x0) => x0.clone(),
        None => DVector::zeros(n_x),
    };

    let e = match noise {
        NoiseSource::None => Signal::zeros(n, n_y),
        NoiseSource::Sequence(seq) => {
            if seq.len() != n || seq.dim() != n_y {
                return arg("noise sequence shape does not match");
            }
            seq.clone()
        }
        NoiseSource::Gaussian(rng) => {
            let l = model
                .sigma_e
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Argument("Sigma_e not positive definite".into()))?
                .l();
            let mut e = Signal::zeros(n, n_y);
            let mut z = DVector::zeros(n_y);
            for t in 0..n {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(rng);
                }
                let et = &l * &z;
                e.row_mut(t).copy_from_slice(et.as_slice());
            }
            e
        }
    };

    let mut y = Signal::zeros(n, n_y);
    let mut x_next = DVector::zeros(n_x);
    let mut yt = DVector::zeros(n_y);
    for t in 0..n {
        let ut = DVector::from_column_slice(u.row(t));
        let et = DVector::from_column_slice(e.row(t));
        x_next.fill(0.0);
        yt.copy_from(&et);
        for i in 0..=n_p {
            let w = if i == 0 { 1.0 } else { p.row(t)[i - 1] };
            if w == 0.0 {
                continue;
            }
            x_next.gemv(w, &model.a[i], &x, 1.0);
            x_next.gemv(w, &model.b[i], &ut, 1.0);
            x_next.gemv(w, &model.k[i], &et, 1.0);
            yt.gemv(w, &model.c[i], &x, 1.0);
            yt.gemv(w, &model.d[i], &ut, 1.0);
        }
        if !yt.iter().all(|v| v.is_finite()) || !x_next.iter().all(|v| v.is_finite()) {
            return Err(Error::SimulationDiverged { t });
        }
        y.row_mut(t).copy_from_slice(yt.as_slice());
        std::mem::swap(&mut x, &mut x_next);
    }
    Ok((y, e))
}

/// Knobs for [`random_stable_model`] beyond the vertex-radius margin.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorScales {
    /// Overall gain of the `K_i` blocks before predictor-stability shrinking.
    pub k_gain: f64,
    /// Upper bound on the predictor vertex radius `ρ(A(p) − K(p)C(p))`.
    pub predictor_margin: f64,
}

impl Default for GeneratorScales {
    fn default() -> Self {
        Self {
            k_gain: 0.5,
            predictor_margin: 0.8,
        }
    }
}

/// Seeded random model whose vertex spectral radius equals `spectral_margin`.
pub fn random_stable_model(dims: Dims, seed: u64, spectral_margin: f64) -> Result<LpvSsModel> {
    random_stable_model_with(dims, seed, spectral_margin, GeneratorScales::default())
}

pub fn random_stable_model_with(
    dims: Dims,
    seed: u64,
    spectral_margin: f64,
    scales: GeneratorScales,
) -> Result<LpvSsModel> {
    let Dims { n_x, n_u, n_y, n_p } = dims;
    if n_x == 0 || n_u == 0 || n_y == 0 {
        return arg("n_x, n_u, n_y must be positive");
    }
    if !(spectral_margin > 0.0 && spectral_margin < 1.0) {
        return arg("spectral_margin must lie in (0, 1)");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |r: usize, c: usize, scale: f64| {
        DMatrix::from_fn(r, c, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
    };
    let blocks = n_p + 1;
    let per_block = 1.0 / (blocks as f64).sqrt();
    let mut a: Vec<_> = (0..blocks).map(|_| gauss(n_x, n_x, per_block)).collect();
    let b: Vec<_> = (0..blocks)
        .map(|_| gauss(n_x, n_u, per_block / (n_u as f64).sqrt()))
        .collect();
    let c: Vec<_> = (0..blocks)
        .map(|_| gauss(n_y, n_x, per_block / (n_x as f64).sqrt()))
        .collect();
    let d: Vec<_> = (0..blocks)
        .map(|_| gauss(n_y, n_u, 0.5 * per_block / (n_u as f64).sqrt()))
        .collect();
    let mut k: Vec<_> = (0..blocks)
        .map(|_| gauss(n_x, n_y, scales.k_gain * per_block / (n_y as f64).sqrt()))
        .collect();

    let rho = vertex_radius(&a, n_p);
    if rho > 0.0 {
        let s = spectral_margin / rho;
        a.iter_mut().for_each(|m| *m *= s);
    }
    let mut model = LpvSsModel::new(dims, a, b, c, d, k.clone(), DMatrix::identity(n_y, n_y))?;
    let mut guard = 0;
    while model.predictor_vertex_spectral_radius() > scales.predictor_margin && guard < 200 {
        k.iter_mut().for_each(|m| *m *= 0.8);
        model.k = k.clone();
        guard += 1;
    }
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    dims: Dims,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    c: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "D")]
    d: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "K")]
    k: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_e")]
    sigma_e: Vec<Vec<f64>>,
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    // empty rows cannot carry a column count, so trust the declared shape
    if nrows == 0 || ncols == 0 {
        return Ok(DMatrix::zeros(nrows, ncols));
    }
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return arg(format!("matrix literal is not {nrows}x{ncols}"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl LpvSsModel {
    /// Serializes as a JSON document with row-major nested arrays.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            dims: self.dims,
            a: self.a.iter().map(to_rows).collect(),
            b: self.b.iter().map(to_rows).collect(),
            c: self.c.iter().map(to_rows).collect(),
            d: self.d.iter().map(to_rows).collect(),
            k: self.k.iter().map(to_rows).collect(),
            sigma_e: to_rows(&self.sigma_e),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        let Dims { n_x, n_u, n_y, .. } = doc.dims;
        let conv = |blocks: &[Vec<Vec<f64>>], r, c| -> Result<Vec<DMatrix<f64>>> {
            blocks.iter().map(|m| from_rows(m, r, c)).collect()
        };
        Self::new(
            doc.dims,
            conv(&doc.a, n_x, n_x)?,
            conv(&doc.b, n_x, n_u)?,
            conv(&doc.c, n_y, n_x)?,
            conv(&doc.d, n_y, n_u)?,
            conv(&doc.k, n_x, n_y)?,
            from_rows(&doc.sigma_e, n_y, n_y)?,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
