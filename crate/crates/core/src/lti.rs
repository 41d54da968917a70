//! Plant models, closed loops, simulation and data collection.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};

/// `x' = A x + B u + G d`, `y = C x + D u + H d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        h: DMatrix<f64>,
    ) -> Result<Self> {
        let nx = a.nrows();
        let ny = c.nrows();
        let checks = [
            ("A must be square", a.ncols() == nx),
            ("B rows", b.nrows() == nx),
            ("G rows", g.nrows() == nx),
            ("C columns", c.ncols() == nx),
            ("D shape", d.nrows() == ny && d.ncols() == b.ncols()),
            ("H shape", h.nrows() == ny && h.ncols() == g.ncols()),
            ("empty dimension", nx > 0 && b.ncols() > 0 && g.ncols() > 0 && ny > 0),
        ];
        if let Some((what, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(dim_err(*what));
        }
        for m in [&a, &b, &g, &c, &d, &h] {
            crate::matops::check_finite(m)?;
        }
        Ok(LtiSystem { a, b, g, c, d, h })
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn nd(&self) -> usize {
        self.g.ncols()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    /// Same dynamics with the output channels replaced.
    pub fn with_channels(&self, c: DMatrix<f64>, d: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        LtiSystem::new(self.a.clone(), self.b.clone(), self.g.clone(), c, d, h)
    }

    /// Same channels with `(A, B)` replaced.
    pub fn with_dynamics(&self, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        LtiSystem::new(a, b, self.g.clone(), self.c.clone(), self.d.clone(), self.h.clone())
    }
}

/// Chain of `num_masses` unit masses joined by unit springs, fixed at both
/// ends. States are positions then velocities; each mass has one force input
/// and one disturbance. The output defaults to the full state.
pub fn make_mass_spring(num_masses: usize) -> Result<LtiSystem> {
    if num_masses == 0 {
        return Err(Error::Input("need at least one mass".into()));
    }
    let n = num_masses;
    let t = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => -2.0,
        1 => 1.0,
        _ => 0.0,
    });
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&t);
    let mut b = DMatrix::zeros(2 * n, n);
    b.view_mut((n, 0), (n, n)).fill_with_identity();
    let g = b.clone();
    LtiSystem::new(a, b, g, DMatrix::identity(2 * n, 2 * n), DMatrix::zeros(2 * n, n), DMatrix::zeros(2 * n, n))
}

/// `(A + B K, C + D K)`.
pub fn closed_loop(sys: &LtiSystem, k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if k.shape() != (sys.nu(), sys.nx()) {
        return Err(dim_err(format!("K is {:?}, expected {:?}", k.shape(), (sys.nu(), sys.nx()))));
    }
    Ok((&sys.a + &sys.b * k, &sys.c + &sys.d * k))
}

/// Binary mask of the allowed gain entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    mask: DMatrix<f64>,
}

impl SparsityPattern {
    pub fn new(mask: DMatrix<f64>) -> Result<Self> {
        if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Input("pattern entries must be 0 or 1".into()));
        }
        if mask.is_empty() {
            return Err(dim_err("empty pattern"));
        }
        Ok(SparsityPattern { mask })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err("pattern rows differ in length"));
        }
        Self::new(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j] as f64))
    }

    pub fn full(nu: usize, nx: usize) -> Self {
        SparsityPattern { mask: DMatrix::from_element(nu, nx, 1.0) }
    }

    pub fn mask(&self) -> &DMatrix<f64> {
        &self.mask
    }

    pub fn complement(&self) -> DMatrix<f64> {
        self.mask.map(|v| 1.0 - v)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&v| v == 1.0)
    }

    /// Zeroes the entries of `k` outside the pattern.
    pub fn project(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        k.component_mul(&self.mask)
    }

    /// Allowed entries of a row-major walk, as `(row, col)`.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        let (r, c) = self.shape();
        (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).filter(|&ij| self.mask[ij] == 1.0).collect()
    }

    /// Forbidden entries of a row-major walk, as `(row, col)`.
    pub fn forbidden_entries(&self) -> Vec<(usize, usize)> {
        let (r, c) = self.shape();
        (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).filter(|&ij| self.mask[ij] == 0.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    pub samples: usize,
    pub ts: f64,
    pub eps: f64,
    pub seed: u64,
    /// Inputs are drawn uniformly from `[-amplitude, amplitude]`.
    pub amplitude: f64,
    /// Standard deviation of the initial state entries.
    pub initial_scale: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig { samples: 100, ts: 0.1, eps: 0.01, seed: 1, amplitude: 1.0, initial_scale: 1.0 }
    }
}

/// Sampled trajectory data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub x0: DMatrix<f64>,
    pub u0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    /// Disturbances actually applied; ground truth for tests only.
    pub d0: DMatrix<f64>,
    pub ts: f64,
    pub eps: f64,
    pub seed: u64,
}

const DIVERGENCE_NORM: f64 = 1e9;

fn rk4_hold(a: &DMatrix<f64>, forcing: &DVector<f64>, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let f = |x: &DVector<f64>| a * x + forcing;
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h / 2.0)));
    let k3 = f(&(x + &k2 * (h / 2.0)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Simulates the plant under zero-order-hold random input and bounded
/// disturbance and records `T` samples. The random stream is consumed in
/// the same order regardless of `eps`, so runs that differ only in `eps` see
/// the same inputs, and shorter runs are prefixes of longer ones.
pub fn simulate_collect(sys: &LtiSystem, cfg: &CollectConfig) -> Result<DataSet> {
    if !(cfg.ts > 0.0) || !(cfg.eps >= 0.0) || cfg.samples == 0 || !(cfg.amplitude >= 0.0) {
        return Err(Error::Input("need Ts > 0, eps >= 0, T >= 1 and amplitude >= 0".into()));
    }
    let (nx, nu, nd, t) = (sys.nx(), sys.nu(), sys.nd(), cfg.samples);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = DVector::from_fn(nx, |_, _| cfg.initial_scale * rng.sample::<f64, _>(StandardNormal));
    let mut x0 = DMatrix::zeros(nx, t);
    let mut u0 = DMatrix::zeros(nu, t);
    let mut d0 = DMatrix::zeros(nd, t);
    let mut x1 = DMatrix::zeros(nx, t);
    let sub = 100;
    let h = cfg.ts / sub as f64;
    for i in 0..t {
        let norm = x.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { sample: i, norm });
        }
        let u = DVector::from_fn(nu, |_, _| cfg.amplitude * rng.random_range(-1.0..=1.0));
        let v = DVector::from_fn(nd, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r: f64 = rng.random_range(0.0..1.0);
        let vn = v.norm();
        let mut d = if vn > 0.0 { v * (cfg.eps * r / vn) } else { DVector::zeros(nd) };
        let dn = d.norm();
        if dn > cfg.eps {
            d *= cfg.eps / dn;
        }
        let forcing = &sys.b * &u + &sys.g * &d;
        x0.set_column(i, &x);
        u0.set_column(i, &u);
        d0.set_column(i, &d);
        x1.set_column(i, &(&sys.a * &x + &forcing));
        if i + 1 < t {
            for _ in 0..sub {
                x = rk4_hold(&sys.a, &forcing, &x, h);
            }
        }
    }
    Ok(DataSet { x0, u0, x1, d0, ts: cfg.ts, eps: cfg.eps, seed: cfg.seed })
}

impl DataSet {
    pub fn samples(&self) -> usize {
        self.x0.ncols()
    }

    /// The first `t` samples.
    pub fn prefix(&self, t: usize) -> Result<DataSet> {
        if t == 0 || t > self.samples() {
            return Err(Error::Input(format!("prefix length {t} outside 1..={}", self.samples())));
        }
        Ok(DataSet {
            x0: self.x0.columns(0, t).into_owned(),
            u0: self.u0.columns(0, t).into_owned(),
            x1: self.x1.columns(0, t).into_owned(),
            d0: self.d0.columns(0, t).into_owned(),
            ..*self
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Ts={:.16e}", self.ts);
        let _ = writeln!(out, "# eps={:.16e}", self.eps);
        let _ = writeln!(out, "# seed={}", self.seed);
        for (name, m) in [("X0", &self.x0), ("U0", &self.u0), ("X1", &self.x1), ("D0", &self.d0)] {
            write_block(&mut out, name, m);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<DataSet> {
        let doc = CsvDoc::parse(text)?;
        let num = |k: &str| -> Result<f64> {
            let (line, v) = doc.header(k)?;
            v.parse().map_err(|_| Error::Parse { line, msg: format!("bad value for {k}") })
        };
        let seed = {
            let (line, v) = doc.header("seed")?;
            v.parse().map_err(|_| Error::Parse { line, msg: "bad seed".into() })?
        };
        let ds = DataSet {
            x0: doc.block("X0")?,
            u0: doc.block("U0")?,
            x1: doc.block("X1")?,
            d0: doc.block("D0")?,
            ts: num("Ts")?,
            eps: num("eps")?,
            seed,
        };
        let t = ds.samples();
        if ds.u0.ncols() != t || ds.x1.ncols() != t || ds.d0.ncols() != t || ds.x1.nrows() != ds.x0.nrows() {
            return Err(dim_err("data blocks disagree in size"));
        }
        Ok(ds)
    }
}

pub(crate) fn write_block(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "# {name} rows={} cols={}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
}

/// Header lines `# key=value` and named row-major blocks.
pub(crate) struct CsvDoc {
    headers: Vec<(usize, String, String)>,
    blocks: Vec<(String, DMatrix<f64>)>,
}

impl CsvDoc {
    pub(crate) fn parse(text: &str) -> Result<CsvDoc> {
        let mut headers = Vec::new();
        let mut blocks = Vec::new();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).peekable();
        while let Some((ln, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let Some(body) = line.strip_prefix('#') else {
                return Err(Error::Parse { line: ln, msg: "data row outside a block".into() });
            };
            let body = body.trim();
            let mut words = body.split_whitespace();
            let first = words.next().unwrap_or("");
            if let Some((k, v)) = first.split_once('=') {
                headers.push((ln, k.to_string(), v.to_string()));
                continue;
            }
            let mut rows = None;
            let mut cols = None;
            for w in words {
                match w.split_once('=') {
                    Some(("rows", v)) => rows = v.parse::<usize>().ok(),
                    Some(("cols", v)) => cols = v.parse::<usize>().ok(),
                    _ => {}
                }
            }
            let (Some(r), Some(c)) = (rows, cols) else {
                return Err(Error::Parse { line: ln, msg: format!("block `{first}` lacks rows=/cols=") });
            };
            let mut m = DMatrix::zeros(r, c);
            for i in 0..r {
                let Some((rl, row)) = lines.next() else {
                    return Err(Error::Parse { line: ln, msg: format!("block `{first}` is truncated") });
                };
                let vals: Vec<&str> = row.split(',').collect();
                if vals.len() != c {
                    return Err(Error::Parse { line: rl, msg: format!("expected {c} values, found {}", vals.len()) });
                }
                for (j, v) in vals.iter().enumerate() {
                    m[(i, j)] = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parse { line: rl, msg: format!("bad number `{v}`") })?;
                }
            }
            blocks.push((first.to_string(), m));
        }
        Ok(CsvDoc { headers, blocks })
    }

    pub(crate) fn header(&self, key: &str) -> Result<(usize, &str)> {
        self.headers
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing header `{key}`") })
    }

    pub(crate) fn block(&self, name: &str) -> Result<DMatrix<f64>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing block `{name}`") })
    }
}

/// `C_K (jw I - A_K)^{-1} G + H` for given closed-loop matrices.
pub fn transfer_at(
    a_k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    c_k: &DMatrix<f64>,
    h: &DMatrix<f64>,
    omega: f64,
) -> Result<DMatrix<Complex64>> {
    let n = a_k.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let re = -a_k[(i, j)];
        Complex64::new(re, if i == j { omega } else { 0.0 })
    });
    let rhs = g.map(|v| Complex64::new(v, 0.0));
    let scale = a_k.amax().max(omega.abs()).max(1.0);
    let lu = m.lu();
    let pivot = (0..n).map(|i| lu.u()[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if !(pivot > 1e-13 * scale) {
        return Err(Error::PoleOnAxis(omega));
    }
    let x = lu.solve(&rhs).ok_or(Error::PoleOnAxis(omega))?;
    Ok(c_k.map(|v| Complex64::new(v, 0.0)) * x + h.map(|v| Complex64::new(v, 0.0)))
}

/// Closed-loop transfer matrix from disturbance to output at `jw`.
pub fn frequency_response(sys: &LtiSystem, k: &DMatrix<f64>, omega: f64) -> Result<DMatrix<Complex64>> {
    let (a_k, c_k) = closed_loop(sys, k)?;
    transfer_at(&a_k, &sys.g, &c_k, &sys.h, omega)
}
