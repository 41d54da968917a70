//! Data-consistency sets and the minimum-volume matrix ellipsoid that
//! covers them.
//!
//! Every sample `(x, u, x')` with `|d| <= eps` restricts `Z = [A B]^T` to
//! `[I; Z]^T [[c, b^T], [b, a]] [I; Z] <= 0`. The fitted ellipsoid is
//! `{Z : (Z - delta)^T A* (Z - delta) <= I}`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::lmi::{FwSegment, LmiBuilder, MatExpr, MaxDetOptions, Sense, Status};
use crate::lti::{write_block, CsvDoc, DataSet};
use crate::matops::{inv_sqrt_spd, logdet_spd, max_eig, spectral_norm, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    /// `x' x'^T - eps^2 G G^T`
    pub c: DMatrix<f64>,
    /// `-z x'^T` with `z = [x; u]`
    pub b: DMatrix<f64>,
    /// `z z^T`
    pub a: DMatrix<f64>,
}

impl SampleBlock {
    pub fn stacked(&self) -> DMatrix<f64> {
        let (nx, nz) = (self.c.nrows(), self.a.nrows());
        let mut m = DMatrix::zeros(nx + nz, nx + nz);
        m.view_mut((0, 0), (nx, nx)).copy_from(&self.c);
        m.view_mut((nx, 0), (nz, nx)).copy_from(&self.b);
        m.view_mut((0, nx), (nx, nz)).copy_from(&self.b.transpose());
        m.view_mut((nx, nx), (nz, nz)).copy_from(&self.a);
        m
    }

    /// `[I; Z]^T M [I; Z]` for `Z = [A B]^T`.
    pub fn qmi(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let z = stack_z(a, b);
        &self.c + z.transpose() * &self.b + self.b.transpose() * &z + z.transpose() * &self.a * &z
    }
}

fn stack_z(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let nx = a.nrows();
    let mut z = DMatrix::zeros(nx + b.ncols(), nx);
    z.view_mut((0, 0), (nx, nx)).copy_from(&a.transpose());
    z.view_mut((nx, 0), (b.ncols(), nx)).copy_from(&b.transpose());
    z
}

pub fn sample_blocks(data: &DataSet, g: &DMatrix<f64>, eps: f64) -> Result<Vec<SampleBlock>> {
    let nx = data.x0.nrows();
    if g.nrows() != nx || data.x1.nrows() != nx {
        return Err(dim_err("G and X1 must have as many rows as X0"));
    }
    if !(eps >= 0.0) {
        return Err(Error::Input("eps must be nonnegative".into()));
    }
    let noise = g * g.transpose() * (eps * eps);
    let mut out = Vec::with_capacity(data.samples());
    for i in 0..data.samples() {
        let xd = data.x1.column(i);
        let z = DVector::from_iterator(
            nx + data.u0.nrows(),
            data.x0.column(i).iter().chain(data.u0.column(i).iter()).copied(),
        );
        out.push(SampleBlock { c: xd * xd.transpose() - &noise, b: -(&z * xd.transpose()), a: &z * z.transpose() });
    }
    Ok(out)
}

/// Diagnostics of the log-det fit.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub fw_gap: f64,
    /// Final Frank-Wolfe segment, in the normalized coordinates of the fit.
    pub segment: Option<FwSegment>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct MatrixEllipsoid {
    pub astar: DMatrix<f64>,
    pub bstar: DMatrix<f64>,
    /// `-A*^{-1} B*`, of shape `(nx + nu) x nx`.
    pub delta: DMatrix<f64>,
    pub astar_inv_sqrt: DMatrix<f64>,
    /// Multipliers per sample (empty for point ellipsoids).
    pub theta: DVector<f64>,
    pub logdet: f64,
    pub fit: Option<FitDiagnostics>,
}

/// Radius parameter of the point ellipsoid used for model-based designs.
pub const POINT_RHO: f64 = 1e8;

impl MatrixEllipsoid {
    pub fn from_center(astar: DMatrix<f64>, delta: DMatrix<f64>) -> Result<Self> {
        if !astar.is_square() || astar.nrows() != delta.nrows() {
            return Err(dim_err("A* and delta disagree"));
        }
        let sym = SymMatrix::new(astar)?;
        let r = inv_sqrt_spd(&sym)?.into_inner();
        let logdet = logdet_spd(&sym)?;
        let astar = sym.into_inner();
        let bstar = -(&astar * &delta);
        Ok(MatrixEllipsoid {
            astar,
            bstar,
            delta,
            astar_inv_sqrt: r,
            theta: DVector::zeros(0),
            logdet,
            fit: None,
        })
    }

    /// Ellipsoid of radius `rho^{-1/2}` around the model `(A, B)`.
    pub fn point(a: &DMatrix<f64>, b: &DMatrix<f64>, rho: f64) -> Result<Self> {
        if a.nrows() != b.nrows() || !a.is_square() {
            return Err(dim_err("A and B disagree"));
        }
        let nz = a.nrows() + b.ncols();
        Self::from_center(DMatrix::identity(nz, nz) * rho, stack_z(a, b))
    }

    pub fn nx(&self) -> usize {
        self.delta.ncols()
    }

    pub fn nu(&self) -> usize {
        self.delta.nrows() - self.delta.ncols()
    }

    /// The center split as `(A, B)`.
    pub fn center(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        split(&self.delta, self.nx())
    }

    /// The member `delta + A*^{-1/2} Gamma`, split as `(A, B)`.
    pub fn member(&self, gamma: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        split(&(&self.delta + &self.astar_inv_sqrt * gamma), self.nx())
    }

    /// `(Z - delta)^T A* (Z - delta)`.
    pub fn qmi(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.shape() != (self.nx(), self.nx()) || b.shape() != (self.nx(), self.nu()) {
            return Err(dim_err("(A, B) does not match the ellipsoid"));
        }
        let e = stack_z(a, b) - &self.delta;
        Ok(e.transpose() * &self.astar * e)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# logdet={:.16e}", self.logdet);
        write_block(&mut out, "Astar", &self.astar);
        write_block(&mut out, "Bstar", &self.bstar);
        write_block(&mut out, "delta", &self.delta);
        if !self.theta.is_empty() {
            write_block(&mut out, "theta", &DMatrix::from_column_slice(1, self.theta.len(), self.theta.as_slice()));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let doc = CsvDoc::parse(text)?;
        let mut ell = Self::from_center(doc.block("Astar")?, doc.block("delta")?)?;
        ell.bstar = doc.block("Bstar")?;
        if let Ok(t) = doc.block("theta") {
            ell.theta = DVector::from_column_slice(t.as_slice());
        }
        Ok(ell)
    }
}

fn split(z: &DMatrix<f64>, nx: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let zt = z.transpose();
    (zt.columns(0, nx).into_owned(), zt.columns(nx, zt.ncols() - nx).into_owned())
}

/// Membership test: largest eigenvalue of the ellipsoid QMI minus one is at
/// most `tol`.
pub fn contains(ell: &MatrixEllipsoid, a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(max_eig(&ell.qmi(a, b)?) - 1.0 <= tol)
}

/// Minimum-volume ellipsoid containing every sample's consistency set.
///
/// The data are normalized before the fit: `Z` is shifted to the
/// least-squares estimate `Z0`, whitened by the Cholesky factor `L` of
/// `sum a_i` and scaled by the residual size `s`, i.e. `Z = Z0 + s L^{-T} W`.
/// This is a congruence on every block that leaves `Q = I` unchanged, so the
/// optimum maps back exactly.
pub fn fit_min_ellipsoid(blocks: &[SampleBlock]) -> Result<MatrixEllipsoid> {
    fit_with(blocks, &MaxDetOptions::default())
}

pub fn fit_with(blocks: &[SampleBlock], opts: &MaxDetOptions) -> Result<MatrixEllipsoid> {
    let first = blocks.first().ok_or_else(|| Error::Input("no samples".into()))?;
    let (nx, nz) = (first.c.nrows(), first.a.nrows());
    if blocks.iter().any(|s| s.c.shape() != (nx, nx) || s.b.shape() != (nz, nx) || s.a.shape() != (nz, nz)) {
        return Err(dim_err("sample blocks differ in size"));
    }
    let sum_a = blocks.iter().fold(DMatrix::zeros(nz, nz), |acc, s| acc + &s.a);
    let sum_b = blocks.iter().fold(DMatrix::zeros(nz, nx), |acc, s| acc + &s.b);
    let chol = sum_a.clone().cholesky().ok_or_else(|| {
        Error::DegenerateData("[X0; U0] does not have full row rank; excite more or collect more samples".into())
    })?;
    let l = chol.l();
    let (lo, hi) = {
        let d = l.diagonal();
        (d.min(), d.max())
    };
    if lo <= 1e-7 * hi {
        return Err(Error::DegenerateData("[X0; U0] is numerically rank deficient".into()));
    }
    let z0 = chol.solve(&(-&sum_b));
    let shifted: Vec<DMatrix<f64>> = blocks
        .iter()
        .map(|s| &s.c + z0.transpose() * &s.b + s.b.transpose() * &z0 + z0.transpose() * &s.a * &z0)
        .collect();
    let s2 = shifted.iter().map(|c| spectral_norm(c).unwrap_or(0.0)).fold(0.0, f64::max);
    if !(s2 > 0.0) {
        return Err(Error::Unbounded("the data pin the model exactly; use eps > 0".into()));
    }
    let s = s2.sqrt();
    // T = [[I, 0], [Z0, s L^{-T}]]
    let linv_t = l.clone().try_inverse().ok_or_else(|| Error::DegenerateData("singular regressor".into()))?.transpose();
    let mut t = DMatrix::zeros(nx + nz, nx + nz);
    t.view_mut((0, 0), (nx, nx)).fill_with_identity();
    t.view_mut((nx, 0), (nz, nx)).copy_from(&z0);
    t.view_mut((nx, nx), (nz, nz)).copy_from(&(&linv_t * s));
    let normalized: Vec<DMatrix<f64>> = blocks
        .iter()
        .map(|blk| {
            let m = t.transpose() * blk.stacked() * &t / s2;
            (&m + m.transpose()) * 0.5
        })
        .collect();

    let mut lb = LmiBuilder::new();
    let a = lb.symmetric("A", nz)?;
    let b = lb.matrix("B", nz, nx)?;
    let theta: Vec<_> = (0..blocks.len()).map(|i| lb.nonnegative(&format!("theta{i}"))).collect::<std::result::Result<_, _>>()?;
    let mut weighted = MatExpr::zeros(nx + nz, nx + nz);
    for (th, m) in theta.iter().zip(&normalized) {
        weighted = weighted.add(&th.expr().times_matrix(m)?)?;
    }
    let neg_i = MatExpr::constant(-DMatrix::identity(nx, nx));
    let top = MatExpr::sym_blocks(&[vec![Some(&neg_i)], vec![Some(&b.expr()), Some(&a.expr())]])?.sub(&weighted)?;
    let lmi = MatExpr::sym_blocks(&[
        vec![Some(&top)],
        vec![Some(&MatExpr::hstack(&[&b.expr(), &MatExpr::zeros(nz, nz)])?), Some(&a.expr().neg())],
    ])?;
    lb.constrain("ellipsoid", lmi, Sense::NegSemiDef)?;
    let prob = lb.build()?;
    let sol = prob.maximize_logdet(&a, opts)?;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => {
            return Err(Error::DegenerateData("the ellipsoid LMI has no interior point".into()))
        }
        Status::Unbounded => {
            return Err(Error::Unbounded("eps is too small or the data pin the model exactly".into()))
        }
        Status::MaxIterations => {
            return Err(Error::SolverFault(format!(
                "ellipsoid fit stopped with Frank-Wolfe gap {:?}",
                sol.fw_gap
            )))
        }
    }
    let an = sol.value(&a);
    let bn = sol.value(&b);
    let an_chol = an.clone().cholesky().ok_or_else(|| Error::SolverFault("fitted shape is not positive definite".into()))?;
    let delta_n = -an_chol.solve(&bn);
    let delta = &z0 + &linv_t * &delta_n * s;
    let astar = SymMatrix::symmetrize(&l * &an * l.transpose() / s2).into_inner();
    let mut ell = MatrixEllipsoid::from_center(astar, delta)?;
    ell.theta = DVector::from_iterator(theta.len(), theta.iter().map(|v| sol.scalar(v) / s2));
    ell.fit = Some(FitDiagnostics {
        fw_gap: sol.fw_gap.unwrap_or(f64::NAN),
        segment: sol.fw_segment.clone(),
        iterations: sol.iterations,
    });
    Ok(ell)
}

/// Builds the sample blocks and fits the ellipsoid; `eps` must be positive.
pub fn fit_from_data(data: &DataSet, g: &DMatrix<f64>, eps: f64) -> Result<MatrixEllipsoid> {
    if !(eps > 0.0) {
        return Err(Error::Input(
            "eps = 0 makes the minimum-volume ellipsoid degenerate; use a small positive bound".into(),
        ));
    }
    fit_min_ellipsoid(&sample_blocks(data, g, eps)?)
}

/// Random members of the ellipsoid: the center first, then a boundary point
/// (`|Gamma| = 1`), then points with a uniformly random spectral radius.
pub fn sample_members(ell: &MatrixEllipsoid, count: usize, seed: u64) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let (nz, nx) = ell.delta.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let gamma = match k {
            0 => DMatrix::zeros(nz, nx),
            _ => {
                let raw = DMatrix::from_fn(nz, nx, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = spectral_norm(&raw).unwrap_or(1.0).max(f64::MIN_POSITIVE);
                // keep the boundary sample a hair inside to absorb roundoff
                let radius = if k == 1 { 1.0 - 1e-12 } else { rng.random_range(0.0..1.0) };
                raw * (radius / norm)
            }
        };
        out.push(ell.member(&gamma));
    }
    out
}
