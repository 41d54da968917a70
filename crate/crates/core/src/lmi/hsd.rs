//! Primal-dual interior-point method on the homogeneous self-dual embedding.
//!
//! Primal: `min c^T x  s.t.  s = h - G x,  s >= 0`.
//! Dual:   `max -h^T z  s.t.  G^T z + c = 0,  z >= 0`.
//!
//! The embedding adds `tau, kappa >= 0` so that optimality, primal
//! infeasibility and dual infeasibility all appear as limits of the same
//! iteration. Directions use Nesterov-Todd scaling per block and a Mehrotra
//! predictor-corrector; the reduced KKT system is solved through the dense
//! normal matrix `G^T (W^T W)^{-1} G`.

use nalgebra::{DMatrix, DVector};

use super::cone::{smat, svec, ConeProgram};
use crate::matops::min_eig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative primal/dual residual tolerance.
    pub feastol: f64,
    /// Duality gap tolerance, relative to `1 + |objective|`.
    pub gaptol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { feastol: 1e-8, gaptol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::MaxIterations => "max-iterations",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: Status,
    pub x: DVector<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub z: Vec<DMatrix<f64>>,
    pub pcost: f64,
    pub dcost: f64,
    /// Relative primal residual.
    pub pres: f64,
    /// Relative dual residual.
    pub dres: f64,
    /// Duality gap `<s, z>` of the normalized point.
    pub gap: f64,
    pub iterations: usize,
}

struct Scaling {
    r: DMatrix<f64>,
    lam: DVector<f64>,
    /// `(R R^T)^{-1}`
    winv: DMatrix<f64>,
}

fn nt_scaling(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let ls = s.clone().cholesky()?.unpack();
    let lz = z.clone().cholesky()?.unpack();
    let svd = (lz.transpose() * &ls).svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let lam = svd.singular_values;
    if lam.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let isq = DMatrix::from_diagonal(&lam.map(|l| 1.0 / l.sqrt()));
    let r = &ls * vt.transpose() * &isq;
    let rinv = &isq * u.transpose() * lz.transpose();
    let winv = rinv.transpose() * &rinv;
    Some(Scaling { r, lam, winv })
}

/// Largest `alpha` with `diag(lam) + alpha * d` positive semidefinite.
fn max_step(lam: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lam.len();
    let mut m = d.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] /= (lam[i] * lam[j]).sqrt();
        }
    }
    let e = min_eig(&m);
    if e < 0.0 {
        -1.0 / e
    } else {
        f64::INFINITY
    }
}

/// Solves `lam o u = d` where `o` is the symmetrized product and `lam` is diagonal.
fn jordan_div(lam: &DVector<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| 2.0 * d[(i, j)] / (lam[i] + lam[j]))
}

fn jordan(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a * b + b * a) * 0.5
}

struct NormalSystem {
    h: DMatrix<f64>,
    factor: Factor,
}

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl NormalSystem {
    fn new(h: DMatrix<f64>) -> Option<Self> {
        let m = h.nrows();
        if let Some(c) = h.clone().cholesky() {
            return Some(NormalSystem { h, factor: Factor::Chol(c) });
        }
        let scale = (0..m).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        for k in [1e-14, 1e-12, 1e-10] {
            let mut hr = h.clone();
            for i in 0..m {
                hr[(i, i)] += k * scale;
            }
            if let Some(c) = hr.cholesky() {
                return Some(NormalSystem { h, factor: Factor::Chol(c) });
            }
        }
        let lu = h.clone().lu();
        if lu.is_invertible() {
            Some(NormalSystem { h, factor: Factor::Lu(lu) })
        } else {
            None
        }
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let raw = |r: &DVector<f64>| match &self.factor {
            Factor::Chol(c) => c.solve(r),
            Factor::Lu(l) => l.solve(r).unwrap_or_else(|| DVector::zeros(r.len())),
        };
        let mut x = raw(b);
        // two rounds of refinement against the unregularized matrix
        for _ in 0..2 {
            let r = b - &self.h * &x;
            x += raw(&r);
        }
        x
    }
}

pub fn solve(p: &ConeProgram, opts: &SolverOptions) -> ConeSolution {
    let m = p.dim();
    let nb = p.blocks.len();
    let nu = p.degree() as f64;

    if nb == 0 {
        let status = if p.c.amax() == 0.0 { Status::Optimal } else { Status::Unbounded };
        return ConeSolution {
            status,
            x: DVector::zeros(m),
            s: vec![],
            z: vec![],
            pcost: p.c0,
            dcost: p.c0,
            pres: 0.0,
            dres: p.c.norm(),
            gap: 0.0,
            iterations: 0,
        };
    }

    let resx0 = p.c.norm().max(1.0);
    let resz0 = p.h_norm().max(1.0);

    let mut x = DVector::zeros(m);
    let mut s: Vec<DMatrix<f64>> = p.blocks.iter().map(|b| DMatrix::identity(b.order, b.order)).collect();
    let mut z = s.clone();
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let gt = |z: &[DMatrix<f64>]| -> DVector<f64> {
        let mut out = DVector::zeros(m);
        for (b, zk) in p.blocks.iter().zip(z) {
            out += b.g.transpose() * svec(zk);
        }
        out
    };
    let hdot = |z: &[DMatrix<f64>]| -> f64 { p.blocks.iter().zip(z).map(|(b, zk)| b.h.dot(&svec(zk))).sum() };

    let mut last: Option<ConeSolution> = None;
    let mut best: Option<(f64, ConeSolution)> = None;
    for iter in 0..=opts.max_iter {
        // residuals of the embedding
        let gtz = gt(&z);
        let rx = &gtz + &p.c * tau;
        let rz: Vec<DMatrix<f64>> = p
            .blocks
            .iter()
            .zip(&s)
            .map(|(b, sk)| sk + smat((&b.g * &x - &b.h * tau).as_slice(), b.order))
            .collect();
        let cx = p.c.dot(&x);
        let hz = hdot(&z);
        let rt = kappa + cx + hz;
        let gap: f64 = s.iter().zip(&z).map(|(a, b)| a.component_mul(b).sum()).sum();
        let mu = (gap + tau * kappa) / (nu + 1.0);

        let rz_norm = rz.iter().map(|r| svec(r).norm_squared()).sum::<f64>().sqrt();
        let pres = rz_norm / tau / resz0;
        let dres = rx.norm() / tau / resx0;
        let pcost = cx / tau + p.c0;
        let dcost = -hz / tau + p.c0;
        let ngap = gap / (tau * tau);

        let finish = |status: Status, x: &DVector<f64>, s: &[DMatrix<f64>], z: &[DMatrix<f64>], div: f64| ConeSolution {
            status,
            x: x / div,
            s: s.iter().map(|v| v / div).collect(),
            z: z.iter().map(|v| v / div).collect(),
            pcost,
            dcost,
            pres,
            dres,
            gap: ngap,
            iterations: iter,
        };

        if pres <= opts.feastol
            && dres <= opts.feastol
            && ngap <= opts.gaptol * (1.0 + pcost.abs().min(dcost.abs()))
        {
            return finish(Status::Optimal, &x, &s, &z, tau);
        }
        if hz < 0.0 {
            let pinf = gtz.norm() / resx0 / (-hz);
            if pinf <= opts.feastol {
                return finish(Status::Infeasible, &x, &s, &z, -hz);
            }
        }
        if cx < 0.0 {
            let gxs: f64 = p
                .blocks
                .iter()
                .zip(&s)
                .map(|(b, sk)| (&b.g * &x + svec(sk)).norm_squared())
                .sum::<f64>()
                .sqrt();
            if gxs / resz0 / (-cx) <= opts.feastol {
                return finish(Status::Unbounded, &x, &s, &z, -cx);
            }
        }
        let cur = finish(Status::MaxIterations, &x, &s, &z, tau);
        let merit = (pres / opts.feastol)
            .max(dres / opts.feastol)
            .max(ngap / (opts.gaptol * (1.0 + pcost.abs().min(dcost.abs()))));
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, cur.clone()));
        }
        last = Some(cur);
        if iter == opts.max_iter {
            break;
        }

        // scaling
        let mut sc = Vec::with_capacity(nb);
        for (sk, zk) in s.iter().zip(&z) {
            match nt_scaling(sk, zk) {
                Some(v) => sc.push(v),
                None => return best.map(|b| b.1).or(last).unwrap(),
            }
        }
        // normal matrix
        let mut h = DMatrix::zeros(m, m);
        for (b, w) in p.blocks.iter().zip(&sc) {
            let mut scaled = DMatrix::zeros(b.g.nrows(), m);
            for j in 0..m {
                let gj = smat(b.g.column(j).as_slice(), b.order);
                scaled.set_column(j, &svec(&(&w.winv * gj * &w.winv)));
            }
            h += b.g.transpose() * scaled;
        }
        let h = (&h + h.transpose()) * 0.5;
        let Some(ns) = NormalSystem::new(h) else {
            return best.map(|b| b.1).or(last).unwrap();
        };
        // [0 G^T; G -W^T W] [dx; dz] = [px; qz]
        let wmats: Vec<DMatrix<f64>> = sc.iter().map(|w| &w.r * w.r.transpose()).collect();
        let raw_kkt = |px: &DVector<f64>, qz: &[DMatrix<f64>]| -> (DVector<f64>, Vec<DMatrix<f64>>) {
            let mut rhs = px.clone();
            for ((b, w), q) in p.blocks.iter().zip(&sc).zip(qz) {
                rhs += b.g.transpose() * svec(&(&w.winv * q * &w.winv));
            }
            let dx = ns.solve(&rhs);
            let dz = p
                .blocks
                .iter()
                .zip(&sc)
                .zip(qz)
                .map(|((b, w), q)| {
                    let gdx = smat((&b.g * &dx).as_slice(), b.order);
                    &w.winv * (gdx - q) * &w.winv
                })
                .collect();
            (dx, dz)
        };
        let kkt = |px: &DVector<f64>, qz: &[DMatrix<f64>]| -> (DVector<f64>, Vec<DMatrix<f64>>) {
            let (mut dx, mut dz) = raw_kkt(px, qz);
            for _ in 0..2 {
                let e1 = px - gt(&dz);
                let e2: Vec<DMatrix<f64>> = p
                    .blocks
                    .iter()
                    .zip(&wmats)
                    .zip(qz.iter().zip(&dz))
                    .map(|((b, w), (q, d))| q - smat((&b.g * &dx).as_slice(), b.order) + w * d * w)
                    .collect();
                let (cx, cz) = raw_kkt(&e1, &e2);
                dx += cx;
                for (d, c) in dz.iter_mut().zip(cz) {
                    *d += c;
                }
            }
            (dx, dz)
        };
        let hmats: Vec<DMatrix<f64>> = p.blocks.iter().map(|b| smat(b.h.as_slice(), b.order)).collect();
        let (x1, z1) = kkt(&(-&p.c), &hmats);
        let cx1_hz1 = p.c.dot(&x1) + hdot(&z1);

        let mut corr: Option<(Vec<DMatrix<f64>>, f64)> = None;
        let mut sigma = 0.0;
        let mut step = None;
        for pass in 0..2 {
            let eta = 1.0 - sigma;
            let dx_rhs = &rx * (-eta);
            let dz_rhs: Vec<DMatrix<f64>> = rz.iter().map(|r| r * (-eta)).collect();
            let dt_rhs = -eta * rt;
            let mut ds = Vec::with_capacity(nb);
            for (k, w) in sc.iter().enumerate() {
                let n = w.lam.len();
                let mut d = DMatrix::from_diagonal(&w.lam.map(|l| -l * l + sigma * mu));
                if let Some((c, _)) = &corr {
                    d -= &c[k];
                }
                debug_assert_eq!(d.nrows(), n);
                ds.push(d);
            }
            let mut dk = -tau * kappa + sigma * mu;
            if let Some((_, ck)) = &corr {
                dk -= ck;
            }
            let us: Vec<DMatrix<f64>> = sc.iter().zip(&ds).map(|(w, d)| jordan_div(&w.lam, d)).collect();
            let q: Vec<DMatrix<f64>> = dz_rhs
                .iter()
                .zip(sc.iter().zip(&us))
                .map(|(dz, (w, u))| dz - &w.r * u * w.r.transpose())
                .collect();
            let (x2, z2) = kkt(&dx_rhs, &q);
            let dtau = (dt_rhs - dk / tau - p.c.dot(&x2) - hdot(&z2)) / (cx1_hz1 - kappa / tau);
            let dx = &x2 + &x1 * dtau;
            let dz: Vec<DMatrix<f64>> = z2.iter().zip(&z1).map(|(a, b)| a + b * dtau).collect();
            let dkappa = (dk - kappa * dtau) / tau;
            // scaled directions
            let dzt: Vec<DMatrix<f64>> = sc.iter().zip(&dz).map(|(w, d)| w.r.transpose() * d * &w.r).collect();
            let dst: Vec<DMatrix<f64>> = us.iter().zip(&dzt).map(|(u, d)| u - d).collect();

            let mut amax = f64::INFINITY;
            for (w, (a, b)) in sc.iter().zip(dst.iter().zip(&dzt)) {
                amax = amax.min(max_step(&w.lam, a)).min(max_step(&w.lam, b));
            }
            if dtau < 0.0 {
                amax = amax.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                amax = amax.min(-kappa / dkappa);
            }
            if pass == 0 {
                let a = amax.min(1.0);
                sigma = (1.0 - a).powi(3);
                let c: Vec<DMatrix<f64>> = dst.iter().zip(&dzt).map(|(a, b)| jordan(a, b)).collect();
                corr = Some((c, dtau * dkappa));
            } else {
                let alpha = (0.99 * amax).min(1.0);
                let dsv: Vec<DMatrix<f64>> = sc.iter().zip(&dst).map(|(w, d)| &w.r * d * w.r.transpose()).collect();
                step = Some((alpha, dx, dsv, dz, dtau, dkappa));
            }
        }
        let (mut alpha, dx, dsv, dz, dtau, dkappa) = step.unwrap();
        let moved = |base: &DMatrix<f64>, d: &DMatrix<f64>, a: f64| {
            let m = base + d * a;
            (&m + m.transpose()) * 0.5
        };
        // roundoff can leave a full step just outside the cone
        let mut trial: Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> = None;
        for _ in 0..30 {
            let ts: Vec<DMatrix<f64>> = s.iter().zip(&dsv).map(|(b, d)| moved(b, d, alpha)).collect();
            let tz: Vec<DMatrix<f64>> = z.iter().zip(&dz).map(|(b, d)| moved(b, d, alpha)).collect();
            if ts.iter().chain(&tz).all(|m| m.clone().cholesky().is_some()) {
                trial = Some((ts, tz));
                break;
            }
            alpha *= 0.8;
        }
        let Some((ts, tz)) = trial else {
            return best.map(|b| b.1).or(last).unwrap();
        };
        x += dx * alpha;
        s = ts;
        z = tz;
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        if !(tau > 0.0 && kappa > 0.0 && tau.is_finite()) || alpha < 1e-12 {
            return best.map(|b| b.1).or(last).unwrap();
        }
    }
    best.map(|b| b.1).or(last).unwrap()
}
