//! Log-determinant maximization over an LMI feasible set.
//!
//! The iterate is driven close to the optimum by a log-barrier Newton
//! method; Frank-Wolfe steps then certify it. Each Frank-Wolfe step solves
//! the linear SDP `max tr(T_k^{-1} T)` with the interior-point solver, which
//! yields the gap `tr(T_k^{-1} T_hat) - n >= logdet* - logdet T_k`, and moves
//! along the segment towards `T_hat` with an exact line search.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::cone::{smat, svec, svec_len, ConeBlock, ConeProgram};
use super::hsd::{self, SolverOptions, Status};
use super::problem::Residuals;
use crate::matops::sym_eigenvalues;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxDetOptions {
    /// Frank-Wolfe gap at which the loop stops.
    pub gap_tol: f64,
    pub max_fw_iter: usize,
    /// Target for the barrier gap bound `nu / t` before switching to
    /// Frank-Wolfe steps.
    pub barrier_tol: f64,
    pub solver: SolverOptions,
}

impl Default for MaxDetOptions {
    fn default() -> Self {
        MaxDetOptions {
            gap_tol: 1e-6,
            max_fw_iter: 100,
            barrier_tol: 1e-7,
            solver: SolverOptions::default(),
        }
    }
}

/// The last Frank-Wolfe segment `T(g) = (1-g) start + g end` and the step
/// chosen on it.
#[derive(Debug, Clone)]
pub struct FwSegment {
    pub start: DMatrix<f64>,
    pub end: DMatrix<f64>,
    pub step: f64,
}

impl FwSegment {
    /// `log det T(g)`, or `-inf` when `T(g)` is not positive definite.
    pub fn logdet_at(&self, g: f64) -> f64 {
        let t = &self.start * (1.0 - g) + &self.end * g;
        match Cholesky::new(t) {
            Some(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => f64::NEG_INFINITY,
        }
    }
}

pub(crate) struct MaxDetOutcome {
    pub status: Status,
    pub w: DVector<f64>,
    pub logdet: f64,
    pub fw_gap: Option<f64>,
    pub segment: Option<FwSegment>,
    pub residuals: Residuals,
    pub iterations: usize,
}

struct Target<'a> {
    t0: &'a DVector<f64>,
    lin: &'a DMatrix<f64>,
    order: usize,
}

impl Target<'_> {
    fn at(&self, w: &DVector<f64>) -> DMatrix<f64> {
        smat((self.t0 + self.lin * w).as_slice(), self.order)
    }
}

fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Cholesky factors of every constraint block and of the target at `w`.
fn factor(p: &ConeProgram, tg: &Target, w: &DVector<f64>) -> Option<(Vec<Cholesky<f64, Dyn>>, Cholesky<f64, Dyn>)> {
    let mut fs = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        fs.push(Cholesky::new(b.slack(w))?);
    }
    let t = Cholesky::new(tg.at(w))?;
    Some((fs, t))
}

fn barrier_value(fs: &[Cholesky<f64, Dyn>], ft: &Cholesky<f64, Dyn>, t: f64) -> f64 {
    -t * chol_logdet(ft) - fs.iter().map(chol_logdet).sum::<f64>()
}

/// Adds `coef * G^T (W (x) W) G` and `coef * G^T svec(W)` for one block,
/// where the block is `smat(h + sign * G w)` and `W` its inverse.
fn accumulate(
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
    g: &DMatrix<f64>,
    winv: &DMatrix<f64>,
    order: usize,
    coef: f64,
    sign: f64,
) {
    if order == 1 {
        let wv = winv[(0, 0)];
        let row = g.row(0).transpose();
        grad.axpy(-coef * sign * wv, &row, 1.0);
        hess.ger(coef * wv * wv, &row, &row, 1.0);
        return;
    }
    let sw = svec(winv);
    grad.gemv_tr(-coef * sign, g, &sw, 1.0);
    let m = g.ncols();
    let mut y = DMatrix::zeros(svec_len(order), m);
    for j in 0..m {
        let col = g.column(j);
        if col.amax() == 0.0 {
            continue;
        }
        let gj = smat(col.as_slice(), order);
        y.set_column(j, &svec(&(winv * gj * winv)));
    }
    hess.gemm_tr(coef, g, &y, 1.0);
}

fn newton_direction(
    p: &ConeProgram,
    tg: &Target,
    fs: &[Cholesky<f64, Dyn>],
    ft: &Cholesky<f64, Dyn>,
    t: f64,
) -> Option<(DVector<f64>, f64)> {
    let m = p.dim();
    let mut grad = DVector::zeros(m);
    let mut hess = DMatrix::zeros(m, m);
    for (b, f) in p.blocks.iter().zip(fs) {
        // block = h - G w
        accumulate(&mut grad, &mut hess, &b.g, &f.inverse(), b.order, 1.0, -1.0);
    }
    // target = t0 + L w, weighted by t
    accumulate(&mut grad, &mut hess, tg.lin, &ft.inverse(), tg.order, t, 1.0);
    let reg = 1e-13 * hess.diagonal().amax().max(1e-300);
    for i in 0..m {
        hess[(i, i)] += reg;
    }
    let dw = match Cholesky::new(hess.clone()) {
        Some(ch) => ch.solve(&(-&grad)),
        None => hess.clone().lu().solve(&(-&grad))?,
    };
    let dec = -grad.dot(&dw);
    if !dec.is_finite() {
        return None;
    }
    Some((dw, dec.max(0.0)))
}

/// Centers at barrier weight `t`; returns the number of Newton steps.
fn center(p: &ConeProgram, tg: &Target, w: &mut DVector<f64>, t: f64) -> usize {
    let mut steps = 0;
    while steps < 50 {
        let Some((fs, ft)) = factor(p, tg, w) else { break };
        let Some((dw, dec)) = newton_direction(p, tg, &fs, &ft, t) else { break };
        steps += 1;
        if dec / 2.0 < 1e-9 {
            break;
        }
        let f0 = barrier_value(&fs, &ft, t);
        let mut a = 1.0;
        let mut moved = false;
        while a > 1e-12 {
            let trial = &*w + &dw * a;
            if let Some((fs2, ft2)) = factor(p, tg, &trial) {
                let f1 = barrier_value(&fs2, &ft2, t);
                // the Armijo test is meaningless once f differences hit roundoff
                if f1 <= f0 - 0.25 * a * dec || dec < 1e-6 {
                    *w = trial;
                    moved = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !moved {
            break;
        }
    }
    steps
}

/// Largest margin `s <= 1` such that every block and the target are `>= s I`.
fn phase_one(p: &ConeProgram, tg: &Target, opts: &SolverOptions) -> (Status, DVector<f64>, f64) {
    let m = p.dim();
    let widen = |g: &DMatrix<f64>, extra: DVector<f64>| {
        let mut out = DMatrix::zeros(g.nrows(), m + 1);
        out.view_mut((0, 0), (g.nrows(), m)).copy_from(g);
        out.set_column(m, &extra);
        out
    };
    let mut blocks: Vec<ConeBlock> = p
        .blocks
        .iter()
        .map(|b| ConeBlock {
            order: b.order,
            h: b.h.clone(),
            g: widen(&b.g, svec(&DMatrix::identity(b.order, b.order))),
            source: b.source,
        })
        .collect();
    blocks.push(ConeBlock {
        order: tg.order,
        h: tg.t0.clone(),
        g: widen(&(-tg.lin), svec(&DMatrix::identity(tg.order, tg.order))),
        source: usize::MAX,
    });
    let mut cap = DMatrix::zeros(1, m + 1);
    cap[(0, m)] = 1.0;
    blocks.push(ConeBlock { order: 1, h: DVector::from_element(1, 1.0), g: cap, source: usize::MAX });
    let mut c = DVector::zeros(m + 1);
    c[m] = -1.0;
    let sol = hsd::solve(&ConeProgram { c, c0: 0.0, blocks }, opts);
    let s = sol.x[m];
    (sol.status, sol.x.rows(0, m).into_owned(), s)
}

/// A stalled solve whose best iterate misses the tolerances by a small
/// factor still gives a usable Frank-Wolfe vertex.
fn near_optimal(sol: &hsd::ConeSolution, opts: &SolverOptions) -> bool {
    const SLACK: f64 = 100.0;
    sol.status == Status::MaxIterations
        && sol.pres <= SLACK * opts.feastol
        && sol.dres <= SLACK * opts.feastol
        && sol.gap <= SLACK * opts.gaptol * (1.0 + sol.pcost.abs().min(sol.dcost.abs()))
}

/// `argmax_{g in [0,1]} sum log(1 + g mu_i)` by bisection on the derivative.
fn line_search(mu: &[f64]) -> f64 {
    let dphi = |g: f64| mu.iter().map(|&u| u / (1.0 + g * u)).sum::<f64>();
    let mut hi = 1.0_f64;
    let lo_mu = mu.iter().copied().fold(f64::INFINITY, f64::min);
    if lo_mu < 0.0 {
        hi = hi.min(-0.999_999 / lo_mu);
    }
    if dphi(0.0) <= 0.0 {
        return 0.0;
    }
    if dphi(hi) >= 0.0 {
        return hi;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dphi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub(crate) fn solve(
    p: &ConeProgram,
    t0: &DVector<f64>,
    lin: &DMatrix<f64>,
    order: usize,
    opts: &MaxDetOptions,
) -> MaxDetOutcome {
    let tg = Target { t0, lin, order };
    let m = p.dim();
    let fail = |status: Status, w: DVector<f64>, iterations: usize| MaxDetOutcome {
        status,
        w,
        logdet: f64::NAN,
        fw_gap: None,
        segment: None,
        residuals: Residuals::default(),
        iterations,
    };

    let (st, mut w, margin) = phase_one(p, &tg, &opts.solver);
    match st {
        Status::Optimal if margin > 1e-10 => {}
        Status::Optimal | Status::Infeasible => return fail(Status::Infeasible, w, 0),
        _ => return fail(st, w, 0),
    }
    if factor(p, &tg, &w).is_none() {
        return fail(Status::MaxIterations, w, 0);
    }
    let mut iterations = 0;

    if m > 0 {
        // a linearization that is unbounded at the start means the log-det is too
        let tinv = Cholesky::new(tg.at(&w)).map(|c| c.inverse()).unwrap();
        let c = -(lin.transpose() * svec(&tinv));
        let probe = hsd::solve(&ConeProgram { c, c0: 0.0, blocks: p.blocks.clone() }, &opts.solver);
        if probe.status == Status::Unbounded {
            return fail(Status::Unbounded, w, 0);
        }
        let nu = p.degree().max(1) as f64;
        let mut t = 1.0;
        loop {
            iterations += center(p, &tg, &mut w, t);
            if nu / t < opts.barrier_tol {
                break;
            }
            t *= 8.0;
        }
    }

    let nf = order as f64;
    let mut gap = f64::INFINITY;
    let mut segment = None;
    let mut residuals = Residuals::default();
    let mut status = Status::MaxIterations;
    for _ in 0..opts.max_fw_iter.max(1) {
        iterations += 1;
        let tk = tg.at(&w);
        let Some(ch) = Cholesky::new(tk.clone()) else { break };
        let tinv = ch.inverse();
        let c = -(lin.transpose() * svec(&tinv));
        let lp = hsd::solve(&ConeProgram { c, c0: 0.0, blocks: p.blocks.clone() }, &opts.solver);
        residuals = Residuals { primal: lp.pres, dual: lp.dres, gap: lp.gap };
        if lp.status == Status::Unbounded {
            status = Status::Unbounded;
            break;
        }
        if lp.status != Status::Optimal && !near_optimal(&lp, &opts.solver) {
            status = lp.status;
            break;
        }
        let that = tg.at(&lp.x);
        let lin_val = (&tinv * &that).trace();
        if lin_val > 1e8 * nf {
            status = Status::Unbounded;
            break;
        }
        // the dual objective bounds the linear maximum from above
        let k0 = svec(&tinv).dot(t0);
        gap = (lin_val.max(k0 - lp.dcost) - nf).max(0.0);
        let r = ch.l();
        let linv = r.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(order, order));
        let d = &linv * (&that - &tk) * linv.transpose();
        let mu = sym_eigenvalues(&(0.5 * (&d + d.transpose())));
        let step = line_search(mu.as_slice());
        let trial = &w + (&lp.x - &w) * step;
        segment = Some(FwSegment { start: tk, end: that, step });
        if factor(p, &tg, &trial).is_some() || step == 0.0 {
            w = trial;
        }
        if gap < opts.gap_tol {
            status = Status::Optimal;
            break;
        }
    }

    let logdet = Cholesky::new(tg.at(&w)).map_or(f64::NAN, |c| chol_logdet(&c));
    MaxDetOutcome {
        status,
        w,
        logdet,
        fw_gap: gap.is_finite().then_some(gap),
        segment,
        residuals,
        iterations,
    }
}
