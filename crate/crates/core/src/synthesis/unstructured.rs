use nalgebra::DMatrix;

use super::robust::{need_channels, robust_margin};
use super::{AlgoConfig, Channels, Objective, SynthesisOutcome, SynthesisStatus};
use crate::error::{Error, Result};
use crate::lmi::{LmiBuilder, LmiSolution, MatExpr, Sense, Status, Var};
use crate::lti::SparsityPattern;
use crate::matops::{inv_spd, SymMatrix};
use crate::uncertainty::MatrixEllipsoid;

/// Robust stabilizing gain `K = Y X^{-1}` from the joint problem in `(X, Y)`.
pub fn stabilize_unstructured(ell: &MatrixEllipsoid, cfg: &AlgoConfig) -> Result<SynthesisOutcome> {
    solve_xy(ell, Objective::Stabilize, None, cfg, None)
}

/// Unstructured robust H2 design; minimizes `gamma^2` directly.
pub fn h2_unstructured(
    ell: &MatrixEllipsoid,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    g: &DMatrix<f64>,
    cfg: &AlgoConfig,
) -> Result<SynthesisOutcome> {
    let h = DMatrix::zeros(c.nrows(), g.ncols());
    let ch = Channels::new(c.clone(), d.clone(), g.clone(), h)?;
    solve_xy(ell, Objective::H2, Some(&ch), cfg, None)
}

/// Unstructured robust H-infinity design.
pub fn hinf_unstructured(
    ell: &MatrixEllipsoid,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    cfg: &AlgoConfig,
) -> Result<SynthesisOutcome> {
    let ch = Channels::new(c.clone(), d.clone(), g.clone(), h.clone())?;
    solve_xy(ell, Objective::Hinf, Some(&ch), cfg, None)
}

/// The joint `(X, Y)` problem of the given mode with `X` restricted to be
/// diagonal and `Y` restricted to the pattern.
pub fn baseline_xdiag(
    ell: &MatrixEllipsoid,
    pat: &SparsityPattern,
    objective: Objective,
    ch: Option<&Channels>,
    cfg: &AlgoConfig,
) -> Result<SynthesisOutcome> {
    if pat.shape() != (ell.nu(), ell.nx()) {
        return Err(Error::Dimension(format!(
            "pattern is {:?}, gain is {:?}",
            pat.shape(),
            (ell.nu(), ell.nx())
        )));
    }
    solve_xy(ell, objective, ch, cfg, Some(pat))
}

struct Handles {
    x: Var,
    y: Var,
    lambda: Option<Var>,
    bound: Option<Var>,
}

fn build_xy(
    ell: &MatrixEllipsoid,
    objective: Objective,
    ch: Option<&Channels>,
    eta: f64,
    restrict: Option<&SparsityPattern>,
) -> Result<(crate::lmi::LmiProblem, Handles)> {
    let (nx, nu) = (ell.nx(), ell.nu());
    let mut b = LmiBuilder::new().with_margin(eta);
    let xv = b.symmetric("X", nx)?;
    let yv = b.matrix("Y", nu, nx)?;
    let (x, y) = (xv.expr(), yv.expr());
    let v = MatExpr::vstack(&[&x, &y])?;
    let top = v.lmul(&ell.delta.transpose())?.herm()?;
    let rv = v.lmul(&ell.astar_inv_sqrt)?;
    let eye = |n: usize| DMatrix::<f64>::identity(n, n);
    b.constrain("X", x.clone(), Sense::PosDefStrict)?;
    if let Some(pat) = restrict {
        let off: Vec<(usize, usize)> = (0..nx).flat_map(|j| (j + 1..nx).map(move |i| (i, j))).collect();
        if !off.is_empty() {
            b.constrain("X diagonal", x.select(&off)?, Sense::Zero)?;
        }
        let forbidden = pat.forbidden_entries();
        if !forbidden.is_empty() {
            b.constrain("Y pattern", y.select(&forbidden)?, Sense::Zero)?;
        }
    }
    let mut handles = Handles { x: xv, y: yv, lambda: None, bound: None };
    let lmi = match (objective, ch) {
        (Objective::Stabilize, _) => {
            let t = top.add_const(&eye(nx))?;
            let m = MatExpr::constant(-eye(nz(ell)));
            MatExpr::sym_blocks(&[vec![Some(&t)], vec![Some(&rv), Some(&m)]])?
        }
        (Objective::H2, Some(c)) => {
            let lam = b.nonnegative("lambda")?;
            let nu = b.scalar("nu")?;
            let nd = c.g.ncols();
            let ny = c.c.nrows();
            let z = b.symmetric("Z", nd)?.expr();
            let l = lam.expr();
            let t = top.add(&l.times_matrix(&eye(nx))?)?;
            let m = l.times_matrix(&eye(nz(ell)))?.neg();
            let cv = x.lmul(&c.c)?.add(&y.lmul(&c.d)?)?;
            let gx = MatExpr::constant(c.g.clone());
            let zgx = MatExpr::sym_blocks(&[vec![Some(&z)], vec![Some(&gx), Some(&x)]])?;
            b.constrain("gram", zgx, Sense::PosSemiDef)?;
            b.constrain("trace", nu.expr().sub(&z.trace()?)?, Sense::PosSemiDef)?;
            b.minimize(nu.expr())?;
            let mi = MatExpr::constant(-eye(ny));
            handles.lambda = Some(lam);
            handles.bound = Some(nu);
            MatExpr::sym_blocks(&[vec![Some(&t)], vec![Some(&rv), Some(&m)], vec![Some(&cv), None, Some(&mi)]])?
        }
        (Objective::Hinf, Some(c)) => {
            let lam = b.nonnegative("lambda")?;
            let gamma = b.scalar("gamma")?;
            let (ny, nd) = c.h.shape();
            let l = lam.expr();
            let t = top.add(&l.times_matrix(&eye(nx))?)?;
            let m = l.times_matrix(&eye(nz(ell)))?.neg();
            let cv = x.lmul(&c.c)?.add(&y.lmul(&c.d)?)?;
            let gt = MatExpr::constant(c.g.transpose());
            let hx = MatExpr::constant(c.h.clone());
            let gd = gamma.expr().times_matrix(&eye(nd))?.neg();
            let gy = gamma.expr().times_matrix(&eye(ny))?.neg();
            b.minimize(gamma.expr())?;
            handles.lambda = Some(lam);
            handles.bound = Some(gamma);
            MatExpr::sym_blocks(&[
                vec![Some(&t)],
                vec![Some(&rv), Some(&m)],
                vec![Some(&gt), None, Some(&gd)],
                vec![Some(&cv), None, Some(&hx), Some(&gy)],
            ])?
        }
        _ => unreachable!("channels resolved by the caller"),
    };
    b.constrain("robust", lmi, Sense::NegDefStrict)?;
    Ok((b.build()?, handles))
}

fn nz(ell: &MatrixEllipsoid) -> usize {
    ell.nx() + ell.nu()
}

fn solve_xy(
    ell: &MatrixEllipsoid,
    objective: Objective,
    ch: Option<&Channels>,
    cfg: &AlgoConfig,
    restrict: Option<&SparsityPattern>,
) -> Result<SynthesisOutcome> {
    cfg.validate()?;
    let ch = need_channels(objective, ch)?;
    if let Some(c) = ch {
        c.check(ell)?;
    }
    let (prob, hd) = build_xy(ell, objective, ch, cfg.eta, restrict)?;
    let sol = prob.solve();
    let (nx, nu) = (ell.nx(), ell.nu());
    match sol.status {
        Status::Infeasible => return Ok(SynthesisOutcome::failed(objective, SynthesisStatus::Infeasible, nx, nu)),
        Status::Unbounded => {
            return Err(Error::SolverFault(format!("{objective} design reported an unbounded objective")))
        }
        Status::Optimal | Status::MaxIterations => {}
    }
    match extract(ell, objective, ch, &sol, &hd)? {
        Some(out) => Ok(out),
        None => Ok(SynthesisOutcome::failed(objective, SynthesisStatus::NoConvergence, nx, nu)),
    }
}

fn extract(
    ell: &MatrixEllipsoid,
    objective: Objective,
    ch: Option<&Channels>,
    sol: &LmiSolution,
    hd: &Handles,
) -> Result<Option<SynthesisOutcome>> {
    let x = SymMatrix::symmetrize(sol.value(&hd.x));
    let Ok(p) = inv_spd(&x) else {
        return Ok(None);
    };
    let p = p.into_inner();
    let k = sol.value(&hd.y) * &p;
    let lambda = hd.lambda.as_ref().map(|l| sol.scalar(l));
    if lambda.is_some_and(|l| !(l > 0.0)) {
        return Ok(None);
    }
    let gamma = match (objective, &hd.bound) {
        (Objective::H2, Some(nu)) => {
            let c = ch.expect("channels resolved by the caller");
            let t = (c.g.transpose() * &p * &c.g).trace();
            Some(sol.scalar(nu).max(t).max(0.0).sqrt())
        }
        (Objective::Hinf, Some(g)) => Some(sol.scalar(g)),
        _ => None,
    };
    let margin = robust_margin(ell, objective, ch, &k, &p, lambda.unwrap_or(1.0), gamma)?;
    if !(margin > 0.0) {
        return Ok(None);
    }
    Ok(Some(SynthesisOutcome {
        objective,
        status: SynthesisStatus::Ok,
        k,
        p,
        lambda,
        gamma,
        gamma_iterate: gamma,
        trace: Vec::new(),
    }))
}
