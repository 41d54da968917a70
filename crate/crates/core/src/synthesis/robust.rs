use nalgebra::DMatrix;

use super::{Channels, Objective};
use crate::error::{dim_err, Error, Result};
use crate::lmi::{LmiBuilder, MatExpr, Sense, Status};
use crate::matops::{gram, herm, max_eig, min_eig, sym_blocks, vstack};
use crate::uncertainty::MatrixEllipsoid;

/// A certificate `(P, lambda, gamma)` for a fixed gain, with the margin it
/// was verified at.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub p: DMatrix<f64>,
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub margin: f64,
}

pub(crate) fn need_channels<'a>(objective: Objective, ch: Option<&'a Channels>) -> Result<Option<&'a Channels>> {
    match (objective, ch) {
        (Objective::Stabilize, _) => Ok(None),
        (_, None) => Err(Error::Input(format!("{objective} design needs performance channels"))),
        (Objective::H2, Some(c)) if c.h.amax() != 0.0 => Err(Error::UnsupportedChannel(
            "the H2 design requires H = 0 (a direct feedthrough makes the H2 norm infinite)".into(),
        )),
        (_, Some(c)) => Ok(Some(c)),
    }
}

/// Center closed loop `delta' [I; K]` and the weight `[I; K]' A*^{-1} [I; K]`.
pub(crate) fn closed_loop_terms(ell: &MatrixEllipsoid, k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let nx = ell.nx();
    if k.shape() != (ell.nu(), nx) {
        return Err(dim_err(format!("gain is {:?}, expected {:?}", k.shape(), (ell.nu(), nx))));
    }
    let w = vstack(&[&DMatrix::identity(nx, nx), k]);
    let ac = ell.delta.transpose() * &w;
    let qk = gram(&(&ell.astar_inv_sqrt * &w));
    Ok((ac, qk))
}

/// Left-hand side of the mode's robust inequality at `(K, P, lambda, gamma)`;
/// the design is certified for every member of the ellipsoid when this is
/// negative definite.
pub fn robust_lmi(
    ell: &MatrixEllipsoid,
    objective: Objective,
    ch: Option<&Channels>,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: f64,
    gamma: Option<f64>,
) -> Result<DMatrix<f64>> {
    let ch = need_channels(objective, ch)?;
    if let Some(c) = ch {
        c.check(ell)?;
    }
    if p.shape() != (ell.nx(), ell.nx()) {
        return Err(dim_err("certificate P does not match the state dimension"));
    }
    if !(lambda > 0.0) {
        return Err(Error::Input("multiplier lambda must be positive".into()));
    }
    let (ac, qk) = closed_loop_terms(ell, k)?;
    let mut top = herm(&(p * &ac)) + p * p * lambda + qk / lambda;
    match (objective, ch) {
        (Objective::Stabilize, _) => Ok(top),
        (Objective::H2, Some(c)) => {
            top += gram(&c.ck(k));
            Ok(top)
        }
        (Objective::Hinf, Some(c)) => {
            let g = gamma.ok_or_else(|| Error::Input("H-infinity check needs gamma".into()))?;
            let (ny, nd) = c.h.shape();
            Ok(sym_blocks(&[
                vec![Some(top)],
                vec![Some(c.g.transpose() * p), Some(DMatrix::identity(nd, nd) * -g)],
                vec![Some(c.ck(k)), Some(c.h.clone()), Some(DMatrix::identity(ny, ny) * -g)],
            ]))
        }
        _ => unreachable!("channels resolved above"),
    }
}

/// Smallest slack of the certificate: the negated top eigenvalue of the
/// robust inequality, capped by the smallest eigenvalue of `P`. For H2 a
/// `gamma` below `sqrt(tr(G' P G))` makes the margin negative.
pub fn robust_margin(
    ell: &MatrixEllipsoid,
    objective: Objective,
    ch: Option<&Channels>,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: f64,
    gamma: Option<f64>,
) -> Result<f64> {
    let m = robust_lmi(ell, objective, ch, k, p, lambda, gamma)?;
    let mut margin = (-max_eig(&m)).min(min_eig(p));
    if let (Objective::H2, Some(c), Some(g)) = (objective, ch, gamma) {
        let t = (c.g.transpose() * p * &c.g).trace();
        let short = g * g - t + 1e-12 * t.abs().max(1.0);
        if short < 0.0 {
            margin = margin.min(short);
        }
    }
    Ok(margin)
}

/// Best certificate for the fixed gain `K`: a feasibility problem in `P`
/// for stabilization, the smallest bound `gamma` otherwise. Returns `None`
/// when no certificate with margin `eta / 2` is found.
pub fn certify_gain(
    ell: &MatrixEllipsoid,
    objective: Objective,
    ch: Option<&Channels>,
    k: &DMatrix<f64>,
    eta: f64,
) -> Result<Option<Certificate>> {
    let ch = need_channels(objective, ch)?;
    if let Some(c) = ch {
        c.check(ell)?;
    }
    let (ac, qk) = closed_loop_terms(ell, k)?;
    let nx = ell.nx();
    let mut b = LmiBuilder::new().with_margin(eta);
    let p = b.symmetric("P", nx)?.expr();
    let pac = p.rmul(&ac)?.herm()?;
    let eye = |n: usize| MatExpr::identity(n);
    b.constrain("P", p.clone(), Sense::PosDefStrict)?;
    let mut mu_var = None;
    let mut gamma_var = None;
    let lmi = match (objective, ch) {
        (Objective::Stabilize, _) => {
            let top = pac.add_const(&qk)?;
            MatExpr::sym_blocks(&[vec![Some(&top)], vec![Some(&p), Some(&eye(nx).neg())]])?
        }
        (Objective::H2, Some(c)) => {
            let mu = b.nonnegative("mu")?;
            let nu = b.scalar("nu")?;
            let nd = c.g.ncols();
            let z = b.symmetric("Z", nd)?.expr();
            let m = mu.expr();
            let top = pac.add(&m.times_matrix(&qk)?)?.add_const(&gram(&c.ck(k)))?;
            let corner = m.times_matrix(&DMatrix::identity(nx, nx))?.neg();
            b.constrain("gram", z.sub(&p.lmul(&c.g.transpose())?.rmul(&c.g)?)?, Sense::PosSemiDef)?;
            b.constrain("trace", nu.expr().sub(&z.trace()?)?, Sense::PosSemiDef)?;
            b.minimize(nu.expr())?;
            mu_var = Some(mu);
            MatExpr::sym_blocks(&[vec![Some(&top)], vec![Some(&p), Some(&corner)]])?
        }
        (Objective::Hinf, Some(c)) => {
            let mu = b.nonnegative("mu")?;
            let gamma = b.scalar("gamma")?;
            let (ny, nd) = c.h.shape();
            let m = mu.expr();
            let gi = |n: usize| gamma.expr().times_matrix(&DMatrix::identity(n, n)).map(|e| e.neg());
            let top = pac.add(&m.times_matrix(&qk)?)?;
            let pg = p.lmul(&c.g.transpose())?;
            let ckx = MatExpr::constant(c.ck(k));
            let hx = MatExpr::constant(c.h.clone());
            let corner = m.times_matrix(&DMatrix::identity(nx, nx))?.neg();
            let (gd, gy) = (gi(nd)?, gi(ny)?);
            b.minimize(gamma.expr())?;
            mu_var = Some(mu);
            gamma_var = Some(gamma);
            MatExpr::sym_blocks(&[
                vec![Some(&top)],
                vec![Some(&pg), Some(&gd)],
                vec![Some(&ckx), Some(&hx), Some(&gy)],
                vec![Some(&p), None, None, Some(&corner)],
            ])?
        }
        _ => unreachable!("channels resolved above"),
    };
    b.constrain("robust", lmi, Sense::NegDefStrict)?;
    let pvar = b.lookup("P")?;
    let prob = b.build()?;
    let sol = prob.solve();
    if !matches!(sol.status, Status::Optimal | Status::MaxIterations) {
        return Ok(None);
    }
    let pv = crate::matops::SymMatrix::symmetrize(sol.value(&pvar)).into_inner();
    let lambda = match &mu_var {
        Some(mu) => {
            let m = sol.scalar(mu);
            if !(m > 0.0) {
                return Ok(None);
            }
            1.0 / m
        }
        None => 1.0,
    };
    let gamma = match objective {
        Objective::Stabilize => None,
        Objective::H2 => {
            let c = ch.expect("channels resolved above");
            let t = (c.g.transpose() * &pv * &c.g).trace().max(0.0);
            Some(t.sqrt())
        }
        Objective::Hinf => gamma_var.as_ref().map(|g| sol.scalar(g)),
    };
    let margin = robust_margin(ell, objective, ch, k, &pv, lambda, gamma)?;
    if margin >= 0.5 * eta {
        Ok(Some(Certificate { p: pv, lambda, gamma, margin }))
    } else {
        Ok(None)
    }
}
