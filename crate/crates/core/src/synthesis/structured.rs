use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;

use super::linearize::{linearize_bilinear, stacked_gain};
use super::robust::{certify_gain, need_channels, robust_margin};
use super::unstructured::{h2_unstructured, hinf_unstructured, stabilize_unstructured};
use super::{AlgoConfig, Channels, IterRecord, Objective, SynthesisOutcome, SynthesisStatus};
use crate::error::{Error, Result};
use crate::lmi::{LmiBuilder, MatExpr, Sense, Status};
use crate::lti::SparsityPattern;
use crate::matops::{max_eig, min_eig, SymMatrix};
use crate::uncertainty::MatrixEllipsoid;

/// Convexified robust inequality around `(Kt, Pt, lt)`: the bilinear term is
/// replaced by its linear minorant and `-1/lambda` by its tangent at `lt`.
/// Negative definiteness implies the robust inequality at `(K, P, lambda)`.
/// `lambda` and `gamma` are ignored for stabilization.
#[allow(clippy::too_many_arguments)]
pub fn relaxed_lmi(
    ell: &MatrixEllipsoid,
    objective: Objective,
    ch: Option<&Channels>,
    k: &MatExpr,
    p: &MatExpr,
    lambda: &MatExpr,
    gamma: &MatExpr,
    kt: &DMatrix<f64>,
    pt: &DMatrix<f64>,
    lt: f64,
) -> Result<MatExpr> {
    let ch = need_channels(objective, ch)?;
    let (nx, nz) = (ell.nx(), ell.delta.nrows());
    let eye = |n: usize| DMatrix::<f64>::identity(n, n);
    let l = linearize_bilinear(k, p, kt, pt, ell)?;
    let w = stacked_gain(k, nx)?;
    let top = l.scale(-0.5);
    let sum = p.lmul(&ell.delta)?.add(&w)?.scale(FRAC_1_SQRT_2);
    let rw = w.lmul(&ell.astar_inv_sqrt)?;
    let neg_z = MatExpr::constant(-eye(nz));
    if objective == Objective::Stabilize {
        let neg_x = MatExpr::constant(-eye(nx));
        return Ok(MatExpr::sym_blocks(&[
            vec![Some(&top)],
            vec![Some(&sum), Some(&neg_z)],
            vec![Some(&rw), None, Some(&neg_z)],
            vec![Some(p), None, None, Some(&neg_x)],
        ])?);
    }
    let c = ch.expect("channels resolved above");
    if !(lt > 0.0) {
        return Err(Error::Input("linearization multiplier must be positive".into()));
    }
    let lam_z = lambda.times_matrix(&eye(nz))?.neg();
    let tangent = lambda.times_matrix(&(eye(nx) / (lt * lt)))?.add_const(&(eye(nx) * (-2.0 / lt)))?;
    let ck = k.lmul(&c.d)?.add_const(&c.c)?;
    let (ny, nd) = c.h.shape();
    if objective == Objective::H2 {
        let neg_y = MatExpr::constant(-eye(ny));
        return Ok(MatExpr::sym_blocks(&[
            vec![Some(&top)],
            vec![Some(&sum), Some(&neg_z)],
            vec![Some(&rw), None, Some(&lam_z)],
            vec![Some(p), None, None, Some(&tangent)],
            vec![Some(&ck), None, None, None, Some(&neg_y)],
        ])?);
    }
    let gp = p.lmul(&c.g.transpose())?;
    let hx = MatExpr::constant(c.h.clone());
    let gd = gamma.times_matrix(&eye(nd))?.neg();
    let gy = gamma.times_matrix(&eye(ny))?.neg();
    Ok(MatExpr::sym_blocks(&[
        vec![Some(&top)],
        vec![Some(&sum), Some(&neg_z)],
        vec![Some(&rw), None, Some(&lam_z)],
        vec![Some(p), None, None, Some(&tangent)],
        vec![Some(&gp), None, None, None, Some(&gd)],
        vec![Some(&ck), None, None, None, Some(&hx), Some(&gy)],
    ])?)
}

/// Structured robust stabilization by successive convexification.
pub fn stabilize_structured(ell: &MatrixEllipsoid, pat: &SparsityPattern, cfg: &AlgoConfig) -> Result<SynthesisOutcome> {
    check_pattern(ell, pat)?;
    let init = stabilize_unstructured(ell, cfg)?;
    iterate(ell, Objective::Stabilize, None, pat, cfg, init)
}

/// Structured robust H2 design.
pub fn h2_structured(
    ell: &MatrixEllipsoid,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    g: &DMatrix<f64>,
    pat: &SparsityPattern,
    cfg: &AlgoConfig,
) -> Result<SynthesisOutcome> {
    check_pattern(ell, pat)?;
    let init = h2_unstructured(ell, c, d, g, cfg)?;
    let ch = Channels::new(c.clone(), d.clone(), g.clone(), DMatrix::zeros(c.nrows(), g.ncols()))?;
    iterate(ell, Objective::H2, Some(&ch), pat, cfg, init)
}

/// Structured robust H-infinity design.
pub fn hinf_structured(
    ell: &MatrixEllipsoid,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    pat: &SparsityPattern,
    cfg: &AlgoConfig,
) -> Result<SynthesisOutcome> {
    check_pattern(ell, pat)?;
    let init = hinf_unstructured(ell, c, d, g, h, cfg)?;
    let ch = Channels::new(c.clone(), d.clone(), g.clone(), h.clone())?;
    iterate(ell, Objective::Hinf, Some(&ch), pat, cfg, init)
}

fn check_pattern(ell: &MatrixEllipsoid, pat: &SparsityPattern) -> Result<()> {
    if pat.shape() != (ell.nu(), ell.nx()) {
        return Err(Error::Dimension(format!(
            "pattern is {:?}, gain is {:?}",
            pat.shape(),
            (ell.nu(), ell.nx())
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Point {
    k: DMatrix<f64>,
    p: DMatrix<f64>,
    lambda: f64,
    gamma: f64,
}

fn residual(pat: &SparsityPattern, k: &DMatrix<f64>) -> f64 {
    k.component_mul(&pat.complement()).norm()
}

fn relaxed_at(ell: &MatrixEllipsoid, obj: Objective, ch: Option<&Channels>, at: &Point, lin: &Point) -> Result<DMatrix<f64>> {
    let e = relaxed_lmi(
        ell,
        obj,
        ch,
        &MatExpr::constant(at.k.clone()),
        &MatExpr::constant(at.p.clone()),
        &MatExpr::scalar(at.lambda),
        &MatExpr::scalar(at.gamma),
        &lin.k,
        &lin.p,
        lin.lambda,
    )?;
    Ok(e.eval(&[]))
}

fn finish(
    ell: &MatrixEllipsoid,
    obj: Objective,
    ch: Option<&Channels>,
    pat: &SparsityPattern,
    cfg: &AlgoConfig,
    pt: &Point,
) -> Result<Option<SynthesisOutcome>> {
    let kp = pat.project(&pt.k);
    let Some(cert) = certify_gain(ell, obj, ch, &kp, cfg.eta)? else {
        return Ok(None);
    };
    let perf = obj != Objective::Stabilize;
    Ok(Some(SynthesisOutcome {
        objective: obj,
        status: SynthesisStatus::Ok,
        k: kp,
        p: cert.p,
        lambda: perf.then_some(cert.lambda),
        gamma: cert.gamma,
        gamma_iterate: perf.then_some(pt.gamma),
        trace: Vec::new(),
    }))
}

fn iterate(
    ell: &MatrixEllipsoid,
    obj: Objective,
    ch: Option<&Channels>,
    pat: &SparsityPattern,
    cfg: &AlgoConfig,
    init: SynthesisOutcome,
) -> Result<SynthesisOutcome> {
    if !init.is_ok() {
        return Ok(init);
    }
    let perf = obj != Objective::Stabilize;
    let mut cur = Point {
        k: init.k.clone(),
        p: init.p.clone(),
        lambda: init.lambda.unwrap_or(1.0),
        gamma: init.gamma.unwrap_or(0.0),
    };
    let margin0 = robust_margin(ell, obj, ch, &cur.k, &cur.p, cur.lambda, init.gamma)?;
    let mut trace = vec![IterRecord {
        iter: 0,
        objective: residual(pat, &cur.k).powi(2),
        residual: residual(pat, &cur.k),
        gamma: init.gamma,
        margin: margin0,
        beta: cfg.beta0,
    }];
    if residual(pat, &cur.k) == 0.0 {
        let mut out = finish(ell, obj, ch, pat, cfg, &cur)?.unwrap_or(init);
        out.trace = trace;
        return Ok(out);
    }

    let mut slack = -max_eig(&relaxed_at(ell, obj, ch, &cur, &cur)?);
    if slack < 0.1 * cfg.eta {
        cur.p *= 1.0 + 1e-6;
        slack = -max_eig(&relaxed_at(ell, obj, ch, &cur, &cur)?);
    }
    if !(slack > 0.0) {
        return Err(Error::SolverFault(format!(
            "initial {obj} design does not satisfy the convexified inequality (slack {slack:.3e})"
        )));
    }

    let forbidden = pat.forbidden_entries();
    let mut beta = cfg.beta0;
    for it in 1..=cfg.max_iter {
        let slack = -max_eig(&relaxed_at(ell, obj, ch, &cur, &cur)?);
        let pmin = min_eig(&cur.p);

        let mut b = LmiBuilder::new();
        let kv = b.matrix("K", ell.nu(), ell.nx())?;
        let pv = b.symmetric("P", ell.nx())?;
        let (k, p) = (kv.expr(), pv.expr());
        let lam = if perf { Some(b.nonnegative("lambda")?) } else { None };
        let bound = if perf { Some(b.scalar(if obj == Objective::H2 { "nu" } else { "gamma" })?) } else { None };
        let t = b.scalar("t")?;
        let lam_e = lam.as_ref().map_or_else(|| MatExpr::scalar(1.0), |v| v.expr());
        let gam_e = match (obj, &bound) {
            (Objective::Hinf, Some(v)) => v.expr(),
            _ => MatExpr::scalar(0.0),
        };
        let lmi = relaxed_lmi(ell, obj, ch, &k, &p, &lam_e, &gam_e, &cur.k, &cur.p, cur.lambda)?;
        let scale = lmi.data_scale();
        let eta = cfg.eta.min(0.5 * slack / scale).min(0.5 * pmin);
        b = b.with_margin(eta);
        b.constrain("relaxed", lmi, Sense::NegDefStrict)?;
        b.constrain("P", p.clone(), Sense::PosDefStrict)?;
        let kf = k.select(&forbidden)?;
        let nf = forbidden.len();
        let epi = MatExpr::sym_blocks(&[vec![Some(&t.expr())], vec![Some(&kf), Some(&MatExpr::identity(nf))]])?;
        b.constrain("penalty", epi, Sense::PosSemiDef)?;
        if obj == Objective::H2 {
            let c = ch.expect("channels resolved by the caller");
            let ze = b.symmetric("Z", c.g.ncols())?.expr();
            b.constrain("gram", ze.sub(&p.lmul(&c.g.transpose())?.rmul(&c.g)?)?, Sense::PosSemiDef)?;
            let nu = bound.as_ref().expect("declared above").expr();
            b.constrain("trace", nu.sub(&ze.trace()?)?, Sense::PosSemiDef)?;
        }
        let objective = match &bound {
            Some(v) => v.expr().add(&t.expr().scale(beta))?,
            None => t.expr(),
        };
        b.minimize(objective)?;
        let prob = b.build()?;
        let sol = prob.solve();
        if !matches!(sol.status, Status::Optimal | Status::MaxIterations) {
            return Err(Error::SolverFault(format!(
                "convexified {obj} problem reported {} at iteration {it} after a feasible start",
                sol.status
            )));
        }
        let mut next = Point {
            k: sol.value(&kv),
            p: SymMatrix::symmetrize(sol.value(&pv)).into_inner(),
            lambda: lam.as_ref().map_or(1.0, |v| sol.scalar(v)),
            gamma: 0.0,
        };
        next.gamma = match (obj, &bound) {
            (Objective::H2, Some(nu)) => {
                let c = ch.expect("channels resolved by the caller");
                let tr = (c.g.transpose() * &next.p * &c.g).trace();
                sol.scalar(nu).max(tr).max(0.0).sqrt()
            }
            (Objective::Hinf, Some(g)) => sol.scalar(g),
            _ => 0.0,
        };
        let relaxed_slack = -max_eig(&relaxed_at(ell, obj, ch, &next, &cur)?);
        if !(relaxed_slack > 0.0) || !(next.lambda > 0.0) {
            return Err(Error::SolverFault(format!(
                "{obj} iterate {it} violates the convexified inequality (slack {relaxed_slack:.3e}, status {})",
                sol.status
            )));
        }
        let gamma = perf.then_some(next.gamma);
        let res = residual(pat, &next.k);
        trace.push(IterRecord {
            iter: it,
            objective: if perf { sol.objective_value } else { res * res },
            residual: res,
            gamma,
            margin: robust_margin(ell, obj, ch, &next.k, &next.p, next.lambda, gamma)?,
            beta,
        });
        let converged = if perf {
            (&next.p - &cur.p).norm() < cfg.eps_t && (&next.k - &cur.k).norm() < cfg.eps_t
        } else {
            res < cfg.eps_t
        };
        cur = next;
        if perf {
            beta = (beta * cfg.mu).min(cfg.beta_cap);
        }
        if converged {
            if let Some(mut out) = finish(ell, obj, ch, pat, cfg, &cur)? {
                out.trace = trace;
                return Ok(out);
            }
            if perf {
                beta = (2.0 * beta).min(cfg.beta_cap);
            }
        }
    }
    Ok(SynthesisOutcome {
        objective: obj,
        status: SynthesisStatus::NoConvergence,
        k: cur.k,
        p: cur.p,
        lambda: perf.then_some(cur.lambda),
        gamma: perf.then_some(cur.gamma),
        gamma_iterate: perf.then_some(cur.gamma),
        trace,
    })
}
