//! Independent verification of synthesized gains: true closed-loop norms,
//! Hurwitz checks, Monte-Carlo robustness over the ellipsoid and the
//! structural residual. Decisions here rest on eigenvalue computations, not
//! on solver status codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::lmi::{LmiBuilder, MatExpr, Sense};
use crate::lti::{closed_loop, transfer_at, LtiSystem, SparsityPattern};
use crate::matops::{gram, herm, is_hurwitz, max_eig, min_eig, solve_lyapunov, sym_blocks, SymMatrix};
use crate::synthesis::{robust_margin, Channels, Objective, SynthesisOutcome};
use crate::uncertainty::{sample_members, MatrixEllipsoid};

/// Number of log-spaced frequencies in the H-infinity grid search.
pub const GRID_POINTS: usize = 2000;

fn stable_loop(sys: &LtiSystem, k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (ak, ck) = closed_loop(sys, k)?;
    if !is_hurwitz(&ak, 0.0) {
        return Err(Error::NotHurwitz("closed loop is not stable; the norm is infinite".into()));
    }
    Ok((ak, ck))
}

/// H2 norm of the closed loop from the observability Gramian.
pub fn h2_norm(sys: &LtiSystem, k: &DMatrix<f64>) -> Result<f64> {
    if sys.h.amax() != 0.0 {
        return Err(Error::UnsupportedChannel("H2 norm is infinite with a direct feedthrough H != 0".into()));
    }
    let (ak, ck) = stable_loop(sys, k)?;
    let po = solve_lyapunov(&ak, &SymMatrix::symmetrize(gram(&ck)))?;
    let t = (sys.g.transpose() * po.as_matrix() * &sys.g).trace();
    Ok(t.max(0.0).sqrt())
}

fn sigma_max(ak: &DMatrix<f64>, g: &DMatrix<f64>, ck: &DMatrix<f64>, h: &DMatrix<f64>, w: f64) -> Result<f64> {
    let t = transfer_at(ak, g, ck, h, w)?;
    Ok(t.singular_values().iter().copied().fold(0.0, f64::max))
}

/// Peak of the largest singular value over a log-spaced frequency grid
/// (plus `w = 0`), refined by golden-section search around the best points.
pub fn hinf_grid(sys: &LtiSystem, k: &DMatrix<f64>) -> Result<f64> {
    let (ak, ck) = stable_loop(sys, k)?;
    let f = |w: f64| sigma_max(&ak, &sys.g, &ck, &sys.h, w);
    let scale = crate::matops::eigenvalues(&ak)?.iter().map(|z| z.norm()).fold(1e-3, f64::max);
    let (lo, hi) = ((scale * 1e-4).ln(), (scale * 1e4).ln());
    let logw: Vec<f64> = (0..GRID_POINTS).map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).collect();
    let vals: Vec<f64> = logw.iter().map(|&l| f(l.exp())).collect::<Result<_>>()?;
    // far above the bandwidth the response tends to the feedthrough
    let mut best = f(0.0)?.max(f(scale * 1e8)?);
    let mut peaks: Vec<usize> = (0..GRID_POINTS)
        .filter(|&i| (i == 0 || vals[i] >= vals[i - 1]) && (i + 1 == GRID_POINTS || vals[i] >= vals[i + 1]))
        .collect();
    peaks.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    for &i in peaks.iter().take(4) {
        best = best.max(vals[i]);
        let a = logw[i.saturating_sub(1)];
        let b = logw[(i + 1).min(GRID_POINTS - 1)];
        best = best.max(golden_max(|l| f(l.exp()), a, b)?);
    }
    Ok(best)
}

fn golden_max(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<f64> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(fc.max(fd))
}

/// Bounded-real inequality at fixed `K`, `P` and `gamma`.
fn bounded_real(ak: &DMatrix<f64>, ck: &DMatrix<f64>, g: &DMatrix<f64>, h: &DMatrix<f64>, p: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let (ny, nd) = h.shape();
    sym_blocks(&[
        vec![Some(herm(&(p * ak)))],
        vec![Some(g.transpose() * p), Some(DMatrix::identity(nd, nd) * -gamma)],
        vec![Some(ck.clone()), Some(h.clone()), Some(DMatrix::identity(ny, ny) * -gamma)],
    ])
}

/// True when an eigen-verified `P` satisfies the bounded-real inequality at `gamma`.
fn bounded_real_feasible(ak: &DMatrix<f64>, ck: &DMatrix<f64>, g: &DMatrix<f64>, h: &DMatrix<f64>, gamma: f64) -> Result<bool> {
    let nx = ak.nrows();
    let (ny, nd) = h.shape();
    let mut b = LmiBuilder::new();
    let pv = b.symmetric("P", nx)?;
    let s = b.scalar("s")?;
    let p = pv.expr();
    let se = s.expr();
    let si = |n: usize| se.times_matrix(&DMatrix::identity(n, n));
    let top = p.rmul(ak)?.herm()?.add(&si(nx)?)?;
    let gp = p.lmul(&g.transpose())?;
    let gd = si(nd)?.add_const(&(DMatrix::identity(nd, nd) * -gamma))?;
    let gy = si(ny)?.add_const(&(DMatrix::identity(ny, ny) * -gamma))?;
    let ckx = MatExpr::constant(ck.clone());
    let hx = MatExpr::constant(h.clone());
    let lmi = MatExpr::sym_blocks(&[vec![Some(&top)], vec![Some(&gp), Some(&gd)], vec![Some(&ckx), Some(&hx), Some(&gy)]])?;
    b.constrain("bounded real", lmi, Sense::NegSemiDef)?;
    b.constrain("P", p.sub(&si(nx)?)?, Sense::PosSemiDef)?;
    b.constrain("cap", MatExpr::scalar(1.0).sub(&se)?, Sense::PosSemiDef)?;
    b.maximize(se)?;
    let sol = b.build()?.solve();
    let pm = SymMatrix::symmetrize(sol.value(&pv)).into_inner();
    Ok(min_eig(&pm) > 0.0 && max_eig(&bounded_real(ak, ck, g, h, &pm, gamma)) < 0.0)
}

/// H-infinity norm by bisection on the bounded-real inequality, bracketed
/// by `[0, 2 * grid + 1]` and stopped at relative width `tol`.
pub fn hinf_norm(sys: &LtiSystem, k: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Input("bisection tolerance must be positive".into()));
    }
    let grid = hinf_grid(sys, k)?;
    let (ak, ck) = stable_loop(sys, k)?;
    let (mut lo, mut hi) = (0.0, 2.0 * grid + 1.0);
    if !bounded_real_feasible(&ak, &ck, &sys.g, &sys.h, hi)? {
        return Err(Error::SolverFault(format!("bounded-real inequality infeasible at the upper bracket {hi}")));
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if bounded_real_feasible(&ak, &ck, &sys.g, &sys.h, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `|K o I_Sc|_F`.
pub fn structural_residual(k: &DMatrix<f64>, pat: &SparsityPattern) -> Result<f64> {
    if k.shape() != pat.shape() {
        return Err(dim_err(format!("gain is {:?}, pattern is {:?}", k.shape(), pat.shape())));
    }
    Ok(k.component_mul(&pat.complement()).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub objective: Objective,
    /// Ground-truth closed loop stable (absent when no ground truth is given).
    pub hurwitz_truth: Option<bool>,
    pub hurwitz_sampled_fraction: f64,
    /// Fraction of sampled members satisfying the performance inequality at
    /// the shared certificate.
    pub lemma_sampled_fraction: f64,
    pub true_h2: Option<f64>,
    pub true_hinf: Option<f64>,
    pub bound_gamma: Option<f64>,
    pub residual: Option<f64>,
    /// Smallest slack per check; negative means violated.
    pub lmi_margins: BTreeMap<String, f64>,
    /// Worst sampled inequality slack per member, in sampling order.
    pub sample_margins: Vec<f64>,
    /// Largest H-infinity norm among sampled members, when requested.
    pub sampled_hinf_max: Option<f64>,
}

impl CertificationReport {
    pub fn robust_ok(&self) -> bool {
        self.lmi_margins.get("robust").is_some_and(|m| *m > 0.0)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x:.16e}"));
        let _ = writeln!(out, "objective={}", self.objective);
        let _ = writeln!(out, "hurwitz_truth={}", self.hurwitz_truth.map_or_else(|| "none".to_string(), |b| b.to_string()));
        let _ = writeln!(out, "hurwitz_sampled_fraction={:.16e}", self.hurwitz_sampled_fraction);
        let _ = writeln!(out, "lemma_sampled_fraction={:.16e}", self.lemma_sampled_fraction);
        let _ = writeln!(out, "samples={}", self.sample_margins.len());
        let _ = writeln!(out, "true_h2={}", opt(self.true_h2));
        let _ = writeln!(out, "true_hinf={}", opt(self.true_hinf));
        let _ = writeln!(out, "bound_gamma={}", opt(self.bound_gamma));
        let _ = writeln!(out, "sampled_hinf_max={}", opt(self.sampled_hinf_max));
        let _ = writeln!(out, "residual={}", opt(self.residual));
        for (k, v) in &self.lmi_margins {
            let _ = writeln!(out, "margin.{k}={v:.16e}");
        }
        out
    }

    pub fn samples_csv(&self) -> String {
        let mut out = String::from("sample,worst_margin\n");
        for (i, m) in self.sample_margins.iter().enumerate() {
            let _ = writeln!(out, "{i},{m:.16e}");
        }
        out
    }
}

/// Inputs of [`certify_robust`] besides the ellipsoid and the outcome.
#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions<'a> {
    pub channels: Option<&'a Channels>,
    /// Ground-truth plant; enables the truth fields of the report.
    pub truth: Option<&'a LtiSystem>,
    pub pattern: Option<&'a SparsityPattern>,
    pub samples: usize,
    pub seed: u64,
    /// Also compute the H-infinity norm of every sampled member (grid only).
    pub sampled_norms: bool,
}

/// Checks an outcome directly (its robust inequality) and on sampled
/// members of the ellipsoid (Hurwitz test and the performance inequality
/// at the shared certificate).
pub fn certify_robust(ell: &MatrixEllipsoid, out: &SynthesisOutcome, opts: &CertifyOptions<'_>) -> Result<CertificationReport> {
    let obj = out.objective;
    let ch = opts.channels;
    let k = &out.k;
    let p = &out.p;
    let lambda = out.lambda.unwrap_or(1.0);
    let mut margins = BTreeMap::new();
    margins.insert("robust".to_string(), robust_margin(ell, obj, ch, k, p, lambda, out.gamma)?);
    margins.insert("P".to_string(), min_eig(p));

    let members = sample_members(ell, opts.samples, opts.seed);
    let checks: Vec<(bool, f64, Option<f64>)> = members
        .par_iter()
        .map(|(a, b)| member_check(a, b, obj, ch, k, p, out.gamma, opts.sampled_norms))
        .collect::<Result<_>>()?;
    let n = checks.len().max(1) as f64;
    let hurwitz_sampled_fraction = checks.iter().filter(|c| c.0).count() as f64 / n;
    let lemma_sampled_fraction = checks.iter().filter(|c| c.1 > 0.0).count() as f64 / n;
    let sample_margins: Vec<f64> = checks.iter().map(|c| c.1).collect();
    if let Some(w) = sample_margins.iter().copied().reduce(f64::min) {
        margins.insert("sampled".to_string(), w);
    }
    let sampled_hinf_max = if opts.sampled_norms {
        checks.iter().filter_map(|c| c.2).reduce(f64::max)
    } else {
        None
    };

    let (mut hurwitz_truth, mut true_h2, mut true_hinf) = (None, None, None);
    if let Some(sys) = opts.truth {
        let (ak, _) = closed_loop(sys, k)?;
        let stable = is_hurwitz(&ak, 0.0);
        hurwitz_truth = Some(stable);
        if stable {
            let sys = match ch {
                Some(c) => LtiSystem::new(sys.a.clone(), sys.b.clone(), c.g.clone(), c.c.clone(), c.d.clone(), c.h.clone())?,
                None => sys.clone(),
            };
            match obj {
                Objective::H2 => true_h2 = Some(h2_norm(&sys, k)?),
                Objective::Hinf => true_hinf = Some(hinf_norm(&sys, k, 1e-4)?),
                Objective::Stabilize => {}
            }
        }
    }
    let residual = opts.pattern.map(|pat| structural_residual(k, pat)).transpose()?;
    Ok(CertificationReport {
        objective: obj,
        hurwitz_truth,
        hurwitz_sampled_fraction,
        lemma_sampled_fraction,
        true_h2,
        true_hinf,
        bound_gamma: out.gamma,
        residual,
        lmi_margins: margins,
        sample_margins,
        sampled_hinf_max,
    })
}

#[allow(clippy::too_many_arguments)]
fn member_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    obj: Objective,
    ch: Option<&Channels>,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    gamma: Option<f64>,
    norms: bool,
) -> Result<(bool, f64, Option<f64>)> {
    let ak = a + b * k;
    let stable = is_hurwitz(&ak, 0.0);
    let lyap = herm(&(p * &ak));
    let margin = match (obj, ch) {
        (Objective::Stabilize, _) => -max_eig(&lyap),
        (Objective::H2, Some(c)) => {
            let m = -max_eig(&(lyap + gram(&c.ck(k))));
            match gamma {
                Some(g) => m.min(g * g - (c.g.transpose() * p * &c.g).trace()),
                None => m,
            }
        }
        (Objective::Hinf, Some(c)) => {
            let g = gamma.ok_or_else(|| Error::Input("H-infinity outcome without gamma".into()))?;
            -max_eig(&bounded_real(&ak, &c.ck(k), &c.g, &c.h, p, g))
        }
        _ => return Err(Error::Input(format!("{obj} certification needs performance channels"))),
    };
    let peak = match (norms && stable, ch) {
        (true, Some(c)) => {
            let sys = LtiSystem::new(a.clone(), b.clone(), c.g.clone(), c.c.clone(), c.d.clone(), c.h.clone())?;
            Some(hinf_grid(&sys, k)?)
        }
        _ => None,
    };
    Ok((stable, margin, peak))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::make_mass_spring;
    use crate::synthesis::{stabilize_unstructured, AlgoConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, h: f64) -> LtiSystem {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        LtiSystem::new(s(a), s(0.0), s(1.0), s(1.0), s(0.0), s(h)).unwrap()
    }

    #[test]
    fn scalar_h2_norms() {
        let k = DMatrix::zeros(1, 1);
        assert!((h2_norm(&scalar(-1.0, 0.0), &k).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((h2_norm(&scalar(-2.0, 0.0), &k).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn h2_errors() {
        let k = DMatrix::zeros(1, 1);
        assert!(matches!(h2_norm(&scalar(1.0, 0.0), &k), Err(Error::NotHurwitz(_))));
        assert!(matches!(h2_norm(&scalar(-1.0, 1.0), &k), Err(Error::UnsupportedChannel(_))));
        assert!(matches!(hinf_norm(&scalar(0.5, 0.0), &k, 1e-4), Err(Error::NotHurwitz(_))));
    }

    #[test]
    fn scalar_hinf_norms() {
        let k = DMatrix::zeros(1, 1);
        let g1 = hinf_norm(&scalar(-1.0, 0.0), &k, 1e-4).unwrap();
        assert!((g1 - 1.0).abs() < 2e-4, "{g1}");
        let g2 = hinf_norm(&scalar(-1.0, 1.0), &k, 1e-4).unwrap();
        assert!((g2 - 2.0).abs() < 4e-4, "{g2}");
        assert!((hinf_grid(&scalar(-1.0, 1.0), &k).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn lightly_damped_peak_found_by_grid() {
        // 1 / (s^2 + 0.02 s + 1): peak 1 / (0.02 sqrt(1 - 1e-4))
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.02]);
        let g = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let sys = LtiSystem::new(a, DMatrix::zeros(2, 1), g, c, DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let want = 1.0 / (0.02 * (1.0f64 - 1e-4).sqrt());
        let k = DMatrix::zeros(1, 2);
        assert!((hinf_grid(&sys, &k).unwrap() - want).abs() < 1e-6 * want);
    }

    #[test]
    fn structural_residual_examples() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let pat = SparsityPattern::from_rows(&[vec![1, 0], vec![1, 1]]).unwrap();
        assert_eq!(structural_residual(&k, &pat).unwrap(), 2.0);
        assert_eq!(structural_residual(&pat.project(&k), &pat).unwrap(), 0.0);
        let reported = DMatrix::from_row_slice(2, 4, &[0.0, 0.9078, -2.0189, 0.0, 0.0, 0.3254, 0.3022, 0.0]);
        let stab = SparsityPattern::from_rows(&[vec![0, 1, 1, 0], vec![0, 1, 1, 0]]).unwrap();
        assert_eq!(structural_residual(&reported, &stab).unwrap(), 0.0);
        assert!(structural_residual(&k, &stab).is_err());
    }

    #[test]
    fn certified_design_passes_and_broken_one_fails() {
        let sys = make_mass_spring(2).unwrap();
        let ell = MatrixEllipsoid::point(&sys.a, &sys.b, 1e2).unwrap();
        let out = stabilize_unstructured(&ell, &AlgoConfig::default()).unwrap();
        assert!(out.is_ok());
        let opts = CertifyOptions { channels: None, truth: Some(&sys), pattern: None, samples: 300, seed: 3, sampled_norms: false };
        let rep = certify_robust(&ell, &out, &opts).unwrap();
        assert!(rep.robust_ok());
        assert_eq!(rep.hurwitz_sampled_fraction, 1.0);
        assert_eq!(rep.hurwitz_truth, Some(true));

        let mut bad = out.clone();
        bad.k[(0, 0)] += 10.0;
        let rep = certify_robust(&ell, &bad, &opts).unwrap();
        assert!(!rep.robust_ok());
        assert!(rep.hurwitz_sampled_fraction < 1.0);
        assert!(rep.to_text().contains("margin.robust="));
        assert_eq!(rep.samples_csv().lines().count(), 301);
    }

    #[test]
    fn hinf_bisection_agrees_with_grid_on_random_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = 3;
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let shift = crate::matops::spectral_abscissa(&a).unwrap() + 0.3;
            for i in 0..n {
                a[(i, i)] -= shift;
            }
            let g = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let c = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
            let h = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5));
            let sys = LtiSystem::new(a, DMatrix::zeros(n, 1), g, c, DMatrix::zeros(2, 1), h).unwrap();
            let k = DMatrix::zeros(1, n);
            let grid = hinf_grid(&sys, &k).unwrap();
            let bis = hinf_norm(&sys, &k, 1e-4).unwrap();
            assert!((bis - grid).abs() <= 1e-3 * grid, "bisection {bis} vs grid {grid}");
        }
    }
}
