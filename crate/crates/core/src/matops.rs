//! Dense kernels for the small matrices that show up in LMI synthesis.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Orders are expected to
//! stay below a few dozen, so nothing is blocked or sparse.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative tolerance for definiteness tests.
pub const DEFINITENESS_TOL: f64 = 1e-9;

/// A real symmetric matrix.
///
/// Construction always symmetrizes, so `entries == entries^T` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square, non-finite or visibly asymmetric input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_finite(&m)?;
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-8 * scale {
            return Err(Error::Input(format!("matrix is not symmetric (|M - M^T| = {asym:e})")));
        }
        Ok(Self::symmetrize(m))
    }

    /// Replaces `m` by its symmetric part `(m + m^T) / 2`.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input("matrix has non-finite entries".into()))
    }
}

/// `X + X^T`.
pub fn herm(x: &DMatrix<f64>) -> DMatrix<f64> {
    x + x.transpose()
}

/// `X^T X`.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.transpose() * x
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending and
/// eigenvectors as orthonormal columns in matching order.
pub fn sym_eig(m: &SymMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_finite(m.as_matrix())?;
    let n = m.order();
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Eigenvalues (ascending) of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let s = SymMatrix::symmetrize(m.clone());
    let mut v: Vec<f64> = SymmetricEigen::new(s.0).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    let v = sym_eigenvalues(m);
    v[v.len() - 1]
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eigenvalues(m)[0]
}

fn spd_eig(m: &SymMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (w, v) = sym_eig(m)?;
    let n = w.len();
    if n == 0 {
        return Err(Error::Definiteness("empty matrix".into()));
    }
    let (lo, hi) = (w[0], w[n - 1]);
    if hi <= 0.0 || lo <= 1e-12 * hi {
        return Err(Error::Definiteness(format!(
            "eigenvalue range [{lo:e}, {hi:e}] is not safely positive"
        )));
    }
    Ok((w, v))
}

/// `m^{-1/2}` for symmetric positive definite `m`.
pub fn inv_sqrt_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let (w, v) = spd_eig(m)?;
    let d = DMatrix::from_diagonal(&w.map(|x| 1.0 / x.sqrt()));
    Ok(SymMatrix::symmetrize(&v * d * v.transpose()))
}

/// `m^{1/2}` for symmetric positive definite `m`.
pub fn sqrt_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let (w, v) = spd_eig(m)?;
    let d = DMatrix::from_diagonal(&w.map(f64::sqrt));
    Ok(SymMatrix::symmetrize(&v * d * v.transpose()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn inv_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let chol = m
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Definiteness("Cholesky factorization failed".into()))?;
    Ok(SymMatrix::symmetrize(chol.inverse()))
}

/// `log det m` for symmetric positive definite `m`.
pub fn logdet_spd(m: &SymMatrix) -> Result<f64> {
    check_finite(m.as_matrix())?;
    let chol = m
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Definiteness("Cholesky factorization failed".into()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(0.0);
    }
    let sv = m.clone().svd(false, false).singular_values;
    Ok(sv.iter().copied().fold(0.0, f64::max))
}

/// Eigenvalues of a general real square matrix (Hessenberg + shifted QR).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<num_complex::Complex64>> {
    check_finite(a)?;
    if !a.is_square() {
        return Err(Error::Dimension("eigenvalues of a non-square matrix".into()));
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Input("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue of `a` has real part below `-margin`. Real
/// parts within `1e-9 * max|eig|` of the threshold count as on it, so a
/// purely imaginary spectrum is never reported stable because of roundoff.
pub fn is_hurwitz(a: &DMatrix<f64>, margin: f64) -> bool {
    let Ok(ev) = eigenvalues(a) else { return false };
    let scale = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let alpha = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    alpha < -margin - 1e-9 * scale
}

/// Solves `a^T P + P a + q = 0` through the Kronecker-vectorized system.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &SymMatrix) -> Result<SymMatrix> {
    check_finite(a)?;
    let n = a.nrows();
    if !a.is_square() || q.order() != n {
        return Err(Error::Dimension(format!(
            "lyapunov: a is {}x{}, q has order {}",
            a.nrows(),
            a.ncols(),
            q.order()
        )));
    }
    if !is_hurwitz(a, 0.0) {
        return Err(Error::NotHurwitz("lyapunov operator requires a Hurwitz matrix".into()));
    }
    // vec(a^T P + P a) = (I (x) a^T + a^T (x) I) vec(P), column-major vec.
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.as_matrix().iter().map(|v| -v));
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotHurwitz("singular Lyapunov operator".into()))?;
    Ok(SymMatrix::symmetrize(DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Stacks `blocks` vertically.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Stacks `blocks` horizontally.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack: row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Assembles a symmetric block matrix from its lower-triangular blocks.
/// `lower[i]` holds blocks `(i, 0..=i)`; `None` marks a zero block.
pub fn sym_blocks(lower: &[Vec<Option<DMatrix<f64>>>]) -> DMatrix<f64> {
    let sizes: Vec<usize> = lower
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row[i]
                .as_ref()
                .map(|b| b.nrows())
                .expect("diagonal blocks must be present")
        })
        .collect();
    let n: usize = sizes.iter().sum();
    let offs: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for (i, row) in lower.iter().enumerate() {
        for (j, blk) in row.iter().enumerate().take(i + 1) {
            if let Some(b) = blk {
                assert_eq!((b.nrows(), b.ncols()), (sizes[i], sizes[j]), "block ({i},{j})");
                out.view_mut((offs[i], offs[j]), (sizes[i], sizes[j])).copy_from(b);
                if i != j {
                    out.view_mut((offs[j], offs[i]), (sizes[j], sizes[i]))
                        .copy_from(&b.transpose());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(n: usize, seed: u64) -> SymMatrix {
        let m = random(n, n, seed);
        SymMatrix::symmetrize(&m * m.transpose() + DMatrix::identity(n, n) * 0.5)
    }

    #[test]
    fn eig_of_identity_and_diag() {
        let (w, _) = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0]);
        let (w, v) = sym_eig(&SymMatrix::from_diagonal(&[2.0, 1.0])).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 2.0]);
        assert!((v[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((v[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_reconstructs_random_symmetric() {
        let m = SymMatrix::symmetrize(random(6, 6, 7));
        let (w, v) = sym_eig(&m).unwrap();
        assert!(w.as_slice().windows(2).all(|p| p[0] <= p[1]));
        let rec = &v * DMatrix::from_diagonal(&w) * v.transpose();
        let norm = spectral_norm(m.as_matrix()).unwrap();
        assert!((rec - m.as_matrix()).amax() < 1e-10 * norm);
        assert!((v.transpose() * &v - DMatrix::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn eig_rejects_nan() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(SymMatrix::new(m), Err(Error::Input(_))));
    }

    #[test]
    fn inv_sqrt_cases() {
        let r = inv_sqrt_spd(&SymMatrix::identity(3)).unwrap();
        assert!((r.as_matrix() - DMatrix::identity(3, 3)).amax() < 1e-15);
        let r = inv_sqrt_spd(&SymMatrix::identity(3).scale(4.0)).unwrap();
        assert!((r.as_matrix() - DMatrix::identity(3, 3) * 0.5).amax() < 1e-15);
        let m = random_spd(6, 11);
        let r = inv_sqrt_spd(&m).unwrap();
        let check = r.as_matrix() * m.as_matrix() * r.as_matrix() - DMatrix::identity(6, 6);
        assert!(check.amax() < 1e-9);
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(inv_sqrt_spd(&m), Err(Error::Definiteness(_))));
        let m = SymMatrix::from_diagonal(&[1.0, 1e-14]);
        assert!(matches!(inv_sqrt_spd(&m), Err(Error::Definiteness(_))));
    }

    #[test]
    fn lyapunov_small_cases() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let p = solve_lyapunov(&a, &SymMatrix::from_diagonal(&[4.0])).unwrap();
        assert!((p.as_matrix()[(0, 0)] - 2.0).abs() < 1e-14);
        let a = -DMatrix::<f64>::identity(2, 2);
        let p = solve_lyapunov(&a, &SymMatrix::identity(2).scale(2.0)).unwrap();
        assert!((p.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(
            solve_lyapunov(&a, &SymMatrix::identity(2)),
            Err(Error::NotHurwitz(_))
        ));
    }

    #[test]
    fn lyapunov_matches_kronecker_oracle() {
        // Oracle: solve the vectorized system written out entry by entry.
        let a = random(4, 4, 3) - DMatrix::identity(4, 4) * 3.0;
        assert!(is_hurwitz(&a, 0.0));
        let q = random_spd(4, 4);
        let p = solve_lyapunov(&a, &q).unwrap();
        let n = 4;
        let mut op = DMatrix::zeros(n * n, n * n);
        for i in 0..n {
            for j in 0..n {
                // (a^T P + P a)_{ij} = sum_k a_{ki} P_{kj} + P_{ik} a_{kj}
                for k in 0..n {
                    op[(i + n * j, k + n * j)] += a[(k, i)];
                    op[(i + n * j, i + n * k)] += a[(k, j)];
                }
            }
        }
        let rhs = DVector::from_iterator(n * n, q.as_matrix().iter().map(|v| -v));
        let oracle = op.lu().solve(&rhs).unwrap();
        let oracle = DMatrix::from_column_slice(n, n, oracle.as_slice());
        assert!((p.as_matrix() - &oracle).amax() < 1e-9);
        let res = a.transpose() * p.as_matrix() + p.as_matrix() * &a + q.as_matrix();
        assert!(res.amax() < 1e-9 * spectral_norm(q.as_matrix()).unwrap());
        assert!(min_eig(p.as_matrix()) >= 0.0);
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&[3.0, -5.0]));
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-14);
        let m = random(4, 6, 9);
        let (w, _) = sym_eig(&SymMatrix::symmetrize(m.transpose() * &m)).unwrap();
        let oracle = w[w.len() - 1].sqrt();
        assert!((spectral_norm(&m).unwrap() - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn hurwitz_cases() {
        assert!(is_hurwitz(&(-DMatrix::<f64>::identity(3, 3)), 0.0));
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(!is_hurwitz(&rot, 0.0));
        let ms = crate::lti::make_mass_spring(2).unwrap();
        assert!(!is_hurwitz(&ms.a, 0.0));
        let mut ev: Vec<f64> = eigenvalues(&ms.a).unwrap().iter().map(|z| z.im.abs()).collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0).abs() < 1e-10 && (ev[3] - 3f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn logdet_cases() {
        assert_eq!(logdet_spd(&SymMatrix::identity(3)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let v = logdet_spd(&SymMatrix::from_diagonal(&[e, e * e])).unwrap();
        assert!((v - 3.0).abs() < 1e-14);
        let m = random_spd(5, 21);
        let (w, _) = sym_eig(&m).unwrap();
        let oracle: f64 = w.iter().map(|x| x.ln()).sum();
        assert!((logdet_spd(&m).unwrap() - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
        assert!(logdet_spd(&SymMatrix::from_diagonal(&[1.0, -2.0])).is_err());
    }

    #[test]
    fn sym_blocks_layout() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 3.0]);
        let c = DMatrix::identity(2, 2);
        let m = sym_blocks(&[vec![Some(a)], vec![Some(b), Some(c)]]);
        assert_eq!(m, DMatrix::from_row_slice(3, 3, &[1., 2., 3., 2., 1., 0., 3., 0., 1.]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn inv_sqrt_is_spd(seed in 0u64..10_000, n in 1usize..7) {
                let m = random_spd(n, seed);
                let r = inv_sqrt_spd(&m).unwrap();
                prop_assert_eq!(r.as_matrix(), &r.as_matrix().transpose());
                prop_assert!(min_eig(r.as_matrix()) > 0.0);
            }

            #[test]
            fn lyapunov_output_psd(seed in 0u64..10_000, n in 1usize..6) {
                let a = random(n, n, seed) - DMatrix::identity(n, n) * (n as f64 + 0.5);
                prop_assume!(is_hurwitz(&a, 0.0));
                let m = random(n, n, seed + 1);
                let q = SymMatrix::symmetrize(&m * m.transpose());
                let p = solve_lyapunov(&a, &q).unwrap();
                let scale = spectral_norm(p.as_matrix()).unwrap().max(1.0);
                prop_assert!(min_eig(p.as_matrix()) >= -1e-10 * scale);
            }

            #[test]
            fn spectral_norm_submultiplicative(seed in 0u64..10_000) {
                let a = random(3, 4, seed);
                let b = random(4, 5, seed + 7);
                let lhs = spectral_norm(&(&a * &b)).unwrap();
                let rhs = spectral_norm(&a).unwrap() * spectral_norm(&b).unwrap();
                prop_assert!(lhs <= rhs + 1e-9);
            }

            #[test]
            fn hurwitz_margin_consistent(seed in 0u64..10_000, margin in 0.0f64..2.0) {
                let a = random(4, 4, seed) - DMatrix::identity(4, 4) * 1.5;
                if is_hurwitz(&a, margin) {
                    prop_assert!(is_hurwitz(&a, 0.0));
                }
            }
        }
    }
}
