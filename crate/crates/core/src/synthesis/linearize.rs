use nalgebra::DMatrix;

use crate::error::{dim_err, Result};
use crate::lmi::MatExpr;
use crate::matops::vstack;
use crate::uncertainty::MatrixEllipsoid;

/// `[I; K]` as an expression.
pub(crate) fn stacked_gain(k: &MatExpr, nx: usize) -> Result<MatExpr> {
    Ok(MatExpr::vstack(&[&MatExpr::identity(nx), k])?)
}

/// Affine minorant of `G(delta P - [I; K])` around `(Kt, Pt)`:
/// `Mt' Mt + H(Mt' (delta (P - Pt) - [0; K - Kt]))` with `Mt = delta Pt - [I; Kt]`.
pub fn linearize_bilinear(
    k: &MatExpr,
    p: &MatExpr,
    kt: &DMatrix<f64>,
    pt: &DMatrix<f64>,
    ell: &MatrixEllipsoid,
) -> Result<MatExpr> {
    let (nx, nu) = (ell.nx(), ell.nu());
    if k.shape() != (nu, nx) || kt.shape() != (nu, nx) || p.shape() != (nx, nx) || pt.shape() != (nx, nx) {
        return Err(dim_err("linearization point does not match the ellipsoid"));
    }
    let delta = &ell.delta;
    let mt = delta * pt - vstack(&[&DMatrix::identity(nx, nx), kt]);
    let shift = delta * pt - vstack(&[&DMatrix::zeros(nx, nx), kt]);
    let dk = MatExpr::vstack(&[&MatExpr::zeros(nx, nx), k])?;
    let dev = p.lmul(delta)?.sub(&dk)?.add_const(&(-shift))?;
    let cross = dev.lmul(&mt.transpose())?.herm()?;
    Ok(cross.add_const(&(mt.transpose() * &mt))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::{gram, min_eig};
    use proptest::prelude::*;

    fn ell() -> MatrixEllipsoid {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        MatrixEllipsoid::point(&a, &b, 50.0).unwrap()
    }

    fn exact(ell: &MatrixEllipsoid, k: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
        let m = &ell.delta * p - vstack(&[&DMatrix::identity(2, 2), k]);
        gram(&m)
    }

    fn lin(ell: &MatrixEllipsoid, k: &DMatrix<f64>, p: &DMatrix<f64>, kt: &DMatrix<f64>, pt: &DMatrix<f64>) -> DMatrix<f64> {
        linearize_bilinear(&MatExpr::constant(k.clone()), &MatExpr::constant(p.clone()), kt, pt, ell)
            .unwrap()
            .eval(&[])
    }

    #[test]
    fn exact_at_the_linearization_point() {
        let e = ell();
        let k = DMatrix::from_row_slice(1, 2, &[-1.0, 0.4]);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let l = lin(&e, &k, &p, &k, &p);
        assert!((l - exact(&e, &k, &p)).amax() < 1e-14);
    }

    #[test]
    fn rejects_bad_shapes() {
        let e = ell();
        let k = MatExpr::constant(DMatrix::zeros(2, 2));
        let p = MatExpr::constant(DMatrix::identity(2, 2));
        assert!(linearize_bilinear(&k, &p, &DMatrix::zeros(1, 2), &DMatrix::identity(2, 2), &e).is_err());
    }

    proptest! {
        #[test]
        fn minorant_and_symmetry(v in proptest::collection::vec(-2.0f64..2.0, 10)) {
            let e = ell();
            let k = DMatrix::from_row_slice(1, 2, &v[0..2]);
            let kt = DMatrix::from_row_slice(1, 2, &v[2..4]);
            let p = DMatrix::from_row_slice(2, 2, &[v[4], v[5], v[5], v[6]]);
            let pt = DMatrix::from_row_slice(2, 2, &[v[7], v[8], v[8], v[9]]);
            let l = lin(&e, &k, &p, &kt, &pt);
            prop_assert!((&l - l.transpose()).amax() < 1e-12);
            let gap = exact(&e, &k, &p) - l;
            prop_assert!(min_eig(&gap) >= -1e-10 * (1.0 + gap.amax()));
        }
    }
}
