use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::LmiError;

type Res<T> = std::result::Result<T, LmiError>;

/// An affine matrix-valued function of the scalar decision coordinates of
/// one problem: `constant + sum_c x_c * terms[c]`.
#[derive(Debug, Clone)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    owner: u64,
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

fn merge_owner(a: u64, b: u64) -> Res<u64> {
    match (a, b) {
        (0, o) | (o, 0) => Ok(o),
        (x, y) if x == y => Ok(x),
        _ => Err(LmiError::ForeignVariable),
    }
}

impl MatExpr {
    pub(crate) fn from_parts(
        owner: u64,
        constant: DMatrix<f64>,
        terms: BTreeMap<usize, DMatrix<f64>>,
    ) -> Self {
        MatExpr { rows: constant.nrows(), cols: constant.ncols(), owner, constant, terms }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self::from_parts(0, m, BTreeMap::new())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub(crate) fn owner(&self) -> u64 {
        self.owner
    }

    pub(crate) fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub(crate) fn terms(&self) -> &BTreeMap<usize, DMatrix<f64>> {
        &self.terms
    }

    /// Largest absolute entry over the constant and all coefficient matrices,
    /// floored at one. Strict margins are measured relative to this.
    pub fn data_scale(&self) -> f64 {
        self.terms
            .values()
            .map(|t| t.amax())
            .fold(self.constant.amax(), f64::max)
            .max(1.0)
    }

    /// Numeric value at the coordinate vector `x`.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (&c, t) in &self.terms {
            out += t * x[c];
        }
        out
    }

    fn map_all(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let constant = f(&self.constant);
        let terms = self.terms.iter().map(|(&c, t)| (c, f(t))).collect();
        MatExpr::from_parts(self.owner, constant, terms)
    }

    pub fn neg(&self) -> Self {
        self.map_all(|m| -m)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_all(|m| m * s)
    }

    pub fn transpose(&self) -> Self {
        self.map_all(|m| m.transpose())
    }

    pub fn add(&self, other: &MatExpr) -> Res<Self> {
        if self.shape() != other.shape() {
            return Err(LmiError::Dimension(format!(
                "add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let owner = merge_owner(self.owner, other.owner)?;
        let mut terms = self.terms.clone();
        for (&c, t) in &other.terms {
            terms
                .entry(c)
                .and_modify(|e| *e += t)
                .or_insert_with(|| t.clone());
        }
        Ok(MatExpr::from_parts(owner, &self.constant + &other.constant, terms))
    }

    pub fn sub(&self, other: &MatExpr) -> Res<Self> {
        self.add(&other.neg())
    }

    pub fn add_const(&self, m: &DMatrix<f64>) -> Res<Self> {
        self.add(&MatExpr::constant(m.clone()))
    }

    /// `m * self` for a constant `m`.
    pub fn lmul(&self, m: &DMatrix<f64>) -> Res<Self> {
        if m.ncols() != self.rows {
            return Err(LmiError::Dimension(format!(
                "lmul: {}x{} * {:?}",
                m.nrows(),
                m.ncols(),
                self.shape()
            )));
        }
        Ok(self.map_all(|t| m * t))
    }

    /// `self * m` for a constant `m`.
    pub fn rmul(&self, m: &DMatrix<f64>) -> Res<Self> {
        if m.nrows() != self.cols {
            return Err(LmiError::Dimension(format!(
                "rmul: {:?} * {}x{}",
                self.shape(),
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(self.map_all(|t| t * m))
    }

    /// Product of two expressions; at least one side must be constant.
    pub fn mul(&self, other: &MatExpr) -> Res<Self> {
        match (self.is_constant(), other.is_constant()) {
            (_, true) => self.rmul(&other.constant),
            (true, false) => other.lmul(&self.constant),
            (false, false) => Err(LmiError::NonAffine),
        }
    }

    /// `self * m` for a 1x1 expression `self` and a constant matrix `m`.
    pub fn times_matrix(&self, m: &DMatrix<f64>) -> Res<Self> {
        if self.shape() != (1, 1) {
            return Err(LmiError::Dimension(format!("times_matrix needs a scalar, got {:?}", self.shape())));
        }
        let constant = m * self.constant[(0, 0)];
        let terms = self.terms.iter().map(|(&c, t)| (c, m * t[(0, 0)])).collect();
        Ok(MatExpr::from_parts(self.owner, constant, terms))
    }

    /// `self + self^T`.
    pub fn herm(&self) -> Res<Self> {
        self.add(&self.transpose())
    }

    /// Entrywise product with a constant mask.
    pub fn hadamard(&self, mask: &DMatrix<f64>) -> Res<Self> {
        if mask.shape() != self.shape() {
            return Err(LmiError::Dimension("hadamard shape mismatch".into()));
        }
        Ok(self.map_all(|t| t.component_mul(mask)))
    }

    pub fn trace(&self) -> Res<Self> {
        if self.rows != self.cols {
            return Err(LmiError::Dimension("trace of a non-square expression".into()));
        }
        Ok(self.map_all(|t| DMatrix::from_element(1, 1, t.trace())))
    }

    /// The selected entries stacked into a column, in the given order.
    pub fn select(&self, entries: &[(usize, usize)]) -> Res<Self> {
        if entries.iter().any(|&(i, j)| i >= self.rows || j >= self.cols) {
            return Err(LmiError::Dimension("entry index out of range".into()));
        }
        Ok(self.map_all(|t| DMatrix::from_iterator(entries.len(), 1, entries.iter().map(|&ij| t[ij]))))
    }

    pub fn vstack(parts: &[&MatExpr]) -> Res<Self> {
        Self::stack(parts, true)
    }

    pub fn hstack(parts: &[&MatExpr]) -> Res<Self> {
        Self::stack(parts, false)
    }

    fn stack(parts: &[&MatExpr], vertical: bool) -> Res<Self> {
        let first = parts.first().ok_or_else(|| LmiError::Dimension("empty stack".into()))?;
        let mut owner = 0;
        for p in parts {
            owner = merge_owner(owner, p.owner)?;
            let ok = if vertical { p.cols == first.cols } else { p.rows == first.rows };
            if !ok {
                return Err(LmiError::Dimension(format!(
                    "{} stack: {:?} vs {:?}",
                    if vertical { "vertical" } else { "horizontal" },
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let (rows, cols) = if vertical {
            (parts.iter().map(|p| p.rows).sum(), first.cols)
        } else {
            (first.rows, parts.iter().map(|p| p.cols).sum())
        };
        let place = |dst: &mut DMatrix<f64>, off: usize, src: &DMatrix<f64>| {
            if vertical {
                dst.view_mut((off, 0), src.shape()).copy_from(src);
            } else {
                dst.view_mut((0, off), src.shape()).copy_from(src);
            }
        };
        let mut constant = DMatrix::zeros(rows, cols);
        let mut terms: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        let mut off = 0;
        for p in parts {
            place(&mut constant, off, &p.constant);
            for (&c, t) in &p.terms {
                let dst = terms.entry(c).or_insert_with(|| DMatrix::zeros(rows, cols));
                place(dst, off, t);
            }
            off += if vertical { p.rows } else { p.cols };
        }
        Ok(MatExpr::from_parts(owner, constant, terms))
    }

    /// Symmetric block matrix from its lower-triangular blocks; `lower[i]`
    /// lists blocks `(i, 0..=i)` and `None` is a zero block. Diagonal blocks
    /// must be present and square.
    pub fn sym_blocks(lower: &[Vec<Option<&MatExpr>>]) -> Res<Self> {
        let n = lower.len();
        let mut sizes = Vec::with_capacity(n);
        for (i, row) in lower.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(LmiError::Dimension(format!("block row {i} has {} entries", row.len())));
            }
            let d = row[i].ok_or_else(|| LmiError::Dimension(format!("missing diagonal block {i}")))?;
            if d.rows != d.cols {
                return Err(LmiError::Dimension(format!("diagonal block {i} is not square")));
            }
            sizes.push(d.rows);
        }
        let mut rows_out = Vec::with_capacity(n);
        for i in 0..n {
            let mut row_parts = Vec::with_capacity(n);
            for j in 0..n {
                let blk = if j <= i {
                    lower[i][j].cloned()
                } else {
                    lower[j][i].map(|b| b.transpose())
                };
                let blk = blk.unwrap_or_else(|| MatExpr::zeros(sizes[i], sizes[j]));
                if blk.shape() != (sizes[i], sizes[j]) {
                    return Err(LmiError::Dimension(format!(
                        "block ({i},{j}) is {:?}, expected {:?}",
                        blk.shape(),
                        (sizes[i], sizes[j])
                    )));
                }
                row_parts.push(blk);
            }
            let refs: Vec<&MatExpr> = row_parts.iter().collect();
            rows_out.push(MatExpr::hstack(&refs)?);
        }
        let refs: Vec<&MatExpr> = rows_out.iter().collect();
        MatExpr::vstack(&refs)
    }
}

impl From<DMatrix<f64>> for MatExpr {
    fn from(m: DMatrix<f64>) -> Self {
        MatExpr::constant(m)
    }
}
