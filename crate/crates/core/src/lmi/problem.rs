use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::cone::{smat, svec, svec_len, ConeBlock, ConeProgram};
use super::hsd::{self, SolverOptions, Status};
use super::maxdet::{self, FwSegment, MaxDetOptions};
use super::{LmiError, MatExpr};
use crate::matops::max_eig;

type Res<T> = std::result::Result<T, LmiError>;

static NEXT_OWNER: AtomicU64 = AtomicU64::new(1);

/// Default strictness margin for `≺ 0` constraints, relative to the data scale.
pub const DEFAULT_ETA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Symmetric matrix of the given order.
    Symmetric(usize),
    /// Unstructured `rows x cols` matrix.
    Matrix(usize, usize),
    Scalar,
    /// Scalar constrained to be `>= 0`.
    Nonnegative,
}

impl VarKind {
    fn coords(&self) -> usize {
        match *self {
            VarKind::Symmetric(n) => svec_len(n),
            VarKind::Matrix(r, c) => r * c,
            VarKind::Scalar | VarKind::Nonnegative => 1,
        }
    }

    fn shape(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(n) => (n, n),
            VarKind::Matrix(r, c) => (r, c),
            VarKind::Scalar | VarKind::Nonnegative => (1, 1),
        }
    }
}

/// Handle to a declared decision variable.
#[derive(Debug, Clone)]
pub struct Var {
    owner: u64,
    name: String,
    kind: VarKind,
    offset: usize,
}

impl Var {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> VarKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.kind.shape()
    }

    /// The variable as an affine expression.
    pub fn expr(&self) -> MatExpr {
        let (r, c) = self.shape();
        let mut terms = BTreeMap::new();
        match self.kind {
            VarKind::Symmetric(n) => {
                let mut k = self.offset;
                for j in 0..n {
                    for i in j..n {
                        let mut e = DMatrix::zeros(n, n);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        terms.insert(k, e);
                        k += 1;
                    }
                }
            }
            VarKind::Matrix(..) | VarKind::Scalar | VarKind::Nonnegative => {
                for j in 0..c {
                    for i in 0..r {
                        let mut e = DMatrix::zeros(r, c);
                        e[(i, j)] = 1.0;
                        terms.insert(self.offset + i + r * j, e);
                    }
                }
            }
        }
        MatExpr::from_parts(self.owner, DMatrix::zeros(r, c), terms)
    }

    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        match self.kind {
            VarKind::Symmetric(n) => {
                let mut m = DMatrix::zeros(n, n);
                let mut k = self.offset;
                for j in 0..n {
                    for i in j..n {
                        m[(i, j)] = x[k];
                        m[(j, i)] = x[k];
                        k += 1;
                    }
                }
                m
            }
            _ => {
                let (r, c) = self.shape();
                DMatrix::from_column_slice(r, c, &x[self.offset..self.offset + r * c])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `expr ⪯ -eta * I`
    NegDefStrict,
    /// `expr ⪯ 0`
    NegSemiDef,
    /// `expr ⪰ 0`
    PosSemiDef,
    /// `expr ⪰ eta * I`
    PosDefStrict,
    /// every entry zero
    Zero,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub expr: MatExpr,
    pub sense: Sense,
}

impl Constraint {
    /// Smallest eigenvalue of the signed slack (`-expr` for `⪯`, `expr`
    /// for `⪰`); for equalities, minus the largest absolute entry.
    pub fn slack_at(&self, x: &[f64]) -> f64 {
        let v = self.expr.eval(x);
        match self.sense {
            Sense::NegDefStrict | Sense::NegSemiDef => -max_eig(&v),
            Sense::PosDefStrict | Sense::PosSemiDef => -max_eig(&(-v)),
            Sense::Zero => -v.amax(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiBuilder {
    owner: u64,
    vars: Vec<Var>,
    ncoords: usize,
    constraints: Vec<Constraint>,
    objective: Option<MatExpr>,
    eta: f64,
}

impl Default for LmiBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl LmiBuilder {
    pub fn new() -> Self {
        LmiBuilder {
            owner: NEXT_OWNER.fetch_add(1, Ordering::Relaxed),
            vars: Vec::new(),
            ncoords: 0,
            constraints: Vec::new(),
            objective: None,
            eta: DEFAULT_ETA,
        }
    }

    /// Sets the strictness margin used by `NegDefStrict`/`PosDefStrict`.
    pub fn with_margin(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn margin(&self) -> f64 {
        self.eta
    }

    pub fn declare(&mut self, name: &str, kind: VarKind) -> Res<Var> {
        if self.vars.iter().any(|v| v.name == name) {
            return Err(LmiError::DuplicateVariable(name.to_string()));
        }
        if kind.coords() == 0 {
            return Err(LmiError::Dimension(format!("variable `{name}` is empty")));
        }
        let v = Var { owner: self.owner, name: name.to_string(), kind, offset: self.ncoords };
        self.ncoords += kind.coords();
        self.vars.push(v.clone());
        Ok(v)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Res<Var> {
        self.declare(name, VarKind::Symmetric(n))
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Res<Var> {
        self.declare(name, VarKind::Matrix(rows, cols))
    }

    pub fn scalar(&mut self, name: &str) -> Res<Var> {
        self.declare(name, VarKind::Scalar)
    }

    pub fn nonnegative(&mut self, name: &str) -> Res<Var> {
        self.declare(name, VarKind::Nonnegative)
    }

    pub fn lookup(&self, name: &str) -> Res<Var> {
        self.vars
            .iter()
            .find(|v| v.name == name)
            .cloned()
            .ok_or_else(|| LmiError::UndeclaredVariable(name.to_string()))
    }

    pub fn constrain(&mut self, name: &str, expr: MatExpr, sense: Sense) -> Res<()> {
        if expr.owner() != 0 && expr.owner() != self.owner {
            return Err(LmiError::ForeignVariable);
        }
        let (r, c) = expr.shape();
        if sense != Sense::Zero {
            if r != c {
                return Err(LmiError::Dimension(format!("constraint `{name}` is {r}x{c}")));
            }
            let scale = expr.data_scale();
            let asym = expr
                .terms()
                .values()
                .chain(std::iter::once(expr.constant_part()))
                .map(|m| (m - m.transpose()).amax())
                .fold(0.0, f64::max);
            if asym > 1e-9 * scale {
                return Err(LmiError::NotSymmetric(name.to_string()));
            }
        }
        self.constraints.push(Constraint { name: name.to_string(), expr, sense });
        Ok(())
    }

    pub fn minimize(&mut self, expr: MatExpr) -> Res<()> {
        if expr.shape() != (1, 1) {
            return Err(LmiError::BadObjective);
        }
        if expr.owner() != 0 && expr.owner() != self.owner {
            return Err(LmiError::ForeignVariable);
        }
        self.objective = Some(expr);
        Ok(())
    }

    pub fn maximize(&mut self, expr: MatExpr) -> Res<()> {
        self.minimize(expr.neg())
    }

    /// Validates the problem and compiles it to block conic form.
    pub fn build(self) -> Res<LmiProblem> {
        let n = self.ncoords;
        // equalities: E x = f
        let mut erows: Vec<DVector<f64>> = Vec::new();
        let mut frows: Vec<f64> = Vec::new();
        for c in self.constraints.iter().filter(|c| c.sense == Sense::Zero) {
            let (r, cc) = c.expr.shape();
            for j in 0..cc {
                for i in 0..r {
                    let mut row = DVector::zeros(n);
                    for (&k, t) in c.expr.terms() {
                        row[k] = t[(i, j)];
                    }
                    erows.push(row);
                    frows.push(-c.expr.constant_part()[(i, j)]);
                }
            }
        }
        let (x0, null, eq_ok) = if erows.is_empty() {
            (DVector::zeros(n), DMatrix::identity(n, n), true)
        } else {
            eliminate(&erows, &frows, n)
        };
        let m = null.ncols();

        let mut blocks = Vec::new();
        let mut etas = vec![0.0; self.constraints.len()];
        for (idx, c) in self.constraints.iter().enumerate() {
            let (sign, strict) = match c.sense {
                Sense::Zero => continue,
                Sense::NegDefStrict => (-1.0, true),
                Sense::NegSemiDef => (-1.0, false),
                Sense::PosSemiDef => (1.0, false),
                Sense::PosDefStrict => (1.0, true),
            };
            let order = c.expr.shape().0;
            let mut constant = c.expr.constant_part() * sign;
            if strict {
                let eta = self.eta * c.expr.data_scale();
                etas[idx] = eta;
                for i in 0..order {
                    constant[(i, i)] -= eta;
                }
            }
            let (h, lin) = reduce(&constant, c.expr.terms(), sign, &x0, &null, order);
            blocks.push(ConeBlock { order, h, g: -lin, source: idx });
        }
        for v in self.vars.iter().filter(|v| v.kind == VarKind::Nonnegative) {
            let e = v.expr();
            let (h, lin) = reduce(e.constant_part(), e.terms(), 1.0, &x0, &null, 1);
            blocks.push(ConeBlock { order: 1, h, g: -lin, source: usize::MAX });
        }

        let (c, c0) = match &self.objective {
            None => (DVector::zeros(m), 0.0),
            Some(obj) => {
                let mut full = DVector::zeros(n);
                for (&k, t) in obj.terms() {
                    full[k] = t[(0, 0)];
                }
                (null.transpose() * &full, obj.constant_part()[(0, 0)] + full.dot(&x0))
            }
        };
        Ok(LmiProblem {
            vars: self.vars,
            ncoords: n,
            constraints: self.constraints,
            objective: self.objective,
            etas,
            x0,
            null,
            eq_ok,
            program: ConeProgram { c, c0, blocks },
        })
    }
}

/// Pushes `sign * (constant + sum_k x_k terms[k])` through `x = x0 + N w`,
/// returning the svec constant and the svec linear map in `w`.
fn reduce(
    constant: &DMatrix<f64>,
    terms: &BTreeMap<usize, DMatrix<f64>>,
    sign: f64,
    x0: &DVector<f64>,
    null: &DMatrix<f64>,
    order: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut c = constant.clone();
    for (&k, t) in terms {
        if x0[k] != 0.0 {
            c += t * (sign * x0[k]);
        }
    }
    let d = svec_len(order);
    let mut lin = DMatrix::zeros(d, null.ncols());
    for (&k, t) in terms {
        let sv = svec(t) * sign;
        for j in 0..null.ncols() {
            let nkj = null[(k, j)];
            if nkj != 0.0 {
                let mut col = lin.column_mut(j);
                col.axpy(nkj, &sv, 1.0);
            }
        }
    }
    (svec(&c), lin)
}

fn eliminate(rows: &[DVector<f64>], rhs: &[f64], n: usize) -> (DVector<f64>, DMatrix<f64>, bool) {
    let e = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let f = DVector::from_row_slice(rhs);
    let gram = e.transpose() * &e;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax();
    let tol = 1e-12 * top.max(1e-300);
    let null_idx: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= tol).collect();
    let mut null = DMatrix::zeros(n, null_idx.len());
    for (dst, &src) in null_idx.iter().enumerate() {
        null.set_column(dst, &eig.eigenvectors.column(src));
    }
    let svd = e.clone().svd(true, true);
    let x0 = svd
        .solve(&f, 1e-10 * svd.singular_values.amax().max(1e-300))
        .unwrap_or_else(|_| DVector::zeros(n));
    let consistent = (&e * &x0 - &f).amax() <= 1e-9 * f.amax().max(1.0);
    // keep coordinates exact where the equalities pin them to zero
    let x0 = x0.map(|v| if v.abs() < 1e-15 { 0.0 } else { v });
    (x0, null, consistent)
}

/// Primal residual, dual residual and duality gap reported by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub status: Status,
    /// Full coordinate vector.
    pub x: DVector<f64>,
    pub assignment: BTreeMap<String, DMatrix<f64>>,
    pub objective_value: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    /// Frank-Wolfe gap certified at the returned point (log-det problems only).
    pub fw_gap: Option<f64>,
    /// Final Frank-Wolfe segment and the chosen step (log-det problems only).
    pub fw_segment: Option<FwSegment>,
}

impl LmiSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value(&self, v: &Var) -> DMatrix<f64> {
        v.value(self.x.as_slice())
    }

    pub fn scalar(&self, v: &Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    pub fn eval(&self, e: &MatExpr) -> DMatrix<f64> {
        e.eval(self.x.as_slice())
    }
}

/// A validated problem in block conic form.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    vars: Vec<Var>,
    ncoords: usize,
    constraints: Vec<Constraint>,
    objective: Option<MatExpr>,
    etas: Vec<f64>,
    x0: DVector<f64>,
    null: DMatrix<f64>,
    eq_ok: bool,
    program: ConeProgram,
}

impl LmiProblem {
    pub fn variables(&self) -> &[Var] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Orders of the positive semidefinite blocks in the compiled form.
    pub fn block_orders(&self) -> Vec<usize> {
        self.program.blocks.iter().map(|b| b.order).collect()
    }

    /// Number of free coordinates left after eliminating equalities.
    pub fn reduced_dim(&self) -> usize {
        self.program.dim()
    }

    /// Absolute strictness margin applied to constraint `i` (zero if not strict).
    pub fn margin_of(&self, i: usize) -> f64 {
        self.etas[i]
    }

    pub(crate) fn lift(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.x0 + &self.null * w
    }

    fn assignment(&self, x: &DVector<f64>) -> BTreeMap<String, DMatrix<f64>> {
        self.vars.iter().map(|v| (v.name.clone(), v.value(x.as_slice()))).collect()
    }

    fn objective_at(&self, x: &DVector<f64>) -> f64 {
        self.objective.as_ref().map_or(0.0, |o| o.eval(x.as_slice())[(0, 0)])
    }

    fn infeasible_equalities(&self) -> LmiSolution {
        LmiSolution {
            status: Status::Infeasible,
            x: DVector::zeros(self.ncoords),
            assignment: BTreeMap::new(),
            objective_value: f64::NAN,
            residuals: Residuals::default(),
            iterations: 0,
            fw_gap: None,
            fw_segment: None,
        }
    }

    pub(crate) fn solution_from(&self, status: Status, w: &DVector<f64>, res: Residuals, iterations: usize) -> LmiSolution {
        let x = self.lift(w);
        LmiSolution {
            status,
            assignment: self.assignment(&x),
            objective_value: self.objective_at(&x),
            x,
            residuals: res,
            iterations,
            fw_gap: None,
            fw_segment: None,
        }
    }

    pub fn solve(&self) -> LmiSolution {
        self.solve_with(&SolverOptions::default())
    }

    pub fn solve_with(&self, opts: &SolverOptions) -> LmiSolution {
        if !self.eq_ok {
            return self.infeasible_equalities();
        }
        let sol = hsd::solve(&self.program, opts);
        let res = Residuals { primal: sol.pres, dual: sol.dres, gap: sol.gap };
        self.solution_from(sol.status, &sol.x, res, sol.iterations)
    }

    /// Maximizes `log det` of the symmetric variable `target` over the
    /// feasible set (the declared objective, if any, is ignored).
    pub fn maximize_logdet(&self, target: &Var, opts: &MaxDetOptions) -> Res<LmiSolution> {
        let VarKind::Symmetric(order) = target.kind else {
            return Err(LmiError::Dimension(format!("`{}` is not a symmetric variable", target.name)));
        };
        if target.owner != self.vars.first().map_or(0, |v| v.owner) {
            return Err(LmiError::ForeignVariable);
        }
        if !self.eq_ok {
            return Ok(self.infeasible_equalities());
        }
        let e = target.expr();
        let (t0, lin) = reduce(e.constant_part(), e.terms(), 1.0, &self.x0, &self.null, order);
        let out = maxdet::solve(&self.program, &t0, &lin, order, opts);
        let mut sol = self.solution_from(out.status, &out.w, out.residuals, out.iterations);
        sol.objective_value = out.logdet;
        sol.fw_gap = out.fw_gap;
        sol.fw_segment = out.segment;
        Ok(sol)
    }

    /// Plain-text listing of the compiled standard form.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let p = &self.program;
        let _ = writeln!(out, "# standard form: minimize c'w + c0 s.t. h_k - G_k w >= 0 (PSD)");
        let _ = writeln!(out, "# x = x0 + N w; coordinates={}, reduced={}", self.ncoords, p.dim());
        let _ = writeln!(out, "variables");
        for v in &self.vars {
            let _ = writeln!(
                out,
                "  {} {:?} coords {}..{}",
                v.name,
                v.kind,
                v.offset,
                v.offset + v.kind.coords()
            );
        }
        let _ = writeln!(out, "c0 {:.17e}", p.c0);
        let _ = writeln!(out, "c {}", fmt_row(p.c.as_slice()));
        for (k, b) in p.blocks.iter().enumerate() {
            let src = if b.source == usize::MAX {
                "nonnegativity".to_string()
            } else {
                self.constraints[b.source].name.clone()
            };
            let _ = writeln!(out, "block {k} order {} from {src}", b.order);
            let _ = writeln!(out, "  h");
            write_mat(&mut out, &smat(b.h.as_slice(), b.order));
            for j in 0..p.dim() {
                let col = b.g.column(j);
                if col.amax() == 0.0 {
                    continue;
                }
                let _ = writeln!(out, "  G[{j}]");
                write_mat(&mut out, &smat(col.as_slice(), b.order));
            }
        }
        out
    }
}

fn fmt_row(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(" ")
}

fn write_mat(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        let _ = writeln!(out, "    {}", fmt_row(&row));
    }
}
