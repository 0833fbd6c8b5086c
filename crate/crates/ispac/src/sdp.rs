//! Conic-solver boundary: declarative SDP assembly over Hermitian, symmetric,
//! and scalar variable blocks, plus the rank-one recovery routines shared by
//! the beamformer optimizers.
//!
//! Problems are stated with a linear objective, scalar affine constraints,
//! PSD constraints on affine matrix expressions, and squared-Frobenius
//! penalty terms. Complex Hermitian PSD constraints are realified through
//! the [Re, -Im; Im, Re] embedding so a real-PSD-cone interior-point solver
//! suffices; penalties enter through second-order-cone epigraphs. The cone
//! program itself is delegated to an existing interior-point subroutine.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus as ClarabelStatus,
    SupportedConeT,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;



use crate::{CMat, CVec};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("solver returned {0:?}")]
    NotOptimal(SolveStatus),
    #[error("problem is structurally broken: {0}")]
    Malformed(String),
    #[error("degenerate beam: quadratic form {0:.3e} too small for rank-one recovery")]
    DegenerateBeam(f64),
    #[error("no feasible sample among {0} randomization draws")]
    NoFeasibleSample(usize),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    Numerical,
}

/// Interior-point settings passed through to the conic solver.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, verbose: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Hermitian { n: usize },
    Symmetric { n: usize },
    Scalars { len: usize },
}

impl BlockKind {
    fn params(&self) -> usize {
        match *self {
            BlockKind::Hermitian { n } => n * n,
            BlockKind::Symmetric { n } => n * (n + 1) / 2,
            BlockKind::Scalars { len } => len,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    kind: BlockKind,
    offset: usize,
    psd: bool,
}

/// Real affine function of the parameter vector.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.constant += other.constant;
        self.terms.extend_from_slice(&other.terms);
        self
    }

    pub fn minus(mut self, other: &LinExpr) -> Self {
        self.constant -= other.constant;
        self.terms.extend(other.terms.iter().map(|&(i, v)| (i, -v)));
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.constant *= s;
        for t in &mut self.terms {
            t.1 *= s;
        }
        self
    }

    fn push(&mut self, idx: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((idx, coeff));
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, v)| v * x[i]).sum::<f64>()
    }

    fn is_structurally_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }
}

/// Complex affine entry of a matrix expression.
#[derive(Debug, Clone, Default)]
pub struct CLinExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

/// Hermitian-valued affine matrix expression, stored by upper triangle.
#[derive(Debug, Clone)]
pub struct MatExpr {
    n: usize,
    entries: Vec<CLinExpr>,
}

impl MatExpr {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![CLinExpr::default(); n * (n + 1) / 2] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.n);
        j * (j + 1) / 2 + i
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut CLinExpr {
        let k = self.idx(i, j);
        &mut self.entries[k]
    }

    pub fn add_const(&mut self, c: &CMat, scale: f64) {
        for j in 0..self.n {
            for i in 0..=j {
                let v = c[(i, j)] * scale;
                let e = self.entry_mut(i, j);
                e.re.constant += v.re;
                e.im.constant += v.im;
            }
        }
    }

    fn is_real(&self) -> bool {
        self.entries.iter().all(|e| e.im.is_structurally_zero())
    }

    fn eval(&self, x: &[f64]) -> CMat {
        let mut out = CMat::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in 0..=j {
                let e = &self.entries[self.idx(i, j)];
                let v = Complex64::new(e.re.eval(x), e.im.eval(x));
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        out
    }
}

enum ScalarSense {
    Eq,
    /// expr <= 0
    Le,
}

struct ScalarCon {
    expr: LinExpr,
    sense: ScalarSense,
}

struct SocEpigraph {
    /// Parameter index of the epigraph scalar t with t >= ||rows||^2.
    t_idx: usize,
    rows: Vec<LinExpr>,
}

/// Declarative conic problem over matrix and scalar blocks.
pub struct SdpProblem {
    blocks: Vec<Block>,
    n_params: usize,
    objective: Vec<(usize, f64)>,
    scalar_cons: Vec<ScalarCon>,
    psd_cons: Vec<MatExpr>,
    epigraphs: Vec<SocEpigraph>,
}

impl Default for SdpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProblem {
    pub fn new() -> Self {
        Self {
            blocks: Vec::new(),
            n_params: 0,
            objective: Vec::new(),
            scalar_cons: Vec::new(),
            psd_cons: Vec::new(),
            epigraphs: Vec::new(),
        }
    }

    fn add_block(&mut self, kind: BlockKind, psd: bool) -> BlockId {
        let id = BlockId(self.blocks.len());
        self.blocks.push(Block { kind, offset: self.n_params, psd });
        self.n_params += kind.params();
        id
    }

    /// Free complex Hermitian block (n x n).
    pub fn hermitian_block(&mut self, n: usize) -> BlockId {
        self.add_block(BlockKind::Hermitian { n }, false)
    }

    /// Complex Hermitian block constrained PSD.
    pub fn psd_hermitian_block(&mut self, n: usize) -> BlockId {
        self.add_block(BlockKind::Hermitian { n }, true)
    }

    /// Free real symmetric block.
    pub fn symmetric_block(&mut self, n: usize) -> BlockId {
        self.add_block(BlockKind::Symmetric { n }, false)
    }

    /// Real symmetric block constrained PSD.
    pub fn psd_symmetric_block(&mut self, n: usize) -> BlockId {
        self.add_block(BlockKind::Symmetric { n }, true)
    }

    /// Vector of free real scalars.
    pub fn scalar_block(&mut self, len: usize) -> BlockId {
        self.add_block(BlockKind::Scalars { len }, false)
    }

    fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.0]
    }

    pub fn block_size(&self, id: BlockId) -> usize {
        match self.block(id).kind {
            BlockKind::Hermitian { n } | BlockKind::Symmetric { n } => n,
            BlockKind::Scalars { len } => len,
        }
    }

    // Parameter layout. Hermitian column j holds (re, im) pairs for rows
    // i < j followed by the real diagonal entry, so column j starts at j^2.
    fn herm_re(&self, id: BlockId, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        self.block(id).offset + j * j + 2 * i
    }

    fn herm_im(&self, id: BlockId, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        self.block(id).offset + j * j + 2 * i + 1
    }

    fn herm_diag(&self, id: BlockId, j: usize) -> usize {
        self.block(id).offset + j * j + 2 * j
    }

    fn sym_idx(&self, id: BlockId, i: usize, j: usize) -> usize {
        debug_assert!(i <= j);
        self.block(id).offset + j * (j + 1) / 2 + i
    }

    /// Parameter index of one scalar in a scalar block.
    pub fn scalar_idx(&self, id: BlockId, k: usize) -> usize {
        self.block(id).offset + k
    }

    pub fn scalar_expr(&self, id: BlockId, k: usize) -> LinExpr {
        let mut e = LinExpr::default();
        e.push(self.scalar_idx(id, k), 1.0);
        e
    }

    /// Complex affine expression of one block entry (i <= j).
    pub fn entry_expr(&self, id: BlockId, i: usize, j: usize) -> CLinExpr {
        let mut out = CLinExpr::default();
        match self.block(id).kind {
            BlockKind::Hermitian { .. } => {
                if i == j {
                    out.re.push(self.herm_diag(id, j), 1.0);
                } else {
                    out.re.push(self.herm_re(id, i, j), 1.0);
                    out.im.push(self.herm_im(id, i, j), 1.0);
                }
            }
            BlockKind::Symmetric { .. } => {
                out.re.push(self.sym_idx(id, i, j), 1.0);
            }
            BlockKind::Scalars { .. } => panic!("entry_expr on a scalar block"),
        }
        out
    }

    /// Re tr(C * X) as a real affine expression; only the Hermitian (or
    /// symmetric) part of C contributes.
    pub fn re_trace(&self, id: BlockId, c: &CMat) -> LinExpr {
        let mut expr = LinExpr::default();
        match self.block(id).kind {
            BlockKind::Hermitian { n } => {
                assert_eq!(c.nrows(), n);
                for j in 0..n {
                    let h_jj = 0.5 * (c[(j, j)] + c[(j, j)].conj());
                    expr.push(self.herm_diag(id, j), h_jj.re);
                    for i in 0..j {
                        let h_ij = 0.5 * (c[(i, j)] + c[(j, i)].conj());
                        expr.push(self.herm_re(id, i, j), 2.0 * h_ij.re);
                        expr.push(self.herm_im(id, i, j), 2.0 * h_ij.im);
                    }
                }
            }
            BlockKind::Symmetric { n } => {
                assert_eq!(c.nrows(), n);
                for j in 0..n {
                    expr.push(self.sym_idx(id, j, j), c[(j, j)].re);
                    for i in 0..j {
                        expr.push(self.sym_idx(id, i, j), c[(i, j)].re + c[(j, i)].re);
                    }
                }
            }
            BlockKind::Scalars { .. } => panic!("re_trace on a scalar block"),
        }
        expr
    }

    /// v^H X v, real for Hermitian X.
    pub fn quad_form(&self, id: BlockId, v: &CVec) -> LinExpr {
        let c = CMat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj());
        self.re_trace(id, &c)
    }

    /// tr(X).
    pub fn trace_expr(&self, id: BlockId) -> LinExpr {
        let n = self.block_size(id);
        self.re_trace(id, &CMat::identity(n, n))
    }

    /// Adds alpha * X into the expression at diagonal offset `off`.
    pub fn place_block(&self, expr: &mut MatExpr, id: BlockId, alpha: f64, off: usize) {
        let n = self.block_size(id);
        assert!(off + n <= expr.size());
        for j in 0..n {
            for i in 0..=j {
                let src = self.entry_expr(id, i, j);
                let dst = expr.entry_mut(off + i, off + j);
                dst.re = std::mem::take(&mut dst.re).plus(&src.re.scaled(alpha));
                dst.im = std::mem::take(&mut dst.im).plus(&src.im.scaled(alpha));
            }
        }
    }

    /// Adds alpha * C X C^H into the expression (sizes: C is m x n, X n x n,
    /// expression m x m).
    pub fn add_congruence(&self, expr: &mut MatExpr, c: &CMat, id: BlockId, alpha: f64) {
        let n = self.block_size(id);
        assert_eq!(c.ncols(), n);
        let m = c.nrows();
        assert_eq!(expr.size(), m);
        for j in 0..m {
            for i in 0..=j {
                let mut re = LinExpr::default();
                let mut im = LinExpr::default();
                for k in 0..n {
                    // Diagonal parameter X_kk.
                    let coeff = c[(i, k)] * c[(j, k)].conj() * alpha;
                    re.push(self.herm_diag(id, k), coeff.re);
                    im.push(self.herm_diag(id, k), coeff.im);
                    for l in (k + 1)..n {
                        let a = c[(i, k)] * c[(j, l)].conj();
                        let b = c[(i, l)] * c[(j, k)].conj();
                        let coeff_re = (a + b) * alpha;
                        let coeff_im = (a - b) * Complex64::new(0.0, 1.0) * alpha;
                        re.push(self.herm_re(id, k, l), coeff_re.re);
                        im.push(self.herm_re(id, k, l), coeff_re.im);
                        re.push(self.herm_im(id, k, l), coeff_im.re);
                        im.push(self.herm_im(id, k, l), coeff_im.im);
                    }
                }
                let dst = expr.entry_mut(i, j);
                dst.re = std::mem::take(&mut dst.re).plus(&re);
                dst.im = std::mem::take(&mut dst.im).plus(&im);
            }
        }
    }

    /// Adds alpha * (K .* X) (elementwise product with a fixed Hermitian K).
    pub fn add_hadamard(&self, expr: &mut MatExpr, k_mat: &CMat, id: BlockId, alpha: f64) {
        let n = self.block_size(id);
        assert_eq!(expr.size(), n);
        for j in 0..n {
            for i in 0..=j {
                let kv = k_mat[(i, j)] * alpha;
                let dst = expr.entry_mut(i, j);
                if i == j {
                    dst.re.push(self.herm_diag(id, j), kv.re);
                    dst.im.push(self.herm_diag(id, j), kv.im);
                } else {
                    // K_ij * (re + j*im)
                    dst.re.push(self.herm_re(id, i, j), kv.re);
                    dst.im.push(self.herm_re(id, i, j), kv.im);
                    dst.re.push(self.herm_im(id, i, j), -kv.im);
                    dst.im.push(self.herm_im(id, i, j), kv.re);
                }
            }
        }
    }

    pub fn add_objective(&mut self, expr: &LinExpr, scale: f64) {
        for &(i, v) in &expr.terms {
            self.objective.push((i, v * scale));
        }
    }

    /// Adds sum_i w_i * (U^{-1})_ii to the objective through one scalar
    /// epigraph per diagonal entry, each tied to U by a bordered LMI. The
    /// per-entry form keeps every cone block well scaled even when the
    /// weights span many orders of magnitude, since weights appear only in
    /// the cost vector.
    pub fn add_inverse_diag_objective(&mut self, u: BlockId, weights: &[f64]) -> BlockId {
        let n = self.block_size(u);
        assert_eq!(weights.len(), n);
        let v = self.scalar_block(n);
        for (i, &w) in weights.iter().enumerate() {
            let mut lmi = MatExpr::zeros(n + 1);
            let e = self.scalar_expr(v, i);
            let dst = lmi.entry_mut(0, 0);
            dst.re = std::mem::take(&mut dst.re).plus(&e);
            let mut border = CMat::zeros(n + 1, n + 1);
            border[(0, 1 + i)] = Complex64::new(1.0, 0.0);
            border[(1 + i, 0)] = Complex64::new(1.0, 0.0);
            lmi.add_const(&border, 1.0);
            self.place_block(&mut lmi, u, 1.0, 1);
            self.psd(lmi);
            let mut term = LinExpr::default();
            term.push(self.scalar_idx(v, i), w);
            self.add_objective(&term, 1.0);
        }
        v
    }

    /// Adds tr(U^{-1}) to the objective for a symmetric PSD-intended block,
    /// through an epigraph block V with [V, I; I, U] PSD.
    pub fn add_trace_inverse_objective(&mut self, u: BlockId) -> BlockId {
        let n = self.block_size(u);
        let v = self.symmetric_block(n);
        let mut lmi = MatExpr::zeros(2 * n);
        self.place_block(&mut lmi, v, 1.0, 0);
        self.place_block(&mut lmi, u, 1.0, n);
        let mut eye = CMat::zeros(2 * n, 2 * n);
        for i in 0..n {
            eye[(i, n + i)] = Complex64::new(1.0, 0.0);
            eye[(n + i, i)] = Complex64::new(1.0, 0.0);
        }
        lmi.add_const(&eye, 1.0);
        self.psd(lmi);
        let tr = self.trace_expr(v);
        self.add_objective(&tr, 1.0);
        v
    }

    pub fn eq(&mut self, expr: LinExpr) {
        self.scalar_cons.push(ScalarCon { expr, sense: ScalarSense::Eq });
    }

    /// lhs <= rhs.
    pub fn le(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.scalar_cons.push(ScalarCon { expr: lhs.minus(&rhs), sense: ScalarSense::Le });
    }

    pub fn psd(&mut self, expr: MatExpr) {
        self.psd_cons.push(expr);
    }

    /// Fresh scalar t constrained to t >= ||rows||^2 through a second-order
    /// cone; the returned expression can enter constraints or the objective.
    pub fn sq_norm_epigraph(&mut self, rows: Vec<LinExpr>) -> LinExpr {
        let t = self.scalar_block(1);
        let t_idx = self.scalar_idx(t, 0);
        self.epigraphs.push(SocEpigraph { t_idx, rows });
        self.scalar_expr(t, 0)
    }

    /// Adds weight * ||rows||^2 to the objective through an SOC epigraph.
    pub fn add_quadratic_penalty(&mut self, weight: f64, rows: Vec<LinExpr>) {
        assert!(weight > 0.0);
        let t = self.sq_norm_epigraph(rows);
        self.add_objective(&t, weight);
    }

    /// Frobenius rows of a Hermitian matrix expression: diagonal entries
    /// plus sqrt(2)-weighted real/imag off-diagonal parts.
    pub fn frobenius_rows(&self, expr: &MatExpr) -> Vec<LinExpr> {
        let mut rows = Vec::with_capacity(expr.n * expr.n);
        let sqrt2 = std::f64::consts::SQRT_2;
        for j in 0..expr.n {
            for i in 0..=j {
                let e = &expr.entries[expr.idx(i, j)];
                if i == j {
                    rows.push(e.re.clone());
                } else {
                    rows.push(e.re.clone().scaled(sqrt2));
                    if !e.im.is_structurally_zero() {
                        rows.push(e.im.clone().scaled(sqrt2));
                    }
                }
            }
        }
        rows
    }

    fn psd_cone_rows(&self, expr: &MatExpr) -> (Vec<(usize, LinExpr)>, usize) {
        // Returns (rows with their running index, cone size) in the solver's
        // scaled-triangle order. Complex expressions are realified first.
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut rows = Vec::new();
        if expr.is_real() {
            let m = expr.n;
            let mut r = 0;
            for j in 0..m {
                for i in 0..=j {
                    let scale = if i == j { 1.0 } else { sqrt2 };
                    rows.push((r, expr.entries[expr.idx(i, j)].re.clone().scaled(scale)));
                    r += 1;
                }
            }
            (rows, m)
        } else {
            let n = expr.n;
            let m = 2 * n;
            // Entry of the embedding at (ii, jj), ii <= jj.
            let entry = |ii: usize, jj: usize| -> LinExpr {
                if jj < n {
                    expr.entries[expr.idx(ii, jj)].re.clone()
                } else if ii < n {
                    let jp = jj - n;
                    match ii.cmp(&jp) {
                        std::cmp::Ordering::Less => {
                            expr.entries[expr.idx(ii, jp)].im.clone().scaled(-1.0)
                        }
                        std::cmp::Ordering::Equal => LinExpr::default(),
                        std::cmp::Ordering::Greater => expr.entries[expr.idx(jp, ii)].im.clone(),
                    }
                } else {
                    expr.entries[expr.idx(ii - n, jj - n)].re.clone()
                }
            };
            let mut r = 0;
            for jj in 0..m {
                for ii in 0..=jj {
                    let scale = if ii == jj { 1.0 } else { sqrt2 };
                    rows.push((r, entry(ii, jj).scaled(scale)));
                    r += 1;
                }
            }
            (rows, m)
        }
    }

    /// Assembles and solves the problem.
    pub fn solve(&self, settings: &SolverSettings) -> Result<Solution, SdpError> {
        let n_x = self.n_params;

        let mut q = vec![0.0; n_x];
        for &(i, v) in &self.objective {
            q[i] += v;
        }

        // Rows: zero cone (equalities), nonneg cone (inequalities), one SOC
        // per penalty, one PSD triangle per matrix constraint.
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row = 0usize;

        let n_eq = self.scalar_cons.iter().filter(|c| matches!(c.sense, ScalarSense::Eq)).count();
        if n_eq > 0 {
            for con in self.scalar_cons.iter().filter(|c| matches!(c.sense, ScalarSense::Eq)) {
                for &(i, v) in &con.expr.terms {
                    triplets.push((row, i, v));
                }
                b.push(-con.expr.constant);
                row += 1;
            }
            cones.push(SupportedConeT::ZeroConeT(n_eq));
        }
        let n_le = self.scalar_cons.len() - n_eq;
        if n_le > 0 {
            // expr <= 0 becomes s = -expr >= 0, i.e. s = b - Ax with A = +terms.
            for con in self.scalar_cons.iter().filter(|c| matches!(c.sense, ScalarSense::Le)) {
                for &(i, v) in &con.expr.terms {
                    triplets.push((row, i, v));
                }
                b.push(-con.expr.constant);
                row += 1;
            }
            cones.push(SupportedConeT::NonnegativeConeT(n_le));
        }
        for epi in &self.epigraphs {
            // t >= ||u||^2 through the cone (t+1)/2 >= ||[(t-1)/2, u]||.
            triplets.push((row, epi.t_idx, -0.5));
            b.push(0.5);
            row += 1;
            triplets.push((row, epi.t_idx, -0.5));
            b.push(-0.5);
            row += 1;
            for r_expr in &epi.rows {
                for &(i, v) in &r_expr.terms {
                    triplets.push((row, i, -v));
                }
                b.push(r_expr.constant);
                row += 1;
            }
            cones.push(SupportedConeT::SecondOrderConeT(epi.rows.len() + 2));
        }
        // PSD constraints for declared-PSD blocks, then explicit ones.
        let mut psd_exprs: Vec<MatExpr> = Vec::new();
        for (bi, blk) in self.blocks.iter().enumerate() {
            if blk.psd {
                let n = self.block_size(BlockId(bi));
                let mut expr = MatExpr::zeros(n);
                self.place_block(&mut expr, BlockId(bi), 1.0, 0);
                psd_exprs.push(expr);
            }
        }
        psd_exprs.extend(self.psd_cons.iter().cloned());
        for expr in &psd_exprs {
            let (rows, m) = self.psd_cone_rows(expr);
            for (r, lin) in rows {
                for &(i, v) in &lin.terms {
                    triplets.push((row + r, i, -v));
                }
                b.push(lin.constant);
            }
            row += m * (m + 1) / 2;
            cones.push(SupportedConeT::PSDTriangleConeT(m));
        }

        let a = build_csc(row, n_x, &mut triplets);
        let p = CscMatrix::zeros((n_x, n_x));
        let clarabel_settings = DefaultSettingsBuilder::default()
            .verbose(settings.verbose)
            .max_iter(settings.max_iter as u32)
            .tol_feas(settings.tol)
            .tol_gap_abs(settings.tol)
            .tol_gap_rel(settings.tol.max(1e-10))
            .build()
            .map_err(|e| SdpError::Malformed(format!("solver settings: {e}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, clarabel_settings)
            .map_err(|e| SdpError::Malformed(format!("solver setup: {e:?}")))?;
        solver.solve();

        let status = match solver.solution.status {
            ClarabelStatus::Solved | ClarabelStatus::AlmostSolved => SolveStatus::Optimal,
            ClarabelStatus::PrimalInfeasible | ClarabelStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            ClarabelStatus::DualInfeasible | ClarabelStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            ClarabelStatus::MaxIterations | ClarabelStatus::MaxTime => SolveStatus::MaxIter,
            _ => SolveStatus::Numerical,
        };
        Ok(Solution { status, objective: solver.solution.obj_val, x: solver.solution.x.clone() })
    }
}

fn build_csc(rows: usize, cols: usize, triplets: &mut Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    triplets.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; cols + 1];
    let mut rowval: Vec<usize> = Vec::with_capacity(triplets.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(triplets.len());
    let mut last: Option<(usize, usize)> = None;
    for &(r, c, v) in triplets.iter() {
        if last == Some((c, r)) {
            *nzval.last_mut().unwrap() += v;
        } else {
            rowval.push(r);
            nzval.push(v);
            colptr[c + 1] += 1;
            last = Some((c, r));
        }
    }
    for c in 0..cols {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}

/// Solver output bound to the problem that produced it.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    x: Vec<f64>,
}

impl Solution {
    pub fn require_optimal(&self) -> Result<(), SdpError> {
        if self.status == SolveStatus::Optimal {
            Ok(())
        } else {
            Err(SdpError::NotOptimal(self.status))
        }
    }

    /// Hermitian (or real-symmetric, promoted) value of a matrix block.
    pub fn block_value(&self, p: &SdpProblem, id: BlockId) -> CMat {
        let n = p.block_size(id);
        match p.block(id).kind {
            BlockKind::Hermitian { .. } => {
                let mut m = CMat::zeros(n, n);
                for j in 0..n {
                    m[(j, j)] = Complex64::new(self.x[p.herm_diag(id, j)], 0.0);
                    for i in 0..j {
                        let v =
                            Complex64::new(self.x[p.herm_re(id, i, j)], self.x[p.herm_im(id, i, j)]);
                        m[(i, j)] = v;
                        m[(j, i)] = v.conj();
                    }
                }
                m
            }
            BlockKind::Symmetric { .. } => {
                let mut m = CMat::zeros(n, n);
                for j in 0..n {
                    for i in 0..=j {
                        let v = Complex64::new(self.x[p.sym_idx(id, i, j)], 0.0);
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                m
            }
            BlockKind::Scalars { .. } => panic!("block_value on a scalar block"),
        }
    }

    pub fn sym_value(&self, p: &SdpProblem, id: BlockId) -> DMatrix<f64> {
        self.block_value(p, id).map(|e| e.re)
    }

    pub fn scalar_value(&self, p: &SdpProblem, id: BlockId, k: usize) -> f64 {
        self.x[p.scalar_idx(id, k)]
    }

    pub fn eval(&self, expr: &LinExpr) -> f64 {
        expr.eval(&self.x)
    }

    pub fn eval_mat(&self, expr: &MatExpr) -> CMat {
        expr.eval(&self.x)
    }
}

/// Post-hoc residual audit, independent of the solver's own report.
pub struct ResidualReport {
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    /// Most negative scaled eigenvalue over PSD constraints (>= 0 when clean).
    pub worst_psd_deficit: f64,
}

pub fn verify_solution(p: &SdpProblem, sol: &Solution) -> ResidualReport {
    let mut max_eq = 0.0f64;
    let mut max_le = 0.0f64;
    for con in &p.scalar_cons {
        let v = con.expr.eval(&sol.x);
        match con.sense {
            ScalarSense::Eq => max_eq = max_eq.max(v.abs()),
            ScalarSense::Le => max_le = max_le.max(v.max(0.0)),
        }
    }
    let mut worst_psd = 0.0f64;
    let mut check_expr = |expr: &MatExpr| {
        let m = expr.eval(&sol.x);
        let eig = nalgebra::SymmetricEigen::new(m.clone());
        let scale = m.trace().re.abs().max(1.0);
        let deficit = (-eig.eigenvalues.min() / scale).max(0.0);
        worst_psd = worst_psd.max(deficit);
    };
    for (bi, blk) in p.blocks.iter().enumerate() {
        if blk.psd {
            let n = p.block_size(BlockId(bi));
            let mut expr = MatExpr::zeros(n);
            p.place_block(&mut expr, BlockId(bi), 1.0, 0);
            check_expr(&expr);
        }
    }
    for expr in &p.psd_cons {
        check_expr(expr);
    }
    ResidualReport { max_eq_violation: max_eq, max_ineq_violation: max_le, worst_psd_deficit: worst_psd }
}

/// Trace-preserving rank-one reduction of an SDR beamformer matrix: keeps
/// the quadratic form along the (conjugated) effective channel exactly and
/// returns both the rank-one matrix and its canonical-phase factor.
pub fn rank_one_downlink_recovery(
    w_sdr: &CMat,
    h_tilde: &CVec,
) -> Result<(CMat, CVec), SdpError> {
    let u = h_tilde.map(|e| e.conj());
    let wu = w_sdr * &u;
    let s = (u.adjoint() * &wu)[(0, 0)].re;
    let scale = w_sdr.trace().re.abs().max(1e-300) * u.norm_squared();
    if s <= 1e-12 * scale {
        return Err(SdpError::DegenerateBeam(s));
    }
    let w = canonical_phase(wu / Complex64::new(s.sqrt(), 0.0));
    let w_mat = CMat::from_fn(w.len(), w.len(), |i, j| w[i] * w[j].conj());
    Ok((w_mat, w))
}

/// Rotates a vector by a global phase so its first significantly nonzero
/// entry is real non-negative.
pub fn canonical_phase(v: CVec) -> CVec {
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let pivot = v.iter().find(|e| e.norm() > 1e-12 * norm).copied();
    match pivot {
        Some(pv) => {
            let rot = Complex64::from_polar(1.0, -pv.arg());
            v.map(|e| e * rot)
        }
        None => v,
    }
}

/// Draws unit-modulus candidates from CN(0, X_sdr), keeps those accepted by
/// the evaluator, and returns the feasible candidate with the smallest
/// score. The evaluator returns None for infeasible candidates.
pub fn gaussian_randomization<R, F>(
    x_sdr: &CMat,
    mut evaluate: F,
    n_samples: usize,
    rng: &mut R,
) -> Result<(CVec, f64), SdpError>
where
    R: Rng + ?Sized,
    F: FnMut(&CVec) -> Option<f64>,
{
    let n = x_sdr.nrows();
    // SDR outputs are PSD only to interior-point tolerance.
    let factor = crate::signal::psd_factor_tol(x_sdr, 1e-7)?;
    let mut best: Option<(CVec, f64)> = None;
    for _ in 0..n_samples {
        let xi = &factor * crate::signal::cscg_vector(n, rng);
        let f = canonical_phase(xi.map(|e| {
            if e.norm() > 0.0 { e / Complex64::new(e.norm(), 0.0) } else { Complex64::new(1.0, 0.0) }
        }));
        if let Some(score) = evaluate(&f) {
            if best.as_ref().map_or(true, |(_, s)| score < *s) {
                best = Some((f, score));
            }
        }
    }
    best.ok_or(SdpError::NoFeasibleSample(n_samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::cscg_matrix;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn min_trace_above_identity() {
        // min tr(X) s.t. X >= I (2x2 real) has optimum X = I, objective 2.
        let mut p = SdpProblem::new();
        let x = p.psd_symmetric_block(2);
        let tr = p.trace_expr(x);
        p.add_objective(&tr, 1.0);
        let mut shifted = MatExpr::zeros(2);
        p.place_block(&mut shifted, x, 1.0, 0);
        shifted.add_const(&CMat::identity(2, 2), -1.0);
        p.psd(shifted);
        let sol = p.solve(&settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, 2.0, epsilon = 1e-6);
        let xv = sol.sym_value(&p, x);
        assert!((xv - DMatrix::identity(2, 2)).norm() < 1e-5);
    }

    #[test]
    fn infeasible_pair_detected() {
        let mut p = SdpProblem::new();
        let x = p.psd_symmetric_block(2);
        let mut shifted = MatExpr::zeros(2);
        p.place_block(&mut shifted, x, 1.0, 0);
        shifted.add_const(&CMat::identity(2, 2), -1.0);
        p.psd(shifted);
        let tr = p.trace_expr(x);
        p.le(tr, LinExpr::constant(1.0));
        let sol = p.solve(&settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn hermitian_objective_with_analytic_optimum() {
        // min Re tr(A X) s.t. X >= I with A Hermitian positive definite has
        // optimum X = I and objective tr(A); A doubles as the dual
        // certificate for the PSD constraint.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let n = 4;
            let seed = cscg_matrix(n, n, &mut rng);
            let a = &seed * seed.adjoint() + CMat::identity(n, n) * Complex64::new(0.5, 0.0);
            let mut p = SdpProblem::new();
            let x = p.hermitian_block(n);
            let obj = p.re_trace(x, &a);
            p.add_objective(&obj, 1.0);
            let mut shifted = MatExpr::zeros(n);
            p.place_block(&mut shifted, x, 1.0, 0);
            shifted.add_const(&CMat::identity(n, n), -1.0);
            p.psd(shifted);
            let sol = p.solve(&settings()).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            let expected = a.trace().re;
            assert!(
                (sol.objective - expected).abs() <= 1e-6 * expected.max(1.0),
                "objective {} vs analytic {}",
                sol.objective,
                expected
            );
            let report = verify_solution(&p, &sol);
            assert!(report.worst_psd_deficit < 1e-7);
        }
    }

    #[test]
    fn equality_and_scalar_blocks() {
        // min t s.t. t >= ||x - c||^2 with x fixed by equalities.
        let mut p = SdpProblem::new();
        let xs = p.scalar_block(2);
        let e0 = p.scalar_expr(xs, 0);
        let e1 = p.scalar_expr(xs, 1);
        p.eq(e0.clone().minus(&LinExpr::constant(3.0)));
        p.eq(e1.clone().minus(&LinExpr::constant(-1.0)));
        let rows = vec![
            e0.minus(&LinExpr::constant(1.0)),
            e1.minus(&LinExpr::constant(1.0)),
        ];
        p.add_quadratic_penalty(1.0, rows);
        let sol = p.solve(&settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        // ||(3,-1) - (1,1)||^2 = 4 + 4 = 8.
        assert_relative_eq!(sol.objective, 8.0, epsilon = 1e-6);
    }

    #[test]
    fn trace_inverse_epigraph_matches_closed_form() {
        // min tr(U^{-1}) s.t. U <= D elementwise-PSD sense gives U = D.
        let mut p = SdpProblem::new();
        let u = p.psd_symmetric_block(2);
        p.add_trace_inverse_objective(u);
        // D - U >= 0 with D = diag(4, 25).
        let mut cap = MatExpr::zeros(2);
        p.place_block(&mut cap, u, -1.0, 0);
        let mut d = CMat::zeros(2, 2);
        d[(0, 0)] = Complex64::new(4.0, 0.0);
        d[(1, 1)] = Complex64::new(25.0, 0.0);
        cap.add_const(&d, 1.0);
        p.psd(cap);
        let sol = p.solve(&settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, 0.25 + 0.04, epsilon = 1e-5);
    }

    #[test]
    fn congruence_map_matches_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cscg_matrix(3, 4, &mut rng);
        let mut p = SdpProblem::new();
        let x = p.hermitian_block(4);
        let mut expr = MatExpr::zeros(3);
        p.add_congruence(&mut expr, &c, x, 1.0);
        // Assemble a random Hermitian X, evaluate through the expression.
        let seed = cscg_matrix(4, 4, &mut rng);
        let xval = &seed * seed.adjoint();
        let mut xvec = vec![0.0; p.n_params];
        for j in 0..4 {
            xvec[p.herm_diag(x, j)] = xval[(j, j)].re;
            for i in 0..j {
                xvec[p.herm_re(x, i, j)] = xval[(i, j)].re;
                xvec[p.herm_im(x, i, j)] = xval[(i, j)].im;
            }
        }
        let sol = Solution { status: SolveStatus::Optimal, objective: 0.0, x: xvec };
        let got = sol.eval_mat(&expr);
        let want = &c * xval * c.adjoint();
        assert!((got - want).norm() < 1e-10);
    }

    #[test]
    fn hadamard_map_matches_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seed_k = cscg_matrix(4, 4, &mut rng);
        let k_mat = &seed_k * seed_k.adjoint();
        let mut p = SdpProblem::new();
        let x = p.hermitian_block(4);
        let mut expr = MatExpr::zeros(4);
        p.add_hadamard(&mut expr, &k_mat, x, 1.0);
        let seed = cscg_matrix(4, 4, &mut rng);
        let xval = &seed * seed.adjoint();
        let mut xvec = vec![0.0; p.n_params];
        for j in 0..4 {
            xvec[p.herm_diag(x, j)] = xval[(j, j)].re;
            for i in 0..j {
                xvec[p.herm_re(x, i, j)] = xval[(i, j)].re;
                xvec[p.herm_im(x, i, j)] = xval[(i, j)].im;
            }
        }
        let sol = Solution { status: SolveStatus::Optimal, objective: 0.0, x: xvec };
        let got = sol.eval_mat(&expr);
        let want = CMat::from_fn(4, 4, |i, j| k_mat[(i, j)] * xval[(i, j)]);
        assert!((got - want).norm() < 1e-10);
    }

    #[test]
    fn rank_one_recovery_identity_and_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = 4;
            let seed = cscg_matrix(n, n, &mut rng);
            let w_sdr = &seed * seed.adjoint();
            let h = crate::signal::cscg_vector(n, &mut rng);
            let (w_star, w_vec) = rank_one_downlink_recovery(&w_sdr, &h).unwrap();
            // Quadratic form along the channel is preserved exactly.
            let u = h.map(|e| e.conj());
            let before = (u.adjoint() * &w_sdr * &u)[(0, 0)].re;
            let after = (u.adjoint() * &w_star * &u)[(0, 0)].re;
            assert!((before - after).abs() < 1e-10 * before.abs().max(1.0));
            // Rank one by construction.
            let outer = CMat::from_fn(n, n, |i, j| w_vec[i] * w_vec[j].conj());
            assert!((outer - &w_star).norm() < 1e-10 * w_star.norm());
            // Power never grows.
            assert!(w_star.trace().re <= w_sdr.trace().re * (1.0 + 1e-9));
        }
    }

    #[test]
    fn rank_one_recovery_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = crate::signal::cscg_vector(4, &mut rng);
        let w_sdr = CMat::from_fn(4, 4, |i, j| w[i] * w[j].conj());
        let h = crate::signal::cscg_vector(4, &mut rng);
        let (w_star, _) = rank_one_downlink_recovery(&w_sdr, &h).unwrap();
        assert!((w_star - &w_sdr).norm() < 1e-9 * w_sdr.norm());
    }

    #[test]
    fn rank_one_recovery_rejects_orthogonal_channel() {
        let mut w_sdr = CMat::zeros(3, 3);
        w_sdr[(0, 0)] = Complex64::new(1.0, 0.0);
        let mut h = CVec::zeros(3);
        h[1] = Complex64::new(1.0, 0.0);
        assert!(matches!(
            rank_one_downlink_recovery(&w_sdr, &h),
            Err(SdpError::DegenerateBeam(_))
        ));
    }

    #[test]
    fn randomization_recovers_rank_one_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f_true = canonical_phase(
            crate::signal::cscg_vector(6, &mut rng)
                .map(|e| e / Complex64::new(e.norm(), 0.0)),
        );
        let x_sdr = CMat::from_fn(6, 6, |i, j| f_true[i] * f_true[j].conj());
        let (f, _) = gaussian_randomization(&x_sdr, |_f| Some(0.0), 8, &mut rng).unwrap();
        assert!((f - &f_true).norm() < 1e-9);
    }

    #[test]
    fn randomization_candidates_unit_modulus_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seed = cscg_matrix(6, 6, &mut rng);
        let x_sdr = &seed * seed.adjoint();
        let mut seen = 0usize;
        let result = gaussian_randomization(
            &x_sdr,
            |f| {
                for e in f.iter() {
                    assert_relative_eq!(e.norm(), 1.0, epsilon = 1e-12);
                }
                seen += 1;
                // Reject half the candidates to exercise the filter.
                if seen % 2 == 0 { Some(f[0].re) } else { None }
            },
            50,
            &mut rng,
        );
        assert!(result.is_ok());
    }

    #[test]
    fn randomization_reports_no_feasible_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x_sdr = CMat::identity(4, 4);
        let res = gaussian_randomization(&x_sdr, |_f| None::<f64>, 10, &mut rng);
        assert!(matches!(res, Err(SdpError::NoFeasibleSample(10))));
    }

    #[test]
    fn randomization_near_sdr_bound_on_quadratic_maximization() {
        // max f^H A f subject to unit-modulus entries; the SDR bound is
        // max tr(A X) with diag X = 1, X >= 0. Best-of-200 randomized
        // candidates lands within 10% of the bound on seeded instances.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = 8;
            let seed = cscg_matrix(n, n, &mut rng);
            let a = &seed * seed.adjoint();
            let mut p = SdpProblem::new();
            let x = p.psd_hermitian_block(n);
            let obj = p.re_trace(x, &a);
            p.add_objective(&obj, -1.0); // maximize
            for i in 0..n {
                let e = p.entry_expr(x, i, i);
                p.eq(e.re.minus(&LinExpr::constant(1.0)));
            }
            let sol = p.solve(&settings()).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            let bound = -sol.objective;
            let x_val = sol.block_value(&p, x);
            let (_, best) = gaussian_randomization(
                &x_val,
                |f| {
                    let v = (f.adjoint() * &a * f)[(0, 0)].re;
                    Some(-v)
                },
                200,
                &mut rng,
            )
            .unwrap();
            let achieved = -best;
            assert!(
                achieved >= 0.9 * bound,
                "achieved {achieved} below 90% of bound {bound}"
            );
        }
    }

    #[test]
    fn residual_verifier_flags_violations() {
        let mut p = SdpProblem::new();
        let xs = p.scalar_block(1);
        let e = p.scalar_expr(xs, 0);
        p.eq(e.clone().minus(&LinExpr::constant(1.0)));
        let bad = Solution { status: SolveStatus::Optimal, objective: 0.0, x: vec![2.0] };
        let report = verify_solution(&p, &bad);
        assert!(report.max_eq_violation > 0.9);
    }
}
