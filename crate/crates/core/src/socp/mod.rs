//! Standard-form second-order cone programming.
//!
//! Problems are `min c'x  s.t.  A x = b,  x in K`, where K is a product of
//! free blocks, nonnegative blocks, and second-order cones
//! `{u : u_0 >= ||u_{1..}||}`. The embedded solver ([`solve`]) is a
//! primal-dual path-following interior-point method on the homogeneous
//! self-dual embedding, so primal or dual infeasibility is detected by
//! certificate rather than by timeout. Dense linear algebra throughout;
//! problems up to a few hundred rows and variables are the design point.

mod cones;
mod equil;
mod linsys;
mod solver;

pub use solver::solve;

use serde::{Deserialize, Serialize};

/// One block of the cone product, covering a contiguous variable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "dim")]
pub enum ConeBlock {
    Free(usize),
    NonNeg(usize),
    /// Second-order cone of dimension >= 2; the first coordinate bounds the
    /// Euclidean norm of the rest.
    Soc(usize),
}

impl ConeBlock {
    pub fn dim(&self) -> usize {
        match *self {
            ConeBlock::Free(d) | ConeBlock::NonNeg(d) | ConeBlock::Soc(d) => d,
        }
    }
}

/// Sparse matrix in compressed-sparse-column form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CscMatrix {
            n_rows,
            n_cols,
            col_ptr: vec![0; n_cols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut row_idx: Vec<usize> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut col_of: Vec<usize> = Vec::with_capacity(entries.len());
        let mut last = None;
        for (r, c, v) in entries {
            assert!(r < n_rows && c < n_cols, "triplet out of bounds");
            if last == Some((c, r)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_of.push(c);
                last = Some((c, r));
            }
        }
        let mut col_ptr = vec![0usize; n_cols + 1];
        for &c in &col_of {
            col_ptr[c + 1] += 1;
        }
        for j in 0..n_cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        CscMatrix {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column `j` as parallel row-index and value slices.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let lo = self.col_ptr[j];
        let hi = self.col_ptr[j + 1];
        (&self.row_idx[lo..hi], &self.values[lo..hi])
    }

    /// out = A x.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        out.fill(0.0);
        for j in 0..self.n_cols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let (rows, vals) = self.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                out[r] += v * xj;
            }
        }
    }

    /// out = A' y.
    pub fn mul_vec_t(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n_rows);
        debug_assert_eq!(out.len(), self.n_cols);
        for j in 0..self.n_cols {
            let (rows, vals) = self.col(j);
            let mut acc = 0.0;
            for (&r, &v) in rows.iter().zip(vals) {
                acc += v * y[r];
            }
            out[j] = acc;
        }
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_cols]; self.n_rows];
        for j in 0..self.n_cols {
            let (rows, vals) = self.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                m[r][j] += v;
            }
        }
        m
    }
}

/// `min c'x  s.t.  A x = b,  x in K`, with K given by `cones` over contiguous
/// variable ranges in order. `var_names` is diagnostic only (empty or one
/// name per variable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub c: Vec<f64>,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<ConeBlock>,
    pub var_names: Vec<String>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ProblemError {
    #[error("cone blocks cover {covered} variables but c has {n}")]
    ConeDimMismatch { covered: usize, n: usize },
    #[error("A is {rows}x{cols} but c has {n} and b has {m} entries")]
    SystemDimMismatch {
        rows: usize,
        cols: usize,
        n: usize,
        m: usize,
    },
    #[error("second-order cone of dimension {0} (must be >= 2)")]
    SocTooSmall(usize),
    #[error("zero-dimensional {0} block")]
    EmptyBlock(&'static str),
    #[error("non-finite value in problem data")]
    NonFinite,
    #[error("variable name map has {names} entries for {n} variables")]
    NameMapMismatch { names: usize, n: usize },
    #[error("solver setting {0} must be positive")]
    BadSetting(&'static str),
}

impl ConicProblem {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let covered: usize = self.cones.iter().map(|c| c.dim()).sum();
        if covered != self.c.len() {
            return Err(ProblemError::ConeDimMismatch {
                covered,
                n: self.c.len(),
            });
        }
        for block in &self.cones {
            match *block {
                ConeBlock::Soc(d) if d < 2 => return Err(ProblemError::SocTooSmall(d)),
                ConeBlock::Free(0) => return Err(ProblemError::EmptyBlock("free")),
                ConeBlock::NonNeg(0) => return Err(ProblemError::EmptyBlock("nonneg")),
                _ => {}
            }
        }
        if self.a.n_rows != self.b.len()
            || self.a.n_cols != self.c.len()
            || self.a.col_ptr.len() != self.a.n_cols + 1
        {
            return Err(ProblemError::SystemDimMismatch {
                rows: self.a.n_rows,
                cols: self.a.n_cols,
                n: self.c.len(),
                m: self.b.len(),
            });
        }
        if !self.var_names.is_empty() && self.var_names.len() != self.c.len() {
            return Err(ProblemError::NameMapMismatch {
                names: self.var_names.len(),
                n: self.c.len(),
            });
        }
        let finite = self.c.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.a.values.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ProblemError::NonFinite);
        }
        Ok(())
    }

    /// Self-describing JSON dump for cross-checking against another solver:
    /// triplet-form A, explicit dimensions, cone list, names.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let mut triplets = Vec::with_capacity(self.a.nnz());
        for j in 0..self.a.n_cols {
            let (rows, vals) = self.a.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                triplets.push(serde_json::json!([r, j, v]));
            }
        }
        serde_json::json!({
            "format": "min c'x s.t. Ax = b, x in K",
            "n_vars": self.n_vars(),
            "n_rows": self.n_rows(),
            "c": self.c,
            "b": self.b,
            "a_triplets": triplets,
            "cones": self.cones,
            "var_names": self.var_names,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_gap: f64,
    pub max_iterations: usize,
    /// Static regularization added to the KKT diagonal (signed: positive on
    /// variable rows, negative on equality rows). Large enough to bound the
    /// element growth of a fill-reducing (value-blind) pivot order, which can
    /// eliminate an equality row while its diagonal is still at the bare
    /// regularization level; the bias it introduces is removed by iterative
    /// refinement against the unregularized system.
    pub static_reg: f64,
    /// Per-iteration trace on standard error.
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            tol_gap: 1e-8,
            max_iterations: 200,
            static_reg: 1e-8,
            verbose: false,
        }
    }
}

impl SolverSettings {
    /// Uniform tolerance on all three convergence measures.
    pub fn with_tol(tol: f64) -> Self {
        SolverSettings {
            tol_primal: tol,
            tol_dual: tol,
            tol_gap: tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if !(self.tol_primal > 0.0) {
            return Err(ProblemError::BadSetting("tol_primal"));
        }
        if !(self.tol_dual > 0.0) {
            return Err(ProblemError::BadSetting("tol_dual"));
        }
        if !(self.tol_gap > 0.0) {
            return Err(ProblemError::BadSetting("tol_gap"));
        }
        if self.max_iterations == 0 {
            return Err(ProblemError::BadSetting("max_iterations"));
        }
        if !(self.static_reg > 0.0) {
            return Err(ProblemError::BadSetting("static_reg"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// No primal-feasible point; `y`, `z` hold a Farkas certificate with
    /// `b'y = 1` and `A'y + z ~ 0`, `z in K*`.
    Infeasible,
    /// Dual infeasible (primal unbounded); `x` holds an improving ray with
    /// `c'x = -1`, `A x ~ 0`, `x in K`.
    Unbounded,
    MaxIter,
    NumericalFailure,
}

/// Solver output. For `Optimal` and `MaxIter`, `x`, `y`, `z` are the scaled
/// iterates (primal/dual estimates); for `Infeasible`/`Unbounded` they carry
/// the certificate described on [`SolveStatus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// c'x at the returned primal point.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub tau: f64,
    pub kappa: f64,
}

/// Incrementally assembles a [`ConicProblem`]. Variables get their final
/// indices immediately; adjacent free/nonnegative variables merge into one
/// block.
#[derive(Debug, Default)]
pub struct ProblemBuilder {
    cones: Vec<ConeBlock>,
    names: Vec<String>,
    cost: Vec<f64>,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn free(&mut self, name: impl Into<String>) -> usize {
        let idx = self.cost.len();
        self.cost.push(0.0);
        self.names.push(name.into());
        match self.cones.last_mut() {
            Some(ConeBlock::Free(d)) => *d += 1,
            _ => self.cones.push(ConeBlock::Free(1)),
        }
        idx
    }

    pub fn nonneg(&mut self, name: impl Into<String>) -> usize {
        let idx = self.cost.len();
        self.cost.push(0.0);
        self.names.push(name.into());
        match self.cones.last_mut() {
            Some(ConeBlock::NonNeg(d)) => *d += 1,
            _ => self.cones.push(ConeBlock::NonNeg(1)),
        }
        idx
    }

    /// Adds a second-order cone block; returns the index range of its
    /// variables (first = norm bound).
    pub fn soc(&mut self, name_prefix: &str, dim: usize) -> std::ops::Range<usize> {
        assert!(dim >= 2, "SOC dimension must be >= 2");
        let start = self.cost.len();
        for k in 0..dim {
            self.cost.push(0.0);
            self.names.push(format!("{name_prefix}[{k}]"));
        }
        self.cones.push(ConeBlock::Soc(dim));
        start..start + dim
    }

    /// Adds `coeff` to the objective coefficient of `var`.
    pub fn add_cost(&mut self, var: usize, coeff: f64) {
        self.cost[var] += coeff;
    }

    /// Adds one equality row `sum(coeff * var) = rhs`; returns its index.
    /// Repeated variables within one row accumulate.
    pub fn row(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.rhs.len();
        for &(var, coeff) in terms {
            debug_assert!(var < self.cost.len());
            if coeff != 0.0 {
                self.triplets.push((r, var, coeff));
            }
        }
        self.rhs.push(rhs);
        r
    }

    /// Adds `coeff * var` to an existing row.
    pub fn add_to_row(&mut self, row: usize, var: usize, coeff: f64) {
        debug_assert!(row < self.rhs.len() && var < self.cost.len());
        if coeff != 0.0 {
            self.triplets.push((row, var, coeff));
        }
    }

    /// Adds `delta` to an existing row's right-hand side.
    pub fn add_to_rhs(&mut self, row: usize, delta: f64) {
        self.rhs[row] += delta;
    }

    pub fn build(self) -> ConicProblem {
        let n = self.cost.len();
        let m = self.rhs.len();
        ConicProblem {
            c: self.cost,
            a: CscMatrix::from_triplets(m, n, self.triplets),
            b: self.rhs,
            cones: self.cones,
            var_names: self.names,
        }
    }
}
