//! Dense primal active-set solver for convex quadratic programs
//!
//! ```text
//!     minimize    ½ xᵀ P x + qᵀ x
//!     subject to  aⱼᵀ x = bⱼ      (equality rows)
//!                 aⱼᵀ x ≥ bⱼ      (inequality rows)
//!                 lo ≤ x ≤ hi
//! ```
//!
//! `P` only has to be positive semidefinite. When the reduced Hessian on the
//! current working set is singular, the solver either follows a
//! zero-curvature descent direction to the next blocking constraint or takes
//! the minimum-norm Newton step. Simple bounds are handled by fixing
//! variables, so the null-space work scales with the number of free
//! variables. A feasible starting point is required.
//!
//! Ties in the ratio test and in the choice of constraint to release are
//! broken by index (bounds before rows), which makes the iterate sequence
//! deterministic.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::OptimizeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LinearRow {
    pub coeffs: DVector<f64>,
    pub kind: RowKind,
    pub rhs: f64,
}

impl LinearRow {
    pub fn eq(coeffs: DVector<f64>, rhs: f64) -> Self {
        Self { coeffs, kind: RowKind::Eq, rhs }
    }

    pub fn ge(coeffs: DVector<f64>, rhs: f64) -> Self {
        Self { coeffs, kind: RowKind::Ge, rhs }
    }
}

#[derive(Debug, Clone)]
pub struct QuadProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub rows: Vec<LinearRow>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub max_iterations: usize,
    /// Largest constraint violation accepted for the starting point.
    pub feasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            feasibility_tol: 1e-9,
        }
    }
}

/// Optimal point with Lagrange multipliers in the convention
/// `P x + q = Σⱼ λⱼ aⱼ + ν`, where `ν` is nonzero only on variables held at a
/// bound (`ν ≥ 0` at `lo`, `ν ≤ 0` at `hi`) and `λⱼ ≥ 0` for inequality rows.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub row_multipliers: DVector<f64>,
    pub bound_multipliers: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundState {
    Free,
    Lower,
    Upper,
}

enum Step {
    Newton(DVector<f64>),
    Ray(DVector<f64>),
}

impl QuadProgram {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    fn validate(&self) -> Result<(), OptimizeError> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) || self.lower.len() != n || self.upper.len() != n {
            return Err(OptimizeError::Dimension(format!(
                "hessian {:?}, {} linear terms, bounds {}/{}",
                self.hessian.shape(),
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        if let Some(r) = self.rows.iter().find(|r| r.coeffs.len() != n) {
            return Err(OptimizeError::Dimension(format!(
                "row with {} coefficients for {} variables",
                r.coeffs.len(),
                n
            )));
        }
        if (0..n).any(|i| self.lower[i] > self.upper[i]) {
            return Err(OptimizeError::Infeasible("lower bound above upper bound".into()));
        }
        Ok(())
    }

    /// Solves the program starting from the feasible point `start`.
    pub fn solve(&self, start: &DVector<f64>, settings: &QpSettings) -> Result<QpSolution, OptimizeError> {
        self.validate()?;
        ActiveSet::new(self, start, settings)?.run()
    }
}

struct ActiveSet<'a> {
    qp: &'a QuadProgram,
    settings: &'a QpSettings,
    x: DVector<f64>,
    state: Vec<BoundState>,
    /// Working rows in insertion order; equality rows come first.
    active: Vec<usize>,
    /// Absolute tolerance on reduced gradients and multipliers.
    grad_tol: f64,
}

impl<'a> ActiveSet<'a> {
    fn new(qp: &'a QuadProgram, start: &DVector<f64>, settings: &'a QpSettings) -> Result<Self, OptimizeError> {
        let n = qp.dim();
        if start.len() != n {
            return Err(OptimizeError::Dimension(format!(
                "start has {} entries for {} variables",
                start.len(),
                n
            )));
        }
        let tol = settings.feasibility_tol;
        let mut x = start.clone();
        for i in 0..n {
            if x[i] < qp.lower[i] - tol || x[i] > qp.upper[i] + tol {
                return Err(OptimizeError::Infeasible(format!(
                    "start violates bounds of variable {i}"
                )));
            }
            x[i] = x[i].clamp(qp.lower[i], qp.upper[i]);
        }
        for (j, row) in qp.rows.iter().enumerate() {
            let slack = row.coeffs.dot(&x) - row.rhs;
            let bad = match row.kind {
                RowKind::Eq => slack.abs() > tol,
                RowKind::Ge => slack < -tol,
            };
            if bad {
                return Err(OptimizeError::Infeasible(format!(
                    "start violates row {j} by {slack:e}"
                )));
            }
        }

        let scale = qp
            .hessian
            .iter()
            .chain(qp.linear.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut solver = Self {
            qp,
            settings,
            x,
            state: vec![BoundState::Free; n],
            active: Vec::new(),
            grad_tol: 1e-12 * scale,
        };

        solver.active = (0..qp.rows.len())
            .filter(|&j| qp.rows[j].kind == RowKind::Eq)
            .collect();
        if !solver.rows_independent(&solver.active, &solver.free_indices()) {
            return Err(OptimizeError::Infeasible("equality rows are linearly dependent".into()));
        }
        for i in 0..n {
            let at = if (solver.x[i] - qp.lower[i]).abs() <= tol {
                BoundState::Lower
            } else if (solver.x[i] - qp.upper[i]).abs() <= tol {
                BoundState::Upper
            } else {
                continue;
            };
            solver.state[i] = at;
            if solver.rows_independent(&solver.active, &solver.free_indices()) {
                solver.x[i] = if at == BoundState::Lower { qp.lower[i] } else { qp.upper[i] };
            } else {
                solver.state[i] = BoundState::Free;
            }
        }
        for j in 0..qp.rows.len() {
            let row = &qp.rows[j];
            if row.kind == RowKind::Ge && (row.coeffs.dot(&solver.x) - row.rhs).abs() <= tol {
                let mut trial = solver.active.clone();
                trial.push(j);
                if solver.rows_independent(&trial, &solver.free_indices()) {
                    solver.active = trial;
                }
            }
        }
        Ok(solver)
    }

    fn free_indices(&self) -> Vec<usize> {
        (0..self.state.len())
            .filter(|&i| self.state[i] == BoundState::Free)
            .collect()
    }

    /// Working-row matrix restricted to the free variables.
    fn restricted_rows(&self, rows: &[usize], free: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), free.len(), |r, c| self.qp.rows[rows[r]].coeffs[free[c]])
    }

    fn rows_independent(&self, rows: &[usize], free: &[usize]) -> bool {
        if rows.is_empty() {
            return true;
        }
        if rows.len() > free.len() {
            return false;
        }
        let a = self.restricted_rows(rows, free);
        let gram = &a * a.transpose();
        let max_diag = gram.diagonal().max();
        if max_diag <= 0.0 {
            return false;
        }
        match Cholesky::new(gram) {
            Some(ch) => {
                let l = ch.l();
                (0..rows.len()).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * max_diag)
            }
            None => false,
        }
    }

    fn gradient(&self) -> DVector<f64> {
        &self.qp.hessian * &self.x + &self.qp.linear
    }

    fn run(mut self) -> Result<QpSolution, OptimizeError> {
        let mut at_subspace_min = false;
        for iteration in 0..self.settings.max_iterations {
            let g = self.gradient();
            let free = self.free_indices();
            let step = if at_subspace_min {
                None
            } else {
                self.compute_step(&g, &free)
            };

            let Some(step) = step else {
                let (lambda, nu) = self.multipliers(&g, &free);
                match self.most_violated(&lambda, &nu) {
                    Some(Release::Row(pos)) => {
                        self.active.remove(pos);
                    }
                    Some(Release::Bound(i)) => self.state[i] = BoundState::Free,
                    None => {
                        let mut row_mult = DVector::zeros(self.qp.rows.len());
                        for (k, &j) in self.active.iter().enumerate() {
                            row_mult[j] = lambda[k];
                        }
                        return Ok(QpSolution {
                            objective: self.qp.objective(&self.x),
                            x: self.x,
                            row_multipliers: row_mult,
                            bound_multipliers: nu,
                            iterations: iteration,
                        });
                    }
                }
                at_subspace_min = false;
                continue;
            };

            let (p, max_step) = match step {
                Step::Newton(p) => (p, 1.0),
                Step::Ray(p) => (p, f64::INFINITY),
            };
            let (alpha, blocking) = self.ratio_test(&p, &free);
            let alpha = alpha.min(max_step);
            if !alpha.is_finite() {
                return Err(OptimizeError::Unbounded);
            }
            self.x.axpy(alpha, &p, 1.0);
            match blocking {
                Some(block) if alpha < max_step || max_step.is_infinite() => {
                    match block {
                        Block::Lower(i) => {
                            self.state[i] = BoundState::Lower;
                            self.x[i] = self.qp.lower[i];
                        }
                        Block::Upper(i) => {
                            self.state[i] = BoundState::Upper;
                            self.x[i] = self.qp.upper[i];
                        }
                        Block::Row(j) => self.active.push(j),
                    }
                    at_subspace_min = false;
                }
                _ => at_subspace_min = true,
            }
        }
        Err(OptimizeError::NonConvergence(self.settings.max_iterations))
    }

    /// Descent direction on the current working set, or `None` when the
    /// iterate already minimises the objective over it.
    fn compute_step(&self, g: &DVector<f64>, free: &[usize]) -> Option<Step> {
        let k = free.len();
        let m = self.active.len();
        if k <= m {
            return None;
        }
        if let Some(step) = self.range_space_step(g, free) {
            return step;
        }
        let z = self.null_space(free);
        let g_free = DVector::from_iterator(k, free.iter().map(|&i| g[i]));
        let reduced_grad = z.transpose() * &g_free;
        if reduced_grad.amax() <= self.grad_tol {
            return None;
        }
        let p_free = DMatrix::from_fn(k, k, |r, c| self.qp.hessian[(free[r], free[c])]);
        let reduced_hess = z.transpose() * &p_free * &z;
        let reduced_hess = (&reduced_hess + reduced_hess.transpose()) * 0.5;
        let max_diag = reduced_hess.diagonal().amax();

        let direction = match Cholesky::new(reduced_hess.clone()) {
            Some(ch)
                if {
                    let l = ch.l();
                    (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > 1e-11 * max_diag)
                } =>
            {
                Step::Newton(-ch.solve(&reduced_grad))
            }
            _ => {
                let eig = SymmetricEigen::new(reduced_hess);
                let lam_max = eig.eigenvalues.amax();
                let cutoff = 1e-11 * lam_max.max(self.grad_tol);
                let mut ray = DVector::zeros(reduced_grad.len());
                let mut newton = DVector::zeros(reduced_grad.len());
                for (j, &lam) in eig.eigenvalues.iter().enumerate() {
                    let v = eig.eigenvectors.column(j);
                    let c = v.dot(&reduced_grad);
                    if lam <= cutoff {
                        ray.axpy(-c, &v, 1.0);
                    } else {
                        newton.axpy(-c / lam, &v, 1.0);
                    }
                }
                if ray.amax() > self.grad_tol {
                    Step::Ray(ray)
                } else {
                    Step::Newton(newton)
                }
            }
        };
        let lift = |pz: DVector<f64>| {
            let p_f = &z * pz;
            let mut p = DVector::zeros(self.x.len());
            for (c, &i) in free.iter().enumerate() {
                p[i] = p_f[c];
            }
            p
        };
        Some(match direction {
            Step::Newton(pz) => Step::Newton(lift(pz)),
            Step::Ray(pz) => Step::Ray(lift(pz)),
        })
    }

    /// Newton step from the Schur complement of the KKT system when the
    /// free block of the Hessian is well-conditioned positive definite;
    /// `None` defers to the null-space method.
    fn range_space_step(&self, g: &DVector<f64>, free: &[usize]) -> Option<Option<Step>> {
        let k = free.len();
        let p_free = DMatrix::from_fn(k, k, |r, c| self.qp.hessian[(free[r], free[c])]);
        let max_diag = p_free.diagonal().amax();
        let ch = Cholesky::new(p_free.clone())?;
        let l = ch.l_dirty();
        if !(0..k).all(|i| l[(i, i)] * l[(i, i)] > 1e-9 * max_diag) {
            return None;
        }
        let g_free = DVector::from_iterator(k, free.iter().map(|&i| g[i]));
        let h = ch.solve(&g_free);
        let p_f = if self.active.is_empty() {
            -h
        } else {
            let a = self.restricted_rows(&self.active, free);
            let y = ch.solve(&a.transpose());
            let schur = &a * &y;
            let lambda = Cholesky::new(schur)?.solve(&(&a * &h));
            &y * lambda - h
        };
        // `P p = Aᵀλ − g`: a vanishing step means the reduced gradient vanishes.
        let residual = p_free * &p_f;
        if residual.amax() <= self.grad_tol {
            return Some(None);
        }
        let mut p = DVector::zeros(self.x.len());
        for (c, &i) in free.iter().enumerate() {
            p[i] = p_f[c];
        }
        Some(Some(Step::Newton(p)))
    }

    /// Orthonormal basis of `{d : A_W d = 0}` over the free variables,
    /// taken from the trailing columns of a full QR factorisation of `A_Wᵀ`.
    fn null_space(&self, free: &[usize]) -> DMatrix<f64> {
        let k = free.len();
        let m = self.active.len();
        if m == 0 {
            return DMatrix::identity(k, k);
        }
        let at = self.restricted_rows(&self.active, free).transpose();
        let mut padded = DMatrix::zeros(k, k);
        padded.columns_mut(0, m).copy_from(&at);
        let q = padded.qr().q();
        q.columns(m, k - m).into_owned()
    }

    fn ratio_test(&self, p: &DVector<f64>, free: &[usize]) -> (f64, Option<Block>) {
        let pmax = p.amax();
        let tiny = 1e-14 * pmax;
        let mut best = f64::INFINITY;
        let mut block = None;
        for &i in free {
            let (limit, which) = if p[i] < -tiny && self.qp.lower[i].is_finite() {
                ((self.qp.lower[i] - self.x[i]) / p[i], Block::Lower(i))
            } else if p[i] > tiny && self.qp.upper[i].is_finite() {
                ((self.qp.upper[i] - self.x[i]) / p[i], Block::Upper(i))
            } else {
                continue;
            };
            let limit = limit.max(0.0);
            if limit < best {
                best = limit;
                block = Some(which);
            }
        }
        for (j, row) in self.qp.rows.iter().enumerate() {
            if row.kind != RowKind::Ge || self.active.contains(&j) {
                continue;
            }
            let slope = row.coeffs.dot(p);
            if slope < -1e-14 * row.coeffs.amax() * pmax {
                let limit = ((row.rhs - row.coeffs.dot(&self.x)) / slope).max(0.0);
                if limit < best {
                    best = limit;
                    block = Some(Block::Row(j));
                }
            }
        }
        (best, block)
    }

    /// Least-squares multipliers for the working rows, then bound
    /// multipliers as the remaining gradient on fixed variables.
    fn multipliers(&self, g: &DVector<f64>, free: &[usize]) -> (DVector<f64>, DVector<f64>) {
        let m = self.active.len();
        let lambda = if m == 0 {
            DVector::zeros(0)
        } else {
            let a = self.restricted_rows(&self.active, free);
            let g_free = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
            let gram = &a * a.transpose();
            let rhs = &a * g_free;
            match Cholesky::new(gram.clone()) {
                Some(ch) => ch.solve(&rhs),
                None => gram
                    .pseudo_inverse(1e-14)
                    .map(|pinv| pinv * rhs)
                    .unwrap_or_else(|_| DVector::zeros(m)),
            }
        };
        let mut nu = DVector::zeros(self.x.len());
        for i in 0..self.x.len() {
            if self.state[i] == BoundState::Free {
                continue;
            }
            let mut v = g[i];
            for (k, &j) in self.active.iter().enumerate() {
                v -= lambda[k] * self.qp.rows[j].coeffs[i];
            }
            nu[i] = v;
        }
        (lambda, nu)
    }

    fn most_violated(&self, lambda: &DVector<f64>, nu: &DVector<f64>) -> Option<Release> {
        let mut worst = -self.grad_tol;
        let mut pick = None;
        for i in 0..nu.len() {
            if self.qp.lower[i] == self.qp.upper[i] {
                continue;
            }
            let signed = match self.state[i] {
                BoundState::Free => continue,
                BoundState::Lower => nu[i],
                BoundState::Upper => -nu[i],
            };
            if signed < worst {
                worst = signed;
                pick = Some(Release::Bound(i));
            }
        }
        for (pos, &j) in self.active.iter().enumerate() {
            let row = &self.qp.rows[j];
            if row.kind != RowKind::Ge {
                continue;
            }
            let signed = lambda[pos] * row.coeffs.amax();
            if signed < worst {
                worst = signed;
                pick = Some(Release::Row(pos));
            }
        }
        pick
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Lower(usize),
    Upper(usize),
    Row(usize),
}

#[derive(Debug, Clone, Copy)]
enum Release {
    Row(usize),
    Bound(usize),
}
