//! Cardinality-constrained mean-variance optimisation.
//!
//! ```text
//!     minimize    wᵀ Q w
//!     subject to  μᵀ w ≥ ε,   Σ wᵢ = 1,   Σ zᵢ = K
//!                 l·zᵢ ≤ wᵢ ≤ u·zᵢ,       zᵢ ∈ {0, 1}
//! ```
//!
//! Solved exactly by branch-and-bound over `z`. Each node fixes some `zᵢ` to
//! one or zero and bounds the subtree with the continuous relaxation
//! `z ∈ [0, 1]`. Projecting `z` out of that relaxation leaves a box QP in `w`
//! plus `Σ_free wᵢ ≤ u·K'` (with `K'` the number of holdings still to pick)
//! and the capacity condition `Σ_free min(1, wᵢ/l) ≥ K'`. The box QP is solved
//! first; if its optimum meets the capacity condition it is the relaxation
//! optimum, otherwise the full relaxation with explicit `z` is solved.
//!
//! Search is depth-first (the `zⱼ = 1` child first) and restarts from the
//! open node with the best bound whenever a dive ends. Branching picks the
//! most fractional `zⱼ`, lowest index on ties.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::rc::Rc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::OptimizeError;
use crate::market_data::Moments;
use crate::optimizer::qp::{LinearRow, QpSettings, QuadProgram, RowKind};
use crate::optimizer::{
    epsilon_grid, greedy_max_return, solve_mv, BoundSpec, Frontier, FrontierPoint, Portfolio,
};

/// Weights at or below this magnitude count as not held.
pub const ZERO_TOL: f64 = 1e-12;
/// Largest number of subsets [`brute_force_cc`] will enumerate.
pub const BRUTE_FORCE_BUDGET: u128 = 1_000_000;
/// `zⱼ` within this distance of 0 or 1 is treated as integral.
const INTEGRALITY_TOL: f64 = 1e-9;

/// Number of held assets, `Σ wᵢ⁰` with `0⁰ = 0`.
pub fn cardinality_of(weights: &[f64]) -> usize {
    weights.iter().filter(|w| w.abs() > ZERO_TOL).count()
}

/// Exactly `k` holdings, each within `bounds` when held.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CardinalitySpec {
    pub k: usize,
    pub bounds: BoundSpec,
}

impl CardinalitySpec {
    pub fn new(k: usize, bounds: BoundSpec) -> Result<Self, OptimizeError> {
        if k == 0 {
            return Err(OptimizeError::Infeasible("cardinality must be at least 1".into()));
        }
        bounds.check_budget(k)?;
        Ok(Self { k, bounds })
    }

    fn check_universe(&self, n: usize) -> Result<(), OptimizeError> {
        if self.k > n {
            return Err(OptimizeError::Infeasible(format!(
                "cannot hold {} of {} assets",
                self.k, n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    NodeLimit,
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BnbStats {
    pub nodes_explored: u64,
    pub incumbent_updates: u64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CardinalitySolution {
    /// Weights over the whole universe; unselected assets hold zero.
    pub portfolio: Portfolio,
    pub z: Vec<bool>,
    pub epsilon: Option<f64>,
    pub variance: f64,
    pub expected_return: f64,
    /// `(incumbent − best bound) / incumbent`; zero up to the pruning
    /// tolerance when the search completed.
    pub optimality_gap: f64,
    pub status: SolveStatus,
    pub stats: BnbStats,
}

impl CardinalitySolution {
    pub fn selected(&self) -> Vec<&str> {
        self.z
            .iter()
            .zip(&self.portfolio.tickers)
            .filter(|(z, _)| **z)
            .map(|(_, t)| t.as_str())
            .collect()
    }

    /// `zᵢ = 0 ⇒ wᵢ = 0` and `zᵢ = 1 ⇒ l ≤ wᵢ ≤ u`.
    pub fn coupling_holds(&self, bounds: &BoundSpec) -> bool {
        self.z.iter().zip(&self.portfolio.weights).all(|(&z, &w)| {
            if z {
                w >= bounds.lower - 1e-9 && w <= bounds.upper + 1e-9
            } else {
                w == 0.0
            }
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BnbSettings {
    pub node_limit: u64,
    pub time_limit: Option<Duration>,
    /// Relative tolerance used to prune nodes against the incumbent.
    pub gap_tol: f64,
}

impl Default for BnbSettings {
    fn default() -> Self {
        Self {
            node_limit: 1_000_000,
            time_limit: None,
            gap_tol: 1e-9,
        }
    }
}

/// One processed node, as streamed to a node observer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeRecord {
    pub id: u64,
    pub parent: Option<u64>,
    pub depth: u32,
    pub fixed_one: Vec<usize>,
    pub fixed_zero: Vec<usize>,
    /// Relaxation objective, absent when the node was closed before solving.
    pub bound: Option<f64>,
    pub outcome: NodeOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeOutcome {
    Branched { on: usize, value: f64 },
    /// Relaxation optimum already integral.
    Integral,
    /// Every `z` fixed.
    Leaf,
    PrunedByBound { incumbent: f64 },
    /// No selection in the subtree reaches the target return.
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fix {
    Free,
    One,
    Zero,
}

#[derive(Debug, Clone)]
struct Node {
    id: u64,
    parent: Option<u64>,
    depth: u32,
    fix: Vec<Fix>,
    bound: f64,
    /// Parent's rounded selection, a candidate warm start.
    hint: Option<Vec<usize>>,
    /// Parent's relaxed weights over the full universe.
    relaxed: Option<Rc<Vec<f64>>>,
}

/// Min-heap entry on (bound, id).
struct Open(Node);

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .bound
            .total_cmp(&self.0.bound)
            .then(other.0.id.cmp(&self.0.id))
    }
}

struct Incumbent {
    value: f64,
    selection: Vec<usize>,
    weights: Vec<f64>,
}

fn target_tol(eps: f64) -> f64 {
    1e-12 * eps.abs().max(1.0)
}

/// Max return over selections containing `ones` plus `extra` more assets
/// from `free`: the best choice takes the highest-`μ` free assets.
fn best_selection(mu: &[f64], ones: &[usize], free: &[usize], extra: usize) -> Vec<usize> {
    let mut ranked = free.to_vec();
    ranked.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]).then(a.cmp(&b)));
    let mut sel: Vec<usize> = ones.iter().copied().chain(ranked.into_iter().take(extra)).collect();
    sel.sort_unstable();
    sel
}

fn selection_max_return(mu: &[f64], sel: &[usize], bounds: &BoundSpec) -> (f64, Vec<f64>) {
    let sub_mu: Vec<f64> = sel.iter().map(|&i| mu[i]).collect();
    let w = greedy_max_return(&sub_mu, bounds);
    let r = sub_mu.iter().zip(&w).map(|(m, w)| m * w).sum();
    (r, w)
}

fn solve_selection(
    moments: &Moments,
    bounds: &BoundSpec,
    epsilon: Option<f64>,
    sel: &[usize],
) -> Result<Option<(f64, Vec<f64>)>, OptimizeError> {
    if let Some(eps) = epsilon {
        let (r, _) = selection_max_return(moments.mu().as_slice(), sel, bounds);
        if r < eps - target_tol(eps) {
            return Ok(None);
        }
    }
    match solve_mv(&moments.subset(sel), bounds, epsilon) {
        Ok(s) => Ok(Some((s.variance, s.portfolio.weights))),
        Err(OptimizeError::InfeasibleTarget { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

struct Relaxation {
    value: f64,
    z: Vec<f64>,
    w: Vec<f64>,
}

struct Search<'a> {
    moments: &'a Moments,
    spec: &'a CardinalitySpec,
    epsilon: Option<f64>,
    settings: &'a BnbSettings,
    qp_settings: QpSettings,
    incumbent: Option<Incumbent>,
    /// Objective of every selection solved so far, `None` if infeasible.
    tried: HashMap<Vec<usize>, Option<(f64, Vec<f64>)>>,
    stats: BnbStats,
    /// Smallest bound among subtrees closed by the incumbent test.
    pruned_bound: f64,
}

impl<'a> Search<'a> {
    fn prune_tol(&self, inc: f64) -> f64 {
        self.settings.gap_tol * inc.abs().max(1e-12)
    }

    fn dominated(&self, bound: f64) -> Option<f64> {
        let inc = self.incumbent.as_ref()?.value;
        (bound >= inc - self.prune_tol(inc)).then_some(inc)
    }

    fn offer(&mut self, sel: Vec<usize>) -> Result<Option<f64>, OptimizeError> {
        if let Some(known) = self.tried.get(&sel) {
            return Ok(known.as_ref().map(|s| s.0));
        }
        let solved = solve_selection(self.moments, &self.spec.bounds, self.epsilon, &sel)?;
        self.tried.insert(sel.clone(), solved.clone());
        let value = solved.as_ref().map(|s| s.0);
        if let Some((value, weights)) = solved {
            if self.incumbent.as_ref().is_none_or(|inc| value < inc.value) {
                self.incumbent = Some(Incumbent {
                    value,
                    selection: sel,
                    weights,
                });
                self.stats.incumbent_updates += 1;
            }
        }
        Ok(value)
    }

    /// Normalises the fixings; returns `(ones, free, remaining picks)` or
    /// `None` if the node cannot hold exactly `k` assets.
    fn presolve(&self, fix: &mut [Fix]) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        let ones = fix.iter().filter(|f| **f == Fix::One).count();
        let free = fix.iter().filter(|f| **f == Fix::Free).count();
        if ones > self.spec.k || ones + free < self.spec.k {
            return None;
        }
        let extra = self.spec.k - ones;
        if extra == 0 || extra == free {
            let to = if extra == 0 { Fix::Zero } else { Fix::One };
            fix.iter_mut().filter(|f| **f == Fix::Free).for_each(|f| *f = to);
        }
        let pick = |want: Fix| (0..fix.len()).filter(|&i| fix[i] == want).collect::<Vec<_>>();
        let (ones, free) = (pick(Fix::One), pick(Fix::Free));
        let extra = self.spec.k - ones.len();
        Some((ones, free, extra))
    }

    /// A feasible starting selection for the node relaxation: the incumbent
    /// or the parent's rounded selection when the node admits them, else
    /// the node's max-return selection.
    fn warm_start(&self, fix: &[Fix], hint: Option<&[usize]>, greedy: Vec<usize>) -> (Vec<usize>, Vec<f64>) {
        let admits = |sel: &[usize]| {
            sel.iter().all(|&i| fix[i] != Fix::Zero)
                && (0..fix.len()).all(|i| fix[i] != Fix::One || sel.binary_search(&i).is_ok())
        };
        let incumbent = self.incumbent.as_ref().map(|inc| (inc.selection.as_slice(), &inc.weights));
        let hinted = hint.and_then(|h| self.tried.get(h)?.as_ref().map(|s| (h, &s.1)));
        for (sel, w) in incumbent.into_iter().chain(hinted) {
            if admits(sel) {
                return (sel.to_vec(), w.clone());
            }
        }
        let (_, w) = selection_max_return(self.moments.mu().as_slice(), &greedy, &self.spec.bounds);
        (greedy, w)
    }

    fn relax(
        &self,
        ones: &[usize],
        free: &[usize],
        extra: usize,
        start_sel: &[usize],
        start_w: &[f64],
        parent: Option<&[f64]>,
    ) -> Result<Relaxation, OptimizeError> {
        let b = self.spec.bounds;
        let vars: Vec<usize> = {
            let mut v: Vec<usize> = ones.iter().chain(free).copied().collect();
            v.sort_unstable();
            v
        };
        let p = vars.len();
        let sub = self.moments.subset(&vars);
        let is_free: Vec<bool> = vars.iter().map(|i| free.contains(i)).collect();

        let mut start = DVector::zeros(p);
        for (k, i) in start_sel.iter().enumerate() {
            let pos = vars.binary_search(i).expect("selection within node variables");
            start[pos] = start_w[k];
        }

        let mut rows = vec![LinearRow::eq(DVector::from_element(p, 1.0), 1.0)];
        if let Some(eps) = self.epsilon {
            rows.push(LinearRow::ge(sub.mu().clone(), eps));
        }
        if !ones.is_empty() {
            let coeffs = DVector::from_iterator(p, is_free.iter().map(|&f| if f { -1.0 } else { 0.0 }));
            rows.push(LinearRow::ge(coeffs, -b.upper * extra as f64));
        }
        let program = QuadProgram {
            hessian: sub.cov() * 2.0,
            linear: DVector::zeros(p),
            rows,
            lower: DVector::from_iterator(p, is_free.iter().map(|&f| if f { 0.0 } else { b.lower })),
            upper: DVector::from_element(p, b.upper),
        };
        let blended = match parent {
            Some(pw) => {
                let mut c = DVector::from_iterator(p, vars.iter().map(|&i| pw[i]));
                for (col, &f) in is_free.iter().enumerate() {
                    if !f {
                        c[col] = c[col].max(b.lower);
                    }
                }
                let total = c.sum();
                if total > 0.0 {
                    c /= total;
                    blend_toward(&program, &start, &c)
                } else {
                    start.clone()
                }
            }
            None => start.clone(),
        };
        let sol = program.solve(&blended, &self.qp_settings)?;

        let free_w: Vec<(usize, f64)> = (0..p).filter(|&c| is_free[c]).map(|c| (c, sol.x[c])).collect();
        if let Some(z_free) = recover_z(&free_w, &b, extra) {
            let mut z = vec![0.0; self.moments.len()];
            for &i in ones {
                z[i] = 1.0;
            }
            for ((c, _), zc) in free_w.iter().zip(z_free) {
                z[vars[*c]] = zc;
            }
            let mut w = vec![0.0; self.moments.len()];
            for (c, &i) in vars.iter().enumerate() {
                w[i] = sol.x[c];
            }
            return Ok(Relaxation { value: sol.objective, z, w });
        }
        self.relax_with_z(&vars, &is_free, &sub, extra, &start, start_sel)
    }

    /// Relaxation with explicit `z` variables, used when the projected
    /// problem's optimum violates the capacity condition.
    fn relax_with_z(
        &self,
        vars: &[usize],
        is_free: &[bool],
        sub: &Moments,
        extra: usize,
        start_w: &DVector<f64>,
        start_sel: &[usize],
    ) -> Result<Relaxation, OptimizeError> {
        let b = self.spec.bounds;
        let p = vars.len();
        let free_cols: Vec<usize> = (0..p).filter(|&c| is_free[c]).collect();
        let f = free_cols.len();
        let dim = p + f;

        let mut hessian = DMatrix::zeros(dim, dim);
        hessian.view_mut((0, 0), (p, p)).copy_from(&(sub.cov() * 2.0));
        let mut rows = Vec::new();
        let mut budget = DVector::zeros(dim);
        budget.rows_mut(0, p).fill(1.0);
        rows.push(LinearRow::eq(budget, 1.0));
        let mut picks = DVector::zeros(dim);
        picks.rows_mut(p, f).fill(1.0);
        rows.push(LinearRow::eq(picks, extra as f64));
        if let Some(eps) = self.epsilon {
            let mut ret = DVector::zeros(dim);
            ret.rows_mut(0, p).copy_from(sub.mu());
            rows.push(LinearRow::ge(ret, eps));
        }
        for (k, &c) in free_cols.iter().enumerate() {
            let mut lo = DVector::zeros(dim);
            lo[c] = 1.0;
            lo[p + k] = -b.lower;
            rows.push(LinearRow::ge(lo, 0.0));
            let mut hi = DVector::zeros(dim);
            hi[c] = -1.0;
            hi[p + k] = b.upper;
            rows.push(LinearRow::ge(hi, 0.0));
        }
        let mut lower = DVector::zeros(dim);
        let mut upper = DVector::from_element(dim, 1.0);
        for c in 0..p {
            lower[c] = if is_free[c] { 0.0 } else { b.lower };
            upper[c] = b.upper;
        }
        let mut start = DVector::zeros(dim);
        start.rows_mut(0, p).copy_from(start_w);
        for (k, &c) in free_cols.iter().enumerate() {
            start[p + k] = if start_sel.binary_search(&vars[c]).is_ok() { 1.0 } else { 0.0 };
        }
        let program = QuadProgram {
            hessian,
            linear: DVector::zeros(dim),
            rows,
            lower,
            upper,
        };
        let sol = program.solve(&start, &self.qp_settings)?;
        let n = self.moments.len();
        let mut z = vec![0.0; n];
        let mut w = vec![0.0; n];
        for c in 0..p {
            w[vars[c]] = sol.x[c];
            if !is_free[c] {
                z[vars[c]] = 1.0;
            }
        }
        for (k, &c) in free_cols.iter().enumerate() {
            z[vars[c]] = sol.x[p + k].clamp(0.0, 1.0);
        }
        Ok(Relaxation {
            value: sol.objective,
            z,
            w,
        })
    }

    fn run(
        mut self,
        observer: &mut dyn FnMut(&NodeRecord),
    ) -> Result<CardinalitySolution, OptimizeError> {
        let started = Instant::now();
        let n = self.moments.len();
        let mu = self.moments.mu().as_slice().to_vec();
        let mut heap: BinaryHeap<Open> = BinaryHeap::new();
        let mut next = Some(Node {
            id: 0,
            parent: None,
            depth: 0,
            fix: vec![Fix::Free; n],
            bound: f64::NEG_INFINITY,
            hint: None,
            relaxed: None,
        });
        let mut next_id = 1u64;
        let mut status = SolveStatus::Optimal;

        loop {
            let Some(mut node) = next.take().or_else(|| heap.pop().map(|o| o.0)) else {
                break;
            };
            if self.stats.nodes_explored >= self.settings.node_limit {
                status = SolveStatus::NodeLimit;
                heap.push(Open(node));
                break;
            }
            if self.settings.time_limit.is_some_and(|t| started.elapsed() >= t) {
                status = SolveStatus::TimeLimit;
                heap.push(Open(node));
                break;
            }
            self.stats.nodes_explored += 1;

            let record = |node: &Node, fix: &[Fix], bound: Option<f64>, outcome: NodeOutcome| NodeRecord {
                id: node.id,
                parent: node.parent,
                depth: node.depth,
                fixed_one: (0..fix.len()).filter(|&i| fix[i] == Fix::One).collect(),
                fixed_zero: (0..fix.len()).filter(|&i| fix[i] == Fix::Zero).collect(),
                bound,
                outcome,
            };

            if let Some(inc) = self.dominated(node.bound) {
                self.pruned_bound = self.pruned_bound.min(node.bound);
                observer(&record(&node, &node.fix, None, NodeOutcome::PrunedByBound { incumbent: inc }));
                continue;
            }

            let mut fix = std::mem::take(&mut node.fix);
            let Some((ones, free, extra)) = self.presolve(&mut fix) else {
                observer(&record(&node, &fix, None, NodeOutcome::Infeasible));
                continue;
            };
            let greedy_sel = best_selection(&mu, &ones, &free, extra);
            if let Some(eps) = self.epsilon {
                let (r, _) = selection_max_return(&mu, &greedy_sel, &self.spec.bounds);
                if r < eps - target_tol(eps) {
                    observer(&record(&node, &fix, None, NodeOutcome::Infeasible));
                    continue;
                }
            }

            if free.is_empty() {
                let value = self.offer(ones)?;
                observer(&record(&node, &fix, value, NodeOutcome::Leaf));
                continue;
            }

            let (start_sel, start_w) = self.warm_start(&fix, node.hint.as_deref(), greedy_sel);
            let Relaxation { value: bound, z, w } =
                self.relax(&ones, &free, extra, &start_sel, &start_w, node.relaxed.as_deref().map(Vec::as_slice))?;

            // Rounding heuristic: the `extra` largest relaxed z among free assets.
            let mut ranked = free.clone();
            ranked.sort_by(|&a, &b| {
                z[b].total_cmp(&z[a]).then(w[b].total_cmp(&w[a])).then(a.cmp(&b))
            });
            let mut rounded: Vec<usize> = ones.iter().copied().chain(ranked.into_iter().take(extra)).collect();
            rounded.sort_unstable();

            let branch = free
                .iter()
                .map(|&i| (i, z[i].min(1.0 - z[i])))
                .filter(|&(_, frac)| frac > INTEGRALITY_TOL)
                .fold(None, |best: Option<(usize, f64)>, (i, frac)| match best {
                    Some((_, b)) if b >= frac => best,
                    _ => Some((i, frac)),
                });

            let Some((j, _)) = branch else {
                // Integral relaxation: its support is an optimal selection for this node.
                let sel: Vec<usize> = (0..n).filter(|&i| z[i] > 0.5).collect();
                self.offer(sel)?;
                observer(&record(&node, &fix, Some(bound), NodeOutcome::Integral));
                continue;
            };

            self.offer(rounded.clone())?;
            if let Some(inc) = self.dominated(bound) {
                self.pruned_bound = self.pruned_bound.min(bound);
                observer(&record(&node, &fix, Some(bound), NodeOutcome::PrunedByBound { incumbent: inc }));
                continue;
            }
            observer(&record(&node, &fix, Some(bound), NodeOutcome::Branched { on: j, value: z[j] }));

            let mut one = fix.clone();
            one[j] = Fix::One;
            let mut zero = fix;
            zero[j] = Fix::Zero;
            let relaxed = Rc::new(w);
            let child = |fix: Vec<Fix>, id: u64| Node {
                id,
                parent: Some(node.id),
                depth: node.depth + 1,
                fix,
                bound,
                hint: Some(rounded.clone()),
                relaxed: Some(Rc::clone(&relaxed)),
            };
            next = Some(child(one, next_id));
            heap.push(Open(child(zero, next_id + 1)));
            next_id += 2;
        }

        self.stats.wall_time = started.elapsed();
        let Some(inc) = self.incumbent.take() else {
            return match status {
                SolveStatus::Optimal => Err(OptimizeError::Infeasible(
                    "no selection of k assets reaches the target return".into(),
                )),
                _ => Err(OptimizeError::NodeBudgetExhausted(self.stats.nodes_explored)),
            };
        };
        let open_bound = heap.iter().map(|o| o.0.bound).fold(f64::INFINITY, f64::min);
        let lower = inc.value.min(self.pruned_bound).min(open_bound);
        let gap = ((inc.value - lower) / inc.value.abs().max(1e-12)).max(0.0);
        let mut sol = assemble(self.moments, self.epsilon, &inc.selection, &inc.weights, gap, status, self.stats)?;
        sol.variance = inc.value;
        Ok(sol)
    }
}

/// The point of the segment from the feasible `start` toward `target`
/// that is furthest along while still satisfying every constraint.
fn blend_toward(program: &QuadProgram, start: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
    let d = target - start;
    let mut alpha = 1.0f64;
    for i in 0..d.len() {
        if d[i] < 0.0 {
            alpha = alpha.min((program.lower[i] - start[i]) / d[i]);
        } else if d[i] > 0.0 {
            alpha = alpha.min((program.upper[i] - start[i]) / d[i]);
        }
    }
    for row in &program.rows {
        let slope = row.coeffs.dot(&d);
        match row.kind {
            RowKind::Eq if slope.abs() > 1e-12 => alpha = 0.0,
            RowKind::Ge if slope < 0.0 => alpha = alpha.min((row.coeffs.dot(start) - row.rhs) / -slope),
            _ => {}
        }
    }
    start + d * alpha.max(0.0)
}

/// Spreads `Σ z = extra` over the free assets within
/// `[wᵢ/u, min(1, wᵢ/l)]`, filling the largest weights first. `None` when
/// the capacity condition fails.
fn recover_z(free_w: &[(usize, f64)], bounds: &BoundSpec, extra: usize) -> Option<Vec<f64>> {
    let lo: Vec<f64> = free_w.iter().map(|&(_, w)| (w.max(0.0) / bounds.upper).min(1.0)).collect();
    let hi: Vec<f64> = free_w
        .iter()
        .map(|&(_, w)| {
            if bounds.lower > 0.0 {
                (w.max(0.0) / bounds.lower).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    let target = extra as f64;
    if hi.iter().sum::<f64>() < target - INTEGRALITY_TOL {
        return None;
    }
    let mut z = lo.clone();
    let mut need = target - lo.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..free_w.len()).collect();
    order.sort_by(|&a, &b| free_w[b].1.total_cmp(&free_w[a].1).then(a.cmp(&b)));
    for k in order {
        if need <= 0.0 {
            break;
        }
        let add = (hi[k] - z[k]).min(need);
        z[k] += add;
        need -= add;
    }
    Some(z)
}

fn assemble(
    moments: &Moments,
    epsilon: Option<f64>,
    selection: &[usize],
    sub_weights: &[f64],
    gap: f64,
    status: SolveStatus,
    stats: BnbStats,
) -> Result<CardinalitySolution, OptimizeError> {
    let n = moments.len();
    let mut weights = vec![0.0; n];
    let mut z = vec![false; n];
    for (k, &i) in selection.iter().enumerate() {
        weights[i] = sub_weights[k];
        z[i] = true;
    }
    let portfolio = Portfolio::new("Cardinality", moments.tickers().to_vec(), weights)?;
    Ok(CardinalitySolution {
        expected_return: moments.expected_return(&portfolio.weights),
        variance: moments.variance(&portfolio.weights),
        portfolio,
        z,
        epsilon,
        optimality_gap: gap,
        status,
        stats,
    })
}

/// Globally optimal `k`-asset portfolio for target `epsilon` (or minimum
/// variance when `None`), with default search settings.
pub fn solve_cc_qp(
    moments: &Moments,
    spec: &CardinalitySpec,
    epsilon: Option<f64>,
) -> Result<CardinalitySolution, OptimizeError> {
    solve_cc_qp_with(moments, spec, epsilon, &BnbSettings::default(), &mut |_| {})
}

/// [`solve_cc_qp`] with explicit settings and a per-node observer.
pub fn solve_cc_qp_with(
    moments: &Moments,
    spec: &CardinalitySpec,
    epsilon: Option<f64>,
    settings: &BnbSettings,
    observer: &mut dyn FnMut(&NodeRecord),
) -> Result<CardinalitySolution, OptimizeError> {
    spec.check_universe(moments.len())?;
    if let Some(eps) = epsilon {
        let mu = moments.mu().as_slice();
        let all: Vec<usize> = (0..mu.len()).collect();
        let sel = best_selection(mu, &[], &all, spec.k);
        let (r, _) = selection_max_return(mu, &sel, &spec.bounds);
        if eps > r + target_tol(eps) {
            return Err(OptimizeError::InfeasibleTarget {
                target: eps,
                max_achievable: r,
            });
        }
    }
    Search {
        moments,
        spec,
        epsilon,
        settings,
        qp_settings: QpSettings::default(),
        incumbent: None,
        tried: HashMap::new(),
        stats: BnbStats::default(),
        pruned_bound: f64::INFINITY,
    }
    .run(observer)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact reference answer by enumerating every `k`-subset and solving the
/// bounded program on each.
pub fn brute_force_cc(
    moments: &Moments,
    spec: &CardinalitySpec,
    epsilon: Option<f64>,
) -> Result<CardinalitySolution, OptimizeError> {
    let n = moments.len();
    spec.check_universe(n)?;
    let subsets = binomial(n, spec.k);
    if subsets > BRUTE_FORCE_BUDGET {
        return Err(OptimizeError::CombinatorialBudget {
            subsets,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let started = Instant::now();
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    let mut solved = 0u64;
    let mut sel: Vec<usize> = (0..spec.k).collect();
    loop {
        if let Some((v, w)) = solve_selection(moments, &spec.bounds, epsilon, &sel)? {
            solved += 1;
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, sel.clone(), w));
            }
        }
        // Next combination in lexicographic order.
        let Some(pos) = (0..spec.k).rev().find(|&i| sel[i] < n - spec.k + i) else {
            break;
        };
        sel[pos] += 1;
        for i in pos + 1..spec.k {
            sel[i] = sel[i - 1] + 1;
        }
    }
    let (value, selection, weights) = best.ok_or_else(|| {
        OptimizeError::Infeasible("no selection of k assets reaches the target return".into())
    })?;
    let stats = BnbStats {
        nodes_explored: solved.max(1),
        incumbent_updates: 0,
        wall_time: started.elapsed(),
    };
    let mut sol = assemble(moments, epsilon, &selection, &weights, 0.0, SolveStatus::Optimal, stats)?;
    sol.variance = value;
    Ok(sol)
}

/// Maximum-return `k`-asset portfolio: the `k` highest-`μ` assets with
/// greedy weights.
pub fn cc_max_return(moments: &Moments, spec: &CardinalitySpec) -> Result<CardinalitySolution, OptimizeError> {
    spec.check_universe(moments.len())?;
    let mu = moments.mu().as_slice();
    let all: Vec<usize> = (0..mu.len()).collect();
    let sel = best_selection(mu, &[], &all, spec.k);
    let (_, w) = selection_max_return(mu, &sel, &spec.bounds);
    assemble(moments, None, &sel, &w, 0.0, SolveStatus::Optimal, BnbStats {
        nodes_explored: 1,
        ..Default::default()
    })
}

/// Frontier points of the cardinality-constrained problem together with the
/// full solutions behind them.
#[derive(Debug, Clone)]
pub struct CcFrontier {
    pub frontier: Frontier,
    pub solutions: Vec<CardinalitySolution>,
    pub min_variance: CardinalitySolution,
    pub max_return: CardinalitySolution,
}

/// Sweeps `num_points` targets between the cardinality-constrained
/// minimum-variance and maximum-return portfolios.
pub fn cc_frontier(moments: &Moments, spec: &CardinalitySpec, num_points: usize) -> Result<Frontier, OptimizeError> {
    cc_frontier_with(moments, spec, num_points, &BnbSettings::default()).map(|f| f.frontier)
}

pub fn cc_frontier_with(
    moments: &Moments,
    spec: &CardinalitySpec,
    num_points: usize,
    settings: &BnbSettings,
) -> Result<CcFrontier, OptimizeError> {
    if num_points < 2 {
        return Err(OptimizeError::TooFewPoints(num_points));
    }
    let min_variance = solve_cc_qp_with(moments, spec, None, settings, &mut |_| {})?;
    let max_return = cc_max_return(moments, spec)?;
    let r_hi = max_return.expected_return;
    let r_lo = min_variance.expected_return.min(r_hi);
    let grid = epsilon_grid(r_lo, r_hi, num_points);
    let solutions = grid
        .par_iter()
        .enumerate()
        .map(|(index, &eps)| {
            solve_cc_qp_with(moments, spec, Some(eps), settings, &mut |_| {}).map_err(|e| {
                OptimizeError::FrontierPoint {
                    index,
                    epsilon: eps,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    for s in &solutions {
        if s.status != SolveStatus::Optimal {
            log::warn!(
                "cardinality frontier point eps={:?} stopped early ({:?}), gap {:.3e}",
                s.epsilon,
                s.status,
                s.optimality_gap
            );
        }
    }
    let points = grid
        .iter()
        .zip(&solutions)
        .map(|(&eps, s)| FrontierPoint {
            epsilon: eps,
            portfolio: s.portfolio.clone(),
            achieved_return: s.expected_return,
            variance: s.variance,
            gap: Some(s.optimality_gap),
        })
        .collect();
    Ok(CcFrontier {
        frontier: Frontier {
            points,
            bounds: spec.bounds,
            tickers: moments.tickers().to_vec(),
        },
        solutions,
        min_variance,
        max_return,
    })
}
