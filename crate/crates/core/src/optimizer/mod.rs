//! Bound-constrained mean-variance optimisation.
//!
//! ```text
//!     minimize    wᵀ Q w
//!     subject to  μᵀ w ≥ ε
//!                 Σ wᵢ = 1
//!                 l ≤ wᵢ ≤ u
//! ```
//!
//! Sweeping `ε` between the minimum-variance and maximum-return portfolios
//! traces the efficient frontier; the max-Sharpe portfolio is picked from the
//! swept grid with a zero risk-free rate.

pub mod qp;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::OptimizeError;
use crate::market_data::Moments;
use qp::{LinearRow, QpSettings, QuadProgram};

/// Default number of frontier points.
pub const DEFAULT_FRONTIER_POINTS: usize = 100;
/// Tolerance on `Σw = 1` and on the box when checking a portfolio.
pub const WEIGHT_TOL: f64 = 1e-9;

/// Uniform per-asset weight bounds `l ≤ wᵢ ≤ u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub lower: f64,
    pub upper: f64,
}

impl BoundSpec {
    pub fn new(lower: f64, upper: f64) -> Result<Self, OptimizeError> {
        if !(lower.is_finite() && upper.is_finite()) || lower < 0.0 || lower > upper || upper > 1.0 {
            return Err(OptimizeError::InvalidBounds(format!(
                "need 0 <= l <= u <= 1, got l = {lower}, u = {upper}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// No-short-sale bounds `0 ≤ w ≤ 1`.
    pub fn long_only() -> Self {
        Self { lower: 0.0, upper: 1.0 }
    }

    /// Checks `n·l ≤ 1 ≤ n·u`.
    pub fn check_budget(&self, n: usize) -> Result<(), OptimizeError> {
        let n_f = n as f64;
        if n == 0 {
            return Err(OptimizeError::EmptyUniverse);
        }
        if n_f * self.lower > 1.0 + 1e-12 || n_f * self.upper < 1.0 - 1e-12 {
            return Err(OptimizeError::InvalidBounds(format!(
                "{n} assets with l = {}, u = {} cannot sum to one",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// Default bounds for a universe of `n` assets: roughly half and double the
/// equal weight. The three standard universe sizes use fixed values; other
/// sizes round `1/(2n)` and `2/n` to two decimals and widen them if the
/// rounding breaks budget feasibility.
pub fn bounds_for_universe(n: usize) -> Result<BoundSpec, OptimizeError> {
    match n {
        0 => Err(OptimizeError::EmptyUniverse),
        15 => BoundSpec::new(0.03, 0.13),
        30 => BoundSpec::new(0.02, 0.07),
        45 => BoundSpec::new(0.01, 0.05),
        _ => {
            let n_f = n as f64;
            let round2 = |x: f64| (x * 100.0).round() / 100.0;
            let mut lower = round2(0.5 / n_f);
            let mut upper = round2(2.0 / n_f).min(1.0);
            if n_f * upper < 1.0 {
                upper = ((100.0 / n_f).ceil() / 100.0).min(1.0);
            }
            if n_f * lower > 1.0 {
                lower = (100.0 / n_f).floor() / 100.0;
            }
            BoundSpec::new(lower, upper)
        }
    }
}

/// A labelled long-only weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub label: String,
    pub tickers: Vec<String>,
    pub weights: Vec<f64>,
}

impl Portfolio {
    pub fn new(label: impl Into<String>, tickers: Vec<String>, weights: Vec<f64>) -> Result<Self, OptimizeError> {
        if tickers.len() != weights.len() {
            return Err(OptimizeError::Dimension(format!(
                "{} tickers, {} weights",
                tickers.len(),
                weights.len()
            )));
        }
        if tickers.is_empty() {
            return Err(OptimizeError::EmptyUniverse);
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL || weights.iter().any(|w| !w.is_finite()) {
            return Err(OptimizeError::InvalidBounds(format!("weights sum to {sum}")));
        }
        Ok(Self {
            label: label.into(),
            tickers,
            weights,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn weight_of(&self, ticker: &str) -> Option<f64> {
        self.tickers
            .iter()
            .position(|t| t == ticker)
            .map(|i| self.weights[i])
    }

    pub fn respects(&self, bounds: &BoundSpec) -> bool {
        self.weights
            .iter()
            .all(|&w| w >= bounds.lower - WEIGHT_TOL && w <= bounds.upper + WEIGHT_TOL)
    }
}

/// Lagrange multipliers of a mean-variance solve, with
/// `2Qw = λ_ret μ + λ_budget 𝟙 + ν` at the optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    pub budget: f64,
    /// Zero when the problem has no return constraint.
    pub target_return: f64,
    pub bounds: Vec<f64>,
}

/// Infinity-norm KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Output of [`solve_qp`] and [`min_variance`].
#[derive(Debug, Clone, PartialEq)]
pub struct MvSolution {
    pub portfolio: Portfolio,
    pub variance: f64,
    pub expected_return: f64,
    pub certificate: KktCertificate,
    pub residuals: KktResiduals,
    pub iterations: usize,
}

/// Recomputes the KKT residuals of `weights` for the problem
/// `(moments, bounds, epsilon)` under the multipliers in `cert`.
pub fn kkt_residuals(
    moments: &Moments,
    bounds: &BoundSpec,
    epsilon: Option<f64>,
    weights: &[f64],
    cert: &KktCertificate,
) -> KktResiduals {
    let w = DVector::from_column_slice(weights);
    let grad = moments.cov() * &w * 2.0;
    let ret = moments.mu().dot(&w);
    let mut stationarity = 0.0f64;
    let mut primal = (w.sum() - 1.0).abs();
    let mut complementarity = 0.0f64;
    for i in 0..w.len() {
        let r = grad[i] - cert.target_return * moments.mu()[i] - cert.budget - cert.bounds[i];
        stationarity = stationarity.max(r.abs());
        primal = primal
            .max(bounds.lower - w[i])
            .max(w[i] - bounds.upper);
        let nu = cert.bounds[i];
        complementarity = complementarity
            .max((nu.max(0.0) * (w[i] - bounds.lower)).abs())
            .max(((-nu).max(0.0) * (bounds.upper - w[i])).abs());
    }
    if let Some(eps) = epsilon {
        primal = primal.max(eps - ret);
        complementarity = complementarity.max((cert.target_return * (ret - eps)).abs());
    }
    KktResiduals {
        stationarity,
        primal: primal.max(0.0),
        dual: (-cert.target_return).max(0.0),
        complementarity,
    }
}

/// Greedy maximum-return weights: every asset starts at `l` and the leftover
/// budget goes to assets in descending `μ` order (index order on ties), up
/// to `u` each.
pub(crate) fn greedy_max_return(mu: &[f64], bounds: &BoundSpec) -> Vec<f64> {
    let n = mu.len();
    let mut w = vec![bounds.lower; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]).then(a.cmp(&b)));
    let mut remaining = 1.0 - n as f64 * bounds.lower;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let add = (bounds.upper - bounds.lower).min(remaining);
        w[i] += add;
        remaining -= add;
    }
    w
}

/// Maximum expected return portfolio under the bounds.
pub fn max_return(moments: &Moments, bounds: &BoundSpec) -> Result<Portfolio, OptimizeError> {
    bounds.check_budget(moments.len())?;
    let w = greedy_max_return(moments.mu().as_slice(), bounds);
    Portfolio::new("Max Ret", moments.tickers().to_vec(), w)
}

/// `wᵢ = 1/n`.
pub fn equal_weight(tickers: &[String]) -> Result<Portfolio, OptimizeError> {
    if tickers.is_empty() {
        return Err(OptimizeError::EmptyUniverse);
    }
    let w = 1.0 / tickers.len() as f64;
    Portfolio::new("Equally-weighted", tickers.to_vec(), vec![w; tickers.len()])
}

/// Minimum-variance portfolio under the bounds, with no return target.
pub fn min_variance(moments: &Moments, bounds: &BoundSpec) -> Result<MvSolution, OptimizeError> {
    solve_mv(moments, bounds, None).map(|s| relabel(s, "Min Var"))
}

/// Solves the mean-variance program for target return `epsilon`.
pub fn solve_qp(moments: &Moments, bounds: &BoundSpec, epsilon: f64) -> Result<MvSolution, OptimizeError> {
    solve_mv(moments, bounds, Some(epsilon))
}

fn relabel(mut s: MvSolution, label: &str) -> MvSolution {
    s.portfolio.label = label.to_string();
    s
}

pub(crate) fn solve_mv(
    moments: &Moments,
    bounds: &BoundSpec,
    epsilon: Option<f64>,
) -> Result<MvSolution, OptimizeError> {
    let n = moments.len();
    bounds.check_budget(n)?;
    if let Some(eps) = epsilon {
        if !eps.is_finite() {
            return Err(OptimizeError::Infeasible(format!("target return {eps}")));
        }
    }
    let mu = moments.mu();
    let equal = DVector::from_element(n, 1.0 / n as f64);
    let start = match epsilon {
        None => equal,
        Some(eps) => {
            let top = DVector::from_vec(greedy_max_return(mu.as_slice(), bounds));
            let r_max = mu.dot(&top);
            if eps > r_max + 1e-12 * r_max.abs().max(1.0) {
                return Err(OptimizeError::InfeasibleTarget {
                    target: eps,
                    max_achievable: r_max,
                });
            }
            let r_eq = mu.dot(&equal);
            if eps <= r_eq {
                equal
            } else {
                let t = ((eps - r_eq) / (r_max - r_eq)).clamp(0.0, 1.0);
                &equal + (&top - &equal) * t
            }
        }
    };

    let mut rows = vec![LinearRow::eq(DVector::from_element(n, 1.0), 1.0)];
    if let Some(eps) = epsilon {
        rows.push(LinearRow::ge(mu.clone(), eps));
    }
    let program = QuadProgram {
        hessian: moments.cov() * 2.0,
        linear: DVector::zeros(n),
        rows,
        lower: DVector::from_element(n, bounds.lower),
        upper: DVector::from_element(n, bounds.upper),
    };
    let sol = program.solve(&start, &QpSettings::default())?;

    let weights: Vec<f64> = sol.x.iter().copied().collect();
    let certificate = KktCertificate {
        budget: sol.row_multipliers[0],
        target_return: if epsilon.is_some() { sol.row_multipliers[1] } else { 0.0 },
        bounds: sol.bound_multipliers.iter().copied().collect(),
    };
    let residuals = kkt_residuals(moments, bounds, epsilon, &weights, &certificate);
    let label = if epsilon.is_some() { "Frontier" } else { "Min Var" };
    Ok(MvSolution {
        expected_return: moments.expected_return(&weights),
        variance: moments.variance(&weights),
        portfolio: Portfolio::new(label, moments.tickers().to_vec(), weights)?,
        certificate,
        residuals,
        iterations: sol.iterations,
    })
}

/// One solved point of a frontier sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub epsilon: f64,
    pub portfolio: Portfolio,
    pub achieved_return: f64,
    pub variance: f64,
    /// Relative optimality gap, reported by the cardinality solver only.
    pub gap: Option<f64>,
}

/// Frontier points ordered by ascending target return.
#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
    pub bounds: BoundSpec,
    pub tickers: Vec<String>,
}

/// Linear grid of `num_points` targets from `lo` to `hi`, both included.
pub fn epsilon_grid(lo: f64, hi: f64, num_points: usize) -> Vec<f64> {
    let last = num_points - 1;
    (0..num_points)
        .map(|k| {
            if k == last {
                hi
            } else {
                lo + (hi - lo) * k as f64 / last as f64
            }
        })
        .collect()
}

/// Sweeps the efficient frontier between the minimum-variance and the
/// maximum-return portfolios. Points are solved in parallel; each solve is a
/// pure function of its inputs, so the result does not depend on the thread
/// count.
pub fn compute_frontier(
    moments: &Moments,
    bounds: &BoundSpec,
    num_points: usize,
) -> Result<Frontier, OptimizeError> {
    if num_points < 2 {
        return Err(OptimizeError::TooFewPoints(num_points));
    }
    let low = min_variance(moments, bounds)?;
    let high = max_return(moments, bounds)?;
    let r_hi = moments.expected_return(&high.weights);
    let r_lo = low.expected_return.min(r_hi);
    let grid = epsilon_grid(r_lo, r_hi, num_points);
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(index, &eps)| {
            let sol = solve_qp(moments, bounds, eps).map_err(|e| OptimizeError::FrontierPoint {
                index,
                epsilon: eps,
                source: Box::new(e),
            })?;
            Ok(FrontierPoint {
                epsilon: eps,
                achieved_return: sol.expected_return,
                variance: sol.variance,
                portfolio: sol.portfolio,
                gap: None,
            })
        })
        .collect::<Result<Vec<_>, OptimizeError>>()?;
    Ok(Frontier {
        points,
        bounds: *bounds,
        tickers: moments.tickers().to_vec(),
    })
}

/// Sharpe ratio `r / σ` with a zero risk-free rate.
pub fn sharpe_of(expected_return: f64, variance: f64) -> f64 {
    expected_return / variance.sqrt()
}

/// Frontier point with the largest `μᵀw / √(wᵀQw)`. Earlier (lower
/// variance) points win ties.
pub fn max_sharpe(frontier: &Frontier) -> Result<(usize, Portfolio), OptimizeError> {
    if frontier.points.is_empty() {
        return Err(OptimizeError::EmptyFrontier);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in frontier.points.iter().enumerate() {
        if p.variance <= 0.0 {
            return Err(OptimizeError::ZeroVariance(i));
        }
        let s = sharpe_of(p.achieved_return, p.variance);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, _) = best.expect("nonempty frontier");
    Ok((i, frontier.points[i].portfolio.clone().with_label("Max Sharpe")))
}

/// Dense symmetric matrix helper used by tests and callers that build
/// moments by hand.
pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(mu: &[f64], cov: DMatrix<f64>) -> Moments {
        let tickers = (0..mu.len()).map(|i| format!("A{i}")).collect();
        Moments::new(tickers, DVector::from_column_slice(mu), cov).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn two_asset_targets() {
        let m = moments(&[0.1, 0.2], DMatrix::identity(2, 2));
        let b = BoundSpec::long_only();
        let s = solve_qp(&m, &b, 0.15).unwrap();
        assert_close(&s.portfolio.weights, &[0.5, 0.5], 1e-12);
        let s = solve_qp(&m, &b, 0.18).unwrap();
        assert_close(&s.portfolio.weights, &[0.2, 0.8], 1e-12);
        assert!(s.residuals.max() < 1e-12);
        assert!(matches!(
            solve_qp(&m, &b, 0.25),
            Err(OptimizeError::InfeasibleTarget { .. })
        ));
    }

    #[test]
    fn min_variance_closed_forms() {
        let b = BoundSpec::long_only();
        let m = moments(&[0.0; 4], DMatrix::identity(4, 4));
        assert_close(&min_variance(&m, &b).unwrap().portfolio.weights, &[0.25; 4], 1e-12);
        let m = moments(&[0.0; 2], diag(&[1.0, 4.0]));
        assert_close(&min_variance(&m, &b).unwrap().portfolio.weights, &[0.8, 0.2], 1e-12);
        let m = moments(&[0.0; 2], diag(&[1.0, 100.0]));
        let capped = BoundSpec::new(0.0, 0.6).unwrap();
        let s = min_variance(&m, &capped).unwrap();
        assert_close(&s.portfolio.weights, &[0.6, 0.4], 1e-12);
        assert!(s.certificate.bounds[0] < 0.0, "upper bound multiplier");
    }

    #[test]
    fn greedy_max_return_examples() {
        let m = moments(&[0.3, 0.2, 0.1], DMatrix::identity(3, 3));
        let p = max_return(&m, &BoundSpec::new(0.1, 0.6).unwrap()).unwrap();
        assert_close(&p.weights, &[0.6, 0.3, 0.1], 1e-12);
        let fixed = BoundSpec::new(0.25, 0.25).unwrap();
        let m4 = moments(&[0.4, 0.1, 0.3, 0.2], DMatrix::identity(4, 4));
        assert_close(&max_return(&m4, &fixed).unwrap().weights, &[0.25; 4], 0.0);
        let flat = moments(&[0.1; 3], DMatrix::identity(3, 3));
        let p = max_return(&flat, &BoundSpec::new(0.0, 0.5).unwrap()).unwrap();
        assert_close(&p.weights, &[0.5, 0.5, 0.0], 0.0);
    }

    #[test]
    fn frontier_closed_form_three_points() {
        let m = moments(&[0.1, 0.2], DMatrix::identity(2, 2));
        let f = compute_frontier(&m, &BoundSpec::long_only(), 3).unwrap();
        let w: Vec<Vec<f64>> = f.points.iter().map(|p| p.portfolio.weights.clone()).collect();
        assert_close(&w[0], &[0.5, 0.5], 1e-12);
        assert_close(&w[1], &[0.25, 0.75], 1e-12);
        assert_close(&w[2], &[0.0, 1.0], 1e-12);
        let v: Vec<f64> = f.points.iter().map(|p| p.variance).collect();
        assert_close(&v, &[0.5, 0.625, 1.0], 1e-12);
    }

    #[test]
    fn two_point_frontier_is_the_endpoints() {
        let m = moments(&[0.05, 0.1, 0.2], diag(&[1.0, 2.0, 3.0]));
        let b = BoundSpec::long_only();
        let f = compute_frontier(&m, &b, 2).unwrap();
        assert_eq!(f.points.len(), 2);
        let mv = min_variance(&m, &b).unwrap();
        assert_close(&f.points[0].portfolio.weights, &mv.portfolio.weights, 1e-12);
        assert_close(&f.points[1].portfolio.weights, &max_return(&m, &b).unwrap().weights, 1e-12);
        assert!(compute_frontier(&m, &b, 1).is_err());
    }

    #[test]
    fn sharpe_selection() {
        let point = |r: f64, sd: f64| FrontierPoint {
            epsilon: r,
            portfolio: Portfolio::new("p", vec!["A".into()], vec![1.0]).unwrap(),
            achieved_return: r,
            variance: sd * sd,
            gap: None,
        };
        let f = Frontier {
            points: vec![point(0.10, 0.10), point(0.20, 0.15)],
            bounds: BoundSpec::long_only(),
            tickers: vec!["A".into()],
        };
        assert_eq!(max_sharpe(&f).unwrap().0, 1);
        let single = Frontier { points: vec![point(0.1, 0.2)], ..f.clone() };
        assert_eq!(max_sharpe(&single).unwrap().0, 0);
        let zero = Frontier { points: vec![point(0.1, 0.0)], ..f };
        assert!(matches!(max_sharpe(&zero), Err(OptimizeError::ZeroVariance(0))));
    }

    #[test]
    fn equal_weights() {
        let t15: Vec<String> = (0..15).map(|i| format!("T{i}")).collect();
        let p = equal_weight(&t15).unwrap();
        assert!(p.weights.iter().all(|&w| w == 1.0 / 15.0));
        assert_eq!(equal_weight(&t15[..1]).unwrap().weights, [1.0]);
        let t45: Vec<String> = (0..45).map(|i| format!("T{i}")).collect();
        let s: f64 = equal_weight(&t45).unwrap().weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(equal_weight(&[]).is_err());
    }

    #[test]
    fn universe_bounds() {
        assert_eq!(bounds_for_universe(15).unwrap(), BoundSpec::new(0.03, 0.13).unwrap());
        assert_eq!(bounds_for_universe(30).unwrap(), BoundSpec::new(0.02, 0.07).unwrap());
        assert_eq!(bounds_for_universe(45).unwrap(), BoundSpec::new(0.01, 0.05).unwrap());
        assert!(bounds_for_universe(0).is_err());
        for n in 1..600 {
            let b = bounds_for_universe(n).unwrap();
            b.check_budget(n).unwrap_or_else(|e| panic!("n = {n}: {e}"));
        }
        assert_eq!(bounds_for_universe(10).unwrap(), BoundSpec::new(0.05, 0.2).unwrap());
    }

    #[test]
    fn bounds_validation() {
        assert!(BoundSpec::new(0.2, 0.1).is_err());
        assert!(BoundSpec::new(-0.1, 0.5).is_err());
        assert!(BoundSpec::new(0.0, 1.5).is_err());
        let b = BoundSpec::new(0.03, 0.13).unwrap();
        assert!(b.check_budget(15).is_ok());
        assert!(b.check_budget(5).is_err());
        assert!(b.check_budget(40).is_err());
    }
}
