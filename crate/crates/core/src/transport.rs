//! Entropic fused Gromov-Wasserstein transport between two small sets of
//! class embeddings.
//!
//! The objective for a coupling `G` with marginals `mu`, `nu` is
//!
//! ```text
//! FGW(G) = (1 - alpha) * sum_ij M_ij G_ij
//!        + alpha * sum_ijkl |DH_ik - DL_jl|^2 G_ij G_kl
//! ```
//!
//! where `M` holds squared cross-set distances and `DH`, `DL` plain
//! Euclidean intra-set distances. The solver linearizes the quadratic term
//! around the current plan and solves each linear problem with log-domain
//! Sinkhorn at temperature `epsilon`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;

/// Largest side length accepted by the exact `O(n^4)` quadratic form.
pub const MAX_SUPPORT: usize = 16;

/// Marginal violation a returned plan must stay under.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Entropic temperature.
    pub epsilon: f64,
    /// Sinkhorn iterations per linearized problem.
    pub max_inner: usize,
    /// Linearization steps.
    pub max_outer: usize,
    /// Sinkhorn stops once the row-marginal violation drops below this.
    pub inner_tol: f64,
    /// Outer loop stops once the objective changes by less than this.
    pub outer_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_inner: 100,
            max_outer: 20,
            inner_tol: 1e-9,
            outer_tol: 1e-7,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "solver epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.max_inner == 0 {
            return Err(Error::Config("solver max_inner must be >= 1".into()));
        }
        if !(self.inner_tol > 0.0) || !(self.outer_tol >= 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Feature and structure costs between a source and a target embedding set.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrices {
    /// `M_ij = |h_i - l_j|^2`.
    pub feature: Array2<f64>,
    /// `DH_ik = |h_i - h_k|`.
    pub structure_high: Array2<f64>,
    /// `DL_jl = |l_j - l_l|`.
    pub structure_low: Array2<f64>,
}

fn pairwise_sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    })
}

pub fn build_costs(
    w_high: ArrayView2<'_, f64>,
    w_low: ArrayView2<'_, f64>,
) -> Result<CostMatrices> {
    if w_high.ncols() != w_low.ncols() {
        return Err(Error::Shape(format!(
            "embedding dims differ: {} vs {}",
            w_high.ncols(),
            w_low.ncols()
        )));
    }
    Ok(CostMatrices {
        feature: pairwise_sq(w_high, w_low),
        structure_high: pairwise_sq(w_high, w_high).mapv(f64::sqrt),
        structure_low: pairwise_sq(w_low, w_low).mapv(f64::sqrt),
    })
}

pub fn uniform(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

fn check_marginal(v: ArrayView1<'_, f64>, name: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Shape(format!("{name} marginal is empty")));
    }
    if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!(
            "{name} marginal must be strictly positive"
        )));
    }
    let total: f64 = v.sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!(
            "{name} marginal sums to {total}, expected 1"
        )));
    }
    Ok(())
}

fn check_distance(d: &Array2<f64>, name: &str) -> Result<()> {
    if d.nrows() != d.ncols() {
        return Err(Error::Shape(format!(
            "{name} must be square, got {:?}",
            d.dim()
        )));
    }
    for i in 0..d.nrows() {
        if d[[i, i]].abs() > 1e-9 {
            return Err(Error::Domain(format!("{name} has nonzero diagonal at {i}")));
        }
        for k in 0..i {
            if (d[[i, k]] - d[[k, i]]).abs() > 1e-9 || d[[i, k]] < 0.0 {
                return Err(Error::Domain(format!(
                    "{name} is not a symmetric nonnegative matrix at ({i}, {k})"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportProblem {
    costs: CostMatrices,
    alpha: f64,
    source: Array1<f64>,
    target: Array1<f64>,
}

impl TransportProblem {
    pub fn new(
        costs: CostMatrices,
        alpha: f64,
        source: Array1<f64>,
        target: Array1<f64>,
    ) -> Result<Self> {
        let (nh, nl) = costs.feature.dim();
        if source.len() != nh || target.len() != nl {
            return Err(Error::Shape(format!(
                "marginals have lengths ({}, {}), feature cost is {nh}x{nl}",
                source.len(),
                target.len()
            )));
        }
        if costs.structure_high.dim() != (nh, nh) || costs.structure_low.dim() != (nl, nl) {
            return Err(Error::Shape(
                "structure costs do not match feature cost".into(),
            ));
        }
        if costs.feature.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::Domain(
                "feature cost must be finite and nonnegative".into(),
            ));
        }
        check_distance(&costs.structure_high, "high-end structure")?;
        check_distance(&costs.structure_low, "low-end structure")?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        check_marginal(source.view(), "source")?;
        check_marginal(target.view(), "target")?;
        Ok(Self {
            costs,
            alpha,
            source,
            target,
        })
    }

    /// Uniform marginals on both sides.
    pub fn uniform(costs: CostMatrices, alpha: f64) -> Result<Self> {
        let (nh, nl) = costs.feature.dim();
        Self::new(costs, alpha, uniform(nh), uniform(nl))
    }

    pub fn costs(&self) -> &CostMatrices {
        &self.costs
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn source(&self) -> &Array1<f64> {
        &self.source
    }

    pub fn target(&self) -> &Array1<f64> {
        &self.target
    }

    /// The product coupling `mu nu^T`.
    pub fn product_coupling(&self) -> Array2<f64> {
        outer(&self.source, &self.target)
    }

    pub fn objective(&self, gamma: ArrayView2<'_, f64>) -> Result<f64> {
        fgw_value(
            self.costs.feature.view(),
            self.costs.structure_high.view(),
            self.costs.structure_low.view(),
            self.alpha,
            gamma,
        )
    }

    /// Gradient of the fused objective with respect to the plan.
    ///
    /// For the squared loss the quadratic part's gradient is
    /// `2 (c - 2 DH G DL)` with `c_ij = sum_k DH_ik^2 g_k + sum_l DL_jl^2 h_l`,
    /// where `g`, `h` are the current plan's row and column sums.
    pub fn linearized_cost(&self, gamma: ArrayView2<'_, f64>) -> Array2<f64> {
        let CostMatrices {
            feature,
            structure_high: dh,
            structure_low: dl,
        } = &self.costs;
        if self.alpha == 0.0 {
            return feature.clone();
        }
        let rows = gamma.sum_axis(ndarray::Axis(1));
        let cols = gamma.sum_axis(ndarray::Axis(0));
        let ch = dh.mapv(|x| x * x).dot(&rows);
        let cl = dl.mapv(|x| x * x).dot(&cols);
        let cross = dh.dot(&gamma).dot(dl);
        let mut grad = Array2::from_shape_fn(feature.raw_dim(), |(i, j)| {
            2.0 * (ch[i] + cl[j] - 2.0 * cross[[i, j]])
        });
        Zip::from(&mut grad)
            .and(feature)
            .for_each(|g, &m| *g = (1.0 - self.alpha) * m + self.alpha * *g);
        grad
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub gamma: Array2<f64>,
    /// Linearization steps taken (0 for a plain Sinkhorn solve).
    pub outer_iterations: usize,
    /// Sinkhorn sweeps summed over all linearizations.
    pub inner_iterations: usize,
    /// Largest column-marginal deviation of the returned plan.
    pub marginal_violation: f64,
    /// Column deviation left by the dual iterations alone, before rounding.
    pub dual_violation: f64,
    /// Whether the dual iterations reached feasibility without rounding.
    pub converged: bool,
    /// Objective per step. For FGW solves entry 0 is the initialization.
    pub objective_trace: Vec<f64>,
}

/// Entropic optimal transport by alternating dual updates in the log domain.
///
/// Stops once the row-marginal violation is below `tol` or after
/// `max_iters` sweeps, then rescales rows so they match `mu` exactly. If
/// the column violation is still at or above [`FEASIBILITY_TOL`] the plan
/// is rounded onto the transport polytope and `converged` is cleared.
pub fn sinkhorn(
    cost: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let mut duals = (Array1::zeros(mu.len()), Array1::zeros(nu.len()));
    sinkhorn_warm(cost, mu, nu, epsilon, max_iters, tol, &mut duals)
}

/// [`sinkhorn`] started from the given dual potentials, which are left at
/// their final values.
fn sinkhorn_warm(
    cost: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
    duals: &mut (Array1<f64>, Array1<f64>),
) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    if mu.len() != n || nu.len() != m {
        return Err(Error::Shape(format!(
            "cost is {n}x{m} but marginals have lengths ({}, {})",
            mu.len(),
            nu.len()
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("cost matrix has non-finite entries".into()));
    }
    check_marginal(mu, "source")?;
    check_marginal(nu, "target")?;

    let log_mu = mu.mapv(f64::ln);
    let log_nu = nu.mapv(f64::ln);
    let (f, g) = duals;
    if f.len() != n || g.len() != m {
        *f = Array1::zeros(n);
        *g = Array1::zeros(m);
    }
    let mut iterations = 0;

    let row_violation = |f: &Array1<f64>, g: &Array1<f64>| -> f64 {
        (0..n)
            .map(|i| {
                let s: f64 = (0..m)
                    .map(|j| ((f[i] + g[j] - cost[[i, j]]) / epsilon).exp())
                    .sum();
                (s - mu[i]).abs()
            })
            .fold(0.0, f64::max)
    };

    while iterations < max_iters {
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| (g[j] - cost[[i, j]]) / epsilon));
            f[i] = epsilon * (log_mu[i] - lse);
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - cost[[i, j]]) / epsilon));
            g[j] = epsilon * (log_nu[j] - lse);
        }
        iterations += 1;
        if row_violation(f, g) < tol {
            break;
        }
    }

    let mut gamma = Array2::from_shape_fn((n, m), |(i, j)| {
        ((f[i] + g[j] - cost[[i, j]]) / epsilon).exp()
    });
    for (i, mut row) in gamma.rows_mut().into_iter().enumerate() {
        let s = row.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numeric(format!("row {i} of the plan has mass {s}")));
        }
        row *= mu[i] / s;
    }
    let dual_violation = column_violation(gamma.view(), nu);
    let converged = dual_violation < FEASIBILITY_TOL;
    if !converged {
        round_to_marginals(&mut gamma, mu, nu);
    }
    let violation = column_violation(gamma.view(), nu);
    if !(violation < FEASIBILITY_TOL) {
        return Err(Error::Numeric(format!(
            "plan misses the target marginal by {violation:e} after rounding"
        )));
    }
    let entropy: f64 = gamma
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum();
    let linear: f64 = (&gamma * &cost).sum();
    Ok(TransportPlan {
        gamma,
        outer_iterations: 0,
        inner_iterations: iterations,
        marginal_violation: violation,
        dual_violation,
        converged,
        objective_trace: vec![linear - epsilon * entropy],
    })
}

/// Moves a plan with exact row sums onto the transport polytope: columns
/// holding too much mass are scaled down, then the missing mass is added
/// back as the rank-one product of the row and column deficits.
fn round_to_marginals(gamma: &mut Array2<f64>, mu: ArrayView1<'_, f64>, nu: ArrayView1<'_, f64>) {
    let cols = gamma.sum_axis(ndarray::Axis(0));
    for (j, mut col) in gamma.columns_mut().into_iter().enumerate() {
        if cols[j] > nu[j] {
            col *= nu[j] / cols[j];
        }
    }
    let row_deficit = &mu - &gamma.sum_axis(ndarray::Axis(1));
    let col_deficit = &nu - &gamma.sum_axis(ndarray::Axis(0));
    let mass: f64 = row_deficit.iter().map(|x| x.max(0.0)).sum();
    if mass <= 0.0 {
        return;
    }
    for i in 0..gamma.nrows() {
        for j in 0..gamma.ncols() {
            gamma[[i, j]] += row_deficit[i].max(0.0) * col_deficit[j].max(0.0) / mass;
        }
    }
}

/// Exact evaluation of `sum_ijkl |DH_ik - DL_jl|^2 G_ij G_kl`.
pub fn gw_quadratic(
    d_high: ArrayView2<'_, f64>,
    d_low: ArrayView2<'_, f64>,
    gamma: ArrayView2<'_, f64>,
) -> Result<f64> {
    let (nh, nl) = gamma.dim();
    if nh.max(nl) > MAX_SUPPORT {
        return Err(Error::Size {
            size: nh.max(nl),
            max: MAX_SUPPORT,
        });
    }
    if d_high.dim() != (nh, nh) || d_low.dim() != (nl, nl) {
        return Err(Error::Shape(format!(
            "plan is {nh}x{nl}, structures are {:?} and {:?}",
            d_high.dim(),
            d_low.dim()
        )));
    }
    let mut total = 0.0;
    for i in 0..nh {
        for j in 0..nl {
            let gij = gamma[[i, j]];
            if gij == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for k in 0..nh {
                for l in 0..nl {
                    let diff = d_high[[i, k]] - d_low[[j, l]];
                    inner += diff * diff * gamma[[k, l]];
                }
            }
            total += gij * inner;
        }
    }
    Ok(total)
}

/// The fused objective evaluated at a given plan.
pub fn fgw_value(
    feature: ArrayView2<'_, f64>,
    d_high: ArrayView2<'_, f64>,
    d_low: ArrayView2<'_, f64>,
    alpha: f64,
    gamma: ArrayView2<'_, f64>,
) -> Result<f64> {
    if feature.dim() != gamma.dim() {
        return Err(Error::Shape(format!(
            "feature cost is {:?}, plan is {:?}",
            feature.dim(),
            gamma.dim()
        )));
    }
    let linear: f64 = Zip::from(feature)
        .and(gamma)
        .fold(0.0, |acc, &m, &g| acc + m * g);
    let quad = if alpha == 0.0 {
        0.0
    } else {
        gw_quadratic(d_high, d_low, gamma)?
    };
    Ok((1.0 - alpha) * linear + alpha * quad)
}

/// Linearize-and-solve iterations started from `init`. Dual potentials
/// carry over between steps. With `alpha = 0` a single solve is taken.
///
/// Returns the iterate with the lowest objective seen, `init` included.
pub fn fgw_solve_from(
    problem: &TransportProblem,
    init: ArrayView2<'_, f64>,
    config: &SolverConfig,
) -> Result<TransportPlan> {
    config.validate()?;
    if init.dim() != problem.costs.feature.dim() {
        return Err(Error::Shape(format!(
            "initial plan is {:?}, problem is {:?}",
            init.dim(),
            problem.costs.feature.dim()
        )));
    }
    let mut gamma = init.to_owned();
    let mut duals = (
        Array1::zeros(problem.source.len()),
        Array1::zeros(problem.target.len()),
    );
    let init_objective = problem.objective(gamma.view())?;
    let mut best = TransportPlan {
        gamma: gamma.clone(),
        outer_iterations: 0,
        inner_iterations: 0,
        marginal_violation: column_violation(gamma.view(), problem.target.view()),
        dual_violation: 0.0,
        converged: true,
        objective_trace: vec![init_objective],
    };
    let mut best_objective = init_objective;
    let mut previous = init_objective;
    let mut trace = vec![init_objective];
    let mut inner_total = 0;

    for step in 1..=config.max_outer {
        let cost = problem.linearized_cost(gamma.view());
        let plan = sinkhorn_warm(
            cost.view(),
            problem.source.view(),
            problem.target.view(),
            config.epsilon,
            config.max_inner,
            config.inner_tol,
            &mut duals,
        )?;
        inner_total += plan.inner_iterations;
        gamma = plan.gamma;
        let objective = problem.objective(gamma.view())?;
        trace.push(objective);
        if objective <= best_objective {
            best_objective = objective;
            best.gamma = gamma.clone();
            best.outer_iterations = step;
            best.marginal_violation = plan.marginal_violation;
            best.dual_violation = plan.dual_violation;
            best.converged = plan.converged;
        }
        if problem.alpha == 0.0 || (objective - previous).abs() < config.outer_tol {
            break;
        }
        previous = objective;
    }
    best.inner_iterations = inner_total;
    best.objective_trace = trace;
    Ok(best)
}

fn column_violation(gamma: ArrayView2<'_, f64>, target: ArrayView1<'_, f64>) -> f64 {
    gamma
        .sum_axis(ndarray::Axis(0))
        .iter()
        .zip(target)
        .map(|(c, t)| (c - t).abs())
        .fold(0.0, f64::max)
}

/// Solves the fused problem from the product coupling and, when the
/// structural term is active, also from the entropic plan of the feature
/// cost alone; the lower-objective result wins (ties keep the product start).
///
/// The second start exists because the product coupling is an exact
/// stationary point of the linearization whenever the structure costs are
/// symmetric under relabeling, e.g. every 2x2 problem with `alpha = 1`.
pub fn fgw_solve(problem: &TransportProblem, config: &SolverConfig) -> Result<TransportPlan> {
    let product = problem.product_coupling();
    let from_product = fgw_solve_from(problem, product.view(), config)?;
    if problem.alpha == 0.0 {
        return Ok(from_product);
    }
    let feature_plan = sinkhorn(
        problem.costs.feature.view(),
        problem.source.view(),
        problem.target.view(),
        config.epsilon,
        config.max_inner,
        config.inner_tol,
    )?;
    let from_feature = fgw_solve_from(problem, feature_plan.gamma.view(), config)?;
    let best = |p: &TransportPlan| p.objective_trace[p.outer_iterations];
    if best(&from_feature) < best(&from_product) {
        Ok(from_feature)
    } else {
        Ok(from_product)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn uniform_plan(n: usize) -> Array2<f64> {
        Array2::from_elem((n, n), 1.0 / (n * n) as f64)
    }

    #[test]
    fn identical_sets_give_zero_diagonal_and_squared_structure() {
        let w = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.6, 0.8, 0.0]];
        let c = build_costs(w.view(), w.view()).unwrap();
        for i in 0..3 {
            assert_eq!(c.feature[[i, i]], 0.0);
        }
        let sq = c.structure_high.mapv(|x| x * x);
        assert!(c
            .feature
            .iter()
            .zip(&sq)
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn orthogonal_unit_vectors() {
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0]];
        let c = build_costs(a.view(), b.view()).unwrap();
        assert!((c.feature[[0, 0]] - 2.0).abs() < 1e-15);
        let both = array![[1.0, 0.0], [0.0, 1.0]];
        let c = build_costs(both.view(), both.view()).unwrap();
        assert!((c.structure_high[[0, 1]] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0, 0.0]];
        assert!(matches!(
            build_costs(a.view(), b.view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn warm_duals_converge_where_one_solve_stops_short() {
        let (c, s) = (0.5f64.cos(), 0.5f64.sin());
        let costs = build_costs(
            array![[1.0, 0.0], [0.0, 1.0]].view(),
            array![[c, s], [-s, c]].view(),
        )
        .unwrap();
        let problem = TransportProblem::uniform(costs, 0.1).unwrap();
        let config = SolverConfig::default();
        let cold = sinkhorn(
            problem
                .linearized_cost(problem.product_coupling().view())
                .view(),
            problem.source.view(),
            problem.target.view(),
            config.epsilon,
            config.max_inner,
            config.inner_tol,
        )
        .unwrap();
        let plan = fgw_solve(&problem, &config).unwrap();
        assert!(!cold.converged);
        assert!(
            plan.dual_violation < cold.dual_violation,
            "{} vs {}",
            plan.dual_violation,
            cold.dual_violation
        );
    }

    #[test]
    fn zero_alpha_takes_one_step() {
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let problem =
            TransportProblem::uniform(build_costs(w.view(), w.view()).unwrap(), 0.0).unwrap();
        let plan = fgw_solve(&problem, &SolverConfig::default()).unwrap();
        assert_eq!(plan.objective_trace.len(), 2);
    }

    #[test]
    fn zero_cost_gives_product_coupling() {
        let cost = Array2::zeros((3, 3));
        let u = uniform(3);
        let plan = sinkhorn(cost.view(), u.view(), u.view(), 0.1, 100, 1e-12).unwrap();
        for &x in &plan.gamma {
            assert!((x - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_cost_is_numeric_error() {
        let mut cost = Array2::zeros((2, 2));
        cost[[0, 1]] = f64::NAN;
        let u = uniform(2);
        assert!(matches!(
            sinkhorn(cost.view(), u.view(), u.view(), 0.1, 10, 1e-9),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn huge_costs_stay_finite() {
        let cost = Array2::from_shape_fn((4, 4), |(i, j)| {
            if i == j {
                0.0
            } else {
                1e4 * (1 + i + j) as f64
            }
        });
        let u = uniform(4);
        let plan = sinkhorn(cost.view(), u.view(), u.view(), 0.1, 100, 1e-9).unwrap();
        assert!(plan.gamma.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!(plan.marginal_violation < FEASIBILITY_TOL);
    }

    #[test]
    fn gw_of_isometric_pair_under_identity_is_zero() {
        let d = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.5], [2.0, 1.5, 0.0]];
        let id = Array2::eye(3) / 3.0;
        assert_eq!(gw_quadratic(d.view(), d.view(), id.view()).unwrap(), 0.0);
        let zero = Array2::zeros((3, 3));
        assert_eq!(gw_quadratic(d.view(), d.view(), zero.view()).unwrap(), 0.0);
    }

    #[test]
    fn gw_rejects_oversized_problems() {
        let n = MAX_SUPPORT + 1;
        let d = Array2::zeros((n, n));
        let g = Array2::zeros((n, n));
        assert!(matches!(
            gw_quadratic(d.view(), d.view(), g.view()),
            Err(Error::Size { .. })
        ));
    }

    #[test]
    fn fgw_value_special_cases() {
        let m = array![[0.0, 2.0, 1.0], [3.0, 0.5, 1.0], [0.2, 0.1, 4.0]];
        let d = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.5], [2.0, 1.5, 0.0]];
        let v = fgw_value(m.view(), d.view(), d.view(), 0.0, uniform_plan(3).view()).unwrap();
        assert!((v - m.mean().unwrap()).abs() < 1e-15);
        let id = Array2::eye(3) / 3.0;
        let v = fgw_value(m.view(), d.view(), d.view(), 1.0, id.view()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn problem_validation() {
        let costs = CostMatrices {
            feature: Array2::zeros((2, 2)),
            structure_high: array![[0.0, 1.0], [2.0, 0.0]],
            structure_low: Array2::zeros((2, 2)),
        };
        assert!(TransportProblem::uniform(costs.clone(), 0.5).is_err());
        let costs = CostMatrices {
            structure_high: array![[0.0, 1.0], [1.0, 0.0]],
            ..costs
        };
        assert!(TransportProblem::uniform(costs.clone(), 1.5).is_err());
        assert!(
            TransportProblem::new(costs.clone(), 0.5, array![0.5, 0.5], array![0.7, 0.2]).is_err()
        );
        assert!(TransportProblem::uniform(costs, 0.5).is_ok());
    }

    #[test]
    fn alpha_zero_reduces_to_sinkhorn_on_feature_cost() {
        let w_h = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let w_l = array![[0.8, 0.6, 0.0], [0.0, 0.6, 0.8], [0.6, 0.0, 0.8]];
        let costs = build_costs(w_h.view(), w_l.view()).unwrap();
        let problem = TransportProblem::uniform(costs.clone(), 0.0).unwrap();
        let cfg = SolverConfig::default();
        let plan = fgw_solve(&problem, &cfg).unwrap();
        let u = uniform(3);
        let direct = sinkhorn(
            costs.feature.view(),
            u.view(),
            u.view(),
            cfg.epsilon,
            cfg.max_inner,
            cfg.inner_tol,
        )
        .unwrap();
        assert_eq!(plan.gamma, direct.gamma);
    }

    #[test]
    fn identity_favoring_start_never_ends_worse_than_product() {
        let d = array![[0.0, 1.0, 1.8], [1.0, 0.0, 0.7], [1.8, 0.7, 0.0]];
        let costs = CostMatrices {
            feature: Array2::zeros((3, 3)),
            structure_high: d.clone(),
            structure_low: d,
        };
        let problem = TransportProblem::uniform(costs, 1.0).unwrap();
        let init =
            Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.9 / 3.0 } else { 0.05 / 3.0 });
        let plan = fgw_solve_from(&problem, init.view(), &SolverConfig::default()).unwrap();
        let product = problem
            .objective(problem.product_coupling().view())
            .unwrap();
        let reached = problem.objective(plan.gamma.view()).unwrap();
        assert!(reached <= product, "{reached} > {product}");
    }
}
