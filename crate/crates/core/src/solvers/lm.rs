//! Levenberg–Marquardt over the 6-dof pose manifold.
//!
//! The increment is `[ω, δt]`, applied by [`Pose::retract`]. Every model
//! provides per-point residuals with their analytic Jacobian with respect to
//! that increment; the normal equations are accumulated sequentially in
//! point order, so results are bitwise reproducible.

use nalgebra::{Cholesky, Matrix6, SMatrix, SVector, Vector6};

use super::{SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::geometry::Pose;

const MIN_DAMPING: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e12;

/// A sum-of-squares objective with one `D`-dimensional residual per point.
pub trait ResidualModel<const D: usize> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Camera-frame depth of point `i`; non-positive means unusable.
    fn depth(&self, pose: &Pose, i: usize) -> f64;

    fn residual(&self, pose: &Pose, i: usize) -> SVector<f64, D>;

    /// Residual and its Jacobian with respect to the local increment.
    fn linearize(&self, pose: &Pose, i: usize) -> (SVector<f64, D>, SMatrix<f64, D, 6>);
}

fn total_cost<const D: usize, M: ResidualModel<D>>(
    model: &M,
    pose: &Pose,
    active: &[usize],
) -> Option<f64> {
    let mut cost = 0.0;
    for &i in active {
        if model.depth(pose, i) <= 0.0 {
            return None;
        }
        cost += model.residual(pose, i).norm_squared();
    }
    cost.is_finite().then_some(cost)
}

fn solve_damped(h: &Matrix6<f64>, g: &Vector6<f64>, lambda: f64) -> Option<Vector6<f64>> {
    let floor = h.diagonal().max() * 1e-12;
    let mut damped = *h;
    for k in 0..6 {
        damped[(k, k)] += lambda * h[(k, k)].max(floor);
    }
    let chol = Cholesky::new(damped).or_else(|| {
        let mut fallback = *h;
        for k in 0..6 {
            fallback[(k, k)] += lambda.max(MIN_DAMPING);
        }
        Cholesky::new(fallback)
    })?;
    Some(chol.solve(&(-g)))
}

/// Minimizes the model's cost starting from `init`.
///
/// Points behind the camera at `init` are excluded from the objective; a
/// strict majority must be usable or [`Error::Initialization`] is returned.
/// Steps that push a used point behind the camera are rejected.
pub fn levenberg_marquardt<const D: usize, M: ResidualModel<D>>(
    model: &M,
    init: &Pose,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    let n = model.len();
    let active: Vec<usize> = (0..n).filter(|&i| model.depth(init, i) > 0.0).collect();
    if active.len() * 2 <= n {
        return Err(Error::Initialization(format!(
            "only {} of {n} points are in front of the camera at the initial pose",
            active.len()
        )));
    }
    let mut cost = total_cost(model, init, &active)
        .ok_or_else(|| Error::Initialization("non-finite cost at the initial pose".into()))?;

    let initial_cost = cost;
    let mut pose = *init;
    let mut lambda = opts.initial_damping.clamp(MIN_DAMPING, MAX_DAMPING);
    let mut history = vec![cost];
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for &i in &active {
            let (r, j) = model.linearize(&pose, i);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }

        loop {
            let step = solve_damped(&h, &g, lambda);
            let candidate = step.map(|d| (d, pose.retract(&d)));
            let new_cost = candidate
                .as_ref()
                .and_then(|(_, p)| total_cost(model, p, &active));
            match (candidate, new_cost) {
                (Some((delta, next)), Some(c)) if c < cost => {
                    let small_decrease = cost - c <= opts.cost_tolerance * cost;
                    let small_step = delta.norm() <= opts.param_tolerance;
                    pose = next;
                    cost = c;
                    history.push(c);
                    lambda = (lambda / 10.0).max(MIN_DAMPING);
                    converged = small_decrease || small_step;
                    break;
                }
                (candidate, _) => {
                    let tiny = candidate
                        .map(|(d, _)| d.norm() <= opts.param_tolerance)
                        .unwrap_or(false);
                    if tiny {
                        // No further decrease is representable.
                        converged = true;
                        break;
                    }
                    if lambda >= MAX_DAMPING {
                        break;
                    }
                    lambda = (lambda * 10.0).min(MAX_DAMPING);
                }
            }
        }
        if !converged && lambda >= MAX_DAMPING {
            break;
        }
    }

    let mut per_point_residuals = vec![f64::INFINITY; n];
    for &i in &active {
        per_point_residuals[i] = model.residual(&pose, i).norm_squared();
    }

    Ok(SolveReport {
        pose,
        final_cost: cost,
        initial_cost,
        iterations,
        converged,
        cost_history: history,
        per_point_residuals,
    })
}
