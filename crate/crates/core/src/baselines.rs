//! Comparison controllers: an interval-and-hold projected-gradient controller
//! on the one-step loss, and a budget-projected gradient planner over the
//! whole control sequence.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::exponential_control;
use crate::dynamics::{deviation_inf, step, OpinionState, Trajectory};
use crate::error::{Error, Result};
use crate::feasibility::plan_for_budget;
use crate::network::Network;

/// `x(t) = V[x + h∘u∘(d·1 − x)]` evaluated with believed `h`.
fn one_step(x: &DVector<f64>, u: &DVector<f64>, v: &DMatrix<f64>, h: &DVector<f64>, d: f64) -> DVector<f64> {
    let blend = DVector::from_fn(x.len(), |j, _| x[j] + h[j] * u[j] * (d - x[j]));
    v * blend
}

/// `½‖x(t) − d·1‖²` after one step from `x` under `u`.
pub fn one_step_loss(x: &DVector<f64>, u: &DVector<f64>, v: &DMatrix<f64>, h: &DVector<f64>, d: f64) -> f64 {
    0.5 * one_step(x, u, v, h, d).add_scalar(-d).norm_squared()
}

/// `∇_u ½‖x(t) − d‖² = h ∘ (d·1 − x) ∘ Vᵀ(x(t) − d·1)`.
pub fn one_step_loss_gradient(
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DMatrix<f64>,
    h: &DVector<f64>,
    d: f64,
) -> DVector<f64> {
    let resid = one_step(x, u, v, h, d).add_scalar(-d);
    let back = v.transpose() * resid;
    DVector::from_fn(x.len(), |j, _| h[j] * (d - x[j]) * back[j])
}

fn project_box(u: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(u.len(), |j, _| u[j].clamp(0.0, upper[j]))
}

/// Euclidean projection onto `{0 ≤ u ≤ upper, Σu ≤ cap}`.
pub fn project_budget_box(z: &DVector<f64>, upper: &DVector<f64>, cap: f64) -> DVector<f64> {
    let clipped = project_box(z, upper);
    if clipped.sum() <= cap {
        return clipped;
    }
    let shifted = |tau: f64| project_box(&z.add_scalar(-tau), upper);
    let (mut lo, mut hi) = (0.0, z.max().max(0.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shifted(mid).sum() > cap {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    shifted(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientConfig {
    /// Initial step of the backtracking line search.
    pub step_size: f64,
    /// A hold ends once one step improves `‖x − d‖∞` by less than this.
    pub interval_tol: f64,
    /// Projected-gradient iterations per interval.
    pub max_inner: usize,
    pub max_halvings: usize,
    /// Believed susceptibilities; `None` uses the true ones.
    pub theta_hat: Option<Vec<f64>>,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig {
            step_size: 0.5,
            interval_tol: 1e-4,
            max_inner: 1,
            max_halvings: 30,
            theta_hat: None,
        }
    }
}

impl GradientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidParams(format!("step_size = {} must be positive", self.step_size)));
        }
        if !(self.interval_tol >= 0.0) {
            return Err(Error::InvalidParams("interval_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

fn believed_h(net: &Network, theta_hat: Option<&[f64]>) -> Result<DVector<f64>> {
    match theta_hat {
        None => Ok(net.h()),
        Some(t) if t.len() != net.n() => Err(Error::DimensionMismatch { expected: net.n(), got: t.len() }),
        Some(t) => match t.iter().position(|v| !(*v > 0.0)) {
            Some(i) => Err(Error::InvalidParams(format!("theta_hat[{i}] = {} must be positive", t[i]))),
            None => Ok(DVector::from_column_slice(t)),
        },
    }
}

/// One interval's projected-gradient refinement of `u` on the one-step loss.
/// Each accepted iterate does not increase the loss.
pub fn refine_control(
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DMatrix<f64>,
    h: &DVector<f64>,
    d: f64,
    cfg: &GradientConfig,
) -> DVector<f64> {
    let upper = h.map(|hj| 1.0 / hj);
    let mut u = project_box(u, &upper);
    let mut loss = one_step_loss(x, &u, v, h, d);
    for _ in 0..cfg.max_inner {
        let g = one_step_loss_gradient(x, &u, v, h, d);
        let mut s = cfg.step_size;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let cand = project_box(&(&u - &g * s), &upper);
            let l = one_step_loss(x, &cand, v, h, d);
            if l < loss {
                u = cand;
                loss = l;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    u
}

/// Interval-and-hold gradient controller: refine `U` on the one-step loss,
/// hold it until `‖x − d‖∞` stops improving by `interval_tol` per step, and
/// repeat until the horizon or the budget is reached. A final step that
/// would overrun the budget is scaled down to spend exactly the remainder.
pub fn run_gradient_baseline(
    net: &Network,
    x0: &DVector<f64>,
    d: f64,
    horizon: usize,
    budget: f64,
    cfg: &GradientConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(budget >= 0.0) {
        return Err(Error::InvalidParams(format!("budget = {budget} must be nonnegative")));
    }
    let h = believed_h(net, cfg.theta_hat.as_deref())?;
    let v = net.v();
    let mut state = OpinionState::new(x0.clone())?;
    if x0.len() != net.n() {
        return Err(Error::DimensionMismatch { expected: net.n(), got: x0.len() });
    }
    let mut traj = Trajectory::start(x0.clone(), d);
    let mut u = DVector::zeros(net.n());

    'outer: while traj.steps() < horizon {
        u = refine_control(&state.x, &u, v, &h, d, cfg);
        loop {
            if traj.steps() >= horizon {
                break 'outer;
            }
            let remaining = budget - traj.cumulative_cost();
            let cost = u.sum();
            let (applied, last) = if cost > remaining {
                if remaining <= 0.0 {
                    traj.halted_by_budget = true;
                    break 'outer;
                }
                (&u * (remaining / cost), true)
            } else {
                (u.clone(), false)
            };
            let before = deviation_inf(&state.x, d);
            state = step(&state, &applied, net, d)?;
            traj.push(applied, state.x.clone());
            if last {
                traj.halted_by_budget = true;
                break 'outer;
            }
            if before - deviation_inf(&state.x, d) < cfg.interval_tol {
                break;
            }
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetOptimalConfig {
    pub max_iter: usize,
    pub step_size: f64,
    pub max_halvings: usize,
    /// Relative loss improvement below which the iteration stops.
    pub tol: f64,
}

impl Default for BudgetOptimalConfig {
    fn default() -> Self {
        BudgetOptimalConfig {
            max_iter: 300,
            step_size: 1.0,
            max_halvings: 30,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BudgetOptimalResult {
    pub trajectory: Trajectory,
    pub loss: f64,
    pub seed_loss: f64,
    pub iterations: usize,
    /// `false` when `max_iter` ran out before the improvement fell below `tol`.
    pub converged: bool,
}

fn rollout(x0: &DVector<f64>, us: &[DVector<f64>], v: &DMatrix<f64>, h: &DVector<f64>, d: f64) -> Vec<DVector<f64>> {
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(x0.clone());
    for u in us {
        let next = one_step(xs.last().unwrap(), u, v, h, d);
        xs.push(next);
    }
    xs
}

fn terminal_loss(xs: &[DVector<f64>], d: f64) -> f64 {
    0.5 * xs.last().unwrap().add_scalar(-d).norm_squared()
}

/// Adjoint gradient of `½‖x(T) − d‖²` with respect to every `u(t)`.
fn sequence_gradient(xs: &[DVector<f64>], us: &[DVector<f64>], v: &DMatrix<f64>, h: &DVector<f64>, d: f64) -> Vec<DVector<f64>> {
    let n = h.len();
    let vt = v.transpose();
    let mut lam = xs.last().unwrap().add_scalar(-d);
    let mut grads = vec![DVector::zeros(n); us.len()];
    for t in (0..us.len()).rev() {
        let back = &vt * &lam;
        grads[t] = DVector::from_fn(n, |j, _| h[j] * (d - xs[t][j]) * back[j]);
        lam = DVector::from_fn(n, |j, _| (1.0 - h[j] * us[t][j]) * back[j]);
    }
    grads
}

fn project_sequence(us: &[DVector<f64>], upper: &DVector<f64>, cap: f64) -> Vec<DVector<f64>> {
    let n = upper.len();
    let t = us.len();
    let mut flat = DVector::zeros(n * t);
    let mut ub = DVector::zeros(n * t);
    for (k, u) in us.iter().enumerate() {
        flat.rows_mut(k * n, n).copy_from(u);
        ub.rows_mut(k * n, n).copy_from(upper);
    }
    let p = project_budget_box(&flat, &ub, cap);
    (0..t).map(|k| p.rows(k * n, n).into_owned()).collect()
}

/// Projected gradient over `{u(t)}_{t<T}` minimising `‖x(T) − d‖²` subject to
/// `Σ_t‖u(t)‖₁ ≤ C_max` and `0 ≤ u ≤ 1/h`, seeded with the best exponential
/// schedule for the same budget. Returns the best iterate.
pub fn run_budget_optimal_baseline(
    net: &Network,
    x0: &DVector<f64>,
    d: f64,
    horizon: usize,
    budget: f64,
    cfg: &BudgetOptimalConfig,
) -> Result<BudgetOptimalResult> {
    if !(budget >= 0.0) {
        return Err(Error::InvalidParams(format!("budget = {budget} must be nonnegative")));
    }
    if x0.len() != net.n() {
        return Err(Error::DimensionMismatch { expected: net.n(), got: x0.len() });
    }
    let h = net.h();
    let v = net.v();
    let n = net.n();
    let upper = h.map(|hj| 1.0 / hj);

    let schedule = plan_for_budget(net, x0, d, horizon, budget)?;
    let mut seed = Vec::with_capacity(horizon);
    let mut spent = 0.0;
    for k in 0..horizon {
        let u = exponential_control(&schedule, k, &h);
        if spent + u.sum() > budget {
            break;
        }
        spent += u.sum();
        seed.push(u);
    }
    seed.resize(horizon, DVector::zeros(n));

    let mut us = seed;
    let mut xs = rollout(x0, &us, v, &h, d);
    let seed_loss = terminal_loss(&xs, d);
    let mut loss = seed_loss;
    let mut step_size = cfg.step_size;
    let mut converged = horizon == 0;
    let mut iterations = 0;
    while iterations < cfg.max_iter && !converged {
        iterations += 1;
        let grads = sequence_gradient(&xs, &us, v, &h, d);
        let mut s = step_size;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<_> = us.iter().zip(&grads).map(|(u, g)| u - g * s).collect();
            let cand = project_sequence(&cand, &upper, budget);
            let cxs = rollout(x0, &cand, v, &h, d);
            let l = terminal_loss(&cxs, d);
            if l < loss {
                accepted = Some((cand, cxs, l));
                break;
            }
            s *= 0.5;
        }
        match accepted {
            Some((cand, cxs, l)) => {
                converged = loss - l <= cfg.tol * loss;
                us = cand;
                xs = cxs;
                loss = l;
                step_size = (2.0 * s).min(cfg.step_size * 1e6);
            }
            None => converged = true,
        }
    }

    let mut state = OpinionState::new(x0.clone())?;
    let mut traj = Trajectory::start(x0.clone(), d);
    for u in us {
        state = step(&state, &u, net, d)?;
        traj.push(u, state.x.clone());
    }
    Ok(BudgetOptimalResult {
        trajectory: traj,
        loss,
        seed_loss,
        iterations,
        converged,
    })
}
