//! Accuracy-versus-budget feasibility for exponential-rate schedules.
//!
//! For `u_i(t) = a·bᵗ/h_i` over a horizon `T`, both the terminal error bound
//! and the cumulative cost are driven by the same progress term
//! `G(a, b) = a(1 − bᵀ)/(1 − b)`:
//!
//! ```text
//! ‖x(T) − d‖∞ ≤ exp(−G)·‖x(0) − d‖∞        c_u(T) = G·S
//! ```
//!
//! so a schedule meets accuracy `ε` within budget `C_max` iff
//! `log(‖x(0) − d‖∞/ε) ≤ G ≤ C_max/S`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{exponential_control, RateSchedule};
use crate::dynamics::simulate;
use crate::error::{Error, Result};
use crate::network::Network;

pub const B_GRID_POINTS: usize = 64;
pub const B_GRID_MIN: f64 = 1e-4;
pub const B_GRID_MAX: f64 = 1.0 - 1e-4;
pub const BISECTION_TOL: f64 = 1e-10;
pub const BISECTION_MAX_ITER: usize = 200;
pub const CERTIFICATE_TOL: f64 = 1e-9;
/// Largest `a` handed out; keeps `r(t) < 1` strictly.
pub const A_CAP: f64 = 1.0 - 1e-9;
/// `a` used when no progress is required (`ε ≥ ‖x(0) − d‖∞`).
pub const A_FLOOR: f64 = 1e-9;

/// `S` in `c_u(T) = G·S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// `S = Σ_i 1/h_i`
    #[default]
    NonUniform,
    /// `S = n/h_max`
    Uniform,
}

pub fn cost_weight(h: &DVector<f64>, mode: CostMode) -> f64 {
    match mode {
        CostMode::NonUniform => h.iter().map(|hi| 1.0 / hi).sum(),
        CostMode::Uniform => h.len() as f64 / h.max(),
    }
}

/// `(1 − bᵀ)/(1 − b)`, continuous at `b = 1` where it equals `T`.
pub fn geometric_sum(b: f64, horizon: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    let t = horizon as f64;
    if b == 1.0 {
        return t;
    }
    let one_minus_b = 1.0 - b;
    -(t * (-one_minus_b).ln_1p()).exp_m1() / one_minus_b
}

/// `G = a(1 − bᵀ)/(1 − b)`.
pub fn progress(schedule: &RateSchedule, horizon: usize) -> f64 {
    schedule.a() * geometric_sum(schedule.b(), horizon)
}

/// `exp(−a(1 − bᵀ)/(1 − b))·x0_err`.
pub fn error_bound(schedule: &RateSchedule, horizon: usize, x0_err: f64) -> f64 {
    (-progress(schedule, horizon)).exp() * x0_err
}

/// `T → ∞` limit `exp(−a/(1 − b))·x0_err`.
pub fn error_bound_limit(schedule: &RateSchedule, x0_err: f64) -> f64 {
    (-schedule.a() / (1.0 - schedule.b())).exp() * x0_err
}

/// `a(1 − bᵀ)/(1 − b)·S`.
pub fn cost_of_schedule(schedule: &RateSchedule, horizon: usize, cost_weight: f64) -> f64 {
    progress(schedule, horizon) * cost_weight
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityProblem {
    pub horizon: usize,
    pub eps: f64,
    pub x0_err: f64,
    pub budget: f64,
    pub cost_weight: f64,
}

impl FeasibilityProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(what, "must be positive and finite"));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps");
        }
        if !(self.x0_err > 0.0 && self.x0_err <= 1.0) {
            return Err(Error::config("x0_err", "must lie in (0, 1]"));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return bad("budget");
        }
        if !(self.cost_weight > 0.0 && self.cost_weight.is_finite()) {
            return bad("cost_weight");
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        Ok(())
    }

    /// `log(x0_err/ε)`, the progress the accuracy target demands.
    pub fn required_progress(&self) -> f64 {
        (self.x0_err / self.eps).ln()
    }

    /// `C_max/S`, the progress the budget pays for.
    pub fn affordable_progress(&self) -> f64 {
        self.budget / self.cost_weight
    }
}

/// `ε ≥ x0_err·exp(−C_max/S)`.
pub fn check_condition1(problem: &FeasibilityProblem) -> bool {
    problem.eps >= problem.x0_err * (-problem.affordable_progress()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleReason {
    /// Budget cannot pay for the required accuracy at any horizon.
    Condition1,
    /// The horizon is too short for the required progress with `a < 1`.
    Horizon,
}

/// Both sides of `C_max/S ≥ G ≥ log(x0_err/ε)` evaluated at the returned
/// schedule, plus the derived bound and cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub progress: f64,
    pub required: f64,
    pub affordable: f64,
    pub error_bound: f64,
    pub cost: f64,
    /// `(C_max/S)(1 − b)/(1 − bᵀ) ≤ 1`: every `a` in the admissible interval
    /// is below one.
    pub upper_below_one: bool,
}

impl Certificate {
    pub fn holds(&self) -> bool {
        self.progress >= self.required - CERTIFICATE_TOL
            && self.progress <= self.affordable + CERTIFICATE_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub schedule: Option<RateSchedule>,
    pub certificate: Option<Certificate>,
    pub infeasible_reason: Option<InfeasibleReason>,
}

impl FeasibilityResult {
    fn infeasible(reason: InfeasibleReason) -> Self {
        FeasibilityResult {
            feasible: false,
            schedule: None,
            certificate: None,
            infeasible_reason: Some(reason),
        }
    }
}

pub fn certificate(problem: &FeasibilityProblem, schedule: &RateSchedule) -> Certificate {
    let g = progress(schedule, problem.horizon);
    let geom = geometric_sum(schedule.b(), problem.horizon);
    Certificate {
        progress: g,
        required: problem.required_progress(),
        affordable: problem.affordable_progress(),
        error_bound: (-g).exp() * problem.x0_err,
        cost: g * problem.cost_weight,
        upper_below_one: problem.affordable_progress() / geom <= 1.0,
    }
}

pub fn b_grid() -> Vec<f64> {
    let ratio = (B_GRID_MAX / B_GRID_MIN).ln();
    (0..B_GRID_POINTS)
        .map(|k| B_GRID_MIN * (ratio * k as f64 / (B_GRID_POINTS - 1) as f64).exp())
        .collect()
}

/// Smallest admissible `a` at `b`, or `None` if it would reach `A_CAP`.
fn min_cost_a(problem: &FeasibilityProblem, b: f64) -> Option<f64> {
    let geom = geometric_sum(b, problem.horizon);
    let required = problem.required_progress();
    let a = if required <= 0.0 {
        A_FLOOR.min(0.5 * problem.affordable_progress() / geom)
    } else {
        required / geom
    };
    (a > 0.0 && a <= A_CAP).then_some(a)
}

/// Minimum-cost schedule meeting accuracy `ε` within `C_max` over `T` steps.
///
/// Scans `b` over a geometric grid and takes the smallest `b` where the
/// lower end of the admissible `a` interval is below one; the cost there is
/// `max(log(x0_err/ε), 0)·S` regardless of `b`. If the grid misses, bisects
/// `log(x0_err/ε) − A_CAP·(1 − bᵀ)/(1 − b)` for the boundary `b`.
pub fn solve_schedule(problem: &FeasibilityProblem) -> Result<FeasibilityResult> {
    problem.validate()?;
    if !check_condition1(problem) {
        return Ok(FeasibilityResult::infeasible(InfeasibleReason::Condition1));
    }
    let grid = b_grid();
    let found = grid
        .iter()
        .find_map(|&b| min_cost_a(problem, b).map(|a| (a, b)));
    let (a, b) = match found {
        Some(ab) => ab,
        None => {
            let required = problem.required_progress();
            if required >= A_CAP * problem.horizon as f64 {
                return Ok(FeasibilityResult::infeasible(InfeasibleReason::Horizon));
            }
            let gap = |b: f64| required - A_CAP * geometric_sum(b, problem.horizon);
            let mut lo = *grid.last().expect("non-empty grid");
            let mut hi = 1.0 - 1e-12;
            if !(gap(lo) > 0.0 && gap(hi) < 0.0) {
                return Err(Error::NumericFailure(format!(
                    "boundary polynomial not bracketed on [{lo}, {hi}]"
                )));
            }
            let mut iter = 0;
            while hi - lo > BISECTION_TOL {
                if iter == BISECTION_MAX_ITER {
                    return Err(Error::NumericFailure(
                        "bisection on schedule boundary did not converge".into(),
                    ));
                }
                let mid = 0.5 * (lo + hi);
                if gap(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                iter += 1;
            }
            let a = min_cost_a(problem, hi).ok_or_else(|| {
                Error::NumericFailure("bisection endpoint left the admissible interval".into())
            })?;
            (a, hi)
        }
    };
    let schedule = RateSchedule::new(a, b)?;
    let cert = certificate(problem, &schedule);
    if !cert.holds() {
        return Err(Error::NumericFailure(format!(
            "certificate failed: progress {} outside [{}, {}]",
            cert.progress, cert.required, cert.affordable
        )));
    }
    Ok(FeasibilityResult {
        feasible: true,
        schedule: Some(schedule),
        certificate: Some(cert),
        infeasible_reason: None,
    })
}

/// Schedule grid scanned by [`plan_for_budget`].
pub fn planning_grid() -> Vec<(f64, f64)> {
    let levels: Vec<f64> = (1..=19)
        .map(|k| k as f64 * 0.05)
        .chain([0.99, 0.999])
        .collect();
    let mut out = Vec::with_capacity(levels.len() * levels.len());
    for &a in &levels {
        for &b in &levels {
            out.push((a, b));
        }
    }
    out
}

/// Best exponential schedule for a fixed budget when the network is known:
/// every `(a, b)` of [`planning_grid`] is simulated with budget halting and
/// the one with the smallest terminal `‖x − d‖∞` wins (first on ties).
pub fn plan_for_budget(
    net: &Network,
    x0: &DVector<f64>,
    d: f64,
    horizon: usize,
    budget: f64,
) -> Result<RateSchedule> {
    let h = net.h();
    let mut best: Option<(f64, RateSchedule)> = None;
    for (a, b) in planning_grid() {
        let schedule = RateSchedule::new(a, b)?;
        let mut policy = |k: usize, _x: &DVector<f64>| Ok(exponential_control(&schedule, k, &h));
        let traj = simulate(net, x0, d, &mut policy, horizon, Some(budget))?;
        let err = traj.final_error();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, schedule));
        }
    }
    Ok(best.expect("planning grid is non-empty").1)
}
