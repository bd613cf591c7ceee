//! Two-phase online control: alternate persistently exciting exploration
//! (which drives the estimator) with capped analytic exploitation, shrinking
//! the exploration neighbourhood each cycle.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{exploitation_control, pe_control, RateSchedule, ThetaCap};
use crate::dynamics::{deviation_inf, step, OpinionState, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::{
    self, build_regressor, verify_pe, EstimatorState, EstimatorTrace, TraceRow,
};
use crate::harness::emit::fmt_f64;
use crate::network::Network;

/// Which clock drives the exploitation rate `r = a·b^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateClock {
    /// `k` counts steps since the current exploitation phase began.
    #[default]
    Phase,
    /// `k` is the global time index.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineParams {
    /// Estimator gain; `None` means `1/β²`.
    pub psi: Option<f64>,
    /// Initial PE level; `None` picks it so that `δ_0 = ½·min_j|x_j(0) − d|`.
    pub alpha_0: Option<f64>,
    pub gamma: f64,
    pub c_delta: f64,
    pub alpha_min: f64,
    pub a: f64,
    pub b: f64,
    pub rate_clock: RateClock,
    /// Stop once `‖x(t_m) − d‖∞ ≤ tol`.
    pub tol: f64,
    pub max_cycles: usize,
    pub budget: Option<f64>,
    pub horizon: Option<usize>,
    /// Initial estimate; `None` means the midpoint of `[h_min, h_max]`.
    pub theta_hat0: Option<Vec<f64>>,
    pub nu_theta: f64,
    pub nu_x: f64,
    pub max_phase_steps: usize,
}

impl Default for OnlineParams {
    fn default() -> Self {
        OnlineParams {
            psi: None,
            alpha_0: None,
            gamma: 0.5,
            c_delta: 0.5,
            alpha_min: 1e-3,
            a: 0.5,
            b: 0.99,
            rate_clock: RateClock::Phase,
            tol: 1e-4,
            max_cycles: 200,
            budget: None,
            horizon: None,
            theta_hat0: None,
            nu_theta: 1.0,
            nu_x: 1.0,
            max_phase_steps: 100_000,
        }
    }
}

impl OnlineParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma = {} must lie in (0, 1)", self.gamma));
        }
        if !(self.c_delta > 0.0 && self.c_delta <= 0.5) {
            return bad(format!("c_delta = {} must lie in (0, 1/2]", self.c_delta));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < 1.0) {
            return bad(format!("alpha_min = {} must lie in (0, 1)", self.alpha_min));
        }
        RateSchedule::new(self.a, self.b)?;
        if !(self.tol > 0.0) {
            return bad(format!("tol = {} must be positive", self.tol));
        }
        if !(self.nu_theta > 0.0 && self.nu_x > 0.0) {
            return bad("weights nu_theta, nu_x must be positive".into());
        }
        if let Some(c) = self.budget {
            if !(c >= 0.0) {
                return bad(format!("budget = {c} must be nonnegative"));
            }
        }
        if let Some(p) = self.psi {
            if !(p > 0.0) {
                return Err(Error::InvalidGain(format!("psi = {p} must be positive")));
            }
        }
        if let Some(a0) = self.alpha_0 {
            if !(a0 > 0.0) {
                return bad(format!("alpha_0 = {a0} must be positive"));
            }
        }
        if self.max_phase_steps == 0 {
            return bad("max_phase_steps must be positive".into());
        }
        Ok(())
    }
}

/// `(δ_{m+1}, α_{m+1}) = (c_δ·γ·δ_m, λ_V·u^max·δ_{m+1})`.
pub fn update_cycle_schedule(
    delta_m: f64,
    gamma: f64,
    c_delta: f64,
    lambda_v: f64,
    u_max_end: f64,
) -> (f64, f64) {
    let delta = c_delta * gamma * delta_m;
    (delta, lambda_v * u_max_end * delta)
}

/// `𝓔 = ν_θ·R + ν_x·‖x − d‖₂²`
pub fn combined_error(r: f64, x: &DVector<f64>, d: f64, nu_theta: f64, nu_x: f64) -> f64 {
    nu_theta * r + nu_x * x.add_scalar(-d).norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Explore,
    Exploit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineStatus {
    Converged,
    MaxCycles,
    BudgetExhausted,
    HorizonReached,
}

/// One cycle; state-dependent quantities are taken at the cycle start `t_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub m: usize,
    pub t_start: usize,
    pub delta: f64,
    pub alpha: f64,
    pub k_theta: usize,
    pub k_x: usize,
    /// `R(t_m)` against the plant's true parameters.
    pub lyapunov: f64,
    pub err_inf: f64,
    pub err_sq: f64,
    pub combined_error: f64,
    pub cum_cost: f64,
    /// `κ_m` if exploration ran this cycle.
    pub kappa: Option<f64>,
    /// Controller-side bound on `‖θ − θ̂‖₂` after this cycle's exploration.
    pub theta_err_bound: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineResult {
    pub cycles: Vec<CycleRecord>,
    pub trajectory: Trajectory,
    /// Phase and radius `δ_m` in force for each applied control.
    pub step_phases: Vec<Phase>,
    pub step_deltas: Vec<f64>,
    pub estimator_trace: EstimatorTrace,
    pub theta_hat: DVector<f64>,
    pub status: OnlineStatus,
    pub m_star: Option<usize>,
    pub r_min: Option<f64>,
    pub beta: f64,
    pub psi: f64,
    pub gamma: f64,
    pub c_delta: f64,
    pub nu_theta: f64,
    pub nu_x: f64,
}

impl OnlineResult {
    pub fn final_error(&self) -> f64 {
        self.trajectory.final_error()
    }

    pub fn cumulative_cost(&self) -> f64 {
        self.trajectory.cumulative_cost()
    }

    /// Right-hand side of `𝓔_{m+1} ≤ (1−κ_m)^{K_θ}ν_θR(t_m) + n·c_δ²·ν_x‖x(t_m)−d‖²`.
    pub fn cycle_bound(&self, rec: &CycleRecord) -> f64 {
        let n = self.trajectory.n() as f64;
        let shrink = rec.kappa.map_or(1.0, |k| (1.0 - k).powi(rec.k_theta as i32));
        shrink * self.nu_theta * rec.lyapunov + n * self.c_delta.powi(2) * self.nu_x * rec.err_sq
    }

    pub fn csv_header() -> Vec<String> {
        [
            "m",
            "phase_steps_explore",
            "phase_steps_exploit",
            "delta_m",
            "alpha_m",
            "R",
            "err_inf",
            "combined_error",
            "cum_cost",
        ]
        .map(String::from)
        .to_vec()
    }

    pub fn write_cycles_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header())?;
        for c in &self.cycles {
            w.write_record([
                c.m.to_string(),
                c.k_theta.to_string(),
                c.k_x.to_string(),
                fmt_f64(c.delta),
                fmt_f64(c.alpha),
                fmt_f64(c.lyapunov),
                fmt_f64(c.err_inf),
                fmt_f64(c.combined_error),
                fmt_f64(c.cum_cost),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<cycle csv>", e))?;
        Ok(())
    }
}

/// A-priori `‖θ − θ̂‖₂` bound from the known range `[h_min, h_max]`.
pub fn prior_error_bound(theta_hat: &DVector<f64>, h_min: f64, h_max: f64) -> f64 {
    theta_hat
        .iter()
        .map(|t| (t - h_min).max(h_max - t).max(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn min_gap(x: &DVector<f64>, d: f64) -> f64 {
    x.iter().fold(f64::INFINITY, |m, v| m.min((v - d).abs()))
}

fn initial_estimate(net: &Network, given: Option<&[f64]>) -> Result<DVector<f64>> {
    let n = net.n();
    let (lo, hi) = (net.params.h_min, net.params.h_max);
    match given {
        None => Ok(DVector::from_element(n, 0.5 * (lo + hi))),
        Some(v) if v.len() != n => Err(Error::DimensionMismatch { expected: n, got: v.len() }),
        Some(v) => match v.iter().position(|t| !(lo..=hi).contains(t)) {
            Some(i) => Err(Error::InvalidParams(format!(
                "theta_hat0[{i}] = {} outside [{lo}, {hi}]",
                v[i]
            ))),
            None => Ok(DVector::from_column_slice(v)),
        },
    }
}

enum Halt {
    Budget,
    Horizon,
}

struct Plant<'a> {
    net: &'a Network,
    d: f64,
    state: OpinionState,
    traj: Trajectory,
    phases: Vec<Phase>,
    deltas: Vec<f64>,
    budget: Option<f64>,
    horizon: Option<usize>,
}

impl Plant<'_> {
    fn x(&self) -> &DVector<f64> {
        &self.state.x
    }

    fn apply(&mut self, u: DVector<f64>, phase: Phase, delta: f64) -> Result<Option<Halt>> {
        if self.horizon.is_some_and(|t| self.state.t >= t) {
            return Ok(Some(Halt::Horizon));
        }
        if self.traj.exceeds_budget(&u, self.budget) {
            self.traj.halted_by_budget = true;
            return Ok(Some(Halt::Budget));
        }
        self.state = step(&self.state, &u, self.net, self.d)?;
        self.traj.push(u, self.state.x.clone());
        self.phases.push(phase);
        self.deltas.push(delta);
        Ok(None)
    }
}

/// Run the two-phase algorithm. The plant uses the network's true `h`; the
/// controller sees only `V`, `λ_V`, `[h_min, h_max]`, `d` and the observed
/// states.
pub fn run_online(
    net: &Network,
    x0: &DVector<f64>,
    d: f64,
    params: &OnlineParams,
) -> Result<OnlineResult> {
    params.validate()?;
    let n = net.n();
    let v = net.v();
    let lambda_v = net.lambda_v();
    let h_max = net.params.h_max;
    let theta_true = net.h();
    let theta_hat0 = initial_estimate(net, params.theta_hat0.as_deref())?;

    let state = OpinionState::new(x0.clone())?;
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if let Some(agent) = x0.iter().position(|xj| (xj - d).abs() == 0.0) {
        return Err(Error::AtTarget { agent });
    }

    let mut err_bound = prior_error_bound(&theta_hat0, net.params.h_min, h_max);
    let mut cap = ThetaCap::from_estimate(&theta_hat0, err_bound, h_max)?;
    let alpha_0 = params
        .alpha_0
        .unwrap_or_else(|| lambda_v * cap.u_max() * 0.5 * min_gap(x0, d));
    let mut alpha = alpha_0;
    let mut delta = alpha / (lambda_v * cap.u_max());

    // Unclipped PE control gives |y_j| = α/λ_V, and α_m ≤ α_0 throughout.
    let beta = estimator::beta_bound(v, alpha_0 / lambda_v);
    let psi = params.psi.unwrap_or(1.0 / (beta * beta));
    let mut est = EstimatorState::new(theta_hat0, psi, beta, h_max)?.with_ground_truth(theta_true);
    let schedule = RateSchedule::new(params.a, params.b)?;

    let mut plant = Plant {
        net,
        d,
        traj: Trajectory::start(x0.clone(), d),
        state,
        phases: Vec::new(),
        deltas: Vec::new(),
        budget: params.budget,
        horizon: params.horizon,
    };
    let mut trace = EstimatorTrace::default();
    let mut cycles = Vec::new();
    let mut m_star = None;
    let mut r_min = None;
    let mut status = OnlineStatus::MaxCycles;

    'cycles: for m in 0..=params.max_cycles {
        let lyapunov = est.lyapunov().expect("ground truth attached");
        let err_sq = plant.x().add_scalar(-d).norm_squared();
        let mut rec = CycleRecord {
            m,
            t_start: plant.state.t,
            delta,
            alpha,
            k_theta: 0,
            k_x: 0,
            lyapunov,
            err_inf: deviation_inf(plant.x(), d),
            err_sq,
            combined_error: combined_error(lyapunov, plant.x(), d, params.nu_theta, params.nu_x),
            cum_cost: plant.traj.cumulative_cost(),
            kappa: None,
            theta_err_bound: err_bound,
        };
        if rec.err_inf <= params.tol {
            cycles.push(rec);
            status = OnlineStatus::Converged;
            break;
        }
        if m == params.max_cycles {
            cycles.push(rec);
            break;
        }
        if m_star.is_none() && alpha <= params.alpha_min {
            m_star = Some(m);
            r_min = Some(lyapunov);
        }

        let mut halt = None;
        if m_star.is_none() {
            let kappa = estimator::kappa(psi, beta, alpha)?;
            rec.kappa = Some(kappa);
            while plant.x().iter().all(|xj| (xj - d).abs() > delta) {
                if rec.k_theta == params.max_phase_steps {
                    return Err(Error::StalledCycle {
                        cycle: m,
                        reason: "exploration exceeded max_phase_steps".into(),
                    });
                }
                let x_prev = plant.x().clone();
                let u = pe_control(&x_prev, d, alpha, lambda_v, &cap)?;
                let reg = build_regressor(&x_prev, &u, d, v)?;
                halt = plant.apply(u, Phase::Explore, delta)?;
                if halt.is_some() {
                    break;
                }
                let report = est.update(&reg, plant.x())?;
                trace.rows.push(TraceRow {
                    t: plant.state.t,
                    theta_hat: est.theta_hat().clone(),
                    pred_err_inf: report.pred_err_inf,
                    lyapunov: report.lyapunov,
                    pe_ok: verify_pe(&reg, alpha, lambda_v).exact,
                    kappa,
                });
                rec.k_theta += 1;
            }
            err_bound *= (1.0 - kappa).powf(rec.k_theta as f64 / 2.0);
            rec.theta_err_bound = err_bound;
            cap = ThetaCap::from_estimate(est.theta_hat(), err_bound, h_max)?;
        }

        if halt.is_none() {
            let floor = params.gamma * delta;
            let t0 = plant.state.t;
            while plant.x().iter().all(|xj| (xj - d).abs() >= floor) {
                if rec.k_x == params.max_phase_steps {
                    return Err(Error::StalledCycle {
                        cycle: m,
                        reason: "exploitation exceeded max_phase_steps".into(),
                    });
                }
                let k = match params.rate_clock {
                    RateClock::Phase => plant.state.t - t0,
                    RateClock::Global => plant.state.t,
                };
                let u = exploitation_control(schedule.rate(k), &cap)?;
                halt = plant.apply(u, Phase::Exploit, delta)?;
                if halt.is_some() {
                    break;
                }
                rec.k_x += 1;
            }
        }

        let progressed = rec.k_theta + rec.k_x > 0;
        cycles.push(rec);
        match halt {
            Some(Halt::Budget) => {
                status = OnlineStatus::BudgetExhausted;
                break 'cycles;
            }
            Some(Halt::Horizon) => {
                status = OnlineStatus::HorizonReached;
                break 'cycles;
            }
            None => {}
        }
        if !progressed && min_gap(plant.x(), d) == 0.0 {
            return Err(Error::StalledCycle {
                cycle: m,
                reason: "a component sits exactly at the target; no phase can run".into(),
            });
        }

        let (delta_next, alpha_next) =
            update_cycle_schedule(delta, params.gamma, params.c_delta, lambda_v, cap.u_max());
        if !(delta_next > 0.0) {
            return Err(Error::StalledCycle {
                cycle: m,
                reason: "neighbourhood radius underflowed".into(),
            });
        }
        delta = delta_next;
        alpha = alpha_next.min(alpha_0);
    }

    Ok(OnlineResult {
        cycles,
        trajectory: plant.traj,
        step_phases: plant.phases,
        step_deltas: plant.deltas,
        estimator_trace: trace,
        theta_hat: est.theta_hat().clone(),
        status,
        m_star,
        r_min,
        beta,
        psi,
        gamma: params.gamma,
        c_delta: params.c_delta,
        nu_theta: params.nu_theta,
        nu_x: params.nu_x,
    })
}

/// Identification-only run: fixed-level PE control with cap `h_max` for up to
/// `steps` steps, stopping early once any agent comes within
/// `δ = α·h_max/λ_V` of the target (where the control would clip).
#[derive(Debug, Clone)]
pub struct IdentificationResult {
    pub trajectory: Trajectory,
    pub trace: EstimatorTrace,
    pub theta_hat: DVector<f64>,
    /// `‖θ − θ̂(t)‖₂` for `t = 0..=steps`.
    pub theta_err_norms: Vec<f64>,
    /// `R(t)` for `t = 0..=steps`.
    pub lyapunov: Vec<f64>,
    /// `‖θ_err(t) − (I − ψFᵀF)θ_err(t−1)‖∞` per update.
    pub recursion_residuals: Vec<f64>,
    pub pe_exact: Vec<bool>,
    pub alpha: f64,
    pub beta: f64,
    pub psi: f64,
    pub kappa: f64,
}

pub fn run_identification(
    net: &Network,
    x0: &DVector<f64>,
    d: f64,
    alpha: f64,
    steps: usize,
    psi: Option<f64>,
    theta_hat0: Option<&[f64]>,
) -> Result<IdentificationResult> {
    let n = net.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParams(format!("alpha = {alpha} must be positive")));
    }
    let v = net.v();
    let lambda_v = net.lambda_v();
    let h_max = net.params.h_max;
    let theta = net.h();
    let cap = ThetaCap::new(DVector::from_element(n, h_max))?;
    let delta = estimator::pe_margin(alpha, lambda_v, cap.u_max());
    let beta = estimator::beta_bound(v, alpha / lambda_v);
    let psi = psi.unwrap_or(1.0 / (beta * beta));
    let kappa = estimator::kappa(psi, beta, alpha)?;

    let theta_hat0 = initial_estimate(net, theta_hat0)?;
    let mut est = EstimatorState::new(theta_hat0, psi, beta, h_max)?.with_ground_truth(theta.clone());
    let mut state = OpinionState::new(x0.clone())?;
    let mut traj = Trajectory::start(x0.clone(), d);
    let mut trace = EstimatorTrace::default();
    let mut errs = vec![(&theta - est.theta_hat()).norm()];
    let mut lyap = vec![est.lyapunov().expect("ground truth attached")];
    let mut residuals = Vec::new();
    let mut pe_exact = Vec::new();

    for _ in 0..steps {
        if !state.x.iter().all(|xj| (xj - d).abs() > delta) {
            break;
        }
        let u = pe_control(&state.x, d, alpha, lambda_v, &cap)?;
        let reg = build_regressor(&state.x, &u, d, v)?;
        state = step(&state, &u, net, d)?;
        traj.push(u, state.x.clone());
        let report = est.update(&reg, &state.x)?;
        let ok = verify_pe(&reg, alpha, lambda_v).exact;
        pe_exact.push(ok);
        residuals.push(report.recursion_residual.expect("ground truth attached"));
        errs.push((&theta - est.theta_hat()).norm());
        lyap.push(report.lyapunov.expect("ground truth attached"));
        trace.rows.push(TraceRow {
            t: state.t,
            theta_hat: est.theta_hat().clone(),
            pred_err_inf: report.pred_err_inf,
            lyapunov: report.lyapunov,
            pe_ok: ok,
            kappa,
        });
    }

    Ok(IdentificationResult {
        trajectory: traj,
        trace,
        theta_hat: est.theta_hat().clone(),
        theta_err_norms: errs,
        lyapunov: lyap,
        recursion_residuals: residuals,
        pe_exact,
        alpha,
        beta,
        psi,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{random_network, AgentParams};
    use nalgebra::DMatrix;

    fn k2(theta: [f64; 2]) -> Network {
        let adj = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let params = AgentParams::with_tight_bounds(vec![0.5, 0.5], theta.to_vec()).unwrap();
        Network::from_adjacency(&adj, params).unwrap()
    }

    #[test]
    fn schedule_update_example() {
        let (dn, an) = update_cycle_schedule(0.2, 0.5, 0.5, 1.0 / 3.0, 2.0);
        assert!((dn - 0.05).abs() < 1e-15);
        assert!((an - 1.0 / 30.0).abs() < 1e-15);
        let (dn, an) = update_cycle_schedule(0.3, 0.999_999, 0.5, 0.4, 1.7);
        assert!((dn / 0.3 - 0.5).abs() < 1e-6);
        assert!((an / dn - 0.4 * 1.7).abs() < 1e-12);
    }

    #[test]
    fn combined_error_examples() {
        let x = DVector::from_element(3, 0.4);
        assert_eq!(combined_error(0.1, &x, 0.4, 2.0, 5.0), 0.2);
        let x = DVector::from_vec(vec![0.2, 0.4]);
        assert!((combined_error(0.1, &x, 0.4, 1.0, 1.0) - 0.14).abs() < 1e-15);
        let e1 = combined_error(0.3, &x, 0.9, 1.5, 0.7);
        let e2 = combined_error(0.3, &x, 0.9, 3.0, 1.4);
        assert!((e2 - 2.0 * e1).abs() < 1e-15);
    }

    #[test]
    fn prior_bound_covers_range() {
        let th = DVector::from_vec(vec![0.4, 0.4]);
        let e = prior_error_bound(&th, 0.25, 0.5);
        assert!((e - (2.0f64 * 0.15 * 0.15).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn two_agent_example_converges() {
        let net = k2([0.5, 0.25]);
        let x0 = DVector::from_vec(vec![0.1, 0.9]);
        let params = OnlineParams {
            theta_hat0: Some(vec![0.4, 0.4]),
            ..OnlineParams::default()
        };
        let res = run_online(&net, &x0, 0.5, &params).unwrap();
        assert_eq!(res.status, OnlineStatus::Converged);
        assert!(res.cycles.len() <= 51);
        let m_star = res.m_star.expect("exploration stops");
        let r_min = res.r_min.unwrap();
        for w in res.cycles.windows(2) {
            assert!(w[1].delta < w[0].delta);
            assert!(w[1].lyapunov <= w[0].lyapunov * (1.0 + 1e-12));
            assert!(w[1].combined_error <= res.cycle_bound(&w[0]) * (1.0 + 1e-9) + 1e-15);
        }
        for c in &res.cycles[m_star..] {
            assert_eq!(c.k_theta, 0);
            assert_eq!(c.lyapunov, r_min);
        }
        let last = res.cycles.last().unwrap();
        assert!((last.combined_error - r_min).abs() < 1e-6);
    }

    #[test]
    fn oracle_estimate_never_moves() {
        let net = k2([0.5, 0.25]);
        let x0 = DVector::from_vec(vec![0.1, 0.9]);
        let params = OnlineParams {
            theta_hat0: Some(vec![0.5, 0.25]),
            ..OnlineParams::default()
        };
        let res = run_online(&net, &x0, 0.5, &params).unwrap();
        assert_eq!(res.status, OnlineStatus::Converged);
        assert_eq!(res.theta_hat.as_slice(), &[0.5, 0.25]);
        assert!(res.cycles.iter().all(|c| c.lyapunov == 0.0));
    }

    #[test]
    fn alpha_min_above_alpha_0_is_pure_exploitation() {
        let net = k2([0.5, 0.25]);
        let x0 = DVector::from_vec(vec![0.1, 0.9]);
        let params = OnlineParams {
            alpha_0: Some(0.01),
            alpha_min: 0.02,
            ..OnlineParams::default()
        };
        let res = run_online(&net, &x0, 0.5, &params).unwrap();
        assert_eq!(res.m_star, Some(0));
        assert!(res.step_phases.iter().all(|p| *p == Phase::Exploit));
        assert_eq!(res.status, OnlineStatus::Converged);
    }

    #[test]
    fn exploration_respects_margin() {
        let (g, p) = random_network(5, 0.4, (0.1, 0.9), (0.2, 0.9), 11).unwrap();
        let net = Network::new(g, p).unwrap();
        let x0 = DVector::from_vec(vec![0.05, 0.1, 0.15, 0.95, 0.9]);
        let res = run_online(&net, &x0, 0.5, &OnlineParams::default()).unwrap();
        for (k, phase) in res.step_phases.iter().enumerate() {
            if *phase == Phase::Explore {
                let x = &res.trajectory.states[k];
                assert!(x.iter().all(|xj| (xj - 0.5).abs() > res.step_deltas[k]));
            }
        }
        assert!(res.estimator_trace.rows.iter().all(|r| r.pe_ok));
    }

    #[test]
    fn budget_halts_run() {
        let net = k2([0.5, 0.25]);
        let x0 = DVector::from_vec(vec![0.1, 0.9]);
        let params = OnlineParams {
            budget: Some(0.5),
            ..OnlineParams::default()
        };
        let res = run_online(&net, &x0, 0.5, &params).unwrap();
        assert_eq!(res.status, OnlineStatus::BudgetExhausted);
        assert!(res.cumulative_cost() <= 0.5);
    }

    #[test]
    fn component_at_target_rejected() {
        let net = k2([0.5, 0.25]);
        let x0 = DVector::from_vec(vec![0.5, 0.9]);
        assert!(matches!(
            run_online(&net, &x0, 0.5, &OnlineParams::default()),
            Err(Error::AtTarget { agent: 0 })
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let net = k2([0.5, 0.25]);
        let x0 = DVector::from_vec(vec![0.1, 0.9]);
        for p in [
            OnlineParams { gamma: 1.0, ..Default::default() },
            OnlineParams { c_delta: 0.6, ..Default::default() },
            OnlineParams { b: 1.0, ..Default::default() },
        ] {
            assert!(run_online(&net, &x0, 0.5, &p).is_err());
        }
    }

    #[test]
    fn identification_contracts() {
        let (g, p) = random_network(4, 0.5, (0.1, 0.8), (0.2, 0.9), 2).unwrap();
        let net = Network::new(g, p).unwrap();
        let x0 = DVector::from_vec(vec![0.9, 0.95, 0.85, 0.9]);
        let res = run_identification(&net, &x0, 0.1, 0.05, 50, None, None).unwrap();
        assert!(res.pe_exact.iter().all(|ok| *ok));
        for w in res.lyapunov.windows(2) {
            assert!(w[1] <= (1.0 - res.kappa) * w[0] * (1.0 + 1e-9) + 1e-18);
        }
        assert!(res.recursion_residuals.iter().all(|r| *r < 1e-12));
    }

    #[test]
    fn cycle_csv_header() {
        let net = k2([0.5, 0.25]);
        let x0 = DVector::from_vec(vec![0.1, 0.9]);
        let res = run_online(&net, &x0, 0.5, &OnlineParams::default()).unwrap();
        let mut buf = Vec::new();
        res.write_cycles_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "m,phase_steps_explore,phase_steps_exploit,delta_m,alpha_m,R,err_inf,combined_error,cum_cost"
        );
        assert_eq!(text.lines().count(), res.cycles.len() + 1);
    }
}
