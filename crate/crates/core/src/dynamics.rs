//! Controlled opinion dynamics `x(t) = V[(I − HU(t))x(t−1) + HU(t)d]`,
//! trajectories and cost accounting.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::harness::emit::fmt_f64;
use crate::network::Network;

/// Slack on `h_i·u_i ≤ 1` and on the `[0,1]` box before a value is an error.
pub const BOX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OpinionState {
    pub x: DVector<f64>,
    pub t: usize,
}

impl OpinionState {
    pub fn new(x: DVector<f64>) -> Result<Self> {
        check_box(&x)?;
        Ok(OpinionState { x, t: 0 })
    }

    pub fn error_inf(&self, d: f64) -> f64 {
        deviation_inf(&self.x, d)
    }
}

pub fn deviation_inf(x: &DVector<f64>, d: f64) -> f64 {
    x.iter().fold(0.0, |m, v| m.max((v - d).abs()))
}

fn check_box(x: &DVector<f64>) -> Result<()> {
    match x.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(agent) => Err(Error::StateOutOfBox { agent, value: x[agent] }),
        None => Ok(()),
    }
}

fn check_target(d: f64) -> Result<()> {
    if (0.0..=1.0).contains(&d) {
        Ok(())
    } else {
        Err(Error::InvalidRange(format!("target d = {d} outside [0, 1]")))
    }
}

/// `u ≥ 0` and `0 ≤ h_i·u_i ≤ 1` (with [`BOX_TOL`] slack on the upper end).
pub fn check_admissible(u: &DVector<f64>, h: &DVector<f64>) -> Result<()> {
    if u.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            got: u.len(),
        });
    }
    for (agent, (ui, hi)) in u.iter().zip(h.iter()).enumerate() {
        let value = ui * hi;
        if !ui.is_finite() || *ui < 0.0 || value > 1.0 + BOX_TOL {
            return Err(Error::InadmissibleControl { agent, value });
        }
    }
    Ok(())
}

/// One step of the controlled dynamics against the network's true `H`.
pub fn step(state: &OpinionState, u: &DVector<f64>, net: &Network, d: f64) -> Result<OpinionState> {
    let n = net.n();
    if state.x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: state.x.len(),
        });
    }
    check_target(d)?;
    let h = net.h();
    check_admissible(u, &h)?;
    let blend = DVector::from_fn(n, |i, _| {
        let w = (h[i] * u[i]).min(1.0);
        (1.0 - w) * state.x[i] + w * d
    });
    let mut x = net.v() * blend;
    for (agent, v) in x.iter_mut().enumerate() {
        if *v < -BOX_TOL || *v > 1.0 + BOX_TOL || !v.is_finite() {
            return Err(Error::StateOutOfBox { agent, value: *v });
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(OpinionState { x, t: state.t + 1 })
}

/// `η = min_i h_i·u_i`; the pre-mixing blend shrinks `‖x − d‖∞` by at least
/// `1 − η`.
pub fn contraction_factor(u: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
    check_admissible(u, h)?;
    let mut eta = f64::INFINITY;
    for (agent, (ui, hi)) in u.iter().zip(h.iter()).enumerate() {
        let p = ui * hi;
        if p <= 0.0 {
            return Err(Error::ZeroControl { agent });
        }
        eta = eta.min(p);
    }
    Ok(eta.min(1.0))
}

/// A per-step control policy. `k` is the zero-based index of the transition
/// being taken, i.e. the control produces `x(k+1)` from `x(k)`.
pub trait Policy {
    fn control(&mut self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> Policy for F
where
    F: FnMut(usize, &DVector<f64>) -> Result<DVector<f64>>,
{
    fn control(&mut self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self(k, x)
    }
}

/// `controls[k]` is the input that produced `states[k + 1]`; per-step vectors
/// (`step_costs`, `cum_costs`, `errors`) are indexed like `states` with a
/// zero entry for `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub target: f64,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub step_costs: Vec<f64>,
    pub cum_costs: Vec<f64>,
    pub errors: Vec<f64>,
    pub halted_by_budget: bool,
}

impl Trajectory {
    pub fn start(x0: DVector<f64>, d: f64) -> Self {
        let err = deviation_inf(&x0, d);
        Trajectory {
            target: d,
            states: vec![x0],
            controls: Vec::new(),
            step_costs: vec![0.0],
            cum_costs: vec![0.0],
            errors: vec![err],
            halted_by_budget: false,
        }
    }

    /// Number of applied transitions.
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds x(0)")
    }

    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("trajectory holds x(0)")
    }

    pub fn cumulative_cost(&self) -> f64 {
        *self.cum_costs.last().expect("trajectory holds x(0)")
    }

    pub fn n(&self) -> usize {
        self.states[0].len()
    }

    pub(crate) fn push(&mut self, u: DVector<f64>, x: DVector<f64>) {
        let c = u.sum();
        let cum = self.cumulative_cost() + c;
        self.errors.push(deviation_inf(&x, self.target));
        self.step_costs.push(c);
        self.cum_costs.push(cum);
        self.controls.push(u);
        self.states.push(x);
    }

    /// Would applying `u` take the cumulative cost above `budget`?
    pub fn exceeds_budget(&self, u: &DVector<f64>, budget: Option<f64>) -> bool {
        budget.is_some_and(|cap| self.cumulative_cost() + u.sum() > cap)
    }

    pub fn csv_header(n: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("x_{i}")));
        h.extend((1..=n).map(|i| format!("u_{i}")));
        h.extend(["step_cost", "cum_cost", "err_inf"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.n();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(n))?;
        let zero = DVector::zeros(n);
        for (t, x) in self.states.iter().enumerate() {
            let u = if t == 0 { &zero } else { &self.controls[t - 1] };
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            row.extend(u.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(self.step_costs[t]));
            row.push(fmt_f64(self.cum_costs[t]));
            row.push(fmt_f64(self.errors[t]));
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }
}

/// Run `policy` for up to `horizon` steps. When the next control would push
/// the cumulative cost above `budget`, that step is not applied and the run
/// stops.
pub fn simulate<P: Policy + ?Sized>(
    net: &Network,
    x0: &DVector<f64>,
    d: f64,
    policy: &mut P,
    horizon: usize,
    budget: Option<f64>,
) -> Result<Trajectory> {
    check_target(d)?;
    let mut state = OpinionState::new(x0.clone())?;
    if state.x.len() != net.n() {
        return Err(Error::DimensionMismatch {
            expected: net.n(),
            got: state.x.len(),
        });
    }
    let mut traj = Trajectory::start(x0.clone(), d);
    for k in 0..horizon {
        let u = policy.control(k, &state.x)?;
        if traj.exceeds_budget(&u, budget) {
            traj.halted_by_budget = true;
            break;
        }
        state = step(&state, &u, net, d)?;
        traj.push(u, state.x.clone());
    }
    Ok(traj)
}

/// `‖x − d‖∞` bound `Π(1 − η(s))·‖x(0) − d‖∞` for a recorded trajectory.
pub fn contraction_envelope(traj: &Trajectory, h: &DVector<f64>) -> Result<Vec<f64>> {
    let mut env = vec![traj.errors[0]];
    let mut prod = 1.0;
    for u in &traj.controls {
        prod *= 1.0 - contraction_factor(u, h)?;
        env.push(prod * traj.errors[0]);
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{random_network, AgentParams, MixingMatrix, Network, SocialGraph};
    use nalgebra::DMatrix;

    fn scalar_net(h: f64) -> Network {
        Network {
            graph: crate::network::build_laplacian(&DMatrix::zeros(1, 1)).unwrap(),
            params: AgentParams::with_tight_bounds(vec![0.0], vec![h]).unwrap(),
            mixing: MixingMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0)).unwrap(),
        }
    }

    fn net(seed: u64) -> Network {
        let (g, p): (SocialGraph, AgentParams) =
            random_network(6, 0.3, (0.1, 0.9), (0.2, 0.9), seed).unwrap();
        Network::new(g, p).unwrap()
    }

    #[test]
    fn scalar_step_by_hand() {
        let n = scalar_net(0.5);
        let s = OpinionState::new(DVector::from_element(1, 0.2)).unwrap();
        let next = step(&s, &DVector::from_element(1, 1.0), &n, 1.0).unwrap();
        assert!((next.x[0] - 0.6).abs() < 1e-15);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn target_is_an_equilibrium() {
        let n = net(3);
        let s = OpinionState::new(DVector::from_element(6, 0.7)).unwrap();
        let u = n.h().map(|h| 0.37 / h);
        let next = step(&s, &u, &n, 0.7).unwrap();
        assert!((next.x.add_scalar(-0.7)).amax() < 1e-12);
    }

    #[test]
    fn zero_control_is_consensus() {
        let n = net(4);
        let x = DVector::from_fn(6, |i, _| i as f64 / 6.0);
        let s = OpinionState::new(x.clone()).unwrap();
        let next = step(&s, &DVector::zeros(6), &n, 0.9).unwrap();
        assert!((next.x - n.v() * x).amax() < 1e-15);
    }

    #[test]
    fn inadmissible_control_rejected() {
        let n = scalar_net(0.5);
        let s = OpinionState::new(DVector::from_element(1, 0.2)).unwrap();
        assert!(matches!(
            step(&s, &DVector::from_element(1, 2.5), &n, 1.0),
            Err(Error::InadmissibleControl { .. })
        ));
        assert!(matches!(
            step(&s, &DVector::from_element(1, -0.1), &n, 1.0),
            Err(Error::InadmissibleControl { .. })
        ));
    }

    #[test]
    fn contraction_factor_examples() {
        let h = DVector::from_vec(vec![0.5, 0.25]);
        let eta = contraction_factor(&DVector::from_vec(vec![1.0, 2.0]), &h).unwrap();
        assert!((eta - 0.5).abs() < 1e-15);
        let eta = contraction_factor(&DVector::from_vec(vec![2.0, 4.0]), &h).unwrap();
        assert_eq!(eta, 1.0);
        assert!(matches!(
            contraction_factor(&DVector::from_vec(vec![1.0, 0.0]), &h),
            Err(Error::ZeroControl { agent: 1 })
        ));
    }

    #[test]
    fn zero_controller_costs_nothing() {
        let n = net(5);
        let x0 = DVector::from_fn(6, |i, _| (i as f64 * 0.13) % 1.0);
        let mut zero = |_k: usize, _x: &DVector<f64>| Ok(DVector::zeros(6));
        let traj = simulate(&n, &x0, 0.5, &mut zero, 10, None).unwrap();
        assert_eq!(traj.steps(), 10);
        assert_eq!(traj.cumulative_cost(), 0.0);
        let mut x = x0.clone();
        for k in 0..10 {
            x = n.v() * x;
            assert!((&traj.states[k + 1] - &x).amax() < 1e-14);
        }
    }

    #[test]
    fn scalar_exponential_cost_matches_closed_form() {
        let n = scalar_net(0.5);
        let (a, b) = (0.5_f64, 0.5_f64);
        let mut pol = |k: usize, _x: &DVector<f64>| Ok(DVector::from_element(1, a * b.powi(k as i32) / 0.5));
        let traj = simulate(&n, &DVector::from_element(1, 0.1), 0.9, &mut pol, 12, None).unwrap();
        let closed = a * (1.0 - b.powi(12)) / (1.0 - b) * 2.0;
        assert!((traj.cumulative_cost() - closed).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_applies_no_control() {
        let n = net(6);
        let x0 = DVector::from_element(6, 0.1);
        let mut pol = |_k: usize, _x: &DVector<f64>| Ok(DVector::from_element(6, 0.5));
        let traj = simulate(&n, &x0, 0.9, &mut pol, 10, Some(0.0)).unwrap();
        assert_eq!(traj.steps(), 0);
        assert!(traj.halted_by_budget);
        assert_eq!(traj.states.len(), 1);
    }

    #[test]
    fn budget_rejects_overshooting_step() {
        let n = net(6);
        let x0 = DVector::from_element(6, 0.1);
        let mut pol = |_k: usize, _x: &DVector<f64>| Ok(DVector::from_element(6, 0.5));
        let traj = simulate(&n, &x0, 0.9, &mut pol, 10, Some(7.0)).unwrap();
        assert_eq!(traj.steps(), 2);
        assert!((traj.cumulative_cost() - 6.0).abs() < 1e-15);
    }

    #[test]
    fn csv_has_declared_columns() {
        let n = scalar_net(0.5);
        let mut pol = |_k: usize, _x: &DVector<f64>| Ok(DVector::from_element(1, 1.0));
        let traj = simulate(&n, &DVector::from_element(1, 0.2), 1.0, &mut pol, 2, None).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_1,u_1,step_cost,cum_cost,err_inf");
        assert_eq!(text.lines().count(), 4);
    }
}
