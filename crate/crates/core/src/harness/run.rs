//! Experiment execution and parallel sweeps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{run_budget_optimal_baseline, run_gradient_baseline};
use crate::control::{exponential_control, uniform_control, RateSchedule};
use crate::dynamics::{deviation_inf, simulate, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::EstimatorTrace;
use crate::feasibility::{
    cost_weight, plan_for_budget, solve_schedule, CostMode, FeasibilityProblem, FeasibilityResult,
};
use crate::network::Network;
use crate::online::{run_identification, run_online, OnlineParams, OnlineResult, OnlineStatus};

use super::config::{ControllerConfig, ExperimentConfig};
use super::emit::ExperimentRecord;

/// Outcome of one controller run, before anything is written.
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub status: &'static str,
    pub online: Option<OnlineResult>,
    pub estimator: Option<EstimatorTrace>,
}

fn feasibility_problem(
    cfg: &ExperimentConfig,
    net: &Network,
    x0: &DVector<f64>,
    eps: f64,
    mode: CostMode,
) -> Result<FeasibilityProblem> {
    let budget = cfg
        .budget
        .ok_or_else(|| Error::config("budget", "feasibility needs a budget"))?;
    Ok(FeasibilityProblem {
        horizon: cfg.horizon,
        eps,
        x0_err: deviation_inf(x0, cfg.target),
        budget,
        cost_weight: cost_weight(&net.h(), mode),
    })
}

fn analytic_schedule(
    cfg: &ExperimentConfig,
    net: &Network,
    x0: &DVector<f64>,
    a: Option<f64>,
    b: Option<f64>,
    eps: Option<f64>,
    mode: CostMode,
) -> Result<RateSchedule> {
    if let (Some(a), Some(b)) = (a, b) {
        return RateSchedule::new(a, b).map_err(|e| Error::config("controller.a", e.to_string()));
    }
    if let Some(eps) = eps {
        let problem = feasibility_problem(cfg, net, x0, eps, mode)?;
        let res = solve_schedule(&problem)?;
        return res.schedule.ok_or_else(|| {
            Error::config(
                "controller.eps",
                format!("infeasible: {:?}", res.infeasible_reason.expect("reason set")),
            )
        });
    }
    let budget = cfg.budget.expect("validated: budget present");
    plan_for_budget(net, x0, cfg.target, cfg.horizon, budget)
}

fn budget_status(traj: &Trajectory) -> &'static str {
    if traj.halted_by_budget {
        "budget_exhausted"
    } else {
        "completed"
    }
}

/// Run the configured controller without writing any output.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let net = cfg.build_network()?;
    let x0 = cfg.initial_state(net.n())?;
    let d = cfg.target;
    let h = net.h();
    let plain = |trajectory: Trajectory| RunOutput {
        status: budget_status(&trajectory),
        trajectory,
        online: None,
        estimator: None,
    };
    match &cfg.controller {
        ControllerConfig::KnownAnalytic { a, b, eps, cost_mode } => {
            let schedule = analytic_schedule(cfg, &net, &x0, *a, *b, *eps, *cost_mode)?;
            let traj = match cost_mode {
                CostMode::NonUniform => {
                    let mut pol = |k: usize, _x: &DVector<f64>| Ok(exponential_control(&schedule, k, &h));
                    simulate(&net, &x0, d, &mut pol, cfg.horizon, cfg.budget)?
                }
                CostMode::Uniform => {
                    let h_max = h.max();
                    let mut pol = |k: usize, _x: &DVector<f64>| {
                        Ok(DVector::from_element(h.len(), uniform_control(schedule.rate(k), h_max)?))
                    };
                    simulate(&net, &x0, d, &mut pol, cfg.horizon, cfg.budget)?
                }
            };
            Ok(plain(traj))
        }
        ControllerConfig::AdaptiveOnline { params } => {
            let params = OnlineParams {
                budget: cfg.budget,
                horizon: Some(cfg.horizon),
                ..params.clone()
            };
            let res = run_online(&net, &x0, d, &params)?;
            let status = match res.status {
                OnlineStatus::Converged => "converged",
                OnlineStatus::MaxCycles => "max_cycles",
                OnlineStatus::BudgetExhausted => "budget_exhausted",
                OnlineStatus::HorizonReached => "horizon_reached",
            };
            Ok(RunOutput {
                trajectory: res.trajectory.clone(),
                status,
                estimator: Some(res.estimator_trace.clone()),
                online: Some(res),
            })
        }
        ControllerConfig::GradientBaseline { params } => {
            let budget = cfg.budget.unwrap_or(f64::INFINITY);
            Ok(plain(run_gradient_baseline(&net, &x0, d, cfg.horizon, budget, params)?))
        }
        ControllerConfig::BudgetOptimal { params } => {
            let budget = cfg.budget.expect("validated: budget present");
            let res = run_budget_optimal_baseline(&net, &x0, d, cfg.horizon, budget, params)?;
            let status = if res.converged { "completed" } else { "not_converged" };
            Ok(RunOutput {
                trajectory: res.trajectory,
                status,
                online: None,
                estimator: None,
            })
        }
        ControllerConfig::PeProbe { alpha, psi, theta_hat0 } => {
            let res = run_identification(&net, &x0, d, *alpha, cfg.horizon, *psi, theta_hat0.as_deref())?;
            Ok(RunOutput {
                trajectory: res.trajectory,
                status: "completed",
                online: None,
                estimator: Some(res.trace),
            })
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn default_run_id(cfg: &ExperimentConfig, hash: &str) -> String {
    format!("{}-{}", cfg.name.as_deref().unwrap_or("run"), &hash[..12])
}

/// Run one experiment; with `out_dir` the per-step trajectory and, where
/// applicable, cycle and estimator traces are written as
/// `<run_id>.{trajectory,cycles,estimator}.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, run_id: Option<&str>) -> Result<ExperimentRecord> {
    let hash = cfg.hash();
    let run_id = run_id.map(String::from).unwrap_or_else(|| default_run_id(cfg, &hash));
    let out = execute(cfg)?;
    let mut record = ExperimentRecord {
        run_id: run_id.clone(),
        config_hash: hash,
        controller: cfg.controller.name().to_string(),
        budget: cfg.budget,
        final_err_inf: out.trajectory.final_error(),
        cumulative_cost: out.trajectory.cumulative_cost(),
        steps: out.trajectory.steps(),
        status: out.status.to_string(),
        trajectory_file: None,
        cycles_file: None,
        estimator_file: None,
        error: None,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let name = format!("{run_id}.trajectory.csv");
        out.trajectory.write_csv(create(&dir.join(&name))?)?;
        record.trajectory_file = Some(name);
        if let Some(online) = &out.online {
            let name = format!("{run_id}.cycles.csv");
            online.write_cycles_csv(create(&dir.join(&name))?)?;
            record.cycles_file = Some(name);
        }
        if let Some(trace) = &out.estimator {
            let name = format!("{run_id}.estimator.csv");
            trace.write_csv(out.trajectory.n(), create(&dir.join(&name))?)?;
            record.estimator_file = Some(name);
        }
    }
    Ok(record)
}

/// Run every config on a pool of `parallelism` threads. Records come back in
/// input order; a failing config yields a record carrying its error.
pub fn sweep(configs: &[ExperimentConfig], parallelism: usize, out_dir: Option<&Path>) -> Result<Vec<ExperimentRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config("parallelism", e.to_string()))?;
    Ok(pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let hash = cfg.hash();
                let run_id = format!("{i:04}-{}", &hash[..12]);
                run_experiment(cfg, out_dir, Some(&run_id))
                    .unwrap_or_else(|e| ExperimentRecord::failed(run_id, hash, cfg, &e))
            })
            .collect()
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityVerification {
    pub final_err_inf: f64,
    pub cumulative_cost: f64,
    pub meets_eps: bool,
    pub within_budget: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub config_hash: String,
    pub problem: FeasibilityProblem,
    pub result: FeasibilityResult,
    /// End-to-end simulation of the returned schedule, when feasible.
    pub verification: Option<FeasibilityVerification>,
}

/// Solve the feasibility problem for a `known_analytic` config with `eps` set
/// and, when feasible, simulate the schedule to confirm it.
pub fn run_feasibility(cfg: &ExperimentConfig) -> Result<FeasibilityReport> {
    cfg.validate()?;
    let (eps, mode) = match &cfg.controller {
        ControllerConfig::KnownAnalytic { eps: Some(eps), cost_mode, .. } => (*eps, *cost_mode),
        _ => {
            return Err(Error::config(
                "controller",
                "feasibility needs a known_analytic controller with eps",
            ))
        }
    };
    let net = cfg.build_network()?;
    let x0 = cfg.initial_state(net.n())?;
    let problem = feasibility_problem(cfg, &net, &x0, eps, mode)?;
    let result = solve_schedule(&problem)?;
    let verification = match &result.schedule {
        Some(schedule) => {
            let h = net.h();
            let h_max = h.max();
            let mut pol = |k: usize, _x: &DVector<f64>| match mode {
                CostMode::NonUniform => Ok(exponential_control(schedule, k, &h)),
                CostMode::Uniform => Ok(DVector::from_element(h.len(), uniform_control(schedule.rate(k), h_max)?)),
            };
            let traj = simulate(&net, &x0, cfg.target, &mut pol, cfg.horizon, None)?;
            Some(FeasibilityVerification {
                final_err_inf: traj.final_error(),
                cumulative_cost: traj.cumulative_cost(),
                meets_eps: traj.final_error() <= eps,
                within_budget: traj.cumulative_cost() <= problem.budget * (1.0 + 1e-12),
            })
        }
        None => None,
    };
    Ok(FeasibilityReport {
        config_hash: cfg.hash(),
        problem,
        result,
        verification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(controller: &str, budget: f64) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{
                "version": 1,
                "scenario": {{"kind": "random", "n": 6, "seed": 21}},
                "target": 0.5,
                "x0": {{"kind": "random", "seed": 22}},
                "controller": {controller},
                "horizon": 60,
                "budget": {budget}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn every_controller_runs() {
        for c in [
            r#"{"kind": "known_analytic"}"#,
            r#"{"kind": "known_analytic", "a": 0.3, "b": 0.95, "cost_mode": "uniform"}"#,
            r#"{"kind": "adaptive_online"}"#,
            r#"{"kind": "gradient_baseline"}"#,
            r#"{"kind": "budget_optimal", "params": {"max_iter": 20}}"#,
            r#"{"kind": "pe_probe", "alpha": 0.01}"#,
        ] {
            let rec = run_experiment(&cfg(c, 8.0), None, None).unwrap();
            assert!(rec.cumulative_cost <= 8.0 + 1e-9, "{c}: {}", rec.cumulative_cost);
            assert!(rec.final_err_inf.is_finite());
        }
    }

    #[test]
    fn sweep_preserves_order_and_records_failures() {
        let mut bad = cfg(r#"{"kind": "known_analytic"}"#, 5.0);
        bad.x0 = super::super::config::InitialState::Explicit { values: vec![0.1] };
        let configs = vec![cfg(r#"{"kind": "known_analytic"}"#, 5.0), bad, cfg(r#"{"kind": "gradient_baseline"}"#, 5.0)];
        let one = sweep(&configs, 1, None).unwrap();
        let many = sweep(&configs, 3, None).unwrap();
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&many).unwrap());
        assert!(one[0].error.is_none());
        assert!(one[1].error.is_some());
        assert_eq!(one[2].controller, "gradient_baseline");
        assert!(sweep(&[], 4, None).unwrap().is_empty());
    }

    #[test]
    fn feasibility_report_verifies_schedule() {
        let c = cfg(r#"{"kind": "known_analytic", "eps": 0.05}"#, 40.0);
        let rep = run_feasibility(&c).unwrap();
        if rep.result.feasible {
            let v = rep.verification.unwrap();
            assert!(v.meets_eps && v.within_budget);
        }
    }
}
