//! Analytic control laws: exponential-rate schedules, uniform control,
//! excitation (PE) control and capped exploitation control.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `r(t) = a·bᵗ` with `a, b ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    a: f64,
    b: f64,
}

impl RateSchedule {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidSchedule(format!("a = {a} must lie in (0, 1)")));
        }
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidSchedule(format!("b = {b} must lie in (0, 1)")));
        }
        Ok(RateSchedule { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn rate(&self, t: usize) -> f64 {
        self.a * self.b.powi(t.min(i32::MAX as usize) as i32)
    }
}

/// Conservative per-agent susceptibility caps `θ^max ≥ θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCap {
    theta_max: DVector<f64>,
}

impl ThetaCap {
    pub fn new(theta_max: DVector<f64>) -> Result<Self> {
        if let Some(i) = theta_max.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParams(format!(
                "theta_max[{i}] = {} must be positive",
                theta_max[i]
            )));
        }
        Ok(ThetaCap { theta_max })
    }

    /// `θ^max_j = min(θ̂_j + err, upper)`.
    pub fn from_estimate(theta_hat: &DVector<f64>, err: f64, upper: f64) -> Result<Self> {
        Self::new(theta_hat.map(|t| (t + err).min(upper)))
    }

    pub fn theta_max(&self) -> &DVector<f64> {
        &self.theta_max
    }

    /// `u^max = min_j 1/θ^max_j`.
    pub fn u_max(&self) -> f64 {
        1.0 / self.theta_max.max()
    }
}

/// `u_i(t) = r(t)/h_i`.
pub fn exponential_control(schedule: &RateSchedule, t: usize, h: &DVector<f64>) -> DVector<f64> {
    let r = schedule.rate(t);
    h.map(|hi| r / hi)
}

/// Same input for every agent: `u_c = r/h_max`.
pub fn uniform_control(r: f64, h_max: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidSchedule(format!("rate {r} must lie in (0, 1)")));
    }
    if !(h_max > 0.0) {
        return Err(Error::InvalidParams(format!("h_max = {h_max} must be positive")));
    }
    Ok(r / h_max)
}

/// Excitation control `u_j = min(α/(λ_V·|x_j − d|), 1/θ^max_j)`.
///
/// Unclipped components give `|u_j·(d − x_j)| = α/λ_V` exactly.
pub fn pe_control(
    x: &DVector<f64>,
    d: f64,
    alpha: f64,
    lambda_v: f64,
    cap: &ThetaCap,
) -> Result<DVector<f64>> {
    if x.len() != cap.theta_max.len() {
        return Err(Error::DimensionMismatch {
            expected: cap.theta_max.len(),
            got: x.len(),
        });
    }
    let mut u = DVector::zeros(x.len());
    for j in 0..x.len() {
        let gap = (x[j] - d).abs();
        if gap < 1e-12 {
            return Err(Error::AtTarget { agent: j });
        }
        let raw = alpha / (lambda_v * gap);
        u[j] = raw.min(1.0 / cap.theta_max[j]);
    }
    Ok(u)
}

/// Exploitation control `u_j = r/θ^max_j`; with `θ^max ≥ θ` the realised
/// contraction `θ_j·u_j` is at most `r`.
pub fn exploitation_control(r: f64, cap: &ThetaCap) -> Result<DVector<f64>> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidSchedule(format!("rate {r} must lie in (0, 1)")));
    }
    Ok(cap.theta_max.map(|t| r / t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::contraction_factor;
    use proptest::prelude::*;

    #[test]
    fn schedule_bounds() {
        assert!(RateSchedule::new(0.0, 0.5).is_err());
        assert!(RateSchedule::new(0.5, 1.0).is_err());
        assert!(RateSchedule::new(1.0, 0.5).is_err());
        let s = RateSchedule::new(0.5, 0.5).unwrap();
        assert_eq!(s.rate(0), 0.5);
        assert_eq!(s.rate(3), 0.0625);
    }

    #[test]
    fn exponential_control_examples() {
        let s = RateSchedule::new(0.5, 0.5).unwrap();
        let u = exponential_control(&s, 1, &DVector::from_element(1, 0.25));
        assert!((u[0] - 1.0).abs() < 1e-15);

        let s = RateSchedule::new(0.4, 0.9).unwrap();
        let u = exponential_control(&s, 0, &DVector::from_vec(vec![0.5, 1.0]));
        assert!((u[0] - 0.8).abs() < 1e-15);
        assert!((u[1] - 0.4).abs() < 1e-15);

        let u = exponential_control(&s, 2000, &DVector::from_vec(vec![0.5, 1.0]));
        assert!(u.amax() < 1e-80);
    }

    #[test]
    fn uniform_control_examples() {
        assert!((uniform_control(0.3, 0.6).unwrap() - 0.5).abs() < 1e-15);
        let uc = uniform_control(0.5, 0.5).unwrap();
        let h = DVector::from_vec(vec![0.25, 0.5, 0.4]);
        for hi in h.iter() {
            let c = hi * uc;
            assert!((0.25 - 1e-15..=0.5 + 1e-15).contains(&c));
        }
        // Homogeneous agents: uniform and per-agent controls coincide.
        let s = RateSchedule::new(0.3, 0.5).unwrap();
        let per_agent = exponential_control(&s, 0, &DVector::from_element(3, 0.6));
        assert!(per_agent.iter().all(|u| (u - 0.5).abs() < 1e-15));
    }

    #[test]
    fn pe_control_examples() {
        let cap = ThetaCap::new(DVector::from_element(1, 0.5)).unwrap();
        let x = DVector::from_element(1, 0.5);
        let u = pe_control(&x, 1.0, 0.1, 1.0 / 3.0, &cap).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-14);
        let u = pe_control(&x, 1.0, 1.0, 1.0 / 3.0, &cap).unwrap();
        assert!((u[0] - 2.0).abs() < 1e-15);
        let u = pe_control(&x, 1.0, 0.0, 1.0 / 3.0, &cap).unwrap();
        assert_eq!(u[0], 0.0);
        assert!(matches!(
            pe_control(&DVector::from_element(1, 1.0), 1.0, 0.1, 0.5, &cap),
            Err(Error::AtTarget { agent: 0 })
        ));
    }

    #[test]
    fn exploitation_control_examples() {
        let cap = ThetaCap::new(DVector::from_element(1, 0.5)).unwrap();
        assert!((exploitation_control(0.2, &cap).unwrap()[0] - 0.4).abs() < 1e-15);

        let theta = DVector::from_vec(vec![0.5, 0.25]);
        let exact = ThetaCap::new(theta.clone()).unwrap();
        let s = RateSchedule::new(0.2, 0.5).unwrap();
        assert_eq!(
            exploitation_control(0.2, &exact).unwrap(),
            exponential_control(&s, 0, &theta)
        );

        let doubled = ThetaCap::new(&theta * 2.0).unwrap();
        let u = exploitation_control(0.2, &doubled).unwrap();
        let eta = contraction_factor(&u, &theta).unwrap();
        assert!((eta - 0.1).abs() < 1e-15);
    }

    #[test]
    fn u_max_is_smallest_reciprocal() {
        let cap = ThetaCap::new(DVector::from_vec(vec![0.5, 0.8, 0.2])).unwrap();
        assert!((cap.u_max() - 1.25).abs() < 1e-15);
        let cap = ThetaCap::from_estimate(&DVector::from_vec(vec![0.5, 0.8]), 0.3, 0.9).unwrap();
        assert_eq!(cap.theta_max().as_slice(), &[0.8, 0.9]);
    }

    proptest! {
        #[test]
        fn exploitation_is_admissible_and_monotone(
            theta in prop::collection::vec(0.05f64..1.0, 1..8),
            slack in prop::collection::vec(0.0f64..2.0, 8),
            r in 0.01f64..0.99,
        ) {
            let n = theta.len();
            let theta = DVector::from_vec(theta);
            let tmax = DVector::from_fn(n, |j, _| theta[j] * (1.0 + slack[j]));
            let u = exploitation_control(r, &ThetaCap::new(tmax.clone()).unwrap()).unwrap();
            for j in 0..n {
                prop_assert!(theta[j] * u[j] <= r * (1.0 + 1e-15));
            }
            let larger = ThetaCap::new(&tmax * 1.5).unwrap();
            let u2 = exploitation_control(r, &larger).unwrap();
            for j in 0..n {
                prop_assert!(u2[j] <= u[j]);
            }
        }

        #[test]
        fn pe_control_never_exceeds_cap(
            x in prop::collection::vec(0.0f64..1.0, 1..8),
            tmax in prop::collection::vec(0.05f64..1.0, 8),
            d in 0.0f64..1.0,
            alpha in 0.0f64..2.0,
            lambda_v in 0.05f64..1.0,
        ) {
            let n = x.len();
            let x = DVector::from_vec(x);
            prop_assume!(x.iter().all(|v| (v - d).abs() >= 1e-12));
            let cap = ThetaCap::new(DVector::from_fn(n, |j, _| tmax[j])).unwrap();
            let u = pe_control(&x, d, alpha, lambda_v, &cap).unwrap();
            for j in 0..n {
                prop_assert!(u[j] <= 1.0 / tmax[j]);
                prop_assert!(u[j] >= 0.0);
            }
        }
    }
}
