//! Online identification of the susceptibilities `θ = diag(H)`.
//!
//! The dynamics are linear in `θ`:
//!
//! ```text
//! x(t) = F̃_t + F_t θ,   F̃_t = V x(t−1),   F_t = V diag(u(t) ∘ (d·1 − x(t−1)))
//! ```
//!
//! and the estimate follows the gradient update
//! `θ̂(t) = θ̂(t−1) + ψ F_tᵀ (x(t) − F̃_t − F_t θ̂(t−1))`. With `‖F_t‖ ≤ β`,
//! `ψ < 2/β²` and `F_tᵀF_t ⪰ α²I`, the Lyapunov value
//! `R = ‖θ − θ̂‖²/(2ψ)` contracts by `1 − κ`, `κ = 2ψ(1 − ½ψβ²)α²`, per step.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::harness::emit::fmt_f64;
use crate::linalg::{self, vec_inf_norm};

/// Relative slack on the exact PE test `λ_min(FᵀF) ≥ α²`; unclipped
/// excitation control hits it with equality.
pub const PE_REL_TOL: f64 = 1e-9;
/// Lower clamp on `θ̂`.
pub const THETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    /// `F_t = V·diag(y)`
    pub f: DMatrix<f64>,
    /// `F̃_t = V·x(t−1)`
    pub f_tilde: DVector<f64>,
    /// `y = u ∘ (d·1 − x(t−1))`
    pub y: DVector<f64>,
}

impl Regressor {
    pub fn min_abs_y(&self) -> f64 {
        self.y.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn max_abs_y(&self) -> f64 {
        vec_inf_norm(&self.y)
    }

    /// `‖F_t‖₂`
    pub fn norm(&self) -> f64 {
        linalg::spectral_norm(&self.f)
    }
}

pub fn build_regressor(
    x_prev: &DVector<f64>,
    u: &DVector<f64>,
    d: f64,
    v: &DMatrix<f64>,
) -> Result<Regressor> {
    let n = v.nrows();
    for len in [x_prev.len(), u.len(), v.ncols()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let y = DVector::from_fn(n, |j, _| u[j] * (d - x_prev[j]));
    let f = v * DMatrix::from_diagonal(&y);
    Ok(Regressor {
        f,
        f_tilde: v * x_prev,
        y,
    })
}

/// `x̂ = F̃ + F·θ̂`
pub fn predict(reg: &Regressor, theta_hat: &DVector<f64>) -> DVector<f64> {
    &reg.f_tilde + &reg.f * theta_hat
}

/// `R = ½ θ_errᵀ Ψ⁻¹ θ_err` with `Ψ = ψI`.
pub fn lyapunov_value(theta_err: &DVector<f64>, psi: f64) -> f64 {
    theta_err.norm_squared() / (2.0 * psi)
}

/// `κ = 2ψ(1 − ½ψβ²)α²`; equals `α²/β²` at `ψ = 1/β²`.
pub fn kappa(psi: f64, beta: f64, alpha: f64) -> Result<f64> {
    if !(psi > 0.0 && beta > 0.0) {
        return Err(Error::InvalidGain(format!(
            "need psi > 0 and beta > 0, got psi = {psi}, beta = {beta}"
        )));
    }
    if psi >= 2.0 / (beta * beta) {
        return Err(Error::InvalidGain(format!(
            "psi = {psi} must be below 2/beta^2 = {}",
            2.0 / (beta * beta)
        )));
    }
    if !(0.0..=beta).contains(&alpha) {
        return Err(Error::InvalidGain(format!("alpha = {alpha} must lie in [0, beta = {beta}]")));
    }
    Ok(2.0 * psi * (1.0 - 0.5 * psi * beta * beta) * alpha * alpha)
}

/// `√(2ψR(0))·(1 − κ)^{t/2}`
pub fn theta_error_bound(r0: f64, psi: f64, kappa: f64, t: usize) -> f64 {
    (2.0 * psi * r0).sqrt() * (1.0 - kappa).max(0.0).powf(t as f64 / 2.0)
}

/// Margin `δ = α/(λ_V·u^max)` that keeps excitation control unclipped.
pub fn pe_margin(alpha: f64, lambda_v: f64, u_max: f64) -> f64 {
    alpha / (lambda_v * u_max)
}

/// `min_j |y_j| ≥ α/λ_V`, which implies `F_tᵀF_t ⪰ α²I`.
pub fn sufficient_pe(reg: &Regressor, alpha: f64, lambda_v: f64) -> bool {
    reg.min_abs_y() >= alpha / lambda_v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeCheck {
    /// `λ_min(F_tᵀF_t) ≥ α²` (up to [`PE_REL_TOL`]).
    pub exact: bool,
    /// Verdict of the sufficient bound `(min_j|y_j|)²·λ_min(VᵀV) ≥ α²`.
    pub sufficient: bool,
    pub min_eigenvalue: f64,
}

pub fn verify_pe(reg: &Regressor, alpha: f64, lambda_v: f64) -> PeCheck {
    let gram = reg.f.transpose() * &reg.f;
    let min_eigenvalue = linalg::min_eigenvalue(&gram);
    let target = alpha * alpha;
    let exact = target > 0.0 && min_eigenvalue >= target * (1.0 - PE_REL_TOL);
    let bound = reg.min_abs_y().powi(2) * lambda_v * lambda_v;
    PeCheck {
        exact,
        sufficient: target > 0.0 && bound >= target * (1.0 - PE_REL_TOL),
        min_eigenvalue,
    }
}

/// `β = ‖V‖₂·y_sup` where `y_sup ≥ ‖u ∘ (d − x)‖∞` along the run.
pub fn beta_bound(v: &DMatrix<f64>, y_sup: f64) -> f64 {
    linalg::spectral_norm(v) * y_sup
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeDiagnostics {
    pub alpha: f64,
    pub kappa: f64,
    /// `λ_min(I − ½ F ψ Fᵀ)`
    pub m_t_min_eig: f64,
    pub theta_err_bound: f64,
}

pub fn diagnostics(
    reg: &Regressor,
    psi: f64,
    beta: f64,
    alpha: f64,
    r0: f64,
    t: usize,
) -> Result<PeDiagnostics> {
    let k = kappa(psi, beta, alpha)?;
    let n = reg.f.nrows();
    let m = DMatrix::<f64>::identity(n, n) - (&reg.f * reg.f.transpose()) * (0.5 * psi);
    Ok(PeDiagnostics {
        alpha,
        kappa: k,
        m_t_min_eig: linalg::min_eigenvalue(&m),
        theta_err_bound: theta_error_bound(r0, psi, k, t),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    /// `‖x(t) − x̂(t)‖∞`
    pub pred_err_inf: f64,
    /// Estimate before clamping to `[THETA_FLOOR, clamp_max]`.
    pub theta_unclamped: DVector<f64>,
    pub clamped: bool,
    /// `‖θ_err(t) − (I − ψFᵀF)θ_err(t−1)‖∞` on the unclamped estimate
    /// (ground truth only).
    pub recursion_residual: Option<f64>,
    /// `R(t)` after the update (ground truth only).
    pub lyapunov: Option<f64>,
}

/// Single-owner estimator state. When constructed with ground truth it also
/// tracks `R(t)` and checks the error recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    theta_hat: DVector<f64>,
    psi: f64,
    beta: f64,
    clamp_max: f64,
    truth: Option<DVector<f64>>,
    lyapunov: Option<f64>,
    pred_errors: Vec<f64>,
}

impl EstimatorState {
    pub fn new(theta_hat: DVector<f64>, psi: f64, beta: f64, clamp_max: f64) -> Result<Self> {
        if !(psi > 0.0 && beta > 0.0) {
            return Err(Error::InvalidGain(format!(
                "need psi > 0 and beta > 0, got psi = {psi}, beta = {beta}"
            )));
        }
        if !(clamp_max >= THETA_FLOOR) {
            return Err(Error::InvalidParams(format!("clamp_max = {clamp_max} below floor")));
        }
        let theta_hat = theta_hat.map(|t| t.clamp(THETA_FLOOR, clamp_max));
        Ok(EstimatorState {
            theta_hat,
            psi,
            beta,
            clamp_max,
            truth: None,
            lyapunov: None,
            pred_errors: Vec::new(),
        })
    }

    /// Enable test-mode tracking of `R(t)` against the true parameters.
    pub fn with_ground_truth(mut self, theta: DVector<f64>) -> Self {
        self.lyapunov = Some(lyapunov_value(&(&theta - &self.theta_hat), self.psi));
        self.truth = Some(theta);
        self
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lyapunov(&self) -> Option<f64> {
        self.lyapunov
    }

    pub fn theta_err(&self) -> Option<DVector<f64>> {
        self.truth.as_ref().map(|t| t - &self.theta_hat)
    }

    pub fn pred_errors(&self) -> &[f64] {
        &self.pred_errors
    }

    pub fn update(&mut self, reg: &Regressor, x_observed: &DVector<f64>) -> Result<UpdateReport> {
        let limit = 2.0 / (self.beta * self.beta);
        if self.psi >= limit {
            return Err(Error::GainTooLarge { psi: self.psi, limit });
        }
        let x_hat = predict(reg, &self.theta_hat);
        let innovation = x_observed - x_hat;
        let pred_err_inf = vec_inf_norm(&innovation);
        let unclamped = &self.theta_hat + reg.f.transpose() * &innovation * self.psi;

        let recursion_residual = self.truth.as_ref().map(|theta| {
            let n = theta.len();
            let before = theta - &self.theta_hat;
            let gain = DMatrix::<f64>::identity(n, n) - reg.f.transpose() * &reg.f * self.psi;
            let expected = gain * before;
            vec_inf_norm(&(theta - &unclamped - expected))
        });

        let clamped_hat = unclamped.map(|t| t.clamp(THETA_FLOOR, self.clamp_max));
        let clamped = clamped_hat != unclamped;
        self.theta_hat = clamped_hat;
        self.lyapunov = self
            .truth
            .as_ref()
            .map(|theta| lyapunov_value(&(theta - &self.theta_hat), self.psi));
        self.pred_errors.push(pred_err_inf);
        Ok(UpdateReport {
            pred_err_inf,
            theta_unclamped: unclamped,
            clamped,
            recursion_residual,
            lyapunov: self.lyapunov,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub theta_hat: DVector<f64>,
    pub pred_err_inf: f64,
    pub lyapunov: Option<f64>,
    pub pe_ok: bool,
    pub kappa: f64,
}

/// Per-update estimator trace: `t, theta_hat_1..n, pred_err_inf, R, pe_ok, kappa`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimatorTrace {
    pub rows: Vec<TraceRow>,
}

impl EstimatorTrace {
    pub fn csv_header(n: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("theta_hat_{i}")));
        h.extend(["pred_err_inf", "R", "pe_ok", "kappa"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, n: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(n))?;
        for row in &self.rows {
            let mut rec = vec![row.t.to_string()];
            rec.extend(row.theta_hat.iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(row.pred_err_inf));
            rec.push(row.lyapunov.map(fmt_f64).unwrap_or_default());
            rec.push(u8::from(row.pe_ok).to_string());
            rec.push(fmt_f64(row.kappa));
            w.write_record(rec)?;
        }
        w.flush().map_err(|e| Error::io("<estimator csv>", e))?;
        Ok(())
    }
}
