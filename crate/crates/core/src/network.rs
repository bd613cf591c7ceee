//! Social network construction: graph Laplacian, agent parameters and the
//! Friedkin-Johnsen mixing matrix `V = (ΛL + I − Λ)⁻¹(I − Λ)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Condition-number gate on `ΛL + I − Λ`.
pub const SINGULAR_CONDITION: f64 = 1e12;
/// Row-sum drift below which `V` is renormalised rather than rejected.
pub const ROW_DRIFT_REPAIR: f64 = 1e-8;
/// Row-sum tolerance after renormalisation.
pub const ROW_SUM_TOL: f64 = 1e-10;
/// Negative entries of `V` down to this value are float noise and clamped.
pub const NEGATIVE_CLAMP: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    adjacency: DMatrix<f64>,
    laplacian: DMatrix<f64>,
}

impl SocialGraph {
    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Number of directed edges with positive weight.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|w| **w > 0.0).count()
    }
}

/// Build `L = diag(row sums) − A` after validating the adjacency and checking
/// strong connectivity of its directed support.
pub fn build_laplacian(adjacency: &DMatrix<f64>) -> Result<SocialGraph> {
    let (rows, cols) = adjacency.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    for i in 0..rows {
        for j in 0..cols {
            let w = adjacency[(i, j)];
            if !w.is_finite() || w < 0.0 {
                return Err(Error::NegativeWeight { row: i, col: j, value: w });
            }
        }
        if adjacency[(i, i)] != 0.0 {
            return Err(Error::NonZeroDiagonal {
                index: i,
                value: adjacency[(i, i)],
            });
        }
    }
    check_strongly_connected(adjacency)?;

    let mut laplacian = -adjacency.clone();
    for i in 0..rows {
        laplacian[(i, i)] = adjacency.row(i).sum();
    }
    Ok(SocialGraph {
        adjacency: adjacency.clone(),
        laplacian,
    })
}

fn reachable_from(adjacency: &DMatrix<f64>, start: usize, forward: bool) -> Vec<bool> {
    let n = adjacency.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let w = if forward { adjacency[(i, j)] } else { adjacency[(j, i)] };
            if w > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Strongly connected iff every node is reachable from node 0 both along and
/// against the edge direction.
fn check_strongly_connected(adjacency: &DMatrix<f64>) -> Result<()> {
    if adjacency.nrows() <= 1 {
        return Ok(());
    }
    if let Some(to) = reachable_from(adjacency, 0, true).iter().position(|s| !s) {
        return Err(Error::NotStronglyConnected { from: 0, to });
    }
    if let Some(from) = reachable_from(adjacency, 0, false).iter().position(|s| !s) {
        return Err(Error::NotStronglyConnected { from, to: 0 });
    }
    Ok(())
}

/// Per-agent parameters: `lambda` is the diagonal of Λ (weight on neighbours),
/// `h` the diagonal of H = Θ (susceptibility to the planner), with known
/// a-priori bounds `h_min ≤ h_i ≤ h_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub lambda: Vec<f64>,
    pub h: Vec<f64>,
    pub h_min: f64,
    pub h_max: f64,
}

impl AgentParams {
    pub fn new(lambda: Vec<f64>, h: Vec<f64>, h_min: f64, h_max: f64) -> Result<Self> {
        let p = AgentParams { lambda, h, h_min, h_max };
        p.validate()?;
        Ok(p)
    }

    /// Bounds taken as the observed extremes of `h`.
    pub fn with_tight_bounds(lambda: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        let h_min = h.iter().copied().fold(f64::INFINITY, f64::min);
        let h_max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(lambda, h, h_min, h_max)
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn h_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.len() != self.h.len() {
            return Err(Error::DimensionMismatch {
                expected: self.h.len(),
                got: self.lambda.len(),
            });
        }
        if let Some(i) = self.lambda.iter().position(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidParams(format!(
                "lambda[{i}] = {} outside [0, 1]",
                self.lambda[i]
            )));
        }
        if !self.lambda.is_empty() && self.lambda.iter().all(|l| *l >= 1.0) {
            return Err(Error::InvalidParams(
                "at least one agent needs lambda < 1".into(),
            ));
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_max && self.h_max.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "need 0 < h_min <= h_max, got [{}, {}]",
                self.h_min, self.h_max
            )));
        }
        for (i, h) in self.h.iter().enumerate() {
            if !(*h > 0.0) {
                return Err(Error::InvalidParams(format!("h[{i}] = {h} must be positive")));
            }
            if *h < self.h_min || *h > self.h_max {
                return Err(Error::InvalidParams(format!(
                    "h[{i}] = {h} outside [{}, {}]",
                    self.h_min, self.h_max
                )));
            }
        }
        Ok(())
    }
}

/// Row-stochastic FJ mixing matrix with its smallest singular value.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    v: DMatrix<f64>,
    lambda_v: f64,
}

impl MixingMatrix {
    /// Wrap an externally supplied matrix, enforcing the invariants.
    pub fn from_matrix(v: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = v.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        let v = repair_row_stochastic(v)?;
        let lambda_v = min_singular_value(&v);
        if !(lambda_v > 0.0) || lambda_v < 1e-12 {
            return Err(Error::DegenerateMixing { sigma_min: lambda_v });
        }
        Ok(MixingMatrix { v, lambda_v })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn lambda_v(&self) -> f64 {
        self.lambda_v
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }
}

fn repair_row_stochastic(mut v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = v.nrows();
    for i in 0..n {
        for j in 0..n {
            let e = v[(i, j)];
            if !e.is_finite() || e < NEGATIVE_CLAMP {
                return Err(Error::NotRowStochastic { drift: e.abs() });
            }
            if e < 0.0 {
                v[(i, j)] = 0.0;
            }
        }
    }
    let drift = (0..n)
        .map(|i| (v.row(i).sum() - 1.0).abs())
        .fold(0.0, f64::max);
    if drift >= ROW_DRIFT_REPAIR {
        return Err(Error::NotRowStochastic { drift });
    }
    for i in 0..n {
        let s = v.row(i).sum();
        v.row_mut(i).unscale_mut(s);
    }
    let drift = (0..n)
        .map(|i| (v.row(i).sum() - 1.0).abs())
        .fold(0.0, f64::max);
    if drift > ROW_SUM_TOL {
        return Err(Error::NotRowStochastic { drift });
    }
    Ok(v)
}

/// `V = (ΛL + I − Λ)⁻¹(I − Λ)` via LU with partial pivoting.
pub fn build_mixing_matrix(graph: &SocialGraph, params: &AgentParams) -> Result<MixingMatrix> {
    let n = graph.n();
    if params.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: params.n(),
        });
    }
    let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(&params.lambda));
    let identity = DMatrix::<f64>::identity(n, n);
    let anchor = &identity - &lambda;
    let system = &lambda * graph.laplacian() + &anchor;

    let lu = system.clone().lu();
    let inverse = lu
        .try_inverse()
        .ok_or(Error::SingularSystem { condition: f64::INFINITY })?;
    let condition = linalg::one_norm(&system) * linalg::one_norm(&inverse);
    if !condition.is_finite() || condition > SINGULAR_CONDITION {
        return Err(Error::SingularSystem { condition });
    }
    let v = system
        .lu()
        .solve(&anchor)
        .ok_or(Error::SingularSystem { condition })?;
    MixingMatrix::from_matrix(v)
}

/// `√λ_min(VᵀV)`.
pub fn min_singular_value(v: &DMatrix<f64>) -> f64 {
    linalg::min_singular_value(v)
}

/// Graph, parameters and mixing matrix of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub graph: SocialGraph,
    pub params: AgentParams,
    pub mixing: MixingMatrix,
}

impl Network {
    pub fn new(graph: SocialGraph, params: AgentParams) -> Result<Self> {
        params.validate()?;
        let mixing = build_mixing_matrix(&graph, &params)?;
        Ok(Network { graph, params, mixing })
    }

    pub fn from_adjacency(adjacency: &DMatrix<f64>, params: AgentParams) -> Result<Self> {
        Self::new(build_laplacian(adjacency)?, params)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn v(&self) -> &DMatrix<f64> {
        self.mixing.matrix()
    }

    pub fn lambda_v(&self) -> f64 {
        self.mixing.lambda_v()
    }

    pub fn h(&self) -> DVector<f64> {
        self.params.h_vector()
    }

    /// The same graph and Λ with a different susceptibility vector; bounds
    /// are widened if needed so the replacement validates.
    pub fn with_h(&self, h: &[f64]) -> Result<Self> {
        let h_min = h.iter().copied().fold(self.params.h_min, f64::min);
        let h_max = h.iter().copied().fold(self.params.h_max, f64::max);
        let params = AgentParams::new(self.params.lambda.clone(), h.to_vec(), h_min, h_max)?;
        Ok(Network {
            graph: self.graph.clone(),
            params,
            mixing: self.mixing.clone(),
        })
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64, max: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min && hi <= max) {
        return Err(Error::InvalidRange(format!(
            "{name} = [{lo}, {hi}] must satisfy {min} <= lo <= hi <= {max}"
        )));
    }
    Ok(())
}

/// Random strongly connected scenario: a directed ring backbone plus each
/// remaining ordered pair with probability `density`. Deterministic in `seed`.
pub fn random_network(
    n: usize,
    density: f64,
    lambda_range: (f64, f64),
    h_range: (f64, f64),
    seed: u64,
) -> Result<(SocialGraph, AgentParams)> {
    if n < 2 {
        return Err(Error::InvalidRange(format!("n = {n} must be at least 2")));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidRange(format!("density = {density} outside [0, 1]")));
    }
    check_range("lambda_range", lambda_range, 0.0, 1.0)?;
    check_range("h_range", h_range, f64::MIN_POSITIVE, f64::MAX)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adjacency = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        adjacency[(i, (i + 1) % n)] = rng.gen_range(0.5..1.5);
    }
    if n > 2 {
        for i in 0..n {
            for j in 0..n {
                if i == j || j == (i + 1) % n {
                    continue;
                }
                if rng.gen::<f64>() < density {
                    adjacency[(i, j)] = rng.gen_range(0.1..1.0);
                }
            }
        }
    }
    let sample = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };
    let mut lambda: Vec<f64> = (0..n).map(|_| sample(&mut rng, lambda_range)).collect();
    let h: Vec<f64> = (0..n).map(|_| sample(&mut rng, h_range)).collect();
    if lambda.iter().all(|l| *l >= 1.0) {
        lambda[0] = lambda_range.0.min(0.5);
    }
    let graph = build_laplacian(&adjacency)?;
    let params = AgentParams::new(lambda, h, h_range.0, h_range.1)?;
    Ok((graph, params))
}
