//! Conditional Poisson potential-outcome model with canonical log link.
//!
//! For vertex `i` the linear predictor is
//!
//! ```text
//! η_i = τ z_i + Σ_{n=1..H} τ (Π_{k≤n} γ_k) s⁽ⁿ⁾_i + βᵀ x_i + μ + ε_i
//! ```
//!
//! clamped to `[-eta_clamp, eta_clamp]`, and `Y_i ~ Poisson(exp(η_i))`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::{CovariateMatrix, OutcomeVector};
use crate::error::{Error, Result};
use crate::exposure::{exposure_profile, ExposureTensor};
use crate::graph::{Edge, InfluenceGraph, SourceVector};

/// Regression coefficients and heterogeneity scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tau: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: f64,
    #[serde(default)]
    pub sigma_eps: f64,
}

impl ModelParams {
    pub fn zeros(n_hops: usize, n_covariates: usize) -> Self {
        Self {
            tau: 0.0,
            gamma: vec![0.0; n_hops],
            beta: vec![0.0; n_covariates],
            mu: 0.0,
            sigma_eps: 0.0,
        }
    }

    /// Checks `τ ≥ 0`, `γ_k ∈ [0, 1]`, `σ_ε ≥ 0` and finiteness.
    pub fn validate(&self) -> Result<()> {
        let finite = self.tau.is_finite()
            && self.mu.is_finite()
            && self.sigma_eps.is_finite()
            && self.gamma.iter().chain(&self.beta).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite value".into()));
        }
        if self.tau < 0.0 {
            return Err(Error::InvalidParams(format!("tau = {} < 0", self.tau)));
        }
        if let Some(g) = self.gamma.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(Error::InvalidParams(format!("gamma = {g} outside [0, 1]")));
        }
        if self.sigma_eps < 0.0 {
            return Err(Error::InvalidParams(format!(
                "sigma_eps = {} < 0",
                self.sigma_eps
            )));
        }
        Ok(())
    }

    pub fn n_hops(&self) -> usize {
        self.gamma.len()
    }

    /// Hop-`n` exposure coefficient `τ Π_{k≤n} γ_k`, for `n = 1..=H`.
    pub fn hop_coefficients(&self) -> Vec<f64> {
        let mut prod = 1.0;
        self.gamma
            .iter()
            .map(|g| {
                prod *= g;
                self.tau * prod
            })
            .collect()
    }

    /// Number of regression coefficients `(τ, γ, β, μ)`.
    pub fn n_coefficients(&self) -> usize {
        2 + self.gamma.len() + self.beta.len()
    }

    /// Coefficients flattened as `(τ, γ_1.., β_1.., μ)`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_coefficients());
        v.push(self.tau);
        v.extend(&self.gamma);
        v.extend(&self.beta);
        v.push(self.mu);
        v
    }

    /// Inverse of [`coefficients`](Self::coefficients); keeps `sigma_eps`.
    pub fn with_coefficients(&self, theta: &[f64]) -> Self {
        let h = self.gamma.len();
        let m = self.beta.len();
        Self {
            tau: theta[0],
            gamma: theta[1..1 + h].to_vec(),
            beta: theta[1 + h..1 + h + m].to_vec(),
            mu: theta[1 + h + m],
            sigma_eps: self.sigma_eps,
        }
    }

    /// Names matching [`coefficients`](Self::coefficients).
    pub fn coefficient_names(n_hops: usize, n_covariates: usize) -> Vec<String> {
        let mut names = vec!["tau".to_string()];
        names.extend((1..=n_hops).map(|k| format!("gamma_{k}")));
        names.extend((1..=n_covariates).map(|j| format!("beta_{j}")));
        names.push("mu".into());
        names
    }
}

/// Per-vertex heterogeneity terms `ε_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEffects(pub Vec<f64>);

impl LatentEffects {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_hops: usize,
    pub eta_clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_hops: 1,
            eta_clamp: 30.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hops == 0 {
            return Err(Error::Config("n_hops must be >= 1".into()));
        }
        if !(self.eta_clamp > 0.0) {
            return Err(Error::Config("eta_clamp must be > 0".into()));
        }
        Ok(())
    }
}

/// Source indicators, exposures and covariates over a common vertex order.
#[derive(Debug, Clone)]
pub struct Design {
    pub z: SourceVector,
    pub exposure: ExposureTensor,
    pub x: CovariateMatrix,
}

impl Design {
    pub fn new(z: SourceVector, exposure: ExposureTensor, x: CovariateMatrix) -> Result<Self> {
        let n = z.len();
        if exposure.n_vertices() != n {
            return Err(Error::Dimension {
                what: "exposure",
                expected: n,
                got: exposure.n_vertices(),
            });
        }
        if x.n_rows() != n {
            return Err(Error::Dimension {
                what: "covariates",
                expected: n,
                got: x.n_rows(),
            });
        }
        Ok(Self { z, exposure, x })
    }

    /// Computes the exposure of `z` on `g` and bundles it.
    pub fn from_graph(
        g: &InfluenceGraph,
        z: SourceVector,
        x: CovariateMatrix,
        n_hops: usize,
    ) -> Result<Self> {
        let exposure = exposure_profile(g, &z, n_hops)?;
        Self::new(z, exposure, x)
    }

    pub fn n_vertices(&self) -> usize {
        self.z.len()
    }

    pub fn n_hops(&self) -> usize {
        self.exposure.n_hops()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.n_cols()
    }

    fn check(&self, p: &ModelParams, eps: Option<&LatentEffects>) -> Result<()> {
        if p.gamma.len() != self.n_hops() {
            return Err(Error::Dimension {
                what: "gamma",
                expected: self.n_hops(),
                got: p.gamma.len(),
            });
        }
        if p.beta.len() != self.n_covariates() {
            return Err(Error::Dimension {
                what: "beta",
                expected: self.n_covariates(),
                got: p.beta.len(),
            });
        }
        if let Some(eps) = eps {
            if eps.0.len() != self.n_vertices() {
                return Err(Error::Dimension {
                    what: "latent effects",
                    expected: self.n_vertices(),
                    got: eps.0.len(),
                });
            }
        }
        Ok(())
    }

    /// `η_i` without the latent term and without clamping.
    pub(crate) fn raw_eta(&self, p: &ModelParams, coef: &[f64], i: usize) -> f64 {
        let z = if self.z.get(i) { 1.0 } else { 0.0 };
        let mut eta = p.tau * z + p.mu;
        for (h, c) in coef.iter().enumerate() {
            eta += c * self.exposure.get(h + 1, i);
        }
        for (b, x) in p.beta.iter().zip(self.x.row(i)) {
            eta += b * x;
        }
        eta
    }

    /// `∂η_i/∂(τ, γ, β, μ)` at `p`.
    pub fn predictor_gradient(&self, p: &ModelParams, i: usize) -> Vec<f64> {
        let h = p.gamma.len();
        let mut g = Vec::with_capacity(p.n_coefficients());
        let z = if self.z.get(i) { 1.0 } else { 0.0 };
        let mut prod = 1.0;
        let mut dtau = z;
        for (n, gamma) in p.gamma.iter().enumerate() {
            prod *= gamma;
            dtau += prod * self.exposure.get(n + 1, i);
        }
        g.push(dtau);
        for k in 0..h {
            // Σ_{n≥k} τ (Π_{l≤n, l≠k} γ_l) s⁽ⁿ⁾_i
            let mut d = 0.0;
            let mut prod_without_k = 1.0;
            for n in 0..h {
                if n != k {
                    prod_without_k *= p.gamma[n];
                }
                if n >= k {
                    d += p.tau * prod_without_k * self.exposure.get(n + 1, i);
                }
            }
            g.push(d);
        }
        g.extend_from_slice(self.x.row(i));
        g.push(1.0);
        g
    }
}

/// Linear predictor and the number of entries that hit the clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub eta: Vec<f64>,
    pub clamped: usize,
}

pub fn linear_predictor(
    p: &ModelParams,
    design: &Design,
    eps: &LatentEffects,
    cfg: &ModelConfig,
) -> Result<LinearPredictor> {
    design.check(p, Some(eps))?;
    let coef = p.hop_coefficients();
    let mut clamped = 0;
    let eta = (0..design.n_vertices())
        .map(|i| {
            let raw = design.raw_eta(p, &coef, i) + eps.0[i];
            if raw.abs() > cfg.eta_clamp {
                clamped += 1;
            }
            raw.clamp(-cfg.eta_clamp, cfg.eta_clamp)
        })
        .collect();
    if clamped > 0 {
        log::debug!("{clamped} linear predictor entries clamped to ±{}", cfg.eta_clamp);
    }
    Ok(LinearPredictor { eta, clamped })
}

/// `λ_i = exp(η_i)`.
pub fn expected_outcomes(eta: &[f64]) -> Vec<f64> {
    eta.iter().map(|e| e.exp()).collect()
}

/// `ln(y!)` via the log-gamma function.
pub fn ln_factorial(y: u64) -> f64 {
    if y < 2 {
        0.0
    } else {
        ln_gamma(y as f64 + 1.0)
    }
}

/// Poisson log-likelihood `Σ_i (y_i η_i − exp(η_i) − ln y_i!)` of a given predictor.
pub fn log_likelihood_eta(eta: &[f64], y: &OutcomeVector) -> Result<f64> {
    if eta.len() != y.len() {
        return Err(Error::Dimension {
            what: "outcomes",
            expected: eta.len(),
            got: y.len(),
        });
    }
    Ok(eta
        .iter()
        .zip(&y.0)
        .map(|(&e, &yi)| yi as f64 * e - e.exp() - ln_factorial(yi))
        .sum())
}

pub fn log_likelihood(
    p: &ModelParams,
    eps: &LatentEffects,
    design: &Design,
    y: &OutcomeVector,
    cfg: &ModelConfig,
) -> Result<f64> {
    let lp = linear_predictor(p, design, eps, cfg)?;
    log_likelihood_eta(&lp.eta, y)
}

/// Analytic `∂ℓ/∂(τ, γ, β, μ)`. Clamped entries contribute zero.
pub fn log_likelihood_gradient(
    p: &ModelParams,
    eps: &LatentEffects,
    design: &Design,
    y: &OutcomeVector,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    let lp = linear_predictor(p, design, eps, cfg)?;
    if y.len() != design.n_vertices() {
        return Err(Error::Dimension {
            what: "outcomes",
            expected: design.n_vertices(),
            got: y.len(),
        });
    }
    let mut grad = vec![0.0; p.n_coefficients()];
    for i in 0..design.n_vertices() {
        if lp.eta[i].abs() >= cfg.eta_clamp {
            continue;
        }
        let resid = y.0[i] as f64 - lp.eta[i].exp();
        for (g, d) in grad.iter_mut().zip(design.predictor_gradient(p, i)) {
            *g += resid * d;
        }
    }
    Ok(grad)
}

/// Draws `ε ~ N(0, σ_ε²)` and `y ~ Poisson(λ)` on graph `g` with sources `z`.
pub fn simulate_outcomes(
    p: &ModelParams,
    g: &InfluenceGraph,
    z: &SourceVector,
    x: &CovariateMatrix,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(OutcomeVector, LatentEffects)> {
    p.validate()?;
    cfg.validate()?;
    let design = Design::from_graph(g, z.clone(), x.clone(), cfg.n_hops)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = design.n_vertices();
    let eps = if p.sigma_eps > 0.0 {
        let normal = Normal::new(0.0, p.sigma_eps)
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        LatentEffects((0..n).map(|_| normal.sample(&mut rng)).collect())
    } else {
        LatentEffects::zeros(n)
    };
    let lp = linear_predictor(p, &design, &eps, cfg)?;
    let y = expected_outcomes(&lp.eta)
        .into_iter()
        .map(|lambda| {
            Poisson::new(lambda)
                .map(|d| d.sample(&mut rng) as u64)
                .map_err(|e| Error::InvalidParams(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((OutcomeVector(y), eps))
}

/// Directed Erdős–Rényi graph with integer weights uniform on `1..=weight_max`.
/// Vertices are named `u0, u1, ...`.
pub fn simulate_graph(
    n: usize,
    mean_out_degree: f64,
    weight_max: u32,
    seed: u64,
) -> Result<InfluenceGraph> {
    if n == 0 {
        return Err(Error::Config("graph needs at least one vertex".into()));
    }
    if weight_max == 0 {
        return Err(Error::Config("weight_max must be >= 1".into()));
    }
    let ids: Vec<String> = (0..n).map(|i| format!("u{i}")).collect();
    if n == 1 {
        return InfluenceGraph::edgeless(ids);
    }
    let prob = mean_out_degree / (n - 1) as f64;
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Config(format!(
            "edge probability {prob} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < prob {
                let w = rng.random_range(1..=weight_max);
                edges.push(Edge::new(ids[i].clone(), ids[j].clone(), w as f64));
            }
        }
    }
    Ok(InfluenceGraph::with_vertices(ids, &edges)?.graph)
}

/// Outcome of [`fit_mle`].
#[derive(Debug, Clone)]
pub struct MleFit {
    pub params: ModelParams,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Maximum-likelihood `(τ, γ, β, μ)` with `ε = 0` by Fisher scoring with
/// step halving. The coefficients are unconstrained.
pub fn fit_mle(
    design: &Design,
    y: &OutcomeVector,
    init: &ModelParams,
    cfg: &ModelConfig,
) -> Result<MleFit> {
    const MAX_ITER: usize = 200;
    let n = design.n_vertices();
    let eps = LatentEffects::zeros(n);
    let mut params = init.clone();
    let mut ll = log_likelihood(&params, &eps, design, y, cfg)?;
    for iter in 1..=MAX_ITER {
        let k = params.n_coefficients();
        let lp = linear_predictor(&params, design, &eps, cfg)?;
        let mut info = DMatrix::<f64>::zeros(k, k);
        let mut score = DVector::<f64>::zeros(k);
        for i in 0..n {
            let lambda = lp.eta[i].exp();
            let g = DVector::from_vec(design.predictor_gradient(&params, i));
            score += &g * (y.0[i] as f64 - lambda);
            info.syger(lambda, &g, &g, 1.0);
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .or_else(|| info.lu().solve(&score))
            .ok_or_else(|| Error::SingularDesign {
                condition: f64::INFINITY,
                directions: "information matrix not invertible during scoring".into(),
            })?;
        let theta = params.coefficients();
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t + scale * s)
                .collect();
            let candidate = params.with_coefficients(&trial);
            let cand_ll = log_likelihood(&candidate, &eps, design, y, cfg)?;
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) || scale < 1e-10 {
                let max_step = step.amax() * scale;
                params = candidate;
                let improvement = cand_ll - ll;
                ll = cand_ll;
                if max_step < 1e-10 || improvement.abs() < 1e-12 * ll.abs().max(1.0) {
                    return Ok(MleFit {
                        params,
                        log_likelihood: ll,
                        iterations: iter,
                    });
                }
                break;
            }
            scale *= 0.5;
        }
    }
    Ok(MleFit {
        params,
        log_likelihood: ll,
        iterations: MAX_ITER,
    })
}
