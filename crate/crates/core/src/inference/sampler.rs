//! Metropolis-within-Gibbs sweep.
//!
//! Each coefficient of `(τ, γ, β, μ)` and each latent `ε_i` gets a Gaussian
//! random-walk Metropolis step, reflected back into its support; `σ_ε²` is
//! then drawn from its conjugate inverse-gamma conditional.
//!
//! Two coefficient steps are taken along directions the likelihood barely
//! distinguishes: a `β_j` step shifts `μ` by `-Δβ_j x̄_j`, and a `τ` step
//! rescales `γ_1` so that `τ γ_1` stays fixed. Both are exact Metropolis moves
//! for the same target.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::prior::PriorSpec;
use crate::dataset::{Dataset, OutcomeVector};
use crate::error::{Error, Result};
use crate::model::{log_likelihood, Design, LatentEffects, ModelConfig, ModelParams};
use crate::stats::mean;

/// Everything the sampler conditions on.
#[derive(Debug, Clone)]
pub struct FitData {
    pub design: Design,
    pub y: OutcomeVector,
    pub model: ModelConfig,
}

impl FitData {
    pub fn new(design: Design, y: OutcomeVector, model: ModelConfig) -> Result<Self> {
        model.validate()?;
        if y.len() != design.n_vertices() {
            return Err(Error::Dimension {
                what: "outcomes",
                expected: design.n_vertices(),
                got: y.len(),
            });
        }
        if design.n_hops() != model.n_hops {
            return Err(Error::Dimension {
                what: "exposure hops",
                expected: model.n_hops,
                got: design.n_hops(),
            });
        }
        Ok(Self { design, y, model })
    }

    /// Exposure and design of `data` under its observed sources.
    pub fn from_dataset(data: &Dataset, model: ModelConfig) -> Result<Self> {
        let design = Design::from_graph(
            &data.graph,
            data.sources.clone(),
            data.covariates.clone(),
            model.n_hops,
        )?;
        Self::new(design, data.outcomes.clone(), model)
    }

    pub fn n_vertices(&self) -> usize {
        self.design.n_vertices()
    }

    pub fn n_coefficients(&self) -> usize {
        2 + self.design.n_hops() + self.design.n_covariates()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: ModelParams,
    pub eps: LatentEffects,
}

/// Random-walk standard deviations per coefficient and per latent effect.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalScales {
    pub coef: Vec<f64>,
    pub eps: Vec<f64>,
}

impl ProposalScales {
    pub fn uniform(n_coef: usize, n_vertices: usize, scale: f64) -> Self {
        Self {
            coef: vec![scale; n_coef],
            eps: vec![scale; n_vertices],
        }
    }
}

/// Which Metropolis proposals of a sweep were accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAccepts {
    pub coef: Vec<bool>,
    pub eps: Vec<bool>,
}

/// Log-likelihood plus log prior; `-∞` outside the prior support.
pub fn log_posterior(
    p: &ModelParams,
    eps: &LatentEffects,
    data: &FitData,
    priors: &PriorSpec,
) -> f64 {
    let prior = priors.ln_density(p, eps);
    if !prior.is_finite() {
        return f64::NEG_INFINITY;
    }
    match log_likelihood(p, eps, &data.design, &data.y, &data.model) {
        Ok(ll) if ll.is_finite() => ll + prior,
        _ => f64::NEG_INFINITY,
    }
}

/// Folds `x` back into `[lo, hi]` (or `[lo, ∞)`) by mirror reflection.
fn reflect(x: f64, lo: f64, hi: Option<f64>) -> f64 {
    match hi {
        None => {
            if x < lo {
                2.0 * lo - x
            } else {
                x
            }
        }
        Some(hi) => {
            let width = hi - lo;
            let y = (x - lo).rem_euclid(2.0 * width);
            lo + if y > width { 2.0 * width - y } else { y }
        }
    }
}

fn vertex_term(y: u64, eta: f64) -> f64 {
    y as f64 * eta - eta.exp()
}

/// Sweep state with cached linear predictors (without `ε`, unclamped).
pub(crate) struct Sweeper<'a> {
    data: &'a FitData,
    priors: &'a PriorSpec,
    raw: Vec<f64>,
    x_mean: Vec<f64>,
}

impl<'a> Sweeper<'a> {
    pub(crate) fn new(data: &'a FitData, priors: &'a PriorSpec, params: &ModelParams) -> Self {
        let raw = Self::raw_eta(data, params);
        let x = &data.design.x;
        let x_mean = (0..x.n_cols())
            .map(|j| {
                let col = x.column(j);
                if col.is_empty() {
                    0.0
                } else {
                    mean(&col)
                }
            })
            .collect();
        Self {
            data,
            priors,
            raw,
            x_mean,
        }
    }

    fn raw_eta(data: &FitData, p: &ModelParams) -> Vec<f64> {
        let coef = p.hop_coefficients();
        (0..data.n_vertices())
            .map(|i| data.design.raw_eta(p, &coef, i))
            .collect()
    }

    fn clamp(&self, v: f64) -> f64 {
        let c = self.data.model.eta_clamp;
        v.clamp(-c, c)
    }

    fn loglik(&self, raw: &[f64], eps: &[f64]) -> f64 {
        raw.iter()
            .zip(eps)
            .zip(&self.data.y.0)
            .map(|((r, e), &y)| vertex_term(y, self.clamp(r + e)))
            .sum()
    }

    pub(crate) fn sweep<R: Rng + ?Sized>(
        &mut self,
        mut state: ChainState,
        scales: &ProposalScales,
        rng: &mut R,
    ) -> (ChainState, SweepAccepts) {
        let (h, m) = (self.data.design.n_hops(), self.data.design.n_covariates());
        let n_coef = 2 + h + m;
        let mut accepts = SweepAccepts {
            coef: vec![false; n_coef],
            eps: vec![false; self.data.n_vertices()],
        };

        let mut ll = self.loglik(&self.raw, &state.eps.0);
        for k in 0..n_coef {
            let theta = state.params.coefficients();
            let xi: f64 = StandardNormal.sample(rng);
            let proposed = theta[k] + scales.coef[k] * xi;
            let proposed = if k == 0 {
                reflect(proposed, 0.0, None)
            } else if k <= h {
                reflect(proposed, 0.0, Some(1.0))
            } else {
                proposed
            };
            let mut trial = theta.clone();
            trial[k] = proposed;
            let mut log_prior_ratio = self.priors.ln_coefficient(k, proposed, h, m)
                - self.priors.ln_coefficient(k, theta[k], h, m);
            if k == 0 && h > 0 && theta[0] > 0.0 && proposed > 0.0 {
                // τ moves with γ_1 rescaled so every hop coefficient τ Π γ
                // is unchanged; the target in (τ, τγ_1) coordinates carries
                // the Jacobian 1/τ.
                trial[1] = theta[1] * theta[0] / proposed;
                log_prior_ratio += self.priors.ln_gamma_k(trial[1])
                    - self.priors.ln_gamma_k(theta[1])
                    + theta[0].ln()
                    - proposed.ln();
            } else if k > h && k <= h + m {
                // β_j moves along (1, -x̄_j) so the predictor at the covariate
                // mean stays put.
                let mu_k = n_coef - 1;
                trial[mu_k] -= (proposed - theta[k]) * self.x_mean[k - h - 1];
                log_prior_ratio += self.priors.ln_mu(trial[mu_k]) - self.priors.ln_mu(theta[mu_k]);
            }
            let candidate = state.params.with_coefficients(&trial);
            let raw = Self::raw_eta(self.data, &candidate);
            let cand_ll = self.loglik(&raw, &state.eps.0);
            let log_ratio = cand_ll - ll + log_prior_ratio;
            let u: f64 = rng.random();
            if u.ln() < log_ratio || proposed == theta[k] {
                state.params = candidate;
                self.raw = raw;
                ll = cand_ll;
                accepts.coef[k] = true;
            }
        }

        let sigma = state.params.sigma_eps;
        for i in 0..self.data.n_vertices() {
            let e = state.eps.0[i];
            let xi: f64 = StandardNormal.sample(rng);
            let proposed = e + scales.eps[i] * xi;
            let y = self.data.y.0[i];
            let log_ratio = vertex_term(y, self.clamp(self.raw[i] + proposed))
                - vertex_term(y, self.clamp(self.raw[i] + e))
                + self.priors.ln_eps(proposed, sigma)
                - self.priors.ln_eps(e, sigma);
            let u: f64 = rng.random();
            if u.ln() < log_ratio || proposed == e {
                state.eps.0[i] = proposed;
                accepts.eps[i] = true;
            }
        }

        let n = self.data.n_vertices() as f64;
        let sum_sq: f64 = state.eps.0.iter().map(|e| e * e).sum();
        let s2 = self.priors.sample_sigma2(
            self.priors.sigma2_shape + 0.5 * n,
            self.priors.sigma2_scale + 0.5 * sum_sq,
            rng,
        );
        state.params.sigma_eps = s2.sqrt();
        (state, accepts)
    }
}

/// One full Metropolis-within-Gibbs sweep from `state`.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: ChainState,
    data: &FitData,
    priors: &PriorSpec,
    scales: &ProposalScales,
    rng: &mut R,
) -> (ChainState, SweepAccepts) {
    let mut sweeper = Sweeper::new(data, priors, &state.params);
    sweeper.sweep(state, scales, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_folds_into_support() {
        assert_eq!(reflect(-0.3, 0.0, None), 0.3);
        assert_eq!(reflect(0.3, 0.0, None), 0.3);
        assert!((reflect(1.2, 0.0, Some(1.0)) - 0.8).abs() < 1e-15);
        assert!((reflect(-0.2, 0.0, Some(1.0)) - 0.2).abs() < 1e-15);
        assert!((reflect(2.3, 0.0, Some(1.0)) - 0.3).abs() < 1e-12);
        assert!((reflect(-1.7, 0.0, Some(1.0)) - 0.3).abs() < 1e-12);
    }
}
