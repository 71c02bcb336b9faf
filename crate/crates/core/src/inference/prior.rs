use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{LatentEffects, ModelParams};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Weakly informative priors.
///
/// `τ ~ N(0, tau_sd²)` truncated to `[0, ∞)`, `γ_k ~ U(0, 1)`,
/// `β_j ~ N(0, beta_sd²)`, `μ ~ N(0, mu_sd²)`,
/// `σ_ε² ~ InvGamma(sigma2_shape, sigma2_scale)` and `ε_i | σ_ε² ~ N(0, σ_ε²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub tau_sd: f64,
    pub beta_sd: f64,
    pub mu_sd: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            tau_sd: 10.0,
            beta_sd: 10.0,
            mu_sd: 10.0,
            sigma2_shape: 2.0,
            sigma2_scale: 1.0,
        }
    }
}

pub(crate) fn normal_ln_pdf(x: f64, sd: f64) -> f64 {
    -LN_SQRT_2PI - sd.ln() - 0.5 * (x / sd) * (x / sd)
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.tau_sd,
            self.beta_sd,
            self.mu_sd,
            self.sigma2_shape,
            self.sigma2_scale,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("prior hyperparameters must be > 0: {self:?}")))
        }
    }

    pub fn ln_tau(&self, tau: f64) -> f64 {
        if tau < 0.0 {
            f64::NEG_INFINITY
        } else {
            std::f64::consts::LN_2 + normal_ln_pdf(tau, self.tau_sd)
        }
    }

    pub fn ln_gamma_k(&self, g: f64) -> f64 {
        if (0.0..=1.0).contains(&g) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn ln_beta(&self, b: f64) -> f64 {
        normal_ln_pdf(b, self.beta_sd)
    }

    pub fn ln_mu(&self, mu: f64) -> f64 {
        normal_ln_pdf(mu, self.mu_sd)
    }

    /// Inverse-gamma log density of `σ_ε²`.
    pub fn ln_sigma2(&self, s2: f64) -> f64 {
        if !(s2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.sigma2_shape, self.sigma2_scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * s2.ln() - b / s2
    }

    pub fn ln_eps(&self, e: f64, sigma: f64) -> f64 {
        if sigma > 0.0 {
            normal_ln_pdf(e, sigma)
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Log prior of coefficient `k` in the `(τ, γ, β, μ)` flattening.
    pub(crate) fn ln_coefficient(&self, k: usize, value: f64, n_hops: usize, m: usize) -> f64 {
        if k == 0 {
            self.ln_tau(value)
        } else if k <= n_hops {
            self.ln_gamma_k(value)
        } else if k <= n_hops + m {
            self.ln_beta(value)
        } else {
            self.ln_mu(value)
        }
    }

    /// Joint log prior of parameters and latent effects; `-∞` outside support.
    pub fn ln_density(&self, p: &ModelParams, eps: &LatentEffects) -> f64 {
        let (h, m) = (p.gamma.len(), p.beta.len());
        let coef: f64 = p
            .coefficients()
            .iter()
            .enumerate()
            .map(|(k, &v)| self.ln_coefficient(k, v, h, m))
            .sum();
        let s2 = p.sigma_eps * p.sigma_eps;
        let latent: f64 = eps.0.iter().map(|&e| self.ln_eps(e, p.sigma_eps)).sum();
        coef + self.ln_sigma2(s2) + latent
    }

    /// One draw of every parameter and latent effect from the prior.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n_hops: usize,
        n_covariates: usize,
        n_vertices: usize,
        rng: &mut R,
    ) -> (ModelParams, LatentEffects) {
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let tau = (self.tau_sd * std_normal.sample(rng)).abs();
        let gamma = (0..n_hops).map(|_| rng.random::<f64>()).collect();
        let beta = (0..n_covariates)
            .map(|_| self.beta_sd * std_normal.sample(rng))
            .collect();
        let mu = self.mu_sd * std_normal.sample(rng);
        let s2 = self.sample_sigma2(self.sigma2_shape, self.sigma2_scale, rng);
        let sigma = s2.sqrt();
        let eps = (0..n_vertices)
            .map(|_| sigma * std_normal.sample(rng))
            .collect();
        (
            ModelParams {
                tau,
                gamma,
                beta,
                mu,
                sigma_eps: sigma,
            },
            LatentEffects(eps),
        )
    }

    /// `InvGamma(shape, scale)` draw as the reciprocal of a gamma variate.
    pub(crate) fn sample_sigma2<R: Rng + ?Sized>(&self, shape: f64, scale: f64, rng: &mut R) -> f64 {
        let g = Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters");
        1.0 / g.sample(rng)
    }
}
