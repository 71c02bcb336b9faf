//! Bayesian posterior sampling of the outcome model.

mod diagnostics;
mod prior;
mod sampler;

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{diagnostics, Diagnostics, ParamSummary, RHAT_FLAG};
pub use prior::PriorSpec;
pub use sampler::{
    gibbs_sweep, log_posterior, ChainState, FitData, ProposalScales, SweepAccepts,
};

use crate::error::{Error, Result};
use crate::model::{LatentEffects, ModelParams};
use sampler::Sweeper;

const ADAPT_WINDOW: usize = 50;
const INIT_ATTEMPTS: usize = 100;
const INITIAL_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Keep the latent effects of every retained draw.
    pub keep_latent: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iters: 5000,
            burn_in: 2500,
            thin: 5,
            seed: 0,
            target_accept: 0.3,
            keep_latent: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be >= 1".into()));
        }
        if self.burn_in >= self.n_iters {
            return Err(Error::Config(format!(
                "burn_in ({}) must be < n_iters ({})",
                self.burn_in, self.n_iters
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iters - self.burn_in) / self.thin
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub params: ModelParams,
    pub eps: Option<LatentEffects>,
}

/// Retained draws per chain plus sampler bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub chains: Vec<Vec<Draw>>,
    pub n_hops: usize,
    pub n_covariates: usize,
    /// Post-burn-in acceptance rate per coefficient, then `eps` averaged over vertices.
    pub acceptance_rates: Vec<(String, f64)>,
    pub config: Option<McmcConfig>,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_draws() == 0
    }

    pub fn draws(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flatten()
    }

    /// Column names: coefficients followed by `sigma_eps`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = ModelParams::coefficient_names(self.n_hops, self.n_covariates);
        names.push("sigma_eps".into());
        names
    }

    /// Per-chain trace of column `k` of [`param_names`](Self::param_names).
    pub fn trace(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|chain| chain.iter().map(|d| param_column(&d.params, k)).collect())
            .collect()
    }

    /// Builds samples from parameter draws alone, one chain per inner vector.
    pub fn from_params(chains: Vec<Vec<ModelParams>>) -> Result<Self> {
        let first = chains
            .iter()
            .flatten()
            .next()
            .ok_or(Error::EmptyPosterior)?;
        let (h, m) = (first.gamma.len(), first.beta.len());
        if chains
            .iter()
            .flatten()
            .any(|p| p.gamma.len() != h || p.beta.len() != m)
        {
            return Err(Error::Parse("draws disagree on dimensions".into()));
        }
        Ok(Self {
            chains: chains
                .into_iter()
                .map(|c| {
                    c.into_iter()
                        .map(|params| Draw { params, eps: None })
                        .collect()
                })
                .collect(),
            n_hops: h,
            n_covariates: m,
            acceptance_rates: Vec::new(),
            config: None,
        })
    }

    /// Posterior CSV: `chain,draw,tau,gamma_1..,beta_1..,mu,sigma_eps`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.param_names());
        w.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (d, draw) in chain.iter().enumerate() {
                let mut rec = vec![c.to_string(), d.to_string()];
                rec.extend(draw.params.coefficients().iter().map(f64::to_string));
                rec.push(draw.params.sigma_eps.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let names: Vec<&str> = header.iter().collect();
        let n_hops = names.iter().filter(|n| n.starts_with("gamma_")).count();
        let n_cov = names.iter().filter(|n| n.starts_with("beta_")).count();
        let mut expected = vec!["chain".to_string(), "draw".to_string()];
        expected.extend(ModelParams::coefficient_names(n_hops, n_cov));
        expected.push("sigma_eps".into());
        if names != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse(format!(
                "unexpected posterior header `{}`",
                names.join(",")
            )));
        }
        let template = ModelParams::zeros(n_hops, n_cov);
        let mut chains: Vec<Vec<ModelParams>> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let chain: usize = rec[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad chain index `{}`", &rec[0])))?;
            let values = rec
                .iter()
                .skip(2)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad posterior value `{v}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut params = template.with_coefficients(&values);
            params.sigma_eps = *values.last().expect("sigma column");
            if chains.len() <= chain {
                chains.resize_with(chain + 1, Vec::new);
            }
            chains[chain].push(params);
        }
        let chains: Vec<_> = chains.into_iter().filter(|c| !c.is_empty()).collect();
        Self::from_params(chains)
    }
}

fn param_column(p: &ModelParams, k: usize) -> f64 {
    let n_coef = p.n_coefficients();
    if k < n_coef {
        p.coefficients()[k]
    } else {
        p.sigma_eps
    }
}

struct ChainRun {
    draws: Vec<Draw>,
    coef_accepts: Vec<usize>,
    eps_accepts: usize,
    post_iters: usize,
}

/// Runs `config.n_chains` independent chains from prior-drawn starting points.
///
/// Chain `c` draws from stream `c` of a ChaCha generator seeded with
/// `config.seed`. Proposal scales adapt every 50 iterations during burn-in
/// (×1.1 above the target acceptance rate, ×0.9 otherwise) and are frozen
/// afterwards.
pub fn fit(data: &FitData, priors: &PriorSpec, config: &McmcConfig) -> Result<PosteriorSamples> {
    config.validate()?;
    priors.validate()?;
    let runs = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(data, priors, config, c))
        .collect::<Result<Vec<_>>>()?;

    let (h, m) = (data.design.n_hops(), data.design.n_covariates());
    let names = ModelParams::coefficient_names(h, m);
    let post_iters: usize = runs.iter().map(|r| r.post_iters).sum();
    let mut acceptance_rates: Vec<(String, f64)> = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let acc: usize = runs.iter().map(|r| r.coef_accepts[k]).sum();
            (name, acc as f64 / post_iters as f64)
        })
        .collect();
    let n = data.n_vertices();
    if n > 0 {
        let acc: usize = runs.iter().map(|r| r.eps_accepts).sum();
        acceptance_rates.push(("eps".into(), acc as f64 / (post_iters * n) as f64));
    }
    Ok(PosteriorSamples {
        chains: runs.into_iter().map(|r| r.draws).collect(),
        n_hops: h,
        n_covariates: m,
        acceptance_rates,
        config: Some(*config),
    })
}

fn run_chain(
    data: &FitData,
    priors: &PriorSpec,
    config: &McmcConfig,
    chain: usize,
) -> Result<ChainRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let (h, m, n) = (
        data.design.n_hops(),
        data.design.n_covariates(),
        data.n_vertices(),
    );
    let mut state = None;
    for _ in 0..INIT_ATTEMPTS {
        let (params, eps) = priors.sample(h, m, n, &mut rng);
        if log_posterior(&params, &eps, data, priors).is_finite() {
            state = Some(ChainState { params, eps });
            break;
        }
    }
    let mut state = state.ok_or(Error::Initialization(INIT_ATTEMPTS))?;

    let n_coef = data.n_coefficients();
    let mut scales = ProposalScales::uniform(n_coef, n, INITIAL_SCALE);
    let mut window_coef = vec![0usize; n_coef];
    let mut window_eps = vec![0usize; n];
    let mut run = ChainRun {
        draws: Vec::with_capacity(config.draws_per_chain()),
        coef_accepts: vec![0; n_coef],
        eps_accepts: 0,
        post_iters: 0,
    };
    let mut sweeper = Sweeper::new(data, priors, &state.params);
    for iter in 0..config.n_iters {
        let (next, accepts) = sweeper.sweep(state, &scales, &mut rng);
        state = next;
        if iter < config.burn_in {
            for (w, &a) in window_coef.iter_mut().zip(&accepts.coef) {
                *w += a as usize;
            }
            for (w, &a) in window_eps.iter_mut().zip(&accepts.eps) {
                *w += a as usize;
            }
            if (iter + 1) % ADAPT_WINDOW == 0 {
                adapt(&mut scales.coef, &mut window_coef, config.target_accept);
                adapt(&mut scales.eps, &mut window_eps, config.target_accept);
            }
        } else {
            run.post_iters += 1;
            for (c, &a) in run.coef_accepts.iter_mut().zip(&accepts.coef) {
                *c += a as usize;
            }
            run.eps_accepts += accepts.eps.iter().filter(|&&a| a).count();
            if (iter - config.burn_in + 1).is_multiple_of(config.thin) {
                run.draws.push(Draw {
                    params: state.params.clone(),
                    eps: config.keep_latent.then(|| state.eps.clone()),
                });
            }
        }
    }
    Ok(run)
}

fn adapt(scales: &mut [f64], window: &mut [usize], target: f64) {
    for (s, w) in scales.iter_mut().zip(window.iter_mut()) {
        let rate = *w as f64 / ADAPT_WINDOW as f64;
        *s *= if rate > target { 1.1 } else { 0.9 };
        *w = 0;
    }
}
