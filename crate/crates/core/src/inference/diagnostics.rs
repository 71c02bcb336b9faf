use serde::Serialize;

use super::PosteriorSamples;
use crate::stats::{central_interval, mean, variance};

/// Parameters whose split-R̂ exceeds this value are flagged.
pub const RHAT_FLAG: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    /// Split-R̂; absent with a single chain.
    pub rhat: Option<f64>,
    /// Every split half had zero within-chain variance.
    pub zero_variance: bool,
    pub rhat_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n_chains: usize,
    pub n_draws: usize,
    pub params: Vec<ParamSummary>,
    pub acceptance_rates: Vec<(String, f64)>,
    pub notices: Vec<String>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> Option<f64> {
        self.params
            .iter()
            .filter_map(|p| p.rhat)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }

    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Split-R̂ from per-chain traces: each chain is halved and the
/// between/within variance ratio taken over the halves.
/// Returns `(rhat, zero_variance)`.
pub(crate) fn split_rhat(chains: &[Vec<f64>]) -> (f64, bool) {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return (f64::NAN, false);
    }
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let within = halves.iter().map(|h| variance(h)).sum::<f64>() / m;
    let between = n * variance(&means);
    if within == 0.0 {
        return if between == 0.0 {
            (1.0, true)
        } else {
            (f64::INFINITY, true)
        };
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    ((var_plus / within).sqrt(), false)
}

/// Posterior mean, sd, 90% interval and split-R̂ per parameter.
pub fn diagnostics(samples: &PosteriorSamples) -> Diagnostics {
    let n_chains = samples.chains.len();
    let mut notices = Vec::new();
    if n_chains < 2 {
        notices.push("split-R̂ omitted: fewer than two chains".to_string());
    }
    let params = samples
        .param_names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let trace = samples.trace(k);
            let all: Vec<f64> = trace.iter().flatten().copied().collect();
            let (q05, q95) = if all.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                central_interval(&all, 0.9)
            };
            let (rhat, zero_variance) = if n_chains >= 2 {
                let (r, zv) = split_rhat(&trace);
                (Some(r), zv)
            } else {
                (None, false)
            };
            ParamSummary {
                mean: mean(&all),
                sd: variance(&all).sqrt(),
                q05,
                q95,
                rhat_flag: rhat.is_some_and(|r| !(r <= RHAT_FLAG)),
                rhat,
                zero_variance,
                name,
            }
        })
        .collect();
    Diagnostics {
        n_chains,
        n_draws: samples.n_draws(),
        params,
        acceptance_rates: samples.acceptance_rates.clone(),
        notices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn constant_chain(len: usize, tau: f64) -> Vec<ModelParams> {
        (0..len)
            .map(|_| ModelParams {
                tau,
                ..ModelParams::zeros(1, 1)
            })
            .collect()
    }

    #[test]
    fn identical_constant_chains() {
        let s = PosteriorSamples::from_params(vec![constant_chain(10, 1.0), constant_chain(10, 1.0)])
            .unwrap();
        let d = diagnostics(&s);
        let tau = d.get("tau").unwrap();
        assert_eq!(tau.rhat, Some(1.0));
        assert!(tau.zero_variance);
        assert!(!tau.rhat_flag);
    }

    #[test]
    fn single_chain_omits_rhat() {
        let s = PosteriorSamples::from_params(vec![constant_chain(10, 1.0)]).unwrap();
        let d = diagnostics(&s);
        assert!(d.params.iter().all(|p| p.rhat.is_none()));
        assert_eq!(d.notices.len(), 1);
    }

    #[test]
    fn disagreeing_chains_flagged() {
        let a: Vec<ModelParams> = (0..40)
            .map(|i| ModelParams {
                tau: (i % 3) as f64 * 0.01,
                ..ModelParams::zeros(1, 1)
            })
            .collect();
        let b: Vec<ModelParams> = a
            .iter()
            .map(|p| ModelParams {
                tau: p.tau + 5.0,
                ..p.clone()
            })
            .collect();
        let d = diagnostics(&PosteriorSamples::from_params(vec![a, b]).unwrap());
        let tau = d.get("tau").unwrap();
        assert!(tau.rhat.unwrap() > 10.0);
        assert!(tau.rhat_flag);
    }

    #[test]
    fn rhat_near_one_for_iid_halves() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| rng.random::<f64>()).collect())
            .collect();
        let (r, zv) = split_rhat(&chains);
        assert!(!zv);
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }
}
