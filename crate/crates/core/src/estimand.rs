//! Counterfactual imputation and per-vertex impact.
//!
//! `ζ_i(z) = (1/N) Σ_j (λ_j(z_{i+}) − λ_j(z_{i−}))`, evaluated per posterior
//! draw with `ε = 0` and the lognormal mean factor `exp(σ_ε²/2)`.
//!
//! Raw exposure is linear in `z`, so the two arms differ only on vertices
//! reachable from `i` within `N_hop` hops (plus `i` itself). Each impact
//! propagates a sparse unit vector from `i` instead of recomputing the
//! whole exposure tensor twice.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::CovariateMatrix;
use crate::error::{Error, Result};
use crate::exposure::propagate_hops;
use crate::graph::{InfluenceGraph, SourceVector};
use crate::inference::PosteriorSamples;
use crate::model::{
    expected_outcomes, linear_predictor, Design, LatentEffects, ModelConfig, ModelParams,
};
use crate::stats::{central_interval, mean};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactEstimate {
    pub vertex: usize,
    pub vertex_id: String,
    pub zeta_mean: f64,
    pub zeta_lo: f64,
    pub zeta_hi: f64,
    pub n_draws: usize,
}

/// Expected outcomes under source vector `z`: `λ_i` at `ε = 0` times
/// `exp(σ_ε²/2)`.
pub fn impute_expected_outcomes(
    p: &ModelParams,
    z: &SourceVector,
    g: &InfluenceGraph,
    x: &CovariateMatrix,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    p.validate()?;
    let design = Design::from_graph(g, z.clone(), x.clone(), p.n_hops())?;
    let lp = linear_predictor(p, &design, &LatentEffects::zeros(z.len()), cfg)?;
    let factor = heterogeneity_factor(p);
    Ok(expected_outcomes(&lp.eta)
        .into_iter()
        .map(|l| l * factor)
        .collect())
}

fn heterogeneity_factor(p: &ModelParams) -> f64 {
    (0.5 * p.sigma_eps * p.sigma_eps).exp()
}

/// Shared state for impact evaluation over one graph and base source vector.
pub struct ImpactContext<'a> {
    graph: &'a InfluenceGraph,
    x: &'a CovariateMatrix,
    base_z: SourceVector,
    cfg: ModelConfig,
    /// Raw `w⁽ⁿ⁾(base_z)` per hop.
    base_hops: Vec<Vec<f64>>,
}

/// Exposure and source indicators of both arms on the affected vertices.
struct Arms {
    vertices: Vec<usize>,
    /// `[vertex][hop]` log-exposure.
    s_minus: Vec<Vec<f64>>,
    s_plus: Vec<Vec<f64>>,
    z_minus: Vec<f64>,
    z_plus: Vec<f64>,
}

impl<'a> ImpactContext<'a> {
    pub fn new(
        graph: &'a InfluenceGraph,
        x: &'a CovariateMatrix,
        base_z: SourceVector,
        cfg: ModelConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = graph.n_vertices();
        if base_z.len() != n {
            return Err(Error::Dimension {
                what: "base source vector",
                expected: n,
                got: base_z.len(),
            });
        }
        if x.n_rows() != n {
            return Err(Error::Dimension {
                what: "covariates",
                expected: n,
                got: x.n_rows(),
            });
        }
        let base_hops = propagate_hops(graph, &base_z.to_f64(), cfg.n_hops)?;
        Ok(Self {
            graph,
            x,
            base_z,
            cfg,
            base_hops,
        })
    }

    /// Default context with the all-zero base vector.
    pub fn uniquely_impactful(
        graph: &'a InfluenceGraph,
        x: &'a CovariateMatrix,
        cfg: ModelConfig,
    ) -> Result<Self> {
        Self::new(graph, x, SourceVector::zeros(graph.n_vertices()), cfg)
    }

    fn unit_hops(&self, i: usize) -> Result<Vec<BTreeMap<usize, f64>>> {
        let mut hops = Vec::with_capacity(self.cfg.n_hops);
        let mut frontier = BTreeMap::from([(i, 1.0)]);
        for hop in 1..=self.cfg.n_hops {
            let mut next = BTreeMap::new();
            for (&k, &v) in &frontier {
                for (j, a) in self.graph.out_edges(k) {
                    *next.entry(j).or_insert(0.0) += a * v;
                }
            }
            if next.values().any(|v: &f64| !v.is_finite()) {
                return Err(Error::ExposureOverflow { hop });
            }
            hops.push(next.clone());
            frontier = next;
        }
        Ok(hops)
    }

    fn arms(&self, i: usize) -> Result<Arms> {
        let delta = self.unit_hops(i)?;
        let mut affected = BTreeSet::from([i]);
        for hop in &delta {
            affected.extend(hop.keys().copied());
        }
        let base_i = if self.base_z.get(i) { 1.0 } else { 0.0 };
        let mut arms = Arms {
            vertices: Vec::with_capacity(affected.len()),
            s_minus: Vec::with_capacity(affected.len()),
            s_plus: Vec::with_capacity(affected.len()),
            z_minus: Vec::with_capacity(affected.len()),
            z_plus: Vec::with_capacity(affected.len()),
        };
        for j in affected {
            let mut minus = Vec::with_capacity(self.cfg.n_hops);
            let mut plus = Vec::with_capacity(self.cfg.n_hops);
            for (hop, d) in delta.iter().enumerate() {
                let d = d.get(&j).copied().unwrap_or(0.0);
                let w_minus = if base_i == 0.0 {
                    self.base_hops[hop][j]
                } else {
                    (self.base_hops[hop][j] - d).max(0.0)
                };
                minus.push((w_minus + 1.0).ln());
                plus.push((w_minus + d + 1.0).ln());
            }
            let zj = if self.base_z.get(j) { 1.0 } else { 0.0 };
            arms.vertices.push(j);
            arms.s_minus.push(minus);
            arms.s_plus.push(plus);
            arms.z_minus.push(if j == i { 0.0 } else { zj });
            arms.z_plus.push(if j == i { 1.0 } else { zj });
        }
        Ok(arms)
    }

    fn zeta(&self, arms: &Arms, p: &ModelParams) -> f64 {
        let coef = p.hop_coefficients();
        let c = self.cfg.eta_clamp;
        let mut diff = 0.0;
        for (k, &j) in arms.vertices.iter().enumerate() {
            let common = p.mu
                + p.beta
                    .iter()
                    .zip(self.x.row(j))
                    .map(|(b, x)| b * x)
                    .sum::<f64>();
            let eta = |z: f64, s: &[f64]| {
                let e = p.tau * z + coef.iter().zip(s).map(|(c, s)| c * s).sum::<f64>() + common;
                e.clamp(-c, c)
            };
            let plus = eta(arms.z_plus[k], &arms.s_plus[k]).exp();
            let minus = eta(arms.z_minus[k], &arms.s_minus[k]).exp();
            diff += plus - minus;
        }
        heterogeneity_factor(p) * diff / self.graph.n_vertices() as f64
    }

    fn check_samples(&self, samples: &PosteriorSamples) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::EmptyPosterior);
        }
        if samples.n_hops != self.cfg.n_hops {
            return Err(Error::Dimension {
                what: "posterior hops",
                expected: self.cfg.n_hops,
                got: samples.n_hops,
            });
        }
        if samples.n_covariates != self.x.n_cols() {
            return Err(Error::Dimension {
                what: "posterior covariates",
                expected: self.x.n_cols(),
                got: samples.n_covariates,
            });
        }
        Ok(())
    }

    /// `ζ_i` for every draw, in chain order.
    pub fn impact_draws(&self, i: usize, samples: &PosteriorSamples) -> Result<Vec<f64>> {
        if i >= self.graph.n_vertices() {
            return Err(Error::UnknownVertex(format!("index {i}")));
        }
        self.check_samples(samples)?;
        let arms = self.arms(i)?;
        Ok(samples.draws().map(|d| self.zeta(&arms, &d.params)).collect())
    }

    pub fn impact(&self, i: usize, samples: &PosteriorSamples) -> Result<ImpactEstimate> {
        let draws = self.impact_draws(i, samples)?;
        let (lo, hi) = central_interval(&draws, 0.9);
        Ok(ImpactEstimate {
            vertex: i,
            vertex_id: self.graph.vertex_ids()[i].clone(),
            zeta_mean: mean(&draws),
            zeta_lo: lo,
            zeta_hi: hi,
            n_draws: draws.len(),
        })
    }

    /// Impacts of `subset` (every vertex when `None`), largest mean first,
    /// ties by vertex id.
    pub fn rank(
        &self,
        samples: &PosteriorSamples,
        subset: Option<&[usize]>,
    ) -> Result<Vec<ImpactEstimate>> {
        self.check_samples(samples)?;
        let all: Vec<usize>;
        let vertices = match subset {
            Some(s) => s,
            None => {
                all = (0..self.graph.n_vertices()).collect();
                &all
            }
        };
        let mut out = vertices
            .par_iter()
            .map(|&i| self.impact(i, samples))
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(|a, b| {
            b.zeta_mean
                .total_cmp(&a.zeta_mean)
                .then_with(|| a.vertex_id.cmp(&b.vertex_id))
        });
        Ok(out)
    }
}

/// `ζ_i` summary for one vertex; `base_z` defaults to all zeros.
pub fn impact(
    i: usize,
    samples: &PosteriorSamples,
    g: &InfluenceGraph,
    x: &CovariateMatrix,
    base_z: Option<&SourceVector>,
    cfg: &ModelConfig,
) -> Result<ImpactEstimate> {
    let base = base_z.cloned().unwrap_or_else(|| SourceVector::zeros(g.n_vertices()));
    ImpactContext::new(g, x, base, *cfg)?.impact(i, samples)
}

/// Ranked impacts of every vertex, or of `subset` when given.
pub fn rank_impacts(
    samples: &PosteriorSamples,
    g: &InfluenceGraph,
    x: &CovariateMatrix,
    subset: Option<&[usize]>,
    cfg: &ModelConfig,
) -> Result<Vec<ImpactEstimate>> {
    ImpactContext::uniquely_impactful(g, x, *cfg)?.rank(samples, subset)
}
