//! Synthetic datasets drawn from the outcome model.

use chrono::{DateTime, Duration, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateMatrix, Dataset};
use crate::error::{Error, Result};
use crate::graph::{degrees, InfluenceGraph, SourceVector};
use crate::ingest::{NarrativeSpec, RetweetRef, TweetRecord};
use crate::model::{simulate_graph, simulate_outcomes, LatentEffects, ModelConfig, ModelParams};

pub const POPULARITY: &str = "popularity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub mean_out_degree: f64,
    pub weight_max: u32,
    /// Number of source vertices; defaults to `max(1, n / 10)`.
    pub n_sources: Option<usize>,
    pub params: ModelParams,
    pub seed: u64,
}

impl SimulationSpec {
    /// The calibration design: `N = 200`, mean out-degree 5 and
    /// `(τ, γ₁, β, μ, σ_ε) = (1, 0.5, 0.3, −0.5, 0.1)`.
    pub fn calibration(seed: u64) -> Self {
        Self {
            n: 200,
            mean_out_degree: 5.0,
            weight_max: 3,
            n_sources: None,
            params: ModelParams {
                tau: 1.0,
                gamma: vec![0.5],
                beta: vec![0.3],
                mu: -0.5,
                sigma_eps: 0.1,
            },
            seed,
        }
    }

    pub fn source_count(&self) -> usize {
        self.n_sources.unwrap_or((self.n / 10).max(1)).min(self.n)
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: Dataset,
    pub eps: LatentEffects,
}

/// `ln(1 + out_degree)` per vertex, the popularity covariate.
pub fn popularity(g: &InfluenceGraph) -> Result<CovariateMatrix> {
    let d = degrees(g);
    CovariateMatrix::from_column(
        POPULARITY,
        d.out_degree.iter().map(|&k| (k as f64 + 1.0).ln()).collect(),
    )
}

/// Graph, sources, popularity covariate and outcomes from one seed.
///
/// The parameter vector fixes the number of hops and must carry exactly one
/// covariate coefficient.
pub fn simulate_dataset(spec: &SimulationSpec) -> Result<Simulated> {
    spec.params.validate()?;
    if spec.params.beta.len() != 1 {
        return Err(Error::InvalidParams(format!(
            "simulation uses one covariate (popularity), got {} beta entries",
            spec.params.beta.len()
        )));
    }
    let g = simulate_graph(spec.n, spec.mean_out_degree, spec.weight_max, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut z = vec![false; spec.n];
    for i in sample(&mut rng, spec.n, spec.source_count()) {
        z[i] = true;
    }
    let z = SourceVector::new(z);
    let x = popularity(&g)?;
    let cfg = ModelConfig {
        n_hops: spec.params.n_hops(),
        ..Default::default()
    };
    let (y, eps) = simulate_outcomes(&spec.params, &g, &z, &x, &cfg, spec.seed.wrapping_add(1))?;
    Ok(Simulated {
        dataset: Dataset::new(g, z, x, y)?,
        eps,
    })
}

pub const NARRATIVE_TAG: &str = "SynthNarrative";

/// Narrative definition matching [`render_records`] output.
pub fn narrative_spec() -> NarrativeSpec {
    NarrativeSpec {
        hashtags: vec![NARRATIVE_TAG.into()],
        keywords: vec![],
        case_sensitive: false,
    }
}

/// Renders a dataset as tweet records that ingest back to the same graph.
///
/// Vertex `j` retweets vertex `i`'s first original `a_ij` times, and writes
/// `y_j − min(y_j, Σ_i a_ij)` originals of its own, so re-ingested outcomes
/// equal `max(y_j, Σ_i a_ij)`. Every vertex with out-edges gets at least one
/// original. Originals come first in vertex order, retweets a day later.
pub fn render_records(ds: &Dataset, start: DateTime<Utc>, seed: u64) -> Vec<TweetRecord> {
    let g = &ds.graph;
    let n = g.n_vertices();
    let ids = g.vertex_ids();
    let d = degrees(g);
    let mut in_strength = vec![0u64; n];
    for (_, j, a) in g.entries() {
        in_strength[j] += a as u64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let followers: Vec<u64> = (0..n).map(|_| rng.random_range(0..10_000)).collect();
    let mut records = Vec::new();
    let mut first_tweet = vec![None; n];
    let mut minute = 0i64;
    let mut next_id = 0u64;
    let mut push = |records: &mut Vec<TweetRecord>, i: usize, minute: i64, retweet_of: Option<RetweetRef>| {
        next_id += 1;
        let id = next_id.to_string();
        records.push(TweetRecord {
            tweet_id: id.clone(),
            created_at: start + Duration::minutes(minute),
            user_id: ids[i].clone(),
            screen_name: format!("acct_{}", ids[i]),
            text: format!("#{NARRATIVE_TAG} synthetic post"),
            lang: "en".into(),
            hashtags: if retweet_of.is_none() {
                vec![NARRATIVE_TAG.into()]
            } else {
                vec![]
            },
            followers_count: Some(followers[i]),
            retweet_of,
        });
        id
    };
    for i in 0..n {
        let y = ds.outcomes.0[i];
        let mut originals = y - y.min(in_strength[i]);
        if originals == 0 && d.out_degree[i] > 0 {
            originals = 1;
        }
        for _ in 0..originals {
            let id = push(&mut records, i, minute, None);
            first_tweet[i].get_or_insert(id);
            minute += 1;
        }
    }
    minute += 24 * 60;
    for (i, j, a) in g.entries() {
        let of = first_tweet[i].clone().expect("influencer has an original");
        for _ in 0..a as u64 {
            let rt = RetweetRef {
                user_id: ids[i].clone(),
                tweet_id: of.clone(),
            };
            push(&mut records, j, minute, Some(rt));
            minute += 1;
        }
    }
    if records.is_empty() && n > 0 {
        push(&mut records, 0, minute, None);
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let a = simulate_dataset(&SimulationSpec::calibration(3)).unwrap();
        let b = simulate_dataset(&SimulationSpec::calibration(3)).unwrap();
        assert_eq!(a.dataset.outcomes, b.dataset.outcomes);
        assert_eq!(a.dataset.sources, b.dataset.sources);
        assert_eq!(a.dataset.sources.count(), 20);
    }

    #[test]
    fn rendered_records_ingest_to_same_graph() {
        let sim = simulate_dataset(&SimulationSpec {
            n: 60,
            ..SimulationSpec::calibration(5)
        })
        .unwrap();
        let ds = &sim.dataset;
        let records = render_records(ds, "2017-05-05T12:00:00Z".parse().unwrap(), 5);
        let ids: Vec<String> = ds
            .graph
            .vertex_ids()
            .iter()
            .zip(ds.sources.as_slice())
            .filter(|(_, &z)| z)
            .map(|(id, _)| id.clone())
            .collect();
        let got = crate::ingest::ingest(&records, &narrative_spec(), Some(&ids)).unwrap();
        let g = &got.dataset.graph;
        assert_eq!(g.edge_count(), ds.graph.edge_count());
        for (i, j, a) in ds.graph.entries() {
            let (gi, gj) = (
                g.index_of(&ds.graph.vertex_ids()[i]),
                g.index_of(&ds.graph.vertex_ids()[j]),
            );
            assert_eq!(g.weight(gi.unwrap(), gj.unwrap()), a);
        }
        assert_eq!(got.dataset.sources.count(), ds.sources.count());
        assert_eq!(got.dataset.covariates.column_names(), ["popularity"]);
    }

    #[test]
    fn single_vertex() {
        let spec = SimulationSpec {
            n: 1,
            ..SimulationSpec::calibration(0)
        };
        let s = simulate_dataset(&spec).unwrap();
        assert_eq!(s.dataset.n_vertices(), 1);
        assert_eq!(s.dataset.sources.count(), 1);
        assert_eq!(s.dataset.graph.edge_count(), 0);
        let records = render_records(&s.dataset, "2017-05-05T12:00:00Z".parse().unwrap(), 0);
        assert!(!records.is_empty());
    }
}
