use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use chrono::{DateTime, Utc};
use log::{info, warn};
use narrinf_core::dataset::Dataset;
use narrinf_core::estimand::{ImpactContext, ImpactEstimate};
use narrinf_core::exposure::exposure_profile;
use narrinf_core::fisher::{crlb as crlb_bound, design_diagnostics, fisher_information};
use narrinf_core::graph::{degrees, pagerank, PageRankConfig};
use narrinf_core::inference::{diagnostics, fit as run_fit, FitData, McmcConfig, PosteriorSamples, PriorSpec};
use narrinf_core::ingest::{
    self, format_time, read_accounts, write_accounts, write_records, AccountStats, NarrativeSpec,
};
use narrinf_core::model::{ModelConfig, ModelParams};
use narrinf_core::simulate::{narrative_spec, render_records, simulate_dataset, SimulationSpec};
use serde::{Deserialize, Serialize};

use crate::failure::{CmdResult, Failure, WithPath, EXIT_CONVERGENCE};
use crate::output::{verify_manifest, OutputSet, Provenance};
use crate::{CrlbArgs, FitArgs, ImpactArgs, IngestArgs, SimulateArgs, VerifyArgs};

pub const ACCOUNTS_FILE: &str = "accounts.csv";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

/// Fixed origin of simulated timelines.
const SIM_START: &str = "2017-05-05T12:00:00Z";

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let file = File::open(path).at(path)?;
    serde_json::from_reader(BufReader::new(file)).at(path)
}

fn read_dataset(dir: &Path, prov: &mut Provenance) -> CmdResult<Dataset> {
    let data = Dataset::read_dir(dir).at(dir)?;
    for name in ["edges.csv", "covariates.csv", "outcomes.csv", "sources.csv"] {
        prov.input(&dir.join(name))?;
    }
    Ok(data)
}

fn add_dataset(out: &mut OutputSet, dir: &Path, data: &Dataset) -> CmdResult {
    for (name, bytes) in data.to_csv_files()? {
        out.add(dir.join(name), bytes);
    }
    Ok(())
}

fn accounts_csv(stats: &[AccountStats]) -> CmdResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_accounts(stats, &mut buf)?;
    Ok(buf)
}

pub fn ingest(a: &IngestArgs) -> CmdResult {
    let mut prov = Provenance::start("ingest", a, None)?;
    let spec: NarrativeSpec = read_json(&a.narrative)?;
    prov.input(&a.narrative)?;
    let file = File::open(&a.input).at(&a.input)?;
    let parsed = ingest::parse_records(BufReader::new(file)).at(&a.input)?;
    prov.input(&a.input)?;
    let sources = match &a.sources {
        Some(p) => {
            let text = fs::read_to_string(p).at(p)?;
            prov.input(p)?;
            Some(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };
    let mut result = ingest::ingest(&parsed.records, &spec, sources.as_deref()).map_err(|e| {
        let f = Failure::from(e);
        if f.code == crate::failure::EXIT_EMPTY {
            Failure::new(f.code, "no records match the narrative definition")
        } else {
            f
        }
    })?;
    if a.normalize_rows {
        result.dataset.graph = result.dataset.graph.normalize_rows();
    }
    info!(
        "{} narrative records, {} accounts, {} edges, {} sources, {} retweets excluded",
        result.n_filtered,
        result.dataset.n_vertices(),
        result.dataset.graph.edge_count(),
        result.dataset.sources.count(),
        result.excluded_retweets
    );
    let mut out = OutputSet::new();
    add_dataset(&mut out, &a.out, &result.dataset)?;
    out.add(a.out.join(ACCOUNTS_FILE), accounts_csv(&result.accounts)?);
    prov.finish(&mut out, &a.out)?;
    out.commit()
}

#[derive(Serialize)]
struct FitReport<'a> {
    diagnostics: &'a narrinf_core::inference::Diagnostics,
    mcmc: &'a McmcConfig,
    priors: &'a PriorSpec,
    model: &'a ModelConfig,
    max_rhat_threshold: f64,
}

pub fn fit(a: &FitArgs) -> CmdResult {
    let mut prov = Provenance::start("fit", a, Some(a.seed))?;
    let config = McmcConfig {
        n_chains: a.chains,
        n_iters: a.iters,
        burn_in: a.burn,
        thin: a.thin,
        seed: a.seed,
        target_accept: a.target_accept,
        keep_latent: false,
    };
    config.validate()?;
    let priors = match &a.priors {
        Some(p) => {
            prov.input(p)?;
            read_json(p)?
        }
        None => PriorSpec::default(),
    };
    let model = ModelConfig {
        n_hops: a.hops,
        ..Default::default()
    };
    model.validate()?;
    let data = read_dataset(&a.data, &mut prov)?;
    let fit_data = FitData::from_dataset(&data, model)?;
    let samples = run_fit(&fit_data, &priors, &config)?;
    let diag = diagnostics(&samples);
    for n in &diag.notices {
        warn!("{n}");
    }

    let mut out = OutputSet::new();
    let mut posterior = Vec::new();
    samples.write_csv(&mut posterior)?;
    out.add(a.out.join(POSTERIOR_FILE), posterior);
    out.add_json(
        a.out.join(DIAGNOSTICS_FILE),
        &FitReport {
            diagnostics: &diag,
            mcmc: &config,
            priors: &priors,
            model: &model,
            max_rhat_threshold: a.max_rhat,
        },
    )?;
    prov.finish(&mut out, &a.out)?;
    out.commit()?;

    match diag.max_rhat() {
        Some(r) if r > a.max_rhat => Err(Failure::new(
            EXIT_CONVERGENCE,
            format!("split R-hat {r:.3} exceeds {}; outputs written, run longer chains", a.max_rhat),
        )),
        _ => Ok(()),
    }
}

/// One row of the account report.
#[derive(Debug, Serialize)]
struct ReportRow<'a> {
    screen_name: &'a str,
    #[serde(rename = "T")]
    tweets: u64,
    #[serde(rename = "TRT")]
    total_retweets: u64,
    #[serde(rename = "MRT")]
    most_retweeted: u64,
    #[serde(rename = "F")]
    followers: Option<u64>,
    first_time: String,
    #[serde(rename = "PR")]
    pagerank: String,
    #[serde(rename = "Impact")]
    impact: String,
}

#[derive(Debug, Serialize)]
struct ImpactRow<'a> {
    vertex_id: &'a str,
    screen_name: &'a str,
    zeta_mean: f64,
    zeta_lo: f64,
    zeta_hi: f64,
    n_draws: usize,
}

/// Account statistics from `accounts.csv`, or graph-derived stand-ins
/// (T = outcome count, TRT = out-strength) when the dataset has none.
fn load_accounts(dir: &Path, data: &Dataset, prov: &mut Provenance) -> CmdResult<Vec<AccountStats>> {
    let path = dir.join(ACCOUNTS_FILE);
    let ids = data.graph.vertex_ids();
    if path.exists() {
        let stats = read_accounts(File::open(&path).at(&path)?).at(&path)?;
        prov.input(&path)?;
        let by_id: HashMap<&str, &AccountStats> =
            stats.iter().map(|s| (s.vertex_id.as_str(), s)).collect();
        return ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Failure::input(format!("{}: no row for vertex `{id}`", path.display())))
            })
            .collect();
    }
    let d = degrees(&data.graph);
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| AccountStats {
            vertex_id: id.clone(),
            screen_name: id.clone(),
            tweets: data.outcomes.0[i],
            total_retweets: d.out_strength[i].round() as u64,
            most_retweeted: data.graph.out_edges(i).map(|(_, w)| w).fold(0.0, f64::max).round() as u64,
            followers: None,
            first_time: None,
        })
        .collect())
}

fn time_or_blank(t: &Option<DateTime<Utc>>) -> String {
    t.as_ref().map(format_time).unwrap_or_default()
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> CmdResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::input(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Failure::input(e.to_string()))
}

pub fn impact(a: &ImpactArgs) -> CmdResult {
    let mut prov = Provenance::start("impact", a, None)?;
    let data = read_dataset(&a.data, &mut prov)?;
    let file = File::open(&a.posterior).at(&a.posterior)?;
    let samples = PosteriorSamples::read_csv(BufReader::new(file)).at(&a.posterior)?;
    prov.input(&a.posterior)?;
    let accounts = load_accounts(&a.data, &data, &mut prov)?;

    let g = &data.graph;
    let subset = match &a.vertices {
        Some(ids) => Some(
            ids.iter()
                .map(|id| {
                    g.index_of(id.trim())
                        .ok_or_else(|| Failure::input(format!("unknown vertex `{id}`")))
                })
                .collect::<CmdResult<Vec<_>>>()?,
        ),
        None => None,
    };
    let cfg = ModelConfig {
        n_hops: samples.n_hops,
        ..Default::default()
    };
    let ctx = ImpactContext::uniquely_impactful(g, &data.covariates, cfg)?;
    let ranked: Vec<ImpactEstimate> = ctx.rank(&samples, subset.as_deref())?;

    let rows: Vec<ImpactRow> = ranked
        .iter()
        .map(|e| ImpactRow {
            vertex_id: &e.vertex_id,
            screen_name: &accounts[e.vertex].screen_name,
            zeta_mean: e.zeta_mean,
            zeta_lo: e.zeta_lo,
            zeta_hi: e.zeta_hi,
            n_draws: e.n_draws,
        })
        .collect();
    let mut out = OutputSet::new();
    out.add(&a.out, csv_bytes(&rows)?);

    if let Some(report) = &a.report {
        let pr = pagerank(g, PageRankConfig::default())?;
        let scale = g.n_vertices() as f64;
        let rows: Vec<ReportRow> = ranked
            .iter()
            .map(|e| {
                let s = &accounts[e.vertex];
                ReportRow {
                    screen_name: &s.screen_name,
                    tweets: s.tweets,
                    total_retweets: s.total_retweets,
                    most_retweeted: s.most_retweeted,
                    followers: s.followers,
                    first_time: time_or_blank(&s.first_time),
                    pagerank: format!("{:.2}", pr.scores[e.vertex] * scale),
                    impact: format!("{:.2}", e.zeta_mean),
                }
            })
            .collect();
        out.add(report, csv_bytes(&rows)?);
    }
    let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    prov.finish(&mut out, dir)?;
    out.commit()
}

#[derive(Serialize)]
struct CrlbReport {
    names: Vec<String>,
    fisher: Vec<Vec<f64>>,
    crlb: Vec<Vec<f64>>,
    condition_number: f64,
    f11: f64,
    f22: f64,
    ridge: f64,
    flags: Vec<String>,
}

pub fn crlb(a: &CrlbArgs) -> CmdResult {
    let mut prov = Provenance::start("crlb", a, None)?;
    let params: ModelParams = read_json(&a.params)?;
    prov.input(&a.params)?;
    params.validate()?;
    let data = read_dataset(&a.data, &mut prov)?;
    let m = data.covariates.n_cols();
    if m != 1 || params.n_hops() != 1 {
        return Err(Failure::new(
            crate::failure::EXIT_UNSUPPORTED,
            format!(
                "the Cramér-Rao report covers 1 hop and 1 covariate (data has {m} covariates, params have {} hops); \
                 drop extra covariate columns or refit with --hops 1",
                params.n_hops()
            ),
        ));
    }
    let s = exposure_profile(&data.graph, &data.sources, 1)?;
    let x = data.covariates.column(0);
    let f = fisher_information(&params, &data.sources, s.hop(1), &x)?;
    let diag = design_diagnostics(&f, a.floor);
    for flag in diag.flags() {
        warn!("{flag}");
    }
    let bound = crlb_bound(&f, a.ridge)?;
    let report = CrlbReport {
        names: f.names.clone(),
        fisher: f.rows(),
        crlb: bound.rows(),
        condition_number: bound.condition_number,
        f11: bound.f11,
        f22: bound.f22,
        ridge: a.ridge,
        flags: diag.flags(),
    };
    let mut out = OutputSet::new();
    out.add_json(&a.out, &report)?;
    let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    prov.finish(&mut out, dir)?;
    out.commit()
}

pub fn simulate(a: &SimulateArgs) -> CmdResult {
    let mut prov = Provenance::start("simulate", a, Some(a.seed))?;
    let mut spec = SimulationSpec::calibration(a.seed);
    spec.n = a.n;
    spec.mean_out_degree = a.mean_degree;
    spec.weight_max = a.weight_max;
    spec.n_sources = a.n_sources;
    if let Some(p) = &a.params {
        spec.params = read_json(p)?;
        prov.input(p)?;
    }
    let sim = simulate_dataset(&spec)?;
    let ds = &sim.dataset;
    let start: DateTime<Utc> = SIM_START.parse().expect("valid timestamp");
    let records = render_records(ds, start, a.seed);
    let mut jsonl = Vec::new();
    write_records(&records, &mut jsonl)?;
    let accounts = ingest::account_stats(&records, &ds.graph);
    let sources: String = ds
        .graph
        .vertex_ids()
        .iter()
        .zip(ds.sources.as_slice())
        .filter(|(_, &z)| z)
        .map(|(id, _)| format!("{id}\n"))
        .collect();

    let mut out = OutputSet::new();
    add_dataset(&mut out, &a.out, ds)?;
    out.add(a.out.join(ACCOUNTS_FILE), accounts_csv(&accounts)?);
    out.add_json(a.out.join("truth.json"), &spec.params)?;
    out.add_json(a.out.join("simulation.json"), &spec)?;
    out.add(a.out.join("tweets.jsonl"), jsonl);
    out.add_json(a.out.join("narrative.json"), &narrative_spec())?;
    out.add(a.out.join("sources.txt"), sources.into_bytes());
    prov.finish(&mut out, &a.out)?;
    out.commit()
}

pub fn verify(a: &VerifyArgs) -> CmdResult {
    let bad = verify_manifest(&a.manifest)?;
    if bad.is_empty() {
        println!("ok");
        Ok(())
    } else {
        Err(Failure::input(bad.join("\n")))
    }
}
