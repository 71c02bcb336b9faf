//! From raw tweet records to a narrative dataset.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateMatrix, Dataset, OutcomeVector};
use crate::error::{Error, Result};
use crate::graph::{degrees, Edge, InfluenceGraph, SourceVector};
use crate::simulate::POPULARITY;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetweetRef {
    pub user_id: String,
    pub tweet_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub created_at: DateTime<Utc>,
    pub user_id: String,
    pub screen_name: String,
    pub text: String,
    pub lang: String,
    #[serde(default)]
    pub hashtags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followers_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweet_of: Option<RetweetRef>,
}

impl TweetRecord {
    pub fn is_retweet(&self) -> bool {
        self.retweet_of.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeSpec {
    #[serde(default)]
    pub hashtags: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub case_sensitive: bool,
}

impl NarrativeSpec {
    pub fn validate(&self) -> Result<()> {
        let any = self
            .hashtags
            .iter()
            .chain(&self.keywords)
            .any(|t| !t.trim_start_matches('#').is_empty());
        if any {
            Ok(())
        } else {
            Err(Error::Config("narrative spec needs at least one hashtag or keyword".into()))
        }
    }

    fn fold(&self, s: &str) -> String {
        if self.case_sensitive {
            s.to_string()
        } else {
            s.to_lowercase()
        }
    }

    /// Direct match on hashtags (leading `#` ignored) or keyword substrings.
    pub fn matches(&self, r: &TweetRecord) -> bool {
        let tags: Vec<String> = self
            .hashtags
            .iter()
            .map(|h| self.fold(h.trim_start_matches('#')))
            .filter(|h| !h.is_empty())
            .collect();
        if r
            .hashtags
            .iter()
            .any(|h| tags.contains(&self.fold(h.trim_start_matches('#'))))
        {
            return true;
        }
        let text = self.fold(&r.text);
        self.keywords
            .iter()
            .filter(|k| !k.is_empty())
            .any(|k| text.contains(&self.fold(k)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecords {
    pub records: Vec<TweetRecord>,
    pub skipped: usize,
}

fn parse_line(line: &str) -> Option<TweetRecord> {
    let r: TweetRecord = serde_json::from_str(line).ok()?;
    if r.retweet_of.as_ref().is_some_and(|rt| rt.user_id == r.user_id) {
        return None;
    }
    Some(r)
}

/// Parses JSON lines. Blank lines are ignored; lines that fail to parse,
/// self-retweets and repeated tweet ids are skipped and counted.
pub fn parse_records<R: BufRead>(input: R) -> Result<ParsedRecords> {
    let lines = input
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect::<Vec<_>>();
    let parsed: Vec<Option<TweetRecord>> = lines.par_iter().map(|l| parse_line(l)).collect();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(parsed.len());
    let mut skipped = 0;
    for r in parsed {
        match r {
            Some(r) if seen.insert(r.tweet_id.clone()) => records.push(r),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed or duplicate input lines");
    }
    if records.is_empty() {
        return Err(Error::NoRecords { skipped });
    }
    Ok(ParsedRecords { records, skipped })
}

/// Records matching `spec`, plus retweets of any kept tweet (transitively).
pub fn filter_narrative(records: &[TweetRecord], spec: &NarrativeSpec) -> Result<Vec<TweetRecord>> {
    spec.validate()?;
    let mut keep: Vec<bool> = records.iter().map(|r| spec.matches(r)).collect();
    let mut kept_ids: HashSet<&str> = records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.tweet_id.as_str())
        .collect();
    loop {
        let mut changed = false;
        for (r, k) in records.iter().zip(keep.iter_mut()) {
            if *k {
                continue;
            }
            if let Some(rt) = &r.retweet_of {
                if kept_ids.contains(rt.tweet_id.as_str()) {
                    *k = true;
                    kept_ids.insert(&r.tweet_id);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}

fn first_times(records: &[TweetRecord]) -> HashMap<&str, DateTime<Utc>> {
    let mut first: HashMap<&str, DateTime<Utc>> = HashMap::new();
    for r in records {
        first
            .entry(r.user_id.as_str())
            .and_modify(|t| *t = (*t).min(r.created_at))
            .or_insert(r.created_at);
    }
    first
}

#[derive(Debug, Clone)]
pub struct RetweetGraph {
    pub graph: InfluenceGraph,
    /// Retweets dropped because they predate the source's first narrative
    /// tweet (or the source has none).
    pub excluded: usize,
}

/// Vertices are every tweeting, retweeting or retweeted account, in first
/// appearance order. `a_ij` counts retweets by `j` of `i` made no earlier
/// than `i`'s first narrative record.
pub fn build_retweet_graph(records: &[TweetRecord]) -> Result<RetweetGraph> {
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    for r in records {
        if seen.insert(r.user_id.as_str()) {
            ids.push(r.user_id.clone());
        }
        if let Some(rt) = &r.retweet_of {
            if seen.insert(rt.user_id.as_str()) {
                ids.push(rt.user_id.clone());
            }
        }
    }
    let first = first_times(records);
    let mut edges = Vec::new();
    let mut excluded = 0;
    for r in records {
        let Some(rt) = &r.retweet_of else { continue };
        match first.get(rt.user_id.as_str()) {
            Some(&t) if r.created_at >= t => {
                edges.push(Edge::new(rt.user_id.clone(), r.user_id.clone(), 1.0));
            }
            _ => excluded += 1,
        }
    }
    if excluded > 0 {
        log::warn!(
            "excluded {excluded} retweets made before the source account's first narrative tweet"
        );
    }
    let graph = InfluenceGraph::with_vertices(ids, &edges)?.graph;
    Ok(RetweetGraph { graph, excluded })
}

fn majority<'a>(counts: &BTreeMap<&'a str, usize>) -> Option<&'a str> {
    // BTreeMap iterates in ascending key order, so the first maximum wins ties.
    let mut best: Option<(&str, usize)> = None;
    for (&k, &c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

/// Popularity `ln(1 + out_degree)` followed by one-hot majority-language
/// columns `lang_<code>`, the most frequent language overall dropped as the
/// reference. Accounts without records are assigned the reference language.
pub fn extract_covariates(records: &[TweetRecord], g: &InfluenceGraph) -> Result<CovariateMatrix> {
    let n = g.n_vertices();
    let mut overall: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_account: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); n];
    for r in records {
        let i = g
            .index_of(&r.user_id)
            .ok_or_else(|| Error::UnknownVertex(r.user_id.clone()))?;
        *overall.entry(r.lang.as_str()).or_default() += 1;
        *per_account[i].entry(r.lang.as_str()).or_default() += 1;
    }
    let reference = majority(&overall);
    let account_lang: Vec<Option<&str>> = per_account
        .iter()
        .map(|c| majority(c).or(reference))
        .collect();
    let langs: BTreeSet<&str> = account_lang
        .iter()
        .flatten()
        .copied()
        .filter(|l| Some(*l) != reference)
        .collect();
    let langs: Vec<&str> = langs.into_iter().collect();

    let d = degrees(g);
    let rows = (0..n)
        .map(|i| {
            let mut row = vec![(d.out_degree[i] as f64 + 1.0).ln()];
            row.extend(
                langs
                    .iter()
                    .map(|l| if account_lang[i] == Some(*l) { 1.0 } else { 0.0 }),
            );
            row
        })
        .collect();
    let mut names = vec![POPULARITY.to_string()];
    names.extend(langs.iter().map(|l| format!("lang_{l}")));
    CovariateMatrix::new(rows, names)
}

/// `y_i` = number of records authored by vertex `i`.
pub fn compute_outcomes(records: &[TweetRecord], g: &InfluenceGraph) -> Result<OutcomeVector> {
    let mut y = vec![0u64; g.n_vertices()];
    for r in records {
        let i = g
            .index_of(&r.user_id)
            .ok_or_else(|| Error::UnknownVertex(r.user_id.clone()))?;
        y[i] += 1;
    }
    Ok(OutcomeVector(y))
}

/// Looks an account up by user id, or by screen name with an optional `@`.
fn resolve_account(
    key: &str,
    g: &InfluenceGraph,
    names: &HashMap<&str, &str>,
) -> Option<usize> {
    g.index_of(key).or_else(|| {
        let name = key.trim_start_matches('@');
        g.vertex_ids()
            .iter()
            .position(|id| names.get(id.as_str()).is_some_and(|n| *n == name))
    })
}

/// Observed sources: accounts whose first narrative record is an original
/// tweet and no earlier than any in-neighbour's first record. If no account
/// qualifies, the author of the earliest record is the source. An explicit
/// `sources` list (user ids or screen names) replaces the rule.
pub fn infer_sources(
    records: &[TweetRecord],
    g: &InfluenceGraph,
    sources: Option<&[String]>,
) -> Result<SourceVector> {
    let n = g.n_vertices();
    if let Some(list) = sources {
        let names = screen_names(records);
        let mut z = vec![false; n];
        for key in list {
            let i = resolve_account(key, g, &names)
                .ok_or_else(|| Error::UnknownVertex(key.clone()))?;
            z[i] = true;
        }
        return Ok(SourceVector::new(z));
    }

    let mut first: Vec<Option<&TweetRecord>> = vec![None; n];
    for r in records {
        let i = g
            .index_of(&r.user_id)
            .ok_or_else(|| Error::UnknownVertex(r.user_id.clone()))?;
        if first[i].is_none_or(|f| r.created_at < f.created_at) {
            first[i] = Some(r);
        }
    }
    let mut earlier_in_neighbour = vec![false; n];
    for (i, j, _) in g.entries() {
        if let (Some(fi), Some(fj)) = (first[i], first[j]) {
            if fi.created_at < fj.created_at {
                earlier_in_neighbour[j] = true;
            }
        }
    }
    let mut z: Vec<bool> = (0..n)
        .map(|i| first[i].is_some_and(|f| !f.is_retweet()) && !earlier_in_neighbour[i])
        .collect();
    if !z.iter().any(|&b| b) {
        if let Some(r) = records.iter().min_by_key(|r| r.created_at) {
            if let Some(i) = g.index_of(&r.user_id) {
                z[i] = true;
            }
        }
    }
    Ok(SourceVector::new(z))
}

fn screen_names(records: &[TweetRecord]) -> HashMap<&str, &str> {
    let mut names = HashMap::new();
    for r in records {
        names
            .entry(r.user_id.as_str())
            .or_insert(r.screen_name.as_str());
    }
    names
}

/// Per-account activity used for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountStats {
    pub vertex_id: String,
    pub screen_name: String,
    /// Narrative records authored (T).
    pub tweets: u64,
    /// Retweets received (TRT).
    pub total_retweets: u64,
    /// Retweets of the most retweeted tweet (MRT).
    pub most_retweeted: u64,
    /// Largest follower count seen (F).
    pub followers: Option<u64>,
    #[serde(with = "rfc3339_opt")]
    pub first_time: Option<DateTime<Utc>>,
}

mod rfc3339_opt {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true)),
            None => s.serialize_str(""),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Ok(None);
        }
        DateTime::parse_from_rfc3339(&s)
            .map(|t| Some(t.with_timezone(&Utc)))
            .map_err(serde::de::Error::custom)
    }
}

pub fn account_stats(records: &[TweetRecord], g: &InfluenceGraph) -> Vec<AccountStats> {
    let names = screen_names(records);
    let first = first_times(records);
    let mut per_tweet: HashMap<&str, u64> = HashMap::new();
    let mut received: HashMap<&str, u64> = HashMap::new();
    for r in records {
        if let Some(rt) = &r.retweet_of {
            *per_tweet.entry(rt.tweet_id.as_str()).or_default() += 1;
            *received.entry(rt.user_id.as_str()).or_default() += 1;
        }
    }
    let mut tweets: HashMap<&str, u64> = HashMap::new();
    let mut most: HashMap<&str, u64> = HashMap::new();
    let mut followers: HashMap<&str, u64> = HashMap::new();
    for r in records {
        let u = r.user_id.as_str();
        *tweets.entry(u).or_default() += 1;
        let m = most.entry(u).or_default();
        *m = (*m).max(per_tweet.get(r.tweet_id.as_str()).copied().unwrap_or(0));
        if let Some(f) = r.followers_count {
            let e = followers.entry(u).or_default();
            *e = (*e).max(f);
        }
    }
    g.vertex_ids()
        .iter()
        .map(|id| {
            let u = id.as_str();
            AccountStats {
                vertex_id: id.clone(),
                screen_name: names.get(u).map_or_else(|| id.clone(), |s| s.to_string()),
                tweets: tweets.get(u).copied().unwrap_or(0),
                total_retweets: received.get(u).copied().unwrap_or(0),
                most_retweeted: most.get(u).copied().unwrap_or(0),
                followers: followers.get(u).copied(),
                first_time: first.get(u).copied(),
            }
        })
        .collect()
}

pub fn write_accounts<W: Write>(stats: &[AccountStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in stats {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_accounts<R: Read>(input: R) -> Result<Vec<AccountStats>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// JSON-lines rendering of records, one per line.
pub fn write_records<W: Write>(records: &[TweetRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub accounts: Vec<AccountStats>,
    pub n_filtered: usize,
    pub excluded_retweets: usize,
}

/// Filter, build the graph and derive covariates, outcomes and sources.
pub fn ingest(
    records: &[TweetRecord],
    spec: &NarrativeSpec,
    sources: Option<&[String]>,
) -> Result<Ingested> {
    let filtered = filter_narrative(records, spec)?;
    if filtered.is_empty() {
        return Err(Error::NoRecords { skipped: 0 });
    }
    let RetweetGraph { graph, excluded } = build_retweet_graph(&filtered)?;
    let covariates = extract_covariates(&filtered, &graph)?;
    let outcomes = compute_outcomes(&filtered, &graph)?;
    let z = infer_sources(&filtered, &graph, sources)?;
    let accounts = account_stats(&filtered, &graph);
    Ok(Ingested {
        dataset: Dataset::new(graph, z, covariates, outcomes)?,
        accounts,
        n_filtered: filtered.len(),
        excluded_retweets: excluded,
    })
}
