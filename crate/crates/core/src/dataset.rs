//! Tabular inputs of the outcome model and their CSV representation.
//!
//! A dataset directory holds `edges.csv` (`src,dst,weight`), `covariates.csv`
//! (`vertex_id,<columns...>`), `outcomes.csv` (`vertex_id,y`) and
//! `sources.csv` (`vertex_id,z`). The covariate file fixes the vertex order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Edge, InfluenceGraph, SourceVector};

pub const EDGES_FILE: &str = "edges.csv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const SOURCES_FILE: &str = "sources.csv";

/// Row-major `N × m` covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    rows: Vec<Vec<f64>>,
    column_names: Vec<String>,
}

impl CovariateMatrix {
    pub fn new(rows: Vec<Vec<f64>>, column_names: Vec<String>) -> Result<Self> {
        let m = column_names.len();
        if m == 0 {
            return Err(Error::Config("covariate matrix needs at least one column".into()));
        }
        for row in &rows {
            if row.len() != m {
                return Err(Error::Dimension {
                    what: "covariate row",
                    expected: m,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("covariates must be finite".into()));
            }
        }
        Ok(Self { rows, column_names })
    }

    /// Single covariate column.
    pub fn from_column(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(values.into_iter().map(|v| vec![v]).collect(), vec![name.into()])
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Rows reordered so that old row `i` lands at `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut rows = vec![Vec::new(); self.rows.len()];
        for (old, &new) in perm.iter().enumerate() {
            rows[new] = self.rows[old].clone();
        }
        Self {
            rows,
            column_names: self.column_names.clone(),
        }
    }
}

/// Observed narrative tweet counts per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeVector(pub Vec<u64>);

impl OutcomeVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

/// Graph, observed sources, covariates and outcomes over one vertex order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: InfluenceGraph,
    pub sources: SourceVector,
    pub covariates: CovariateMatrix,
    pub outcomes: OutcomeVector,
}

impl Dataset {
    pub fn new(
        graph: InfluenceGraph,
        sources: SourceVector,
        covariates: CovariateMatrix,
        outcomes: OutcomeVector,
    ) -> Result<Self> {
        let n = graph.n_vertices();
        for (what, got) in [
            ("sources", sources.len()),
            ("covariates", covariates.n_rows()),
            ("outcomes", outcomes.len()),
        ] {
            if got != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    got,
                });
            }
        }
        Ok(Self {
            graph,
            sources,
            covariates,
            outcomes,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.graph.n_vertices()
    }

    /// Reads the four dataset CSVs from `dir`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let (ids, covariates) = read_covariates(File::open(dir.join(COVARIATES_FILE))?)?;
        let edges = read_edges(File::open(dir.join(EDGES_FILE))?)?;
        let graph = InfluenceGraph::with_vertices(ids.clone(), &edges)?.graph;
        let outcomes = read_keyed(File::open(dir.join(OUTCOMES_FILE))?, "y", &ids)?;
        let sources = read_keyed(File::open(dir.join(SOURCES_FILE))?, "z", &ids)?;
        let sources = SourceVector::from_indicators(
            &sources
                .into_iter()
                .map(|v| u8::try_from(v).unwrap_or(u8::MAX))
                .collect::<Vec<_>>(),
        )?;
        Self::new(graph, sources, covariates, OutcomeVector(outcomes))
    }

    /// Renders the four dataset CSVs as `(file name, contents)` pairs.
    pub fn to_csv_files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let ids = self.graph.vertex_ids();
        let mut edges = Vec::new();
        write_edges(&self.graph.edges(), &mut edges)?;
        let mut cov = Vec::new();
        write_covariates(ids, &self.covariates, &mut cov)?;
        let mut out = Vec::new();
        write_keyed(ids, "y", &self.outcomes.0, &mut out)?;
        let z: Vec<u64> = self.sources.as_slice().iter().map(|&b| b as u64).collect();
        let mut src = Vec::new();
        write_keyed(ids, "z", &z, &mut src)?;
        Ok(vec![
            (EDGES_FILE, edges),
            (COVARIATES_FILE, cov),
            (OUTCOMES_FILE, out),
            (SOURCES_FILE, src),
        ])
    }
}

pub fn write_edges<W: Write>(edges: &[Edge], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["src", "dst", "weight"])?;
    for e in edges {
        w.write_record([e.src.as_str(), e.dst.as_str(), &e.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edges<R: Read>(input: R) -> Result<Vec<Edge>> {
    let mut r = csv::Reader::from_reader(input);
    expect_header(r.headers()?, &["src", "dst", "weight"])?;
    let mut edges = Vec::new();
    for rec in r.deserialize() {
        edges.push(rec?);
    }
    Ok(edges)
}

pub fn write_covariates<W: Write>(ids: &[String], x: &CovariateMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["vertex_id".to_string()];
    header.extend(x.column_names().iter().cloned());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(x.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Returns the vertex order and the covariate matrix.
pub fn read_covariates<R: Read>(input: R) -> Result<(Vec<String>, CovariateMatrix)> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("vertex_id") {
        return Err(Error::Parse("covariates.csv must start with vertex_id".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad covariate value `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((ids, CovariateMatrix::new(rows, names)?))
}

/// Writes a `vertex_id,<column>` table.
pub fn write_keyed<W: Write>(ids: &[String], column: &str, values: &[u64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vertex_id", column])?;
    for (id, v) in ids.iter().zip(values) {
        w.write_record([id.as_str(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `vertex_id,<column>` table and aligns it to `ids`.
pub fn read_keyed<R: Read>(input: R, column: &str, ids: &[String]) -> Result<Vec<u64>> {
    let mut r = csv::Reader::from_reader(input);
    expect_header(r.headers()?, &["vertex_id", column])?;
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut values = vec![None; ids.len()];
    for rec in r.records() {
        let rec = rec?;
        let i = *index
            .get(&rec[0])
            .ok_or_else(|| Error::UnknownVertex(rec[0].to_string()))?;
        let v = rec[1]
            .parse::<u64>()
            .map_err(|_| Error::Parse(format!("bad {column} value `{}`", &rec[1])))?;
        values[i] = Some(v);
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::Parse(format!("no {column} for vertex `{}`", ids[i]))))
        .collect()
}

fn expect_header(header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if header.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(Error::Parse(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )))
    }
}
