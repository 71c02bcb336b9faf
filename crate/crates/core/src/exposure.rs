//! Multi-hop log-exposure `s⁽ⁿ⁾(Z) = ln((Aᵀ)ⁿ Z + 1)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::{InfluenceGraph, SourceVector};

/// Row `n - 1` holds `s⁽ⁿ⁾_i` for every vertex `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureTensor {
    s: Vec<Vec<f64>>,
}

impl ExposureTensor {
    /// Wraps precomputed exposure rows, checking they are finite, nonnegative
    /// and of equal length.
    pub fn from_rows(s: Vec<Vec<f64>>) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Config("exposure needs at least one hop".into()));
        }
        let n = s[0].len();
        for row in &s {
            if row.len() != n {
                return Err(Error::Dimension {
                    what: "exposure row",
                    expected: n,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config("exposure entries must be finite and >= 0".into()));
            }
        }
        Ok(Self { s })
    }

    pub fn n_hops(&self) -> usize {
        self.s.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.s[0].len()
    }

    /// `s⁽ⁿ⁾` for `hop` in `1..=n_hops`.
    pub fn hop(&self, hop: usize) -> &[f64] {
        &self.s[hop - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.s
    }

    /// Exposure of vertex `i` at `hop` (1-based).
    pub fn get(&self, hop: usize, i: usize) -> f64 {
        self.s[hop - 1][i]
    }

    /// CSV dump with header `hop,vertex_id,exposure`.
    pub fn write_csv<W: Write>(&self, ids: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["hop", "vertex_id", "exposure"])?;
        for (h, row) in self.s.iter().enumerate() {
            for (id, v) in ids.iter().zip(row) {
                w.write_record([(h + 1).to_string(), id.clone(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Raw propagated amounts `w⁽ⁿ⁾ = (Aᵀ)ⁿ w⁽⁰⁾` for `n = 1..=n_hops`.
pub fn propagate_hops(g: &InfluenceGraph, seed: &[f64], n_hops: usize) -> Result<Vec<Vec<f64>>> {
    if seed.len() != g.n_vertices() {
        return Err(Error::Dimension {
            what: "source vector",
            expected: g.n_vertices(),
            got: seed.len(),
        });
    }
    if n_hops == 0 {
        return Err(Error::Config("n_hops must be >= 1".into()));
    }
    let mut hops = Vec::with_capacity(n_hops);
    let mut w = seed.to_vec();
    for hop in 1..=n_hops {
        w = g.propagate(&w);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::ExposureOverflow { hop });
        }
        hops.push(w.clone());
    }
    Ok(hops)
}

/// Log-exposure profile of source vector `z` over `n_hops` hops.
pub fn exposure_profile(
    g: &InfluenceGraph,
    z: &SourceVector,
    n_hops: usize,
) -> Result<ExposureTensor> {
    let hops = propagate_hops(g, &z.to_f64(), n_hops)?;
    let s = hops
        .into_iter()
        .map(|w| w.into_iter().map(|v| (v + 1.0).ln()).collect())
        .collect();
    Ok(ExposureTensor { s })
}
