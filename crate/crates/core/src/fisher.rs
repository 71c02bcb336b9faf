//! Expected Fisher information of the Poisson model and its Cramér-Rao bound.
//!
//! The closed form covers the 1-hop, single-covariate model; any other
//! configuration goes through [`fisher_outer_product`], which sums
//! `λ_i g_i g_iᵀ` with `g_i = ∂η_i/∂θ` from the model gradient.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::dataset::CovariateMatrix;
use crate::error::{Error, Result};
use crate::exposure::ExposureTensor;
use crate::graph::SourceVector;
use crate::model::{expected_outcomes, linear_predictor, Design, LatentEffects, ModelConfig, ModelParams};

pub const SINGULAR_CONDITION: f64 = 1e12;
pub const DEFAULT_WEAK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    /// Symmetric, in the order of `names`.
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
    /// `∂η_i/∂τ`; equals `Z_i + γ₁ s_i⁽¹⁾` for one hop.
    pub phi: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl FisherInfo {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.matrix)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

/// Closed-form expected information for `θ = (τ, γ₁, β, μ)` with `ε = 0`.
pub fn fisher_information(
    p: &ModelParams,
    z: &SourceVector,
    s1: &[f64],
    x: &[f64],
) -> Result<FisherInfo> {
    if p.gamma.len() != 1 || p.beta.len() != 1 {
        return Err(Error::Unsupported(format!(
            "closed-form Fisher information needs 1 hop and 1 covariate (got {} hops, {} covariates); \
             use the gradient outer-product path",
            p.gamma.len(),
            p.beta.len()
        )));
    }
    let design = Design::new(
        z.clone(),
        ExposureTensor::from_rows(vec![s1.to_vec()])?,
        CovariateMatrix::from_column("x", x.to_vec())?,
    )?;
    let lambdas = design_lambdas(p, &design, &ModelConfig::default())?;
    let (tau, g1) = (p.tau, p.gamma[0]);
    let mut f = [[0.0; 4]; 4];
    let mut phi = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let l = lambdas[i];
        let zi = if z.get(i) { 1.0 } else { 0.0 };
        let ph = zi + g1 * s1[i];
        let ts = tau * s1[i];
        let xi = x[i];
        f[0][0] += l * ph * ph;
        f[0][1] += l * ph * ts;
        f[0][2] += l * ph * xi;
        f[0][3] += l * ph;
        f[1][1] += l * ts * ts;
        f[1][2] += l * ts * xi;
        f[1][3] += l * ts;
        f[2][2] += l * xi * xi;
        f[2][3] += l * xi;
        f[3][3] += l;
        phi.push(ph);
    }
    let matrix = DMatrix::from_fn(4, 4, |r, c| if r <= c { f[r][c] } else { f[c][r] });
    Ok(FisherInfo {
        matrix,
        names: ModelParams::coefficient_names(1, 1),
        phi,
        lambdas,
    })
}

fn design_lambdas(p: &ModelParams, design: &Design, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let lp = linear_predictor(p, design, &LatentEffects::zeros(design.n_vertices()), cfg)?;
    Ok(expected_outcomes(&lp.eta))
}

/// `Σ_i λ_i g_i g_iᵀ` over all coefficients `(τ, γ.., β.., μ)`, for any
/// number of hops and covariates.
pub fn fisher_outer_product(p: &ModelParams, design: &Design, cfg: &ModelConfig) -> Result<FisherInfo> {
    let lambdas = design_lambdas(p, design, cfg)?;
    let k = p.n_coefficients();
    let mut matrix = DMatrix::zeros(k, k);
    let mut phi = Vec::with_capacity(design.n_vertices());
    for (i, &l) in lambdas.iter().enumerate() {
        let g = design.predictor_gradient(p, i);
        for r in 0..k {
            for c in r..k {
                matrix[(r, c)] += l * g[r] * g[c];
            }
        }
        phi.push(g[0]);
    }
    for r in 0..k {
        for c in 0..r {
            matrix[(r, c)] = matrix[(c, r)];
        }
    }
    Ok(FisherInfo {
        matrix,
        names: ModelParams::coefficient_names(p.n_hops(), p.beta.len()),
        phi,
        lambdas,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrlbResult {
    pub covariance_bound: DMatrix<f64>,
    pub condition_number: f64,
    pub f11: f64,
    pub f22: f64,
}

impl CrlbResult {
    pub fn rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.covariance_bound)
    }
}

/// Spectral condition number of a symmetric matrix; infinite when the
/// smallest eigenvalue is not positive.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

fn deficient_directions(m: &DMatrix<f64>, names: &[String]) -> String {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    let mut dirs = Vec::new();
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > max / SINGULAR_CONDITION {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let terms: Vec<String> = v
            .iter()
            .zip(names)
            .filter(|(c, _)| c.abs() > 1e-3)
            .map(|(c, n)| format!("{c:+.3}*{n}"))
            .collect();
        dirs.push(format!("[{}]", terms.join(" ")));
    }
    dirs.join(", ")
}

/// `(F + ridge·I)⁻¹` with condition number and the `τ`, `γ₁` information
/// diagonal.
pub fn crlb(f: &FisherInfo, ridge: f64) -> Result<CrlbResult> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let k = f.dim();
    let m = &f.matrix + DMatrix::identity(k, k) * ridge;
    let cond = condition_number(&m);
    let singular = || Error::SingularDesign {
        condition: cond,
        directions: deficient_directions(&m, &f.names),
    };
    if ridge == 0.0 && !(cond <= SINGULAR_CONDITION) {
        return Err(singular());
    }
    let inv = match m.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => m.clone().try_inverse().ok_or_else(singular)?,
    };
    let sym = (&inv + inv.transpose()) * 0.5;
    Ok(CrlbResult {
        covariance_bound: sym,
        condition_number: cond,
        f11: f.matrix[(0, 0)],
        f22: if k > 1 { f.matrix[(1, 1)] } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignDiagnostics {
    pub f11: f64,
    pub f22: f64,
    pub floor: f64,
    pub weak_tau: bool,
    pub weak_gamma: bool,
}

impl DesignDiagnostics {
    pub fn flags(&self) -> Vec<String> {
        let mut flags = Vec::new();
        if self.weak_tau {
            flags.push(format!("weak design: F11 = {:e} below {:e}", self.f11, self.floor));
        }
        if self.weak_gamma {
            flags.push(format!("weak design: F22 = {:e} below {:e}", self.f22, self.floor));
        }
        flags
    }
}

/// `F₁₁`, `F₂₂` and weak-design flags against `floor`.
pub fn design_diagnostics(f: &FisherInfo, floor: f64) -> DesignDiagnostics {
    let f11 = f.matrix[(0, 0)];
    let f22 = if f.dim() > 1 { f.matrix[(1, 1)] } else { 0.0 };
    DesignDiagnostics {
        f11,
        f22,
        floor,
        weak_tau: f11 < floor,
        weak_gamma: f22 < floor,
    }
}
