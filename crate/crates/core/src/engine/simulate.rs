//! Synthetic space-time count data from an AR(1)-in-time SPDE field.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::likelihood::Lik;
use crate::mesh::{assemble, structured_mesh, TriMesh};
use crate::sparse::{reorder, stream_rng, SymbolicCholesky};
use crate::latent::SpdeBasis;

/// Number of moving-average terms beyond the current innovation in the
/// second covariate.
const MA_ORDER: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub n_sites: usize,
    pub n_times: usize,
    /// Cells per side of the structured simulation mesh.
    pub mesh_cells: usize,
    /// Simulation square `[lo, hi]²`; sites are drawn from nodes in `[0, 1]²`.
    pub extent: (f64, f64),
    pub range: f64,
    pub sigma0: f64,
    /// AR(1) coefficient in time, `|a| ≤ 1`.
    pub rho: f64,
    pub intercept: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub likelihood: Lik,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n_sites: 30,
            n_times: 20,
            mesh_cells: 50,
            extent: (-0.5, 1.5),
            range: 0.25,
            sigma0: 1.0,
            rho: 0.5,
            intercept: -1.0,
            beta1: 1.0,
            beta2: 0.5,
            likelihood: Lik::Poisson,
        }
    }
}

impl SimulationSpec {
    /// `κ = √8 / range` for `ν = 1`.
    pub fn kappa(&self) -> f64 {
        8f64.sqrt() / self.range
    }

    /// `τ` giving marginal variance `σ0²` when `ν = 1`.
    pub fn tau(&self) -> f64 {
        1.0 / (2.0 * PI.sqrt() * self.kappa() * self.sigma0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub site: usize,
    /// 1-based time index.
    pub time: usize,
    pub covar1: f64,
    pub covar2: f64,
    pub eta: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub mesh: TriMesh,
    pub sites: Vec<[f64; 2]>,
    pub site_nodes: Vec<usize>,
    pub covar1: Vec<f64>,
    pub covar2: Vec<f64>,
    /// Centred field `W` at mesh nodes, one column per time.
    pub field: DMatrix<f64>,
    /// Rows ordered by time, then site.
    pub rows: Vec<SimRow>,
}

impl SimulatedData {
    pub fn trend(&self, t: usize, spec: &SimulationSpec) -> f64 {
        spec.intercept + spec.beta1 * self.covar1[t] + spec.beta2 * self.covar2[t]
    }
}

/// Stationary SPDE field at every node for `count` independent draws,
/// using RNG streams `0..count` of `seed`.
pub fn sample_spde_field(mesh: &TriMesh, range: f64, sigma0: f64, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let spec = SimulationSpec {
        range,
        sigma0,
        ..SimulationSpec::default()
    };
    let basis = SpdeBasis::new(&assemble(mesh), 2)?;
    let q = basis.precision(spec.tau(), spec.kappa());
    let symbolic = Arc::new(SymbolicCholesky::analyze(&q, reorder(&q)));
    Ok(symbolic.factorize(&q)?.sample(count, seed))
}

pub fn simulate(spec: &SimulationSpec, seed: u64) -> Result<SimulatedData> {
    let t_n = spec.n_times;
    if t_n == 0 || spec.n_sites == 0 {
        return Err(Error::InvalidModel("simulation needs at least one site and one time".into()));
    }
    if !(spec.rho.abs() <= 1.0) {
        return Err(Error::InvalidCorrelation(spec.rho));
    }
    if !(spec.range > 0.0 && spec.sigma0 > 0.0) {
        return Err(Error::InvalidModel("range and sigma0 must be positive".into()));
    }
    let (lo, hi) = spec.extent;
    let mesh = structured_mesh(lo, hi, lo, hi, spec.mesh_cells, spec.mesh_cells)?;
    let mut field = sample_spde_field(&mesh, spec.range, spec.sigma0, t_n, seed)?;
    let scale = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    for t in 1..t_n {
        let prev = field.column(t - 1).clone_owned();
        let innov = field.column(t).clone_owned();
        field.set_column(t, &(prev * spec.rho + innov * scale));
    }

    let inside = mesh.vertices_in_box([0.0, 1.0], [0.0, 1.0]);
    if inside.len() < spec.n_sites {
        return Err(Error::InvalidModel(format!(
            "only {} mesh nodes inside the unit square for {} sites",
            inside.len(),
            spec.n_sites
        )));
    }
    let mut rng = stream_rng(seed, t_n as u64 + 1);
    let site_nodes: Vec<usize> = sample_indices(&mut rng, inside.len(), spec.n_sites)
        .into_iter()
        .map(|k| inside[k])
        .collect();
    let sites = site_nodes.iter().map(|&v| mesh.vertices()[v]).collect();

    let covar1: Vec<f64> = (1..=t_n).map(|t| t as f64 / t_n as f64).collect();
    let mut rng = stream_rng(seed, t_n as u64 + 2);
    let eps: Vec<f64> = (0..t_n + MA_ORDER).map(|_| StandardNormal.sample(&mut rng)).collect();
    let covar2: Vec<f64> = (0..t_n).map(|t| eps[t..=t + MA_ORDER].iter().sum()).collect();

    let mut rng = stream_rng(seed, t_n as u64 + 3);
    let mut rows = Vec::with_capacity(t_n * spec.n_sites);
    for t in 0..t_n {
        let trend = spec.intercept + spec.beta1 * covar1[t] + spec.beta2 * covar2[t];
        for (s, &v) in site_nodes.iter().enumerate() {
            let eta = trend + field[(v, t)];
            rows.push(SimRow {
                site: s,
                time: t + 1,
                covar1: covar1[t],
                covar2: covar2[t],
                eta,
                y: spec.likelihood.sample(eta, &mut rng),
            });
        }
    }
    Ok(SimulatedData {
        mesh,
        sites,
        site_nodes,
        covar1,
        covar2,
        field,
        rows,
    })
}
