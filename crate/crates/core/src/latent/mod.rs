//! Latent Gaussian prior: components, grouping, hyperparameters and the
//! observation stack.

mod hyper;
mod precision;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::likelihood::Family;
use crate::sparse::{SparseMatrix, SparseSymmetric};

pub use hyper::{HyperId, HyperParam, HyperValues, Hypers, Prior, Transform, HYPER_SOFT_LIMIT};
pub use precision::{
    ar1_logdet, ar1_precision, group_ar1, rw1_logdet, rw1_structure, spde_precision, SpdeBasis,
};

/// Default prior precision of fixed effects.
pub const FIXED_EFFECT_PRECISION: f64 = 1e-4;

#[derive(Debug, Clone)]
pub enum ComponentKind {
    /// One coefficient with a N(0, 1/precision) prior.
    Fixed { prior_precision: f64 },
    Iid { size: usize, log_precision: HyperId },
    Ar1 { size: usize, log_precision: HyperId, rho: HyperId },
    Rw1 { size: usize, log_precision: HyperId, sum_to_zero: bool },
    Spde { basis: Arc<SpdeBasis>, log_tau: HyperId, log_kappa: HyperId },
}

impl ComponentKind {
    pub fn size(&self) -> usize {
        match self {
            ComponentKind::Fixed { .. } => 1,
            ComponentKind::Iid { size, .. }
            | ComponentKind::Ar1 { size, .. }
            | ComponentKind::Rw1 { size, .. } => *size,
            ComponentKind::Spde { basis, .. } => basis.n(),
        }
    }

    fn is_intrinsic(&self) -> bool {
        matches!(self, ComponentKind::Rw1 { .. })
    }
}

/// How `groups` copies of a base component are joined. Latent index of
/// element `i` in group `g` is `g · base_size + i`.
#[derive(Debug, Clone, PartialEq)]
pub enum Grouping {
    None,
    Replicate { groups: usize },
    Ar1 { groups: usize, rho: HyperId },
    /// Random walk across groups, with one sum-to-zero constraint per base
    /// element.
    Rw1 { groups: usize },
}

impl Grouping {
    pub fn groups(&self) -> usize {
        match self {
            Grouping::None => 1,
            Grouping::Replicate { groups } | Grouping::Ar1 { groups, .. } | Grouping::Rw1 { groups } => {
                *groups
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Component {
    pub name: String,
    pub kind: ComponentKind,
    pub grouping: Grouping,
}

impl Component {
    pub fn new(name: impl Into<String>, kind: ComponentKind) -> Self {
        Self {
            name: name.into(),
            kind,
            grouping: Grouping::None,
        }
    }

    pub fn grouped(mut self, grouping: Grouping) -> Self {
        self.grouping = grouping;
        self
    }

    pub fn base_size(&self) -> usize {
        self.kind.size()
    }

    pub fn size(&self) -> usize {
        self.base_size() * self.grouping.groups()
    }

    /// Constraint rows in local indexing.
    fn constraints(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.base_size();
        let t = self.grouping.groups();
        let mut rows = Vec::new();
        if let ComponentKind::Rw1 { sum_to_zero: true, .. } = self.kind {
            for g in 0..t {
                rows.push((0..n).map(|i| (g * n + i, 1.0)).collect());
            }
        }
        if let Grouping::Rw1 { .. } = self.grouping {
            for i in 0..n {
                rows.push((0..t).map(|g| (g * n + i, 1.0)).collect());
            }
        }
        rows
    }
}

/// Precision block of one component at fixed `θ`, with the generalized
/// log-determinant and rank of the block.
#[derive(Debug, Clone)]
pub struct ComponentPrecision {
    pub q: SparseSymmetric,
    pub logdet: f64,
    pub rank: usize,
}

fn base_precision(kind: &ComponentKind, h: &HyperValues) -> Result<ComponentPrecision> {
    Ok(match kind {
        ComponentKind::Fixed { prior_precision } => ComponentPrecision {
            q: SparseSymmetric::diagonal(&[*prior_precision]),
            logdet: prior_precision.ln(),
            rank: 1,
        },
        ComponentKind::Iid { size, log_precision } => {
            let p = h.natural(*log_precision);
            ComponentPrecision {
                q: SparseSymmetric::diagonal(&vec![p; *size]),
                logdet: *size as f64 * p.ln(),
                rank: *size,
            }
        }
        ComponentKind::Ar1 { size, log_precision, rho } => {
            let p = h.natural(*log_precision);
            let a = h.natural(*rho);
            ComponentPrecision {
                q: ar1_precision(*size, a, p)?,
                logdet: ar1_logdet(*size, a, p),
                rank: *size,
            }
        }
        ComponentKind::Rw1 { size, log_precision, .. } => {
            let p = h.natural(*log_precision);
            ComponentPrecision {
                q: rw1_structure(*size, p),
                logdet: rw1_logdet(*size, p),
                rank: size - 1,
            }
        }
        ComponentKind::Spde { basis, log_tau, log_kappa } => {
            let (tau, kappa) = (h.natural(*log_tau), h.natural(*log_kappa));
            ComponentPrecision {
                q: basis.precision(tau, kappa),
                logdet: basis.logdet(tau, kappa)?,
                rank: basis.n(),
            }
        }
    })
}

impl Component {
    pub fn precision(&self, h: &HyperValues) -> Result<ComponentPrecision> {
        let b = base_precision(&self.kind, h)?;
        let (nb, rb) = (self.base_size(), b.rank);
        Ok(match self.grouping {
            Grouping::None => b,
            Grouping::Replicate { groups } => ComponentPrecision {
                q: SparseSymmetric::kron(&SparseSymmetric::identity(groups), &b.q),
                logdet: groups as f64 * b.logdet,
                rank: groups * rb,
            },
            Grouping::Ar1 { groups, rho } => {
                let a = h.natural(rho);
                ComponentPrecision {
                    q: group_ar1(&b.q, groups, a)?,
                    logdet: rb as f64 * ar1_logdet(groups, a, 1.0) + groups as f64 * b.logdet,
                    rank: groups * rb,
                }
            }
            Grouping::Rw1 { groups } => {
                debug_assert_eq!(rb, nb, "validated: rw1 grouping needs a proper base");
                ComponentPrecision {
                    q: SparseSymmetric::kron(&rw1_structure(groups, 1.0), &b.q),
                    logdet: rb as f64 * rw1_logdet(groups, 1.0) + (groups - 1) as f64 * b.logdet,
                    rank: (groups - 1) * rb,
                }
            }
        })
    }
}

/// Components laid out consecutively in the latent vector.
#[derive(Debug, Clone)]
pub struct LatentModel {
    hypers: Hypers,
    components: Vec<Component>,
    offsets: Vec<usize>,
}

impl LatentModel {
    pub fn new(hypers: Hypers, components: Vec<Component>) -> Result<Self> {
        hypers.validate()?;
        let mut offsets = vec![0];
        for c in &components {
            if c.base_size() == 0 || c.grouping.groups() == 0 {
                return Err(Error::InvalidModel(format!("component {} has size zero", c.name)));
            }
            if let ComponentKind::Fixed { prior_precision } = c.kind {
                if !(prior_precision > 0.0) || c.grouping != Grouping::None {
                    return Err(Error::InvalidModel(format!(
                        "fixed effect {} needs a positive prior precision and no grouping",
                        c.name
                    )));
                }
            }
            if let ComponentKind::Rw1 { size, .. } = c.kind {
                if size < 2 {
                    return Err(Error::InvalidModel(format!("rw1 component {} needs size >= 2", c.name)));
                }
            }
            if let Grouping::Rw1 { groups } = c.grouping {
                if c.kind.is_intrinsic() || groups < 2 {
                    return Err(Error::InvalidModel(format!(
                        "rw1 grouping of {} needs a proper base component and >= 2 groups",
                        c.name
                    )));
                }
            }
            if components.iter().filter(|d| d.name == c.name).count() > 1 {
                return Err(Error::InvalidModel(format!("duplicate component name {}", c.name)));
            }
            offsets.push(offsets.last().expect("nonempty") + c.size());
        }
        Ok(Self {
            hypers,
            components,
            offsets,
        })
    }

    pub fn hypers(&self) -> &Hypers {
        &self.hypers
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Total latent dimension.
    pub fn n(&self) -> usize {
        *self.offsets.last().expect("nonempty")
    }

    pub fn range(&self, component: usize) -> Range<usize> {
        self.offsets[component]..self.offsets[component + 1]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    /// Block-diagonal prior precision with the summed generalized
    /// log-determinant and rank.
    pub fn prior_precision(&self, h: &HyperValues) -> Result<ComponentPrecision> {
        let blocks = self
            .components
            .iter()
            .map(|c| c.precision(h))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&SparseSymmetric> = blocks.iter().map(|b| &b.q).collect();
        Ok(ComponentPrecision {
            q: SparseSymmetric::block_diag(&refs),
            logdet: blocks.iter().map(|b| b.logdet).sum(),
            rank: blocks.iter().map(|b| b.rank).sum(),
        })
    }

    /// Linear constraints `M x = 0` collected from the components.
    pub fn constraints(&self) -> Option<DMatrix<f64>> {
        let rows: Vec<Vec<(usize, f64)>> = self
            .components
            .iter()
            .enumerate()
            .flat_map(|(k, c)| {
                let off = self.offsets[k];
                c.constraints()
                    .into_iter()
                    .map(move |r| r.into_iter().map(|(i, v)| (i + off, v)).collect())
            })
            .collect();
        if rows.is_empty() {
            return None;
        }
        let mut m = DMatrix::zeros(rows.len(), self.n());
        for (r, row) in rows.iter().enumerate() {
            for &(i, v) in row {
                m[(r, i)] = v;
            }
        }
        Some(m)
    }
}

/// One block of rows of the stack.
#[derive(Debug, Clone)]
pub struct StackPart {
    pub tag: String,
    /// `None` marks a missing response (prediction row).
    pub y: Vec<Option<f64>>,
    /// Rows of the observation matrix over the full latent vector.
    pub a: SparseMatrix,
}

/// Complete model: latent prior, likelihood, responses and observation
/// matrix with tagged row ranges.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    latent: LatentModel,
    family: Family,
    y: Vec<Option<f64>>,
    a: SparseMatrix,
    tags: Vec<(String, Range<usize>)>,
}

/// Joins stack parts in order.
pub fn build_stack(latent: LatentModel, family: Family, parts: Vec<StackPart>) -> Result<ModelGraph> {
    let n = latent.n();
    let mut tags = Vec::new();
    let mut y = Vec::new();
    for p in &parts {
        if p.a.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "stack part columns",
                expected: n,
                found: p.a.ncols(),
            });
        }
        if p.a.nrows() != p.y.len() {
            return Err(Error::DimensionMismatch {
                context: "stack part rows",
                expected: p.y.len(),
                found: p.a.nrows(),
            });
        }
        if tags.iter().any(|(t, _): &(String, Range<usize>)| *t == p.tag) {
            return Err(Error::InvalidModel(format!("duplicate tag {:?}", p.tag)));
        }
        tags.push((p.tag.clone(), y.len()..y.len() + p.y.len()));
        y.extend_from_slice(&p.y);
    }
    if let Some(h) = family.hyper() {
        if h.index() >= latent.hypers().all().len() {
            return Err(Error::InvalidModel("likelihood hyperparameter is not registered".into()));
        }
    }
    let blocks: Vec<&SparseMatrix> = parts.iter().map(|p| &p.a).collect();
    let a = if blocks.is_empty() {
        SparseMatrix::zeros(0, n)
    } else {
        SparseMatrix::vstack(&blocks)?
    };
    Ok(ModelGraph {
        latent,
        family,
        y,
        a,
        tags,
    })
}

impl ModelGraph {
    pub fn latent(&self) -> &LatentModel {
        &self.latent
    }

    pub fn hypers(&self) -> &Hypers {
        self.latent.hypers()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn y(&self) -> &[Option<f64>] {
        &self.y
    }

    pub fn a(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn tags(&self) -> &[(String, Range<usize>)] {
        &self.tags
    }

    pub fn tag(&self, name: &str) -> Result<Range<usize>> {
        self.tags
            .iter()
            .find(|(t, _)| t == name)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::UnknownTag(name.to_string()))
    }

    /// Indices of rows with an observed response.
    pub fn observed_rows(&self) -> Vec<usize> {
        (0..self.y.len()).filter(|&i| self.y[i].is_some()).collect()
    }

    pub fn prior_precision(&self, theta: &[f64]) -> Result<SparseSymmetric> {
        let h = self.hypers().expand(theta)?;
        Ok(self.latent.prior_precision(&h)?.q)
    }

    pub fn log_prior_theta(&self, theta: &[f64]) -> f64 {
        self.hypers().log_prior(theta)
    }

    /// Same model with a different subset of responses marked missing.
    pub fn with_responses(&self, y: Vec<Option<f64>>) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(Error::DimensionMismatch {
                context: "response vector",
                expected: self.y.len(),
                found: y.len(),
            });
        }
        let mut m = self.clone();
        m.y = y;
        Ok(m)
    }
}
