//! Turns a configuration and a data table into a model graph: components,
//! observation matrix, optional prediction grid and linear combinations.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use laplgm::engine::{EngineConfig, ExploreOptions, LinComb};
use laplgm::latent::{
    build_stack, Component, ComponentKind, Grouping, HyperId, HyperParam, Hypers, LatentModel, ModelGraph, Prior,
    SpdeBasis, StackPart, Transform, FIXED_EFFECT_PRECISION,
};
use laplgm::likelihood::Family;
use laplgm::mesh::{assemble, load_mesh, projector, structured_mesh, TriMesh};
use laplgm::sparse::SparseMatrix;

use crate::config::{ComponentSection, GroupSection, HyperSection, IndexedSection, RunConfig};
use crate::data::Dataset;
use crate::error::Result;

pub const OBS_TAG: &str = "obs";
pub const PRED_TAG: &str = "pred";

/// Regular prediction grid appended to the stack as missing responses.
#[derive(Debug, Clone)]
pub struct PredictionGrid {
    pub points: Vec<[f64; 2]>,
    pub rows: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub graph: ModelGraph,
    pub engine: EngineConfig,
    pub mesh: Option<TriMesh>,
    pub prediction: Option<PredictionGrid>,
}

/// Where the covariates of a stack row come from.
#[derive(Clone, Copy)]
enum RowSource {
    Data(usize),
    /// Location `p`, other columns copied from data row `template`.
    Pred { p: [f64; 2], template: usize },
}

/// Sorted distinct values of a column, giving 0-based levels.
struct Levels(Vec<f64>);

impl Levels {
    fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        Self(v)
    }

    fn level(&self, x: f64) -> usize {
        self.0.binary_search_by(|a| a.total_cmp(&x)).expect("value taken from the same column")
    }

    fn len(&self) -> usize {
        self.0.len()
    }
}

struct Builder<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    hypers: Hypers,
    declared: HashMap<String, HyperId>,
    mesh: Option<TriMesh>,
}

/// How one component maps a row to latent entries (relative to its offset).
enum RowMap {
    Constant,
    Covariate(String),
    Indexed { column: String, levels: Levels },
    Spatial,
}

struct Plan {
    map: RowMap,
    base: usize,
    group: Option<(String, Levels)>,
}

impl<'a> Builder<'a> {
    fn column(&self, key: &str, name: &str) -> Result<&'a [f64]> {
        self.data
            .column(name)
            .ok_or_else(|| self.cfg.error(key, format!("data has no column `{name}`")))
    }

    fn value(&self, src: RowSource, name: &str) -> f64 {
        let (row, p) = match src {
            RowSource::Data(i) => (i, None),
            RowSource::Pred { p, template } => (template, Some(p)),
        };
        match (name, p) {
            ("site_x", Some(p)) => p[0],
            ("site_y", Some(p)) => p[1],
            _ => self.data.column(name).expect("column checked at plan time")[row],
        }
    }

    fn declared_hyper(&self, key: &str, name: &str) -> Result<HyperId> {
        self.declared
            .get(name)
            .copied()
            .ok_or_else(|| self.cfg.error(key, format!("hyperparameter `{name}` is not declared in [[hyper]]")))
    }

    /// The named declared hyperparameter, or a fresh one with default prior.
    fn hyper_or(&mut self, key: &str, name: Option<&String>, default: impl FnOnce() -> HyperParam) -> Result<HyperId> {
        match name {
            Some(n) => self.declared_hyper(key, n),
            None => {
                let p = default();
                if self.declared.contains_key(&p.name) || self.hypers.find(&p.name).is_some() {
                    return Err(self.cfg.error(key, format!("default hyperparameter name `{}` is already taken", p.name)));
                }
                Ok(self.hypers.add(p))
            }
        }
    }

    fn declare(&mut self, h: &HyperSection) -> Result<()> {
        let key = format!("hyper.{}", h.name);
        let transform = match h.transform.as_str() {
            "log" => Transform::Log,
            "correlation" => Transform::Correlation,
            "identity" => Transform::Identity,
            other => return Err(self.cfg.error(format!("{key}.transform"), format!("unknown transform {other:?}"))),
        };
        let prior = match h.prior.as_str() {
            "gaussian" => Prior::Gaussian {
                mean: h.mean.unwrap_or(0.0),
                precision: h.precision.unwrap_or(if transform == Transform::Correlation { 0.15 } else { 0.1 }),
            },
            "loggamma" => Prior::LogGamma {
                shape: h.shape.ok_or_else(|| self.cfg.error(format!("{key}.shape"), "loggamma prior needs a shape"))?,
                rate: h.rate.ok_or_else(|| self.cfg.error(format!("{key}.rate"), "loggamma prior needs a rate"))?,
            },
            other => return Err(self.cfg.error(format!("{key}.prior"), format!("unknown prior {other:?}"))),
        };
        prior.validate(transform).map_err(|e| self.cfg.error(&key, e.to_string()))?;
        let initial = h.initial.unwrap_or(if transform == Transform::Correlation { 2.0 } else { 0.0 });
        let mut p = HyperParam::new(&h.name, initial, transform, prior);
        if h.fixed {
            p = p.fixed(initial);
        }
        if self.declared.insert(h.name.clone(), self.hypers.add(p)).is_some() {
            return Err(self.cfg.error(key, "declared twice"));
        }
        Ok(())
    }

    fn mesh(&mut self) -> Result<&TriMesh> {
        if self.mesh.is_none() {
            let m = self
                .cfg
                .mesh
                .as_ref()
                .ok_or_else(|| self.cfg.error("mesh", "an spde component needs a [mesh] section"))?;
            let mesh = match (m.extent, m.cells, &m.vertices, &m.triangles) {
                (Some(e), Some(c), None, None) => structured_mesh(e[0], e[1], e[2], e[3], c[0], c[1])?,
                (None, None, Some(v), Some(t)) => load_mesh(&self.cfg.resolve(v), &self.cfg.resolve(t))?,
                _ => {
                    return Err(self.cfg.error(
                        "mesh",
                        "give either `extent` and `cells`, or `vertices` and `triangles`",
                    ))
                }
            };
            self.mesh = Some(mesh);
        }
        Ok(self.mesh.as_ref().expect("just set"))
    }

    fn grouping(&mut self, key: &str, g: &Option<GroupSection>) -> Result<(Grouping, Option<(String, Levels)>)> {
        let Some(g) = g else {
            return Ok((Grouping::None, None));
        };
        let levels = Levels::of(self.column(&format!("{key}.group.index"), &g.index)?);
        let groups = levels.len();
        let grouping = match g.kind.as_str() {
            "replicate" => Grouping::Replicate { groups },
            "rw1" => Grouping::Rw1 { groups },
            "ar1" => {
                let default_name = format!("{}_group_rho", key.trim_start_matches("component."));
                let rho = self.hyper_or(&format!("{key}.group.correlation"), g.correlation.as_ref(), || {
                    HyperParam::correlation(default_name)
                })?;
                Grouping::Ar1 { groups, rho }
            }
            other => return Err(self.cfg.error(format!("{key}.group.type"), format!("unknown grouping {other:?}"))),
        };
        Ok((grouping, Some((g.index.clone(), levels))))
    }

    fn indexed(&mut self, c: &IndexedSection, kind: &str) -> Result<(Component, Plan)> {
        let key = format!("component.{}", c.name);
        let levels = Levels::of(self.column(&format!("{key}.index"), &c.index)?);
        let size = levels.len();
        let prec_name = format!("{}_prec", c.name);
        let log_precision = self.hyper_or(&format!("{key}.precision"), c.precision.as_ref(), || {
            HyperParam::log_precision(prec_name, 0.0)
        })?;
        let ck = match kind {
            "iid" => ComponentKind::Iid { size, log_precision },
            "rw1" => ComponentKind::Rw1 { size, log_precision, sum_to_zero: c.sum_to_zero },
            _ => {
                let rho_name = format!("{}_rho", c.name);
                let rho = self.hyper_or(&format!("{key}.correlation"), c.correlation.as_ref(), || {
                    HyperParam::correlation(rho_name)
                })?;
                ComponentKind::Ar1 { size, log_precision, rho }
            }
        };
        let (grouping, group) = self.grouping(&key, &c.group)?;
        let comp = Component::new(&c.name, ck).grouped(grouping);
        let plan = Plan { map: RowMap::Indexed { column: c.index.clone(), levels }, base: size, group };
        Ok((comp, plan))
    }

    fn component(&mut self, c: &ComponentSection) -> Result<(Component, Plan)> {
        let plain = |map| Plan { map, base: 1, group: None };
        Ok(match c {
            ComponentSection::Intercept(s) => (
                Component::new(
                    &s.name,
                    ComponentKind::Fixed { prior_precision: s.prior_precision.unwrap_or(FIXED_EFFECT_PRECISION) },
                ),
                plain(RowMap::Constant),
            ),
            ComponentSection::Fixed(s) => {
                self.column(&format!("component.{}.covariate", s.name), &s.covariate)?;
                (
                    Component::new(
                        &s.name,
                        ComponentKind::Fixed { prior_precision: s.prior_precision.unwrap_or(FIXED_EFFECT_PRECISION) },
                    ),
                    plain(RowMap::Covariate(s.covariate.clone())),
                )
            }
            ComponentSection::Iid(s) => self.indexed(s, "iid")?,
            ComponentSection::Ar1(s) => self.indexed(s, "ar1")?,
            ComponentSection::Rw1(s) => self.indexed(s, "rw1")?,
            ComponentSection::Spde(s) => {
                let key = format!("component.{}", s.name);
                if s.alpha != 1 && s.alpha != 2 {
                    return Err(self.cfg.error(format!("{key}.alpha"), "alpha must be 1 or 2"));
                }
                let mesh = self.mesh()?;
                let basis = Arc::new(SpdeBasis::new(&assemble(mesh), s.alpha)?);
                let (tau0, kappa0) = default_spde_scale(mesh, s.alpha);
                let n_nodes = basis.n();
                let spde_prior = |name: String, v: f64| {
                    HyperParam::new(name, v.ln(), Transform::Log, Prior::Gaussian { mean: v.ln(), precision: 0.1 })
                };
                let (tau_name, kappa_name) = (format!("{}_tau", s.name), format!("{}_kappa", s.name));
                let log_tau = self.hyper_or(&format!("{key}.tau"), s.tau.as_ref(), || spde_prior(tau_name, tau0))?;
                let log_kappa =
                    self.hyper_or(&format!("{key}.kappa"), s.kappa.as_ref(), || spde_prior(kappa_name, kappa0))?;
                for (id, what) in [(log_tau, "tau"), (log_kappa, "kappa")] {
                    if self.hypers.get(id).transform != Transform::Log {
                        return Err(self.cfg.error(format!("{key}.{what}"), "spde scale parameters need a log transform"));
                    }
                }
                let (grouping, group) = self.grouping(&key, &s.group)?;
                let comp =
                    Component::new(&s.name, ComponentKind::Spde { basis, log_tau, log_kappa }).grouped(grouping);
                (comp, Plan { map: RowMap::Spatial, base: n_nodes, group })
            }
        })
    }
}

/// Prior centre for SPDE scales: range one fifth of the mesh bounding-box
/// diagonal and unit marginal standard deviation.
fn default_spde_scale(mesh: &TriMesh, alpha: u8) -> (f64, f64) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in mesh.vertices() {
        for k in 0..2 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    let range = 0.2 * diag;
    let nu = alpha as f64 - 1.0;
    let kappa = (8.0 * nu.max(0.5)).sqrt() / range;
    let tau = if alpha == 2 { 1.0 / (2.0 * PI.sqrt() * kappa) } else { 1.0 };
    (tau, kappa)
}

fn family(b: &mut Builder) -> Result<Family> {
    let l = b
        .cfg
        .likelihood
        .as_ref()
        .ok_or_else(|| b.cfg.error("likelihood", "missing [likelihood] section"))?;
    Ok(match l.family.as_str() {
        "poisson" => Family::Poisson,
        "gaussian" => Family::Gaussian {
            log_precision: b.hyper_or("likelihood.hyper", l.hyper.as_ref(), || {
                HyperParam::log_precision("obs_prec", 0.0)
            })?,
        },
        "nbinomial" => Family::NBinomial {
            log_size: b.hyper_or("likelihood.hyper", l.hyper.as_ref(), || {
                HyperParam::log_precision("obs_size", 0.0)
            })?,
        },
        other => return Err(b.cfg.error("likelihood.family", format!("unknown family {other:?}"))),
    })
}

pub fn engine_config(cfg: &RunConfig) -> Result<EngineConfig> {
    let r = &cfg.run;
    let mut explore = ExploreOptions::default();
    if let Some(s) = r.grid_step {
        explore.grid_step = s;
    }
    if let Some(d) = r.grid_drop {
        explore.grid_drop = d;
    }
    Ok(EngineConfig {
        int_strategy: r.int_strategy.parse().map_err(|e: laplgm::Error| cfg.error("run.int_strategy", e.to_string()))?,
        latent_strategy: r.strategy.parse().map_err(|e: laplgm::Error| cfg.error("run.strategy", e.to_string()))?,
        threads: r.threads,
        explore,
        ..EngineConfig::default()
    })
}

pub fn build(cfg: &RunConfig, data: &Dataset) -> Result<BuiltModel> {
    if cfg.component.is_empty() {
        return Err(cfg.error("component", "no [[component]] declared"));
    }
    let mut b = Builder { cfg, data, hypers: Hypers::new(), declared: HashMap::new(), mesh: None };
    for h in &cfg.hyper {
        b.declare(h)?;
    }
    let mut components = Vec::new();
    let mut plans = Vec::new();
    for c in &cfg.component {
        if components.iter().any(|x: &Component| x.name == c.name()) {
            return Err(cfg.error(format!("component.{}", c.name()), "declared twice"));
        }
        let (comp, plan) = b.component(c)?;
        components.push(comp);
        plans.push(plan);
    }
    let family = family(&mut b)?;
    let latent = LatentModel::new(b.hypers.clone(), components)?;
    let n_latent = latent.n();
    let offsets: Vec<usize> = (0..plans.len()).map(|k| latent.range(k).start).collect();

    let mut sources: Vec<RowSource> = (0..data.len()).map(RowSource::Data).collect();
    let mut prediction = None;
    if let Some(p) = &cfg.predict {
        let time = b.column("predict.time", "time")?;
        let template = time
            .iter()
            .position(|&t| t == p.time)
            .ok_or_else(|| cfg.error("predict.time", format!("no data row has time {}", p.time)))?;
        if p.grid < 2 {
            return Err(cfg.error("predict.grid", "need at least 2 points per side"));
        }
        let e = p.extent;
        let step = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (p.grid - 1) as f64;
        let mut points = Vec::with_capacity(p.grid * p.grid);
        for j in 0..p.grid {
            for i in 0..p.grid {
                points.push([step(e[0], e[1], i), step(e[2], e[3], j)]);
            }
        }
        let start = sources.len();
        sources.extend(points.iter().map(|&p| RowSource::Pred { p, template }));
        prediction = Some(PredictionGrid { points, rows: start..sources.len() });
    }

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(sources.len());
    let locs: Vec<[f64; 2]> = sources.iter().map(|&s| [b.value(s, "site_x"), b.value(s, "site_y")]).collect();
    let spatial = match &b.mesh {
        Some(mesh) if plans.iter().any(|p| matches!(p.map, RowMap::Spatial)) => Some(projector(mesh, &locs)?),
        _ => None,
    };
    for (r, &src) in sources.iter().enumerate() {
        let mut row = Vec::new();
        for (plan, &off) in plans.iter().zip(&offsets) {
            let g = plan.group.as_ref().map_or(0, |(col, lv)| lv.level(b.value(src, col)));
            let base = off + g * plan.base;
            match &plan.map {
                RowMap::Constant => row.push((base, 1.0)),
                RowMap::Covariate(col) => row.push((base, b.value(src, col))),
                RowMap::Indexed { column, levels } => row.push((base + levels.level(b.value(src, column)), 1.0)),
                RowMap::Spatial => {
                    let a: &SparseMatrix = spatial.as_ref().expect("built when a spatial plan exists");
                    let (idx, w) = a.row(r);
                    row.extend(idx.iter().zip(w).map(|(&i, &v)| (base + i, v)));
                }
            }
        }
        rows.push(row);
    }
    let n_obs = data.len();
    let mut parts = vec![StackPart {
        tag: OBS_TAG.into(),
        y: data.y.clone(),
        a: SparseMatrix::from_rows(n_latent, &rows[..n_obs])?,
    }];
    if let Some(p) = &prediction {
        parts.push(StackPart {
            tag: PRED_TAG.into(),
            y: vec![None; p.points.len()],
            a: SparseMatrix::from_rows(n_latent, &rows[n_obs..])?,
        });
    }
    let graph = build_stack(latent, family, parts)?;

    let mut engine = engine_config(cfg)?;
    engine.lincombs = lincombs(cfg, graph.latent())?;
    Ok(BuiltModel { graph, engine, mesh: b.mesh, prediction })
}

fn lincombs(cfg: &RunConfig, latent: &LatentModel) -> Result<Vec<LinComb>> {
    let range_of = |key: &str, name: &str| {
        latent
            .find(name)
            .map(|k| latent.range(k))
            .ok_or_else(|| cfg.error(key, format!("unknown component `{name}`")))
    };
    let mut out = Vec::new();
    for lc in &cfg.lincomb {
        let key = format!("lincomb.{}", lc.name);
        let mut fixed_terms = Vec::new();
        for a in &lc.add {
            let r = range_of(&format!("{key}.add"), a)?;
            if r.len() != 1 {
                return Err(cfg.error(format!("{key}.add"), format!("component `{a}` has {} elements, not 1", r.len())));
            }
            fixed_terms.push((r.start, 1.0));
        }
        for t in &lc.terms {
            let r = range_of(&format!("{key}.terms"), &t.component)?;
            if t.index == 0 || t.index > r.len() {
                return Err(cfg.error(
                    format!("{key}.terms"),
                    format!("index {} outside 1..={} of `{}`", t.index, r.len(), t.component),
                ));
            }
            fixed_terms.push((r.start + t.index - 1, t.weight));
        }
        match &lc.each {
            Some(c) => {
                for (k, i) in range_of(&format!("{key}.each"), c)?.enumerate() {
                    let mut terms = fixed_terms.clone();
                    terms.push((i, 1.0));
                    out.push(LinComb { name: format!("{}.{}", lc.name, k + 1), terms });
                }
            }
            None if fixed_terms.is_empty() => return Err(cfg.error(key, "a linear combination needs terms")),
            None => out.push(LinComb { name: lc.name.clone(), terms: fixed_terms }),
        }
    }
    Ok(out)
}
