//! End-to-end fitting: mode search, exploration, per-node Gaussian
//! approximations and posterior marginals.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::{Mutex, RwLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::gaussian::{GaussianApprox, NewtonOptions, Prepared};
use super::marginal::{zmarginal, MarginalDensity, Summary, GRID_POINTS};
use super::theta::{
    explore_theta, maximize, mode_hessian, profile_theta, ExploreOptions, IntStrategy, ModeOptions, Objective, Standardization,
};
use crate::error::{Error, Result};
use crate::latent::{ComponentKind, HyperId, Hypers, ModelGraph, Transform};
use crate::likelihood::Family;

/// Approximation used for latent marginals. Only the Gaussian one is
/// available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentStrategy {
    #[default]
    Gaussian,
}

impl std::str::FromStr for LatentStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::Parse(format!("unsupported latent strategy {other:?}"))),
        }
    }
}

/// Named sparse linear combination of latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinComb {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub int_strategy: IntStrategy,
    pub latent_strategy: LatentStrategy,
    pub newton: NewtonOptions,
    pub mode: ModeOptions,
    pub explore: ExploreOptions,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub lincombs: Vec<LinComb>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            int_strategy: IntStrategy::Grid,
            latent_strategy: LatentStrategy::Gaussian,
            newton: NewtonOptions::default(),
            mode: ModeOptions::default(),
            explore: ExploreOptions::default(),
            threads: None,
            lincombs: Vec::new(),
        }
    }
}

/// Moments of the Gaussian approximation at one integration node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    pub log_post: f64,
    /// Design weight `ω`.
    pub weight: f64,
    /// Posterior weight `ω̃ ∝ ω exp(log_post)`, normalized.
    pub post_weight: f64,
    pub x_mean: Vec<f64>,
    pub x_var: Vec<f64>,
    /// Linear predictor moments for every row of the stack.
    pub eta_mean: Vec<f64>,
    pub eta_var: Vec<f64>,
    pub lincomb_mean: Vec<f64>,
    pub lincomb_var: Vec<f64>,
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    pub preprocessing: f64,
    pub solving: f64,
    pub postprocessing: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.preprocessing + self.solving + self.postprocessing
    }
}

/// Mode-search bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub log_post_mode: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentInfo {
    pub name: String,
    pub range: Range<usize>,
    pub is_fixed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdeInfo {
    pub component: String,
    pub nu: f64,
    pub log_tau: HyperId,
    pub log_kappa: HyperId,
}

/// Immutable result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_mode: Vec<f64>,
    pub standardization: Standardization,
    pub nodes: Vec<NodeStats>,
    /// Fine `(z, log π̃)` evaluations for a single hyperparameter; empty
    /// otherwise and under empirical Bayes.
    pub profile: Vec<(f64, f64)>,
    pub mlik: f64,
    pub int_strategy: IntStrategy,
    pub timings: Timings,
    pub diagnostics: ModeDiagnostics,
    pub hypers: Hypers,
    pub family: Family,
    pub components: Vec<ComponentInfo>,
    pub spde: Vec<SpdeInfo>,
    pub tags: Vec<(String, Range<usize>)>,
    pub lincomb_names: Vec<String>,
}

/// `log π̃(θ | y)` with warm starts that only move when the search accepts
/// an iterate, so values do not depend on evaluation order.
struct ThetaPosterior<'a, 'm> {
    prep: &'a Prepared<'m>,
    opts: NewtonOptions,
    warm: RwLock<Option<Vec<f64>>>,
    recent: Mutex<Vec<(Vec<f64>, Vec<f64>)>>,
}

const RECENT: usize = 8;

impl ThetaPosterior<'_, '_> {
    fn eval(&self, theta: &[f64]) -> Result<(f64, GaussianApprox)> {
        let warm = self.warm.read().expect("warm start lock").clone();
        self.prep.log_posterior(theta, warm.as_deref(), self.opts)
    }
}

impl Objective for ThetaPosterior<'_, '_> {
    fn value(&self, theta: &[f64]) -> f64 {
        match self.eval(theta) {
            Ok((v, ga)) => {
                let mut r = self.recent.lock().expect("cache lock");
                r.push((theta.to_vec(), ga.x_star));
                if r.len() > RECENT {
                    r.remove(0);
                }
                v
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn accept(&self, theta: &[f64]) {
        let cached = self
            .recent
            .lock()
            .expect("cache lock")
            .iter()
            .rev()
            .find(|(t, _)| t.as_slice() == theta)
            .map(|(_, x)| x.clone());
        let x = cached.or_else(|| self.eval(theta).ok().map(|(_, ga)| ga.x_star));
        if let Some(x) = x {
            *self.warm.write().expect("warm start lock") = Some(x);
        }
    }
}

/// Fits `model`: all rows of the stack receive predictor moments, observed
/// or not.
pub fn fit(model: &ModelGraph, cfg: &EngineConfig) -> Result<FitResult> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidModel(format!("thread pool: {e}")))?;
    pool.install(|| fit_inner(model, cfg))
}

fn fit_inner(model: &ModelGraph, cfg: &EngineConfig) -> Result<FitResult> {
    let t0 = Instant::now();
    if model.observed_rows().is_empty() {
        return Err(Error::InvalidModel("no observed responses".into()).in_stage("preprocessing"));
    }
    let n = model.latent().n();
    for lc in &cfg.lincombs {
        if let Some(&(i, _)) = lc.terms.iter().find(|(i, _)| *i >= n) {
            return Err(Error::DimensionMismatch {
                context: "linear combination index",
                expected: n,
                found: i + 1,
            }
            .in_stage("preprocessing"));
        }
    }
    let prep = Prepared::new(model).map_err(|e| e.in_stage("preprocessing"))?;
    let t1 = Instant::now();

    let post = ThetaPosterior {
        prep: &prep,
        opts: cfg.newton,
        warm: RwLock::new(None),
        recent: Mutex::new(Vec::new()),
    };
    let theta0 = model.hypers().initial_theta();
    let p = theta0.len();
    let (mode, diagnostics) = if p == 0 {
        (
            Vec::new(),
            ModeDiagnostics {
                iterations: 0,
                evaluations: 1,
                log_post_mode: 0.0,
            },
        )
    } else {
        let r = maximize(&post, &theta0, &cfg.mode).map_err(|e| e.in_stage("mode search"))?;
        (
            r.theta,
            ModeDiagnostics {
                iterations: r.iterations,
                evaluations: r.evaluations,
                log_post_mode: r.value,
            },
        )
    };
    let (mode_value, mode_ga) = post
        .eval(&mode)
        .map_err(|e| e.in_stage("Gaussian approximation at the mode"))?;
    let diagnostics = ModeDiagnostics {
        log_post_mode: mode_value,
        ..diagnostics
    };
    *post.warm.write().expect("warm start lock") = Some(mode_ga.x_star.clone());
    let hessian = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        mode_hessian(&post, &mode, mode_value, cfg.mode.hessian_step).map_err(|e| e.in_stage("Hessian"))?
    };
    let st = Standardization::new(mode.clone(), hessian).map_err(|e| e.in_stage("Hessian"))?;
    let nodes = explore_theta(&post, &st, mode_value, cfg.int_strategy, &cfg.explore);
    let profile = match cfg.int_strategy {
        IntStrategy::Eb => Vec::new(),
        _ => profile_theta(&post, &st, mode_value, &cfg.explore),
    };
    let t2 = Instant::now();

    let max_lp = nodes.iter().map(|n| n.log_post).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = nodes.iter().map(|n| n.weight * (n.log_post - max_lp).exp()).collect();
    let total: f64 = raw.iter().sum();
    let warm = mode_ga.x_star.clone();
    let stats: Vec<NodeStats> = nodes
        .par_iter()
        .zip(raw.par_iter())
        .map(|(node, &w)| {
            let ga = prep.gaussian_approximation(&node.theta, Some(&warm), cfg.newton)?;
            let mut s = node_stats(&prep, &ga, &cfg.lincombs)?;
            s.theta = node.theta.clone();
            s.z = node.z.clone();
            s.log_post = node.log_post;
            s.weight = node.weight;
            s.post_weight = w / total;
            Ok(s)
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("node approximations"))?;

    let mlik = marginal_likelihood(&stats, &st, cfg.int_strategy, cfg.explore.grid_step);
    let latent = model.latent();
    let components = latent
        .components()
        .iter()
        .enumerate()
        .map(|(c, comp)| ComponentInfo {
            name: comp.name.clone(),
            range: latent.range(c),
            is_fixed: matches!(comp.kind, ComponentKind::Fixed { .. }),
        })
        .collect();
    let spde = latent
        .components()
        .iter()
        .filter_map(|comp| match &comp.kind {
            ComponentKind::Spde {
                basis,
                log_tau,
                log_kappa,
            } if basis.alpha() == 2 => Some(SpdeInfo {
                component: comp.name.clone(),
                nu: basis.nu(),
                log_tau: *log_tau,
                log_kappa: *log_kappa,
            }),
            _ => None,
        })
        .collect();
    let t3 = Instant::now();
    Ok(FitResult {
        theta_mode: mode,
        standardization: st,
        nodes: stats,
        profile,
        mlik,
        int_strategy: cfg.int_strategy,
        timings: Timings {
            preprocessing: (t1 - t0).as_secs_f64(),
            solving: (t2 - t1).as_secs_f64(),
            postprocessing: (t3 - t2).as_secs_f64(),
        },
        diagnostics,
        hypers: model.hypers().clone(),
        family: model.family(),
        components,
        spde,
        tags: model.tags().to_vec(),
        lincomb_names: cfg.lincombs.iter().map(|l| l.name.clone()).collect(),
    })
}

fn node_stats(prep: &Prepared, ga: &GaussianApprox, lincombs: &[LinComb]) -> Result<NodeStats> {
    let model = prep.model();
    let n = prep.n();
    let sel = ga.factor.selected_inverse();
    let mut x_var = sel.diag();
    if let Some(k) = &ga.kriging {
        for (v, r) in x_var.iter_mut().zip(k.diag_reduction()) {
            *v -= r;
        }
    }
    let a = model.a();
    let eta_mean = a.mul_vec(&ga.x_star);
    let mut eta_var = Vec::with_capacity(a.nrows());
    for r in 0..a.nrows() {
        let (cols, vals) = a.row(r);
        let v = match sel.quad_form(cols, vals) {
            Some(v) => v,
            None => dense_variance(ga, n, cols, vals)?,
        };
        let red = ga
            .kriging
            .as_ref()
            .map_or(0.0, |k| k.variance_reduction(&k.wt_sparse(cols, vals)));
        eta_var.push(v - red);
    }
    let mut lincomb_mean = Vec::with_capacity(lincombs.len());
    let mut lincomb_var = Vec::with_capacity(lincombs.len());
    for lc in lincombs {
        let idx: Vec<usize> = lc.terms.iter().map(|t| t.0).collect();
        let vals: Vec<f64> = lc.terms.iter().map(|t| t.1).collect();
        lincomb_mean.push(idx.iter().zip(&vals).map(|(&i, &v)| v * ga.x_star[i]).sum());
        let v = dense_variance(ga, n, &idx, &vals)?;
        let red = ga
            .kriging
            .as_ref()
            .map_or(0.0, |k| k.variance_reduction(&k.wt_sparse(&idx, &vals)));
        lincomb_var.push(v - red);
    }
    let clamp = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = x.max(0.0));
    clamp(&mut x_var);
    clamp(&mut eta_var);
    clamp(&mut lincomb_var);
    Ok(NodeStats {
        theta: Vec::new(),
        z: Vec::new(),
        log_post: 0.0,
        weight: 0.0,
        post_weight: 0.0,
        x_mean: ga.x_star.clone(),
        x_var,
        eta_mean,
        eta_var,
        lincomb_mean,
        lincomb_var,
    })
}

/// `bᵀ Q*⁻¹ b` by a solve.
fn dense_variance(ga: &GaussianApprox, n: usize, idx: &[usize], vals: &[f64]) -> Result<f64> {
    let mut b = vec![0.0; n];
    for (&i, &v) in idx.iter().zip(vals) {
        b[i] += v;
    }
    let z = ga.factor.solve(&b)?;
    Ok(b.iter().zip(&z).map(|(a, c)| a * c).sum())
}

/// Laplace estimate over `θ`, or the numerical sum over grid nodes.
fn marginal_likelihood(nodes: &[NodeStats], st: &Standardization, strategy: IntStrategy, dz: f64) -> f64 {
    let p = st.dim();
    if p == 0 {
        return nodes[0].log_post;
    }
    let half_log_det = 0.5 * st.log_det_sigma();
    match strategy {
        IntStrategy::Grid => {
            let m = nodes.iter().map(|n| n.log_post).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = nodes.iter().map(|n| (n.log_post - m).exp()).sum();
            m + s.ln() + half_log_det + p as f64 * dz.ln()
        }
        IntStrategy::Ccd | IntStrategy::Eb => {
            let center = nodes
                .iter()
                .find(|n| n.z.iter().all(|&z| z == 0.0))
                .unwrap_or(&nodes[0]);
            center.log_post + 0.5 * p as f64 * (2.0 * PI).ln() + half_log_det
        }
    }
}

impl FitResult {
    pub fn n_latent(&self) -> usize {
        self.nodes[0].x_mean.len()
    }

    pub fn n_rows(&self) -> usize {
        self.nodes[0].eta_mean.len()
    }

    pub fn dim_theta(&self) -> usize {
        self.theta_mode.len()
    }

    /// Names of the free hyperparameters, in `θ` order.
    pub fn hyper_names(&self) -> Vec<String> {
        self.hypers.free_names()
    }

    fn mixture(&self, f: impl Fn(&NodeStats) -> (f64, f64)) -> MarginalDensity {
        let comps: Vec<(f64, f64, f64)> = self
            .nodes
            .iter()
            .map(|n| {
                let (m, v) = f(n);
                (n.post_weight, m, v.sqrt())
            })
            .collect();
        MarginalDensity::mixture(&comps)
    }

    /// Posterior mean and variance of a mixture quantity.
    fn moments(&self, f: impl Fn(&NodeStats) -> (f64, f64)) -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for n in &self.nodes {
            let (m, v) = f(n);
            m1 += n.post_weight * m;
            m2 += n.post_weight * (v + m * m);
        }
        (m1, (m2 - m1 * m1).max(0.0))
    }

    pub fn latent_marginal(&self, i: usize) -> MarginalDensity {
        self.mixture(|n| (n.x_mean[i], n.x_var[i]))
    }

    pub fn latent_moments(&self, i: usize) -> (f64, f64) {
        self.moments(|n| (n.x_mean[i], n.x_var[i]))
    }

    pub fn component(&self, name: &str) -> Result<&ComponentInfo> {
        self.components
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::InvalidModel(format!("no component named {name:?}")))
    }

    /// Marginal of the `k`-th variable of a component.
    pub fn component_marginal(&self, name: &str, k: usize) -> Result<MarginalDensity> {
        let c = self.component(name)?;
        if k >= c.range.len() {
            return Err(Error::DimensionMismatch {
                context: "component index",
                expected: c.range.len(),
                found: k,
            });
        }
        Ok(self.latent_marginal(c.range.start + k))
    }

    /// Linear predictor marginal of a stack row.
    pub fn predictor_marginal(&self, row: usize) -> MarginalDensity {
        self.mixture(|n| (n.eta_mean[row], n.eta_var[row]))
    }

    pub fn predictor_moments(&self, row: usize) -> (f64, f64) {
        self.moments(|n| (n.eta_mean[row], n.eta_var[row]))
    }

    /// Marginal of the response mean `g⁻¹(η)` of a stack row.
    pub fn response_marginal(&self, row: usize) -> Result<MarginalDensity> {
        let m = self.predictor_marginal(row);
        match self.family {
            Family::Gaussian { .. } => Ok(m),
            Family::Poisson | Family::NBinomial { .. } => m.transform(f64::exp, f64::exp),
        }
    }

    pub fn lincomb_marginal(&self, k: usize) -> MarginalDensity {
        self.mixture(|n| (n.lincomb_mean[k], n.lincomb_var[k]))
    }

    pub fn tag(&self, name: &str) -> Result<Range<usize>> {
        self.tags
            .iter()
            .find(|(t, _)| t == name)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::UnknownTag(name.to_string()))
    }

    /// Summary rows for every fixed effect, in component order.
    pub fn fixed_effects(&self) -> Vec<(String, Summary)> {
        self.components
            .iter()
            .filter(|c| c.is_fixed)
            .map(|c| (c.name.clone(), zmarginal(&self.latent_marginal(c.range.start))))
            .collect()
    }

    /// Marginal of `wᵀθ + offset` on the internal scale.
    pub fn hyper_linear_marginal(&self, w: &[f64], offset: f64) -> Result<MarginalDensity> {
        let p = self.dim_theta();
        if w.len() != p {
            return Err(Error::DimensionMismatch {
                context: "hyperparameter direction",
                expected: p,
                found: w.len(),
            });
        }
        let st = &self.standardization;
        let wv = DVector::from_column_slice(w);
        let total_var = (wv.transpose() * &st.sigma * &wv)[(0, 0)];
        if !(total_var > 0.0) {
            return Err(Error::InvalidModel("degenerate hyperparameter direction".into()));
        }
        if p == 1 {
            return Ok(self.one_dimensional(w[0], offset));
        }
        let mu: Vec<f64> = self
            .nodes
            .iter()
            .map(|n| n.theta.iter().zip(w).map(|(t, c)| t * c).sum::<f64>() + offset)
            .collect();
        let mean: f64 = self.nodes.iter().zip(&mu).map(|(n, m)| n.post_weight * m).sum();
        let spread: f64 = self
            .nodes
            .iter()
            .zip(&mu)
            .map(|(n, m)| n.post_weight * (m - mean) * (m - mean))
            .sum();
        let kernel_sd = (total_var - spread).max(0.1 * total_var).sqrt();
        let comps: Vec<(f64, f64, f64)> = self
            .nodes
            .iter()
            .zip(&mu)
            .map(|(n, &m)| (n.post_weight, m, kernel_sd))
            .collect();
        Ok(MarginalDensity::mixture(&comps))
    }

    /// One hyperparameter: a natural cubic spline interpolates the departure
    /// `r(z)` of the log densities from the Gaussian fit, continued linearly
    /// beyond the outermost points. Uses the fine profile when there is one,
    /// the integration nodes otherwise.
    fn one_dimensional(&self, w: f64, offset: f64) -> MarginalDensity {
        let st = &self.standardization;
        let s = st.s[(0, 0)];
        let points: Vec<(f64, f64)> = if self.profile.is_empty() {
            self.nodes.iter().map(|n| (n.z[0], n.log_post)).collect()
        } else {
            self.profile.clone()
        };
        let lp0 = points.iter().find(|p| p.0 == 0.0).map_or(points[0].1, |p| p.1);
        let mut r: Vec<(f64, f64)> = points.iter().map(|&(z, lp)| (z, lp - lp0 + 0.5 * z * z)).collect();
        r.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spline = NaturalSpline::new(&r);
        let half = super::marginal::GRID_SDS;
        let mut tab: Vec<(f64, f64)> = (0..GRID_POINTS)
            .map(|k| {
                let z = -half + 2.0 * half * k as f64 / (GRID_POINTS - 1) as f64;
                let u = w * (st.mode[0] + s * z) + offset;
                (u, (-0.5 * z * z + spline.eval(z)).exp() / (w * s).abs())
            })
            .collect();
        tab.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (g, d) = tab.into_iter().unzip();
        MarginalDensity::new(g, d).expect("hyperparameter grid is valid")
    }

    /// Marginal of the `j`-th free hyperparameter on the internal scale.
    pub fn hyper_marginal(&self, j: usize) -> Result<MarginalDensity> {
        let mut w = vec![0.0; self.dim_theta()];
        if j >= w.len() {
            return Err(Error::DimensionMismatch {
                context: "hyperparameter index",
                expected: w.len(),
                found: j,
            });
        }
        w[j] = 1.0;
        self.hyper_linear_marginal(&w, 0.0)
    }

    /// Free `θ` position of a hyperparameter, if it is not fixed.
    pub fn free_index(&self, id: HyperId) -> Option<usize> {
        self.hypers.free().position(|(h, _)| h == id)
    }

    /// Marginal of `Σ c_k θ_k + offset` where some `θ_k` may be fixed.
    /// `None` when every involved hyperparameter is fixed.
    fn hyper_combination(&self, terms: &[(HyperId, f64)], offset: f64) -> Result<Option<MarginalDensity>> {
        let mut w = vec![0.0; self.dim_theta()];
        let mut c = offset;
        for &(id, coef) in terms {
            match self.free_index(id) {
                Some(j) => w[j] += coef,
                None => c += coef * self.hypers.get(id).initial,
            }
        }
        if w.iter().all(|&v| v == 0.0) {
            return Ok(None);
        }
        self.hyper_linear_marginal(&w, c).map(Some)
    }

    /// Natural-scale marginal of the `j`-th free hyperparameter.
    pub fn hyper_natural_marginal(&self, j: usize) -> Result<MarginalDensity> {
        let m = self.hyper_marginal(j)?;
        let (_, param) = self
            .hypers
            .free()
            .nth(j)
            .expect("index checked by hyper_marginal");
        match param.transform {
            Transform::Log => m.transform(f64::exp, f64::exp),
            Transform::Correlation => m.transform(
                |x| (0.5 * x).tanh(),
                |x| {
                    let t = (0.5 * x).tanh();
                    0.5 * (1.0 - t * t)
                },
            ),
            Transform::Identity => Ok(m),
        }
    }

    /// Posterior marginals of the practical range `√(8ν)/κ` and marginal
    /// variance of an SPDE component with `α = 2`.
    pub fn spde_range_variance(&self, component: &str) -> Result<Option<(MarginalDensity, MarginalDensity)>> {
        let Some(info) = self.spde.iter().find(|s| s.component == component) else {
            return Ok(None);
        };
        let nu = info.nu;
        let log_range = self.hyper_combination(&[(info.log_kappa, -1.0)], 0.5 * (8.0 * nu).ln())?;
        let log_var = self.hyper_combination(
            &[(info.log_kappa, -2.0 * nu), (info.log_tau, -2.0)],
            -(4.0 * PI * nu).ln(),
        )?;
        match (log_range, log_var) {
            (Some(r), Some(v)) => Ok(Some((
                r.transform(f64::exp, f64::exp)?,
                v.transform(f64::exp, f64::exp)?,
            ))),
            _ => Ok(None),
        }
    }
}

/// Natural cubic spline with linear continuation outside the knots.
struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalSpline {
    fn new(pts: &[(f64, f64)]) -> Self {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let f = lower / diag[i - 1];
                diag[i] -= f * upper[i - 1];
                rhs[i] -= f * rhs[i - 1];
            }
            for i in (0..k).rev() {
                let next = if i + 1 < k { m[i + 2] } else { 0.0 };
                m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        Self { x, y, m }
    }

    fn slope(&self, i: usize, at_right: bool) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        let d = (self.y[i + 1] - self.y[i]) / h;
        if at_right {
            d + h * (self.m[i] / 6.0 + self.m[i + 1] / 3.0)
        } else {
            d - h * (self.m[i] / 3.0 + self.m[i + 1] / 6.0)
        }
    }

    fn eval(&self, z: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return self.y[0];
        }
        if z <= self.x[0] {
            return self.y[0] + self.slope(0, false) * (z - self.x[0]);
        }
        if z >= self.x[n - 1] {
            return self.y[n - 1] + self.slope(n - 2, true) * (z - self.x[n - 1]);
        }
        let i = self.x.partition_point(|&v| v <= z).min(n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - z) / h;
        let b = (z - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}
