//! Hyperparameter mode search, Hessian and integration-node exploration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Something that can be maximized over `θ`. `accept` is called whenever the
/// search moves to a new iterate, letting implementations update warm starts.
pub trait Objective: Sync {
    /// Returns `−∞` where the objective cannot be evaluated.
    fn value(&self, theta: &[f64]) -> f64;
    fn accept(&self, _theta: &[f64]) {}
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for F {
    fn value(&self, theta: &[f64]) -> f64 {
        self(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOptions {
    /// Central-difference step for gradients (internal scale).
    pub gradient_step: f64,
    /// Step for the finite-difference Hessian.
    pub hessian_step: f64,
    /// Evaluation budget of the search (gradients included).
    pub max_evaluations: usize,
    /// Largest move per coordinate and iteration.
    pub max_step: f64,
    /// Convergence threshold on `‖∇‖∞`.
    pub gradient_tolerance: f64,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self {
            gradient_step: 1e-4,
            hessian_step: 1e-3,
            max_evaluations: 200,
            max_step: 2.0,
            gradient_tolerance: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Counter<'a> {
    f: &'a dyn Objective,
    used: std::sync::atomic::AtomicUsize,
    budget: usize,
}

impl Counter<'_> {
    fn batch(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let used = self
            .used
            .fetch_add(points.len(), std::sync::atomic::Ordering::SeqCst)
            + points.len();
        if used > self.budget {
            return Err(Error::ModeSearchFailed(format!(
                "evaluation budget of {} exhausted",
                self.budget
            )));
        }
        Ok(points.par_iter().map(|p| self.f.value(p)).collect())
    }

    fn one(&self, p: &[f64]) -> Result<f64> {
        Ok(self.batch(&[p.to_vec()])?[0])
    }

    fn used(&self) -> usize {
        self.used.load(std::sync::atomic::Ordering::SeqCst)
    }
}

fn shifted(x: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut y = x.to_vec();
    for &(i, d) in moves {
        y[i] += d;
    }
    y
}

fn gradient(c: &Counter, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let p = x.len();
    let pts: Vec<Vec<f64>> = (0..p)
        .flat_map(|i| [shifted(x, &[(i, h)]), shifted(x, &[(i, -h)])])
        .collect();
    let v = c.batch(&pts)?;
    Ok((0..p).map(|i| (v[2 * i] - v[2 * i + 1]) / (2.0 * h)).collect())
}

/// Central finite-difference Hessian of `f` at `x` given `f(x) = fx`.
fn hessian_with(eval: &dyn Fn(&[Vec<f64>]) -> Result<Vec<f64>>, x: &[f64], fx: f64, h: f64) -> Result<DMatrix<f64>> {
    let p = x.len();
    let mut pts = Vec::new();
    for i in 0..p {
        pts.push(shifted(x, &[(i, h)]));
        pts.push(shifted(x, &[(i, -h)]));
    }
    for i in 0..p {
        for j in 0..i {
            for (si, sj) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
                pts.push(shifted(x, &[(i, si), (j, sj)]));
            }
        }
    }
    let v = eval(&pts)?;
    let mut hm = DMatrix::zeros(p, p);
    for i in 0..p {
        hm[(i, i)] = (v[2 * i] - 2.0 * fx + v[2 * i + 1]) / (h * h);
    }
    let mut k = 2 * p;
    for i in 0..p {
        for j in 0..i {
            let d = (v[k] - v[k + 1] - v[k + 2] + v[k + 3]) / (4.0 * h * h);
            hm[(i, j)] = d;
            hm[(j, i)] = d;
            k += 4;
        }
    }
    Ok(hm)
}

/// Quasi-Newton (BFGS) ascent with central finite-difference gradients.
/// The initial inverse Hessian comes from a finite-difference Hessian, so
/// the first step is a Newton step.
pub fn maximize(f: &dyn Objective, x0: &[f64], opts: &ModeOptions) -> Result<ModeResult> {
    let p = x0.len();
    if p == 0 {
        return Ok(ModeResult {
            theta: Vec::new(),
            value: f.value(&[]),
            iterations: 0,
            evaluations: 1,
        });
    }
    let c = Counter {
        f,
        used: 0.into(),
        budget: opts.max_evaluations,
    };
    let mut x = x0.to_vec();
    let mut fx = c.one(&x)?;
    if !fx.is_finite() {
        return Err(Error::ModeSearchFailed(format!("objective not finite at the start {x0:?}")));
    }
    f.accept(&x);
    let mut g = gradient(&c, &x, opts.gradient_step)?;
    // inverse Hessian of −f
    let h0 = hessian_with(&|pts| c.batch(pts), &x, fx, opts.hessian_step)?;
    let finite = h0.iter().all(|v| v.is_finite());
    let mut b = match (-h0).cholesky() {
        Some(ch) if finite => ch.inverse(),
        _ => DMatrix::identity(p, p),
    };
    let mut iterations = 0;
    loop {
        if g.iter().all(|v| v.abs() <= opts.gradient_tolerance) {
            break;
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        // ascent direction for f: B ∇f
        let mut dir = &b * &gv;
        let slope = dir.dot(&gv);
        if !(slope > 0.0) {
            b = DMatrix::identity(p, p);
            dir = gv.clone();
        }
        let big = dir.amax();
        if big > opts.max_step {
            dir *= opts.max_step / big;
        }
        let slope = dir.dot(&gv);
        let mut t = 1.0;
        let (xn, fnew) = loop {
            let cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            let fc = c.one(&cand)?;
            if fc.is_finite() && fc >= fx + 1e-4 * t * slope {
                break (cand, fc);
            }
            t *= 0.5;
            if t < 1e-8 {
                // no ascent possible along the direction: treat as converged
                return Ok(ModeResult {
                    theta: x,
                    value: fx,
                    iterations,
                    evaluations: c.used(),
                });
            }
        };
        f.accept(&xn);
        let gn = gradient(&c, &xn, opts.gradient_step)?;
        let s = DVector::from_iterator(p, xn.iter().zip(&x).map(|(a, b)| a - b));
        // gradients of −f
        let yv = DVector::from_iterator(p, g.iter().zip(&gn).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(p, p);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            b = &left * &b * &right + &s * s.transpose() * rho;
        }
        let small_step = s.amax() < 1e-7;
        x = xn;
        let gain = fnew - fx;
        fx = fnew;
        g = gn;
        if small_step || gain.abs() < 1e-12 * (1.0 + fx.abs()) {
            break;
        }
    }
    Ok(ModeResult {
        theta: x,
        value: fx,
        iterations,
        evaluations: c.used(),
    })
}

/// Finite-difference Hessian of `f` at its mode, made negative definite if
/// roundoff left eigenvalues of the wrong sign.
pub fn mode_hessian(f: &dyn Objective, mode: &[f64], value: f64, step: f64) -> Result<DMatrix<f64>> {
    let eval = |pts: &[Vec<f64>]| -> Result<Vec<f64>> { Ok(pts.par_iter().map(|p| f.value(p)).collect()) };
    let h = hessian_with(&eval, mode, value, step)?;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModeSearchFailed("Hessian at the mode is not finite".into()));
    }
    let eig = h.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l < 0.0) {
        return Ok(h);
    }
    log::warn!("Hessian at the mode is not negative definite; flipping offending eigenvalues");
    let scale = eig.eigenvalues.amax().max(1e-8);
    let fixed = eig
        .eigenvalues
        .map(|l| if l < 0.0 { l } else { -(l.abs().max(1e-6 * scale)) });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&fixed) * eig.eigenvectors.transpose())
}

/// Laplace approximation of `log ∫ exp g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceIntegral {
    pub log_integral: f64,
    pub mode: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Maximizes `g` from `x0` and expands it to second order at the mode:
/// `log ∫ e^g ≈ g(x*) + (d/2) log 2π − ½ log |−H|`.
pub fn laplace_integral(g: &dyn Objective, x0: &[f64], opts: &ModeOptions) -> Result<LaplaceIntegral> {
    let r = maximize(g, x0, opts)?;
    let d = r.theta.len();
    let hessian = mode_hessian(g, &r.theta, r.value, opts.hessian_step)?;
    let log_det = if d == 0 {
        0.0
    } else {
        (-&hessian)
            .cholesky()
            .ok_or_else(|| Error::ModeSearchFailed("Hessian is not negative definite".into()))?
            .l()
            .diagonal()
            .iter()
            .map(|v| 2.0 * v.ln())
            .sum()
    };
    Ok(LaplaceIntegral {
        log_integral: r.value + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det,
        mode: r.theta,
        hessian,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntStrategy {
    Grid,
    Ccd,
    Eb,
}

impl std::str::FromStr for IntStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Self::Grid),
            "ccd" => Ok(Self::Ccd),
            "eb" => Ok(Self::Eb),
            other => Err(Error::Parse(format!("unknown integration strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for IntStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Grid => "grid",
            Self::Ccd => "ccd",
            Self::Eb => "eb",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExploreOptions {
    /// Grid spacing in standardized `z` units.
    pub grid_step: f64,
    /// Nodes whose log-density drops more than this below the mode are
    /// discarded.
    pub grid_drop: f64,
    /// Spacing of the extra evaluations behind a single hyperparameter's
    /// marginal, in `z` units.
    pub profile_step: f64,
    /// Log-density drop at which that profile stops.
    pub profile_drop: f64,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self {
            grid_step: 1.0,
            grid_drop: 2.5,
            profile_step: 0.25,
            profile_drop: 6.0,
        }
    }
}

/// Integration node in `θ` space.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaNode {
    pub theta: Vec<f64>,
    /// Standardized coordinates.
    pub z: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
}

/// Mode, curvature and the standardizing map `θ = θ* + S z` with
/// `S = V Λ^{1/2}` from the eigendecomposition of `Σ = −H⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mode: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl Standardization {
    pub fn new(mode: Vec<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        let p = mode.len();
        if p == 0 {
            return Ok(Self {
                mode,
                hessian: DMatrix::zeros(0, 0),
                sigma: DMatrix::zeros(0, 0),
                s: DMatrix::zeros(0, 0),
            });
        }
        let sigma = (-&hessian)
            .try_inverse()
            .ok_or_else(|| Error::ModeSearchFailed("singular Hessian".into()))?;
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let eig = sigma.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::ModeSearchFailed("posterior covariance of θ is not positive definite".into()));
        }
        let s = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        Ok(Self {
            mode,
            hessian,
            sigma,
            s,
        })
    }

    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    pub fn theta(&self, z: &[f64]) -> Vec<f64> {
        let zv = DVector::from_column_slice(z);
        let d = &self.s * zv;
        self.mode.iter().zip(d.iter()).map(|(m, v)| m + v).collect()
    }

    /// `log |Σ|`.
    pub fn log_det_sigma(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.sigma.clone().symmetric_eigen().eigenvalues.iter().map(|l| l.ln()).sum()
    }
}

/// Design points of the composite design in `z` units: center, `2^p`
/// factorial corners at `±1` (half fraction with an even number of minus
/// signs for `p ≥ 5`) and `2p` star points at `±√p`.
pub fn ccd_design(p: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; p]];
    if p == 0 {
        return pts;
    }
    let r = (p as f64).sqrt();
    if p > 1 {
        for mask in 0..(1usize << p) {
            if p >= 5 && mask.count_ones() % 2 == 1 {
                continue;
            }
            pts.push((0..p).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect());
        }
    }
    for i in 0..p {
        for sgn in [1.0, -1.0] {
            let mut z = vec![0.0; p];
            z[i] = sgn * r;
            pts.push(z);
        }
    }
    pts
}

/// Integration nodes around the mode. `mode_value` is `log π̃(θ*|y)`.
pub fn explore_theta(
    f: &dyn Objective,
    st: &Standardization,
    mode_value: f64,
    strategy: IntStrategy,
    opts: &ExploreOptions,
) -> Vec<ThetaNode> {
    let p = st.dim();
    let node = |z: Vec<f64>, lp: f64| ThetaNode {
        theta: st.theta(&z),
        z,
        log_post: lp,
        weight: 1.0,
    };
    let mut nodes = match (strategy, p) {
        (IntStrategy::Eb, _) | (_, 0) => vec![node(vec![0.0; p], mode_value)],
        (IntStrategy::Ccd, _) => {
            let design = ccd_design(p);
            let vals: Vec<f64> = design[1..].par_iter().map(|z| f.value(&st.theta(z))).collect();
            let mut out = vec![node(design[0].clone(), mode_value)];
            for (z, v) in design.into_iter().skip(1).zip(vals) {
                if v.is_finite() {
                    out.push(node(z, v));
                }
            }
            out
        }
        (IntStrategy::Grid, _) => grid_nodes(f, st, mode_value, opts)
            .into_iter()
            .map(|(z, v)| node(z, v))
            .collect(),
    };
    let w = 1.0 / nodes.len() as f64;
    for n in nodes.iter_mut() {
        n.weight = w;
    }
    nodes
}

const GRID_MAX_STEPS: i64 = 12;

/// Outermost `|z|` of a one-dimensional profile.
const PROFILE_MAX_Z: f64 = 6.0;
const PROFILE_BATCH: usize = 4;

/// `(z, log π̃)` on a fine grid for a single hyperparameter, walked outward
/// from the mode in parallel batches until the drop exceeds
/// `opts.profile_drop`. The first point past the threshold is kept so that
/// interpolation reaches into the tail. Empty unless `dim = 1`.
pub fn profile_theta(f: &dyn Objective, st: &Standardization, mode_value: f64, opts: &ExploreOptions) -> Vec<(f64, f64)> {
    if st.dim() != 1 || !(opts.profile_step > 0.0) {
        return Vec::new();
    }
    let h = opts.profile_step;
    let max_k = (PROFILE_MAX_Z / h).floor() as usize;
    let mut out = vec![(0.0, mode_value)];
    for dir in [-1.0, 1.0] {
        let mut k = 1;
        'walk: while k <= max_k {
            let ks: Vec<usize> = (k..(k + PROFILE_BATCH).min(max_k + 1)).collect();
            let vals: Vec<f64> = ks.par_iter().map(|&i| f.value(&st.theta(&[dir * h * i as f64]))).collect();
            for (&i, v) in ks.iter().zip(vals) {
                if !v.is_finite() {
                    break 'walk;
                }
                out.push((dir * h * i as f64, v));
                if mode_value - v > opts.profile_drop {
                    break 'walk;
                }
            }
            k += PROFILE_BATCH;
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn grid_nodes(f: &dyn Objective, st: &Standardization, mode_value: f64, opts: &ExploreOptions) -> Vec<(Vec<f64>, f64)> {
    let p = st.dim();
    let dz = opts.grid_step;
    let keep = |v: f64| v.is_finite() && mode_value - v <= opts.grid_drop;
    let mut evaluated: std::collections::BTreeMap<Vec<i64>, f64> = std::collections::BTreeMap::new();
    evaluated.insert(vec![0; p], mode_value);
    let mut lo = vec![0i64; p];
    let mut hi = vec![0i64; p];
    for j in 0..p {
        for dir in [1i64, -1] {
            let mut k = 1;
            while k <= GRID_MAX_STEPS {
                let mut idx = vec![0i64; p];
                idx[j] = dir * k;
                let z: Vec<f64> = idx.iter().map(|&i| i as f64 * dz).collect();
                let v = f.value(&st.theta(&z));
                evaluated.insert(idx, v);
                if !keep(v) {
                    break;
                }
                if dir > 0 {
                    hi[j] = k;
                } else {
                    lo[j] = -k;
                }
                k += 1;
            }
        }
    }
    // every combination inside the axis box
    let mut combos: Vec<Vec<i64>> = vec![Vec::new()];
    for j in 0..p {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                (lo[j]..=hi[j]).map(move |k| {
                    let mut c = c.clone();
                    c.push(k);
                    c
                })
            })
            .collect();
    }
    let todo: Vec<Vec<i64>> = combos.into_iter().filter(|c| !evaluated.contains_key(c)).collect();
    let vals: Vec<f64> = todo
        .par_iter()
        .map(|idx| {
            let z: Vec<f64> = idx.iter().map(|&i| i as f64 * dz).collect();
            f.value(&st.theta(&z))
        })
        .collect();
    evaluated.extend(todo.into_iter().zip(vals));
    evaluated
        .into_iter()
        .filter(|(_, v)| keep(*v))
        .map(|(idx, v)| (idx.iter().map(|&i| i as f64 * dz).collect(), v))
        .collect()
}
