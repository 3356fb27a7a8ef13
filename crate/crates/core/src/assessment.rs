//! Model criticism: conditional predictive ordinates, PIT values, DIC, WAIC
//! and side-by-side comparison of fits.
//!
//! Every expectation is taken over the node mixture of a fit, with a
//! Gauss–Hermite rule inside each Gaussian predictor marginal.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::engine::{emarginal, qmarginal, FitResult};
use crate::error::{Error, Result};
use crate::latent::ModelGraph;
use crate::likelihood::Lik;

/// Points of the inner Gauss–Hermite rule.
pub const GH_POINTS: usize = 21;
/// Share of the CPO sum above which a single quadrature term flags failure.
pub const FAILURE_SHARE: f64 = 0.95;
/// Leave-one-out reweighting of a hyperparameter node by more than this
/// factor flags failure: the removed observation then moves the
/// hyperparameter posterior outside what the exploration design covers.
pub const FAILURE_REWEIGHT: f64 = 2.0;

/// Gauss–Hermite rule for `E f(Z)`, `Z ~ N(0, 1)` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pts: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.into_iter().unzip()
}

/// Per-observation cross-validation quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsDiagnostic {
    /// Stack row of the observation.
    pub row: usize,
    pub cpo: f64,
    pub pit: f64,
    /// 1 when the CPO quadrature is unreliable, else 0.
    pub failure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub observations: Vec<ObsDiagnostic>,
    pub dic: f64,
    pub p_dic: f64,
    pub waic: f64,
    pub p_waic: f64,
    pub mlik: f64,
}

struct Mixture {
    /// Per node: posterior weight and resolved likelihood.
    nodes: Vec<(f64, Lik)>,
    u: Vec<f64>,
    w: Vec<f64>,
}

impl Mixture {
    fn new(fit: &FitResult) -> Result<Self> {
        let nodes = fit
            .nodes
            .iter()
            .map(|n| {
                let h = fit.hypers.expand(&n.theta)?;
                Ok((n.post_weight, fit.family.at(&h)))
            })
            .collect::<Result<_>>()?;
        let (u, w) = gauss_hermite(GH_POINTS);
        Ok(Self { nodes, u, w })
    }

    /// Calls `f(node weight × quadrature weight, lik, η)` over the mixture.
    fn for_each(&self, fit: &FitResult, row: usize, mut f: impl FnMut(f64, &Lik, f64)) {
        for (node, (pw, lik)) in fit.nodes.iter().zip(&self.nodes) {
            let m = node.eta_mean[row];
            let s = node.eta_var[row].sqrt();
            for (&u, &w) in self.u.iter().zip(&self.w) {
                f(pw * w, lik, m + s * u);
            }
        }
    }
}

fn observed(fit: &FitResult, model: &ModelGraph) -> Result<Vec<(usize, f64)>> {
    if fit.n_rows() != model.n_rows() {
        return Err(Error::DataMismatch(format!(
            "fit has {} rows, model has {}",
            fit.n_rows(),
            model.n_rows()
        )));
    }
    Ok(model
        .y()
        .iter()
        .enumerate()
        .filter_map(|(r, y)| y.map(|v| (r, v)))
        .collect())
}

/// CPO and PIT for every observed row.
///
/// Per node, `E[1/π(y_i | η_i)]` under the Gaussian predictor marginal is
/// taken as `1/E[π(y_i | η_i)]` under the leave-one-out Gaussian, obtained by
/// removing the second-order likelihood term of row `i` from that marginal.
/// This keeps the quadrature integrand bounded. Nodes are then combined as
/// `1/cpo = Σ ω̃ / cpo_θ` and `pit = cpo · Σ ω̃ pit_θ / cpo_θ`.
pub fn cpo_pit(fit: &FitResult, model: &ModelGraph) -> Result<Vec<ObsDiagnostic>> {
    let obs = observed(fit, model)?;
    let mix = Mixture::new(fit)?;
    Ok(obs
        .par_iter()
        .map(|&(row, y)| {
            let mut inv = 0.0;
            let mut cdf_ratio = 0.0;
            let mut dominated = false;
            let mut min_dens = f64::INFINITY;
            for (node, (pw, lik)) in fit.nodes.iter().zip(&mix.nodes) {
                let (m, v) = (node.eta_mean[row], node.eta_var[row]);
                let (d1, d2) = lik.derivs_unchecked(y, m);
                let c = (-d2).max(0.0);
                let prec = 1.0 / v - c;
                if !(prec > 0.0) {
                    inv = f64::NAN;
                    break;
                }
                let var = 1.0 / prec;
                let mean = var * (m / v - d1 - c * m);
                let (mut dens, mut cdf, mut largest) = (0.0, 0.0, 0.0f64);
                for (&u, &w) in mix.u.iter().zip(&mix.w) {
                    let eta = mean + var.sqrt() * u;
                    let t = w * lik.log_lik_unchecked(y, eta).exp();
                    dens += t;
                    largest = largest.max(t);
                    cdf += w * lik.cdf_unchecked(y, eta);
                }
                dominated |= largest > FAILURE_SHARE * dens;
                if *pw > 0.0 {
                    min_dens = min_dens.min(dens);
                }
                inv += pw / dens;
                cdf_ratio += pw * cdf / dens;
            }
            let cpo = 1.0 / inv;
            let ok = inv.is_finite() && inv > 0.0 && cdf_ratio.is_finite();
            dominated |= 1.0 / (min_dens * inv) > FAILURE_REWEIGHT;
            ObsDiagnostic {
                row,
                cpo: if ok { cpo } else { f64::NAN },
                pit: if ok { (cpo * cdf_ratio).clamp(0.0, 1.0) } else { f64::NAN },
                failure: if !ok || dominated { 1.0 } else { 0.0 },
            }
        })
        .collect())
}

/// `(dic, p_dic)` with `p_dic = D̄ − D(η̄, θ*)`.
pub fn dic(fit: &FitResult, model: &ModelGraph) -> Result<(f64, f64)> {
    let obs = observed(fit, model)?;
    let mix = Mixture::new(fit)?;
    let h_mode = fit.hypers.expand(&fit.theta_mode)?;
    let lik_mode = fit.family.at(&h_mode);
    let terms: Vec<(f64, f64)> = obs
        .par_iter()
        .map(|&(row, y)| {
            let mut mean_ll = 0.0;
            mix.for_each(fit, row, |w, lik, eta| mean_ll += w * lik.log_lik_unchecked(y, eta));
            let (eta_bar, _) = fit.predictor_moments(row);
            (mean_ll, lik_mode.log_lik_unchecked(y, eta_bar))
        })
        .collect();
    let d_bar = -2.0 * terms.iter().map(|t| t.0).sum::<f64>();
    let d_hat = -2.0 * terms.iter().map(|t| t.1).sum::<f64>();
    let p = d_bar - d_hat;
    Ok((d_bar + p, p))
}

/// `(waic, p_waic)` with `p_waic = Σ Var[log π(y_i | ·)]`.
pub fn waic(fit: &FitResult, model: &ModelGraph) -> Result<(f64, f64)> {
    let obs = observed(fit, model)?;
    let mix = Mixture::new(fit)?;
    let terms: Vec<(f64, f64)> = obs
        .par_iter()
        .map(|&(row, y)| {
            let (mut e_p, mut e_l, mut e_l2) = (0.0, 0.0, 0.0);
            mix.for_each(fit, row, |w, lik, eta| {
                let ll = lik.log_lik_unchecked(y, eta);
                e_p += w * ll.exp();
                e_l += w * ll;
                e_l2 += w * ll * ll;
            });
            (e_p.ln(), (e_l2 - e_l * e_l).max(0.0))
        })
        .collect();
    let lppd: f64 = terms.iter().map(|t| t.0).sum();
    let p: f64 = terms.iter().map(|t| t.1).sum();
    Ok((-2.0 * (lppd - p), p))
}

pub fn assess(fit: &FitResult, model: &ModelGraph) -> Result<Diagnostics> {
    let observations = cpo_pit(fit, model)?;
    let (dic, p_dic) = dic(fit, model)?;
    let (waic, p_waic) = waic(fit, model)?;
    Ok(Diagnostics {
        observations,
        dic,
        p_dic,
        waic,
        p_waic,
        mlik: fit.mlik,
    })
}

impl Diagnostics {
    /// `index,cpo,pit,failure`, one line per observation.
    pub fn observations_csv(&self) -> String {
        let mut s = String::from("index,cpo,pit,failure\n");
        for o in &self.observations {
            let _ = writeln!(s, "{},{},{},{}", o.row, o.cpo, o.pit, o.failure);
        }
        s
    }

    /// `dic,p_dic,waic,p_waic,mlik` with one data line.
    pub fn criteria_csv(&self) -> String {
        format!(
            "dic,p_dic,waic,p_waic,mlik\n{},{},{},{},{}\n",
            self.dic, self.p_dic, self.waic, self.p_waic, self.mlik
        )
    }
}

/// Posterior mean and 95% interval of a named quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    pub dic: f64,
    pub waic: f64,
    pub mlik: f64,
    pub quantities: Vec<(String, Interval)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn interval(m: &crate::engine::MarginalDensity) -> Result<Interval> {
    Ok(Interval {
        mean: emarginal(|x| x, m),
        q025: qmarginal(0.025, m)?,
        q975: qmarginal(0.975, m)?,
    })
}

/// Hyperparameters on their natural scale, plus range and variance of
/// every SPDE component.
pub fn hyper_intervals(fit: &FitResult) -> Result<Vec<(String, Interval)>> {
    let mut out = Vec::new();
    for (j, name) in fit.hyper_names().into_iter().enumerate() {
        out.push((name, interval(&fit.hyper_natural_marginal(j)?)?));
    }
    for s in &fit.spde {
        if let Some((range, var)) = fit.spde_range_variance(&s.component)? {
            out.push((format!("{}_range", s.component), interval(&range)?));
            out.push((format!("{}_variance", s.component), interval(&var)?));
        }
    }
    Ok(out)
}

/// Builds the comparison table; all fits must share the same observed data.
pub fn compare(fits: &[(&str, &FitResult, &ModelGraph)]) -> Result<ComparisonTable> {
    if fits.len() < 2 {
        return Err(Error::DataMismatch("comparison needs at least two fits".into()));
    }
    let reference: Vec<f64> = fits[0].2.y().iter().filter_map(|v| *v).collect();
    let mut rows = Vec::with_capacity(fits.len());
    for &(name, fit, model) in fits {
        let y: Vec<f64> = model.y().iter().filter_map(|v| *v).collect();
        if y != reference {
            return Err(Error::DataMismatch(format!("model {name:?} was fitted to different observations")));
        }
        let (dic_v, _) = dic(fit, model)?;
        let (waic_v, _) = waic(fit, model)?;
        rows.push(ComparisonRow {
            model: name.to_string(),
            dic: dic_v,
            waic: waic_v,
            mlik: fit.mlik,
            quantities: hyper_intervals(fit)?,
        });
    }
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    /// Quantity names in order of first appearance.
    pub fn quantity_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            for (q, _) in &r.quantities {
                if !names.contains(q) {
                    names.push(q.clone());
                }
            }
        }
        names
    }

    /// `model,dic,waic,mlik` then `<q>_mean,<q>_q025,<q>_q975` for every
    /// quantity; absent quantities are left empty.
    pub fn to_csv(&self) -> String {
        let names = self.quantity_names();
        let mut s = String::from("model,dic,waic,mlik");
        for q in &names {
            let _ = write!(s, ",{q}_mean,{q}_q025,{q}_q975");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{}", r.model, r.dic, r.waic, r.mlik);
            for q in &names {
                match r.quantities.iter().find(|(n, _)| n == q) {
                    Some((_, i)) => {
                        let _ = write!(s, ",{},{},{}", i.mean, i.q025, i.q975);
                    }
                    None => s.push_str(",,,"),
                }
            }
            s.push('\n');
        }
        s
    }
}
