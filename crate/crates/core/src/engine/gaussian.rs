//! Gaussian approximation of `π(x | θ, y)` by Newton–Raphson and the
//! Laplace approximation of `π(θ | y)` built on it.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::latent::ModelGraph;
use crate::likelihood::Lik;
use crate::sparse::{reorder, CholeskyFactor, Kriging, SparseSymmetric, SymbolicCholesky};

/// Newton settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop when `‖Δx‖∞ / (1 + ‖x‖∞)` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Converged Gaussian approximation at one `θ`.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub x_star: Vec<f64>,
    pub q_star: SparseSymmetric,
    pub factor: CholeskyFactor,
    pub kriging: Option<Kriging>,
    pub iterations: usize,
    pub converged: bool,
}

/// Model-level data shared by every `θ`: the fixed pattern of
/// `Q* = Q + Aᵀ diag(c) A`, its symbolic factorization and the constraint
/// matrix.
#[derive(Debug)]
pub struct Prepared<'m> {
    model: &'m ModelGraph,
    /// Observed rows with their responses.
    obs: Vec<(usize, f64)>,
    pattern: SparseSymmetric,
    prior_pattern: SparseSymmetric,
    prior_map: Vec<usize>,
    /// Per observed row: `(position in Q*, a_i a_j)`.
    lik_terms: Vec<Vec<(usize, f64)>>,
    symbolic: Arc<SymbolicCholesky>,
    constraints: Option<DMatrix<f64>>,
    log_det_mmt: f64,
}

fn position(pattern: &SparseSymmetric, i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    let (rows, _) = pattern.column(c);
    pattern.col_ptr()[c] + rows.binary_search(&r).expect("entry lies on the pattern")
}

impl<'m> Prepared<'m> {
    pub fn new(model: &'m ModelGraph) -> Result<Self> {
        let n = model.latent().n();
        let mut obs = Vec::new();
        for (r, y) in model.y().iter().enumerate() {
            if let Some(y) = *y {
                obs.push((r, y));
            }
        }
        let theta0 = model.hypers().initial_theta();
        let h0 = model.hypers().expand(&theta0)?;
        let lik0 = model.family().at(&h0);
        for &(_, y) in &obs {
            lik0.validate(y)?;
        }
        let prior = model.prior_precision(&theta0)?;
        let a = model.a();
        // every row (missing ones too) contributes its pairs so that predictor
        // variances can be read off the selected inverse
        let mut triplets: Vec<(usize, usize, f64)> = prior.iter().map(|(i, j, _)| (i, j, 0.0)).collect();
        triplets.extend((0..n).map(|i| (i, i, 0.0)));
        for r in 0..a.nrows() {
            let (cols, _) = a.row(r);
            for (p, &i) in cols.iter().enumerate() {
                for &j in &cols[..=p] {
                    triplets.push((i, j, 0.0));
                }
            }
        }
        let pattern = SparseSymmetric::from_triplets(n, triplets)?;
        let prior_map = prior.iter().map(|(i, j, _)| position(&pattern, i, j)).collect();
        let lik_terms = obs
            .iter()
            .map(|&(r, _)| {
                let (cols, vals) = a.row(r);
                let mut t = Vec::with_capacity(cols.len() * (cols.len() + 1) / 2);
                for p in 0..cols.len() {
                    for q in 0..=p {
                        t.push((position(&pattern, cols[p], cols[q]), vals[p] * vals[q]));
                    }
                }
                t
            })
            .collect();
        let symbolic = Arc::new(SymbolicCholesky::analyze(&pattern, reorder(&pattern)));
        let constraints = model.latent().constraints();
        let log_det_mmt = match &constraints {
            Some(m) => {
                let mmt = m * m.transpose();
                let ch = nalgebra::Cholesky::new(mmt).ok_or(Error::SingularConstraint)?;
                2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
            }
            None => 0.0,
        };
        Ok(Self {
            model,
            obs,
            pattern,
            prior_pattern: prior,
            prior_map,
            lik_terms,
            symbolic,
            constraints,
            log_det_mmt,
        })
    }

    pub fn model(&self) -> &'m ModelGraph {
        self.model
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn observations(&self) -> &[(usize, f64)] {
        &self.obs
    }

    pub fn constraints(&self) -> Option<&DMatrix<f64>> {
        self.constraints.as_ref()
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    fn assemble(&self, prior: &SparseSymmetric, c: &[f64]) -> Result<SparseSymmetric> {
        if !prior.same_pattern(&self.prior_pattern) {
            return Err(Error::InvalidModel(
                "prior precision pattern changed with the hyperparameters".into(),
            ));
        }
        let mut q = self.pattern.clone();
        let vals = q.values_mut();
        for (p, &v) in prior.values().iter().enumerate() {
            vals[self.prior_map[p]] += v;
        }
        for (terms, &ck) in self.lik_terms.iter().zip(c) {
            for &(pos, w) in terms {
                vals[pos] += ck * w;
            }
        }
        Ok(q)
    }

    fn eta_obs(&self, x: &[f64]) -> Vec<f64> {
        let a = self.model.a();
        self.obs
            .iter()
            .map(|&(r, _)| {
                let (cols, vals) = a.row(r);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    fn log_lik_sum(&self, lik: &Lik, eta: &[f64]) -> f64 {
        self.obs
            .iter()
            .zip(eta)
            .map(|(&(_, y), &e)| lik.log_lik_unchecked(y, e))
            .sum()
    }

    /// `−½ xᵀQx + Σ log π(y_i | η_i)`, the Newton objective.
    fn objective(&self, prior: &SparseSymmetric, lik: &Lik, x: &[f64]) -> f64 {
        -0.5 * prior.quad_form(x) + self.log_lik_sum(lik, &self.eta_obs(x))
    }

    fn factor_at(&self, prior: &SparseSymmetric, lik: &Lik, x: &[f64]) -> Result<(SparseSymmetric, CholeskyFactor, Vec<f64>)> {
        let eta = self.eta_obs(x);
        let mut c = Vec::with_capacity(eta.len());
        let mut b_obs = Vec::with_capacity(eta.len());
        for (&(_, y), &e) in self.obs.iter().zip(&eta) {
            let (d1, d2) = lik.derivs_unchecked(y, e);
            c.push(-d2);
            b_obs.push(d1 - d2 * e);
        }
        let q = self.assemble(prior, &c)?;
        let factor = self.symbolic.factorize(&q)?;
        // Aᵀ b over observed rows
        let a = self.model.a();
        let mut rhs = vec![0.0; self.n()];
        for (&(r, _), &b) in self.obs.iter().zip(&b_obs) {
            let (cols, vals) = a.row(r);
            for (&j, &v) in cols.iter().zip(vals) {
                rhs[j] += v * b;
            }
        }
        Ok((q, factor, rhs))
    }

    /// Newton–Raphson for the mode of `π(x | θ, y)` starting at `x_init`,
    /// with constraints enforced by kriging at every iterate.
    pub fn gaussian_approximation(
        &self,
        theta: &[f64],
        x_init: Option<&[f64]>,
        opts: NewtonOptions,
    ) -> Result<GaussianApprox> {
        let h = self.model.hypers().expand(theta)?;
        let prior = self.model.latent().prior_precision(&h)?.q;
        let lik = self.model.family().at(&h);
        self.newton(&prior, &lik, x_init, opts)
    }

    fn newton(
        &self,
        prior: &SparseSymmetric,
        lik: &Lik,
        x_init: Option<&[f64]>,
        opts: NewtonOptions,
    ) -> Result<GaussianApprox> {
        let n = self.n();
        let mut x = match x_init {
            Some(x0) if x0.len() == n => x0.to_vec(),
            Some(x0) => {
                return Err(Error::DimensionMismatch {
                    context: "Newton starting point",
                    expected: n,
                    found: x0.len(),
                })
            }
            None => vec![0.0; n],
        };
        let quadratic = matches!(lik, Lik::Gaussian { .. });
        let zeros = self.constraints.as_ref().map(|m| vec![0.0; m.nrows()]);
        if let (Some(m), Some(e)) = (&self.constraints, &zeros) {
            // start from a feasible point so that damped steps stay feasible
            let (_, f0, _) = self.factor_at(prior, lik, &x)?;
            x = Kriging::new(&f0, m)?.correct(&x, e);
        }
        let mut f_x = self.objective(prior, lik, &x);
        let mut converged = false;
        let mut iterations = 0;
        loop {
            let (q, factor, rhs) = self.factor_at(prior, lik, &x)?;
            let kriging = match &self.constraints {
                Some(m) => Some(Kriging::new(&factor, m)?),
                None => None,
            };
            if converged {
                return Ok(GaussianApprox {
                    x_star: x,
                    q_star: q,
                    factor,
                    kriging,
                    iterations,
                    converged,
                });
            }
            if iterations == opts.max_iterations {
                return Err(Error::NonConvergence(iterations));
            }
            iterations += 1;
            let mut mu = factor.solve(&rhs)?;
            if let (Some(k), Some(e)) = (&kriging, &zeros) {
                mu = k.correct(&mu, e);
            }
            if quadratic {
                // Q* does not depend on x: the first solve is exact
                return Ok(GaussianApprox {
                    x_star: mu,
                    q_star: q,
                    factor,
                    kriging,
                    iterations,
                    converged: true,
                });
            }
            // backtracking on the objective keeps the iteration monotone
            let mut step = 1.0;
            let mut cand = mu.clone();
            let mut f_c = self.objective(prior, lik, &cand);
            for _ in 0..40 {
                if f_c.is_finite() && f_c >= f_x - 1e-12 * f_x.abs() {
                    break;
                }
                step *= 0.5;
                cand = x.iter().zip(&mu).map(|(a, b)| a + step * (b - a)).collect();
                f_c = self.objective(prior, lik, &cand);
            }
            if !f_c.is_finite() {
                return Err(Error::NonConvergence(iterations));
            }
            let change = cand
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = 1.0 + cand.iter().map(|v| v.abs()).fold(0.0, f64::max);
            converged = change / scale <= opts.tolerance;
            x = cand;
            f_x = f_c;
        }
    }

    /// Laplace approximation `log π̃(θ | y)` (up to a θ-free constant) with
    /// the Gaussian approximation it was evaluated at.
    pub fn log_posterior(
        &self,
        theta: &[f64],
        x_init: Option<&[f64]>,
        opts: NewtonOptions,
    ) -> Result<(f64, GaussianApprox)> {
        let hypers = self.model.hypers();
        let h = hypers.expand(theta)?;
        let prior = self.model.latent().prior_precision(&h)?;
        let lik = self.model.family().at(&h);
        let ga = self.newton(&prior.q, &lik, x_init, opts)?;
        let ln2pi = (2.0 * PI).ln();
        let x = &ga.x_star;
        let log_prior_x = -0.5 * prior.rank as f64 * ln2pi + 0.5 * prior.logdet - 0.5 * prior.q.quad_form(x);
        let log_lik = self.log_lik_sum(&lik, &self.eta_obs(x));
        let k = self.constraints.as_ref().map_or(0, |m| m.nrows());
        let mut log_det_cond = ga.factor.logdet();
        if let Some(kr) = &ga.kriging {
            log_det_cond += kr.s_logdet() - self.log_det_mmt;
        }
        let log_pi_g = -0.5 * (self.n() - k) as f64 * ln2pi + 0.5 * log_det_cond;
        let value = hypers.log_prior(theta) + log_prior_x + log_lik - log_pi_g;
        if !value.is_finite() {
            return Err(Error::ModeSearchFailed(format!("non-finite log posterior at θ = {theta:?}")));
        }
        Ok((value, ga))
    }
}

impl GaussianApprox {
    /// Marginal variances of the (constrained) Gaussian approximation.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let mut v = self.factor.selected_inverse().diag();
        if let Some(k) = &self.kriging {
            for (vi, r) in v.iter_mut().zip(k.diag_reduction()) {
                *vi = (*vi - r).max(0.0);
            }
        }
        v
    }
}
