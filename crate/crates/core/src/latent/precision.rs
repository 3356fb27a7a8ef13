//! Precision builders for the individual latent components.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::mesh::FemMatrices;
use crate::sparse::{reorder, SparseSymmetric, SymbolicCholesky};

fn check_correlation(a: f64) -> Result<()> {
    if !(a.abs() < 1.0) {
        return Err(Error::InvalidCorrelation(a));
    }
    Ok(())
}

/// Stationary AR(1) precision scaled by `marginal_precision`. Off-diagonal
/// entries are stored even when `a = 0` so the pattern does not depend on `a`.
pub fn ar1_precision(n: usize, a: f64, marginal_precision: f64) -> Result<SparseSymmetric> {
    check_correlation(a)?;
    let s = marginal_precision / (1.0 - a * a);
    let mut t = Vec::with_capacity(2 * n);
    for i in 0..n {
        let interior = i > 0 && i + 1 < n;
        let d = match (n, interior) {
            (1, _) => marginal_precision,
            (_, true) => (1.0 + a * a) * s,
            (_, false) => s,
        };
        t.push((i, i, d));
        if i > 0 {
            t.push((i, i - 1, -a * s));
        }
    }
    SparseSymmetric::from_triplets(n, t)
}

/// `log |Q|` of `ar1_precision(n, a, prec)`.
pub fn ar1_logdet(n: usize, a: f64, marginal_precision: f64) -> f64 {
    n as f64 * marginal_precision.ln() - (n as f64 - 1.0) * (1.0 - a * a).ln()
}

/// `precision · DᵀD` for the first-difference matrix `D` (rank `n − 1`).
pub fn rw1_structure(n: usize, precision: f64) -> SparseSymmetric {
    let mut t = Vec::with_capacity(2 * n);
    for i in 0..n {
        let deg = (i > 0) as usize + (i + 1 < n) as usize;
        t.push((i, i, precision * deg as f64));
        if i > 0 {
            t.push((i, i - 1, -precision));
        }
    }
    SparseSymmetric::from_triplets(n, t).expect("indices in range")
}

/// Generalized log-determinant (product of nonzero eigenvalues) of
/// `rw1_structure(n, precision)`; the path Laplacian contributes `log n`.
pub fn rw1_logdet(n: usize, precision: f64) -> f64 {
    (n as f64 - 1.0) * precision.ln() + (n as f64).ln()
}

/// FEM building blocks of the SPDE precision, stored on one common pattern
/// so `Q(τ, κ)` is a cheap linear combination of value arrays.
#[derive(Debug)]
pub struct SpdeBasis {
    alpha: u8,
    pattern: SparseSymmetric,
    c: Vec<f64>,
    g: Vec<f64>,
    /// `G C⁻¹ G` (zeros for α = 1).
    k: Vec<f64>,
    symbolic: OnceLock<Arc<SymbolicCholesky>>,
}

impl SpdeBasis {
    pub fn new(fem: &FemMatrices, alpha: u8) -> Result<Self> {
        if alpha != 1 && alpha != 2 {
            return Err(Error::InvalidModel(format!("SPDE alpha must be 1 or 2, got {alpha}")));
        }
        let n = fem.n();
        let cdiag = fem.c();
        if let Some(i) = cdiag.iter().position(|&c| !(c > 0.0)) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not part of any triangle")));
        }
        let g = fem.g();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let ck = if alpha == 2 {
            // full adjacency of G, then (G C⁻¹ G)_ij = Σ_k G_ik G_kj / C_k
            let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for (i, j, v) in g.iter() {
                adj[j].push((i, v));
                if i != j {
                    adj[i].push((j, v));
                }
            }
            for (k, nbrs) in adj.iter().enumerate() {
                for &(i, gik) in nbrs {
                    for &(j, gkj) in nbrs {
                        if i >= j {
                            triplets.push((i, j, gik * gkj / cdiag[k]));
                        }
                    }
                }
            }
            SparseSymmetric::from_triplets(n, triplets.iter().copied())?
        } else {
            SparseSymmetric::from_triplets(n, g.iter().map(|(i, j, _)| (i, j, 0.0)))?
        };
        let zeros = |m: &SparseSymmetric| m.iter().map(|(i, j, _)| (i, j, 0.0)).collect::<Vec<_>>();
        let pattern = SparseSymmetric::from_triplets(
            n,
            zeros(&ck).into_iter().chain(zeros(g)).chain((0..n).map(|i| (i, i, 0.0))),
        )?;
        let spread = |entries: &mut dyn Iterator<Item = (usize, usize, f64)>| {
            let mut out = vec![0.0; pattern.nnz()];
            for (i, j, v) in entries {
                let (rows, _) = pattern.column(j);
                let p = rows.binary_search(&i).expect("entry lies on the union pattern");
                out[pattern.col_ptr()[j] + p] += v;
            }
            out
        };
        let c = spread(&mut (0..n).map(|i| (i, i, cdiag[i])));
        let gv = spread(&mut g.iter());
        let k = spread(&mut ck.iter());
        Ok(Self {
            alpha,
            pattern,
            c,
            g: gv,
            k,
            symbolic: OnceLock::new(),
        })
    }

    pub fn alpha(&self) -> u8 {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    /// Smoothness `ν = α − 1` in two dimensions.
    pub fn nu(&self) -> f64 {
        self.alpha as f64 - 1.0
    }

    /// α=1: `τ²(κ²C + G)`; α=2: `τ²(κ⁴C + 2κ²G + G C⁻¹ G)`.
    pub fn precision(&self, tau: f64, kappa: f64) -> SparseSymmetric {
        let t2 = tau * tau;
        let k2 = kappa * kappa;
        let (wc, wg, wk) = if self.alpha == 1 {
            (t2 * k2, t2, 0.0)
        } else {
            (t2 * k2 * k2, 2.0 * t2 * k2, t2)
        };
        let mut q = self.pattern.clone();
        for (p, v) in q.values_mut().iter_mut().enumerate() {
            *v = wc * self.c[p] + wg * self.g[p] + wk * self.k[p];
        }
        q
    }

    /// `log |Q(τ, κ)|` by sparse Cholesky (symbolic analysis cached).
    pub fn logdet(&self, tau: f64, kappa: f64) -> Result<f64> {
        let q = self.precision(tau, kappa);
        let sym = self
            .symbolic
            .get_or_init(|| Arc::new(SymbolicCholesky::analyze(&q, reorder(&q))));
        Ok(sym.factorize(&q)?.logdet())
    }

    /// Practical range `√(8ν)/κ`; `None` for α = 1 where `ν = 0`.
    pub fn range(&self, kappa: f64) -> Option<f64> {
        (self.alpha == 2).then(|| (8.0 * self.nu()).sqrt() / kappa)
    }

    /// Marginal variance `Γ(ν) / (Γ(ν+1) 4π κ^{2ν} τ²)`; `None` for α = 1.
    pub fn variance(&self, tau: f64, kappa: f64) -> Option<f64> {
        (self.alpha == 2).then(|| {
            let nu = self.nu();
            1.0 / (nu * 4.0 * std::f64::consts::PI * kappa.powf(2.0 * nu) * tau * tau)
        })
    }
}

/// Convenience wrapper building `Q(τ, κ)` directly from FEM matrices.
pub fn spde_precision(fem: &FemMatrices, alpha: u8, kappa: f64, tau: f64) -> Result<SparseSymmetric> {
    Ok(SpdeBasis::new(fem, alpha)?.precision(tau, kappa))
}

/// `Q_time(a) ⊗ Q_space` with a unit-marginal AR(1) over `t` groups.
pub fn group_ar1(q_space: &SparseSymmetric, t: usize, a: f64) -> Result<SparseSymmetric> {
    let qt = ar1_precision(t, a, 1.0)?;
    Ok(SparseSymmetric::kron(&qt, q_space))
}
