//! GMRF sampling and conditioning on linear constraints by kriging.
//!
//! Random numbers come from ChaCha8 seeded with the caller's seed. Column
//! `c` of a sample matrix is drawn from stream `c` of that generator, so a
//! column does not depend on how many other columns are requested.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::CholeskyFactor;
use crate::error::{Error, Result};

/// Generator used for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl CholeskyFactor {
    /// Draws `count` zero-mean samples with covariance `Q⁻¹` (columns of the
    /// returned `n × count` matrix).
    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, count);
        let mut z = vec![0.0; n];
        for c in 0..count {
            let mut rng = stream_rng(seed, c as u64);
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            self.solve_lt_in_place(&mut z);
            for (old, x) in self.perm().apply_inverse(&z).into_iter().enumerate() {
                out[(old, c)] = x;
            }
        }
        out
    }
}

/// Pieces of the kriging correction for constraints `M x = e` under
/// precision `Q`: `W = Q⁻¹ Mᵀ` and the Cholesky factor of `S = M W`.
#[derive(Debug, Clone)]
pub struct Kriging {
    m: DMatrix<f64>,
    w: DMatrix<f64>,
    s_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    s_logdet: f64,
}

impl Kriging {
    pub fn new(factor: &CholeskyFactor, m: &DMatrix<f64>) -> Result<Self> {
        let n = factor.n();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "constraint matrix columns",
                expected: n,
                found: m.ncols(),
            });
        }
        let k = m.nrows();
        let mut w = DMatrix::zeros(n, k);
        for r in 0..k {
            let row: Vec<f64> = m.row(r).iter().copied().collect();
            let col = factor.solve(&row)?;
            w.set_column(r, &DVector::from_vec(col));
        }
        let s = m * &w;
        let s = (&s + s.transpose()) * 0.5;
        let scale = s.diagonal().amax().max(f64::MIN_POSITIVE);
        let s_chol = nalgebra::Cholesky::new(s.clone()).ok_or(Error::SingularConstraint)?;
        let l = s_chol.l();
        if l.diagonal().iter().any(|&d| d * d <= 1e-12 * scale) {
            return Err(Error::SingularConstraint);
        }
        let s_logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            m: m.clone(),
            w,
            s_chol,
            s_logdet,
        })
    }

    pub fn k(&self) -> usize {
        self.m.nrows()
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `W = Q⁻¹ Mᵀ`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `log |M Q⁻¹ Mᵀ|`.
    pub fn s_logdet(&self) -> f64 {
        self.s_logdet
    }

    /// `x − W S⁻¹ (M x − e)`.
    pub fn correct(&self, x: &[f64], e: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let resid = &self.m * &xv - DVector::from_column_slice(e);
        let lam = self.s_chol.solve(&resid);
        let out = xv - &self.w * lam;
        out.iter().copied().collect()
    }

    /// Variance reduction `wᵀ S⁻¹ w` with `w = Wᵀ b` for a dense direction
    /// given as `Wᵀ b`.
    pub fn variance_reduction(&self, wtb: &DVector<f64>) -> f64 {
        wtb.dot(&self.s_chol.solve(wtb))
    }

    /// Variance reductions for every coordinate (`b = e_i`).
    pub fn diag_reduction(&self) -> Vec<f64> {
        let n = self.w.nrows();
        let sinv = self.s_chol.inverse();
        (0..n)
            .map(|i| {
                let wi = self.w.row(i).transpose();
                wi.dot(&(&sinv * &wi))
            })
            .collect()
    }

    /// `Wᵀ b` for a sparse `b`.
    pub fn wt_sparse(&self, idx: &[usize], vals: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.k());
        for (&i, &v) in idx.iter().zip(vals) {
            for r in 0..self.k() {
                out[r] += self.w[(i, r)] * v;
            }
        }
        out
    }
}

/// Applies the kriging correction to a mean vector and to every sample
/// column so that each satisfies `M x = e`.
pub fn constrain(
    mean: &[f64],
    samples: &DMatrix<f64>,
    factor: &CholeskyFactor,
    m: &DMatrix<f64>,
    e: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if e.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            context: "constraint right-hand side",
            expected: m.nrows(),
            found: e.len(),
        });
    }
    if mean.len() != factor.n() || samples.nrows() != factor.n() {
        return Err(Error::DimensionMismatch {
            context: "constrained vector length",
            expected: factor.n(),
            found: if mean.len() != factor.n() { mean.len() } else { samples.nrows() },
        });
    }
    let kr = Kriging::new(factor, m)?;
    let mean_c = kr.correct(mean, e);
    let mut out = samples.clone();
    for c in 0..samples.ncols() {
        let col: Vec<f64> = samples.column(c).iter().copied().collect();
        let fixed = kr.correct(&col, e);
        out.set_column(c, &DVector::from_vec(fixed));
    }
    Ok((mean_c, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{factorize, reorder, SparseSymmetric};

    #[test]
    fn identical_seed_identical_samples() {
        let q = SparseSymmetric::from_triplets(3, [(0, 0, 2.0), (1, 0, -0.5), (1, 1, 2.0), (2, 2, 1.0)])
            .unwrap();
        let f = factorize(&q, reorder(&q)).unwrap();
        let a = f.sample(5, 42);
        let b = f.sample(5, 42);
        assert_eq!(a, b);
        assert_ne!(a, f.sample(5, 43));
        // column c is independent of the number of columns drawn
        let c = f.sample(2, 42);
        assert_eq!(a.column(1), c.column(1));
    }

    #[test]
    fn identity_sum_to_zero_is_centering() {
        let q = SparseSymmetric::identity(4);
        let f = factorize(&q, reorder(&q)).unwrap();
        let m = DMatrix::from_element(1, 4, 1.0);
        let x = vec![1.0, 2.0, 3.0, 6.0];
        let samples = DMatrix::from_column_slice(4, 1, &x);
        let (mc, sc) = constrain(&x, &samples, &f, &m, &[0.0]).unwrap();
        let mean = 3.0;
        for i in 0..4 {
            assert!((mc[i] - (x[i] - mean)).abs() < 1e-14);
            assert!((sc[(i, 0)] - (x[i] - mean)).abs() < 1e-14);
        }
    }

    #[test]
    fn dependent_constraints_are_singular() {
        let q = SparseSymmetric::identity(3);
        let f = factorize(&q, reorder(&q)).unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        assert!(matches!(Kriging::new(&f, &m), Err(Error::SingularConstraint)));
    }
}
