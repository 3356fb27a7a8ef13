//! Selected inversion: entries of `Q⁻¹` on the pattern of `L + Lᵀ`.
//!
//! Uses the backward recursion
//! `Σ_ij = δ_ij / L_jj² − (1/L_jj) Σ_{k>j, L_kj≠0} L_kj Σ_ki` for `i >= j`,
//! in block form over supernodes from last to first. The pattern of `L` is
//! closed under the recursion, so no entry outside it is ever needed.

use std::sync::Arc;

use super::cholesky::{dot, CholeskyFactor, SymbolicCholesky};

/// Values of `Q⁻¹` on the factor pattern, stored parallel to `L`.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: Arc<SymbolicCholesky>,
    values: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SelectedInverse {
    /// `(Q⁻¹)_ij` in original indexing, when `(i, j)` lies on the pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let perm = self.symbolic.perm();
        let (a, b) = (perm.new_of(i), perm.new_of(j));
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        rows.binary_search(&r)
            .ok()
            .map(|p| self.values[self.col_ptr[c] + p])
    }

    /// Marginal variances in original indexing.
    pub fn diag(&self) -> Vec<f64> {
        let perm = self.symbolic.perm();
        (0..self.values_len_n())
            .map(|old| self.values[self.col_ptr[perm.new_of(old)]])
            .collect()
    }

    fn values_len_n(&self) -> usize {
        self.col_ptr.len() - 1
    }

    /// `bᵀ Q⁻¹ b` for a sparse `b`, if every pair of its support lies on the
    /// pattern.
    pub fn quad_form(&self, idx: &[usize], vals: &[f64]) -> Option<f64> {
        let mut s = 0.0;
        for (a, (&i, &vi)) in idx.iter().zip(vals).enumerate() {
            s += vi * vi * self.get(i, i)?;
            for (&j, &vj) in idx[a + 1..].iter().zip(&vals[a + 1..]) {
                s += 2.0 * vi * vj * self.get(i, j)?;
            }
        }
        Some(s)
    }
}

impl CholeskyFactor {
    /// Computes `Q⁻¹` on the pattern of `L + Lᵀ`, including the full
    /// diagonal.
    ///
    /// Works one supernode at a time, last to first. With the supernode's
    /// columns `F`, the rows below it `S` and `U = L_SF L_FF⁻¹`:
    /// `Σ_SF = −Σ_SS U` and `Σ_FF = (L_FF L_FFᵀ)⁻¹ − Uᵀ Σ_SF`.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let sym = Arc::clone(self.symbolic());
        let (col_ptr, row_idx) = sym.l_pattern();
        let mut sigma = vec![0.0; row_idx.len()];

        for s in (0..sym.supernodes()).rev() {
            let f = sym.sn_cols(s).start;
            let rows = sym.sn_rows(s);
            let w = sym.sn_cols(s).len();
            let below = &rows[w..];
            let ms = below.len();

            // dense row-major L_FF and L_SF
            let mut lff = vec![0.0; w * w];
            let mut lsf = vec![0.0; ms * w];
            for c in 0..w {
                let (_, vals) = self.l_column(f + c);
                for i in c..w {
                    lff[i * w + c] = vals[i - c];
                }
                for r in 0..ms {
                    lsf[r * w + c] = vals[w - c + r];
                }
            }

            // U column-major
            let mut u = vec![0.0; ms * w];
            for r in 0..ms {
                for c in (0..w).rev() {
                    let mut v = lsf[r * w + c];
                    for t in c + 1..w {
                        v -= u[t * ms + r] * lff[t * w + c];
                    }
                    u[c * ms + r] = v / lff[c * w + c];
                }
            }

            // Σ_SS, full and row-major; the pattern holds every pair of S
            let mut sss = vec![0.0; ms * ms];
            for a in 0..ms {
                let k = below[a];
                let mut q = col_ptr[k];
                for b in a..ms {
                    let i = below[b];
                    while row_idx[q] < i {
                        q += 1;
                        debug_assert!(q < col_ptr[k + 1], "pattern closure violated");
                    }
                    let v = sigma[q];
                    sss[a * ms + b] = v;
                    sss[b * ms + a] = v;
                }
            }

            // Σ_SF column-major
            let mut ssf = vec![0.0; ms * w];
            for c in 0..w {
                let uc = &u[c * ms..(c + 1) * ms];
                for r in 0..ms {
                    ssf[c * ms + r] = -dot(&sss[r * ms..(r + 1) * ms], uc);
                }
            }

            // M = L_FF⁻¹, lower and row-major
            let mut m = vec![0.0; w * w];
            for c in 0..w {
                m[c * w + c] = 1.0 / lff[c * w + c];
                for i in c + 1..w {
                    let mut v = 0.0;
                    for t in c..i {
                        v -= lff[i * w + t] * m[t * w + c];
                    }
                    m[i * w + c] = v / lff[i * w + i];
                }
            }

            for c in 0..w {
                let p0 = col_ptr[f + c];
                for i in c..w {
                    let mut v = 0.0;
                    for t in i..w {
                        v += m[t * w + i] * m[t * w + c];
                    }
                    v -= dot(&u[i * ms..(i + 1) * ms], &ssf[c * ms..(c + 1) * ms]);
                    sigma[p0 + i - c] = v;
                }
                sigma[p0 + w - c..p0 + w - c + ms].copy_from_slice(&ssf[c * ms..(c + 1) * ms]);
            }
        }

        SelectedInverse {
            col_ptr: col_ptr.to_vec(),
            row_idx: row_idx.to_vec(),
            symbolic: sym,
            values: sigma,
        }
    }
}
