//! Tabulated univariate densities and their summaries.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Points per marginal grid.
pub const GRID_POINTS: usize = 75;
/// Half-width of marginal grids in standard deviations.
pub const GRID_SDS: f64 = 6.0;
/// Sub-intervals per grid cell when integrating.
const REFINE: usize = 10;

/// Density tabulated on a strictly increasing grid, normalized so that its
/// trapezoid integral is one.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalDensity {
    grid: Vec<f64>,
    density: Vec<f64>,
    /// Exact Gaussian mixture behind the table, when there is one.
    components: Option<Vec<(f64, f64, f64)>>,
}

/// Posterior summary of a marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
    pub mode: f64,
}

fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2)
        .zip(f.windows(2))
        .map(|(xw, fw)| 0.5 * (xw[1] - xw[0]) * (fw[0] + fw[1]))
        .sum()
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    (-0.5 * u * u).exp() / (sd * (2.0 * PI).sqrt())
}

fn mixture_pdf(comps: &[(f64, f64, f64)], x: f64) -> f64 {
    comps.iter().map(|&(w, m, s)| w * normal_pdf(x, m, s)).sum()
}

impl MarginalDensity {
    /// Normalizes `density` on `grid`.
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() != density.len() {
            return Err(Error::DimensionMismatch {
                context: "marginal grid and density",
                expected: grid.len(),
                found: density.len(),
            });
        }
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidModel("marginal grid must be strictly increasing".into()));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidModel("marginal density must be finite and nonnegative".into()));
        }
        let total = trapezoid(&grid, &density);
        if !(total > 0.0) {
            return Err(Error::InvalidModel("marginal density has zero mass".into()));
        }
        let density = density.into_iter().map(|d| d / total).collect();
        Ok(Self {
            grid,
            density,
            components: None,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Gaussian density on the default grid.
    pub fn gaussian(mean: f64, sd: f64) -> Self {
        Self::mixture(&[(1.0, mean, sd)])
    }

    /// Mixture `Σ w N(mean, sd²)` on an even grid spanning every component's
    /// `mean ± 6 sd`. Weights need not be normalized.
    pub fn mixture(components: &[(f64, f64, f64)]) -> Self {
        let wsum: f64 = components.iter().filter(|c| c.0 > 0.0).map(|c| c.0).sum();
        let comps: Vec<(f64, f64, f64)> = components
            .iter()
            .filter(|c| c.0 > 0.0)
            .map(|&(w, m, s)| (w / wsum, m, s.max(1e-12 * (1.0 + m.abs()))))
            .collect();
        let lo = comps.iter().map(|c| c.1 - GRID_SDS * c.2).fold(f64::INFINITY, f64::min);
        let hi = comps.iter().map(|c| c.1 + GRID_SDS * c.2).fold(f64::NEG_INFINITY, f64::max);
        let grid: Vec<f64> = (0..GRID_POINTS)
            .map(|k| lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64)
            .collect();
        let density: Vec<f64> = grid.iter().map(|&x| mixture_pdf(&comps, x)).collect();
        let mut out = Self::new(grid, density).expect("mixture grid is valid");
        out.components = Some(comps);
        out
    }

    /// Density of `f(X)` for a strictly monotone `f` with derivative `df`.
    pub fn transform(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(&x, &d)| (f(x), d / df(x).abs()))
            .filter(|(y, d)| y.is_finite() && d.is_finite())
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        // saturating maps can collapse neighbouring points
        pts.dedup_by(|b, a| b.0 <= a.0);
        let (g, d) = pts.into_iter().unzip();
        Self::new(g, d)
    }

    /// Finer tabulation used for integrals. Mixtures are evaluated exactly;
    /// otherwise the log-density is interpolated by the quadratic through
    /// neighbouring grid points, which is exact for Gaussian shapes.
    fn refined(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        if let Some(comps) = &self.components {
            let xs: Vec<f64> = (0..(n - 1) * REFINE + 1)
                .map(|k| {
                    let (c, s) = (k / REFINE, k % REFINE);
                    if c == n - 1 {
                        self.grid[c]
                    } else {
                        self.grid[c] + (self.grid[c + 1] - self.grid[c]) * s as f64 / REFINE as f64
                    }
                })
                .collect();
            let mut fs: Vec<f64> = xs.iter().map(|&x| mixture_pdf(comps, x)).collect();
            let total = trapezoid(&xs, &fs);
            fs.iter_mut().for_each(|f| *f /= total);
            return (xs, fs);
        }
        let mut xs = Vec::with_capacity((n - 1) * REFINE + 1);
        let mut fs = Vec::with_capacity(xs.capacity());
        for k in 0..n - 1 {
            let c = if n < 3 { None } else { Some(k.clamp(1, n - 2)) };
            for s in 0..REFINE {
                let x = self.grid[k] + (self.grid[k + 1] - self.grid[k]) * s as f64 / REFINE as f64;
                xs.push(x);
                fs.push(match c {
                    Some(c) => self.interp3(c, x, k),
                    None => self.linear(k, x),
                });
            }
        }
        xs.push(self.grid[n - 1]);
        fs.push(self.density[n - 1]);
        let total = trapezoid(&xs, &fs);
        for f in fs.iter_mut() {
            *f /= total;
        }
        (xs, fs)
    }

    fn linear(&self, k: usize, x: f64) -> f64 {
        let t = (x - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
        self.density[k] * (1.0 - t) + self.density[k + 1] * t
    }

    fn interp3(&self, c: usize, x: f64, k: usize) -> f64 {
        let idx = [c - 1, c, c + 1];
        if idx.iter().any(|&i| !(self.density[i] > 0.0)) {
            return self.linear(k, x);
        }
        let xs = idx.map(|i| self.grid[i]);
        let ls = idx.map(|i| self.density[i].ln());
        let mut v = 0.0;
        for a in 0..3 {
            let mut w = 1.0;
            for b in 0..3 {
                if a != b {
                    w *= (x - xs[b]) / (xs[a] - xs[b]);
                }
            }
            v += w * ls[a];
        }
        v.exp()
    }
}

/// `E f(X)`.
pub fn emarginal(f: impl Fn(f64) -> f64, m: &MarginalDensity) -> f64 {
    let (xs, fs) = m.refined();
    let vals: Vec<f64> = xs.iter().zip(&fs).map(|(&x, &d)| f(x) * d).collect();
    trapezoid(&xs, &vals)
}

/// Quantile by inverse interpolation of the cumulative distribution.
pub fn qmarginal(p: f64, m: &MarginalDensity) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let (xs, fs) = m.refined();
    Ok(quantile(&xs, &cumulative(&xs, &fs), p))
}

fn cumulative(xs: &[f64], fs: &[f64]) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for k in 1..xs.len() {
        acc += 0.5 * (xs[k] - xs[k - 1]) * (fs[k] + fs[k - 1]);
        cdf.push(acc);
    }
    cdf
}

fn quantile(xs: &[f64], cdf: &[f64], p: f64) -> f64 {
    let k = cdf.partition_point(|&c| c < p);
    if k == 0 {
        return xs[0];
    }
    if k == xs.len() {
        return xs[xs.len() - 1];
    }
    let (c0, c1) = (cdf[k - 1], cdf[k]);
    let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
    xs[k - 1] + t * (xs[k] - xs[k - 1])
}

/// Mean, sd, quantiles and mode.
pub fn zmarginal(m: &MarginalDensity) -> Summary {
    let (xs, fs) = m.refined();
    let cdf = cumulative(&xs, &fs);
    let e = |g: &dyn Fn(f64) -> f64| {
        let v: Vec<f64> = xs.iter().zip(&fs).map(|(&x, &d)| g(x) * d).collect();
        trapezoid(&xs, &v)
    };
    let mean = e(&|x| x);
    let var = e(&|x| (x - mean) * (x - mean)).max(0.0);
    let mode = xs
        .iter()
        .zip(&fs)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(&x, _)| x)
        .unwrap_or(mean);
    let q = |p| quantile(&xs, &cdf, p);
    Summary {
        mean,
        sd: var.sqrt(),
        q025: q(0.025),
        q25: q(0.25),
        q50: q(0.5),
        q75: q(0.75),
        q975: q(0.975),
        mode,
    }
}
