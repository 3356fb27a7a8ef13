#![allow(dead_code)]

use laplgm::latent::{
    build_stack, Component, ComponentKind, HyperId, HyperParam, Hypers, LatentModel, ModelGraph, StackPart,
};
use laplgm::likelihood::Family;
use laplgm::sparse::SparseMatrix;
use nalgebra::DMatrix;

pub fn stack(latent: LatentModel, family: Family, y: Vec<Option<f64>>, rows: Vec<Vec<(usize, f64)>>) -> ModelGraph {
    let a = SparseMatrix::from_rows(latent.n(), &rows).unwrap();
    build_stack(latent, family, vec![StackPart { tag: "obs".into(), y, a }]).unwrap()
}

pub fn identity_rows(n: usize) -> Vec<Vec<(usize, f64)>> {
    (0..n).map(|i| vec![(i, 1.0)]).collect()
}

/// iid block with fixed unit precision observed through `rows` with a
/// Gaussian likelihood whose log-precision is the only free hyperparameter.
pub fn conjugate(y: &[f64], rows: Vec<Vec<(usize, f64)>>, n: usize, log_prior_prec: f64) -> (ModelGraph, HyperId) {
    let mut h = Hypers::new();
    let px = h.add(HyperParam::log_precision("prec_x", log_prior_prec).fixed(log_prior_prec));
    let py = h.add(HyperParam::log_precision("prec_y", 0.0));
    let latent = LatentModel::new(
        h,
        vec![Component::new("x", ComponentKind::Iid { size: n, log_precision: px })],
    )
    .unwrap();
    let m = stack(latent, Family::Gaussian { log_precision: py }, y.iter().map(|&v| Some(v)).collect(), rows);
    (m, py)
}

/// Poisson counts on an iid block with a free log-precision.
pub fn poisson_iid(y: &[f64], initial: f64) -> ModelGraph {
    let mut h = Hypers::new();
    let p = h.add(HyperParam::log_precision("prec", initial));
    let latent = LatentModel::new(
        h,
        vec![Component::new("u", ComponentKind::Iid { size: y.len(), log_precision: p })],
    )
    .unwrap();
    stack(latent, Family::Poisson, y.iter().map(|&v| Some(v)).collect(), identity_rows(y.len()))
}

/// Probabilists' Gauss–Hermite rule (weight `e^{−u²/2}`), nodes by Newton on
/// the orthonormal recurrence.
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    // physicists' rule first
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pi4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pi4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let s2 = 2f64.sqrt();
    (x.iter().map(|v| v * s2).collect(), w.iter().map(|v| v * s2).collect())
}

pub fn dense_conditional(q: &DMatrix<f64>, a: &DMatrix<f64>, tau: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let qs = q + a.transpose() * a * tau;
    let cov = qs.clone().try_inverse().unwrap();
    let b = a.transpose() * nalgebra::DVector::from_column_slice(y) * tau;
    let mu = &cov * b;
    (mu.iter().copied().collect(), (0..q.nrows()).map(|i| cov[(i, i)]).collect())
}

pub fn ln_normal(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * x * x / var
}
