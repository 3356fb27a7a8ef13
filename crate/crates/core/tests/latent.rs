use std::f64::consts::PI;
use std::sync::Arc;

use laplgm::error::Error;
use laplgm::latent::{
    ar1_precision, build_stack, group_ar1, rw1_structure, spde_precision, Component, ComponentKind, HyperParam, Hypers,
    LatentModel, Prior, SpdeBasis, StackPart, Transform,
};
use laplgm::likelihood::Family;
use laplgm::mesh::{assemble, structured_mesh};
use laplgm::sparse::{factorize, reorder, SparseMatrix, SparseSymmetric};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ar1_inverse_has_unit_diagonal(n in 2usize..=10, a in -0.95f64..0.95) {
        let cov = ar1_precision(n, a, 1.0).unwrap().to_dense().try_inverse().unwrap();
        for i in 0..n {
            prop_assert!((cov[(i, i)] - 1.0).abs() < 1e-10);
        }
        for i in 1..n {
            prop_assert!((cov[(i, i - 1)] - a).abs() < 1e-10);
        }
    }

    #[test]
    fn group_ar1_equals_dense_kronecker(n in 1usize..=8, t in 1usize..=8, a in -0.9f64..0.9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = vec![];
        for i in 0..n {
            trip.push((i, i, 2.0 + rng.random::<f64>()));
            if i > 0 {
                trip.push((i, i - 1, rng.random_range(-0.5..0.5)));
            }
        }
        let qs = SparseSymmetric::from_triplets(n, trip).unwrap();
        let got = group_ar1(&qs, t, a).unwrap().to_dense();
        let want = ar1_precision(t, a, 1.0).unwrap().to_dense().kronecker(&qs.to_dense());
        prop_assert!((got - want).abs().max() < 1e-12);
    }

    #[test]
    fn transforms_round_trip(x in -8.0f64..8.0) {
        for t in [Transform::Log, Transform::Correlation, Transform::Identity] {
            prop_assert!((t.to_internal(t.to_natural(x)) - x).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn rw1_is_psd_with_constant_null_space(n in 2usize..=30, prec in 0.1f64..10.0) {
        let q = rw1_structure(n, prec);
        let ones = vec![1.0; n];
        prop_assert!(q.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        let ramp: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        prop_assert!((q.quad_form(&ramp) - prec * (n - 1) as f64).abs() < 1e-9);
        let eig = q.to_dense().symmetric_eigen();
        let zero = eig.eigenvalues.iter().filter(|l| l.abs() < 1e-9).count();
        prop_assert_eq!(zero, 1);
        prop_assert!(eig.eigenvalues.iter().all(|&l| l > -1e-9));
    }
}

#[test]
fn ar1_rejects_unit_correlation() {
    assert!(matches!(ar1_precision(3, 1.0, 1.0), Err(Error::InvalidCorrelation(_))));
    assert!(matches!(group_ar1(&SparseSymmetric::identity(2), 2, -1.0), Err(Error::InvalidCorrelation(_))));
}

#[test]
fn group_ar1_special_cases() {
    let qs = SparseSymmetric::from_triplets(2, [(0, 0, 2.0), (1, 1, 3.0), (1, 0, -1.0)]).unwrap();
    assert_eq!(group_ar1(&qs, 1, 0.4).unwrap().to_dense(), qs.to_dense());
    let block = group_ar1(&qs, 3, 0.0).unwrap().to_dense();
    let want = DMatrix::<f64>::identity(3, 3).kronecker(&qs.to_dense());
    assert!((block - want).abs().max() < 1e-15);
}

#[test]
fn ar1_four_inverse() {
    let cov = ar1_precision(4, 0.5, 1.0).unwrap().to_dense().try_inverse().unwrap();
    assert!((cov[(0, 1)] - 0.5).abs() < 1e-12);
    assert!((0..4).all(|i| (cov[(i, i)] - 1.0).abs() < 1e-12));
}

fn variance_at(q: &SparseSymmetric, node: usize) -> f64 {
    factorize(q, reorder(q)).unwrap().selected_inverse().diag()[node]
}

#[test]
fn spde_interior_variance_matches_matern() {
    let cells = 100;
    let mesh = structured_mesh(-0.75, 1.75, -0.75, 1.75, cells, cells).unwrap();
    let fem = assemble(&mesh);
    let (range, sigma0, nu) = (0.25, 1.0, 1.0);
    let kappa = (8.0f64 * nu).sqrt() / range;
    let tau = 1.0 / (2.0 * PI.sqrt() * kappa * sigma0);
    let q = spde_precision(&fem, 2, kappa, tau).unwrap();
    let var = factorize(&q, reorder(&q)).unwrap().selected_inverse().diag();
    for node in mesh.vertices_in_box([0.25, 0.75], [0.25, 0.75]) {
        assert!((var[node] - 1.0).abs() <= 0.1, "node {node}: {}", var[node]);
    }
}

#[test]
fn spde_variance_decreases_in_kappa() {
    let mesh = structured_mesh(-0.5, 1.5, -0.5, 1.5, 40, 40).unwrap();
    let fem = assemble(&mesh);
    let centre = mesh.vertices_in_box([0.49, 0.51], [0.49, 0.51])[0];
    for alpha in [1u8, 2] {
        let v: Vec<f64> = [5.0, 10.0, 20.0]
            .iter()
            .map(|&k| variance_at(&spde_precision(&fem, alpha, k, 0.1).unwrap(), centre))
            .collect();
        assert!(v[0] > v[1] && v[1] > v[2], "alpha {alpha}: {v:?}");
    }
}

fn hypers_with_gaussian(prec: f64) -> (Hypers, laplgm::latent::HyperId) {
    let mut h = Hypers::new();
    let id = h.add(HyperParam::log_precision("p", prec.ln()));
    (h, id)
}

#[test]
fn prior_precision_assembly() {
    let (h, p) = hypers_with_gaussian(4.0);
    let m = LatentModel::new(
        h,
        vec![
            Component::new("b", ComponentKind::Fixed { prior_precision: 1e-4 }),
            Component::new("u", ComponentKind::Iid { size: 2, log_precision: p }),
        ],
    )
    .unwrap();
    let g = build_stack(
        m,
        Family::Poisson,
        vec![StackPart { tag: "obs".into(), y: vec![Some(1.0)], a: SparseMatrix::from_rows(3, &[vec![(0, 1.0)]]).unwrap() }],
    )
    .unwrap();
    let q = g.prior_precision(&[4f64.ln()]).unwrap().to_dense();
    assert_eq!(q, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1e-4, 4.0, 4.0])));
}

#[test]
fn spde_component_delegates_to_direct_builder() {
    let mesh = structured_mesh(0.0, 1.0, 0.0, 1.0, 6, 6).unwrap();
    let fem = assemble(&mesh);
    let (tau, kappa) = (0.3f64, 11.3f64);
    let mut h = Hypers::new();
    let prior = Prior::Gaussian { mean: 0.0, precision: 0.1 };
    let lt = h.add(HyperParam::new("tau", tau.ln(), Transform::Log, prior));
    let lk = h.add(HyperParam::new("kappa", kappa.ln(), Transform::Log, prior));
    let basis = Arc::new(SpdeBasis::new(&fem, 2).unwrap());
    let m = LatentModel::new(h, vec![Component::new("s", ComponentKind::Spde { basis, log_tau: lt, log_kappa: lk })]).unwrap();
    let rows = SparseMatrix::from_rows(m.n(), &[vec![(0, 1.0)]]).unwrap();
    let g = build_stack(m, Family::Poisson, vec![StackPart { tag: "obs".into(), y: vec![Some(0.0)], a: rows }]).unwrap();
    let q = g.prior_precision(&[tau.ln(), kappa.ln()]).unwrap().to_dense();
    let direct = spde_precision(&fem, 2, kappa, tau).unwrap().to_dense();
    assert!((q - direct).abs().max() < 1e-9);
}

#[test]
fn observation_and_prediction_parts_join() {
    let (h, p) = hypers_with_gaussian(1.0);
    let m = LatentModel::new(h, vec![Component::new("u", ComponentKind::Iid { size: 10, log_precision: p })]).unwrap();
    let obs_rows: Vec<Vec<(usize, f64)>> = (0..3000).map(|i| vec![(i % 10, 1.0)]).collect();
    let pred_rows: Vec<Vec<(usize, f64)>> = (0..2601).map(|i| vec![(i % 10, 0.5), ((i + 1) % 10, 0.5)]).collect();
    let a_obs = SparseMatrix::from_rows(10, &obs_rows).unwrap();
    let a_pred = SparseMatrix::from_rows(10, &pred_rows).unwrap();
    let g = build_stack(
        m,
        Family::Poisson,
        vec![
            StackPart { tag: "obs".into(), y: vec![Some(1.0); 3000], a: a_obs.clone() },
            StackPart { tag: "pred".into(), y: vec![None; 2601], a: a_pred.clone() },
        ],
    )
    .unwrap();
    assert_eq!(g.n_rows(), 5601);
    assert_eq!(g.tag("pred").unwrap(), 3000..5601);
    assert_eq!(g.observed_rows().len(), 3000);
    let joined = SparseMatrix::vstack(&[&a_obs, &a_pred]).unwrap();
    assert_eq!(g.a().to_dense(), joined.to_dense());
}
