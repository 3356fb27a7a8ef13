use laplgm::engine::{simulate, SimulationSpec};

fn small(t: usize) -> SimulationSpec {
    SimulationSpec {
        n_sites: 10,
        n_times: t,
        mesh_cells: 12,
        ..SimulationSpec::default()
    }
}

#[test]
fn lag_one_correlation_over_replicates() {
    let spec = small(2);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for seed in 0..500 {
        let d = simulate(&spec, seed).unwrap();
        let interior = d.mesh.vertices_in_box([0.0, 1.0], [0.0, 1.0]);
        for v in interior {
            let (x, y) = (d.field[(v, 0)], d.field[(v, 1)]);
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
    }
    let corr = sxy / (sxx * syy).sqrt();
    assert!((corr - 0.5).abs() <= 0.05, "lag-one correlation {corr}");
}

#[test]
fn predictor_mean_follows_the_trend() {
    let spec = small(5);
    let reps = 200;
    let mut resid = vec![Vec::new(); spec.n_times];
    for seed in 0..reps {
        let d = simulate(&spec, 1000 + seed).unwrap();
        for (t, c) in d.covar1.iter().enumerate() {
            assert!((c - (t + 1) as f64 / spec.n_times as f64).abs() < 1e-15);
        }
        for r in &d.rows {
            let t = r.time - 1;
            let trend = -1.0 + r.covar1 + 0.5 * r.covar2;
            assert!((d.trend(t, &spec) - trend).abs() < 1e-12);
            resid[t].push(r.eta - trend);
        }
    }
    for (t, v) in resid.iter().enumerate() {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        // sites within a replicate share the field, so use per-replicate means for the error
        let rep_means: Vec<f64> = v.chunks(spec.n_sites).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let k = rep_means.len() as f64;
        let var = rep_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let se = (var / k).sqrt();
        assert!(mean.abs() <= 4.0 * se, "time {t}: mean residual {mean}, se {se}");
    }
}
