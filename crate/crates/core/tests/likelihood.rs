use laplgm::likelihood::Lik;
use proptest::prelude::*;

fn families() -> [Lik; 4] {
    [Lik::Gaussian { precision: 2.5 }, Lik::Poisson, Lik::NBinomial { size: 0.7 }, Lik::NBinomial { size: 10.0 }]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivatives_match_central_differences(k in 0u32..30, eta in -3.0f64..3.0, shift in -2.0f64..2.0) {
        let h = 1e-5;
        for lik in families() {
            let y = match lik { Lik::Gaussian { .. } => eta + shift, _ => k as f64 };
            let (d1, d2) = lik.derivs(y, eta).unwrap();
            let f = |e: f64| lik.log_lik(y, e).unwrap();
            let fd1 = (f(eta + h) - f(eta - h)) / (2.0 * h);
            let g = |e: f64| lik.derivs(y, e).unwrap().0;
            let fd2 = (g(eta + h) - g(eta - h)) / (2.0 * h);
            prop_assert!(close(d1, fd1, 1e-5), "{lik:?} d1 {d1} vs {fd1}");
            prop_assert!(close(d2, fd2, 1e-5), "{lik:?} d2 {d2} vs {fd2}");
            prop_assert!(d2 < 0.0);
        }
    }

    #[test]
    fn densities_are_normalized(eta in -2.0f64..3.0) {
        for lik in families() {
            let total = match lik {
                Lik::Gaussian { precision } => {
                    // trapezoid over ±12 sd; exponentially accurate for smooth tails
                    let sd = precision.sqrt().recip();
                    let m = 4000;
                    let step = 24.0 * sd / m as f64;
                    (0..=m)
                        .map(|i| {
                            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                            w * lik.log_lik(eta - 12.0 * sd + i as f64 * step, eta).unwrap().exp()
                        })
                        .sum::<f64>()
                        * step
                }
                _ => (0..5000).map(|y| lik.log_lik(y as f64, eta).unwrap().exp()).sum(),
            };
            prop_assert!((total - 1.0).abs() < 1e-8, "{lik:?}: {total}");
        }
    }

    #[test]
    fn discrete_cdf_is_cumulative_mass(k in 0u32..40, eta in -2.0f64..3.0) {
        for lik in [Lik::Poisson, Lik::NBinomial { size: 3.0 }] {
            let direct: f64 = (0..=k).map(|y| lik.log_lik(y as f64, eta).unwrap().exp()).sum();
            prop_assert!((lik.cdf(k as f64, eta).unwrap() - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn negative_binomial_poisson_limit_on_grid() {
    let nb = Lik::NBinomial { size: 1e6 };
    let mut worst: f64 = 0.0;
    for y in 0..=20 {
        for k in 0..=20 {
            let eta = -2.0 + 0.2 * k as f64;
            let d = nb.log_lik(y as f64, eta).unwrap() - Lik::Poisson.log_lik(y as f64, eta).unwrap();
            worst = worst.max(d.abs());
        }
    }
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn upper_support_limit_has_unit_cdf() {
    for lik in families() {
        assert_eq!(lik.cdf(f64::INFINITY, 0.4).unwrap(), 1.0);
    }
    assert!((Lik::Poisson.cdf(0.0, 0.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
}
