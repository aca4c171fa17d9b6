use crpd_core::montecarlo::{replication_rng, with_threads};
use crpd_core::{draw_sample, run_cell, run_study, DgpSpec, Gamma, SimulationConfig};

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn normal_draws_obey_the_law_of_large_numbers() {
    let n = 1_000_000;
    let data = draw_sample(&DgpSpec::Normal, n, &mut replication_rng(17, 0));
    let (mean, var) = moments(&data.column("x").unwrap());
    assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() <= 0.01, "variance {var}");
}

#[test]
fn student_t5_variance_matches_formula() {
    let n = 1_000_000;
    let dgp = DgpSpec::student_t(5.0).unwrap();
    let data = draw_sample(&dgp, n, &mut replication_rng(17, 1));
    let (_, var) = moments(&data.column("x").unwrap());
    assert!(
        (var - 5.0 / 3.0).abs() <= 0.03 * 5.0 / 3.0,
        "variance {var}"
    );
    assert!((dgp.var0() - 5.0 / 3.0).abs() < 1e-15);
}

#[test]
fn same_seed_same_sample() {
    for dgp in [DgpSpec::Normal, DgpSpec::student_t(5.0).unwrap()] {
        let a = draw_sample(&dgp, 200, &mut replication_rng(3, 12));
        let b = draw_sample(&dgp, 200, &mut replication_rng(3, 12));
        assert_eq!(a, b);
        let c = draw_sample(&dgp, 200, &mut replication_rng(3, 13));
        assert_ne!(a, c);
    }
}

#[test]
fn third_central_moment_vanishes_under_symmetry() {
    let n = 100_000;
    for dgp in [DgpSpec::Normal, DgpSpec::student_t(5.0).unwrap()] {
        let x = draw_sample(&dgp, n, &mut replication_rng(8, 0))
            .column("x")
            .unwrap();
        let cubes: Vec<f64> = x.iter().map(|v| (v - dgp.mu0()).powi(3)).collect();
        let (mean, var) = moments(&cubes);
        assert!(
            mean.abs() <= 5.0 * var.sqrt() / (n as f64).sqrt(),
            "{}: mean cube {mean}",
            dgp.label()
        );
    }
}

fn small_config(dgp: DgpSpec, n: usize, reps: usize) -> SimulationConfig {
    let mut c = SimulationConfig::new(dgp, n);
    c.replications = reps;
    c.seed = 42;
    c.gamma_grid = vec![Gamma::EL, Gamma::ET, Gamma::new(1.0).unwrap()];
    c
}

#[test]
fn cell_metrics_are_internally_consistent() {
    let c = small_config(DgpSpec::student_t(5.0).unwrap(), 25, 24);
    for &g in &c.gamma_grid {
        let m = run_cell(&c, g).unwrap();
        assert_eq!(m.replications_used + m.failures, c.replications);
        let r = m.replications_used as f64;
        let (bias, mse, sd) = (m.bias.unwrap(), m.mse.unwrap(), m.empirical_sd.unwrap());
        assert!((mse - (sd * sd * (r - 1.0) / r + bias * bias)).abs() <= 1e-10);
        let cd = m.coverage_distortion.unwrap();
        assert!((-c.ci_level..=1.0 - c.ci_level).contains(&cd));
        assert_eq!(m.lambda.len(), 3);
        assert_eq!(m.weights.len(), 6);
        assert_eq!(m.dgp, "t5");
    }
}

#[test]
fn single_replication_cell() {
    let c = small_config(DgpSpec::Normal, 30, 1);
    let m = run_cell(&c, Gamma::ET).unwrap();
    assert_eq!(m.replications_used, 1);
    assert_eq!(m.empirical_sd, None);
    assert_eq!(m.sd_se_ratio, None);
    let fit = crpd_core::montecarlo::run_replication(&c, Gamma::ET, 0).unwrap();
    assert_eq!(m.bias, Some(fit.mu_hat));
}

#[test]
fn study_is_identical_across_thread_counts() {
    let configs = vec![
        small_config(DgpSpec::Normal, 25, 6),
        small_config(DgpSpec::student_t(5.0).unwrap(), 40, 6),
    ];
    let one = with_threads(1, || run_study(&configs).unwrap());
    let four = with_threads(4, || run_study(&configs).unwrap());
    assert_eq!(one.len(), 6);
    assert_eq!(one, four);
    // Rows come out in config order, then grid order.
    assert_eq!(one[0].dgp, "normal");
    assert_eq!(one[3].dgp, "t5");
    assert_eq!(one[1].gamma, Gamma::ET);
    // A study row matches the cell run on its own.
    let cell = run_cell(&configs[1], Gamma::EL).unwrap();
    assert_eq!(one[3], cell);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(DgpSpec::student_t(2.0).is_err());
    assert!(run_study(&[]).is_err());
    let mut c = small_config(DgpSpec::Normal, 3, 5);
    assert!(run_cell(&c, Gamma::ET).is_err());
    c.n = 20;
    c.replications = 0;
    assert!(run_cell(&c, Gamma::ET).is_err());
}
