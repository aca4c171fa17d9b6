use crpd_core::{
    central_moments_model, estimate, implied_weights, instrumented_mean_model, mean_only_model,
    profiled_objective, Dataset, Gamma, SearchConfig, SolverConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gamma(v: f64) -> Gamma {
    Gamma::new(v).unwrap()
}

fn normal_column(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn mean_only_model_collapses_to_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let search = SearchConfig::default();
    let solver = SolverConfig::default();
    for k in 0..50 {
        let n = rng.random_range(10..80);
        let scale = rng.random_range(0.5..5.0);
        let x: Vec<f64> = (0..n)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal) + 3.0)
            .collect();
        let xbar = mean(&x);
        let data = Dataset::from_column("x", x).unwrap();
        for gv in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let fit = estimate(&data, &mean_only_model(), gamma(gv), &search, &solver, 0.95)
                .unwrap_or_else(|e| panic!("dataset {k}, gamma {gv}: {e}"));
            assert!(
                (fit.theta_hat[0] - xbar).abs() <= 1e-6,
                "dataset {k}, gamma {gv}: {} vs {xbar}",
                fit.theta_hat[0]
            );
            assert!(fit.multipliers.lambda[0].abs() <= 1e-8);
            assert!(fit.multipliers.delta_shift.abs() <= 1e-8);
            let u = 1.0 / n as f64;
            assert!(fit.weights.iter().all(|p| (p - u).abs() <= 1e-10));
        }
    }
}

#[test]
fn objective_is_zero_at_the_mean_and_positive_elsewhere() {
    let x = normal_column(2, 30);
    let xbar = mean(&x);
    let data = Dataset::from_column("x", x).unwrap();
    let cfg = SolverConfig::default();
    for gv in [-1.0, 0.0, 0.5, 1.0] {
        let at = profiled_objective(&[xbar], &data, &mean_only_model(), gamma(gv), &cfg).unwrap();
        assert!(at.abs() < 1e-14);
        let off =
            profiled_objective(&[xbar + 0.1], &data, &mean_only_model(), gamma(gv), &cfg).unwrap();
        assert!(off > 0.0 && off.is_finite());
    }
}

#[test]
fn estimate_is_not_beaten_by_brute_force_grid() {
    let x = normal_column(3, 50);
    let data = Dataset::from_column("x", x.clone()).unwrap();
    let model = central_moments_model();
    let g0 = gamma(0.0);
    let cfg = SolverConfig::default();
    let xbar = mean(&x);
    let var = x.iter().map(|v| (v - xbar) * (v - xbar)).sum::<f64>() / x.len() as f64;
    let at_sample = profiled_objective(&[xbar, var], &data, &model, g0, &cfg).unwrap();
    assert!(at_sample.is_finite() && at_sample > 0.0);

    let fit = estimate(&data, &model, g0, &SearchConfig::default(), &cfg, 0.95).unwrap();
    let best = profiled_objective(&fit.theta_hat, &data, &model, g0, &cfg).unwrap();
    assert!(best <= at_sample);

    // Coarse pass over the whole default box, then resolution 1e-3 around its
    // minimizer.
    let bounds = model.default_bounds(&data).unwrap();
    let eval = |t: [f64; 2]| profiled_objective(&t, &data, &model, g0, &cfg).unwrap();
    let steps = 80;
    let mut coarse = (f64::INFINITY, [0.0; 2]);
    for a in 0..=steps {
        for b in 0..=steps {
            let t = [
                bounds[0].0 + (bounds[0].1 - bounds[0].0) * a as f64 / steps as f64,
                bounds[1].0 + (bounds[1].1 - bounds[1].0) * b as f64 / steps as f64,
            ];
            let v = eval(t);
            if v < coarse.0 {
                coarse = (v, t);
            }
        }
    }
    let mut fine = coarse.0;
    for a in -60..=60 {
        for b in -60..=60 {
            let t = [coarse.1[0] + a as f64 * 1e-3, coarse.1[1] + b as f64 * 1e-3];
            fine = fine.min(eval(t));
        }
    }
    assert!(
        best <= fine * (1.0 + 1e-9) + 1e-15,
        "estimate objective {best:e} above brute-force minimum {fine:e}"
    );
}

#[test]
fn result_fields_are_consistent() {
    let x = normal_column(4, 60);
    let data = Dataset::from_column("x", x).unwrap();
    let model = central_moments_model();
    for gv in [-1.0, 0.0, 1.0] {
        let fit = estimate(
            &data,
            &model,
            gamma(gv),
            &SearchConfig::default(),
            &SolverConfig::default(),
            0.9,
        )
        .unwrap();
        let p = fit.theta_hat.len();
        assert_eq!(p, 2);
        let z = 1.6448536269514722;
        for j in 0..p {
            assert!((fit.std_errors[j] - fit.cov_theta[j][j].sqrt()).abs() < 1e-15);
            assert!((fit.ci[j].0 - (fit.theta_hat[j] - z * fit.std_errors[j])).abs() < 1e-9);
            assert!((fit.ci[j].1 - (fit.theta_hat[j] + z * fit.std_errors[j])).abs() < 1e-9);
            for k in 0..p {
                assert_eq!(fit.cov_theta[j][k], fit.cov_theta[k][j]);
            }
        }
        let c = &fit.cov_theta;
        assert!(c[0][0] > 0.0 && c[0][0] * c[1][1] - c[0][1] * c[1][0] > 0.0);

        let g = model
            .bind(&data)
            .unwrap()
            .moment_matrix(&fit.theta_hat)
            .unwrap();
        let w = implied_weights(
            &g,
            &fit.multipliers.lambda,
            fit.multipliers.delta_shift,
            gamma(gv),
        )
        .unwrap();
        for (a, b) in w.iter().zip(fit.weights.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
}

#[test]
fn row_permutation_leaves_estimate_unchanged() {
    let x = normal_column(5, 40);
    let mut shuffled = x.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let a_data = Dataset::from_column("x", x).unwrap();
    let b_data = Dataset::from_column("x", shuffled).unwrap();
    let model = central_moments_model();
    for gv in [-1.0, 0.0, 0.5] {
        let fit = |d: &Dataset| {
            estimate(
                d,
                &model,
                gamma(gv),
                &SearchConfig::default(),
                &SolverConfig::default(),
                0.95,
            )
            .unwrap()
        };
        let (a, b) = (fit(&a_data), fit(&b_data));
        // Summation order differs, so agreement is to rounding, not bits.
        for (s, t) in a.theta_hat.iter().zip(&b.theta_hat) {
            assert!((s - t).abs() <= 1e-8, "gamma {gv}: {s} vs {t}");
        }
        for (r, s) in a
            .cov_theta
            .iter()
            .flatten()
            .zip(b.cov_theta.iter().flatten())
        {
            assert!((r - s).abs() <= 1e-8 * r.abs().max(1e-12));
        }
        let mut wa = a.weights.to_vec();
        let mut wb = b.weights.to_vec();
        wa.sort_by(f64::total_cmp);
        wb.sort_by(f64::total_cmp);
        for (p, q) in wa.iter().zip(&wb) {
            assert!((p - q).abs() <= 1e-9);
        }
    }
}

#[test]
fn instrumented_mean_first_moment_vanishes_at_sample_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 40;
    let days: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..330.0)).collect();
    let mpd: Vec<f64> = (0..n)
        .map(|_| 12.5 + 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let xbar = mean(&mpd);
    let data = Dataset::from_columns(vec![("mpd".into(), mpd), ("days".into(), days)]).unwrap();
    let g = instrumented_mean_model()
        .bind(&data)
        .unwrap()
        .moment_matrix(&[xbar])
        .unwrap();
    assert!(g.column_means()[0].abs() < 1e-12);

    // The instrument moves the estimate off the sample mean, but it stays
    // inside the default box.
    let fit = estimate(
        &data,
        &instrumented_mean_model(),
        gamma(0.0),
        &SearchConfig::default(),
        &SolverConfig::default(),
        0.95,
    )
    .unwrap();
    let b = instrumented_mean_model().default_bounds(&data).unwrap()[0];
    assert!(fit.theta_hat[0] > b.0 && fit.theta_hat[0] < b.1);
    assert!(fit.multipliers.converged);
}
