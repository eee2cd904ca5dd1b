//! Monte Carlo checks of the bands, the order test and the order
//! estimators against their large-sample behaviour.

use std::time::Instant;

use arbands::ar_model::{simulate, ArModel};
use arbands::bands::{confidence_band, ellipsoid_contains, order_test, BnVariant, QuantileMode};
use arbands::estimation::{fit, levinson_durbin, sample_autocovariance};
use arbands::harness::{derive_seed, run_experiment, DnRule, ExperimentConfig};
use arbands::selection::{q_hat_5, select, z_from_threshold, CriterionSpec};

fn series(model: &ArModel, n: usize, stream: u64, rep: u64) -> arbands::TimeSeries {
    simulate(model, n, 1000, derive_seed(stream, 0, rep)).unwrap()
}

#[test]
fn band_covers_zero_model() {
    let white = ArModel::gaussian(vec![], 1.0).unwrap();
    let covered = (0..500)
        .filter(|rep| {
            let s = series(&white, 2000, 1, *rep);
            let (fits, inv) = fit(&s, 12).unwrap();
            confidence_band(
                &fits,
                &inv,
                2000,
                0.95,
                QuantileMode::IidExact,
                BnVariant::Berman,
            )
            .unwrap()
            .contains(&[0.0; 12])
        })
        .count();
    assert!(covered as f64 / 500.0 >= 0.90, "{covered}");
}

#[test]
fn ellipsoid_coverage() {
    let model = ArModel::gaussian(vec![0.5, -0.25], 1.0).unwrap();
    let covered = (0..500)
        .filter(|rep| {
            let s = series(&model, 2000, 2, *rep);
            let acv = sample_autocovariance(&s, 2).unwrap();
            let fits = levinson_durbin(&acv, 2).unwrap();
            let gamma = acv.toeplitz(2).unwrap();
            ellipsoid_contains(fits.get(2), &gamma, 2000, model.coeffs(), 0.95).unwrap()
        })
        .count();
    let c = covered as f64 / 500.0;
    assert!((0.91..=0.98).contains(&c), "{c}");
}

#[test]
fn order_test_size_and_power() {
    let null = ArModel::gaussian(vec![0.5, -0.25], 1.0).unwrap();
    let alt = ArModel::gaussian(vec![0.5, -0.5], 1.0).unwrap();
    let mut size = 0;
    let mut power = 0;
    for rep in 0..500 {
        let s = series(&null, 4000, 3, rep);
        size += usize::from(
            order_test(&s, 2, 1, 20, 0.05, BnVariant::Berman)
                .unwrap()
                .reject,
        );
        let s = series(&alt, 4000, 4, rep);
        power += usize::from(
            order_test(&s, 1, 1, 20, 0.05, BnVariant::Berman)
                .unwrap()
                .reject,
        );
    }
    assert!(size as f64 / 500.0 <= 0.12, "size {size}");
    assert!(power as f64 / 500.0 >= 0.95, "power {power}");
}

#[test]
fn q5_is_quiet_under_white_noise() {
    let white = ArModel::gaussian(vec![], 1.0).unwrap();
    let z = z_from_threshold(3.0, 12).unwrap();
    let zeros = (0..200)
        .filter(|rep| {
            q_hat_5(&series(&white, 4000, 5, *rep), 12, z, BnVariant::Berman)
                .unwrap()
                .chosen
                == 0
        })
        .count();
    assert!(zeros as f64 / 200.0 >= 0.9, "{zeros}");
}

fn sparse12() -> ArModel {
    let mut c = vec![0.0; 12];
    c[0] = 0.1;
    c[2] = -0.4;
    c[11] = 0.2;
    ArModel::gaussian(c, 1.0).unwrap()
}

#[test]
fn q5_finds_sparse_order_twelve() {
    let model = sparse12();
    let z = z_from_threshold(3.2, 28).unwrap();
    let hits = (0..200)
        .filter(|rep| {
            q_hat_5(&series(&model, 1000, 6, *rep), 28, z, BnVariant::Berman)
                .unwrap()
                .chosen
                == 12
        })
        .count();
    assert!(hits as f64 / 200.0 >= 0.85, "{hits}");
}

#[test]
fn bic_recovers_reference_model_at_n_1000() {
    let model = arbands::harness::reference_model();
    let hits = (0..200)
        .filter(|rep| {
            let s = series(&model, 1000, 7, *rep);
            let fits = levinson_durbin(&sample_autocovariance(&s, 14).unwrap(), 14).unwrap();
            select(&fits, CriterionSpec::BicSic, 1000).unwrap().chosen == 6
        })
        .count();
    assert!(hits as f64 / 200.0 >= 0.95, "{hits}");
}

#[test]
fn modified_bic_closes_sparse_gap() {
    let config = ExperimentConfig {
        model: sparse12(),
        n_list: vec![500],
        d_n_rule: DnRule::Fixed { d: 25 },
        repetitions: 200,
        master_seed: 500,
        estimators: vec!["BIC".into(), "BIC*".into()],
        ..Default::default()
    };
    let r = run_experiment(&config).unwrap();
    let gap = r.frequency(500, "BIC*", "12").unwrap() - r.frequency(500, "BIC", "12").unwrap();
    assert!(gap > 0.5, "{gap}");
}

#[test]
fn table1_cell_throughput_and_bic_frequency() {
    let config = ExperimentConfig {
        n_list: vec![250],
        repetitions: 200,
        master_seed: 250,
        ..Default::default()
    };
    let start = Instant::now();
    let r = run_experiment(&config).unwrap();
    assert!(start.elapsed().as_secs_f64() < 30.0);
    assert_eq!(r.blocks[0].d_n, 12);
    let bic = r.frequency(250, "BIC", "6").unwrap();
    assert!((bic - 0.287).abs() <= 0.10, "{bic}");
}
