mod common;

use common::{ar_seasonal, mean_abs_error, punch_holes, rng};
use proptest::prelude::*;
use rand::Rng;
use tsclean::bench::seasonal_median;
use tsclean::missing::{
    default_lag_set, lag_set_with_order, model_missing_data, model_missing_values, ImputeOptions, LagSet,
};
use tsclean::{Error, SeriesFrame};

fn options(recursive: bool) -> ImputeOptions {
    ImputeOptions {
        recursive,
        ..ImputeOptions::default()
    }
}

#[test]
fn default_lags_skip_cross_seasonal_sums() {
    assert_eq!(lag_set_with_order(&[48, 336], 1).lags(), &[-337, -336, -49, -48, -2, -1, 1, 2, 48, 49, 336, 337]);
    let two = lag_set_with_order(&[3, 5], 2);
    assert!(!two.lags().contains(&8));
    assert!(two.lags().contains(&6) && two.lags().contains(&-12));
    assert_eq!(default_lag_set(&[24], 100).lags().len(), 2 * (2 + 2));
    assert_eq!(default_lag_set(&[24], 1000).lags().len(), 2 * (3 + 6));
    assert!(LagSet::new(vec![0, 1]).is_err());
}

#[test]
fn gap_of_twenty_in_ar_data() {
    let gap = 20;
    let (mut rec, mut non, mut base) = (0.0, 0.0, 0.0);
    for seed in 0..20u64 {
        let y = ar_seasonal(2400, 24, 0.8, 5.0, seed);
        let start = 1000 + (seed as usize * 5) % 24;
        let mut v = y.clone();
        let mut mask = vec![false; y.len()];
        for t in start..start + gap {
            v[t] = f64::NAN;
            mask[t] = true;
        }
        let truth = &y[start..start + gap];
        for (recursive, acc) in [(true, &mut rec), (false, &mut non)] {
            let (_, r) = model_missing_values("y", &v, &[24], &[], &[0.5], &options(recursive)).unwrap();
            *acc += mean_abs_error(r.at(0.5).unwrap(), truth) / 20.0;
        }
        let sm = seasonal_median(&v, &mask, 24);
        base += mean_abs_error(&sm[start..start + gap], truth) / 20.0;
    }
    assert!(rec < non, "recursive {rec} vs non-recursive {non}");
    assert!(non < base, "non-recursive {non} vs seasonal median {base}");
}

#[test]
fn provenance_tells_the_modes_apart() {
    let y = ar_seasonal(600, 24, 0.8, 5.0, 1);
    let mut v = y.clone();
    for t in 300..306 {
        v[t] = f64::NAN;
    }
    let (_, r) = model_missing_values("y", &v, &[24], &[], &[0.5], &options(true)).unwrap();
    assert!(r.provenance[0].imputed_lags.is_empty());
    assert!(r.provenance[1].imputed_lags.contains(&1));
    assert!(r.provenance[5].filled_lags.is_empty());
    let (_, r) = model_missing_values("y", &v, &[24], &[], &[0.5], &options(false)).unwrap();
    assert!(r.provenance.iter().all(|p| p.imputed_lags.is_empty()));
    assert!(r.provenance[1].filled_lags.contains(&1));
}

#[test]
fn quantiles_and_errors() {
    let y = punch_holes(&ar_seasonal(800, 24, 0.6, 5.0, 2), 0.1, 3);
    let taus = [0.975, 0.025, 0.5, 0.5];
    let (model, r) = model_missing_values("y", &y, &[24], &[], &taus, &ImputeOptions::default()).unwrap();
    assert_eq!(r.taus, vec![0.025, 0.5, 0.975]);
    assert_eq!(model.quantile_fits.len(), 3);
    assert_eq!(r.len(), y.iter().filter(|v| v.is_nan()).count());
    for i in 0..r.len() {
        assert!(r.quantiles[0][i] <= r.quantiles[1][i] && r.quantiles[1][i] <= r.quantiles[2][i]);
    }
    assert!(matches!(r.at(0.3), Err(Error::UnmodelledQuantile { .. })));
    assert!(model_missing_values("y", &y, &[24], &[], &[1.5], &ImputeOptions::default()).is_err());
    assert!(matches!(
        model_missing_values("y", &vec![f64::NAN; 100], &[24], &[], &[0.5], &ImputeOptions::default()),
        Err(Error::AllMissing { .. })
    ));
    let complete = ar_seasonal(300, 24, 0.5, 5.0, 4);
    let (_, r) = model_missing_values("y", &complete, &[24], &[], &[0.5], &ImputeOptions::default()).unwrap();
    assert!(r.is_empty());
}

#[test]
fn informative_external_is_selected_and_helps() {
    let mut r = rng(8);
    let n = 1500;
    let driver: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
    let noise_col: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
    let base = ar_seasonal(n, 24, 0.3, 3.0, 9);
    let y: Vec<f64> = base.iter().zip(&driver).map(|(b, d)| b + 2.0 * d).collect();
    let v = punch_holes(&y, 0.05, 10);
    let frame = SeriesFrame::from_columns(vec![("y", v.clone())], &[24]).unwrap();
    let ext = vec![driver, noise_col];
    let (model, with) = model_missing_data(&frame, 0, &[0.5], Some(&ext), &ImputeOptions::default()).unwrap();
    let selected: Vec<usize> = model.externals.iter().map(|e| e.column).collect();
    assert_eq!(selected, vec![0]);
    let (_, without) = model_missing_data(&frame, 0, &[0.5], None, &ImputeOptions::default()).unwrap();
    let truth: Vec<f64> = with.indices.iter().map(|&t| y[t]).collect();
    assert!(mean_abs_error(with.at(0.5).unwrap(), &truth) < 0.5 * mean_abs_error(without.at(0.5).unwrap(), &truth));
}

#[test]
fn user_lag_set_is_honoured() {
    let y = punch_holes(&ar_seasonal(600, 24, 0.7, 5.0, 5), 0.05, 6);
    let o = ImputeOptions {
        lag_set: Some(LagSet::new(vec![1, -1]).unwrap()),
        ..ImputeOptions::default()
    };
    let (model, _) = model_missing_values("y", &y, &[24], &[], &[0.5], &o).unwrap();
    assert_eq!(model.lag_set.lags(), &[-1, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn replacements_are_monotone_in_tau(seed in 0u64..500, share in 0.02f64..0.3) {
        let y = punch_holes(&ar_seasonal(500, 12, 0.7, 4.0, seed), share, seed + 1);
        let taus = [0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975];
        let (_, r) = model_missing_values("y", &y, &[12], &[], &taus, &ImputeOptions::default()).unwrap();
        for i in 0..r.len() {
            for k in 1..taus.len() {
                prop_assert!(r.quantiles[k - 1][i] <= r.quantiles[k][i]);
            }
            prop_assert!(r.mean[i].is_finite());
        }
    }
}
