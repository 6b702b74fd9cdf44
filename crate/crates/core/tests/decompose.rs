mod common;

use common::{ar_seasonal, punch_holes};
use proptest::prelude::*;
use tsclean::decompose::{decompose_values, robust_decompose, DecomposeOptions, Decomposition};
use tsclean::solvers::LambdaRule;
use tsclean::synthetic::SyntheticSpec;
use tsclean::SeriesFrame;

/// Largest reconstruction error on observed cells, relative to the largest
/// observed magnitude.
fn reconstruction_error(y: &[f64], d: &Decomposition) -> f64 {
    let scale = y.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for t in 0..y.len() {
        if y[t].is_finite() {
            let sum = d.trend[t] + d.seasonal.iter().map(|s| s[t]).sum::<f64>() + d.external[t] + d.remainder[t];
            worst = worst.max((sum - y[t]).abs() / scale);
        } else {
            assert!(d.remainder[t].is_nan());
        }
    }
    worst
}

fn fixtures() -> Vec<(String, Vec<f64>, Vec<usize>, Vec<Vec<f64>>)> {
    let mut out = Vec::new();
    let mut spec = SyntheticSpec::half_hourly_year();
    spec.n = 6 * 336;
    let y = spec.generate(3);
    out.push(("two seasons".into(), y.clone(), vec![48, 336], vec![]));
    out.push(("two seasons, 30% missing".into(), punch_holes(&y, 0.3, 4), vec![48, 336], vec![]));
    let ext: Vec<f64> = (0..y.len()).map(|t| ((t * 7) % 13) as f64).collect();
    let with_ext: Vec<f64> = y.iter().zip(&ext).map(|(a, b)| a + 2.0 * b).collect();
    out.push(("external".into(), with_ext.clone(), vec![48, 336], vec![ext.clone()]));
    out.push(("external, 30% missing".into(), punch_holes(&with_ext, 0.3, 5), vec![48, 336], vec![ext]));
    let ar = ar_seasonal(1000, 24, 0.7, 5.0, 9);
    out.push(("daily".into(), ar.clone(), vec![24], vec![]));
    out.push(("daily, 30% missing".into(), punch_holes(&ar, 0.3, 10), vec![24], vec![]));
    out.push(("no season, 30% missing".into(), punch_holes(&ar, 0.3, 11), vec![], vec![]));
    out
}

#[test]
fn components_reconstruct_every_fixture() {
    for (name, y, periods, ext) in fixtures() {
        for interactions in [false, true] {
            let options = DecomposeOptions {
                interactions,
                ..DecomposeOptions::default()
            };
            let d = decompose_values(&y, &periods, &ext, &options).unwrap();
            let err = reconstruction_error(&y, &d);
            assert!(err <= 1e-9, "{name}: {err}");
        }
    }
}

#[test]
fn seasonal_tables_are_centred() {
    let ar = ar_seasonal(1200, 24, 0.5, 8.0, 2);
    let d = decompose_values(&ar, &[24], &[], &DecomposeOptions::default()).unwrap();
    let table = &d.phase_tables[0];
    assert_eq!(table.len(), 24);
    assert!(table.iter().sum::<f64>().abs() < 1e-9);
    // The recovered profile follows the sine.
    let peak = (0..24).max_by(|&a, &b| table[a].total_cmp(&table[b])).unwrap();
    assert!((5..=7).contains(&peak), "peak at {peak}");
}

#[test]
fn external_signal_is_attributed() {
    let ar = ar_seasonal(2000, 24, 0.3, 4.0, 6);
    let ext: Vec<f64> = (0..2000).map(|t| ((t * 7919) % 13) as f64 - 6.0).collect();
    let y: Vec<f64> = ar.iter().zip(&ext).map(|(a, b)| a + 5.0 * b).collect();
    let d = decompose_values(&y, &[24], &[ext.clone()], &DecomposeOptions::default()).unwrap();
    assert!((d.external_coefficients[0] - 5.0).abs() < 0.5, "{:?}", d.external_coefficients);
    let fixed = DecomposeOptions {
        lambda_rule: LambdaRule::Fixed(1e9),
        ..DecomposeOptions::default()
    };
    let d = decompose_values(&y, &[24], &[ext], &fixed).unwrap();
    assert_eq!(d.external_coefficients[0], 0.0);
}

#[test]
fn frame_entry_point_checks_the_column() {
    let ar = ar_seasonal(200, 24, 0.3, 4.0, 6);
    let frame = SeriesFrame::from_columns(vec![("x", ar.clone()), ("empty", vec![f64::NAN; 200])], &[24]).unwrap();
    let d = robust_decompose(&frame, 0, None, &DecomposeOptions::default()).unwrap();
    assert_eq!(d, decompose_values(&ar, &[24], &[], &DecomposeOptions::default()).unwrap());
    assert!(robust_decompose(&frame, 1, None, &DecomposeOptions::default()).is_err());
    assert!(robust_decompose(&frame, 2, None, &DecomposeOptions::default()).is_err());
    assert!(decompose_values(&ar[..30], &[24], &[], &DecomposeOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reconstruction_holds_for_arbitrary_series(
        values in prop::collection::vec(prop_oneof![9 => -1e3f64..1e3, 1 => Just(f64::NAN)], 40..200),
        period in 2usize..10,
    ) {
        prop_assume!(values.iter().any(|v| v.is_finite()));
        let d = decompose_values(&values, &[period], &[], &DecomposeOptions::default()).unwrap();
        prop_assert!(reconstruction_error(&values, &d) <= 1e-9);
    }

    #[test]
    fn adding_a_constant_moves_only_the_trend(
        seed in 0u64..1000,
        shift in -100.0f64..100.0,
    ) {
        let y = ar_seasonal(300, 12, 0.5, 3.0, seed);
        let moved: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let a = decompose_values(&y, &[12], &[], &DecomposeOptions::default()).unwrap();
        let b = decompose_values(&moved, &[12], &[], &DecomposeOptions::default()).unwrap();
        for t in 0..300 {
            prop_assert!((b.trend[t] - a.trend[t] - shift).abs() < 1e-8);
            prop_assert!((b.remainder[t] - a.remainder[t]).abs() < 1e-8);
        }
    }
}
