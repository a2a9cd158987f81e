use serde::{Deserialize, Serialize};

use super::distributions::DelayModel;
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedIncidence {
    pub values: Vec<f64>,
    /// Days whose test count was below the floor.
    pub floored: Vec<bool>,
    pub median_tests: f64,
}

/// Default test floor: 1st percentile of the non-zero test counts, at least 1.
pub fn default_test_floor(tests: &[u64]) -> f64 {
    let mut nonzero: Vec<f64> = tests
        .iter()
        .filter(|t| **t > 0)
        .map(|t| *t as f64)
        .collect();
    if nonzero.is_empty() {
        return 1.0;
    }
    nonzero.sort_by(f64::total_cmp);
    quantile_sorted(&nonzero, 0.01).max(1.0)
}

/// Rescales daily positivity to the province's median testing volume:
/// `cases_t / max(tests_t, floor) * median(max(tests, floor))`.
pub fn adjust_for_testing(
    cases: &[f64],
    tests: &[u64],
    test_floor: f64,
) -> Result<AdjustedIncidence> {
    if cases.len() != tests.len() {
        return Err(Error::InvalidParameter(format!(
            "cases ({}) and tests ({}) differ in length",
            cases.len(),
            tests.len()
        )));
    }
    if !(test_floor >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test floor {test_floor} below 1"
        )));
    }
    if tests.iter().all(|t| *t == 0) {
        return Err(Error::InsufficientData(
            "test series is entirely zero".into(),
        ));
    }
    let effective: Vec<f64> = tests.iter().map(|t| (*t as f64).max(test_floor)).collect();
    let mut sorted = effective.clone();
    sorted.sort_by(f64::total_cmp);
    let median_tests = quantile_sorted(&sorted, 0.5);
    let values = cases
        .iter()
        .zip(&effective)
        .map(|(c, t)| c * (median_tests / t))
        .collect();
    let floored = tests.iter().map(|t| (*t as f64) < test_floor).collect();
    Ok(AdjustedIncidence {
        values,
        floored,
        median_tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectionSeries {
    pub values: Vec<f64>,
    /// Trailing days whose delay mass extends past the series end.
    pub provisional: Vec<bool>,
}

/// Back-dates reports to infection days: `i_t = sum_d report_{t+d} * delay(d)`.
/// The last `max_delay` days only see part of the delay mass and are marked
/// provisional.
pub fn shift_to_infection_dates(reports: &[f64], delay: &DelayModel) -> Result<InfectionSeries> {
    let max_delay = delay.max_delay();
    if reports.len() <= max_delay {
        return Err(Error::InsufficientData(format!(
            "series of {} days shorter than delay support {}",
            reports.len(),
            max_delay + 1
        )));
    }
    let n = reports.len();
    let values = (0..n)
        .map(|t| {
            delay.combined[..=max_delay]
                .iter()
                .enumerate()
                .filter(|(d, _)| t + d < n)
                .map(|(d, w)| reports[t + d] * w)
                .sum()
        })
        .collect();
    let provisional = (0..n).map(|t| t + max_delay >= n).collect();
    Ok(InfectionSeries {
        values,
        provisional,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_tests_leave_cases_unchanged() {
        let cases = [3.0, 7.0, 0.0, 12.0];
        let adj = adjust_for_testing(&cases, &[50; 4], 1.0).unwrap();
        assert_eq!(adj.values, cases.to_vec());
        assert!(adj.floored.iter().all(|f| !f));
    }

    #[test]
    fn halved_tests_double_adjusted() {
        let cases = [10.0; 5];
        let adj = adjust_for_testing(&cases, &[100, 100, 50, 100, 100], 1.0).unwrap();
        assert_eq!(adj.values[2], 2.0 * adj.values[0]);
        assert_eq!(adj.values[0], 10.0);
    }

    #[test]
    fn zero_tests_use_floor() {
        let cases = [5.0, 5.0, 5.0];
        let adj = adjust_for_testing(&cases, &[100, 0, 100], 10.0).unwrap();
        assert_eq!(adj.median_tests, 100.0);
        assert_eq!(adj.values[1], 50.0);
        assert!(adj.floored[1]);
    }

    #[test]
    fn all_zero_tests_is_error() {
        assert!(adjust_for_testing(&[1.0, 2.0], &[0, 0], 1.0).is_err());
    }

    #[test]
    fn default_floor_is_low_percentile() {
        let tests: Vec<u64> = (0..=200).collect();
        let floor = default_test_floor(&tests);
        assert!((floor - 2.99).abs() < 1e-9, "{floor}");
        assert_eq!(default_test_floor(&[0, 0, 1]), 1.0);
    }

    #[test]
    fn point_mass_is_pure_shift() {
        let mut reports = vec![0.0; 30];
        reports[20] = 100.0;
        let out = shift_to_infection_dates(&reports, &DelayModel::point_mass(7)).unwrap();
        assert_eq!(out.values[13], 100.0);
        assert_eq!(out.values.iter().sum::<f64>(), 100.0);
    }

    #[test]
    fn uniform_delay_preserves_constants() {
        let delay = DelayModel::new(5, vec![1.0, 1.0, 1.0]).unwrap();
        let out = shift_to_infection_dates(&[4.0; 40], &delay).unwrap();
        for (v, p) in out.values.iter().zip(&out.provisional) {
            if !p {
                assert!((v - 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn provisional_tail_matches_support() {
        let delay = DelayModel::new(5, vec![1.0, 1.0, 1.0]).unwrap();
        let out = shift_to_infection_dates(&[1.0; 20], &delay).unwrap();
        let flagged: Vec<usize> = (0..20).filter(|t| out.provisional[*t]).collect();
        assert_eq!(flagged, (13..20).collect::<Vec<_>>());
    }

    #[test]
    fn short_series_is_error() {
        assert!(shift_to_infection_dates(&[1.0; 7], &DelayModel::point_mass(7)).is_err());
    }

    proptest! {
        #[test]
        fn adjustment_is_homogeneous(
            cases in prop::collection::vec(0.0f64..500.0, 10),
            tests in prop::collection::vec(0u64..1000, 10),
            k in 0.1f64..10.0,
        ) {
            prop_assume!(tests.iter().any(|t| *t > 0));
            let base = adjust_for_testing(&cases, &tests, 1.0).unwrap();
            let scaled: Vec<f64> = cases.iter().map(|c| c * k).collect();
            let out = adjust_for_testing(&scaled, &tests, 1.0).unwrap();
            for (a, b) in base.values.iter().zip(&out.values) {
                prop_assert!((a * k - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }

        #[test]
        fn shift_preserves_interior_mass(
            interior in prop::collection::vec(0.0f64..100.0, 5..30),
            onset in prop::collection::vec(0.0f64..1.0, 1..6),
        ) {
            prop_assume!(onset.iter().sum::<f64>() > 1e-3);
            let delay = DelayModel::new(3, onset).unwrap();
            let pad = delay.max_delay();
            // Reports only away from both ends: nothing leaks past the
            // window start and nothing lands in the provisional tail.
            let mut reports = vec![0.0; pad];
            reports.extend(&interior);
            reports.extend(vec![0.0; pad]);
            let out = shift_to_infection_dates(&reports, &delay).unwrap();
            let kept: f64 = out
                .values
                .iter()
                .zip(&out.provisional)
                .filter(|(_, p)| !**p)
                .map(|(v, _)| v)
                .sum();
            let total: f64 = interior.iter().sum();
            prop_assert!((kept - total).abs() < 1e-9 * total.max(1.0));
        }
    }
}
