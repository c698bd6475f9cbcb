//! Model assessment: error metrics, frequency-histogram comparison against
//! a simulated cohort, and calibration/holdout backtesting.

use crate::bgnbd::{conditional_expected_transactions, BgnbdCoefs};
use crate::ingest::{CalibrationHoldoutRow, RfmRow};
use crate::numerics::{NumericsError, Result, SeededRng};
use crate::simulate::draw_purchase_times;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Groups smaller than this are marked as weak evidence.
pub const LOW_SUPPORT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub mae: f64,
    /// Mean squared error of ln(1 + value), which damps the heavy tail.
    pub msle: f64,
}

pub fn regression_metrics(actual: &[f64], predicted: &[f64]) -> Result<RegressionMetrics> {
    if actual.len() != predicted.len() {
        return Err(NumericsError::Input(format!(
            "length mismatch: {} actual vs {} predicted",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(NumericsError::Input("metrics over no observations".into()));
    }
    let n = actual.len() as f64;
    let (mut se, mut ae, mut sle) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &p) in actual.iter().zip(predicted) {
        if !a.is_finite() || !p.is_finite() {
            return Err(NumericsError::Input(format!(
                "metrics need finite values, got actual {a}, predicted {p}"
            )));
        }
        if a <= -1.0 || p <= -1.0 {
            return Err(NumericsError::Domain(format!(
                "log metrics need values above -1, got actual {a}, predicted {p}"
            )));
        }
        let d = a - p;
        se += d * d;
        ae += d.abs();
        let ld = a.ln_1p() - p.ln_1p();
        sle += ld * ld;
    }
    Ok(RegressionMetrics { mse: se / n, mae: ae / n, msle: sle / n })
}

/// Observed vs model-implied repeat-frequency histogram.
///
/// The model side replays each customer's observation age `multiplier`
/// times through the generative process and rescales, so expected counts
/// are estimated at `multiplier` times the data's resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyComparison {
    /// "0", "1", ..., "{max_bin}+".
    pub bins: Vec<String>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub multiplier: usize,
    pub seed: u64,
}

pub fn repeat_frequency_comparison(
    rfm: &[RfmRow],
    coefs: &BgnbdCoefs,
    seed: u64,
    multiplier: usize,
    max_bin: u64,
) -> Result<FrequencyComparison> {
    coefs.validate()?;
    if rfm.is_empty() {
        return Err(NumericsError::Input("no customers to compare".into()));
    }
    if multiplier == 0 {
        return Err(NumericsError::Input("multiplier must be at least 1".into()));
    }
    if max_bin == 0 {
        return Err(NumericsError::Input("need at least bins '0' and '1+'".into()));
    }
    if let Some(bad) = rfm.iter().find(|r| !(r.age > 0.0) || !r.age.is_finite()) {
        return Err(NumericsError::Input(format!(
            "customer '{}' has age {}, but simulation needs a positive age",
            bad.user_id, bad.age
        )));
    }

    let nbins = max_bin as usize + 1;
    let clip = |x: u64| -> usize { (x.min(max_bin)) as usize };
    let mut actual = vec![0.0f64; nbins];
    for row in rfm {
        actual[clip(row.frequency)] += 1.0;
    }
    let mut simulated = vec![0u64; nbins];
    for (i, row) in rfm.iter().enumerate() {
        for m in 0..multiplier {
            let mut rng = SeededRng::substream(seed, (i * multiplier + m) as u64);
            let lambda = rng.gamma(coefs.r, coefs.alpha);
            let p_dropout = rng.beta(coefs.a, coefs.b);
            let times = draw_purchase_times(&mut rng, lambda, p_dropout, row.age)?;
            simulated[clip((times.len() - 1) as u64)] += 1;
        }
    }
    let predicted: Vec<f64> = simulated
        .iter()
        .map(|&c| c as f64 / multiplier as f64)
        .collect();
    let mut bins: Vec<String> = (0..max_bin).map(|b| b.to_string()).collect();
    bins.push(format!("{max_bin}+"));
    Ok(FrequencyComparison { bins, actual, predicted, multiplier, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutGroup {
    /// Calibration-period frequency shared by the group.
    pub frequency: u64,
    pub n: usize,
    pub mean_actual: f64,
    pub mean_predicted: f64,
    /// Too few customers to read much into the comparison.
    pub low_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutEvaluation {
    pub holdout_duration: f64,
    pub groups: Vec<HoldoutGroup>,
    /// Per-customer metrics over the whole table, not per group.
    pub metrics: RegressionMetrics,
}

/// Backtest: predict each customer's holdout repeats from calibration
/// history alone, then compare per calibration-frequency group.
pub fn calibration_holdout_eval(
    coefs: &BgnbdCoefs,
    rows: &[CalibrationHoldoutRow],
) -> Result<HoldoutEvaluation> {
    coefs.validate()?;
    if rows.is_empty() {
        return Err(NumericsError::Input("no customers to evaluate".into()));
    }
    let duration = rows[0].holdout_duration;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(NumericsError::Input(format!(
            "holdout duration must be positive and finite, got {duration}"
        )));
    }
    if let Some(bad) = rows.iter().find(|r| r.holdout_duration != duration) {
        return Err(NumericsError::Input(format!(
            "inconsistent holdout durations: {} vs {} (user '{}')",
            duration, bad.holdout_duration, bad.user_id
        )));
    }

    let mut actual = Vec::with_capacity(rows.len());
    let mut predicted = Vec::with_capacity(rows.len());
    let mut grouped: BTreeMap<u64, (usize, f64, f64)> = BTreeMap::new();
    for row in rows {
        let pred = conditional_expected_transactions(
            coefs,
            row.frequency_cal,
            row.recency_cal,
            row.age_cal,
            duration,
        )?;
        let act = row.frequency_holdout as f64;
        actual.push(act);
        predicted.push(pred);
        let entry = grouped.entry(row.frequency_cal).or_insert((0, 0.0, 0.0));
        entry.0 += 1;
        entry.1 += act;
        entry.2 += pred;
    }
    let groups = grouped
        .into_iter()
        .map(|(frequency, (n, sum_act, sum_pred))| HoldoutGroup {
            frequency,
            n,
            mean_actual: sum_act / n as f64,
            mean_predicted: sum_pred / n as f64,
            low_support: n < LOW_SUPPORT,
        })
        .collect();
    Ok(HoldoutEvaluation {
        holdout_duration: duration,
        groups,
        metrics: regression_metrics(&actual, &predicted)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_hand_values() {
        let m = regression_metrics(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m.mse, 1.0);
        assert_eq!(m.mae, 1.0);
        // (ln 1 - ln 2)^2 / 2 + (ln 3 - ln 2)^2 / 2
        assert!((m.msle - 0.3224274839056834).abs() < 1e-12, "{}", m.msle);
    }

    #[test]
    fn perfect_predictions_give_exactly_zero() {
        let v = [0.0, 1.5, 7.0, 0.25];
        let m = regression_metrics(&v, &v).unwrap();
        assert_eq!((m.mse, m.mae, m.msle), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metrics_reject_bad_shapes_and_values() {
        assert!(regression_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(regression_metrics(&[], &[]).is_err());
        assert!(regression_metrics(&[-1.5], &[0.0]).is_err());
        assert!(regression_metrics(&[f64::NAN], &[0.0]).is_err());
    }

    fn rfm(x: u64, age: f64) -> RfmRow {
        RfmRow {
            user_id: format!("u{x}"),
            frequency: x,
            recency: if x == 0 { 0.0 } else { age / 2.0 },
            age,
            monetary: 0.0,
        }
    }

    #[test]
    fn frequency_comparison_buckets_and_rescales() {
        let coefs = BgnbdCoefs { r: 0.8, alpha: 2.0, a: 0.7, b: 2.5 };
        let rows: Vec<RfmRow> = (0..200).map(|i| rfm((i % 7) as u64, 30.0)).collect();
        let cmp = repeat_frequency_comparison(&rows, &coefs, 11, 4, 4).unwrap();
        assert_eq!(cmp.bins, ["0", "1", "2", "3", "4+"]);
        // 200 customers cycling frequencies 0..6: residues 0..3 appear 29
        // times, 4..6 appear 28, and the 4+ bin absorbs the last three
        assert_eq!(cmp.actual, [29.0, 29.0, 29.0, 29.0, 84.0]);
        let total_pred: f64 = cmp.predicted.iter().sum();
        assert_eq!(total_pred, 200.0);
        let again = repeat_frequency_comparison(&rows, &coefs, 11, 4, 4).unwrap();
        assert_eq!(cmp, again);
        let other_seed = repeat_frequency_comparison(&rows, &coefs, 12, 4, 4).unwrap();
        assert_ne!(cmp.predicted, other_seed.predicted);
    }

    fn holdout_row(user: &str, x: u64, actual: u64) -> CalibrationHoldoutRow {
        CalibrationHoldoutRow {
            user_id: user.into(),
            frequency_cal: x,
            recency_cal: if x == 0 { 0.0 } else { 20.0 },
            age_cal: 39.0,
            monetary_cal: 0.0,
            frequency_holdout: actual,
            holdout_duration: 14.0,
        }
    }

    #[test]
    fn holdout_groups_average_actual_and_predicted() {
        let coefs = BgnbdCoefs { r: 0.25, alpha: 4.5, a: 0.8, b: 2.4 };
        let rows = vec![
            holdout_row("a", 0, 0),
            holdout_row("b", 0, 2),
            holdout_row("c", 3, 1),
            holdout_row("d", 3, 3),
        ];
        let eval = calibration_holdout_eval(&coefs, &rows).unwrap();
        assert_eq!(eval.holdout_duration, 14.0);
        assert_eq!(eval.groups.len(), 2);
        let g0 = &eval.groups[0];
        assert_eq!((g0.frequency, g0.n), (0, 2));
        assert_eq!(g0.mean_actual, 1.0);
        assert!(g0.low_support);
        let g3 = &eval.groups[1];
        assert_eq!((g3.frequency, g3.n), (3, 2));
        assert_eq!(g3.mean_actual, 2.0);
        // group means of identical inputs equal the per-row prediction
        let per_row =
            conditional_expected_transactions(&coefs, 3, 20.0, 39.0, 14.0).unwrap();
        assert!((g3.mean_predicted - per_row).abs() < 1e-12);
        assert!(eval.metrics.mse > 0.0);
    }

    #[test]
    fn holdout_rejects_mixed_durations() {
        let coefs = BgnbdCoefs { r: 0.25, alpha: 4.5, a: 0.8, b: 2.4 };
        let mut rows = vec![holdout_row("a", 1, 0), holdout_row("b", 2, 1)];
        rows[1].holdout_duration = 21.0;
        assert!(calibration_holdout_eval(&coefs, &rows).is_err());
        assert!(calibration_holdout_eval(&coefs, &[]).is_err());
    }
}
