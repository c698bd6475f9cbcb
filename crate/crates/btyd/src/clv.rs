//! Customer-level predictions: survival, future purchases, spend and value.
//!
//! Lifetime value over a horizon is expected future purchases times the
//! expected value per purchase. With a nonzero discount rate the horizon is
//! cut into unit subintervals and each increment of expected purchases is
//! discounted at its midpoint; with a zero rate the product is taken
//! directly, so both factors remain recoverable from the output.

use crate::bgnbd::{conditional_expected_transactions, probability_alive, BgnbdCoefs};
use crate::gammagamma::{conditional_mean_transaction_value, GgCoefs};
use crate::ingest::RfmRow;
use crate::numerics::{NumericsError, Result};
use serde::{Deserialize, Serialize};

/// Where the per-transaction value estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpendSource {
    /// Posterior mean given the customer's own repeat spend.
    PosteriorMean,
    /// Population mean, for customers with no usable spend history (q > 1).
    PriorMean,
    /// Sample mean of repeat spend across the cohort, the last resort.
    SampleMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerPrediction {
    pub user_id: String,
    pub p_alive: f64,
    /// Expected repeat purchases over the horizon, undiscounted.
    pub expected_transactions: f64,
    pub expected_value_per_transaction: f64,
    pub expected_clv: f64,
    pub horizon: f64,
    pub discount_rate: f64,
    pub spend_source: SpendSource,
}

fn expected_value_per_transaction(
    gg: &GgCoefs,
    row: &RfmRow,
    repeat_mean_spend: Option<f64>,
) -> Result<(f64, SpendSource)> {
    if row.frequency >= 1 && row.monetary > 0.0 && row.monetary.is_finite() {
        let v = conditional_mean_transaction_value(gg, row.frequency, row.monetary)?;
        return Ok((v, SpendSource::PosteriorMean));
    }
    if let Ok(prior) = gg.prior_mean_value() {
        return Ok((prior, SpendSource::PriorMean));
    }
    match repeat_mean_spend {
        Some(m) if m > 0.0 && m.is_finite() => Ok((m, SpendSource::SampleMean)),
        _ => Err(NumericsError::Domain(format!(
            "no usable spend estimate: customer '{}' has no spend history, q = {} \
             leaves the population mean undefined, and no sample mean was supplied",
            row.user_id, gg.q
        ))),
    }
}

pub fn predict_customer(
    bgnbd: &BgnbdCoefs,
    gg: &GgCoefs,
    row: &RfmRow,
    horizon: f64,
    discount_rate: f64,
    repeat_mean_spend: Option<f64>,
) -> Result<CustomerPrediction> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(NumericsError::Input(format!(
            "prediction horizon must be positive and finite, got {horizon}"
        )));
    }
    if !(discount_rate >= 0.0) || !discount_rate.is_finite() {
        return Err(NumericsError::Input(format!(
            "discount rate must be nonnegative and finite, got {discount_rate}"
        )));
    }
    let p_alive = probability_alive(bgnbd, row.frequency, row.recency, row.age)?;
    let expected_transactions =
        conditional_expected_transactions(bgnbd, row.frequency, row.recency, row.age, horizon)?;
    let (value, spend_source) = expected_value_per_transaction(gg, row, repeat_mean_spend)?;

    let expected_clv = if discount_rate == 0.0 {
        expected_transactions * value
    } else {
        // Unit subintervals, the last one possibly partial.
        let mut clv = 0.0;
        let mut prev_edge = 0.0f64;
        let mut prev_e = 0.0f64;
        while prev_edge < horizon {
            let edge = (prev_edge + 1.0).min(horizon);
            let e = conditional_expected_transactions(
                bgnbd,
                row.frequency,
                row.recency,
                row.age,
                edge,
            )?;
            let mid = 0.5 * (prev_edge + edge);
            clv += (e - prev_e) * value * (-discount_rate * mid).exp();
            prev_edge = edge;
            prev_e = e;
        }
        clv
    };

    Ok(CustomerPrediction {
        user_id: row.user_id.clone(),
        p_alive,
        expected_transactions,
        expected_value_per_transaction: value,
        expected_clv,
        horizon,
        discount_rate,
        spend_source,
    })
}

/// Batch prediction; derives the cohort's repeat-spend sample mean once and
/// reuses it as the last-resort value estimate.
pub fn predict_customers(
    bgnbd: &BgnbdCoefs,
    gg: &GgCoefs,
    rows: &[RfmRow],
    horizon: f64,
    discount_rate: f64,
) -> Result<Vec<CustomerPrediction>> {
    let with_spend: Vec<f64> = rows
        .iter()
        .filter(|r| r.frequency >= 1 && r.monetary > 0.0 && r.monetary.is_finite())
        .map(|r| r.monetary)
        .collect();
    let sample_mean = if with_spend.is_empty() {
        None
    } else {
        Some(with_spend.iter().sum::<f64>() / with_spend.len() as f64)
    };
    rows.iter()
        .map(|row| predict_customer(bgnbd, gg, row, horizon, discount_rate, sample_mean))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub time: f64,
    pub p_alive: f64,
    pub is_purchase: bool,
}

/// Survival probability through time for one purchase history.
///
/// `purchase_times` are strictly increasing instants (the first is the
/// acquisition). The curve is sampled on a regular grid from the first
/// purchase to `as_of`, merged with the purchase instants themselves; at a
/// purchase the value reflects the history including that purchase, which
/// is where the curve jumps.
pub fn churn_timeline(
    purchase_times: &[f64],
    coefs: &BgnbdCoefs,
    grid_step: f64,
    as_of: f64,
) -> Result<Vec<TimelinePoint>> {
    if purchase_times.is_empty() {
        return Err(NumericsError::Input(
            "a churn timeline needs at least one purchase".into(),
        ));
    }
    if purchase_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NumericsError::Input(
            "purchase times must be strictly increasing".into(),
        ));
    }
    if !purchase_times.iter().all(|t| t.is_finite()) {
        return Err(NumericsError::Input("purchase times must be finite".into()));
    }
    let first = purchase_times[0];
    let last = *purchase_times.last().expect("nonempty");
    if !(as_of >= last) || !as_of.is_finite() {
        return Err(NumericsError::Input(format!(
            "as-of time {as_of} must not precede the last purchase {last}"
        )));
    }
    if !(grid_step > 0.0) || !grid_step.is_finite() {
        return Err(NumericsError::Input(format!(
            "grid step must be positive and finite, got {grid_step}"
        )));
    }

    let mut instants: Vec<f64> = Vec::new();
    let mut t = first;
    while t < as_of {
        instants.push(t);
        t += grid_step;
    }
    instants.push(as_of);
    instants.extend_from_slice(purchase_times);
    instants.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    instants.dedup();

    let mut points = Vec::with_capacity(instants.len());
    for &t in &instants {
        let count = purchase_times.partition_point(|&pt| pt <= t);
        let x = (count - 1) as u64;
        let t_x = purchase_times[count - 1] - first;
        let age = t - first;
        let p_alive = probability_alive(coefs, x, t_x, age)?;
        points.push(TimelinePoint {
            time: t,
            p_alive,
            is_purchase: purchase_times.binary_search_by(|pt| pt.partial_cmp(&t).expect("finite")).is_ok(),
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bg() -> BgnbdCoefs {
        BgnbdCoefs { r: 0.982856, alpha: 2.902135, a: 0.437431, b: 0.017428 }
    }

    fn gg() -> GgCoefs {
        GgCoefs { p: 6.0, q: 4.0, gamma: 15.0 }
    }

    fn row(x: u64, t_x: f64, age: f64, monetary: f64) -> RfmRow {
        RfmRow { user_id: "u1".into(), frequency: x, recency: t_x, age, monetary }
    }

    #[test]
    fn zero_discount_is_the_exact_product() {
        let r = row(4, 30.0, 39.0, 25.0);
        let pred = predict_customer(&bg(), &gg(), &r, 26.0, 0.0, None).unwrap();
        assert_eq!(
            pred.expected_clv,
            pred.expected_transactions * pred.expected_value_per_transaction
        );
        assert_eq!(pred.spend_source, SpendSource::PosteriorMean);
        assert!(pred.p_alive > 0.0 && pred.p_alive < 1.0);
    }

    #[test]
    fn discounting_can_only_shrink_value() {
        let r = row(4, 30.0, 39.0, 25.0);
        let flat = predict_customer(&bg(), &gg(), &r, 26.0, 0.0, None).unwrap();
        let cut = predict_customer(&bg(), &gg(), &r, 26.0, 0.05, None).unwrap();
        assert!(cut.expected_clv < flat.expected_clv);
        assert!(cut.expected_clv > 0.0);
        // the undiscounted purchase count is unchanged
        assert_eq!(cut.expected_transactions, flat.expected_transactions);
    }

    #[test]
    fn spend_fallbacks_follow_the_chain() {
        // No spend history, q > 1: population mean gamma*p/(q-1) = 30.
        let fresh = row(0, 0.0, 39.0, 0.0);
        let pred = predict_customer(&bg(), &gg(), &fresh, 26.0, 0.0, Some(42.0)).unwrap();
        assert_eq!(pred.spend_source, SpendSource::PriorMean);
        assert!((pred.expected_value_per_transaction - 30.0).abs() < 1e-12);

        // q below 1 pushes fresh customers to the cohort sample mean.
        let heavy_tail = GgCoefs { p: 4.495408, q: 0.038024, gamma: 4.360291 };
        let pred = predict_customer(&bg(), &heavy_tail, &fresh, 26.0, 0.0, Some(42.0)).unwrap();
        assert_eq!(pred.spend_source, SpendSource::SampleMean);
        assert_eq!(pred.expected_value_per_transaction, 42.0);

        // ...and without a sample mean there is nothing left to use.
        assert!(predict_customer(&bg(), &heavy_tail, &fresh, 26.0, 0.0, None).is_err());

        // A customer with repeat spend always gets the posterior mean.
        let seasoned = row(6, 35.0, 39.0, 40.0);
        let pred = predict_customer(&bg(), &heavy_tail, &seasoned, 26.0, 0.0, None).unwrap();
        assert_eq!(pred.spend_source, SpendSource::PosteriorMean);
    }

    #[test]
    fn batch_supplies_the_sample_mean() {
        let heavy_tail = GgCoefs { p: 4.495408, q: 0.038024, gamma: 4.360291 };
        let rows = vec![
            row(0, 0.0, 39.0, 0.0),
            row(2, 20.0, 39.0, 30.0),
            row(3, 25.0, 39.0, 60.0),
        ];
        let preds = predict_customers(&bg(), &heavy_tail, &rows, 26.0, 0.0).unwrap();
        assert_eq!(preds[0].spend_source, SpendSource::SampleMean);
        assert_eq!(preds[0].expected_value_per_transaction, 45.0);
        assert_eq!(preds[1].spend_source, SpendSource::PosteriorMean);
    }

    #[test]
    fn invalid_horizon_or_rate_is_rejected() {
        let r = row(1, 10.0, 39.0, 20.0);
        assert!(predict_customer(&bg(), &gg(), &r, 0.0, 0.0, None).is_err());
        assert!(predict_customer(&bg(), &gg(), &r, -5.0, 0.0, None).is_err());
        assert!(predict_customer(&bg(), &gg(), &r, 26.0, -0.1, None).is_err());
        assert!(predict_customer(&bg(), &gg(), &r, f64::INFINITY, 0.0, None).is_err());
    }

    #[test]
    fn single_purchase_timeline_stays_fully_alive() {
        let pts = churn_timeline(&[0.0], &bg(), 5.0, 40.0).unwrap();
        assert!(pts.iter().all(|p| p.p_alive == 1.0));
        assert_eq!(pts[0].time, 0.0);
        assert!(pts[0].is_purchase);
        assert_eq!(pts.last().unwrap().time, 40.0);
    }

    #[test]
    fn timeline_jumps_to_the_posterior_stay_odds_at_each_purchase() {
        let c = bg();
        let times = [0.0, 12.0, 20.0, 33.0];
        let pts = churn_timeline(&times, &c, 1.0, 50.0).unwrap();
        for (k, &pt) in times.iter().enumerate().skip(1) {
            let at = pts.iter().find(|p| p.time == pt).unwrap();
            assert!(at.is_purchase);
            let want = (c.b + k as f64 - 1.0) / (c.a + c.b + k as f64 - 1.0);
            assert!((at.p_alive - want).abs() < 1e-12, "purchase {k}: {} vs {want}", at.p_alive);
        }
    }

    #[test]
    fn frequent_buyers_decay_faster_once_they_go_quiet() {
        // Two contrasting histories at the same fitted coefficients: fifteen
        // repeats ending at day 60 versus three spread to day 90. Ten silent
        // days later the frequent buyer's survival has fallen ~22 points,
        // the sparse buyer's only ~7.
        let c = bg();
        let steady: Vec<f64> = (0..=15).map(|i| i as f64 * 4.0).collect();
        let p_steady_60 = churn_timeline(&steady, &c, 70.0, 70.0)
            .unwrap()
            .iter()
            .find(|p| p.time == 60.0)
            .unwrap()
            .p_alive;
        let p_steady_70 = churn_timeline(&steady, &c, 70.0, 70.0)
            .unwrap()
            .last()
            .unwrap()
            .p_alive;
        let sparse = [0.0, 30.0, 60.0, 90.0];
        let p_sparse_90 = churn_timeline(&sparse, &c, 100.0, 100.0)
            .unwrap()
            .iter()
            .find(|p| p.time == 90.0)
            .unwrap()
            .p_alive;
        let p_sparse_100 = churn_timeline(&sparse, &c, 100.0, 100.0)
            .unwrap()
            .last()
            .unwrap()
            .p_alive;
        assert!((p_steady_60 - 0.9697).abs() < 1e-3, "{p_steady_60}");
        assert!((p_steady_70 - 0.7520).abs() < 1e-3, "{p_steady_70}");
        assert!((p_sparse_90 - 0.8218).abs() < 1e-3, "{p_sparse_90}");
        assert!((p_sparse_100 - 0.7543).abs() < 1e-3, "{p_sparse_100}");
        let steady_drop = p_steady_60 - p_steady_70;
        let sparse_drop = p_sparse_90 - p_sparse_100;
        assert!(steady_drop > 3.0 * sparse_drop, "{steady_drop} vs {sparse_drop}");
    }

    #[test]
    fn timeline_rejects_bad_inputs() {
        let c = bg();
        assert!(churn_timeline(&[], &c, 1.0, 10.0).is_err());
        assert!(churn_timeline(&[0.0, 5.0, 5.0], &c, 1.0, 10.0).is_err());
        assert!(churn_timeline(&[0.0, 9.0], &c, 1.0, 5.0).is_err());
        assert!(churn_timeline(&[0.0, 3.0], &c, 0.0, 10.0).is_err());
    }

    proptest! {
        #[test]
        fn survival_never_rises_between_purchases(
            gaps in proptest::collection::vec(0.5f64..15.0, 1..6),
            tail in 1.0f64..30.0,
        ) {
            let mut times = vec![0.0f64];
            for g in gaps {
                times.push(times.last().unwrap() + g);
            }
            let as_of = times.last().unwrap() + tail;
            let pts = churn_timeline(&times, &bg(), 0.7, as_of).unwrap();
            for w in pts.windows(2) {
                if !w[1].is_purchase {
                    prop_assert!(w[1].p_alive <= w[0].p_alive + 1e-12,
                        "{} -> {}", w[0].p_alive, w[1].p_alive);
                }
            }
        }

        #[test]
        fn undiscounted_value_grows_with_the_horizon(
            x in 0u64..8, t_frac in 0.0f64..1.0,
            h1 in 1.0f64..40.0, h2 in 1.0f64..40.0,
        ) {
            let t_x = if x == 0 { 0.0 } else { t_frac * 39.0 };
            let r = row(x, t_x, 39.0, if x == 0 { 0.0 } else { 24.0 });
            let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
            let small = predict_customer(&bg(), &gg(), &r, lo, 0.0, None).unwrap();
            let large = predict_customer(&bg(), &gg(), &r, hi, 0.0, None).unwrap();
            prop_assert!(large.expected_clv >= small.expected_clv - 1e-9);
        }
    }
}
