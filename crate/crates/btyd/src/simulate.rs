//! Synthetic customer cohorts drawn from the generative process.
//!
//! Every customer starts with an acquisition purchase at time zero. While
//! active they purchase at exponential gaps with their personal rate; after
//! each repeat purchase they drop out with their personal probability. The
//! acquisition itself carries no dropout check. Rates come from
//! Gamma(r, alpha), dropout probabilities from Beta(a, b), and, when a
//! spend model is attached, per-customer value rates from Gamma(q, gamma)
//! with individual values Gamma(p, rate).
//!
//! Each customer consumes an independent substream of the seed, so a cohort
//! is reproducible regardless of how many customers precede it.

use crate::bgnbd::BgnbdCoefs;
use crate::gammagamma::GgCoefs;
use crate::ingest::{CalibrationHoldoutRow, RfmRow, TimeUnit, TransactionLog, TransactionRecord};
use crate::numerics::{NumericsError, Result, SeededRng};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_customers: usize,
    /// Observation span after acquisition, in model time units.
    pub horizon: f64,
    pub coefs: BgnbdCoefs,
    /// Attach a spend model to draw per-purchase values.
    pub spend: Option<GgCoefs>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCustomer {
    pub user_id: String,
    /// Latent purchase rate while active.
    pub lambda: f64,
    /// Latent dropout probability after each repeat purchase.
    pub p_dropout: f64,
    /// Latent per-customer value rate, when a spend model is attached.
    pub spend_rate: Option<f64>,
    /// Purchase instants in [0, horizon); the acquisition sits at 0.
    pub purchase_times: Vec<f64>,
    /// One value per purchase; zeros without a spend model.
    pub purchase_values: Vec<f64>,
}

impl SimulatedCustomer {
    pub fn frequency(&self) -> u64 {
        (self.purchase_times.len() - 1) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedBase {
    pub config: SimulationConfig,
    pub customers: Vec<SimulatedCustomer>,
}

/// Purchase instants for one customer with known latents: acquisition at
/// zero, exponential gaps while active, dropout checked after each repeat.
pub(crate) fn draw_purchase_times(
    rng: &mut SeededRng,
    lambda: f64,
    p_dropout: f64,
    horizon: f64,
) -> Result<Vec<f64>> {
    let mut times = vec![0.0];
    let mut t = 0.0;
    loop {
        t += rng.exponential(lambda);
        if t >= horizon {
            break;
        }
        times.push(t);
        if rng.uniform() < p_dropout {
            break;
        }
    }
    Ok(times)
}

pub fn simulate(config: &SimulationConfig) -> Result<SimulatedBase> {
    config.coefs.validate()?;
    if let Some(spend) = &config.spend {
        spend.validate()?;
    }
    if !(config.horizon > 0.0) || !config.horizon.is_finite() {
        return Err(NumericsError::Input(format!(
            "horizon must be positive and finite, got {}",
            config.horizon
        )));
    }
    let BgnbdCoefs { r, alpha, a, b } = config.coefs;
    let mut customers = Vec::with_capacity(config.n_customers);
    for i in 0..config.n_customers {
        let mut rng = SeededRng::substream(config.seed, i as u64);
        let lambda = rng.gamma(r, alpha);
        let p_dropout = rng.beta(a, b);
        let spend_rate = config.spend.as_ref().map(|gg| rng.gamma(gg.q, gg.gamma));
        let purchase_times = draw_purchase_times(&mut rng, lambda, p_dropout, config.horizon)?;
        let mut purchase_values = Vec::with_capacity(purchase_times.len());
        for _ in &purchase_times {
            purchase_values.push(match (&config.spend, spend_rate) {
                (Some(gg), Some(nu)) => rng.gamma(gg.p, nu),
                _ => 0.0,
            });
        }
        customers.push(SimulatedCustomer {
            user_id: format!("c{:06}", i + 1),
            lambda,
            p_dropout,
            spend_rate,
            purchase_times,
            purchase_values,
        });
    }
    Ok(SimulatedBase { config: config.clone(), customers })
}

impl SimulatedBase {
    /// Continuous-time RFM summaries (no calendar-day coarsening).
    pub fn rfm_rows(&self) -> Vec<RfmRow> {
        self.customers
            .iter()
            .map(|c| {
                let repeats = &c.purchase_values[1..];
                let monetary = if repeats.is_empty() {
                    0.0
                } else {
                    repeats.iter().sum::<f64>() / repeats.len() as f64
                };
                RfmRow {
                    user_id: c.user_id.clone(),
                    frequency: c.frequency(),
                    recency: *c.purchase_times.last().expect("acquisition exists"),
                    age: self.config.horizon,
                    monetary,
                }
            })
            .collect()
    }

    /// Split each history at `calibration_end` (must fall inside the
    /// horizon). Every simulated customer exists at time zero, so nobody is
    /// excluded.
    pub fn calibration_holdout_rows(
        &self,
        calibration_end: f64,
    ) -> Result<Vec<CalibrationHoldoutRow>> {
        if !(calibration_end > 0.0) || calibration_end >= self.config.horizon {
            return Err(NumericsError::Input(format!(
                "calibration end must lie in (0, horizon {}), got {calibration_end}",
                self.config.horizon
            )));
        }
        Ok(self
            .customers
            .iter()
            .map(|c| {
                let times = &c.purchase_times[1..];
                let values = &c.purchase_values[1..];
                let cal_count = times.partition_point(|&t| t <= calibration_end);
                let monetary_cal = if cal_count == 0 {
                    0.0
                } else {
                    values[..cal_count].iter().sum::<f64>() / cal_count as f64
                };
                CalibrationHoldoutRow {
                    user_id: c.user_id.clone(),
                    frequency_cal: cal_count as u64,
                    recency_cal: if cal_count == 0 { 0.0 } else { times[cal_count - 1] },
                    age_cal: calibration_end,
                    monetary_cal,
                    frequency_holdout: (times.len() - cal_count) as u64,
                    holdout_duration: self.config.horizon - calibration_end,
                }
            })
            .collect())
    }

    /// Materialize the cohort as a timestamped transaction log.
    pub fn to_transaction_log(&self, epoch: DateTime<Utc>, unit: TimeUnit) -> TransactionLog {
        let mut records = Vec::new();
        for c in &self.customers {
            for (k, (&t, &v)) in c.purchase_times.iter().zip(&c.purchase_values).enumerate() {
                records.push(TransactionRecord {
                    user_id: c.user_id.clone(),
                    transaction_id: format!("{}-{k}", c.user_id),
                    timestamp: unit.offset(epoch, t),
                    value: v,
                });
            }
        }
        TransactionLog::from_records(records)
    }

    /// Mean repeat purchases per customer over the whole horizon.
    pub fn mean_repeat_transactions(&self) -> f64 {
        if self.customers.is_empty() {
            return 0.0;
        }
        let total: u64 = self.customers.iter().map(SimulatedCustomer::frequency).sum();
        total as f64 / self.customers.len() as f64
    }
}
