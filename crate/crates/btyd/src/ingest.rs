//! Transaction log ingestion and RFM summarization.
//!
//! A transaction log is reduced per customer to the sufficient statistics
//! the frequency and spend models consume:
//!
//! * frequency x: repeat purchase days (distinct calendar days with at
//!   least one purchase, minus the first)
//! * recency t_x: time from first to last purchase day
//! * age T: time from first purchase day to the observation end
//! * monetary m: mean of summed purchase-day values over repeat days
//!
//! Purchases on the same calendar day (UTC) merge into one purchase day
//! with their values summed. All durations are expressed in configurable
//! time units (default one day).

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input error: {0}")]
    Input(String),
    #[error("missing required column '{0}' in header")]
    MissingColumn(String),
    #[error("duplicate transaction id '{0}'")]
    DuplicateTransactionId(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Duration of one model time unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeUnit {
    seconds: f64,
}

impl TimeUnit {
    pub fn days(d: f64) -> Result<Self> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(IngestError::Input(format!(
                "time unit must be a positive number of days, got {d}"
            )));
        }
        Ok(TimeUnit { seconds: d * 86_400.0 })
    }

    pub fn day() -> Self {
        TimeUnit { seconds: 86_400.0 }
    }

    pub fn as_days(&self) -> f64 {
        self.seconds / 86_400.0
    }

    /// Span between two instants, in units.
    pub fn span(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
        (to - from).num_milliseconds() as f64 / 1_000.0 / self.seconds
    }

    pub fn offset(&self, from: DateTime<Utc>, units: f64) -> DateTime<Utc> {
        from + chrono::Duration::nanoseconds((units * self.seconds * 1e9).round() as i64)
    }
}

impl Default for TimeUnit {
    fn default() -> Self {
        TimeUnit::day()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub user_id: String,
    pub transaction_id: String,
    pub timestamp: DateTime<Utc>,
    pub value: f64,
}

/// Per-customer purchase events, sorted by (user_id, timestamp).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransactionLog {
    pub records: Vec<TransactionRecord>,
}

impl TransactionLog {
    pub fn from_records(mut records: Vec<TransactionRecord>) -> Self {
        // Tie-break equal timestamps by id so arrival order never matters.
        records.sort_by(|a, b| {
            a.user_id
                .cmp(&b.user_id)
                .then(a.timestamp.cmp(&b.timestamp))
                .then(a.transaction_id.cmp(&b.transaction_id))
        });
        TransactionLog { records }
    }

    /// Record slices grouped per customer, in user_id order.
    fn by_customer(&self) -> Vec<&[TransactionRecord]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].user_id != self.records[start].user_id {
                out.push(&self.records[start..i]);
                start = i;
            }
        }
        out
    }
}

/// Which input columns hold which fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub user_id: String,
    pub transaction_id: String,
    pub timestamp: String,
    pub value: String,
}

#[derive(Debug, Clone)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParseReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
}

/// Accepts RFC 3339, `YYYY-MM-DDTHH:MM:SS[.frac]`, `YYYY-MM-DD HH:MM:SS[.frac]`
/// (both read as UTC) or a bare date.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&naive));
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|naive| Utc.from_utc_datetime(&naive))
}

/// Parse a delimiter-separated transaction file.
///
/// Malformed rows (bad timestamp, non-numeric or negative value, empty ids)
/// are rejected row by row with reasons; a duplicate transaction id aborts
/// the parse naming the offender.
pub fn parse_transactions<R: Read>(
    reader: R,
    mapping: &ColumnMapping,
    delimiter: u8,
) -> Result<(TransactionLog, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let (iu, it, its, iv) = (
        col(&mapping.user_id)?,
        col(&mapping.transaction_id)?,
        col(&mapping.timestamp)?,
        col(&mapping.value)?,
    );

    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let reject = |reason: String, report: &mut ParseReport| {
            report.rejected.push(RejectedRow { line, reason });
        };

        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let user_id = field(iu);
        let transaction_id = field(it);
        if user_id.is_empty() || transaction_id.is_empty() {
            reject("empty user or transaction id".into(), &mut report);
            continue;
        }
        let Some(timestamp) = parse_timestamp(&field(its)) else {
            reject(format!("unparseable timestamp '{}'", field(its)), &mut report);
            continue;
        };
        let value: f64 = match field(iv).parse() {
            Ok(v) => v,
            Err(_) => {
                reject(format!("non-numeric value '{}'", field(iv)), &mut report);
                continue;
            }
        };
        if !value.is_finite() || value < 0.0 {
            reject(format!("value must be finite and >= 0, got {value}"), &mut report);
            continue;
        }
        if !seen_ids.insert(transaction_id.clone()) {
            return Err(IngestError::DuplicateTransactionId(transaction_id));
        }
        records.push(TransactionRecord {
            user_id,
            transaction_id,
            timestamp,
            value,
        });
    }
    report.accepted = records.len();
    Ok((TransactionLog::from_records(records), report))
}

/// One customer's RFM summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfmRow {
    pub user_id: String,
    pub frequency: u64,
    pub recency: f64,
    pub age: f64,
    pub monetary: f64,
}

/// Calendar day of a timestamp, anchored at UTC midnight.
fn day_start(ts: DateTime<Utc>) -> DateTime<Utc> {
    Utc.from_utc_datetime(&ts.date_naive().and_hms_opt(0, 0, 0).expect("midnight exists"))
}

/// (purchase day start, summed value) per distinct calendar day, ascending.
pub(crate) fn purchase_days(records: &[TransactionRecord]) -> Vec<(DateTime<Utc>, f64)> {
    let mut days: Vec<(DateTime<Utc>, f64)> = Vec::new();
    for rec in records {
        let day = day_start(rec.timestamp);
        match days.last_mut() {
            Some((d, v)) if *d == day => *v += rec.value,
            _ => days.push((day, rec.value)),
        }
    }
    days
}

fn rfm_from_days(
    user_id: &str,
    days: &[(DateTime<Utc>, f64)],
    end: DateTime<Utc>,
    unit: TimeUnit,
) -> RfmRow {
    let first = days[0].0;
    let last = days[days.len() - 1].0;
    let repeats = &days[1..];
    let monetary = if repeats.is_empty() {
        0.0
    } else {
        repeats.iter().map(|(_, v)| v).sum::<f64>() / repeats.len() as f64
    };
    RfmRow {
        user_id: user_id.to_string(),
        frequency: repeats.len() as u64,
        recency: unit.span(first, last),
        age: unit.span(first, end),
        monetary,
    }
}

/// Reduce a log to one RFM row per customer, user_id ascending.
pub fn summarize_rfm(
    log: &TransactionLog,
    observation_end: DateTime<Utc>,
    unit: TimeUnit,
) -> Result<Vec<RfmRow>> {
    if let Some(bad) = log.records.iter().find(|r| r.timestamp > observation_end) {
        return Err(IngestError::Input(format!(
            "transaction '{}' at {} is after the observation end {}",
            bad.transaction_id, bad.timestamp, observation_end
        )));
    }
    Ok(log
        .by_customer()
        .into_iter()
        .map(|recs| {
            let days = purchase_days(recs);
            rfm_from_days(&recs[0].user_id, &days, observation_end, unit)
        })
        .collect())
}

/// Calibration-window RFM stats plus the holdout repeat count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationHoldoutRow {
    pub user_id: String,
    pub frequency_cal: u64,
    pub recency_cal: f64,
    pub age_cal: f64,
    pub monetary_cal: f64,
    /// Distinct purchase days in (calibration_end, observation_end].
    pub frequency_holdout: u64,
    pub holdout_duration: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationHoldoutSummary {
    pub rows: Vec<CalibrationHoldoutRow>,
    /// Customers whose first purchase falls after calibration_end.
    pub excluded: usize,
}

/// Split each customer's history at `calibration_end`: RFM on the
/// calibration side, a repeat-day count on the half-open holdout side.
pub fn calibration_holdout_summary(
    log: &TransactionLog,
    calibration_end: DateTime<Utc>,
    observation_end: DateTime<Utc>,
    unit: TimeUnit,
) -> Result<CalibrationHoldoutSummary> {
    if calibration_end >= observation_end {
        return Err(IngestError::Input(format!(
            "calibration end {calibration_end} must precede observation end {observation_end}"
        )));
    }
    if let Some(bad) = log.records.iter().find(|r| r.timestamp > observation_end) {
        return Err(IngestError::Input(format!(
            "transaction '{}' at {} is after the observation end {}",
            bad.transaction_id, bad.timestamp, observation_end
        )));
    }
    let holdout_duration = unit.span(calibration_end, observation_end);
    let mut rows = Vec::new();
    let mut excluded = 0usize;
    for recs in log.by_customer() {
        if recs[0].timestamp > calibration_end {
            excluded += 1;
            continue;
        }
        let split = recs.partition_point(|r| r.timestamp <= calibration_end);
        let cal_days = purchase_days(&recs[..split]);
        let holdout_days = purchase_days(&recs[split..]);
        let rfm = rfm_from_days(&recs[0].user_id, &cal_days, calibration_end, unit);
        rows.push(CalibrationHoldoutRow {
            user_id: rfm.user_id,
            frequency_cal: rfm.frequency,
            recency_cal: rfm.recency,
            age_cal: rfm.age,
            monetary_cal: rfm.monetary,
            frequency_holdout: holdout_days.len() as u64,
            holdout_duration,
        });
    }
    Ok(CalibrationHoldoutSummary { rows, excluded })
}

// ── Tabular text formats (shared by the CLI and the simulator) ──────────────

pub fn write_rfm_csv<W: std::io::Write>(w: &mut W, rows: &[RfmRow]) -> std::io::Result<()> {
    writeln!(w, "user_id,frequency,recency,age,monetary")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.user_id, r.frequency, r.recency, r.age, r.monetary
        )?;
    }
    Ok(())
}

pub fn read_rfm_csv<R: Read>(reader: R) -> Result<Vec<RfmRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<RfmRow>() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_calibration_csv<W: std::io::Write>(
    w: &mut W,
    rows: &[CalibrationHoldoutRow],
) -> std::io::Result<()> {
    writeln!(
        w,
        "user_id,frequency_cal,recency_cal,age_cal,monetary_cal,frequency_holdout,holdout_duration"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.user_id,
            r.frequency_cal,
            r.recency_cal,
            r.age_cal,
            r.monetary_cal,
            r.frequency_holdout,
            r.holdout_duration
        )?;
    }
    Ok(())
}

pub fn read_calibration_csv<R: Read>(reader: R) -> Result<Vec<CalibrationHoldoutRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<CalibrationHoldoutRow>() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_transactions_csv<W: std::io::Write>(
    w: &mut W,
    log: &TransactionLog,
) -> std::io::Result<()> {
    writeln!(w, "user_id,transaction_id,timestamp,value")?;
    for r in &log.records {
        writeln!(
            w,
            "{},{},{},{}",
            r.user_id,
            r.transaction_id,
            r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            r.value
        )?;
    }
    Ok(())
}
