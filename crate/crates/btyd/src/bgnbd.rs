//! Repeat-purchase frequency model.
//!
//! Purchasing while active is Poisson with rate lambda; lambda varies across
//! customers as Gamma(r, rate alpha). After every repeat purchase a customer
//! drops out for good with probability p; p varies as Beta(a, b). Both latent
//! quantities integrate out in closed form, so a customer's (frequency x,
//! recency t_x, age T) summary carries the whole likelihood.

use crate::ingest::RfmRow;
use crate::numerics::{
    hyp2f1, invert_symmetric, ln_beta, ln_gamma, nelder_mead, numerical_hessian, pairwise_sum,
    NumericsError, OptimizerConfig, Result,
};
use serde::{Deserialize, Serialize};

/// Model coefficients. All four must be positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BgnbdCoefs {
    pub r: f64,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
}

impl BgnbdCoefs {
    pub fn new(r: f64, alpha: f64, a: f64, b: f64) -> Result<Self> {
        let c = BgnbdCoefs { r, alpha, a, b };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r", self.r), ("alpha", self.alpha), ("a", self.a), ("b", self.b)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(NumericsError::Domain(format!(
                    "coefficient {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn logaddexp(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

/// P(N >= x) for N ~ Poisson(mu), summed from the tail for relative accuracy.
fn poisson_survival(x: u64, mu: f64) -> f64 {
    if x == 0 {
        return 1.0;
    }
    if mu <= 0.0 {
        return 0.0;
    }
    let xf = x as f64;
    let ln_head = -mu + xf * mu.ln() - ln_gamma(xf + 1.0).expect("x + 1 > 0");
    let mut term = ln_head.exp();
    let mut acc = term;
    let mut j = xf;
    while term > acc * 1e-18 {
        j += 1.0;
        term *= mu / j;
        acc += term;
        if j > xf + mu + 1e6 {
            break;
        }
    }
    acc.min(1.0)
}

/// P(X(t) = x) for one customer with known rate and dropout probability.
///
/// Either the customer stays alive through all x purchases (Poisson mass),
/// or dies at the x-th one, in which case the Poisson process must have
/// produced at least x arrivals by t.
pub fn individual_pmf(x: u64, lambda: f64, p: f64, t: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(NumericsError::Domain(format!(
            "rate lambda must be positive and finite, got {lambda}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(NumericsError::Domain(format!(
            "dropout probability must lie in [0, 1], got {p}"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(NumericsError::Domain(format!(
            "time span must be nonnegative and finite, got {t}"
        )));
    }
    let mu = lambda * t;
    if mu == 0.0 {
        return Ok(if x == 0 { 1.0 } else { 0.0 });
    }
    let xf = x as f64;
    let ln_pois = -mu + xf * mu.ln() - ln_gamma(xf + 1.0).expect("x + 1 > 0");
    let alive = (1.0 - p).powf(xf) * ln_pois.exp();
    let died = if x > 0 {
        p * (1.0 - p).powf(xf - 1.0) * poisson_survival(x, mu)
    } else {
        0.0
    };
    Ok((alive + died).clamp(0.0, 1.0))
}

fn check_history(x: u64, t_x: f64, age: f64) -> Result<()> {
    if !(age >= 0.0) || !age.is_finite() {
        return Err(NumericsError::Input(format!(
            "age must be nonnegative and finite, got {age}"
        )));
    }
    if !(0.0..=age).contains(&t_x) {
        return Err(NumericsError::Input(format!(
            "recency {t_x} must lie in [0, age {age}]"
        )));
    }
    if x == 0 && t_x > 0.0 {
        return Err(NumericsError::Input(format!(
            "a customer with no repeats has recency 0, got {t_x}"
        )));
    }
    Ok(())
}

/// Log-likelihood of one (x, t_x, T) summary with latents integrated out.
pub fn row_log_likelihood(coefs: &BgnbdCoefs, x: u64, t_x: f64, age: f64) -> Result<f64> {
    coefs.validate()?;
    check_history(x, t_x, age)?;
    let BgnbdCoefs { r, alpha, a, b } = *coefs;
    let xf = x as f64;
    // Shared factor: Gamma mixing of the Poisson mass plus the Beta update.
    let shared = ln_beta(a, b + xf)? - ln_beta(a, b)? + ln_gamma(r + xf)? - ln_gamma(r)?
        + r * alpha.ln();
    let ln_alive = shared - (r + xf) * (alpha + age).ln();
    if x == 0 {
        return Ok(ln_alive);
    }
    // Death right after the x-th repeat: exposure stops at t_x.
    let ln_died = ln_beta(a + 1.0, b + xf - 1.0)? - ln_beta(a, b)? + ln_gamma(r + xf)?
        - ln_gamma(r)?
        + r * alpha.ln()
        - (r + xf) * (alpha + t_x).ln();
    Ok(logaddexp(ln_alive, ln_died))
}

/// Sum of row log-likelihoods over an RFM table (pairwise summation).
pub fn log_likelihood(coefs: &BgnbdCoefs, rows: &[RfmRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(NumericsError::Input(
            "log-likelihood of an empty table is undefined".into(),
        ));
    }
    let lls = rows
        .iter()
        .map(|row| row_log_likelihood(coefs, row.frequency, row.recency, row.age))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&lls))
}

/// Probability the customer is still active at the end of the observation.
///
/// Zero repeats means death was never on the table, so the result is
/// exactly 1. Otherwise the death branch competes with the alive branch
/// through a single logistic contrast.
pub fn probability_alive(coefs: &BgnbdCoefs, x: u64, t_x: f64, age: f64) -> Result<f64> {
    coefs.validate()?;
    check_history(x, t_x, age)?;
    if x == 0 {
        return Ok(1.0);
    }
    let BgnbdCoefs { r, alpha, a, b } = *coefs;
    let xf = x as f64;
    let s = a.ln() - (b + xf - 1.0).ln()
        + (r + xf) * ((alpha + age).ln() - (alpha + t_x).ln());
    Ok(1.0 / (1.0 + s.exp()))
}

/// Expected repeat purchases in the next `horizon` units for one history.
pub fn conditional_expected_transactions(
    coefs: &BgnbdCoefs,
    x: u64,
    t_x: f64,
    age: f64,
    horizon: f64,
) -> Result<f64> {
    coefs.validate()?;
    check_history(x, t_x, age)?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(NumericsError::Input(format!(
            "horizon must be nonnegative and finite, got {horizon}"
        )));
    }
    let BgnbdCoefs { r, alpha, a, b } = *coefs;
    if a == 1.0 {
        return Err(NumericsError::Domain(
            "expected transactions have a removable singularity at a = 1; perturb a".into(),
        ));
    }
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let xf = x as f64;
    let z = horizon / (alpha + age + horizon);
    let f = hyp2f1(r + xf, b + xf, a + b + xf - 1.0, z)?;
    let numer = 1.0 - ((alpha + age) / (alpha + age + horizon)).powf(r + xf) * f;
    let denom = if x > 0 {
        1.0 + (a / (b + xf - 1.0)) * ((alpha + age) / (alpha + t_x)).powf(r + xf)
    } else {
        1.0
    };
    Ok((a + b + xf - 1.0) / (a - 1.0) * numer / denom)
}

/// Expected repeat purchases of a brand-new customer over `t` units.
pub fn expected_transactions(coefs: &BgnbdCoefs, t: f64) -> Result<f64> {
    coefs.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(NumericsError::Input(format!(
            "time span must be nonnegative and finite, got {t}"
        )));
    }
    let BgnbdCoefs { r, alpha, a, b } = *coefs;
    if a == 1.0 {
        return Err(NumericsError::Domain(
            "expected transactions have a removable singularity at a = 1; perturb a".into(),
        ));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let z = t / (alpha + t);
    let f = hyp2f1(r, b, a + b - 1.0, z)?;
    Ok((a + b - 1.0) / (a - 1.0) * (1.0 - (alpha / (alpha + t)).powf(r) * f))
}

// ── Fitting ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub optimizer: OptimizerConfig,
    /// Quadratic penalty weight on the log-scale parameters.
    pub penalizer: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { optimizer: OptimizerConfig::default(), penalizer: 0.0 }
    }
}

/// How a fit was configured and how it ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub penalizer: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub restarts: usize,
    pub initial_simplex_scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci95 {
    pub lower: f64,
    pub upper: f64,
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub standard_error: f64,
    pub ci95: Ci95,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgnbdParams {
    pub coefs: BgnbdCoefs,
    /// Delta-method standard errors on the natural scale, same field order.
    pub standard_errors: BgnbdCoefs,
    /// 95% intervals for r, alpha, a, b in that order.
    pub ci95: [Ci95; 4],
    pub log_likelihood: f64,
    pub n_customers: usize,
    pub fit: FitReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ParamDoc {
    pub(crate) model: String,
    pub(crate) coefficients: Vec<Coefficient>,
    pub(crate) log_likelihood: f64,
    pub(crate) n_customers: usize,
    pub(crate) fit: FitReport,
}

impl BgnbdParams {
    pub fn coefficient_table(&self) -> Vec<Coefficient> {
        let ests = [self.coefs.r, self.coefs.alpha, self.coefs.a, self.coefs.b];
        let ses = [
            self.standard_errors.r,
            self.standard_errors.alpha,
            self.standard_errors.a,
            self.standard_errors.b,
        ];
        ["r", "alpha", "a", "b"]
            .iter()
            .zip(ests)
            .zip(ses)
            .zip(self.ci95)
            .map(|(((name, estimate), standard_error), ci95)| Coefficient {
                name: name.to_string(),
                estimate,
                standard_error,
                ci95,
                alias: None,
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = ParamDoc {
            model: "bgnbd".to_string(),
            coefficients: self.coefficient_table(),
            log_likelihood: self.log_likelihood,
            n_customers: self.n_customers,
            fit: self.fit.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ParamDoc = serde_json::from_str(s)
            .map_err(|e| NumericsError::Input(format!("malformed parameter document: {e}")))?;
        if doc.model != "bgnbd" {
            return Err(NumericsError::Input(format!(
                "expected a 'bgnbd' parameter document, found model '{}'",
                doc.model
            )));
        }
        let find = |name: &str| -> Result<&Coefficient> {
            doc.coefficients
                .iter()
                .find(|c| c.name == name)
                .ok_or_else(|| {
                    NumericsError::Input(format!("parameter document lacks coefficient '{name}'"))
                })
        };
        let (r, alpha, a, b) = (find("r")?, find("alpha")?, find("a")?, find("b")?);
        let params = BgnbdParams {
            coefs: BgnbdCoefs {
                r: r.estimate,
                alpha: alpha.estimate,
                a: a.estimate,
                b: b.estimate,
            },
            standard_errors: BgnbdCoefs {
                r: r.standard_error,
                alpha: alpha.standard_error,
                a: a.standard_error,
                b: b.standard_error,
            },
            ci95: [r.ci95, alpha.ci95, a.ci95, b.ci95],
            log_likelihood: doc.log_likelihood,
            n_customers: doc.n_customers,
            fit: doc.fit,
        };
        params.coefs.validate()?;
        Ok(params)
    }
}

/// Histories as plain numbers plus per-frequency caches of the x-only
/// likelihood terms, rebuilt at each parameter point.
struct LikelihoodData {
    rows: Vec<(f64, f64, f64)>,
    max_x: usize,
}

impl LikelihoodData {
    fn new(rfm: &[RfmRow]) -> Result<Self> {
        for (i, row) in rfm.iter().enumerate() {
            check_history(row.frequency, row.recency, row.age).map_err(|e| {
                NumericsError::Input(format!("row {i} (user '{}'): {e}", row.user_id))
            })?;
        }
        let rows: Vec<(f64, f64, f64)> = rfm
            .iter()
            .map(|r| (r.frequency as f64, r.recency, r.age))
            .collect();
        let max_x = rfm.iter().map(|r| r.frequency).max().unwrap_or(0) as usize;
        Ok(LikelihoodData { rows, max_x })
    }

    /// Mean negative log-likelihood at natural-scale coefficients.
    fn mean_nll(&self, coefs: &BgnbdCoefs) -> f64 {
        let BgnbdCoefs { r, alpha, a, b } = *coefs;
        let ln_beta_ab = match ln_beta(a, b) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        let ln_gamma_r = match ln_gamma(r) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        let r_ln_alpha = r * alpha.ln();
        // x-only terms, indexed by frequency: (shared, death-branch extra).
        let mut by_x: Vec<(f64, f64)> = Vec::with_capacity(self.max_x + 1);
        for x in 0..=self.max_x {
            let xf = x as f64;
            let (lb_alive, lg) = match (ln_beta(a, b + xf), ln_gamma(r + xf)) {
                (Ok(lb), Ok(lg)) => (lb, lg),
                _ => return f64::INFINITY,
            };
            let common = lg - ln_gamma_r + r_ln_alpha - ln_beta_ab;
            let alive = common + lb_alive;
            let died = if x > 0 {
                match ln_beta(a + 1.0, b + xf - 1.0) {
                    Ok(lb) => common + lb,
                    Err(_) => return f64::INFINITY,
                }
            } else {
                f64::NEG_INFINITY
            };
            by_x.push((alive, died));
        }
        let mut lls = Vec::with_capacity(self.rows.len());
        for &(xf, t_x, age) in &self.rows {
            let x = xf as usize;
            let (alive_base, died_base) = by_x[x];
            let ln_alive = alive_base - (r + xf) * (alpha + age).ln();
            let ll = if x == 0 {
                ln_alive
            } else {
                let ln_died = died_base - (r + xf) * (alpha + t_x).ln();
                logaddexp(ln_alive, ln_died)
            };
            if !ll.is_finite() {
                return f64::INFINITY;
            }
            lls.push(ll);
        }
        -pairwise_sum(&lls) / self.rows.len() as f64
    }
}

/// Maximum-likelihood fit over log-scale parameters from a unit start.
///
/// The objective is the mean penalized negative log-likelihood; standard
/// errors come from the observed information of the summed log-likelihood
/// via the delta method.
pub fn fit_bgnbd(rfm: &[RfmRow], config: &FitConfig) -> Result<BgnbdParams> {
    if rfm.is_empty() {
        return Err(NumericsError::Input("cannot fit an empty RFM table".into()));
    }
    if !(config.penalizer >= 0.0) || !config.penalizer.is_finite() {
        return Err(NumericsError::Input(format!(
            "penalizer must be nonnegative and finite, got {}",
            config.penalizer
        )));
    }
    if rfm.iter().all(|r| r.frequency == 0) {
        return Err(NumericsError::Domain(
            "every customer has zero repeats; dropout parameters are unidentifiable".into(),
        ));
    }
    config.optimizer.validate()?;
    let data = LikelihoodData::new(rfm)?;
    let n = rfm.len() as f64;
    let penalizer = config.penalizer;

    let objective = |theta: &[f64]| -> f64 {
        let coefs = BgnbdCoefs {
            r: theta[0].exp(),
            alpha: theta[1].exp(),
            a: theta[2].exp(),
            b: theta[3].exp(),
        };
        let penalty: f64 = theta.iter().map(|t| t * t).sum::<f64>() * penalizer / n;
        data.mean_nll(&coefs) + penalty
    };

    let result = nelder_mead(objective, &[0.0; 4], &config.optimizer)?;
    let theta = result.argmin.clone();
    let coefs = BgnbdCoefs {
        r: theta[0].exp(),
        alpha: theta[1].exp(),
        a: theta[2].exp(),
        b: theta[3].exp(),
    };

    // Observed information of the summed (unpenalized) log-likelihood.
    let sum_nll = |t: &[f64]| {
        let c = BgnbdCoefs { r: t[0].exp(), alpha: t[1].exp(), a: t[2].exp(), b: t[3].exp() };
        data.mean_nll(&c) * n
    };
    let hessian = numerical_hessian(sum_nll, &theta, 1e-4)?;
    let covariance = invert_symmetric(&hessian).ok_or_else(|| {
        NumericsError::Domain("observed information matrix is singular; no standard errors".into())
    })?;
    let ests = [coefs.r, coefs.alpha, coefs.a, coefs.b];
    let mut ses = [0.0f64; 4];
    let mut ci95 = [Ci95 { lower: 0.0, upper: 0.0 }; 4];
    for i in 0..4 {
        let var_theta = covariance[i][i].max(0.0);
        ses[i] = ests[i] * var_theta.sqrt();
        ci95[i] = Ci95 { lower: ests[i] - 1.96 * ses[i], upper: ests[i] + 1.96 * ses[i] };
    }

    Ok(BgnbdParams {
        coefs,
        standard_errors: BgnbdCoefs { r: ses[0], alpha: ses[1], a: ses[2], b: ses[3] },
        ci95,
        log_likelihood: log_likelihood(&coefs, rfm)?,
        n_customers: rfm.len(),
        fit: FitReport {
            penalizer,
            tolerance: config.optimizer.tolerance,
            max_iterations: config.optimizer.max_iterations,
            restarts: config.optimizer.restarts,
            initial_simplex_scale: config.optimizer.initial_simplex_scale,
            iterations: result.iterations,
            converged: result.converged,
        },
    })
}

// ── Frequency-recency grids ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixMode {
    PAlive,
    ExpectedPurchases,
}

/// Prediction surface over integer (frequency, recency) histories at a
/// common age. Cells with recency beyond the age are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRecencyMatrix {
    pub mode: MatrixMode,
    pub age: f64,
    pub horizon: f64,
    /// Row i holds recency = i; column j holds frequency = j.
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn frequency_recency_matrix(
    coefs: &BgnbdCoefs,
    mode: MatrixMode,
    max_frequency: u64,
    max_recency: u64,
    age: f64,
    horizon: f64,
) -> Result<FrequencyRecencyMatrix> {
    coefs.validate()?;
    if !(age > 0.0) || !age.is_finite() {
        return Err(NumericsError::Input(format!(
            "age must be positive and finite, got {age}"
        )));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(NumericsError::Input(format!(
            "horizon must be nonnegative and finite, got {horizon}"
        )));
    }
    let mut cells = Vec::with_capacity(max_recency as usize + 1);
    for recency in 0..=max_recency {
        let t_x = recency as f64;
        let mut row = Vec::with_capacity(max_frequency as usize + 1);
        for x in 0..=max_frequency {
            if t_x > age || (x == 0 && t_x > 0.0) {
                row.push(None);
                continue;
            }
            let v = match mode {
                MatrixMode::PAlive => probability_alive(coefs, x, t_x, age)?,
                MatrixMode::ExpectedPurchases => {
                    conditional_expected_transactions(coefs, x, t_x, age, horizon)?
                }
            };
            row.push(Some(v));
        }
        cells.push(row);
    }
    Ok(FrequencyRecencyMatrix { mode, age, horizon, cells })
}
