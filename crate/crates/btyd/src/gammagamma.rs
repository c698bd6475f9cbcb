//! Transaction-value model.
//!
//! Individual transaction values are Gamma with shape p and a customer-level
//! rate nu; nu varies across customers as Gamma(q, gamma). Integrating nu
//! out gives a closed form for the mean observed value m over x
//! transactions, which is all the model needs; a fresh customer spends
//! gamma * p / (q - 1) per transaction on average.
//!
//! The model assumes spend is independent of purchase frequency; the fit
//! reports their sample correlation so callers can judge that assumption.

use crate::bgnbd::{Ci95, Coefficient, FitConfig, FitReport, ParamDoc};
use crate::ingest::RfmRow;
use crate::numerics::{
    invert_symmetric, ln_gamma, nelder_mead, numerical_hessian, pairwise_sum, NumericsError,
    Result,
};
use serde::{Deserialize, Serialize};

/// Spend-model coefficients. All three must be positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgCoefs {
    pub p: f64,
    pub q: f64,
    pub gamma: f64,
}

impl GgCoefs {
    pub fn new(p: f64, q: f64, gamma: f64) -> Result<Self> {
        let c = GgCoefs { p, q, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q), ("gamma", self.gamma)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(NumericsError::Domain(format!(
                    "coefficient {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Mean transaction value of a brand-new customer, defined for q > 1.
    pub fn prior_mean_value(&self) -> Result<f64> {
        if self.q <= 1.0 {
            return Err(NumericsError::Domain(format!(
                "the population mean value requires q > 1, got q = {}",
                self.q
            )));
        }
        Ok(self.gamma * self.p / (self.q - 1.0))
    }
}

fn check_spend_row(x: u64, mean_value: f64) -> Result<()> {
    if x == 0 {
        return Err(NumericsError::Input(
            "spend rows need at least one repeat purchase".into(),
        ));
    }
    if !(mean_value > 0.0) || !mean_value.is_finite() {
        return Err(NumericsError::Input(format!(
            "mean transaction value must be positive and finite, got {mean_value}"
        )));
    }
    Ok(())
}

/// Log-density of an observed mean value `m` over `x` transactions.
pub fn row_log_likelihood(coefs: &GgCoefs, x: u64, mean_value: f64) -> Result<f64> {
    coefs.validate()?;
    check_spend_row(x, mean_value)?;
    let GgCoefs { p, q, gamma } = *coefs;
    let xf = x as f64;
    Ok(ln_gamma(p * xf + q)? - ln_gamma(p * xf)? - ln_gamma(q)?
        + q * gamma.ln()
        + (p * xf - 1.0) * mean_value.ln()
        + p * xf * xf.ln()
        - (p * xf + q) * (gamma + mean_value * xf).ln())
}

/// Sum of row log-densities over (frequency, mean value) pairs.
pub fn log_likelihood(coefs: &GgCoefs, rows: &[RfmRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(NumericsError::Input(
            "log-likelihood of an empty table is undefined".into(),
        ));
    }
    let lls = rows
        .iter()
        .map(|r| row_log_likelihood(coefs, r.frequency, r.monetary))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&lls))
}

/// Posterior mean transaction value for a customer observed at (x, m).
///
/// A convex blend of the population mean and the observed mean, weighted
/// by how much evidence x transactions carry. Needs px + q > 1.
pub fn conditional_mean_transaction_value(coefs: &GgCoefs, x: u64, mean_value: f64) -> Result<f64> {
    coefs.validate()?;
    check_spend_row(x, mean_value)?;
    let GgCoefs { p, q, gamma } = *coefs;
    let xf = x as f64;
    if p * xf + q <= 1.0 {
        return Err(NumericsError::Domain(format!(
            "posterior mean value requires p*x + q > 1, got {}",
            p * xf + q
        )));
    }
    Ok(p * (gamma + mean_value * xf) / (p * xf + q - 1.0))
}

/// Count-updated shape over rate-plus-scale heuristic for the posterior
/// mean value. Kept for side-by-side comparison with
/// `conditional_mean_transaction_value`; deliberately not used anywhere in
/// lifetime-value predictions.
pub fn naive_conditional_value(coefs: &GgCoefs, x: u64) -> Result<f64> {
    coefs.validate()?;
    Ok((coefs.p + x as f64) / (coefs.q + coefs.gamma))
}

/// Pearson correlation of two equal-length samples.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(NumericsError::Input(format!(
            "sample lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(NumericsError::Input(
            "correlation needs at least two observations".into(),
        ));
    }
    let n = xs.len() as f64;
    let mean_x = pairwise_sum(xs) / n;
    let mean_y = pairwise_sum(ys) / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(NumericsError::Domain(
            "correlation is undefined for a zero-variance sample".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgParams {
    pub coefs: GgCoefs,
    /// Delta-method standard errors on the natural scale, same field order.
    pub standard_errors: GgCoefs,
    /// 95% intervals for p, q, gamma in that order.
    pub ci95: [Ci95; 3],
    pub log_likelihood: f64,
    /// Customers with at least one repeat purchase and positive spend.
    pub n_customers: usize,
    pub fit: FitReport,
}

impl GgParams {
    pub fn coefficient_table(&self) -> Vec<Coefficient> {
        let ests = [self.coefs.p, self.coefs.q, self.coefs.gamma];
        let ses = [
            self.standard_errors.p,
            self.standard_errors.q,
            self.standard_errors.gamma,
        ];
        ["p", "q", "gamma"]
            .iter()
            .zip(ests)
            .zip(ses)
            .zip(self.ci95)
            .map(|(((name, estimate), standard_error), ci95)| Coefficient {
                name: name.to_string(),
                estimate,
                standard_error,
                ci95,
                // The scale parameter circulates under both names.
                alias: (*name == "gamma").then(|| "lambda".to_string()),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = ParamDoc {
            model: "gamma-gamma".to_string(),
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
        if doc.model != "gamma-gamma" {
            return Err(NumericsError::Input(format!(
                "expected a 'gamma-gamma' parameter document, found model '{}'",
                doc.model
            )));
        }
        let find = |names: &[&str]| -> Result<&Coefficient> {
            doc.coefficients
                .iter()
                .find(|c| {
                    names.contains(&c.name.as_str())
                        || c.alias.as_deref().is_some_and(|a| names.contains(&a))
                })
                .ok_or_else(|| {
                    NumericsError::Input(format!(
                        "parameter document lacks coefficient '{}'",
                        names[0]
                    ))
                })
        };
        let p = find(&["p"])?;
        let q = find(&["q"])?;
        let gamma = find(&["gamma", "lambda"])?;
        let params = GgParams {
            coefs: GgCoefs { p: p.estimate, q: q.estimate, gamma: gamma.estimate },
            standard_errors: GgCoefs {
                p: p.standard_error,
                q: q.standard_error,
                gamma: gamma.standard_error,
            },
            ci95: [p.ci95, q.ci95, gamma.ci95],
            log_likelihood: doc.log_likelihood,
            n_customers: doc.n_customers,
            fit: doc.fit,
        };
        params.coefs.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone)]
pub struct GgFitOutcome {
    pub params: GgParams,
    /// Sample correlation between frequency and mean spend among the rows
    /// actually fitted, when it is defined.
    pub correlation: Option<f64>,
    pub warnings: Vec<String>,
}

/// Fit the spend model on customers with x >= 1 and positive mean value.
///
/// Rows outside that set carry no spend information and are skipped, not
/// rejected. Emits a warning when |corr(frequency, spend)| exceeds
/// `correlation_threshold`, since the model treats the two as independent.
pub fn fit_gg(
    rfm: &[RfmRow],
    config: &FitConfig,
    correlation_threshold: f64,
) -> Result<GgFitOutcome> {
    if !(correlation_threshold >= 0.0) || !correlation_threshold.is_finite() {
        return Err(NumericsError::Input(format!(
            "correlation threshold must be nonnegative and finite, got {correlation_threshold}"
        )));
    }
    if !(config.penalizer >= 0.0) || !config.penalizer.is_finite() {
        return Err(NumericsError::Input(format!(
            "penalizer must be nonnegative and finite, got {}",
            config.penalizer
        )));
    }
    config.optimizer.validate()?;
    let eligible: Vec<&RfmRow> = rfm
        .iter()
        .filter(|r| r.frequency >= 1 && r.monetary > 0.0 && r.monetary.is_finite())
        .collect();
    if eligible.is_empty() {
        return Err(NumericsError::Input(
            "no customers with repeat purchases and positive spend to fit on".into(),
        ));
    }

    let mut warnings = Vec::new();
    let freqs: Vec<f64> = eligible.iter().map(|r| r.frequency as f64).collect();
    let values: Vec<f64> = eligible.iter().map(|r| r.monetary).collect();
    let correlation = pearson_correlation(&freqs, &values).ok();
    if let Some(c) = correlation {
        if c.abs() > correlation_threshold {
            warnings.push(format!(
                "frequency and mean spend correlate at {c:.4} (threshold \
                 {correlation_threshold}); the independence assumption looks strained"
            ));
        }
    }

    // Premultiplied per-row constants: (x, m, ln m, x ln x, ln-gamma of px
    // cached by x at each parameter point).
    let rows: Vec<(f64, f64, f64, f64)> = eligible
        .iter()
        .map(|r| {
            let xf = r.frequency as f64;
            (xf, r.monetary, r.monetary.ln(), xf * xf.ln())
        })
        .collect();
    let max_x = eligible.iter().map(|r| r.frequency).max().unwrap() as usize;
    let n = rows.len() as f64;
    let penalizer = config.penalizer;

    let mean_nll = |coefs: &GgCoefs| -> f64 {
        let GgCoefs { p, q, gamma } = *coefs;
        let ln_gamma_q = match ln_gamma(q) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        let ln_scale = gamma.ln();
        let mut by_x: Vec<f64> = Vec::with_capacity(max_x + 1);
        by_x.push(f64::INFINITY); // x = 0 never occurs
        for x in 1..=max_x {
            let xf = x as f64;
            match (ln_gamma(p * xf + q), ln_gamma(p * xf)) {
                (Ok(l1), Ok(l2)) => by_x.push(l1 - l2 - ln_gamma_q + q * ln_scale),
                _ => return f64::INFINITY,
            }
        }
        let mut lls = Vec::with_capacity(rows.len());
        for &(xf, m, ln_m, x_ln_x) in &rows {
            let ll = by_x[xf as usize] + (p * xf - 1.0) * ln_m + p * x_ln_x
                - (p * xf + q) * (gamma + m * xf).ln();
            if !ll.is_finite() {
                return f64::INFINITY;
            }
            lls.push(ll);
        }
        -pairwise_sum(&lls) / n
    };

    let objective = |theta: &[f64]| -> f64 {
        let coefs = GgCoefs { p: theta[0].exp(), q: theta[1].exp(), gamma: theta[2].exp() };
        let penalty: f64 = theta.iter().map(|t| t * t).sum::<f64>() * penalizer / n;
        mean_nll(&coefs) + penalty
    };

    let result = nelder_mead(objective, &[0.0; 3], &config.optimizer)?;
    let theta = result.argmin.clone();
    let coefs = GgCoefs { p: theta[0].exp(), q: theta[1].exp(), gamma: theta[2].exp() };

    let sum_nll = |t: &[f64]| {
        let c = GgCoefs { p: t[0].exp(), q: t[1].exp(), gamma: t[2].exp() };
        mean_nll(&c) * n
    };
    let hessian = numerical_hessian(sum_nll, &theta, 1e-4)?;
    let covariance = invert_symmetric(&hessian).ok_or_else(|| {
        NumericsError::Domain("observed information matrix is singular; no standard errors".into())
    })?;
    let ests = [coefs.p, coefs.q, coefs.gamma];
    let mut ses = [0.0f64; 3];
    let mut ci95 = [Ci95 { lower: 0.0, upper: 0.0 }; 3];
    for i in 0..3 {
        let var_theta = covariance[i][i].max(0.0);
        ses[i] = ests[i] * var_theta.sqrt();
        ci95[i] = Ci95 { lower: ests[i] - 1.96 * ses[i], upper: ests[i] + 1.96 * ses[i] };
    }

    let owned: Vec<RfmRow> = eligible.into_iter().cloned().collect();
    let params = GgParams {
        coefs,
        standard_errors: GgCoefs { p: ses[0], q: ses[1], gamma: ses[2] },
        ci95,
        log_likelihood: log_likelihood(&coefs, &owned)?,
        n_customers: owned.len(),
        fit: FitReport {
            penalizer,
            tolerance: config.optimizer.tolerance,
            max_iterations: config.optimizer.max_iterations,
            restarts: config.optimizer.restarts,
            initial_simplex_scale: config.optimizer.initial_simplex_scale,
            iterations: result.iterations,
            converged: result.converged,
        },
    };
    if !result.converged {
        warnings.push(format!(
            "optimizer stopped after {} iterations without meeting the tolerance",
            result.iterations
        ));
    }
    Ok(GgFitOutcome { params, correlation, warnings })
}
