//! Derivative-free minimization (Nelder-Mead simplex) and finite-difference
//! curvature, sized for the 3-4 parameter likelihood surfaces this crate fits.
//!
//! The optimizer is fully deterministic: given the same objective, start
//! point and configuration it visits the same simplex sequence, so fitted
//! parameters reproduce bit-for-bit.

use super::{NumericsError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Edge length of the initial axis-aligned simplex.
    pub initial_simplex_scale: f64,
    /// Stop when the objective spread across the simplex drops below this.
    pub tolerance: f64,
    /// Total iteration budget, shared across restarts.
    pub max_iterations: usize,
    /// Extra runs from the best point found, each with a fresh simplex.
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            initial_simplex_scale: 1.0,
            tolerance: 1e-8,
            max_iterations: 10_000,
            restarts: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_simplex_scale > 0.0) || !(self.tolerance > 0.0) {
            return Err(NumericsError::Input(format!(
                "optimizer scale and tolerance must be positive, got {} and {}",
                self.initial_simplex_scale, self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(NumericsError::Input(
                "optimizer max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub argmin: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

// Standard simplex moves.
const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimize `objective` from `x0`.
///
/// The objective may return `+inf` for out-of-bounds regions (worst-ranked,
/// the simplex walks away from them); `NaN` is treated the same way.
pub fn nelder_mead<F>(objective: F, x0: &[f64], config: &OptimizerConfig) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate()?;
    if x0.is_empty() {
        return Err(NumericsError::Input("empty start point".into()));
    }
    let f0 = sanitize(objective(x0));
    if !f0.is_finite() {
        return Err(NumericsError::Input(format!(
            "objective is not finite at the start point ({f0})"
        )));
    }

    let mut best_x = x0.to_vec();
    let mut best_f = f0;
    let mut used = 0usize;
    let mut converged = false;
    for _ in 0..=config.restarts {
        if used >= config.max_iterations {
            break;
        }
        let budget = config.max_iterations - used;
        let run = simplex_run(&objective, &best_x, best_f, config, budget);
        used += run.iterations;
        converged = run.converged;
        if run.objective_value <= best_f {
            best_f = run.objective_value;
            best_x = run.argmin;
        }
    }

    Ok(OptimResult {
        argmin: best_x,
        objective_value: best_f,
        iterations: used,
        converged,
    })
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

fn simplex_run<F>(
    objective: &F,
    x0: &[f64],
    f0: f64,
    config: &OptimizerConfig,
    budget: usize,
) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    pts.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += config.initial_simplex_scale;
        let f = sanitize(objective(&p));
        pts.push((p, f));
    }

    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < budget {
        iterations += 1;
        pts.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("NaN sanitized on entry"));
        let spread = pts[n].1 - pts[0].1;
        if spread.abs() < config.tolerance {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (p, _) in pts.iter().take(n) {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let worst = pts[n].clone();
        let second_worst_f = pts[n - 1].1;

        let reflected = blend(&centroid, &worst.0, REFLECT);
        let f_r = sanitize(objective(&reflected));

        if f_r < pts[0].1 {
            let expanded = blend(&centroid, &worst.0, EXPAND);
            let f_e = sanitize(objective(&expanded));
            pts[n] = if f_e < f_r {
                (expanded, f_e)
            } else {
                (reflected, f_r)
            };
        } else if f_r < second_worst_f {
            pts[n] = (reflected, f_r);
        } else {
            // Contract toward the better of (worst, reflected).
            let (toward, f_toward) = if f_r < worst.1 {
                (&reflected, f_r)
            } else {
                (&worst.0, worst.1)
            };
            let mut contracted = vec![0.0; n];
            for i in 0..n {
                contracted[i] = centroid[i] + CONTRACT * (toward[i] - centroid[i]);
            }
            let f_c = sanitize(objective(&contracted));
            if f_c < f_toward {
                pts[n] = (contracted, f_c);
            } else {
                // Shrink everything toward the best vertex.
                let best = pts[0].0.clone();
                for (p, f) in pts.iter_mut().skip(1) {
                    for (v, b) in p.iter_mut().zip(&best) {
                        *v = b + SHRINK * (*v - b);
                    }
                    *f = sanitize(objective(p));
                }
            }
        }
    }

    pts.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("NaN sanitized on entry"));
    OptimResult {
        argmin: pts[0].0.clone(),
        objective_value: pts[0].1,
        iterations,
        converged,
    }
}

/// centroid + coeff * (centroid - worst)
fn blend(centroid: &[f64], worst: &[f64], coeff: f64) -> Vec<f64> {
    centroid
        .iter()
        .zip(worst)
        .map(|(c, w)| c + coeff * (c - w))
        .collect()
}

/// Central-difference Hessian of `objective` at `x`.
///
/// Per-coordinate step is `rel_step` times the coordinate magnitude, floored
/// at `rel_step` itself; the result is symmetrized as (H + Hᵀ)/2.
#[allow(clippy::needless_range_loop)]
pub fn numerical_hessian<F>(objective: F, x: &[f64], rel_step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(rel_step > 0.0) {
        return Err(NumericsError::Input(format!(
            "hessian step must be positive, got {rel_step}"
        )));
    }
    let n = x.len();
    // Floor the step at rel_step itself: second differences divide by h^2,
    // so a 1e-6 step near zero would amplify objective rounding to ~1e-3.
    let h: Vec<f64> = x.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let f0 = objective(x);
    let mut m = vec![vec![0.0; n]; n];
    let eval = |dx: &[(usize, f64)]| {
        let mut p = x.to_vec();
        for &(i, d) in dx {
            p[i] += d;
        }
        objective(&p)
    };
    for i in 0..n {
        m[i][i] =
            (eval(&[(i, h[i])]) - 2.0 * f0 + eval(&[(i, -h[i])])) / (h[i] * h[i]);
        for j in (i + 1)..n {
            let v = (eval(&[(i, h[i]), (j, h[j])]) - eval(&[(i, h[i]), (j, -h[j])])
                - eval(&[(i, -h[i]), (j, h[j])])
                + eval(&[(i, -h[i]), (j, -h[j])]))
                / (4.0 * h[i] * h[j]);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    // Already symmetric by construction; the averaging is a no-op guard
    // against future edits breaking that property.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = avg;
            m[j][i] = avg;
        }
    }
    Ok(m)
}

/// Gauss-Jordan inverse with partial pivoting. Returns None when singular
/// to working precision. Intended for the small (3x3, 4x4) information
/// matrices produced by the fitters.
#[allow(clippy::needless_range_loop)]
pub fn invert_symmetric(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut aug: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| {
            aug[a][col]
                .abs()
                .partial_cmp(&aug[b][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if aug[pivot][col].abs() < 1e-300 {
            return None;
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let factor = aug[row][col];
                if factor != 0.0 {
                    for k in 0..2 * n {
                        aug[row][k] -= factor * aug[col][k];
                    }
                }
            }
        }
    }
    Some(aug.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Eigenvalues of a small symmetric matrix via cyclic Jacobi rotations,
/// ascending order.
#[allow(clippy::needless_range_loop)]
pub fn symmetric_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| (v - 1.0) * (v - 1.0)).sum()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
    }

    #[test]
    fn minimizes_shifted_sphere() {
        let res = nelder_mead(sphere, &[0.0, 0.0], &OptimizerConfig::default()).unwrap();
        assert!(res.converged);
        assert!((res.argmin[0] - 1.0).abs() < 1e-6 && (res.argmin[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn minimizes_rosenbrock_from_standard_start() {
        let res = nelder_mead(rosenbrock, &[-1.2, 1.0], &OptimizerConfig::default()).unwrap();
        assert!(res.converged, "did not converge in {} iters", res.iterations);
        assert!(
            (res.argmin[0] - 1.0).abs() < 1e-4 && (res.argmin[1] - 1.0).abs() < 1e-4,
            "argmin {:?}",
            res.argmin
        );
    }

    #[test]
    fn restart_from_optimum_is_a_fixed_point() {
        let cfg = OptimizerConfig::default();
        let first = nelder_mead(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        let second = nelder_mead(rosenbrock, &first.argmin, &cfg).unwrap();
        assert!((second.objective_value - first.objective_value).abs() < cfg.tolerance);
    }

    #[test]
    fn rejects_nonfinite_start() {
        let res = nelder_mead(|x| x[0].ln(), &[-1.0], &OptimizerConfig::default());
        assert!(matches!(res, Err(NumericsError::Input(_))));
    }

    #[test]
    fn unconverged_run_reports_it() {
        let cfg = OptimizerConfig {
            max_iterations: 3,
            ..OptimizerConfig::default()
        };
        let res = nelder_mead(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(!res.converged);
        assert!(res.iterations <= cfg.max_iterations);
    }

    #[test]
    fn hessian_of_sphere_is_twice_identity() {
        let h = numerical_hessian(|x| x.iter().map(|v| v * v).sum(), &[0.3, -0.7], 1e-4).unwrap();
        assert!((h[0][0] - 2.0).abs() < 1e-6);
        assert!((h[1][1] - 2.0).abs() < 1e-6);
        assert!(h[0][1].abs() < 1e-6);
    }

    #[test]
    fn hessian_of_pure_cross_term() {
        let h = numerical_hessian(|x| x[0] * x[1], &[0.0, 0.0], 1e-4).unwrap();
        assert!(h[0][0].abs() < 1e-9 && h[1][1].abs() < 1e-9);
        assert!((h[0][1] - 1.0).abs() < 1e-9 && (h[1][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverts_small_matrix() {
        let m = vec![vec![4.0, 1.0], vec![1.0, 3.0]];
        let inv = invert_symmetric(&m).unwrap();
        // m * inv = I
        for i in 0..2 {
            for j in 0..2 {
                let dot: f64 = (0..2).map(|k| m[i][k] * inv[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
        assert!(invert_symmetric(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_none());
    }

    #[test]
    fn eigenvalues_of_diagonal_matrix() {
        let eig = symmetric_eigenvalues(&[vec![3.0, 0.0], vec![0.0, -1.0]]);
        assert!((eig[0] + 1.0).abs() < 1e-10 && (eig[1] - 3.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn argmin_invariant_to_objective_scale(k in 0.01f64..100.0) {
            let base = nelder_mead(sphere, &[0.0, 0.0], &OptimizerConfig::default()).unwrap();
            let scaled = nelder_mead(|x: &[f64]| k * sphere(x), &[0.0, 0.0], &OptimizerConfig::default()).unwrap();
            for (a, b) in base.argmin.iter().zip(&scaled.argmin) {
                prop_assert!((a - b).abs() < 1e-3);
            }
        }

        #[test]
        fn hessian_recovers_quadratic_form(
            a11 in 1.0f64..5.0,
            a22 in 1.0f64..5.0,
            a12 in -0.9f64..0.9,
            x1 in -2.0f64..2.0,
            x2 in -2.0f64..2.0,
        ) {
            // f(x) = x' A x with A well-conditioned; Hessian must be 2A.
            let a12 = a12 * (a11 * a22).sqrt(); // keep positive definite
            let f = move |x: &[f64]| a11 * x[0] * x[0] + 2.0 * a12 * x[0] * x[1] + a22 * x[1] * x[1];
            let h = numerical_hessian(f, &[x1, x2], 1e-4).unwrap();
            prop_assert!((h[0][0] - 2.0 * a11).abs() < 1e-5);
            prop_assert!((h[1][1] - 2.0 * a22).abs() < 1e-5);
            prop_assert!((h[0][1] - 2.0 * a12).abs() < 1e-5);
        }
    }
}
