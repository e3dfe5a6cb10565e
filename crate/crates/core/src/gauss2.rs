//! Two-term Gaussian temperature-profile model and its curve fitter.
//!
//! The model is
//!
//! ```text
//! f(x) = a1 * exp(-((x - b1) / c1)^2) + a2 * exp(-((x - b2) / c2)^2)
//! ```
//!
//! Coefficients are specific to each temperature profile, so the fitter has
//! to be re-run per profile. Fitting is damped least squares
//! (Levenberg-Marquardt with multiplicative lambda updates) on the analytic
//! Jacobian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the two-term Gaussian model.
/// Amplitudes in degrees C, centers and widths in sample-index units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss2Coefficients {
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
}

impl Gauss2Coefficients {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.a1, self.b1, self.c1, self.a2, self.b2, self.c2];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("coefficients must be finite"));
        }
        if self.c1 == 0.0 || self.c2 == 0.0 {
            return Err(Error::config("widths c1 and c2 must be nonzero"));
        }
        Ok(())
    }

    fn to_array(self) -> [f64; 6] {
        [self.a1, self.b1, self.c1, self.a2, self.b2, self.c2]
    }

    fn from_array(p: [f64; 6]) -> Self {
        Gauss2Coefficients { a1: p[0], b1: p[1], c1: p[2], a2: p[3], b2: p[4], c2: p[5] }
    }

    /// Width signs and term order are gauge freedoms of the model; fix them
    /// to positive widths and `a1 >= a2` so fitted coefficients compare.
    pub fn canonicalize(mut self) -> Self {
        self.c1 = self.c1.abs();
        self.c2 = self.c2.abs();
        if self.a1 < self.a2 {
            std::mem::swap(&mut self.a1, &mut self.a2);
            std::mem::swap(&mut self.b1, &mut self.b2);
            std::mem::swap(&mut self.c1, &mut self.c2);
        }
        self
    }
}

/// Evaluates the model at one point.
pub fn eval_gauss2(coeffs: &Gauss2Coefficients, x: f64) -> f64 {
    let u1 = (x - coeffs.b1) / coeffs.c1;
    let u2 = (x - coeffs.b2) / coeffs.c2;
    coeffs.a1 * (-u1 * u1).exp() + coeffs.a2 * (-u2 * u2).exp()
}

/// Partial derivatives of the model at one point, ordered
/// `[a1, b1, c1, a2, b2, c2]`.
pub fn gauss2_jacobian(coeffs: &Gauss2Coefficients, x: f64) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (term, (a, b, c)) in
        [(0, (coeffs.a1, coeffs.b1, coeffs.c1)), (1, (coeffs.a2, coeffs.b2, coeffs.c2))]
    {
        let u = (x - b) / c;
        let e = (-u * u).exp();
        let base = term * 3;
        out[base] = e;
        out[base + 1] = a * e * 2.0 * u / c;
        out[base + 2] = a * e * 2.0 * u * u / c;
    }
    out
}

/// Result of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub coefficients: Gauss2Coefficients,
    /// Root mean squared residual, degrees C.
    pub rmse: f64,
    /// Coefficient of determination. `-inf` when the data is constant and
    /// the metric is undefined; always <= 1.
    pub r_squared: f64,
    /// Accepted damped-least-squares steps.
    pub iterations: usize,
    pub converged: bool,
}

/// Coefficient of determination `1 - SS_res / SS_tot` with `SS_tot` about
/// the truth mean. Negative when the fit is worse than the mean.
pub fn r_squared(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(Error::config(format!(
            "need equal non-empty lengths, got {} predictions and {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "R^2 is undefined for constant truth (zero total variance)".into(),
        ));
    }
    let ss_res: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

const MAX_ITERATIONS: usize = 200;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e12;
const REL_IMPROVEMENT_TOL: f64 = 1e-10;

/// Fits the model to `(x, temperature)` samples.
///
/// `init = None` uses the built-in heuristic: dominant term at the data
/// maximum with half-range width, plus a small early term. Non-convergence
/// is reported through the `converged` flag, not an error.
pub fn fit_gauss2(
    samples: &[(f64, f64)],
    init: Option<Gauss2Coefficients>,
) -> Result<FitReport> {
    fit_impl(samples, init, None)
}

fn auto_init(samples: &[(f64, f64)]) -> Result<Gauss2Coefficients> {
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_max, mut x_at_max) = (f64::NEG_INFINITY, 0.0);
    for &(x, y) in samples {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        if y > y_max {
            y_max = y;
            x_at_max = x;
        }
    }
    let range = x_max - x_min;
    if range <= 0.0 {
        return Err(Error::config("samples must span a nonzero x range"));
    }
    Ok(Gauss2Coefficients {
        a1: y_max,
        b1: x_at_max,
        c1: range / 2.0,
        a2: 0.05 * y_max,
        b2: x_min,
        c2: range / 10.0,
    })
}

fn sum_squared_residuals(p: &Gauss2Coefficients, samples: &[(f64, f64)]) -> f64 {
    samples
        .iter()
        .map(|&(x, y)| {
            let r = eval_gauss2(p, x) - y;
            r * r
        })
        .sum()
}

fn fit_impl(
    samples: &[(f64, f64)],
    init: Option<Gauss2Coefficients>,
    mut ssr_history: Option<&mut Vec<f64>>,
) -> Result<FitReport> {
    if samples.len() < 6 {
        return Err(Error::config(format!(
            "need at least 6 samples to fit 6 parameters, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput("samples must be finite".into()));
    }
    let init = match init {
        Some(c) => {
            c.validate()?;
            c
        }
        None => auto_init(samples)?,
    };

    let mut p = init.to_array();
    let mut ssr = sum_squared_residuals(&Gauss2Coefficients::from_array(p), samples);
    if let Some(h) = ssr_history.as_deref_mut() {
        h.push(ssr);
    }
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    let mut converged = false;
    // SSR at machine noise for the data scale; nothing left to minimize.
    let ssr_floor = {
        let scale: f64 =
            samples.iter().map(|&(_, y)| y.abs()).fold(0.0, f64::max).max(1.0);
        samples.len() as f64 * (scale * 1e-15) * (scale * 1e-15)
    };

    'outer: for _ in 0..MAX_ITERATIONS {
        // Normal equations J^T J and J^T r at the current point.
        let coeffs = Gauss2Coefficients::from_array(p);
        let mut jtj = [[0.0f64; 6]; 6];
        let mut jtr = [0.0f64; 6];
        for &(x, y) in samples {
            let j = gauss2_jacobian(&coeffs, x);
            let r = eval_gauss2(&coeffs, x) - y;
            for i in 0..6 {
                jtr[i] += j[i] * r;
                for k in i..6 {
                    jtj[i][k] += j[i] * j[k];
                }
            }
        }
        for i in 0..6 {
            for k in 0..i {
                jtj[i][k] = jtj[k][i];
            }
        }

        loop {
            // Marquardt scaling: damp each parameter by its own curvature.
            let mut a = jtj;
            for i in 0..6 {
                a[i][i] += lambda * jtj[i][i].max(1e-12);
            }
            let rhs = jtr.map(|v| -v);
            let step = solve6(a, rhs);

            let mut accepted = false;
            if let Some(delta) = step {
                let mut cand = p;
                for i in 0..6 {
                    cand[i] += delta[i];
                }
                let cand_coeffs = Gauss2Coefficients::from_array(cand);
                if cand_coeffs.c1 != 0.0 && cand_coeffs.c2 != 0.0 {
                    let ssr_new = sum_squared_residuals(&cand_coeffs, samples);
                    if ssr_new.is_finite() && ssr_new < ssr {
                        p = cand;
                        iterations += 1;
                        lambda /= 10.0;
                        let improvement = (ssr - ssr_new) / ssr.max(f64::MIN_POSITIVE);
                        ssr = ssr_new;
                        if let Some(h) = ssr_history.as_deref_mut() {
                            h.push(ssr);
                        }
                        if improvement < REL_IMPROVEMENT_TOL || ssr <= ssr_floor {
                            converged = true;
                            break 'outer;
                        }
                        accepted = true;
                    }
                }
            }
            if accepted {
                break;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // No descent direction left; converged if the gradient has
                // collapsed, stuck otherwise.
                converged = jtr.iter().all(|g| g.abs() <= 1e-6 * (1.0 + ssr));
                break 'outer;
            }
        }
    }

    let coefficients = Gauss2Coefficients::from_array(p).canonicalize();
    let rmse = (ssr / samples.len() as f64).sqrt();
    let truth: Vec<f64> = samples.iter().map(|&(_, y)| y).collect();
    let preds: Vec<f64> = samples.iter().map(|&(x, _)| eval_gauss2(&coefficients, x)).collect();
    let r2 = match r_squared(&preds, &truth) {
        Ok(v) => v,
        Err(Error::UndefinedMetric(_)) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    Ok(FitReport { coefficients, rmse, r_squared: r2, iterations, converged })
}

/// Gaussian elimination with partial pivoting for the 6x6 damped normal
/// equations. Returns `None` when the system is numerically singular.
fn solve6(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> Option<[f64; 6]> {
    for col in 0..6 {
        let pivot_row = (col..6).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("finite pivots")
        })?;
        if a[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..6 {
            let f = a[row][col] / a[col][col];
            for k in col..6 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 6];
    for row in (0..6).rev() {
        let mut acc = b[row];
        for k in row + 1..6 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
        if !x[row].is_finite() {
            return None;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Reference coefficients of a fitted fourth-joint heating profile.
    fn reference_coeffs() -> Gauss2Coefficients {
        Gauss2Coefficients { a1: 34.07, b1: 276.0, c1: 743.2, a2: 1.668, b2: -26.71, c2: 103.0 }
    }

    #[test]
    fn single_term_peak_is_exact_amplitude() {
        let c = Gauss2Coefficients { a1: 5.5, b1: 100.0, c1: 50.0, a2: 0.0, b2: 0.0, c2: 1.0 };
        assert_eq!(eval_gauss2(&c, 100.0), 5.5);
    }

    #[test]
    fn reference_profile_value_at_peak() {
        // Independently evaluated with 30-digit arithmetic.
        let v = eval_gauss2(&reference_coeffs(), 276.0);
        assert!((v - 34.070_295_838_688_062).abs() < 1e-12, "got {v}");
        let v0 = eval_gauss2(&reference_coeffs(), 0.0);
        assert!((v0 - 31.240_420_132_133_018).abs() < 1e-12, "got {v0}");
    }

    #[test]
    fn single_term_is_symmetric_about_center() {
        let c = Gauss2Coefficients { a1: 3.0, b1: 40.0, c1: 11.0, a2: 0.0, b2: 0.0, c2: 1.0 };
        for d in [0.5, 3.0, 17.0, 60.0] {
            assert_eq!(eval_gauss2(&c, 40.0 + d), eval_gauss2(&c, 40.0 - d));
        }
    }

    #[test]
    fn term_swap_and_width_sign_are_gauge_freedoms() {
        let c = reference_coeffs();
        let swapped = Gauss2Coefficients { a1: c.a2, b1: c.b2, c1: c.c2, a2: c.a1, b2: c.b1, c2: c.c1 };
        let neg_width = Gauss2Coefficients { c1: -c.c1, c2: -c.c2, ..c };
        for x in [-50.0, 0.0, 276.0, 900.0, 1999.0] {
            assert_eq!(eval_gauss2(&c, x), eval_gauss2(&swapped, x));
            assert_eq!(eval_gauss2(&c, x), eval_gauss2(&neg_width, x));
        }
    }

    #[test]
    fn jacobian_vanishes_at_stationary_points() {
        let c = reference_coeffs();
        let j = gauss2_jacobian(&c, c.b1);
        assert_eq!(j[1], 0.0);
        assert_eq!(j[2], 0.0);

        let zero_amp = Gauss2Coefficients { a1: 0.0, ..c };
        let j = gauss2_jacobian(&zero_amp, 500.0);
        assert_eq!(j[1], 0.0);
        assert_eq!(j[2], 0.0);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let base = reference_coeffs();
        for _ in 0..100 {
            let x: f64 = rng.random_range(-200.0..2200.0);
            let p = base.to_array();
            let analytic = gauss2_jacobian(&base, x);
            for i in 0..6 {
                let h = 1e-5 * p[i].abs().max(1.0);
                let mut plus = p;
                let mut minus = p;
                plus[i] += h;
                minus[i] -= h;
                let fd = (eval_gauss2(&Gauss2Coefficients::from_array(plus), x)
                    - eval_gauss2(&Gauss2Coefficients::from_array(minus), x))
                    / (2.0 * h);
                // Cancellation noise in the central difference is about
                // eps*|f|/h ~ 2e-10 here, so the denominator is floored to
                // keep the 1e-6 bound meaningful for tiny derivatives.
                let denom = (analytic[i].abs() + fd.abs()).max(1e-3);
                assert!(
                    ((analytic[i] - fd) / denom).abs() < 1e-6,
                    "param {i} at x={x}: analytic {} vs fd {}",
                    analytic[i],
                    fd
                );
            }
        }
    }

    fn perturbed(c: &Gauss2Coefficients, rng: &mut ChaCha8Rng, frac: f64) -> Gauss2Coefficients {
        let p = c.to_array().map(|v| v * (1.0 + rng.random_range(-frac..frac)));
        Gauss2Coefficients::from_array(p)
    }

    #[test]
    fn noiseless_refit_recovers_the_curve() {
        let truth = reference_coeffs();
        let samples: Vec<(f64, f64)> =
            (0..2000).map(|i| (i as f64, eval_gauss2(&truth, i as f64))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let init = perturbed(&truth, &mut rng, 0.2);
        let report = fit_gauss2(&samples, Some(init)).unwrap();
        assert!(report.converged, "fit must converge");
        assert!(report.rmse <= 1e-6, "rmse {} too large", report.rmse);
        assert!(report.coefficients.c1 > 0.0 && report.coefficients.c2 > 0.0);
        assert!(report.coefficients.a1 >= report.coefficients.a2);
    }

    #[test]
    fn noisy_fit_lands_in_the_reported_regime() {
        let truth = reference_coeffs();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.08).unwrap();
        let samples: Vec<(f64, f64)> = (0..2000)
            .map(|i| (i as f64, eval_gauss2(&truth, i as f64) + noise.sample(&mut rng)))
            .collect();
        let init = perturbed(&truth, &mut rng, 0.2);
        let report = fit_gauss2(&samples, Some(init)).unwrap();
        assert!(report.rmse > 0.05 && report.rmse < 0.11, "rmse {}", report.rmse);
        assert!(report.r_squared >= 0.98, "r^2 {}", report.r_squared);
    }

    #[test]
    fn auto_init_fit_reaches_a_tight_approximation() {
        // The 6-parameter model has several basins; the heuristic is only
        // required to land in one that approximates the profile well.
        let truth = reference_coeffs();
        let samples: Vec<(f64, f64)> =
            (0..2000).map(|i| (i as f64, eval_gauss2(&truth, i as f64))).collect();
        let report = fit_gauss2(&samples, None).unwrap();
        assert!(report.rmse < 0.1, "auto-init rmse {}", report.rmse);
        assert!(report.r_squared > 0.999, "auto-init r^2 {}", report.r_squared);
    }

    #[test]
    fn constant_samples_flag_undefined_r_squared() {
        let samples: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, 4.2)).collect();
        let report = fit_gauss2(&samples, None).unwrap();
        assert!(report.rmse >= 0.0);
        assert!(report.r_squared <= 0.0, "degenerate data must be flagged");
    }

    #[test]
    fn too_few_samples_is_a_configuration_error() {
        let samples: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, i as f64)).collect();
        match fit_gauss2(&samples, None) {
            Err(Error::Config(_)) => {}
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn accepted_steps_never_increase_ssr() {
        let truth = reference_coeffs();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.08).unwrap();
        let samples: Vec<(f64, f64)> = (0..500)
            .map(|i| (4.0 * i as f64, eval_gauss2(&truth, 4.0 * i as f64) + noise.sample(&mut rng)))
            .collect();
        let init = perturbed(&truth, &mut rng, 0.2);
        let mut history = Vec::new();
        fit_impl(&samples, Some(init), Some(&mut history)).unwrap();
        assert!(history.len() > 1);
        for w in history.windows(2) {
            assert!(w[1] <= w[0], "ssr increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn r_squared_formula_cases() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&[1.0, 2.0, 5.0], &[1.0, 2.0, 3.0]).unwrap(), -1.0);
        match r_squared(&[1.0, 2.0], &[3.0, 3.0]) {
            Err(Error::UndefinedMetric(_)) => {}
            other => panic!("expected UndefinedMetric, got {other:?}"),
        }
        assert!(matches!(r_squared(&[], &[]), Err(Error::Config(_))));
    }
}
