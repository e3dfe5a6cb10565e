//! Self-check suites behind the CLI `verify` command: the gradient-check
//! oracle, normalization round trips, and the plant integrator against its
//! closed forms. Each suite reports pass/fail with a one-line detail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{compute_norm_stats, denormalize, normalize, SIGMA_FLOOR};
use crate::error::Result;
use crate::mat::Mat;
use crate::plant::{simulate_plant, steady_state_temperature, ThermalPlantParams, TorqueTrace};
use crate::training::{gradient_check_suite, GradientCheckConfig};

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Finite-difference gradient oracle on the default small network, 5 seeds,
/// tolerance 1e-4.
pub fn gradient_suite() -> Result<SuiteResult> {
    let report = gradient_check_suite(&GradientCheckConfig::default(), &[0, 1, 2, 3, 4], 1e-4)?;
    Ok(SuiteResult {
        name: "gradient-check",
        passed: report.passed,
        detail: format!(
            "max relative error {:.3e} over {} seeds (tolerance {:.0e})",
            report.max_relative_error,
            report.per_seed.len(),
            report.tolerance
        ),
    })
}

/// normalize then denormalize must be the identity within 1e-12, and
/// freshly normalized columns must have mean ~0 and sigma ~1.
pub fn normalization_suite() -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1e);
    let mut worst_roundtrip = 0.0f64;
    let mut worst_moment = 0.0f64;
    for case in 0..20 {
        let rows = 20 + (case % 5) * 37;
        let cols = 1 + case % 7;
        let scale = 10f64.powi((case % 7) as i32 - 3);
        let m = Mat::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale));
        let stats = compute_norm_stats(&m)?;
        if stats.std.iter().any(|&s| s <= SIGMA_FLOOR) {
            continue;
        }
        let z = normalize(&m, &stats)?;
        let back = denormalize(&z, &stats)?;
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                worst_roundtrip =
                    worst_roundtrip.max((back.get(r, c) - m.get(r, c)).abs() / scale.max(1.0));
            }
        }
        let zstats = compute_norm_stats(&z)?;
        for c in 0..cols {
            worst_moment = worst_moment.max(zstats.mean[c].abs());
            worst_moment = worst_moment.max((zstats.std[c] - 1.0).abs());
        }
    }
    let passed = worst_roundtrip < 1e-12 && worst_moment < 1e-9;
    Ok(SuiteResult {
        name: "normalization-roundtrip",
        passed,
        detail: format!(
            "max round-trip error {worst_roundtrip:.3e} (tol 1e-12), max moment deviation {worst_moment:.3e} (tol 1e-9)"
        ),
    })
}

/// Exponential stepping against the analytic constant-torque solution and
/// the closed-form steady state.
pub fn plant_suite() -> Result<SuiteResult> {
    let params = ThermalPlantParams {
        thermal_resistance: 1.9,
        thermal_capacitance: 115.0,
        heating_coefficient: 0.4,
        ambient_temperature: 22.0,
    };
    let tau = 2.7;
    let t0 = 26.0;
    let dt = 0.5;
    let n = 10_000;
    let trace = TorqueTrace { dt, values: vec![vec![tau]; n] };
    let out = simulate_plant(&[params], &trace, &[t0])?;
    let t_eq = steady_state_temperature(&params, tau)?;
    let rc = params.time_constant();
    let mut max_err = 0.0f64;
    for (i, v) in out.values.iter().enumerate() {
        let t = (i + 1) as f64 * dt;
        let analytic = t_eq + (t0 - t_eq) * (-t / rc).exp();
        max_err = max_err.max((v[0] - analytic).abs());
    }
    let ss_expected = 22.0 + 1.9 * 0.4 * tau * tau;
    let ss_err = (t_eq - ss_expected).abs();
    let passed = max_err < 1e-9 && ss_err < 1e-12;
    Ok(SuiteResult {
        name: "plant-closed-form",
        passed,
        detail: format!(
            "integrator error {max_err:.3e} over {n} steps (tol 1e-9), steady-state error {ss_err:.3e} (tol 1e-12)"
        ),
    })
}

/// Runs every suite in order.
pub fn run_all() -> Result<Vec<SuiteResult>> {
    Ok(vec![gradient_suite()?, normalization_suite()?, plant_suite()?])
}
