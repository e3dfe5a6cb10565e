//! Synthetic first-order thermal plant.
//!
//! Each joint motor is modeled as a lumped RC stage with Joule heating
//! proportional to torque squared:
//!
//! ```text
//! dT/dt = (k * tau^2 - (T - T_amb) / R) / C
//! ```
//!
//! The ODE is linear with piecewise-constant input, so every sampling
//! interval is integrated with the exact exponential step
//! `T_next = T_eq + (T - T_eq) * exp(-dt / (R*C))` where
//! `T_eq = T_amb + R * k * tau^2`. There is no integrator error to confound
//! downstream learning experiments.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lumped thermal parameters of one joint motor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalPlantParams {
    /// Thermal resistance to ambient, K per W.
    pub thermal_resistance: f64,
    /// Thermal capacitance, J per K.
    pub thermal_capacitance: f64,
    /// Joule heating coefficient, W per (N*m)^2.
    pub heating_coefficient: f64,
    /// Ambient temperature, degrees C.
    pub ambient_temperature: f64,
}

impl ThermalPlantParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = self.thermal_resistance.is_finite()
            && self.thermal_capacitance.is_finite()
            && self.heating_coefficient.is_finite()
            && self.ambient_temperature.is_finite();
        if !all_finite {
            return Err(Error::config("plant parameters must be finite"));
        }
        if self.thermal_resistance <= 0.0 || self.thermal_capacitance <= 0.0 {
            return Err(Error::config(
                "thermal resistance and capacitance must be positive",
            ));
        }
        if self.heating_coefficient < 0.0 {
            return Err(Error::config("heating coefficient must be non-negative"));
        }
        Ok(())
    }

    /// Thermal time constant R*C in seconds.
    pub fn time_constant(&self) -> f64 {
        self.thermal_resistance * self.thermal_capacitance
    }

    /// Default 7-joint parameter set. Joints 2 and 4 carry the largest
    /// heating coefficients, so they exhibit the highest temperature rises.
    pub fn default_joints() -> Vec<ThermalPlantParams> {
        const R: [f64; 7] = [2.0, 2.2, 1.8, 2.1, 1.9, 1.7, 1.6];
        const C: [f64; 7] = [120.0, 150.0, 110.0, 140.0, 100.0, 90.0, 80.0];
        const K: [f64; 7] = [0.20, 0.55, 0.25, 0.50, 0.22, 0.18, 0.15];
        (0..7)
            .map(|j| ThermalPlantParams {
                thermal_resistance: R[j],
                thermal_capacitance: C[j],
                heating_coefficient: K[j],
                ambient_temperature: 22.0,
            })
            .collect()
    }
}

/// Sampled multi-joint torque profile, N*m.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueTrace {
    /// Sampling interval, seconds.
    pub dt: f64,
    /// One torque vector per sample; all vectors share the joint count.
    pub values: Vec<Vec<f64>>,
}

impl TorqueTrace {
    pub fn joints(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.values.is_empty() {
            return Err(Error::config("torque trace is empty"));
        }
        let joints = self.joints();
        for (i, v) in self.values.iter().enumerate() {
            if v.len() != joints {
                return Err(Error::config(format!(
                    "torque sample {} has {} joints, expected {}",
                    i,
                    v.len(),
                    joints
                )));
            }
            if let Some(bad) = v.iter().find(|t| !t.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite torque {} at sample {}",
                    bad, i
                )));
            }
        }
        Ok(())
    }
}

/// Sampled multi-joint temperature response, degrees C.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureTrace {
    /// Sampling interval, seconds. Equals the generating torque trace's dt.
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
}

impl TemperatureTrace {
    pub fn joints(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Equilibrium temperature under constant torque: `T_amb + R * k * tau^2`.
pub fn steady_state_temperature(params: &ThermalPlantParams, torque: f64) -> Result<f64> {
    params.validate()?;
    if !torque.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite torque {torque}")));
    }
    Ok(params.ambient_temperature
        + params.thermal_resistance * params.heating_coefficient * torque * torque)
}

/// Integrates the plant over a torque trace.
///
/// Sample `i` of the result is the temperature after torque sample `i` has
/// acted for one interval `dt`. Torque is held constant within each interval,
/// which makes the exponential step exact.
pub fn simulate_plant(
    params: &[ThermalPlantParams],
    torques: &TorqueTrace,
    initial: &[f64],
) -> Result<TemperatureTrace> {
    torques.validate()?;
    let joints = torques.joints();
    if params.len() != joints {
        return Err(Error::config(format!(
            "{} plant parameter sets for {} joints",
            params.len(),
            joints
        )));
    }
    if initial.len() != joints {
        return Err(Error::config(format!(
            "{} initial temperatures for {} joints",
            initial.len(),
            joints
        )));
    }
    for p in params {
        p.validate()?;
    }
    if let Some(bad) = initial.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite initial temperature {bad}")));
    }

    let decay: Vec<f64> = params.iter().map(|p| (-torques.dt / p.time_constant()).exp()).collect();
    let mut state = initial.to_vec();
    let mut values = Vec::with_capacity(torques.len());
    for sample in &torques.values {
        for j in 0..joints {
            let p = &params[j];
            let t_eq = p.ambient_temperature
                + p.thermal_resistance * p.heating_coefficient * sample[j] * sample[j];
            state[j] = t_eq + (state[j] - t_eq) * decay[j];
        }
        values.push(state.clone());
    }
    Ok(TemperatureTrace { dt: torques.dt, values })
}

/// Shape family of a generated torque profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// Zero, then a constant plateau at the full amplitude.
    Step,
    /// Ramp up, hold, ramp down.
    Trapezoid,
    /// Bounded Gaussian random walk.
    RandomWalk,
    /// Sum of a few seeded sinusoids.
    SineMix,
    /// Several regimes with distinct load levels and modulations. Default.
    Composite,
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(ProfileKind::Step),
            "trapezoid" => Ok(ProfileKind::Trapezoid),
            "random-walk" => Ok(ProfileKind::RandomWalk),
            "sine-mix" => Ok(ProfileKind::SineMix),
            "composite" => Ok(ProfileKind::Composite),
            other => Err(Error::config(format!(
                "unknown profile kind '{other}' (expected step, trapezoid, random-walk, sine-mix or composite)"
            ))),
        }
    }
}

/// Generates a deterministic multi-joint torque profile.
///
/// Each joint draws its own sub-seed from the master stream, so joints get
/// independent but reproducible profiles. `|torque| <= amplitude` holds for
/// every sample.
pub fn generate_torque_profile(
    kind: ProfileKind,
    seed: u64,
    duration: f64,
    dt: f64,
    amplitude: f64,
    joints: usize,
) -> Result<TorqueTrace> {
    if !(dt > 0.0) || !(duration > dt) {
        return Err(Error::config(format!(
            "profile needs duration > dt > 0, got duration={duration}, dt={dt}"
        )));
    }
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(Error::config(format!("amplitude must be non-negative, got {amplitude}")));
    }
    if joints == 0 {
        return Err(Error::config("joint count must be at least 1"));
    }
    let n = (duration / dt).floor() as usize;
    let n = n.max(2);

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(joints);
    for _ in 0..joints {
        let sub_seed: u64 = master.random();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
        channels.push(generate_channel(kind, &mut rng, n, amplitude));
    }

    // Transpose channel-major to sample-major.
    let values = (0..n).map(|i| channels.iter().map(|c| c[i]).collect()).collect();
    Ok(TorqueTrace { dt, values })
}

fn generate_channel(kind: ProfileKind, rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    match kind {
        ProfileKind::Step => {
            let at = rng.random_range(n / 5..=n / 2).max(1);
            (0..n).map(|i| if i < at { 0.0 } else { amp }).collect()
        }
        ProfileKind::Trapezoid => {
            let rise = ((n as f64) * rng.random_range(0.05..0.15)).ceil() as usize;
            let hold = ((n as f64) * rng.random_range(0.30..0.50)).ceil() as usize;
            let fall = ((n as f64) * rng.random_range(0.05..0.15)).ceil() as usize;
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let v = if i < rise {
                    amp * i as f64 / rise as f64
                } else if i < rise + hold {
                    amp
                } else if i < rise + hold + fall {
                    amp * (1.0 - (i - rise - hold) as f64 / fall as f64)
                } else {
                    0.0
                };
                out.push(v);
            }
            out
        }
        ProfileKind::RandomWalk => {
            let step = Normal::new(0.0, amp / 40.0).expect("valid std");
            let mut x = 0.0f64;
            (0..n)
                .map(|_| {
                    x = (x + step.sample(rng)).clamp(-amp, amp);
                    x
                })
                .collect()
        }
        ProfileKind::SineMix => {
            let mut comps = Vec::new();
            let mut weight_sum = 0.0;
            for _ in 0..3 {
                let w: f64 = rng.random_range(0.2..1.0);
                let cycles: f64 = rng.random_range(0.5..8.0);
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                weight_sum += w;
                comps.push((w, cycles, phase));
            }
            (0..n)
                .map(|i| {
                    let t = i as f64 / n as f64;
                    let mut v = 0.0;
                    for &(w, cycles, phase) in &comps {
                        v += w * (std::f64::consts::TAU * cycles * t + phase).sin();
                    }
                    amp * v / weight_sum
                })
                .collect()
        }
        ProfileKind::Composite => composite_channel(rng, n, amp),
    }
}

/// Regime-switching profile: 3..=6 segments whose base levels jump by at
/// least amp/4 at every boundary, each overlaid with a seeded modulation.
fn composite_channel(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    let segments = rng.random_range(3..=6usize);
    // Jittered segment lengths that sum to n.
    let weights: Vec<f64> = (0..segments).map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut lengths: Vec<usize> =
        weights.iter().map(|w| ((w / wsum) * n as f64).floor() as usize).collect();
    let assigned: usize = lengths.iter().sum();
    lengths[0] += n - assigned;

    let mut out = Vec::with_capacity(n);
    let mut level: f64 = rng.random_range(-0.5..0.5) * amp;
    for (s, &len) in lengths.iter().enumerate() {
        if s > 0 {
            // Move away from the previous level by at least amp/4, staying
            // inside +-0.7*amp so modulation cannot clip the jump away.
            let delta = rng.random_range(0.25..0.5) * amp;
            let up_ok = level + delta <= 0.7 * amp;
            let down_ok = level - delta >= -0.7 * amp;
            let go_up = match (up_ok, down_ok) {
                (true, true) => rng.random::<bool>(),
                (true, false) => true,
                _ => false,
            };
            level += if go_up { delta } else { -delta };
        }
        let modulation = rng.random_range(0..4u32);
        match modulation {
            0 => out.extend(std::iter::repeat(level).take(len)),
            1 => {
                let m_amp = rng.random_range(0.05..0.25) * amp;
                let cycles: f64 = rng.random_range(1.0..4.0);
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                for i in 0..len {
                    let t = i as f64 / len.max(1) as f64;
                    out.push(level + m_amp * (std::f64::consts::TAU * cycles * t + phase).sin());
                }
            }
            2 => {
                let step = Normal::new(0.0, amp / 80.0).expect("valid std");
                let mut x = 0.0f64;
                for _ in 0..len {
                    x = (x + step.sample(rng)).clamp(-0.25 * amp, 0.25 * amp);
                    out.push(level + x);
                }
            }
            _ => {
                let drift = rng.random_range(-0.2..0.2) * amp;
                for i in 0..len {
                    let t = i as f64 / len.max(1) as f64;
                    out.push(level + drift * t);
                }
            }
        }
    }
    for v in &mut out {
        *v = v.clamp(-amp, amp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(r: f64, c: f64, k: f64, amb: f64) -> ThermalPlantParams {
        ThermalPlantParams {
            thermal_resistance: r,
            thermal_capacitance: c,
            heating_coefficient: k,
            ambient_temperature: amb,
        }
    }

    fn constant_trace(torque: f64, joints: usize, n: usize, dt: f64) -> TorqueTrace {
        TorqueTrace { dt, values: vec![vec![torque; joints]; n] }
    }

    #[test]
    fn equilibrium_stays_exactly_ambient() {
        let p = vec![single(2.0, 100.0, 0.5, 22.0)];
        let out = simulate_plant(&p, &constant_trace(0.0, 1, 50, 1.0), &[22.0]).unwrap();
        for v in &out.values {
            assert_eq!(v[0], 22.0);
        }
    }

    #[test]
    fn pure_cooling_is_strictly_decreasing_toward_ambient() {
        let p = vec![single(2.0, 100.0, 0.5, 22.0)];
        let out = simulate_plant(&p, &constant_trace(0.0, 1, 2000, 1.0), &[40.0]).unwrap();
        let mut prev = 40.0;
        for v in &out.values {
            assert!(v[0] < prev, "sequence must strictly decrease");
            assert!(v[0] > 22.0, "bounded below by ambient");
            prev = v[0];
        }
        // t = 2000 s is 10 time constants: within a millikelvin of ambient.
        assert!((out.values.last().unwrap()[0] - 22.0).abs() < 1e-3);
    }

    #[test]
    fn long_run_approaches_closed_form_steady_state() {
        // dT/dt = 0  =>  T_ss = T_amb + R*k*tau^2 = 22 + 2*0.5*9 = 31.
        let p = vec![single(2.0, 100.0, 0.5, 22.0)];
        let out = simulate_plant(&p, &constant_trace(3.0, 1, 5000, 1.0), &[22.0]).unwrap();
        let last = out.values.last().unwrap()[0];
        assert!((last - 31.0).abs() < 1e-6, "got {last}");
    }

    #[test]
    fn steady_state_closed_form() {
        let p = single(2.0, 100.0, 0.5, 22.0);
        assert_eq!(steady_state_temperature(&p, 0.0).unwrap(), 22.0);
        assert!((steady_state_temperature(&p, 3.0).unwrap() - 31.0).abs() < 1e-12);
        assert_eq!(
            steady_state_temperature(&p, 3.0).unwrap(),
            steady_state_temperature(&p, -3.0).unwrap()
        );
    }

    #[test]
    fn exponential_step_matches_analytic_solution() {
        // Constant torque: T(t) = T_eq + (T0 - T_eq) * exp(-t/(R*C)).
        let p = single(1.7, 90.0, 0.3, 21.0);
        let tau = 2.4;
        let t0 = 25.0;
        let dt = 0.5;
        let n = 10_000;
        let out = simulate_plant(&[p], &constant_trace(tau, 1, n, dt), &[t0]).unwrap();
        let t_eq = 21.0 + 1.7 * 0.3 * tau * tau;
        let rc = p.time_constant();
        let mut max_err = 0.0f64;
        for (i, v) in out.values.iter().enumerate() {
            let t = (i + 1) as f64 * dt;
            let analytic = t_eq + (t0 - t_eq) * (-t / rc).exp();
            max_err = max_err.max((v[0] - analytic).abs());
        }
        assert!(max_err < 1e-9, "max integration error {max_err}");
    }

    #[test]
    fn heating_is_invariant_under_torque_sign_flip() {
        let p = ThermalPlantParams::default_joints();
        let fwd = generate_torque_profile(ProfileKind::Composite, 11, 300.0, 1.0, 3.0, 7).unwrap();
        let mut flipped = fwd.clone();
        for v in &mut flipped.values {
            for t in v.iter_mut() {
                *t = -*t;
            }
        }
        let init = vec![22.0; 7];
        let a = simulate_plant(&p, &fwd, &init).unwrap();
        let b = simulate_plant(&p, &flipped, &init).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn doubling_heating_coefficient_doubles_steady_rise() {
        let p = single(2.0, 100.0, 0.31, 22.0);
        let mut p2 = p;
        p2.heating_coefficient *= 2.0;
        let rise = steady_state_temperature(&p, 2.5).unwrap() - 22.0;
        let rise2 = steady_state_temperature(&p2, 2.5).unwrap() - 22.0;
        assert!((rise2 - 2.0 * rise).abs() < 1e-12);
    }

    #[test]
    fn step_profile_is_zero_then_amplitude() {
        let trace = generate_torque_profile(ProfileKind::Step, 3, 200.0, 1.0, 1.8, 7).unwrap();
        for j in 0..7 {
            let channel: Vec<f64> = trace.values.iter().map(|v| v[j]).collect();
            let at = channel.iter().position(|&v| v != 0.0).expect("step must occur");
            assert!(channel[..at].iter().all(|&v| v == 0.0));
            assert!(channel[at..].iter().all(|&v| v == 1.8));
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_traces() {
        for kind in [
            ProfileKind::Step,
            ProfileKind::Trapezoid,
            ProfileKind::RandomWalk,
            ProfileKind::SineMix,
            ProfileKind::Composite,
        ] {
            let a = generate_torque_profile(kind, 42, 120.0, 0.5, 2.0, 7).unwrap();
            let b = generate_torque_profile(kind, 42, 120.0, 0.5, 2.0, 7).unwrap();
            assert_eq!(a, b);
        }
    }

    /// Oracle: scan a windowed mean for jumps larger than amp/8 to count
    /// regime boundaries independently of the generator's internals.
    fn count_regime_changes(channel: &[f64], amp: f64) -> usize {
        let w = 10;
        let mut changes = 0;
        let mut i = w;
        while i + w <= channel.len() {
            let before: f64 = channel[i - w..i].iter().sum::<f64>() / w as f64;
            let after: f64 = channel[i..i + w].iter().sum::<f64>() / w as f64;
            if (after - before).abs() > amp / 8.0 {
                changes += 1;
                i += w; // skip past this boundary
            }
            i += 1;
        }
        changes
    }

    #[test]
    fn composite_profile_has_variance_and_regime_changes() {
        let amp = 3.0;
        let trace = generate_torque_profile(ProfileKind::Composite, 7, 600.0, 1.0, amp, 7).unwrap();
        for j in 0..7 {
            let channel: Vec<f64> = trace.values.iter().map(|v| v[j]).collect();
            let mean = channel.iter().sum::<f64>() / channel.len() as f64;
            let var = channel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / channel.len() as f64;
            assert!(var > 0.0, "joint {j} variance must be positive");
            let changes = count_regime_changes(&channel, amp);
            assert!(changes >= 2, "joint {j} saw only {changes} regime changes");
        }
    }

    #[test]
    fn amplitude_bounds_hold_for_all_kinds() {
        for kind in [
            ProfileKind::Step,
            ProfileKind::Trapezoid,
            ProfileKind::RandomWalk,
            ProfileKind::SineMix,
            ProfileKind::Composite,
        ] {
            for seed in 0..5 {
                let t = generate_torque_profile(kind, seed, 150.0, 1.0, 2.5, 3).unwrap();
                for v in &t.values {
                    for &x in v {
                        assert!(x.abs() <= 2.5 + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn non_finite_torque_is_rejected() {
        let p = vec![single(2.0, 100.0, 0.5, 22.0)];
        let trace = TorqueTrace { dt: 1.0, values: vec![vec![f64::NAN]] };
        match simulate_plant(&p, &trace, &[22.0]) {
            Err(Error::InvalidInput(_)) => {}
            other => panic!("expected InvalidInput, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_dt_is_a_configuration_error() {
        let p = vec![single(2.0, 100.0, 0.5, 22.0)];
        let trace = TorqueTrace { dt: 0.0, values: vec![vec![1.0]] };
        match simulate_plant(&p, &trace, &[22.0]) {
            Err(Error::Config(_)) => {}
            other => panic!("expected Config, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_string_is_a_configuration_error() {
        match "sawtooth".parse::<ProfileKind>() {
            Err(Error::Config(_)) => {}
            other => panic!("expected Config, got {other:?}"),
        }
    }

    #[test]
    fn default_joints_make_two_and_four_hottest() {
        let params = ThermalPlantParams::default_joints();
        let rises: Vec<f64> = params
            .iter()
            .map(|p| steady_state_temperature(p, 3.0).unwrap() - p.ambient_temperature)
            .collect();
        let mut order: Vec<usize> = (0..7).collect();
        order.sort_by(|&a, &b| rises[b].partial_cmp(&rises[a]).unwrap());
        assert_eq!(&order[..2], &[1, 3], "joints 2 and 4 (0-based 1 and 3) must lead the rise");
    }
}
