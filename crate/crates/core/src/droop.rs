//! Voltage-active-power droop, the power-measurement filter, and the P-V/Q-f baseline.

use core::f64::consts::{PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopParams {
    /// n_k, V/W. Zero disables droop.
    pub droop_coefficient: f64,
    /// P*_k, W.
    pub active_power_reference: f64,
    /// E*, peak volts.
    pub nominal_voltage: f64,
    /// omega_P, rad/s.
    pub power_filter_bandwidth: f64,
}

impl DroopParams {
    pub fn new(droop_coefficient: f64, active_power_reference: f64, nominal_voltage: f64) -> Self {
        DroopParams { droop_coefficient, active_power_reference, nominal_voltage, power_filter_bandwidth: TAU }
    }

    /// Domain checks that do not depend on the inner loop.
    pub fn validate_basic(&self) -> Result<()> {
        if !(self.droop_coefficient >= 0.0) || !self.droop_coefficient.is_finite() {
            return Err(Error::domain("droop coefficient must be non-negative"));
        }
        if !(self.power_filter_bandwidth > 0.0) || !self.power_filter_bandwidth.is_finite() {
            return Err(Error::domain("power filter bandwidth must be positive"));
        }
        if !(self.nominal_voltage > 0.0) || !self.active_power_reference.is_finite() {
            return Err(Error::domain("nominal voltage must be positive and the power reference finite"));
        }
        Ok(())
    }

    /// Full check including separation from the voltage loop (`omega_P < bandwidth / 50`).
    pub fn validate(&self, voltage_loop_bandwidth: f64) -> Result<()> {
        self.validate_basic()?;
        if !(self.power_filter_bandwidth < voltage_loop_bandwidth / 50.0) {
            return Err(Error::domain("power filter bandwidth must be below 1/50 of the voltage-loop bandwidth"));
        }
        Ok(())
    }

    pub fn clamp(&self, e: f64) -> f64 {
        e.max(0.5 * self.nominal_voltage).min(1.5 * self.nominal_voltage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopState {
    pub filtered_active_power: f64,
    pub commanded_magnitude: f64,
}

impl DroopState {
    /// Filter at `P*` and magnitude at `E*`.
    pub fn nominal(params: &DroopParams) -> Self {
        DroopState { filtered_active_power: params.active_power_reference, commanded_magnitude: params.nominal_voltage }
    }
}

/// Exact zero-order-hold update of the first-order power filter; also refreshes the commanded
/// magnitude.
pub fn power_filter_step(state: DroopState, instantaneous_power: f64, dt: f64, params: &DroopParams) -> DroopState {
    debug_assert!(dt > 0.0 && dt * params.power_filter_bandwidth < 0.1);
    let a = -(-dt * params.power_filter_bandwidth).exp_m1();
    let p = state.filtered_active_power + a * (instantaneous_power - state.filtered_active_power);
    let mut next = DroopState { filtered_active_power: p, commanded_magnitude: state.commanded_magnitude };
    next.commanded_magnitude = vpd_voltage(&next, params);
    next
}

/// `E* - n (P - P*)` before clamping.
pub fn vpd_voltage_unclamped(filtered_active_power: f64, params: &DroopParams) -> f64 {
    params.nominal_voltage - params.droop_coefficient * (filtered_active_power - params.active_power_reference)
}

pub fn vpd_voltage(state: &DroopState, params: &DroopParams) -> f64 {
    params.clamp(vpd_voltage_unclamped(state.filtered_active_power, params))
}

pub fn reference_voltage(state: &DroopState, clock_phase: f64) -> f64 {
    state.commanded_magnitude * clock_phase.sin()
}

/// Q-f part of the baseline architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QfDroopParams {
    /// m_k, rad/s per var.
    pub q_droop_coefficient: f64,
    /// Q*_k, var.
    pub reactive_power_reference: f64,
}

impl QfDroopParams {
    /// Rated reactive power moves the frequency by 0.5 Hz.
    pub fn for_rating(rated_apparent_power: f64) -> Self {
        QfDroopParams { q_droop_coefficient: 2.0 * PI * 0.5 / rated_apparent_power, reactive_power_reference: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_droop_coefficient > 0.0) || !self.reactive_power_reference.is_finite() {
            return Err(Error::domain("Q-f droop coefficient must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullDroopParams {
    pub base: DroopParams,
    pub qf: QfDroopParams,
    /// omega*, rad/s.
    pub nominal_frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullDroopState {
    pub droop: DroopState,
    pub filtered_reactive_power: f64,
    /// Locally integrated phase in [0, 2 pi).
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullDroopOutput {
    pub state: FullDroopState,
    /// E_k, peak volts.
    pub magnitude: f64,
    /// omega_k, rad/s.
    pub frequency: f64,
    pub accumulated_phase: f64,
}

/// One step of the baseline: filter `p` and `q`, apply `E = E* - n (P - P*)` and
/// `omega = omega* + m (Q - Q*)`, then integrate the phase.
///
/// The sign suits resistive lines, where a leading phase makes an inverter absorb reactive
/// power; raising the frequency with `Q` pulls it back.
pub fn full_droop_update(state: &FullDroopState, p: f64, q: f64, dt: f64, params: &FullDroopParams) -> FullDroopOutput {
    let droop = power_filter_step(state.droop, p, dt, &params.base);
    let a = -(-dt * params.base.power_filter_bandwidth).exp_m1();
    let qf = state.filtered_reactive_power + a * (q - state.filtered_reactive_power);
    let frequency = params.nominal_frequency + params.qf.q_droop_coefficient * (qf - params.qf.reactive_power_reference);
    let phase = crate::clock::wrap_tau(state.phase + frequency * dt);
    let next = FullDroopState { droop, filtered_reactive_power: qf, phase };
    FullDroopOutput { state: next, magnitude: droop.commanded_magnitude, frequency, accumulated_phase: phase }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n: f64, p_ref: f64) -> DroopParams {
        DroopParams::new(n, p_ref, 169.7)
    }

    #[test]
    fn filter_step_response_matches_closed_form() {
        let p = params(0.0, 0.0);
        let dt = 1e-5;
        let mut s = DroopState { filtered_active_power: 0.0, commanded_magnitude: 169.7 };
        for _ in 0..100_000 {
            s = power_filter_step(s, 100.0, dt, &p);
        }
        let want = 100.0 * (1.0 - (-TAU * 1.0).exp());
        assert!((s.filtered_active_power - want).abs() < 1e-9, "{}", s.filtered_active_power);
        assert!((want - 99.81).abs() < 0.01);
    }

    #[test]
    fn filter_fixed_point() {
        let p = params(0.01, 250.0);
        let s = DroopState { filtered_active_power: 42.0, commanded_magnitude: 0.0 };
        assert_eq!(power_filter_step(s, 42.0, 1e-5, &p).filtered_active_power, 42.0);
    }

    #[test]
    fn filter_attenuates_double_frequency_ripple() {
        let p = params(0.0, 0.0);
        let dt = 1e-5;
        let w2 = 2.0 * 2.0 * PI * 60.0;
        let mut s = DroopState { filtered_active_power: 0.0, commanded_magnitude: 0.0 };
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for k in 0..400_000 {
            let t = k as f64 * dt;
            s = power_filter_step(s, (w2 * t).sin(), dt, &p);
            if t > 3.0 {
                lo = lo.min(s.filtered_active_power);
                hi = hi.max(s.filtered_active_power);
            }
        }
        // |1 / (1 + j w / w_P)| at 2 w0.
        let want = 1.0 / (1.0 + (w2 / TAU).powi(2)).sqrt();
        let got = (hi - lo) / 2.0;
        assert!((got - want).abs() < 0.02 * want, "{got} vs {want}");
        assert!((want - 0.0083).abs() < 1e-4);
    }

    #[test]
    fn vpd_examples() {
        let p = params(2e-4, 250.0);
        let at = |pw: f64| vpd_voltage(&DroopState { filtered_active_power: pw, commanded_magnitude: 0.0 }, &p);
        assert_eq!(at(250.0), 169.7);
        assert!((at(600.0) - 169.63).abs() < 1e-12);
        let off = params(0.0, 250.0);
        assert_eq!(vpd_voltage(&DroopState { filtered_active_power: 1e6, commanded_magnitude: 0.0 }, &off), 169.7);
        // Clamp.
        let hard = params(1.0, 0.0);
        assert_eq!(vpd_voltage(&DroopState { filtered_active_power: 1e6, commanded_magnitude: 0.0 }, &hard), 0.5 * 169.7);
    }

    #[test]
    fn reference_examples() {
        let s = |e: f64| DroopState { filtered_active_power: 0.0, commanded_magnitude: e };
        assert_eq!(reference_voltage(&s(169.7), 0.0), 0.0);
        assert_eq!(reference_voltage(&s(169.7), PI / 2.0), 169.7);
        assert!((reference_voltage(&s(100.0), PI / 6.0) - 50.0).abs() < 1e-12);
    }

    fn full(m: f64) -> FullDroopParams {
        FullDroopParams {
            base: params(0.01, 250.0),
            qf: QfDroopParams { q_droop_coefficient: m, reactive_power_reference: 0.0 },
            nominal_frequency: 2.0 * PI * 60.0,
        }
    }

    #[test]
    fn full_droop_examples() {
        let p = full(1e-3);
        let st = FullDroopState { droop: DroopState::nominal(&p.base), filtered_reactive_power: 0.0, phase: 0.0 };
        let out = full_droop_update(&st, 250.0, 0.0, 1e-5, &p);
        assert_eq!(out.frequency, p.nominal_frequency);
        assert!((out.accumulated_phase - p.nominal_frequency * 1e-5).abs() < 1e-15);
        let st = FullDroopState { filtered_reactive_power: 100.0, ..st };
        let out = full_droop_update(&st, 250.0, 100.0, 1e-5, &p);
        assert!((out.frequency - p.nominal_frequency - 0.1).abs() < 1e-12);
        // Symmetric pair stays in phase.
        let (mut a, mut b) = (st, st);
        for k in 0..10_000 {
            let q = 30.0 * (k as f64 * 1e-3).sin();
            a = full_droop_update(&a, 200.0, q, 1e-5, &p).state;
            b = full_droop_update(&b, 200.0, q, 1e-5, &p).state;
            assert_eq!(a.phase, b.phase);
            assert!((0.0..TAU).contains(&a.phase));
        }
    }

    proptest! {
        #[test]
        fn droop_is_affine(pw in -1e3..1e3f64, dp in -1e3..1e3f64, n in 0.0..0.05f64, pr in 0.0..1e3f64) {
            let p = params(n, pr);
            let d = vpd_voltage_unclamped(pw + dp, &p) - vpd_voltage_unclamped(pw, &p);
            prop_assert!((d + n * dp).abs() <= 1e-9 * (1.0 + (n * dp).abs() + 169.7));
        }

        #[test]
        fn matched_droop_gains_equalize_magnitudes(ni in 1e-4..0.05f64, pi_ref in 10.0..1e3f64, pi in 0.0..1e3f64, ratio in 0.2..5.0f64) {
            // n_i (P*_i - P_i) = n_j (P*_j - P_j)
            let nj = ni * ratio;
            let pj_ref = 300.0;
            let pj = pj_ref - ni * (pi_ref - pi) / nj;
            let ei = vpd_voltage_unclamped(pi, &params(ni, pi_ref));
            let ej = vpd_voltage_unclamped(pj, &params(nj, pj_ref));
            prop_assert!((ei - ej).abs() < 1e-9);
        }

        #[test]
        fn filter_is_monotone(seq in proptest::collection::vec((-500.0..500.0f64, 0.0..100.0f64), 1..200)) {
            let p = params(0.0, 0.0);
            let mut a = DroopState { filtered_active_power: 0.0, commanded_magnitude: 0.0 };
            let mut b = a;
            for (x, extra) in seq {
                a = power_filter_step(a, x, 1e-4, &p);
                b = power_filter_step(b, x + extra, 1e-4, &p);
                prop_assert!(b.filtered_active_power >= a.filtered_active_power);
            }
        }
    }
}
