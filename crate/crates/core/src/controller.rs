//! Inner voltage/current loop: transfer functions, closed-loop blocks, internal-model check,
//! and realizations for simulation.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::net::InverterElectrical;
use crate::poly;

/// Nominal grid frequency used by the shipped controllers.
pub const OMEGA_60HZ: f64 = 2.0 * PI * 60.0;

/// Proportional gain of the shipped voltage controller, S (see [`default_controllers`]).
pub const VOLTAGE_CONTROLLER_GAIN: f64 = 0.01;
/// Resonant gain of the shipped voltage controller, S/s.
pub const VOLTAGE_CONTROLLER_RESONANT_GAIN: f64 = 3.0;
/// Roll-off pole of the shipped voltage controller, rad/s.
pub const VOLTAGE_CONTROLLER_ROLLOFF: f64 = 2.0 * PI * 2.0e3;

#[derive(Debug, Clone, PartialEq)]
pub struct RationalTransferFunction {
    /// Descending powers of s.
    pub numerator_coefficients: Vec<f64>,
    pub denominator_coefficients: Vec<f64>,
}

impl RationalTransferFunction {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        let den = poly::trim(&denominator);
        if den[0] == 0.0 {
            return Err(Error::invalid("denominator must not be identically zero"));
        }
        if numerator.is_empty() || numerator.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(Error::invalid("transfer function coefficients must be finite and non-empty"));
        }
        Ok(RationalTransferFunction { numerator_coefficients: poly::trim(&numerator), denominator_coefficients: den })
    }

    /// `gain * prod(s - z) / prod(s - p)`; complex roots must come in conjugate pairs.
    pub fn from_zpk(zeros: &[Complex64], poles: &[Complex64], gain: f64) -> Self {
        RationalTransferFunction {
            numerator_coefficients: poly::scale(&poly::from_roots(zeros), gain),
            denominator_coefficients: poly::from_roots(poles),
        }
    }

    pub fn constant(k: f64) -> Self {
        RationalTransferFunction { numerator_coefficients: vec![k], denominator_coefficients: vec![1.0] }
    }

    pub fn is_proper(&self) -> bool {
        poly::degree(&self.numerator_coefficients) <= poly::degree(&self.denominator_coefficients)
    }

    pub fn zeros(&self) -> Result<Vec<Complex64>> {
        poly::roots(&self.numerator_coefficients)
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        poly::roots(&self.denominator_coefficients)
    }
}

/// Horner evaluation of `tf` at `s`.
pub fn evaluate(tf: &RationalTransferFunction, s: Complex64) -> Result<Complex64> {
    let den = poly::eval(&tf.denominator_coefficients, s);
    let scale = poly::eval_magnitude_bound(&tf.denominator_coefficients, s);
    if den.norm() <= 1e-12 * scale {
        return Err(Error::Unbounded("transfer function evaluated at a pole".into()));
    }
    Ok(poly::eval(&tf.numerator_coefficients, s) / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSet {
    pub voltage_controller: RationalTransferFunction,
    pub current_controller: RationalTransferFunction,
    pub virtual_resistance: f64,
}

fn factored_current_controller(omega0: f64) -> RationalTransferFunction {
    let num = poly::scale(&poly::mul(&[1.0, 1406.0], &[1.0, 222.0]), 38403.0);
    let den = poly::mul(&[1.0, 6468.0], &[1.0, 0.0, omega0 * omega0]);
    RationalTransferFunction { numerator_coefficients: num, denominator_coefficients: den }
}

fn voltage_controller_shape(omega0: f64) -> (Vec<f64>, Vec<f64>) {
    let num = [vec![1.0, 0.0], vec![1.0, 3139.0], vec![1.0, 1172.0], vec![1.0, 3328.0, 8.895e6]]
        .iter()
        .fold(vec![1.0], |acc, f| poly::mul(&acc, f));
    let den = [vec![1.0, 5390.0], vec![1.0, 1406.0], vec![1.0, 0.0, omega0 * omega0]]
        .iter()
        .fold(vec![1.0], |acc, f| poly::mul(&acc, f));
    (num, den)
}

/// The controller pair exactly as printed for the prototype. The voltage controller is
/// improper (degree 5 over 4), so it can be evaluated but not realized.
pub fn printed_controllers() -> ControllerSet {
    let (num, den) = voltage_controller_shape(OMEGA_60HZ);
    ControllerSet {
        voltage_controller: RationalTransferFunction {
            numerator_coefficients: poly::scale(&num, 1.0 / 1492.75),
            denominator_coefficients: den,
        },
        current_controller: factored_current_controller(OMEGA_60HZ),
        virtual_resistance: 0.2,
    }
}

/// Controllers used by default in simulation and small-signal analysis.
///
/// The current controller is the printed one. The voltage controller is a proportional-resonant
/// law with a roll-off, `(kp (s^2 + w0^2) + kr s) / (s^2 + w0^2) * wf / (s + wf)`. The printed
/// voltage controller is improper, and proper variants with its zeros and poles leave parallel
/// units with a slightly negative-resistance output in the few-hundred rad/s band, which makes
/// resistive interconnections oscillate.
pub fn default_controllers() -> ControllerSet {
    default_controllers_at(OMEGA_60HZ)
}

/// [`default_controllers`] with the resonant pairs moved to `omega0`.
pub fn default_controllers_at(omega0: f64) -> ControllerSet {
    let wf = VOLTAGE_CONTROLLER_ROLLOFF;
    let resonant = [1.0, 0.0, omega0 * omega0];
    let num = poly::add(&poly::scale(&resonant, VOLTAGE_CONTROLLER_GAIN), &[VOLTAGE_CONTROLLER_RESONANT_GAIN, 0.0]);
    ControllerSet {
        voltage_controller: RationalTransferFunction {
            numerator_coefficients: poly::scale(&num, wf),
            denominator_coefficients: poly::mul(&resonant, &[1.0, wf]),
        },
        current_controller: factored_current_controller(omega0),
        virtual_resistance: 0.2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopBlocks {
    /// Reference-to-voltage transfer (v = G v_ref - Z i).
    pub g: Complex64,
    /// Voltage-loop sensitivity.
    pub s: Complex64,
    /// Voltage-loop complementary sensitivity, `1 - s`.
    pub t: Complex64,
    /// Output impedance including the virtual-resistance drop.
    pub z: Complex64,
}

/// Closed loop of the LC filter with the cascaded controllers.
///
/// With `e_v = v_ref - R_v i - v`, `i_ref = K_vol e_v + i`, `v_inv = K_cur (i_ref - i_L) + v`:
/// `v = T (v_ref - R_v i) - Z_o i`, where `T = nc nv / D`,
/// `Z_o = (Ls + R) dc dv / D` and `D = ((Ls + R) dc + nc) C s dv + nc nv`.
pub fn closed_loop_blocks(plant: &InverterElectrical, ctrl: &ControllerSet, s: Complex64) -> Result<ClosedLoopBlocks> {
    let cv = &ctrl.voltage_controller;
    let cc = &ctrl.current_controller;
    let nv = poly::eval(&cv.numerator_coefficients, s);
    let dv = poly::eval(&cv.denominator_coefficients, s);
    let nc = poly::eval(&cc.numerator_coefficients, s);
    let dc = poly::eval(&cc.denominator_coefficients, s);
    let zl = s * plant.filter_inductance + plant.filter_esr;
    let inner = zl * dc + nc;
    let loop_part = inner * s * plant.filter_capacitance * dv;
    let forward = nc * nv;
    let d = loop_part + forward;
    let scale = loop_part.norm() + forward.norm();
    if d.norm() <= 1e-13 * scale || scale == 0.0 {
        return Err(Error::Unbounded("closed-loop blocks evaluated at a closed-loop pole".into()));
    }
    let t = forward / d;
    let s_blk = loop_part / d;
    let z_o = zl * dc * dv / d;
    Ok(ClosedLoopBlocks { g: t, s: s_blk, t, z: t * ctrl.virtual_resistance + z_o })
}

/// Polynomial form of [`closed_loop_blocks`] on the common denominator `characteristic`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopPolynomials {
    pub characteristic: Vec<f64>,
    pub reference_numerator: Vec<f64>,
    /// Numerator of `Z_o` (impedance without the virtual resistance).
    pub impedance_numerator: Vec<f64>,
}

pub fn closed_loop_polynomials(plant: &InverterElectrical, ctrl: &ControllerSet) -> ClosedLoopPolynomials {
    let cv = &ctrl.voltage_controller;
    let cc = &ctrl.current_controller;
    let zl = [plant.filter_inductance, plant.filter_esr];
    let inner = poly::add(&poly::mul(&zl, &cc.denominator_coefficients), &cc.numerator_coefficients);
    let loop_part = poly::mul(&poly::mul(&inner, &[plant.filter_capacitance, 0.0]), &cv.denominator_coefficients);
    let forward = poly::mul(&cc.numerator_coefficients, &cv.numerator_coefficients);
    ClosedLoopPolynomials {
        characteristic: poly::trim(&poly::add(&loop_part, &forward)),
        reference_numerator: forward,
        impedance_numerator: poly::mul(&poly::mul(&zl, &cc.denominator_coefficients), &cv.denominator_coefficients),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalModelCheck {
    pub satisfied: bool,
    /// Max-abs remainder of the voltage-controller denominator divided by s^2 + omega0^2,
    /// relative to its largest coefficient.
    pub residual: f64,
}

pub fn verify_internal_model(ctrl: &ControllerSet, omega0: f64) -> InternalModelCheck {
    let den = &ctrl.voltage_controller.denominator_coefficients;
    let scale = den.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let residual = match poly::divmod(den, &[1.0, 0.0, omega0 * omega0]) {
        Ok((_, r)) => r.iter().fold(0.0_f64, |m, c| m.max(c.abs())) / scale,
        Err(_) => f64::INFINITY,
    };
    InternalModelCheck { satisfied: residual < 1e-6, residual }
}

/// Closed-loop -3 dB bandwidths, Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopBandwidths {
    /// i_ref to i_L with the capacitor voltage fed forward.
    pub current_hz: f64,
    /// v_ref to v (open-circuit output).
    pub voltage_hz: f64,
}

/// Highest frequency where the closed-loop magnitude is still at or above 1/sqrt(2).
pub fn loop_bandwidths(plant: &InverterElectrical, ctrl: &ControllerSet) -> LoopBandwidths {
    let cc = &ctrl.current_controller;
    let current = |f: f64| {
        let s = Complex64::new(0.0, 2.0 * PI * f);
        let nc = poly::eval(&cc.numerator_coefficients, s);
        let dc = poly::eval(&cc.denominator_coefficients, s);
        let zl = s * plant.filter_inductance + plant.filter_esr;
        (nc / (zl * dc + nc)).norm()
    };
    let voltage = |f: f64| {
        closed_loop_blocks(plant, ctrl, Complex64::new(0.0, 2.0 * PI * f)).map(|b| b.g.norm()).unwrap_or(f64::INFINITY)
    };
    LoopBandwidths { current_hz: last_crossing(current), voltage_hz: last_crossing(voltage) }
}

fn last_crossing(mag: impl Fn(f64) -> f64) -> f64 {
    let level = core::f64::consts::FRAC_1_SQRT_2;
    let (lo, hi, n) = (0.0_f64, 7.0_f64, 4000);
    let f_at = |i: usize| 10.0_f64.powf(lo + (hi - lo) * i as f64 / n as f64);
    let mut found = None;
    for i in (0..n).rev() {
        if mag(f_at(i)) >= level {
            found = Some(i);
            break;
        }
    }
    let Some(i) = found else { return 0.0 };
    if i == n {
        return f_at(n);
    }
    let (mut a, mut b) = (f_at(i), f_at(i + 1));
    for _ in 0..60 {
        let m = (a * b).sqrt();
        if mag(m) >= level {
            a = m;
        } else {
            b = m;
        }
    }
    a
}

/// Discrete state-space realization `x+ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteRealization {
    pub state_dimension: usize,
    /// Row-major `n x n`.
    pub state_update_matrix: Vec<f64>,
    pub input_map: Vec<f64>,
    pub output_map: Vec<f64>,
    pub feedthrough: f64,
    pub sample_time: f64,
}

impl DiscreteRealization {
    pub fn output(&self, x: &[f64], u: f64) -> f64 {
        self.output_map.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.feedthrough * u
    }

    /// Advances `x` by one sample; `scratch` must have length `state_dimension`.
    pub fn update(&self, x: &mut [f64], u: f64, scratch: &mut [f64]) {
        let n = self.state_dimension;
        for i in 0..n {
            let row = &self.state_update_matrix[i * n..(i + 1) * n];
            scratch[i] = row.iter().zip(x.iter()).map(|(a, x)| a * x).sum::<f64>() + self.input_map[i] * u;
        }
        x.copy_from_slice(&scratch[..n]);
    }

    /// Frequency response `C (zI - A)^-1 B + D` at `z = exp(j w T)`.
    pub fn frequency_response(&self, omega: f64) -> Result<Complex64> {
        let n = self.state_dimension;
        let z = Complex64::from_polar(1.0, omega * self.sample_time);
        let mut a: Vec<Complex64> = self.state_update_matrix.iter().map(|v| Complex64::new(-v, 0.0)).collect();
        for i in 0..n {
            a[i * n + i] += z;
        }
        let mut b: Vec<Complex64> = self.input_map.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        crate::linalg::solve_complex(&mut a, &mut b)?;
        Ok(self.output_map.iter().zip(&b).map(|(c, x)| x * c).sum::<Complex64>() + self.feedthrough)
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        if self.state_dimension == 0 {
            return Ok(0.0);
        }
        let m = nalgebra::DMatrix::from_row_slice(self.state_dimension, self.state_dimension, &self.state_update_matrix);
        Ok(crate::linalg::eigenvalues(&m)?.iter().fold(0.0, |r, z| r.max(z.norm())))
    }
}

/// Bilinear map of a root, expressed in the delta variable `(z - 1)/T`:
/// `s - r = (c - r)(z - zeta)/(z + 1)` with `zeta = (c + r)/(c - r)`, and
/// `(zeta - 1)/T = 2 r / ((c - r) T)`.
fn map_roots(roots: &[Complex64], c: f64, t: f64, gain: &mut Complex64, numerator: bool) -> Vec<Complex64> {
    roots
        .iter()
        .map(|r| {
            let cr = Complex64::new(c, 0.0) - r;
            if numerator {
                *gain *= cr;
            } else {
                *gain /= cr;
            }
            2.0 * r / (cr * t)
        })
        .collect()
}

/// Moves delta-domain roots whose shift-domain image lies within 1e-6 of the unit circle onto it.
fn snap_delta_roots(roots: &mut [Complex64], t: f64) {
    for d in roots.iter_mut() {
        let z = Complex64::new(1.0, 0.0) + *d * t;
        let r = z.norm();
        if d.im != 0.0 && (r - 1.0).abs() < 1e-6 {
            let th = z.arg();
            let h = (th / 2.0).sin();
            *d = Complex64::new(-2.0 * h * h, th.sin()) / t;
        }
    }
}

/// Prewarped bilinear discretization in controllable canonical form.
///
/// The companion structure is built on the delta operator `(z - 1)/T` and then mapped to
/// `x[k+1] = A x[k] + B u[k]` with `A = I + T A_delta`, `B = T B_delta`. A companion matrix in
/// `z` itself loses most of its precision when poles cluster near `z = 1`, as they do at
/// 10 us sampling. Discrete poles within 1e-6 of the unit circle are moved onto it, so a
/// resonant internal model stays exact after rounding.
pub fn discretize(tf: &RationalTransferFunction, sample_time: f64, prewarp_frequency: f64) -> Result<DiscreteRealization> {
    if !(sample_time > 0.0) {
        return Err(Error::domain("sample time must be positive"));
    }
    if !tf.is_proper() {
        return Err(Error::invalid("cannot realize an improper transfer function"));
    }
    let den = poly::trim(&tf.denominator_coefficients);
    let num = poly::trim(&tf.numerator_coefficients);
    let n = den.len() - 1;
    let m = num.len() - 1;
    let t = sample_time;
    let c = if prewarp_frequency > 0.0 {
        let x = prewarp_frequency * t / 2.0;
        if x >= PI / 2.0 {
            return Err(Error::domain("prewarp frequency must be below the Nyquist frequency"));
        }
        prewarp_frequency / x.tan()
    } else {
        2.0 / t
    };
    let mut gain = Complex64::new(num[0] / den[0], 0.0);
    let mut poles = map_roots(&poly::roots(&den)?, c, t, &mut gain, false);
    let mut zeros = if num[0] == 0.0 { Vec::new() } else { map_roots(&poly::roots(&num)?, c, t, &mut gain, true) };
    if num[0] != 0.0 {
        zeros.extend(core::iter::repeat_n(Complex64::new(-2.0 / t, 0.0), n - m));
    }
    snap_delta_roots(&mut poles, t);
    let delta_tf = RationalTransferFunction {
        numerator_coefficients: if num[0] == 0.0 { vec![0.0] } else { poly::scale(&poly::from_roots(&zeros), gain.re) },
        denominator_coefficients: poly::from_roots(&poles),
    };
    let r = realize_continuous(&delta_tf)?;
    let mut a: Vec<f64> = r.a.iter().map(|v| v * t).collect();
    for i in 0..n {
        a[i * n + i] += 1.0;
    }
    Ok(DiscreteRealization {
        state_dimension: n,
        state_update_matrix: a,
        input_map: r.b.iter().map(|v| v * t).collect(),
        output_map: r.c,
        feedthrough: r.d,
        sample_time,
    })
}

/// Continuous state-space realization `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRealization {
    pub state_dimension: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
}

/// Frequency-scaled controllable canonical realization. Time is scaled by the geometric mean
/// pole magnitude before building the companion form, which keeps the entries O(1) relative to
/// each other when poles span several decades.
pub fn realize_continuous(tf: &RationalTransferFunction) -> Result<ContinuousRealization> {
    if !tf.is_proper() {
        return Err(Error::invalid("cannot realize an improper transfer function"));
    }
    let den = poly::trim(&tf.denominator_coefficients);
    let mut num = poly::trim(&tf.numerator_coefficients);
    let n = den.len() - 1;
    while num.len() < n + 1 {
        num.insert(0, 0.0);
    }
    let poles = poly::roots(&den)?;
    let logs: Vec<f64> = poles.iter().filter(|p| p.norm() > 0.0).map(|p| p.norm().ln()).collect();
    let sigma = if logs.is_empty() { 1.0 } else { (logs.iter().sum::<f64>() / logs.len() as f64).exp() };
    // Polynomials in p = s / sigma.
    let sc = |q: &[f64]| -> Vec<f64> { q.iter().enumerate().map(|(i, c)| c * sigma.powi((n - i) as i32)).collect() };
    let mut ds = sc(&den);
    let mut ns = sc(&num);
    let lead = ds[0];
    ds = poly::scale(&ds, 1.0 / lead);
    ns = poly::scale(&ns, 1.0 / lead);
    let b0 = ns[0];
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        a[j] = -ds[j + 1] * sigma;
    }
    for i in 1..n {
        a[i * n + i - 1] = sigma;
    }
    let mut b = vec![0.0; n];
    if n > 0 {
        b[0] = sigma;
    }
    let c = (0..n).map(|i| ns[i + 1] - ds[i + 1] * b0).collect();
    Ok(ContinuousRealization { state_dimension: n, a, b, c, d: b0 })
}

impl ContinuousRealization {
    pub fn output<T: crate::dynamics::Signal>(&self, x: &[T], u: T) -> T {
        self.c.iter().zip(x).fold(u * self.d, |acc, (c, x)| acc + *x * *c)
    }

    pub fn derivative<T: crate::dynamics::Signal>(&self, x: &[T], u: T, out: &mut [T]) {
        let n = self.state_dimension;
        for i in 0..n {
            let row = &self.a[i * n..(i + 1) * n];
            out[i] = row.iter().zip(x).fold(u * self.b[i], |acc, (a, x)| acc + *x * *a);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn j(w: f64) -> Complex64 {
        Complex64::new(0.0, w)
    }

    fn prototype_filter() -> InverterElectrical {
        InverterElectrical::default()
    }

    #[test]
    fn evaluate_examples() {
        let tf = RationalTransferFunction::new(vec![1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(evaluate(&tf, Complex64::new(0.0, 0.0)).unwrap(), Complex64::new(1.0, 0.0));
        let tf = RationalTransferFunction::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        assert!((evaluate(&tf, Complex64::new(1.0, 0.0)).unwrap().re - 1.5).abs() < 1e-15);
        let kc = printed_controllers().current_controller;
        assert!(matches!(evaluate(&kc, j(OMEGA_60HZ)), Err(Error::Unbounded(_))));
    }

    #[test]
    fn printed_factors_round_trip() {
        let c = printed_controllers();
        assert_eq!(c.current_controller.numerator_coefficients[0], 38403.0);
        let mut zeros = c.voltage_controller.zeros().unwrap();
        zeros.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        let quad = poly::roots(&[1.0, 3328.0, 8.895e6]).unwrap();
        let want = [-3139.0, -1664.0, -1664.0, -1172.0, 0.0];
        for (z, w) in zeros.iter().zip(want) {
            assert!((z.re - w).abs() <= 1e-6 * w.abs().max(1.0), "{z}");
        }
        for q in quad {
            assert!(zeros.iter().any(|z| (z - q).norm() <= 1e-6 * q.norm()));
        }
        let poles = c.current_controller.poles().unwrap();
        for p in [Complex64::new(-6468.0, 0.0), j(OMEGA_60HZ), j(-OMEGA_60HZ)] {
            assert!(poles.iter().any(|z| (z - p).norm() <= 1e-6 * p.norm()));
        }
        // The shipped voltage controller has the resonant pair and the roll-off as its poles.
        let d = default_controllers().voltage_controller.poles().unwrap();
        for p in [j(OMEGA_60HZ), j(-OMEGA_60HZ), Complex64::new(-VOLTAGE_CONTROLLER_ROLLOFF, 0.0)] {
            assert!(d.iter().any(|z| (z - p).norm() <= 1e-6 * p.norm()));
        }
    }

    #[test]
    fn unity_gain_and_virtual_resistance_for_shipped_parameters() {
        for ctrl in [printed_controllers(), default_controllers()] {
            let b = closed_loop_blocks(&prototype_filter(), &ctrl, j(OMEGA_60HZ)).unwrap();
            assert!((b.g - 1.0).norm() < 1e-9);
            assert!((b.z - 0.2).norm() < 1e-9);
            assert!((b.t + b.s - 1.0).norm() < 1e-12);
        }
        let mut ctrl = default_controllers();
        ctrl.virtual_resistance = 0.0;
        let b = closed_loop_blocks(&prototype_filter(), &ctrl, j(OMEGA_60HZ)).unwrap();
        assert!(b.z.norm() < 1e-9);
    }

    #[test]
    fn internal_model_examples() {
        assert!(verify_internal_model(&printed_controllers(), OMEGA_60HZ).satisfied);
        assert!(verify_internal_model(&default_controllers(), OMEGA_60HZ).satisfied);
        assert!(!verify_internal_model(&printed_controllers(), 2.0 * PI * 50.0).satisfied);
        let mut c = default_controllers();
        c.voltage_controller = RationalTransferFunction::new(vec![1.0], vec![1.0, 1.0]).unwrap();
        assert!(!verify_internal_model(&c, OMEGA_60HZ).satisfied);
    }

    #[test]
    fn one_minus_g_has_s_and_resonant_factor() {
        let ctrl = default_controllers();
        let p = closed_loop_polynomials(&prototype_filter(), &ctrl);
        let one_minus_g = poly::sub(&p.characteristic, &p.reference_numerator);
        let factor = [1.0, 0.0, OMEGA_60HZ * OMEGA_60HZ, 0.0];
        let (_, r) = poly::divmod(&one_minus_g, &factor).unwrap();
        let scale = one_minus_g.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        assert!(r.iter().all(|c| c.abs() < 1e-6 * scale));
    }

    #[test]
    fn static_gain_discretizes_to_feedthrough() {
        let d = discretize(&RationalTransferFunction::constant(3.5), 1e-5, OMEGA_60HZ).unwrap();
        assert_eq!(d.state_dimension, 0);
        assert_eq!(d.feedthrough, 3.5);
    }

    #[test]
    fn resonant_poles_land_on_unit_circle() {
        let ts = 1e-5;
        let tf = RationalTransferFunction::new(vec![1.0, 0.0], vec![1.0, 0.0, OMEGA_60HZ * OMEGA_60HZ]).unwrap();
        let d = discretize(&tf, ts, OMEGA_60HZ).unwrap();
        // Oracle: z = (c + jw)/(c - jw), c = w / tan(w T / 2).
        let c = OMEGA_60HZ / (OMEGA_60HZ * ts / 2.0).tan();
        let z = (Complex64::new(c, OMEGA_60HZ)) / Complex64::new(c, -OMEGA_60HZ);
        assert!((z.arg() - OMEGA_60HZ * ts).abs() < 1e-12);
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &d.state_update_matrix);
        let eig = crate::linalg::eigenvalues(&m).unwrap();
        for e in eig {
            assert!((e.norm() - 1.0).abs() < 1e-12);
            assert!((e.arg().abs() - z.arg()).abs() < 1e-9);
        }
    }

    #[test]
    fn first_order_pole_maps_by_bilinear_rule() {
        let ts = 1e-5;
        let tf = RationalTransferFunction::new(vec![1000.0], vec![1.0, 1000.0]).unwrap();
        let d = discretize(&tf, ts, 0.0).unwrap();
        let want = (1.0 - 0.005) / (1.0 + 0.005);
        assert!((d.state_update_matrix[0] - want).abs() < 1e-14);
        // DC gain preserved.
        let dc = d.frequency_response(0.0).unwrap();
        assert!((dc.re - 1.0).abs() < 1e-9 && dc.im.abs() < 1e-12);
    }

    #[test]
    fn shipped_controllers_realize_with_bounded_spectral_radius() {
        let c = default_controllers();
        for tf in [&c.voltage_controller, &c.current_controller] {
            let d = discretize(tf, 1e-5, OMEGA_60HZ).unwrap();
            assert!(d.spectral_radius().unwrap() <= 1.0 + 1e-9);
        }
        assert!(discretize(&printed_controllers().voltage_controller, 1e-5, OMEGA_60HZ).is_err());
    }

    #[test]
    fn prewarped_response_matches_continuous() {
        let c = default_controllers();
        let w = 2.0 * PI * 1000.0;
        for tf in [&c.voltage_controller, &c.current_controller] {
            let d = discretize(tf, 1e-5, w).unwrap();
            let hc = evaluate(tf, j(w)).unwrap();
            let hd = d.frequency_response(w).unwrap();
            assert!((hc - hd).norm() <= 1e-9 * hc.norm(), "{hc} vs {hd}");
        }
    }

    #[test]
    fn continuous_realization_reproduces_transfer_function() {
        let tf = default_controllers().voltage_controller;
        let r = realize_continuous(&tf).unwrap();
        let n = r.state_dimension;
        for w in [10.0, 377.0 * 1.5, 5e3, 1e5] {
            let s = j(w);
            let mut a: Vec<Complex64> = r.a.iter().map(|v| Complex64::new(-v, 0.0)).collect();
            for i in 0..n {
                a[i * n + i] += s;
            }
            let mut b: Vec<Complex64> = r.b.iter().map(|v| Complex64::new(*v, 0.0)).collect();
            crate::linalg::solve_complex(&mut a, &mut b).unwrap();
            let h: Complex64 = r.c.iter().zip(&b).map(|(c, x)| x * c).sum::<Complex64>() + r.d;
            let want = evaluate(&tf, s).unwrap();
            assert!((h - want).norm() <= 1e-9 * want.norm());
        }
    }

    #[test]
    fn bandwidths_are_reported() {
        let b = loop_bandwidths(&prototype_filter(), &default_controllers());
        assert!(b.current_hz > 0.0 && b.voltage_hz > 0.0);
        // A 20x larger filter inductance brings the printed current loop to roughly 980 Hz.
        let mut big = prototype_filter();
        big.filter_inductance = 1.3e-3;
        big.filter_esr = 1406.0 * big.filter_inductance;
        let bb = loop_bandwidths(&big, &default_controllers());
        assert!((bb.current_hz - 980.0).abs() < 0.15 * 980.0, "{}", bb.current_hz);
    }

    fn random_resonant_controller() -> impl Strategy<Value = ControllerSet> {
        (1.0e2..5.0e3f64, 1.0e2..5.0e3f64, 1e-4..1e-1f64, 1.0e3..2.0e4f64, 0.0..0.5f64).prop_map(
            |(z1, z2, g, p1, rv)| {
                let w2 = OMEGA_60HZ * OMEGA_60HZ;
                let nv = poly::scale(&poly::mul(&[1.0, z1], &[1.0, z2]), g);
                let dv = poly::mul(&[1.0, p1], &[1.0, 0.0, w2]);
                let mut c = default_controllers();
                c.voltage_controller = RationalTransferFunction::new(nv, dv).unwrap();
                c.virtual_resistance = rv;
                c
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn unity_gain_and_virtual_resistance_for_random_resonant_controllers(ctrl in random_resonant_controller()) {
            let b = closed_loop_blocks(&prototype_filter(), &ctrl, j(OMEGA_60HZ)).unwrap();
            prop_assert!((b.g - 1.0).norm() < 1e-9);
            prop_assert!((b.z - ctrl.virtual_resistance).norm() < 1e-9);
        }

        #[test]
        fn discretization_preserves_dc_gain(p in 10.0..1e4f64, z in 10.0..1e4f64, k in 0.1..10.0f64) {
            let tf = RationalTransferFunction::new(vec![k, k * z], poly::mul(&[1.0, p], &[1.0, 2.0 * p])).unwrap();
            let d = discretize(&tf, 1e-5, OMEGA_60HZ).unwrap();
            let dc = d.frequency_response(0.0).unwrap();
            let want = k * z / (2.0 * p * p);
            prop_assert!((dc.re - want).abs() <= 1e-9 * want);
        }
    }
}
