use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use super::trace::{inverter_pairs, SimulationTrace};
use crate::error::{Error, Result};

/// Steady-state summary of a trace over its final window.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub window_start: f64,
    pub window_end: f64,
    /// Capacitor-voltage and branch-current phasors in the common-clock frame
    /// (`x = Im(X exp(j w0 t))`).
    pub voltage_phasor: Vec<Complex64>,
    pub current_phasor: Vec<Complex64>,
    pub pcc_phasor: Complex64,
    pub active_power: Vec<f64>,
    pub reactive_power: Vec<f64>,
    /// `P_j / P_k` for each pair of [`inverter_pairs`].
    pub p_share: Vec<f64>,
    pub q_share: Vec<f64>,
    /// `(|V_pcc| - E*)/E*`.
    pub pcc_regulation_error: f64,
    /// Fundamental amplitude of `(i_j - i_k)/2` per pair.
    pub circulating_amplitude: Vec<f64>,
    /// Event the settling times refer to (the last one before the window).
    pub settling_event: Option<f64>,
    pub settling_time: Vec<Option<f64>>,
    pub voltage_thd: Vec<f64>,
    pub pcc_thd: f64,
    pub warnings: Vec<String>,
}

/// Linear interpolation of a uniformly or non-uniformly sampled series.
fn interpolate(time: &[f64], x: &[f64], t: f64) -> f64 {
    let i = time.partition_point(|s| *s <= t);
    if i == 0 {
        return x[0];
    }
    if i >= time.len() {
        return x[time.len() - 1];
    }
    let (t0, t1) = (time[i - 1], time[i]);
    let a = (t - t0) / (t1 - t0);
    x[i - 1] + a * (x[i] - x[i - 1])
}

/// Trapezoidal integral of `f(t, x(t))` over `[t0, t1]`, interpolating `x` at the ends.
fn integrate(time: &[f64], x: &[f64], t0: f64, t1: f64, f: impl Fn(f64, f64) -> Complex64) -> Complex64 {
    let lo = time.partition_point(|s| *s <= t0);
    let hi = time.partition_point(|s| *s < t1);
    let mut prev_t = t0;
    let mut prev = f(t0, interpolate(time, x, t0));
    let mut acc = Complex64::new(0.0, 0.0);
    for s in lo..hi {
        let cur = f(time[s], x[s]);
        acc += (cur + prev) * (0.5 * (time[s] - prev_t));
        prev_t = time[s];
        prev = cur;
    }
    let last = f(t1, interpolate(time, x, t1));
    acc + (last + prev) * (0.5 * (t1 - prev_t))
}

fn check_window(time: &[f64], t0: f64, t1: f64) -> Result<()> {
    if time.len() < 2 || !(t1 > t0) || t0 < time[0] - 1e-12 || t1 > time[time.len() - 1] + 1e-12 {
        return Err(Error::invalid("integration window lies outside the trace"));
    }
    Ok(())
}

/// Phasor `X` of the component `Im(X exp(j w t))` over `[t0, t1]`.
pub fn fourier_phasor(time: &[f64], x: &[f64], t0: f64, t1: f64, omega: f64) -> Result<Complex64> {
    check_window(time, t0, t1)?;
    let acc = integrate(time, x, t0, t1, |t, v| {
        let (s, c) = (omega * t).sin_cos();
        Complex64::new(v * s, v * c)
    });
    Ok(acc * (2.0 / (t1 - t0)))
}

/// Total harmonic distortion over the last `periods` fundamental periods ending at `t_end`.
/// Harmonics up to the lower of 100 and the sampling Nyquist order are included.
pub fn thd(time: &[f64], x: &[f64], t_end: f64, periods: usize, omega0: f64) -> Result<f64> {
    if periods == 0 || time.len() < 2 {
        return Err(Error::invalid("THD needs at least one period"));
    }
    let period = TAU / omega0;
    let t0 = t_end - periods as f64 * period;
    check_window(time, t0, t_end)?;
    let h_max = ((period / (time[1] - time[0])) / 2.0).floor() as usize;
    let h_max = h_max.saturating_sub(1).min(100);
    if h_max < 2 {
        return Err(Error::invalid("sampling too coarse for harmonic analysis"));
    }
    let fundamental = fourier_phasor(time, x, t0, t_end, omega0)?.norm();
    if fundamental == 0.0 {
        return Err(Error::Degenerate("signal has no fundamental component".into()));
    }
    let mut sum = 0.0;
    for h in 2..=h_max {
        sum += fourier_phasor(time, x, t0, t_end, omega0 * h as f64)?.norm_sqr();
    }
    Ok(sum.sqrt() / fundamental)
}

/// Time from `event_time` until the half-cycle peaks of `|x|` stay within 10 % of their mean
/// over `[final_start, end]`. Each half-cycle contributes its peak and peak instant; the result
/// is the instant of the first peak after the last violation.
pub fn settling_time(time: &[f64], x: &[f64], event_time: f64, final_start: f64, omega0: f64) -> Option<f64> {
    let half = TAU / omega0 / 2.0;
    let end = *time.last()?;
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    let mut b = 0usize;
    loop {
        let lo = event_time + b as f64 * half;
        let hi = lo + half;
        if hi > end + 1e-12 {
            break;
        }
        let a = time.partition_point(|s| *s < lo);
        let z = time.partition_point(|s| *s < hi);
        let best = (a..z).map(|s| (x[s].abs(), time[s])).fold((f64::NEG_INFINITY, lo), |m, c| if c.0 > m.0 { c } else { m });
        if a < z {
            peaks.push((best.1, best.0));
        }
        b += 1;
    }
    let finals: Vec<f64> = peaks.iter().filter(|(t, _)| *t >= final_start).map(|p| p.1).collect();
    if finals.is_empty() {
        return None;
    }
    let target = finals.iter().sum::<f64>() / finals.len() as f64;
    if !(target > 0.0) {
        return None;
    }
    let last_bad = peaks.iter().rposition(|(_, p)| (p - target).abs() > 0.1 * target);
    let first_good = last_bad.map_or(0, |i| i + 1);
    peaks.get(first_good).map(|(t, _)| t - event_time)
}

/// Frequency from upward zero crossings, averaged over `cycles` consecutive periods. Returns
/// `(time of the closing crossing, Hz)`. A crossing only counts once the signal has dipped below
/// 10% of its peak magnitude, so glitches near zero do not register as extra cycles.
pub fn zero_crossing_frequency(time: &[f64], x: &[f64], cycles: usize) -> Vec<(f64, f64)> {
    let arm = 0.1 * x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut armed = false;
    let mut crossings = Vec::new();
    for s in 1..x.len() {
        if x[s - 1] < -arm {
            armed = true;
        }
        if armed && x[s - 1] < 0.0 && x[s] >= 0.0 {
            let a = -x[s - 1] / (x[s] - x[s - 1]);
            crossings.push(time[s - 1] + a * (time[s] - time[s - 1]));
            armed = false;
        }
    }
    (cycles..crossings.len()).map(|c| (crossings[c], cycles as f64 / (crossings[c] - crossings[c - cycles]))).collect()
}

/// Largest relative deviation of the zero-crossing frequency of `v_k` from nominal after `from`.
pub fn max_frequency_deviation(trace: &SimulationTrace, k: usize, from: f64, cycles: usize) -> f64 {
    let f0 = trace.nominal_frequency / TAU;
    zero_crossing_frequency(&trace.time, &trace.capacitor_voltage[k], cycles)
        .iter()
        .filter(|(t, _)| *t - cycles as f64 / f0 >= from)
        .fold(0.0, |m, (_, f)| m.max((f - f0).abs() / f0))
}

/// Metrics over the final `window` seconds of `trace`. Windows that are not a whole number of
/// fundamental periods are shortened to one, with a warning.
pub fn measure_metrics(trace: &SimulationTrace, window: f64) -> Result<Metrics> {
    let w0 = trace.nominal_frequency;
    let period = TAU / w0;
    if !(window >= period * (1.0 - 1e-9)) {
        return Err(Error::domain("metrics window must cover at least one fundamental period"));
    }
    if trace.len() < 2 {
        return Err(Error::invalid("trace is too short"));
    }
    let mut warnings = Vec::new();
    let periods = (window / period + 1e-9).floor();
    if (window / period - periods).abs() > 1e-9 {
        warnings.push(format!("metrics window {window} s shortened to {periods} whole periods"));
    }
    let end = *trace.time.last().unwrap();
    let start = end - periods * period;
    let n = trace.inverter_count;
    let t = &trace.time;
    let mut voltage_phasor = Vec::with_capacity(n);
    let mut current_phasor = Vec::with_capacity(n);
    for k in 0..n {
        voltage_phasor.push(fourier_phasor(t, &trace.capacitor_voltage[k], start, end, w0)?);
        current_phasor.push(fourier_phasor(t, &trace.branch_current[k], start, end, w0)?);
    }
    let pcc_phasor = fourier_phasor(t, &trace.pcc_voltage, start, end, w0)?;
    let s: Vec<Complex64> = voltage_phasor.iter().zip(&current_phasor).map(|(v, i)| v * i.conj() * 0.5).collect();
    let active_power: Vec<f64> = s.iter().map(|x| x.re).collect();
    let reactive_power: Vec<f64> = s.iter().map(|x| x.im).collect();
    let pairs = inverter_pairs(n);
    let p_share = pairs.iter().map(|(j, k)| active_power[*j] / active_power[*k]).collect();
    let q_share = pairs.iter().map(|(j, k)| reactive_power[*j] / reactive_power[*k]).collect();
    let mut circulating_amplitude = Vec::with_capacity(pairs.len());
    for c in &trace.circulating_current {
        circulating_amplitude.push(fourier_phasor(t, c, start, end, w0)?.norm());
    }
    let settling_event = trace.events.iter().map(|e| e.0).filter(|e| *e < start).fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    let settling_time = match settling_event {
        Some(te) => (0..n).map(|k| settling_time(t, &trace.branch_current[k], te, start, w0)).collect(),
        None => alloc::vec![None; n],
    };
    let whole = periods as usize;
    // An idle inverter has no fundamental; its THD is reported as NaN.
    let voltage_thd = (0..n).map(|k| thd(t, &trace.capacitor_voltage[k], end, whole, w0).unwrap_or(f64::NAN)).collect();
    let pcc_thd = thd(t, &trace.pcc_voltage, end, whole, w0).unwrap_or(f64::NAN);
    Ok(Metrics {
        window_start: start,
        window_end: end,
        pcc_regulation_error: (pcc_phasor.norm() - trace.nominal_voltage) / trace.nominal_voltage,
        voltage_phasor,
        current_phasor,
        pcc_phasor,
        active_power,
        reactive_power,
        p_share,
        q_share,
        circulating_amplitude,
        settling_event,
        settling_time,
        voltage_thd,
        pcc_thd,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    const W: f64 = 2.0 * PI * 60.0;

    fn grid(samples_per_period: usize, periods: usize) -> Vec<f64> {
        let h = TAU / W / samples_per_period as f64;
        (0..=samples_per_period * periods).map(|s| s as f64 * h).collect()
    }

    #[test]
    fn thd_of_pure_sine_is_zero() {
        let t = grid(1000, 6);
        let x: Vec<f64> = t.iter().map(|t| 170.0 * (W * t + 0.3).sin()).collect();
        let d = thd(&t, &x, *t.last().unwrap(), 5, W).unwrap();
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn thd_of_ten_percent_third_harmonic() {
        let t = grid(1000, 6);
        let x: Vec<f64> = t.iter().map(|t| (W * t).sin() + 0.1 * (3.0 * W * t + 1.0).sin()).collect();
        let d = thd(&t, &x, *t.last().unwrap(), 5, W).unwrap();
        assert!((d - 0.1).abs() < 1e-6, "{d}");
    }

    #[test]
    fn thd_window_need_not_align_with_samples() {
        // 10 us sampling does not divide the 60 Hz period.
        let t: Vec<f64> = (0..20_000).map(|s| s as f64 * 1e-5).collect();
        let x: Vec<f64> = t.iter().map(|t| (W * t).sin() + 0.1 * (3.0 * W * t).sin()).collect();
        let d = thd(&t, &x, 0.19, 10, W).unwrap();
        assert!((d - 0.1).abs() < 1e-6, "{d}");
    }

    #[test]
    fn phasor_convention() {
        let t = grid(400, 3);
        let x: Vec<f64> = t.iter().map(|t| 2.0 * (W * t + 0.5).sin()).collect();
        let p = fourier_phasor(&t, &x, 0.0, *t.last().unwrap(), W).unwrap();
        assert!((p - Complex64::from_polar(2.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn settling_of_a_decaying_envelope() {
        // Envelope 1 + 2 exp(-t/tau) settles to within 10 % once 2 exp(-t/tau) < 0.1.
        let tau = 0.01;
        let t: Vec<f64> = (0..50_000).map(|s| s as f64 * 1e-5).collect();
        let x: Vec<f64> = t.iter().map(|t| (1.0 + 2.0 * (-(t - 0.1).max(0.0) / tau).exp()) * (W * t).sin()).collect();
        let s = settling_time(&t, &x, 0.1, 0.4, W).unwrap();
        let want = tau * 20.0_f64.ln();
        assert!((s - want).abs() < 1.0 / 120.0, "{s} vs {want}");
    }

    #[test]
    fn zero_crossings_recover_frequency() {
        let t: Vec<f64> = (0..100_000).map(|s| s as f64 * 1e-5).collect();
        let x: Vec<f64> = t.iter().map(|t| (W * t + 0.2).sin()).collect();
        let f = zero_crossing_frequency(&t, &x, 10);
        assert!(!f.is_empty());
        for (_, hz) in f {
            assert!((hz - 60.0).abs() / 60.0 < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn thd_matches_constructed_harmonics(a3 in 0.0..0.3f64, a5 in 0.0..0.3f64, ph in 0.0..6.0f64) {
            let t = grid(600, 4);
            let x: Vec<f64> = t.iter().map(|t| (W * t).sin() + a3 * (3.0 * W * t + ph).sin() + a5 * (5.0 * W * t).sin()).collect();
            let d = thd(&t, &x, *t.last().unwrap(), 4, W).unwrap();
            prop_assert!((d - (a3 * a3 + a5 * a5).sqrt()).abs() < 1e-9);
        }
    }
}
