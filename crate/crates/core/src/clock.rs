//! Common-clock phase model with per-inverter offset, holdover drift and slewed restoration.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockModel {
    /// theta_k, rad.
    pub phase_offset: f64,
    /// Fractional frequency error while in holdover.
    pub drift_rate: f64,
    pub holdover: bool,
    pub holdover_start: f64,
    /// Unwrapped phase at `holdover_start`.
    holdover_phase: f64,
    /// Phase error being removed linearly over one fundamental cycle: (start time, residual).
    slew: Option<(f64, f64)>,
}

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel::synchronized(0.0)
    }
}

impl ClockModel {
    pub fn synchronized(phase_offset: f64) -> Self {
        ClockModel { phase_offset, drift_rate: 0.0, holdover: false, holdover_start: 0.0, holdover_phase: 0.0, slew: None }
    }

    pub fn with_drift(mut self, drift_rate: f64) -> Self {
        self.drift_rate = drift_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phase_offset.abs() < PI) {
            return Err(Error::domain("clock phase offset must lie in (-pi, pi)"));
        }
        if !(self.drift_rate >= 0.0) || !self.drift_rate.is_finite() {
            return Err(Error::domain("clock drift rate must be non-negative"));
        }
        Ok(())
    }

    /// Phase without wrapping; continuous in `t`.
    pub fn unwrapped_phase_at(&self, t: f64, omega0: f64) -> f64 {
        if self.holdover {
            return omega0 * (1.0 + self.drift_rate) * (t - self.holdover_start) + self.holdover_phase;
        }
        let base = omega0 * t + self.phase_offset;
        match self.slew {
            Some((start, residual)) if t < start + TAU / omega0 => {
                let left = 1.0 - ((t - start) * omega0 / TAU).max(0.0);
                base + residual * left
            }
            _ => base,
        }
    }
}

/// Reference phase of `clock` at `t`, wrapped to [0, 2 pi).
pub fn phase_at(clock: &ClockModel, t: f64, omega0: f64) -> f64 {
    wrap_tau(clock.unwrapped_phase_at(t, omega0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockEventKind {
    Loss,
    Restore,
    /// New synchronized offset, rad. Reached by a one-cycle slew.
    SetOffset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockEvent {
    pub time: f64,
    pub inverter_index: usize,
    pub kind: ClockEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockWarning {
    RestoreWithoutLoss { inverter_index: usize },
}

/// Wraps an angle to [0, 2 pi).
pub fn wrap_tau(x: f64) -> f64 {
    let y = x - TAU * (x / TAU).floor();
    if y >= TAU {
        0.0
    } else {
        y
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_pi(x: f64) -> f64 {
    let y = wrap_tau(x + PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Applies `event` to `clocks`. Phase stays continuous: loss freezes the current phase as the
/// holdover origin, restore and set-offset remove the resulting phase error over one
/// fundamental cycle.
pub fn apply_event(clocks: &[ClockModel], event: &ClockEvent, omega0: f64) -> Result<(Vec<ClockModel>, Option<ClockWarning>)> {
    let k = event.inverter_index;
    if k >= clocks.len() {
        return Err(Error::invalid("clock event refers to a missing inverter"));
    }
    let mut out = clocks.to_vec();
    let t = event.time;
    let c = &mut out[k];
    let now = c.unwrapped_phase_at(t, omega0);
    let mut warning = None;
    match event.kind {
        ClockEventKind::Loss => {
            if !c.holdover {
                c.holdover = true;
                c.holdover_start = t;
                c.holdover_phase = now;
                c.slew = None;
            }
        }
        ClockEventKind::Restore => {
            if c.holdover {
                c.holdover = false;
                c.slew = Some((t, wrap_pi(now - (omega0 * t + c.phase_offset))));
            } else {
                warning = Some(ClockWarning::RestoreWithoutLoss { inverter_index: k });
            }
        }
        ClockEventKind::SetOffset(theta) => {
            if !(theta.abs() < PI) {
                return Err(Error::domain("clock phase offset must lie in (-pi, pi)"));
            }
            if c.holdover {
                c.phase_offset = theta;
            } else {
                c.phase_offset = theta;
                c.slew = Some((t, wrap_pi(now - (omega0 * t + theta))));
            }
        }
    }
    Ok((out, warning))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W: f64 = 2.0 * PI * 60.0;

    fn ev(time: f64, kind: ClockEventKind) -> ClockEvent {
        ClockEvent { time, inverter_index: 0, kind }
    }

    #[test]
    fn synchronized_phase_is_omega_t() {
        let c = ClockModel::default();
        for t in [0.0, 0.1, 1.234_567, 10.0] {
            assert_eq!(phase_at(&c, t, W), wrap_tau(W * t));
        }
        let lead = ClockModel::synchronized(5.0_f64.to_radians());
        let d = wrap_pi(phase_at(&lead, 0.37, W) - phase_at(&c, 0.37, W));
        assert!((d - 5.0_f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn holdover_drift_accumulates_linearly() {
        let c = ClockModel::default().with_drift(1e-5);
        let (c, _) = apply_event(&[c], &ev(1.0, ClockEventKind::Loss), W).unwrap();
        let extra = c[0].unwrapped_phase_at(11.0, W) - W * 11.0;
        assert!((extra - W * 1e-4).abs() < 1e-9);
        assert!((extra - 0.0377).abs() < 1e-4);
    }

    #[test]
    fn zero_drift_holdover_matches_synchronized() {
        let c = ClockModel::default();
        let (h, _) = apply_event(&[c], &ev(1.0, ClockEventKind::Loss), W).unwrap();
        for t in [1.0, 1.5, 3.0] {
            assert!((h[0].unwrapped_phase_at(t, W) - c.unwrapped_phase_at(t, W)).abs() < 1e-9);
        }
    }

    #[test]
    fn restore_slews_residual_within_one_cycle() {
        let c = ClockModel::default().with_drift(1e-4);
        let (c, _) = apply_event(&[c], &ev(1.0, ClockEventKind::Loss), W).unwrap();
        let (c, w) = apply_event(&c, &ev(1.1, ClockEventKind::Restore), W).unwrap();
        assert!(w.is_none());
        let residual = c[0].unwrapped_phase_at(1.1, W) - W * 1.1;
        assert!(residual.abs() <= W * 1e-5 + 1e-9);
        assert!((c[0].unwrapped_phase_at(1.1 + 1.0 / 60.0, W) - W * (1.1 + 1.0 / 60.0)).abs() < 1e-9);
    }

    #[test]
    fn restore_without_loss_warns() {
        let c = ClockModel::default();
        let (out, w) = apply_event(&[c], &ev(1.0, ClockEventKind::Restore), W).unwrap();
        assert_eq!(out[0], c);
        assert_eq!(w, Some(ClockWarning::RestoreWithoutLoss { inverter_index: 0 }));
    }

    #[test]
    fn set_offset_shifts_phase_after_slew() {
        let c = ClockModel::default();
        let th = 10.0_f64.to_radians();
        let (c, _) = apply_event(&[c], &ev(0.5, ClockEventKind::SetOffset(th)), W).unwrap();
        let t = 0.5 + 1.0 / 60.0 + 1e-6;
        assert!((c[0].unwrapped_phase_at(t, W) - W * t - th).abs() < 1e-9);
    }

    #[test]
    fn all_zero_offsets_share_one_phase() {
        let clocks = [ClockModel::default(); 4];
        for k in 0..1000 {
            let t = k as f64 * 1.37e-3;
            let p0 = phase_at(&clocks[0], t, W);
            assert!(clocks.iter().all(|c| phase_at(c, t, W) == p0));
        }
    }

    proptest! {
        #[test]
        fn phase_is_continuous_across_events(
            drift in 0.0..1e-3f64,
            t_loss in 0.0..1.0f64,
            hold in 0.0..2.0f64,
            offset in -3.0..3.0f64,
        ) {
            let dt = 1e-5;
            let mut clocks = alloc::vec![ClockModel::default().with_drift(drift)];
            let events = [
                ev(t_loss, ClockEventKind::Loss),
                ev(t_loss + hold, ClockEventKind::Restore),
                ev(t_loss + hold + 0.05, ClockEventKind::SetOffset(offset)),
            ];
            for e in events {
                let before = clocks[0].unwrapped_phase_at(e.time, W);
                clocks = apply_event(&clocks, &e, W).unwrap().0;
                let after = clocks[0].unwrapped_phase_at(e.time, W);
                prop_assert!((after - before).abs() < 1e-9);
                // Per-step increments never exceed a nominal step plus the slew rate.
                let mut prev = after;
                for i in 1..2000 {
                    let p = clocks[0].unwrapped_phase_at(e.time + i as f64 * dt, W);
                    prop_assert!((p - prev - W * dt).abs() <= W * dt);
                    prev = p;
                }
            }
        }
    }
}
