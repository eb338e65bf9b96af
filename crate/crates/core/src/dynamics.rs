//! Network and filter equations shared by the time-domain simulator (real signals) and the
//! complex-envelope model (complex signals). Every function here is linear with real
//! coefficients, so the same code serves both.

use core::ops::{Add, Div, Mul, Neg, Sub};
use num_complex::Complex64;
use num_traits::Zero;

use crate::error::Result;
use crate::net::{InverterElectrical, LoadModel};

pub trait Signal:
    Copy + Zero + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self> + Mul<f64, Output = Self> + Div<f64, Output = Self>
{
}

impl Signal for f64 {}
impl Signal for Complex64 {}

/// Which inverters have closed breakers, and how the branches and load are modelled.
#[derive(Debug, Clone, Copy)]
pub struct Topology<'a> {
    pub inverters: &'a [InverterElectrical],
    pub connected: &'a [bool],
    /// Branch currents are states (series line inductance) instead of algebraic.
    pub inductive: bool,
    pub load_resistance: f64,
    /// Zero for a resistive load.
    pub load_inductance: f64,
}

impl<'a> Topology<'a> {
    pub fn new(inverters: &'a [InverterElectrical], connected: &'a [bool], inductive: bool, load: &LoadModel) -> Result<Self> {
        Ok(Topology {
            inverters,
            connected,
            inductive,
            load_resistance: load.resistance(),
            load_inductance: load.inductance()?,
        })
    }

    /// True when the load current is a state of its own (R-L load with resistive branches).
    pub fn load_state(&self) -> bool {
        !self.inductive && self.load_inductance > 0.0
    }
}

/// `(d i_L/dt, d v/dt)` of the LC filter.
#[inline]
pub fn filter_derivative<T: Signal>(inv: &InverterElectrical, i_l: T, v: T, v_inv: T, i_branch: T) -> (T, T) {
    (
        (v_inv - i_l * inv.filter_esr - v) / inv.filter_inductance,
        (i_l - i_branch) / inv.filter_capacitance,
    )
}

/// PCC voltage with the node eliminated algebraically.
///
/// `line_current` is only read for inductive branches and `load_current` only when the load
/// current is a state.
pub fn pcc_voltage<T: Signal>(topo: &Topology, v: &[T], line_current: &[T], load_current: T) -> T {
    let mut num = T::zero();
    let mut den = 0.0;
    let conn = topo.inverters.iter().zip(topo.connected).enumerate().filter(|(_, (_, c))| **c);
    if !topo.inductive {
        for (k, (inv, _)) in conn {
            num = num + v[k] / inv.branch_resistance;
            den += 1.0 / inv.branch_resistance;
        }
        if den == 0.0 {
            return T::zero();
        }
        if topo.load_state() {
            (num - load_current) / den
        } else {
            num / (den + 1.0 / topo.load_resistance)
        }
    } else {
        let (rl, ll) = (topo.load_resistance, topo.load_inductance);
        let mut sum_i = T::zero();
        for (k, (inv, _)) in conn {
            num = num + (v[k] - line_current[k] * inv.branch_resistance) / inv.line_inductance;
            den += 1.0 / inv.line_inductance;
            sum_i = sum_i + line_current[k];
        }
        // L_load d(sum i)/dt = v_pcc - R_L sum i, with each line obeying
        // L_k di_k/dt = v_k - r_k i_k - v_pcc.
        (num * ll + sum_i * rl) / (1.0 + ll * den)
    }
}

#[inline]
pub fn branch_current<T: Signal>(topo: &Topology, k: usize, v: T, v_pcc: T, line_current: T) -> T {
    if !topo.connected[k] {
        T::zero()
    } else if topo.inductive {
        line_current
    } else {
        (v - v_pcc) / topo.inverters[k].branch_resistance
    }
}

/// Derivative of an inductive branch current; zero while the breaker is open.
#[inline]
pub fn line_derivative<T: Signal>(topo: &Topology, k: usize, v: T, v_pcc: T, line_current: T) -> T {
    if !topo.connected[k] {
        return T::zero();
    }
    let inv = &topo.inverters[k];
    (v - line_current * inv.branch_resistance - v_pcc) / inv.line_inductance
}

#[inline]
pub fn load_derivative<T: Signal>(topo: &Topology, v_pcc: T, load_current: T) -> T {
    (v_pcc - load_current * topo.load_resistance) / topo.load_inductance
}

/// Load current implied by the node voltage when it is not a state.
pub fn algebraic_load_current<T: Signal>(topo: &Topology, v_pcc: T, line_current: &[T], load_current: T) -> T {
    if topo.load_state() {
        load_current
    } else if topo.inductive {
        line_current.iter().zip(topo.connected).filter(|(_, c)| **c).fold(T::zero(), |a, (i, _)| a + *i)
    } else {
        v_pcc / topo.load_resistance
    }
}
