//! Fixed-step simulation of the averaged closed loop: LC filters, discrete inner loops, droop,
//! clocks and the PCC network, driven by a scripted event list.

mod metrics;
mod trace;

pub use metrics::{
    fourier_phasor, max_frequency_deviation, measure_metrics, settling_time, thd, zero_crossing_frequency, Metrics,
};
pub use trace::{inverter_pairs, SimulationTrace};

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;
use core::fmt;
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
#[allow(unused_imports)]
use num_traits::Float;

pub use crate::clock::ClockEventKind;
use crate::clock::{self, ClockEvent};
use crate::controller::{discretize, DiscreteRealization};
use crate::droop::{self, DroopState, FullDroopParams, FullDroopState};
use crate::dynamics::{self, Topology};
use crate::error::{Error, Result};
use crate::net::{Architecture, InverterElectrical, LoadModel, MicrogridConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Closes the breaker of an inverter. An inverter that is not switching yet is enabled first.
    Connect(usize),
    /// Opens the breaker; the inverter keeps regulating its capacitor.
    Disconnect(usize),
    /// Starts the bridge and controllers; the reference ramps up over one fundamental cycle.
    Enable(usize),
    LoadStep(LoadModel),
    Clock { inverter: usize, kind: ClockEventKind },
    SetPowerReference { inverter: usize, value: f64 },
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Connect(k) => write!(f, "connect {}", k + 1),
            EventKind::Disconnect(k) => write!(f, "disconnect {}", k + 1),
            EventKind::Enable(k) => write!(f, "enable {}", k + 1),
            EventKind::LoadStep(_) => write!(f, "load_step"),
            EventKind::Clock { inverter, kind } => match kind {
                ClockEventKind::Loss => write!(f, "clock_loss {}", inverter + 1),
                ClockEventKind::Restore => write!(f, "clock_restore {}", inverter + 1),
                ClockEventKind::SetOffset(th) => write!(f, "clock_offset {} {th}", inverter + 1),
            },
            EventKind::SetPowerReference { inverter, value } => write!(f, "set_power_reference {} {value}", inverter + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// All states zero. Active inverters start switching at t = 0.
    Rest { active: Vec<bool>, connected: Vec<bool> },
    /// Periodic steady state of the sampled-data loop at the droop equilibrium, with every
    /// inverter switching and connected. Isochronous architecture only.
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: MicrogridConfig,
    pub duration: f64,
    pub time_step: f64,
    /// Record every `decimation`-th step.
    pub decimation: usize,
    pub initial: InitialCondition,
    pub events: Vec<Event>,
    /// RK4 sub-steps per control step; `None` sizes them from the plant's fastest mode.
    pub rk4_substeps: Option<usize>,
}

impl Scenario {
    /// Everything switching and connected from rest, 10 us step, no events.
    pub fn new(config: MicrogridConfig, duration: f64) -> Self {
        let n = config.len();
        Scenario {
            config,
            duration,
            time_step: 1e-5,
            decimation: 1,
            initial: InitialCondition::Rest { active: vec![true; n], connected: vec![true; n] },
            events: Vec::new(),
            rk4_substeps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let n = cfg.len();
        if !(self.time_step > 0.0) || !self.time_step.is_finite() {
            return Err(Error::domain("time step must be positive"));
        }
        if !(self.duration >= self.time_step) || !self.duration.is_finite() {
            return Err(Error::domain("duration must cover at least one step"));
        }
        if self.decimation == 0 || self.rk4_substeps == Some(0) {
            return Err(Error::domain("decimation and sub-step counts must be at least 1"));
        }
        for d in &cfg.droop {
            if d.power_filter_bandwidth * self.time_step >= 0.1 {
                return Err(Error::domain("time step is too long for the power filter"));
            }
        }
        time_domain_load(&cfg.load)?;
        if let InitialCondition::Rest { active, connected } = &self.initial {
            if active.len() != n || connected.len() != n {
                return Err(Error::invalid("initial active/connected flags need one entry per inverter"));
            }
            if connected.iter().zip(active).any(|(c, a)| *c && !*a) {
                return Err(Error::invalid("a connected inverter must be switching"));
            }
        } else if matches!(cfg.architecture, Architecture::FullDroop(_)) {
            return Err(Error::invalid("equilibrium start is only defined for the isochronous architecture"));
        }
        let mut last = f64::NEG_INFINITY;
        for e in &self.events {
            if !(e.time >= last) || e.time < 0.0 {
                return Err(Error::invalid("events must be sorted by non-negative time"));
            }
            last = e.time;
            if e.time > self.duration {
                return Err(Error::invalid(format!("event at {} s lies beyond the {} s duration", e.time, self.duration)));
            }
            let idx = match &e.kind {
                EventKind::Connect(k) | EventKind::Disconnect(k) | EventKind::Enable(k) => Some(*k),
                EventKind::Clock { inverter, .. } | EventKind::SetPowerReference { inverter, .. } => Some(*inverter),
                EventKind::LoadStep(l) => {
                    l.validate()?;
                    time_domain_load(l)?;
                    None
                }
            };
            if idx.is_some_and(|k| k >= n) {
                return Err(Error::invalid(format!("event '{}' refers to a missing inverter", e.kind)));
            }
            if let EventKind::SetPowerReference { value, .. } = e.kind {
                if !value.is_finite() {
                    return Err(Error::domain("power reference must be finite"));
                }
            }
        }
        Ok(())
    }
}

fn time_domain_load(load: &LoadModel) -> Result<(f64, f64)> {
    match load {
        LoadModel::ComplexAtFrequency { .. } => {
            Err(Error::invalid("the time-domain model needs a resistive or series R-L load"))
        }
        _ => Ok((load.resistance(), load.inductance()?)),
    }
}

/// Complete state of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationState {
    pub time: f64,
    pub step_index: u64,
    /// `[i_L (N), v (N), line current (N), load current]`. Line currents stay zero for
    /// resistive branches and the load current is only integrated for an R-L load.
    pub continuous: Vec<f64>,
    pub voltage_controller: Vec<Vec<f64>>,
    pub current_controller: Vec<Vec<f64>>,
    pub droop: Vec<DroopState>,
    /// Baseline architecture only.
    pub full_droop: Vec<FullDroopState>,
    pub connected: Vec<bool>,
    pub active: Vec<bool>,
    pub enable_time: Vec<f64>,
    /// Bridge voltage held over the current step.
    pub inverter_voltage: Vec<f64>,
    pub clocks: Vec<clock::ClockModel>,
}

impl SimulationState {
    fn inverters(&self) -> usize {
        self.connected.len()
    }

    pub fn inductor_current(&self, k: usize) -> f64 {
        self.continuous[k]
    }

    pub fn capacitor_voltage(&self, k: usize) -> f64 {
        self.continuous[self.inverters() + k]
    }

    pub fn line_current(&self, k: usize) -> f64 {
        self.continuous[2 * self.inverters() + k]
    }

    pub fn load_current(&self) -> f64 {
        self.continuous[3 * self.inverters()]
    }
}

/// Run that stopped early; `partial` holds the samples recorded so far.
#[derive(Debug, Clone)]
pub struct SimulationFailure {
    pub error: Error,
    pub partial: SimulationTrace,
    pub last_good: SimulationState,
}

impl fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "simulation stopped at t = {:.6} s: {}", self.last_good.time, self.error)
    }
}

/// Derivative of the continuous states (layout of [`SimulationState::continuous`]) with the
/// bridge voltages `v_inv` held.
pub fn derivatives(topo: &Topology, x: &[f64], v_inv: &[f64], out: &mut [f64]) {
    let n = topo.inverters.len();
    let (il, rest) = x.split_at(n);
    let (v, rest) = rest.split_at(n);
    let (line, load) = rest.split_at(n);
    let v_pcc = dynamics::pcc_voltage(topo, v, line, load[0]);
    for k in 0..n {
        let ib = dynamics::branch_current(topo, k, v[k], v_pcc, line[k]);
        let (dil, dv) = dynamics::filter_derivative(&topo.inverters[k], il[k], v[k], v_inv[k], ib);
        out[k] = dil;
        out[n + k] = dv;
        out[2 * n + k] = if topo.inductive { dynamics::line_derivative(topo, k, v[k], v_pcc, line[k]) } else { 0.0 };
    }
    out[3 * n] = if topo.load_state() { dynamics::load_derivative(topo, v_pcc, load[0]) } else { 0.0 };
}

#[derive(Debug, Clone, Default)]
struct Measurement {
    v_pcc: f64,
    v: Vec<f64>,
    i: Vec<f64>,
    il: Vec<f64>,
}

fn measure(topo: &Topology, x: &[f64], m: &mut Measurement) {
    let n = topo.inverters.len();
    let (il, rest) = x.split_at(n);
    let (v, rest) = rest.split_at(n);
    let (line, load) = rest.split_at(n);
    m.v_pcc = dynamics::pcc_voltage(topo, v, line, load[0]);
    for k in 0..n {
        m.v[k] = v[k];
        m.il[k] = il[k];
        m.i[k] = dynamics::branch_current(topo, k, v[k], m.v_pcc, line[k]);
    }
}

/// Cascaded loops for every switching inverter; advances the controller states.
#[allow(clippy::too_many_arguments)]
fn control_law(
    vctrl: &DiscreteRealization,
    cctrl: &DiscreteRealization,
    inverters: &[InverterElectrical],
    active: &[bool],
    m: &Measurement,
    refs: &[f64],
    xv: &mut [Vec<f64>],
    xc: &mut [Vec<f64>],
    v_inv: &mut [f64],
    scratch: &mut [f64],
    clamp: bool,
) {
    for k in 0..inverters.len() {
        if !active[k] {
            v_inv[k] = 0.0;
            continue;
        }
        let inv = &inverters[k];
        let ev = refs[k] - inv.virtual_resistance * m.i[k] - m.v[k];
        let i_ref = vctrl.output(&xv[k], ev) + m.i[k];
        let ec = i_ref - m.il[k];
        let u = cctrl.output(&xc[k], ec) + m.v[k];
        v_inv[k] = if clamp { u.max(-inv.dc_link_voltage).min(inv.dc_link_voltage) } else { u };
        vctrl.update(&mut xv[k], ev, scratch);
        cctrl.update(&mut xc[k], ec, scratch);
    }
}

#[derive(Debug, Clone)]
struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Rk4 { k: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]], tmp: vec![0.0; dim] }
    }

    fn advance(&mut self, topo: &Topology, x: &mut [f64], v_inv: &[f64], dt: f64, substeps: usize) {
        let h = dt / substeps as f64;
        let d = x.len();
        for _ in 0..substeps {
            let [k1, k2, k3, k4] = &mut self.k;
            derivatives(topo, x, v_inv, k1);
            for j in 0..d {
                self.tmp[j] = x[j] + 0.5 * h * k1[j];
            }
            derivatives(topo, &self.tmp, v_inv, k2);
            for j in 0..d {
                self.tmp[j] = x[j] + 0.5 * h * k2[j];
            }
            derivatives(topo, &self.tmp, v_inv, k3);
            for j in 0..d {
                self.tmp[j] = x[j] + h * k3[j];
            }
            derivatives(topo, &self.tmp, v_inv, k4);
            for j in 0..d {
                x[j] += h / 6.0 * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]);
            }
        }
    }
}

/// One-cycle sliding demodulation of `v` and `i` against the common clock.
#[derive(Debug, Clone)]
struct PowerWindow {
    buf: Vec<[f64; 4]>,
    pos: usize,
    filled: usize,
    sum: [f64; 4],
}

impl PowerWindow {
    fn new(len: usize) -> Self {
        PowerWindow { buf: vec![[0.0; 4]; len.max(1)], pos: 0, filled: 0, sum: [0.0; 4] }
    }

    fn push(&mut self, v: f64, i: f64, s: f64, c: f64) {
        let sample = [v * s, v * c, i * s, i * c];
        let old = self.buf[self.pos];
        self.buf[self.pos] = sample;
        self.pos = (self.pos + 1) % self.buf.len();
        self.filled = (self.filled + 1).min(self.buf.len());
        if self.pos == 0 {
            // Resum once per window so rounding cannot accumulate.
            self.sum = self.buf.iter().fold([0.0; 4], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]);
        } else {
            for j in 0..4 {
                self.sum[j] += sample[j] - old[j];
            }
        }
    }

    fn power(&self) -> (f64, f64) {
        if self.filled == 0 {
            return (0.0, 0.0);
        }
        let g = 2.0 / self.filled as f64;
        let v = Complex64::new(self.sum[0], self.sum[1]) * g;
        let i = Complex64::new(self.sum[2], self.sum[3]) * g;
        let s = v * i.conj() * 0.5;
        (s.re, s.im)
    }
}

/// Signal history for the quarter-period delay used by the Q measurement of the baseline.
#[derive(Debug, Clone)]
struct DelayLine {
    buf: Vec<f64>,
    pos: usize,
}

impl DelayLine {
    fn new(len: usize) -> Self {
        DelayLine { buf: vec![0.0; len], pos: 0 }
    }

    fn push(&mut self, x: f64) {
        self.buf[self.pos] = x;
        self.pos = (self.pos + 1) % self.buf.len();
    }

    /// Value `d` samples ago (fractional), `1 <= d < len - 1`; the newest sample is `d = 0`.
    fn delayed(&self, d: f64) -> f64 {
        let n = self.buf.len();
        let whole = d.floor() as usize;
        let frac = d - whole as f64;
        let at = |back: usize| self.buf[(self.pos + n - 1 - back) % n];
        at(whole) * (1.0 - frac) + at(whole + 1) * frac
    }
}

/// Steps a [`Scenario`] and records its trace.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: MicrogridConfig,
    full_droop: Vec<FullDroopParams>,
    dt: f64,
    total_steps: u64,
    decimation: u64,
    fixed_substeps: Option<usize>,
    substeps: usize,
    inductive: bool,
    load_resistance: f64,
    load_inductance: f64,
    vctrl: DiscreteRealization,
    cctrl: DiscreteRealization,
    state: SimulationState,
    events: Vec<(u64, Event)>,
    next_event: usize,
    meas: Measurement,
    refs: Vec<f64>,
    rk: Rk4,
    scratch: Vec<f64>,
    windows: Vec<PowerWindow>,
    delay_v: Vec<DelayLine>,
    delay_i: Vec<DelayLine>,
    quarter_delay: f64,
    trace: SimulationTrace,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let cfg = scenario.config.clone();
        let n = cfg.len();
        let dt = scenario.time_step;
        let w0 = cfg.nominal_frequency;
        let vctrl = discretize(&cfg.controllers.voltage_controller, dt, w0)?;
        let cctrl = discretize(&cfg.controllers.current_controller, dt, w0)?;
        let (load_resistance, load_inductance) = time_domain_load(&cfg.load)?;
        let full_droop: Vec<FullDroopParams> = match &cfg.architecture {
            Architecture::Isochronous => Vec::new(),
            Architecture::FullDroop(q) => cfg
                .droop
                .iter()
                .zip(q)
                .map(|(d, q)| FullDroopParams { base: *d, qf: *q, nominal_frequency: w0 })
                .collect(),
        };
        let period_steps = (TAU / w0 / dt).round() as usize;
        let quarter_delay = TAU / w0 / 4.0 / dt;
        let delay_len = if full_droop.is_empty() { 0 } else { quarter_delay.ceil() as usize + 3 };
        let total_steps = (scenario.duration / dt).round() as u64;
        let decimation = scenario.decimation as u64;
        let (active, connected) = match &scenario.initial {
            InitialCondition::Rest { active, connected } => (active.clone(), connected.clone()),
            InitialCondition::Equilibrium => (vec![true; n], vec![true; n]),
        };
        let state = SimulationState {
            time: 0.0,
            step_index: 0,
            continuous: vec![0.0; 3 * n + 1],
            voltage_controller: vec![vec![0.0; vctrl.state_dimension]; n],
            current_controller: vec![vec![0.0; cctrl.state_dimension]; n],
            droop: cfg.droop.iter().map(DroopState::nominal).collect(),
            full_droop: cfg
                .droop
                .iter()
                .zip(&cfg.clocks)
                .take(full_droop.len())
                .map(|(d, c)| FullDroopState {
                    droop: DroopState::nominal(d),
                    filtered_reactive_power: 0.0,
                    phase: clock::phase_at(c, 0.0, w0),
                })
                .collect(),
            enable_time: active.iter().map(|a| if *a { 0.0 } else { f64::INFINITY }).collect(),
            active,
            connected,
            inverter_voltage: vec![0.0; n],
            clocks: cfg.clocks.clone(),
        };
        let samples = (total_steps / decimation + 2) as usize;
        let mut trace = SimulationTrace::with_capacity(n, samples);
        trace.sample_interval = dt * decimation as f64;
        trace.nominal_frequency = w0;
        trace.nominal_voltage = cfg.nominal_voltage_magnitude;
        trace.rated_apparent_power = cfg.inverters.iter().map(|i| i.rated_apparent_power).collect();
        let events = scenario.events.iter().map(|e| ((e.time / dt).round() as u64, e.clone())).collect();
        let scratch_len = vctrl.state_dimension.max(cctrl.state_dimension).max(1);
        let mut sim = Simulator {
            full_droop,
            dt,
            total_steps,
            decimation,
            fixed_substeps: scenario.rk4_substeps,
            substeps: 1,
            inductive: cfg.inductive_branches()?,
            load_resistance,
            load_inductance,
            vctrl,
            cctrl,
            state,
            events,
            next_event: 0,
            meas: Measurement { v_pcc: 0.0, v: vec![0.0; n], i: vec![0.0; n], il: vec![0.0; n] },
            refs: vec![0.0; n],
            rk: Rk4::new(3 * n + 1),
            scratch: vec![0.0; scratch_len],
            windows: (0..n).map(|_| PowerWindow::new(period_steps)).collect(),
            delay_v: (0..n).map(|_| DelayLine::new(delay_len.max(1))).collect(),
            delay_i: (0..n).map(|_| DelayLine::new(delay_len.max(1))).collect(),
            quarter_delay,
            trace,
            config: cfg,
        };
        sim.update_substeps()?;
        if scenario.initial == InitialCondition::Equilibrium {
            sim.start_at_equilibrium()?;
        }
        Ok(sim)
    }

    pub fn state(&self) -> &SimulationState {
        &self.state
    }

    pub fn config(&self) -> &MicrogridConfig {
        &self.config
    }

    pub fn time_step(&self) -> f64 {
        self.dt
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn trace(&self) -> &SimulationTrace {
        &self.trace
    }

    /// Overwrites the continuous states, e.g. to start from a charged filter.
    pub fn set_continuous_state(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.state.continuous.len() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("continuous state has the wrong length or non-finite entries"));
        }
        self.state.continuous.copy_from_slice(x);
        Ok(())
    }

    fn topology(&self) -> Topology<'_> {
        Topology {
            inverters: &self.config.inverters,
            connected: &self.state.connected,
            inductive: self.inductive,
            load_resistance: self.load_resistance,
            load_inductance: self.load_inductance,
        }
    }

    /// Derivative of the continuous states at the current state with the held bridge voltages.
    pub fn derivatives(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.state.continuous.len()];
        derivatives(&self.topology(), &self.state.continuous, &self.state.inverter_voltage, &mut out);
        out
    }

    /// Sizes the RK4 sub-steps so that `|lambda h| <= 2` for every plant eigenvalue, which keeps
    /// the stiff capacitor-to-PCC modes inside the stability region.
    fn update_substeps(&mut self) -> Result<()> {
        if let Some(s) = self.fixed_substeps {
            self.substeps = s;
            return Ok(());
        }
        let d = self.state.continuous.len();
        let topo = self.topology();
        let v_inv = vec![0.0; self.config.len()];
        let mut jac = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            derivatives(&topo, &e, &v_inv, &mut col);
            for i in 0..d {
                jac[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        let rho = crate::linalg::eigenvalues(&jac)?.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        self.substeps = ((rho * self.dt / 2.0).ceil() as usize).max(1);
        Ok(())
    }

    fn record(&mut self) {
        let n = self.config.len();
        let t = &mut self.trace;
        t.time.push(self.state.time);
        t.pcc_voltage.push(self.meas.v_pcc);
        for k in 0..n {
            t.capacitor_voltage[k].push(self.meas.v[k]);
            t.branch_current[k].push(self.meas.i[k]);
            t.inductor_current[k].push(self.meas.il[k]);
            let e = if !self.state.active[k] {
                0.0
            } else if self.full_droop.is_empty() {
                self.state.droop[k].commanded_magnitude
            } else {
                self.state.full_droop[k].droop.commanded_magnitude
            };
            t.magnitude[k].push(e);
            let (p, q) = self.windows[k].power();
            t.active_power[k].push(p);
            t.reactive_power[k].push(q);
        }
        for (c, (j, k)) in t.circulating_current.iter_mut().zip(inverter_pairs(n)) {
            c.push(0.5 * (self.meas.i[j] - self.meas.i[k]));
        }
    }

    fn enable(&mut self, k: usize) {
        if self.state.active[k] {
            return;
        }
        let t = self.state.time;
        let w0 = self.config.nominal_frequency;
        self.state.active[k] = true;
        self.state.enable_time[k] = t;
        self.state.voltage_controller[k].iter_mut().for_each(|x| *x = 0.0);
        self.state.current_controller[k].iter_mut().for_each(|x| *x = 0.0);
        self.state.droop[k] = DroopState::nominal(&self.config.droop[k]);
        if !self.full_droop.is_empty() {
            // Synchronize to a running unit, or to the clock when starting alone.
            let phase = (0..self.config.len())
                .find(|j| *j != k && self.state.active[*j])
                .map(|j| self.state.full_droop[j].phase)
                .unwrap_or_else(|| clock::phase_at(&self.state.clocks[k], t, w0));
            self.state.full_droop[k] =
                FullDroopState { droop: DroopState::nominal(&self.config.droop[k]), filtered_reactive_power: 0.0, phase };
        }
    }

    fn apply_event(&mut self, e: &Event) -> Result<()> {
        let n = self.config.len();
        match &e.kind {
            EventKind::Connect(k) => {
                if !self.state.active[*k] {
                    self.trace.warnings.push(format!("inverter {} enabled at its connection", k + 1));
                    self.enable(*k);
                }
                self.state.connected[*k] = true;
                // Closing a resistive branch can make the network much stiffer.
                self.update_substeps()?;
            }
            EventKind::Disconnect(k) => {
                self.state.connected[*k] = false;
                self.state.continuous[2 * n + k] = 0.0;
                self.update_substeps()?;
            }
            EventKind::Enable(k) => self.enable(*k),
            EventKind::LoadStep(load) => {
                let (r, l) = time_domain_load(load)?;
                let topo = self.topology();
                let x = &self.state.continuous;
                let v_pcc = dynamics::pcc_voltage(&topo, &x[n..2 * n], &x[2 * n..3 * n], x[3 * n]);
                let i_now = dynamics::algebraic_load_current(&topo, v_pcc, &x[2 * n..3 * n], x[3 * n]);
                self.config.load = *load;
                self.load_resistance = r;
                self.load_inductance = l;
                // The load inductor current is continuous across the switch.
                self.state.continuous[3 * n] = i_now;
                self.update_substeps()?;
            }
            EventKind::Clock { inverter, kind } => {
                let ev = ClockEvent { time: self.state.time, inverter_index: *inverter, kind: *kind };
                let (clocks, warning) = clock::apply_event(&self.state.clocks, &ev, self.config.nominal_frequency)?;
                if let Some(w) = warning {
                    self.trace.warnings.push(format!("t = {:.6} s: {w:?}", self.state.time));
                }
                self.state.clocks = clocks;
            }
            EventKind::SetPowerReference { inverter, value } => {
                self.config.droop[*inverter].active_power_reference = *value;
                if let Some(f) = self.full_droop.get_mut(*inverter) {
                    f.base.active_power_reference = *value;
                }
            }
        }
        self.trace.events.push((self.state.time, format!("{}", e.kind)));
        Ok(())
    }

    fn references(&mut self) {
        let t = self.state.time;
        let w0 = self.config.nominal_frequency;
        let f0 = w0 / TAU;
        for k in 0..self.config.len() {
            if !self.state.active[k] {
                self.refs[k] = 0.0;
                continue;
            }
            let ramp = ((t - self.state.enable_time[k]) * f0).min(1.0);
            let (mag, phase) = if self.full_droop.is_empty() {
                (self.state.droop[k].commanded_magnitude, self.state.clocks[k].unwrapped_phase_at(t, w0))
            } else {
                let s = &self.state.full_droop[k];
                (s.droop.commanded_magnitude, s.phase)
            };
            self.refs[k] = ramp * mag * phase.sin();
        }
    }

    /// One control period: due events, measurement and recording at `t_n`, controllers, RK4
    /// over `[t_n, t_n + dt]`, then the droop filters.
    pub fn step(&mut self) -> Result<()> {
        let n_step = self.state.step_index;
        while let Some((idx, e)) = self.events.get(self.next_event) {
            if *idx > n_step {
                break;
            }
            let e = e.clone();
            self.next_event += 1;
            self.apply_event(&e)?;
        }
        self.sample();
        if n_step.is_multiple_of(self.decimation) {
            self.record();
        }
        self.references();
        control_law(
            &self.vctrl,
            &self.cctrl,
            &self.config.inverters,
            &self.state.active,
            &self.meas,
            &self.refs,
            &mut self.state.voltage_controller,
            &mut self.state.current_controller,
            &mut self.state.inverter_voltage,
            &mut self.scratch,
            true,
        );
        let topo = Topology {
            inverters: &self.config.inverters,
            connected: &self.state.connected,
            inductive: self.inductive,
            load_resistance: self.load_resistance,
            load_inductance: self.load_inductance,
        };
        self.rk.advance(&topo, &mut self.state.continuous, &self.state.inverter_voltage, self.dt, self.substeps);
        self.update_droop();
        self.state.step_index += 1;
        self.state.time = self.state.step_index as f64 * self.dt;
        if let Some(j) = self.state.continuous.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { time: self.state.time, what: format!("continuous state {j}") });
        }
        Ok(())
    }

    /// Measures at the current instant and feeds the demodulation windows and delay lines.
    fn sample(&mut self) {
        let topo = Topology {
            inverters: &self.config.inverters,
            connected: &self.state.connected,
            inductive: self.inductive,
            load_resistance: self.load_resistance,
            load_inductance: self.load_inductance,
        };
        measure(&topo, &self.state.continuous, &mut self.meas);
        let (s, c) = (self.config.nominal_frequency * self.state.time).sin_cos();
        for k in 0..self.config.len() {
            self.windows[k].push(self.meas.v[k], self.meas.i[k], s, c);
            if !self.full_droop.is_empty() {
                self.delay_v[k].push(self.meas.v[k]);
                self.delay_i[k].push(self.meas.i[k]);
            }
        }
    }

    fn update_droop(&mut self) {
        for k in 0..self.config.len() {
            if !self.state.active[k] {
                continue;
            }
            let p = self.meas.v[k] * self.meas.i[k];
            if self.full_droop.is_empty() {
                self.state.droop[k] = droop::power_filter_step(self.state.droop[k], p, self.dt, &self.config.droop[k]);
            } else {
                let vb = -self.delay_v[k].delayed(self.quarter_delay);
                let ib = -self.delay_i[k].delayed(self.quarter_delay);
                // With x_beta lagging by a quarter period, v_beta i - v i_beta = V I sin(psi - phi).
                let q = 0.5 * (-vb * self.meas.i[k] + self.meas.v[k] * ib);
                let out = droop::full_droop_update(&self.state.full_droop[k], p, q, self.dt, &self.full_droop[k]);
                self.state.full_droop[k] = out.state;
            }
        }
    }

    /// Runs the remaining steps and returns the trace.
    pub fn run_to_end(mut self) -> core::result::Result<SimulationTrace, Box<SimulationFailure>> {
        while self.state.step_index < self.total_steps {
            let last_good = self.state.clone();
            if let Err(error) = self.step() {
                return Err(Box::new(SimulationFailure { error, partial: self.trace, last_good }));
            }
        }
        if self.state.step_index.is_multiple_of(self.decimation) {
            self.sample();
            self.record();
        }
        Ok(self.trace)
    }

    /// One linear step of the full sampled-data loop (no clamp, droop frozen, every inverter
    /// switching and connected). `s` packs `[continuous, voltage controllers, current
    /// controllers]`.
    fn linear_step(&mut self, s: &mut [f64], refs: &[f64]) {
        let n = self.config.len();
        let nx = 3 * n + 1;
        let (nv, nc) = (self.vctrl.state_dimension, self.cctrl.state_dimension);
        let mut xv: Vec<Vec<f64>> = (0..n).map(|k| s[nx + k * nv..nx + (k + 1) * nv].to_vec()).collect();
        let mut xc: Vec<Vec<f64>> =
            (0..n).map(|k| s[nx + n * nv + k * nc..nx + n * nv + (k + 1) * nc].to_vec()).collect();
        let connected = vec![true; n];
        let topo = Topology {
            inverters: &self.config.inverters,
            connected: &connected,
            inductive: self.inductive,
            load_resistance: self.load_resistance,
            load_inductance: self.load_inductance,
        };
        let mut m = Measurement { v_pcc: 0.0, v: vec![0.0; n], i: vec![0.0; n], il: vec![0.0; n] };
        measure(&topo, &s[..nx], &mut m);
        let mut v_inv = vec![0.0; n];
        control_law(
            &self.vctrl,
            &self.cctrl,
            &self.config.inverters,
            &connected,
            &m,
            refs,
            &mut xv,
            &mut xc,
            &mut v_inv,
            &mut self.scratch,
            false,
        );
        self.rk.advance(&topo, &mut s[..nx], &v_inv, self.dt, self.substeps);
        for k in 0..n {
            s[nx + k * nv..nx + (k + 1) * nv].copy_from_slice(&xv[k]);
            s[nx + n * nv + k * nc..nx + n * nv + (k + 1) * nc].copy_from_slice(&xc[k]);
        }
    }

    /// Complex amplitudes `S` of the periodic response `s_m = Im(S z^m)` to references
    /// `Im(R_k z^m)`, `z = exp(j w0 dt)`: `(z I - Phi) S = Gamma R`.
    fn periodic_response(&mut self, r: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.config.len();
        let dim = 3 * n + 1 + n * (self.vctrl.state_dimension + self.cctrl.state_dimension);
        let z = Complex64::from_polar(1.0, self.config.nominal_frequency * self.dt);
        let mut a = vec![Complex64::zero(); dim * dim];
        let zero_refs = vec![0.0; n];
        for j in 0..dim {
            let mut s = vec![0.0; dim];
            s[j] = 1.0;
            self.linear_step(&mut s, &zero_refs);
            for i in 0..dim {
                a[i * dim + j] = Complex64::new(-s[i], 0.0);
            }
            a[j * dim + j] += z;
        }
        let mut b = vec![Complex64::zero(); dim];
        for (k, rk) in r.iter().enumerate() {
            let mut s = vec![0.0; dim];
            let mut unit = vec![0.0; n];
            unit[k] = 1.0;
            self.linear_step(&mut s, &unit);
            for i in 0..dim {
                b[i] += rk * s[i];
            }
        }
        crate::linalg::solve_complex(&mut a, &mut b)?;
        Ok(b)
    }

    /// Starts from the periodic steady state at the droop equilibrium. The magnitudes are
    /// refined against the loop's own power so the droop filters start at their fixed point.
    fn start_at_equilibrium(&mut self) -> Result<()> {
        let n = self.config.len();
        let nx = 3 * n + 1;
        let eq = crate::steady_state::droop_equilibrium(&self.config)?;
        let mut e = eq.voltage_magnitudes.clone();
        let w0 = self.config.nominal_frequency;
        let connected = vec![true; n];
        let phasor_power = |sim: &Simulator, s: &[Complex64]| -> Vec<f64> {
            let topo = Topology {
                inverters: &sim.config.inverters,
                connected: &connected,
                inductive: sim.inductive,
                load_resistance: sim.load_resistance,
                load_inductance: sim.load_inductance,
            };
            let v_pcc = dynamics::pcc_voltage(&topo, &s[n..2 * n], &s[2 * n..3 * n], s[3 * n]);
            (0..n)
                .map(|k| {
                    let i = dynamics::branch_current(&topo, k, s[n + k], v_pcc, s[2 * n + k]);
                    0.5 * (s[n + k] * i.conj()).re
                })
                .collect()
        };
        let mut s = Vec::new();
        let mut p = Vec::new();
        for _ in 0..200 {
            let r: Vec<Complex64> = e
                .iter()
                .zip(&self.state.clocks)
                .map(|(m, c)| Complex64::from_polar(*m, c.unwrapped_phase_at(0.0, w0)))
                .collect();
            s = self.periodic_response(&r)?;
            p = phasor_power(self, &s);
            let target: Vec<f64> =
                self.config.droop.iter().zip(&p).map(|(d, p)| d.clamp(droop::vpd_voltage_unclamped(*p, d))).collect();
            let change = target.iter().zip(&e).fold(0.0_f64, |m, (t, x)| m.max((t - x).abs()));
            for (x, t) in e.iter_mut().zip(&target) {
                *x += 0.5 * (t - *x);
            }
            if change < 1e-10 {
                break;
            }
        }
        let at = |m: i64| -> Vec<f64> {
            let zm = Complex64::from_polar(1.0, w0 * self.dt * m as f64);
            s.iter().map(|x| (x * zm).im).collect()
        };
        // Prefill the demodulation windows with the preceding cycle.
        let period_steps = self.windows[0].buf.len() as i64;
        for m in -period_steps..0 {
            let sm = at(m);
            let topo = self.topology();
            let mut meas = Measurement { v_pcc: 0.0, v: vec![0.0; n], i: vec![0.0; n], il: vec![0.0; n] };
            measure(&topo, &sm[..nx], &mut meas);
            let (sn, cs) = (w0 * self.dt * m as f64).sin_cos();
            for k in 0..n {
                self.windows[k].push(meas.v[k], meas.i[k], sn, cs);
            }
        }
        let s0 = at(0);
        let (nv, nc) = (self.vctrl.state_dimension, self.cctrl.state_dimension);
        self.state.continuous.copy_from_slice(&s0[..nx]);
        for k in 0..n {
            self.state.voltage_controller[k].copy_from_slice(&s0[nx + k * nv..nx + (k + 1) * nv]);
            self.state.current_controller[k].copy_from_slice(&s0[nx + n * nv + k * nc..nx + n * nv + (k + 1) * nc]);
            self.state.enable_time[k] = f64::NEG_INFINITY;
            self.state.droop[k] = DroopState { filtered_active_power: p[k], commanded_magnitude: e[k] };
        }
        Ok(())
    }
}

/// Runs `scenario` to completion.
pub fn run(scenario: &Scenario) -> core::result::Result<SimulationTrace, Box<SimulationFailure>> {
    let sim = Simulator::new(scenario).map_err(|error| {
        let n = scenario.config.len();
        Box::new(SimulationFailure {
            error,
            partial: SimulationTrace::with_capacity(n, 0),
            last_good: SimulationState {
                time: 0.0,
                step_index: 0,
                continuous: vec![0.0; 3 * n + 1],
                voltage_controller: Vec::new(),
                current_controller: Vec::new(),
                droop: Vec::new(),
                full_droop: Vec::new(),
                connected: vec![false; n],
                active: vec![false; n],
                enable_time: Vec::new(),
                inverter_voltage: vec![0.0; n],
                clocks: Vec::new(),
            },
        })
    })?;
    sim.run_to_end()
}
