//! Complex-envelope model of the closed loop, linearization about the droop equilibrium,
//! eigenvalue reports and one-parameter stability sweeps.
//!
//! A signal `x(t) = Im(X(t) e^{j w0 t})` is carried by its envelope `X`. A real LTI block
//! `x' = A x + B u` becomes `X' = (A - j w0) X + B U` on envelopes, so sinusoidal steady states
//! of the time-domain loop are fixed points here. Each inverter keeps its states in its own
//! clock frame; they are rotated into the common frame at the PCC.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
#[allow(unused_imports)]
use num_traits::Float;

use crate::controller::{realize_continuous, ContinuousRealization};
use crate::droop::vpd_voltage_unclamped;
use crate::dynamics::{self, Topology};
use crate::error::{Error, Result};
use crate::net::{load_impedance_at, Architecture, LoadModel, MicrogridConfig};
use crate::steady_state::droop_equilibrium;

/// Relative finite-difference step; the absolute floor is [`FD_ABSOLUTE_FLOOR`].
pub const FD_RELATIVE_STEP: f64 = 1e-6;
pub const FD_ABSOLUTE_FLOOR: f64 = 1e-9;
/// Largest accepted scaled residual of the envelope dynamics at an operating point.
pub const OPERATING_POINT_TOLERANCE: f64 = 1e-8;

fn cplx(x: &[f64], at: usize) -> Complex64 {
    Complex64::new(x[at], x[at + 1])
}

fn put(out: &mut [f64], at: usize, z: Complex64) {
    out[at] = z.re;
    out[at + 1] = z.im;
}

/// Envelope dynamics of one configuration, with its state layout.
///
/// Per inverter (own frame): `i_L, v, voltage-controller states, current-controller states`
/// as `(re, im)` pairs, then the filtered power `P_k`. After all inverters (common frame): line
/// currents when the branches are inductive, then the load current when it is a state.
#[derive(Debug, Clone)]
pub struct EnvelopeModel {
    config: MicrogridConfig,
    vctrl: ContinuousRealization,
    cctrl: ContinuousRealization,
    inductive: bool,
    load_inductance: f64,
    connected: Vec<bool>,
    /// `exp(j theta_k)`, local to common frame.
    rotation: Vec<Complex64>,
}

impl EnvelopeModel {
    pub fn new(config: &MicrogridConfig) -> Result<Self> {
        config.validate()?;
        if matches!(config.architecture, Architecture::FullDroop(_)) {
            return Err(Error::invalid("the envelope model covers the isochronous architecture only"));
        }
        let load_inductance = config.load.inductance()?;
        Ok(EnvelopeModel {
            vctrl: realize_continuous(&config.controllers.voltage_controller)?,
            cctrl: realize_continuous(&config.controllers.current_controller)?,
            inductive: config.inductive_branches()?,
            load_inductance,
            connected: vec![true; config.len()],
            rotation: config.clocks.iter().map(|c| Complex64::from_polar(1.0, c.phase_offset)).collect(),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &MicrogridConfig {
        &self.config
    }

    /// Real states per inverter block.
    pub fn block_dimension(&self) -> usize {
        2 * (2 + self.vctrl.state_dimension + self.cctrl.state_dimension) + 1
    }

    fn load_state(&self) -> bool {
        !self.inductive && self.load_inductance > 0.0
    }

    fn network_offset(&self) -> usize {
        self.config.len() * self.block_dimension()
    }

    pub fn dimension(&self) -> usize {
        self.network_offset() + if self.inductive { 2 * self.config.len() } else { 0 } + if self.load_state() { 2 } else { 0 }
    }

    pub fn state_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.dimension());
        let pair = |labels: &mut Vec<String>, name: String| {
            labels.push(format!("{name}.re"));
            labels.push(format!("{name}.im"));
        };
        for k in 1..=self.config.len() {
            pair(&mut labels, format!("iL{k}"));
            pair(&mut labels, format!("v{k}"));
            for s in 0..self.vctrl.state_dimension {
                pair(&mut labels, format!("xv{k}_{s}"));
            }
            for s in 0..self.cctrl.state_dimension {
                pair(&mut labels, format!("xc{k}_{s}"));
            }
            labels.push(format!("P{k}"));
        }
        if self.inductive {
            for k in 1..=self.config.len() {
                pair(&mut labels, format!("iline{k}"));
            }
        }
        if self.load_state() {
            pair(&mut labels, String::from("iload"));
        }
        labels
    }

    fn topology(&self) -> Topology<'_> {
        Topology {
            inverters: &self.config.inverters,
            connected: &self.connected,
            inductive: self.inductive,
            load_resistance: self.config.load.resistance(),
            load_inductance: self.load_inductance,
        }
    }

    /// Branch currents in each inverter's own frame.
    pub fn local_branch_currents(&self, x: &[f64]) -> Vec<Complex64> {
        let n = self.config.len();
        let m = self.block_dimension();
        let off = self.network_offset();
        let topo = self.topology();
        let vc: Vec<Complex64> = (0..n).map(|k| cplx(x, k * m + 2) * self.rotation[k]).collect();
        let line: Vec<Complex64> =
            (0..n).map(|k| if self.inductive { cplx(x, off + 2 * k) } else { Complex64::zero() }).collect();
        let load = if self.load_state() { cplx(x, off) } else { Complex64::zero() };
        let vp = dynamics::pcc_voltage(&topo, &vc, &line, load);
        (0..n).map(|k| dynamics::branch_current(&topo, k, vc[k], vp, line[k]) * self.rotation[k].conj()).collect()
    }

    /// Dynamics of inverter `k` in its own frame with the branch current `i` as an input.
    /// `magnitude` overrides the droop output when given.
    pub fn inverter_dynamics(&self, k: usize, s: &[f64], i: Complex64, magnitude: Option<f64>, out: &mut [f64]) {
        let w0 = self.config.nominal_frequency;
        let jw = Complex64::new(0.0, w0);
        let inv = &self.config.inverters[k];
        let d = &self.config.droop[k];
        let (nv, nc) = (self.vctrl.state_dimension, self.cctrl.state_dimension);
        let m = self.block_dimension();
        let il = cplx(s, 0);
        let v = cplx(s, 2);
        let xv: Vec<Complex64> = (0..nv).map(|q| cplx(s, 4 + 2 * q)).collect();
        let xc: Vec<Complex64> = (0..nc).map(|q| cplx(s, 4 + 2 * nv + 2 * q)).collect();
        let pf = s[m - 1];
        let e = magnitude.unwrap_or_else(|| d.clamp(vpd_voltage_unclamped(pf, d)));
        let ev = Complex64::new(e, 0.0) - i * inv.virtual_resistance - v;
        let i_ref = self.vctrl.output(&xv, ev) + i;
        let ec = i_ref - il;
        let v_inv = self.cctrl.output(&xc, ec) + v;
        let mut dx = vec![Complex64::zero(); nv.max(nc)];
        self.vctrl.derivative(&xv, ev, &mut dx[..nv]);
        for q in 0..nv {
            put(out, 4 + 2 * q, dx[q] - jw * xv[q]);
        }
        self.cctrl.derivative(&xc, ec, &mut dx[..nc]);
        for q in 0..nc {
            put(out, 4 + 2 * nv + 2 * q, dx[q] - jw * xc[q]);
        }
        let (dil, dv) = dynamics::filter_derivative(inv, il, v, v_inv, i);
        put(out, 0, dil - jw * il);
        put(out, 2, dv - jw * v);
        out[m - 1] = d.power_filter_bandwidth * (0.5 * (v * i.conj()).re - pf);
    }

    fn eval(&self, x: &[f64], magnitudes: Option<&[f64]>, out: &mut [f64]) {
        let n = self.config.len();
        let m = self.block_dimension();
        let off = self.network_offset();
        let jw = Complex64::new(0.0, self.config.nominal_frequency);
        let i_loc = self.local_branch_currents(x);
        for k in 0..n {
            let e = magnitudes.map(|e| e[k]);
            self.inverter_dynamics(k, &x[k * m..(k + 1) * m], i_loc[k], e, &mut out[k * m..(k + 1) * m]);
        }
        if !self.inductive && !self.load_state() {
            return;
        }
        let topo = self.topology();
        let vc: Vec<Complex64> = (0..n).map(|k| cplx(x, k * m + 2) * self.rotation[k]).collect();
        let line: Vec<Complex64> =
            (0..n).map(|k| if self.inductive { cplx(x, off + 2 * k) } else { Complex64::zero() }).collect();
        let load = if self.load_state() { cplx(x, off) } else { Complex64::zero() };
        let vp = dynamics::pcc_voltage(&topo, &vc, &line, load);
        if self.inductive {
            for k in 0..n {
                put(out, off + 2 * k, dynamics::line_derivative(&topo, k, vc[k], vp, line[k]) - jw * line[k]);
            }
        } else {
            put(out, off, dynamics::load_derivative(&topo, vp, load) - jw * load);
        }
    }

    /// Time derivative of the envelope state `x`.
    pub fn derivative(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        self.eval(x, None, &mut out);
        out
    }

    /// Active power `1/2 Re(V I*)` of every inverter at `x`.
    pub fn active_powers(&self, x: &[f64]) -> Vec<f64> {
        let m = self.block_dimension();
        self.local_branch_currents(x)
            .iter()
            .enumerate()
            .map(|(k, i)| 0.5 * (cplx(x, k * m + 2) * i.conj()).re)
            .collect()
    }

    /// Fixed point of the dynamics with the magnitudes held at `e`; the power states are left
    /// at zero. The dynamics are affine in the remaining states, so one linear solve suffices.
    fn solve_with_magnitudes(&self, e: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dimension();
        let m = self.block_dimension();
        let power_slot = |i: usize| i < self.network_offset() && i % m == m - 1;
        let free: Vec<usize> = (0..dim).filter(|i| !power_slot(*i)).collect();
        let mut f0 = vec![0.0; dim];
        self.eval(&vec![0.0; dim], Some(e), &mut f0);
        let mut jac = DMatrix::zeros(free.len(), free.len());
        let mut x = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for (c, &i) in free.iter().enumerate() {
            x[i] = 1.0;
            self.eval(&x, Some(e), &mut col);
            for (r, &row) in free.iter().enumerate() {
                jac[(r, c)] = col[row] - f0[row];
            }
            x[i] = 0.0;
        }
        let rhs = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&r| -f0[r]));
        let sol = jac.lu().solve(&rhs).ok_or_else(|| Error::Degenerate("envelope equations are singular".into()))?;
        for (c, &i) in free.iter().enumerate() {
            x[i] = sol[c];
        }
        Ok(x)
    }

    /// Largest residual of the dynamics at `x`, each row scaled by the size of its terms.
    pub fn scaled_residual(&self, x: &[f64]) -> f64 {
        let dim = self.dimension();
        let f = self.derivative(x);
        let mut scale = vec![0.0; dim];
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        let zero = self.derivative(&vec![0.0; dim]);
        for j in 0..dim {
            if x[j] == 0.0 {
                continue;
            }
            e[j] = x[j];
            self.eval(&e, None, &mut col);
            for i in 0..dim {
                scale[i] += (col[i] - zero[i]).abs();
            }
            e[j] = 0.0;
        }
        for (s, z) in scale.iter_mut().zip(&zero) {
            *s += z.abs();
        }
        // Rows whose terms all vanish at the fixed point only carry rounding noise; measure them
        // against a small fraction of the largest row instead.
        let floor = 1e-6 * scale.iter().fold(0.0_f64, |m, s| m.max(*s));
        f.iter().zip(&scale).fold(0.0_f64, |r, (fi, s)| r.max(fi.abs() / s.max(floor).max(f64::MIN_POSITIVE)))
    }

    /// Operating point at the droop equilibrium.
    pub fn operating_point(&self) -> Result<OperatingPoint> {
        let cfg = &self.config;
        let n = cfg.len();
        let m = self.block_dimension();
        let eq = droop_equilibrium(cfg)?;
        let mut e = eq.voltage_magnitudes.clone();
        let mut x = Vec::new();
        let mut p = Vec::new();
        let mut converged = false;
        let mut history = Vec::new();
        for _ in 0..500 {
            x = self.solve_with_magnitudes(&e)?;
            p = self.active_powers(&x);
            let target: Vec<f64> =
                cfg.droop.iter().zip(&p).map(|(d, p)| d.clamp(vpd_voltage_unclamped(*p, d))).collect();
            let change = target.iter().zip(&e).fold(0.0_f64, |r, (t, x)| r.max((t - x).abs()));
            history.push(change);
            for (x, t) in e.iter_mut().zip(&target) {
                *x += 0.5 * (t - *x);
            }
            if change < 1e-12 * cfg.nominal_voltage_magnitude {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: "envelope operating point",
                iterations: history.len(),
                residual: history.last().copied().unwrap_or(f64::NAN),
                history,
                last_iterate: e,
            });
        }
        for k in 0..n {
            x[k * m + m - 1] = p[k];
        }
        let residual = self.scaled_residual(&x);
        if !(residual < OPERATING_POINT_TOLERANCE) {
            return Err(Error::NonConvergence {
                what: "envelope operating point residual",
                iterations: history.len(),
                residual,
                history,
                last_iterate: x,
            });
        }
        Ok(OperatingPoint {
            state: x,
            rotation_angles: cfg.clocks.iter().map(|c| -c.phase_offset).collect(),
            voltage_magnitudes: e,
            residual,
        })
    }

    /// Capacitor-voltage and branch-current phasors (common frame) at `x`.
    pub fn phasors(&self, x: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let m = self.block_dimension();
        let i = self.local_branch_currents(x);
        let v = (0..self.config.len()).map(|k| cplx(x, k * m + 2) * self.rotation[k]).collect();
        (v, i.iter().zip(&self.rotation).map(|(i, r)| i * r).collect())
    }
}

/// Envelope derivative of `x` for `config`.
pub fn envelope_dynamics(x: &[f64], config: &MicrogridConfig) -> Result<Vec<f64>> {
    let model = EnvelopeModel::new(config)?;
    if x.len() != model.dimension() {
        return Err(Error::invalid(format!("envelope state has {} entries, expected {}", x.len(), model.dimension())));
    }
    Ok(model.derivative(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub state: Vec<f64>,
    /// Theta_k = theta_com - theta_k with theta_com = 0.
    pub rotation_angles: Vec<f64>,
    pub voltage_magnitudes: Vec<f64>,
    pub residual: f64,
}

pub fn operating_point(config: &MicrogridConfig) -> Result<OperatingPoint> {
    EnvelopeModel::new(config)?.operating_point()
}

/// Linearized dynamics of one inverter in its own frame with the branch current as input.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterBlock {
    pub a: DMatrix<f64>,
    /// Columns: real and imaginary part of the local branch current.
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub system_matrix: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub inverter_blocks: Vec<InverterBlock>,
    /// `[[cos, -sin], [sin, cos]]` of Theta_k: maps common-frame (re, im) to the inverter frame.
    pub rotation_maps: Vec<[[f64; 2]; 2]>,
}

pub fn rotation_map(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

fn fd_step(x: f64, relative: f64) -> f64 {
    (relative * x.abs()).max(FD_ABSOLUTE_FLOOR * relative / FD_RELATIVE_STEP)
}

/// Central-difference Jacobian of `f` at `x`.
fn jacobian(x: &[f64], rows: usize, relative: f64, mut f: impl FnMut(&[f64], &mut [f64])) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; rows];
    let mut fm = vec![0.0; rows];
    for j in 0..x.len() {
        let h = fd_step(x[j], relative);
        xp[j] = x[j] + h;
        f(&xp, &mut fp);
        xp[j] = x[j] - h;
        f(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..rows {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Linearizes the envelope model at `point` with the default step.
pub fn linearize(point: &OperatingPoint, config: &MicrogridConfig) -> Result<LinearModel> {
    linearize_with_step(point, config, FD_RELATIVE_STEP)
}

/// As [`linearize`] with the relative step `relative` (the absolute floor scales with it).
pub fn linearize_with_step(point: &OperatingPoint, config: &MicrogridConfig, relative: f64) -> Result<LinearModel> {
    let model = EnvelopeModel::new(config)?;
    let dim = model.dimension();
    if point.state.len() != dim {
        return Err(Error::invalid("operating point does not belong to this configuration"));
    }
    if !(point.residual < OPERATING_POINT_TOLERANCE) {
        return Err(Error::NonConvergence {
            what: "operating point",
            iterations: 0,
            residual: point.residual,
            history: Vec::new(),
            last_iterate: point.state.clone(),
        });
    }
    let system_matrix = jacobian(&point.state, dim, relative, |x, out| model.eval(x, None, out));
    let m = model.block_dimension();
    let i_loc = model.local_branch_currents(&point.state);
    let inverter_blocks = (0..config.len())
        .map(|k| {
            let s = &point.state[k * m..(k + 1) * m];
            let a = jacobian(s, m, relative, |s, out| model.inverter_dynamics(k, s, i_loc[k], None, out));
            let b = jacobian(&[i_loc[k].re, i_loc[k].im], m, relative, |i, out| {
                model.inverter_dynamics(k, s, Complex64::new(i[0], i[1]), None, out)
            });
            InverterBlock { a, b }
        })
        .collect();
    Ok(LinearModel {
        system_matrix,
        state_labels: model.state_labels(),
        inverter_blocks,
        rotation_maps: point.rotation_angles.iter().map(|t| rotation_map(*t)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenReport {
    pub eigenvalues: Vec<Complex64>,
    pub spectral_abscissa: f64,
    pub dominant_eigenvalue: Complex64,
    /// State with the largest participation in the dominant mode.
    pub dominant_mode_label: String,
    /// Normalised participation of every state in the dominant mode.
    pub participation: Vec<f64>,
    pub stable: bool,
}

/// Participation factors `|w_i v_i| / sum |w_j v_j|` of the mode at `lambda`.
pub fn participation(a: &DMatrix<f64>, lambda: Complex64) -> Result<Vec<f64>> {
    let v = crate::linalg::eigenvector(a, lambda, false)?;
    let w = crate::linalg::eigenvector(a, lambda, true)?;
    let raw: Vec<f64> = v.iter().zip(&w).map(|(v, w)| (v * w).norm()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("mode has no participation".into()));
    }
    Ok(raw.iter().map(|p| p / total).collect())
}

pub fn eigen_report(model: &LinearModel) -> Result<EigenReport> {
    report_for(&model.system_matrix, &model.state_labels)
}

/// Eigenvalue report of a bare matrix with the given state labels.
pub fn report_for(a: &DMatrix<f64>, labels: &[String]) -> Result<EigenReport> {
    if a.nrows() != a.ncols() || a.nrows() != labels.len() || a.nrows() == 0 {
        return Err(Error::invalid("system matrix must be square, non-empty and labelled"));
    }
    let eigenvalues = crate::linalg::eigenvalues(a).map_err(|e| match e {
        Error::NonConvergence { what, iterations, residual, history, .. } => Error::NonConvergence {
            what,
            iterations,
            residual,
            history,
            // Row-major dump of the offending matrix.
            last_iterate: a.transpose().iter().copied().collect(),
        },
        other => other,
    })?;
    let dominant = eigenvalues
        .iter()
        .copied()
        .fold(None, |best: Option<Complex64>, z| match best {
            Some(b) if b.re >= z.re => Some(b),
            _ => Some(z),
        })
        .unwrap_or_default();
    let participation = participation(a, dominant)?;
    let top = participation
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (i, p)| if *p > best.1 { (i, *p) } else { best })
        .0;
    Ok(EigenReport {
        spectral_abscissa: dominant.re,
        dominant_eigenvalue: dominant,
        dominant_mode_label: labels[top].clone(),
        participation,
        stable: dominant.re < 0.0,
        eigenvalues,
    })
}

/// Operating point, linearization and report in one call.
pub fn analyze(config: &MicrogridConfig) -> Result<EigenReport> {
    let point = operating_point(config)?;
    eigen_report(&linearize(&point, config)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Clock offset of the last inverter, degrees.
    ClockAngle,
    /// Droop coefficient of the first inverter, V/W; the others keep their ratio to it.
    DroopGain,
    /// Virtual resistance of every inverter, ohm.
    VirtualResistance,
    /// Lagging load power factor at the load's apparent power at E*.
    LoadPowerFactor,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ClockAngle => "clock_angle",
            SweepAxis::DroopGain => "droop_gain",
            SweepAxis::VirtualResistance => "virtual_resistance",
            SweepAxis::LoadPowerFactor => "load_pf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SweepAxis::ClockAngle, SweepAxis::DroopGain, SweepAxis::VirtualResistance, SweepAxis::LoadPowerFactor]
            .into_iter()
            .find(|a| a.name() == s)
    }
}

/// `config` with the swept parameter set to `value`.
pub fn apply_sweep_value(config: &MicrogridConfig, axis: SweepAxis, value: f64) -> Result<MicrogridConfig> {
    let mut cfg = config.clone();
    if !value.is_finite() {
        return Err(Error::domain("sweep value must be finite"));
    }
    match axis {
        SweepAxis::ClockAngle => {
            let last = cfg.clocks.last_mut().ok_or_else(|| Error::invalid("no inverters"))?;
            last.phase_offset = value * PI / 180.0;
        }
        SweepAxis::DroopGain => {
            let n1 = cfg.droop[0].droop_coefficient;
            for d in cfg.droop.iter_mut() {
                d.droop_coefficient = if n1 > 0.0 { value * d.droop_coefficient / n1 } else { value };
            }
        }
        SweepAxis::VirtualResistance => {
            for inv in cfg.inverters.iter_mut() {
                inv.virtual_resistance = value;
            }
        }
        SweepAxis::LoadPowerFactor => {
            let w0 = cfg.nominal_frequency;
            let e = cfg.nominal_voltage_magnitude;
            let z = load_impedance_at(&cfg.load, w0)?;
            cfg.load = LoadModel::from_apparent_power(e * e / (2.0 * z.norm()), value, e, w0)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub parameter: f64,
    pub outcome: Result<EigenReport>,
}

pub fn sweep_point(config: &MicrogridConfig, axis: SweepAxis, value: f64) -> SweepPoint {
    SweepPoint { parameter: value, outcome: apply_sweep_value(config, axis, value).and_then(|c| analyze(&c)) }
}

/// One report per grid value, each with its own equilibrium. Failures are kept per point.
pub fn stability_sweep(config: &MicrogridConfig, axis: SweepAxis, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    Ok(grid.iter().map(|v| sweep_point(config, axis, *v)).collect())
}
