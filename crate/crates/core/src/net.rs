//! Electrical description of the single-PCC star network and its admittance algebra.

use alloc::format;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Zero;
#[allow(unused_imports)]
use num_traits::Float;

use crate::clock::ClockModel;
use crate::controller::{ControllerSet, RationalTransferFunction};
use crate::droop::{DroopParams, QfDroopParams};
use crate::error::{Error, Result};

/// LC output filter, branch and control-side resistances of one inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterElectrical {
    pub filter_inductance: f64,
    pub filter_esr: f64,
    pub filter_capacitance: f64,
    pub virtual_resistance: f64,
    pub branch_resistance: f64,
    /// Series line inductance. Ignored by the closed-form engine, honoured by the time-domain
    /// and small-signal models.
    pub line_inductance: f64,
    pub rated_apparent_power: f64,
    pub dc_link_voltage: f64,
}

impl Default for InverterElectrical {
    /// Prototype values: 0.063 mH / 1 uF filter, 0.2 ohm branch and virtual resistance.
    fn default() -> Self {
        let l = 0.063e-3;
        InverterElectrical {
            filter_inductance: l,
            // Places the plant pole R/L on the current controller's zero at 1406 rad/s.
            filter_esr: 1406.0 * l,
            filter_capacitance: 1.0e-6,
            virtual_resistance: 0.2,
            branch_resistance: 0.2,
            line_inductance: 0.0,
            rated_apparent_power: 600.0,
            dc_link_voltage: 250.0,
        }
    }
}

impl InverterElectrical {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("filter_inductance", self.filter_inductance),
            ("filter_capacitance", self.filter_capacitance),
            ("branch_resistance", self.branch_resistance),
            ("rated_apparent_power", self.rated_apparent_power),
            ("dc_link_voltage", self.dc_link_voltage),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let nonneg = [
            ("filter_esr", self.filter_esr),
            ("virtual_resistance", self.virtual_resistance),
            ("line_inductance", self.line_inductance),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// r_k + R_vk.
    pub fn source_resistance(&self) -> f64 {
        self.branch_resistance + self.virtual_resistance
    }
}

/// Common load at the PCC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadModel {
    Resistive { resistance: f64 },
    SeriesRl { resistance: f64, inductance: f64 },
    /// A fixed complex impedance valid only at `angular_frequency`.
    ComplexAtFrequency { impedance: Complex64, angular_frequency: f64 },
}

impl LoadModel {
    /// Series R-L load drawing `apparent_power` at power factor `power_factor` (lagging) from a
    /// sinusoid of peak `voltage_amplitude`.
    pub fn from_apparent_power(
        apparent_power: f64,
        power_factor: f64,
        voltage_amplitude: f64,
        angular_frequency: f64,
    ) -> Result<Self> {
        if !(apparent_power > 0.0) || !(power_factor > 0.0 && power_factor <= 1.0) {
            return Err(Error::domain("load needs apparent power > 0 and power factor in (0, 1]"));
        }
        let z = voltage_amplitude * voltage_amplitude / (2.0 * apparent_power);
        let resistance = z * power_factor;
        let reactance = z * (1.0 - power_factor * power_factor).max(0.0).sqrt();
        if reactance == 0.0 {
            Ok(LoadModel::Resistive { resistance })
        } else {
            Ok(LoadModel::SeriesRl { resistance, inductance: reactance / angular_frequency })
        }
    }

    pub fn resistance(&self) -> f64 {
        match *self {
            LoadModel::Resistive { resistance } | LoadModel::SeriesRl { resistance, .. } => resistance,
            LoadModel::ComplexAtFrequency { impedance, .. } => impedance.re,
        }
    }

    /// Load inductance for the time-domain model (zero for a resistive load).
    pub fn inductance(&self) -> Result<f64> {
        match *self {
            LoadModel::Resistive { .. } => Ok(0.0),
            LoadModel::SeriesRl { inductance, .. } => Ok(inductance),
            LoadModel::ComplexAtFrequency { .. } => Err(Error::invalid(
                "a complex-at-frequency load has no time-domain realization; use a series R-L load",
            )),
        }
    }

    /// True when the time-domain model carries a load-current state.
    pub fn has_inductance(&self) -> bool {
        matches!(self, LoadModel::SeriesRl { inductance, .. } if *inductance > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LoadModel::Resistive { resistance } => {
                if !(resistance > 0.0) || !resistance.is_finite() {
                    return Err(Error::domain("load resistance must be positive"));
                }
            }
            LoadModel::SeriesRl { resistance, inductance } => {
                if !(resistance > 0.0) || !resistance.is_finite() {
                    return Err(Error::domain("load resistance must be positive"));
                }
                if !(inductance >= 0.0) || !inductance.is_finite() {
                    return Err(Error::domain("load inductance must be non-negative"));
                }
            }
            LoadModel::ComplexAtFrequency { impedance, angular_frequency } => {
                if !(impedance.re > 0.0) || !(impedance.im >= 0.0) || !(angular_frequency > 0.0) {
                    return Err(Error::domain(
                        "complex load needs positive resistance, non-negative reactance and a positive frequency",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Power-factor angle theta_L at `angular_frequency`.
    pub fn power_factor_angle(&self, angular_frequency: f64) -> Result<f64> {
        Ok(load_impedance_at(self, angular_frequency)?.arg())
    }
}

pub fn load_impedance_at(load: &LoadModel, angular_frequency: f64) -> Result<Complex64> {
    if !(angular_frequency > 0.0) {
        return Err(Error::domain("frequency must be positive"));
    }
    match *load {
        LoadModel::Resistive { resistance } => Ok(Complex64::new(resistance, 0.0)),
        LoadModel::SeriesRl { resistance, inductance } => {
            Ok(Complex64::new(resistance, angular_frequency * inductance))
        }
        LoadModel::ComplexAtFrequency { impedance, angular_frequency: w } => {
            if (w - angular_frequency).abs() > 1e-9 * w {
                Err(Error::domain(format!(
                    "complex load is defined at {w} rad/s, queried at {angular_frequency} rad/s"
                )))
            } else {
                Ok(impedance)
            }
        }
    }
}

/// Outer-loop architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    /// Voltage-active-power droop with every reference phase taken from the common clock.
    Isochronous,
    /// P-V plus Q-f droop with locally integrated phase (comparison baseline).
    FullDroop(Vec<QfDroopParams>),
}

/// Voltage and current controllers shared by every inverter. The virtual resistance is
/// per-inverter and lives in [`InverterElectrical`].
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerDesign {
    pub voltage_controller: RationalTransferFunction,
    pub current_controller: RationalTransferFunction,
}

impl Default for ControllerDesign {
    fn default() -> Self {
        let c = crate::controller::default_controllers();
        ControllerDesign { voltage_controller: c.voltage_controller, current_controller: c.current_controller }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridConfig {
    pub inverters: Vec<InverterElectrical>,
    pub load: LoadModel,
    /// E*, peak volts.
    pub nominal_voltage_magnitude: f64,
    /// omega_0, rad/s.
    pub nominal_frequency: f64,
    pub droop: Vec<DroopParams>,
    pub clocks: Vec<ClockModel>,
    pub controllers: ControllerDesign,
    pub architecture: Architecture,
}

impl MicrogridConfig {
    pub fn len(&self) -> usize {
        self.inverters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inverters.is_empty()
    }

    pub fn controller_set(&self, k: usize) -> ControllerSet {
        ControllerSet {
            voltage_controller: self.controllers.voltage_controller.clone(),
            current_controller: self.controllers.current_controller.clone(),
            virtual_resistance: self.inverters[k].virtual_resistance,
        }
    }

    /// True when every inverter has a series line inductance; false when none has.
    pub fn inductive_branches(&self) -> Result<bool> {
        let n_ind = self.inverters.iter().filter(|i| i.line_inductance > 0.0).count();
        if n_ind == 0 {
            Ok(false)
        } else if n_ind == self.inverters.len() {
            Ok(true)
        } else {
            Err(Error::invalid(
                "line inductance must be either zero for every inverter or positive for every inverter",
            ))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inverters.len();
        if n == 0 {
            return Err(Error::invalid("at least one inverter is required"));
        }
        if self.droop.len() != n || self.clocks.len() != n {
            return Err(Error::invalid(format!(
                "list lengths disagree: {n} inverters, {} droop entries, {} clocks",
                self.droop.len(),
                self.clocks.len()
            )));
        }
        if let Architecture::FullDroop(q) = &self.architecture {
            if q.len() != n {
                return Err(Error::invalid("full-droop parameters must have one entry per inverter"));
            }
            for p in q {
                p.validate()?;
            }
        }
        if !(self.nominal_frequency > 0.0) || !self.nominal_frequency.is_finite() {
            return Err(Error::domain("nominal frequency must be positive"));
        }
        if !(self.nominal_voltage_magnitude > 0.0) || !self.nominal_voltage_magnitude.is_finite() {
            return Err(Error::domain("nominal voltage must be positive"));
        }
        for inv in &self.inverters {
            inv.validate()?;
        }
        for d in &self.droop {
            d.validate_basic()?;
        }
        for c in &self.clocks {
            c.validate()?;
        }
        self.load.validate()?;
        self.inductive_branches()?;
        Ok(())
    }
}

/// Woodbury-reduced admittance quantities of the star network at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceModel {
    /// 1/(r_k + R_vk).
    pub lambda_v: Vec<Complex64>,
    /// Z_L^-1 + sum 1/r_k (branches without virtual resistance).
    pub h_inv: Complex64,
    /// (Z_L^-1 + sum 1/(r_m + R_vm))^-1.
    pub alpha: Complex64,
    /// alpha * sum lambda_v.
    pub nu: Complex64,
    /// lambda_v / sum lambda_v.
    pub xi: Vec<Complex64>,
    pub load_impedance: Complex64,
}

impl AdmittanceModel {
    /// Diagonal of Lambda_v as a dense row-major matrix.
    pub fn lambda_matrix(&self) -> Vec<Complex64> {
        let n = self.lambda_v.len();
        let mut m = alloc::vec![Complex64::zero(); n * n];
        for (k, l) in self.lambda_v.iter().enumerate() {
            m[k * n + k] = *l;
        }
        m
    }

    pub fn lambda_sum(&self) -> Complex64 {
        self.lambda_v.iter().sum()
    }
}

pub fn build_admittance(config: &MicrogridConfig, angular_frequency: f64) -> Result<AdmittanceModel> {
    let z_l = load_impedance_at(&config.load, angular_frequency)?;
    if z_l.norm() == 0.0 || !z_l.norm().is_finite() {
        return Err(Error::domain("load impedance must be nonzero and finite"));
    }
    let mut lambda_v = Vec::with_capacity(config.len());
    let mut g_branch = 0.0;
    for inv in &config.inverters {
        let rs = inv.source_resistance();
        if !(rs > 0.0) {
            return Err(Error::domain("r_k + R_vk must be positive"));
        }
        lambda_v.push(Complex64::new(1.0 / rs, 0.0));
        g_branch += 1.0 / inv.branch_resistance;
    }
    let y_l = z_l.inv();
    let lsum: Complex64 = lambda_v.iter().sum();
    let alpha = (y_l + lsum).inv();
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::Unbounded("alpha".into()));
    }
    let nu = alpha * lsum;
    let xi = lambda_v.iter().map(|l| l / lsum).collect();
    Ok(AdmittanceModel { lambda_v, h_inv: y_l + g_branch, alpha, nu, xi, load_impedance: z_l })
}
