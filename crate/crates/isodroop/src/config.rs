//! Sectioned `key = value` scenario files with typed units.
//!
//! ```text
//! [system]
//! inverters = 2
//! voltage = 120 V rms
//! frequency = 60 Hz
//!
//! [load]
//! apparent_power = 580 VA
//! power_factor = 0.9
//!
//! [inverter]          # applies to every inverter
//! droop_coefficient = 0.01
//!
//! [inverter.2]        # overrides for inverter 2 (1-based)
//! branch_resistance = 0.2 ohm
//!
//! [simulation]
//! duration = 1.5 s
//!
//! [event]             # one section per event, in time order
//! time = 1 s
//! action = load_step
//! resistance = 30 ohm
//! ```
//!
//! A bare number is in SI base units (V peak, rad/s, ohm, H, F, W, s, rad). Voltages accept a
//! trailing `rms` or `peak` flag. Omitted electrical values default to the prototype table.

use std::f64::consts::{PI, SQRT_2, TAU};
use std::fmt::{self, Write as _};

use isodroop_core::clock::ClockModel;
use isodroop_core::controller::{default_controllers_at, RationalTransferFunction};
use isodroop_core::droop::{DroopParams, QfDroopParams};
use isodroop_core::net::{Architecture, ControllerDesign, InverterElectrical, LoadModel, MicrogridConfig};
use isodroop_core::presets::{DEFAULT_DROOP_COEFFICIENT, DEFAULT_POWER_REFERENCE, NOMINAL_FREQUENCY, NOMINAL_VOLTAGE};
use isodroop_core::smallsignal::SweepAxis;
use isodroop_core::timedomain::{ClockEventKind, Event, EventKind, InitialCondition, Scenario};

/// Parse or validation failure. `line` is 1-based; `None` when the problem is not tied to one
/// line (a missing section or a cross-field invariant).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<Origin>,
    pub message: String,
}

/// Where a value came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Line(usize),
    Override(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.line {
            Some(Origin::Line(n)) => write!(f, "line {n}: {}", self.message),
            Some(Origin::Override(s)) => write!(f, "--set {s}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn err<T>(origin: &Origin, message: impl Into<String>) -> Result<T> {
    Err(ConfigError { line: Some(origin.clone()), message: message.into() })
}

fn global<T>(message: impl Into<String>) -> Result<T> {
    Err(ConfigError { line: None, message: message.into() })
}

/// Grid of a stability sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Everything a scenario file describes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    /// Final window for the metrics report; `None` means ten fundamental periods.
    pub metrics_window: Option<f64>,
    pub sweep: Option<SweepSpec>,
}

impl ScenarioFile {
    pub fn config(&self) -> &MicrogridConfig {
        &self.scenario.config
    }

    pub fn metrics_window(&self) -> f64 {
        self.metrics_window.unwrap_or(10.0 * TAU / self.scenario.config.nominal_frequency)
    }
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    origin: Origin,
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    index: Option<usize>,
    origin: Origin,
    entries: Vec<Entry>,
}

const SECTIONS: [&str; 7] = ["system", "load", "inverter", "controller", "simulation", "event", "sweep"];

fn parse_document(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let origin = Origin::Line(i + 1);
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(head) = rest.strip_suffix(']') else {
                return err(&origin, "unterminated section header");
            };
            let head = head.trim();
            let (name, index) = match head.split_once('.') {
                Some((n, idx)) => {
                    let k: usize = idx.trim().parse().map_err(|_| ConfigError {
                        line: Some(origin.clone()),
                        message: format!("bad section index '{idx}'"),
                    })?;
                    (n.trim(), Some(k))
                }
                None => (head, None),
            };
            if !SECTIONS.contains(&name) {
                return err(&origin, format!("unknown section [{name}]"));
            }
            if index.is_some() && name != "inverter" {
                return err(&origin, format!("section [{name}] takes no index"));
            }
            if index == Some(0) {
                return err(&origin, "inverter indices start at 1");
            }
            if name != "event" && sections.iter().any(|s| s.name == name && s.index == index) {
                return err(&origin, format!("duplicate section [{head}]"));
            }
            sections.push(Section { name: name.to_string(), index, origin, entries: Vec::new() });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(&origin, "expected 'key = value' or a [section] header");
        };
        let key = key.trim();
        let Some(section) = sections.last_mut() else {
            return err(&origin, format!("key '{key}' appears before any section"));
        };
        if key.is_empty() {
            return err(&origin, "empty key");
        }
        if section.entries.iter().any(|e| e.key == key) {
            return err(&origin, format!("duplicate key '{key}'"));
        }
        section.entries.push(Entry { key: key.to_string(), value: value.trim().to_string(), origin });
    }
    Ok(sections)
}

/// Applies one `section[.index].key=value` override.
fn apply_override(sections: &mut Vec<Section>, spec: &str) -> Result<()> {
    let origin = Origin::Override(spec.to_string());
    let Some((path, value)) = spec.split_once('=') else {
        return err(&origin, "expected key=value");
    };
    let parts: Vec<&str> = path.trim().split('.').collect();
    let (name, index, key) = match parts.as_slice() {
        [s, k] => (*s, None, *k),
        [s, i, k] => {
            let idx: usize = i.parse().map_err(|_| ConfigError { line: Some(origin.clone()), message: format!("bad index '{i}'") })?;
            if idx == 0 {
                return err(&origin, "indices start at 1");
            }
            (*s, Some(idx), *k)
        }
        _ => return err(&origin, "expected section.key or section.index.key"),
    };
    if !SECTIONS.contains(&name) {
        return err(&origin, format!("unknown section '{name}'"));
    }
    let entry = Entry { key: key.to_string(), value: value.trim().to_string(), origin: origin.clone() };
    let target = if name == "event" {
        let Some(k) = index else {
            return err(&origin, "event overrides need an index, as in event.1.time=0.2");
        };
        match sections.iter_mut().filter(|s| s.name == "event").nth(k - 1) {
            Some(s) => s,
            None => return err(&origin, format!("there is no event {k}")),
        }
    } else {
        if index.is_some() && name != "inverter" {
            return err(&origin, format!("section '{name}' takes no index"));
        }
        match sections.iter().position(|s| s.name == name && s.index == index) {
            Some(p) => &mut sections[p],
            None => {
                sections.push(Section { name: name.to_string(), index, origin: origin.clone(), entries: Vec::new() });
                sections.last_mut().unwrap()
            }
        }
    };
    // A load given by impedance replaces one given by power, and the other way round.
    const IMPEDANCE: [&str; 2] = ["resistance", "inductance"];
    const POWER: [&str; 3] = ["apparent_power", "active_power", "power_factor"];
    if name == "load" || name == "event" {
        let other: &[&str] = if IMPEDANCE.contains(&key) {
            &POWER
        } else if POWER.contains(&key) {
            &IMPEDANCE
        } else {
            &[]
        };
        target.entries.retain(|e| !other.contains(&e.key.as_str()));
    }
    match target.entries.iter_mut().find(|e| e.key == key) {
        Some(e) => *e = entry,
        None => target.entries.push(entry),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Voltage,
    AngularFrequency,
    Resistance,
    Inductance,
    Capacitance,
    Power,
    Time,
    Angle,
    /// Dimensionless, or a compound unit that is only accepted spelled exactly this way.
    Plain(&'static str),
}

enum Scale {
    /// Multiply by a power of ten, applied to the decimal text so the result is correctly rounded.
    Decimal(i32),
    Factor(f64),
}

fn unit_scale(dim: Dim, unit: &str) -> Option<Scale> {
    use Scale::*;
    Some(match (dim, unit) {
        (Dim::Voltage, "V") => Decimal(0),
        (Dim::Voltage, "kV") => Decimal(3),
        (Dim::Voltage, "mV") => Decimal(-3),
        (Dim::AngularFrequency, "rad/s") => Decimal(0),
        (Dim::AngularFrequency, "Hz") => Factor(TAU),
        (Dim::AngularFrequency, "kHz") => Factor(TAU * 1e3),
        (Dim::Resistance, "ohm" | "Ohm" | "\u{3a9}") => Decimal(0),
        (Dim::Resistance, "mohm") => Decimal(-3),
        (Dim::Resistance, "kohm") => Decimal(3),
        (Dim::Inductance, "H") => Decimal(0),
        (Dim::Inductance, "mH") => Decimal(-3),
        (Dim::Inductance, "uH" | "\u{b5}H") => Decimal(-6),
        (Dim::Capacitance, "F") => Decimal(0),
        (Dim::Capacitance, "mF") => Decimal(-3),
        (Dim::Capacitance, "uF" | "\u{b5}F") => Decimal(-6),
        (Dim::Capacitance, "nF") => Decimal(-9),
        (Dim::Power, "W" | "VA" | "var") => Decimal(0),
        (Dim::Power, "kW" | "kVA" | "kvar") => Decimal(3),
        (Dim::Time, "s") => Decimal(0),
        (Dim::Time, "ms") => Decimal(-3),
        (Dim::Time, "us" | "\u{b5}s") => Decimal(-6),
        (Dim::Angle, "rad") => Decimal(0),
        (Dim::Angle, "deg") => Factor(PI / 180.0),
        (Dim::Plain(u), x) if !u.is_empty() && u == x => Decimal(0),
        _ => return None,
    })
}

/// Splits `"0.063mH"` or `"0.063 mH"` into the longest numeric prefix and the rest.
fn split_number(text: &str) -> Option<(&str, &str)> {
    let mut best = None;
    for (i, _) in text.char_indices().skip(1).chain(std::iter::once((text.len(), ' '))) {
        let head = &text[..i];
        if head.parse::<f64>().is_ok() {
            best = Some((head, text[i..].trim()));
        }
    }
    best
}

fn shift_decimal(number: &str, exponent: i32) -> f64 {
    if exponent == 0 {
        return number.parse().unwrap();
    }
    let (mantissa, e) = match number.find(['e', 'E']) {
        Some(p) => (&number[..p], number[p + 1..].parse::<i32>().unwrap()),
        None => (number, 0),
    };
    format!("{mantissa}e{}", e + exponent).parse().unwrap()
}

fn quantity(entry: &Entry, dim: Dim) -> Result<f64> {
    let Some((number, rest)) = split_number(&entry.value) else {
        return err(&entry.origin, format!("'{}' needs a number, got '{}'", entry.key, entry.value));
    };
    let mut words = rest.split_whitespace();
    let unit = words.next();
    let flag = words.next();
    if words.next().is_some() {
        return err(&entry.origin, format!("trailing text in '{}'", entry.value));
    }
    let (unit, flag) = match (unit, flag) {
        (Some(u @ ("rms" | "peak")), None) if dim == Dim::Voltage => (None, Some(u)),
        other => other,
    };
    let mut value = match unit {
        None => number.parse::<f64>().unwrap(),
        Some(u) => match unit_scale(dim, u) {
            Some(Scale::Decimal(p)) => shift_decimal(number, p),
            Some(Scale::Factor(f)) => number.parse::<f64>().unwrap() * f,
            None => return err(&entry.origin, format!("unit '{u}' does not fit '{}'", entry.key)),
        },
    };
    match flag {
        None | Some("peak") => {}
        Some("rms") if dim == Dim::Voltage => value *= SQRT_2,
        Some(f) => return err(&entry.origin, format!("unexpected '{f}' after the unit")),
    }
    if !value.is_finite() {
        return err(&entry.origin, format!("'{}' must be finite", entry.key));
    }
    Ok(value)
}

#[derive(Clone, Copy)]
enum Bound {
    Any,
    NonNegative,
    Positive,
}

/// Consumes keys from one section and reports the ones nobody asked for.
struct Reader<'a> {
    section: &'a Section,
    used: Vec<bool>,
}

impl<'a> Reader<'a> {
    fn new(section: &'a Section) -> Self {
        Reader { section, used: vec![false; section.entries.len()] }
    }

    fn entry(&mut self, key: &str) -> Option<&'a Entry> {
        let p = self.section.entries.iter().position(|e| e.key == key)?;
        self.used[p] = true;
        Some(&self.section.entries[p])
    }

    fn number(&mut self, key: &str, dim: Dim, bound: Bound) -> Result<Option<f64>> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        let v = quantity(e, dim)?;
        let ok = match bound {
            Bound::Any => true,
            Bound::NonNegative => v >= 0.0,
            Bound::Positive => v > 0.0,
        };
        if !ok {
            let what = if matches!(bound, Bound::Positive) { "positive" } else { "non-negative" };
            return err(&e.origin, format!("'{key}' must be {what}, got {v}"));
        }
        Ok(Some(v))
    }

    fn set(&mut self, key: &str, dim: Dim, bound: Bound, target: &mut f64) -> Result<()> {
        if let Some(v) = self.number(key, dim, bound)? {
            *target = v;
        }
        Ok(())
    }

    fn integer(&mut self, key: &str, min: usize) -> Result<Option<usize>> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        match e.value.parse::<usize>() {
            Ok(v) if v >= min => Ok(Some(v)),
            _ => err(&e.origin, format!("'{key}' must be an integer >= {min}")),
        }
    }

    fn word(&mut self, key: &str) -> Option<(&'a str, &'a Origin)> {
        self.entry(key).map(|e| (e.value.as_str(), &e.origin))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        let mut out = Vec::new();
        for item in e.value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(v),
                _ => return err(&e.origin, format!("'{item}' in '{key}' is not a number")),
            }
        }
        Ok(Some(out))
    }

    fn indices(&mut self, key: &str, n: usize) -> Result<Option<Vec<bool>>> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        let mut flags = vec![false; n];
        for item in e.value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse::<usize>() {
                Ok(k) if (1..=n).contains(&k) => flags[k - 1] = true,
                _ => return err(&e.origin, format!("'{item}' is not an inverter number in 1..={n}")),
            }
        }
        Ok(Some(flags))
    }

    fn finish(self) -> Result<()> {
        for (e, used) in self.section.entries.iter().zip(&self.used) {
            if !used {
                return err(&e.origin, format!("unknown key '{}' in [{}]", e.key, self.section.name));
            }
        }
        Ok(())
    }
}

/// Per-inverter values before they are split into the core structures.
#[derive(Debug, Clone)]
struct InverterSpec {
    electrical: InverterElectrical,
    droop_coefficient: f64,
    power_reference: f64,
    power_filter_bandwidth: f64,
    clock_offset: f64,
    clock_drift: f64,
    q_droop_coefficient: Option<f64>,
    reactive_power_reference: f64,
}

impl Default for InverterSpec {
    fn default() -> Self {
        InverterSpec {
            electrical: InverterElectrical::default(),
            droop_coefficient: DEFAULT_DROOP_COEFFICIENT,
            power_reference: DEFAULT_POWER_REFERENCE,
            power_filter_bandwidth: DroopParams::new(0.0, 0.0, 0.0).power_filter_bandwidth,
            clock_offset: 0.0,
            clock_drift: 0.0,
            q_droop_coefficient: None,
            reactive_power_reference: 0.0,
        }
    }
}

fn read_inverter(r: &mut Reader, s: &mut InverterSpec) -> Result<()> {
    use Bound::*;
    let e = &mut s.electrical;
    r.set("filter_inductance", Dim::Inductance, Positive, &mut e.filter_inductance)?;
    r.set("filter_esr", Dim::Resistance, NonNegative, &mut e.filter_esr)?;
    r.set("filter_capacitance", Dim::Capacitance, Positive, &mut e.filter_capacitance)?;
    r.set("virtual_resistance", Dim::Resistance, NonNegative, &mut e.virtual_resistance)?;
    r.set("branch_resistance", Dim::Resistance, Positive, &mut e.branch_resistance)?;
    r.set("line_inductance", Dim::Inductance, NonNegative, &mut e.line_inductance)?;
    r.set("rated_power", Dim::Power, Positive, &mut e.rated_apparent_power)?;
    r.set("dc_link_voltage", Dim::Voltage, Positive, &mut e.dc_link_voltage)?;
    r.set("droop_coefficient", Dim::Plain("V/W"), NonNegative, &mut s.droop_coefficient)?;
    r.set("power_reference", Dim::Power, Any, &mut s.power_reference)?;
    r.set("power_filter_bandwidth", Dim::AngularFrequency, Positive, &mut s.power_filter_bandwidth)?;
    r.set("clock_offset", Dim::Angle, Any, &mut s.clock_offset)?;
    r.set("clock_drift", Dim::Plain(""), Any, &mut s.clock_drift)?;
    if let Some(m) = r.number("q_droop_coefficient", Dim::Plain("rad/s/var"), Positive)? {
        s.q_droop_coefficient = Some(m);
    }
    r.set("reactive_power_reference", Dim::Power, Any, &mut s.reactive_power_reference)?;
    Ok(())
}

fn read_load(r: &mut Reader, at: &Origin, voltage: f64, omega: f64) -> Result<LoadModel> {
    use Bound::*;
    let resistance = r.number("resistance", Dim::Resistance, Positive)?;
    let inductance = r.number("inductance", Dim::Inductance, NonNegative)?;
    let apparent = r.number("apparent_power", Dim::Power, Positive)?;
    let active = r.number("active_power", Dim::Power, Positive)?;
    let pf = r.number("power_factor", Dim::Plain(""), Positive)?;
    if pf.is_some_and(|pf| pf > 1.0) {
        return err(at, "power_factor must lie in (0, 1]");
    }
    let apparent = match (apparent, active) {
        (Some(_), Some(_)) => return err(at, "give apparent_power or active_power, not both"),
        (None, Some(p)) => Some(p / pf.unwrap_or(1.0)),
        (s, None) => s,
    };
    match (resistance, apparent) {
        (Some(_), Some(_)) => err(at, "give either resistance/inductance or a power with power_factor"),
        (Some(resistance), None) => {
            if pf.is_some() {
                return err(at, "power_factor goes with apparent_power");
            }
            Ok(match inductance {
                Some(l) if l > 0.0 => LoadModel::SeriesRl { resistance, inductance: l },
                _ => LoadModel::Resistive { resistance },
            })
        }
        (None, Some(s)) => {
            if inductance.is_some() {
                return err(at, "inductance goes with resistance");
            }
            let pf = pf.unwrap_or(1.0);
            LoadModel::from_apparent_power(s, pf, voltage, omega).or_else(|e| err(at, e.to_string()))
        }
        (None, None) => err(at, "load needs a resistance, an apparent_power or an active_power"),
    }
}

fn transfer_function(r: &mut Reader, at: &Origin, prefix: &str, default: &RationalTransferFunction) -> Result<RationalTransferFunction> {
    let num = r.list(&format!("{prefix}_numerator"))?;
    let den = r.list(&format!("{prefix}_denominator"))?;
    match (num, den) {
        (None, None) => Ok(default.clone()),
        (Some(n), Some(d)) => RationalTransferFunction::new(n, d).or_else(|e| err(at, e.to_string())),
        _ => err(at, format!("{prefix}_numerator and {prefix}_denominator go together")),
    }
}

fn read_event(r: &mut Reader, at: &Origin, n: usize, voltage: f64, omega: f64) -> Result<Event> {
    let Some(time) = r.number("time", Dim::Time, Bound::NonNegative)? else {
        return err(at, "event needs a time");
    };
    let Some((action, action_at)) = r.word("action") else {
        return err(at, "event needs an action");
    };
    let mut inverter = || -> Result<usize> {
        match r.integer("inverter", 1)? {
            Some(k) if k <= n => Ok(k - 1),
            Some(k) => err(at, format!("inverter {k} does not exist")),
            None => err(at, format!("'{action}' needs an inverter")),
        }
    };
    let kind = match action {
        "connect" => EventKind::Connect(inverter()?),
        "disconnect" => EventKind::Disconnect(inverter()?),
        "enable" => EventKind::Enable(inverter()?),
        "clock_loss" => EventKind::Clock { inverter: inverter()?, kind: ClockEventKind::Loss },
        "clock_restore" => EventKind::Clock { inverter: inverter()?, kind: ClockEventKind::Restore },
        "clock_offset" => {
            let k = inverter()?;
            let Some(th) = r.number("offset", Dim::Angle, Bound::Any)? else {
                return err(at, "clock_offset needs an offset");
            };
            EventKind::Clock { inverter: k, kind: ClockEventKind::SetOffset(th) }
        }
        "power_reference" => {
            let k = inverter()?;
            let Some(value) = r.number("value", Dim::Power, Bound::Any)? else {
                return err(at, "power_reference needs a value");
            };
            EventKind::SetPowerReference { inverter: k, value }
        }
        "load_step" => EventKind::LoadStep(read_load(r, at, voltage, omega)?),
        other => return err(action_at, format!("unknown action '{other}'")),
    };
    Ok(Event { time, kind })
}

fn read_sweep(r: &mut Reader, at: &Origin) -> Result<SweepSpec> {
    let Some((name, name_at)) = r.word("axis") else {
        return err(at, "sweep needs an axis");
    };
    let Some(axis) = SweepAxis::parse(name) else {
        return err(name_at, format!("unknown sweep axis '{name}'"));
    };
    let values = r.list("values")?;
    let from = r.number("from", Dim::Plain(""), Bound::Any)?;
    let to = r.number("to", Dim::Plain(""), Bound::Any)?;
    let points = r.integer("points", 2)?;
    let values = match (values, from, to, points) {
        (Some(v), None, None, None) if !v.is_empty() => v,
        (None, Some(a), Some(b), Some(p)) => (0..p).map(|i| a + (b - a) * i as f64 / (p - 1) as f64).collect(),
        _ => return err(at, "sweep needs either a non-empty 'values' list or all of from/to/points"),
    };
    Ok(SweepSpec { axis, values })
}

/// Parses a scenario file.
pub fn parse_config(text: &str) -> Result<ScenarioFile> {
    parse_with_overrides(text, &[])
}

/// Parses a scenario file after applying `section.key=value` overrides.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<ScenarioFile> {
    let mut sections = parse_document(text)?;
    for o in overrides {
        apply_override(&mut sections, o)?;
    }
    build(&sections)
}

fn build(sections: &[Section]) -> Result<ScenarioFile> {
    let find = |name: &str, index: Option<usize>| sections.iter().find(|s| s.name == name && s.index == index);

    let Some(system) = find("system", None) else {
        return global("missing [system] section");
    };
    let mut r = Reader::new(system);
    let Some(n) = r.integer("inverters", 1)? else {
        return err(&system.origin, "[system] needs 'inverters'");
    };
    let voltage = r.number("voltage", Dim::Voltage, Bound::Positive)?.unwrap_or(NOMINAL_VOLTAGE);
    let omega = r.number("frequency", Dim::AngularFrequency, Bound::Positive)?.unwrap_or(NOMINAL_FREQUENCY);
    let full_droop = match r.word("architecture") {
        None | Some(("isochronous", _)) => false,
        Some(("full_droop", _)) => true,
        Some((other, at)) => return err(at, format!("unknown architecture '{other}'")),
    };
    r.finish()?;

    let mut specs = vec![InverterSpec::default(); n];
    if let Some(s) = find("inverter", None) {
        let mut r = Reader::new(s);
        let mut common = InverterSpec::default();
        read_inverter(&mut r, &mut common)?;
        r.finish()?;
        specs = vec![common; n];
    }
    for s in sections.iter().filter(|s| s.name == "inverter" && s.index.is_some()) {
        let k = s.index.unwrap();
        if k > n {
            return err(&s.origin, format!("[inverter.{k}] but the system has {n} inverters"));
        }
        let mut r = Reader::new(s);
        read_inverter(&mut r, &mut specs[k - 1])?;
        r.finish()?;
    }

    let Some(load_section) = find("load", None) else {
        return global("missing [load] section");
    };
    let mut r = Reader::new(load_section);
    let load = read_load(&mut r, &load_section.origin, voltage, omega)?;
    r.finish()?;

    let defaults = default_controllers_at(omega);
    let controllers = match find("controller", None) {
        Some(s) => {
            let mut r = Reader::new(s);
            let voltage_controller = transfer_function(&mut r, &s.origin, "voltage", &defaults.voltage_controller)?;
            let current_controller = transfer_function(&mut r, &s.origin, "current", &defaults.current_controller)?;
            r.finish()?;
            ControllerDesign { voltage_controller, current_controller }
        }
        None => ControllerDesign { voltage_controller: defaults.voltage_controller, current_controller: defaults.current_controller },
    };

    let architecture = if full_droop {
        Architecture::FullDroop(
            specs
                .iter()
                .map(|s| {
                    let mut q = QfDroopParams::for_rating(s.electrical.rated_apparent_power);
                    if let Some(m) = s.q_droop_coefficient {
                        q.q_droop_coefficient = m;
                    }
                    q.reactive_power_reference = s.reactive_power_reference;
                    q
                })
                .collect(),
        )
    } else {
        if let Some(s) = sections.iter().find(|s| s.name == "inverter" && s.entries.iter().any(|e| e.key.starts_with("q_droop") || e.key == "reactive_power_reference")) {
            let e = s.entries.iter().find(|e| e.key.starts_with("q_droop") || e.key == "reactive_power_reference").unwrap();
            return err(&e.origin, format!("'{}' needs architecture = full_droop", e.key));
        }
        Architecture::Isochronous
    };

    let config = MicrogridConfig {
        inverters: specs.iter().map(|s| s.electrical.clone()).collect(),
        load,
        nominal_voltage_magnitude: voltage,
        nominal_frequency: omega,
        droop: specs
            .iter()
            .map(|s| DroopParams {
                droop_coefficient: s.droop_coefficient,
                active_power_reference: s.power_reference,
                nominal_voltage: voltage,
                power_filter_bandwidth: s.power_filter_bandwidth,
            })
            .collect(),
        clocks: specs.iter().map(|s| ClockModel::synchronized(s.clock_offset).with_drift(s.clock_drift)).collect(),
        controllers,
        architecture,
    };
    config.validate().or_else(|e| global(format!("invalid configuration: {e}")))?;

    let mut scenario = Scenario::new(config, 1.0);
    let mut metrics_window = None;
    if let Some(s) = find("simulation", None) {
        let mut r = Reader::new(s);
        r.set("duration", Dim::Time, Bound::Positive, &mut scenario.duration)?;
        r.set("time_step", Dim::Time, Bound::Positive, &mut scenario.time_step)?;
        if let Some(d) = r.integer("decimation", 1)? {
            scenario.decimation = d;
        }
        scenario.rk4_substeps = r.integer("substeps", 1)?;
        metrics_window = r.number("metrics_window", Dim::Time, Bound::Positive)?;
        let initial = r.word("initial");
        let active = r.indices("active", n)?;
        let connected = r.indices("connected", n)?;
        scenario.initial = match initial {
            None | Some(("rest", _)) => {
                let active = active.unwrap_or_else(|| vec![true; n]);
                let connected = connected.unwrap_or_else(|| active.clone());
                InitialCondition::Rest { active, connected }
            }
            Some(("equilibrium", at)) => {
                if active.is_some() || connected.is_some() {
                    return err(at, "an equilibrium start has every inverter active and connected");
                }
                InitialCondition::Equilibrium
            }
            Some((other, at)) => return err(at, format!("unknown initial condition '{other}'")),
        };
        r.finish()?;
    }
    for s in sections.iter().filter(|s| s.name == "event") {
        let mut r = Reader::new(s);
        scenario.events.push(read_event(&mut r, &s.origin, n, voltage, omega)?);
        r.finish()?;
    }
    scenario.validate().or_else(|e| global(format!("invalid scenario: {e}")))?;

    let sweep = match find("sweep", None) {
        Some(s) => {
            let mut r = Reader::new(s);
            let sw = read_sweep(&mut r, &s.origin)?;
            r.finish()?;
            Some(sw)
        }
        None => None,
    };
    Ok(ScenarioFile { scenario, metrics_window, sweep })
}

fn write_load(out: &mut String, load: &LoadModel) -> std::result::Result<(), ConfigError> {
    match load {
        LoadModel::Resistive { resistance } => writeln!(out, "resistance = {resistance:?} ohm").unwrap(),
        LoadModel::SeriesRl { resistance, inductance } => {
            writeln!(out, "resistance = {resistance:?} ohm").unwrap();
            writeln!(out, "inductance = {inductance:?} H").unwrap();
        }
        LoadModel::ComplexAtFrequency { .. } => return global("a fixed complex impedance has no file form"),
    }
    Ok(())
}

fn write_list(out: &mut String, key: &str, values: &[f64]) {
    let items: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    writeln!(out, "{key} = {}", items.join(", ")).unwrap();
}

fn flags(v: &[bool]) -> String {
    v.iter().enumerate().filter(|(_, f)| **f).map(|(k, _)| (k + 1).to_string()).collect::<Vec<_>>().join(", ")
}

/// Canonical text form: every value explicit, in SI base units, with round-trip float formatting.
/// Parsing the result gives back an identical [`ScenarioFile`].
pub fn emit_config(file: &ScenarioFile) -> Result<String> {
    let sc = &file.scenario;
    let cfg = &sc.config;
    let n = cfg.len();
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "[system]").unwrap();
    writeln!(w, "inverters = {n}").unwrap();
    writeln!(w, "voltage = {:?} V", cfg.nominal_voltage_magnitude).unwrap();
    writeln!(w, "frequency = {:?} rad/s", cfg.nominal_frequency).unwrap();
    let qf = match &cfg.architecture {
        Architecture::Isochronous => {
            writeln!(w, "architecture = isochronous").unwrap();
            None
        }
        Architecture::FullDroop(q) => {
            writeln!(w, "architecture = full_droop").unwrap();
            Some(q)
        }
    };
    writeln!(w, "\n[load]").unwrap();
    write_load(w, &cfg.load)?;

    let defaults = default_controllers_at(cfg.nominal_frequency);
    let c = &cfg.controllers;
    if c.voltage_controller != defaults.voltage_controller || c.current_controller != defaults.current_controller {
        writeln!(w, "\n[controller]").unwrap();
        write_list(w, "voltage_numerator", &c.voltage_controller.numerator_coefficients);
        write_list(w, "voltage_denominator", &c.voltage_controller.denominator_coefficients);
        write_list(w, "current_numerator", &c.current_controller.numerator_coefficients);
        write_list(w, "current_denominator", &c.current_controller.denominator_coefficients);
    }

    for k in 0..n {
        let e = &cfg.inverters[k];
        let d = &cfg.droop[k];
        let clock = &cfg.clocks[k];
        if d.nominal_voltage != cfg.nominal_voltage_magnitude {
            return global(format!("inverter {} has its own nominal voltage, which the file format cannot express", k + 1));
        }
        if clock.holdover {
            return global(format!("inverter {} starts in holdover, which the file format cannot express", k + 1));
        }
        writeln!(w, "\n[inverter.{}]", k + 1).unwrap();
        writeln!(w, "filter_inductance = {:?} H", e.filter_inductance).unwrap();
        writeln!(w, "filter_esr = {:?} ohm", e.filter_esr).unwrap();
        writeln!(w, "filter_capacitance = {:?} F", e.filter_capacitance).unwrap();
        writeln!(w, "virtual_resistance = {:?} ohm", e.virtual_resistance).unwrap();
        writeln!(w, "branch_resistance = {:?} ohm", e.branch_resistance).unwrap();
        writeln!(w, "line_inductance = {:?} H", e.line_inductance).unwrap();
        writeln!(w, "rated_power = {:?} VA", e.rated_apparent_power).unwrap();
        writeln!(w, "dc_link_voltage = {:?} V", e.dc_link_voltage).unwrap();
        writeln!(w, "droop_coefficient = {:?}", d.droop_coefficient).unwrap();
        writeln!(w, "power_reference = {:?} W", d.active_power_reference).unwrap();
        writeln!(w, "power_filter_bandwidth = {:?} rad/s", d.power_filter_bandwidth).unwrap();
        writeln!(w, "clock_offset = {:?} rad", clock.phase_offset).unwrap();
        writeln!(w, "clock_drift = {:?}", clock.drift_rate).unwrap();
        if let Some(q) = qf {
            writeln!(w, "q_droop_coefficient = {:?}", q[k].q_droop_coefficient).unwrap();
            writeln!(w, "reactive_power_reference = {:?} var", q[k].reactive_power_reference).unwrap();
        }
    }

    writeln!(w, "\n[simulation]").unwrap();
    writeln!(w, "duration = {:?} s", sc.duration).unwrap();
    writeln!(w, "time_step = {:?} s", sc.time_step).unwrap();
    writeln!(w, "decimation = {}", sc.decimation).unwrap();
    if let Some(s) = sc.rk4_substeps {
        writeln!(w, "substeps = {s}").unwrap();
    }
    if let Some(m) = file.metrics_window {
        writeln!(w, "metrics_window = {m:?} s").unwrap();
    }
    match &sc.initial {
        InitialCondition::Equilibrium => writeln!(w, "initial = equilibrium").unwrap(),
        InitialCondition::Rest { active, connected } => {
            writeln!(w, "initial = rest").unwrap();
            writeln!(w, "active = {}", flags(active)).unwrap();
            writeln!(w, "connected = {}", flags(connected)).unwrap();
        }
    }

    for e in &sc.events {
        writeln!(w, "\n[event]").unwrap();
        writeln!(w, "time = {:?} s", e.time).unwrap();
        let (action, inverter) = match &e.kind {
            EventKind::Connect(k) => ("connect", Some(k)),
            EventKind::Disconnect(k) => ("disconnect", Some(k)),
            EventKind::Enable(k) => ("enable", Some(k)),
            EventKind::LoadStep(_) => ("load_step", None),
            EventKind::Clock { inverter, kind } => match kind {
                ClockEventKind::Loss => ("clock_loss", Some(inverter)),
                ClockEventKind::Restore => ("clock_restore", Some(inverter)),
                ClockEventKind::SetOffset(_) => ("clock_offset", Some(inverter)),
            },
            EventKind::SetPowerReference { inverter, .. } => ("power_reference", Some(inverter)),
        };
        writeln!(w, "action = {action}").unwrap();
        if let Some(k) = inverter {
            writeln!(w, "inverter = {}", k + 1).unwrap();
        }
        match &e.kind {
            EventKind::LoadStep(l) => write_load(w, l)?,
            EventKind::Clock { kind: ClockEventKind::SetOffset(th), .. } => writeln!(w, "offset = {th:?} rad").unwrap(),
            EventKind::SetPowerReference { value, .. } => writeln!(w, "value = {value:?} W").unwrap(),
            _ => {}
        }
    }

    if let Some(sw) = &file.sweep {
        writeln!(w, "\n[sweep]").unwrap();
        writeln!(w, "axis = {}", sw.axis.name()).unwrap();
        write_list(w, "values", &sw.values);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use isodroop_core::presets;
    use proptest::prelude::*;

    const MINIMAL: &str = "[system]\ninverters = 2\n\n[load]\nresistance = 24 ohm\n";

    fn line_of(e: &ConfigError) -> Option<usize> {
        match e.line {
            Some(Origin::Line(n)) => Some(n),
            _ => None,
        }
    }

    #[test]
    fn omitted_values_take_prototype_defaults() {
        let f = parse_config(MINIMAL).unwrap();
        let cfg = f.config();
        assert_eq!(cfg, &presets::microgrid(2, LoadModel::Resistive { resistance: 24.0 }));
        assert_eq!(cfg.inverters[0].filter_inductance, 0.063e-3);
        assert_eq!(cfg.inverters[0].filter_capacitance, 1e-6);
        assert_eq!(f.scenario.time_step, 1e-5);
    }

    #[test]
    fn units_are_normalized_to_si() {
        let text = "[system]\ninverters = 1\nvoltage = 120 V rms\nfrequency = 60 Hz\n[load]\nresistance = 24ohm\ninductance = 22.93 mH\n\
                    [inverter]\nfilter_capacitance = 1.5 uF\nfilter_inductance = 63uH\npower_reference = 0.3 kW\nclock_offset = 90 deg\n\
                    power_filter_bandwidth = 1 Hz\n[simulation]\ntime_step = 5 us\nduration = 200 ms\n";
        let f = parse_config(text).unwrap();
        let cfg = f.config();
        assert_eq!(cfg.nominal_voltage_magnitude, 120.0 * SQRT_2);
        assert_eq!(cfg.nominal_frequency, TAU * 60.0);
        assert_eq!(cfg.load, LoadModel::SeriesRl { resistance: 24.0, inductance: 0.02293 });
        assert_eq!(cfg.inverters[0].filter_capacitance, 1.5e-6);
        assert_eq!(cfg.inverters[0].filter_inductance, 63e-6);
        assert_eq!(cfg.droop[0].active_power_reference, 300.0);
        assert_eq!(cfg.clocks[0].phase_offset, PI / 2.0);
        assert_eq!(cfg.droop[0].power_filter_bandwidth, TAU);
        assert_eq!(f.scenario.time_step, 5e-6);
        assert_eq!(f.scenario.duration, 0.2);
    }

    #[test]
    fn peak_is_the_default_voltage_basis() {
        let f = parse_config("[system]\ninverters = 1\nvoltage = 170 V\n[load]\nresistance = 24\n").unwrap();
        assert_eq!(f.config().nominal_voltage_magnitude, 170.0);
        let f = parse_config("[system]\ninverters = 1\nvoltage = 170 peak\n[load]\nresistance = 24\n").unwrap();
        assert_eq!(f.config().nominal_voltage_magnitude, 170.0);
    }

    #[test]
    fn negative_capacitance_is_reported_with_its_line() {
        let e = parse_config("[system]\ninverters = 1\n[load]\nresistance = 24\n[inverter.1]\nfilter_capacitance = -1 uF\n").unwrap_err();
        assert_eq!(line_of(&e), Some(6));
        assert!(e.message.contains("filter_capacitance"));
    }

    #[test]
    fn malformed_input_is_rejected_with_line_numbers() {
        let cases = [
            ("[system]\ninverters = 1\nbogus = 3\n[load]\nresistance = 24\n", 3, "unknown key"),
            ("[system]\ninverters = 1\n[load]\nresistance = 24 mH\n", 4, "unit"),
            ("[system]\ninverters = 1\n[load]\nresistance = many\n", 4, "number"),
            ("[system]\ninverters = 1\n[loads]\n", 3, "unknown section"),
            ("inverters = 1\n", 1, "before any section"),
            ("[system]\ninverters = 1\ninverters = 2\n", 3, "duplicate"),
            ("[system]\ninverters = 1\n[load]\nresistance = 24\n[inverter.3]\n", 5, "has 1 inverters"),
            ("[system]\ninverters = 2\n[load]\nresistance = 24\n[event]\ntime = 0.1\naction = connect\ninverter = 5\n", 5, "does not exist"),
            ("[system]\ninverters = 1\n[load]\nresistance = 24\n[event]\ntime = 0.1\naction = explode\n", 7, "unknown action"),
            ("[system]\ninverters = 1\n[load]\nresistance = 24\n[inverter]\nq_droop_coefficient = 1e-3\n", 6, "full_droop"),
        ];
        for (text, line, what) in cases {
            let e = parse_config(text).unwrap_err();
            assert_eq!(line_of(&e), Some(line), "{text:?}: {e}");
            assert!(e.message.contains(what), "{e}");
        }
    }

    #[test]
    fn missing_required_fields_are_errors() {
        assert!(parse_config("[load]\nresistance = 24\n").unwrap_err().message.contains("[system]"));
        assert!(parse_config("[system]\ninverters = 2\n").unwrap_err().message.contains("[load]"));
        let e = parse_config("[system]\nvoltage = 170\n[load]\nresistance = 24\n").unwrap_err();
        assert_eq!(line_of(&e), Some(1));
        let e = parse_config("[system]\ninverters = 1\n[load]\npower_factor = 0.9\n").unwrap_err();
        assert_eq!(line_of(&e), Some(3));
    }

    #[test]
    fn cross_field_violations_are_reported() {
        let text = "[system]\ninverters = 1\n[load]\nresistance = 24\n[simulation]\nduration = 0.1\n[event]\ntime = 0.5\naction = disconnect\ninverter = 1\n";
        assert!(parse_config(text).unwrap_err().message.contains("beyond"));
    }

    #[test]
    fn command_line_overrides_supersede_the_file() {
        let text = "[system]\ninverters = 2\n[load]\nresistance = 12 ohm\n[event]\ntime = 0.5\naction = disconnect\ninverter = 2\n";
        let f = parse_with_overrides(text, &["load.resistance=24".into(), "inverter.2.branch_resistance=0.1".into(), "event.1.time=0.25".into()]).unwrap();
        assert_eq!(f.config().load, LoadModel::Resistive { resistance: 24.0 });
        assert_eq!(f.config().inverters[1].branch_resistance, 0.1);
        assert_eq!(f.config().inverters[0].branch_resistance, 0.2);
        assert_eq!(f.scenario.events[0].time, 0.25);
        let f = parse_with_overrides(text, &["simulation.duration=2".into()]).unwrap();
        assert_eq!(f.scenario.duration, 2.0);
        let e = parse_with_overrides(text, &["load.colour=red".into()]).unwrap_err();
        assert_eq!(e.line, Some(Origin::Override("load.colour=red".into())));
        assert!(parse_with_overrides(text, &["event.2.time=1".into()]).is_err());
        assert!(parse_with_overrides(text, &["load.resistance".into()]).is_err());
    }

    #[test]
    fn load_overrides_replace_the_other_load_form() {
        let text = "[system]\ninverters = 2\n[load]\napparent_power = 580 VA\npower_factor = 0.9\n";
        let f = parse_with_overrides(text, &["load.resistance=24".into()]).unwrap();
        assert_eq!(f.config().load, LoadModel::Resistive { resistance: 24.0 });
        let text = "[system]\ninverters = 2\n[load]\nresistance = 12 ohm\ninductance = 10 mH\n";
        let f = parse_with_overrides(text, &["load.active_power=1000".into(), "load.power_factor=1".into()]).unwrap();
        let expected = parse_config("[system]\ninverters = 2\n[load]\nactive_power = 1000\n").unwrap();
        assert_eq!(f.config().load, expected.config().load);
    }

    #[test]
    fn events_sweeps_and_initial_states_parse() {
        let text = "[system]\ninverters = 3\narchitecture = full_droop\n[load]\napparent_power = 3 kVA\npower_factor = 0.97\n\
                    [simulation]\nactive = 1\n[event]\ntime = 0.1\naction = enable\ninverter = 2\n\
                    [event]\ntime = 0.2\naction = clock_offset\ninverter = 3\noffset = 5 deg\n\
                    [event]\ntime = 0.3\naction = power_reference\ninverter = 1\nvalue = 400 W\n\
                    [event]\ntime = 0.4\naction = load_step\nresistance = 10\ninductance = 1 mH\n\
                    [sweep]\naxis = droop_gain\nfrom = 1e-4\nto = 3e-4\npoints = 3\n";
        let f = parse_config(text).unwrap();
        assert!(matches!(f.config().architecture, Architecture::FullDroop(_)));
        assert_eq!(f.scenario.initial, InitialCondition::Rest { active: vec![true, false, false], connected: vec![true, false, false] });
        assert_eq!(f.scenario.events.len(), 4);
        assert_eq!(f.scenario.events[1].kind, EventKind::Clock { inverter: 2, kind: ClockEventKind::SetOffset(5.0 * PI / 180.0) });
        assert_eq!(f.scenario.events[3].kind, EventKind::LoadStep(LoadModel::SeriesRl { resistance: 10.0, inductance: 1e-3 }));
        let sw = f.sweep.unwrap();
        assert_eq!(sw.axis, SweepAxis::DroopGain);
        assert_eq!(sw.values.len(), 3);
        assert!((sw.values[1] - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn canonical_form_round_trips() {
        let text = "[system]\ninverters = 3\narchitecture = full_droop\n[load]\napparent_power = 3 kVA\npower_factor = 0.97\n\
                    [inverter.2]\nclock_offset = 3 deg\nclock_drift = 1e-6\nreactive_power_reference = 20 var\n\
                    [controller]\ncurrent_numerator = 2, 5\ncurrent_denominator = 1, 0\n\
                    [simulation]\nactive = 1, 2\nconnected = 1\nsubsteps = 4\nmetrics_window = 0.1\n\
                    [event]\ntime = 0.1\naction = connect\ninverter = 2\n\
                    [event]\ntime = 0.4\naction = load_step\napparent_power = 4 kVA\npower_factor = 0.9\n\
                    [sweep]\naxis = clock_angle\nvalues = -5, 0, 5\n";
        let a = parse_config(text).unwrap();
        let b = parse_config(&emit_config(&a).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    fn arbitrary_file() -> impl Strategy<Value = ScenarioFile> {
        (1usize..4, 1.0f64..100.0, prop::option::of(1e-4f64..0.05), any::<bool>(), 0.0f64..1.0)
            .prop_flat_map(|(n, r, l, eq, t)| {
                let inv = prop::collection::vec((0.01f64..1.0, 0.0f64..1.0, 0.0f64..1e-3, 0.0f64..1e-2, 0.0f64..1000.0, -0.2f64..0.2), n);
                (Just(r), Just(l), Just(eq), Just(t), inv)
            })
            .prop_map(|(r, l, eq, t, inv)| {
                let load = match l {
                    Some(l) => LoadModel::SeriesRl { resistance: r, inductance: l },
                    None => LoadModel::Resistive { resistance: r },
                };
                let mut cfg = presets::microgrid(inv.len(), load);
                for (k, (br, rv, li, n, p, th)) in inv.into_iter().enumerate() {
                    cfg.inverters[k].branch_resistance = br;
                    cfg.inverters[k].virtual_resistance = rv;
                    cfg.inverters[k].line_inductance = if l.is_some() { li } else { 0.0 };
                    cfg.droop[k].droop_coefficient = n;
                    cfg.droop[k].active_power_reference = p;
                    cfg.clocks[k] = ClockModel::synchronized(th);
                }
                if cfg.inverters.iter().any(|i| i.line_inductance == 0.0) {
                    for i in cfg.inverters.iter_mut() {
                        i.line_inductance = 0.0;
                    }
                }
                let mut scenario = Scenario::new(cfg, 1.0);
                if eq {
                    scenario.initial = InitialCondition::Equilibrium;
                }
                scenario.events.push(Event { time: t, kind: EventKind::LoadStep(LoadModel::Resistive { resistance: r * 2.0 }) });
                ScenarioFile { scenario, metrics_window: None, sweep: None }
            })
    }

    proptest! {
        #[test]
        fn emitted_files_parse_back_identically(f in arbitrary_file()) {
            let text = emit_config(&f).unwrap();
            prop_assert_eq!(parse_config(&text).unwrap(), f);
        }
    }
}
