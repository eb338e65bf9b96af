//! Reference configurations built from the prototype parameter table.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use crate::clock::ClockModel;
use crate::droop::{DroopParams, QfDroopParams};
use crate::net::{Architecture, ControllerDesign, InverterElectrical, LoadModel, MicrogridConfig};
use crate::timedomain::{Event, EventKind, InitialCondition, Scenario};

/// 120 V RMS as a peak amplitude.
pub const NOMINAL_VOLTAGE: f64 = 120.0 * SQRT_2;
pub const NOMINAL_FREQUENCY: f64 = 2.0 * PI * 60.0;
pub const DEFAULT_DROOP_COEFFICIENT: f64 = 2e-4;
pub const DEFAULT_POWER_REFERENCE: f64 = 250.0;

/// `n` identical prototype inverters on `load` with synchronized clocks.
pub fn microgrid(n: usize, load: LoadModel) -> MicrogridConfig {
    MicrogridConfig {
        inverters: vec![InverterElectrical::default(); n],
        load,
        nominal_voltage_magnitude: NOMINAL_VOLTAGE,
        nominal_frequency: NOMINAL_FREQUENCY,
        droop: vec![DroopParams::new(DEFAULT_DROOP_COEFFICIENT, DEFAULT_POWER_REFERENCE, NOMINAL_VOLTAGE); n],
        clocks: vec![ClockModel::default(); n],
        controllers: ControllerDesign::default(),
        architecture: Architecture::Isochronous,
    }
}

/// Two inverters sharing a 0.58 kVA, 0.9 lagging load with `n P* = 2.5`. The units differ
/// slightly in branch resistance and line inductance, which sets the sharing ratios.
pub fn sharing() -> MicrogridConfig {
    let load = LoadModel::from_apparent_power(580.0, 0.9, NOMINAL_VOLTAGE, NOMINAL_FREQUENCY)
        .expect("valid preset load");
    let mut cfg = microgrid(2, load);
    cfg.inverters[0].branch_resistance = 0.15;
    cfg.inverters[0].line_inductance = 0.1e-3;
    cfg.inverters[1].branch_resistance = 0.2;
    cfg.inverters[1].line_inductance = 0.25e-3;
    for d in cfg.droop.iter_mut() {
        d.droop_coefficient = 0.01;
        d.active_power_reference = 250.0;
    }
    cfg
}

/// Two inverters sharing 2.2 : 1 through 0.2 ohm + 0.1 mH and 0.2 ohm + 0.15 mH lines, with
/// `n_1 P*_1 = n_2 P*_2`.
pub fn two_inverter_2p2() -> MicrogridConfig {
    let mut cfg = microgrid(2, LoadModel::Resistive { resistance: NOMINAL_VOLTAGE * NOMINAL_VOLTAGE / (2.0 * 960.0) });
    cfg.inverters[0].line_inductance = 0.1e-3;
    cfg.inverters[1].line_inductance = 0.15e-3;
    cfg.droop[0].active_power_reference = 660.0;
    cfg.droop[1].active_power_reference = 300.0;
    cfg.droop[0].droop_coefficient = 2e-4;
    cfg.droop[1].droop_coefficient = 2e-4 * 660.0 / 300.0;
    cfg
}

fn load_at(apparent_power: f64, power_factor: f64) -> LoadModel {
    LoadModel::from_apparent_power(apparent_power, power_factor, NOMINAL_VOLTAGE, NOMINAL_FREQUENCY)
        .expect("valid preset load")
}

fn event(time: f64, kind: EventKind) -> Event {
    Event { time, kind }
}

/// Branch resistance of inverter 1 in the mismatched-line study. Every target sharing band holds
/// for roughly 0.056 to 0.066 ohm.
pub const MISMATCHED_LINES_R1: f64 = 0.06;

/// Two inverters with `P* = 0.6 kW` each on an 11.52 ohm + 22.93 mH load, inverter 2's branch
/// resistance at `ratio` times inverter 1's.
pub fn mismatched_lines(ratio: f64) -> MicrogridConfig {
    let mut cfg = microgrid(2, LoadModel::SeriesRl { resistance: 11.52, inductance: 0.02293 });
    cfg.inverters[0].branch_resistance = MISMATCHED_LINES_R1;
    cfg.inverters[1].branch_resistance = ratio * MISMATCHED_LINES_R1;
    for d in cfg.droop.iter_mut() {
        d.active_power_reference = 600.0;
        d.droop_coefficient = 2.5 / 600.0;
    }
    cfg
}

/// Three 2 kVA inverters with `P* = 1 kW` on a 3 kW, 0.97 lagging load.
pub fn three_inverter_network() -> MicrogridConfig {
    let mut cfg = microgrid(3, load_at(3000.0 / 0.97, 0.97));
    for inv in cfg.inverters.iter_mut() {
        inv.rated_apparent_power = 2000.0;
    }
    for d in cfg.droop.iter_mut() {
        d.active_power_reference = 1000.0;
    }
    cfg
}

/// The 4.5 kW, 0.97 lagging load the three-inverter scripts step to.
pub fn three_inverter_step_load() -> LoadModel {
    load_at(4500.0 / 0.97, 0.97)
}

/// Plug-and-play script: inverter 1 alone from rest, inverter 2 enabled at 0.1 s and connected
/// at 0.2 s, inverter 3 enabled at 0.25 s and connected at 0.3 s, load step at 0.4 s.
pub fn plug_and_play() -> Scenario {
    plug_and_play_with_dwell(0.1, 0.6)
}

/// The plug-and-play order with `dwell` seconds between connections and before the load step,
/// long enough for the power filters to settle when `dwell` spans several filter time
/// constants. `dwell = 0.1` gives the timing of [`plug_and_play`].
pub fn plug_and_play_with_dwell(dwell: f64, duration: f64) -> Scenario {
    let mut sc = Scenario::new(three_inverter_network(), duration);
    sc.initial = InitialCondition::Rest { active: vec![true, false, false], connected: vec![true, false, false] };
    sc.events = vec![
        event(0.1, EventKind::Enable(1)),
        event(dwell + 0.1, EventKind::Connect(1)),
        event(2.0 * dwell + 0.05, EventKind::Enable(2)),
        event(2.0 * dwell + 0.1, EventKind::Connect(2)),
        event(3.0 * dwell + 0.1, EventKind::LoadStep(three_inverter_step_load())),
    ];
    sc
}

/// Same network and load step as [`plug_and_play`] under either architecture: inverters 2 and 3
/// are synchronized and connected at 0.1 s and 0.3 s, the load steps at 0.4 s.
pub fn droop_comparison(full_droop: bool, duration: f64) -> Scenario {
    let mut cfg = three_inverter_network();
    if full_droop {
        cfg.architecture = Architecture::FullDroop(
            cfg.inverters.iter().map(|i| QfDroopParams::for_rating(i.rated_apparent_power)).collect(),
        );
    }
    let mut sc = Scenario::new(cfg, duration);
    sc.initial = InitialCondition::Rest { active: vec![true, false, false], connected: vec![true, false, false] };
    sc.events = vec![
        event(0.05, EventKind::Enable(1)),
        event(0.1, EventKind::Connect(1)),
        event(0.25, EventKind::Enable(2)),
        event(0.3, EventKind::Connect(2)),
        event(0.4, EventKind::LoadStep(three_inverter_step_load())),
    ];
    sc
}

/// Time of the load step in [`droop_comparison`].
pub const DROOP_COMPARISON_STEP: f64 = 0.4;

/// Two-inverter hardware analog with asymmetric references and a load step at `step_time`.
fn hardware_case(p_refs: [f64; 2], before: LoadModel, after: LoadModel, step_time: f64, duration: f64) -> Scenario {
    let mut cfg = microgrid(2, before);
    for (d, p) in cfg.droop.iter_mut().zip(p_refs) {
        d.active_power_reference = p;
    }
    let mut sc = Scenario::new(cfg, duration);
    sc.events = vec![event(step_time, EventKind::LoadStep(after))];
    sc
}

/// Unity power factor load stepping from 0.87 kVA to 0.61 kVA, `P* = 0.56 / 0.31 kW`.
pub fn case1() -> Scenario {
    hardware_case([560.0, 310.0], load_at(870.0, 1.0), load_at(610.0, 1.0), 1.0, 1.5)
}

/// 0.8 lagging load stepping from 0.6 kVA to 0.84 kVA, `P* = 0.3 / 0.18 kW`.
pub fn case2() -> Scenario {
    hardware_case([300.0, 180.0], load_at(600.0, 0.8), load_at(840.0, 0.8), 1.0, 1.5)
}

/// Sharing run of [`sharing`] from rest.
pub fn sharing_run() -> Scenario {
    Scenario::new(sharing(), 1.5)
}

/// Virtual-resistance grid of the design sweep.
pub fn virtual_resistance_grid() -> Vec<f64> {
    (1..=10).map(|k| 0.1 * k as f64).collect()
}
