//! The shipped scenario files describe the same systems as the library presets.

use isodroop::scenarios::builtin;
use isodroop_core::net::Architecture;
use isodroop_core::presets;
use isodroop_core::smallsignal::SweepAxis;
use isodroop_core::timedomain::{InitialCondition, Scenario};

/// Equal up to recording density and float noise in event times.
fn assert_same(name: &str, mut file: Scenario, preset: Scenario) {
    file.decimation = preset.decimation;
    assert_eq!(file.config, preset.config, "{name}: network");
    assert_eq!(file.duration, preset.duration, "{name}: duration");
    assert_eq!(file.time_step, preset.time_step, "{name}: time step");
    assert_eq!(file.initial, preset.initial, "{name}: initial state");
    assert_eq!(file.rk4_substeps, preset.rk4_substeps, "{name}: substeps");
    assert_eq!(file.events.len(), preset.events.len(), "{name}: event count");
    for (a, b) in file.events.iter().zip(&preset.events) {
        assert!((a.time - b.time).abs() < 1e-12, "{name}: event time {} vs {}", a.time, b.time);
        assert_eq!(a.kind, b.kind, "{name}: event at {}", a.time);
    }
}

fn scenario(name: &str) -> Scenario {
    builtin(name).unwrap_or_else(|e| panic!("{name}: {e}")).scenario
}

#[test]
fn sharing_file_matches_the_preset() {
    assert_same("sharing", scenario("sharing"), presets::sharing_run());
}

#[test]
fn two_to_one_network_matches_the_preset() {
    let file = builtin("two_inverter_2p2").unwrap();
    assert_eq!(file.scenario.config, presets::two_inverter_2p2());
    assert_eq!(file.scenario.initial, InitialCondition::Equilibrium);
    let sweep = file.sweep.unwrap();
    assert_eq!(sweep.axis, SweepAxis::ClockAngle);
    assert_eq!(sweep.values.len(), 11);
    assert_eq!((sweep.values[0], sweep.values[10]), (-5.0, 5.0));
}

#[test]
fn design_sweeps_share_the_two_to_one_network() {
    for (name, axis) in [
        ("design_virtual_resistance", SweepAxis::VirtualResistance),
        ("design_load_pf", SweepAxis::LoadPowerFactor),
        ("design_droop_gain", SweepAxis::DroopGain),
    ] {
        let file = builtin(name).unwrap();
        assert_eq!(file.scenario.config, presets::two_inverter_2p2(), "{name}");
        assert_eq!(file.sweep.unwrap().axis, axis, "{name}");
    }
    let vr = builtin("design_virtual_resistance").unwrap().sweep.unwrap().values;
    let grid = presets::virtual_resistance_grid();
    assert_eq!(vr.len(), grid.len());
    for (a, b) in vr.iter().zip(&grid) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mismatched_lines_matches_the_preset_at_equal_lines() {
    assert_eq!(scenario("mismatched_lines").config, presets::mismatched_lines(1.0));
}

#[test]
fn plug_and_play_matches_the_long_dwell_preset() {
    assert_same("plug_and_play", scenario("plug_and_play"), presets::plug_and_play_with_dwell(2.0, 8.1));
}

#[test]
fn droop_comparison_files_match_the_presets() {
    assert_same("droop_comparison", scenario("droop_comparison"), presets::droop_comparison(false, 1.5));
    let full = scenario("full_droop");
    assert!(matches!(full.config.architecture, Architecture::FullDroop(_)));
    assert_same("full_droop", full, presets::droop_comparison(true, 1.5));
}

#[test]
fn hardware_cases_match_the_presets() {
    assert_same("case1", scenario("case1"), presets::case1());
    assert_same("case2", scenario("case2"), presets::case2());
}
