//! Scenario files shipped with the binary.

use crate::config::{parse_config, ConfigError, ScenarioFile};

/// `(name, text)` of every shipped scenario.
pub const BUILTIN: &[(&str, &str)] = &[
    ("sharing", include_str!("../scenarios/sharing.cfg")),
    ("two_inverter_2p2", include_str!("../scenarios/two_inverter_2p2.cfg")),
    ("mismatched_lines", include_str!("../scenarios/mismatched_lines.cfg")),
    ("plug_and_play", include_str!("../scenarios/plug_and_play.cfg")),
    ("droop_comparison", include_str!("../scenarios/droop_comparison.cfg")),
    ("full_droop", include_str!("../scenarios/full_droop.cfg")),
    ("case1", include_str!("../scenarios/case1.cfg")),
    ("case2", include_str!("../scenarios/case2.cfg")),
    ("resistive_mismatch", include_str!("../scenarios/resistive_mismatch.cfg")),
    ("design_virtual_resistance", include_str!("../scenarios/design_virtual_resistance.cfg")),
    ("design_load_pf", include_str!("../scenarios/design_load_pf.cfg")),
    ("design_droop_gain", include_str!("../scenarios/design_droop_gain.cfg")),
];

/// Text of a shipped scenario, by name with or without the `.cfg` suffix.
pub fn builtin_text(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Parses a shipped scenario. Panics on an unknown name; the shipped files are checked by tests.
pub fn builtin(name: &str) -> Result<ScenarioFile, ConfigError> {
    parse_config(builtin_text(name).unwrap_or_else(|| panic!("no shipped scenario named '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_file_parses() {
        for (name, text) in BUILTIN {
            parse_config(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn lookup_accepts_the_suffix() {
        assert!(builtin_text("sharing.cfg").is_some());
        assert!(builtin_text("sharing").is_some());
        assert!(builtin_text("no_such_scenario").is_none());
    }
}
