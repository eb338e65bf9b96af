use crate::net::{LoadModel, MicrogridConfig};
use crate::presets;

pub fn n_inverter_config(n: usize, load: LoadModel) -> MicrogridConfig {
    presets::microgrid(n, load)
}

pub fn two_inverter_config(load: LoadModel) -> MicrogridConfig {
    presets::microgrid(2, load)
}

pub fn sharing_config() -> MicrogridConfig {
    presets::sharing()
}
