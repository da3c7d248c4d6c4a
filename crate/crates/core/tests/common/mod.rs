#![allow(dead_code)]

use fastusct::phantom::{GridSpec, MediumMap, SOUND_SPEED, WATER_DENSITY};
use fastusct::simulator::{Pulse, SimConfig};
use fastusct::{build_ring_array, RingArrayGeometry};

/// Coarse test scale: 1 mm grid, 0.25 MHz pulse, 5 MHz sampling. Keeps the
/// samples-per-period and points-per-wavelength ratios of the full setup.
pub fn small_config() -> SimConfig {
    let fs = 5e6;
    SimConfig {
        grid_size: 144,
        pixel_pitch_mm: 1.0,
        sound_speed: SOUND_SPEED,
        sampling_rate: fs,
        n_samples: 512,
        time_step: SimConfig::step_for(fs, 1.0, SOUND_SPEED, 0.3),
        pml_thickness: 14,
        pml_alpha: 2.0,
    }
}

pub fn small_pulse() -> Pulse {
    Pulse::new(0.25e6, 1, 1.0).unwrap()
}

pub fn small_ring() -> RingArrayGeometry {
    build_ring_array(50.0, 64, 16).unwrap()
}

pub fn water(config: &SimConfig) -> MediumMap {
    MediumMap::homogeneous(
        GridSpec::new(config.grid_size, config.pixel_pitch_mm),
        WATER_DENSITY,
        config.sound_speed,
    )
    .unwrap()
}

pub fn envelope_row(row: ndarray::ArrayView1<'_, f32>) -> Vec<f64> {
    let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
    fastusct::preprocess::envelope(&v)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
