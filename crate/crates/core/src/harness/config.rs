//! Experiment configuration (TOML) and scale presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamform::{DasOptions, ReconRegion};
use crate::error::{Error, Result};
use crate::geometry::{build_ring_array, make_firing_plan, RingArrayGeometry};
use crate::phantom::SOUND_SPEED;
use crate::preprocess::PreprocessConfig;
use crate::separation::{ArchDescriptor, TrainConfig};
use crate::simulator::{Pulse, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Full-size grid: 1024² at 0.125 mm, 40 MHz sampling, 256 elements.
    Full,
    /// 256² at 0.5 mm, 10 MHz sampling, 64 elements.
    Desk,
    /// 144² at 1 mm, 5 MHz sampling, 64 elements. Fits CI budgets.
    Small,
}

impl Scale {
    /// Linear down-scaling relative to the full-size setup.
    pub fn factor(self) -> usize {
        match self {
            Scale::Full => 1,
            Scale::Desk => 4,
            Scale::Small => 8,
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            "small" => Ok(Scale::Small),
            other => Err(Error::Config(format!("unknown scale {other:?} (full, desk, small)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub radius_mm: f64,
    pub n_receivers: usize,
    pub n_transmitters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub center_frequency: f64,
    pub n_cycles: usize,
    pub amplitude: f64,
}

/// Subject generator. Pixel quantities are in simulation-grid pixels
/// relative to the grid centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSpec {
    Water,
    ScattererPoints {
        count: usize,
        /// Square region `[-half, half)²`.
        region_half_px: i64,
        scatterer_density: f64,
    },
    ScattererClump {
        patch: usize,
        circle_center: (i64, i64),
        circle_radius: f64,
        a: f64,
    },
    /// Grayscale image file resized to the grid.
    Image {
        path: PathBuf,
        a: f64,
        #[serde(default)]
        enhance: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// First evaluation phantom; phantom `i` uses `phantom + i`.
    pub phantom: u64,
    /// First training simulation; simulation `i` uses `train_phantoms + i`.
    pub train_phantoms: u64,
    pub weights: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationSettings {
    pub arch: ArchDescriptor,
    pub train: TrainConfig,
    pub n_train_sims: usize,
    pub n_val_sims: usize,
    /// Directory holding `model_p{P}.usct`; when set, training is skipped.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconSettings {
    pub size_mm: f64,
    pub n_pixels: usize,
    #[serde(default)]
    pub interpolate: bool,
}

impl ReconSettings {
    pub fn region(&self) -> ReconRegion {
        ReconRegion::centered(self.size_mm, self.n_pixels)
    }

    pub fn das_options(&self) -> DasOptions {
        DasOptions {
            interpolate: self.interpolate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub n: usize,
    pub p: usize,
    pub separation: bool,
}

impl Variant {
    pub fn name(&self) -> String {
        if self.p == 1 {
            format!("USCT({})", self.n)
        } else {
            format!(
                "FastUSCT({},{}){}",
                self.n,
                self.p,
                if self.separation { "+sep" } else { "" }
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    pub n_phantoms: usize,
    /// Sequential reference plan size; all transmitters when absent.
    #[serde(default)]
    pub reference_transmitters: Option<usize>,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub simulation: SimConfig,
    pub pulse: PulseConfig,
    pub phantom: PhantomSpec,
    pub seeds: Seeds,
    pub preprocess: PreprocessConfig,
    pub separation: SeparationSettings,
    pub reconstruction: ReconSettings,
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Scatterer-point experiment at the given scale.
    pub fn preset(scale: Scale) -> Self {
        let s = scale.factor();
        let sf = s as f64;
        let pitch = 0.125 * sf;
        let fs = 40e6 / sf;
        let n_receivers = match scale {
            Scale::Full => 256,
            _ => 64,
        };
        let (grid_size, pml) = match scale {
            Scale::Full => (1024, 40),
            Scale::Desk => (256, 20),
            Scale::Small => (144, 14),
        };
        let preprocess = PreprocessConfig {
            mask_each_transmitter: true,
            ..match scale {
                Scale::Full => PreprocessConfig::scatterer(),
                _ => PreprocessConfig::natural_image().frequency_scaled(sf),
            }
        };
        let (arch, train, n_train, n_val, n_eval, recon_px) = match scale {
            Scale::Full => (ArchDescriptor::new(vec![32, 64, 128, 256]), TrainConfig::default(), 80, 20, 20, 256),
            Scale::Desk => (ArchDescriptor::desk(), TrainConfig { epochs: 30, ..TrainConfig::default() }, 40, 10, 10, 128),
            Scale::Small => (
                ArchDescriptor::new(vec![8, 16, 32]),
                TrainConfig {
                    epochs: 16,
                    lr_interval: 5,
                    ..TrainConfig::default()
                },
                20,
                2,
                10,
                64,
            ),
        };
        let mut variants = vec![Variant {
            n: 16,
            p: 1,
            separation: false,
        }];
        for separation in [false, true] {
            variants.push(Variant { n: 4, p: 4, separation });
        }
        Self {
            geometry: GeometryConfig {
                radius_mm: 50.0,
                n_receivers,
                n_transmitters: 16,
            },
            simulation: SimConfig {
                grid_size,
                pixel_pitch_mm: pitch,
                sound_speed: SOUND_SPEED,
                sampling_rate: fs,
                n_samples: 4096 / s,
                time_step: SimConfig::step_for(fs, pitch, SOUND_SPEED, 0.3),
                pml_thickness: pml,
                pml_alpha: 2.0,
            },
            pulse: PulseConfig {
                center_frequency: 2e6 / sf,
                n_cycles: 1,
                amplitude: 1.0,
            },
            phantom: PhantomSpec::ScattererPoints {
                count: 10,
                region_half_px: 256 / s as i64,
                scatterer_density: 1500.0,
            },
            seeds: Seeds {
                phantom: 1_000_000,
                train_phantoms: 0,
                weights: 7,
            },
            preprocess,
            separation: SeparationSettings {
                arch: arch.with_receiver_encoding(true),
                train,
                n_train_sims: n_train,
                n_val_sims: n_val,
                checkpoint_dir: None,
            },
            reconstruction: ReconSettings {
                size_mm: 64.0,
                n_pixels: recon_px,
                interpolate: false,
            },
            evaluation: EvaluationSettings {
                n_phantoms: n_eval,
                reference_transmitters: None,
                variants,
            },
            output_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn ring(&self) -> Result<RingArrayGeometry> {
        build_ring_array(
            self.geometry.radius_mm,
            self.geometry.n_receivers,
            self.geometry.n_transmitters,
        )
    }

    pub fn pulse(&self) -> Result<Pulse> {
        Pulse::new(self.pulse.center_frequency, self.pulse.n_cycles, self.pulse.amplitude)
    }

    pub fn reference_transmitters(&self) -> usize {
        self.evaluation
            .reference_transmitters
            .unwrap_or(self.geometry.n_transmitters)
    }

    pub fn validate(&self) -> Result<()> {
        let geo = self.ring()?;
        self.simulation.validate_for(&geo)?;
        self.pulse()?;
        self.preprocess.validate(self.simulation.sampling_rate)?;
        self.separation.arch.validate()?;
        self.separation.train.validate()?;
        self.reconstruction.region().validate(&geo)?;
        make_firing_plan(&geo, self.reference_transmitters(), 1)?;
        for v in &self.evaluation.variants {
            make_firing_plan(&geo, v.n, v.p)?;
        }
        if let Some(dir) = &self.separation.checkpoint_dir {
            for p in self.separated_parallelisms() {
                let path = dir.join(format!("model_p{p}.usct"));
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "checkpoint {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if let PhantomSpec::Image { path, .. } = &self.phantom {
            if !path.exists() {
                return Err(Error::Config(format!("phantom image {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// Distinct `P > 1` values that need a separation model.
    pub fn separated_parallelisms(&self) -> Vec<usize> {
        let mut ps: Vec<usize> = self
            .evaluation
            .variants
            .iter()
            .filter(|v| v.separation && v.p > 1)
            .map(|v| v.p)
            .collect();
        ps.sort_unstable();
        ps.dedup();
        ps
    }
}
