//! Resolved experiment objects and per-phantom acquisition.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::beamform::{das_reconstruct, DasOptions, ReconImage, ReconRegion};
use crate::error::{Error, Result};
use crate::geometry::{make_firing_plan, FiringPlan, RingArrayGeometry};
use crate::phantom::{
    enhance_breast_image, gen_scatterer_clump, gen_scatterer_points, image_to_density, GridSpec,
    MediumMap, PixelRegion, WATER_DENSITY,
};
use crate::preprocess::preprocess_frame;
use crate::quality::{postprocess, BModeImage};
use crate::separation::SeparationModel;
use crate::simulator::{run_forward, Pulse, RfFrame};

use super::config::{ExperimentConfig, PhantomSpec};
use super::export::load_intensity_image;

/// Validated configuration together with the objects derived from it.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub geometry: RingArrayGeometry,
    pub pulse: Pulse,
    pub region: ReconRegion,
    pub das: DasOptions,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            geometry: config.ring()?,
            pulse: config.pulse()?,
            region: config.reconstruction.region(),
            das: config.reconstruction.das_options(),
            config,
        })
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.config.simulation.grid_size, self.config.simulation.pixel_pitch_mm)
    }

    pub fn plan(&self, n: usize, p: usize) -> Result<FiringPlan> {
        make_firing_plan(&self.geometry, n, p)
    }

    /// Sequential plan used as the comparison baseline.
    pub fn reference_plan(&self) -> Result<FiringPlan> {
        self.plan(self.config.reference_transmitters(), 1)
    }

    /// Plan covering every transmitter with `p` simultaneous firings.
    pub fn full_plan(&self, p: usize) -> Result<FiringPlan> {
        let n_tx = self.geometry.n_transmitters;
        if p == 0 || !n_tx.is_multiple_of(p) {
            return Err(Error::Config(format!(
                "{n_tx} transmitters cannot be split into groups of {p}"
            )));
        }
        self.plan(n_tx / p, p)
    }

    pub fn phantom(&self, seed: u64) -> Result<MediumMap> {
        let grid = self.grid();
        let c = self.config.simulation.sound_speed;
        match &self.config.phantom {
            PhantomSpec::Water => MediumMap::homogeneous(grid, WATER_DENSITY, c),
            PhantomSpec::ScattererPoints {
                count,
                region_half_px,
                scatterer_density,
            } => gen_scatterer_points(
                seed,
                *count,
                &PixelRegion::square(-region_half_px, *region_half_px),
                *scatterer_density,
                grid,
                WATER_DENSITY,
                c,
            ),
            PhantomSpec::ScattererClump {
                patch,
                circle_center,
                circle_radius,
                a,
            } => gen_scatterer_clump(seed, *patch, *circle_center, *circle_radius, *a, grid, WATER_DENSITY, c),
            PhantomSpec::Image { path, a, enhance } => {
                let mut image = load_intensity_image(path, grid.size)?;
                if *enhance {
                    let mask = image.pixels().mapv(|v| v > 0.0);
                    image = enhance_breast_image(&image, &mask)?;
                }
                image_to_density(&image, *a, WATER_DENSITY, seed, &self.geometry, grid, c)
            }
        }
    }

    /// Simulates one raw frame per transmitter set, in order.
    pub fn simulate(&self, medium: &MediumMap, tx_sets: &[Vec<usize>]) -> Result<Vec<RfFrame>> {
        tx_sets
            .par_iter()
            .enumerate()
            .map(|(i, set)| {
                run_forward(medium, &self.geometry, &self.pulse, set, &self.config.simulation).map_err(|e| {
                    Error::Acquisition {
                        index: i,
                        source: Box::new(e),
                    }
                })
            })
            .collect()
    }

    pub fn preprocess(&self, frames: &[RfFrame]) -> Result<Vec<RfFrame>> {
        frames
            .iter()
            .map(|f| preprocess_frame(f, &self.config.preprocess, &self.geometry, self.config.simulation.sound_speed))
            .collect()
    }

    pub fn reconstruct(&self, frames: &[RfFrame]) -> Result<ReconImage> {
        das_reconstruct(
            frames,
            &self.geometry,
            &self.region,
            self.config.simulation.sound_speed,
            self.config.simulation.sampling_rate,
            self.das,
        )
    }

    pub fn bmode(&self, frames: &[RfFrame]) -> Result<BModeImage> {
        postprocess(&self.reconstruct(frames)?)
    }

    /// Simulates and preprocesses every frame the given plans need.
    pub fn acquire(&self, medium: &MediumMap, plans: &[&FiringPlan]) -> Result<Acquisition> {
        let mut singles = BTreeSet::new();
        let mut groups = BTreeSet::new();
        for plan in plans {
            for g in &plan.groups {
                singles.extend(g.iter().copied());
                if g.len() > 1 {
                    let mut g = g.clone();
                    g.sort_unstable();
                    groups.insert(g);
                }
            }
        }
        let singles: Vec<usize> = singles.into_iter().collect();
        let groups: Vec<Vec<usize>> = groups.into_iter().collect();
        let sets: Vec<Vec<usize>> = singles.iter().map(|&t| vec![t]).chain(groups.iter().cloned()).collect();
        let frames = self.preprocess(&self.simulate(medium, &sets)?)?;
        let mut frames = frames.into_iter();
        let sequential = singles.iter().map(|&t| (t, frames.next().expect("one frame per set"))).collect();
        let parallel = groups.into_iter().zip(frames).collect();
        Ok(Acquisition { sequential, parallel })
    }
}

/// Preprocessed frames of one phantom: single-transmitter shots keyed by
/// transmitter and mixed shots keyed by their sorted transmitter set.
#[derive(Debug, Clone, Default)]
pub struct Acquisition {
    pub sequential: BTreeMap<usize, RfFrame>,
    pub parallel: BTreeMap<Vec<usize>, RfFrame>,
}

impl Acquisition {
    fn single(&self, tx: usize) -> Result<&RfFrame> {
        self.sequential
            .get(&tx)
            .ok_or_else(|| Error::Input(format!("transmitter {tx} was not acquired")))
    }

    fn mixed(&self, group: &[usize]) -> Result<&RfFrame> {
        let mut key = group.to_vec();
        key.sort_unstable();
        self.parallel
            .get(&key)
            .ok_or_else(|| Error::Input(format!("group {group:?} was not acquired")))
    }

    /// Sequential frames for every transmitter of `plan`, group order.
    pub fn reference_frames(&self, plan: &FiringPlan) -> Result<Vec<RfFrame>> {
        plan.transmitters().map(|t| self.single(t).cloned()).collect()
    }

    /// Mixed frames for every group of `plan`.
    pub fn mixed_frames(&self, plan: &FiringPlan) -> Result<Vec<RfFrame>> {
        plan.groups.iter().map(|g| self.mixed(g).cloned()).collect()
    }

    /// One frame per transmitter of `plan`, in group then ascending
    /// transmitter order, as the imaging variant would produce it.
    ///
    /// Singleton groups use the sequential shot. Mixed groups are separated
    /// with `model`, or without one the mixed frame stands in for each of
    /// its transmitters.
    pub fn variant_frames(&self, plan: &FiringPlan, model: Option<&SeparationModel<f32>>) -> Result<Vec<RfFrame>> {
        let mut out = Vec::with_capacity(plan.total_waves());
        for g in &plan.groups {
            if g.len() == 1 {
                out.push(self.single(g[0])?.clone());
                continue;
            }
            let mixed = self.mixed(g)?;
            match model {
                Some(m) => out.extend(m.predict(mixed)?),
                None => out.extend(duplicate_mixed(mixed)),
            }
        }
        Ok(out)
    }

    /// Sequential frames matching the order of [`Acquisition::variant_frames`].
    pub fn matched_references(&self, plan: &FiringPlan) -> Result<Vec<RfFrame>> {
        let mut out = Vec::with_capacity(plan.total_waves());
        for g in &plan.groups {
            let mut sorted = g.clone();
            sorted.sort_unstable();
            for t in sorted {
                out.push(self.single(t)?.clone());
            }
        }
        Ok(out)
    }
}

/// Reuses a mixed frame unchanged as the frame of each of its transmitters, in sorted order.
pub fn duplicate_mixed(frame: &RfFrame) -> Vec<RfFrame> {
    let mut sorted = frame.tx_set.clone();
    sorted.sort_unstable();
    sorted
        .into_iter()
        .map(|t| RfFrame {
            tx_set: vec![t],
            ..frame.clone()
        })
        .collect()
}
