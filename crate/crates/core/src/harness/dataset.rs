//! Training data from simulated acquisitions.

use crate::error::{Error, Result};
use crate::geometry::FiringPlan;
use crate::separation::{Dataset, TrainingPair};

use super::setup::Setup;

/// Un-augmented training pairs for each plan, one per firing group and
/// simulation. Simulations are shared between plans.
pub fn build_pairs(setup: &Setup, seeds: &[u64], plans: &[&FiringPlan]) -> Result<Vec<Vec<TrainingPair>>> {
    for plan in plans {
        if plan.parallelism < 2 {
            return Err(Error::Config("training plans must fire at least two transmitters at once".into()));
        }
    }
    let mut out: Vec<Vec<TrainingPair>> = plans.iter().map(|_| Vec::new()).collect();
    for (i, &seed) in seeds.iter().enumerate() {
        let wrap = |e: Error| Error::Acquisition {
            index: i,
            source: Box::new(e),
        };
        let medium = setup.phantom(seed).map_err(wrap)?;
        let acq = setup.acquire(&medium, plans).map_err(wrap)?;
        for (plan, pairs) in plans.iter().zip(out.iter_mut()) {
            let mixed = acq.mixed_frames(plan)?;
            let labels = acq.matched_references(plan)?;
            let p = plan.parallelism;
            for (input, labels) in mixed.into_iter().zip(labels.chunks(p)) {
                pairs.push(TrainingPair::new(input, labels.to_vec())?);
            }
        }
    }
    Ok(out)
}

/// Augmented (×8) dataset over `seeds` for a single plan.
pub fn build_dataset(setup: &Setup, seeds: &[u64], plan: &FiringPlan) -> Result<Dataset> {
    let pairs = build_pairs(setup, seeds, &[plan])?.pop().expect("one plan");
    Ok(Dataset::augmented(pairs, setup.geometry.clone()))
}

/// Training and validation seeds: the first `n_train` simulations train,
/// the following `n_val` validate.
pub fn split_seeds(first: u64, n_train: usize, n_val: usize) -> (Vec<u64>, Vec<u64>) {
    let all: Vec<u64> = (0..(n_train + n_val) as u64).map(|i| first + i).collect();
    let (a, b) = all.split_at(n_train);
    (a.to_vec(), b.to_vec())
}
