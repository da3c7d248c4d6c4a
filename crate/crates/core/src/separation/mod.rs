//! Learned separation of simultaneously fired transmissions.
//!
//! A mixed frame from `P` transmitters goes in as one channel; `P` frames
//! come out, one per transmitter in ascending index order.

pub mod augment;
pub mod loss;
pub mod model;
pub mod ops;
pub mod tape;
pub mod train;

pub use augment::{augment, apply_symmetry, Symmetry};
pub use loss::{loss, loss_and_grad, phase};
pub use model::{build_model, ArchDescriptor, LayerDescriptor, SeparationModel};
pub use ops::{Padding, Real};
pub use tape::Tensor;
pub use train::{batch_loss, evaluate_loss, loss_and_gradients, train, Dataset, LossHistory, TrainConfig};

use crate::error::{Error, Result};
use crate::geometry::FiringPlan;
use crate::simulator::RfFrame;

/// A mixed frame and the single-transmitter frames it is made of.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: RfFrame,
    /// One per transmitter of `input.tx_set`, ascending.
    pub labels: Vec<RfFrame>,
}

impl TrainingPair {
    /// Sorts labels by transmitter and checks shapes and identities.
    pub fn new(input: RfFrame, mut labels: Vec<RfFrame>) -> Result<Self> {
        labels.sort_by_key(|l| l.tx_set.first().copied());
        let pair = Self { input, labels };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        let mut tx = self.input.tx_set.clone();
        tx.sort_unstable();
        let label_tx: Vec<usize> = self.labels.iter().flat_map(|l| l.tx_set.iter().copied()).collect();
        if self.labels.iter().any(|l| l.tx_set.len() != 1) || label_tx != tx {
            return Err(Error::Input(format!(
                "labels {label_tx:?} do not match the fired set {tx:?}"
            )));
        }
        for l in &self.labels {
            if l.samples.dim() != self.input.samples.dim() {
                return Err(Error::shape(
                    format!("{:?}", self.input.samples.dim()),
                    format!("{:?}", l.samples.dim()),
                ));
            }
        }
        Ok(())
    }
}

/// Separates every group of a parallel acquisition and returns the
/// single-transmitter frames ordered by group, then transmitter.
pub fn separate_acquisition<F: Real>(
    model: &SeparationModel<F>,
    frames: &[RfFrame],
    plan: &FiringPlan,
) -> Result<Vec<RfFrame>> {
    if model.n_outputs != plan.parallelism {
        return Err(Error::Config(format!(
            "model separates {} transmitters, plan fires {} at once",
            model.n_outputs, plan.parallelism
        )));
    }
    if frames.len() != plan.groups.len() {
        return Err(Error::shape(format!("{} frames", plan.groups.len()), frames.len().to_string()));
    }
    let mut out = Vec::with_capacity(plan.total_waves());
    for (frame, group) in frames.iter().zip(&plan.groups) {
        let mut g = group.clone();
        g.sort_unstable();
        let mut fired = frame.tx_set.clone();
        fired.sort_unstable();
        if g != fired {
            return Err(Error::Input(format!(
                "frame fired {:?} but the plan group is {group:?}",
                frame.tx_set
            )));
        }
        out.extend(model.predict(frame)?);
    }
    Ok(out)
}
