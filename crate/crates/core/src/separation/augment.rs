//! The eight symmetries of a ring with four-fold rotational symmetry:
//! quarter turns, optionally preceded by a reflection about element 0.

use ndarray::Array2;

use super::TrainingPair;
use crate::error::{Error, Result};
use crate::geometry::RingArrayGeometry;
use crate::simulator::RfFrame;

/// `k -> (reflect ? -k : k) + quarter_turns · n/4` on element indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symmetry {
    pub reflect: bool,
    pub quarter_turns: u8,
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry {
        reflect: false,
        quarter_turns: 0,
    };

    pub fn all() -> [Symmetry; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, s) in out.iter_mut().enumerate() {
            *s = Symmetry {
                reflect: i >= 4,
                quarter_turns: (i % 4) as u8,
            };
        }
        out
    }

    pub fn rotation(quarter_turns: u8) -> Self {
        Symmetry {
            reflect: false,
            quarter_turns: quarter_turns % 4,
        }
    }

    pub fn reflection() -> Self {
        Symmetry {
            reflect: true,
            quarter_turns: 0,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(self, other: Symmetry) -> Symmetry {
        let b = other.quarter_turns as i32;
        let turns = self.quarter_turns as i32 + if self.reflect { -b } else { b };
        Symmetry {
            reflect: self.reflect ^ other.reflect,
            quarter_turns: turns.rem_euclid(4) as u8,
        }
    }

    pub fn inverse(self) -> Symmetry {
        if self.reflect {
            self
        } else {
            Symmetry::rotation(4 - self.quarter_turns)
        }
    }

    /// Image of index `k` on a ring of `n` evenly spaced elements.
    pub fn map_index(self, k: usize, n: usize) -> usize {
        let k = k as i64;
        let n = n as i64;
        let base = if self.reflect { -k } else { k };
        (base + self.quarter_turns as i64 * n / 4).rem_euclid(n) as usize
    }
}

fn check_ring(geometry: &RingArrayGeometry) -> Result<()> {
    if !geometry.n_receivers.is_multiple_of(4) || !geometry.n_transmitters.is_multiple_of(4) {
        return Err(Error::Symmetry(format!(
            "ring of {} receivers / {} transmitters has no four-fold symmetry",
            geometry.n_receivers, geometry.n_transmitters
        )));
    }
    Ok(())
}

/// Moves receiver rows and relabels transmitters.
pub fn transform_frame(frame: &RfFrame, sym: Symmetry, geometry: &RingArrayGeometry) -> Result<RfFrame> {
    check_ring(geometry)?;
    let r = geometry.n_receivers;
    if frame.n_receivers() != r {
        return Err(Error::shape(format!("{r} receivers"), frame.n_receivers().to_string()));
    }
    let mut out = Array2::<f32>::zeros(frame.samples.dim());
    for k in 0..r {
        out.row_mut(sym.map_index(k, r)).assign(&frame.samples.row(k));
    }
    let mut tx: Vec<usize> = frame
        .tx_set
        .iter()
        .map(|&t| sym.map_index(t, geometry.n_transmitters))
        .collect();
    tx.sort_unstable();
    let mut f = RfFrame::new(out, frame.sampling_rate, tx);
    f.t0 = frame.t0;
    Ok(f)
}

/// Transforms input and labels together; labels are re-sorted by their new
/// transmitter index.
pub fn apply_symmetry(pair: &TrainingPair, sym: Symmetry, geometry: &RingArrayGeometry) -> Result<TrainingPair> {
    let input = transform_frame(&pair.input, sym, geometry)?;
    let mut labels = pair
        .labels
        .iter()
        .map(|l| transform_frame(l, sym, geometry))
        .collect::<Result<Vec<_>>>()?;
    labels.sort_by_key(|l| l.tx_set.first().copied());
    Ok(TrainingPair { input, labels })
}

/// All eight images of `pair`, identity first.
pub fn augment(pair: &TrainingPair, geometry: &RingArrayGeometry) -> Result<Vec<TrainingPair>> {
    Symmetry::all()
        .iter()
        .map(|&s| apply_symmetry(pair, s, geometry))
        .collect()
}
