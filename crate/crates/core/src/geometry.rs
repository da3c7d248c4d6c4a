//! Ring-array transducer layout and parallel firing plans.
//!
//! Receivers sit uniformly on a circle, element 0 on the positive x-axis and
//! indices increasing counter-clockwise. Transmitters are point sources
//! co-located with every `R / n_transmitters`-th receiver.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the imaging plane, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Rotates counter-clockwise about the origin.
    pub fn rotated(&self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingArrayGeometry {
    pub radius_mm: f64,
    pub n_receivers: usize,
    pub n_transmitters: usize,
    pub center: Point2,
    #[serde(skip)]
    receiver_positions: Vec<Point2>,
    #[serde(skip)]
    transmitter_positions: Vec<Point2>,
}

impl RingArrayGeometry {
    pub fn receiver_positions(&self) -> &[Point2] {
        &self.receiver_positions
    }

    pub fn transmitter_positions(&self) -> &[Point2] {
        &self.transmitter_positions
    }

    /// Number of receivers between consecutive transmitters.
    pub fn tx_stride(&self) -> usize {
        self.n_receivers / self.n_transmitters
    }

    /// Receiver element that hosts transmitter `tx`.
    pub fn tx_receiver_index(&self, tx: usize) -> usize {
        tx * self.tx_stride()
    }

    pub fn receiver_angle(&self, rx: usize) -> f64 {
        2.0 * PI * rx as f64 / self.n_receivers as f64
    }

    pub fn transmitter(&self, tx: usize) -> Result<Point2> {
        self.transmitter_positions.get(tx).copied().ok_or_else(|| {
            Error::Bounds(format!(
                "transmitter {tx} not in ring of {} transmitters",
                self.n_transmitters
            ))
        })
    }
}

/// Places `n_receivers` elements uniformly on a circle centred at the origin.
pub fn build_ring_array(
    radius_mm: f64,
    n_receivers: usize,
    n_transmitters: usize,
) -> Result<RingArrayGeometry> {
    if !(radius_mm > 0.0) || !radius_mm.is_finite() {
        return Err(Error::Geometry(format!("radius must be positive, got {radius_mm}")));
    }
    if n_receivers == 0 || n_transmitters == 0 || !n_receivers.is_multiple_of(n_transmitters) {
        return Err(Error::Divisibility {
            n_receivers,
            n_transmitters,
        });
    }
    let center = Point2::ORIGIN;
    let receiver_positions: Vec<Point2> = (0..n_receivers)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / n_receivers as f64;
            Point2::new(
                center.x + radius_mm * angle.cos(),
                center.y + radius_mm * angle.sin(),
            )
        })
        .collect();
    let stride = n_receivers / n_transmitters;
    let transmitter_positions = (0..n_transmitters)
        .map(|t| receiver_positions[t * stride])
        .collect();
    Ok(RingArrayGeometry {
        radius_mm,
        n_receivers,
        n_transmitters,
        center,
        receiver_positions,
        transmitter_positions,
    })
}

/// `n_iterations` groups of `parallelism` transmitters that fire together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiringPlan {
    pub groups: Vec<Vec<usize>>,
    pub n_iterations: usize,
    pub parallelism: usize,
    pub n_transmitters: usize,
}

impl FiringPlan {
    pub fn total_waves(&self) -> usize {
        self.n_iterations * self.parallelism
    }

    pub fn is_sequential(&self) -> bool {
        self.parallelism == 1
    }

    /// Transmitters in firing order: group by group, ascending within a group.
    pub fn transmitters(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().flatten().copied()
    }

    /// The sequential plan that fires the same transmitters one at a time, in
    /// the same order.
    pub fn sequential_equivalent(&self) -> FiringPlan {
        let groups: Vec<Vec<usize>> = self.transmitters().map(|t| vec![t]).collect();
        FiringPlan {
            n_iterations: groups.len(),
            groups,
            parallelism: 1,
            n_transmitters: self.n_transmitters,
        }
    }
}

/// Builds `n_iterations` disjoint groups whose members are spaced
/// `n_transmitters / parallelism` apart on the ring.
///
/// Group `i` starts at offset `floor(i * S / N)` with `S = n_transmitters /
/// parallelism`, so a full plan (`N = S`) uses offsets `0..S` and a partial
/// plan spreads its groups evenly around the ring.
pub fn make_firing_plan(
    geometry: &RingArrayGeometry,
    n_iterations: usize,
    parallelism: usize,
) -> Result<FiringPlan> {
    let n_tx = geometry.n_transmitters;
    if parallelism == 0 || n_iterations == 0 {
        return Err(Error::Config(
            "firing plan needs at least one iteration of one transmitter".into(),
        ));
    }
    if !n_tx.is_multiple_of(parallelism) {
        return Err(Error::Divisibility {
            n_receivers: n_tx,
            n_transmitters: parallelism,
        });
    }
    if n_iterations * parallelism > n_tx {
        return Err(Error::Capacity {
            requested: n_iterations * parallelism,
            available: n_tx,
        });
    }
    let spacing = n_tx / parallelism;
    let groups = (0..n_iterations)
        .map(|i| {
            let offset = i * spacing / n_iterations;
            (0..parallelism).map(|k| offset + k * spacing).collect()
        })
        .collect();
    Ok(FiringPlan {
        groups,
        n_iterations,
        parallelism,
        n_transmitters: n_tx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    #[test]
    fn full_ring_layout() {
        let g = build_ring_array(50.0, 256, 16).unwrap();
        assert_eq!(g.receiver_positions().len(), 256);
        assert_eq!(g.transmitter_positions().len(), 16);
        for (t, p) in g.transmitter_positions().iter().enumerate() {
            assert_eq!(*p, g.receiver_positions()[16 * t]);
        }
        for p in g.receiver_positions() {
            assert!((p.distance(&g.center) - 50.0).abs() < 1e-9);
        }
        let d = g.transmitter(0).unwrap().distance(&g.transmitter(8).unwrap());
        assert_abs_diff_eq!(d, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn four_element_ring() {
        let g = build_ring_array(50.0, 4, 4).unwrap();
        let expected = [(50.0, 0.0), (0.0, 50.0), (-50.0, 0.0), (0.0, -50.0)];
        for (p, (x, y)) in g.receiver_positions().iter().zip(expected) {
            assert_abs_diff_eq!(p.x, x, epsilon = 1e-9);
            assert_abs_diff_eq!(p.y, y, epsilon = 1e-9);
        }
        assert_eq!(g.receiver_positions()[0], Point2::new(50.0, 0.0));
    }

    #[test]
    fn rejects_bad_rings() {
        assert!(matches!(
            build_ring_array(50.0, 256, 15),
            Err(Error::Divisibility { .. })
        ));
        assert!(build_ring_array(0.0, 16, 4).is_err());
        assert!(build_ring_array(-1.0, 16, 4).is_err());
    }

    #[test]
    fn deterministic_positions() {
        let a = build_ring_array(50.0, 256, 16).unwrap();
        let b = build_ring_array(50.0, 256, 16).unwrap();
        for (p, q) in a.receiver_positions().iter().zip(b.receiver_positions()) {
            assert_eq!(p.x.to_bits(), q.x.to_bits());
            assert_eq!(p.y.to_bits(), q.y.to_bits());
        }
    }

    #[test]
    fn fast_plan_groups() {
        let g = build_ring_array(50.0, 256, 16).unwrap();
        let plan = make_firing_plan(&g, 4, 4).unwrap();
        assert_eq!(
            plan.groups,
            vec![
                vec![0, 4, 8, 12],
                vec![1, 5, 9, 13],
                vec![2, 6, 10, 14],
                vec![3, 7, 11, 15]
            ]
        );
    }

    #[test]
    fn sequential_plan_is_singletons() {
        let g = build_ring_array(50.0, 256, 16).unwrap();
        let plan = make_firing_plan(&g, 16, 1).unwrap();
        assert!(plan.is_sequential());
        assert_eq!(plan.groups, (0..16).map(|t| vec![t]).collect::<Vec<_>>());
    }

    #[test]
    fn partial_plans_spread_over_the_ring() {
        let g = build_ring_array(50.0, 64, 16).unwrap();
        let usct4 = make_firing_plan(&g, 4, 1).unwrap();
        assert_eq!(usct4.groups, vec![vec![0], vec![4], vec![8], vec![12]]);
        let fast22 = make_firing_plan(&g, 2, 2).unwrap();
        assert_eq!(fast22.groups, vec![vec![0, 8], vec![4, 12]]);
    }

    #[test]
    fn in_group_pairs_are_ninety_degrees_apart() {
        let g = build_ring_array(50.0, 256, 16).unwrap();
        let plan = make_firing_plan(&g, 4, 4).unwrap();
        for group in &plan.groups {
            for w in group.windows(2) {
                let a = g.transmitter(w[0]).unwrap();
                let b = g.transmitter(w[1]).unwrap();
                let angle = (b.y.atan2(b.x) - a.y.atan2(a.x)).rem_euclid(2.0 * PI);
                assert_abs_diff_eq!(angle, PI / 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn oversubscribed_plan_rejected() {
        let g = build_ring_array(50.0, 256, 16).unwrap();
        assert!(matches!(
            make_firing_plan(&g, 5, 4),
            Err(Error::Capacity {
                requested: 20,
                available: 16
            })
        ));
        assert!(make_firing_plan(&g, 1, 3).is_err());
    }

    #[test]
    fn full_plans_cover_every_transmitter_with_fourfold_symmetry() {
        let g = build_ring_array(50.0, 64, 16).unwrap();
        for p in [1, 2, 4, 8, 16] {
            let plan = make_firing_plan(&g, 16 / p, p).unwrap();
            let all: BTreeSet<usize> = plan.transmitters().collect();
            assert_eq!(all, (0..16).collect());
            assert_eq!(plan.transmitters().count(), 16);

            let canon = |groups: &[Vec<usize>]| {
                let mut v: Vec<BTreeSet<usize>> =
                    groups.iter().map(|g| g.iter().copied().collect()).collect();
                v.sort();
                v
            };
            let rotated: Vec<Vec<usize>> = plan
                .groups
                .iter()
                .map(|grp| grp.iter().map(|t| (t + 4) % 16).collect())
                .collect();
            assert_eq!(canon(&rotated), canon(&plan.groups));
        }
    }
}
