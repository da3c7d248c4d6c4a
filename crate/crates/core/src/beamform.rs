//! Synthetic-aperture delay-and-sum reconstruction.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, RingArrayGeometry};
use crate::preprocess::analytic_signal;
use crate::simulator::RfFrame;

/// Rectangular pixel grid in ring coordinates (mm). Row `r` covers
/// `y ∈ [origin.y + r·py, origin.y + (r+1)·py)`, column `c` likewise in x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconRegion {
    pub origin: Point2,
    pub width_mm: f64,
    pub height_mm: f64,
    pub n_pixels_x: usize,
    pub n_pixels_y: usize,
}

impl ReconRegion {
    /// Square region of side `size_mm` centred on the ring.
    pub fn centered(size_mm: f64, n_pixels: usize) -> Self {
        Self {
            origin: Point2::new(-size_mm / 2.0, -size_mm / 2.0),
            width_mm: size_mm,
            height_mm: size_mm,
            n_pixels_x: n_pixels,
            n_pixels_y: n_pixels,
        }
    }

    pub fn pitch_x(&self) -> f64 {
        self.width_mm / self.n_pixels_x as f64
    }

    pub fn pitch_y(&self) -> f64 {
        self.height_mm / self.n_pixels_y as f64
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) * self.pitch_x(),
            self.origin.y + (row as f64 + 0.5) * self.pitch_y(),
        )
    }

    /// Pixel containing `p`, if any.
    pub fn pixel_of(&self, p: Point2) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin.x) / self.pitch_x()).floor();
        let r = ((p.y - self.origin.y) / self.pitch_y()).floor();
        if c < 0.0 || r < 0.0 || c >= self.n_pixels_x as f64 || r >= self.n_pixels_y as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    pub fn validate(&self, geometry: &RingArrayGeometry) -> Result<()> {
        if self.n_pixels_x == 0 || self.n_pixels_y == 0 || !(self.width_mm > 0.0) || !(self.height_mm > 0.0) {
            return Err(Error::Config("reconstruction region must be non-empty".into()));
        }
        let corners = [
            self.origin,
            Point2::new(self.origin.x + self.width_mm, self.origin.y),
            Point2::new(self.origin.x, self.origin.y + self.height_mm),
            Point2::new(self.origin.x + self.width_mm, self.origin.y + self.height_mm),
        ];
        if corners.iter().any(|c| c.distance(&geometry.center) > geometry.radius_mm) {
            return Err(Error::Bounds(format!(
                "reconstruction region {self:?} extends outside the ring"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconImage {
    /// `n_pixels_y x n_pixels_x`, non-negative.
    pub intensity: Array2<f64>,
    pub region: ReconRegion,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DasOptions {
    /// Linear interpolation between samples instead of nearest sample.
    #[serde(default)]
    pub interpolate: bool,
}

/// Complex beamformed field before taking the magnitude.
#[derive(Debug, Clone)]
pub struct DasField {
    pub field: Array2<Complex64>,
    /// Contributions whose delay fell outside the record.
    pub skipped: u64,
}

struct Prepared {
    tx_pos: Point2,
    /// Analytic signal, one row per receiver.
    analytic: Vec<Vec<Complex64>>,
}

fn prepare(frames: &[RfFrame], geometry: &RingArrayGeometry, fs: f64) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(frames.len());
    let mut len = None;
    for (i, frame) in frames.iter().enumerate() {
        let tx = match frame.tx_set.as_slice() {
            [t] => *t,
            other => {
                return Err(Error::Input(format!(
                    "frame {i} must carry exactly one transmitter, has {other:?}"
                )))
            }
        };
        if frame.n_receivers() != geometry.n_receivers {
            return Err(Error::shape(
                format!("{} receivers", geometry.n_receivers),
                format!("{} in frame {i}", frame.n_receivers()),
            ));
        }
        if (frame.sampling_rate - fs).abs() > 1e-6 * fs {
            return Err(Error::Input(format!(
                "frame {i} sampled at {} Hz, reconstruction expects {fs} Hz",
                frame.sampling_rate
            )));
        }
        if *len.get_or_insert(frame.n_samples()) != frame.n_samples() {
            return Err(Error::shape(
                format!("{} samples", len.unwrap_or(0)),
                format!("{} in frame {i}", frame.n_samples()),
            ));
        }
        let analytic = frame
            .samples
            .axis_iter(Axis(0))
            .map(|row| {
                let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                analytic_signal(&v)
            })
            .collect();
        out.push(Prepared {
            tx_pos: geometry.transmitter(tx)?,
            analytic,
        });
    }
    Ok(out)
}

/// Coherent sum of analytic samples at the round-trip delay of every pixel.
pub fn das_field(
    frames: &[RfFrame],
    geometry: &RingArrayGeometry,
    region: &ReconRegion,
    sound_speed: f64,
    sampling_rate: f64,
    options: DasOptions,
) -> Result<DasField> {
    region.validate(geometry)?;
    if !(sound_speed > 0.0) || !(sampling_rate > 0.0) {
        return Err(Error::Config("sound speed and sampling rate must be positive".into()));
    }
    let prepared = prepare(frames, geometry, sampling_rate)?;
    let n_t = frames.first().map_or(0, |f| f.n_samples());
    // mm -> samples
    let scale = sampling_rate * 1e-3 / sound_speed;
    let rx_pos = geometry.receiver_positions();
    let (ny, nx) = (region.n_pixels_y, region.n_pixels_x);

    let rows: Vec<(Vec<Complex64>, u64)> = (0..ny)
        .into_par_iter()
        .map(|r| {
            let mut row = vec![Complex64::new(0.0, 0.0); nx];
            let mut skipped = 0u64;
            let mut rx_delay = vec![0.0; rx_pos.len()];
            for (c, acc) in row.iter_mut().enumerate() {
                let x = region.pixel_center(r, c);
                for (d, p) in rx_delay.iter_mut().zip(rx_pos) {
                    *d = x.distance(p) * scale;
                }
                for frame in &prepared {
                    let tx_delay = x.distance(&frame.tx_pos) * scale;
                    for (trace, &rd) in frame.analytic.iter().zip(&rx_delay) {
                        let t = tx_delay + rd;
                        if options.interpolate {
                            let k = t.floor();
                            if k < 0.0 || k as usize + 1 >= n_t {
                                skipped += 1;
                                continue;
                            }
                            let (k, f) = (k as usize, t - k);
                            *acc += trace[k] * (1.0 - f) + trace[k + 1] * f;
                        } else {
                            let k = t.round();
                            if k < 0.0 || k as usize >= n_t {
                                skipped += 1;
                                continue;
                            }
                            *acc += trace[k as usize];
                        }
                    }
                }
            }
            (row, skipped)
        })
        .collect();

    let mut field = Array2::zeros((ny, nx));
    let mut skipped = 0;
    for (r, (row, s)) in rows.into_iter().enumerate() {
        skipped += s;
        for (c, v) in row.into_iter().enumerate() {
            field[[r, c]] = v;
        }
    }
    Ok(DasField { field, skipped })
}

/// Magnitude of [`das_field`].
pub fn das_reconstruct(
    frames: &[RfFrame],
    geometry: &RingArrayGeometry,
    region: &ReconRegion,
    sound_speed: f64,
    sampling_rate: f64,
    options: DasOptions,
) -> Result<ReconImage> {
    let f = das_field(frames, geometry, region, sound_speed, sampling_rate, options)?;
    Ok(ReconImage {
        intensity: f.field.mapv(|z| z.norm()),
        region: region.clone(),
    })
}
