//! Density maps for the four subject classes: scatterer points, scatterer
//! clumps, natural-image conversions and enhanced breast images.
//!
//! Grid pixel `(i, j)` (row, column) sits at centre offset
//! `(x, y) = (j - G/2, i - G/2)` pixels; the physical position is the offset
//! times the pixel pitch.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RingArrayGeometry;

/// Average tissue density of the water bath, kg/m³.
pub const WATER_DENSITY: f64 = 1000.0;
/// Sound speed of the medium, m/s.
pub const SOUND_SPEED: f64 = 1450.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub size: usize,
    pub pitch_mm: f64,
}

impl GridSpec {
    pub fn new(size: usize, pitch_mm: f64) -> Self {
        Self { size, pitch_mm }
    }

    pub fn half(&self) -> i64 {
        (self.size / 2) as i64
    }

    /// Centre offset (x, y) in pixels of grid cell `(row, col)`.
    pub fn offset_of(&self, row: usize, col: usize) -> (i64, i64) {
        (col as i64 - self.half(), row as i64 - self.half())
    }

    /// Grid cell `(row, col)` of a centre offset, if it lies on the grid.
    pub fn cell_of(&self, x: i64, y: i64) -> Option<(usize, usize)> {
        let col = x + self.half();
        let row = y + self.half();
        let g = self.size as i64;
        ((0..g).contains(&col) && (0..g).contains(&row)).then_some((row as usize, col as usize))
    }

    /// Physical position in millimetres of grid cell `(row, col)`.
    pub fn position_mm(&self, row: usize, col: usize) -> (f64, f64) {
        let (x, y) = self.offset_of(row, col);
        (x as f64 * self.pitch_mm, y as f64 * self.pitch_mm)
    }
}

/// A square density map with constant sound speed.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumMap {
    density: Array2<f32>,
    pub pixel_pitch_mm: f64,
    pub base_density: f64,
    pub sound_speed: f64,
}

impl MediumMap {
    pub fn new(
        density: Array2<f32>,
        pixel_pitch_mm: f64,
        base_density: f64,
        sound_speed: f64,
    ) -> Result<Self> {
        let (rows, cols) = density.dim();
        if rows != cols || rows == 0 {
            return Err(Error::shape("non-empty square grid", format!("{rows}x{cols}")));
        }
        if let Some(bad) = density.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::Input(format!(
                "densities must be positive and finite, found {bad}"
            )));
        }
        if !(pixel_pitch_mm > 0.0) || !(sound_speed > 0.0) || !(base_density > 0.0) {
            return Err(Error::Config(
                "pixel pitch, sound speed and base density must be positive".into(),
            ));
        }
        Ok(Self {
            density,
            pixel_pitch_mm,
            base_density,
            sound_speed,
        })
    }

    /// Uniform water bath.
    pub fn homogeneous(grid: GridSpec, base_density: f64, sound_speed: f64) -> Result<Self> {
        let density = Array2::from_elem((grid.size, grid.size), base_density as f32);
        Self::new(density, grid.pitch_mm, base_density, sound_speed)
    }

    pub fn density(&self) -> &Array2<f32> {
        &self.density
    }

    pub fn size(&self) -> usize {
        self.density.nrows()
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.size(), self.pixel_pitch_mm)
    }
}

/// A grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pixels: Array2<f64>,
}

impl IntensityImage {
    /// Clamps every value into `[0, 1]`; NaN becomes 0.
    pub fn new(mut pixels: Array2<f64>) -> Self {
        pixels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self { pixels }
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }
}

/// Half-open ranges of centre offsets (pixels).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRegion {
    pub x: (i64, i64),
    pub y: (i64, i64),
}

impl PixelRegion {
    pub fn square(lo: i64, hi: i64) -> Self {
        Self { x: (lo, hi), y: (lo, hi) }
    }

    pub fn area(&self) -> usize {
        let w = (self.x.1 - self.x.0).max(0) as usize;
        let h = (self.y.1 - self.y.0).max(0) as usize;
        w * h
    }
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Water bath with `count` distinct single-pixel scatterers drawn uniformly
/// from `region`. Duplicate draws are re-drawn.
pub fn gen_scatterer_points(
    seed: u64,
    count: usize,
    region: &PixelRegion,
    scatterer_density: f64,
    grid: GridSpec,
    base_density: f64,
    sound_speed: f64,
) -> Result<MediumMap> {
    for (lo, hi) in [region.x, region.y] {
        if lo >= hi || grid.cell_of(lo, 0).is_none() || grid.cell_of(hi - 1, 0).is_none() {
            return Err(Error::Bounds(format!(
                "scatterer region {region:?} does not fit a {} pixel grid",
                grid.size
            )));
        }
    }
    if count > region.area() {
        return Err(Error::Bounds(format!(
            "{count} scatterers do not fit in {} region pixels",
            region.area()
        )));
    }
    let mut density = Array2::from_elem((grid.size, grid.size), base_density as f32);
    let mut rng = seeded(seed);
    let mut placed = 0;
    while placed < count {
        let x = rng.random_range(region.x.0..region.x.1);
        let y = rng.random_range(region.y.0..region.y.1);
        let cell = grid.cell_of(x, y).expect("region checked against grid");
        if density[cell] != base_density as f32 {
            continue;
        }
        density[cell] = scatterer_density as f32;
        placed += 1;
    }
    MediumMap::new(density, grid.pitch_mm, base_density, sound_speed)
}

/// Density from intensity: `D = d0 + a * eps * I` with `eps ~ N(0, 1)` drawn
/// per pixel in row-major order.
fn intensity_to_density(
    intensity: &Array2<f64>,
    a: f64,
    base_density: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f32> {
    let mut density = Array2::zeros(intensity.dim());
    for (d, &i) in density.iter_mut().zip(intensity.iter()) {
        let eps: f64 = rng.sample(StandardNormal);
        *d = (base_density + a * eps * i) as f32;
    }
    density
}

/// Random clump of scatterers: piecewise-constant `U(0, 1)` intensity on
/// `patch x patch` blocks, zeroed outside a circle, then mapped to density.
pub fn gen_scatterer_clump(
    seed: u64,
    patch: usize,
    circle_center: (i64, i64),
    circle_radius: f64,
    a: f64,
    grid: GridSpec,
    base_density: f64,
    sound_speed: f64,
) -> Result<MediumMap> {
    if patch == 0 || !grid.size.is_multiple_of(patch) {
        return Err(Error::Config(format!(
            "patch size {patch} does not divide grid size {}",
            grid.size
        )));
    }
    let mut rng = seeded(seed);
    let n_patches = grid.size / patch;
    let patch_values: Vec<f64> = (0..n_patches * n_patches)
        .map(|_| rng.random::<f64>())
        .collect();
    let r2 = circle_radius * circle_radius;
    let intensity = Array2::from_shape_fn((grid.size, grid.size), |(row, col)| {
        let (x, y) = grid.offset_of(row, col);
        let dx = (x - circle_center.0) as f64;
        let dy = (y - circle_center.1) as f64;
        if dx * dx + dy * dy <= r2 {
            patch_values[(row / patch) * n_patches + col / patch]
        } else {
            0.0
        }
    });
    let density = intensity_to_density(&intensity, a, base_density, &mut rng);
    MediumMap::new(density, grid.pitch_mm, base_density, sound_speed)
}

/// Converts a grid-sized grayscale image into a density map, leaving
/// everything outside the transducer ring at `base_density`.
pub fn image_to_density(
    image: &IntensityImage,
    a: f64,
    base_density: f64,
    seed: u64,
    geometry: &RingArrayGeometry,
    grid: GridSpec,
    sound_speed: f64,
) -> Result<MediumMap> {
    if image.dim() != (grid.size, grid.size) {
        let (h, w) = image.dim();
        return Err(Error::shape(
            format!("{0}x{0} image", grid.size),
            format!("{h}x{w}"),
        ));
    }
    let r2 = geometry.radius_mm * geometry.radius_mm;
    let mut intensity = image.pixels().clone();
    for ((row, col), v) in intensity.indexed_iter_mut() {
        let (x, y) = grid.position_mm(row, col);
        let (dx, dy) = (x - geometry.center.x, y - geometry.center.y);
        if dx * dx + dy * dy > r2 {
            *v = 0.0;
        }
    }
    let mut rng = seeded(seed);
    let density = intensity_to_density(&intensity, a, base_density, &mut rng);
    MediumMap::new(density, grid.pitch_mm, base_density, sound_speed)
}

/// Box mean over a `(2r+1)²` neighbourhood with edge replication.
pub(crate) fn box_mean(src: &Array2<f64>, r: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let r = r as isize;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut sum = 0.0;
        for di in -r..=r {
            let ii = (i as isize + di).clamp(0, h as isize - 1) as usize;
            for dj in -r..=r {
                let jj = (j as isize + dj).clamp(0, w as isize - 1) as usize;
                sum += src[[ii, jj]];
            }
        }
        sum / n
    })
}

/// Unsharp masking against a 5x5 mean: `clamp(2 I - blur(I), 0, 1)`.
pub fn sharpen(image: &IntensityImage) -> IntensityImage {
    let blurred = box_mean(image.pixels(), 2);
    IntensityImage::new(2.0 * image.pixels() - &blurred)
}

fn logistic(a: f64, x: f64, v: f64) -> f64 {
    1.0 / (1.0 + (a * (x - v)).exp())
}

/// Logistic contrast curve followed by min-max normalisation. A constant
/// image maps to all zeros.
pub fn s_curve(image: &IntensityImage, a: f64, x: f64) -> Result<IntensityImage> {
    if !(a > 0.0) {
        return Err(Error::Config(format!("s-curve slope must be positive, got {a}")));
    }
    let curved = image.pixels().mapv(|v| logistic(a, x, v));
    let lo = curved.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = curved.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(IntensityImage::new(Array2::zeros(curved.dim())));
    }
    Ok(IntensityImage::new(curved.mapv(|v| (v - lo) / (hi - lo))))
}

/// Breast-image enhancement: mask to the segmented region, sharpen twice,
/// then S-curve with `a = 20, x = 0.5`.
pub fn enhance_breast_image(image: &IntensityImage, mask: &Array2<bool>) -> Result<IntensityImage> {
    if mask.dim() != image.dim() {
        return Err(Error::shape(
            format!("{:?} mask", image.dim()),
            format!("{:?}", mask.dim()),
        ));
    }
    let mut masked = image.pixels().clone();
    masked.zip_mut_with(mask, |v, &m| {
        if !m {
            *v = 0.0
        }
    });
    let sharpened = sharpen(&sharpen(&IntensityImage::new(masked)));
    s_curve(&sharpened, 20.0, 0.5)
}
