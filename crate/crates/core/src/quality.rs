//! B-mode post-processing and image/RF quality metrics.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::beamform::ReconImage;
use crate::error::{Error, Result};
use crate::phantom::box_mean;
use crate::simulator::RfFrame;

/// Displayed dynamic range, dB. Also the peak value for PSNR and SSIM.
pub const DYNAMIC_RANGE_DB: f64 = 30.0;
pub const MSSIM_WINDOW: usize = 7;

/// Log-compressed image with values in `[-30, 0]` dB.
#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    pub db_values: Array2<f64>,
}

/// `20 log10(v / max)`; zero pixels become `-inf`.
pub fn log_compress(image: &ReconImage) -> Result<Array2<f64>> {
    let max = image.intensity.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::DegenerateImage);
    }
    Ok(image.intensity.mapv(|v| 20.0 * (v / max).log10()))
}

pub fn clip_db(grid: &Array2<f64>, lo: f64, hi: f64) -> Array2<f64> {
    assert!(lo < hi, "clip range must satisfy lo < hi");
    grid.mapv(|v| if v.is_nan() { lo } else { v.clamp(lo, hi) })
}

pub fn mean_filter_3x3(grid: &Array2<f64>) -> Result<Array2<f64>> {
    let (h, w) = grid.dim();
    if h < 3 || w < 3 {
        return Err(Error::shape("at least 3x3", format!("{h}x{w}")));
    }
    Ok(box_mean(grid, 1))
}

/// Log compression, `[-30, 0]` dB cut-off, 3x3 averaging.
pub fn postprocess(image: &ReconImage) -> Result<BModeImage> {
    let db = clip_db(&log_compress(image)?, -DYNAMIC_RANGE_DB, 0.0);
    Ok(BModeImage {
        db_values: mean_filter_3x3(&db)?,
    })
}

fn check_same(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

/// Mean SSIM over every `window x window` block fully inside the image,
/// uniform weights, `L = 30` dB.
pub fn mssim(a: &BModeImage, b: &BModeImage, window: usize) -> Result<f64> {
    let (x, y) = (&a.db_values, &b.db_values);
    check_same(x, y)?;
    if window.is_multiple_of(2) || window == 0 {
        return Err(Error::Config(format!("SSIM window must be odd, got {window}")));
    }
    let (h, w) = x.dim();
    if h < window || w < window {
        return Err(Error::shape(format!("at least {window}x{window}"), format!("{h}x{w}")));
    }
    let c1 = (0.01 * DYNAMIC_RANGE_DB).powi(2);
    let c2 = (0.03 * DYNAMIC_RANGE_DB).powi(2);
    let n = (window * window) as f64;
    let stats = |p: &ndarray::ArrayView2<'_, f64>, q: &ndarray::ArrayView2<'_, f64>| {
        let mp = p.sum() / n;
        let mq = q.sum() / n;
        let cov = p.iter().zip(q.iter()).map(|(u, v)| (u - mp) * (v - mq)).sum::<f64>() / n;
        (mp, mq, cov)
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - window {
        for j in 0..=w - window {
            let p = x.slice(s![i..i + window, j..j + window]);
            let q = y.slice(s![i..i + window, j..j + window]);
            let (mp, mq, cov) = stats(&p, &q);
            let (_, _, vp) = stats(&p, &p);
            let (_, _, vq) = stats(&q, &q);
            total += ((2.0 * mp * mq + c1) * (2.0 * cov + c2))
                / ((mp * mp + mq * mq + c1) * (vp + vq + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Psnr {
    /// Zero mean squared error.
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(*v),
        }
    }
}

/// Orders `Identical` above every finite value.
impl PartialOrd for Psnr {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match (self, other) {
            (Psnr::Identical, Psnr::Identical) => Some(Equal),
            (Psnr::Identical, Psnr::Db(_)) => Some(Greater),
            (Psnr::Db(_), Psnr::Identical) => Some(Less),
            (Psnr::Db(a), Psnr::Db(b)) => a.partial_cmp(b),
        }
    }
}

pub fn psnr(a: &BModeImage, b: &BModeImage) -> Result<Psnr> {
    check_same(&a.db_values, &b.db_values)?;
    let n = a.db_values.len() as f64;
    let mse = a
        .db_values
        .iter()
        .zip(b.db_values.iter())
        .map(|(u, v)| (u - v).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(20.0 * (DYNAMIC_RANGE_DB / mse.sqrt()).log10()))
}

/// Mean squared difference over every sample of two frame lists.
pub fn rf_mse(a: &[RfFrame], b: &[RfFrame]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} frames", a.len()), format!("{} frames", b.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        if fa.samples.dim() != fb.samples.dim() {
            return Err(Error::shape(
                format!("{:?}", fa.samples.dim()),
                format!("{:?}", fb.samples.dim()),
            ));
        }
        for (u, v) in fa.samples.iter().zip(fb.samples.iter()) {
            sum += (*u as f64 - *v as f64).powi(2);
        }
        count += fa.samples.len();
    }
    if count == 0 {
        return Err(Error::Input("no samples to compare".into()));
    }
    Ok(sum / count as f64)
}
