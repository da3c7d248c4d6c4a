//! Image and CSV export, grayscale image import.

use std::io::Cursor;
use std::path::Path;

use image::{imageops::FilterType, GrayImage, ImageFormat, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::phantom::IntensityImage;
use crate::quality::{BModeImage, DYNAMIC_RANGE_DB};
use crate::separation::LossHistory;

use super::container::write_atomic;

/// Maps `[-30, 0]` dB linearly onto `[0, 255]`.
pub fn bmode_to_gray(image: &BModeImage) -> GrayImage {
    let (h, w) = image.db_values.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let db = image.db_values[[y as usize, x as usize]];
        let v = ((db + DYNAMIC_RANGE_DB) / DYNAMIC_RANGE_DB).clamp(0.0, 1.0) * 255.0;
        Luma([v.round() as u8])
    })
}

/// Writes a PNG or PGM depending on the extension (`.pgm` → PGM, else PNG).
pub fn save_gray(path: &Path, image: &GrayImage) -> Result<()> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    let mut buf = Cursor::new(Vec::new());
    if format == ImageFormat::Pnm {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::ImageEncoder;
        PnmEncoder::new(&mut buf)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(image.as_raw(), image.width(), image.height(), image::ExtendedColorType::L8)?;
    } else {
        image.write_to(&mut buf, format)?;
    }
    write_atomic(path, buf.get_ref())
}

pub fn save_bmode_image(path: &Path, image: &BModeImage) -> Result<()> {
    save_gray(path, &bmode_to_gray(image))
}

/// Loads an 8-bit grayscale image, resizes it to `size × size` and scales
/// intensities to `[0, 1]`.
pub fn load_intensity_image(path: &Path, size: usize) -> Result<IntensityImage> {
    let img = image::open(path)?.to_luma8();
    let img = if img.dimensions() == (size as u32, size as u32) {
        img
    } else {
        image::imageops::resize(&img, size as u32, size as u32, FilterType::Triangle)
    };
    let pixels = Array2::from_shape_fn((size, size), |(r, c)| img.get_pixel(c as u32, r as u32)[0] as f64 / 255.0);
    Ok(IntensityImage::new(pixels))
}

/// `epoch,train_loss,val_loss` with an empty validation field when absent.
pub fn write_loss_csv(path: &Path, history: &LossHistory) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for (i, t) in history.train.iter().enumerate() {
        let v = history.val.get(i).copied().flatten().map(|v| v.to_string()).unwrap_or_default();
        w.write_record([i.to_string(), t.to_string(), v])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_loss_csv(path: &Path) -> Result<LossHistory> {
    let mut r = csv::Reader::from_path(path)?;
    let mut h = LossHistory::default();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Input(format!("{}: bad loss value {s:?}", path.display())))
        };
        h.train.push(parse(&rec[1])?);
        h.val.push(if rec[2].is_empty() { None } else { Some(parse(&rec[2])?) });
    }
    Ok(h)
}
