//! Binary artifact container.
//!
//! Layout (all integers little-endian):
//!
//! | field    | type                                   |
//! |----------|----------------------------------------|
//! | magic    | `b"USCT"`                              |
//! | version  | `u16` (currently 1)                    |
//! | kind     | `u8` payload tag                       |
//! | ndims    | `u8`, followed by `ndims` × `u64`      |
//! | metadata | `u32` count, then per entry `u32` key length, key, `u32` value length, value (UTF-8) |
//! | data     | `prod(dims)` × `f32`, row-major        |

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};

use crate::beamform::{ReconImage, ReconRegion};
use crate::error::{Error, Result};
use crate::phantom::MediumMap;
use crate::quality::BModeImage;
use crate::separation::{ArchDescriptor, SeparationModel};
use crate::simulator::RfFrame;

pub const MAGIC: [u8; 4] = *b"USCT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    Frames = 1,
    Medium = 2,
    Image = 3,
    BMode = 4,
    Model = 5,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::Frames => "frames",
            PayloadKind::Medium => "medium",
            PayloadKind::Image => "image",
            PayloadKind::BMode => "bmode",
            PayloadKind::Model => "model",
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            1 => PayloadKind::Frames,
            2 => PayloadKind::Medium,
            3 => PayloadKind::Image,
            4 => PayloadKind::BMode,
            5 => PayloadKind::Model,
            other => return Err(Error::Corrupt(format!("unknown payload tag {other}"))),
        })
    }
}

/// Decoded container before interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: PayloadKind,
    pub dims: Vec<u64>,
    pub metadata: BTreeMap<String, String>,
    pub data: Vec<f32>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            for s in [k, v] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let kind = PayloadKind::from_tag(r.take(1)?[0])?;
        let ndims = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u64()?);
        }
        let n_meta = r.u32()? as usize;
        let mut metadata = BTreeMap::new();
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Corrupt("dimension product overflows".into()))?;
        let expected = (r.pos as u64)
            .checked_add(count.checked_mul(4).ok_or_else(|| Error::Corrupt("payload too large".into()))?)
            .ok_or_else(|| Error::Corrupt("payload too large".into()))?;
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(Error::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after payload",
                actual - expected
            )));
        }
        let data = bytes[r.pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            kind,
            dims,
            metadata,
            data,
        })
    }

    fn expect_kind(&self, kind: PayloadKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::PayloadKind {
                expected: kind.name(),
                actual: self.kind.name(),
            });
        }
        Ok(())
    }

    fn expect_ndims(&self, n: usize) -> Result<Vec<usize>> {
        if self.dims.len() != n {
            return Err(Error::Corrupt(format!(
                "{} payload needs {n} dimensions, found {}",
                self.kind.name(),
                self.dims.len()
            )));
        }
        Ok(self.dims.iter().map(|&d| d as usize).collect())
    }

    fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Corrupt(format!("missing metadata key {key:?}")))
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Corrupt(format!("metadata {key:?} has unparsable value {raw:?}")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Corrupt("metadata is not valid UTF-8".into()))
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_container(path: &Path, container: &Container) -> Result<()> {
    write_atomic(path, &container.to_bytes())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes)
}

/// Any artifact the container can hold.
#[derive(Debug, Clone)]
pub enum Payload {
    Frames(Vec<RfFrame>),
    Medium(MediumMap),
    Image(ReconImage),
    BMode(BModeImage),
    Model(SeparationModel<f32>),
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Corrupt(format!("bad integer {t:?} in metadata")))
        })
        .collect()
}

fn region_meta(meta: &mut BTreeMap<String, String>, region: &ReconRegion) {
    meta.insert("region".into(), serde_json::to_string(region).expect("region serialises"));
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Frames(_) => PayloadKind::Frames,
            Payload::Medium(_) => PayloadKind::Medium,
            Payload::Image(_) => PayloadKind::Image,
            Payload::BMode(_) => PayloadKind::BMode,
            Payload::Model(_) => PayloadKind::Model,
        }
    }

    /// Encodes the payload. Float metadata uses the shortest exact decimal form.
    /// Image intensities are stored at `f32` precision.
    pub fn to_container(&self) -> Result<Container> {
        let mut metadata = BTreeMap::new();
        let (dims, data): (Vec<u64>, Vec<f32>) = match self {
            Payload::Frames(frames) => {
                let (r, t) = frames
                    .first()
                    .map(|f| f.samples.dim())
                    .unwrap_or((0, 0));
                let fs = frames.first().map(|f| f.sampling_rate).unwrap_or(0.0);
                let mut data = Vec::with_capacity(frames.len() * r * t);
                for f in frames {
                    if f.samples.dim() != (r, t) || f.sampling_rate != fs {
                        return Err(Error::shape(
                            format!("uniform {r}x{t} frames at {fs} Hz"),
                            format!("{:?} at {} Hz", f.samples.dim(), f.sampling_rate),
                        ));
                    }
                    data.extend(f.samples.iter());
                }
                metadata.insert("sampling_rate".into(), fs.to_string());
                let tx: Vec<String> = frames.iter().map(|f| join_usize(&f.tx_set)).collect();
                metadata.insert("tx_sets".into(), tx.join(";"));
                let t0: Vec<String> = frames.iter().map(|f| f.t0.to_string()).collect();
                metadata.insert("t0".into(), t0.join(","));
                (vec![frames.len() as u64, r as u64, t as u64], data)
            }
            Payload::Medium(m) => {
                metadata.insert("pixel_pitch_mm".into(), m.pixel_pitch_mm.to_string());
                metadata.insert("base_density".into(), m.base_density.to_string());
                metadata.insert("sound_speed".into(), m.sound_speed.to_string());
                let (h, w) = m.density().dim();
                (vec![h as u64, w as u64], m.density().iter().copied().collect())
            }
            Payload::Image(img) => {
                region_meta(&mut metadata, &img.region);
                let (h, w) = img.intensity.dim();
                (vec![h as u64, w as u64], img.intensity.iter().map(|&v| v as f32).collect())
            }
            Payload::BMode(img) => {
                let (h, w) = img.db_values.dim();
                (vec![h as u64, w as u64], img.db_values.iter().map(|&v| v as f32).collect())
            }
            Payload::Model(model) => {
                metadata.insert(
                    "arch".into(),
                    serde_json::to_string(&model.arch).expect("arch serialises"),
                );
                metadata.insert("n_outputs".into(), model.n_outputs.to_string());
                let state = model.state_vector();
                (vec![state.len() as u64], state)
            }
        };
        Ok(Container {
            kind: self.kind(),
            dims,
            metadata,
            data,
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        match c.kind {
            PayloadKind::Frames => {
                let d = c.expect_ndims(3)?;
                let fs: f64 = c.meta_parse("sampling_rate")?;
                let tx_sets: Vec<Vec<usize>> = if d[0] == 0 {
                    Vec::new()
                } else {
                    c.meta("tx_sets")?.split(';').map(parse_usize_list).collect::<Result<_>>()?
                };
                let t0: Vec<f64> = if d[0] == 0 {
                    Vec::new()
                } else {
                    c.meta("t0")?
                        .split(',')
                        .map(|s| s.parse().map_err(|_| Error::Corrupt(format!("bad t0 {s:?}"))))
                        .collect::<Result<_>>()?
                };
                if tx_sets.len() != d[0] || t0.len() != d[0] {
                    return Err(Error::Corrupt(format!(
                        "{} frames but {} tx sets and {} t0 values",
                        d[0],
                        tx_sets.len(),
                        t0.len()
                    )));
                }
                let all = Array3::from_shape_vec((d[0], d[1], d[2]), c.data)
                    .map_err(|e| Error::Corrupt(e.to_string()))?;
                let frames = all
                    .axis_iter(Axis(0))
                    .zip(tx_sets)
                    .zip(t0)
                    .map(|((s, tx), t0)| RfFrame {
                        samples: s.to_owned(),
                        sampling_rate: fs,
                        tx_set: tx,
                        t0,
                    })
                    .collect();
                Ok(Payload::Frames(frames))
            }
            PayloadKind::Medium => {
                let d = c.expect_ndims(2)?;
                let density = Array2::from_shape_vec((d[0], d[1]), c.data.clone())
                    .map_err(|e| Error::Corrupt(e.to_string()))?;
                Ok(Payload::Medium(MediumMap::new(
                    density,
                    c.meta_parse("pixel_pitch_mm")?,
                    c.meta_parse("base_density")?,
                    c.meta_parse("sound_speed")?,
                )?))
            }
            PayloadKind::Image => {
                let d = c.expect_ndims(2)?;
                let region: ReconRegion = serde_json::from_str(c.meta("region")?)
                    .map_err(|e| Error::Corrupt(format!("region metadata: {e}")))?;
                let intensity = Array2::from_shape_vec((d[0], d[1]), c.data.iter().map(|&v| v as f64).collect())
                    .map_err(|e| Error::Corrupt(e.to_string()))?;
                Ok(Payload::Image(ReconImage { intensity, region }))
            }
            PayloadKind::BMode => {
                let d = c.expect_ndims(2)?;
                let db_values = Array2::from_shape_vec((d[0], d[1]), c.data.iter().map(|&v| v as f64).collect())
                    .map_err(|e| Error::Corrupt(e.to_string()))?;
                Ok(Payload::BMode(BModeImage { db_values }))
            }
            PayloadKind::Model => {
                c.expect_ndims(1)?;
                let arch: ArchDescriptor = serde_json::from_str(c.meta("arch")?)
                    .map_err(|e| Error::Corrupt(format!("arch metadata: {e}")))?;
                let n_outputs: usize = c.meta_parse("n_outputs")?;
                Ok(Payload::Model(SeparationModel::from_state_vector(&arch, n_outputs, &c.data)?))
            }
        }
    }
}

/// Saves `payload` with additional metadata entries (seeds, provenance).
pub fn save_container(path: &Path, payload: &Payload, extra: &BTreeMap<String, String>) -> Result<()> {
    let mut c = payload.to_container()?;
    for (k, v) in extra {
        c.metadata.entry(k.clone()).or_insert_with(|| v.clone());
    }
    write_container(path, &c)
}

pub fn load_container(path: &Path) -> Result<(Payload, BTreeMap<String, String>)> {
    let c = read_container(path)?;
    let meta = c.metadata.clone();
    Ok((Payload::from_container(c)?, meta))
}

fn load_kind(path: &Path, kind: PayloadKind) -> Result<Payload> {
    let c = read_container(path)?;
    c.expect_kind(kind)?;
    Payload::from_container(c)
}

pub fn save_frames(path: &Path, frames: &[RfFrame]) -> Result<()> {
    save_container(path, &Payload::Frames(frames.to_vec()), &BTreeMap::new())
}

pub fn load_frames(path: &Path) -> Result<Vec<RfFrame>> {
    match load_kind(path, PayloadKind::Frames)? {
        Payload::Frames(f) => Ok(f),
        _ => unreachable!("kind checked"),
    }
}

pub fn save_medium(path: &Path, medium: &MediumMap, seed: Option<u64>) -> Result<()> {
    let mut extra = BTreeMap::new();
    if let Some(s) = seed {
        extra.insert("seed".into(), s.to_string());
    }
    save_container(path, &Payload::Medium(medium.clone()), &extra)
}

pub fn load_medium(path: &Path) -> Result<MediumMap> {
    match load_kind(path, PayloadKind::Medium)? {
        Payload::Medium(m) => Ok(m),
        _ => unreachable!("kind checked"),
    }
}

pub fn save_bmode(path: &Path, image: &BModeImage) -> Result<()> {
    save_container(path, &Payload::BMode(image.clone()), &BTreeMap::new())
}

pub fn load_bmode(path: &Path) -> Result<BModeImage> {
    match load_kind(path, PayloadKind::BMode)? {
        Payload::BMode(b) => Ok(b),
        _ => unreachable!("kind checked"),
    }
}

pub fn save_image(path: &Path, image: &ReconImage) -> Result<()> {
    save_container(path, &Payload::Image(image.clone()), &BTreeMap::new())
}

pub fn load_image(path: &Path) -> Result<ReconImage> {
    match load_kind(path, PayloadKind::Image)? {
        Payload::Image(i) => Ok(i),
        _ => unreachable!("kind checked"),
    }
}

pub fn save_model(path: &Path, model: &SeparationModel<f32>, seed: u64) -> Result<()> {
    let mut extra = BTreeMap::new();
    extra.insert("seed".into(), seed.to_string());
    save_container(path, &Payload::Model(model.clone()), &extra)
}

pub fn load_model(path: &Path) -> Result<SeparationModel<f32>> {
    match load_kind(path, PayloadKind::Model)? {
        Payload::Model(m) => Ok(m),
        _ => unreachable!("kind checked"),
    }
}
