//! Binary dataset files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "PLDS" | u32 version (1) | u32 record_kind | u64 record_count
//! u32 config_len | config_len bytes of JSON
//! record_count records
//! ```
//!
//! Images are embedded in the `PLDI` image layout (16-byte header plus
//! `R·R` f32). Actions are three u32 `(x, y, o)`, scalars f32, flags u8.
//!
//! - kind 1, heuristic mask: image, u32 n_orientations, `n·R·R` u8 labels
//! - kind 2, push label: image, action, f32 label, u32 changed-pixel count
//! - kind 3, experience: image_t, action, f32 reward, image_t1, u8 terminal,
//!   u32 changed-pixel count, u32 n_box, u32 n_ground

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::actionmap::MaskTensor;
use crate::dqn::{Experience, ExperienceStats};
use crate::error::{Error, Result};
use crate::percept::DepthImage;
use crate::pushsim::PushAction;

pub const DATASET_MAGIC: &[u8; 4] = b"PLDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum RecordKind {
    MaskGt = 1,
    PushLabel = 2,
    Experience = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub image: DepthImage,
    pub mask: MaskTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushLabelRecord {
    pub image: DepthImage,
    pub action: PushAction,
    pub label: f32,
    pub c_t: u32,
}

pub trait Record: Sized {
    const KIND: RecordKind;
    fn write_record<W: Write>(&self, w: &mut W) -> Result<()>;
    fn read_record<R: Read>(r: &mut R) -> Result<Self>;
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated record: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    Ok(f32::from_bits(read_u32(r)?))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated record: {e}")))?;
    Ok(b[0])
}

fn write_action<W: Write>(w: &mut W, a: &PushAction) -> Result<()> {
    for v in [a.x, a.y, a.o] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_action<R: Read>(r: &mut R) -> Result<PushAction> {
    Ok(PushAction { x: read_u32(r)?, y: read_u32(r)?, o: read_u32(r)? })
}

impl Record for MaskRecord {
    const KIND: RecordKind = RecordKind::MaskGt;

    fn write_record<W: Write>(&self, w: &mut W) -> Result<()> {
        self.image.write_to(w)?;
        w.write_all(&(self.mask.n_orientations as u32).to_le_bytes())?;
        let bytes: Vec<u8> = self.mask.data.iter().map(|&v| u8::from(v != 0.0)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    fn read_record<R: Read>(r: &mut R) -> Result<Self> {
        let image = DepthImage::read_from(r)?;
        let n = read_u32(r)? as usize;
        if n == 0 || n > 1024 {
            return Err(Error::Format(format!("implausible orientation count {n}")));
        }
        let mut raw = vec![0u8; n * image.resolution * image.resolution];
        r.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated mask: {e}")))?;
        if raw.iter().any(|&b| b > 1) {
            return Err(Error::Format("mask labels must be 0 or 1".into()));
        }
        let mask = MaskTensor::from_vec(n, image.resolution, raw.into_iter().map(f32::from).collect());
        Ok(MaskRecord { image, mask })
    }
}

impl Record for PushLabelRecord {
    const KIND: RecordKind = RecordKind::PushLabel;

    fn write_record<W: Write>(&self, w: &mut W) -> Result<()> {
        self.image.write_to(w)?;
        write_action(w, &self.action)?;
        w.write_all(&self.label.to_le_bytes())?;
        w.write_all(&self.c_t.to_le_bytes())?;
        Ok(())
    }

    fn read_record<R: Read>(r: &mut R) -> Result<Self> {
        let image = DepthImage::read_from(r)?;
        let action = read_action(r)?;
        let label = read_f32(r)?;
        let c_t = read_u32(r)?;
        Ok(PushLabelRecord { image, action, label, c_t })
    }
}

impl Record for Experience {
    const KIND: RecordKind = RecordKind::Experience;

    fn write_record<W: Write>(&self, w: &mut W) -> Result<()> {
        self.image_t.write_to(w)?;
        write_action(w, &self.action)?;
        w.write_all(&self.reward.to_le_bytes())?;
        self.image_t1.write_to(w)?;
        w.write_all(&[u8::from(self.terminal)])?;
        for v in [self.stats.c_t, self.stats.n_box, self.stats.n_ground] {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn read_record<R: Read>(r: &mut R) -> Result<Self> {
        let image_t = DepthImage::read_from(r)?;
        let action = read_action(r)?;
        let reward = read_f32(r)?;
        let image_t1 = DepthImage::read_from(r)?;
        let terminal = match read_u8(r)? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("terminal flag {b}"))),
        };
        let stats = ExperienceStats { c_t: read_u32(r)?, n_box: read_u32(r)?, n_ground: read_u32(r)? };
        Ok(Experience { image_t, action, reward, image_t1, terminal, stats })
    }
}

pub fn write_dataset<W: Write, T: Record>(w: &mut W, config: &serde_json::Value, records: &[T]) -> Result<()> {
    let json = serde_json::to_vec(config)?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(T::KIND as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for rec in records {
        rec.write_record(w)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read, T: Record>(r: &mut R) -> Result<(serde_json::Value, Vec<T>)> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(|e| Error::Format(format!("dataset header: {e}")))?;
    if &head[0..4] != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let kind = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if kind != T::KIND as u32 {
        return Err(Error::Format(format!("record kind {kind}, expected {}", T::KIND as u32)));
    }
    let count = u64::from_le_bytes(head[12..20].try_into().unwrap());
    let json_len = u32::from_le_bytes(head[20..24].try_into().unwrap()) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|e| Error::Format(format!("dataset config: {e}")))?;
    let config = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("dataset config json: {e}")))?;
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        records.push(T::read_record(r)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok((config, records))
}

pub fn save<T: Record>(path: &Path, config: &serde_json::Value, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, config, records)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Record>(path: &Path) -> Result<(serde_json::Value, Vec<T>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset(&mut r)
}
