//! Checkpoint files.
//!
//! ```text
//! "PLCK" | u32 version | u32 json_len | JSON {config, init_seed, adam}
//! u32 n_params | blobs
//! u32 n_adam   | blobs ("adam.m.<param>", "adam.v.<param>")
//! blob = u16 name_len | name | u32 rank | u32 dims[rank] | f32 data
//! ```
//! Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::hourglass::{Hourglass, HourglassConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamHeader {
    #[serde(flatten)]
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: HourglassConfig,
    init_seed: u64,
    adam: Option<AdamHeader>,
}

/// A network with its optimizer state, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Hourglass<f32>,
    pub adam: Option<AdamState<f32>>,
}

fn write_blob<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()))
}

fn read_blob<R: Read>(r: &mut R) -> Result<(String, Vec<usize>, Vec<f32>)> {
    let n = u16::from_le_bytes(read_exact(r, 2)?.try_into().unwrap()) as usize;
    let name = String::from_utf8(read_exact(r, n)?).map_err(|_| Error::Format("blob name is not utf-8".into()))?;
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("blob {name} has rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<_>>()?;
    let len: usize = shape.iter().product();
    let raw = read_exact(r, len * 4)?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((name, shape, data))
}

impl Checkpoint {
    pub fn new(net: Hourglass<f32>, adam: Option<AdamState<f32>>) -> Self {
        Self { net, adam }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = Header {
            config: self.net.config.clone(),
            init_seed: self.net.init_seed,
            adam: self.adam.as_ref().map(|a| AdamHeader { config: a.config, step: a.step }),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let params = self.net.params();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for p in &params {
            write_blob(w, &p.name, &p.shape, &p.value)?;
        }
        match &self.adam {
            None => w.write_all(&0u32.to_le_bytes())?,
            Some(a) => {
                w.write_all(&(2 * params.len() as u32).to_le_bytes())?;
                for (p, m) in params.iter().zip(&a.m) {
                    write_blob(w, &format!("adam.m.{}", p.name), &p.shape, m)?;
                }
                for (p, v) in params.iter().zip(&a.v) {
                    write_blob(w, &format!("adam.v.{}", p.name), &p.shape, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        if read_exact(r, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(r)? as usize;
        let header: Header = serde_json::from_slice(&read_exact(r, len)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut net = Hourglass::<f32>::new(header.config, header.init_seed)?;
        let n = read_u32(r)? as usize;
        {
            let mut params = net.params_mut();
            if n != params.len() {
                return Err(Error::Format(format!("{n} parameter blobs, architecture has {}", params.len())));
            }
            for p in params.iter_mut() {
                let (name, shape, data) = read_blob(r)?;
                if name != p.name || shape != p.shape {
                    return Err(Error::Format(format!("blob {name} {shape:?} does not match {} {:?}", p.name, p.shape)));
                }
                p.value = data;
            }
        }
        let n_adam = read_u32(r)? as usize;
        let adam = match (header.adam, n_adam) {
            (None, 0) => None,
            (Some(h), k) if k == 2 * n => {
                let params = net.params();
                let mut moments = Vec::with_capacity(k);
                for i in 0..k {
                    let p = params[i % n];
                    let want = format!("adam.{}.{}", if i < n { "m" } else { "v" }, p.name);
                    let (name, shape, data) = read_blob(r)?;
                    if name != want || shape != p.shape {
                        return Err(Error::Format(format!("optimizer blob {name}, expected {want}")));
                    }
                    moments.push(data);
                }
                let v = moments.split_off(n);
                Some(AdamState { config: h.config, step: h.step, m: moments, v })
            }
            _ => return Err(Error::Format("optimizer blobs do not match header".into())),
        };
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        for p in net.params() {
            super::tensor::ensure_finite(&p.value, &p.name)?;
        }
        Ok(Self { net, adam })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory");
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::layers::Param;

    fn small() -> Hourglass<f32> {
        let cfg = HourglassConfig { stem_channels: 2, bottleneck_channels: 4, depth: 2, ..Default::default() };
        Hourglass::new(cfg, 42).unwrap()
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let net = small();
        let plain = Checkpoint::new(net.clone(), None);
        let bytes = plain.to_bytes();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, plain);
        assert_eq!(back.to_bytes(), bytes);

        let mut net2 = net.clone();
        let refs: Vec<&Param<f32>> = net2.params();
        let mut adam = AdamState::new(AdamConfig::default(), &refs);
        for p in net2.params_mut() {
            p.grad.iter_mut().enumerate().for_each(|(i, g)| *g = (i as f32).sin());
        }
        adam.step(&mut net2.params_mut()).unwrap();
        let full = Checkpoint::new(net2, Some(adam));
        let bytes = full.to_bytes();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.adam, full.adam);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"PLCK");
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = Checkpoint::new(small(), None).to_bytes();
        for cut in [3, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::read_from(&mut &bytes[..cut]), Err(Error::Format(_))));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
    }
}
