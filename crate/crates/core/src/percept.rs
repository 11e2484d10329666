//! Orthographic heightmaps and the pixel statistics the rewards use.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::world::{BoxTarget, Scene, WorkspaceConfig};

pub const IMAGE_MAGIC: &[u8; 4] = b"PLDI";
pub const IMAGE_VERSION: u32 = 1;
/// Default height above which a pixel belongs to an object.
pub const DEFAULT_HEIGHT_THRESH: f64 = 0.005;
/// Default per-pixel height change that counts as a change.
pub const DEFAULT_CHANGE_THRESH: f64 = 0.01;

/// Top-down heightmap in meters above the table, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub resolution: usize,
    pub data: Vec<f32>,
}

pub type PixelSet = Vec<(u32, u32)>;

impl DepthImage {
    pub fn zeros(resolution: usize) -> Self {
        Self { resolution, data: vec![0.0; resolution * resolution] }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.resolution + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.resolution + x] = v;
    }

    /// Height at signed coordinates, 0 outside the image.
    pub fn get_or_zero(&self, x: i64, y: i64) -> f32 {
        let r = self.resolution as i64;
        if x < 0 || y < 0 || x >= r || y >= r {
            0.0
        } else {
            self.get(x as usize, y as usize)
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(IMAGE_MAGIC)?;
        w.write_all(&IMAGE_VERSION.to_le_bytes())?;
        w.write_all(&(self.resolution as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<DepthImage> {
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(|e| Error::Format(format!("image header: {e}")))?;
        if &head[0..4] != IMAGE_MAGIC {
            return Err(Error::Format("bad image magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != IMAGE_VERSION {
            return Err(Error::Format(format!("unsupported image version {version}")));
        }
        let resolution = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        if resolution == 0 || resolution > 4096 {
            return Err(Error::Format(format!("implausible resolution {resolution}")));
        }
        let mut raw = vec![0u8; resolution * resolution * 4];
        r.read_exact(&mut raw).map_err(|e| Error::Format(format!("image payload: {e}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(DepthImage { resolution, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("in-memory write");
        v
    }

    /// Binary 16-bit PGM with heights quantized at 0.1 mm.
    pub fn to_pgm16(&self) -> Vec<u8> {
        let r = self.resolution;
        let mut out = format!("P5\n{r} {r}\n65535\n").into_bytes();
        for &h in &self.data {
            let q = (h as f64 / 1e-4).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        out
    }
}

/// Renders the on-table bodies: each pixel holds the tallest footprint
/// covering its center, 0 elsewhere.
pub fn render(scene: &Scene, cfg: &WorkspaceConfig) -> DepthImage {
    let r = cfg.resolution;
    let pitch = cfg.pixel_pitch();
    let mut img = DepthImage::zeros(r);
    for obj in scene.objects.iter().filter(|o| o.on_table()) {
        let fp = obj.footprint();
        let (lo, hi) = fp.aabb();
        let x0 = ((lo.x / pitch - 0.5).floor().max(0.0)) as usize;
        let y0 = ((lo.y / pitch - 0.5).floor().max(0.0)) as usize;
        let x1 = ((hi.x / pitch - 0.5).ceil().min(r as f64 - 1.0)).max(-1.0);
        let y1 = ((hi.y / pitch - 0.5).ceil().min(r as f64 - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let h = obj.height as f32;
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let c = Vec2::new((x as f64 + 0.5) * pitch, (y as f64 + 0.5) * pitch);
                if fp.contains(c) && img.get(x, y) < h {
                    img.set(x, y, h);
                }
            }
        }
    }
    img
}

/// Number of pixels whose height changed by at least `change_thresh`.
pub fn change_count(a: &DepthImage, b: &DepthImage, change_thresh: f64) -> Result<usize> {
    if a.resolution != b.resolution {
        return Err(Error::ShapeMismatch(format!("{} vs {}", a.resolution, b.resolution)));
    }
    let t = change_thresh as f32;
    Ok(a.data.iter().zip(&b.data).filter(|(p, q)| (**p - **q).abs() >= t).count())
}

/// Pixels strictly higher than `height_thresh`, row-major order.
pub fn object_pixels(img: &DepthImage, height_thresh: f64) -> PixelSet {
    let t = height_thresh as f32;
    let r = img.resolution;
    img.data
        .iter()
        .enumerate()
        .filter(|(_, &h)| h > t)
        .map(|(i, _)| ((i % r) as u32, (i / r) as u32))
        .collect()
}

/// Mean metric distance from the pixels to the box mouth center; 0 for an
/// empty set.
pub fn mean_box_distance(pixels: &[(u32, u32)], target: &BoxTarget, cfg: &WorkspaceConfig) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    let (bx, by) = target.p_box(cfg);
    mean_distance_to(pixels, (bx, by)) * cfg.pixel_pitch()
}

/// Mean Euclidean pixel distance to a point in continuous pixel coordinates.
pub fn mean_distance_to(pixels: &[(u32, u32)], p: (f64, f64)) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    let sum: f64 = pixels.iter().map(|&(x, y)| (x as f64 - p.0).hypot(y as f64 - p.1)).sum();
    sum / pixels.len() as f64
}
