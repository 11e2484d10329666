//! Dense arrays with hand-written reverse passes, the hourglass network and
//! its optimizer.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod hourglass;
pub mod layers;
pub mod loss;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use hourglass::{HeadActivation, Hourglass, HourglassCache, HourglassConfig};
pub use tensor::{Real, Tensor};

use crate::actionmap::ActionMap;
use crate::error::{Error, Result};
use crate::percept::DepthImage;
use crate::world::WorkspaceConfig;

/// Heights are multiplied by this before entering a network, so a 5 cm
/// object reads as 1.
pub const DEPTH_SCALE: f32 = 20.0;

/// Two channels `((x - x_box)/R, (y - y_box)/R)` for every pixel.
pub fn pos_encoding(resolution: usize, p_box: (f64, f64)) -> Tensor<f32> {
    let r = resolution;
    let mut t = Tensor::zeros([1, 2, r, r]);
    for y in 0..r {
        for x in 0..r {
            t.data[y * r + x] = ((x as f64 - p_box.0) / r as f64) as f32;
            t.data[r * r + y * r + x] = ((y as f64 - p_box.1) / r as f64) as f32;
        }
    }
    t
}

/// Stacks heightmaps into a network input batch, appending the positional
/// channels when the network expects three.
pub fn encode_input(images: &[&DepthImage], cfg: &HourglassConfig, ws: &WorkspaceConfig) -> Result<Tensor<f32>> {
    let r = ws.resolution;
    if images.is_empty() {
        return Err(Error::EmptyInput("no images to encode".into()));
    }
    if let Some(bad) = images.iter().find(|i| i.resolution != r) {
        return Err(Error::ShapeMismatch(format!("image resolution {} vs workspace {r}", bad.resolution)));
    }
    let pos = (cfg.in_channels == 3).then(|| pos_encoding(r, ws.box_target.p_box(ws)));
    let mut t = Tensor::zeros([images.len(), cfg.in_channels, r, r]);
    for (b, img) in images.iter().enumerate() {
        let item = t.item_mut(b);
        for (d, &v) in item[..r * r].iter_mut().zip(&img.data) {
            *d = v * DEPTH_SCALE;
        }
        if let Some(p) = &pos {
            item[r * r..].copy_from_slice(&p.data);
        }
    }
    Ok(t)
}

/// Splits a network output batch into per-image action maps.
pub fn to_action_maps(out: &Tensor<f32>) -> Vec<ActionMap> {
    let [b, c, h, _] = out.shape;
    (0..b).map(|i| ActionMap::from_vec(c, h, out.item(i).to_vec())).collect()
}

/// Runs a network on heightmaps and returns one map per image.
pub fn predict(net: &Hourglass<f32>, images: &[&DepthImage], ws: &WorkspaceConfig) -> Result<Vec<ActionMap>> {
    let x = encode_input(images, &net.config, ws)?;
    Ok(to_action_maps(&net.forward(&x)?))
}
