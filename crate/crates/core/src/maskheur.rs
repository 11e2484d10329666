//! Heuristic push-validity labels and the validity-mask training datasets.
//!
//! Edges of the heightmap are found with Canny, widened by a small band, and
//! an edge pixel is a valid start for orientation `o` when walking a few
//! pixels along that direction climbs more than `delta` meters.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::actionmap::MaskTensor;
use crate::dataset::{MaskRecord, PushLabelRecord};
use crate::error::Result;
use crate::percept::{self, DepthImage, PixelSet};
use crate::pushsim::{action_direction, apply_push, PushAction};
use crate::reward::{change_reward, RewardConfig};
use crate::rng::{self, Purpose};
use crate::world::{sample_scenario, WorkspaceConfig};

/// Relative band within which two gradient magnitudes count as equal during
/// non-maximum suppression.
const NMS_TIE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub canny_sigma: f64,
    /// Hysteresis thresholds on the gradient magnitude, meters per pixel.
    pub canny_lo: f64,
    pub canny_hi: f64,
    pub delta: f64,
    pub probe_px: usize,
    pub band_px: usize,
}

impl HeuristicConfig {
    pub fn for_workspace(ws: &WorkspaceConfig) -> Self {
        Self {
            canny_sigma: 1.0,
            canny_lo: 0.002,
            canny_hi: 0.006,
            delta: 0.01,
            probe_px: (ws.pusher_radius / ws.pixel_pitch()).ceil() as usize + 2,
            band_px: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.canny_lo < self.canny_hi) || self.probe_px < 1 || !(self.canny_sigma > 0.0) {
            return Err(crate::Error::Config("heuristic: need canny_lo < canny_hi, probe_px >= 1, sigma > 0".into()));
        }
        Ok(())
    }
}

/// Mirror index into `[0, n)` without repeating the border sample.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn gaussian_blur(img: &DepthImage, sigma: f64) -> Vec<f64> {
    let r = img.resolution;
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut tmp = vec![0.0; r * r];
    for y in 0..r {
        for x in 0..r {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let xx = reflect(x as i64 + j as i64 - radius, r);
                acc += k * img.data[y * r + xx] as f64;
            }
            tmp[y * r + x] = acc;
        }
    }
    let mut out = vec![0.0; r * r];
    for y in 0..r {
        for x in 0..r {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let yy = reflect(y as i64 + j as i64 - radius, r);
                acc += k * tmp[yy * r + x];
            }
            out[y * r + x] = acc;
        }
    }
    out
}

/// Sobel derivatives scaled to height change per pixel.
fn sobel(b: &[f64], r: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: i64, y: i64| b[(y.clamp(0, r as i64 - 1) as usize) * r + x.clamp(0, r as i64 - 1) as usize];
    let mut gx = vec![0.0; r * r];
    let mut gy = vec![0.0; r * r];
    for y in 0..r as i64 {
        for x in 0..r as i64 {
            let i = y as usize * r + x as usize;
            gx[i] = ((at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1)))
                / 8.0;
            gy[i] = ((at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1)))
                / 8.0;
        }
    }
    (gx, gy)
}

/// Binary edge map (row-major) of the heightmap.
pub fn canny_edge_map(img: &DepthImage, cfg: &HeuristicConfig) -> Vec<bool> {
    let r = img.resolution;
    let blurred = gaussian_blur(img, cfg.canny_sigma);
    let (gx, gy) = sobel(&blurred, r);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let m_at = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= r as i64 || y >= r as i64 {
            0.0
        } else {
            mag[y as usize * r + x as usize]
        }
    };

    // non-maximum suppression along the gradient, 4 direction bins
    let mut thin = vec![false; r * r];
    for y in 0..r {
        for x in 0..r {
            let i = y * r + x;
            let m = mag[i];
            if m < cfg.canny_lo {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dx, dy): (i64, i64) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            // orient the pair along +gradient (toward higher terrain)
            let (ux, uy) = if dx as f64 * gx[i] + dy as f64 * gy[i] >= 0.0 { (dx, dy) } else { (-dx, -dy) };
            let up = m_at(x as i64 + ux, y as i64 + uy);
            let down = m_at(x as i64 - ux, y as i64 - uy);
            // ties resolve to the higher side of the step
            thin[i] = m >= down * (1.0 - NMS_TIE) && m > up * (1.0 + NMS_TIE);
        }
    }

    // hysteresis, 8-connected
    let mut edges = vec![false; r * r];
    let mut queue = VecDeque::new();
    for i in 0..r * r {
        if thin[i] && mag[i] >= cfg.canny_hi {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % r) as i64, (i / r) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= r as i64 || ny >= r as i64 {
                    continue;
                }
                let j = ny as usize * r + nx as usize;
                if thin[j] && !edges[j] {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edges
}

pub fn canny_edges(img: &DepthImage, cfg: &HeuristicConfig) -> PixelSet {
    let r = img.resolution;
    canny_edge_map(img, cfg)
        .iter()
        .enumerate()
        .filter(|(_, &e)| e)
        .map(|(i, _)| ((i % r) as u32, (i / r) as u32))
        .collect()
}

/// Chebyshev dilation of a binary map.
pub fn dilate(map: &[bool], r: usize, band: usize) -> Vec<bool> {
    if band == 0 {
        return map.to_vec();
    }
    let b = band as i64;
    let mut out = vec![false; r * r];
    for y in 0..r as i64 {
        for x in 0..r as i64 {
            if !map[y as usize * r + x as usize] {
                continue;
            }
            for ny in (y - b).max(0)..=(y + b).min(r as i64 - 1) {
                for nx in (x - b).max(0)..=(x + b).min(r as i64 - 1) {
                    out[ny as usize * r + nx as usize] = true;
                }
            }
        }
    }
    out
}

/// Binary validity labels for every orientation.
pub fn heuristic_mask(img: &DepthImage, cfg: &HeuristicConfig, n_orientations: usize) -> MaskTensor {
    let r = img.resolution;
    let band = dilate(&canny_edge_map(img, cfg), r, cfg.band_px);
    let mut mask = MaskTensor::zeros(n_orientations, r);
    for o in 0..n_orientations {
        let d = action_direction(o, n_orientations);
        let offsets: Vec<(i64, i64)> =
            (1..=cfg.probe_px).map(|k| ((k as f64 * d.x).round() as i64, (k as f64 * d.y).round() as i64)).collect();
        for y in 0..r {
            for x in 0..r {
                if !band[y * r + x] {
                    continue;
                }
                let here = img.get(x, y) as f64;
                let climb = offsets
                    .iter()
                    .map(|&(dx, dy)| img.get_or_zero(x as i64 + dx, y as i64 + dy) as f64 - here)
                    .fold(f64::NEG_INFINITY, f64::max);
                if climb > cfg.delta {
                    mask.set(o, y, x, 1.0);
                }
            }
        }
    }
    mask
}

/// Runs `f` over `items` on up to `workers` threads, keeping input order.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<U>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Object count for a seeded scene, uniform over the inclusive range.
pub fn objects_for_seed(seed: u64, range: (usize, usize)) -> usize {
    rng::stream(seed, Purpose::Dataset, 0).gen_range(range.0..=range.1)
}

/// One heuristic-labeled record per seed.
pub fn build_mask_dataset(
    seeds: &[u64],
    n_objects_range: (usize, usize),
    ws: &WorkspaceConfig,
    heur: &HeuristicConfig,
    workers: usize,
) -> Result<Vec<MaskRecord>> {
    par_map(seeds, workers, |&seed| {
        let scene = sample_scenario(seed, objects_for_seed(seed, n_objects_range), ws)?;
        let image = percept::render(&scene, ws);
        let mask = heuristic_mask(&image, heur, ws.n_orientations);
        Ok(MaskRecord { image, mask })
    })
    .into_iter()
    .collect()
}

/// Uniformly random pushes from each seeded scene, all from the same start
/// state, labeled with the change reward.
pub fn build_push_refinement_dataset(
    seeds: &[u64],
    pushes_per_scene: usize,
    n_objects_range: (usize, usize),
    ws: &WorkspaceConfig,
    rew: &RewardConfig,
    workers: usize,
) -> Result<Vec<PushLabelRecord>> {
    let per_seed = par_map(seeds, workers, |&seed| -> Result<Vec<PushLabelRecord>> {
        let scene = sample_scenario(seed, objects_for_seed(seed, n_objects_range), ws)?;
        let image = percept::render(&scene, ws);
        let mut rng = rng::stream(seed, Purpose::Push, 0);
        let mut out = Vec::with_capacity(pushes_per_scene);
        for _ in 0..pushes_per_scene {
            let action = PushAction::from_flat(rng.gen_range(0..ws.n_actions()), ws.resolution);
            let outcome = apply_push(&scene, action, ws)?;
            let after = percept::render(&outcome.next_scene, ws);
            let c_t = percept::change_count(&image, &after, rew.change_thresh)?;
            out.push(PushLabelRecord {
                image: image.clone(),
                action,
                label: change_reward(c_t, rew) as f32,
                c_t: c_t as u32,
            });
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in per_seed {
        all.extend(r?);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(r: usize, x0: usize, y0: usize, w: usize, h: usize, height: f32) -> DepthImage {
        let mut img = DepthImage::zeros(r);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.set(x, y, height);
            }
        }
        img
    }

    fn cfg64() -> (WorkspaceConfig, HeuristicConfig) {
        let ws = WorkspaceConfig::default();
        let h = HeuristicConfig::for_workspace(&ws);
        (ws, h)
    }

    #[test]
    fn default_probe_distance() {
        let (_, h) = cfg64();
        // 1 cm pusher at 7 mm pitch: ceil(1.43) + 2
        assert_eq!(h.probe_px, 4);
        let full = HeuristicConfig::for_workspace(&WorkspaceConfig::full_scale());
        assert_eq!(full.probe_px, 7);
    }

    #[test]
    fn flat_image_has_no_edges_or_labels() {
        let (_, h) = cfg64();
        let img = DepthImage::zeros(32);
        assert!(canny_edges(&img, &h).is_empty());
        assert_eq!(heuristic_mask(&img, &h, 16).count_nonzero(), 0);
    }

    #[test]
    fn weak_gradients_give_no_edges() {
        let (_, h) = cfg64();
        // a 1 mm step: peak gradient far below canny_lo
        let img = square(32, 10, 10, 8, 8, 0.001);
        assert!(canny_edges(&img, &h).is_empty());
    }

    #[test]
    fn square_edge_is_closed_inner_ring() {
        let (_, h) = cfg64();
        let img = square(40, 12, 9, 10, 7, 0.04);
        let edges = canny_edges(&img, &h);
        let mut expected = Vec::new();
        for y in 9..16u32 {
            for x in 12..22u32 {
                if x == 12 || x == 21 || y == 9 || y == 15 {
                    expected.push((x, y));
                }
            }
        }
        let mut got = edges.clone();
        got.sort_by_key(|&(x, y)| (y, x));
        expected.sort_by_key(|&(x, y)| (y, x));
        assert_eq!(got, expected);
    }

    #[test]
    fn push_right_labels_left_band_and_push_left_the_right_band() {
        let (_, h) = cfg64();
        let (x0, y0, w, hh) = (20usize, 18usize, 9usize, 6usize);
        let img = square(64, x0, y0, w, hh, 0.03);
        let mask = heuristic_mask(&img, &h, 16);
        for y in 0..64 {
            for x in 0..64 {
                let left = x == x0 - 1 && (y0..y0 + hh).contains(&y);
                let right = x == x0 + w && (y0..y0 + hh).contains(&y);
                assert_eq!(mask.get(0, y, x) == 1.0, left, "o=0 at ({x},{y})");
                assert_eq!(mask.get(8, y, x) == 1.0, right, "o=8 at ({x},{y})");
            }
        }
    }

    #[test]
    fn rotation_by_quarter_turn_shifts_orientations() {
        let (_, h) = cfg64();
        let r = 48;
        let img = square(r, 14, 20, 11, 7, 0.035);
        // rotate +90 degrees in image coordinates: (x, y) -> (r-1-y, x)
        let mut rot = DepthImage::zeros(r);
        for y in 0..r {
            for x in 0..r {
                rot.set(r - 1 - y, x, img.get(x, y));
            }
        }
        let a = heuristic_mask(&img, &h, 16);
        let b = heuristic_mask(&rot, &h, 16);
        for o in 0..16 {
            for y in 0..r {
                for x in 0..r {
                    assert_eq!(a.get(o, y, x), b.get((o + 4) % 16, x, r - 1 - y), "o={o} ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn labels_lie_in_band_and_always_climb() {
        let (ws, h) = cfg64();
        for seed in 0..10 {
            let scene = sample_scenario(seed, 8, &ws).unwrap();
            let img = percept::render(&scene, &ws);
            let band = dilate(&canny_edge_map(&img, &h), 64, h.band_px);
            let mask = heuristic_mask(&img, &h, 16);
            for o in 0..16 {
                let d = action_direction(o, 16);
                for y in 0..64 {
                    for x in 0..64 {
                        if mask.get(o, y, x) == 0.0 {
                            continue;
                        }
                        assert!(band[y * 64 + x]);
                        let climbs = (1..=h.probe_px).any(|k| {
                            let px = x as i64 + (k as f64 * d.x).round() as i64;
                            let py = y as i64 + (k as f64 * d.y).round() as i64;
                            img.get_or_zero(px, py) as f64 - img.get(x, y) as f64 > h.delta
                        });
                        assert!(climbs);
                    }
                }
            }
        }
    }

    #[test]
    fn datasets_are_reproducible() {
        let (ws, h) = cfg64();
        let a = build_mask_dataset(&[1, 2, 3], (1, 10), &ws, &h, 1).unwrap();
        let b = build_mask_dataset(&[1, 2, 3], (1, 10), &ws, &h, 3).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        let rew = RewardConfig::default();
        let p = build_push_refinement_dataset(&[4, 5], 6, (1, 10), &ws, &rew, 2).unwrap();
        assert_eq!(p.len(), 12);
        assert_eq!(p, build_push_refinement_dataset(&[4, 5], 6, (1, 10), &ws, &rew, 1).unwrap());
    }

    #[test]
    fn push_labels_follow_change_counts() {
        let (ws, _) = cfg64();
        let rew = RewardConfig::default();
        let recs = build_push_refinement_dataset(&[10, 11, 12, 13], 40, (5, 10), &ws, &rew, 1).unwrap();
        for r in &recs {
            assert_eq!(r.label, change_reward(r.c_t as usize, &rew) as f32);
        }
        assert!(recs.iter().any(|r| r.label == 1.0));
        assert!(recs.iter().any(|r| r.label == 0.0));
    }
}
