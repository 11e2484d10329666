//! Workspace geometry, object bodies, the box target and scenario sampling.
//!
//! Metric coordinates put the origin at the top-left table corner with x to
//! the right and y down, matching image coordinates. Pixel `(x, y)` covers the
//! square `[x, x+1) × [y, y+1)` in pixel units; its center sits at metric
//! `((x + 0.5)·pitch, (y + 0.5)·pitch)`. Continuous pixel coordinates used by
//! [`BoxTarget::p_box`] put pixel centers on integers, so the table border
//! lies at `-0.5` and `R - 0.5`.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Footprint, Vec2};
use crate::rng::{self, Purpose};

/// Maximum rejection-sampling attempts per object.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Tallest object the catalog can produce.
pub const MAX_OBJECT_HEIGHT: f64 = 0.05;

/// Which table border the box abuts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderSide {
    Top,
    Bottom,
    Left,
    Right,
}

/// The box the objects should end up in. Its mouth is a segment of one table
/// border; `mouth_center` is measured along that border in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxTarget {
    pub side: BorderSide,
    pub mouth_center: f64,
    pub mouth_width: f64,
}

impl BoxTarget {
    /// Unit vector pointing from the table into the box.
    pub fn mouth_normal(&self) -> Vec2 {
        match self.side {
            BorderSide::Top => Vec2::new(0.0, -1.0),
            BorderSide::Bottom => Vec2::new(0.0, 1.0),
            BorderSide::Left => Vec2::new(-1.0, 0.0),
            BorderSide::Right => Vec2::new(1.0, 0.0),
        }
    }

    /// Metric midpoint of the mouth edge.
    pub fn mouth_point(&self, table_extent: f64) -> Vec2 {
        match self.side {
            BorderSide::Top => Vec2::new(self.mouth_center, 0.0),
            BorderSide::Bottom => Vec2::new(self.mouth_center, table_extent),
            BorderSide::Left => Vec2::new(0.0, self.mouth_center),
            BorderSide::Right => Vec2::new(table_extent, self.mouth_center),
        }
    }

    /// Center of the box edge in contact with the table, in continuous pixel
    /// coordinates (pixel centers on integers).
    pub fn p_box(&self, cfg: &WorkspaceConfig) -> (f64, f64) {
        let p = self.mouth_point(cfg.table_extent);
        let pitch = cfg.pixel_pitch();
        (p.x / pitch - 0.5, p.y / pitch - 0.5)
    }

    /// Whether a border crossing at metric point `at` lies within the mouth.
    pub fn mouth_contains(&self, at: Vec2) -> bool {
        let along = match self.side {
            BorderSide::Top | BorderSide::Bottom => at.x,
            BorderSide::Left | BorderSide::Right => at.y,
        };
        (along - self.mouth_center).abs() <= 0.5 * self.mouth_width
    }

    /// Reflection across the table's vertical center line.
    pub fn mirrored(&self, table_extent: f64) -> BoxTarget {
        match self.side {
            BorderSide::Top | BorderSide::Bottom => BoxTarget {
                mouth_center: table_extent - self.mouth_center,
                ..*self
            },
            BorderSide::Left => BoxTarget { side: BorderSide::Right, ..*self },
            BorderSide::Right => BoxTarget { side: BorderSide::Left, ..*self },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    /// Side of the square table, meters.
    pub table_extent: f64,
    /// Pixels per image side.
    pub resolution: usize,
    pub push_length: f64,
    pub pusher_radius: f64,
    pub n_orientations: usize,
    #[serde(rename = "box")]
    pub box_target: BoxTarget,
    /// Extra free travel of a pushed disc, as a fraction of its pushed distance.
    pub roll_factor: f64,
    /// Longest pusher substep, in pixels.
    pub max_substep_px: f64,
    /// Object-object overlap propagation rounds per substep.
    pub propagation_rounds: usize,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self::with_resolution(64)
    }
}

impl WorkspaceConfig {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            table_extent: 0.448,
            resolution,
            push_length: 0.10,
            pusher_radius: 0.01,
            n_orientations: 16,
            box_target: BoxTarget { side: BorderSide::Top, mouth_center: 0.224, mouth_width: 0.2 },
            roll_factor: 0.5,
            max_substep_px: 0.5,
            propagation_rounds: 8,
        }
    }

    /// Full-size configuration with a 2 mm pixel pitch.
    pub fn full_scale() -> Self {
        Self::with_resolution(224)
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.table_extent / self.resolution as f64
    }

    pub fn n_actions(&self) -> usize {
        self.n_orientations * self.resolution * self.resolution
    }

    /// Metric position of a pixel center.
    pub fn pixel_center(&self, x: usize, y: usize) -> Vec2 {
        let p = self.pixel_pitch();
        Vec2::new((x as f64 + 0.5) * p, (y as f64 + 0.5) * p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.table_extent > 0.0) || self.resolution == 0 {
            return bad("table_extent and resolution must be positive");
        }
        if !(self.push_length > 2.0 * self.pusher_radius) || !(self.pusher_radius > 0.0) {
            return bad("push_length must exceed twice the pusher radius");
        }
        if self.n_orientations == 0 {
            return bad("n_orientations must be positive");
        }
        if !(self.max_substep_px > 0.0 && self.max_substep_px <= 0.5) {
            return bad("max_substep_px must lie in (0, 0.5]");
        }
        if !(self.roll_factor >= 0.0) {
            return bad("roll_factor must be nonnegative");
        }
        let b = &self.box_target;
        if !(b.mouth_width > 0.0) || (b.mouth_center - self.table_extent / 2.0).abs() > self.table_extent / 2.0 {
            return bad("box mouth must lie on the table border");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disc { radius: f64 },
    Cuboid { half_extents: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    OnTable,
    InBox,
    OnGround,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBody {
    pub id: u32,
    pub shape: Shape,
    pub height: f64,
    pub pose: Pose,
    pub status: Status,
}

impl ObjectBody {
    pub fn footprint(&self) -> Footprint {
        let center = Vec2::new(self.pose.x, self.pose.y);
        match self.shape {
            Shape::Disc { radius } => Footprint::Disc { center, radius },
            Shape::Cuboid { half_extents } => Footprint::Rect { center, half: half_extents, yaw: self.pose.yaw },
        }
    }

    pub fn is_disc(&self) -> bool {
        matches!(self.shape, Shape::Disc { .. })
    }

    pub fn on_table(&self) -> bool {
        self.status == Status::OnTable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<ObjectBody>,
    pub n_box: u32,
    pub n_ground: u32,
    pub rng_seed: u64,
}

impl Scene {
    pub fn empty(rng_seed: u64) -> Self {
        Self { objects: Vec::new(), n_box: 0, n_ground: 0, rng_seed }
    }

    pub fn n_on_table(&self) -> usize {
        self.objects.iter().filter(|o| o.on_table()).count()
    }

    /// Checks that on-table objects do not overlap and that their centroids
    /// are on the table. Freshly sampled scenes additionally keep whole
    /// footprints inside the table; pushed bodies may overhang an edge.
    pub fn check_invariants(&self, cfg: &WorkspaceConfig) -> Result<()> {
        let live: Vec<_> = self.objects.iter().filter(|o| o.on_table()).collect();
        for (i, a) in live.iter().enumerate() {
            if !(a.height > 0.0) {
                return Err(Error::Config(format!("object {} has nonpositive height", a.id)));
            }
            let l = cfg.table_extent;
            if !(0.0..=l).contains(&a.pose.x) || !(0.0..=l).contains(&a.pose.y) {
                return Err(Error::Config(format!("object {} centroid is off the table", a.id)));
            }
            for b in &live[i + 1..] {
                if a.footprint().contact(&b.footprint()).map_or(false, |c| c.depth > 1e-9) {
                    return Err(Error::Config(format!("objects {} and {} overlap", a.id, b.id)));
                }
            }
        }
        Ok(())
    }

    /// Reflection of the whole scene across the table's vertical center line.
    pub fn mirrored(&self, cfg: &WorkspaceConfig) -> Scene {
        let mut s = self.clone();
        for o in &mut s.objects {
            o.pose.x = cfg.table_extent - o.pose.x;
            o.pose.yaw = -o.pose.yaw;
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> Result<Scene> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Catalog ranges for sampled objects.
const DISC_RADIUS: (f64, f64) = (0.015, 0.03);
const CUBOID_HALF: (f64, f64) = (0.015, 0.035);
const HEIGHT: (f64, f64) = (0.02, MAX_OBJECT_HEIGHT);

/// Draws a random scene of `n_objects` non-overlapping bodies.
///
/// Shapes come from a fixed catalog (half discs, half cuboids). Each body is
/// placed uniformly inside the table shrunk by its bounding radius, retrying
/// up to [`MAX_PLACEMENT_ATTEMPTS`] times against the bodies already placed.
pub fn sample_scenario(seed: u64, n_objects: usize, cfg: &WorkspaceConfig) -> Result<Scene> {
    if !(1..=10).contains(&n_objects) {
        return Err(Error::Config(format!("n_objects must be in 1..=10, got {n_objects}")));
    }
    let mut rng = rng::stream(seed, Purpose::Scenario, 0);
    let mut scene = Scene::empty(seed);
    for index in 0..n_objects {
        let shape = if rng.gen_bool(0.5) {
            Shape::Disc { radius: rng.gen_range(DISC_RADIUS.0..=DISC_RADIUS.1) }
        } else {
            Shape::Cuboid {
                half_extents: [
                    rng.gen_range(CUBOID_HALF.0..=CUBOID_HALF.1),
                    rng.gen_range(CUBOID_HALF.0..=CUBOID_HALF.1),
                ],
            }
        };
        let height = rng.gen_range(HEIGHT.0..=HEIGHT.1);
        let yaw = match shape {
            Shape::Disc { .. } => 0.0,
            Shape::Cuboid { .. } => rng.gen_range(0.0..PI),
        };
        let margin = match shape {
            Shape::Disc { radius } => radius,
            Shape::Cuboid { half_extents } => half_extents[0].hypot(half_extents[1]),
        };
        let span = cfg.table_extent - 2.0 * margin;
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let pose = Pose {
                x: margin + rng.gen_range(0.0..=1.0) * span,
                y: margin + rng.gen_range(0.0..=1.0) * span,
                yaw,
            };
            let body = ObjectBody { id: index as u32, shape, height, pose, status: Status::OnTable };
            let fp = body.footprint();
            if scene.objects.iter().all(|o| o.footprint().contact(&fp).is_none()) {
                placed = Some(body);
                break;
            }
        }
        match placed {
            Some(b) => scene.objects.push(b),
            None => return Err(Error::PlacementFailure { index, attempts: MAX_PLACEMENT_ATTEMPTS }),
        }
    }
    Ok(scene)
}
