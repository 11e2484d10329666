//! Quasi-static execution of one discrete push.
//!
//! A disc pusher sweeps a straight segment in small substeps. Contacted
//! bodies are moved by their minimum translation out of the pusher, and any
//! overlaps this creates between bodies are resolved the same way in
//! breadth-first rounds. There is no momentum, friction or rotation. Pushed
//! discs keep rolling for a fraction of their pushed distance afterwards. A
//! body whose centroid leaves the table falls to the ground, unless it leaves
//! through the box mouth while moving into the box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Footprint, Vec2};
use crate::world::{BorderSide, Scene, Status, WorkspaceConfig};

/// Pose changes at or below this do not count as motion.
pub const MOTION_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PushAction {
    pub x: u32,
    pub y: u32,
    pub o: u32,
}

impl PushAction {
    pub fn new(x: u32, y: u32, o: u32) -> Self {
        Self { x, y, o }
    }

    pub fn flat_index(&self, resolution: usize) -> usize {
        (self.o as usize * resolution + self.y as usize) * resolution + self.x as usize
    }

    pub fn from_flat(flat: usize, resolution: usize) -> Self {
        let plane = resolution * resolution;
        let o = flat / plane;
        let rem = flat % plane;
        Self { x: (rem % resolution) as u32, y: (rem / resolution) as u32, o: o as u32 }
    }

    pub fn validate(&self, cfg: &WorkspaceConfig) -> Result<()> {
        let r = cfg.resolution as u32;
        if self.x >= r || self.y >= r || self.o >= cfg.n_orientations as u32 {
            return Err(Error::InvalidAction(format!(
                "({}, {}, {}) outside {}x{}x{}",
                self.x, self.y, self.o, r, r, cfg.n_orientations
            )));
        }
        Ok(())
    }

    /// Reflection across the image's vertical center line.
    pub fn mirrored(&self, cfg: &WorkspaceConfig) -> PushAction {
        let n = cfg.n_orientations as u32;
        PushAction {
            x: cfg.resolution as u32 - 1 - self.x,
            y: self.y,
            o: (n + n / 2 - self.o) % n,
        }
    }
}

/// Unit push direction for orientation `o` in image coordinates (x right,
/// y down). Quarter turns are exact.
pub fn action_direction(o: usize, n_orientations: usize) -> Vec2 {
    if (4 * o) % n_orientations == 0 {
        return match (4 * o / n_orientations) % 4 {
            0 => Vec2::new(1.0, 0.0),
            1 => Vec2::new(0.0, 1.0),
            2 => Vec2::new(-1.0, 0.0),
            _ => Vec2::new(0.0, -1.0),
        };
    }
    let theta = o as f64 * std::f64::consts::TAU / n_orientations as f64;
    Vec2::new(theta.cos(), theta.sin())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushOutcome {
    pub next_scene: Scene,
    pub n_box: u32,
    pub n_ground: u32,
    pub any_motion: bool,
    /// Pusher center after each substep, meters.
    pub trajectory_log: Vec<Vec2>,
    /// The sweep stopped early because overlaps could not be resolved.
    pub jammed: bool,
}

struct Sweep<'a> {
    cfg: &'a WorkspaceConfig,
    scene: Scene,
    pushed: Vec<f64>,
    last_dir: Vec<Option<Vec2>>,
}

impl Sweep<'_> {
    fn footprint(&self, i: usize) -> Footprint {
        self.scene.objects[i].footprint()
    }

    fn live(&self, i: usize) -> bool {
        self.scene.objects[i].on_table()
    }

    fn translate(&mut self, i: usize, by: Vec2) {
        let p = &mut self.scene.objects[i].pose;
        p.x += by.x;
        p.y += by.y;
    }

    fn position(&self, i: usize) -> Vec2 {
        let p = &self.scene.objects[i].pose;
        Vec2::new(p.x, p.y)
    }

    /// Resolves object-object overlaps starting from `frontier`. Returns
    /// false when overlaps remain after the allowed rounds.
    fn propagate(&mut self, mut frontier: Vec<usize>) -> bool {
        let n = self.scene.objects.len();
        for _ in 0..self.cfg.propagation_rounds {
            if frontier.is_empty() {
                return true;
            }
            let mut next: Vec<usize> = Vec::new();
            for &a in &frontier {
                for b in 0..n {
                    if b == a || !self.live(b) {
                        continue;
                    }
                    if let Some(c) = self.footprint(a).contact(&self.footprint(b)) {
                        self.translate(b, c.normal * c.depth);
                        if !next.contains(&b) {
                            next.push(b);
                        }
                    }
                }
            }
            frontier = next;
        }
        // out of rounds: accept only if nothing still overlaps
        frontier.iter().all(|&a| {
            (0..n).all(|b| b == a || !self.live(b) || self.footprint(a).contact(&self.footprint(b)).is_none())
        })
    }

    /// Marks a body that left the table between `from` and its current
    /// position. Returns true if its status changed.
    fn settle_boundary(&mut self, i: usize, from: Vec2) -> bool {
        let to = self.position(i);
        let l = self.cfg.table_extent;
        if (0.0..=l).contains(&to.x) && (0.0..=l).contains(&to.y) {
            return false;
        }
        let d = to - from;
        // earliest exit through any border
        let mut exit: Option<(f64, BorderSide)> = None;
        let mut consider = |t: f64, side: BorderSide| {
            if (0.0..=1.0).contains(&t) && exit.map_or(true, |(bt, _)| t < bt) {
                exit = Some((t, side));
            }
        };
        if to.x < 0.0 && d.x != 0.0 {
            consider((0.0 - from.x) / d.x, BorderSide::Left);
        }
        if to.x > l && d.x != 0.0 {
            consider((l - from.x) / d.x, BorderSide::Right);
        }
        if to.y < 0.0 && d.y != 0.0 {
            consider((0.0 - from.y) / d.y, BorderSide::Top);
        }
        if to.y > l && d.y != 0.0 {
            consider((l - from.y) / d.y, BorderSide::Bottom);
        }
        let (t, side) = exit.unwrap_or((1.0, BorderSide::Top));
        let at = from + d * t;
        let b = &self.cfg.box_target;
        let into_box = side == b.side && b.mouth_contains(at) && d.dot(b.mouth_normal()) > 0.0;
        let obj = &mut self.scene.objects[i];
        if into_box {
            obj.status = Status::InBox;
            self.scene.n_box += 1;
        } else {
            obj.status = Status::OnGround;
            self.scene.n_ground += 1;
        }
        true
    }

    fn roll(&mut self, i: usize) {
        let Some(dir) = self.last_dir[i] else { return };
        let travel = self.cfg.roll_factor * self.pushed[i];
        if !(travel > 0.0) {
            return;
        }
        let max_step = self.cfg.pixel_pitch() * self.cfg.max_substep_px;
        let steps = (travel / max_step).ceil() as usize;
        let step = dir * (travel / steps as f64);
        for _ in 0..steps {
            let from = self.position(i);
            let moved = self.footprint(i).translated(step);
            let blocked = (0..self.scene.objects.len())
                .any(|j| j != i && self.live(j) && self.footprint(j).contact(&moved).is_some());
            if blocked {
                return;
            }
            self.translate(i, step);
            if self.settle_boundary(i, from) {
                return;
            }
        }
    }
}

/// Executes one push and reports the resulting scene and deposit counts.
pub fn apply_push(scene: &Scene, action: PushAction, cfg: &WorkspaceConfig) -> Result<PushOutcome> {
    action.validate(cfg)?;
    let n = scene.objects.len();
    let start = cfg.pixel_center(action.x as usize, action.y as usize);
    let dir = action_direction(action.o as usize, cfg.n_orientations);
    let max_step = cfg.pixel_pitch() * cfg.max_substep_px;
    let n_sub = (cfg.push_length / max_step).ceil().max(1.0) as usize;
    let step = cfg.push_length / n_sub as f64;
    let pusher_at = |s: usize| Footprint::Disc { center: start + dir * (step * s as f64), radius: cfg.pusher_radius };

    let mut sim = Sweep { cfg, scene: scene.clone(), pushed: vec![0.0; n], last_dir: vec![None; n] };

    // bodies under the pusher where it comes down are slid over, never pushed
    let start_disc = pusher_at(0);
    let under: Vec<bool> = (0..n).map(|i| sim.live(i) && start_disc.contact(&sim.footprint(i)).is_some()).collect();

    let mut trajectory_log = Vec::with_capacity(n_sub);
    let mut jammed = false;
    for s in 1..=n_sub {
        let pusher = pusher_at(s);
        let snapshot: Vec<Vec2> = (0..n).map(|i| sim.position(i)).collect();
        let mut frontier = Vec::new();
        for i in 0..n {
            if !sim.live(i) || under[i] {
                continue;
            }
            if let Some(c) = pusher.contact(&sim.footprint(i)) {
                sim.translate(i, c.normal * c.depth);
                frontier.push(i);
            }
        }
        if !sim.propagate(frontier) {
            for (i, p) in snapshot.iter().enumerate() {
                sim.scene.objects[i].pose.x = p.x;
                sim.scene.objects[i].pose.y = p.y;
            }
            jammed = true;
            break;
        }
        trajectory_log.push(pusher.center());
        for i in 0..n {
            if !sim.live(i) {
                continue;
            }
            let d = sim.position(i) - snapshot[i];
            let dist = d.norm();
            if dist > 0.0 {
                sim.pushed[i] += dist;
                sim.last_dir[i] = d.normalized();
                sim.settle_boundary(i, snapshot[i]);
            }
        }
    }

    for i in 0..n {
        if sim.live(i) && sim.scene.objects[i].is_disc() {
            sim.roll(i);
        }
    }

    let mut any_motion = false;
    for (before, after) in scene.objects.iter().zip(&sim.scene.objects) {
        let moved = (after.pose.x - before.pose.x).hypot(after.pose.y - before.pose.y);
        if moved > MOTION_EPS || after.status != before.status {
            any_motion = true;
        }
    }
    let n_box = sim.scene.n_box - scene.n_box;
    let n_ground = sim.scene.n_ground - scene.n_ground;
    Ok(PushOutcome { next_scene: sim.scene, n_box, n_ground, any_motion, trajectory_log, jammed })
}
