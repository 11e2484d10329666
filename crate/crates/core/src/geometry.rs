//! Planar footprint geometry: containment, overlap and minimum translation.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Overlap depths at or below this are treated as touching, not intersecting.
pub const CONTACT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0).then(|| Vec2::new(self.x / n, self.y / n))
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A convex planar region: a disc or an oriented rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Footprint {
    Disc { center: Vec2, radius: f64 },
    Rect { center: Vec2, half: [f64; 2], yaw: f64 },
}

/// Minimum translation separating two footprints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    /// Unit vector pointing from the first footprint toward the second.
    pub normal: Vec2,
    pub depth: f64,
}

impl Footprint {
    pub fn center(&self) -> Vec2 {
        match *self {
            Footprint::Disc { center, .. } | Footprint::Rect { center, .. } => center,
        }
    }

    /// Radius of the smallest centered disc containing the footprint.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Footprint::Disc { radius, .. } => radius,
            Footprint::Rect { half, .. } => half[0].hypot(half[1]),
        }
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn aabb(&self) -> (Vec2, Vec2) {
        match *self {
            Footprint::Disc { center, radius } => (
                Vec2::new(center.x - radius, center.y - radius),
                Vec2::new(center.x + radius, center.y + radius),
            ),
            Footprint::Rect { .. } => {
                let v = self.vertices();
                let mut lo = v[0];
                let mut hi = v[0];
                for p in &v[1..] {
                    lo.x = lo.x.min(p.x);
                    lo.y = lo.y.min(p.y);
                    hi.x = hi.x.max(p.x);
                    hi.y = hi.y.max(p.y);
                }
                (lo, hi)
            }
        }
    }

    /// Rectangle corners in counter-clockwise order (for a disc, the corners
    /// of its bounding square).
    pub fn vertices(&self) -> [Vec2; 4] {
        let (center, half, yaw) = match *self {
            Footprint::Disc { center, radius } => (center, [radius, radius], 0.0),
            Footprint::Rect { center, half, yaw } => (center, half, yaw),
        };
        let ax = Vec2::new(half[0], 0.0).rotate(yaw);
        let ay = Vec2::new(0.0, half[1]).rotate(yaw);
        [center - ax - ay, center + ax - ay, center + ax + ay, center - ax + ay]
    }

    /// Local axes of a rectangle.
    fn axes(yaw: f64) -> [Vec2; 2] {
        let (s, c) = yaw.sin_cos();
        [Vec2::new(c, s), Vec2::new(-s, c)]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match *self {
            Footprint::Disc { center, radius } => {
                let d = p - center;
                d.dot(d) <= radius * radius
            }
            Footprint::Rect { center, half, yaw } => {
                let d = p - center;
                let [u, v] = Self::axes(yaw);
                d.dot(u).abs() <= half[0] && d.dot(v).abs() <= half[1]
            }
        }
    }

    pub fn translated(&self, by: Vec2) -> Footprint {
        match *self {
            Footprint::Disc { center, radius } => Footprint::Disc { center: center + by, radius },
            Footprint::Rect { center, half, yaw } => Footprint::Rect { center: center + by, half, yaw },
        }
    }

    /// Minimum translation of `other` that removes its overlap with `self`,
    /// or `None` when they merely touch or are apart.
    pub fn contact(&self, other: &Footprint) -> Option<Contact> {
        let c = match (*self, *other) {
            (Footprint::Disc { center: a, radius: ra }, Footprint::Disc { center: b, radius: rb }) => {
                let d = b - a;
                let dist = d.norm();
                let normal = d.normalized().unwrap_or(Vec2::new(1.0, 0.0));
                Contact { normal, depth: ra + rb - dist }
            }
            (Footprint::Rect { center, half, yaw }, Footprint::Disc { center: dc, radius }) => {
                rect_disc(center, half, yaw, dc, radius)
            }
            (Footprint::Disc { center: dc, radius }, Footprint::Rect { center, half, yaw }) => {
                let c = rect_disc(center, half, yaw, dc, radius);
                Contact { normal: -c.normal, depth: c.depth }
            }
            (Footprint::Rect { .. }, Footprint::Rect { .. }) => rect_rect(self, other),
        };
        (c.depth > CONTACT_EPS).then_some(c)
    }
}

fn rect_disc(center: Vec2, half: [f64; 2], yaw: f64, dc: Vec2, radius: f64) -> Contact {
    let [u, v] = Footprint::axes(yaw);
    let d = dc - center;
    let lu = d.dot(u);
    let lv = d.dot(v);
    let cu = lu.clamp(-half[0], half[0]);
    let cv = lv.clamp(-half[1], half[1]);
    if cu != lu || cv != lv {
        // disc center outside the rectangle
        let local = Vec2::new(lu - cu, lv - cv);
        let dist = local.norm();
        let n_local = local * (1.0 / dist);
        let normal = u * n_local.x + v * n_local.y;
        Contact { normal, depth: radius - dist }
    } else {
        // center inside: leave through the nearest face
        let faces = [
            (half[0] - lu, u),
            (half[0] + lu, -u),
            (half[1] - lv, v),
            (half[1] + lv, -v),
        ];
        let (gap, normal) = faces
            .iter()
            .copied()
            .fold((f64::INFINITY, u), |best, f| if f.0 < best.0 { f } else { best });
        Contact { normal, depth: radius + gap }
    }
}

fn project(verts: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    verts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let s = p.dot(axis);
        (lo.min(s), hi.max(s))
    })
}

fn rect_rect(a: &Footprint, b: &Footprint) -> Contact {
    let (ya, yb) = match (*a, *b) {
        (Footprint::Rect { yaw: ya, .. }, Footprint::Rect { yaw: yb, .. }) => (ya, yb),
        _ => unreachable!(),
    };
    let va = a.vertices();
    let vb = b.vertices();
    let [a0, a1] = Footprint::axes(ya);
    let [b0, b1] = Footprint::axes(yb);
    let mut best = Contact { normal: a0, depth: f64::INFINITY };
    for axis in [a0, a1, b0, b1] {
        let (amin, amax) = project(&va, axis);
        let (bmin, bmax) = project(&vb, axis);
        let overlap = (amax - bmin).min(bmax - amin);
        if overlap < best.depth {
            let sign = if (b.center() - a.center()).dot(axis) >= 0.0 { 1.0 } else { -1.0 };
            best = Contact { normal: axis * sign, depth: overlap };
        }
    }
    best
}
