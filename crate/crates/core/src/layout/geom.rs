// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned rectangle, `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1), y1: y0.max(y1) }
    }

    pub fn enclosing(points: impl IntoIterator<Item = Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut r = Rect { x0: first.x, y0: first.y, x1: first.x, y1: first.y };
        for p in it {
            r.x0 = r.x0.min(p.x);
            r.y0 = r.y0.min(p.y);
            r.x1 = r.x1.max(p.x);
            r.y1 = r.y1.max(p.y);
        }
        Some(r)
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn union(&self, o: &Rect) -> Rect {
        Rect { x0: self.x0.min(o.x0), y0: self.y0.min(o.y0), x1: self.x1.max(o.x1), y1: self.y1.max(o.y1) }
    }

    pub fn grown(&self, d: i64) -> Rect {
        Rect { x0: self.x0 - d, y0: self.y0 - d, x1: self.x1 + d, y1: self.y1 + d }
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Rect {
        Rect { x0: self.x0 + dx, y0: self.y0 + dy, x1: self.x1 + dx, y1: self.y1 + dy }
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x0, self.y0),
            Point::new(self.x1, self.y0),
            Point::new(self.x1, self.y1),
            Point::new(self.x0, self.y1),
        ]
    }
}

/// Placement rotation, counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Rotation {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    /// Accepts any multiple of 90 degrees (within 1e-9), normalized to [0, 360).
    pub fn from_degrees(deg: f64) -> Option<Self> {
        let q = (deg / 90.0).round();
        if (deg - q * 90.0).abs() > 1e-9 {
            return None;
        }
        match (q as i64).rem_euclid(4) {
            0 => Some(Rotation::R0),
            1 => Some(Rotation::R90),
            2 => Some(Rotation::R180),
            _ => Some(Rotation::R270),
        }
    }

    fn cos_sin(self) -> (i64, i64) {
        match self {
            Rotation::R0 => (1, 0),
            Rotation::R90 => (0, 1),
            Rotation::R180 => (-1, 0),
            Rotation::R270 => (0, -1),
        }
    }
}

/// Integer affine transform restricted to the eight Manhattan orientations.
/// `apply(p) = M * p + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transform {
    m: [i64; 4],
    offset: Point,
}

impl Transform {
    pub fn identity() -> Self {
        Self { m: [1, 0, 0, 1], offset: Point::new(0, 0) }
    }

    /// Mirror about x (if set), then rotate, then translate.
    pub fn new(rotation: Rotation, mirrored_x: bool, offset: Point) -> Self {
        let (c, s) = rotation.cos_sin();
        let f = if mirrored_x { -1 } else { 1 };
        // R(θ) * diag(1, f)
        Self { m: [c, -s * f, s, c * f], offset }
    }

    pub fn offset(&self) -> Point {
        self.offset
    }

    pub fn apply(&self, p: Point) -> Point {
        let v = self.apply_vector(p);
        Point::new(v.x + self.offset.x, v.y + self.offset.y)
    }

    pub fn apply_vector(&self, v: Point) -> Point {
        Point::new(self.m[0] * v.x + self.m[1] * v.y, self.m[2] * v.x + self.m[3] * v.y)
    }

    pub fn apply_rect(&self, r: &Rect) -> Rect {
        Rect::enclosing(r.corners().into_iter().map(|p| self.apply(p))).expect("four corners")
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn then_after(&self, inner: &Transform) -> Transform {
        let [a, b, c, d] = self.m;
        let [e, f, g, h] = inner.m;
        let m = [a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h];
        Transform { m, offset: self.apply(inner.offset) }
    }

    /// Decomposes the linear part into (rotation, mirrored_x).
    pub fn orientation(&self) -> (Rotation, bool) {
        let [a, b, c, d] = self.m;
        let mirrored = a * d - b * c < 0;
        // diag(1, ±1) leaves column 0 alone, so it is column 0 of R(θ).
        let rot = match (a, c) {
            (1, 0) => Rotation::R0,
            (0, 1) => Rotation::R90,
            (-1, 0) => Rotation::R180,
            _ => Rotation::R270,
        };
        (rot, mirrored)
    }
}
