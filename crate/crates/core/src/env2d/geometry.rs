use serde::{Deserialize, Serialize};

/// A configuration of the point robot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config2D {
    pub x: f64,
    pub y: f64,
}

impl Config2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Config2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(self, other: Config2D) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn lerp(self, other: Config2D, t: f64) -> Config2D {
        Config2D::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Config2D {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

/// Closed obstacle shapes. Boundary points count as inside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    /// Axis-aligned rectangle with lower-left corner `(x, y)`.
    Rect { x: f64, y: f64, w: f64, h: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
}

impl Obstacle {
    pub fn contains(&self, q: Config2D) -> bool {
        match *self {
            Obstacle::Rect { x, y, w, h } => q.x >= x && q.x <= x + w && q.y >= y && q.y <= y + h,
            Obstacle::Circle { cx, cy, r } => {
                let (dx, dy) = (q.x - cx, q.y - cy);
                dx * dx + dy * dy <= r * r
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Obstacle::Rect { w, h, .. } => w * h,
            Obstacle::Circle { r, .. } => std::f64::consts::PI * r * r,
        }
    }

    /// Exact test: does the closed segment `ab` touch the closed obstacle?
    pub fn intersects_segment(&self, a: Config2D, b: Config2D) -> bool {
        match *self {
            Obstacle::Rect { x, y, w, h } => segment_hits_rect(a, b, x, y, x + w, y + h),
            Obstacle::Circle { cx, cy, r } => {
                let d2 = point_segment_distance_sq(Config2D::new(cx, cy), a, b);
                d2 <= r * r
            }
        }
    }
}

/// Liang-Barsky clipping of `ab` against `[x0,x1] x [y0,y1]`.
fn segment_hits_rect(a: Config2D, b: Config2D, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, a.x - x0), (dx, x1 - a.x), (-dy, a.y - y0), (dy, y1 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

pub(crate) fn point_segment_distance_sq(p: Config2D, a: Config2D, b: Config2D) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) };
    p.distance_sq(Config2D::new(a.x + t * dx, a.y + t * dy))
}
