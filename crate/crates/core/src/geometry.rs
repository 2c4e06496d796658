//! Planar geometry shared by the world, controller and dataset code.
//!
//! World frame: `x`, `y` in meters; headings in radians with
//! `dx = v cos(h)`, `dy = v sin(h)`. A right turn increases the heading
//! (the screen-style, y-down convention), so the right-hand normal of a
//! heading `h` is `(-sin h, cos h)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::hierarchy::EgoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_heading(h: f64) -> Self {
        Self::new(h.cos(), h.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self).scale(t)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Right-hand unit normal of a heading.
pub fn right_normal(heading: f64) -> Vec2 {
    Vec2::new(-heading.sin(), heading.cos())
}

/// Expresses a world point in the ego frame of a pose.
pub fn to_ego_frame(origin: Vec2, heading: f64, p: Vec2) -> EgoPoint {
    let d = p - origin;
    EgoPoint::new(d.dot(right_normal(heading)), d.dot(Vec2::from_heading(heading)))
}

/// Inverse of [`to_ego_frame`].
pub fn from_ego_frame(origin: Vec2, heading: f64, p: EgoPoint) -> Vec2 {
    origin + Vec2::from_heading(heading).scale(p.longitudinal) + right_normal(heading).scale(p.lateral)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arclength of the nearest point.
    pub s: f64,
    pub point: Vec2,
    pub distance: f64,
    /// Positive when the query lies to the right of the polyline direction.
    pub signed_offset: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolylineError {
    #[error("polyline needs at least two points, got {0}")]
    TooShort(usize),
    #[error("points {0} and {1} coincide")]
    Duplicate(usize, usize),
    #[error("point {0} is not finite")]
    NonFinite(usize),
}

/// An ordered list of distinct points with cumulative arclength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl TryFrom<Vec<Vec2>> for Polyline {
    type Error = PolylineError;
    fn try_from(points: Vec<Vec2>) -> Result<Self, Self::Error> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<Vec2> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Result<Self, PolylineError> {
        if points.len() < 2 {
            return Err(PolylineError::TooShort(points.len()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for i in 1..points.len() {
            let p = points[i];
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(PolylineError::NonFinite(i));
            }
            let d = p.distance(points[i - 1]);
            if d <= 0.0 {
                return Err(PolylineError::Duplicate(i - 1, i));
            }
            cumulative.push(cumulative[i - 1] + d);
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len();
        match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Point at arclength `s`; beyond either end the end segment is
    /// extended in a straight line.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let i = self.segment_at(s.clamp(0.0, self.length()));
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        a.lerp(b, (s - self.cumulative[i]) / seg)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s.clamp(0.0, self.length()));
        (self.points[i + 1] - self.points[i]).heading()
    }

    /// Nearest point on the polyline, optionally restricted to segments that
    /// overlap the arclength window `[lo, hi]`.
    pub fn project(&self, p: Vec2, window: Option<(f64, f64)>) -> Projection {
        let n = self.points.len();
        let (first, last) = match window {
            Some((lo, hi)) => (self.segment_at(lo.max(0.0)), self.segment_at(hi.min(self.length()))),
            None => (0, n - 2),
        };
        let mut best: Option<Projection> = None;
        for i in first..=last {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let ab = b - a;
            let seg_len = self.cumulative[i + 1] - self.cumulative[i];
            let t = ((p - a).dot(ab) / (seg_len * seg_len)).clamp(0.0, 1.0);
            let q = a.lerp(b, t);
            let distance = p.distance(q);
            if best.is_none_or(|b| distance < b.distance) {
                let signed_offset = (p - q).dot(right_normal(ab.heading()));
                best = Some(Projection {
                    s: self.cumulative[i] + t * seg_len,
                    point: q,
                    distance,
                    signed_offset: if distance == 0.0 { 0.0 } else { signed_offset },
                    segment: i,
                });
            }
        }
        best.expect("at least one segment")
    }
}
