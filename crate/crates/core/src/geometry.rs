//! Planar primitives: poses, map/agent vectors, polylines, path projection and
//! footprint collision.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Express `self` (given in world coordinates) in the coordinates of `frame`.
    pub fn transform_to_frame(&self, frame: &Pose2D) -> Pose2D {
        let (s, c) = frame.theta.sin_cos();
        let dx = self.x - frame.x;
        let dy = self.y - frame.y;
        Pose2D::new(c * dx + s * dy, -s * dx + c * dy, self.theta - frame.theta)
    }

    /// Inverse of [`Pose2D::transform_to_frame`]: lift a pose given in `frame`
    /// coordinates back to world coordinates.
    pub fn transform_from_frame(&self, frame: &Pose2D) -> Pose2D {
        let (s, c) = frame.theta.sin_cos();
        Pose2D::new(
            frame.x + c * self.x - s * self.y,
            frame.y + s * self.x + c * self.y,
            self.theta + frame.theta,
        )
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Free function form of [`Pose2D::transform_to_frame`].
pub fn transform_to_frame(point: &Pose2D, frame: &Pose2D) -> Pose2D {
    point.transform_to_frame(frame)
}

/// Map element vector `[x, y, theta, lane_width, k]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticVector {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub lane_width: f64,
    pub index: u32,
}

impl StaticVector {
    pub const LEN: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.theta, self.lane_width, self.index as f64]
    }
}

/// Agent history vector `[x, y, theta, v, h]`, optionally followed by the
/// agent's delivered SVO in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicVector {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub speed: f64,
    pub history_index: u32,
    pub svo: Option<f64>,
}

impl DynamicVector {
    pub fn serialized_len(&self) -> usize {
        if self.svo.is_some() {
            6
        } else {
            5
        }
    }

    pub fn write_f32(&self, out: &mut Vec<f32>) {
        out.extend_from_slice(&[
            self.x as f32,
            self.y as f32,
            self.theta as f32,
            self.speed as f32,
            self.history_index as f32,
        ]);
        if let Some(svo) = self.svo {
            out.push(svo as f32);
        }
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D {
            x: self.x,
            y: self.y,
            theta: self.theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    Centerline,
    Sideline,
    GlobalPath,
    AgentHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline<V> {
    pub kind: PolylineKind,
    pub vectors: Vec<V>,
}

pub type StaticPolyline = Polyline<StaticVector>;
pub type DynamicPolyline = Polyline<DynamicVector>;

impl<V> Polyline<V> {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl StaticPolyline {
    /// Build a static polyline from raw points; headings point towards the
    /// next point (the last vector reuses the previous heading).
    pub fn from_points(kind: PolylineKind, points: &[[f64; 2]], lane_width: f64) -> Self {
        let n = points.len();
        let mut vectors = Vec::with_capacity(n);
        let mut heading = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i + 1 < n {
                let q = points[i + 1];
                heading = (q[1] - p[1]).atan2(q[0] - p[0]);
            }
            vectors.push(StaticVector {
                x: p[0],
                y: p[1],
                theta: heading,
                lane_width,
                index: i as u32,
            });
        }
        Self { kind, vectors }
    }

    /// Largest distance between consecutive vectors.
    pub fn max_spacing(&self) -> f64 {
        self.vectors
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    pub arclength: f64,
    pub lateral_offset: f64,
    pub segment_heading: f64,
    /// True when the closest point is an endpoint reached by clamping.
    pub clamped: bool,
}

/// Precomputed segment data for fast, repeated projection onto a path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGeometry {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    headings: Vec<f64>,
    lane_width: f64,
    min: [f64; 2],
    max: [f64; 2],
}

impl PathGeometry {
    /// Panics if the polyline has fewer than two vectors.
    pub fn new(path: &StaticPolyline) -> Self {
        assert!(path.vectors.len() >= 2, "path needs at least two vectors");
        let points: Vec<[f64; 2]> = path.vectors.iter().map(|v| [v.x, v.y]).collect();
        let mut cumulative = Vec::with_capacity(points.len());
        let mut headings = Vec::with_capacity(points.len() - 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            let dx = w[1][0] - w[0][0];
            let dy = w[1][1] - w[0][1];
            acc += dx.hypot(dy);
            cumulative.push(acc);
            headings.push(dy.atan2(dx));
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &points {
            min[0] = min[0].min(p[0]);
            min[1] = min[1].min(p[1]);
            max[0] = max[0].max(p[0]);
            max[1] = max[1].max(p[1]);
        }
        Self {
            points,
            cumulative,
            headings,
            lane_width: path.vectors[0].lane_width,
            min,
            max,
        }
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Distance from `p` to the axis-aligned bounding box of the path.
    pub fn bbox_distance(&self, p: [f64; 2]) -> f64 {
        let dx = (self.min[0] - p[0]).max(p[0] - self.max[0]).max(0.0);
        let dy = (self.min[1] - p[1]).max(p[1] - self.max[1]).max(0.0);
        dx.hypot(dy)
    }

    fn segments(&self) -> usize {
        self.headings.len()
    }

    /// First segment whose end lies at or beyond arclength `s`.
    fn segment_at(&self, s: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c < s);
        idx.saturating_sub(1).min(self.segments() - 1)
    }

    pub fn project(&self, p: [f64; 2]) -> PathProjection {
        self.project_segments(p, 0, self.segments() - 1)
    }

    /// Project onto the part of the path between arclengths `lo` and `hi`.
    pub fn project_window(&self, p: [f64; 2], lo: f64, hi: f64) -> PathProjection {
        let lo = lo.clamp(0.0, self.total_length());
        let hi = hi.clamp(lo, self.total_length());
        let first = self.segment_at(lo);
        let last = self.segment_at(hi).max(first);
        self.project_range(p, first, last, lo, hi)
    }

    fn project_segments(&self, p: [f64; 2], first: usize, last: usize) -> PathProjection {
        self.project_range(p, first, last, 0.0, self.total_length())
    }

    fn project_range(&self, p: [f64; 2], first: usize, last: usize, lo: f64, hi: f64) -> PathProjection {
        let mut best_d2 = f64::INFINITY;
        let mut best = (first, 0.0);
        for i in first..=last {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let seg_len = self.cumulative[i + 1] - self.cumulative[i];
            let (t_lo, t_hi) = if seg_len > 0.0 {
                (
                    ((lo - self.cumulative[i]) / seg_len).clamp(0.0, 1.0),
                    ((hi - self.cumulative[i]) / seg_len).clamp(0.0, 1.0),
                )
            } else {
                (0.0, 0.0)
            };
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(t_lo, t_hi)
            } else {
                0.0
            };
            let cx = a[0] + t * ab[0] - p[0];
            let cy = a[1] + t * ab[1] - p[1];
            let d2 = cx * cx + cy * cy;
            // strict comparison keeps ties on the lower arclength
            if d2 < best_d2 {
                best_d2 = d2;
                best = (i, t);
            }
        }
        let (i, t) = best;
        let a = self.points[i];
        let heading = self.headings[i];
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let arclength = self.cumulative[i] + t * seg_len;
        let (s, c) = heading.sin_cos();
        let lateral = c * (p[1] - a[1]) - s * (p[0] - a[0]);
        let clamped =
            (i == 0 && t <= 0.0) || (i + 1 == self.points.len() - 1 && t >= 1.0) || seg_len == 0.0;
        PathProjection {
            arclength,
            lateral_offset: lateral,
            segment_heading: heading,
            clamped,
        }
    }

    /// Pose on the path at arclength `s` (clamped), heading of the segment.
    pub fn pose_at(&self, s: f64) -> Pose2D {
        let s = s.clamp(0.0, self.total_length());
        let i = self.segment_at(s);
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg_len > 0.0 {
            ((s - self.cumulative[i]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let a = self.points[i];
        let b = self.points[i + 1];
        Pose2D::new(
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            self.headings[i],
        )
    }
}

/// Closest-point projection of `point` onto `path`. Arclength is clamped to
/// `[0, total_length]`; the lateral offset is positive to the left.
pub fn project_onto_path(point: (f64, f64), path: &StaticPolyline) -> PathProjection {
    PathGeometry::new(path).project([point.0, point.1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2D,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2D, length: f64, width: f64) -> Self {
        Self {
            center,
            length,
            width,
        }
    }

    /// Corners counter-clockwise starting at front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.center.theta.sin_cos();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let f = [c * hl, s * hl];
        let l = [-s * hw, c * hw];
        let (x, y) = (self.center.x, self.center.y);
        [
            [x + f[0] + l[0], y + f[1] + l[1]],
            [x - f[0] + l[0], y - f[1] + l[1]],
            [x - f[0] - l[0], y - f[1] - l[1]],
            [x + f[0] - l[0], y + f[1] - l[1]],
        ]
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.center.theta.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Radius of the circumscribed circle.
    pub fn bounding_radius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

/// Separating-axis test over both boxes' edge normals. Touching counts as
/// overlap.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    for axis in a.axes().iter().chain(b.axes().iter()) {
        let (amin, amax) = project_corners(&ca, axis);
        let (bmin, bmax) = project_corners(&cb, axis);
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

fn project_corners(corners: &[[f64; 2]; 4], axis: &[f64; 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let d = c[0] * axis[0] + c[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Simple polygon (not necessarily convex), vertices in order, implicitly
/// closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
    min: [f64; 2],
    max: [f64; 2],
}

impl From<Vec<[f64; 2]>> for Polygon {
    fn from(vertices: Vec<[f64; 2]>) -> Self {
        Polygon::new(vertices)
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for v in &vertices {
            min[0] = min[0].min(v[0]);
            min[1] = min[1].min(v[1]);
            max[0] = max[0].max(v[0]);
            max[1] = max[1].max(v[1]);
        }
        Self { vertices, min, max }
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (self.min, self.max)
    }

    /// Even-odd ray casting.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        if p[0] < self.min[0] || p[0] > self.max[0] || p[1] < self.min[1] || p[1] > self.max[1] {
            return false;
        }
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let vi = self.vertices[i];
            let vj = self.vertices[j];
            if (vi[1] > p[1]) != (vj[1] > p[1]) {
                let x = vj[0] + (p[1] - vj[1]) * (vi[0] - vj[0]) / (vi[1] - vj[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| point_segment_distance(p, self.vertices[i], self.vertices[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a[0] + t * ab[0] - p[0]).hypot(a[1] + t * ab[1] - p[1])
}

/// Point membership in a union of polygons.
pub fn union_contains(polygons: &[Polygon], p: [f64; 2]) -> bool {
    polygons.iter().any(|poly| poly.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn straight(len: f64) -> StaticPolyline {
        let pts: Vec<[f64; 2]> = (0..=(len as usize)).map(|i| [i as f64, 0.0]).collect();
        StaticPolyline::from_points(PolylineKind::GlobalPath, &pts, 4.0)
    }

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(2.5 * PI), 0.5 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-2.5 * PI), -0.5 * PI, epsilon = 1e-12);
    }

    #[test]
    fn transform_identity_frame() {
        let p = Pose2D::new(3.0, 4.0, 0.5);
        assert_eq!(p.transform_to_frame(&Pose2D::origin()), p);
    }

    #[test]
    fn transform_rotated_frame() {
        let p = Pose2D::new(1.0, 1.0, PI / 2.0);
        let f = Pose2D::new(1.0, 0.0, PI / 2.0);
        let q = transform_to_frame(&p, &f);
        assert_abs_diff_eq!(q.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.theta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_examples() {
        let path = straight(10.0);
        let p = project_onto_path((0.0, 0.0), &path);
        assert_eq!((p.arclength, p.lateral_offset), (0.0, 0.0));
        let p = project_onto_path((5.0, 2.0), &path);
        assert_abs_diff_eq!(p.arclength, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.lateral_offset, 2.0, epsilon = 1e-12);
        let p = project_onto_path((-3.0, 0.0), &path);
        assert_eq!(p.arclength, 0.0);
        assert_eq!(p.lateral_offset, 0.0);
        assert!(p.clamped);
        let p = project_onto_path((14.0, -1.0), &path);
        assert_eq!(p.arclength, 10.0);
        assert_abs_diff_eq!(p.lateral_offset, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_tie_prefers_lower_arclength() {
        // U-shaped path: the point (5, 5) is equidistant from both legs.
        let pts = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
        let path = StaticPolyline::from_points(PolylineKind::GlobalPath, &pts, 4.0);
        let p = project_onto_path((5.0, 5.0), &path);
        assert_abs_diff_eq!(p.arclength, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn window_projection_restricts_segments() {
        let path = PathGeometry::new(&straight(20.0));
        let p = path.project_window([2.0, 0.5], 10.0, 15.0);
        assert_abs_diff_eq!(p.arclength, 10.0, epsilon = 1e-12);
        let pose = path.pose_at(7.25);
        assert_abs_diff_eq!(pose.x, 7.25, epsilon = 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let a = OrientedBox::new(Pose2D::origin(), 5.0, 2.0);
        assert!(boxes_overlap(&a, &a));
        let far = OrientedBox::new(Pose2D::new(100.0, 0.0, 0.3), 5.0, 2.0);
        assert!(!boxes_overlap(&a, &far));
        let a = OrientedBox::new(Pose2D::origin(), 4.0, 2.0);
        let b = OrientedBox::new(Pose2D::new(4.0, 0.0, 0.0), 4.0, 2.0);
        assert!(boxes_overlap(&a, &b));
        let c = OrientedBox::new(Pose2D::new(4.0 + 1e-9, 0.0, 0.0), 4.0, 2.0);
        assert!(!boxes_overlap(&a, &c));
    }

    #[test]
    fn polygon_contains() {
        let sq = Polygon::rectangle(0.0, 0.0, 2.0, 2.0);
        assert!(sq.contains([1.0, 1.0]));
        assert!(!sq.contains([3.0, 1.0]));
        // concave L shape
        let l = Polygon::new(vec![[0.0, 0.0], [4.0, 0.0], [4.0, 1.0], [1.0, 1.0], [1.0, 4.0], [0.0, 4.0]]);
        assert!(l.contains([0.5, 3.0]));
        assert!(!l.contains([3.0, 3.0]));
        assert_abs_diff_eq!(sq.boundary_distance([1.0, 1.5]), 0.5, epsilon = 1e-12);
    }
}
