//! 2-D primitives and intersection predicates.
//!
//! All quantities are double-precision meters. Overlap predicates use
//! open-set semantics: two shapes overlap only if their interiors share a
//! point, so boundary tangency never counts. That choice makes an inscribed
//! torso occupy exactly one grid cell at maximal packing. `EPS` is the
//! tolerance for degenerate comparisons.

use serde::{Deserialize, Serialize};

/// Tolerance for degenerate geometric comparisons, in meters.
pub const EPS: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Vec2

#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Z component of the 3-D cross product; positive when `other` is
    /// counterclockwise of `self`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the same direction, or `None` for a (near-)zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        if n < EPS {
            None
        } else {
            Some(self / n)
        }
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Angle against the +x axis in (-pi, pi].
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn from_angle(theta: f64) -> Vec2 {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
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

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl std::ops::Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl std::ops::Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl std::ops::AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl std::ops::SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::PI;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

// ---------------------------------------------------------------------------
// Circle

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Circle {
    pub center: Vec2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Vec2, radius: f64) -> Self {
        debug_assert!(radius > 0.0);
        Circle { center, radius }
    }

    /// Open-disk containment.
    pub fn contains(&self, p: Vec2) -> bool {
        self.center.distance(p) < self.radius - EPS
    }
}

// ---------------------------------------------------------------------------
// CircularSector

/// Circular sector: every point within `radius` of `apex` whose direction
/// from the apex deviates from `heading` by at most `half_angle`.
/// `half_angle` is clamped to pi on construction; at exactly pi the sector
/// degenerates to the full disk.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct CircularSector {
    pub apex: Vec2,
    pub radius: f64,
    pub heading: f64,
    pub half_angle: f64,
}

impl CircularSector {
    pub fn new(apex: Vec2, radius: f64, heading: f64, half_angle: f64) -> Self {
        debug_assert!(radius > 0.0);
        debug_assert!(half_angle > 0.0);
        CircularSector {
            apex,
            radius,
            heading,
            half_angle: half_angle.min(std::f64::consts::PI),
        }
    }

    fn is_full_disk(&self) -> bool {
        self.half_angle >= std::f64::consts::PI - 1e-12
    }

    /// Closed containment (boundary included up to EPS slack).
    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.apex;
        let dist = d.norm();
        if dist > self.radius + EPS {
            return false;
        }
        if dist < EPS || self.is_full_disk() {
            return true;
        }
        let dev = wrap_angle(d.angle() - self.heading).abs();
        dev <= self.half_angle + 1e-12
    }

    fn edge_endpoints(&self) -> (Vec2, Vec2) {
        (
            self.apex + Vec2::from_angle(self.heading - self.half_angle) * self.radius,
            self.apex + Vec2::from_angle(self.heading + self.half_angle) * self.radius,
        )
    }

    /// Distance from `p` to the closed sector; zero when inside.
    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let d = p - self.apex;
        let dist = d.norm();
        if dist < EPS {
            return 0.0;
        }
        if self.is_full_disk() {
            return (dist - self.radius).max(0.0);
        }
        let dev = wrap_angle(d.angle() - self.heading).abs();
        if dev <= self.half_angle {
            return (dist - self.radius).max(0.0);
        }
        // Closest point lies on one of the radial edges.
        let (e1, e2) = self.edge_endpoints();
        point_segment_distance(p, self.apex, e1).min(point_segment_distance(p, self.apex, e2))
    }

    /// Maximum distance from `p` to any point of the sector. Attained at the
    /// apex or on the arc; the arc maximum has a closed form.
    pub fn max_distance_from(&self, p: Vec2) -> f64 {
        let a = self.apex - p;
        let an = a.norm();
        // max over arc of |a + radius*u(theta)|^2 = |a|^2 + r^2 + 2 r max(a.u)
        let best_dot = if an < EPS || self.is_full_disk() {
            an
        } else {
            let dev = wrap_angle(a.angle() - self.heading);
            let clamped = dev.clamp(-self.half_angle, self.half_angle);
            an * (dev - clamped).cos()
        };
        let arc_max = (an * an + self.radius * self.radius + 2.0 * self.radius * best_dot).sqrt();
        arc_max.max(an)
    }
}

// ---------------------------------------------------------------------------
// Polygon

/// Simple polygon given by its ordered vertices (either winding).
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> crate::Result<Self> {
        if vertices.len() < 3 {
            return Err(crate::Error::Geometry(format!(
                "polygon needs >= 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::Geometry(
                "polygon vertex with non-finite coordinate".into(),
            ));
        }
        let poly = Polygon { vertices };
        if poly.is_self_intersecting() {
            return Err(crate::Error::Geometry("polygon is self-intersecting".into()));
        }
        Ok(poly)
    }

    pub fn axis_aligned_rect(min: Vec2, max: Vec2) -> Self {
        Polygon {
            vertices: vec![
                min,
                Vec2::new(max.x, min.y),
                max,
                Vec2::new(min.x, max.y),
            ],
        }
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn is_self_intersecting(&self) -> bool {
        let edges: Vec<_> = self.edges().collect();
        let n = edges.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // Skip adjacent edges (they share a vertex).
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if segments_properly_cross(a, b, c, d) {
                    return true;
                }
            }
        }
        false
    }

    pub fn bbox(&self) -> (Vec2, Vec2) {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    }

    /// Area centroid (falls back to the vertex mean for near-zero area).
    pub fn centroid(&self) -> Vec2 {
        let mut area2 = 0.0;
        let mut acc = Vec2::ZERO;
        for (a, b) in self.edges() {
            let w = a.cross(b);
            area2 += w;
            acc += (a + b) * w;
        }
        if area2.abs() < EPS {
            let mut mean = Vec2::ZERO;
            for v in &self.vertices {
                mean += *v;
            }
            return mean / self.vertices.len() as f64;
        }
        acc / (3.0 * area2)
    }

    /// Even-odd containment; points on the boundary count as inside.
    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(p, self)
    }

    /// Distance from `p` to the closed polygon region (zero when inside).
    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.boundary_distance(p)
    }

    /// Distance from `p` to the polygon boundary, regardless of side.
    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// True when `p` is inside with more than EPS clearance to the boundary.
    pub fn contains_strictly(&self, p: Vec2) -> bool {
        self.contains(p) && self.boundary_distance(p) > EPS
    }
}

// ---------------------------------------------------------------------------
// Point / segment predicates

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq < EPS * EPS {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

pub fn segment_segment_distance(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    if segments_properly_cross(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Sign of the turn a->b->c with an EPS-scaled dead zone around zero.
fn orient(a: Vec2, b: Vec2, c: Vec2) -> i32 {
    let v = (b - a).cross(c - a);
    let scale = (b - a).norm().max(1.0) * (c - a).norm().max(1.0);
    if v > EPS * scale {
        1
    } else if v < -EPS * scale {
        -1
    } else {
        0
    }
}

/// Transversal crossing of segments (a,b) and (c,d): both segments strictly
/// straddle the other's supporting line. Collinear overlap and endpoint
/// touches do not count.
pub fn segments_properly_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0 && o3 * o4 < 0
}

/// Even-odd ray-cast containment; boundary points (within EPS) are inside.
pub fn point_in_polygon(p: Vec2, poly: &Polygon) -> bool {
    for (a, b) in poly.edges() {
        if point_segment_distance(p, a, b) <= EPS {
            return true;
        }
    }
    let mut inside = false;
    for (a, b) in poly.edges() {
        if (a.y > p.y) != (b.y > p.y) {
            let t = (p.y - a.y) / (b.y - a.y);
            let x = a.x + t * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

// ---------------------------------------------------------------------------
// Overlap predicates (open-set semantics)

/// True iff the open disk and the open interior of a convex cell polygon
/// share a point. Tangency is not overlap, so a torso inscribed in a cell
/// overlaps that cell only.
pub fn circle_cell_overlap(c: &Circle, cell_bounds: &Polygon) -> bool {
    cell_bounds.distance_to_point(c.center) < c.radius - EPS
}

/// Interior intersection of two simple polygons. Detected through strict
/// vertex containment and proper boundary crossings, so shapes that only
/// share boundary (e.g. a wall running along a cell edge) do not intersect.
pub fn polygons_interior_intersect(a: &Polygon, b: &Polygon) -> bool {
    let (amin, amax) = a.bbox();
    let (bmin, bmax) = b.bbox();
    if amin.x > bmax.x + EPS || bmin.x > amax.x + EPS || amin.y > bmax.y + EPS || bmin.y > amax.y + EPS
    {
        return false;
    }
    if a.vertices().iter().any(|&v| b.contains_strictly(v)) {
        return true;
    }
    if b.vertices().iter().any(|&v| a.contains_strictly(v)) {
        return true;
    }
    // Containment with every vertex on the other's boundary (e.g. a grid
    // cell inside a wall whose width is a multiple of the cell size) leaves
    // no strict vertex and no crossing; the centroids catch it. A centroid
    // only counts if it lies in its own polygon (nonconvex shapes can have
    // it outside).
    let ca = a.centroid();
    let cb = b.centroid();
    if b.contains(cb) && a.contains_strictly(cb) {
        return true;
    }
    if a.contains(ca) && b.contains_strictly(ca) {
        return true;
    }
    for (p, q) in a.edges() {
        for (r, s) in b.edges() {
            if segments_properly_cross(p, q, r, s) {
                return true;
            }
        }
    }
    false
}

/// Does the open segment interior of (a,b) pass through the polygon interior?
pub fn segment_intersects_polygon_interior(a: Vec2, b: Vec2, poly: &Polygon) -> bool {
    if poly.contains_strictly(a) || poly.contains_strictly(b) {
        return true;
    }
    for (p, q) in poly.edges() {
        if segments_properly_cross(a, b, p, q) {
            return true;
        }
    }
    // Both endpoints outside/boundary and no proper crossing: the segment can
    // still run through the interior if it enters and exits via vertices.
    // Check the midpoint of each sub-segment cut by boundary touch points.
    let mid = (a + b) * 0.5;
    poly.contains_strictly(mid)
}

/// Minimum distance between a segment and a polygon region (zero if the
/// segment touches or enters it).
pub fn segment_polygon_clearance(a: Vec2, b: Vec2, poly: &Polygon) -> f64 {
    if segment_intersects_polygon_interior(a, b, poly) || poly.contains(a) || poly.contains(b) {
        return 0.0;
    }
    poly.edges()
        .map(|(p, q)| segment_segment_distance(a, b, p, q))
        .fold(f64::INFINITY, f64::min)
}

/// A region a propagation segment can be tested against.
#[derive(Clone, Debug)]
pub enum RegionShape<'a> {
    Polygon(&'a Polygon),
    Circle(Circle),
}

/// True iff the sector area and the region area share an interior point.
pub fn sector_region_intersects(s: &CircularSector, region: &RegionShape<'_>) -> bool {
    match region {
        RegionShape::Circle(c) => sector_circle_intersects(s, c),
        RegionShape::Polygon(p) => sector_polygon_intersects(s, p),
    }
}

/// Open intersection of a sector and a disk.
pub fn sector_circle_intersects(s: &CircularSector, c: &Circle) -> bool {
    s.distance_to_point(c.center) < c.radius - EPS
}

/// True when some part of the sector lies strictly outside the closed disk.
/// Used to detect propagation segments that leave a zone's outer boundary.
pub fn sector_escapes_disk(s: &CircularSector, disk: &Circle) -> bool {
    s.max_distance_from(disk.center) > disk.radius + EPS
}

/// Open intersection of a sector and a simple polygon.
///
/// Cases: apex strictly inside the polygon (covers "sector inside region"),
/// a polygon vertex strictly inside the sector (covers "region inside
/// sector"), or a polygon edge passing through the sector interior. The
/// edge test intersects the parametric intervals where the edge is strictly
/// inside the disk and inside the angular cone; for half-angles above pi/2
/// the cone is handled through its convex complement.
pub fn sector_polygon_intersects(s: &CircularSector, poly: &Polygon) -> bool {
    if poly.contains_strictly(s.apex) {
        return true;
    }
    if poly
        .vertices()
        .iter()
        .any(|&v| sector_interior_depth(s, v) > EPS)
    {
        return true;
    }
    poly.edges()
        .any(|(a, b)| segment_passes_through_sector(s, a, b))
}

/// Depth of `p` inside the sector (0 when outside). For a full disk the
/// radial edges are internal, so only the arc bounds the depth.
fn sector_interior_depth(s: &CircularSector, p: Vec2) -> f64 {
    let d = p - s.apex;
    let dist = d.norm();
    if dist > s.radius {
        return 0.0;
    }
    let radial = s.radius - dist;
    if s.is_full_disk() {
        return radial.max(0.0);
    }
    if dist < EPS {
        return 0.0; // apex is a boundary point
    }
    let dev = wrap_angle(d.angle() - s.heading).abs();
    if dev > s.half_angle {
        return 0.0;
    }
    let (e1, e2) = s.edge_endpoints();
    radial
        .min(point_segment_distance(p, s.apex, e1))
        .min(point_segment_distance(p, s.apex, e2))
        .max(0.0)
}

/// Intervals of t in [0,1] (sorted, disjoint) — tiny helper for the edge
/// clipping below.
type Intervals = Vec<(f64, f64)>;

fn intersect_intervals(a: &Intervals, b: &Intervals) -> Intervals {
    let mut out = Vec::new();
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                out.push((lo, hi));
            }
        }
    }
    out
}

fn segment_passes_through_sector(s: &CircularSector, a: Vec2, b: Vec2) -> bool {
    let ab = b - a;
    let len = ab.norm();
    if len < EPS {
        return false;
    }

    // Interval strictly inside the open disk.
    let rel = a - s.apex;
    let qa = ab.norm_sq();
    let qb = 2.0 * rel.dot(ab);
    let qc = rel.norm_sq() - s.radius * s.radius;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return false;
    }
    let sq = disc.sqrt();
    let t0 = ((-qb - sq) / (2.0 * qa)).max(0.0);
    let t1 = ((-qb + sq) / (2.0 * qa)).min(1.0);
    if t1 <= t0 {
        return false;
    }
    let disk_iv: Intervals = vec![(t0, t1)];

    let inside = if s.is_full_disk() {
        disk_iv
    } else if s.half_angle <= std::f64::consts::FRAC_PI_2 {
        // Convex cone: intersection of two half-planes through the apex.
        let n1 = Vec2::from_angle(s.heading + s.half_angle - std::f64::consts::FRAC_PI_2);
        let n2 = Vec2::from_angle(s.heading - s.half_angle + std::f64::consts::FRAC_PI_2);
        let iv1 = halfplane_interval(s.apex, n1, a, ab);
        let iv2 = halfplane_interval(s.apex, n2, a, ab);
        intersect_intervals(&intersect_intervals(&disk_iv, &iv1), &iv2)
    } else {
        // Reflex cone: complement of the convex cone around -heading with
        // half-angle pi - half_angle.
        let beta = std::f64::consts::PI - s.half_angle;
        let back = s.heading + std::f64::consts::PI;
        let n1 = Vec2::from_angle(back + beta - std::f64::consts::FRAC_PI_2);
        let n2 = Vec2::from_angle(back - beta + std::f64::consts::FRAC_PI_2);
        let iv1 = halfplane_interval(s.apex, n1, a, ab);
        let iv2 = halfplane_interval(s.apex, n2, a, ab);
        let in_complement = intersect_intervals(&iv1, &iv2);
        intersect_intervals(&disk_iv, &subtract_intervals((t0, t1), &in_complement))
    };

    inside.iter().any(|&(lo, hi)| (hi - lo) * len > EPS)
}

/// Interval of t where a + t*ab satisfies n.(x - origin) > 0.
fn halfplane_interval(origin: Vec2, n: Vec2, a: Vec2, ab: Vec2) -> Intervals {
    let f0 = n.dot(a - origin);
    let df = n.dot(ab);
    if df.abs() < 1e-15 {
        return if f0 > 0.0 { vec![(0.0, 1.0)] } else { vec![] };
    }
    let t_cross = -f0 / df;
    if df > 0.0 {
        let lo = t_cross.max(0.0);
        if lo < 1.0 {
            vec![(lo, 1.0)]
        } else {
            vec![]
        }
    } else {
        let hi = t_cross.min(1.0);
        if hi > 0.0 {
            vec![(0.0, hi)]
        } else {
            vec![]
        }
    }
}

fn subtract_intervals(base: (f64, f64), cut: &Intervals) -> Intervals {
    let mut pieces = vec![base];
    for &(c0, c1) in cut {
        let mut next = Vec::new();
        for (p0, p1) in pieces {
            if c1 <= p0 || c0 >= p1 {
                next.push((p0, p1));
            } else {
                if c0 > p0 {
                    next.push((p0, c0));
                }
                if c1 < p1 {
                    next.push((c1, p1));
                }
            }
        }
        pieces = next;
    }
    pieces
}
