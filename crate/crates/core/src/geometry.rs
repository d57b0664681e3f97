//! Obstacles and collision predicates between chain links and the scene.
//!
//! Boundary contact always counts as a collision.

use nalgebra::{Point2, Point3, Vector2, Vector3};
use thiserror::Error;

use crate::kinematics::{KinematicChain, KinematicsError, LinkSegment, Posture};
use crate::planner::PlannerConfig;

/// Relative slack used when a computed distance is compared against zero.
const CONTACT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid obstacle field `{field}`: {reason}")]
    InvalidObstacle { field: String, reason: String },
    #[error("invalid scene field `{field}`: {reason}")]
    InvalidScene { field: String, reason: String },
    #[error("start posture collides: link {} touches obstacle {}", .0.link, .0.obstacle)]
    StartCollides(Contact),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

fn invalid_obstacle(field: impl Into<String>, reason: impl Into<String>) -> GeometryError {
    GeometryError::InvalidObstacle {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb<const D: usize> {
    min: [f64; D],
    max: [f64; D],
}

impl<const D: usize> Aabb<D> {
    fn from_points<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut min = [f64::INFINITY; D];
        let mut max = [f64::NEG_INFINITY; D];
        for p in points {
            for k in 0..D {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Self { min, max }
    }

    fn overlaps_segment(&self, a: &[f64], b: &[f64], pad: f64) -> bool {
        (0..D).all(|k| a[k].min(b[k]) - pad <= self.max[k] && a[k].max(b[k]) + pad >= self.min[k])
    }
}

/// Simple polygon obstacle in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point2<f64>>,
    bounds: Aabb<2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2<f64>>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(invalid_obstacle(
                "vertices",
                format!("a polygon needs at least 3 vertices, got {n}"),
            ));
        }
        if let Some(i) = vertices.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(invalid_obstacle(format!("vertices[{i}]"), "coordinates must be finite"));
        }
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(invalid_obstacle(
                    format!("vertices[{}]", (i + 1) % n),
                    "consecutive vertices must differ",
                ));
            }
        }
        let area2: f64 = (0..n)
            .map(|i| {
                let (p, q) = (vertices[i], vertices[(i + 1) % n]);
                p.x * q.y - q.x * p.y
            })
            .sum();
        if area2.abs() <= f64::EPSILON {
            return Err(invalid_obstacle("vertices", "polygon has zero area"));
        }
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            for j in i + 1..n {
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let crossing = if adjacent {
                    // Adjacent edges may only share their common vertex.
                    let (shared, p, r) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    orient(p, shared, r) == 0.0 && (p - shared).dot(&(r - shared)) > 0.0
                } else {
                    segments_intersect_2d(a, b, c, d)
                };
                if crossing {
                    return Err(invalid_obstacle(
                        "vertices",
                        format!("polygon is not simple: edges {i} and {j} intersect"),
                    ));
                }
            }
        }
        let bounds = Aabb::from_points(vertices.iter().map(|p| p.coords.as_slice()));
        Ok(Self { vertices, bounds })
    }

    /// Axis-aligned rectangle given by two opposite corners.
    pub fn rectangle(min: [f64; 2], max: [f64; 2]) -> Result<Self, GeometryError> {
        Self::new(vec![
            Point2::new(min[0], min[1]),
            Point2::new(max[0], min[1]),
            Point2::new(max[0], max[1]),
            Point2::new(min[0], max[1]),
        ])
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = (Point2<f64>, Point2<f64>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Strict interior test (even-odd rule); boundary points are handled by
    /// the edge predicates.
    pub fn contains_strict(&self, p: Point2<f64>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn translated(&self, offset: Vector2<f64>) -> Self {
        Self::new(self.vertices.iter().map(|p| p + offset).collect()).expect("translation preserves validity")
    }
}

/// Triangle mesh obstacle in space.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    bounds: Aabb<3>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if triangles.is_empty() {
            return Err(invalid_obstacle("triangles", "a mesh needs at least one triangle"));
        }
        if let Some(i) = vertices.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(invalid_obstacle(format!("vertices[{i}]"), "coordinates must be finite"));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&idx) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(invalid_obstacle(
                    format!("triangles[{t}]"),
                    format!("vertex index {idx} out of range ({} vertices)", vertices.len()),
                ));
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            let area2 = (b - a).cross(&(c - a)).norm();
            let scale = (b - a).norm_squared().max((c - a).norm_squared());
            if area2 <= 1e-12 * scale || scale == 0.0 {
                return Err(invalid_obstacle(format!("triangles[{t}]"), "triangle is degenerate"));
            }
        }
        let bounds = Aabb::from_points(vertices.iter().map(|p| p.coords.as_slice()));
        Ok(Self {
            vertices,
            triangles,
            bounds,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, i: usize) -> Triangle {
        let [a, b, c] = self.triangles[i].map(|k| self.vertices[k]);
        Triangle { a, b, c }
    }

    pub fn iter_triangles(&self) -> impl Iterator<Item = Triangle> + '_ {
        (0..self.triangles.len()).map(|i| self.triangle(i))
    }

    pub fn translated(&self, offset: Vector3<f64>) -> Self {
        Self::new(
            self.vertices.iter().map(|p| p + offset).collect(),
            self.triangles.clone(),
        )
        .expect("translation preserves validity")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub c: Point3<f64>,
}

fn orient(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment_2d(a: Point2<f64>, b: Point2<f64>, p: Point2<f64>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including touching and collinear
/// overlap. Degenerate (point) segments are supported.
pub fn segments_intersect_2d(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment_2d(c, d, a))
        || (d2 == 0.0 && on_segment_2d(c, d, b))
        || (d3 == 0.0 && on_segment_2d(a, b, c))
        || (d4 == 0.0 && on_segment_2d(a, b, d))
}

fn point_segment_distance_2d(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (p - (a + ab * t)).norm()
}

/// Euclidean distance between two closed segments in the plane.
pub fn segment_segment_distance_2d(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> f64 {
    if segments_intersect_2d(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance_2d(a, c, d)
        .min(point_segment_distance_2d(b, c, d))
        .min(point_segment_distance_2d(c, a, b))
        .min(point_segment_distance_2d(d, a, b))
}

/// True iff the closed segment `a`-`b` crosses or touches the polygon
/// boundary or lies inside it.
pub fn segment_intersects_polygon(a: Point2<f64>, b: Point2<f64>, polygon: &Polygon) -> bool {
    capsule_intersects_polygon(a, b, 0.0, polygon)
}

/// Segment thickened by `radius` against a polygon.
pub fn capsule_intersects_polygon(a: Point2<f64>, b: Point2<f64>, radius: f64, polygon: &Polygon) -> bool {
    if !polygon
        .bounds
        .overlaps_segment(a.coords.as_slice(), b.coords.as_slice(), radius)
    {
        return false;
    }
    if polygon.contains_strict(a) || polygon.contains_strict(b) {
        return true;
    }
    polygon.edges().any(|(c, d)| {
        if radius > 0.0 {
            segment_segment_distance_2d(a, b, c, d) <= radius
        } else {
            segments_intersect_2d(a, b, c, d)
        }
    })
}

/// Nearest point of the triangle to `p`.
pub fn closest_point_on_triangle(p: Point3<f64>, tri: &Triangle) -> Point3<f64> {
    let (a, b, c) = (tri.a, tri.b, tri.c);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

pub fn point_triangle_distance(p: Point3<f64>, tri: &Triangle) -> f64 {
    (p - closest_point_on_triangle(p, tri)).norm()
}

/// Distance between closed segments `p1`-`q1` and `p2`-`q2` in space.
pub fn segment_segment_distance(p1: Point3<f64>, q1: Point3<f64>, p2: Point3<f64>, q2: Point3<f64>) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.norm();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Minimum distance between the closed segment `a`-`b` and a triangle.
pub fn segment_triangle_distance(a: Point3<f64>, b: Point3<f64>, tri: &Triangle) -> f64 {
    let normal = (tri.b - tri.a).cross(&(tri.c - tri.a));
    let scale = normal.norm();
    let da = normal.dot(&(a - tri.a));
    let db = normal.dot(&(b - tri.a));
    if ((da <= 0.0 && db >= 0.0) || (da >= 0.0 && db <= 0.0)) && da != db {
        let t = da / (da - db);
        let hit = a + (b - a) * t;
        let extent = (tri.b - tri.a).norm().max((tri.c - tri.a).norm());
        if point_triangle_distance(hit, tri) <= CONTACT_EPS * extent.max(1.0) && scale > 0.0 {
            return 0.0;
        }
    }
    let mut best = point_triangle_distance(a, tri).min(point_triangle_distance(b, tri));
    for (p, q) in [(tri.a, tri.b), (tri.b, tri.c), (tri.c, tri.a)] {
        best = best.min(segment_segment_distance(a, b, p, q));
    }
    best
}

/// True iff the capsule (segment `a`-`b` with `radius`) touches the triangle.
pub fn capsule_intersects_triangle(a: Point3<f64>, b: Point3<f64>, radius: f64, tri: &Triangle) -> bool {
    segment_triangle_distance(a, b, tri) <= radius
}

fn capsule_intersects_mesh(seg: &LinkSegment, mesh: &TriMesh) -> bool {
    if !mesh
        .bounds
        .overlaps_segment(seg.start.coords.as_slice(), seg.end.coords.as_slice(), seg.radius)
    {
        return false;
    }
    mesh.iter_triangles()
        .any(|tri| capsule_intersects_triangle(seg.start, seg.end, seg.radius, &tri))
}

fn flat(p: &Point3<f64>) -> Point2<f64> {
    Point2::new(p.x, p.y)
}

/// A link/obstacle pair found in contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contact {
    pub link: usize,
    pub obstacle: usize,
}

/// Validated planning problem: chain, obstacles, start posture and goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    chain: KinematicChain,
    obstacles2d: Vec<Polygon>,
    obstacles3d: Vec<TriMesh>,
    start: Posture,
    goal: Point3<f64>,
    config: PlannerConfig,
}

impl Scene {
    pub fn new(
        chain: KinematicChain,
        obstacles2d: Vec<Polygon>,
        obstacles3d: Vec<TriMesh>,
        start: Posture,
        goal: Point3<f64>,
        config: PlannerConfig,
    ) -> Result<Self, GeometryError> {
        let bad = |field: &str, reason: &str| GeometryError::InvalidScene {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if chain.is_planar() && !obstacles3d.is_empty() {
            return Err(bad("obstacles", "planar chains take polygon obstacles only"));
        }
        if !chain.is_planar() && !obstacles2d.is_empty() {
            return Err(bad("obstacles", "spatial chains take mesh obstacles only"));
        }
        if start.len() != chain.dof() {
            return Err(bad("start", "start posture dimension does not match the chain"));
        }
        if !start.0.iter().all(|v| v.is_finite()) {
            return Err(bad("start", "joint angles must be finite"));
        }
        if !chain.within_limits(&start) {
            return Err(bad("start", "start posture violates joint limits"));
        }
        if !goal.coords.iter().all(|v| v.is_finite()) {
            return Err(bad("goal", "coordinates must be finite"));
        }
        if chain.is_planar() && goal.z != 0.0 {
            return Err(bad("goal", "planar scenes need a goal in the z = 0 plane"));
        }
        config.validate().map_err(|e| bad("planner", &e.to_string()))?;
        let scene = Self {
            chain,
            obstacles2d,
            obstacles3d,
            start,
            goal,
            config,
        };
        if let Some(contact) = scene.first_collision(&scene.chain, &scene.start)? {
            return Err(GeometryError::StartCollides(contact));
        }
        Ok(scene)
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn obstacles2d(&self) -> &[Polygon] {
        &self.obstacles2d
    }

    pub fn obstacles3d(&self) -> &[TriMesh] {
        &self.obstacles3d
    }

    pub fn obstacle_count(&self) -> usize {
        self.obstacles2d.len() + self.obstacles3d.len()
    }

    pub fn start(&self) -> &Posture {
        &self.start
    }

    pub fn goal(&self) -> Point3<f64> {
        self.goal
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Same obstacles and goal with another chain. The start posture must
    /// still be collision-free for that chain.
    pub fn with_chain(&self, chain: KinematicChain) -> Result<Self, GeometryError> {
        Self::new(
            chain,
            self.obstacles2d.clone(),
            self.obstacles3d.clone(),
            self.start.clone(),
            self.goal,
            self.config.clone(),
        )
    }

    pub fn with_config(&self, config: PlannerConfig) -> Result<Self, GeometryError> {
        Self::new(
            self.chain.clone(),
            self.obstacles2d.clone(),
            self.obstacles3d.clone(),
            self.start.clone(),
            self.goal,
            config,
        )
    }

    pub fn goal_distance(&self, q: &Posture) -> Result<f64, KinematicsError> {
        Ok((self.chain.end_effector(q)? - self.goal).norm())
    }

    /// First link/obstacle pair in contact at posture `q` for `chain`,
    /// scanning links in order and obstacles in order.
    pub fn first_collision(&self, chain: &KinematicChain, q: &Posture) -> Result<Option<Contact>, KinematicsError> {
        let segments = chain.link_segments(q)?;
        for (link, seg) in segments.iter().enumerate() {
            let (a, b) = (flat(&seg.start), flat(&seg.end));
            for (obstacle, poly) in self.obstacles2d.iter().enumerate() {
                if capsule_intersects_polygon(a, b, seg.radius, poly) {
                    return Ok(Some(Contact { link, obstacle }));
                }
            }
            for (obstacle, mesh) in self.obstacles3d.iter().enumerate() {
                if capsule_intersects_mesh(seg, mesh) {
                    return Ok(Some(Contact { link, obstacle }));
                }
            }
        }
        Ok(None)
    }
}

/// True iff any link of `chain` at `q` touches any obstacle of `scene`.
pub fn collides(chain: &KinematicChain, q: &Posture, scene: &Scene) -> Result<bool, KinematicsError> {
    Ok(scene.first_collision(chain, q)?.is_some())
}

/// Checks both endpoints and the interior points `t = i/k` for every
/// `k <= substeps` along the straight joint-space path. The interpolation runs from the lexicographically smaller
/// endpoint so the result is exactly symmetric in its arguments.
pub fn motion_collides(
    chain: &KinematicChain,
    from: &Posture,
    to: &Posture,
    scene: &Scene,
    substeps: usize,
) -> Result<bool, KinematicsError> {
    let substeps = substeps.max(1);
    if from.len() != chain.dof() || to.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            got: if from.len() != chain.dof() {
                from.len()
            } else {
                to.len()
            },
        });
    }
    let (a, b) = if from.0.partial_cmp(&to.0) == Some(std::cmp::Ordering::Greater) {
        (to, from)
    } else {
        (from, to)
    };
    // Endpoints first: they are the likeliest to be in contact.
    if collides(chain, b, scene)? || collides(chain, a, scene)? {
        return Ok(true);
    }
    if a == b {
        return Ok(false);
    }
    for t in interior_fractions(substeps) {
        if collides(chain, &a.lerp(b, t), scene)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Every reduced fraction `i/k` in (0, 1) with `k <= substeps`, ascending.
/// Raising `substeps` only adds points, so a detected contact never
/// disappears.
fn interior_fractions(substeps: usize) -> Vec<f64> {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut pairs: Vec<(usize, usize)> = (2..=substeps)
        .flat_map(|k| (1..k).filter(move |&i| gcd(i, k) == 1).map(move |i| (i, k)))
        .collect();
    pairs.sort_by(|&(i, k), &(j, l)| (i * l).cmp(&(j * k)));
    pairs.into_iter().map(|(i, k)| i as f64 / k as f64).collect()
}
