//! Reference computations written independently of the library: plain 4x4
//! matrices for kinematics, exact distance tests for geometry.

use ergoreach_core::{KinematicChain, Posture, Scene};
use nalgebra::{Matrix4, Point2, Point3, Vector2, Vector3};

/// Modified DH link transform, `Rx(alpha) Tx(d) Rz(theta) Tz(r)`, written out.
pub fn dh(alpha: f64, d: f64, theta: f64, r: f64) -> Matrix4<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (st, ct) = theta.sin_cos();
    #[rustfmt::skip]
    let m = Matrix4::new(
        ct,      -st,      0.0,  d,
        st * ca, ct * ca, -sa,  -r * sa,
        st * sa, ct * sa,  ca,   r * ca,
        0.0,     0.0,      0.0,  1.0,
    );
    m
}

/// Joint origins from the base through the tool point.
pub fn frame_points(chain: &KinematicChain, q: &[f64]) -> Vec<Point3<f64>> {
    let mut t = chain.base().to_homogeneous();
    let mut points = vec![origin(&t)];
    for (row, &angle) in chain.joints().iter().zip(q) {
        t *= dh(row.alpha, row.d, angle + row.theta_offset, row.r);
        points.push(origin(&t));
    }
    let tool = chain.tool();
    t *= dh(tool.alpha, tool.d, tool.theta_offset, tool.r);
    points.push(origin(&t));
    if chain.is_planar() {
        for p in &mut points {
            p.z = 0.0;
        }
    }
    points
}

fn origin(t: &Matrix4<f64>) -> Point3<f64> {
    Point3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
}

pub fn end_effector(chain: &KinematicChain, q: &[f64]) -> Point3<f64> {
    *frame_points(chain, q).last().unwrap()
}

pub fn goal_distance(scene: &Scene, q: &[f64]) -> f64 {
    (end_effector(scene.chain(), q) - scene.goal()).norm()
}

/// Link `i` runs from joint origin `i + 1` to the next (the last one to the
/// tool point).
pub fn links(chain: &KinematicChain, q: &[f64]) -> Vec<(Point3<f64>, Point3<f64>, f64)> {
    let p = frame_points(chain, q);
    (0..chain.dof())
        .map(|i| (p[i + 1], p[i + 2], chain.link_radius()[i]))
        .collect()
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn point_segment_2d(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let t = if ab.norm_squared() == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
    };
    (p - (a + ab * t)).norm()
}

fn segment_segment_2d(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> f64 {
    let o1 = cross2(b - a, c - a);
    let o2 = cross2(b - a, d - a);
    let o3 = cross2(d - c, a - c);
    let o4 = cross2(d - c, b - c);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return 0.0;
    }
    point_segment_2d(a, c, d)
        .min(point_segment_2d(b, c, d))
        .min(point_segment_2d(c, a, b))
        .min(point_segment_2d(d, a, b))
}

/// Even-odd rule; points on the boundary count as outside.
fn inside_polygon(p: Point2<f64>, poly: &[Point2<f64>]) -> bool {
    let mut inside = false;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn capsule_hits_polygon(a: Point2<f64>, b: Point2<f64>, radius: f64, poly: &[Point2<f64>]) -> bool {
    if inside_polygon(a, poly) || inside_polygon(b, poly) {
        return true;
    }
    (0..poly.len()).any(|i| segment_segment_2d(a, b, poly[i], poly[(i + 1) % poly.len()]) <= radius)
}

fn point_segment_3d(p: Point3<f64>, a: Point3<f64>, b: Point3<f64>) -> f64 {
    let ab = b - a;
    let t = if ab.norm_squared() == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
    };
    (p - (a + ab * t)).norm()
}

/// Distance from a point to a solid triangle: the plane distance when the
/// projection falls inside, otherwise the nearest edge.
fn point_triangle(p: Point3<f64>, t: [Point3<f64>; 3]) -> f64 {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let area = n.norm();
    if area > 0.0 {
        let n = n / area;
        let h = (p - t[0]).dot(&n);
        let proj = p - n * h;
        let inside = (0..3).all(|i| {
            let (u, v) = (t[i], t[(i + 1) % 3]);
            (v - u).cross(&(proj - u)).dot(&n) >= 0.0
        });
        if inside {
            return h.abs();
        }
    }
    (0..3)
        .map(|i| point_segment_3d(p, t[i], t[(i + 1) % 3]))
        .fold(f64::INFINITY, f64::min)
}

/// Segment-segment distance by minimising over one parameter with the other
/// clamped, evaluated at every critical candidate.
fn segment_segment_3d(a: Point3<f64>, b: Point3<f64>, c: Point3<f64>, d: Point3<f64>) -> f64 {
    let mut best = point_segment_3d(a, c, d)
        .min(point_segment_3d(b, c, d))
        .min(point_segment_3d(c, a, b))
        .min(point_segment_3d(d, a, b));
    let (u, v, w) = (b - a, d - c, a - c);
    let (uu, uv, vv, uw, vw) = (u.dot(&u), u.dot(&v), v.dot(&v), u.dot(&w), v.dot(&w));
    let den = uu * vv - uv * uv;
    if den > 1e-12 * uu * vv {
        let s = (uv * vw - vv * uw) / den;
        let t = (uu * vw - uv * uw) / den;
        if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
            best = best.min(((a + u * s) - (c + v * t)).norm());
        }
    }
    best
}

fn segment_pierces(a: Point3<f64>, b: Point3<f64>, t: [Point3<f64>; 3]) -> bool {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let (da, db) = ((a - t[0]).dot(&n), (b - t[0]).dot(&n));
    if da * db > 0.0 || da == db {
        return false;
    }
    let p = a + (b - a) * (da / (da - db));
    (0..3).all(|i| {
        let (u, v) = (t[i], t[(i + 1) % 3]);
        (v - u).cross(&(p - u)).dot(&n) >= 0.0
    })
}

pub fn capsule_hits_triangle(a: Point3<f64>, b: Point3<f64>, radius: f64, t: [Point3<f64>; 3]) -> bool {
    if segment_pierces(a, b, t) {
        return true;
    }
    let d = point_triangle(a, t).min(point_triangle(b, t)).min(
        (0..3)
            .map(|i| segment_segment_3d(a, b, t[i], t[(i + 1) % 3]))
            .fold(f64::INFINITY, f64::min),
    );
    d <= radius
}

/// Whether any link of the chain at `q` touches any obstacle of the scene.
pub fn collides(scene: &Scene, q: &[f64]) -> bool {
    let chain = scene.chain();
    links(chain, q).into_iter().any(|(a, b, r)| {
        let hit_poly = scene
            .obstacles2d()
            .iter()
            .any(|poly| capsule_hits_polygon(a.xy(), b.xy(), r, poly.vertices()));
        let hit_mesh = scene.obstacles3d().iter().any(|mesh| {
            mesh.triangles().iter().any(|tri| {
                let v = mesh.vertices();
                capsule_hits_triangle(a, b, r, [v[tri[0]], v[tri[1]], v[tri[2]]])
            })
        });
        hit_poly || hit_mesh
    })
}

pub fn lerp(a: &Posture, b: &Posture, t: f64) -> Vec<f64> {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x + (y - x) * t)
        .collect()
}

/// Postures and the evenly spaced interior samples of every move are free.
/// On failure, returns the index of the offending posture or move.
pub fn trace_is_free(scene: &Scene, postures: &[Posture], substeps: usize) -> Result<(), String> {
    for (i, q) in postures.iter().enumerate() {
        if collides(scene, q.as_slice()) {
            return Err(format!("posture {i} collides"));
        }
    }
    for (i, w) in postures.windows(2).enumerate() {
        for k in 1..substeps {
            if collides(scene, &lerp(&w[0], &w[1], k as f64 / substeps as f64)) {
                return Err(format!("move {i} collides at {k}/{substeps}"));
            }
        }
    }
    Ok(())
}

/// Which side of the plane through `p0`, `p1`, `p2` the point lies on.
fn side(p0: Vector3<f64>, p1: Vector3<f64>, p2: Vector3<f64>, x: Vector3<f64>) -> f64 {
    (p1 - p0).cross(&(p2 - p0)).dot(&(x - p0))
}

/// Whether `x` lies in the open wedge between two triangles that share the
/// edge `p0 p1` and have free vertices `a` and `b`.
pub fn in_wedge(p0: Vector3<f64>, p1: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>, x: Vector3<f64>) -> bool {
    side(p0, p1, a, x) * side(p0, p1, a, b) > 0.0 && side(p0, p1, b, x) * side(p0, p1, b, a) > 0.0
}
