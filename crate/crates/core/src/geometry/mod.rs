//! Convex-shape queries backing the manipulation constraints: surface
//! projection, outward normals, signed distance between posed shapes,
//! raycasts, and 2-d support-area projections.
//!
//! Objects are unions of convex pieces expressed in the object frame; a box
//! piece is centered at the frame origin, anything else is a convex hull of
//! explicit vertices. Pairwise queries over unions take the minimum signed
//! distance across piece pairs, so a penetrating pair dominates.

mod gjk;
pub mod hull;

use nalgebra::{Vector2, Vector3};

use crate::liegroup::Rot3;
use hull::{closest_point_on_triangle, ray_triangle, wedge_angle, Polygon2Proj};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point set is degenerate (needs >= 4 non-coplanar vertices)")]
    DegenerateHull,
    #[error("box half extents must be positive, got {0:?}")]
    BadHalfExtents(Vector3<f64>),
    #[error("center of mass {0:?} lies outside the shape")]
    ComOutsideShape(Vector3<f64>),
    #[error("point {0:?} is not on the shape surface (distance {1:.3e})")]
    NotOnSurface(Vector3<f64>, f64),
    #[error("ray from {0:?} along {1:?} misses the shape")]
    RayMiss(Vector3<f64>, Vector3<f64>),
    #[error("shape has no pieces")]
    EmptyShape,
}

/// Convex hull with precomputed outward triangle faces.
#[derive(Clone, Debug, PartialEq)]
pub struct HullData {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vector3<f64>>,
    offsets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConvexKind {
    /// Axis-aligned box centered at the shape frame origin.
    Box { half_extents: Vector3<f64> },
    ConvexHull(HullData),
}

/// One convex piece of an object, in object-frame coordinates, with its
/// center of mass.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexShape {
    pub kind: ConvexKind,
    pub com: Vector3<f64>,
}

impl ConvexShape {
    pub fn cuboid(half_extents: Vector3<f64>) -> Result<Self, GeometryError> {
        if half_extents.min() <= 0.0 {
            return Err(GeometryError::BadHalfExtents(half_extents));
        }
        Ok(Self { kind: ConvexKind::Box { half_extents }, com: Vector3::zeros() })
    }

    pub fn hull(vertices: Vec<Vector3<f64>>, com: Vector3<f64>) -> Result<Self, GeometryError> {
        let faces = hull::convex_hull_3d(&vertices)?;
        let mut normals = Vec::with_capacity(faces.len());
        let mut offsets = Vec::with_capacity(faces.len());
        for f in &faces {
            let n = (vertices[f[1]] - vertices[f[0]])
                .cross(&(vertices[f[2]] - vertices[f[0]]))
                .normalize();
            offsets.push(n.dot(&vertices[f[0]]));
            normals.push(n);
        }
        let shape = Self {
            kind: ConvexKind::ConvexHull(HullData { vertices, faces, normals, offsets }),
            com,
        };
        if !shape.contains(&com, 1e-9) {
            return Err(GeometryError::ComOutsideShape(com));
        }
        Ok(shape)
    }

    /// Support point in the shape frame. Zero direction components on a box
    /// resolve to the face center, which keeps witness points of axis-aligned
    /// face contacts deterministic.
    pub(crate) fn support(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        match &self.kind {
            ConvexKind::Box { half_extents: h } => Vector3::new(
                if dir.x > 0.0 { h.x } else if dir.x < 0.0 { -h.x } else { 0.0 },
                if dir.y > 0.0 { h.y } else if dir.y < 0.0 { -h.y } else { 0.0 },
                if dir.z > 0.0 { h.z } else if dir.z < 0.0 { -h.z } else { 0.0 },
            ),
            ConvexKind::ConvexHull(h) => {
                let mut best = 0;
                let mut best_dot = h.vertices[0].dot(dir);
                for (i, v) in h.vertices.iter().enumerate().skip(1) {
                    let d = v.dot(dir);
                    if d > best_dot {
                        best_dot = d;
                        best = i;
                    }
                }
                h.vertices[best]
            }
        }
    }

    pub fn contains(&self, x: &Vector3<f64>, tol: f64) -> bool {
        match &self.kind {
            ConvexKind::Box { half_extents: h } => {
                x.x.abs() <= h.x + tol && x.y.abs() <= h.y + tol && x.z.abs() <= h.z + tol
            }
            ConvexKind::ConvexHull(h) => {
                h.normals.iter().zip(&h.offsets).all(|(n, o)| n.dot(x) - o <= tol)
            }
        }
    }

    pub fn volume(&self) -> f64 {
        match &self.kind {
            ConvexKind::Box { half_extents: h } => 8.0 * h.x * h.y * h.z,
            ConvexKind::ConvexHull(h) => {
                let r = h.vertices[0];
                h.faces
                    .iter()
                    .map(|f| {
                        (h.vertices[f[0]] - r)
                            .cross(&(h.vertices[f[1]] - r))
                            .dot(&(h.vertices[f[2]] - r))
                            / 6.0
                    })
                    .sum::<f64>()
                    .abs()
            }
        }
    }

    pub fn vertices(&self) -> Vec<Vector3<f64>> {
        match &self.kind {
            ConvexKind::Box { half_extents: h } => {
                let mut out = Vec::with_capacity(8);
                for &sx in &[-1.0f64, 1.0] {
                    for &sy in &[-1.0f64, 1.0] {
                        for &sz in &[-1.0f64, 1.0] {
                            out.push(Vector3::new(sx * h.x, sy * h.y, sz * h.z));
                        }
                    }
                }
                out
            }
            ConvexKind::ConvexHull(h) => h.vertices.clone(),
        }
    }
}

/// Closest point on the surface of `a` to `x` (both in the shape frame).
/// Interior queries return the nearest boundary point; ties between box
/// faces break by the face order +x, -x, +y, -y, +z, -z.
pub fn proj(x: &Vector3<f64>, a: &ConvexShape) -> Vector3<f64> {
    match &a.kind {
        ConvexKind::Box { half_extents: h } => {
            let clamped =
                Vector3::new(x.x.clamp(-h.x, h.x), x.y.clamp(-h.y, h.y), x.z.clamp(-h.z, h.z));
            if clamped != *x {
                return clamped;
            }
            // Interior: project onto the nearest face plane.
            let mut best_face = 0;
            let mut best_dist = f64::INFINITY;
            for axis in 0..3 {
                for (fi, sign) in [(2 * axis, 1.0), (2 * axis + 1, -1.0)] {
                    let dist = h[axis] - sign * x[axis];
                    if dist < best_dist - 1e-15 {
                        best_dist = dist;
                        best_face = fi;
                    }
                }
            }
            let axis = best_face / 2;
            let sign = if best_face % 2 == 0 { 1.0 } else { -1.0 };
            let mut p = *x;
            p[axis] = sign * h[axis];
            p
        }
        ConvexKind::ConvexHull(h) => {
            let mut best = Vector3::zeros();
            let mut best_dist = f64::INFINITY;
            for f in &h.faces {
                let q = closest_point_on_triangle(
                    x,
                    &h.vertices[f[0]],
                    &h.vertices[f[1]],
                    &h.vertices[f[2]],
                );
                let d = (x - q).norm_squared();
                if d < best_dist - 1e-18 {
                    best_dist = d;
                    best = q;
                }
            }
            best
        }
    }
}

/// Outward unit normal of `a` at surface point `p`. Edge and vertex contacts
/// return the angle-weighted average of the adjacent face normals. Fails if
/// `p` is more than 1e-6 from the surface.
pub fn normal(p: &Vector3<f64>, a: &ConvexShape) -> Result<Vector3<f64>, GeometryError> {
    let surface = proj(p, a);
    let err = (p - surface).norm();
    if err > 1e-6 {
        return Err(GeometryError::NotOnSurface(*p, err));
    }
    match &a.kind {
        ConvexKind::Box { half_extents: h } => {
            let mut n = Vector3::zeros();
            for i in 0..3 {
                if surface[i] >= h[i] - 1e-9 {
                    n[i] = 1.0;
                } else if surface[i] <= -h[i] + 1e-9 {
                    n[i] = -1.0;
                }
            }
            Ok(n.normalize())
        }
        ConvexKind::ConvexHull(h) => {
            let mut n = Vector3::zeros();
            for (f, fnorm) in h.faces.iter().zip(&h.normals) {
                let (a0, a1, a2) = (&h.vertices[f[0]], &h.vertices[f[1]], &h.vertices[f[2]]);
                let q = closest_point_on_triangle(&surface, a0, a1, a2);
                if (surface - q).norm() < 1e-9 {
                    n += wedge_angle(&surface, a0, a1, a2) * fnorm;
                }
            }
            if n.norm() < 1e-12 {
                return Err(GeometryError::NotOnSurface(*p, err));
            }
            Ok(n.normalize())
        }
    }
}

/// First intersection of the ray `x + t dx`, `t >= 0`, with the surface of
/// `a`. The origin may be inside the shape, in which case the exit point is
/// returned.
pub fn cast(
    x: &Vector3<f64>,
    dx: &Vector3<f64>,
    a: &ConvexShape,
) -> Result<Vector3<f64>, GeometryError> {
    cast_t(x, dx, a).map(|t| x + t * dx).ok_or(GeometryError::RayMiss(*x, *dx))
}

fn cast_t(x: &Vector3<f64>, dx: &Vector3<f64>, a: &ConvexShape) -> Option<f64> {
    match &a.kind {
        ConvexKind::Box { half_extents: h } => {
            let mut t_min = f64::NEG_INFINITY;
            let mut t_max = f64::INFINITY;
            for i in 0..3 {
                if dx[i].abs() < 1e-14 {
                    if x[i].abs() > h[i] {
                        return None;
                    }
                } else {
                    let t1 = (-h[i] - x[i]) / dx[i];
                    let t2 = (h[i] - x[i]) / dx[i];
                    t_min = t_min.max(t1.min(t2));
                    t_max = t_max.min(t1.max(t2));
                }
            }
            if t_max < t_min.max(0.0) - 1e-12 {
                return None;
            }
            Some(if t_min >= 0.0 { t_min } else { t_max })
        }
        ConvexKind::ConvexHull(h) => {
            let mut best: Option<f64> = None;
            for f in &h.faces {
                if let Some(t) =
                    ray_triangle(x, dx, &h.vertices[f[0]], &h.vertices[f[1]], &h.vertices[f[2]])
                {
                    if best.map_or(true, |b| t < b) {
                        best = Some(t);
                    }
                }
            }
            best.map(|t| t.max(0.0))
        }
    }
}

/// Contact between shape `a` posed in `b`'s frame and shape `b`. Separated
/// shapes report the closest points and a positive distance; overlapping
/// shapes report the penetration depth (negative distance) and the farthest
/// points of overlap found by expanding-polytope refinement.
#[derive(Clone, Copy, Debug)]
pub struct ContactResult {
    /// Signed distance in meters.
    pub d: f64,
    /// Witness point on `a`, expressed in `b`'s frame.
    pub p_a: Vector3<f64>,
    /// Witness point on `b`, expressed in `b`'s frame.
    pub p_b: Vector3<f64>,
    /// Unit direction along which translating `a` increases `d`.
    pub dir: Vector3<f64>,
}

pub fn contact(pose_ab: &(Vector3<f64>, Rot3), a: &ConvexShape, b: &ConvexShape) -> ContactResult {
    gjk::contact_convex(pose_ab.1.matrix(), &pose_ab.0, a, b)
}

/// Signed distance between posed shapes (the `d` of [`contact`]).
pub fn dist(pose_ab: &(Vector3<f64>, Rot3), a: &ConvexShape, b: &ConvexShape) -> f64 {
    contact(pose_ab, a, b).d
}

/// A possibly non-convex object stored as explicit convex pieces, with
/// cached union properties.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pieces: Vec<ConvexShape>,
    com: Vector3<f64>,
    shadow: Vec<Vector2<f64>>,
}

/// Result of the union signed-distance query from a point.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Negative when the query point is inside the union.
    pub signed_dist: f64,
    pub piece: usize,
}

impl Shape {
    pub fn new(pieces: Vec<ConvexShape>) -> Result<Self, GeometryError> {
        if pieces.is_empty() {
            return Err(GeometryError::EmptyShape);
        }
        let mut volume = 0.0;
        let mut com = Vector3::zeros();
        let mut flat: Vec<Vector2<f64>> = Vec::new();
        for p in &pieces {
            let v = p.volume();
            volume += v;
            com += v * p.com;
            flat.extend(p.vertices().iter().map(|q| Vector2::new(q.x, q.y)));
        }
        com /= volume;
        let shadow = hull::convex_hull_2d(&flat)?;
        Ok(Self { pieces, com, shadow })
    }

    pub fn pieces(&self) -> &[ConvexShape] {
        &self.pieces
    }

    /// Volume-weighted center of mass of the union.
    pub fn com(&self) -> Vector3<f64> {
        self.com
    }

    /// Convex 2-d outline of the object in its frame's x-y plane (the plane
    /// perpendicular to gravity for upright support objects).
    pub fn shadow(&self) -> &[Vector2<f64>] {
        &self.shadow
    }

    /// Nearest surface point of the union to `x` with signed distance:
    /// negative inside any piece, else the smallest positive piece distance.
    pub fn signed_surface_point(&self, x: &Vector3<f64>) -> SurfacePoint {
        let mut best: Option<SurfacePoint> = None;
        for (i, piece) in self.pieces.iter().enumerate() {
            let p = proj(x, piece);
            let d = (x - p).norm();
            let signed = if piece.contains(x, 1e-12) { -d } else { d };
            if best.map_or(true, |b| signed < b.signed_dist) {
                let n = normal(&p, piece).unwrap_or_else(|_| Vector3::z());
                best = Some(SurfacePoint { point: p, normal: n, signed_dist: signed, piece: i });
            }
        }
        best.unwrap()
    }

    /// Union contact: the piece pair with the minimum signed distance, so a
    /// penetrating pair wins over any separated pair.
    pub fn contact(&self, pose_ab: &(Vector3<f64>, Rot3), b: &Shape) -> ContactResult {
        let mut best: Option<ContactResult> = None;
        for pa in &self.pieces {
            for pb in &b.pieces {
                let c = contact(pose_ab, pa, pb);
                if best.map_or(true, |bc| c.d < bc.d) {
                    best = Some(c);
                }
            }
        }
        best.unwrap()
    }

    pub fn dist(&self, pose_ab: &(Vector3<f64>, Rot3), b: &Shape) -> f64 {
        self.contact(pose_ab, b).d
    }

    /// First ray hit across the union.
    pub fn cast(&self, x: &Vector3<f64>, dx: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
        let mut best: Option<f64> = None;
        for piece in &self.pieces {
            if let Some(t) = cast_t(x, dx, piece) {
                if best.map_or(true, |b| t < b) {
                    best = Some(t);
                }
            }
        }
        best.map(|t| x + t * dx).ok_or(GeometryError::RayMiss(*x, *dx))
    }

    /// Projects a 2-d point onto the shadow boundary (see
    /// [`hull::project_polygon_2d`] for the tie conventions).
    pub fn proj2d(&self, x: &Vector2<f64>) -> Polygon2Proj {
        hull::project_polygon_2d(x, &self.shadow)
    }
}

/// 2-d analogues of `proj`/`normal` against the shape's gravity-plane shadow.
pub fn proj2d(x: &Vector2<f64>, b: &Shape) -> Vector2<f64> {
    b.proj2d(x).point
}

pub fn normal2d(x: &Vector2<f64>, b: &Shape) -> Vector2<f64> {
    b.proj2d(x).normal
}
