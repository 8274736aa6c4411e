//! Convex-hull construction and low-level triangle/polygon routines.

use nalgebra::{Vector2, Vector3};

use super::GeometryError;

/// Computes the convex hull of a 3-d point set as a list of outward-oriented
/// triangles (quickhull). Fails if the input has fewer than four points or is
/// degenerate (coplanar within tolerance).
pub fn convex_hull_3d(points: &[Vector3<f64>]) -> Result<Vec<[usize; 3]>, GeometryError> {
    if points.len() < 4 {
        return Err(GeometryError::DegenerateHull);
    }
    let scale = points
        .iter()
        .map(|p| p.amax())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let eps = 1e-10 * scale;

    // Initial tetrahedron from extreme points.
    let (mut i0, mut i1) = (0, 0);
    for (i, p) in points.iter().enumerate() {
        if p.x < points[i0].x {
            i0 = i;
        }
        if p.x > points[i1].x {
            i1 = i;
        }
    }
    if (points[i0] - points[i1]).norm() < eps {
        // All points share x; fall back to any well-separated pair.
        let mut best = 0.0;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = (points[i] - points[j]).norm();
                if d > best {
                    best = d;
                    i0 = i;
                    i1 = j;
                }
            }
        }
        if best < eps {
            return Err(GeometryError::DegenerateHull);
        }
    }
    let dir = points[i1] - points[i0];
    let mut i2 = usize::MAX;
    let mut best = eps;
    for (i, p) in points.iter().enumerate() {
        let d = dir.cross(&(p - points[i0])).norm() / dir.norm();
        if d > best {
            best = d;
            i2 = i;
        }
    }
    if i2 == usize::MAX {
        return Err(GeometryError::DegenerateHull);
    }
    let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0]));
    let mut i3 = usize::MAX;
    let mut best = eps;
    for (i, p) in points.iter().enumerate() {
        let d = (n.dot(&(p - points[i0])) / n.norm()).abs();
        if d > best {
            best = d;
            i3 = i;
        }
    }
    if i3 == usize::MAX {
        return Err(GeometryError::DegenerateHull);
    }

    #[derive(Clone)]
    struct Face {
        v: [usize; 3],
        normal: Vector3<f64>,
        offset: f64,
        outside: Vec<usize>,
        alive: bool,
    }

    let make_face = |a: usize, b: usize, c: usize, interior: &Vector3<f64>| -> Face {
        let mut v = [a, b, c];
        let mut normal = (points[b] - points[a]).cross(&(points[c] - points[a]));
        if normal.dot(&(interior - points[a])) > 0.0 {
            v.swap(1, 2);
            normal = -normal;
        }
        let normal = normal.normalize();
        Face { v, normal, offset: normal.dot(&points[v[0]]), outside: Vec::new(), alive: true }
    };

    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let mut faces = vec![
        make_face(i0, i1, i2, &interior),
        make_face(i0, i1, i3, &interior),
        make_face(i0, i2, i3, &interior),
        make_face(i1, i2, i3, &interior),
    ];

    let assign = |face: &mut Face, candidates: &[usize], points: &[Vector3<f64>]| {
        for &i in candidates {
            if face.v.contains(&i) {
                continue;
            }
            if face.normal.dot(&points[i]) - face.offset > eps {
                face.outside.push(i);
            }
        }
    };
    let all: Vec<usize> = (0..points.len()).collect();
    for f in faces.iter_mut() {
        assign(f, &all, points);
    }

    loop {
        // Face with a non-empty outside set; take its farthest point.
        let Some(fi) = faces.iter().position(|f| f.alive && !f.outside.is_empty()) else {
            break;
        };
        let far = *faces[fi]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                let da = faces[fi].normal.dot(&points[a]);
                let db = faces[fi].normal.dot(&points[b]);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let p = points[far];

        // All faces visible from the far point, and their orphaned points.
        let mut orphans = Vec::new();
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        let mut visible = vec![false; faces.len()];
        for (i, f) in faces.iter().enumerate() {
            if f.alive && f.normal.dot(&p) - f.offset > eps {
                visible[i] = true;
            }
        }
        for (i, f) in faces.iter_mut().enumerate() {
            if !visible[i] {
                continue;
            }
            f.alive = false;
            orphans.extend(f.outside.drain(..));
            for k in 0..3 {
                let e = (f.v[k], f.v[(k + 1) % 3]);
                // An edge is on the horizon if its twin belongs to a hidden face.
                if let Some(pos) = horizon.iter().position(|&(a, b)| (b, a) == e) {
                    horizon.remove(pos);
                } else {
                    horizon.push(e);
                }
            }
        }
        orphans.push(far);
        orphans.sort_unstable();
        orphans.dedup();

        for (a, b) in horizon {
            let mut f = make_face(a, b, far, &interior);
            assign(&mut f, &orphans, points);
            faces.push(f);
        }
    }

    Ok(faces.into_iter().filter(|f| f.alive).map(|f| f.v).collect())
}

/// Closest point on triangle `(a, b, c)` to point `p` (Ericson's method).
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + v * ab;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + w * ac;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Ray/triangle intersection (Moller-Trumbore). Returns the ray parameter t
/// for `origin + t * dir`, accepting hits with `t >= -1e-9`.
pub fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&h) * inv;
    if !(-1e-9..=1.0 + 1e-9).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -1e-9 || u + v > 1.0 + 1e-9 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t >= -1e-9).then_some(t)
}

/// Interior wedge angle of triangle `(a, b, c)` at point `p` lying on the
/// triangle: full turn in the interior, a straight angle on an edge, and the
/// corner angle at a vertex. Used for angle-weighted normals.
pub fn wedge_angle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> f64 {
    let tol = 1e-9;
    let verts = [a, b, c];
    for i in 0..3 {
        if (p - verts[i]).norm() < tol {
            let u = (verts[(i + 1) % 3] - verts[i]).normalize();
            let v = (verts[(i + 2) % 3] - verts[i]).normalize();
            return u.dot(&v).clamp(-1.0, 1.0).acos();
        }
    }
    for i in 0..3 {
        let (e0, e1) = (verts[i], verts[(i + 1) % 3]);
        let e = e1 - e0;
        let t = (p - e0).dot(&e) / e.norm_squared();
        if (0.0..=1.0).contains(&t) && (p - (e0 + t * e)).norm() < tol {
            return std::f64::consts::PI;
        }
    }
    2.0 * std::f64::consts::PI
}

/// Counter-clockwise convex hull of 2-d points (monotone chain). Collinear
/// points on the boundary are dropped.
pub fn convex_hull_2d(points: &[Vector2<f64>]) -> Result<Vec<Vector2<f64>>, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::DegenerateHull);
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let build = |iter: &mut dyn Iterator<Item = &Vector2<f64>>| {
        let mut chain: Vec<Vector2<f64>> = Vec::new();
        for p in iter {
            while chain.len() >= 2
                && cross(&chain[chain.len() - 2], &chain[chain.len() - 1], p) <= 1e-14
            {
                chain.pop();
            }
            chain.push(*p);
        }
        chain
    };
    let mut lower = build(&mut pts.iter());
    let mut upper = build(&mut pts.iter().rev());
    lower.pop();
    upper.pop();
    lower.append(&mut upper);
    if lower.len() < 3 {
        return Err(GeometryError::DegenerateHull);
    }
    Ok(lower)
}

/// Result of projecting a 2-d point onto a convex polygon boundary.
#[derive(Clone, Copy, Debug)]
pub struct Polygon2Proj {
    pub point: Vector2<f64>,
    pub normal: Vector2<f64>,
    /// Negative when the query point is inside the polygon.
    pub signed_dist: f64,
}

/// Closest point on the boundary of a CCW convex polygon, with outward
/// normal. Interior queries resolve to the nearest edge; ties break by
/// lowest edge index. A query landing on a vertex averages the two adjacent
/// edge normals.
pub fn project_polygon_2d(x: &Vector2<f64>, poly: &[Vector2<f64>]) -> Polygon2Proj {
    let n = poly.len();
    let mut inside = true;
    let mut best: Option<(f64, Vector2<f64>, usize, f64)> = None; // (dist, point, edge, t)
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let e = b - a;
        let out = Vector2::new(e.y, -e.x).normalize();
        if out.dot(&(x - a)) > 1e-12 {
            inside = false;
        }
        let t = ((x - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
        let q = a + t * e;
        let d = (x - q).norm();
        if best.map_or(true, |(bd, ..)| d < bd - 1e-15) {
            best = Some((d, q, i, t));
        }
    }
    let (d, q, edge, t) = best.unwrap();
    let edge_normal = |i: usize| {
        let e = poly[(i + 1) % n] - poly[i];
        Vector2::new(e.y, -e.x).normalize()
    };
    let normal = if d > 1e-12 && !inside {
        // Exterior: normal points from the boundary to the query point,
        // which also covers vertex regions.
        (x - q).normalize()
    } else if t < 1e-12 {
        (edge_normal(edge) + edge_normal((edge + n - 1) % n)).normalize()
    } else if t > 1.0 - 1e-12 {
        (edge_normal(edge) + edge_normal((edge + 1) % n)).normalize()
    } else {
        edge_normal(edge)
    };
    Polygon2Proj { point: q, normal, signed_dist: if inside { -d } else { d } }
}
