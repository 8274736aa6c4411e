//! GJK signed distance with EPA penetration refinement.
//!
//! Queries run on the configuration-space obstacle (Minkowski difference) of
//! two convex shapes via their support functions. Separated pairs get the
//! closest points from the terminal GJK simplex; touching or interpenetrating
//! pairs fall through to an expanding-polytope pass that reports the
//! penetration depth and the farthest points of overlap.

use nalgebra::{Matrix3, Vector3};

use super::{ConvexShape, ContactResult};

const MAX_ITERATIONS: usize = 64;
/// Relative no-progress tolerance on `|v|^2 - v.w`.
const REL_TOL: f64 = 1e-12;
/// Below this squared norm the origin is considered reached.
const TOUCH_EPS2: f64 = 1e-20;
/// EPA stops when a support point extends the polytope by less than this.
const EPA_GROWTH_TOL: f64 = 1e-8;

/// One vertex of the Minkowski-difference polytope along with the witness
/// points on both shapes (both expressed in b's frame).
#[derive(Clone, Copy, Debug)]
struct SupportPoint {
    w: Vector3<f64>,
    pa: Vector3<f64>,
    pb: Vector3<f64>,
}

struct Cso<'a> {
    rot_ab: &'a Matrix3<f64>,
    pos_ab: &'a Vector3<f64>,
    a: &'a ConvexShape,
    b: &'a ConvexShape,
}

impl Cso<'_> {
    fn support(&self, dir: &Vector3<f64>) -> SupportPoint {
        let local_dir = self.rot_ab.transpose() * dir;
        let pa = self.rot_ab * self.a.support(&local_dir) + self.pos_ab;
        let pb = self.b.support(&-dir);
        SupportPoint { w: pa - pb, pa, pb }
    }
}

/// Computes the contact between shape `a` posed at `(rot_ab, pos_ab)` in
/// `b`'s frame and shape `b` at the origin of its own frame.
pub fn contact_convex(
    rot_ab: &Matrix3<f64>,
    pos_ab: &Vector3<f64>,
    a: &ConvexShape,
    b: &ConvexShape,
) -> ContactResult {
    let cso = Cso { rot_ab, pos_ab, a, b };
    let init_dir = if pos_ab.norm_squared() > 1e-12 { -pos_ab } else { Vector3::x() };
    let mut simplex = vec![cso.support(&init_dir)];
    let mut v = simplex[0].w;
    let mut lambdas = vec![1.0];

    for _ in 0..MAX_ITERATIONS {
        if v.norm_squared() < TOUCH_EPS2 {
            return resolve_overlap(&cso, simplex);
        }
        let w = cso.support(&-v);
        let vv = v.norm_squared();
        if vv - v.dot(&w.w) <= REL_TOL * vv.max(1e-9)
            || simplex.iter().any(|s| (s.w - w.w).norm_squared() < 1e-28)
        {
            return separated(&simplex, &lambdas, v);
        }
        simplex.push(w);
        let reduction = closest_to_origin(&simplex);
        match reduction {
            SimplexReduction::Enclosed => return resolve_overlap(&cso, simplex),
            SimplexReduction::Closest { keep, bary, point } => {
                simplex = keep.iter().map(|&i| simplex[i]).collect();
                lambdas = bary;
                v = point;
            }
        }
    }
    separated(&simplex, &lambdas, v)
}

fn separated(simplex: &[SupportPoint], lambdas: &[f64], v: Vector3<f64>) -> ContactResult {
    let mut pa = Vector3::zeros();
    let mut pb = Vector3::zeros();
    for (s, &l) in simplex.iter().zip(lambdas) {
        pa += l * s.pa;
        pb += l * s.pb;
    }
    let d = v.norm();
    let dir = if d > 1e-12 { v / d } else { Vector3::z() };
    ContactResult { d, p_a: pa, p_b: pb, dir }
}

enum SimplexReduction {
    Enclosed,
    Closest { keep: Vec<usize>, bary: Vec<f64>, point: Vector3<f64> },
}

/// Closest point to the origin over a 2-4 point simplex, with the supporting
/// sub-simplex and its barycentric coordinates.
fn closest_to_origin(simplex: &[SupportPoint]) -> SimplexReduction {
    match simplex.len() {
        2 => {
            let (keep, bary, point) = closest_on_segment(simplex[0].w, simplex[1].w);
            SimplexReduction::Closest { keep, bary, point }
        }
        3 => {
            let (keep, bary, point) =
                closest_on_triangle([simplex[0].w, simplex[1].w, simplex[2].w]);
            SimplexReduction::Closest { keep, bary, point }
        }
        4 => closest_on_tetrahedron(simplex),
        _ => unreachable!("simplex of size {}", simplex.len()),
    }
}

fn closest_on_segment(a: Vector3<f64>, b: Vector3<f64>) -> (Vec<usize>, Vec<f64>, Vector3<f64>) {
    let ab = b - a;
    let denom = ab.norm_squared();
    if denom < 1e-28 {
        return (vec![0], vec![1.0], a);
    }
    let t = (-a.dot(&ab) / denom).clamp(0.0, 1.0);
    if t <= 0.0 {
        (vec![0], vec![1.0], a)
    } else if t >= 1.0 {
        (vec![1], vec![1.0], b)
    } else {
        (vec![0, 1], vec![1.0 - t, t], a + t * ab)
    }
}

fn closest_on_triangle(p: [Vector3<f64>; 3]) -> (Vec<usize>, Vec<f64>, Vector3<f64>) {
    let [a, b, c] = p;
    let ab = b - a;
    let ac = c - a;
    let ap = -a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (vec![0], vec![1.0], a);
    }
    let bp = -b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (vec![1], vec![1.0], b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return (vec![0, 1], vec![1.0 - t, t], a + t * ab);
    }
    let cp = -c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (vec![2], vec![1.0], c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return (vec![0, 2], vec![1.0 - t, t], a + t * ac);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (vec![1, 2], vec![1.0 - t, t], b + t * (c - b));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (vec![0, 1, 2], vec![1.0 - v - w, v, w], a + ab * v + ac * w)
}

fn closest_on_tetrahedron(simplex: &[SupportPoint]) -> SimplexReduction {
    let pts = [simplex[0].w, simplex[1].w, simplex[2].w, simplex[3].w];
    // Faces paired with the opposite vertex.
    const FACES: [([usize; 3], usize); 4] =
        [([0, 1, 2], 3), ([0, 1, 3], 2), ([0, 2, 3], 1), ([1, 2, 3], 0)];
    let mut best: Option<(f64, Vec<usize>, Vec<f64>, Vector3<f64>)> = None;
    let mut outside_any = false;
    for (face, opposite) in FACES {
        let [i, j, k] = face;
        let n = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
        let plane = n.dot(&pts[i]);
        let side_opp = n.dot(&pts[opposite]) - plane;
        let side_origin = -plane;
        // Origin outside this face when it is on the opposite side from the
        // remaining vertex (degenerate faces count as outside).
        if side_opp.abs() < 1e-18 || side_origin * side_opp < 0.0 || side_origin.abs() < 1e-18 {
            outside_any = true;
            let (keep_local, bary, point) = closest_on_triangle([pts[i], pts[j], pts[k]]);
            let dist = point.norm_squared();
            if best.as_ref().map_or(true, |(bd, ..)| dist < *bd) {
                let keep: Vec<usize> = keep_local.iter().map(|&l| face[l]).collect();
                best = Some((dist, keep, bary, point));
            }
        }
    }
    if !outside_any {
        return SimplexReduction::Enclosed;
    }
    let (_, keep, bary, point) = best.unwrap();
    SimplexReduction::Closest { keep, bary, point }
}

/// The origin lies inside or on the boundary of the Minkowski difference.
/// Expand the terminal simplex to a tetrahedron and run EPA; if the
/// difference is locally flat the shapes merely touch.
fn resolve_overlap(cso: &Cso, mut simplex: Vec<SupportPoint>) -> ContactResult {
    // Deduplicate.
    let mut unique: Vec<SupportPoint> = Vec::new();
    for s in simplex.drain(..) {
        if !unique.iter().any(|u| (u.w - s.w).norm_squared() < 1e-24) {
            unique.push(s);
        }
    }
    let mut simplex = unique;

    if simplex.len() == 1 {
        // Single support point at the origin: boundary touch.
        for dir in [Vector3::x(), Vector3::y(), Vector3::z(), -Vector3::x(), -Vector3::y()] {
            if simplex.len() >= 2 {
                break;
            }
            let s = cso.support(&dir);
            if (s.w - simplex[0].w).norm_squared() > 1e-24 {
                simplex.push(s);
            }
        }
        if simplex.len() == 1 {
            return touching(&simplex, &[1.0]);
        }
    }
    if simplex.len() == 2 {
        let axis = (simplex[1].w - simplex[0].w).normalize();
        let mut seed = Vector3::x();
        if axis.x.abs() > 0.9 {
            seed = Vector3::y();
        }
        let d1 = axis.cross(&seed).normalize();
        for dir in [d1, -d1, axis.cross(&d1)] {
            let s = cso.support(&dir);
            if simplex.iter().all(|u| (u.w - s.w).norm_squared() > 1e-24) {
                simplex.push(s);
                break;
            }
        }
        if simplex.len() == 2 {
            let (_, bary, _) = closest_on_segment(simplex[0].w, simplex[1].w);
            return touching(&simplex, &bary);
        }
    }
    if simplex.len() == 3 {
        let n = (simplex[1].w - simplex[0].w)
            .cross(&(simplex[2].w - simplex[0].w));
        if n.norm_squared() < 1e-24 {
            let (keep, bary, _) = closest_on_segment(simplex[0].w, simplex[1].w);
            let kept: Vec<SupportPoint> = keep.iter().map(|&i| simplex[i]).collect();
            return touching(&kept, &bary);
        }
        let n = n.normalize();
        let sp = cso.support(&n);
        let sm = cso.support(&-n);
        let dp = n.dot(&(sp.w - simplex[0].w));
        let dm = -n.dot(&(sm.w - simplex[0].w));
        if dp < 1e-12 && dm < 1e-12 {
            // Flat difference: contact over a face, zero depth.
            let (keep, bary, _) =
                closest_on_triangle([simplex[0].w, simplex[1].w, simplex[2].w]);
            let kept: Vec<SupportPoint> = keep.iter().map(|&i| simplex[i]).collect();
            return touching(&kept, &bary);
        }
        simplex.push(if dp >= dm { sp } else { sm });
    }

    epa(cso, simplex)
}

fn touching(simplex: &[SupportPoint], bary: &[f64]) -> ContactResult {
    let mut pa = Vector3::zeros();
    let mut pb = Vector3::zeros();
    for (s, &l) in simplex.iter().zip(bary) {
        pa += l * s.pa;
        pb += l * s.pb;
    }
    ContactResult { d: 0.0, p_a: pa, p_b: pb, dir: Vector3::z() }
}

struct EpaFace {
    v: [usize; 3],
    normal: Vector3<f64>,
    dist: f64,
    alive: bool,
}

fn make_epa_face(verts: &[SupportPoint], v: [usize; 3]) -> Option<EpaFace> {
    let (a, b, c) = (verts[v[0]].w, verts[v[1]].w, verts[v[2]].w);
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len < 1e-18 {
        return None;
    }
    let normal = n / len;
    Some(EpaFace { v, normal, dist: normal.dot(&a), alive: true })
}

fn epa(cso: &Cso, tetra: Vec<SupportPoint>) -> ContactResult {
    let mut verts = tetra;
    let mut faces: Vec<EpaFace> = Vec::new();
    for idx in [[0usize, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]] {
        if let Some(mut f) = make_epa_face(&verts, idx) {
            // Orient outward: the remaining vertex lies behind the face.
            let other = (0..4).find(|i| !f.v.contains(i)).unwrap();
            if f.normal.dot(&verts[other].w) > f.dist {
                f.v.swap(1, 2);
                f.normal = -f.normal;
                f.dist = -f.dist;
            }
            faces.push(f);
        }
    }
    if faces.len() < 4 {
        // Degenerate start; report a boundary touch.
        return touching(&verts[..1], &[1.0]);
    }

    for _ in 0..MAX_ITERATIONS {
        let best = epa_best_face(&faces);
        let Some(bi) = best else { break };
        let normal = faces[bi].normal;
        let dist = faces[bi].dist;
        let w = cso.support(&normal);
        let growth = normal.dot(&w.w) - dist;
        if growth < EPA_GROWTH_TOL
            || verts.iter().any(|u| (u.w - w.w).norm_squared() < 1e-24)
        {
            return epa_extract(&verts, &faces[bi]);
        }
        let wi = verts.len();
        verts.push(w);
        // Remove faces visible from w, keep the horizon, and re-triangulate.
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for f in faces.iter_mut() {
            if f.alive && f.normal.dot(&w.w) > f.dist + 1e-12 {
                f.alive = false;
                for k in 0..3 {
                    let e = (f.v[k], f.v[(k + 1) % 3]);
                    if let Some(pos) = horizon.iter().position(|&(a, b)| (b, a) == e) {
                        horizon.remove(pos);
                    } else {
                        horizon.push(e);
                    }
                }
            }
        }
        for (a, b) in horizon {
            if let Some(f) = make_epa_face(&verts, [a, b, wi]) {
                faces.push(f);
            }
        }
    }

    let best = epa_best_face(&faces).expect("EPA polytope lost all faces");
    epa_extract(&verts, &faces[best])
}

/// The face closest to the origin. Exact distance ties (co-centered boxes)
/// break toward the face whose separating direction points most upward, a
/// deterministic subgradient choice that suits a tabletop domain where
/// support queries already assume +z opposes gravity.
fn epa_best_face(faces: &[EpaFace]) -> Option<usize> {
    const TIE: f64 = 1e-12;
    let mut best: Option<usize> = None;
    for (i, f) in faces.iter().enumerate() {
        if !f.alive {
            continue;
        }
        best = Some(match best {
            None => i,
            Some(b) => {
                let d = f.dist - faces[b].dist;
                if d < -TIE || (d.abs() <= TIE && f.normal.z < faces[b].normal.z - TIE) {
                    i
                } else {
                    b
                }
            }
        });
    }
    best
}

fn epa_extract(verts: &[SupportPoint], face: &EpaFace) -> ContactResult {
    let q = face.normal * face.dist;
    let (a, b, c) = (verts[face.v[0]].w, verts[face.v[1]].w, verts[face.v[2]].w);
    // Barycentric coordinates of the projected origin in the face.
    let (v0, v1, v2) = (b - a, c - a, q - a);
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    let (l1, l2) = if denom.abs() < 1e-24 {
        (0.0, 0.0)
    } else {
        ((d11 * d20 - d01 * d21) / denom, (d00 * d21 - d01 * d20) / denom)
    };
    let l1 = l1.clamp(0.0, 1.0);
    let l2 = l2.clamp(0.0, 1.0 - l1);
    let l0 = 1.0 - l1 - l2;
    let pa = l0 * verts[face.v[0]].pa + l1 * verts[face.v[1]].pa + l2 * verts[face.v[2]].pa;
    let pb = l0 * verts[face.v[0]].pb + l1 * verts[face.v[1]].pb + l2 * verts[face.v[2]].pb;
    ContactResult { d: -face.dist, p_a: pa, p_b: pb, dir: -face.normal }
}
