//! SO(3) exponential/logarithmic maps and their Jacobians.
//!
//! Rotations are parameterized as axis-angle vectors (axis scaled by angle),
//! the tangent-space coordinates used for every rotation variable in the
//! trajectory optimizer. Besides the maps themselves, this module provides
//! the derivative of the exponential map, the Jacobian of a rotated point
//! with respect to the axis-angle coordinates, and the trace-based gradients
//! needed to differentiate relative-angle objectives through products of
//! rotation matrices.

use nalgebra::{Matrix3, Vector3};

/// Below this angle `exp_so3` switches to its second-order series.
pub const EXP_SMALL_ANGLE: f64 = 1e-7;
/// Below this angle `dexp_so3` returns the identity approximation.
pub const DEXP_SMALL_ANGLE: f64 = 1e-4;
/// Within this margin of pi, `log_so3` uses the diagonal (symmetric-part)
/// branch; the generic branch divides by sin(theta) and loses precision there.
pub const LOG_NEAR_PI: f64 = 1e-3;

/// Axis-angle rotation: direction is the rotation axis, magnitude the angle
/// in radians. Any magnitude is accepted as input to the exponential map;
/// the logarithmic map always returns an angle in `[0, pi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    pub omega: Vector3<f64>,
}

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { omega: Vector3::new(x, y, z) }
    }

    pub fn zero() -> Self {
        Self { omega: Vector3::zeros() }
    }

    pub fn from_vector(omega: Vector3<f64>) -> Self {
        Self { omega }
    }

    /// Rotation angle `theta = |omega|`.
    pub fn angle(&self) -> f64 {
        self.omega.norm()
    }
}

impl From<Vector3<f64>> for AxisAngle {
    fn from(omega: Vector3<f64>) -> Self {
        Self { omega }
    }
}

/// A 3x3 rotation matrix. Constructors check orthonormality; values produced
/// by `exp_so3` and by composition of valid rotations satisfy the invariants
/// by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot3 {
    m: Matrix3<f64>,
}

/// Tolerance on `R^T R = I` and `det R = 1` for `Rot3::from_matrix`.
pub const ROT3_TOL: f64 = 1e-9;

impl Rot3 {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    /// Wraps a matrix after checking orthonormality and determinant.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, InvalidRotation> {
        let err = (m.transpose() * m - Matrix3::identity()).norm();
        if err > ROT3_TOL {
            return Err(InvalidRotation::NotOrthonormal { err });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROT3_TOL {
            return Err(InvalidRotation::BadDeterminant { det });
        }
        Ok(Self { m })
    }

    /// Wraps a matrix that is known orthonormal (e.g. a product of valid
    /// rotations). Debug builds still assert the invariant.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-6);
        Self { m }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose() }
    }

    pub fn rotate(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.m * p
    }
}

impl std::ops::Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3 { m: self.m * rhs.m }
    }
}

impl std::ops::Mul<&Rot3> for &Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: &Rot3) -> Rot3 {
        Rot3 { m: self.m * rhs.m }
    }
}

#[derive(Debug, thiserror::Error, Clone, Copy, PartialEq)]
pub enum InvalidRotation {
    #[error("matrix is not orthonormal (|R^T R - I| = {err:.3e})")]
    NotOrthonormal { err: f64 },
    #[error("matrix determinant is {det:.6}, expected +1")]
    BadDeterminant { det: f64 },
}

/// 6-dof relative pose of a control frame in a target frame: position plus
/// axis-angle orientation. One of these per timestep is the optimization
/// variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelPose {
    pub p: Vector3<f64>,
    pub r: AxisAngle,
}

impl RelPose {
    pub fn new(p: Vector3<f64>, r: AxisAngle) -> Self {
        Self { p, r }
    }

    pub fn identity() -> Self {
        Self { p: Vector3::zeros(), r: AxisAngle::zero() }
    }

    pub fn rotation(&self) -> Rot3 {
        exp_so3(&self.r)
    }

    /// Flattens to `[p, omega]`, the per-timestep variable layout.
    pub fn to_array(&self) -> [f64; 6] {
        [self.p.x, self.p.y, self.p.z, self.r.omega.x, self.r.omega.y, self.r.omega.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            p: Vector3::new(v[0], v[1], v[2]),
            r: AxisAngle::new(v[3], v[4], v[5]),
        }
    }
}

/// Skew-symmetric cross-product matrix `[v]x` with `[v]x w = v x w`.
pub fn cross_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// SO(3) exponential map (Rodrigues). For `theta < EXP_SMALL_ANGLE` the
/// sin/cos coefficients are replaced by their second-order series, which
/// keeps the result orthonormal to well below `ROT3_TOL`.
pub fn exp_so3(omega: &AxisAngle) -> Rot3 {
    let w = omega.omega;
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = cross_matrix(&w);
    let (a, b) = if theta < EXP_SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rot3 { m: Matrix3::identity() + a * k + b * (k * k) }
}

/// SO(3) logarithmic map; the returned angle lies in `[0, pi]`.
///
/// Three branches: a series for tiny angles, the generic
/// `theta / (2 sin theta)` scaling of the skew part, and a symmetric-part
/// branch within `LOG_NEAR_PI` of pi where the skew part degrades. At exactly
/// pi the axis sign is chosen so its largest-magnitude component is positive.
pub fn log_so3(rot: &Rot3) -> AxisAngle {
    let r = &rot.m;
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();

    if theta < 1e-7 {
        // skew = 2 sin(theta) * axis; theta/(2 sin theta) -> 1/2.
        return AxisAngle::from_vector(0.5 * skew);
    }
    if theta < std::f64::consts::PI - LOG_NEAR_PI {
        return AxisAngle::from_vector(theta / (2.0 * theta.sin()) * skew);
    }

    // Near pi: R = cos(t) I + sin(t) [n]x + (1 - cos(t)) n n^T, so the
    // diagonal gives n_i^2 with a well-conditioned 1 - cos(t) ~ 2 divisor.
    let one_minus_cos = 1.0 - cos_theta;
    let mut axis = Vector3::zeros();
    let diag = Vector3::new(r[(0, 0)], r[(1, 1)], r[(2, 2)]);
    let mut k = 0;
    for i in 1..3 {
        if diag[i] > diag[k] {
            k = i;
        }
    }
    axis[k] = ((diag[k] - cos_theta) / one_minus_cos).max(0.0).sqrt();
    let (i, j) = ((k + 1) % 3, (k + 2) % 3);
    axis[i] = (r[(i, k)] + r[(k, i)]) / (2.0 * one_minus_cos * axis[k]);
    axis[j] = (r[(j, k)] + r[(k, j)]) / (2.0 * one_minus_cos * axis[k]);
    axis.normalize_mut();
    // Resolve the overall sign from the skew part when it is above noise;
    // at exactly pi both signs are equivalent and the construction above
    // already leaves the dominant component positive.
    if skew.dot(&axis) < 0.0 {
        axis = -axis;
    }
    AxisAngle::from_vector(theta * axis)
}

/// Derivative of the exponential map (the left Jacobian of SO(3)):
///
///   d_omega exp(omega) = I + (1 - cos t)/t^2 [w]x + (t - sin t)/t^3 [w]x^2
///
/// For `theta < DEXP_SMALL_ANGLE` this returns the identity approximation.
pub fn dexp_so3(omega: &AxisAngle) -> Matrix3<f64> {
    let w = omega.omega;
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    if theta < DEXP_SMALL_ANGLE {
        return Matrix3::identity();
    }
    let k = cross_matrix(&w);
    Matrix3::identity()
        + (1.0 - theta.cos()) / theta2 * k
        + (theta - theta.sin()) / (theta2 * theta) * (k * k)
}

/// Jacobian of the rotated point `exp(omega) p` with respect to `omega`:
/// `-[exp(omega) p]x d_omega exp(omega)`.
pub fn rotate_point_jacobian(omega: &AxisAngle, p: &Vector3<f64>) -> Matrix3<f64> {
    let rotated = exp_so3(omega).rotate(p);
    -cross_matrix(&rotated) * dexp_so3(omega)
}

/// Derivative of `exp(omega)` along coordinate `i`:
/// `[dexp(omega)_i]x exp(omega)` where `dexp(omega)_i` is the i-th column
/// of `dexp_so3`.
pub fn dexp_coordinate(omega: &AxisAngle, i: usize) -> Matrix3<f64> {
    let dexp = dexp_so3(omega);
    let col: Vector3<f64> = dexp.column(i).into();
    cross_matrix(&col) * exp_so3(omega).m
}

/// Relative rotation angle between two rotations, in `[0, pi]`. The arccos
/// argument is clamped against floating-point excursions of the trace.
pub fn angle_between(r1: &Rot3, r2: &Rot3) -> f64 {
    let delta = r1.m.transpose() * r2.m;
    let c = ((delta.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// How a relative rotation depends on a single rotation variable
/// `X = exp(omega)`, with `A`, `B`, `C` constant in `omega`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceForm {
    /// Delta does not involve X at all.
    Const,
    /// Delta = B X C.
    BXC,
    /// Delta = A X^-1 B.
    AXinvB,
    /// Delta = A X^-1 B X C.
    AXinvBXC,
}

/// Gradient of `trace(Delta)` with respect to the matrix `X = exp(omega)`
/// for the composition case selected by `form`:
///
///   Const:      0
///   B X C:      (C B)^T
///   A X^-1 B:   -(X^-1 B A X^-1)^T
///   A X^-1 B X C: (C A X^-1 B - X^-1 B X C A X^-1)^T
pub fn dtrace_composed(
    form: TraceForm,
    a: &Rot3,
    b: &Rot3,
    c: &Rot3,
    omega: &AxisAngle,
) -> Matrix3<f64> {
    let x = exp_so3(omega).m;
    let x_inv = x.transpose();
    match form {
        TraceForm::Const => Matrix3::zeros(),
        TraceForm::BXC => (c.m * b.m).transpose(),
        TraceForm::AXinvB => -(x_inv * b.m * a.m * x_inv).transpose(),
        TraceForm::AXinvBXC => {
            (c.m * a.m * x_inv * b.m - x_inv * b.m * x * c.m * a.m * x_inv).transpose()
        }
    }
}

/// Gradient of `trace(Delta(exp(omega)))` with respect to `omega`, chaining
/// `dtrace_composed` with the per-coordinate derivative of the exponential.
pub fn trace_gradient(
    form: TraceForm,
    a: &Rot3,
    b: &Rot3,
    c: &Rot3,
    omega: &AxisAngle,
) -> Vector3<f64> {
    if form == TraceForm::Const {
        return Vector3::zeros();
    }
    let g = dtrace_composed(form, a, b, c, omega);
    let mut out = Vector3::zeros();
    for i in 0..3 {
        out[i] = (g.transpose() * dexp_coordinate(omega, i)).trace();
    }
    out
}

/// Evaluates the composition `Delta(X)` selected by `form` at `X = exp(omega)`.
/// Used by tests and by finite-difference fallbacks.
pub fn compose_trace_form(
    form: TraceForm,
    a: &Rot3,
    b: &Rot3,
    c: &Rot3,
    omega: &AxisAngle,
) -> Matrix3<f64> {
    let x = exp_so3(omega).m;
    match form {
        TraceForm::Const => a.m,
        TraceForm::BXC => b.m * x * c.m,
        TraceForm::AXinvB => a.m * x.transpose() * b.m,
        TraceForm::AXinvBXC => a.m * x.transpose() * b.m * x * c.m,
    }
}
