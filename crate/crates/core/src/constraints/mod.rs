//! Assembles an action skeleton into a nonlinear program: the end-effector
//! travel objective plus the per-action constraint blocks with analytic
//! Jacobians where closed forms exist and central finite differences where
//! the formulation prescribes them.
//!
//! Variables are the relative poses `xi_t`, one per timestep; timestep 0 is
//! pinned to the initial end-effector pose by an equality block. Pick and
//! place blocks touch a single timestep; push couples at most three.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};

use crate::geometry::Shape;
use crate::liegroup::{exp_so3, RelPose};
use crate::scene::Scene;
use crate::scenegraph::{
    position_var, rotation_var, FrameId, KinematicTimeline, SceneGraphError, VariableLayout,
};
use crate::symbolic::{ActionSkeleton, ControlRef, GroundedAction};

/// Central finite-difference step for all numerically differentiated
/// Jacobian parts.
pub const FD_STEP: f64 = 1e-6;
/// Residual reported when the push raycast has no direction or misses.
pub const RAYCAST_MISS_PENALTY: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Residual must vanish.
    Eq,
    /// Residual must satisfy `f <= 0`.
    Ineq,
}

/// Scaling of the linear (`alpha`) and angular (`beta`) travel terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        // A 10 cm translation and a ~0.22 rad rotation cost comparably.
        Self { alpha: 1.0, beta: 0.2 }
    }
}

/// Pose of the pushed object in the push support before the push: either an
/// earlier placement variable or the constant initial pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrevPlacement {
    Var(usize),
    Init(RelPose),
}

#[derive(Clone, Debug)]
pub enum BlockForm {
    /// `xi_0 - xi_init = 0`.
    PinInit,
    /// Signed squared distance of the end-effector control point into
    /// object `target`.
    Pick { t: usize, target: usize },
    /// Signed-distance touch between objects `a` (control) and `b` (target).
    Touch { t: usize, a: usize, b: usize },
    /// Per-piece center-of-mass containment in the support shadow.
    SupportArea { t: usize, a: usize, b: usize },
    /// Height of the placed frame above the support origin.
    SupportNormal { t: usize },
    /// Contact-normal alignment at the push positioning timestep.
    PushNormal { t: usize, a: usize, b: usize, prev: PrevPlacement },
    /// In-plane motion restriction at the pushing timestep.
    PushDirection { t_push: usize, prev: PrevPlacement },
    /// Non-penetration between the held chain and the environment.
    Collision { t: usize, manipulated: Vec<usize>, environment: Vec<usize> },
}

#[derive(Clone, Debug)]
pub struct ConstraintBlock {
    pub label: String,
    pub kind: ConstraintKind,
    pub dim: usize,
    /// Timesteps whose variables the Jacobian may touch; all other columns
    /// are exactly zero.
    pub timesteps: Vec<usize>,
    pub form: BlockForm,
}

#[derive(Debug, thiserror::Error)]
pub enum AssembleError {
    #[error(transparent)]
    SceneGraph(#[from] SceneGraphError),
    #[error("action {action} at t={t}: control frame is not on the end-effector chain")]
    ControlNotHeld { action: String, t: usize },
    #[error("push at t={t}: pushed object is parented to {found:?}, expected the push support")]
    PushSupportMismatch { t: usize, found: String },
    #[error("skeleton references object index {0} outside the scene")]
    UnknownObject(usize),
}

/// A fully assembled trajectory optimization problem for one skeleton.
#[derive(Clone, Debug)]
pub struct NlpProblem {
    pub timeline: KinematicTimeline,
    pub scene: Arc<Scene>,
    pub obj_frames: Vec<FrameId>,
    pub ee: FrameId,
    pub objective: ObjectiveConfig,
    pub blocks: Vec<ConstraintBlock>,
    pub xi_init: RelPose,
}

impl NlpProblem {
    pub fn layout(&self) -> VariableLayout {
        self.timeline.layout()
    }

    fn shape(&self, obj: usize) -> &Shape {
        &self.scene.objects[obj].shape
    }

    /// Linear plus angular end-effector travel, summed over consecutive
    /// timesteps.
    pub fn objective_value(&self, xi: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for t in 1..=self.timeline.horizon() {
            let (x0, r0) = self.timeline.world_pose(self.ee, t - 1, xi);
            let (x1, r1) = self.timeline.world_pose(self.ee, t, xi);
            let dtheta = crate::liegroup::angle_between(&r0, &r1);
            total += self.objective.alpha * (x1 - x0).norm_squared()
                + self.objective.beta * dtheta * dtheta;
        }
        total
    }

    pub fn objective_gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
        let mut grad = DVector::zeros(self.layout().dim());
        for t in 1..=self.timeline.horizon() {
            let (x0, r0) = self.timeline.world_pose(self.ee, t - 1, xi);
            let (x1, r1) = self.timeline.world_pose(self.ee, t, xi);
            let dx = x1 - x0;
            let j1 = self.timeline.position_jacobian(self.ee, t, xi);
            let j0 = self.timeline.position_jacobian(self.ee, t - 1, xi);
            j1.accumulate_weighted(&dx, 2.0 * self.objective.alpha, &mut grad);
            j0.accumulate_weighted(&dx, -2.0 * self.objective.alpha, &mut grad);
            let dtheta = crate::liegroup::angle_between(&r0, &r1);
            if dtheta > 0.0 {
                let g = self.timeline.orientation_distance_gradient(self.ee, t, xi);
                grad += 2.0 * self.objective.beta * dtheta * g;
            }
        }
        grad
    }

    /// Pose of `b`'s placement relative to the push support as a flat
    /// 6-vector (position, axis-angle).
    fn prev_pose6(&self, prev: &PrevPlacement, xi: &DVector<f64>) -> [f64; 6] {
        match prev {
            PrevPlacement::Var(s) => {
                let mut out = [0.0; 6];
                out.copy_from_slice(&xi.as_slice()[6 * s..6 * s + 6]);
                out
            }
            PrevPlacement::Init(pose) => pose.to_array(),
        }
    }

    pub fn eval_block(&self, block: &ConstraintBlock, xi: &DVector<f64>) -> DVector<f64> {
        match &block.form {
            BlockForm::PinInit => {
                let init = self.xi_init.to_array();
                DVector::from_fn(6, |k, _| xi[k] - init[k])
            }
            BlockForm::Pick { t, target } => {
                let x = position_var(xi, *t);
                let sp = self.shape(*target).signed_surface_point(&x);
                DVector::from_element(1, 0.5 * sp.signed_dist * sp.signed_dist.abs())
            }
            BlockForm::Touch { t, a, b } => {
                let pose = (position_var(xi, *t), exp_so3(&rotation_var(xi, *t)));
                let c = self.shape(*a).contact(&pose, self.shape(*b));
                DVector::from_element(1, 0.5 * c.d.abs() * c.d)
            }
            BlockForm::SupportArea { t, a, b } => {
                let p = position_var(xi, *t);
                let rot = exp_so3(&rotation_var(xi, *t));
                let pieces = self.shape(*a).pieces();
                DVector::from_fn(pieces.len(), |i, _| {
                    let com = p + rot.rotate(&pieces[i].com);
                    let pr = self.shape(*b).proj2d(&Vector2::new(com.x, com.y));
                    0.5 * pr.signed_dist * pr.signed_dist.abs()
                })
            }
            BlockForm::SupportNormal { t } => DVector::from_element(1, -xi[6 * t + 2]),
            BlockForm::PushNormal { t, a, b, prev } => {
                DVector::from_element(1, self.push_normal_value(*t, *a, *b, prev, xi))
            }
            BlockForm::PushDirection { t_push, prev } => {
                let prev6 = self.prev_pose6(prev, xi);
                let dz = xi[6 * t_push + 2] - prev6[2];
                let drx = xi[6 * t_push + 3] - prev6[3];
                let dry = xi[6 * t_push + 4] - prev6[4];
                DVector::from_element(1, 0.5 * (dz * dz + drx * drx + dry * dry))
            }
            BlockForm::Collision { t, manipulated, environment } => {
                let (d, _, _) = self.collision_min(*t, manipulated, environment, xi);
                DVector::from_element(1, -d)
            }
        }
    }

    /// Push-normal residual: cast a ray from the pushed object's center of
    /// mass opposite the push displacement, and measure how far the hit
    /// point is from the pusher's surface.
    fn push_normal_value(
        &self,
        t: usize,
        a: usize,
        b: usize,
        prev: &PrevPlacement,
        xi: &DVector<f64>,
    ) -> f64 {
        let prev6 = self.prev_pose6(prev, xi);
        let prev_pos = Vector3::new(prev6[0], prev6[1], prev6[2]);
        let prev_rot = exp_so3(&crate::liegroup::AxisAngle::new(prev6[3], prev6[4], prev6[5]));
        // Push displacement of b in the support plane, expressed in b's
        // pre-push frame.
        let delta = prev_rot.transpose().rotate(&(position_var(xi, t + 1) - prev_pos));
        if delta.norm() < 1e-9 {
            return RAYCAST_MISS_PENALTY;
        }
        let shape_b = self.shape(b);
        let Ok(hit_b) = shape_b.cast(&shape_b.com(), &-delta) else {
            return RAYCAST_MISS_PENALTY;
        };
        // Transform the contact point on b into a's frame.
        let pos_ab = position_var(xi, t);
        let rot_ab = exp_so3(&rotation_var(xi, t));
        let hit_a = rot_ab.transpose().rotate(&(hit_b - pos_ab));
        let p_a = self.shape(a).signed_surface_point(&hit_a).point;
        0.5 * (hit_a - p_a).norm_squared()
    }

    /// Minimum signed distance over manipulated x environment object pairs
    /// at timestep `t`, with the minimizing pair.
    fn collision_min(
        &self,
        t: usize,
        manipulated: &[usize],
        environment: &[usize],
        xi: &DVector<f64>,
    ) -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for &m in manipulated {
            for &e in environment {
                let d = self.pair_dist(m, e, t, xi);
                if d < best.0 {
                    best = (d, m, e);
                }
            }
        }
        best
    }

    fn pair_dist(&self, m: usize, e: usize, t: usize, xi: &DVector<f64>) -> f64 {
        let (pm, rm) = self.timeline.world_pose(self.obj_frames[m], t, xi);
        let (pe, re) = self.timeline.world_pose(self.obj_frames[e], t, xi);
        let rel = (re.transpose().rotate(&(pm - pe)), re.transpose() * rm);
        self.shape(m).dist(&rel, self.shape(e))
    }

    pub fn block_jacobian(&self, block: &ConstraintBlock, xi: &DVector<f64>) -> DMatrix<f64> {
        let dim = self.layout().dim();
        let mut jac = DMatrix::zeros(block.dim, dim);
        match &block.form {
            BlockForm::PinInit => {
                for k in 0..6 {
                    jac[(k, k)] = 1.0;
                }
            }
            BlockForm::Pick { t, target } => {
                let x = position_var(xi, *t);
                let sp = self.shape(*target).signed_surface_point(&x);
                // Outside, the distance gradient points from the projection
                // to the query point (this differs from the face normal in
                // edge regions); inside, it is the nearest face normal.
                let u = if sp.signed_dist > 1e-12 {
                    (x - sp.point) / sp.signed_dist
                } else {
                    sp.normal
                };
                for k in 0..3 {
                    jac[(0, 6 * t + k)] = sp.signed_dist.abs() * u[k];
                }
            }
            BlockForm::Touch { t, a, b } => {
                let pose = (position_var(xi, *t), exp_so3(&rotation_var(xi, *t)));
                let c = self.shape(*a).contact(&pose, self.shape(*b));
                // Linear part from the contact linearization; the angular
                // part by central differencing.
                for k in 0..3 {
                    jac[(0, 6 * t + k)] = c.d.abs() * c.dir[k];
                }
                self.fd_columns(block, xi, &[6 * t + 3, 6 * t + 4, 6 * t + 5], &mut jac);
            }
            BlockForm::SupportArea { t, a, b } => {
                let p = position_var(xi, *t);
                let rot = exp_so3(&rotation_var(xi, *t));
                let pieces = self.shape(*a).pieces();
                let mut needs_fd = false;
                for (i, piece) in pieces.iter().enumerate() {
                    let com = p + rot.rotate(&piece.com);
                    let pr = self.shape(*b).proj2d(&Vector2::new(com.x, com.y));
                    jac[(i, 6 * t)] = pr.signed_dist.abs() * pr.normal[0];
                    jac[(i, 6 * t + 1)] = pr.signed_dist.abs() * pr.normal[1];
                    if piece.com.norm() > 1e-12 {
                        needs_fd = true;
                    }
                }
                // The angular part vanishes when every piece com sits at the
                // frame origin; otherwise it is finite-differenced.
                if needs_fd {
                    self.fd_columns(block, xi, &[6 * t + 3, 6 * t + 4, 6 * t + 5], &mut jac);
                }
            }
            BlockForm::SupportNormal { t } => {
                jac[(0, 6 * t + 2)] = -1.0;
            }
            BlockForm::PushNormal { t, a, b, prev } => {
                // Analytic position part at the positioning timestep,
                // assuming the contact point stays fixed on the pusher.
                let prev6 = self.prev_pose6(prev, xi);
                let prev_pos = Vector3::new(prev6[0], prev6[1], prev6[2]);
                let prev_rot =
                    exp_so3(&crate::liegroup::AxisAngle::new(prev6[3], prev6[4], prev6[5]));
                let delta =
                    prev_rot.transpose().rotate(&(position_var(xi, t + 1) - prev_pos));
                let shape_b = self.shape(*b);
                let hit = if delta.norm() < 1e-9 {
                    None
                } else {
                    shape_b.cast(&shape_b.com(), &-delta).ok()
                };
                if let Some(hit_b) = hit {
                    let pos_ab = position_var(xi, *t);
                    let rot_ab = exp_so3(&rotation_var(xi, *t));
                    let hit_a = rot_ab.transpose().rotate(&(hit_b - pos_ab));
                    let p_a = self.shape(*a).signed_surface_point(&hit_a).point;
                    let d = hit_a - p_a;
                    let row = -(rot_ab.rotate(&d));
                    for k in 0..3 {
                        jac[(0, 6 * t + k)] = row[k];
                    }
                    // Remaining variables by central differencing.
                    let mut cols = vec![6 * t + 3, 6 * t + 4, 6 * t + 5];
                    cols.extend(6 * (t + 1)..6 * (t + 1) + 6);
                    if let PrevPlacement::Var(s) = prev {
                        cols.extend(6 * s..6 * s + 6);
                    }
                    self.fd_columns(block, xi, &cols, &mut jac);
                }
                // Raycast miss: infeasible region, zero Jacobian.
            }
            BlockForm::PushDirection { t_push, prev } => {
                let prev6 = self.prev_pose6(prev, xi);
                let d = [
                    xi[6 * t_push + 2] - prev6[2],
                    xi[6 * t_push + 3] - prev6[3],
                    xi[6 * t_push + 4] - prev6[4],
                ];
                for (k, dk) in d.iter().enumerate() {
                    jac[(0, 6 * t_push + 2 + k)] = *dk;
                    if let PrevPlacement::Var(s) = prev {
                        jac[(0, 6 * s + 2 + k)] = -*dk;
                    }
                }
            }
            BlockForm::Collision { t, manipulated, environment } => {
                let (_, m, e) = self.collision_min(*t, manipulated, environment, xi);
                if m == usize::MAX {
                    return jac;
                }
                // Numerical differentiation over the variables affecting the
                // minimizing pair, holding the pair selection fixed.
                let mut vars = self.timeline.ancestors_vars(self.obj_frames[m], *t);
                vars.extend(self.timeline.ancestors_vars(self.obj_frames[e], *t));
                let mut xp = xi.clone();
                for s in vars {
                    for k in 0..6 {
                        let col = 6 * s + k;
                        let old = xp[col];
                        xp[col] = old + FD_STEP;
                        let fp = -self.pair_dist(m, e, *t, &xp);
                        xp[col] = old - FD_STEP;
                        let fm = -self.pair_dist(m, e, *t, &xp);
                        xp[col] = old;
                        jac[(0, col)] = (fp - fm) / (2.0 * FD_STEP);
                    }
                }
            }
        }
        jac
    }

    /// Central finite differences of the whole block restricted to the
    /// given columns.
    fn fd_columns(
        &self,
        block: &ConstraintBlock,
        xi: &DVector<f64>,
        cols: &[usize],
        jac: &mut DMatrix<f64>,
    ) {
        let mut xp = xi.clone();
        for &col in cols {
            let old = xp[col];
            xp[col] = old + FD_STEP;
            let fp = self.eval_block(block, &xp);
            xp[col] = old - FD_STEP;
            let fm = self.eval_block(block, &xp);
            xp[col] = old;
            for row in 0..block.dim {
                jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * FD_STEP);
            }
        }
    }

    /// Maximum constraint violation at `xi`: absolute residual for
    /// equalities, positive part for inequalities.
    pub fn max_violation(&self, xi: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for block in &self.blocks {
            let v = self.eval_block(block, xi);
            for k in 0..block.dim {
                let viol = match block.kind {
                    ConstraintKind::Eq => v[k].abs(),
                    ConstraintKind::Ineq => v[k].max(0.0),
                };
                worst = worst.max(viol);
            }
        }
        worst
    }
}

/// Builds the NLP for a symbolically valid skeleton: the timeline attach
/// events, the per-action constraint blocks, the collision blocks, and the
/// initial-pose pin.
pub fn assemble(
    skeleton: &ActionSkeleton,
    scene: Arc<Scene>,
    objective: ObjectiveConfig,
) -> Result<NlpProblem, AssembleError> {
    let horizon = skeleton.horizon();
    let (mut timeline, obj_frames, ee) = scene.build_timeline(horizon);
    let n_objects = scene.objects.len();
    let frame_for = |r: ControlRef| -> Result<FrameId, AssembleError> {
        match r {
            ControlRef::EndEffector => Ok(ee),
            ControlRef::Object(o) => {
                obj_frames.get(o.0).copied().ok_or(AssembleError::UnknownObject(o.0))
            }
        }
    };

    // Timestep 0 re-expresses the end-effector's world pose as a variable,
    // pinned to the initial pose below.
    let (_, xi_init) = timeline.initial_pose(ee);
    timeline.attach(ee, crate::scenegraph::WORLD, 0)?;

    let mut blocks = vec![ConstraintBlock {
        label: "pin_init".into(),
        kind: ConstraintKind::Eq,
        dim: 6,
        timesteps: vec![0],
        form: BlockForm::PinInit,
    }];

    for (t, action_idx, step) in skeleton.timesteps() {
        let action = &skeleton.actions[action_idx];
        let (control, target) = action.control_target(step);
        let control_frame = frame_for(control)?;
        let target_frame = frame_for(target)?;

        // Push needs the pushed object's pre-push placement before the
        // attach rewires it.
        let push_prev = if let (GroundedAction::Push { b, c, .. }, 1) = (action, step) {
            let b_frame = obj_frames[b.0];
            let (parent, var) = timeline.parent_and_var(b_frame, t - 1);
            if parent != obj_frames[c.0] {
                return Err(AssembleError::PushSupportMismatch {
                    t,
                    found: timeline.frame_name(parent).to_string(),
                });
            }
            Some(match var {
                Some(s) => PrevPlacement::Var(s),
                None => PrevPlacement::Init(timeline.initial_pose(b_frame).1),
            })
        } else {
            None
        };

        timeline.attach(control_frame, target_frame, t)?;

        let label = |name: &str| format!("{name}[t={t}]");
        match (action, step) {
            (GroundedAction::Pick { a }, 0) => {
                blocks.push(ConstraintBlock {
                    label: label("pick"),
                    kind: ConstraintKind::Ineq,
                    dim: 1,
                    timesteps: vec![t],
                    form: BlockForm::Pick { t, target: a.0 },
                });
            }
            (GroundedAction::Place { a, b }, 0) => {
                blocks.push(ConstraintBlock {
                    label: label("touch"),
                    kind: ConstraintKind::Eq,
                    dim: 1,
                    timesteps: vec![t],
                    form: BlockForm::Touch { t, a: a.0, b: b.0 },
                });
                blocks.push(ConstraintBlock {
                    label: label("support_area"),
                    kind: ConstraintKind::Ineq,
                    dim: scene.objects[a.0].shape.pieces().len(),
                    timesteps: vec![t],
                    form: BlockForm::SupportArea { t, a: a.0, b: b.0 },
                });
                blocks.push(ConstraintBlock {
                    label: label("support_normal"),
                    kind: ConstraintKind::Ineq,
                    dim: 1,
                    timesteps: vec![t],
                    form: BlockForm::SupportNormal { t },
                });
            }
            (GroundedAction::Push { a, b, .. }, 0) => {
                let prev = {
                    let b_frame = obj_frames[b.0];
                    let (_, var) = timeline.parent_and_var(b_frame, t);
                    match var {
                        Some(s) if s < t => PrevPlacement::Var(s),
                        _ => PrevPlacement::Init(timeline.initial_pose(b_frame).1),
                    }
                };
                let mut ts = vec![t, t + 1];
                if let PrevPlacement::Var(s) = prev {
                    ts.push(s);
                    ts.sort_unstable();
                }
                blocks.push(ConstraintBlock {
                    label: label("push_normal"),
                    kind: ConstraintKind::Eq,
                    dim: 1,
                    timesteps: ts,
                    form: BlockForm::PushNormal { t, a: a.0, b: b.0, prev },
                });
            }
            (GroundedAction::Push { .. }, 1) => {
                let prev = push_prev.expect("computed above");
                let mut ts = vec![t];
                if let PrevPlacement::Var(s) = prev {
                    ts.push(s);
                    ts.sort_unstable();
                }
                blocks.push(ConstraintBlock {
                    label: label("push_direction"),
                    kind: ConstraintKind::Eq,
                    dim: 1,
                    timesteps: ts,
                    form: BlockForm::PushDirection { t_push: t, prev },
                });
            }
            _ => unreachable!(),
        }

        // Collision: objects rigidly carried with the end-effector versus
        // everything else.
        let path = timeline
            .path_to_ancestor(ee, control_frame, t)
            .ok_or_else(|| AssembleError::ControlNotHeld {
                action: format!("{action:?}"),
                t,
            })?;
        let manipulated: Vec<usize> =
            (0..n_objects).filter(|&o| path.contains(&obj_frames[o])).collect();
        let environment: Vec<usize> =
            (0..n_objects).filter(|&o| !path.contains(&obj_frames[o])).collect();
        if !manipulated.is_empty() && !environment.is_empty() {
            let mut vars = std::collections::BTreeSet::new();
            for &o in manipulated.iter().chain(&environment) {
                vars.extend(timeline.ancestors_vars(obj_frames[o], t));
            }
            blocks.push(ConstraintBlock {
                label: label("collision"),
                kind: ConstraintKind::Ineq,
                dim: 1,
                timesteps: vars.into_iter().collect(),
                form: BlockForm::Collision { t, manipulated, environment },
            });
        }
    }

    Ok(NlpProblem {
        timeline,
        scene,
        obj_frames,
        ee,
        objective,
        blocks,
        xi_init,
    })
}

/// Builds the all-zeros start iterate for a problem.
pub fn zero_start(problem: &NlpProblem) -> DVector<f64> {
    DVector::zeros(problem.layout().dim())
}

/// Recovers the per-timestep relative poses from a solution vector.
pub fn solution_poses(problem: &NlpProblem, xi: &DVector<f64>) -> Vec<RelPose> {
    let layout = problem.layout();
    (0..=layout.horizon).map(|t| layout.pose(xi, t)).collect()
}

#[cfg(test)]
mod tests;
