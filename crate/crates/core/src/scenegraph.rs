//! Time-indexed kinematic tree mapping relative-pose variables to world
//! poses and their Jacobians.
//!
//! Each manipulation action reparents a control frame under a target frame
//! at some timestep; the new relative pose is the optimization variable of
//! that timestep and persists until the same frame is manipulated again.
//! Frames never manipulated keep their constant initial pose and contribute
//! no variables.

use std::collections::BTreeSet;

use nalgebra::{DVector, Matrix3x6, Vector3};

use crate::liegroup::{
    exp_so3, rotate_point_jacobian, trace_gradient, AxisAngle, RelPose, Rot3, TraceForm,
};

/// Index of a frame in the scene; frame 0 is the world root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(pub usize);

pub const WORLD: FrameId = FrameId(0);

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SceneGraphError {
    #[error("the world frame cannot be a control frame")]
    WorldImmutable,
    #[error("frame cannot be attached to itself")]
    SelfAttach,
    #[error("attaching frame {control:?} under {target:?} at t={t} creates a cycle")]
    CycleDetected { control: FrameId, target: FrameId, t: usize },
    #[error("timestep {0} already has a control frame")]
    DuplicateTimestep(usize),
    #[error("timestep {0} is beyond the horizon {1}")]
    BeyondHorizon(usize, usize),
    #[error("unknown frame name {0:?}")]
    UnknownFrame(String),
}

#[derive(Clone, Debug)]
struct FrameInfo {
    name: String,
    initial_parent: FrameId,
    initial_pose: RelPose,
    /// Reparenting events, sorted by timestep; the variable index of an
    /// event equals its timestep.
    events: Vec<(usize, FrameId)>,
}

/// Flat variable layout: one 6-dof relative pose per timestep `0..=horizon`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariableLayout {
    pub horizon: usize,
}

impl VariableLayout {
    pub fn dim(&self) -> usize {
        6 * (self.horizon + 1)
    }

    pub fn block(&self, t: usize) -> std::ops::Range<usize> {
        6 * t..6 * t + 6
    }

    pub fn pose(&self, xi: &DVector<f64>, t: usize) -> RelPose {
        RelPose::from_slice(&xi.as_slice()[6 * t..6 * t + 6])
    }

    pub fn set_pose(&self, xi: &mut DVector<f64>, t: usize, pose: &RelPose) {
        xi.as_mut_slice()[6 * t..6 * t + 6].copy_from_slice(&pose.to_array());
    }
}

/// Extracts the rotation variable of timestep `s` from the flat vector.
pub fn rotation_var(xi: &DVector<f64>, s: usize) -> AxisAngle {
    AxisAngle::new(xi[6 * s + 3], xi[6 * s + 4], xi[6 * s + 5])
}

/// Extracts the position variable of timestep `s` from the flat vector.
pub fn position_var(xi: &DVector<f64>, s: usize) -> Vector3<f64> {
    Vector3::new(xi[6 * s], xi[6 * s + 1], xi[6 * s + 2])
}

/// The kinematic tree over the planning horizon, plus the control/target
/// assignment of every timestep. Immutable once a skeleton is assembled.
#[derive(Clone, Debug)]
pub struct KinematicTimeline {
    frames: Vec<FrameInfo>,
    control: Vec<Option<FrameId>>,
    target: Vec<Option<FrameId>>,
    horizon: usize,
}

impl KinematicTimeline {
    pub fn new(horizon: usize) -> Self {
        Self {
            frames: vec![FrameInfo {
                name: "world".to_string(),
                initial_parent: WORLD,
                initial_pose: RelPose::identity(),
                events: Vec::new(),
            }],
            control: vec![None; horizon + 1],
            target: vec![None; horizon + 1],
            horizon,
        }
    }

    pub fn add_frame(&mut self, name: &str, parent: FrameId, pose: RelPose) -> FrameId {
        let id = FrameId(self.frames.len());
        self.frames.push(FrameInfo {
            name: name.to_string(),
            initial_parent: parent,
            initial_pose: pose,
            events: Vec::new(),
        });
        id
    }

    pub fn layout(&self) -> VariableLayout {
        VariableLayout { horizon: self.horizon }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_name(&self, i: FrameId) -> &str {
        &self.frames[i.0].name
    }

    pub fn find_frame(&self, name: &str) -> Result<FrameId, SceneGraphError> {
        self.frames
            .iter()
            .position(|f| f.name == name)
            .map(FrameId)
            .ok_or_else(|| SceneGraphError::UnknownFrame(name.to_string()))
    }

    pub fn control(&self, t: usize) -> Option<FrameId> {
        self.control.get(t).copied().flatten()
    }

    pub fn target(&self, t: usize) -> Option<FrameId> {
        self.target.get(t).copied().flatten()
    }

    pub fn initial_pose(&self, i: FrameId) -> (FrameId, RelPose) {
        let f = &self.frames[i.0];
        (f.initial_parent, f.initial_pose)
    }

    /// Parent of `i` at timestep `t` and the variable timestep defining its
    /// relative pose (`None` when the pose is the initial constant).
    pub fn parent_and_var(&self, i: FrameId, t: usize) -> (FrameId, Option<usize>) {
        let f = &self.frames[i.0];
        match f.events.partition_point(|&(s, _)| s <= t) {
            0 => (f.initial_parent, None),
            n => {
                let (s, parent) = f.events[n - 1];
                (parent, Some(s))
            }
        }
    }

    /// Reparents `control` under `target` from timestep `t` onwards. The new
    /// relative pose becomes variable `xi_t`.
    pub fn attach(
        &mut self,
        control: FrameId,
        target: FrameId,
        t: usize,
    ) -> Result<(), SceneGraphError> {
        if control == WORLD {
            return Err(SceneGraphError::WorldImmutable);
        }
        if control == target {
            return Err(SceneGraphError::SelfAttach);
        }
        if t > self.horizon {
            return Err(SceneGraphError::BeyondHorizon(t, self.horizon));
        }
        if self.control[t].is_some() {
            return Err(SceneGraphError::DuplicateTimestep(t));
        }
        // No cycles: target must not be a descendant of control at t.
        let mut cursor = target;
        while cursor != WORLD {
            if cursor == control {
                return Err(SceneGraphError::CycleDetected { control, target, t });
            }
            cursor = self.parent_and_var(cursor, t).0;
        }
        let f = &mut self.frames[control.0];
        debug_assert!(f.events.last().map_or(true, |&(s, _)| s < t));
        f.events.push((t, target));
        self.control[t] = Some(control);
        self.target[t] = Some(target);
        Ok(())
    }

    /// Pose of frame `i` relative to its parent at timestep `t`.
    pub fn relative_pose(&self, i: FrameId, t: usize, xi: &DVector<f64>) -> (Vector3<f64>, Rot3) {
        assert!(i != WORLD, "the world frame has no relative pose");
        let (_, var) = self.parent_and_var(i, t);
        let pose = match var {
            Some(s) => self.layout().pose(xi, s),
            None => self.frames[i.0].initial_pose,
        };
        (pose.p, exp_so3(&pose.r))
    }

    /// World pose of frame `i` at timestep `t`, composing relative poses up
    /// the kinematic chain.
    pub fn world_pose(&self, i: FrameId, t: usize, xi: &DVector<f64>) -> (Vector3<f64>, Rot3) {
        let mut pos = Vector3::zeros();
        let mut rot = Rot3::identity();
        let mut cursor = i;
        let mut depth = 0;
        while cursor != WORLD {
            let (p, r) = self.relative_pose(cursor, t, xi);
            pos = p + r.rotate(&pos);
            rot = r * rot;
            cursor = self.parent_and_var(cursor, t).0;
            depth += 1;
            assert!(depth <= self.frames.len(), "kinematic tree has a cycle");
        }
        (pos, rot)
    }

    /// Chain from `i` up to (excluding) the world at timestep `t`.
    fn chain(&self, i: FrameId, t: usize) -> Vec<FrameId> {
        let mut out = Vec::new();
        let mut cursor = i;
        while cursor != WORLD {
            out.push(cursor);
            cursor = self.parent_and_var(cursor, t).0;
        }
        out
    }

    /// Frames on the path from `from` up to and including `to`, in leaf-to-
    /// root order. `None` if `to` is not an ancestor of `from`.
    pub fn path_to_ancestor(&self, from: FrameId, to: FrameId, t: usize) -> Option<Vec<FrameId>> {
        let mut out = Vec::new();
        let mut cursor = from;
        loop {
            out.push(cursor);
            if cursor == to {
                return Some(out);
            }
            if cursor == WORLD {
                return None;
            }
            cursor = self.parent_and_var(cursor, t).0;
        }
    }

    /// Variable timesteps whose poses affect the world pose of `i` at `t`:
    /// the last-manipulated timesteps of all manipulated ancestors.
    pub fn ancestors_vars(&self, i: FrameId, t: usize) -> BTreeSet<usize> {
        self.chain(i, t)
            .into_iter()
            .filter_map(|j| self.parent_and_var(j, t).1)
            .collect()
    }

    /// Jacobian of the world position of `i` at `t` with respect to the flat
    /// variable vector, stored as per-timestep 3x6 blocks.
    pub fn position_jacobian(&self, i: FrameId, t: usize, xi: &DVector<f64>) -> PositionJacobian {
        let chain = self.chain(i, t);
        let mut blocks = std::collections::BTreeMap::new();
        // Position of `i` expressed in the frame at the cursor.
        let mut x_in_j = Vector3::zeros();
        for &j in &chain {
            let (parent, var) = self.parent_and_var(j, t);
            if let Some(s) = var {
                let pose = self.layout().pose(xi, s);
                let parent_rot = if parent == WORLD {
                    Rot3::identity()
                } else {
                    self.world_pose(parent, t, xi).1
                };
                let mut block = Matrix3x6::zeros();
                block.fixed_view_mut::<3, 3>(0, 0).copy_from(parent_rot.matrix());
                block
                    .fixed_view_mut::<3, 3>(0, 3)
                    .copy_from(&(parent_rot.matrix() * rotate_point_jacobian(&pose.r, &x_in_j)));
                blocks.insert(s, block);
            }
            let (p, r) = self.relative_pose(j, t, xi);
            x_in_j = p + r.rotate(&x_in_j);
        }
        PositionJacobian { blocks, layout: self.layout() }
    }

    /// Rotation chain of `i` at `t` ordered root-to-leaf, each link paired
    /// with its variable timestep if the link is manipulated.
    fn rotation_chain(&self, i: FrameId, t: usize, xi: &DVector<f64>) -> Vec<(Rot3, Option<usize>)> {
        let mut links: Vec<(Rot3, Option<usize>)> = self
            .chain(i, t)
            .into_iter()
            .map(|j| {
                let (_, var) = self.parent_and_var(j, t);
                (self.relative_pose(j, t, xi).1, var)
            })
            .collect();
        links.reverse();
        links
    }

    /// Gradient of the relative rotation angle of frame `ee` between
    /// timesteps `t-1` and `t` with respect to all variables. Defined as
    /// zero at zero angle; the arccos denominator is clamped at 1e-6 near
    /// pi. Position-variable entries are exactly zero.
    pub fn orientation_distance_gradient(
        &self,
        ee: FrameId,
        t: usize,
        xi: &DVector<f64>,
    ) -> DVector<f64> {
        assert!(t >= 1);
        let layout = self.layout();
        let mut grad = DVector::zeros(layout.dim());
        let prev = self.rotation_chain(ee, t - 1, xi);
        let curr = self.rotation_chain(ee, t, xi);
        let phi_prev = prev.iter().fold(Rot3::identity(), |acc, (r, _)| acc * *r);
        let phi_curr = curr.iter().fold(Rot3::identity(), |acc, (r, _)| acc * *r);
        let delta = phi_prev.transpose() * phi_curr;
        let c = ((delta.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let dtheta = c.acos();
        if dtheta < 1e-6 {
            return grad;
        }
        let denom = (1.0 - c * c).sqrt().max(1e-6);
        let factor = -1.0 / (2.0 * denom);

        // Constant sub-chain products to the left and right of variable s.
        let split = |links: &[(Rot3, Option<usize>)], s: usize| -> Option<(Rot3, Rot3)> {
            let k = links.iter().position(|(_, var)| *var == Some(s))?;
            let left = links[..k].iter().fold(Rot3::identity(), |acc, (r, _)| acc * *r);
            let right = links[k + 1..].iter().fold(Rot3::identity(), |acc, (r, _)| acc * *r);
            Some((left, right))
        };

        let mut vars: BTreeSet<usize> = BTreeSet::new();
        vars.extend(prev.iter().filter_map(|(_, v)| *v));
        vars.extend(curr.iter().filter_map(|(_, v)| *v));
        for s in vars {
            let omega = rotation_var(xi, s);
            let g = match (split(&prev, s), split(&curr, s)) {
                (Some((lp, mp)), Some((lc, mc))) => {
                    // Delta = M_p^T X^-1 (L_p^T L_c) X M_c.
                    let a = mp.transpose();
                    let b = lp.transpose() * lc;
                    trace_gradient(TraceForm::AXinvBXC, &a, &b, &mc, &omega)
                }
                (Some((lp, mp)), None) => {
                    // Delta = M_p^T X^-1 (L_p^T phi_curr).
                    let a = mp.transpose();
                    let b = lp.transpose() * phi_curr;
                    trace_gradient(TraceForm::AXinvB, &a, &b, &Rot3::identity(), &omega)
                }
                (None, Some((lc, mc))) => {
                    // Delta = (phi_prev^T L_c) X M_c.
                    let b = phi_prev.transpose() * lc;
                    trace_gradient(TraceForm::BXC, &Rot3::identity(), &b, &mc, &omega)
                }
                (None, None) => continue,
            };
            for k in 0..3 {
                grad[6 * s + 3 + k] = factor * g[k];
            }
        }
        grad
    }
}

/// Sparse 3 x 6(T+1) Jacobian as per-timestep blocks.
#[derive(Clone, Debug)]
pub struct PositionJacobian {
    pub blocks: std::collections::BTreeMap<usize, Matrix3x6<f64>>,
    layout: VariableLayout,
}

impl PositionJacobian {
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(3, self.layout.dim());
        for (&s, block) in &self.blocks {
            m.view_mut((0, 6 * s), (3, 6)).copy_from(block);
        }
        m
    }

    /// Accumulates `scale * J^T w` into a flat gradient vector.
    pub fn accumulate_weighted(&self, w: &Vector3<f64>, scale: f64, grad: &mut DVector<f64>) {
        for (&s, block) in &self.blocks {
            let contrib = scale * (block.transpose() * w);
            for k in 0..6 {
                grad[6 * s + k] += contrib[k];
            }
        }
    }
}
