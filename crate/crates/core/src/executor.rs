//! Kinematic execution of a plan with an operational-space controller.
//!
//! Each plan timestep drives the end-effector toward the relative target
//! pose recomputed every step from the target frame's live world pose, so
//! scripted perturbations of targets or loose objects are absorbed without
//! replanning. Commanded accelerations integrate directly (unit effective
//! mass, semi-implicit Euler); kinematic switches fire once a segment
//! converges: attach on pick and push start, detach on place.

use std::sync::Arc;

use nalgebra::{Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::Shape;
use crate::liegroup::{angle_between, exp_so3, log_so3, AxisAngle, RelPose, Rot3};
use crate::planner::{PlanDoc, StepDoc, StepKind};
use crate::scene::{Scene, EE_NAME};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerGains {
    /// Position stiffness (also used for the angular term), 1/s^2.
    pub k_p: f64,
    /// Velocity damping (also used for the angular term), 1/s.
    pub k_v: f64,
    /// Obstacle damping gain.
    pub k_obs: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        // Critically damped with a ~0.1 s time constant.
        Self { k_p: 100.0, k_v: 20.0, k_obs: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExecutorConfig {
    pub gains: ControllerGains,
    /// Integration step, seconds; must lie in (0, 0.02].
    pub dt: f64,
    /// Wall-clock-free per-action budget in simulated seconds.
    pub timeout_per_action: f64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self { gains: ControllerGains::default(), dt: 1e-3, timeout_per_action: 20.0 }
    }
}

/// Convergence thresholds for switching to the next action.
pub const POS_TOL: f64 = 5e-3;
pub const ANG_TOL: f64 = 0.02;
pub const SPEED_TOL: f64 = 1e-2;
/// Manipulated/environment penetration beyond this depth aborts execution.
pub const COLLISION_DEPTH: f64 = 5e-3;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScriptEvent {
    /// Simulation time at which the displacement is applied.
    pub time: f64,
    pub frame: String,
    pub position: [f64; 3],
    #[serde(default)]
    pub axis_angle: [f64; 3],
}

/// Scripted world-frame displacements of scene objects during execution.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PerturbationScript {
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
}

impl PerturbationScript {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scripts serialize")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("plan references frame {0:?} not present in the scene")]
    UnknownFrame(String),
    #[error("script references unknown frame {0:?}")]
    UnknownScriptFrame(String),
    #[error("script event times must be nondecreasing")]
    ScriptOrder,
    #[error("script displaces frame {frame:?} at t={time}s while it is rigidly held")]
    HeldFramePerturbed { frame: String, time: f64 },
    #[error("dt must lie in (0, 0.02], got {0}")]
    BadDt(f64),
    #[error("plan has no steps")]
    EmptyPlan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Timeout,
    Collision,
}

/// One integration-step sample of the world state and the command.
#[derive(Clone, Debug)]
pub struct TraceSample {
    pub time: f64,
    /// End-effector world pose followed by each object's world pose, as
    /// position plus axis-angle.
    pub poses: Vec<RelPose>,
    pub linear_command: Vector3<f64>,
    pub angular_command: Vector3<f64>,
    pub action_index: usize,
}

/// Terminal record of one plan timestep.
#[derive(Clone, Debug)]
pub struct SegmentResult {
    pub t: usize,
    pub control: String,
    pub target: String,
    /// Achieved relative pose of the control frame in the target frame at
    /// the kinematic switch.
    pub achieved: RelPose,
    /// Desired relative pose from the plan.
    pub desired: RelPose,
    pub sim_time: f64,
}

#[derive(Clone, Debug)]
pub struct ExecutionTrace {
    pub samples: Vec<TraceSample>,
    pub segments: Vec<SegmentResult>,
    pub outcome: Outcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParentRef {
    World,
    Object(usize),
    Ee,
}

/// Live kinematic world during execution.
struct Simulator {
    scene: Arc<Scene>,
    parent: Vec<ParentRef>,
    rel: Vec<(Vector3<f64>, Rot3)>,
    ee_pos: Vector3<f64>,
    ee_rot: Rot3,
    ee_vel: Vector3<f64>,
    ee_omega: Vector3<f64>,
}

impl Simulator {
    fn new(scene: Arc<Scene>) -> Self {
        let parent = scene
            .objects
            .iter()
            .map(|o| match o.parent {
                None => ParentRef::World,
                Some(p) => ParentRef::Object(p),
            })
            .collect();
        let rel = scene
            .objects
            .iter()
            .map(|o| (o.pose.p, exp_so3(&o.pose.r)))
            .collect();
        let ee_pos = scene.base;
        Self {
            scene,
            parent,
            rel,
            ee_pos,
            ee_rot: Rot3::identity(),
            ee_vel: Vector3::zeros(),
            ee_omega: Vector3::zeros(),
        }
    }

    fn world_pose(&self, frame: ParentRef) -> (Vector3<f64>, Rot3) {
        match frame {
            ParentRef::World => (Vector3::zeros(), Rot3::identity()),
            ParentRef::Ee => (self.ee_pos, self.ee_rot),
            ParentRef::Object(i) => {
                let (pp, pr) = self.world_pose(self.parent[i]);
                let (p, r) = &self.rel[i];
                (pp + pr.rotate(p), pr * *r)
            }
        }
    }

    /// True if the object is rigidly carried with the end-effector.
    fn is_held(&self, i: usize) -> bool {
        match self.parent[i] {
            ParentRef::Ee => true,
            ParentRef::Object(p) => self.is_held(p),
            ParentRef::World => false,
        }
    }

    fn reparent(&mut self, i: usize, new_parent: ParentRef) {
        let (wp, wr) = self.world_pose(ParentRef::Object(i));
        let (pp, pr) = self.world_pose(new_parent);
        self.parent[i] = new_parent;
        self.rel[i] = (pr.transpose().rotate(&(wp - pp)), pr.transpose() * wr);
    }

    /// Applies a world-frame displacement to an object.
    fn displace(&mut self, i: usize, delta_p: &Vector3<f64>, delta_r: &AxisAngle) {
        let (wp, wr) = self.world_pose(ParentRef::Object(i));
        let new_wp = wp + delta_p;
        let new_wr = exp_so3(delta_r) * wr;
        let (pp, pr) = self.world_pose(self.parent[i]);
        self.rel[i] = (pr.transpose().rotate(&(new_wp - pp)), pr.transpose() * new_wr);
    }

    fn shape(&self, i: usize) -> &Shape {
        &self.scene.objects[i].shape
    }

    /// Closest (held, environment) pair: signed distance and the direction
    /// from the held chain toward the obstacle, in world coordinates.
    fn closest_obstacle(&self) -> Option<(f64, Vector3<f64>)> {
        let held: Vec<usize> = (0..self.scene.objects.len()).filter(|&i| self.is_held(i)).collect();
        if held.is_empty() {
            return None;
        }
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for &m in &held {
            let (pm, rm) = self.world_pose(ParentRef::Object(m));
            for e in 0..self.scene.objects.len() {
                if self.is_held(e) {
                    continue;
                }
                let (pe, re) = self.world_pose(ParentRef::Object(e));
                let rel = (re.transpose().rotate(&(pm - pe)), re.transpose() * rm);
                let c = self.shape(m).contact(&rel, self.shape(e));
                if best.map_or(true, |(d, _)| c.d < d) {
                    // dir points the way that separates m from e; the
                    // obstacle lies the other way. Map to world coordinates.
                    best = Some((c.d, re.rotate(&-c.dir)));
                }
            }
        }
        best
    }
}

fn frame_ref(scene: &Scene, name: &str) -> Result<ParentRef, ExecError> {
    if name == EE_NAME {
        return Ok(ParentRef::Ee);
    }
    scene
        .object_index(name)
        .map(ParentRef::Object)
        .ok_or_else(|| ExecError::UnknownFrame(name.to_string()))
}

/// Desired end-effector pose for a plan step: the target's live pose,
/// composed with the optimized relative pose and the control-to-ee offset.
fn desired_ee_pose(
    sim: &Simulator,
    target: ParentRef,
    xi: &RelPose,
    offset: &(Vector3<f64>, Rot3),
) -> (Vector3<f64>, Rot3) {
    let (tp, tr) = sim.world_pose(target);
    let control_p = tp + tr.rotate(&xi.p);
    let control_r = tr * exp_so3(&xi.r);
    (control_p + control_r.rotate(&offset.0), control_r * offset.1)
}

/// Attractive PD command toward the desired pose plus the obstacle-damping
/// term that only bleeds velocity toward the closest obstacle.
fn osc_command(
    sim: &Simulator,
    x_des: &(Vector3<f64>, Rot3),
    gains: &ControllerGains,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut linear = -gains.k_p * (sim.ee_pos - x_des.0) - gains.k_v * sim.ee_vel;
    let e_rot = log_so3(&(x_des.1 * sim.ee_rot.transpose()));
    let angular = gains.k_p * e_rot.omega - gains.k_v * sim.ee_omega;
    if gains.k_obs > 0.0 {
        if let Some((_, toward_obstacle)) = sim.closest_obstacle() {
            let v_obs = sim.ee_vel.dot(&toward_obstacle);
            if v_obs > 0.0 {
                linear -= gains.k_obs * v_obs * toward_obstacle;
            }
        }
    }
    (linear, angular)
}

pub fn execute(
    plan: &PlanDoc,
    scene: Arc<Scene>,
    script: &PerturbationScript,
    cfg: &ExecutorConfig,
) -> Result<ExecutionTrace, ExecError> {
    if !(cfg.dt > 0.0 && cfg.dt <= 0.02) {
        return Err(ExecError::BadDt(cfg.dt));
    }
    if plan.steps.is_empty() {
        return Err(ExecError::EmptyPlan);
    }
    for step in &plan.steps {
        frame_ref(&scene, &step.control)?;
        frame_ref(&scene, &step.target)?;
    }
    for pair in script.events.windows(2) {
        if pair[1].time < pair[0].time {
            return Err(ExecError::ScriptOrder);
        }
    }
    for ev in &script.events {
        if ev.frame == EE_NAME || scene.object_index(&ev.frame).is_none() {
            return Err(ExecError::UnknownScriptFrame(ev.frame.clone()));
        }
    }

    let mut sim = Simulator::new(scene.clone());
    let mut samples = Vec::new();
    let mut segments = Vec::new();
    let mut time = 0.0;
    let mut next_event = 0;

    for step in &plan.steps {
        let control = frame_ref(&scene, &step.control)?;
        let target = frame_ref(&scene, &step.target)?;
        let xi = RelPose::from_slice(&step.xi);

        // Control-to-ee offset, frozen at segment start (rigid during the
        // segment; for the pushed object the contact is frozen here too).
        let (cp, cr) = sim.world_pose(control);
        let offset =
            (cr.transpose().rotate(&(sim.ee_pos - cp)), cr.transpose() * sim.ee_rot);
        // For a push slide, remember the pushed object's pre-push placement
        // and its rigid attachment to the end-effector chain.
        let slide = if step.kind == StepKind::PushSlide {
            let ParentRef::Object(b) = control else {
                return Err(ExecError::UnknownFrame(step.control.clone()));
            };
            let (bp, br) = sim.world_pose(control);
            let ee_to_b =
                (sim.ee_rot.transpose().rotate(&(bp - sim.ee_pos)), sim.ee_rot.transpose() * br);
            let frozen = sim.rel[b];
            let frozen_aa = log_so3(&frozen.1);
            Some((b, ee_to_b, frozen.0.z, frozen_aa.omega.x, frozen_aa.omega.y))
        } else {
            None
        };

        let segment_start = time;
        let mut converged = false;
        while time - segment_start < cfg.timeout_per_action {
            // Scripted displacements due now.
            while next_event < script.events.len() && script.events[next_event].time <= time {
                let ev = &script.events[next_event];
                let idx = scene.object_index(&ev.frame).expect("validated above");
                if sim.is_held(idx) {
                    return Err(ExecError::HeldFramePerturbed {
                        frame: ev.frame.clone(),
                        time: ev.time,
                    });
                }
                sim.displace(
                    idx,
                    &Vector3::new(ev.position[0], ev.position[1], ev.position[2]),
                    &AxisAngle::new(ev.axis_angle[0], ev.axis_angle[1], ev.axis_angle[2]),
                );
                next_event += 1;
            }

            let x_des = desired_ee_pose(&sim, target, &xi, &offset);
            let (lin, ang) = osc_command(&sim, &x_des, &cfg.gains);

            // Unit effective mass: commands integrate directly.
            sim.ee_vel += lin * cfg.dt;
            sim.ee_omega += ang * cfg.dt;
            sim.ee_pos += sim.ee_vel * cfg.dt;
            sim.ee_rot = exp_so3(&AxisAngle::from_vector(sim.ee_omega * cfg.dt)) * sim.ee_rot;

            // A pushed object follows the pusher but stays on its support
            // plane: height, roll, and pitch stay frozen by construction.
            if let Some((b, ee_to_b, z0, rx0, ry0)) = &slide {
                let raw_p = sim.ee_pos + sim.ee_rot.rotate(&ee_to_b.0);
                let raw_r = sim.ee_rot * ee_to_b.1;
                let (pp, pr) = sim.world_pose(sim.parent[*b]);
                let mut rel_p = pr.transpose().rotate(&(raw_p - pp));
                let rel_r = pr.transpose() * raw_r;
                let mut aa = log_so3(&rel_r).omega;
                rel_p.z = *z0;
                aa.x = *rx0;
                aa.y = *ry0;
                sim.rel[*b] = (rel_p, exp_so3(&AxisAngle::from_vector(aa)));
            }

            time += cfg.dt;
            let mut poses = Vec::with_capacity(1 + scene.objects.len());
            poses.push(RelPose::new(sim.ee_pos, log_so3(&sim.ee_rot)));
            for i in 0..scene.objects.len() {
                let (p, r) = sim.world_pose(ParentRef::Object(i));
                poses.push(RelPose::new(p, log_so3(&r)));
            }
            samples.push(TraceSample {
                time,
                poses,
                linear_command: lin,
                angular_command: ang,
                action_index: step.action_index,
            });

            // Deep penetration between the held chain and the environment
            // aborts the run.
            if let Some((d, _)) = sim.closest_obstacle() {
                if d < -COLLISION_DEPTH {
                    return Ok(ExecutionTrace { samples, segments, outcome: Outcome::Collision });
                }
            }

            let pos_err = (sim.ee_pos - x_des.0).norm();
            let ang_err = angle_between(&sim.ee_rot, &x_des.1);
            if pos_err < POS_TOL && ang_err < ANG_TOL && sim.ee_vel.norm() < SPEED_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Ok(ExecutionTrace { samples, segments, outcome: Outcome::Timeout });
        }

        // Kinematic switch and terminal bookkeeping.
        let (tp, tr) = sim.world_pose(target);
        let (cp, cr) = sim.world_pose(control);
        let achieved = RelPose::new(
            tr.transpose().rotate(&(cp - tp)),
            log_so3(&(tr.transpose() * cr)),
        );
        segments.push(SegmentResult {
            t: step.t,
            control: step.control.clone(),
            target: step.target.clone(),
            achieved,
            desired: xi,
            sim_time: time,
        });
        match step.kind {
            // Pick positions the end-effector relative to the grasped
            // object (the step's target), which then rides the hand.
            StepKind::Pick => {
                if let ParentRef::Object(a) = target {
                    sim.reparent(a, ParentRef::Ee);
                }
            }
            // Place releases the control object onto the step's target.
            StepKind::Place => {
                if let (ParentRef::Object(a), t) = (control, target) {
                    sim.reparent(a, t);
                }
            }
            // The pushed object's rigid-follow began this segment and ends
            // here; it simply remains a child of its support.
            StepKind::PushPosition | StepKind::PushSlide => {}
        }
    }

    Ok(ExecutionTrace { samples, segments, outcome: Outcome::Success })
}

/// Writes the trace as delimiter-separated text with a header row; numbers
/// carry 17 significant digits so reruns diff byte-identically.
pub fn write_trace<W: std::io::Write>(
    trace: &ExecutionTrace,
    scene: &Scene,
    out: &mut W,
) -> std::io::Result<()> {
    let mut header = vec!["time".to_string()];
    let mut frames = vec![EE_NAME.to_string()];
    frames.extend(scene.objects.iter().map(|o| o.name.clone()));
    for f in &frames {
        for c in ["px", "py", "pz", "rx", "ry", "rz"] {
            header.push(format!("{f}_{c}"));
        }
    }
    for c in ["cmd_ax", "cmd_ay", "cmd_az", "cmd_wx", "cmd_wy", "cmd_wz"] {
        header.push(c.to_string());
    }
    header.push("action".to_string());
    writeln!(out, "{}", header.join(","))?;
    for s in &trace.samples {
        let mut row = Vec::with_capacity(header.len());
        row.push(format!("{:.16e}", s.time));
        for pose in &s.poses {
            for v in pose.to_array() {
                row.push(format!("{v:.16e}"));
            }
        }
        for v in s.linear_command.iter().chain(s.angular_command.iter()) {
            row.push(format!("{v:.16e}"));
        }
        row.push(s.action_index.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Standalone controller step for testing: returns the commanded linear and
/// angular acceleration for the given desired relative pose of `control` in
/// `target` under the live scene state.
pub fn osc_step(
    scene: Arc<Scene>,
    ee_pose: (Vector3<f64>, Rot3),
    ee_velocity: (Vector3<f64>, Vector3<f64>),
    held: &[&str],
    control: &str,
    target: &str,
    xi: &RelPose,
    gains: &ControllerGains,
) -> Result<(Vector3<f64>, Vector3<f64>), ExecError> {
    let mut sim = Simulator::new(scene.clone());
    sim.ee_pos = ee_pose.0;
    sim.ee_rot = ee_pose.1;
    sim.ee_vel = ee_velocity.0;
    sim.ee_omega = ee_velocity.1;
    for name in held {
        let idx = scene
            .object_index(name)
            .ok_or_else(|| ExecError::UnknownFrame(name.to_string()))?;
        sim.reparent(idx, ParentRef::Ee);
    }
    let control = frame_ref(&scene, control)?;
    let target = frame_ref(&scene, target)?;
    let (cp, cr) = sim.world_pose(control);
    let offset = (cr.transpose().rotate(&(sim.ee_pos - cp)), cr.transpose() * sim.ee_rot);
    let x_des = desired_ee_pose(&sim, target, xi, &offset);
    Ok(osc_command(&sim, &x_des, gains))
}
