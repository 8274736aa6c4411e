//! Scene description: objects with convex geometry in a kinematic tree,
//! the robot workspace, and the TOML file format the CLI reads and writes.

use nalgebra::{Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{ConvexShape, GeometryError, Shape};
use crate::liegroup::{exp_so3, AxisAngle, RelPose, Rot3};
use crate::scenegraph::{FrameId, KinematicTimeline, WORLD};
use crate::symbolic::{ObjectId, Proposition, SymbolicState};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scene parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scene: {0}")]
    Validation(String),
    #[error("invalid shape for object {name:?}: {source}")]
    Shape {
        name: String,
        #[source]
        source: GeometryError,
    },
}

/// One convex piece in the scene file. A box with a nonzero center is
/// stored internally as the hull of its corners so that piece geometry
/// stays expressed in the object frame.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceDoc {
    Box {
        half_extents: [f64; 3],
        #[serde(default)]
        center: Option<[f64; 3]>,
        #[serde(default)]
        com: Option<[f64; 3]>,
    },
    Hull {
        vertices: Vec<[f64; 3]>,
        com: [f64; 3],
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObjectDoc {
    pub name: String,
    pub movable: bool,
    pub parent: String,
    pub position: [f64; 3],
    #[serde(default)]
    pub axis_angle: [f64; 3],
    pub pieces: Vec<PieceDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RobotDoc {
    /// The end-effector starts here, axis-aligned.
    pub base: [f64; 3],
    pub workspace_radius: f64,
}

/// On-disk scene document.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneDoc {
    /// Direction gravity pulls, as an axis label; only "-z" is supported.
    pub gravity_axis: String,
    pub robot: RobotDoc,
    pub objects: Vec<ObjectDoc>,
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Validated scene: geometry built, parents resolved, world implicit.
#[derive(Clone, Debug)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub base: Vector3<f64>,
    pub workspace_radius: f64,
    doc: SceneDoc,
}

#[derive(Clone, Debug)]
pub struct SceneObject {
    pub name: String,
    pub movable: bool,
    /// Index of the parent object; `None` means the world frame.
    pub parent: Option<usize>,
    pub pose: RelPose,
    pub shape: Shape,
}

pub const EE_NAME: &str = "ee";

impl Scene {
    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        Self::from_doc(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn doc(&self) -> &SceneDoc {
        &self.doc
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&self.doc).expect("scene docs serialize")
    }

    pub fn from_doc(doc: SceneDoc) -> Result<Self, SceneError> {
        if doc.gravity_axis != "-z" {
            return Err(SceneError::Validation(format!(
                "unsupported gravity axis {:?} (supported: \"-z\")",
                doc.gravity_axis
            )));
        }
        if doc.robot.workspace_radius <= 0.0 {
            return Err(SceneError::Validation("workspace radius must be positive".into()));
        }
        let mut objects = Vec::with_capacity(doc.objects.len());
        for (i, od) in doc.objects.iter().enumerate() {
            if od.name == "world" || od.name == EE_NAME {
                return Err(SceneError::Validation(format!(
                    "object name {:?} is reserved",
                    od.name
                )));
            }
            if doc.objects.iter().take(i).any(|other| other.name == od.name) {
                return Err(SceneError::Validation(format!("duplicate object {:?}", od.name)));
            }
            let parent = if od.parent == "world" {
                None
            } else {
                // Parents must be declared before their children, which also
                // rules out cycles.
                Some(
                    doc.objects
                        .iter()
                        .take(i)
                        .position(|o| o.name == od.parent)
                        .ok_or_else(|| {
                            SceneError::Validation(format!(
                                "object {:?} references unknown or later parent {:?}",
                                od.name, od.parent
                            ))
                        })?,
                )
            };
            let mut pieces = Vec::with_capacity(od.pieces.len());
            for pd in &od.pieces {
                let piece = match pd {
                    PieceDoc::Box { half_extents, center, com } => {
                        let h = v3(half_extents);
                        let c = center.map(|c| v3(&c)).unwrap_or_else(Vector3::zeros);
                        if c == Vector3::zeros() {
                            let mut shape = ConvexShape::cuboid(h)
                                .map_err(|source| SceneError::Shape {
                                    name: od.name.clone(),
                                    source,
                                })?;
                            if let Some(com) = com {
                                shape.com = v3(com);
                            }
                            shape
                        } else {
                            // Offset box: store as a hull in object coordinates.
                            let mut verts = Vec::with_capacity(8);
                            for &sx in &[-1.0f64, 1.0] {
                                for &sy in &[-1.0f64, 1.0] {
                                    for &sz in &[-1.0f64, 1.0] {
                                        verts.push(
                                            c + Vector3::new(sx * h.x, sy * h.y, sz * h.z),
                                        );
                                    }
                                }
                            }
                            let com = com.map(|x| v3(&x)).unwrap_or(c);
                            ConvexShape::hull(verts, com).map_err(|source| SceneError::Shape {
                                name: od.name.clone(),
                                source,
                            })?
                        }
                    }
                    PieceDoc::Hull { vertices, com } => {
                        let verts = vertices.iter().map(v3).collect();
                        ConvexShape::hull(verts, v3(com)).map_err(|source| SceneError::Shape {
                            name: od.name.clone(),
                            source,
                        })?
                    }
                };
                pieces.push(piece);
            }
            let shape = Shape::new(pieces)
                .map_err(|source| SceneError::Shape { name: od.name.clone(), source })?;
            objects.push(SceneObject {
                name: od.name.clone(),
                movable: od.movable,
                parent,
                pose: RelPose::new(
                    v3(&od.position),
                    AxisAngle::from_vector(v3(&od.axis_angle)),
                ),
                shape,
            });
        }
        Ok(Self {
            objects,
            base: v3(&doc.robot.base),
            workspace_radius: doc.robot.workspace_radius,
            doc,
        })
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    /// Initial world pose of object `i` by composing initial relative poses.
    pub fn initial_world_pose(&self, i: usize) -> (Vector3<f64>, Rot3) {
        let obj = &self.objects[i];
        let (p, r) = (obj.pose.p, exp_so3(&obj.pose.r));
        match obj.parent {
            None => (p, r),
            Some(parent) => {
                let (pp, pr) = self.initial_world_pose(parent);
                (pp + pr.rotate(&p), pr * r)
            }
        }
    }

    /// Initial symbolic state: `on` facts from the parent relation and
    /// `inworkspace` for every object whose frame origin lies within the
    /// workspace radius of the robot base.
    pub fn initial_symbolic_state(&self) -> SymbolicState {
        let mut props = Vec::new();
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some(p) = obj.parent {
                props.push(Proposition::On(ObjectId(i), ObjectId(p)));
            }
            let (pos, _) = self.initial_world_pose(i);
            if (pos - self.base).norm() <= self.workspace_radius {
                props.push(Proposition::InWorkspace(ObjectId(i)));
            }
        }
        SymbolicState::new(props)
    }

    /// Builds the kinematic timeline skeleton: world, then one frame per
    /// object (same order as the object list), then the end-effector at the
    /// robot base. Returns the timeline with the object frame ids and the
    /// end-effector frame id.
    pub fn build_timeline(&self, horizon: usize) -> (KinematicTimeline, Vec<FrameId>, FrameId) {
        let mut tl = KinematicTimeline::new(horizon);
        let mut frames = Vec::with_capacity(self.objects.len());
        for obj in &self.objects {
            let parent = match obj.parent {
                None => WORLD,
                Some(p) => frames[p],
            };
            frames.push(tl.add_frame(&obj.name, parent, obj.pose));
        }
        let ee = tl.add_frame(EE_NAME, WORLD, RelPose::new(self.base, AxisAngle::zero()));
        (tl, frames, ee)
    }
}
