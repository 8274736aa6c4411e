//! Object-centric task and motion planning over relative Cartesian frames.

pub mod constraints;
pub mod domain;
pub mod executor;
pub mod geometry;
pub mod liegroup;
pub mod optimizer;
pub mod planner;
pub mod scene;
pub mod scenegraph;
pub mod symbolic;
