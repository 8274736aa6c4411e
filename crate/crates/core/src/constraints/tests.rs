use std::sync::Arc;

use approx::assert_abs_diff_eq;
use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::domain;
use crate::liegroup::AxisAngle;
use crate::scene::{ObjectDoc, PieceDoc, RobotDoc, SceneDoc};
use crate::symbolic::{enumerate_skeletons, ObjectId};

fn box_object(name: &str, movable: bool, position: [f64; 3], half: [f64; 3]) -> ObjectDoc {
    ObjectDoc {
        name: name.into(),
        movable,
        parent: "world".into(),
        position,
        axis_angle: [0.0; 3],
        pieces: vec![PieceDoc::Box { half_extents: half, center: None, com: None }],
    }
}

fn scene_with(objects: Vec<ObjectDoc>) -> Arc<Scene> {
    let doc = SceneDoc {
        gravity_axis: "-z".into(),
        robot: RobotDoc { base: [0.0, 0.0, 0.5], workspace_radius: 10.0 },
        objects,
    };
    Arc::new(Scene::from_doc(doc).unwrap())
}

/// Problem shell with a bare timeline; block evaluations that only read the
/// variable vector can run against it directly.
fn shell(scene: Arc<Scene>, horizon: usize) -> NlpProblem {
    let (timeline, obj_frames, ee) = scene.build_timeline(horizon);
    NlpProblem {
        timeline,
        scene,
        obj_frames,
        ee,
        objective: ObjectiveConfig::default(),
        blocks: Vec::new(),
        xi_init: RelPose::identity(),
    }
}

fn block(form: BlockForm, kind: ConstraintKind, dim: usize) -> ConstraintBlock {
    ConstraintBlock { label: "test".into(), kind, dim, timesteps: vec![], form }
}

fn xi_with(problem: &NlpProblem, t: usize, pose: [f64; 6]) -> DVector<f64> {
    let mut xi = DVector::zeros(problem.layout().dim());
    xi.as_mut_slice()[6 * t..6 * t + 6].copy_from_slice(&pose);
    xi
}

#[test]
fn pick_signed_squared_distance() {
    // 1 m cube.
    let scene = scene_with(vec![box_object("cube", true, [0.0; 3], [0.5; 3])]);
    let p = shell(scene, 1);
    let b = block(BlockForm::Pick { t: 1, target: 0 }, ConstraintKind::Ineq, 1);

    // Control point at the cube center.
    let xi = xi_with(&p, 1, [0.0; 6]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], -0.125, epsilon = 1e-12);
    // On the surface.
    let xi = xi_with(&p, 1, [0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], 0.0, epsilon = 1e-12);
    // Above the top face: f = +1/2 * 0.25^2, J_p = |d| n.
    let xi = xi_with(&p, 1, [0.0, 0.0, 0.75, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], 0.03125, epsilon = 1e-12);
    let j = p.block_jacobian(&b, &xi);
    assert_abs_diff_eq!(j[(0, 6 + 2)], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(j[(0, 6)], 0.0, epsilon = 1e-12);
    // Angular columns are exactly zero.
    for k in 3..6 {
        assert_eq!(j[(0, 6 + k)], 0.0);
    }
}

#[test]
fn pick_value_continuous_across_surface() {
    let scene = scene_with(vec![box_object("cube", true, [0.0; 3], [0.5; 3])]);
    let p = shell(scene, 1);
    let b = block(BlockForm::Pick { t: 1, target: 0 }, ConstraintKind::Ineq, 1);
    for eps in [1e-4, 1e-6, 1e-8] {
        let outside = p.eval_block(&b, &xi_with(&p, 1, [0.0, 0.0, 0.5 + eps, 0.0, 0.0, 0.0]))[0];
        let inside = p.eval_block(&b, &xi_with(&p, 1, [0.0, 0.0, 0.5 - eps, 0.0, 0.0, 0.0]))[0];
        assert!(outside.abs() < eps && inside.abs() < eps, "discontinuity at surface");
    }
}

#[test]
fn touch_residuals() {
    let scene = scene_with(vec![
        box_object("a", true, [0.0; 3], [0.5; 3]),
        box_object("b", false, [2.0, 0.0, 0.0], [0.5; 3]),
    ]);
    let p = shell(scene, 1);
    let b = block(BlockForm::Touch { t: 1, a: 0, b: 1 }, ConstraintKind::Eq, 1);
    // Touching faces.
    let xi = xi_with(&p, 1, [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], 0.0, epsilon = 1e-9);
    // Gap of 0.2.
    let xi = xi_with(&p, 1, [0.0, 0.0, 1.2, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], 0.02, epsilon = 1e-9);
    // Overlap of 0.2.
    let xi = xi_with(&p, 1, [0.0, 0.0, 0.8, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], -0.02, epsilon = 1e-8);
    // Linear Jacobian: d * dd/dxi = |d| n with n from b toward a.
    let xi = xi_with(&p, 1, [0.0, 0.0, 1.2, 0.0, 0.0, 0.0]);
    let j = p.block_jacobian(&b, &xi);
    assert_abs_diff_eq!(j[(0, 6 + 2)], 0.2, epsilon = 1e-9);
}

#[test]
fn support_area_residuals() {
    // Unit-cube support: its shadow is the unit square.
    let scene = scene_with(vec![
        box_object("a", true, [0.0; 3], [0.1; 3]),
        box_object("b", false, [1.0, 0.0, 0.0], [0.5; 3]),
    ]);
    let p = shell(scene, 1);
    let b = block(BlockForm::SupportArea { t: 1, a: 0, b: 1 }, ConstraintKind::Ineq, 1);
    // Center of mass over the shadow center.
    let xi = xi_with(&p, 1, [0.0, 0.0, 0.6, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], -0.125, epsilon = 1e-12);
    // On the shadow boundary.
    let xi = xi_with(&p, 1, [0.5, 0.0, 0.6, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], 0.0, epsilon = 1e-12);
    // 0.25 outside the edge: f = +1/2 * 0.25^2, J_xy = 0.25 * n.
    let xi = xi_with(&p, 1, [0.75, 0.0, 0.6, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], 0.03125, epsilon = 1e-12);
    let j = p.block_jacobian(&b, &xi);
    assert_abs_diff_eq!(j[(0, 6)], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(j[(0, 6 + 1)], 0.0, epsilon = 1e-12);
    // Convex piece with origin com: angular columns exactly zero.
    for k in 3..6 {
        assert_eq!(j[(0, 6 + k)], 0.0);
    }
}

#[test]
fn support_normal_residuals() {
    let scene = scene_with(vec![box_object("a", true, [0.0; 3], [0.1; 3])]);
    let p = shell(scene, 1);
    let b = block(BlockForm::SupportNormal { t: 1 }, ConstraintKind::Ineq, 1);
    for (z, expected) in [(0.5, -0.5), (0.0, 0.0), (-0.1, 0.1)] {
        let xi = xi_with(&p, 1, [0.0, 0.0, z, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], expected, epsilon = 1e-15);
    }
    let xi = xi_with(&p, 1, [0.0; 6]);
    let j = p.block_jacobian(&b, &xi);
    assert_eq!(j[(0, 6 + 2)], -1.0);
    assert_eq!(j.iter().filter(|v| **v != 0.0).count(), 1);
}

/// Push scenario: pusher a (half 0.05 cube) positioned at timestep 1 in the
/// pushed cube b's frame (half 0.1), pushed at timestep 2 relative to the
/// support c. b starts at (0,0,0.1) on c, identity rotation.
fn push_fixture() -> (NlpProblem, ConstraintBlock, ConstraintBlock) {
    let scene = scene_with(vec![
        box_object("a", true, [0.0, 0.0, 0.0], [0.05; 3]),
        box_object("b", true, [0.0, 0.0, 0.1], [0.1; 3]),
        box_object("c", false, [0.0, 0.0, -0.5], [1.0, 1.0, 0.1]),
    ]);
    let p = shell(scene, 2);
    let prev = PrevPlacement::Init(RelPose::new(
        nalgebra::Vector3::new(0.0, 0.0, 0.1),
        AxisAngle::zero(),
    ));
    let normal = block(
        BlockForm::PushNormal { t: 1, a: 0, b: 1, prev },
        ConstraintKind::Eq,
        1,
    );
    let direction = block(
        BlockForm::PushDirection { t_push: 2, prev },
        ConstraintKind::Eq,
        1,
    );
    (p, normal, direction)
}

#[test]
fn push_normal_residuals() {
    let (p, normal, _) = push_fixture();
    // Push along +x: the cast from b's com along -delta hits b at x=-0.1.
    // Pusher surface (+x face at center.x + 0.05) coincides when the pusher
    // center sits at -0.15.
    let mut xi = DVector::zeros(p.layout().dim());
    xi.as_mut_slice()[6..12].copy_from_slice(&[-0.15, 0.0, 0.0, 0.0, 0.0, 0.0]);
    xi.as_mut_slice()[12..18].copy_from_slice(&[0.3, 0.0, 0.1, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&normal, &xi)[0], 0.0, epsilon = 1e-12);
    // Pusher 0.05 behind the contact point.
    xi.as_mut_slice()[6..12].copy_from_slice(&[-0.2, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&normal, &xi)[0], 0.00125, epsilon = 1e-12);
    // Zero displacement means no push direction: large miss penalty.
    let xi0 = xi_with(&p, 1, [-0.15, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let mut xi0 = xi0;
    xi0.as_mut_slice()[12..18].copy_from_slice(&[0.0, 0.0, 0.1, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&normal, &xi0)[0], RAYCAST_MISS_PENALTY, epsilon = 1e-12);
    let j = p.block_jacobian(&normal, &xi0);
    assert_eq!(j.norm(), 0.0, "miss region has a zero Jacobian");
}

#[test]
fn push_normal_jacobian_matches_finite_differences() {
    let (p, normal, _) = push_fixture();
    let mut rng = StdRng::seed_from_u64(12);
    let mut checked = 0;
    for _ in 0..60 {
        let mut xi = DVector::zeros(p.layout().dim());
        // Pusher near the trailing face, pushed pose displaced in plane.
        xi.as_mut_slice()[6..12].copy_from_slice(&[
            -0.18 + rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        ]);
        xi.as_mut_slice()[12..18].copy_from_slice(&[
            0.3 + rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            0.1 + rng.gen_range(-0.02..0.02),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
        ]);
        if p.eval_block(&normal, &xi)[0] >= RAYCAST_MISS_PENALTY {
            continue;
        }
        let analytic = p.block_jacobian(&normal, &xi);
        let mut ok = true;
        for col in 6..18 {
            let mut xp = xi.clone();
            let mut xm = xi.clone();
            xp[col] += FD_STEP;
            xm[col] -= FD_STEP;
            let fp = p.eval_block(&normal, &xp)[0];
            let fm = p.eval_block(&normal, &xm)[0];
            let central = (fp - fm) / (2.0 * FD_STEP);
            let f0 = p.eval_block(&normal, &xi)[0];
            let forward = (fp - f0) / FD_STEP;
            let backward = (f0 - fm) / FD_STEP;
            // Skip feature-switch kinks where one-sided slopes disagree.
            if (forward - backward).abs() > 1e-3 * central.abs().max(1.0) {
                ok = false;
                break;
            }
            assert!(
                (analytic[(0, col)] - central).abs() < 1e-3 * central.abs().max(1.0),
                "col {col}: analytic {} vs fd {central}",
                analytic[(0, col)]
            );
        }
        if ok {
            checked += 1;
        }
    }
    assert!(checked >= 20, "only {checked} interior samples");
}

#[test]
fn push_direction_residuals() {
    let (p, _, direction) = push_fixture();
    // Equal z / rx / ry: residual zero.
    let mut xi = DVector::zeros(p.layout().dim());
    xi.as_mut_slice()[12..18].copy_from_slice(&[0.4, 0.2, 0.1, 0.0, 0.0, 0.3]);
    assert_abs_diff_eq!(p.eval_block(&direction, &xi)[0], 0.0, epsilon = 1e-15);
    // dz = 0.1 alone: f = 0.005.
    xi.as_mut_slice()[12..18].copy_from_slice(&[0.4, 0.2, 0.2, 0.0, 0.0, 0.3]);
    assert_abs_diff_eq!(p.eval_block(&direction, &xi)[0], 0.005, epsilon = 1e-15);
    // With a constant previous placement there is no s-block: the Jacobian
    // only touches the pushing timestep.
    let j = p.block_jacobian(&direction, &xi);
    for col in 0..12 {
        assert_eq!(j[(0, col)], 0.0);
    }
    assert_abs_diff_eq!(j[(0, 14)], 0.1, epsilon = 1e-15);
}

#[test]
fn push_direction_variable_prev_negates_jacobian() {
    let scene = scene_with(vec![box_object("b", true, [0.0, 0.0, 0.1], [0.1; 3])]);
    let p = shell(scene, 3);
    let b = block(
        BlockForm::PushDirection { t_push: 3, prev: PrevPlacement::Var(1) },
        ConstraintKind::Eq,
        1,
    );
    let mut xi = DVector::zeros(p.layout().dim());
    xi[6 + 2] = 0.1; // previous placement z
    xi[18 + 2] = 0.25; // push z
    let j = p.block_jacobian(&b, &xi);
    assert_abs_diff_eq!(j[(0, 18 + 2)], 0.15, epsilon = 1e-15);
    assert_abs_diff_eq!(j[(0, 6 + 2)], -0.15, epsilon = 1e-15);
}

#[test]
fn collision_residuals() {
    // One movable cube between two fixed slabs.
    let scene = scene_with(vec![
        box_object("m", true, [0.0, 0.0, 1.0], [0.1; 3]),
        box_object("floor", false, [0.0, 0.0, 0.0], [1.0, 1.0, 0.1]),
    ]);
    let (mut timeline, obj_frames, ee) = scene.build_timeline(1);
    timeline.attach(obj_frames[0], crate::scenegraph::WORLD, 1).unwrap();
    let p = NlpProblem {
        timeline,
        scene,
        obj_frames,
        ee,
        objective: ObjectiveConfig::default(),
        blocks: Vec::new(),
        xi_init: RelPose::identity(),
    };
    let b = block(
        BlockForm::Collision { t: 1, manipulated: vec![0], environment: vec![1] },
        ConstraintKind::Ineq,
        1,
    );
    // Separated by 0.2: satisfied with slack.
    let xi = xi_with(&p, 1, [0.0, 0.0, 0.4, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], -0.2, epsilon = 1e-9);
    // Penetrating by 0.05: violated by the overlap amount.
    let xi = xi_with(&p, 1, [0.0, 0.0, 0.15, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(p.eval_block(&b, &xi)[0], 0.05, epsilon = 1e-8);
    // The finite-difference Jacobian pushes the cube up.
    let j = p.block_jacobian(&b, &xi);
    assert!((j[(0, 6 + 2)] + 1.0).abs() < 1e-4, "dz column {}", j[(0, 6 + 2)]);
}

#[test]
fn objective_travel_values_and_gradient() {
    // An end-effector reparented to the world at each timestep: world pose
    // equals the variable directly.
    let scene = scene_with(vec![box_object("dummy", false, [5.0, 5.0, 5.0], [0.1; 3])]);
    let (mut timeline, obj_frames, ee) = scene.build_timeline(2);
    timeline.attach(ee, crate::scenegraph::WORLD, 0).unwrap();
    timeline.attach(ee, crate::scenegraph::WORLD, 1).unwrap();
    timeline.attach(ee, crate::scenegraph::WORLD, 2).unwrap();
    let p = NlpProblem {
        timeline,
        scene,
        obj_frames,
        ee,
        objective: ObjectiveConfig { alpha: 1.0, beta: 0.0 },
        blocks: Vec::new(),
        xi_init: RelPose::identity(),
    };
    // Stationary: zero objective, zero gradient.
    let xi = DVector::zeros(p.layout().dim());
    assert_eq!(p.objective_value(&xi), 0.0);
    assert_eq!(p.objective_gradient(&xi).norm(), 0.0);
    // One 0.1 m translation with alpha=1, beta=0.
    let mut xi = DVector::zeros(p.layout().dim());
    xi[6] = 0.1;
    xi[12] = 0.1;
    assert_abs_diff_eq!(p.objective_value(&xi), 0.01, epsilon = 1e-15);
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let scene = scenes_dir_scene("workspace_reach.toml");
    let (domain_spec, skeletons) = workspace_reach_skeletons(&scene);
    let _ = domain_spec;
    let problem = assemble(&skeletons[0], scene, ObjectiveConfig::default()).unwrap();
    let mut rng = StdRng::seed_from_u64(77);
    for _ in 0..5 {
        let mut xi = DVector::zeros(problem.layout().dim());
        for k in 0..xi.len() {
            xi[k] = rng.gen_range(-0.4..0.4);
        }
        let analytic = problem.objective_gradient(&xi);
        let h = 1e-6;
        let mut fd = DVector::zeros(xi.len());
        for k in 0..xi.len() {
            let mut xp = xi.clone();
            let mut xm = xi.clone();
            xp[k] += h;
            xm[k] -= h;
            fd[k] = (problem.objective_value(&xp) - problem.objective_value(&xm)) / (2.0 * h);
        }
        let scale = fd.amax().max(1.0);
        assert!(
            (analytic.clone() - fd.clone()).amax() / scale < 1e-4,
            "objective gradient mismatch"
        );
    }
}

fn scenes_dir_scene(name: &str) -> Arc<Scene> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenes")
        .join(name);
    Arc::new(Scene::load(&path).unwrap())
}

fn workspace_reach_skeletons(scene: &Scene) -> (domain::DomainSpec, Vec<ActionSkeleton>) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenes/workspace_reach.pddl");
    let spec = domain::load_domain(&path).unwrap();
    let (sym, goal) = domain::bind(&spec, scene).unwrap();
    let skeletons = enumerate_skeletons(&sym, &scene.initial_symbolic_state(), &goal, 5);
    (spec, skeletons)
}

#[test]
fn assemble_workspace_reach_dimensions() {
    let scene = scenes_dir_scene("workspace_reach.toml");
    let (_, skeletons) = workspace_reach_skeletons(&scene);
    assert_eq!(skeletons.len(), 3);
    for sk in &skeletons {
        let problem = assemble(sk, scene.clone(), ObjectiveConfig::default()).unwrap();
        // Five actions, push spans two timesteps: T = 6, 42 variables.
        assert_eq!(problem.timeline.horizon(), 6);
        assert_eq!(problem.layout().dim(), 42);
        assert!(problem
            .blocks
            .iter()
            .any(|b| matches!(b.form, BlockForm::PushNormal { .. })));
        assert!(problem
            .blocks
            .iter()
            .any(|b| matches!(b.form, BlockForm::PushDirection { .. })));
        // Push blocks couple at most 3 timesteps (18 variables).
        for b in &problem.blocks {
            if matches!(b.form, BlockForm::PushNormal { .. } | BlockForm::PushDirection { .. }) {
                assert!(b.timesteps.len() <= 3);
            }
        }
    }
}

#[test]
fn assemble_hanoi_dimensions() {
    let scene = scenes_dir_scene("hanoi.toml");
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/hanoi.pddl");
    let spec = domain::load_domain(&path).unwrap();
    let (sym, goal) = domain::bind(&spec, &scene).unwrap();
    let skeletons = enumerate_skeletons(&sym, &scene.initial_symbolic_state(), &goal, 14);
    assert_eq!(skeletons.len(), 2);
    for sk in &skeletons {
        let problem = assemble(sk, scene.clone(), ObjectiveConfig::default()).unwrap();
        assert_eq!(problem.timeline.horizon(), 14);
        assert_eq!(problem.layout().dim(), 90);
    }
}

#[test]
fn assemble_empty_skeleton_is_pin_only() {
    let scene = scenes_dir_scene("workspace_reach.toml");
    let sk = ActionSkeleton { actions: vec![] };
    let problem = assemble(&sk, scene, ObjectiveConfig::default()).unwrap();
    assert_eq!(problem.timeline.horizon(), 0);
    assert_eq!(problem.blocks.len(), 1);
    assert!(matches!(problem.blocks[0].form, BlockForm::PinInit));
    // The pin holds the end-effector at the robot base.
    let xi = zero_start(&problem);
    let v = problem.eval_block(&problem.blocks[0], &xi);
    assert_abs_diff_eq!(v[2], -0.5, epsilon = 1e-15);
}

#[test]
fn pick_place_blocks_touch_single_timesteps() {
    let scene = scenes_dir_scene("workspace_reach.toml");
    let (_, skeletons) = workspace_reach_skeletons(&scene);
    let problem = assemble(&skeletons[0], scene, ObjectiveConfig::default()).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    let mut xi = DVector::zeros(problem.layout().dim());
    for k in 0..xi.len() {
        xi[k] = rng.gen_range(-0.3..0.3);
    }
    for b in &problem.blocks {
        let j = problem.block_jacobian(b, &xi);
        // Columns outside the declared timesteps are exactly zero.
        for t in 0..=problem.timeline.horizon() {
            if b.timesteps.contains(&t) {
                continue;
            }
            for col in 6 * t..6 * t + 6 {
                for row in 0..b.dim {
                    assert_eq!(
                        j[(row, col)],
                        0.0,
                        "{}: column {col} outside timesteps {:?} must be zero",
                        b.label,
                        b.timesteps
                    );
                }
            }
        }
        if matches!(
            b.form,
            BlockForm::Pick { .. }
                | BlockForm::Touch { .. }
                | BlockForm::SupportArea { .. }
                | BlockForm::SupportNormal { .. }
        ) {
            assert_eq!(b.timesteps.len(), 1, "{} decouples to one timestep", b.label);
        }
    }
}

#[test]
fn block_jacobians_match_finite_differences_at_random_points() {
    let scene = scenes_dir_scene("workspace_reach.toml");
    let (_, skeletons) = workspace_reach_skeletons(&scene);
    let problem = assemble(&skeletons[0], scene, ObjectiveConfig::default()).unwrap();
    let mut rng = StdRng::seed_from_u64(2025);
    let mut checked = vec![0usize; problem.blocks.len()];
    for _ in 0..100 {
        let mut xi = DVector::zeros(problem.layout().dim());
        for k in 0..xi.len() {
            xi[k] = rng.gen_range(-0.3..0.3);
        }
        for (bi, b) in problem.blocks.iter().enumerate() {
            let v0 = problem.eval_block(b, &xi);
            if v0.amax() >= RAYCAST_MISS_PENALTY {
                continue;
            }
            let analytic = problem.block_jacobian(b, &xi);
            let mut all_ok = true;
            'cols: for &t in &b.timesteps {
                for col in 6 * t..6 * t + 6 {
                    let mut xp = xi.clone();
                    let mut xm = xi.clone();
                    xp[col] += FD_STEP;
                    xm[col] -= FD_STEP;
                    let fp = problem.eval_block(b, &xp);
                    let fm = problem.eval_block(b, &xm);
                    if fp.amax() >= RAYCAST_MISS_PENALTY || fm.amax() >= RAYCAST_MISS_PENALTY {
                        all_ok = false;
                        break 'cols;
                    }
                    for row in 0..b.dim {
                        let central = (fp[row] - fm[row]) / (2.0 * FD_STEP);
                        let forward = (fp[row] - v0[row]) / FD_STEP;
                        let backward = (v0[row] - fm[row]) / FD_STEP;
                        if (forward - backward).abs() > 1e-3 * central.abs().max(1.0) {
                            // Feature switch within the stencil; skip.
                            continue;
                        }
                        let err = (analytic[(row, col)] - central).abs();
                        assert!(
                            err < 1e-3 * central.abs().max(1.0),
                            "{} row {row} col {col}: analytic {} vs fd {central}",
                            b.label,
                            analytic[(row, col)]
                        );
                    }
                }
            }
            if all_ok {
                checked[bi] += 1;
            }
        }
    }
    for (bi, count) in checked.iter().enumerate() {
        assert!(
            *count >= 50,
            "block {} exercised only {count} times",
            problem.blocks[bi].label
        );
    }
}

#[test]
fn assemble_rejects_mismatched_push_support() {
    // A skeleton whose push claims b sits on c although it does not.
    let scene = scenes_dir_scene("workspace_reach.toml");
    let hook = ObjectId(scene.object_index("hook").unwrap());
    let boxx = ObjectId(scene.object_index("box").unwrap());
    let shelf = ObjectId(scene.object_index("shelf").unwrap());
    let sk = ActionSkeleton {
        actions: vec![
            GroundedAction::Pick { a: hook },
            GroundedAction::Push { a: hook, b: boxx, c: shelf },
        ],
    };
    match assemble(&sk, scene, ObjectiveConfig::default()) {
        Err(AssembleError::PushSupportMismatch { .. }) => {}
        other => panic!("expected push-support mismatch, got {other:?}"),
    }
}
