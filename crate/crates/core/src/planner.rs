//! Planner orchestration: enumerate action skeletons, optimize each one,
//! and rank the feasible plans by objective score.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constraints::{assemble, AssembleError, NlpProblem, ObjectiveConfig};
use crate::liegroup::RelPose;
use crate::optimizer::{solve, SolveStatus, SolverConfig};
use crate::scene::Scene;
use crate::symbolic::{
    enumerate_skeletons, ActionSkeleton, ControlRef, GoalFormula, GroundedAction, SymbolicDomain,
};

#[derive(Clone, Copy, Debug)]
pub struct PlannerConfig {
    pub objective: ObjectiveConfig,
    pub solver: SolverConfig,
    pub max_depth: usize,
    /// Number of concurrent per-skeleton solves.
    pub workers: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            solver: SolverConfig::default(),
            max_depth: 5,
            workers: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("goal unreachable at depth {max_depth}")]
    GoalUnreachable { max_depth: usize },
    #[error("all {} skeletons infeasible; best violations: {:?}", .0.len(), .0)]
    AllInfeasible(Vec<(String, f64)>),
    #[error("failed to assemble skeleton {skeleton:?}: {source}")]
    Assemble {
        skeleton: String,
        #[source]
        source: AssembleError,
    },
}

/// One optimized, feasible plan.
#[derive(Clone, Debug)]
pub struct Plan {
    pub skeleton: ActionSkeleton,
    pub xi_star: DVector<f64>,
    pub score: f64,
    pub max_violation: f64,
    pub steps: Vec<PlanStep>,
}

/// Per-timestep record: which frame is positioned relative to which, and
/// the optimized relative pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanStep {
    pub t: usize,
    pub action_index: usize,
    pub kind: StepKind,
    pub control: String,
    pub target: String,
    pub xi: RelPose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Pick,
    Place,
    /// First push timestep: position the pusher against the pushed object.
    PushPosition,
    /// Second push timestep: slide the pushed object along its support.
    PushSlide,
}

/// Outcome of optimizing one skeleton, for reporting.
#[derive(Clone, Debug)]
pub struct SkeletonOutcome {
    pub skeleton: ActionSkeleton,
    pub display: String,
    pub status: SolveStatus,
    pub score: f64,
    pub max_violation: f64,
    pub solve_seconds: f64,
}

fn step_kind(action: &GroundedAction, step: usize) -> StepKind {
    match (action, step) {
        (GroundedAction::Pick { .. }, 0) => StepKind::Pick,
        (GroundedAction::Place { .. }, 0) => StepKind::Place,
        (GroundedAction::Push { .. }, 0) => StepKind::PushPosition,
        (GroundedAction::Push { .. }, 1) => StepKind::PushSlide,
        _ => unreachable!(),
    }
}

fn control_name(scene: &Scene, r: ControlRef) -> String {
    match r {
        ControlRef::EndEffector => crate::scene::EE_NAME.to_string(),
        ControlRef::Object(o) => scene.objects[o.0].name.clone(),
    }
}

fn build_plan(
    scene: &Scene,
    domain: &SymbolicDomain,
    skeleton: &ActionSkeleton,
    problem: &NlpProblem,
    xi_star: DVector<f64>,
    score: f64,
) -> Plan {
    let layout = problem.layout();
    let steps = skeleton
        .timesteps()
        .into_iter()
        .map(|(t, k, step)| {
            let action = &skeleton.actions[k];
            let (control, target) = action.control_target(step);
            PlanStep {
                t,
                action_index: k,
                kind: step_kind(action, step),
                control: control_name(scene, control),
                target: control_name(scene, target),
                xi: layout.pose(&xi_star, t),
            }
        })
        .collect();
    let max_violation = problem.max_violation(&xi_star);
    let _ = domain;
    Plan { skeleton: skeleton.clone(), xi_star, score, max_violation, steps }
}

/// Enumerates skeletons up to `max_depth`, optimizes each (concurrently up
/// to `workers`), and returns the feasible plans ranked by ascending score
/// plus the per-skeleton outcome table in enumeration order.
pub fn plan(
    scene: Arc<Scene>,
    domain: &SymbolicDomain,
    goal: &GoalFormula,
    cfg: &PlannerConfig,
) -> Result<(Vec<Plan>, Vec<SkeletonOutcome>), PlanError> {
    let init = scene.initial_symbolic_state();
    let skeletons = enumerate_skeletons(domain, &init, goal, cfg.max_depth);
    if skeletons.is_empty() {
        return Err(PlanError::GoalUnreachable { max_depth: cfg.max_depth });
    }

    // Assemble everything up front so structural errors surface before any
    // solving starts.
    let mut problems = Vec::with_capacity(skeletons.len());
    for sk in &skeletons {
        let problem = assemble(sk, scene.clone(), cfg.objective).map_err(|source| {
            PlanError::Assemble { skeleton: sk.display(domain), source }
        })?;
        problems.push(problem);
    }

    // Deterministic result order regardless of worker scheduling: each
    // skeleton writes to its own slot.
    let results: Mutex<Vec<Option<(crate::optimizer::SolveResult, f64)>>> =
        Mutex::new(vec![None; skeletons.len()]);
    let next = AtomicUsize::new(0);
    let workers = cfg.workers.max(1).min(skeletons.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= problems.len() {
                    break;
                }
                let started = std::time::Instant::now();
                let r = solve(&problems[i], &cfg.solver);
                let elapsed = started.elapsed().as_secs_f64();
                results.lock().unwrap()[i] = Some((r, elapsed));
            });
        }
    });
    let results = results.into_inner().unwrap();

    let mut outcomes = Vec::with_capacity(skeletons.len());
    let mut plans = Vec::new();
    for ((sk, problem), slot) in skeletons.iter().zip(&problems).zip(results) {
        let (r, elapsed) = slot.expect("every skeleton solved");
        outcomes.push(SkeletonOutcome {
            skeleton: sk.clone(),
            display: sk.display(domain),
            status: r.status,
            score: r.score,
            max_violation: r.max_violation,
            solve_seconds: elapsed,
        });
        if r.status == SolveStatus::Feasible {
            plans.push(build_plan(&scene, domain, sk, problem, r.xi_star, r.score));
        }
    }

    if plans.is_empty() {
        return Err(PlanError::AllInfeasible(
            outcomes.iter().map(|o| (o.display.clone(), o.max_violation)).collect(),
        ));
    }
    // Ascending score; ties break by lexicographic skeleton order.
    plans.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .unwrap()
            .then_with(|| a.skeleton.cmp(&b.skeleton))
    });
    Ok((plans, outcomes))
}

/// On-disk plan document (TOML). Round-trips bit exactly.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlanDoc {
    pub score: f64,
    pub max_violation: f64,
    pub actions: Vec<ActionDoc>,
    pub steps: Vec<StepDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ActionDoc {
    pub name: String,
    pub args: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StepDoc {
    pub t: usize,
    pub action_index: usize,
    pub kind: StepKind,
    pub control: String,
    pub target: String,
    pub xi: [f64; 6],
}

impl Plan {
    pub fn to_doc(&self, domain: &SymbolicDomain) -> PlanDoc {
        let actions = self
            .skeleton
            .actions
            .iter()
            .map(|a| match a {
                GroundedAction::Pick { a } => ActionDoc {
                    name: "pick".into(),
                    args: vec![domain.object_name(*a).into()],
                },
                GroundedAction::Place { a, b } => ActionDoc {
                    name: "place".into(),
                    args: vec![domain.object_name(*a).into(), domain.object_name(*b).into()],
                },
                GroundedAction::Push { a, b, c } => ActionDoc {
                    name: "push".into(),
                    args: vec![
                        domain.object_name(*a).into(),
                        domain.object_name(*b).into(),
                        domain.object_name(*c).into(),
                    ],
                },
            })
            .collect();
        let steps = self
            .steps
            .iter()
            .map(|s| StepDoc {
                t: s.t,
                action_index: s.action_index,
                kind: s.kind,
                control: s.control.clone(),
                target: s.target.clone(),
                xi: s.xi.to_array(),
            })
            .collect();
        PlanDoc {
            score: self.score,
            max_violation: self.max_violation,
            actions,
            steps,
        }
    }
}

impl PlanDoc {
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("plan docs serialize")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}
