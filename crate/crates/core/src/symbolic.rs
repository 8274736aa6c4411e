//! STRIPS layer: grounded pick/place/push schemas over a finite object set
//! and breadth-first enumeration of goal-satisfying action skeletons.
//!
//! The search prunes duplicate symbolic states along each branch and stops
//! extending a branch once its state satisfies the goal, so returned
//! skeletons come out in nondecreasing length order.

use std::collections::{BTreeSet, HashSet, VecDeque};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub usize);

/// Grounded dynamic proposition. The identity relation `eq` is evaluated
/// structurally and never stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Proposition {
    InHand(ObjectId),
    On(ObjectId, ObjectId),
    InWorkspace(ObjectId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SymbolicState {
    props: BTreeSet<Proposition>,
}

impl SymbolicState {
    pub fn new(props: impl IntoIterator<Item = Proposition>) -> Self {
        Self { props: props.into_iter().collect() }
    }

    pub fn holds(&self, p: &Proposition) -> bool {
        self.props.contains(p)
    }

    pub fn props(&self) -> impl Iterator<Item = &Proposition> {
        self.props.iter()
    }

    pub fn inhand(&self) -> Option<ObjectId> {
        self.props.iter().find_map(|p| match p {
            Proposition::InHand(a) => Some(*a),
            _ => None,
        })
    }

    /// Nothing rests directly on `a`.
    pub fn clear(&self, a: ObjectId) -> bool {
        !self.props.iter().any(|p| matches!(p, Proposition::On(_, b) if *b == a))
    }

    pub fn satisfies(&self, goal: &GoalFormula) -> bool {
        match goal {
            GoalFormula::Prop(p) => self.holds(p),
            GoalFormula::And(fs) => fs.iter().all(|f| self.satisfies(f)),
            GoalFormula::Or(fs) => fs.iter().any(|f| self.satisfies(f)),
        }
    }
}

/// Goal formulas are conjunctions/disjunctions over grounded propositions.
#[derive(Clone, Debug, PartialEq)]
pub enum GoalFormula {
    Prop(Proposition),
    And(Vec<GoalFormula>),
    Or(Vec<GoalFormula>),
}

/// Which of the three built-in schemas a domain enables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnabledActions {
    pub pick: bool,
    pub place: bool,
    pub push: bool,
}

impl Default for EnabledActions {
    fn default() -> Self {
        Self { pick: true, place: true, push: true }
    }
}

/// Object universe plus the static relations that parameterize the built-in
/// schemas.
#[derive(Clone, Debug)]
pub struct SymbolicDomain {
    pub objects: Vec<String>,
    pub movable: Vec<bool>,
    /// Static size-ordering facts `smaller(a, b)`; when any are declared,
    /// place(a, b) additionally requires `smaller(a, b)`.
    pub smaller: BTreeSet<(ObjectId, ObjectId)>,
    /// When set, pick requires the object clear and place requires the
    /// target clear (tower discipline).
    pub require_clear: bool,
    pub actions: EnabledActions,
}

impl SymbolicDomain {
    pub fn object_id(&self, name: &str) -> Option<ObjectId> {
        self.objects.iter().position(|o| o == name).map(ObjectId)
    }

    pub fn object_name(&self, id: ObjectId) -> &str {
        &self.objects[id.0]
    }

    pub fn is_movable(&self, id: ObjectId) -> bool {
        self.movable[id.0]
    }

    fn object_ids(&self) -> impl Iterator<Item = ObjectId> + '_ {
        (0..self.objects.len()).map(ObjectId)
    }

    /// All type-correct groundings of the enabled schemas, in deterministic
    /// order (pick < place < push, arguments ascending).
    pub fn groundings(&self) -> Vec<GroundedAction> {
        let mut out = Vec::new();
        if self.actions.pick {
            for a in self.object_ids().filter(|&a| self.is_movable(a)) {
                out.push(GroundedAction::Pick { a });
            }
        }
        if self.actions.place {
            for a in self.object_ids().filter(|&a| self.is_movable(a)) {
                for b in self.object_ids().filter(|&b| b != a) {
                    out.push(GroundedAction::Place { a, b });
                }
            }
        }
        if self.actions.push {
            for a in self.object_ids().filter(|&a| self.is_movable(a)) {
                for b in self.object_ids().filter(|&b| self.is_movable(b) && b != a) {
                    for c in self.object_ids().filter(|&c| c != a && c != b) {
                        out.push(GroundedAction::Push { a, b, c });
                    }
                }
            }
        }
        out
    }
}

/// A grounded action instance. `Push` spans two timesteps, the others one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroundedAction {
    Pick { a: ObjectId },
    Place { a: ObjectId, b: ObjectId },
    Push { a: ObjectId, b: ObjectId, c: ObjectId },
}

/// What an action positions at one of its timesteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlRef {
    EndEffector,
    Object(ObjectId),
}

impl GroundedAction {
    pub fn span(&self) -> usize {
        match self {
            GroundedAction::Push { .. } => 2,
            _ => 1,
        }
    }

    /// Control/target frames of the `step`-th timestep of this action.
    pub fn control_target(&self, step: usize) -> (ControlRef, ControlRef) {
        match (self, step) {
            (GroundedAction::Pick { a }, 0) => (ControlRef::EndEffector, ControlRef::Object(*a)),
            (GroundedAction::Place { a, b }, 0) => {
                (ControlRef::Object(*a), ControlRef::Object(*b))
            }
            (GroundedAction::Push { a, b, .. }, 0) => {
                (ControlRef::Object(*a), ControlRef::Object(*b))
            }
            (GroundedAction::Push { b, c, .. }, 1) => {
                (ControlRef::Object(*b), ControlRef::Object(*c))
            }
            _ => panic!("action {self:?} has no timestep {step}"),
        }
    }

    pub fn display(&self, domain: &SymbolicDomain) -> String {
        match self {
            GroundedAction::Pick { a } => format!("pick({})", domain.object_name(*a)),
            GroundedAction::Place { a, b } => {
                format!("place({}, {})", domain.object_name(*a), domain.object_name(*b))
            }
            GroundedAction::Push { a, b, c } => format!(
                "push({}, {}, {})",
                domain.object_name(*a),
                domain.object_name(*b),
                domain.object_name(*c)
            ),
        }
    }
}

/// True iff the action's precondition holds in `s`; quantified negations
/// range over the finite object set.
pub fn applicable(domain: &SymbolicDomain, s: &SymbolicState, action: &GroundedAction) -> bool {
    match action {
        GroundedAction::Pick { a } => {
            domain.is_movable(*a)
                && s.inhand().is_none()
                && s.holds(&Proposition::InWorkspace(*a))
                && (!domain.require_clear || s.clear(*a))
        }
        GroundedAction::Place { a, b } => {
            a != b
                && domain.is_movable(*a)
                && s.holds(&Proposition::InHand(*a))
                && s.holds(&Proposition::InWorkspace(*b))
                && (domain.smaller.is_empty() || domain.smaller.contains(&(*a, *b)))
                && (!domain.require_clear || s.clear(*b))
        }
        GroundedAction::Push { a, b, c } => {
            a != b
                && a != c
                && b != c
                && domain.is_movable(*a)
                && domain.is_movable(*b)
                && s.holds(&Proposition::InHand(*a))
                && s.holds(&Proposition::On(*b, *c))
                && s.holds(&Proposition::InWorkspace(*c))
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("action {0} is not applicable")]
    NotApplicable(String),
}

/// Applies the action's postconditions with delete-then-add semantics.
/// Calling this on an inapplicable action is a contract error.
pub fn apply(
    domain: &SymbolicDomain,
    s: &SymbolicState,
    action: &GroundedAction,
) -> Result<SymbolicState, SymbolicError> {
    if !applicable(domain, s, action) {
        return Err(SymbolicError::NotApplicable(action.display(domain)));
    }
    let mut props = s.props.clone();
    match action {
        GroundedAction::Pick { a } => {
            props.retain(|p| !matches!(p, Proposition::On(x, _) if x == a));
            props.insert(Proposition::InHand(*a));
        }
        GroundedAction::Place { a, b } => {
            props.remove(&Proposition::InHand(*a));
            props.insert(Proposition::On(*a, *b));
        }
        GroundedAction::Push { b, .. } => {
            props.insert(Proposition::InWorkspace(*b));
        }
    }
    Ok(SymbolicState { props })
}

/// A goal-satisfying grounded action sequence awaiting geometric
/// instantiation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionSkeleton {
    pub actions: Vec<GroundedAction>,
}

impl ActionSkeleton {
    /// Total timestep count (push actions span two timesteps). Timestep 0 is
    /// reserved for the initial end-effector pose.
    pub fn horizon(&self) -> usize {
        self.actions.iter().map(GroundedAction::span).sum()
    }

    /// `(timestep, action index, step-within-action)` for timesteps `1..=T`.
    pub fn timesteps(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut t = 1;
        for (k, action) in self.actions.iter().enumerate() {
            for step in 0..action.span() {
                out.push((t, k, step));
                t += 1;
            }
        }
        out
    }

    pub fn display(&self, domain: &SymbolicDomain) -> String {
        self.actions
            .iter()
            .map(|a| a.display(domain))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Breadth-first tree search over grounded actions. Returns every
/// goal-satisfying skeleton of length `<= max_depth` under per-branch
/// duplicate-state pruning, shortest first.
pub fn enumerate_skeletons(
    domain: &SymbolicDomain,
    init: &SymbolicState,
    goal: &GoalFormula,
    max_depth: usize,
) -> Vec<ActionSkeleton> {
    let groundings = domain.groundings();
    let mut results = Vec::new();

    struct Node {
        state: SymbolicState,
        path: Vec<GroundedAction>,
        visited: HashSet<SymbolicState>,
    }

    let mut queue = VecDeque::new();
    queue.push_back(Node {
        state: init.clone(),
        path: Vec::new(),
        visited: HashSet::from([init.clone()]),
    });

    while let Some(node) = queue.pop_front() {
        if node.state.satisfies(goal) {
            results.push(ActionSkeleton { actions: node.path });
            continue;
        }
        if node.path.len() >= max_depth {
            continue;
        }
        for action in &groundings {
            if !applicable(domain, &node.state, action) {
                continue;
            }
            let next = apply(domain, &node.state, action).expect("applicability checked");
            if node.visited.contains(&next) {
                continue;
            }
            let mut visited = node.visited.clone();
            visited.insert(next.clone());
            let mut path = node.path.clone();
            path.push(*action);
            queue.push_back(Node { state: next, path, visited });
        }
    }
    results
}

/// Replays a skeleton from `init`, returning the visited states (including
/// `init`). Fails if any action is inapplicable along the way.
pub fn replay(
    domain: &SymbolicDomain,
    init: &SymbolicState,
    skeleton: &ActionSkeleton,
) -> Result<Vec<SymbolicState>, SymbolicError> {
    let mut states = vec![init.clone()];
    for action in &skeleton.actions {
        let next = apply(domain, states.last().unwrap(), action)?;
        states.push(next);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(names: &[(&str, bool)]) -> SymbolicDomain {
        SymbolicDomain {
            objects: names.iter().map(|(n, _)| n.to_string()).collect(),
            movable: names.iter().map(|(_, m)| *m).collect(),
            smaller: BTreeSet::new(),
            require_clear: false,
            actions: EnabledActions::default(),
        }
    }

    /// Workspace-reach domain: a box out of reach, a hook within it.
    fn workspace_reach() -> (SymbolicDomain, SymbolicState, GoalFormula) {
        let domain = obj(&[("table", false), ("shelf", false), ("box", true), ("hook", true)]);
        let (table, shelf, boxx, hook) = (ObjectId(0), ObjectId(1), ObjectId(2), ObjectId(3));
        let init = SymbolicState::new([
            Proposition::On(hook, table),
            Proposition::On(boxx, table),
            Proposition::InWorkspace(table),
            Proposition::InWorkspace(shelf),
            Proposition::InWorkspace(hook),
        ]);
        let goal = GoalFormula::Prop(Proposition::On(boxx, shelf));
        (domain, init, goal)
    }

    /// Three plates and three stacked blocks with tower discipline.
    fn hanoi() -> (SymbolicDomain, SymbolicState, GoalFormula) {
        let mut domain = obj(&[
            ("table", false),
            ("plate_left", false),
            ("plate_middle", false),
            ("plate_right", false),
            ("block_small", true),
            ("block_medium", true),
            ("block_large", true),
        ]);
        let plates = [ObjectId(1), ObjectId(2), ObjectId(3)];
        let (small, medium, large) = (ObjectId(4), ObjectId(5), ObjectId(6));
        domain.require_clear = true;
        for &p in &plates {
            domain.smaller.insert((small, p));
            domain.smaller.insert((medium, p));
            domain.smaller.insert((large, p));
        }
        domain.smaller.insert((small, medium));
        domain.smaller.insert((small, large));
        domain.smaller.insert((medium, large));
        let mut props = vec![
            Proposition::On(large, plates[2]),
            Proposition::On(medium, large),
            Proposition::On(small, medium),
        ];
        for i in 0..7 {
            props.push(Proposition::InWorkspace(ObjectId(i)));
        }
        let init = SymbolicState::new(props);
        let tower_on = |p: ObjectId| {
            GoalFormula::And(vec![
                GoalFormula::Prop(Proposition::On(large, p)),
                GoalFormula::Prop(Proposition::On(medium, large)),
                GoalFormula::Prop(Proposition::On(small, medium)),
            ])
        };
        let goal = GoalFormula::Or(vec![tower_on(plates[0]), tower_on(plates[1])]);
        (domain, init, goal)
    }

    #[test]
    fn applicable_cases() {
        let (domain, _, _) = workspace_reach();
        let (table, boxx, hook) = (ObjectId(0), ObjectId(2), ObjectId(3));
        // Empty hand but the box is out of the workspace.
        let s = SymbolicState::default();
        assert!(!applicable(&domain, &s, &GroundedAction::Pick { a: boxx }));
        // Empty hand and in workspace: applicable.
        let s = SymbolicState::new([Proposition::InWorkspace(boxx)]);
        assert!(applicable(&domain, &s, &GroundedAction::Pick { a: boxx }));
        // Something already in hand blocks pick.
        let s = SymbolicState::new([
            Proposition::InHand(hook),
            Proposition::InWorkspace(boxx),
        ]);
        assert!(!applicable(&domain, &s, &GroundedAction::Pick { a: boxx }));
        // Push needs inhand(a), on(b, c), inworkspace(c).
        let s = SymbolicState::new([
            Proposition::InHand(hook),
            Proposition::On(boxx, table),
            Proposition::InWorkspace(table),
        ]);
        assert!(applicable(&domain, &s, &GroundedAction::Push { a: hook, b: boxx, c: table }));
    }

    #[test]
    fn apply_cases() {
        let (domain, _, _) = workspace_reach();
        let (table, shelf, boxx, hook) = (ObjectId(0), ObjectId(1), ObjectId(2), ObjectId(3));
        // pick removes all on-facts of the object and fills the hand.
        let s = SymbolicState::new([
            Proposition::On(boxx, table),
            Proposition::InWorkspace(boxx),
        ]);
        let s2 = apply(&domain, &s, &GroundedAction::Pick { a: boxx }).unwrap();
        assert!(s2.holds(&Proposition::InHand(boxx)));
        assert!(!s2.props().any(|p| matches!(p, Proposition::On(a, _) if *a == boxx)));
        // place empties the hand and adds on(a, b).
        let s = SymbolicState::new([
            Proposition::InHand(boxx),
            Proposition::InWorkspace(shelf),
        ]);
        let s2 = apply(&domain, &s, &GroundedAction::Place { a: boxx, b: shelf }).unwrap();
        assert!(!s2.holds(&Proposition::InHand(boxx)));
        assert!(s2.holds(&Proposition::On(boxx, shelf)));
        // push adds inworkspace(b).
        let s = SymbolicState::new([
            Proposition::InHand(hook),
            Proposition::On(boxx, table),
            Proposition::InWorkspace(table),
        ]);
        let s2 = apply(&domain, &s, &GroundedAction::Push { a: hook, b: boxx, c: table }).unwrap();
        assert!(s2.holds(&Proposition::InWorkspace(boxx)));
        // applying an inapplicable action is a contract error.
        assert!(apply(&domain, &SymbolicState::default(), &GroundedAction::Pick { a: boxx })
            .is_err());
    }

    #[test]
    fn workspace_reach_enumerates_exactly_three_skeletons() {
        let (domain, init, goal) = workspace_reach();
        let skeletons = enumerate_skeletons(&domain, &init, &goal, 5);
        assert_eq!(skeletons.len(), 3, "{skeletons:?}");
        let (table, shelf, boxx, hook) = (ObjectId(0), ObjectId(1), ObjectId(2), ObjectId(3));
        let mut hook_targets = Vec::new();
        for sk in &skeletons {
            assert_eq!(sk.actions.len(), 5);
            assert_eq!(sk.actions[0], GroundedAction::Pick { a: hook });
            assert_eq!(sk.actions[1], GroundedAction::Push { a: hook, b: boxx, c: table });
            match sk.actions[2] {
                GroundedAction::Place { a, b } if a == hook => hook_targets.push(b),
                other => panic!("unexpected third action {other:?}"),
            }
            assert_eq!(sk.actions[3], GroundedAction::Pick { a: boxx });
            assert_eq!(sk.actions[4], GroundedAction::Place { a: boxx, b: shelf });
        }
        hook_targets.sort();
        assert_eq!(hook_targets, vec![table, shelf, boxx]);
    }

    #[test]
    fn hanoi_enumerates_two_skeletons_of_length_fourteen() {
        let (domain, init, goal) = hanoi();
        let skeletons = enumerate_skeletons(&domain, &init, &goal, 14);
        assert_eq!(skeletons.len(), 2);
        for sk in &skeletons {
            assert_eq!(sk.actions.len(), 14);
            assert_eq!(sk.horizon(), 14);
        }
        // Shorter searches find nothing.
        assert!(enumerate_skeletons(&domain, &init, &goal, 13).is_empty());
    }

    #[test]
    fn hanoi_discipline_holds_along_replays() {
        let (domain, init, goal) = hanoi();
        for sk in enumerate_skeletons(&domain, &init, &goal, 14) {
            let states = replay(&domain, &init, &sk).expect("sound replay");
            assert!(states.last().unwrap().satisfies(&goal));
            for s in &states {
                for p in s.props() {
                    if let Proposition::On(a, b) = p {
                        if domain.is_movable(*a) && domain.is_movable(*b) {
                            assert!(
                                domain.smaller.contains(&(*a, *b)),
                                "larger block stacked on smaller: {p:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn goal_in_initial_state_yields_one_empty_skeleton() {
        let (domain, init, _) = workspace_reach();
        let goal = GoalFormula::Prop(Proposition::On(ObjectId(3), ObjectId(0)));
        let skeletons = enumerate_skeletons(&domain, &init, &goal, 5);
        assert_eq!(skeletons.len(), 1);
        assert!(skeletons[0].actions.is_empty());
    }

    #[test]
    fn unreachable_goal_returns_empty() {
        let (domain, init, goal) = workspace_reach();
        assert!(enumerate_skeletons(&domain, &init, &goal, 2).is_empty());
    }

    #[test]
    fn returned_skeletons_replay_soundly_in_order() {
        let (domain, init, goal) = workspace_reach();
        let skeletons = enumerate_skeletons(&domain, &init, &goal, 6);
        let mut last_len = 0;
        for sk in &skeletons {
            assert!(sk.actions.len() >= last_len, "nondecreasing length order");
            last_len = sk.actions.len();
            let states = replay(&domain, &init, sk).expect("sound");
            assert!(states.last().unwrap().satisfies(&goal));
        }
        // Deeper searches keep every shallower skeleton.
        let deeper = enumerate_skeletons(&domain, &init, &goal, 6);
        for sk in &skeletons {
            assert!(deeper.contains(sk));
        }
    }

    #[test]
    fn push_spans_two_timesteps_and_maps_frames() {
        let push = GroundedAction::Push { a: ObjectId(3), b: ObjectId(2), c: ObjectId(0) };
        assert_eq!(push.span(), 2);
        assert_eq!(
            push.control_target(0),
            (ControlRef::Object(ObjectId(3)), ControlRef::Object(ObjectId(2)))
        );
        assert_eq!(
            push.control_target(1),
            (ControlRef::Object(ObjectId(2)), ControlRef::Object(ObjectId(0)))
        );
        let sk = ActionSkeleton {
            actions: vec![
                GroundedAction::Pick { a: ObjectId(3) },
                push,
                GroundedAction::Place { a: ObjectId(3), b: ObjectId(0) },
            ],
        };
        assert_eq!(sk.horizon(), 4);
        assert_eq!(sk.timesteps(), vec![(1, 0, 0), (2, 1, 0), (3, 1, 1), (4, 2, 0)]);
    }
}
