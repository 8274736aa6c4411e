//! PDDL-inspired domain files: typed objects, the built-in action schemas
//! referenced by name, optional static facts and flags, and the goal
//! formula. Parsed from s-expressions with line/column error reporting.
//!
//! ```text
//! (define (domain manipulation)
//!   (:predicates (inhand ?a) (on ?a ?b) (inworkspace ?a))
//!   (:objects table - obj shelf - obj box - movable hook - movable)
//!   (:actions pick place push)
//!   (:goal (on box shelf)))
//! ```

use crate::scene::Scene;
use crate::symbolic::{
    EnabledActions, GoalFormula, ObjectId, Proposition, SymbolicDomain,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("line {line}, column {col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("domain/scene mismatch: {0}")]
    Binding(String),
}

/// Name-based goal expression, bound to object ids against a scene later.
#[derive(Clone, Debug, PartialEq)]
pub enum GoalExpr {
    Atom(String, Vec<String>),
    And(Vec<GoalExpr>),
    Or(Vec<GoalExpr>),
}

/// Parsed domain file, not yet bound to a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    /// (object name, type) with type in {movable, obj}.
    pub objects: Vec<(String, String)>,
    pub actions: EnabledActions,
    pub smaller: Vec<(String, String)>,
    pub require_clear: bool,
    pub goal: GoalExpr,
}

#[derive(Clone, Debug, PartialEq)]
enum SExpr {
    Sym(String, usize, usize),
    List(Vec<SExpr>, usize, usize),
}

impl SExpr {
    fn pos(&self) -> (usize, usize) {
        match self {
            SExpr::Sym(_, l, c) | SExpr::List(_, l, c) => (*l, *c),
        }
    }
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError { line, col, msg: msg.into() }
}

fn tokenize(text: &str) -> Result<Vec<(String, usize, usize)>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut col = 1;
    let mut chars = text.chars().peekable();
    while let Some(&ch) = chars.peek() {
        match ch {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            ';' => {
                // Comment to end of line.
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '(' | ')' => {
                out.push((ch.to_string(), line, col));
                chars.next();
                col += 1;
            }
            _ => {
                let (start_line, start_col) = (line, col);
                let mut sym = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    sym.push(c);
                    chars.next();
                    col += 1;
                }
                out.push((sym, start_line, start_col));
            }
        }
    }
    if out.is_empty() {
        return Err(err(1, 1, "empty domain file"));
    }
    Ok(out)
}

fn parse_sexpr(
    tokens: &[(String, usize, usize)],
    pos: &mut usize,
) -> Result<SExpr, ParseError> {
    let (tok, line, col) = tokens
        .get(*pos)
        .ok_or_else(|| err(0, 0, "unexpected end of input"))?
        .clone();
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos) {
                    Some((t, _, _)) if t == ")" => {
                        *pos += 1;
                        return Ok(SExpr::List(items, line, col));
                    }
                    Some(_) => items.push(parse_sexpr(tokens, pos)?),
                    None => return Err(err(line, col, "unclosed parenthesis")),
                }
            }
        }
        ")" => Err(err(line, col, "unexpected ')'")),
        _ => Ok(SExpr::Sym(tok, line, col)),
    }
}

fn expect_sym(expr: &SExpr) -> Result<&str, ParseError> {
    match expr {
        SExpr::Sym(s, _, _) => Ok(s),
        SExpr::List(_, l, c) => Err(err(*l, *c, "expected a symbol, found a list")),
    }
}

fn parse_goal(expr: &SExpr) -> Result<GoalExpr, ParseError> {
    match expr {
        SExpr::Sym(s, l, c) => Err(err(*l, *c, format!("goal atom {s:?} must be a list"))),
        SExpr::List(items, l, c) => {
            if items.is_empty() {
                return Err(err(*l, *c, "empty goal expression"));
            }
            let head = expect_sym(&items[0])?;
            match head {
                "and" | "or" => {
                    let subs = items[1..]
                        .iter()
                        .map(parse_goal)
                        .collect::<Result<Vec<_>, _>>()?;
                    if subs.is_empty() {
                        return Err(err(*l, *c, format!("empty ({head} ...)")));
                    }
                    Ok(if head == "and" { GoalExpr::And(subs) } else { GoalExpr::Or(subs) })
                }
                _ => {
                    let args = items[1..]
                        .iter()
                        .map(|e| expect_sym(e).map(str::to_string))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(GoalExpr::Atom(head.to_string(), args))
                }
            }
        }
    }
}

const KNOWN_PREDICATES: &[&str] = &["inhand", "on", "inworkspace", "eq", "smaller"];

pub fn parse_domain(text: &str) -> Result<DomainSpec, ParseError> {
    let tokens = tokenize(text)?;
    let mut pos = 0;
    let root = parse_sexpr(&tokens, &mut pos)?;
    if pos != tokens.len() {
        let (_, l, c) = tokens[pos];
        return Err(err(l, c, "trailing content after domain definition"));
    }
    let SExpr::List(items, l, c) = &root else {
        let (l, c) = root.pos();
        return Err(err(l, c, "domain file must be a (define ...) list"));
    };
    if items.is_empty() || expect_sym(&items[0])? != "define" {
        return Err(err(*l, *c, "domain file must start with (define ...)"));
    }
    let mut name = None;
    let mut objects = Vec::new();
    let mut actions = EnabledActions { pick: false, place: false, push: false };
    let mut actions_seen = false;
    let mut smaller = Vec::new();
    let mut require_clear = false;
    let mut goal = None;

    for item in &items[1..] {
        let SExpr::List(section, sl, sc) = item else {
            let (l, c) = item.pos();
            return Err(err(l, c, "expected a (...) section"));
        };
        if section.is_empty() {
            return Err(err(*sl, *sc, "empty section"));
        }
        match expect_sym(&section[0])? {
            "domain" => {
                name = Some(expect_sym(section.get(1).ok_or_else(|| {
                    err(*sl, *sc, "(domain ...) needs a name")
                })?)?
                .to_string());
            }
            ":predicates" => {
                for pred in &section[1..] {
                    let SExpr::List(p, pl, pc) = pred else {
                        let (l, c) = pred.pos();
                        return Err(err(l, c, "predicate must be a list"));
                    };
                    let pname = expect_sym(p.first().ok_or_else(|| {
                        err(*pl, *pc, "empty predicate")
                    })?)?;
                    if !KNOWN_PREDICATES.contains(&pname) {
                        return Err(err(*pl, *pc, format!("unknown predicate {pname:?}")));
                    }
                }
            }
            ":objects" => {
                // name+ - type, repeated.
                let mut pending: Vec<String> = Vec::new();
                let mut iter = section[1..].iter().peekable();
                while let Some(e) = iter.next() {
                    let s = expect_sym(e)?;
                    if s == "-" {
                        let ty = expect_sym(iter.next().ok_or_else(|| {
                            err(*sl, *sc, "missing type after '-'")
                        })?)?;
                        if ty != "movable" && ty != "obj" {
                            let (l, c) = e.pos();
                            return Err(err(l, c, format!("unknown type {ty:?}")));
                        }
                        for n in pending.drain(..) {
                            objects.push((n, ty.to_string()));
                        }
                    } else {
                        pending.push(s.to_string());
                    }
                }
                if !pending.is_empty() {
                    return Err(err(*sl, *sc, "objects without a type annotation"));
                }
            }
            ":actions" => {
                actions_seen = true;
                for e in &section[1..] {
                    match expect_sym(e)? {
                        "pick" => actions.pick = true,
                        "place" => actions.place = true,
                        "push" => actions.push = true,
                        other => {
                            let (l, c) = e.pos();
                            return Err(err(l, c, format!("unknown action name {other:?}")));
                        }
                    }
                }
            }
            ":smaller" => {
                for e in &section[1..] {
                    let SExpr::List(pair, pl, pc) = e else {
                        let (l, c) = e.pos();
                        return Err(err(l, c, "expected (small large) pair"));
                    };
                    if pair.len() != 2 {
                        return Err(err(*pl, *pc, "smaller fact needs exactly two objects"));
                    }
                    smaller.push((
                        expect_sym(&pair[0])?.to_string(),
                        expect_sym(&pair[1])?.to_string(),
                    ));
                }
            }
            ":flags" => {
                for e in &section[1..] {
                    match expect_sym(e)? {
                        "require-clear" => require_clear = true,
                        other => {
                            let (l, c) = e.pos();
                            return Err(err(l, c, format!("unknown flag {other:?}")));
                        }
                    }
                }
            }
            ":goal" => {
                let g = section.get(1).ok_or_else(|| err(*sl, *sc, "(:goal ...) is empty"))?;
                goal = Some(parse_goal(g)?);
            }
            other => {
                return Err(err(*sl, *sc, format!("unknown section {other:?}")));
            }
        }
    }

    let name = name.ok_or_else(|| err(*l, *c, "missing (domain <name>)"))?;
    if !actions_seen {
        return Err(err(*l, *c, "missing (:actions ...) section"));
    }
    let goal = goal.ok_or_else(|| err(*l, *c, "missing (:goal ...) section"))?;
    if objects.is_empty() {
        return Err(err(*l, *c, "missing (:objects ...) section"));
    }
    Ok(DomainSpec { name, objects, actions, smaller, require_clear, goal })
}

pub fn load_domain(path: &std::path::Path) -> Result<DomainSpec, DomainError> {
    let text = std::fs::read_to_string(path).map_err(|source| DomainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_domain(&text)?)
}

/// Binds a parsed domain against a scene: every declared object must exist
/// with a matching movable flag, and goal atoms must be well-formed.
pub fn bind(spec: &DomainSpec, scene: &Scene) -> Result<(SymbolicDomain, GoalFormula), DomainError> {
    for (name, ty) in &spec.objects {
        let idx = scene
            .object_index(name)
            .ok_or_else(|| DomainError::Binding(format!("object {name:?} not in scene")))?;
        let movable = scene.objects[idx].movable;
        if movable != (ty == "movable") {
            return Err(DomainError::Binding(format!(
                "object {name:?} is {} in the scene but typed {ty:?} in the domain",
                if movable { "movable" } else { "fixed" }
            )));
        }
    }
    for obj in &scene.objects {
        if !spec.objects.iter().any(|(n, _)| n == &obj.name) {
            return Err(DomainError::Binding(format!(
                "scene object {:?} missing from the domain object list",
                obj.name
            )));
        }
    }
    let domain = SymbolicDomain {
        objects: scene.objects.iter().map(|o| o.name.clone()).collect(),
        movable: scene.objects.iter().map(|o| o.movable).collect(),
        smaller: spec
            .smaller
            .iter()
            .map(|(a, b)| {
                let ia = scene.object_index(a).ok_or_else(|| {
                    DomainError::Binding(format!("smaller fact references unknown {a:?}"))
                })?;
                let ib = scene.object_index(b).ok_or_else(|| {
                    DomainError::Binding(format!("smaller fact references unknown {b:?}"))
                })?;
                Ok((ObjectId(ia), ObjectId(ib)))
            })
            .collect::<Result<_, DomainError>>()?,
        require_clear: spec.require_clear,
        actions: spec.actions,
    };
    let goal = bind_goal(&spec.goal, scene)?;
    Ok((domain, goal))
}

fn bind_goal(expr: &GoalExpr, scene: &Scene) -> Result<GoalFormula, DomainError> {
    let obj = |name: &str| -> Result<ObjectId, DomainError> {
        scene
            .object_index(name)
            .map(ObjectId)
            .ok_or_else(|| DomainError::Binding(format!("goal references unknown object {name:?}")))
    };
    match expr {
        GoalExpr::And(fs) => Ok(GoalFormula::And(
            fs.iter().map(|f| bind_goal(f, scene)).collect::<Result<_, _>>()?,
        )),
        GoalExpr::Or(fs) => Ok(GoalFormula::Or(
            fs.iter().map(|f| bind_goal(f, scene)).collect::<Result<_, _>>()?,
        )),
        GoalExpr::Atom(pred, args) => {
            let prop = match (pred.as_str(), args.as_slice()) {
                ("on", [a, b]) => Proposition::On(obj(a)?, obj(b)?),
                ("inhand", [a]) => Proposition::InHand(obj(a)?),
                ("inworkspace", [a]) => Proposition::InWorkspace(obj(a)?),
                _ => {
                    return Err(DomainError::Binding(format!(
                        "bad goal atom ({pred} {})",
                        args.join(" ")
                    )))
                }
            };
            Ok(GoalFormula::Prop(prop))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
; workspace-reach style domain
(define (domain manipulation)
  (:predicates (inhand ?a) (on ?a ?b) (inworkspace ?a))
  (:objects table shelf - obj box hook - movable)
  (:actions pick place push)
  (:goal (on box shelf)))
"#;

    #[test]
    fn parses_sample() {
        let spec = parse_domain(SAMPLE).unwrap();
        assert_eq!(spec.name, "manipulation");
        assert_eq!(spec.objects.len(), 4);
        assert_eq!(spec.objects[0], ("table".to_string(), "obj".to_string()));
        assert_eq!(spec.objects[3], ("hook".to_string(), "movable".to_string()));
        assert!(spec.actions.pick && spec.actions.place && spec.actions.push);
        assert_eq!(
            spec.goal,
            GoalExpr::Atom("on".into(), vec!["box".into(), "shelf".into()])
        );
    }

    #[test]
    fn reports_line_and_column() {
        let bad = "(define (domain d)\n  (:objects a - vehicle)\n  (:actions pick)\n  (:goal (on a a)))";
        let e = parse_domain(bad).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.msg.contains("vehicle"));
        let unclosed = "(define (domain d)";
        let e = parse_domain(unclosed).unwrap_err();
        assert!(e.msg.contains("unclosed"));
    }

    #[test]
    fn unknown_action_name_is_rejected() {
        let bad = SAMPLE.replace("pick place push", "pick teleport");
        let e = parse_domain(&bad).unwrap_err();
        assert!(e.msg.contains("teleport"));
    }

    #[test]
    fn goal_connectives_parse() {
        let text = SAMPLE.replace(
            "(:goal (on box shelf))",
            "(:goal (or (and (on box shelf) (on hook table)) (inhand box)))",
        );
        let spec = parse_domain(&text).unwrap();
        match spec.goal {
            GoalExpr::Or(items) => {
                assert_eq!(items.len(), 2);
                assert!(matches!(items[0], GoalExpr::And(_)));
            }
            other => panic!("unexpected goal {other:?}"),
        }
    }

    #[test]
    fn flags_and_smaller_sections() {
        let text = r#"
(define (domain hanoi)
  (:objects t - obj s m - movable)
  (:actions pick place)
  (:flags require-clear)
  (:smaller (s m))
  (:goal (on s m)))
"#;
        let spec = parse_domain(text).unwrap();
        assert!(spec.require_clear);
        assert_eq!(spec.smaller, vec![("s".to_string(), "m".to_string())]);
        assert!(!spec.actions.push);
    }
}
