use std::path::Path;
use std::sync::Arc;
use tamp_core::constraints::{assemble, ConstraintKind, ObjectiveConfig};
use tamp_core::domain;
use tamp_core::optimizer::{solve, ConstrainedProblem, SolverConfig};
use tamp_core::scene::Scene;
use tamp_core::symbolic::enumerate_skeletons;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("hanoi");
    let depth: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(14);
    let pick: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let dir = Path::new("scenes");
    let scene = Arc::new(Scene::load(&dir.join(format!("{name}.toml"))).unwrap());
    let spec = domain::load_domain(&dir.join(format!("{name}.pddl"))).unwrap();
    let (sym, goal) = domain::bind(&spec, &scene).unwrap();
    let sks = enumerate_skeletons(&sym, &scene.initial_symbolic_state(), &goal, depth);
    println!("{} skeletons", sks.len());
    let sk = &sks[pick];
    println!("skeleton: {}", sk.display(&sym));
    let p = assemble(sk, scene.clone(), ObjectiveConfig::default()).unwrap();
    let started = std::time::Instant::now();
    let r = solve(&p, &SolverConfig::default());
    println!("status {:?} viol {:.3e} score {:.4} iters {} in {:.1}s", r.status, r.max_violation, r.score, r.iterations, started.elapsed().as_secs_f64());
    for (i, b) in p.blocks.iter().enumerate() {
        let v = p.block_value(i, &r.xi_star);
        let worst = v.iter().fold(0.0f64, |acc, x| acc.max(match b.kind { ConstraintKind::Eq => x.abs(), _ => x.max(0.0)}));
        if worst > 1e-6 { println!("  {}: viol {:.3e}", b.label, worst); }
    }
    for t in 0..=p.timeline.horizon() {
        let s = &r.xi_star.as_slice()[6*t..6*t+6];
        println!("xi_{t}: [{:+.4} {:+.4} {:+.4} | {:+.4} {:+.4} {:+.4}]", s[0],s[1],s[2],s[3],s[4],s[5]);
    }
    println!("outer violations: {:?}", &r.outer_violations.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
}
