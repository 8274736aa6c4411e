use std::path::Path;
use std::sync::Arc;
use tamp_core::executor::{execute, ExecutorConfig, PerturbationScript};
use tamp_core::liegroup::exp_so3;
use tamp_core::planner::{plan, PlannerConfig};
use tamp_core::scene::Scene;
use tamp_core::domain;

fn main() {
    let dir = Path::new("scenes");
    let scene = Arc::new(Scene::load(&dir.join("workspace_reach.toml")).unwrap());
    let spec = domain::load_domain(&dir.join("workspace_reach.pddl")).unwrap();
    let (sym, goal) = domain::bind(&spec, &scene).unwrap();
    let cfg = PlannerConfig { max_depth: 5, ..Default::default() };
    let (plans, _) = plan(scene.clone(), &sym, &goal, &cfg).unwrap();
    let doc = plans[0].to_doc(&sym);
    let trace = execute(&doc, scene.clone(), &PerturbationScript::default(), &ExecutorConfig::default()).unwrap();
    println!("outcome {:?} at t={:.3}", trace.outcome, trace.samples.last().unwrap().time);
    let last = trace.samples.last().unwrap();
    println!("action index {}", last.action_index);
    // pairwise distances at the final sample
    let names: Vec<&str> = std::iter::once("ee").chain(scene.objects.iter().map(|o| o.name.as_str())).collect();
    for i in 0..scene.objects.len() {
        for j in 0..scene.objects.len() {
            if i == j { continue; }
            let pi = &last.poses[1 + i];
            let pj = &last.poses[1 + j];
            let ri = exp_so3(&pi.r);
            let rj = exp_so3(&pj.r);
            let rel = (rj.transpose().rotate(&(pi.p - pj.p)), rj.transpose() * ri);
            let d = scene.objects[i].shape.dist(&rel, &scene.objects[j].shape);
            if d < 0.0 {
                println!("PENETRATION {} vs {}: {:.4}", names[1+i], names[1+j], d);
            }
        }
    }
    for (k, s) in trace.samples.iter().enumerate().rev().take(3) {
        println!("sample {k} t={:.3} box={:?}", s.time, s.poses[4].p.as_slice());
    }
}
