//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs without the default test harness so the lines show
//! up in plain `cargo test` output.

mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ergoreach_core::ergonomics::{
    accessibility, evaluate_trace, fatigue_step, recovery_step, remaining_force_index, JointCapacity, LoadProfile,
};
use ergoreach_core::kinematics::{DhRow, JointLimit};
use ergoreach_core::scene_io::{
    arm_concave, fixture, scara_three_obstacles, scara_trap, walled_goal, TraceDocument, ARM_LINKS, SCARA_VARIANTS,
};
use ergoreach_core::{
    motion_collides, plan, EventKind, Intervention, InterventionPolicy, KinematicChain, PlanOutcome, PlannerConfig,
    Polygon, Posture, Scene, ScriptedIntervention, Status, Termination, TriMesh, Trigger,
};
use ergoreach_service::{serve_on, ServiceConfig, SessionManager};
use nalgebra::{Isometry3, Point2, Point3, Translation3, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "forward kinematics matches the matrix oracle",
            limit: Some(Duration::from_secs(5)),
            check: fk_oracle,
        },
        Criterion {
            name: "three link variants reach the goal",
            limit: Some(Duration::from_secs(30)),
            check: three_variants,
        },
        Criterion {
            name: "planar trap at 0.08, escape at 0.1",
            limit: Some(Duration::from_secs(30)),
            check: planar_trap_escape,
        },
        Criterion {
            name: "spatial arm trap at small step, escape at 0.06",
            limit: Some(Duration::from_secs(60)),
            check: spatial_trap_escape,
        },
        Criterion {
            name: "fatigue and recovery closed forms",
            limit: None,
            check: fatigue_closed_form,
        },
        Criterion {
            name: "remaining-force index properties",
            limit: None,
            check: remaining_force_properties,
        },
        Criterion {
            name: "planner invariants over 200 random scenes",
            limit: None,
            check: planner_invariants,
        },
        Criterion {
            name: "accessibility counts and grid-order invariance",
            limit: None,
            check: accessibility_counts,
        },
        Criterion {
            name: "service traces equal library traces",
            limit: None,
            check: service_equivalence,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let started = Instant::now();
        let result = std::panic::catch_unwind(c.check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = started.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took longer than {}s", limit.as_secs())),
            (r, _) => r,
        };
        let limit = c.limit.map(|l| format!(" limit {}s", l.as_secs())).unwrap_or_default();
        match result {
            Ok(detail) => println!("PASS  {}  [{:.2}s{limit}]  {detail}", c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {}  [{:.2}s{limit}]  {why}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scene_of(doc: ergoreach_core::scene_io::SceneDocument) -> Scene {
    doc.to_scene().expect("fixture is valid")
}

fn run(scene: &Scene, delta_q: f64, script: &[ScriptedIntervention]) -> PlanOutcome {
    let config = scene.config().clone().with_delta_q(delta_q);
    plan(scene, &config, InterventionPolicy::Halt, script).expect("planner runs")
}

fn escape(delta_q: f64) -> Vec<ScriptedIntervention> {
    vec![ScriptedIntervention {
        trigger: Trigger::LocalMinimum(0),
        intervention: Intervention::StepLength(delta_q),
    }]
}

fn reaches(scene: &Scene, outcome: &PlanOutcome, label: &str) -> Result<f64, String> {
    let d = outcome.trace.final_distance().unwrap_or(f64::INFINITY);
    ensure(outcome.termination() == Termination::GoalReached && d <= 0.5, || {
        format!("{label}: ended {:?} at distance {d}", outcome.termination())
    })?;
    oracle::trace_is_free(scene, &outcome.trace.postures, scene.config().substeps)
        .map_err(|e| format!("{label}: {e}"))?;
    Ok(d)
}

fn revisit_trap(outcome: &PlanOutcome, label: &str) -> Result<usize, String> {
    let event = outcome.trace.events.iter().find(|e| e.kind == EventKind::LocalMinimum);
    match (outcome.termination(), event) {
        (Termination::LocalMinimum, Some(e)) if e.payload.revisit_of.is_some() => Ok(e.trace_index),
        (t, _) => Err(format!("{label}: expected a revisit local minimum, ended {t:?}")),
    }
}

/// Scratch directory holding freshly written fixture files.
fn fixture_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ergoreach-acceptance-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let status = Command::new(env!("CARGO_BIN_EXE_ergoreach"))
        .args(["fixtures", "--out"])
        .arg(&dir)
        .output()
        .expect("binary runs");
    assert!(status.status.success(), "fixtures command failed");
    dir
}

fn cli_plan(dir: &Path, scene: &str, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_ergoreach"))
        .arg("plan")
        .arg("--scene")
        .arg(dir.join(format!("{scene}.json")))
        .arg("--out")
        .arg(dir.join(format!(
            "{scene}-{}.trace.json",
            args.join("_").replace(['/', '.'], "-")
        )))
        .args(args)
        .output()
        .expect("binary runs");
    out.status.code().unwrap_or(-1)
}

fn write_script(dir: &Path, delta_q: f64) -> String {
    let path = dir.join(format!("escape-{delta_q}.json"));
    let script = json!([{"trigger": {"local_minimum": 0}, "intervention": {"step_length": delta_q}}]);
    std::fs::write(&path, script.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn random_base(rng: &mut impl Rng) -> Isometry3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Isometry3::from_parts(
        Translation3::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
        ),
        UnitQuaternion::from_scaled_axis(axis * rng.random_range(0.0..3.0)),
    )
}

fn fk_oracle() -> Outcome {
    let mut rng = rng(7);
    let mut chains: Vec<KinematicChain> = SCARA_VARIANTS
        .iter()
        .map(|l| KinematicChain::planar_links(l).unwrap())
        .collect();
    chains.push(KinematicChain::spatial_arm(ARM_LINKS[0], ARM_LINKS[1], 1.0).unwrap());
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let mut chain = chains[i % chains.len()].clone();
        if !chain.is_planar() && i % 8 == 3 {
            chain = chain.with_base(random_base(&mut rng)).unwrap();
        }
        let q: Vec<f64> = (0..chain.dof()).map(|_| rng.random_range(-3.2..3.2)).collect();
        let frames = chain.forward_kinematics(&Posture::new(q.clone())).unwrap();
        let expected = oracle::frame_points(&chain, &q);
        for (f, p) in frames.iter().zip(&expected) {
            worst = worst.max((Point3::from(f.translation.vector) - p).norm());
        }
        let ee = chain.end_effector(&Posture::new(q.clone())).unwrap();
        worst = worst.max((ee - expected.last().unwrap()).norm());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("1000 samples, max deviation {worst:.1e}"))
}

fn three_variants() -> Outcome {
    let base = scene_of(scara_three_obstacles());
    let mut traces = Vec::new();
    let mut distances = Vec::new();
    for lengths in SCARA_VARIANTS {
        let variant = base
            .with_chain(KinematicChain::planar_links(&lengths).unwrap())
            .unwrap();
        let outcome = plan(&variant, variant.config(), InterventionPolicy::Halt, &[]).unwrap();
        distances.push(reaches(&variant, &outcome, &format!("{lengths:?}"))?);
        traces.push(outcome.trace.postures);
    }
    for i in 0..3 {
        for j in i + 1..3 {
            ensure(traces[i] != traces[j], || format!("variants {i} and {j} share a trace"))?;
        }
    }
    let d: Vec<String> = distances.iter().map(|d| format!("{d:.3}")).collect();
    Ok(format!("final distances {}", d.join(" / ")))
}

fn planar_trap_escape() -> Outcome {
    let scene = scene_of(scara_trap());
    let trapped = run(&scene, 0.08, &[]);
    revisit_trap(&trapped, "step 0.08")?;
    let fresh = run(&scene, 0.1, &[]);
    reaches(&scene, &fresh, "fresh step 0.1")?;
    let rescued = run(&scene, 0.08, &escape(0.1));
    reaches(&scene, &rescued, "scripted 0.08 -> 0.1")?;

    let dir = fixture_dir("planar");
    let script = write_script(&dir, 0.1);
    let codes = [
        cli_plan(&dir, "scara-trap", &["--step", "0.08"]),
        cli_plan(&dir, "scara-trap", &["--step", "0.1"]),
        cli_plan(&dir, "scara-trap", &["--step", "0.08", "--interventions", &script]),
    ];
    let _ = std::fs::remove_dir_all(&dir);
    ensure(codes == [2, 0, 0], || {
        format!("plan exit codes {codes:?}, expected [2, 0, 0]")
    })?;
    Ok(format!(
        "0.08 stuck at distance {:.2}; 0.1 reaches in {} moves; cli exits {codes:?}",
        trapped.trace.final_distance().unwrap(),
        fresh.trace.len() - 1
    ))
}

fn spatial_trap_escape() -> Outcome {
    let doc = arm_concave();
    let scene = scene_of(doc.clone());
    let small = doc.planner.delta_q;
    ensure(small < 0.06, || format!("fixture step {small} is not below 0.06"))?;
    let trapped = run(&scene, small, &[]);
    let at = revisit_trap(&trapped, &format!("step {small}"))?;

    // The trapped arm sits between the two faces of the concave obstacle.
    let mesh = &doc.obstacles.meshes[0];
    let v = |i: usize| Vector3::from(mesh.vertices[i]);
    let q = trapped.trace.postures[at].as_slice();
    let points = oracle::frame_points(scene.chain(), q);
    let (elbow, tip) = (points[points.len() - 2].coords, points[points.len() - 1].coords);
    let inside = (0..=10).any(|k| {
        let x = elbow + (tip - elbow) * (k as f64 / 10.0);
        oracle::in_wedge(v(0), v(1), v(2), v(3), x)
    });
    ensure(inside, || "trapped forearm is not inside the concavity".into())?;

    let fresh = run(&scene, 0.06, &[]);
    reaches(&scene, &fresh, "fresh step 0.06")?;
    let rescued = run(&scene, small, &escape(0.06));
    reaches(&scene, &rescued, "scripted escape to 0.06")?;

    let dir = fixture_dir("spatial");
    let script = write_script(&dir, 0.06);
    let small_arg = small.to_string();
    let codes = [
        cli_plan(&dir, "arm-concave", &["--step", &small_arg]),
        cli_plan(&dir, "arm-concave", &["--step", "0.06"]),
        cli_plan(&dir, "arm-concave", &["--step", &small_arg, "--interventions", &script]),
    ];
    let _ = std::fs::remove_dir_all(&dir);
    ensure(codes == [2, 0, 0], || {
        format!("plan exit codes {codes:?}, expected [2, 0, 0]")
    })?;
    Ok(format!(
        "{small} stuck at distance {:.2}; 0.06 reaches in {} moves; cli exits {codes:?}",
        trapped.trace.final_distance().unwrap(),
        fresh.trace.len() - 1
    ))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn fatigue_closed_form() -> Outcome {
    let fresh = JointCapacity {
        mvc: 100.0,
        f_cem: 100.0,
        k: 1.0,
        r: 2.4,
    };
    let f = fatigue_step(&fresh, 50.0, 1.0).unwrap();
    let f_expected = 100.0 * (-0.5f64).exp();
    ensure(rel(f, f_expected) <= 1e-6, || format!("fatigue {f} vs {f_expected}"))?;

    let tired = fresh.with_f_cem(50.0);
    let g = recovery_step(&tired, 1.0).unwrap();
    let g_expected = 100.0 - 50.0 * (-2.4f64).exp();
    ensure(rel(g, g_expected) <= 1e-6, || format!("recovery {g} vs {g_expected}"))?;

    // One minute in steps of dt and dt/2.
    let chained = |dt: f64, load: Option<f64>, start: JointCapacity| {
        let n = (1.0 / dt).round() as usize;
        (0..n).fold(start, |c, _| {
            let next = match load {
                Some(l) => fatigue_step(&c, l, dt).unwrap(),
                None => recovery_step(&c, dt).unwrap(),
            };
            c.with_f_cem(next)
        })
    };
    let mut worst = 0.0f64;
    for dt in [0.1, 0.01] {
        let a = chained(dt, Some(50.0), fresh).f_cem;
        let b = chained(dt / 2.0, Some(50.0), fresh).f_cem;
        let c = chained(dt, None, tired).f_cem;
        let d = chained(dt / 2.0, None, tired).f_cem;
        worst = worst.max((a - b).abs()).max((c - d).abs());
    }
    ensure(worst < 1e-9, || format!("halving dt changed the result by {worst:e}"))?;
    Ok(format!(
        "fatigue rel err {:.1e}, recovery rel err {:.1e}, dt halving {worst:.1e}",
        rel(f, f_expected),
        rel(g, g_expected)
    ))
}

fn remaining_force_properties() -> Outcome {
    let fresh = vec![
        JointCapacity::fresh(100.0),
        JointCapacity::fresh(80.0),
        JointCapacity::fresh(60.0),
    ];
    let idle = remaining_force_index(&fresh, &[0.0, 0.0, 0.0]).unwrap();
    ensure(idle == 100.0, || format!("fresh, unloaded index is {idle}"))?;

    let spent = vec![JointCapacity::fresh(100.0).with_f_cem(40.0), JointCapacity::fresh(80.0)];
    let zero = remaining_force_index(&spent, &[40.0, 10.0]).unwrap();
    ensure(zero == 0.0, || format!("load equal to capacity gives {zero}"))?;

    let scene = scene_of(fixture("free-space-2d").unwrap());
    let outcome = plan(&scene, scene.config(), InterventionPolicy::Halt, &[]).unwrap();
    let dof = scene.chain().dof();
    let profile = LoadProfile::constant(dof, outcome.trace.len(), 30.0, 0.01);
    let caps = vec![JointCapacity::fresh(100.0); dof];
    let report = evaluate_trace(&outcome.trace, &scene, &caps, &profile, "N").unwrap();
    ensure(report.f_r.windows(2).all(|w| w[1] < w[0]), || {
        "index is not strictly decreasing".into()
    })?;

    let mut rng = rng(11);
    for i in 0..1000 {
        let n = rng.random_range(1..=6);
        let caps: Vec<JointCapacity> = (0..n)
            .map(|_| {
                let mvc = rng.random_range(10.0..500.0);
                JointCapacity::fresh(mvc).with_f_cem(mvc * rng.random_range(0.05..=1.0))
            })
            .collect();
        let mut loads: Vec<f64> = caps.iter().map(|c| c.f_cem * rng.random_range(0.0..1.0)).collect();
        let expected = 100.0
            * caps
                .iter()
                .zip(&loads)
                .map(|(c, l)| (c.f_cem - l) / (c.mvc - l))
                .fold(f64::INFINITY, f64::min);
        let got = remaining_force_index(&caps, &loads).unwrap();
        ensure((got - expected).abs() <= 1e-12 * expected.abs().max(1.0), || {
            format!("set {i}: {got} vs brute force {expected}")
        })?;
        // Joint order must not matter.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let shuffled_caps: Vec<JointCapacity> = order.iter().map(|&j| caps[j]).collect();
        loads = order.iter().map(|&j| loads[j]).collect();
        let again = remaining_force_index(&shuffled_caps, &loads).unwrap();
        ensure(again == got, || format!("set {i}: reordering changed {got} to {again}"))?;
    }
    Ok(format!(
        "fresh 100, exhausted 0, constant load {:.2} -> {:.2}, 1000 brute-force sets agree",
        report.f_r[0],
        report.f_r.last().unwrap()
    ))
}

fn random_chain(rng: &mut impl Rng, spatial: bool) -> KinematicChain {
    let dof = rng.random_range(2..=3);
    if !spatial {
        let lengths: Vec<f64> = (0..dof).map(|_| rng.random_range(5.0..25.0)).collect();
        return KinematicChain::planar_links(&lengths).unwrap();
    }
    let joints = (0..dof)
        .map(|_| {
            DhRow::revolute(
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..30.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-10.0..10.0),
            )
        })
        .collect();
    let tool = DhRow::revolute(0.0, rng.random_range(1.0..30.0), 0.0, 0.0);
    KinematicChain::new(
        joints,
        tool,
        vec![JointLimit::default(); dof],
        vec![1.0; dof],
        Isometry3::identity(),
        false,
    )
    .unwrap()
}

fn random_scene(rng: &mut impl Rng, spatial: bool) -> Scene {
    loop {
        let chain = random_chain(rng, spatial);
        let reach = chain.total_reach();
        let mut posture = |chain: &KinematicChain| {
            Posture::new(
                chain
                    .joint_limits()
                    .iter()
                    .map(|l| rng.random_range(l.min..=l.max))
                    .collect::<Vec<_>>(),
            )
        };
        let start = posture(&chain);
        let goal = chain.end_effector(&posture(&chain)).unwrap();
        let count = rng.random_range(0..=3);
        let mut polygons = Vec::new();
        let mut meshes = Vec::new();
        for _ in 0..count {
            if spatial {
                let c = Vector3::from_fn(|_, _| rng.random_range(-reach..reach));
                let vertices = (0..4)
                    .map(|_| Point3::from(c + Vector3::from_fn(|_, _| rng.random_range(-8.0..8.0))))
                    .collect();
                if let Ok(m) = TriMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]]) {
                    meshes.push(m);
                }
            } else {
                let c = Vector2::new(rng.random_range(-reach..reach), rng.random_range(-reach..reach));
                let s = rng.random_range(2.0..10.0);
                let vertices = (0..3)
                    .map(|i| {
                        let a = i as f64 * 2.1 + rng.random_range(-0.5..0.5);
                        Point2::from(c + Vector2::new(a.cos(), a.sin()) * s)
                    })
                    .collect();
                if let Ok(p) = Polygon::new(vertices) {
                    polygons.push(p);
                }
            }
        }
        let config = PlannerConfig {
            delta_q: rng.random_range(0.05..0.2),
            max_iterations: 300,
            ..PlannerConfig::default()
        };
        if let Ok(scene) = Scene::new(chain, polygons, meshes, start, goal, config) {
            return scene;
        }
    }
}

/// Independent re-evaluation of one greedy choice: every neighbour in the
/// step lattice, scored with the oracle distance, nearest feasible wins and
/// ties go to the earliest in lexicographic order.
fn exhaustive_choice(scene: &Scene, q: &Posture, dq: f64) -> Option<(Vec<f64>, f64)> {
    let chain = scene.chain();
    let n = q.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut signs = vec![0i32; n];
        let mut c = code;
        for j in (0..n).rev() {
            signs[j] = (c % 3) as i32 - 1;
            c /= 3;
        }
        if signs.iter().all(|&s| s == 0) {
            continue;
        }
        let values: Vec<f64> = q
            .as_slice()
            .iter()
            .zip(&signs)
            .map(|(x, &s)| x + s as f64 * dq)
            .collect();
        let within = values
            .iter()
            .zip(chain.joint_limits())
            .zip(&signs)
            .all(|((v, l), &s)| s == 0 || (l.min <= *v && *v <= l.max));
        if !within {
            continue;
        }
        let cand = Posture::new(values.clone());
        if motion_collides(chain, q, &cand, scene, scene.config().substeps).unwrap() {
            continue;
        }
        let d = oracle::goal_distance(scene, &values);
        if best.as_ref().is_none_or(|(_, b)| d < *b) {
            best = Some((values, d));
        }
    }
    best
}

fn planner_invariants() -> Outcome {
    let mut rng = rng(2025);
    let mut moves = 0;
    let mut ends = std::collections::BTreeMap::new();
    for i in 0..200 {
        let scene = random_scene(&mut rng, i % 4 == 3);
        let config = scene.config();
        let first = plan(&scene, config, InterventionPolicy::Halt, &[]).unwrap();
        let second = plan(&scene, config, InterventionPolicy::Halt, &[]).unwrap();
        ensure(first == second, || format!("scene {i}: two runs differ"))?;
        let trace = &first.trace;
        oracle::trace_is_free(&scene, &trace.postures, config.substeps).map_err(|e| format!("scene {i}: {e}"))?;
        for (from, to, dq) in trace.moves() {
            let (a, b) = (&trace.postures[from], &trace.postures[to]);
            let step = a.max_abs_diff(b);
            ensure(step <= dq + 1e-12, || {
                format!("scene {i}: move {from} steps {step} > {dq}")
            })?;
            let (choice, best) = exhaustive_choice(&scene, a, dq)
                .ok_or_else(|| format!("scene {i}: a move was made from {from} with no feasible candidate"))?;
            let picked = oracle::goal_distance(&scene, b.as_slice());
            // Exact agreement, or a tie within rounding of the two FK codes.
            ensure(choice == b.as_slice() || (picked - best).abs() <= 1e-9, || {
                format!("scene {i}: move {from} picked distance {picked}, nearest feasible is {best}")
            })?;
            moves += 1;
        }
        ensure(
            (first.termination() == Termination::GoalReached) == (first.status == Status::DoneSuccess),
            || {
                format!(
                    "scene {i}: status {:?} with termination {:?}",
                    first.status,
                    first.termination()
                )
            },
        )?;
        *ends.entry(format!("{:?}", first.termination())).or_insert(0) += 1;
    }
    let ends: Vec<String> = ends.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Ok(format!("{moves} moves re-evaluated; {}", ends.join(" ")))
}

fn accessibility_counts() -> Outcome {
    let chains: Vec<KinematicChain> = SCARA_VARIANTS
        .iter()
        .map(|l| KinematicChain::planar_links(l).unwrap())
        .collect();
    let three = scene_of(scara_three_obstacles());
    let report = accessibility(&three, &[PlannerConfig::default()], &chains);
    ensure(report.n == 3, || format!("three-obstacle scene gives N = {}", report.n))?;
    let walled = scene_of(walled_goal());
    let closed = accessibility(&walled, &[PlannerConfig::default()], &chains);
    ensure(closed.n == 0, || format!("walled goal gives N = {}", closed.n))?;

    let mut configs: Vec<PlannerConfig> = [0.06, 0.08, 0.1, 0.12]
        .iter()
        .map(|&dq| PlannerConfig::default().with_delta_q(dq))
        .collect();
    let mut chains = chains;
    let key = |r: &ergoreach_core::ergonomics::AccessibilityReport| {
        let mut k: Vec<(u64, Vec<u64>, bool)> = r
            .cells
            .iter()
            .map(|c| {
                (
                    c.delta_q.to_bits(),
                    c.link_lengths.iter().map(|l| l.to_bits()).collect(),
                    c.solved(),
                )
            })
            .collect();
        k.sort();
        (r.n, k)
    };
    let reference = key(&accessibility(&three, &configs, &chains));
    let mut rng = rng(5);
    for round in 0..4 {
        configs.shuffle(&mut rng);
        chains.shuffle(&mut rng);
        let shuffled = key(&accessibility(&three, &configs, &chains));
        ensure(shuffled == reference, || {
            format!("shuffle {round} changed the grid outcome")
        })?;
    }
    let trap_grid: Vec<PlannerConfig> = [0.06, 0.08, 0.1]
        .iter()
        .map(|&dq| PlannerConfig::default().with_delta_q(dq))
        .collect();
    let sweep = accessibility(
        &scene_of(scara_trap()),
        &trap_grid,
        &[KinematicChain::planar_links(&SCARA_VARIANTS[0]).unwrap()],
    );
    ensure(sweep.n == 1, || format!("trap sweep gives N = {}", sweep.n))?;
    Ok(format!(
        "N = 3, walled N = 0, 4x3 grid N = {} under 4 shuffles, trap sweep N = 1",
        reference.0
    ))
}

struct Scenario {
    fixture: &'static str,
    config: PlannerConfig,
    policy: InterventionPolicy,
    script: Vec<ScriptedIntervention>,
    create: Value,
    advance: Value,
    /// Interventions posted, in order, whenever the session waits for one.
    interventions: Vec<Value>,
}

fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            fixture: "scara-three-obstacles",
            config: PlannerConfig::default(),
            policy: InterventionPolicy::Halt,
            script: vec![],
            create: json!({"fixture": "scara-three-obstacles", "policy": {"policy": "halt"}}),
            advance: json!({"steps": 7}),
            interventions: vec![],
        },
        Scenario {
            fixture: "scara-trap",
            config: PlannerConfig::default().with_delta_q(0.08),
            policy: InterventionPolicy::External,
            script: escape(0.1),
            create: json!({"fixture": "scara-trap", "overrides": {"delta_q": 0.08}}),
            advance: json!({"until": "event"}),
            interventions: vec![json!({"step_length": 0.1})],
        },
        Scenario {
            fixture: "arm-concave",
            config: PlannerConfig::default().with_delta_q(0.03),
            policy: InterventionPolicy::auto_escalate(),
            script: vec![],
            create: json!({"fixture": "arm-concave", "policy": {"policy": "auto_escalate", "factor": 1.25, "cap": 4.0}}),
            advance: json!({"until": "event"}),
            interventions: vec![],
        },
    ]
}

fn service_equivalence() -> Outcome {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let manager = std::sync::Arc::new(SessionManager::new(ServiceConfig::default()));
    runtime.spawn(serve_on(listener, manager));
    let client = reqwest::blocking::Client::new();
    let post = |path: &str, body: &Value| -> Result<Value, String> {
        let resp = client
            .post(format!("{base}{path}"))
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let value: Value = resp.json().map_err(|e| e.to_string())?;
        ensure(status.is_success(), || format!("POST {path}: {status} {value}"))?;
        Ok(value)
    };
    let get = |path: &str| -> Result<String, String> {
        let resp = client.get(format!("{base}{path}")).send().map_err(|e| e.to_string())?;
        ensure(resp.status().is_success(), || format!("GET {path}: {}", resp.status()))?;
        resp.text().map_err(|e| e.to_string())
    };

    let mut lengths = Vec::new();
    for s in scenarios() {
        let mut doc = fixture(s.fixture).unwrap();
        doc.planner = s.config.clone();
        let scene = doc.to_scene().unwrap();
        let lib = plan(&scene, &s.config, s.policy, &s.script).unwrap();
        let expected = TraceDocument::new(&lib.trace, &scene, lib.status).canonical();

        let created = post("/v1/sessions", &s.create)?;
        let id = created["id"].as_str().ok_or("no session id")?.to_string();
        let mut pending = s.interventions.iter();
        let mut intervened = 0;
        for _ in 0..10_000 {
            let state: Value = serde_json::from_str(&get(&format!("/v1/sessions/{id}"))?).map_err(|e| e.to_string())?;
            match state["status"].as_str() {
                Some("RUNNING") => {
                    post(&format!("/v1/sessions/{id}/advance"), &s.advance)?;
                }
                Some("AWAITING_INTERVENTION") => {
                    let body = pending.next().ok_or("session waits but the script is exhausted")?;
                    post(&format!("/v1/sessions/{id}/intervene"), body)?;
                    intervened += 1;
                }
                _ => break,
            }
        }
        let exported: TraceDocument =
            serde_json::from_str(&get(&format!("/v1/sessions/{id}/trace"))?).map_err(|e| e.to_string())?;
        ensure(exported.canonical() == expected, || {
            format!("{}: service trace differs from the library trace", s.fixture)
        })?;
        ensure(!exported.partial, || {
            format!("{}: finished export is flagged partial", s.fixture)
        })?;
        lengths.push(format!(
            "{} ({} postures, {intervened} interventions)",
            s.fixture,
            exported.postures.len()
        ));
    }
    Ok(lengths.join(", "))
}
