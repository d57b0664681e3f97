use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ergoreach_core::ergonomics::{
    self, evaluate_trace, AccessibilityReport, FatigueReport, JointCapacity, LoadProfile, DEFAULT_STEP_MINUTES,
};
use ergoreach_core::planner;
use ergoreach_core::scene_io::{
    canonical_fixtures, load_trace, parse_scene_document, save_scene_document, save_trace, SceneDocument,
};
use ergoreach_core::{PlanOutcome, PlannerConfig, Scene, ScriptedIntervention, Termination};
use ergoreach_service::{serve_until, ServiceConfig, SessionManager};
use nalgebra::Vector3;
use serde::Serialize;

use crate::{AccessibilityArgs, CliError, EvaluateArgs, PlanArgs, PlannerFlags, ServeArgs};

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_document(path: &Path) -> Result<(SceneDocument, Scene), CliError> {
    let scene_err = |source| CliError::Scene {
        path: path.to_path_buf(),
        source,
    };
    let doc = parse_scene_document(&read(path)?).map_err(scene_err)?;
    let scene = doc.to_scene().map_err(scene_err)?;
    Ok((doc, scene))
}

/// `<dir>/<stem>.<suffix>` for a scene at `<dir>/<stem>.json`.
pub fn beside(scene: &Path, suffix: &str) -> PathBuf {
    let stem = scene
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    scene.with_file_name(format!("{stem}.{suffix}"))
}

/// The serialized name of a unit enum variant.
fn label<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => "?".into(),
    }
}

impl PlannerFlags {
    pub fn apply(&self, base: &PlannerConfig) -> PlannerConfig {
        let mut c = base.clone();
        if let Some(v) = self.step {
            c.delta_q = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iterations = v;
        }
        if let Some(v) = self.tolerance {
            c.goal_tolerance = v;
        }
        c
    }
}

#[derive(Debug)]
pub struct PlanRun {
    pub outcome: PlanOutcome,
    pub termination: Termination,
    pub trace_path: PathBuf,
    pub summary: String,
}

pub fn plan(args: &PlanArgs) -> Result<PlanRun, CliError> {
    let (doc, scene) = load_document(&args.scene)?;
    let config = args.planner.apply(&doc.planner);
    let script: Vec<ScriptedIntervention> = match &args.interventions {
        Some(path) => serde_json::from_str(&read(path)?).map_err(|e| CliError::Document {
            path: path.clone(),
            message: e.to_string(),
        })?,
        None => Vec::new(),
    };
    let outcome = planner::plan(&scene, &config, args.policy.into(), &script)?;
    let termination = outcome.termination();
    let trace_path = args.out.clone().unwrap_or_else(|| beside(&args.scene, "trace.json"));
    write(&trace_path, &save_trace(&outcome.trace, &scene, outcome.status))?;

    let mut counts: Vec<(String, usize)> = Vec::new();
    for e in &outcome.trace.events {
        let name = label(&e.kind);
        match counts.iter_mut().find(|(n, _)| *n == name) {
            Some((_, c)) => *c += 1,
            None => counts.push((name, 1)),
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "scene           {}", args.scene.display());
    let _ = writeln!(s, "step length     {}", config.delta_q);
    let _ = writeln!(s, "termination     {}", label(&termination));
    let _ = writeln!(s, "status          {}", label(&outcome.status));
    let _ = writeln!(s, "iterations      {}", outcome.trace.len().saturating_sub(1));
    if let Some(d) = outcome.trace.final_distance() {
        let _ = writeln!(s, "final distance  {d:.6}");
    }
    let events: Vec<String> = counts.iter().map(|(n, c)| format!("{n}={c}")).collect();
    let _ = writeln!(s, "events          {}", events.join(" "));
    if let Some(seed) = args.planner.seed {
        let _ = writeln!(s, "seed            {seed}");
    }
    let _ = writeln!(s, "trace           {}", trace_path.display());
    Ok(PlanRun {
        outcome,
        termination,
        trace_path,
        summary: s,
    })
}

fn vector(flag: &str, values: &Option<Vec<f64>>, default: Vector3<f64>) -> Result<Vector3<f64>, CliError> {
    match values {
        None => Ok(default),
        Some(v) if v.len() == 3 => Ok(Vector3::new(v[0], v[1], v[2])),
        Some(v) => Err(CliError::Usage(format!("--{flag} takes x,y,z, got {} values", v.len()))),
    }
}

#[derive(Debug)]
pub struct EvaluateRun {
    pub report: FatigueReport,
    pub report_path: PathBuf,
    pub summary: String,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<EvaluateRun, CliError> {
    let (_, scene) = load_document(&args.scene)?;
    let doc = load_trace(&read(&args.trace)?, &scene).map_err(|source| CliError::Scene {
        path: args.trace.clone(),
        source,
    })?;
    let trace = doc.trace();
    let dof = scene.chain().dof();
    let capacities: Vec<JointCapacity> = match (&args.capacities, args.mvc) {
        (Some(path), _) => serde_json::from_str(&read(path)?).map_err(|e| CliError::Document {
            path: path.clone(),
            message: e.to_string(),
        })?,
        (None, Some(mvc)) => vec![JointCapacity::fresh(mvc); dof],
        (None, None) => return Err(CliError::Usage("one of --capacities or --mvc is required".into())),
    };
    let dt = match (args.dt, args.duration) {
        (Some(dt), _) => dt,
        (None, Some(total)) => total / trace.len() as f64,
        (None, None) => DEFAULT_STEP_MINUTES,
    };
    let profile = match args.constant_load {
        Some(load) => LoadProfile::constant(dof, trace.len(), load, dt),
        None => {
            let masses = args.link_masses.clone().unwrap_or_else(|| vec![0.0; dof]);
            let external = vector("external-load", &args.external_load, Vector3::zeros())?;
            let down = if scene.chain().is_planar() {
                Vector3::new(0.0, -9.81, 0.0)
            } else {
                Vector3::new(0.0, 0.0, -9.81)
            };
            let gravity = vector("gravity", &args.gravity, down)?;
            LoadProfile::from_static(scene.chain(), &trace, &masses, external, gravity, dt)?
        }
    };
    let report = evaluate_trace(&trace, &scene, &capacities, &profile, &args.units)?;
    let report_path = args.out.clone().unwrap_or_else(|| beside(&args.scene, "report.json"));
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    write(&report_path, &(json + "\n"))?;

    let mut s = String::new();
    let _ = writeln!(s, "steps {}  dt {} min  units {}", trace.len(), report.dt, report.units);
    let _ = writeln!(s, "min F_R {:.6}", report.min_f_r);
    let _ = writeln!(
        s,
        "{:>5} {:>12} {:>14} {:>12}",
        "joint", "mvc", "final F_cem", "min F_cem"
    );
    for (j, series) in report.f_cem.iter().enumerate() {
        let last = series.last().copied().unwrap_or(f64::NAN);
        let min = series.iter().copied().fold(f64::INFINITY, f64::min);
        let _ = writeln!(s, "{:>5} {:>12.6} {:>14.6} {:>12.6}", j, capacities[j].mvc, last, min);
    }
    let _ = writeln!(s, "report {}", report_path.display());
    Ok(EvaluateRun {
        report,
        report_path,
        summary: s,
    })
}

#[derive(Debug, Serialize)]
struct CellRow {
    config_index: usize,
    chain_index: usize,
    delta_q: f64,
    link_lengths: String,
    termination: String,
    iterations: usize,
    final_distance: Option<f64>,
    error: Option<String>,
}

#[derive(Debug)]
pub struct AccessibilityRun {
    pub report: AccessibilityReport,
    pub csv_path: PathBuf,
    pub summary: String,
}

pub fn accessibility(args: &AccessibilityArgs) -> Result<AccessibilityRun, CliError> {
    let (doc, scene) = load_document(&args.scene)?;
    let base = args.planner.apply(&doc.planner);
    let configs: Vec<PlannerConfig> = match &args.steps {
        Some(steps) => steps.iter().map(|&dq| base.clone().with_delta_q(dq)).collect(),
        None => vec![base],
    };
    let chains = if args.links.is_empty() {
        vec![scene.chain().clone()]
    } else {
        args.links
            .iter()
            .map(|l| {
                scene
                    .chain()
                    .with_link_lengths(l)
                    .map_err(|e| CliError::Usage(format!("--links {l:?}: {e}")))
            })
            .collect::<Result<_, _>>()?
    };
    if configs.is_empty() || chains.is_empty() {
        return Err(CliError::Usage("the grid is empty".into()));
    }
    let report = ergonomics::accessibility(&scene, &configs, &chains);
    let csv_path = args
        .out
        .clone()
        .unwrap_or_else(|| beside(&args.scene, "accessibility.csv"));
    let csv_err = |e: csv::Error| CliError::Io {
        path: csv_path.clone(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    for c in &report.cells {
        let lengths: Vec<String> = c.link_lengths.iter().map(f64::to_string).collect();
        w.serialize(CellRow {
            config_index: c.config_index,
            chain_index: c.chain_index,
            delta_q: c.delta_q,
            link_lengths: lengths.join(" "),
            termination: c.termination.as_ref().map(label).unwrap_or_default(),
            iterations: c.iterations,
            final_distance: c.final_distance,
            error: c.error.clone(),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: csv_path.clone(),
        source,
    })?;

    let mut s = String::new();
    for c in &report.cells {
        let outcome = c
            .termination
            .as_ref()
            .map(label)
            .or_else(|| c.error.clone())
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "step {:<6} links {:<18} {}",
            c.delta_q,
            format!("{:?}", c.link_lengths),
            outcome
        );
    }
    let _ = writeln!(s, "N = {}", report.n);
    let _ = writeln!(s, "cells {}", csv_path.display());
    Ok(AccessibilityRun {
        report,
        csv_path,
        summary: s,
    })
}

/// Writes every bundled fixture to `dir` as `<name>.json`.
pub fn fixtures(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    canonical_fixtures()
        .into_iter()
        .map(|(name, doc)| {
            let path = dir.join(format!("{name}.json"));
            write(&path, &save_scene_document(&doc))?;
            Ok(path)
        })
        .collect()
}

/// Grace period for open connections (event streams in particular) after
/// an interrupt.
const SHUTDOWN_GRACE: Duration = Duration::from_secs(5);

pub fn serve(args: &ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let addr = format!("{}:{}", args.host, args.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: PathBuf::from("<runtime>"),
        source,
    })?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| CliError::Bind {
                addr: addr.clone(),
                source,
            })?;
        let local = listener.local_addr().map_err(|source| CliError::Bind {
            addr: addr.clone(),
            source,
        })?;
        let _ = writeln!(out, "listening on http://{local}");
        let _ = out.flush();
        let manager = Arc::new(SessionManager::new(ServiceConfig {
            fixtures_dir: args.fixtures.clone(),
            ..ServiceConfig::default()
        }));
        let interrupted = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        let server = serve_until(listener, manager, interrupted);
        let deadline = async {
            let _ = tokio::signal::ctrl_c().await;
            tokio::time::sleep(SHUTDOWN_GRACE).await;
        };
        tokio::select! {
            result = server => result.map_err(|source| CliError::Io { path: PathBuf::from(local.to_string()), source }),
            _ = deadline => Ok(()),
        }
    })
}
