//! Joint fatigue and recovery, the remaining-force index, static joint
//! loads along a trace, and the accessibility count.
//!
//! Capacities evolve by
//!
//! ```text
//! loaded:    dF_cem/dt = -k * (F_cem / MVC) * F_load
//! unloaded:  dF_cem/dt =  R * (MVC - F_cem)
//! ```
//!
//! with time in minutes. The remaining-force index aggregates the worst joint:
//!
//! ```text
//! F_R = 100 * min_i (F_cem_i - F_load_i) / (MVC_i - F_load_i)
//! ```
//!
//! Capacities fed by [`static_joint_loads`] are torques; the report keeps
//! whatever unit the capacities were expressed in (see [`FatigueReport::units`]).

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Scene;
use crate::kinematics::{KinematicChain, KinematicsError, Posture};
use crate::planner::{plan, InterventionPolicy, PlanTrace, PlannerConfig, Termination};

/// Fatigue rate, per minute.
pub const DEFAULT_FATIGUE_RATE: f64 = 1.0;
/// Recovery rate, per minute.
pub const DEFAULT_RECOVERY_RATE: f64 = 2.4;
/// Minutes of task time assigned to one trace step unless told otherwise.
pub const DEFAULT_STEP_MINUTES: f64 = 0.01;

/// Largest `rate * h` used by one RK4 substep.
const MAX_RATE_STEP: f64 = 0.005;
const MAX_SUBSTEPS: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgonomicsError {
    #[error("invalid capacity for joint {joint}: {reason}")]
    InvalidCapacity { joint: usize, reason: String },
    #[error("load {load} on joint {joint} reaches its maximum capacity {mvc}")]
    CapacityExceeded { joint: usize, load: f64, mvc: f64 },
    #[error("load must be finite and non-negative, got {0}")]
    NegativeLoad(f64),
    #[error("time step must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("{what}: expected {expected}, got {got}")]
    Misaligned {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("link mass must be finite and non-negative, got {0}")]
    InvalidMass(f64),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Strength state of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointCapacity {
    /// Maximum voluntary contraction (also the recovery ceiling).
    pub mvc: f64,
    /// Current exertable maximum.
    pub f_cem: f64,
    /// Fatigue rate, per minute.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Recovery rate, per minute.
    #[serde(default = "default_r")]
    pub r: f64,
}

fn default_k() -> f64 {
    DEFAULT_FATIGUE_RATE
}

fn default_r() -> f64 {
    DEFAULT_RECOVERY_RATE
}

impl JointCapacity {
    /// Unfatigued joint with the default rates.
    pub fn fresh(mvc: f64) -> Self {
        Self {
            mvc,
            f_cem: mvc,
            k: DEFAULT_FATIGUE_RATE,
            r: DEFAULT_RECOVERY_RATE,
        }
    }

    pub fn with_f_cem(mut self, f_cem: f64) -> Self {
        self.f_cem = f_cem;
        self
    }

    pub fn validate(&self, joint: usize) -> Result<(), ErgonomicsError> {
        let bad = |reason: &str| ErgonomicsError::InvalidCapacity {
            joint,
            reason: reason.to_string(),
        };
        if !(self.mvc.is_finite() && self.mvc > 0.0) {
            return Err(bad("mvc must be positive"));
        }
        if !(self.f_cem.is_finite() && self.f_cem > 0.0 && self.f_cem <= self.mvc) {
            return Err(bad("f_cem must lie in (0, mvc]"));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(bad("k must be positive"));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(bad("r must be positive"));
        }
        Ok(())
    }
}

/// Separate push and pull capacities for one joint, selected by load sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionalCapacity {
    pub push: JointCapacity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pull: Option<JointCapacity>,
}

impl DirectionalCapacity {
    /// Capacity that resists a signed load, and the load magnitude.
    pub fn for_load(&self, signed_load: f64) -> (&JointCapacity, f64) {
        match (&self.pull, signed_load < 0.0) {
            (Some(pull), true) => (pull, -signed_load),
            _ => (&self.push, signed_load.abs()),
        }
    }
}

/// Classic fixed-step RK4 over `duration` for the autonomous scalar ODE
/// `y' = f(y)`, with `stiffness` bounding `|df/dy|`.
fn rk4<F: Fn(f64) -> f64>(y0: f64, duration: f64, stiffness: f64, f: F) -> f64 {
    let n = ((stiffness * duration / MAX_RATE_STEP).ceil() as usize).clamp(1, MAX_SUBSTEPS);
    let h = duration / n as f64;
    let mut y = y0;
    for _ in 0..n {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    }
    y
}

fn check_dt(dt: f64) -> Result<(), ErgonomicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ErgonomicsError::InvalidDuration(dt));
    }
    Ok(())
}

/// Capacity after holding `load` for `dt` minutes.
pub fn fatigue_step(capacity: &JointCapacity, load: f64, dt: f64) -> Result<f64, ErgonomicsError> {
    if !(load.is_finite() && load >= 0.0) {
        return Err(ErgonomicsError::NegativeLoad(load));
    }
    check_dt(dt)?;
    if load == 0.0 {
        return Ok(capacity.f_cem);
    }
    let rate = capacity.k * load / capacity.mvc;
    let y = rk4(capacity.f_cem, dt, rate, |f| -rate * f);
    Ok(y.clamp(f64::MIN_POSITIVE, capacity.mvc))
}

/// Capacity after resting for `dt` minutes.
pub fn recovery_step(capacity: &JointCapacity, dt: f64) -> Result<f64, ErgonomicsError> {
    check_dt(dt)?;
    if capacity.f_cem >= capacity.mvc {
        return Ok(capacity.mvc);
    }
    let (r, ceiling) = (capacity.r, capacity.mvc);
    let y = rk4(capacity.f_cem, dt, r, |f| r * (ceiling - f));
    Ok(y.min(ceiling))
}

/// One joint's margin `(F_cem - F_load) / (MVC - F_load)`, as a fraction.
pub fn remaining_force_term(joint: usize, capacity: &JointCapacity, load: f64) -> Result<f64, ErgonomicsError> {
    if !(load.is_finite() && load >= 0.0) {
        return Err(ErgonomicsError::NegativeLoad(load));
    }
    if load >= capacity.mvc {
        return Err(ErgonomicsError::CapacityExceeded {
            joint,
            load,
            mvc: capacity.mvc,
        });
    }
    Ok((capacity.f_cem - load) / (capacity.mvc - load))
}

/// Worst-joint remaining force in percent. Overloaded joints
/// (`load > f_cem`) produce a negative index.
pub fn remaining_force_index(capacities: &[JointCapacity], loads: &[f64]) -> Result<f64, ErgonomicsError> {
    if capacities.len() != loads.len() {
        return Err(ErgonomicsError::Misaligned {
            what: "loads per joint",
            expected: capacities.len(),
            got: loads.len(),
        });
    }
    let mut worst = f64::INFINITY;
    for (joint, (cap, &load)) in capacities.iter().zip(loads).enumerate() {
        worst = worst.min(remaining_force_term(joint, cap, load)?);
    }
    Ok(worst * 100.0)
}

/// Static torque magnitude about each joint axis at posture `q`.
///
/// Each link's mass acts at the midpoint of its segment; `external_load` is
/// a force applied at the end effector. `gravity` is an acceleration vector
/// in world coordinates.
pub fn static_joint_loads(
    chain: &KinematicChain,
    q: &Posture,
    link_masses: &[f64],
    external_load: Vector3<f64>,
    gravity: Vector3<f64>,
) -> Result<Vec<f64>, ErgonomicsError> {
    if link_masses.len() != chain.dof() {
        return Err(ErgonomicsError::Misaligned {
            what: "link masses",
            expected: chain.dof(),
            got: link_masses.len(),
        });
    }
    if let Some(&m) = link_masses.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
        return Err(ErgonomicsError::InvalidMass(m));
    }
    let frames = chain.forward_kinematics(q)?;
    let segments = chain.link_segments(q)?;
    let tip = frames.last().expect("frames are never empty").translation.vector;
    let loads = (0..chain.dof())
        .map(|j| {
            let frame = &frames[j + 1];
            let axis = frame.rotation * Vector3::z();
            let origin = frame.translation.vector;
            let mut torque = (tip - origin).cross(&external_load);
            for (seg, &m) in segments[j..].iter().zip(&link_masses[j..]) {
                let com = (seg.start.coords + seg.end.coords) * 0.5;
                torque += (com - origin).cross(&(gravity * m));
            }
            axis.dot(&torque).abs()
        })
        .collect();
    Ok(loads)
}

/// Per-joint loads over the steps of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfile {
    /// `loads[joint][step]`.
    pub loads: Vec<Vec<f64>>,
    /// Minutes per trace step.
    pub dt: f64,
}

impl LoadProfile {
    pub fn constant(joints: usize, steps: usize, load: f64, dt: f64) -> Self {
        Self {
            loads: vec![vec![load; steps]; joints],
            dt,
        }
    }

    /// Static loads evaluated at every posture of the trace.
    pub fn from_static(
        chain: &KinematicChain,
        trace: &PlanTrace,
        link_masses: &[f64],
        external_load: Vector3<f64>,
        gravity: Vector3<f64>,
        dt: f64,
    ) -> Result<Self, ErgonomicsError> {
        let mut loads = vec![Vec::with_capacity(trace.len()); chain.dof()];
        for q in &trace.postures {
            let at = static_joint_loads(chain, q, link_masses, external_load, gravity)?;
            for (series, v) in loads.iter_mut().zip(at) {
                series.push(v);
            }
        }
        Ok(Self { loads, dt })
    }

    pub fn joints(&self) -> usize {
        self.loads.len()
    }

    pub fn steps(&self) -> usize {
        self.loads.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), ErgonomicsError> {
        check_dt(self.dt)?;
        let steps = self.steps();
        for series in &self.loads {
            if series.len() != steps {
                return Err(ErgonomicsError::Misaligned {
                    what: "load steps per joint",
                    expected: steps,
                    got: series.len(),
                });
            }
            if let Some(&v) = series.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(ErgonomicsError::NegativeLoad(v));
            }
        }
        Ok(())
    }
}

pub const REPORT_VERSION: u32 = 1;

/// Capacity history along a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FatigueReport {
    pub version: u32,
    /// Unit label of capacities and loads.
    pub units: String,
    /// Minutes per step.
    pub dt: f64,
    /// `f_cem[joint][step]`, the capacity at the end of each step.
    pub f_cem: Vec<Vec<f64>>,
    /// `f_mvc[joint][step] = load / mvc`.
    pub f_mvc: Vec<Vec<f64>>,
    /// Remaining-force index per step, percent.
    pub f_r: Vec<f64>,
    pub min_f_r: f64,
}

impl FatigueReport {
    pub fn terminal_f_cem(&self) -> Vec<f64> {
        self.f_cem
            .iter()
            .map(|s| s.last().copied().unwrap_or(f64::NAN))
            .collect()
    }
}

/// Integrates each joint's capacity over the trace: steps with load fatigue
/// the joint, unloaded steps let it recover.
pub fn evaluate_trace(
    trace: &PlanTrace,
    scene: &Scene,
    capacities: &[JointCapacity],
    profile: &LoadProfile,
    units: &str,
) -> Result<FatigueReport, ErgonomicsError> {
    let dof = scene.chain().dof();
    if capacities.len() != dof {
        return Err(ErgonomicsError::Misaligned {
            what: "capacities per joint",
            expected: dof,
            got: capacities.len(),
        });
    }
    for (j, cap) in capacities.iter().enumerate() {
        cap.validate(j)?;
    }
    profile.validate()?;
    if profile.joints() != dof {
        return Err(ErgonomicsError::Misaligned {
            what: "load series",
            expected: dof,
            got: profile.joints(),
        });
    }
    if profile.steps() != trace.len() {
        return Err(ErgonomicsError::Misaligned {
            what: "load steps",
            expected: trace.len(),
            got: profile.steps(),
        });
    }
    let mut state = capacities.to_vec();
    let steps = trace.len();
    let mut f_cem = vec![Vec::with_capacity(steps); dof];
    let mut f_mvc = vec![Vec::with_capacity(steps); dof];
    let mut f_r = Vec::with_capacity(steps);
    let mut loads = vec![0.0; dof];
    for step in 0..steps {
        for j in 0..dof {
            let load = profile.loads[j][step];
            loads[j] = load;
            state[j].f_cem = if load > 0.0 {
                fatigue_step(&state[j], load, profile.dt)?
            } else {
                recovery_step(&state[j], profile.dt)?
            };
            f_cem[j].push(state[j].f_cem);
            f_mvc[j].push(load / state[j].mvc);
        }
        f_r.push(remaining_force_index(&state, &loads)?);
    }
    let min_f_r = f_r.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FatigueReport {
        version: REPORT_VERSION,
        units: units.to_string(),
        dt: profile.dt,
        f_cem,
        f_mvc,
        f_r,
        min_f_r,
    })
}

/// Outcome of one (config, chain) cell of an accessibility grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityCell {
    pub config_index: usize,
    pub chain_index: usize,
    pub delta_q: f64,
    pub link_lengths: Vec<f64>,
    /// `None` when the cell could not be planned at all.
    pub termination: Option<Termination>,
    pub iterations: usize,
    pub final_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AccessibilityCell {
    pub fn solved(&self) -> bool {
        self.termination == Some(Termination::GoalReached)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityReport {
    /// Number of cells that reached the goal; zero means inaccessible.
    pub n: usize,
    pub cells: Vec<AccessibilityCell>,
}

impl AccessibilityReport {
    pub fn accessible(&self) -> bool {
        self.n > 0
    }
}

/// Plans every (config, chain) combination with the halting policy and
/// counts the solutions. Cells run in parallel; results come back in
/// row-major (config, chain) order.
pub fn accessibility(scene: &Scene, configs: &[PlannerConfig], chains: &[KinematicChain]) -> AccessibilityReport {
    let grid: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..chains.len()).map(move |k| (c, k)))
        .collect();
    let cells: Vec<AccessibilityCell> = grid
        .par_iter()
        .map(|&(ci, ki)| {
            let config = &configs[ci];
            let chain = &chains[ki];
            let mut cell = AccessibilityCell {
                config_index: ci,
                chain_index: ki,
                delta_q: config.delta_q,
                link_lengths: chain.link_lengths(),
                termination: None,
                iterations: 0,
                final_distance: None,
                error: None,
            };
            let outcome = scene
                .with_chain(chain.clone())
                .map_err(|e| e.to_string())
                .and_then(|s| plan(&s, config, InterventionPolicy::Halt, &[]).map_err(|e| e.to_string()));
            match outcome {
                Ok(out) => {
                    cell.termination = Some(out.termination());
                    cell.iterations = out.trace.len() - 1;
                    cell.final_distance = out.trace.final_distance();
                }
                Err(e) => cell.error = Some(e),
            }
            cell
        })
        .collect();
    AccessibilityReport {
        n: cells.iter().filter(|c| c.solved()).count(),
        cells,
    }
}
