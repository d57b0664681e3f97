//! Greedy posture-perturbation planner with local-minimum detection and
//! external intervention.
//!
//! Each step perturbs every joint by one of `{-dq, 0, +dq}`, drops the
//! candidates whose motion collides, and moves to the survivor whose end
//! effector is closest to the goal. Because the step length is fixed between
//! interventions, all postures lie on a lattice and a trapped planner
//! eventually revisits a posture; that revisit (or a stall in distance) is
//! reported as a local minimum and the state parks until someone intervenes
//! or halts it.

use std::sync::Arc;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{motion_collides, Contact, Scene};
use crate::kinematics::{JointLimit, KinematicsError, Posture};

/// Largest chain the full `3^n - 1` neighbourhood is enumerated for.
pub const MAX_CANDIDATE_DOF: usize = 8;

/// Minimum improvement over the revisit window that counts as progress.
pub const STALL_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("cannot enumerate candidates for {dof} joints (limit {MAX_CANDIDATE_DOF})")]
    Capacity { dof: usize },
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("planner is {status:?}, expected {expected}")]
    NotRunning { status: Status, expected: &'static str },
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),
    #[error("posture collides: link {} touches obstacle {}", .0.link, .0.obstacle)]
    PostureCollides(Contact),
    #[error("posture violates the limits of joint {joint}")]
    OutOfLimits { joint: usize },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Step length added to or subtracted from each joint, radians.
    pub delta_q: f64,
    pub goal_tolerance: f64,
    pub max_iterations: usize,
    /// Interpolated postures checked between successive postures.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_revisit_window")]
    pub revisit_window: usize,
    /// Posture equality tolerance (max-norm). Half the active step length
    /// when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revisit_epsilon: Option<f64>,
}

fn default_substeps() -> usize {
    4
}

fn default_revisit_window() -> usize {
    64
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            delta_q: 0.1,
            goal_tolerance: 0.5,
            max_iterations: 10_000,
            substeps: default_substeps(),
            revisit_window: default_revisit_window(),
            revisit_epsilon: None,
        }
    }
}

impl PlannerConfig {
    pub fn with_delta_q(mut self, delta_q: f64) -> Self {
        self.delta_q = delta_q;
        self
    }

    pub fn revisit_epsilon(&self) -> f64 {
        self.revisit_epsilon.unwrap_or(self.delta_q / 2.0)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.to_string()));
        if !(self.delta_q.is_finite() && self.delta_q > 0.0) {
            return bad("delta_q must be positive");
        }
        if !(self.goal_tolerance.is_finite() && self.goal_tolerance > 0.0) {
            return bad("goal_tolerance must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if self.revisit_window == 0 {
            return bad("revisit_window must be at least 1");
        }
        if let Some(eps) = self.revisit_epsilon {
            if !(eps.is_finite() && eps >= 0.0) {
                return bad("revisit_epsilon must be non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Step,
    LocalMinimum,
    InterventionStepLength,
    InterventionPosture,
    GoalReached,
    Exhausted,
    Blocked,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventPayload {
    /// End-effector distance to the goal after the event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posture: Option<Posture>,
    /// Trace index of the posture that was revisited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revisit_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEvent {
    pub kind: EventKind,
    pub iteration: usize,
    /// Index of the current posture in the trace once the event is applied.
    pub trace_index: usize,
    #[serde(default)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigChange {
    pub iteration: usize,
    pub config: PlannerConfig,
}

/// Posture sequence produced by a planning run.
///
/// `postures[0]` is the start posture. Every later entry was appended by a
/// planner move or an injected posture, and the event that appended it
/// carries its index in `trace_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanTrace {
    pub postures: Vec<Posture>,
    pub distances: Vec<f64>,
    pub events: Vec<PlanEvent>,
    pub config_history: Vec<ConfigChange>,
}

impl PlanTrace {
    pub fn len(&self) -> usize {
        self.postures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postures.is_empty()
    }

    pub fn final_distance(&self) -> Option<f64> {
        self.distances.last().copied()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn last_event(&self) -> Option<&PlanEvent> {
        self.events.last()
    }

    /// Walks consecutive posture pairs produced by planner moves, yielding
    /// `(from, to, delta_q active for that move)`. Pairs that end in an
    /// injected posture are skipped.
    pub fn moves(&self) -> Vec<(usize, usize, f64)> {
        let mut delta_q = self
            .config_history
            .first()
            .map(|c| c.config.delta_q)
            .unwrap_or(f64::NAN);
        let mut last = 0;
        let mut out = Vec::new();
        for event in &self.events {
            match event.kind {
                EventKind::InterventionStepLength => {
                    if let Some(dq) = event.payload.delta_q {
                        delta_q = dq;
                    }
                }
                EventKind::InterventionPosture => {}
                _ if event.trace_index == last + 1 => out.push((last, last + 1, delta_q)),
                _ => {}
            }
            last = event.trace_index;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Running,
    AwaitingIntervention,
    DoneSuccess,
    DoneFailure,
}

impl Status {
    pub fn is_done(self) -> bool {
        matches!(self, Status::DoneSuccess | Status::DoneFailure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Intervention {
    StepLength(f64),
    Posture(Posture),
}

/// All `3^n - 1` perturbations of `q` by `{-dq, 0, +dq}` per joint, in
/// lexicographic order (joint 0 most significant, `-` before `0` before `+`),
/// skipping the null move and anything outside the joint limits.
pub fn candidates(q: &Posture, delta_q: f64, limits: &[JointLimit]) -> Result<Vec<Posture>, PlannerError> {
    let n = q.len();
    if n > MAX_CANDIDATE_DOF {
        return Err(PlannerError::Capacity { dof: n });
    }
    if limits.len() != n {
        return Err(KinematicsError::DimensionMismatch {
            expected: limits.len(),
            got: n,
        }
        .into());
    }
    let total = 3usize.pow(n as u32);
    let null = (total - 1) / 2;
    let mut out = Vec::with_capacity(total - 1);
    'outer: for code in 0..total {
        if code == null {
            continue;
        }
        let mut values = q.0.clone();
        let mut rest = code;
        for j in (0..n).rev() {
            let digit = rest % 3;
            rest /= 3;
            let v = q.0[j] + (digit as f64 - 1.0) * delta_q;
            if digit != 1 {
                if !limits[j].contains(v) {
                    continue 'outer;
                }
                values[j] = v;
            }
        }
        out.push(Posture(values));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalMinimum {
    /// The newest posture matches the posture at this slice index.
    Revisit { index: usize },
    /// No distance improvement over the whole window.
    Stall,
}

/// Looks at the newest entry of `postures` / `distances`.
///
/// Fires when that posture matches one of the `revisit_window` postures
/// before it (max-norm within the revisit epsilon), or when the best distance
/// over the last `revisit_window` entries is no better than the distance just
/// before them.
pub fn detect_local_minimum(postures: &[Posture], distances: &[f64], config: &PlannerConfig) -> Option<LocalMinimum> {
    let n = postures.len();
    if n < 2 {
        return None;
    }
    let newest = &postures[n - 1];
    let eps = config.revisit_epsilon();
    let window = config.revisit_window;
    let first = (n - 1).saturating_sub(window);
    if let Some(index) = (first..n - 1).rev().find(|&i| newest.max_abs_diff(&postures[i]) <= eps) {
        return Some(LocalMinimum::Revisit { index });
    }
    if distances.len() == n && n > window {
        let reference = distances[n - 1 - window];
        let best = distances[n - window..].iter().copied().fold(f64::INFINITY, f64::min);
        if reference - best <= STALL_EPS {
            return Some(LocalMinimum::Stall);
        }
    }
    None
}

/// Snapshot of a planner for display and streaming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub status: Status,
    pub posture: Posture,
    pub end_effector: [f64; 3],
    pub distance: f64,
    pub delta_q: f64,
}

/// Single-owner planning state machine.
#[derive(Debug, Clone)]
pub struct PlannerState {
    scene: Arc<Scene>,
    posture: Posture,
    config: PlannerConfig,
    iteration: usize,
    status: Status,
    trace: PlanTrace,
    /// Trace index where revisit detection starts; reset by interventions.
    window_start: usize,
}

impl PlannerState {
    pub fn new(scene: Arc<Scene>, config: PlannerConfig) -> Result<Self, PlannerError> {
        config.validate()?;
        let start = scene.start().clone();
        if let Some(contact) = scene.first_collision(scene.chain(), &start)? {
            return Err(PlannerError::PostureCollides(contact));
        }
        let distance = scene.goal_distance(&start)?;
        Ok(Self {
            posture: start.clone(),
            trace: PlanTrace {
                postures: vec![start],
                distances: vec![distance],
                events: vec![],
                config_history: vec![ConfigChange {
                    iteration: 0,
                    config: config.clone(),
                }],
            },
            scene,
            config,
            iteration: 0,
            status: Status::Running,
            window_start: 0,
        })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn posture(&self) -> &Posture {
        &self.posture
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn trace(&self) -> &PlanTrace {
        &self.trace
    }

    pub fn into_trace(self) -> PlanTrace {
        self.trace
    }

    pub fn distance(&self) -> f64 {
        *self.trace.distances.last().expect("trace holds the start posture")
    }

    pub fn snapshot(&self) -> Snapshot {
        let ee = self
            .scene
            .chain()
            .end_effector(&self.posture)
            .expect("state posture matches the chain");
        Snapshot {
            iteration: self.iteration,
            status: self.status,
            posture: self.posture.clone(),
            end_effector: [ee.x, ee.y, ee.z],
            distance: self.distance(),
            delta_q: self.config.delta_q,
        }
    }

    fn emit(&mut self, kind: EventKind, payload: EventPayload) -> PlanEvent {
        let event = PlanEvent {
            kind,
            iteration: self.iteration,
            trace_index: self.trace.postures.len() - 1,
            payload,
        };
        self.trace.events.push(event.clone());
        event
    }

    fn distance_payload(distance: f64) -> EventPayload {
        EventPayload {
            distance: Some(distance),
            ..Default::default()
        }
    }

    /// Collision-free candidates paired with their goal distance, in
    /// candidate order.
    pub fn surviving_candidates(&self) -> Result<Vec<(Posture, f64)>, PlannerError> {
        let chain = self.scene.chain();
        let mut out = Vec::new();
        for cand in candidates(&self.posture, self.config.delta_q, chain.joint_limits())? {
            if !motion_collides(chain, &self.posture, &cand, &self.scene, self.config.substeps)? {
                let d = self.scene.goal_distance(&cand)?;
                out.push((cand, d));
            }
        }
        Ok(out)
    }

    /// Nearest collision-free candidate; ties go to the earlier candidate.
    fn select(&self) -> Result<Option<(Posture, f64)>, PlannerError> {
        let chain = self.scene.chain();
        let mut ranked: Vec<(Posture, f64)> = candidates(&self.posture, self.config.delta_q, chain.joint_limits())?
            .into_iter()
            .map(|c| {
                let d = self.scene.goal_distance(&c)?;
                Ok((c, d))
            })
            .collect::<Result<_, KinematicsError>>()?;
        // Stable sort keeps candidate order among equal distances, so the
        // first collision-free entry is the filtered minimum.
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        for (cand, d) in ranked {
            if !motion_collides(chain, &self.posture, &cand, &self.scene, self.config.substeps)? {
                return Ok(Some((cand, d)));
            }
        }
        Ok(None)
    }

    /// One iteration of the greedy loop.
    pub fn greedy_step(&mut self) -> Result<PlanEvent, PlannerError> {
        if self.status != Status::Running {
            return Err(PlannerError::NotRunning {
                status: self.status,
                expected: "RUNNING",
            });
        }
        let current = self.distance();
        if current <= self.config.goal_tolerance {
            self.status = Status::DoneSuccess;
            return Ok(self.emit(EventKind::GoalReached, Self::distance_payload(current)));
        }
        if self.iteration >= self.config.max_iterations {
            self.status = Status::DoneFailure;
            return Ok(self.emit(EventKind::Exhausted, Self::distance_payload(current)));
        }
        let Some((next, distance)) = self.select()? else {
            self.status = Status::DoneFailure;
            return Ok(self.emit(EventKind::Blocked, Self::distance_payload(current)));
        };
        self.iteration += 1;
        self.posture = next.clone();
        self.trace.postures.push(next);
        self.trace.distances.push(distance);

        if distance <= self.config.goal_tolerance {
            self.status = Status::DoneSuccess;
            return Ok(self.emit(EventKind::GoalReached, Self::distance_payload(distance)));
        }
        let start = self.window_start;
        match detect_local_minimum(
            &self.trace.postures[start..],
            &self.trace.distances[start..],
            &self.config,
        ) {
            Some(found) => {
                self.status = Status::AwaitingIntervention;
                let revisit_of = match found {
                    LocalMinimum::Revisit { index } => Some(start + index),
                    LocalMinimum::Stall => None,
                };
                Ok(self.emit(
                    EventKind::LocalMinimum,
                    EventPayload {
                        distance: Some(distance),
                        revisit_of,
                        ..Default::default()
                    },
                ))
            }
            None => Ok(self.emit(EventKind::Step, Self::distance_payload(distance))),
        }
    }

    /// Changes the step length or teleports the chain, then resumes.
    /// On error the state is left untouched.
    pub fn apply_intervention(&mut self, intervention: Intervention) -> Result<PlanEvent, PlannerError> {
        if !matches!(self.status, Status::Running | Status::AwaitingIntervention) {
            return Err(PlannerError::NotRunning {
                status: self.status,
                expected: "RUNNING or AWAITING_INTERVENTION",
            });
        }
        let event = match intervention {
            Intervention::StepLength(delta_q) => {
                let config = self.config.clone().with_delta_q(delta_q);
                config
                    .validate()
                    .map_err(|e| PlannerError::InvalidIntervention(e.to_string()))?;
                self.config = config.clone();
                self.trace.config_history.push(ConfigChange {
                    iteration: self.iteration,
                    config,
                });
                self.emit(
                    EventKind::InterventionStepLength,
                    EventPayload {
                        delta_q: Some(delta_q),
                        ..Default::default()
                    },
                )
            }
            Intervention::Posture(q) => {
                let chain = self.scene.chain();
                if q.len() != chain.dof() {
                    return Err(KinematicsError::DimensionMismatch {
                        expected: chain.dof(),
                        got: q.len(),
                    }
                    .into());
                }
                if let Some(joint) =
                    q.0.iter()
                        .zip(chain.joint_limits())
                        .position(|(v, lim)| !(v.is_finite() && lim.contains(*v)))
                {
                    return Err(PlannerError::OutOfLimits { joint });
                }
                if let Some(contact) = self.scene.first_collision(chain, &q)? {
                    return Err(PlannerError::PostureCollides(contact));
                }
                let distance = self.scene.goal_distance(&q)?;
                self.posture = q.clone();
                self.trace.postures.push(q.clone());
                self.trace.distances.push(distance);
                self.emit(
                    EventKind::InterventionPosture,
                    EventPayload {
                        distance: Some(distance),
                        posture: Some(q),
                        ..Default::default()
                    },
                )
            }
        };
        self.window_start = self.trace.postures.len() - 1;
        self.status = Status::Running;
        Ok(event)
    }

    /// Gives up: the run ends as a failure with the trace as it stands.
    pub fn halt(&mut self) -> Result<(), PlannerError> {
        if self.status.is_done() {
            return Err(PlannerError::NotRunning {
                status: self.status,
                expected: "RUNNING or AWAITING_INTERVENTION",
            });
        }
        self.status = Status::DoneFailure;
        Ok(())
    }
}

/// What the planner does by itself when it detects a local minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", deny_unknown_fields)]
pub enum InterventionPolicy {
    /// Stop with a failure.
    Halt,
    /// Multiply the step length by `factor` each time, while it stays within
    /// `cap` times the step length the run started with; then halt.
    AutoEscalate { factor: f64, cap: f64 },
    /// Park in `AWAITING_INTERVENTION` for an operator.
    External,
}

impl InterventionPolicy {
    pub fn auto_escalate() -> Self {
        InterventionPolicy::AutoEscalate { factor: 1.25, cap: 4.0 }
    }

    /// Acts on a state parked on a local minimum. Returns the intervention
    /// event when one was applied. `base_delta_q` is the step length the run
    /// started with.
    pub fn resolve(&self, state: &mut PlannerState, base_delta_q: f64) -> Result<Option<PlanEvent>, PlannerError> {
        if state.status() != Status::AwaitingIntervention {
            return Ok(None);
        }
        match *self {
            InterventionPolicy::Halt => {
                state.halt()?;
                Ok(None)
            }
            InterventionPolicy::AutoEscalate { factor, cap } => {
                let next = state.config().delta_q * factor;
                if next <= cap * base_delta_q * (1.0 + 1e-12) {
                    state.apply_intervention(Intervention::StepLength(next)).map(Some)
                } else {
                    state.halt()?;
                    Ok(None)
                }
            }
            InterventionPolicy::External => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    /// When the k-th (0-based) local minimum of the run is detected.
    LocalMinimum(usize),
    /// Before the step that would start at this iteration.
    Iteration(usize),
}

/// Intervention supplied ahead of time, standing in for an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedIntervention {
    pub trigger: Trigger,
    pub intervention: Intervention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GoalReached,
    LocalMinimum,
    Blocked,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub trace: PlanTrace,
    pub status: Status,
}

impl PlanOutcome {
    /// How the run ended, read off the final event.
    pub fn termination(&self) -> Termination {
        termination_of(&self.trace)
    }
}

pub fn termination_of(trace: &PlanTrace) -> Termination {
    match trace.events.iter().rev().find(|e| {
        !matches!(
            e.kind,
            EventKind::InterventionPosture | EventKind::InterventionStepLength
        )
    }) {
        Some(e) => match e.kind {
            EventKind::GoalReached => Termination::GoalReached,
            EventKind::Blocked => Termination::Blocked,
            EventKind::Exhausted => Termination::Exhausted,
            _ => Termination::LocalMinimum,
        },
        None => Termination::Exhausted,
    }
}

/// Runs the planner to completion.
///
/// Scripted interventions take precedence over the policy; with
/// [`InterventionPolicy::External`] and no matching script entry the run
/// returns parked on the local minimum.
pub fn plan(
    scene: &Scene,
    config: &PlannerConfig,
    policy: InterventionPolicy,
    script: &[ScriptedIntervention],
) -> Result<PlanOutcome, PlannerError> {
    let mut state = PlannerState::new(Arc::new(scene.clone()), config.clone())?;
    let base_delta_q = config.delta_q;
    let mut minima_seen = 0;
    let mut fired = vec![false; script.len()];
    loop {
        for (entry, done) in script.iter().zip(fired.iter_mut()) {
            if !*done && entry.trigger == Trigger::Iteration(state.iteration()) {
                *done = true;
                state.apply_intervention(entry.intervention.clone())?;
            }
        }
        let event = state.greedy_step()?;
        match event.kind {
            EventKind::Step => continue,
            EventKind::LocalMinimum => {
                let scripted = script
                    .iter()
                    .filter(|s| s.trigger == Trigger::LocalMinimum(minima_seen))
                    .cloned()
                    .collect::<Vec<_>>();
                minima_seen += 1;
                if scripted.is_empty() {
                    policy.resolve(&mut state, base_delta_q)?;
                } else {
                    for entry in scripted {
                        state.apply_intervention(entry.intervention)?;
                    }
                }
                if state.status() != Status::Running {
                    break;
                }
            }
            _ => break,
        }
    }
    let status = state.status();
    Ok(PlanOutcome {
        trace: state.into_trace(),
        status,
    })
}

/// End-effector points along a trace.
pub fn end_effector_path(scene: &Scene, trace: &PlanTrace) -> Result<Vec<Point3<f64>>, PlannerError> {
    trace
        .postures
        .iter()
        .map(|q| scene.chain().end_effector(q).map_err(Into::into))
        .collect()
}
