use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use ergoreach_core::planner::{ConfigChange, PlannerError, Snapshot};
use ergoreach_core::scene_io::{fingerprint, fixture, parse_scene_document, SceneDocument, SceneError, TraceDocument};
use ergoreach_core::{EventKind, Intervention, InterventionPolicy, PlanEvent, PlannerConfig, PlannerState, Status};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::ServiceError;

pub const MAX_SESSIONS: usize = 64;
pub const IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
/// Messages buffered per subscriber before it is dropped as too slow.
pub const STREAM_BUFFER: usize = 4096;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_sessions: usize,
    pub idle_timeout: Duration,
    pub stream_buffer: usize,
    /// Directory searched for `<name>.json` when a request names a fixture.
    /// Without one the built-in fixtures are used.
    pub fixtures_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_sessions: MAX_SESSIONS,
            idle_timeout: IDLE_TIMEOUT,
            stream_buffer: STREAM_BUFFER,
            fixtures_dir: None,
        }
    }
}

/// Planner settings replacing the scene defaults for one session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revisit_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revisit_epsilon: Option<f64>,
}

impl ConfigOverrides {
    pub fn apply(&self, base: &PlannerConfig) -> PlannerConfig {
        let mut c = base.clone();
        if let Some(v) = self.delta_q {
            c.delta_q = v;
        }
        if let Some(v) = self.goal_tolerance {
            c.goal_tolerance = v;
        }
        if let Some(v) = self.max_iterations {
            c.max_iterations = v;
        }
        if let Some(v) = self.substeps {
            c.substeps = v;
        }
        if let Some(v) = self.revisit_window {
            c.revisit_window = v;
        }
        if self.revisit_epsilon.is_some() {
            c.revisit_epsilon = self.revisit_epsilon;
        }
        c
    }
}

fn default_policy() -> InterventionPolicy {
    InterventionPolicy::External
}

/// Body of `POST /v1/sessions`: an inline scene or a fixture name.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub scene: Option<serde_json::Value>,
    #[serde(default)]
    pub fixture: Option<String>,
    #[serde(default)]
    pub overrides: ConfigOverrides,
    #[serde(default = "default_policy")]
    pub policy: InterventionPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UntilTarget {
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsRequest {
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UntilRequest {
    pub until: UntilTarget,
}

/// Body of `POST /v1/sessions/{id}/advance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdvanceRequest {
    Steps(StepsRequest),
    Until(UntilRequest),
}

impl AdvanceRequest {
    pub fn steps(n: usize) -> Self {
        AdvanceRequest::Steps(StepsRequest { steps: n })
    }

    pub fn until_event() -> Self {
        AdvanceRequest::Until(UntilRequest {
            until: UntilTarget::Event,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    #[serde(flatten)]
    pub snapshot: Snapshot,
    pub trace_length: usize,
    pub event_count: usize,
    pub policy: InterventionPolicy,
    pub scene_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceResponse {
    pub state: SessionSummary,
    pub events: Vec<PlanEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterveneResponse {
    pub state: SessionSummary,
    pub event: PlanEvent,
}

/// One message on a session's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamMessage {
    Summary { state: SessionSummary },
    Event { event: PlanEvent, snapshot: Snapshot },
}

impl StreamMessage {
    /// True once the session can emit nothing further.
    pub fn is_final(&self) -> bool {
        match self {
            StreamMessage::Summary { state } => state.snapshot.status.is_done(),
            StreamMessage::Event { snapshot, .. } => snapshot.status.is_done(),
        }
    }
}

struct Inner {
    planner: PlannerState,
    base_delta_q: f64,
    policy: InterventionPolicy,
    last_activity: Instant,
}

pub struct Session {
    id: String,
    fingerprint: String,
    created: Instant,
    inner: Mutex<Inner>,
    events: broadcast::Sender<StreamMessage>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn created(&self) -> Instant {
        self.created
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        // A panic inside a planner call leaves the state as it was before
        // the call, so a poisoned lock is still usable.
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn summary(&self, inner: &Inner) -> SessionSummary {
        let trace = inner.planner.trace();
        SessionSummary {
            id: self.id.clone(),
            snapshot: inner.planner.snapshot(),
            trace_length: trace.len(),
            event_count: trace.events.len(),
            policy: inner.policy,
            scene_fingerprint: self.fingerprint.clone(),
        }
    }

    fn publish(&self, inner: &Inner, event: &PlanEvent) {
        // No subscribers is not an error.
        let _ = self.events.send(StreamMessage::Event {
            event: event.clone(),
            snapshot: inner.planner.snapshot(),
        });
    }
}

/// Owns every live session.
pub struct SessionManager {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl SessionManager {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Fixture names available to `create` requests.
    pub fn fixture_names(&self) -> Result<Vec<String>, ServiceError> {
        match &self.config.fixtures_dir {
            None => Ok(ergoreach_core::scene_io::FIXTURE_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect()),
            Some(dir) => {
                let mut names = Vec::new();
                let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Io(e.to_string()))?;
                for entry in entries.flatten() {
                    let path = entry.path();
                    if path.extension().is_some_and(|e| e == "json") {
                        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                            names.push(stem.to_string());
                        }
                    }
                }
                names.sort();
                Ok(names)
            }
        }
    }

    fn resolve_fixture(&self, name: &str) -> Result<SceneDocument, ServiceError> {
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_');
        if !valid {
            return Err(ServiceError::UnknownFixture(name.to_string()));
        }
        match &self.config.fixtures_dir {
            None => fixture(name).ok_or_else(|| ServiceError::UnknownFixture(name.to_string())),
            Some(dir) => {
                let path = dir.join(format!("{name}.json"));
                let text =
                    std::fs::read_to_string(&path).map_err(|_| ServiceError::UnknownFixture(name.to_string()))?;
                Ok(parse_scene_document(&text)?)
            }
        }
    }

    pub fn create(&self, request: CreateRequest) -> Result<SessionSummary, ServiceError> {
        let doc = match (request.scene, request.fixture) {
            (Some(scene), None) => parse_scene_document(&scene.to_string())?,
            (None, Some(name)) => self.resolve_fixture(&name)?,
            _ => {
                return Err(ServiceError::BadRequest(
                    "exactly one of `scene` and `fixture` is required".into(),
                ))
            }
        };
        let scene = doc.to_scene()?;
        let config = request.overrides.apply(scene.config());
        self.create_with(scene, config, request.policy)
    }

    pub fn create_with(
        &self,
        scene: ergoreach_core::Scene,
        config: PlannerConfig,
        policy: InterventionPolicy,
    ) -> Result<SessionSummary, ServiceError> {
        let fp = fingerprint(&scene);
        let base_delta_q = config.delta_q;
        let planner = PlannerState::new(Arc::new(scene), config).map_err(ServiceError::from_planner)?;
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        if sessions.len() >= self.config.max_sessions {
            return Err(ServiceError::Capacity(self.config.max_sessions));
        }
        let id = loop {
            let candidate = uuid::Uuid::new_v4().simple().to_string();
            if !sessions.contains_key(&candidate) {
                break candidate;
            }
        };
        let (events, _) = broadcast::channel(self.config.stream_buffer);
        let now = Instant::now();
        let session = Arc::new(Session {
            id: id.clone(),
            fingerprint: fp,
            created: now,
            inner: Mutex::new(Inner {
                planner,
                base_delta_q,
                policy,
                last_activity: now,
            }),
            events,
        });
        let summary = session.summary(&session.lock());
        sessions.insert(id, session);
        Ok(summary)
    }

    pub fn advance(&self, id: &str, request: AdvanceRequest) -> Result<AdvanceResponse, ServiceError> {
        let session = self.get(id)?;
        let mut inner = session.lock();
        inner.last_activity = Instant::now();
        match inner.planner.status() {
            Status::Running => {}
            Status::AwaitingIntervention => {
                return Err(ServiceError::State(
                    "session is awaiting an intervention; POST /intervene first".into(),
                ))
            }
            status => {
                return Err(ServiceError::State(format!(
                    "session finished with {status:?}; export the trace or delete the session"
                )))
            }
        }
        let limit = match request {
            AdvanceRequest::Steps(s) => s.steps,
            AdvanceRequest::Until(_) => usize::MAX,
        };
        let mut emitted = Vec::new();
        while emitted.len() < limit && inner.planner.status() == Status::Running {
            let event = inner.planner.greedy_step().map_err(ServiceError::from_planner)?;
            session.publish(&inner, &event);
            let kind = event.kind;
            emitted.push(event);
            if kind == EventKind::Step {
                continue;
            }
            if kind == EventKind::LocalMinimum {
                let (policy, base) = (inner.policy, inner.base_delta_q);
                if let Some(escalation) = policy
                    .resolve(&mut inner.planner, base)
                    .map_err(ServiceError::from_planner)?
                {
                    session.publish(&inner, &escalation);
                    emitted.push(escalation);
                } else if inner.planner.status().is_done() {
                    // Halted: tell subscribers about the final status.
                    let _ = session.events.send(StreamMessage::Summary {
                        state: session.summary(&inner),
                    });
                }
            }
            break;
        }
        Ok(AdvanceResponse {
            state: session.summary(&inner),
            events: emitted,
        })
    }

    pub fn intervene(&self, id: &str, intervention: Intervention) -> Result<InterveneResponse, ServiceError> {
        let session = self.get(id)?;
        let mut inner = session.lock();
        inner.last_activity = Instant::now();
        let event = inner
            .planner
            .apply_intervention(intervention)
            .map_err(ServiceError::from_planner)?;
        session.publish(&inner, &event);
        Ok(InterveneResponse {
            state: session.summary(&inner),
            event,
        })
    }

    /// Current summary. Does not count as activity.
    pub fn state(&self, id: &str) -> Result<SessionSummary, ServiceError> {
        let session = self.get(id)?;
        let inner = session.lock();
        Ok(session.summary(&inner))
    }

    /// Trace document; `partial` is set while the run is unfinished.
    pub fn trace(&self, id: &str) -> Result<TraceDocument, ServiceError> {
        let session = self.get(id)?;
        let inner = session.lock();
        let planner = &inner.planner;
        Ok(TraceDocument::new(planner.trace(), planner.scene(), planner.status()))
    }

    pub fn config_history(&self, id: &str) -> Result<Vec<ConfigChange>, ServiceError> {
        let session = self.get(id)?;
        let inner = session.lock();
        Ok(inner.planner.trace().config_history.clone())
    }

    /// Summary plus a receiver for everything emitted after it.
    pub fn subscribe(&self, id: &str) -> Result<(SessionSummary, broadcast::Receiver<StreamMessage>), ServiceError> {
        let session = self.get(id)?;
        // Subscribing under the lock means no event falls between the
        // summary and the first streamed message.
        let inner = session.lock();
        let rx = session.events.subscribe();
        Ok((session.summary(&inner), rx))
    }

    pub fn delete(&self, id: &str) -> Result<(), ServiceError> {
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Drops sessions idle for longer than the timeout as of `now`.
    /// Returns the removed ids.
    pub fn reap(&self, now: Instant) -> Vec<String> {
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let stale: Vec<String> = sessions
            .values()
            .filter(|s| {
                let last = s.lock().last_activity;
                now.saturating_duration_since(last) > self.config.idle_timeout
            })
            .map(|s| s.id.clone())
            .collect();
        for id in &stale {
            sessions.remove(id);
        }
        stale
    }
}

impl From<SceneError> for ServiceError {
    fn from(e: SceneError) -> Self {
        ServiceError::Scene(e)
    }
}

pub(crate) fn planner_error_kind(e: &PlannerError) -> &'static str {
    match e {
        PlannerError::NotRunning { .. } => "state",
        PlannerError::PostureCollides(_) => "posture_collides",
        PlannerError::OutOfLimits { .. } => "out_of_limits",
        PlannerError::Capacity { .. } => "capacity",
        _ => "invalid",
    }
}
