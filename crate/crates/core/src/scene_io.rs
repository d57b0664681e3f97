//! JSON documents for scenes and traces, content fingerprints, and the
//! bundled fixture scenes.
//!
//! Documents are strict: unknown keys are rejected and `version` must be 1.
//! Fingerprints are SHA-256 digests of the canonical form produced by
//! [`canonical_json`] (sorted keys, floats printed with a fixed number of
//! significant digits).

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Isometry3, Point2, Point3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{GeometryError, Polygon, Scene, TriMesh};
use crate::kinematics::{DhRow, JointLimit, KinematicChain, KinematicsError, Posture};
use crate::planner::{ConfigChange, PlanEvent, PlanTrace, PlannerConfig, Status};

pub const FORMAT_VERSION: u32 = 1;

/// Capsule radius given to spatial links when a document omits it.
pub const DEFAULT_SPATIAL_RADIUS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported document version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("start posture collides: link {link} touches obstacle {obstacle}")]
    StartCollides { link: usize, obstacle: usize },
    #[error("trace was recorded for scene {expected}, not {actual}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("trace posture {index} collides: link {link} touches obstacle {obstacle}")]
    ReplayCollision { index: usize, link: usize, obstacle: usize },
}

impl From<serde_json::Error> for SceneError {
    fn from(e: serde_json::Error) -> Self {
        SceneError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

fn from_kinematics(e: KinematicsError, prefix: &str) -> SceneError {
    match e {
        KinematicsError::InvalidChain { field, reason } => invalid(format!("{prefix}.{field}"), reason),
        other => invalid(prefix, other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDocument {
    pub translation: [f64; 3],
    /// Unit quaternion `[x, y, z, w]`.
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDocument {
    pub joints: Vec<DhRow>,
    pub tool: DhRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_limits: Option<Vec<JointLimit>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_radius: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseDocument>,
    pub planar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshDocument {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstaclesDocument {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub polygons: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub meshes: Vec<MeshDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub chain: ChainDocument,
    #[serde(default)]
    pub obstacles: ObstaclesDocument,
    pub start: Vec<f64>,
    /// Two coordinates for planar scenes, three otherwise.
    pub goal: Vec<f64>,
    #[serde(default)]
    pub planner: PlannerConfig,
}

impl ChainDocument {
    pub fn from_chain(chain: &KinematicChain) -> Self {
        let base = chain.base();
        let base = (*base != Isometry3::identity()).then(|| {
            let t = base.translation.vector;
            let q = base.rotation.quaternion().coords;
            BaseDocument {
                translation: [t.x, t.y, t.z],
                rotation: [q.x, q.y, q.z, q.w],
            }
        });
        Self {
            joints: chain.joints().to_vec(),
            tool: *chain.tool(),
            joint_limits: Some(chain.joint_limits().to_vec()),
            link_radius: Some(chain.link_radius().to_vec()),
            base,
            planar: chain.is_planar(),
        }
    }

    pub fn to_chain(&self) -> Result<KinematicChain, SceneError> {
        let n = self.joints.len();
        let limits = self
            .joint_limits
            .clone()
            .unwrap_or_else(|| vec![JointLimit::default(); n]);
        let default_radius = if self.planar { 0.0 } else { DEFAULT_SPATIAL_RADIUS };
        let radius = self.link_radius.clone().unwrap_or_else(|| vec![default_radius; n]);
        let base = match &self.base {
            None => Isometry3::identity(),
            Some(b) => {
                let [x, y, z, w] = b.rotation;
                let q = Quaternion::new(w, x, y, z);
                if !(q.coords.iter().all(|c| c.is_finite()) && (q.norm() - 1.0).abs() < 1e-9) {
                    return Err(invalid("chain.base.rotation", "expected a unit quaternion"));
                }
                if !b.translation.iter().all(|c| c.is_finite()) {
                    return Err(invalid("chain.base.translation", "coordinates must be finite"));
                }
                Isometry3::from_parts(
                    Translation3::new(b.translation[0], b.translation[1], b.translation[2]),
                    UnitQuaternion::new_unchecked(q),
                )
            }
        };
        KinematicChain::new(self.joints.clone(), self.tool, limits, radius, base, self.planar)
            .map_err(|e| from_kinematics(e, "chain"))
    }
}

impl SceneDocument {
    pub fn from_scene(scene: &Scene) -> Self {
        let planar = scene.chain().is_planar();
        let goal = scene.goal();
        Self {
            version: FORMAT_VERSION,
            name: None,
            chain: ChainDocument::from_chain(scene.chain()),
            obstacles: ObstaclesDocument {
                polygons: scene
                    .obstacles2d()
                    .iter()
                    .map(|p| p.vertices().iter().map(|v| [v.x, v.y]).collect())
                    .collect(),
                meshes: scene
                    .obstacles3d()
                    .iter()
                    .map(|m| MeshDocument {
                        vertices: m.vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
                        triangles: m.triangles().to_vec(),
                    })
                    .collect(),
            },
            start: scene.start().0.clone(),
            goal: if planar {
                vec![goal.x, goal.y]
            } else {
                vec![goal.x, goal.y, goal.z]
            },
            planner: scene.config().clone(),
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn to_scene(&self) -> Result<Scene, SceneError> {
        if self.version != FORMAT_VERSION {
            return Err(SceneError::Version(self.version));
        }
        let chain = self.chain.to_chain()?;
        let mut polygons = Vec::with_capacity(self.obstacles.polygons.len());
        for (i, vertices) in self.obstacles.polygons.iter().enumerate() {
            let poly = Polygon::new(vertices.iter().map(|v| Point2::new(v[0], v[1])).collect())
                .map_err(|e| obstacle_error(e, &format!("obstacles.polygons[{i}]")))?;
            polygons.push(poly);
        }
        let mut meshes = Vec::with_capacity(self.obstacles.meshes.len());
        for (i, m) in self.obstacles.meshes.iter().enumerate() {
            let mesh = TriMesh::new(
                m.vertices.iter().map(|v| Point3::new(v[0], v[1], v[2])).collect(),
                m.triangles.clone(),
            )
            .map_err(|e| obstacle_error(e, &format!("obstacles.meshes[{i}]")))?;
            meshes.push(mesh);
        }
        let goal = match (chain.is_planar(), self.goal.as_slice()) {
            (true, [x, y]) => Point3::new(*x, *y, 0.0),
            (false, [x, y, z]) => Point3::new(*x, *y, *z),
            (planar, g) => {
                return Err(invalid(
                    "goal",
                    format!("expected {} coordinates, got {}", if planar { 2 } else { 3 }, g.len()),
                ))
            }
        };
        Scene::new(
            chain,
            polygons,
            meshes,
            Posture::new(self.start.clone()),
            goal,
            self.planner.clone(),
        )
        .map_err(|e| match e {
            GeometryError::StartCollides(c) => SceneError::StartCollides {
                link: c.link,
                obstacle: c.obstacle,
            },
            GeometryError::InvalidScene { field, reason } => invalid(field, reason),
            GeometryError::Kinematics(k) => from_kinematics(k, "chain"),
            other => invalid("scene", other.to_string()),
        })
    }
}

fn obstacle_error(e: GeometryError, prefix: &str) -> SceneError {
    match e {
        GeometryError::InvalidObstacle { field, reason } => invalid(format!("{prefix}.{field}"), reason),
        other => invalid(prefix, other.to_string()),
    }
}

/// Parses and validates a scene document.
pub fn load_scene(text: &str) -> Result<Scene, SceneError> {
    parse_scene_document(text)?.to_scene()
}

pub fn parse_scene_document(text: &str) -> Result<SceneDocument, SceneError> {
    Ok(serde_json::from_str(text)?)
}

pub fn save_scene(scene: &Scene) -> String {
    to_pretty(&SceneDocument::from_scene(scene))
}

pub fn save_scene_document(doc: &SceneDocument) -> String {
    to_pretty(doc)
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents always serialize");
    s.push('\n');
    s
}

/// Sorted-key JSON with floats printed to 15 significant digits.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("documents always serialize");
    let mut out = String::new();
    write_canonical(&value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                let f = n.as_f64().expect("json numbers are finite");
                // Normalise negative zero so equal values print identically.
                let f = if f == 0.0 { 0.0 } else { f };
                let _ = write!(out, "{f:.14e}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}

/// Hex SHA-256 of the scene's canonical document.
pub fn fingerprint(scene: &Scene) -> String {
    let canonical = canonical_json(&SceneDocument::from_scene(scene));
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceDocument {
    pub version: u32,
    pub scene_fingerprint: String,
    pub status: Status,
    /// Set when the trace was exported before the run finished.
    #[serde(default)]
    pub partial: bool,
    pub postures: Vec<Posture>,
    pub distances: Vec<f64>,
    pub events: Vec<PlanEvent>,
    pub config_history: Vec<ConfigChange>,
}

impl TraceDocument {
    pub fn new(trace: &PlanTrace, scene: &Scene, status: Status) -> Self {
        Self {
            version: FORMAT_VERSION,
            scene_fingerprint: fingerprint(scene),
            status,
            partial: !status.is_done(),
            postures: trace.postures.clone(),
            distances: trace.distances.clone(),
            events: trace.events.clone(),
            config_history: trace.config_history.clone(),
        }
    }

    pub fn trace(&self) -> PlanTrace {
        PlanTrace {
            postures: self.postures.clone(),
            distances: self.distances.clone(),
            events: self.events.clone(),
            config_history: self.config_history.clone(),
        }
    }

    /// Canonical text used for fingerprints and byte-level comparisons.
    pub fn canonical(&self) -> String {
        canonical_json(self)
    }
}

pub fn save_trace(trace: &PlanTrace, scene: &Scene, status: Status) -> String {
    to_pretty(&TraceDocument::new(trace, scene, status))
}

/// Parses a trace and replays it against `scene`: the fingerprint must match
/// and every posture must be collision-free.
pub fn load_trace(text: &str, scene: &Scene) -> Result<TraceDocument, SceneError> {
    let doc: TraceDocument = serde_json::from_str(text)?;
    if doc.version != FORMAT_VERSION {
        return Err(SceneError::Version(doc.version));
    }
    let actual = fingerprint(scene);
    if doc.scene_fingerprint != actual {
        return Err(SceneError::FingerprintMismatch {
            expected: doc.scene_fingerprint,
            actual,
        });
    }
    if doc.distances.len() != doc.postures.len() {
        return Err(invalid(
            "distances",
            format!("{} distances for {} postures", doc.distances.len(), doc.postures.len()),
        ));
    }
    if doc.postures.is_empty() {
        return Err(invalid("postures", "a trace holds at least the start posture"));
    }
    let chain = scene.chain();
    for (index, q) in doc.postures.iter().enumerate() {
        match scene.first_collision(chain, q) {
            Ok(None) => {}
            Ok(Some(c)) => {
                return Err(SceneError::ReplayCollision {
                    index,
                    link: c.link,
                    obstacle: c.obstacle,
                })
            }
            Err(e) => return Err(invalid(format!("postures[{index}]"), e.to_string())),
        }
    }
    if let Some(i) = doc.events.windows(2).position(|w| w[1].iteration < w[0].iteration) {
        return Err(invalid(
            format!("events[{}]", i + 1),
            "event iterations must be non-decreasing",
        ));
    }
    Ok(doc)
}

/// Fixture names in the order [`canonical_fixtures`] emits them.
pub const FIXTURE_NAMES: [&str; 6] = [
    "free-space-2d",
    "free-space-3d",
    "scara-three-obstacles",
    "scara-trap",
    "arm-concave",
    "walled-goal",
];

/// Link triples of the three planar variants.
pub const SCARA_VARIANTS: [[f64; 3]; 3] = [[20.0, 10.0, 20.0], [20.0, 20.0, 25.0], [20.0, 20.0, 40.0]];

/// Upper arm and forearm of the spatial arm.
pub const ARM_LINKS: [f64; 2] = [40.0, 30.0];

fn planar_chain_doc(lengths: &[f64]) -> ChainDocument {
    ChainDocument::from_chain(&KinematicChain::planar_links(lengths).expect("fixture chain"))
}

fn arm_chain_doc() -> ChainDocument {
    ChainDocument::from_chain(
        &KinematicChain::spatial_arm(ARM_LINKS[0], ARM_LINKS[1], DEFAULT_SPATIAL_RADIUS).expect("fixture chain"),
    )
}

fn doc(
    name: &str,
    chain: ChainDocument,
    obstacles: ObstaclesDocument,
    start: Vec<f64>,
    goal: Vec<f64>,
    planner: PlannerConfig,
) -> SceneDocument {
    SceneDocument {
        version: FORMAT_VERSION,
        name: Some(name.to_string()),
        chain,
        obstacles,
        start,
        goal,
        planner,
    }
}

fn polygons(list: &[&[[f64; 2]]]) -> ObstaclesDocument {
    ObstaclesDocument {
        polygons: list.iter().map(|p| p.to_vec()).collect(),
        meshes: vec![],
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Planar chain in free space reaching up and to the left.
pub fn free_space_2d() -> SceneDocument {
    doc(
        "free-space-2d",
        planar_chain_doc(&SCARA_VARIANTS[0]),
        ObstaclesDocument::default(),
        vec![0.0, 0.0, 0.0],
        vec![-10.0, 35.0],
        PlannerConfig::default(),
    )
}

pub fn free_space_3d() -> SceneDocument {
    doc(
        "free-space-3d",
        arm_chain_doc(),
        ObstaclesDocument::default(),
        vec![0.0, 0.0, 0.0],
        vec![35.175, 54.783, 19.177],
        PlannerConfig::default().with_delta_q(0.05),
    )
}

/// Two triangles and a block between the straight start posture and a goal
/// behind the base.
pub fn scara_three_obstacles() -> SceneDocument {
    let t1 = [[32.0, 29.0], [22.0, 40.0], [13.0, 26.0]];
    let t2 = [[44.0, 13.0], [46.0, 5.0], [50.0, 10.0]];
    let block = rect(-2.0, 42.0, 12.0, 56.0);
    doc(
        "scara-three-obstacles",
        planar_chain_doc(&SCARA_VARIANTS[0]),
        polygons(&[&t1, &t2, &block]),
        vec![0.0, 0.0, 0.0],
        vec![3.0, 31.0],
        PlannerConfig::default(),
    )
}

/// A block between the end effector and the goal that stops the 0.08 rad
/// lattice; the 0.1 rad lattice steps past it.
pub fn scara_trap() -> SceneDocument {
    let t1 = [[15.0, 36.0], [16.0, 42.0], [9.0, 41.0]];
    let t2 = [[-43.0, 40.0], [-52.0, 31.0], [-41.0, 27.0]];
    let block = rect(-3.0, 28.0, 11.0, 39.0);
    doc(
        "scara-trap",
        planar_chain_doc(&SCARA_VARIANTS[0]),
        polygons(&[&t1, &t2, &block]),
        vec![0.0, 0.0, 0.0],
        vec![-29.0, 34.0],
        PlannerConfig::default().with_delta_q(0.08),
    )
}

/// Two triangles sharing an edge, opening toward the arm, with the goal
/// behind the shared edge.
pub fn arm_concave() -> SceneDocument {
    let mesh = MeshDocument {
        vertices: vec![
            [33.0, 26.0, 47.0],
            [23.0, -7.0, 47.0],
            [28.0, 9.0, 34.0],
            [41.0, 6.0, 47.0],
        ],
        triangles: vec![[0, 1, 2], [0, 1, 3]],
    };
    doc(
        "arm-concave",
        arm_chain_doc(),
        ObstaclesDocument {
            polygons: vec![],
            meshes: vec![mesh],
        },
        vec![0.0, 0.0, 0.0],
        vec![7.051, 18.137, 64.048],
        PlannerConfig::default().with_delta_q(0.03),
    )
}

/// Goal enclosed by four walls: no posture can reach it.
pub fn walled_goal() -> SceneDocument {
    let (cx, cy) = (-25.0, 25.0);
    let (inner, outer) = (4.0, 6.0);
    let walls = [
        rect(cx - outer, cy + inner, cx + outer, cy + outer),
        rect(cx - outer, cy - outer, cx + outer, cy - inner),
        rect(cx - outer, cy - inner, cx - inner, cy + inner),
        rect(cx + inner, cy - inner, cx + outer, cy + inner),
    ];
    doc(
        "walled-goal",
        planar_chain_doc(&SCARA_VARIANTS[0]),
        ObstaclesDocument {
            polygons: walls.to_vec(),
            meshes: vec![],
        },
        vec![0.0, 0.0, 0.0],
        vec![cx, cy],
        PlannerConfig {
            max_iterations: 2_000,
            ..PlannerConfig::default()
        },
    )
}

/// All bundled scenes, keyed by file stem.
pub fn canonical_fixtures() -> Vec<(&'static str, SceneDocument)> {
    vec![
        (FIXTURE_NAMES[0], free_space_2d()),
        (FIXTURE_NAMES[1], free_space_3d()),
        (FIXTURE_NAMES[2], scara_three_obstacles()),
        (FIXTURE_NAMES[3], scara_trap()),
        (FIXTURE_NAMES[4], arm_concave()),
        (FIXTURE_NAMES[5], walled_goal()),
    ]
}

pub fn fixture(name: &str) -> Option<SceneDocument> {
    canonical_fixtures()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, d)| d)
}

/// Default joint range used by documents that omit limits.
pub const DEFAULT_JOINT_RANGE: [f64; 2] = [-PI, PI];
