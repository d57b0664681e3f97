//! Trajectory planning and ergonomic evaluation for serial kinematic chains
//! in obstacle-constrained environments.
//!
//! - [`kinematics`]: modified DH chains, forward kinematics, link geometry.
//! - [`geometry`]: polygon and triangle-mesh obstacles, collision predicates.
//! - [`planner`]: greedy posture-perturbation planner with local-minimum
//!   detection and intervention.
//! - [`ergonomics`]: muscle fatigue and recovery, remaining-force index,
//!   static joint loads, accessibility counts.
//! - [`scene_io`]: JSON documents, fingerprints and the bundled fixtures.

pub mod ergonomics;
pub mod geometry;
pub mod kinematics;
pub mod planner;
pub mod scene_io;

pub use geometry::{collides, motion_collides, Contact, Polygon, Scene, TriMesh};
pub use kinematics::{DhRow, JointLimit, KinematicChain, Posture};
pub use planner::{
    plan, EventKind, Intervention, InterventionPolicy, PlanEvent, PlanOutcome, PlanTrace, PlannerConfig, PlannerState,
    ScriptedIntervention, Status, Termination, Trigger,
};
