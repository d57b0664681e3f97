//! Planning sessions over HTTP with a server-sent event feed.
//!
//! Routes:
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/v1/sessions` | `{"scene": {..}}` or `{"fixture": name}`, plus optional `overrides`, `policy` |
//! | POST | `/v1/sessions/{id}/advance` | `{"steps": n}` or `{"until": "event"}` |
//! | POST | `/v1/sessions/{id}/intervene` | `{"step_length": x}` or `{"posture": [..]}` |
//! | GET | `/v1/sessions/{id}` | |
//! | GET | `/v1/sessions/{id}/events` | |
//! | GET | `/v1/sessions/{id}/trace` | |
//! | DELETE | `/v1/sessions/{id}` | |
//! | GET | `/v1/fixtures` | |
//!
//! The event feed opens with a `summary` message and then carries one
//! `event` message per planner event, each with a snapshot of the state
//! right after it.

pub mod error;
pub mod http;
pub mod session;

pub use error::ServiceError;
pub use http::{router, serve, serve_on, serve_until};
pub use session::{
    AdvanceRequest, AdvanceResponse, ConfigOverrides, CreateRequest, InterveneResponse, ServiceConfig, SessionManager,
    SessionSummary, StreamMessage,
};
