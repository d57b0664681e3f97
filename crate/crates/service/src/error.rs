use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ergoreach_core::planner::PlannerError;
use ergoreach_core::scene_io::SceneError;
use serde::Serialize;
use thiserror::Error;

use crate::session::planner_error_kind;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("session limit of {0} reached")]
    Capacity(usize),
    #[error("{0}")]
    State(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Scene(SceneError),
    #[error(transparent)]
    Planner(PlannerError),
    #[error("fixture directory: {0}")]
    Io(String),
}

impl ServiceError {
    pub(crate) fn from_planner(e: PlannerError) -> Self {
        match e {
            PlannerError::NotRunning { .. } => ServiceError::State(e.to_string()),
            other => ServiceError::Planner(other),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownFixture(_) => StatusCode::NOT_FOUND,
            ServiceError::Capacity(_) => StatusCode::TOO_MANY_REQUESTS,
            ServiceError::State(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Scene(SceneError::Parse { .. }) => StatusCode::BAD_REQUEST,
            ServiceError::Scene(_) | ServiceError::Planner(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let mut body = ErrorBody {
            code: "",
            message: self.to_string(),
            field: None,
            link: None,
            obstacle: None,
            line: None,
            column: None,
        };
        body.code = match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownFixture(_) => "unknown_fixture",
            ServiceError::Capacity(_) => "capacity",
            ServiceError::State(_) => "state",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Io(_) => "io",
            ServiceError::Scene(e) => match e {
                SceneError::Parse { line, column, .. } => {
                    body.line = Some(*line);
                    body.column = Some(*column);
                    "parse"
                }
                SceneError::Invalid { field, .. } => {
                    body.field = Some(field.clone());
                    "invalid_field"
                }
                SceneError::StartCollides { link, obstacle } => {
                    body.link = Some(*link);
                    body.obstacle = Some(*obstacle);
                    "start_collides"
                }
                SceneError::Version(_) => "version",
                _ => "invalid_scene",
            },
            ServiceError::Planner(e) => {
                if let PlannerError::PostureCollides(c) = e {
                    body.link = Some(c.link);
                    body.obstacle = Some(c.obstacle);
                }
                planner_error_kind(e)
            }
        };
        body
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

#[derive(Serialize)]
struct Envelope {
    error: ErrorBody,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(Envelope { error: self.body() })).into_response()
    }
}
