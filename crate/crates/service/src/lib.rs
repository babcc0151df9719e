//! JSON-over-HTTP facade for the design calculators. Request bodies use the
//! same document schema as the command line configs.

use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prevmix_core::inference::cox_decision_with_power;
use prevmix_core::objective::FixedTimeKernel;
use prevmix_core::optimizer::{optimize_curve_with, optimize_fixed_time_with};
use prevmix_core::{
    cox_criterion, ConfigDocument, DistributionSpec, Error, InferenceDecision, Objective,
    OptimizationResult, VarianceCurve,
};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const SCHEMA_VERSION: &str = "1";

/// Points in the preview grids.
pub const PREVIEW_POINTS: usize = 201;

/// Points in the variance curves when the request gives no grid.
pub const CURVE_POINTS: usize = 101;

pub const DEFAULT_BUDGET: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct AppState {
    /// Wall-time allowed for one optimization.
    pub budget: Duration,
}

impl Default for AppState {
    fn default() -> Self {
        AppState {
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Builds the router. `origins` restricts CORS; empty allows any origin.
pub fn app(state: AppState, origins: &[String]) -> Router {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    let cors = CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/preview", post(preview))
        .route("/v1/optimize/estimation", post(estimation))
        .route("/v1/optimize/inference", post(inference))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_seconds: Option<u64>,
}

#[derive(Debug)]
pub enum ApiError {
    Invalid(Vec<FieldError>),
    Core(Error),
    Timeout(Duration),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => ApiError::Invalid(vec![FieldError {
                field: field_of(&msg),
                message: msg,
            }]),
            other => ApiError::Core(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Invalid(fields) => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    kind: "invalid_request".into(),
                    message: fields
                        .iter()
                        .map(|f| format!("{}: {}", f.field, f.message))
                        .collect::<Vec<_>>()
                        .join("; "),
                    fields,
                    retry_after_seconds: None,
                },
            ),
            ApiError::Core(e) => {
                let (status, kind) = match e {
                    Error::Infeasible(_) => (StatusCode::UNPROCESSABLE_ENTITY, "infeasible"),
                    Error::DegenerateDesign(_) => {
                        (StatusCode::UNPROCESSABLE_ENTITY, "degenerate_design")
                    }
                    Error::UndefinedComparison(_) => {
                        (StatusCode::UNPROCESSABLE_ENTITY, "undefined_comparison")
                    }
                    Error::Untestable(_) => (StatusCode::UNPROCESSABLE_ENTITY, "untestable"),
                    Error::Data(_) | Error::Config(_) => {
                        (StatusCode::BAD_REQUEST, "invalid_request")
                    }
                    Error::Numerical(_) => (StatusCode::INTERNAL_SERVER_ERROR, "numerical"),
                };
                (
                    status,
                    ErrorBody {
                        kind: kind.into(),
                        message: e.to_string(),
                        fields: Vec::new(),
                        retry_after_seconds: None,
                    },
                )
            }
            ApiError::Timeout(budget) => {
                let secs = budget.as_secs().max(1);
                let body = ErrorBody {
                    kind: "timeout".into(),
                    message: format!(
                        "computation exceeded the {} ms budget; retry later or simplify the design",
                        budget.as_millis()
                    ),
                    fields: Vec::new(),
                    retry_after_seconds: Some(secs),
                };
                let mut resp =
                    (StatusCode::SERVICE_UNAVAILABLE, Json(Envelope::error(body))).into_response();
                resp.headers_mut()
                    .insert(header::RETRY_AFTER, HeaderValue::from(secs));
                return resp;
            }
            ApiError::Internal(msg) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    kind: "internal".into(),
                    message: msg,
                    fields: Vec::new(),
                    retry_after_seconds: None,
                },
            ),
        };
        (status, Json(Envelope::error(body))).into_response()
    }
}

/// Every response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<ConfigDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

impl<T> Envelope<T> {
    fn ok(input: ConfigDocument, result: T, started: Instant) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION.into(),
            input: Some(input),
            result: Some(result),
            error: None,
            timing_ms: Some(started.elapsed().as_secs_f64() * 1e3),
        }
    }
}

impl Envelope<()> {
    fn error(body: ErrorBody) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION.into(),
            input: None,
            result: None,
            error: Some(body),
            timing_ms: None,
        }
    }
}

/// Best guess at the field a core validation message refers to.
fn field_of(msg: &str) -> String {
    const FIELDS: [(&str, &str); 12] = [
        ("theta", "design.theta"),
        ("tau", "design.tau"),
        ("n ", "design.n"),
        ("pi_incident", "design.pi_incident"),
        ("survival", "design.survival"),
        ("arrival", "design.arrival"),
        ("incident_entry", "design.incident_entry"),
        ("weight", "design.weight"),
        ("dropout", "design.dropout"),
        ("fixed_time", "estimation.fixed_time"),
        ("alpha", "inference.alpha"),
        ("a point-mass survival", "design.survival"),
    ];
    let msg = msg.strip_prefix("invalid configuration: ").unwrap_or(msg);
    FIELDS
        .iter()
        .find(|(prefix, _)| msg.starts_with(prefix))
        .map_or_else(
            || {
                if msg.contains("log_hr")
                    || msg.contains("predictor_variance")
                    || msg.contains("r_squared")
                {
                    "inference.effect".into()
                } else if msg.contains("proportion") || msg.contains("pi ") {
                    "estimation.comparisons".into()
                } else {
                    "design".into()
                }
            },
            |(_, f)| f.to_string(),
        )
}

fn check(errors: &mut Vec<FieldError>, field: &str, ok: bool, message: impl Into<String>) {
    if !ok {
        errors.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Field-by-field validation, so one response lists every bad field.
pub fn validate(doc: &ConfigDocument) -> Vec<FieldError> {
    let d = &doc.design;
    let mut errors = Vec::new();
    check(
        &mut errors,
        "design.theta",
        d.theta.is_finite() && d.theta > 0.0,
        "must be positive",
    );
    check(
        &mut errors,
        "design.tau",
        d.tau.is_finite() && d.tau > 0.0,
        "must be positive",
    );
    check(&mut errors, "design.n", d.n > 0, "must be at least 1");
    check(
        &mut errors,
        "design.pi_incident",
        (0.0..=1.0).contains(&d.pi_incident),
        "must lie in [0, 1]",
    );
    let specs: [(&str, Option<DistributionSpec>); 5] = [
        ("design.survival", Some(d.survival)),
        ("design.arrival", Some(d.arrival)),
        ("design.incident_entry", Some(d.incident_entry)),
        ("design.weight", d.weight),
        ("design.dropout", d.dropout),
    ];
    for (field, spec) in specs {
        if let Some(Err(e)) = spec.map(|s| s.validate()) {
            errors.push(FieldError {
                field: field.into(),
                message: e.to_string(),
            });
        }
    }
    if let Some(i) = &doc.inference {
        check(
            &mut errors,
            "inference.effect.log_hr",
            i.effect.log_hr.is_finite(),
            "must be finite",
        );
        check(
            &mut errors,
            "inference.effect.predictor_variance",
            i.effect.predictor_variance.is_finite() && i.effect.predictor_variance >= 0.0,
            "must be nonnegative",
        );
        check(
            &mut errors,
            "inference.effect.r_squared",
            (0.0..1.0).contains(&i.effect.r_squared),
            "must lie in [0, 1)",
        );
    }
    if errors.is_empty() {
        if let Err(Error::Config(msg)) = doc.validate() {
            errors.push(FieldError {
                field: field_of(&msg),
                message: msg,
            });
        }
    }
    errors
}

/// Parses and validates a request body.
pub fn parse_request(body: &[u8]) -> Result<ConfigDocument, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    let doc: ConfigDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." {
            "body".to_string()
        } else {
            path
        };
        ApiError::Invalid(vec![FieldError {
            field,
            message: e.into_inner().to_string(),
        }])
    })?;
    let errors = validate(&doc);
    if errors.is_empty() {
        Ok(doc)
    } else {
        Err(ApiError::Invalid(errors))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub schema_version: String,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        schema_version: SCHEMA_VERSION.into(),
    })
}

/// `S(t)`, `H(t)` and `W(t)` on an even grid over `[0, tau]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub t: Vec<f64>,
    /// Survival function of the event time.
    #[serde(with = "prevmix_core::serde_ext::float_vec")]
    pub survival: Vec<f64>,
    /// Distribution function of the prevalent entry time.
    #[serde(with = "prevmix_core::serde_ext::float_vec")]
    pub arrival: Vec<f64>,
    /// Weight density.
    #[serde(with = "prevmix_core::serde_ext::float_vec")]
    pub weight: Vec<f64>,
}

/// `points` evenly spaced values from 0 to exactly `tau`.
fn even_grid(tau: f64, points: usize) -> Vec<f64> {
    let last = points - 1;
    (0..points)
        .map(|k| {
            if k == last {
                tau
            } else {
                tau * k as f64 / last as f64
            }
        })
        .collect()
}

pub fn compute_preview(doc: &ConfigDocument) -> Preview {
    let d = &doc.design;
    let t = even_grid(d.tau, PREVIEW_POINTS);
    let w = d.weight_spec();
    Preview {
        survival: t.iter().map(|&x| d.survival.sf(x)).collect(),
        arrival: t.iter().map(|&x| d.arrival.cdf(x)).collect(),
        weight: t.iter().map(|&x| w.pdf(x)).collect(),
        t,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub optimization: OptimizationResult,
    pub variance_pi_opt: VarianceCurve,
    pub variance_even_mix: VarianceCurve,
}

pub fn compute_estimation(doc: &ConfigDocument) -> prevmix_core::Result<EstimationResult> {
    let section = doc.estimation.clone().unwrap_or_default();
    let objective = Objective::new(&doc.design)?;
    let optimization = match section.fixed_time {
        Some(t) => {
            optimize_fixed_time_with(&objective, t, FixedTimeKernel::Plain, &section.comparisons)?
        }
        None => optimize_curve_with(&objective, &section.comparisons)?,
    };
    let grid = if section.curve_grid.is_empty() {
        even_grid(doc.design.tau, CURVE_POINTS)
    } else {
        section.curve_grid.clone()
    };
    Ok(EstimationResult {
        variance_pi_opt: objective.variance_curve(optimization.pi_opt, &grid),
        variance_even_mix: objective.variance_curve(0.5, &grid),
        optimization,
    })
}

pub fn compute_inference(doc: &ConfigDocument) -> prevmix_core::Result<InferenceDecision> {
    match &doc.inference {
        Some(i) => cox_decision_with_power(&doc.design, i.effect, i.alpha, i.options()),
        None => cox_criterion(&doc.design, Default::default()),
    }
}

/// Runs `f` off the async runtime, giving up after `budget`.
async fn within_budget<T, F>(budget: Duration, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> prevmix_core::Result<T> + Send + 'static,
{
    match tokio::time::timeout(budget, tokio::task::spawn_blocking(f)).await {
        Ok(Ok(result)) => result.map_err(ApiError::from),
        Ok(Err(join)) => Err(ApiError::Internal(format!("worker failed: {join}"))),
        Err(_) => Err(ApiError::Timeout(budget)),
    }
}

async fn preview(body: Bytes) -> Result<Json<Envelope<Preview>>, ApiError> {
    let started = Instant::now();
    let doc = parse_request(&body)?;
    let result = compute_preview(&doc);
    Ok(Json(Envelope::ok(doc, result, started)))
}

async fn estimation(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<Envelope<EstimationResult>>, ApiError> {
    let started = Instant::now();
    let doc = parse_request(&body)?;
    let input = doc.clone();
    let result = within_budget(state.budget, move || compute_estimation(&doc)).await?;
    tracing::debug!(pi_opt = result.optimization.pi_opt, "estimation");
    Ok(Json(Envelope::ok(input, result, started)))
}

async fn inference(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<Envelope<InferenceDecision>>, ApiError> {
    let started = Instant::now();
    let doc = parse_request(&body)?;
    let input = doc.clone();
    let result = within_budget(state.budget, move || compute_inference(&doc)).await?;
    Ok(Json(Envelope::ok(input, result, started)))
}
