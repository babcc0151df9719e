use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use prevmix_core::inference::cox_decision_with_power;
use prevmix_core::{
    optimize_curve, presets, ConfigDocument, ConfigFormat, DistributionSpec, Objective,
};
use prevmix_service::{app, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(name: &str) -> ConfigDocument {
    ConfigDocument::load(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs")
            .join(name),
    )
    .unwrap()
}

fn body_of(doc: &ConfigDocument) -> String {
    doc.emit(ConfigFormat::Json).unwrap()
}

async fn call(
    state: AppState,
    method: &str,
    uri: &str,
    body: String,
) -> (StatusCode, axum::http::HeaderMap, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::from(body))
        .unwrap();
    let resp = app(state, &[]).oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, headers, serde_json::from_slice(&bytes).unwrap())
}

async fn post(uri: &str, doc: &ConfigDocument) -> (StatusCode, Value) {
    let (s, _, v) = call(AppState::default(), "POST", uri, body_of(doc)).await;
    (s, v)
}

#[tokio::test]
async fn health_reports_version_and_allows_cross_origin() {
    let (status, headers, body) =
        call(AppState::default(), "GET", "/v1/health", String::new()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(body["schema_version"], "1");
    assert_eq!(headers[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}

#[tokio::test]
async fn preview_grids_match_the_distributions() {
    let mut design = presets::exponential_design(5.0, 0.5);
    design.tau = 20.0 * std::f64::consts::LN_2;
    design.weight = None;
    let doc = ConfigDocument::new(design.clone());
    let (status, body) = post("/v1/preview", &doc).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["schema_version"], "1");
    assert!(body["timing_ms"].as_f64().unwrap() >= 0.0);
    assert_eq!(body["input"], serde_json::to_value(&doc).unwrap());
    let r = &body["result"];
    let t = r["t"].as_array().unwrap();
    assert_eq!(t.len(), 201);
    assert_eq!(t[0].as_f64().unwrap(), 0.0);
    assert!((t[200].as_f64().unwrap() - design.tau).abs() < 1e-12);
    assert!((t[100].as_f64().unwrap() - 10.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((r["survival"][100].as_f64().unwrap() - 0.5).abs() < 1e-12);
    for w in r["weight"].as_array().unwrap() {
        assert!((w.as_f64().unwrap() - 1.0 / design.tau).abs() < 1e-12);
    }
}

#[tokio::test]
async fn waitlist_preview_is_finite_and_monotone() {
    let doc = ConfigDocument::new(presets::waitlist());
    let (status, body) = post("/v1/preview", &doc).await;
    assert_eq!(status, StatusCode::OK);
    let r = &body["result"];
    let t: Vec<f64> = r["t"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let s: Vec<f64> = r["survival"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let h: Vec<f64> = r["arrival"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (k, &x) in t.iter().enumerate() {
        assert!(s[k].is_finite() && h[k].is_finite());
        assert!((s[k] - doc.design.survival.sf(x)).abs() < 1e-15);
        assert!((h[k] - doc.design.arrival.cdf(x)).abs() < 1e-15);
    }
    assert!(s.windows(2).all(|w| w[1] <= w[0]));
    assert!(h.windows(2).all(|w| w[1] >= w[0]));
}

#[tokio::test]
async fn estimation_finds_the_table_optimum() {
    let doc = ConfigDocument::new(presets::exponential_design(10.0, 0.5));
    let (status, body) = post("/v1/optimize/estimation", &doc).await;
    assert_eq!(status, StatusCode::OK);
    let r = &body["result"];
    assert!((r["optimization"]["pi_opt"].as_f64().unwrap() - 0.68).abs() < 0.005);
    // No estimation section: the default comparisons and a 101-point curve.
    let are: Vec<f64> = r["optimization"]["are_table"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["pi"].as_f64().unwrap())
        .collect();
    assert_eq!(are, [0.5, 1.0, 0.0]);
    assert_eq!(r["variance_pi_opt"]["grid"].as_array().unwrap().len(), 101);
    assert_eq!(r["variance_even_mix"]["pi"], 0.5);
}

#[tokio::test]
async fn estimation_handles_skewed_weight() {
    let (status, body) = post("/v1/optimize/estimation", &config("fig2_right_skew.json")).await;
    assert_eq!(status, StatusCode::OK);
    assert!((body["result"]["optimization"]["pi_opt"].as_f64().unwrap() - 0.75).abs() < 0.005);
}

#[tokio::test]
async fn responses_match_library_calls() {
    for name in ["table1_theta5.toml", "fig2_left_skew.toml", "waitlist.toml"] {
        let doc = config(name);
        let (_, body) = post("/v1/optimize/estimation", &doc).await;
        let direct = optimize_curve(&doc.design).unwrap();
        let got = &body["result"]["optimization"];
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(got["pi_opt"].as_f64().unwrap(), direct.pi_opt), "{name}");
        assert!(
            close(got["objective_value"].as_f64().unwrap(), direct.objective_value),
            "{name}"
        );

        let curve = Objective::new(&doc.design)
            .unwrap()
            .variance_curve(direct.pi_opt, &[doc.design.tau]);
        let last = body["result"]["variance_pi_opt"]["values"]
            .as_array()
            .unwrap()
            .last()
            .unwrap()
            .as_f64()
            .unwrap();
        assert!((last - curve.values[0]).abs() <= 1e-12 * curve.values[0].abs());
    }
    let doc = config("waitlist.toml");
    let i = doc.inference.clone().unwrap();
    let direct = cox_decision_with_power(&doc.design, i.effect, i.alpha, i.options()).unwrap();
    let (_, body) = post("/v1/optimize/inference", &doc).await;
    let got: prevmix_core::InferenceDecision =
        serde_json::from_value(body["result"].clone()).unwrap();
    assert_eq!(got, direct);
}

#[tokio::test]
async fn waitlist_inference_prefers_prevalent() {
    let (status, body) = post("/v1/optimize/inference", &config("waitlist.toml")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["result"]["pi_opt"], 0.0);
    assert!(
        body["result"]["b_incident_minus_prevalent"]
            .as_f64()
            .unwrap()
            < 0.0
    );
}

#[tokio::test]
async fn zero_effect_has_power_alpha() {
    let (_, body) = post("/v1/optimize/inference", &config("zero_effect.toml")).await;
    assert!((body["result"]["theoretical_power"].as_f64().unwrap() - 0.05).abs() < 1e-12);
}

#[tokio::test]
async fn no_incident_follow_up_picks_prevalent() {
    let mut doc = config("table1_theta5.toml");
    doc.design.incident_entry = DistributionSpec::PointMass { value: 0.0 };
    let (status, body) = post("/v1/optimize/inference", &doc).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["result"]["pi_opt"], 0.0);
}

#[tokio::test]
async fn infeasible_design_is_unprocessable_with_guidance() {
    let (status, body) = post("/v1/optimize/estimation", &config("infeasible.toml")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["kind"], "infeasible");
    assert!(body["error"]["message"]
        .as_str()
        .unwrap()
        .contains("narrowed"));
}

#[tokio::test]
async fn invalid_payloads_name_their_fields() {
    let mut v = serde_json::to_value(config("table1_theta5.toml")).unwrap();
    v["design"]["theta"] = json!(-1.0);
    v["design"]["survival"] = json!({"family": "exponential", "mean": 0.0});
    let (status, _, body) = call(
        AppState::default(),
        "POST",
        "/v1/optimize/estimation",
        v.to_string(),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let fields: Vec<&str> = body["error"]["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["field"].as_str().unwrap())
        .collect();
    assert_eq!(fields, ["design.theta", "design.survival"]);

    let mut v = serde_json::to_value(config("table1_theta5.toml")).unwrap();
    v["design"]["n"] = json!("many");
    let (status, _, body) = call(AppState::default(), "POST", "/v1/preview", v.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["fields"][0]["field"], "design.n");

    let (status, _, body) = call(AppState::default(), "POST", "/v1/preview", "{".into()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["schema_version"], "1");

    let mut v = serde_json::to_value(config("table1_theta5.toml")).unwrap();
    v["design"]["colour"] = json!("red");
    let (status, _, body) = call(AppState::default(), "POST", "/v1/preview", v.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"]
        .as_str()
        .unwrap()
        .contains("colour"));
}

#[tokio::test]
async fn exceeding_the_budget_asks_for_a_retry() {
    let state = AppState {
        budget: Duration::ZERO,
    };
    let (status, headers, body) = call(
        state,
        "POST",
        "/v1/optimize/estimation",
        body_of(&config("waitlist.toml")),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(headers.contains_key(header::RETRY_AFTER));
    assert_eq!(body["error"]["kind"], "timeout");
    assert_eq!(body["error"]["retry_after_seconds"], 1);
}

#[tokio::test]
async fn responses_do_not_depend_on_request_order() {
    let docs = [
        config("table1_theta5.toml"),
        config("waitlist.toml"),
        config("fig2_right_skew.json"),
    ];
    let run = |order: Vec<usize>| {
        let docs = docs.clone();
        async move {
            let mut out = vec![Value::Null; docs.len()];
            for i in order {
                let (_, mut body) = post("/v1/optimize/estimation", &docs[i]).await;
                body.as_object_mut().unwrap().remove("timing_ms");
                out[i] = body;
            }
            out
        }
    };
    assert_eq!(run(vec![0, 1, 2]).await, run(vec![2, 0, 1]).await);
}
