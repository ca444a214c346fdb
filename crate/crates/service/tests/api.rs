use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cascade_core::io::{Config, Gender, HistoryStore, UserRecord};
use cascade_core::simulate::default_mixture;
use cascade_core::{simulate_corpus, Cascade, Channel, KernelParams, ShareEvent};
use cascade_service::{router, AppState};

fn ev(id: u64, parent: Option<u64>, degree: u64, time_s: f64, channel: Channel) -> ShareEvent {
    ShareEvent {
        event_id: id,
        parent_id: parent,
        user_id: format!("u{id}"),
        degree,
        channel,
        parent_channel: parent.map(|_| Channel::Moments),
        time_s,
    }
}

fn user(id: &str, gender: Gender, age: Option<u32>, region: Option<&str>, friends: u64) -> (String, UserRecord) {
    (
        id.to_string(),
        UserRecord {
            user_id: id.to_string(),
            gender,
            age,
            region: region.map(str::to_string),
            friend_count: friends,
        },
    )
}

/// Micro-cascade with kernel c = 0.1/min, s0 = 10 min, theta = 1; plus a
/// root-only article and a few simulated ones.
fn state() -> Arc<AppState> {
    let m1b = Cascade::new(
        "m1b",
        1_600_000_000,
        vec![
            ev(0, None, 10, 0.0, Channel::Other),
            ev(1, Some(0), 5, 300.0, Channel::GroupChat),
            ev(2, Some(0), 1500, 480.0, Channel::Moments),
            ev(3, Some(2), 40, 900.0, Channel::PrivateChat),
        ],
        Some(6),
    );
    let lonely = Cascade::new("lonely", 1_600_000_100, vec![ev(0, None, 300, 0.0, Channel::Other)], Some(0));
    let mut corpus = simulate_corpus(4, &default_mixture(), 3).unwrap();
    corpus.push(m1b);
    corpus.push(lonely);
    let users = BTreeMap::from([
        user("u1", Gender::Female, Some(23), Some("Guangdong"), 5),
        user("u2", Gender::Male, Some(41), None, 1500),
        user("u3", Gender::Unknown, None, Some("Beijing"), 40),
    ]);
    let config = Config {
        kernel: KernelParams::new(0.1 / 60.0, 600.0, 1.0, false).unwrap(),
        ..Config::default()
    };
    Arc::new(AppState::new(corpus, users, config, HistoryStore::in_memory()))
}

async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    if status.is_success() || status.is_client_error() {
        assert_eq!(resp.headers()["content-type"], "application/json");
    }
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post(app: &axum::Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

#[tokio::test]
async fn lists_articles() {
    let app = router(state());
    let (s, v) = get(&app, "/articles").await;
    assert_eq!(s, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 6);
    let ids: Vec<&str> = list.iter().map(|a| a["article_id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let m1b = list.iter().find(|a| a["article_id"] == "m1b").unwrap();
    assert_eq!(m1b["observed_size"], 3);
    assert_eq!(m1b["final_size"], 6);
}

#[tokio::test]
async fn prediction_matches_library() {
    let st = state();
    let app = router(st.clone());
    let (s, v) = get(&app, "/articles/m1b/prediction?times=10,20&n_init=140").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["one_day_size"], 3);
    let rows = v["infectiousness"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["time_s"], 600.0);
    // Two reshares by 10 min: effective exposure 10 + 5*0.5 + 1500*0.2.
    assert!((rows[0]["p_t"].as_f64().unwrap() - 2.0 / 312.5).abs() < 1e-12);
    let models = v["models"].as_array().unwrap();
    let tags: Vec<&str> = models.iter().map(|m| m["model"].as_str().unwrap()).collect();
    assert_eq!(tags, ["seismic", "speed_adjusted", "weseer"]);

    let params = cascade_core::io::Config {
        kernel: KernelParams::new(0.1 / 60.0, 600.0, 1.0, false).unwrap(),
        ..Default::default()
    }
    .model_params();
    let c = simulate_free_m1b();
    let lib = cascade_core::weseer_series(&c, &[600.0, 1200.0], &params, 140.0).unwrap();
    assert_eq!(models[2]["points"], serde_json::to_value(&lib).unwrap());
    for pair in models[2]["apes"].as_array().unwrap() {
        let pred = pair["ape1"].as_f64().unwrap();
        assert!(pred == -1.0 || pred >= 0.0);
    }

    let (s, v) = get(&app, "/articles/m1b/prediction?model=speed-only").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["models"].as_array().unwrap().len(), 1);
    assert_eq!(v["models"][0]["points"].as_array().unwrap().len(), st_boundaries());
}

fn st_boundaries() -> usize {
    cascade_core::TimeframeSchedule::default().boundaries_s().len()
}

fn simulate_free_m1b() -> Cascade {
    Cascade::new(
        "m1b",
        1_600_000_000,
        vec![
            ev(0, None, 10, 0.0, Channel::Other),
            ev(1, Some(0), 5, 300.0, Channel::GroupChat),
            ev(2, Some(0), 1500, 480.0, Channel::Moments),
            ev(3, Some(2), 40, 900.0, Channel::PrivateChat),
        ],
        Some(6),
    )
}

#[tokio::test]
async fn root_only_prediction_is_insufficient_data() {
    let app = router(state());
    let (s, v) = get(&app, "/articles/lonely/prediction?model=weseer&times=0,60,1440").await;
    assert_eq!(s, StatusCode::OK);
    for p in v["models"][0]["points"].as_array().unwrap() {
        assert_eq!(p["outcome"]["kind"], "insufficient_data");
    }
    assert!(v["models"][0]["apes"].is_null());
}

#[tokio::test]
async fn bad_requests() {
    let app = router(state());
    for uri in [
        "/articles/m1b/prediction?model=nope",
        "/articles/m1b/prediction?times=10,abc",
        "/articles/m1b/prediction?times=2000",
        "/articles/m1b/prediction?n_init=-3",
        "/articles/m1b/propagation?frame=99",
        "/articles/m1b/propagation?frame=x",
        "/articles/m1b/recommendation?grid=10,-1",
    ] {
        let (s, v) = get(&app, uri).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{uri}: {v}");
        assert_eq!(v["error"], "bad_request");
    }
    let (s, v) = get(&app, "/articles/missing/prediction").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
    let (s, _) = post(&app, "/articles/m1b/whatif", json!({"frame": "zero"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(&app, "/articles/m1b/whatif", json!({"frame": 0, "t": 5000})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = get(&app, "/sessions/bad%20id/history").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn whatif_reports_signs() {
    let app = router(state());
    let (s, v) = post(&app, "/articles/m1b/whatif", json!({"frame": 0, "t": 10})).await;
    assert_eq!(s, StatusCode::OK);
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    let big = entries.iter().find(|e| e["event_id"] == 2).unwrap();
    assert_eq!(big["big_node"], true);
    assert_eq!(big["delete"]["sign"], "+");
    assert_eq!(big["add"]["sign"], "-");
    // Without the big node: p = 1/12.5.
    assert!((big["delete"]["p_adj"].as_f64().unwrap() - 0.08).abs() < 1e-12);

    let (s, v) = post(&app, "/articles/m1b/whatif", json!({"frame": 5, "t": 60})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "insufficient_data");
}

#[tokio::test]
async fn propagation_aggregates() {
    let app = router(state());
    let (s, v) = get(&app, "/articles/m1b/propagation?frame=0").await;
    assert_eq!(s, StatusCode::OK);
    let f = &v["frames"][0];
    assert_eq!(f["shares"], 2);
    assert_eq!(f["channels"]["group_chat"], 1);
    assert_eq!(f["channels"]["moments"], 1);
    assert_eq!(f["channels"]["favorites"], 0);
    assert_eq!(f["big_nodes"], json!([2]));
    assert_eq!(f["small_nodes"], json!([1]));
    assert_eq!(f["portrait"]["age_bands"]["20-29"], 1);
    assert_eq!(f["portrait"]["age_bands"]["40-49"], 1);
    assert_eq!(f["portrait"]["gender"]["f"], 1);
    assert_eq!(f["portrait"]["regions"]["unknown"], 1);

    let (_, v) = get(&app, "/articles/m1b/propagation?frame=1").await;
    let link = &v["frames"][0]["links"][0];
    assert_eq!(link["parent_id"], 2);
    assert_eq!(link["previous_frame"], true);
    assert_eq!(v["frames"][0]["portrait"]["gender"]["unknown"], 1);

    let (_, all) = get(&app, "/articles/m1b/propagation").await;
    assert_eq!(all["frames"].as_array().unwrap().len(), cascade_core::TimeframeSchedule::default().frame_count());
}

#[tokio::test]
async fn recommendation_is_cached_and_deterministic() {
    let app = router(state());
    let uri = "/articles/art-0000/recommendation?grid=10,45,140";
    let (s1, b1) = send(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
    let (s2, b2) = send(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(b1, b2);
    let v: Value = serde_json::from_slice(&b1).unwrap();
    assert_eq!(v["candidates"].as_array().unwrap().len(), 3);
    assert!([10.0, 45.0, 140.0].contains(&v["best"].as_f64().unwrap()));

    let (s, v) = get(&app, "/articles/lonely/recommendation").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "insufficient_data");
}

#[tokio::test]
async fn identical_gets_are_byte_identical() {
    let app1 = router(state());
    let app2 = router(state());
    for uri in [
        "/articles",
        "/articles/art-0001/prediction",
        "/articles/art-0002/propagation",
        "/articles/m1b/prediction?model=weseer&times=5,10,15",
    ] {
        let (_, a) = send(&app1, Request::get(uri).body(Body::empty()).unwrap()).await;
        let (_, b) = send(&app1, Request::get(uri).body(Body::empty()).unwrap()).await;
        let (_, c) = send(&app2, Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(a, b, "{uri}");
        assert_eq!(a, c, "{uri}");
    }
}

#[tokio::test]
async fn history_is_append_only() {
    let app = router(state());
    let (s, v) = get(&app, "/sessions/s1/history").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["entries"], json!([]));
    for (i, n) in [140.0, 45.0, 200.0].into_iter().enumerate() {
        let (s, v) = post(
            &app,
            "/sessions/s1/history",
            json!({"n_init": n, "timestamp": 1200.0, "series_ref": format!("m1b/weseer/{n}")}),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED);
        assert_eq!(v["entries"].as_array().unwrap().len(), i + 1);
    }
    let (_, v) = get(&app, "/sessions/s1/history").await;
    let ns: Vec<f64> = v["entries"].as_array().unwrap().iter().map(|e| e["n_init"].as_f64().unwrap()).collect();
    assert_eq!(ns, [140.0, 45.0, 200.0]);
    let (s, _) = post(&app, "/sessions/s1/history", json!({"n_init": 0.0, "timestamp": 1.0, "series_ref": "x"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (_, other) = get(&app, "/sessions/s2/history").await;
    assert_eq!(other["entries"], json!([]));
}
