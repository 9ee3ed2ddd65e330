//! End-to-end tests: a real gateway talking to a real stub backend over
//! loopback HTTP, driven by a plain blocking client.

use acttext::codec::CodecConfig;
use acttext::policy::RemoteEndpointConfig;
use acttext::prompt::build_system_prompt;
use acttext_gateway::{serve_gateway, serve_stub, GatewayConfig, RunningServer, StubConfig, StubHandle};
use std::sync::Arc;

fn codec() -> CodecConfig {
    CodecConfig::new(2, 2, 1000, vec![(-1.0, 1.0); 2]).unwrap()
}

fn start(
    script: Vec<&str>,
    delay_ms: u64,
    ensemble_n: usize,
    timeout_ms: u64,
) -> (RunningServer, RunningServer, Arc<StubHandle>) {
    let (stub, handle) = serve_stub(StubConfig::new(script, delay_ms), "127.0.0.1:0").unwrap();
    let config = GatewayConfig {
        codec: codec(),
        ensemble_n,
        backend: RemoteEndpointConfig::new(stub.base_url(), "stub-model", timeout_ms),
    };
    let gateway = serve_gateway(config, "127.0.0.1:0").unwrap();
    (gateway, stub, handle)
}

fn act_body(session: &str, timestep: u64) -> serde_json::Value {
    serde_json::json!({
        "session_id": session,
        "instruction": "push the block",
        "state": [0.1, 0.2],
        "timestep": timestep,
    })
}

fn post(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &serde_json::Value,
) -> (u16, serde_json::Value) {
    let response = client.post(url).json(body).send().unwrap();
    let status = response.status().as_u16();
    let value = response.json().unwrap_or(serde_json::Value::Null);
    (status, value)
}

#[test]
fn act_returns_dequantized_first_action() {
    // 250 -> -0.5, 750 -> 0.5 on [-1, 1] with B=1000
    let (gateway, _stub, _h) = start(vec!["250 750 500 500"], 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    let url = format!("{}/act", gateway.base_url());

    let (status, value) = post(&client, &url, &act_body("s1", 0));
    assert_eq!(status, 200);
    assert_eq!(value["parse_ok"], true);
    assert_eq!(value["clamped"], false);
    assert_eq!(value["raw_text"], "250 750 500 500");
    let action = value["action"].as_array().unwrap();
    assert!((action[0].as_f64().unwrap() + 0.5).abs() < 1e-12);
    assert!((action[1].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn ensembling_averages_overlapping_chunks() {
    // chunk A rows: t0 -> (0, 0), t1 -> (0.5, 0.5)
    // chunk B rows: t1 -> (-0.5, -0.5)
    // at t1 the mean of A row 1 and B row 0 is (0, 0)
    let (gateway, _stub, _h) = start(
        vec!["500 500 750 750", "250 250 0 0"],
        0,
        2,
        2_000,
    );
    let client = reqwest::blocking::Client::new();
    let url = format!("{}/act", gateway.base_url());

    let (_, first) = post(&client, &url, &act_body("s1", 0));
    let a0 = first["action"].as_array().unwrap();
    assert!(a0[0].as_f64().unwrap().abs() < 1e-12);

    let (_, second) = post(&client, &url, &act_body("s1", 1));
    let a1 = second["action"].as_array().unwrap();
    assert!(a1[0].as_f64().unwrap().abs() < 1e-12, "mean of +0.5 and -0.5");
    assert!(a1[1].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn garbage_step_holds_previous_action() {
    let (gateway, _stub, _h) = start(
        vec!["250 750 500 500", "no actions here", "0 0 0 0"],
        0,
        2,
        2_000,
    );
    let client = reqwest::blocking::Client::new();
    let url = format!("{}/act", gateway.base_url());

    let (_, first) = post(&client, &url, &act_body("s1", 0));
    assert_eq!(first["parse_ok"], true);

    let (status, second) = post(&client, &url, &act_body("s1", 1));
    assert_eq!(status, 200);
    assert_eq!(second["parse_ok"], false);
    assert_eq!(second["raw_text"], "no actions here");
    assert_eq!(second["action"], first["action"]);

    let (_, third) = post(&client, &url, &act_body("s1", 2));
    assert_eq!(third["parse_ok"], true);
}

#[test]
fn first_step_garbage_returns_zero_action() {
    let (gateway, _stub, _h) = start(vec!["???"], 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    let (status, value) = post(&client, &format!("{}/act", gateway.base_url()), &act_body("s1", 0));
    assert_eq!(status, 200);
    assert_eq!(value["parse_ok"], false);
    assert_eq!(value["action"], serde_json::json!([0.0, 0.0]));
}

#[test]
fn non_increasing_timestep_conflicts() {
    let (gateway, _stub, _h) = start(vec!["0 0 0 0"], 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    let url = format!("{}/act", gateway.base_url());

    let (status, _) = post(&client, &url, &act_body("s1", 5));
    assert_eq!(status, 200);
    let (status, _) = post(&client, &url, &act_body("s1", 5));
    assert_eq!(status, 409);
    let (status, _) = post(&client, &url, &act_body("s1", 4));
    assert_eq!(status, 409);
    let (status, _) = post(&client, &url, &act_body("s1", 6));
    assert_eq!(status, 200);
}

#[test]
fn reset_clears_session_state() {
    let (gateway, _stub, _h) = start(vec!["250 750 500 500"], 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    let act_url = format!("{}/act", gateway.base_url());
    let reset_url = format!("{}/reset", gateway.base_url());

    let (status, _) = post(&client, &act_url, &act_body("s1", 7));
    assert_eq!(status, 200);
    // timestep 0 would conflict without a reset
    let (status, _) = post(&client, &act_url, &act_body("s1", 0));
    assert_eq!(status, 409);

    let (status, value) = post(&client, &reset_url, &serde_json::json!({ "session_id": "s1" }));
    assert_eq!(status, 200);
    assert_eq!(value["existed"], true);

    let (status, value) = post(&client, &act_url, &act_body("s1", 0));
    assert_eq!(status, 200);
    assert_eq!(value["parse_ok"], true);
}

#[test]
fn malformed_requests_get_400() {
    let (gateway, _stub, _h) = start(vec!["0 0 0 0"], 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    let url = format!("{}/act", gateway.base_url());

    let response = client
        .post(&url)
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(response.status().as_u16(), 400);

    // neither images nor state
    let (status, _) = post(
        &client,
        &url,
        &serde_json::json!({ "session_id": "s", "instruction": "x", "timestep": 0 }),
    );
    assert_eq!(status, 400);

    // empty instruction
    let (status, _) = post(
        &client,
        &url,
        &serde_json::json!({ "session_id": "s", "instruction": "  ", "state": [0.0], "timestep": 0 }),
    );
    assert_eq!(status, 400);
}

#[test]
fn interleaved_sessions_never_mix_state() {
    // strict A,B,A,B ordering: session A consumes even script entries
    // (constant 0.8), session B odd entries (constant -0.8); any cross-talk
    // in the ensemble buffers would blend the two constants
    let mut script = Vec::new();
    for _ in 0..20 {
        script.push("900 900 900 900");
        script.push("100 100 100 100");
    }
    let (gateway, _stub, _h) = start(script, 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    let url = format!("{}/act", gateway.base_url());

    for t in 0..20u64 {
        let (status, a) = post(&client, &url, &act_body("session-a", t));
        assert_eq!(status, 200);
        let (status, b) = post(&client, &url, &act_body("session-b", t));
        assert_eq!(status, 200);
        for d in 0..2 {
            assert!((a["action"][d].as_f64().unwrap() - 0.8).abs() < 1e-12, "t={t}");
            assert!((b["action"][d].as_f64().unwrap() + 0.8).abs() < 1e-12, "t={t}");
        }
    }
}

#[test]
fn sustained_garbage_keeps_the_service_alive() {
    let (gateway, _stub, _h) = start(vec!["total nonsense"], 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    let url = format!("{}/act", gateway.base_url());
    for t in 0..1000u64 {
        let (status, value) = post(&client, &url, &act_body("s1", t));
        assert_eq!(status, 200, "t={t}");
        assert_eq!(value["parse_ok"], false);
        assert_eq!(value["action"], serde_json::json!([0.0, 0.0]));
    }
}

#[test]
fn latency_covers_injected_delay() {
    let (gateway, _stub, _h) = start(vec!["0 0 0 0"], 80, 2, 5_000);
    let client = reqwest::blocking::Client::new();
    let (_, value) = post(&client, &format!("{}/act", gateway.base_url()), &act_body("s1", 0));
    assert!(
        value["latency_ms"].as_f64().unwrap() >= 80.0,
        "latency {} < injected 80 ms",
        value["latency_ms"]
    );
}

#[test]
fn backend_slower_than_timeout_yields_503() {
    let (gateway, _stub, _h) = start(vec!["0 0 0 0"], 300, 2, 50);
    let client = reqwest::blocking::Client::new();
    let (status, value) = post(&client, &format!("{}/act", gateway.base_url()), &act_body("s1", 0));
    assert_eq!(status, 503);
    assert!(value["error"].as_str().unwrap().contains("backend"));
}

#[test]
fn transcript_carries_exact_system_prompt_and_images() {
    let (gateway, _stub, handle) = start(vec!["0 0 0 0"], 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    let body = serde_json::json!({
        "session_id": "s1",
        "instruction": "grab the cup",
        "images": ["aGVsbG8="],
        "timestep": 0,
    });
    let (status, _) = post(&client, &format!("{}/act", gateway.base_url()), &body);
    assert_eq!(status, 200);

    let transcript = handle.transcript();
    assert_eq!(transcript.len(), 1);
    let request = &transcript[0];
    assert_eq!(request["model"], "stub-model");
    assert_eq!(request["messages"][0]["role"], "system");
    assert_eq!(
        request["messages"][0]["content"].as_str().unwrap(),
        build_system_prompt(2, 2, 1000)
    );
    assert_eq!(request["messages"][1]["role"], "user");
    assert_eq!(request["messages"][1]["content"][0]["text"], "grab the cup");
    assert_eq!(
        request["messages"][1]["content"][1]["image_url"]["url"],
        "data:image/png;base64,aGVsbG8="
    );
}

#[test]
fn health_endpoint_responds() {
    let (gateway, stub, _h) = start(vec!["0 0 0 0"], 0, 2, 2_000);
    let client = reqwest::blocking::Client::new();
    for base in [gateway.base_url(), stub.base_url()] {
        let response = client.get(format!("{base}/health")).send().unwrap();
        assert_eq!(response.status().as_u16(), 200);
    }
}

#[test]
fn startup_fails_when_backend_is_unreachable() {
    // bind and drop to find a dead port
    let dead = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap()
    };
    let config = GatewayConfig {
        codec: codec(),
        ensemble_n: 2,
        backend: RemoteEndpointConfig::new(format!("http://{dead}"), "m", 500),
    };
    assert!(serve_gateway(config, "127.0.0.1:0").is_err());
}
