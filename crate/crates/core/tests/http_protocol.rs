//! Wire-protocol tests against a loopback mock backend.

use std::time::Duration;

use steer_testkit::{MockResponse, MockServer};

use steer_core::error::Error;
use steer_core::logits::log_softmax;
use steer_core::sources::{
    http_next, HttpBackendConfig, HttpSource, LogitSource, RequestPayload, StepOutput, WireMode,
};
use steer_core::vocab::Vocabulary;
use steer_core::LogitVector;

fn cfg(server: &MockServer) -> HttpBackendConfig {
    HttpBackendConfig {
        endpoint: server.url("/v1/logprobs"),
        mode: WireMode::Full,
        k: 5,
        timeout_ms: 2_000,
        retries: 0,
        auth_token: None,
    }
}

#[test]
fn full_mode_round_trips_payload_exactly() {
    let server = MockServer::json(r#"{"logits":[0.1,0.2]}"#);
    let out = http_next(&cfg(&server), 2, RequestPayload::Tokens(&[0, 1])).unwrap();
    assert_eq!(
        out,
        StepOutput::Full(LogitVector::new(vec![0.1, 0.2]).unwrap())
    );
}

#[test]
fn request_body_carries_tokens_mode_and_k() {
    let server = MockServer::spawn(|req| {
        let body: serde_json::Value = serde_json::from_str(&req.body_str()).unwrap();
        assert_eq!(body["prompt_tokens"], serde_json::json!([3, 1]));
        assert_eq!(body["mode"], "full");
        assert_eq!(body["k"], 5);
        assert!(body.get("prompt_text").is_none());
        MockResponse::json(r#"{"logits":[1.0,2.0,3.0,4.0]}"#)
    });
    http_next(&cfg(&server), 4, RequestPayload::Tokens(&[3, 1])).unwrap();
}

#[test]
fn text_payload_uses_prompt_text_field() {
    let server = MockServer::spawn(|req| {
        let body: serde_json::Value = serde_json::from_str(&req.body_str()).unwrap();
        assert_eq!(body["prompt_text"], "hello there");
        MockResponse::json(r#"{"logits":[0.0,1.0]}"#)
    });
    http_next(&cfg(&server), 2, RequestPayload::Text("hello there")).unwrap();
}

#[test]
fn wrong_topk_count_is_protocol_error() {
    let server = MockServer::json(
        r#"{"topk":[{"id":0,"logprob":-0.1},{"id":1,"logprob":-1.0},
            {"id":2,"logprob":-2.0},{"id":3,"logprob":-3.0}]}"#,
    );
    let mut config = cfg(&server);
    config.mode = WireMode::TopK;
    config.k = 5;
    match http_next(&config, 8, RequestPayload::Tokens(&[])) {
        Err(Error::Protocol { message, .. }) => {
            assert!(message.contains("expected 5"), "message: {message}")
        }
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn topk_entries_are_sorted_descending() {
    let server = MockServer::json(
        r#"{"topk":[{"id":2,"logprob":-2.0},{"id":0,"logprob":-0.5},{"id":1,"logprob":-1.2}]}"#,
    );
    let mut config = cfg(&server);
    config.mode = WireMode::TopK;
    config.k = 3;
    let StepOutput::TopK(topk) = http_next(&config, 4, RequestPayload::Tokens(&[])).unwrap() else {
        panic!("expected top-k output");
    };
    let ids: Vec<u32> = topk.entries().iter().map(|e| e.0).collect();
    assert_eq!(ids, vec![0, 1, 2]);
}

#[test]
fn missing_field_is_protocol_error() {
    let server = MockServer::json(r#"{"something_else": 1}"#);
    match http_next(&cfg(&server), 2, RequestPayload::Tokens(&[])) {
        Err(Error::Protocol { message, .. }) => assert!(message.contains("logits")),
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn wrong_logit_count_is_protocol_error() {
    let server = MockServer::json(r#"{"logits":[0.1,0.2,0.3]}"#);
    assert!(matches!(
        http_next(&cfg(&server), 2, RequestPayload::Tokens(&[])),
        Err(Error::Protocol { .. })
    ));
}

#[test]
fn non_200_status_is_propagated() {
    let server = MockServer::spawn(|_| MockResponse::status(500, r#"{"error":"boom"}"#));
    match http_next(&cfg(&server), 2, RequestPayload::Tokens(&[])) {
        Err(Error::HttpStatus { status, .. }) => assert_eq!(status, 500),
        other => panic!("expected status error, got {other:?}"),
    }
}

#[test]
fn delayed_response_times_out_after_retries() {
    let server = MockServer::spawn(|_| {
        MockResponse::json(r#"{"logits":[0.0,0.0]}"#).with_delay(Duration::from_millis(900))
    });
    let mut config = cfg(&server);
    config.timeout_ms = 120;
    config.retries = 2;
    let started = std::time::Instant::now();
    match http_next(&config, 2, RequestPayload::Tokens(&[])) {
        Err(Error::Timeout { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected timeout, got {other:?}"),
    }
    // Three attempts at ~120ms each, well under the mock delay budget.
    assert!(started.elapsed() >= Duration::from_millis(300));
    assert_eq!(server.hits(), 3);
}

#[test]
fn transport_failure_is_retried() {
    // Nothing listens on the reserved-then-dropped port.
    let dead = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap()
    };
    let config = HttpBackendConfig {
        endpoint: format!("http://{dead}/v1/logprobs"),
        retries: 1,
        timeout_ms: 200,
        ..HttpBackendConfig::new("")
    };
    assert!(matches!(
        http_next(&config, 2, RequestPayload::Tokens(&[])),
        Err(Error::Transport { .. })
    ));
}

#[test]
fn auth_token_is_sent_as_bearer() {
    let server = MockServer::spawn(|req| {
        assert_eq!(req.header("authorization"), Some("Bearer sekrit"));
        MockResponse::json(r#"{"logits":[0.0,0.0]}"#)
    });
    let mut config = cfg(&server);
    config.auth_token = Some("sekrit".into());
    http_next(&config, 2, RequestPayload::Tokens(&[])).unwrap();
}

#[test]
fn http_source_implements_logit_source() {
    let server = MockServer::json(r#"{"logits":[0.5,1.5]}"#);
    let vocab = Vocabulary::new(["x", "y"]).unwrap();
    let source = HttpSource::new(cfg(&server), vocab).unwrap();
    let StepOutput::Full(logits) = source.next_step(&[1, 0]).unwrap() else {
        panic!("expected full output");
    };
    assert_eq!(logits.values(), &[0.5, 1.5]);
    assert_eq!(
        log_softmax(&logits).unwrap().values().len(),
        source.vocabulary().size()
    );
    assert!(source.probe_reachable());
}

#[test]
fn zero_timeout_rejected_up_front() {
    let mut config = HttpBackendConfig::new("http://127.0.0.1:1/x");
    config.timeout_ms = 0;
    assert!(config.validate().is_err());
}

#[test]
fn mid_generation_failure_carries_partial_output() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use steer_core::decode::{steered_generate_tokens, SourceTriple, StopRule};
    use steer_core::logits::SteeringConfig;

    // Serves one full decode step (three backend calls), then turns away.
    let calls = AtomicUsize::new(0);
    let server = MockServer::spawn(move |_| {
        if calls.fetch_add(1, Ordering::SeqCst) < 3 {
            MockResponse::json(r#"{"logits":[0.0,1.0]}"#)
        } else {
            MockResponse::status(500, r#"{"err":"gone"}"#)
        }
    });
    let vocab = Vocabulary::new(["x", "y"]).unwrap();
    let base = HttpSource::new(cfg(&server), vocab.clone()).unwrap();
    let pos = HttpSource::new(cfg(&server), vocab.clone()).unwrap();
    let neg = HttpSource::new(cfg(&server), vocab).unwrap();
    let sources = SourceTriple::new(&base, &pos, &neg);

    let err = steered_generate_tokens(
        &sources,
        &SteeringConfig::default(),
        &[],
        &StopRule::max(4),
        None,
    )
    .unwrap_err();
    match err {
        Error::Generation { partial, source } => {
            assert_eq!(partial.tokens, vec![1]);
            assert_eq!(partial.text, "y");
            assert!(matches!(
                source.root(),
                Error::HttpStatus { status: 500, .. }
            ));
        }
        other => panic!("expected generation error with partial, got {other:?}"),
    }
}
