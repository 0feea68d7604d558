mod common;

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use common::{MockLlm, Reply};
use forge::client::{ChatClient, ChatMessage, ClientError, Role};

#[tokio::test]
async fn echo_returns_sent_content_in_one_attempt() {
    let mock = MockLlm::echo().await;
    let client = ChatClient::default();
    let ex = client
        .chat_complete(
            &mock.endpoint("m"),
            vec![ChatMessage::user("苗族古歌的主要演唱场合有哪些?")],
        )
        .await
        .unwrap();
    assert_eq!(ex.response_text, "苗族古歌的主要演唱场合有哪些?");
    assert_eq!(ex.attempt_count, 1);
    assert_eq!(ex.request_messages.len(), 1);
    let sent = &mock.requests()[0];
    assert_eq!(sent["model"], "m");
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["messages"][0]["role"], "user");
}

#[tokio::test]
async fn retries_server_errors_then_succeeds() {
    let mock = MockLlm::spawn(|r| match r.index {
        0 => Reply::Status(500, "boom".into()),
        1 => Reply::Status(503, "busy".into()),
        _ => Reply::Text("ok".into()),
    })
    .await;
    let ex = ChatClient::default()
        .chat_complete(&mock.endpoint("m"), vec![ChatMessage::user("q")])
        .await
        .unwrap();
    assert_eq!(ex.attempt_count, 3);
    assert_eq!(ex.response_text, "ok");
}

#[tokio::test]
async fn retries_rate_limits() {
    let mock = MockLlm::spawn(|r| {
        if r.index == 0 {
            Reply::Status(429, "slow down".into())
        } else {
            Reply::Text("ok".into())
        }
    })
    .await;
    let ex = ChatClient::default()
        .chat_complete(&mock.endpoint("m"), vec![ChatMessage::user("q")])
        .await
        .unwrap();
    assert_eq!(ex.attempt_count, 2);
}

#[tokio::test]
async fn auth_failure_is_immediate_with_excerpt() {
    let mock = MockLlm::spawn(|_| Reply::Status(401, r#"{"error":"invalid api key"}"#.into())).await;
    let err = ChatClient::default()
        .chat_complete(&mock.endpoint("m"), vec![ChatMessage::user("q")])
        .await
        .unwrap_err();
    assert_eq!(mock.hits(), 1);
    assert_eq!(err.attempts(), 1);
    match &err {
        ClientError::Protocol {
            status,
            message,
            request_id,
            ..
        } => {
            assert_eq!(*status, Some(401));
            assert!(message.contains("invalid api key"));
            assert!(request_id.starts_with("req-"));
        }
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[tokio::test]
async fn exhausted_retries_is_transport_error() {
    let mock = MockLlm::spawn(|_| Reply::Status(502, "bad gateway".into())).await;
    let mut ep = mock.endpoint("m");
    ep.max_retries = 2;
    let err = ChatClient::default()
        .chat_complete(&ep, vec![ChatMessage::user("q")])
        .await
        .unwrap_err();
    assert!(matches!(err, ClientError::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(mock.hits(), 3);
    assert!(err.request_id().is_some());
}

#[tokio::test]
async fn unreachable_endpoint_is_transport_error() {
    let mut ep = forge::client::EndpointConfig::new(common::dead_base_url().await, "m");
    ep.backoff_base_ms = 1;
    ep.max_retries = 1;
    let err = ChatClient::default()
        .chat_complete(&ep, vec![ChatMessage::user("q")])
        .await
        .unwrap_err();
    assert!(matches!(err, ClientError::Transport { attempts: 2, .. }), "{err:?}");
}

#[tokio::test]
async fn empty_choices_and_garbage_are_protocol_errors() {
    let mock = MockLlm::spawn(|r| {
        if r.index == 0 {
            Reply::Raw(r#"{"choices":[]}"#.into())
        } else {
            Reply::Raw("not json".into())
        }
    })
    .await;
    let client = ChatClient::default();
    for _ in 0..2 {
        let err = client
            .chat_complete(&mock.endpoint("m"), vec![ChatMessage::user("q")])
            .await
            .unwrap_err();
        assert!(matches!(err, ClientError::Protocol { attempts: 1, .. }), "{err:?}");
    }
}

#[tokio::test]
async fn rejects_bad_message_lists() {
    let client = ChatClient::default();
    let ep = forge::client::EndpointConfig::new("http://127.0.0.1:9/v1", "m");
    assert!(matches!(
        client.chat_complete(&ep, vec![]).await,
        Err(ClientError::InvalidRequest(_))
    ));
    let msgs = vec![
        ChatMessage::user("q"),
        ChatMessage {
            role: Role::Assistant,
            content: "a".into(),
        },
    ];
    assert!(matches!(
        client.chat_complete(&ep, msgs).await,
        Err(ClientError::InvalidRequest(_))
    ));
}

#[tokio::test]
async fn deterministic_server_gives_identical_text() {
    let mock = MockLlm::spawn(|r| Reply::Text(format!("答：{}", r.last_user.chars().rev().collect::<String>()))).await;
    let client = ChatClient::default();
    let ep = mock.endpoint("m");
    let mut seen = Vec::new();
    for _ in 0..5 {
        seen.push(
            client
                .chat_complete(&ep, vec![ChatMessage::user("缂丝")])
                .await
                .unwrap()
                .response_text,
        );
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn limiter_caps_in_flight_requests() {
    let mock = MockLlm::spawn_with_delay(std::time::Duration::from_millis(30), |_| Reply::Text("x".into())).await;
    let client = ChatClient::new(2);
    let ep = mock.endpoint("m");
    let calls = (0..10).map(|i| {
        let client = client.clone();
        let ep = ep.clone();
        tokio::spawn(async move { client.chat_complete(&ep, vec![ChatMessage::user(i.to_string())]).await })
    });
    for c in futures::future::join_all(calls).await {
        c.unwrap().unwrap();
    }
    assert_eq!(mock.hits(), 10);
    assert!(mock.peak_in_flight() <= 2, "peak {}", mock.peak_in_flight());
}

#[derive(Clone, Default)]
struct Capture(Arc<Mutex<Vec<u8>>>);

impl Write for Capture {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[tokio::test]
async fn api_key_never_reaches_logs() {
    const KEY: &str = "sk-live-7f3a9c2e1b";
    let capture = Capture::default();
    let writer = capture.clone();
    let subscriber = tracing_subscriber::fmt()
        .with_max_level(tracing::Level::TRACE)
        .with_ansi(false)
        .with_writer(move || writer.clone())
        .finish();
    let _guard = tracing::subscriber::set_default(subscriber);

    let seen_auth = Arc::new(AtomicUsize::new(0));
    let counter = seen_auth.clone();
    let mock = MockLlm::spawn(move |r| {
        if r.authorization.as_deref() == Some(&format!("Bearer {KEY}")) {
            counter.fetch_add(1, Ordering::SeqCst);
        }
        if r.index == 0 {
            Reply::Status(500, "retry me".into())
        } else {
            Reply::Status(403, "forbidden".into())
        }
    })
    .await;
    let mut ep = mock.endpoint("m");
    ep.api_key = Some(KEY.into());
    let err = ChatClient::default()
        .chat_complete(&ep, vec![ChatMessage::user("q")])
        .await
        .unwrap_err();
    tracing::info!(config = ?ep, error = %err, "done");

    assert_eq!(
        seen_auth.load(Ordering::SeqCst),
        2,
        "key must still be sent to the server"
    );
    let logs = String::from_utf8(capture.0.lock().unwrap().clone()).unwrap();
    assert!(logs.contains("request body"), "trace logging not captured:\n{logs}");
    assert!(logs.contains("<redacted>"));
    assert!(!logs.contains(KEY), "key leaked:\n{logs}");
}
