//! HTTP backend against a local mock chat-completions server: transport
//! transparency, retries, stop enforcement, and auth failures.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use asyncthink::backends::{
    GenerationRequest, HttpBackend, HttpConfig, PromptSet, ScriptedBackend, StopCondition,
    StreamHandle, TextBackend,
};
use asyncthink::engine::{run_episode, EpisodeConfig};
use asyncthink::protocol::{Role, TagSyntax};

/// Plays each listed behavior for one connection, in order, then repeats the
/// last one. Returns the base URL.
fn spawn_server(behaviors: Vec<ServerBehavior>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let n = hits.fetch_add(1, Ordering::SeqCst);
            let behavior = behaviors
                .get(n)
                .or_else(|| behaviors.last())
                .cloned()
                .unwrap_or(ServerBehavior::CloseEarly);
            // drain the request head and body
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(rest) = lower.strip_prefix("content-length:") {
                    content_length = rest.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; content_length];
            let _ = reader.read_exact(&mut body);

            match behavior {
                ServerBehavior::Stream(chunks) => {
                    let mut response = String::from(
                        "HTTP/1.1 200 OK\r\ncontent-type: text/event-stream\r\nconnection: close\r\n\r\n",
                    );
                    for chunk in &chunks {
                        let delta = serde_json::json!({
                            "choices": [{"delta": {"content": chunk}}]
                        });
                        response.push_str(&format!("data: {}\n\n", delta));
                    }
                    response.push_str("data: [DONE]\n\n");
                    let _ = stream.write_all(response.as_bytes());
                }
                ServerBehavior::CloseEarly => {
                    // chunked body cut off before the terminating chunk, so
                    // the client sees a genuine mid-stream transport failure
                    let payload = b"data: {\"choices\":[{\"delta\":{\"content\":\"partial\"}}]}\n\n";
                    let mut response = format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: text/event-stream\r\ntransfer-encoding: chunked\r\n\r\n{:x}\r\n",
                        payload.len()
                    )
                    .into_bytes();
                    response.extend_from_slice(payload);
                    response.extend_from_slice(b"\r\n");
                    let _ = stream.write_all(&response);
                }
                ServerBehavior::Unauthorized => {
                    let _ = stream.write_all(
                        b"HTTP/1.1 401 Unauthorized\r\ncontent-length: 0\r\nconnection: close\r\n\r\n",
                    );
                }
            }
        }
    });
    format!("http://{}", addr)
}

#[derive(Clone)]
enum ServerBehavior {
    /// 200 + SSE deltas, then [DONE].
    Stream(Vec<String>),
    /// 200 but the connection dies mid-stream.
    CloseEarly,
    Unauthorized,
}

fn http_backend(url: &str) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        endpoint_url: url.to_string(),
        model: "test-model".into(),
        timeout: Duration::from_secs(5),
        retries: 2,
        backoff_base: Duration::from_millis(5),
        ..Default::default()
    })
    .unwrap()
}

fn collect(backend: &dyn TextBackend, request: &GenerationRequest) -> String {
    let mut stream = backend.generate(request).unwrap();
    let mut out = String::new();
    while let Some(chunk) = stream.next_chunk().unwrap() {
        out.push_str(&chunk);
    }
    out
}

#[test]
fn transport_transparency_with_scripted_backend() {
    // the same underlying text through HTTP and through the scripted
    // backend yields identical episode traces, clock stamps included
    let segment1 = "w1 <FORK-1>q</FORK-1> t5 t6 t7 t8 t9 <JOIN-1>";
    let segment2 = "<ANSWER>a1 a2 a3 a4</ANSWER>";
    let worker = "t1 t2 t3 <RETURN>ok</RETURN>";

    let config = EpisodeConfig {
        capacity: 2,
        worker_budget: 64,
        organizer_segment_budget: 64,
        max_total_steps: 512,
        ..Default::default()
    };
    let prompts = PromptSet::default();

    let scripted = ScriptedBackend::new(
        TagSyntax::default(),
        vec![segment1.into(), segment2.into()],
        [((0usize, 1u32), worker.to_string())].into_iter().collect(),
    );
    let scripted_trace = run_episode(&scripted, "q", &config, &prompts).unwrap();

    // the HTTP server answers requests in the engine's request order:
    // organizer segment 1, then the worker (dispatched at the fork close),
    // then the resumed organizer
    let url = spawn_server(vec![
        ServerBehavior::Stream(split_words(segment1)),
        ServerBehavior::Stream(split_words(worker)),
        ServerBehavior::Stream(split_words(segment2)),
    ]);
    let http = http_backend(&url);
    let http_trace = run_episode(&http, "q", &config, &prompts).unwrap();

    assert_eq!(http_trace, scripted_trace);
}

fn split_words(text: &str) -> Vec<String> {
    text.split_inclusive(' ').map(|s| s.to_string()).collect()
}

#[test]
fn stop_condition_cuts_the_stream_client_side() {
    let url = spawn_server(vec![ServerBehavior::Stream(vec![
        "thinking <JO".into(),
        "IN-2> leaked trailing text".into(),
    ])]);
    let backend = http_backend(&url);
    let text = collect(
        &backend,
        &GenerationRequest {
            role: Role::Organizer,
            prompt: "p".into(),
            max_steps: 64,
            stop_conditions: vec![StopCondition::JoinRequest],
            stream_handle: StreamHandle::Organizer { segment: 0 },
        },
    );
    assert_eq!(text, "thinking <JOIN-2>");
}

#[test]
fn mid_stream_failure_retries_and_succeeds() {
    let url = spawn_server(vec![
        ServerBehavior::CloseEarly,
        ServerBehavior::Stream(vec!["recovered <ANSWER>ok</ANSWER>".into()]),
    ]);
    let backend = http_backend(&url);
    let text = collect(
        &backend,
        &GenerationRequest {
            role: Role::Organizer,
            prompt: "p".into(),
            max_steps: 64,
            stop_conditions: vec![StopCondition::AnswerClose],
            stream_handle: StreamHandle::Organizer { segment: 0 },
        },
    );
    assert_eq!(text, "recovered <ANSWER>ok</ANSWER>");
}

#[test]
fn unauthorized_is_an_auth_error() {
    let url = spawn_server(vec![ServerBehavior::Unauthorized]);
    let backend = http_backend(&url);
    let result = backend.generate(&GenerationRequest {
        role: Role::Organizer,
        prompt: "p".into(),
        max_steps: 64,
        stop_conditions: vec![StopCondition::AnswerClose],
        stream_handle: StreamHandle::Organizer { segment: 0 },
    });
    match result {
        Err(asyncthink::backends::BackendError::Auth(_)) => {}
        Err(other) => panic!("expected auth error, got {}", other),
        Ok(_) => panic!("expected auth error"),
    }
}
