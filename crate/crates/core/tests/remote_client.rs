use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use bilevel_core::domain::{Tag, Trajectory, TrajectoryEntry};
use bilevel_core::proposer::{llm_request, ContextPolicy, PromptOptions, Proposer, RemoteConfig, RemoteProposer};
use bilevel_core::simulators::{simulate, AuxQuery, TaskInstance, TspInstance};
use bilevel_core::Error;

struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

fn reply(status: u16, body: &str) -> Reply {
    Reply {
        status,
        body: body.to_string(),
        delay: Duration::ZERO,
    }
}

fn choices(texts: &[&str]) -> String {
    let cs: Vec<_> = texts
        .iter()
        .map(|t| serde_json::json!({"message": {"role": "assistant", "content": t}}))
        .collect();
    serde_json::json!({ "choices": cs }).to_string()
}

/// Serves the scripted replies in connection order, each on its own thread, and records
/// each request (headers and body).
fn stub(script: Vec<Reply>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for r in script {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let log = log.clone();
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                log.lock()
                    .unwrap()
                    .push(format!("{head}\n{}", String::from_utf8_lossy(&body)));
                thread::sleep(r.delay);
                let mut s = stream;
                let _ = write!(
                s,
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                r.status,
                r.body.len(),
                r.body
            );
            });
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

fn config(url: &str) -> RemoteConfig {
    let mut c = RemoteConfig::new(url, "toy-model");
    c.api_key_env = String::new();
    c.backoff_ms = 10;
    c.timeout_secs = 5.0;
    c
}

#[test]
fn two_choices_come_back_as_two_texts() {
    let (url, seen) = stub(vec![reply(200, &choices(&["first", "second"]))]);
    let texts = llm_request(&config(&url), "hello", 0.3, 2).unwrap();
    assert_eq!(texts, vec!["first", "second"]);
    let req = seen.lock().unwrap()[0].clone();
    let body: serde_json::Value = serde_json::from_str(req.split("\n\n").last().unwrap()).unwrap();
    assert_eq!(body["model"], "toy-model");
    assert_eq!(body["n"], 2);
    assert_eq!(body["temperature"], 0.3);
    assert_eq!(body["max_tokens"], 2048);
    assert_eq!(body["messages"][0]["content"], "hello");
}

#[test]
fn server_error_is_retried_once() {
    let (url, seen) = stub(vec![reply(500, "oops"), reply(200, &choices(&["ok"]))]);
    assert_eq!(llm_request(&config(&url), "p", 0.5, 1).unwrap(), vec!["ok"]);
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn timeouts_give_up_after_three_attempts() {
    let slow = || Reply {
        status: 200,
        body: choices(&["late"]),
        delay: Duration::from_millis(600),
    };
    let (url, seen) = stub(vec![slow(), slow(), slow()]);
    let mut c = config(&url);
    c.timeout_secs = 0.2;
    match llm_request(&c, "p", 0.5, 1) {
        Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected a transport error, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn auth_rejection_is_not_retried() {
    let (url, seen) = stub(vec![reply(401, "no"), reply(200, &choices(&["x"]))]);
    assert!(matches!(llm_request(&config(&url), "p", 0.5, 1), Err(Error::Auth(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let (url, _) = stub(vec![reply(200, r#"{"nope": 1}"#)]);
    assert!(matches!(
        llm_request(&config(&url), "p", 0.5, 1),
        Err(Error::MalformedResponse(_))
    ));
}

#[test]
fn bearer_token_comes_from_the_environment() {
    let (url, seen) = stub(vec![reply(200, &choices(&["x"]))]);
    let mut c = config(&url);
    c.api_key_env = "BILEVEL_REMOTE_CLIENT_TEST_TOKEN".into();
    std::env::set_var("BILEVEL_REMOTE_CLIENT_TEST_TOKEN", "tok-123");
    llm_request(&c, "p", 0.5, 1).unwrap();
    let req = seen.lock().unwrap()[0].to_ascii_lowercase();
    assert!(req.contains("authorization: bearer tok-123"));
}

#[test]
fn remote_proposer_filters_and_collects_requests() {
    let task = TaskInstance::Tsp(TspInstance::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap());
    let s0 = task.initial_solution();
    let mut traj = Trajectory::new();
    traj.append(TrajectoryEntry::new(
        0,
        s0.clone(),
        simulate(&task, &s0).unwrap(),
        0.7,
        Tag::Explore,
    ))
    .unwrap();
    let (url, seen) = stub(vec![reply(
        200,
        &choices(&[
            "<trace>0,2,1,3</trace>",
            "I think <trace>0,1,2</trace> works",
            "no tags here\nREQUEST distance(1,3)",
            "REQUEST distance(oops)",
        ]),
    )]);
    let mut p = RemoteProposer::new(config(&url), 8, ContextPolicy::FullTrajectory, PromptOptions::default());
    let batch = p.propose(&task, &traj, 0.4).unwrap();
    assert_eq!(batch.candidates.len(), 1);
    assert_eq!(batch.raw_texts.len(), 4);
    assert_eq!(batch.rejected.len(), 3);
    assert!(batch.rejected[0].1.contains("node 3") || batch.rejected[0].1.contains('3'));
    assert_eq!(batch.aux_requests, vec![AuxQuery::PairDistance(1, 3)]);
    assert_eq!(batch.malformed_requests, 1);
    assert!(seen.lock().unwrap()[0].contains("<trace>0,1,2,3</trace>"));
}
