use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use muprocl_core::agent::{
    generate_candidates, AgentKind, AgentSpec, CandidateKind, HttpAgent, SelectConfig,
};

struct Captured {
    request_line: String,
    headers: Vec<String>,
    body: String,
}

/// Serves one canned chat-completions reply per connection and reports what
/// it received.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut len = 0usize;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end().to_string();
                if h.is_empty() {
                    break;
                }
                if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(h);
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(buf).unwrap(),
            })
            .unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn spec(endpoint: &str) -> AgentSpec {
    AgentSpec {
        kind: AgentKind::Http,
        endpoint: Some(endpoint.to_string()),
        model: Some("test-model".into()),
        timeout_secs: 5,
        ..AgentSpec::stub(0)
    }
}

const CRANE_REPLY: &str = r#"```json
[{"text": "crane (bird)", "sense": "bird", "visual": true},
 {"text": "crane (construction equipment)", "sense": "construction equipment", "visual": true},
 {"text": "crane (neck movement)", "sense": "neck movement", "visual": false},
 {"text": "a photo of a crane", "sense": null, "visual": true}]
```"#;

#[test]
fn posts_chat_request_and_parses_candidates() {
    let (endpoint, rx) = serve(vec![(200, chat(CRANE_REPLY))]);
    let agent = HttpAgent::from_spec(&spec(&endpoint)).unwrap();
    let cands = generate_candidates(&agent, 3, "crane", &SelectConfig::default()).unwrap();

    let req = rx.recv().unwrap();
    assert_eq!(req.request_line, "POST /v1/chat/completions HTTP/1.1");
    let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
    assert_eq!(body["model"], "test-model");
    let messages = body["messages"].as_array().unwrap();
    assert_eq!(messages[0]["role"], "system");
    assert!(messages[1]["content"].as_str().unwrap().contains("crane"));
    assert!(!req.headers.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization")));

    let texts: Vec<&str> = cands.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(
        texts,
        [
            "crane",
            "crane (bird)",
            "crane (construction equipment)",
            "crane (neck movement)",
            "a photo of a crane"
        ]
    );
    assert_eq!(cands[0].kind, CandidateKind::Bare);
    assert_eq!(cands[1].kind, CandidateKind::Disambiguation);
    assert!(!cands[3].visual);
    assert_eq!(cands[4].kind, CandidateKind::Expansion);
    assert!(cands.iter().all(|c| c.class_id == 3));
}

#[test]
fn disabled_flags_drop_reply_items() {
    let (endpoint, rx) = serve(vec![(200, chat(CRANE_REPLY))]);
    let agent = HttpAgent::from_spec(&spec(&endpoint)).unwrap();
    let cfg = SelectConfig {
        disambiguation_enabled: false,
        ..SelectConfig::default()
    };
    let cands = generate_candidates(&agent, 0, "crane", &cfg).unwrap();
    let req = rx.recv().unwrap();
    assert!(req.body.contains("Disambiguation: off"));
    let texts: Vec<&str> = cands.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, ["crane", "a photo of a crane"]);
}

#[test]
fn both_flags_off_makes_no_request() {
    // No server: a request would fail to connect.
    let agent = HttpAgent::from_spec(&spec("http://127.0.0.1:9")).unwrap();
    let cfg = SelectConfig {
        disambiguation_enabled: false,
        expansion_enabled: false,
        ..SelectConfig::default()
    };
    let cands = generate_candidates(&agent, 0, "crane", &cfg).unwrap();
    assert_eq!(cands.len(), 1);
    assert_eq!(cands[0].kind, CandidateKind::Bare);
}

#[test]
fn api_key_is_sent_as_bearer_token() {
    std::env::set_var("MUPROCL_TEST_HTTP_KEY", "sekrit");
    let (endpoint, rx) = serve(vec![(200, chat("[]"))]);
    let agent = HttpAgent::from_spec(&AgentSpec {
        api_key_env: Some("MUPROCL_TEST_HTTP_KEY".into()),
        ..spec(&endpoint)
    })
    .unwrap();
    let cands = generate_candidates(&agent, 0, "apple", &SelectConfig::default()).unwrap();
    assert_eq!(cands.len(), 1);
    let req = rx.recv().unwrap();
    assert!(req
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer sekrit")));
}

#[test]
fn missing_api_key_variable_is_an_error() {
    let err = HttpAgent::from_spec(&AgentSpec {
        api_key_env: Some("MUPROCL_TEST_UNSET_VARIABLE".into()),
        ..spec("http://127.0.0.1:9")
    })
    .unwrap_err();
    assert!(err.to_string().contains("MUPROCL_TEST_UNSET_VARIABLE"));
}

#[test]
fn server_errors_and_bad_replies_are_reported() {
    let (endpoint, _rx) = serve(vec![
        (500, "{\"error\": \"boom\"}".into()),
        (200, chat("Sure! Here are some prompts.")),
        (200, "{\"choices\": []}".into()),
    ]);
    let agent = HttpAgent::from_spec(&spec(&endpoint)).unwrap();
    let cfg = SelectConfig::default();
    let e1 = generate_candidates(&agent, 0, "crane", &cfg).unwrap_err().to_string();
    assert!(e1.contains("500"), "{e1}");
    let e2 = generate_candidates(&agent, 0, "crane", &cfg).unwrap_err().to_string();
    assert!(e2.contains("JSON array"), "{e2}");
    let e3 = generate_candidates(&agent, 0, "crane", &cfg).unwrap_err().to_string();
    assert!(e3.contains("no choices"), "{e3}");
}
