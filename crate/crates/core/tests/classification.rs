use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use tabxcheck::classifier::{
    classify_pairs, parse_decision, BackendConfig, ClassifierBackend, ClassifyRequest, Decision, DispatchConfig,
    NoisyBackend, OracleBackend, PromptTemplates, RemoteBackend, RemoteConfig,
};
use tabxcheck::corpus::{generate_corpus, GenConfig, SyntheticCorpus};
use tabxcheck::document::PairId;
use tabxcheck::Error;

fn corpus() -> SyntheticCorpus {
    generate_corpus(&GenConfig {
        n_docs: 4,
        rng_seed: 31,
        ..GenConfig::default()
    })
    .unwrap()
}

fn some_pairs(n: u32, k: usize) -> Vec<PairId> {
    (0..k as u32).map(|x| (x % n, (x * 7 + 1) % n)).filter(|(a, b)| a < b).collect()
}

#[test]
fn noisy_flip_rate_is_close_to_configured() {
    let c = corpus();
    let noisy = NoisyBackend {
        oracle: OracleBackend::new(&c.gold),
        rate: 0.1,
        seed: 3,
    };
    let mut flips = 0;
    let mut total = 0;
    for d in &c.documents {
        let n = d.mentions().len() as u32;
        for a in 0..n {
            for b in a + 1..n.min(a + 40) {
                flips += usize::from(noisy.flips(&d.doc_id, (a, b)));
                total += 1;
            }
        }
    }
    let rate = flips as f64 / total as f64;
    assert!((rate - 0.1).abs() <= 0.02, "{rate} over {total}");
}

#[test]
fn noisy_answers_do_not_depend_on_concurrency() {
    let c = corpus();
    let d = &c.documents[0];
    let backend = BackendConfig::Noisy { rate: 0.3, seed: 5 }.instantiate(&c.gold);
    let pairs = some_pairs(d.mentions().len() as u32, 200);
    let t = PromptTemplates::default();
    let one = classify_pairs(backend.as_ref(), d, &pairs, &t, &DispatchConfig { max_in_flight: 1, ..Default::default() }).unwrap();
    let many = classify_pairs(backend.as_ref(), d, &pairs, &t, &DispatchConfig { max_in_flight: 16, ..Default::default() }).unwrap();
    assert_eq!(one, many);
    assert!(one.iter().zip(&pairs).all(|(v, p)| v.pair == *p));
}

#[test]
fn oracle_decisions_follow_gold() {
    let c = corpus();
    let d = &c.documents[1];
    let gold = c.gold_for(&d.doc_id).unwrap().pairs();
    let mut pairs: Vec<PairId> = gold.iter().copied().take(20).collect();
    pairs.extend(some_pairs(d.mentions().len() as u32, 40));
    let v = classify_pairs(&OracleBackend::new(&c.gold), d, &pairs, &PromptTemplates::default(), &DispatchConfig::default()).unwrap();
    for x in v {
        let expect = if gold.contains(&x.pair) { Decision::Equivalent } else { Decision::NotEquivalent };
        assert_eq!(x.decision, expect);
    }
}

#[test]
fn response_markers() {
    assert_eq!(parse_decision("Yes, they are semantically equivalent."), Decision::Equivalent);
    assert_eq!(parse_decision("No, they are not equivalent."), Decision::NotEquivalent);
    assert_eq!(parse_decision("They are not semantically equivalent."), Decision::NotEquivalent);
    assert_eq!(parse_decision("TRUE"), Decision::Equivalent);
    assert_eq!(parse_decision("I cannot tell."), Decision::Abstain);
    assert_eq!(parse_decision("Yesterday nothing happened"), Decision::Abstain);
}

struct Failing(AtomicUsize);

impl ClassifierBackend for Failing {
    fn classify(&self, _: &ClassifyRequest) -> Result<String, String> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err("down".into())
    }
}

#[test]
fn exhausted_retries_surface_backend_unavailable() {
    let c = corpus();
    let d = &c.documents[0];
    let b = Failing(AtomicUsize::new(0));
    let cfg = DispatchConfig {
        max_in_flight: 2,
        retries: 2,
        backoff_ms: 1,
    };
    let err = classify_pairs(&b, d, &[(0, 1)], &PromptTemplates::default(), &cfg).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable { attempts: 3, .. }), "{err}");
    assert_eq!(b.0.load(Ordering::SeqCst), 3);
}

/// Authorization header and JSON body of each request.
type Seen = Arc<Mutex<Vec<(String, serde_json::Value)>>>;

/// Minimal HTTP server: one request per connection. The first `fail_first`
/// requests get a 500; the rest get a chat-completion body.
fn serve(fail_first: usize) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (k, stream) in listener.incoming().enumerate() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut auth = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = value.trim().to_string(),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let json: serde_json::Value = serde_json::from_slice(&body).unwrap();
            log.lock().unwrap().push((auth, json));
            let (status, payload) = if k < fail_first {
                ("500 Internal Server Error", "{}".to_string())
            } else {
                ("200 OK", r#"{"choices":[{"message":{"role":"assistant","content":"Yes, equivalent."}}]}"#.to_string())
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    (url, seen)
}

#[test]
fn remote_backend_speaks_chat_completions() {
    std::env::set_var("TABXCHECK_TEST_TOKEN", "secret");
    let (url, seen) = serve(1);
    let backend = RemoteBackend::new(RemoteConfig {
        token_env: "TABXCHECK_TEST_TOKEN".into(),
        model: "m1".into(),
        ..RemoteConfig::new(url)
    });
    let c = corpus();
    let d = &c.documents[0];
    let cfg = DispatchConfig {
        max_in_flight: 1,
        retries: 2,
        backoff_ms: 1,
    };
    let v = classify_pairs(&backend, d, &[(0, 1), (2, 3)], &PromptTemplates::default(), &cfg).unwrap();
    assert!(v.iter().all(|x| x.decision == Decision::Equivalent));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    for (auth, body) in seen.iter() {
        assert_eq!(auth, "Bearer secret");
        assert_eq!(body["model"], "m1");
        assert_eq!(body["temperature"], 0);
        let content = body["messages"][0]["content"].as_str().unwrap();
        assert!(content.contains("[NUM]"));
    }
}

#[test]
fn unreachable_remote_fails_cleanly() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let backend = RemoteBackend::new(RemoteConfig::new(url));
    let c = corpus();
    let cfg = DispatchConfig {
        max_in_flight: 1,
        retries: 1,
        backoff_ms: 1,
    };
    let err = classify_pairs(&backend, &c.documents[0], &[(0, 1)], &PromptTemplates::default(), &cfg).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable { .. }));
}

#[test]
fn backend_specs_parse() {
    assert_eq!("oracle".parse::<BackendConfig>().unwrap(), BackendConfig::Oracle);
    assert!(matches!("noisy:0.2".parse::<BackendConfig>().unwrap(), BackendConfig::Noisy { rate, .. } if rate == 0.2));
    assert!(matches!("remote:http://x/y".parse::<BackendConfig>().unwrap(), BackendConfig::Remote(r) if r.url == "http://x/y"));
    assert!("noisy:2".parse::<BackendConfig>().is_err());
    assert!("remote:".parse::<BackendConfig>().is_err());
    assert!("llm".parse::<BackendConfig>().is_err());
}
