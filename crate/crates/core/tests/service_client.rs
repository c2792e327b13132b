//! The HTTP client, remote prior and remote masked oracle against an
//! in-process fake of the language-model service.

mod common;

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ncgp_core::noise::NoiseConfig;
use ncgp_core::pmi::{render, score_item, LookupOracle, MaskedOracle, RemoteMaskedOracle};
use ncgp_core::prior::{sequence_logprob, word_ids, NGramModel, PriorError, PriorModel, RemotePrior};
use ncgp_core::service::{
    AllMarker, Candidates, ErrorBody, MaskedRequest, MaskedResponse, NextLogprobsRequest, NextLogprobsResponse,
    ServiceClient, ServiceError, SpanTokensRequest, SpanTokensResponse, WIRE_END,
};
use ncgp_core::smc::{Engine, InferenceConfig};
use ncgp_core::toy::ToyWorld;
use serde_json::json;

type Handler = dyn Fn(&str, &str, &str) -> (u16, String) + Send + Sync;

struct Fake {
    url: String,
    log: Arc<Mutex<Vec<(String, String, String)>>>,
}

impl Fake {
    fn start(handler: Box<Handler>) -> Fake {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let seen = log.clone();
        thread::spawn(move || {
            for mut req in server.incoming_requests() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let method = req.method().to_string();
                let path = req.url().to_string();
                let (status, out) = handler(&method, &path, &body);
                seen.lock().unwrap().push((method, path, body));
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let _ = req.respond(tiny_http::Response::from_string(out).with_status_code(status).with_header(header));
            }
        });
        Fake { url, log }
    }

    fn client(&self) -> ServiceClient {
        ServiceClient::new(&self.url, Duration::from_secs(5))
    }

    fn requests(&self) -> Vec<(String, String, String)> {
        self.log.lock().unwrap().clone()
    }
}

/// Serves `/v1/next_logprobs` from an n-gram model.
fn lm_fake(lm: Arc<NGramModel>) -> Fake {
    Fake::start(Box::new(move |_, path, body| {
        if path != "/v1/next_logprobs" {
            return (404, json!({"error": "not found"}).to_string());
        }
        let req: NextLogprobsRequest = serde_json::from_str(body).unwrap();
        let v = lm.vocabulary();
        let prefix: Vec<u32> = req.context.iter().map(|w| v.id(w).unwrap()).collect();
        let dist = lm.next_logprobs(&prefix).unwrap();
        let logprobs = match req.candidates {
            Candidates::List(c) => c
                .iter()
                .map(|w| if w == WIRE_END { dist[v.len()] } else { dist[v.id(w).unwrap() as usize] })
                .collect(),
            Candidates::All(AllMarker::All) => dist,
        };
        (200, serde_json::to_string(&NextLogprobsResponse { logprobs }).unwrap())
    }))
}

fn toy_lm() -> Arc<NGramModel> {
    Arc::new(ToyWorld::bundled().build().unwrap().prior)
}

#[test]
fn next_logprobs_wire_format() {
    let lm = toy_lm();
    let fake = lm_fake(lm.clone());
    let prior = RemotePrior::new(fake.client(), lm.vocab_arc(), vec![]);
    let v = lm.vocabulary();
    let boy = v.id("boy").unwrap();
    prior.next_logprobs(&[boy]).unwrap();
    let reqs = fake.requests();
    assert_eq!(reqs.len(), 1);
    let (method, path, body) = &reqs[0];
    assert_eq!((method.as_str(), path.as_str()), ("POST", "/v1/next_logprobs"));
    let sent: serde_json::Value = serde_json::from_str(body).unwrap();
    let mut expected: Vec<String> = v.words().to_vec();
    expected.push("</s>".into());
    assert_eq!(sent, json!({"context": ["boy"], "candidates": expected}));
}

#[test]
fn remote_prior_matches_backing_model() {
    let lm = toy_lm();
    let fake = lm_fake(lm.clone());
    let prior = RemotePrior::new(fake.client(), lm.vocab_arc(), vec![]);
    let ids = word_ids(lm.vocabulary(), &["boy".into(), "kicked".into(), "the".into(), "ball".into()]).unwrap();
    for t in 0..=ids.len() {
        let a = prior.next_logprobs(&ids[..t]).unwrap();
        let b = lm.next_logprobs(&ids[..t]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    let remote = sequence_logprob(&prior, &ids).unwrap();
    let local = sequence_logprob(lm.as_ref(), &ids).unwrap();
    assert!((remote - local).abs() < 1e-12);
    assert_eq!(prior.context_window(), None);
}

#[test]
fn remote_prior_caches_prefixes() {
    let lm = toy_lm();
    let fake = lm_fake(lm.clone());
    let prior = RemotePrior::new(fake.client(), lm.vocab_arc(), vec![]);
    let boy = lm.vocabulary().id("boy").unwrap();
    for _ in 0..5 {
        prior.logprob(&[boy], boy).unwrap();
    }
    assert_eq!(fake.requests().len(), 1);
}

#[test]
fn prompt_is_prepended_to_context() {
    let lm = toy_lm();
    let fake = lm_fake(lm.clone());
    let prior = RemotePrior::new(fake.client(), lm.vocab_arc(), vec!["boy".into()]);
    let the = lm.vocabulary().id("the").unwrap();
    prior.next_logprobs(&[the]).unwrap();
    let body: serde_json::Value = serde_json::from_str(&fake.requests()[0].2).unwrap();
    assert_eq!(body["context"], json!(["boy", "the"]));
}

#[test]
fn inference_runs_over_remote_prior() {
    let mut world = ToyWorld::bundled();
    world.noise = NoiseConfig::noise_off();
    let m = world.build().unwrap();
    let lm = Arc::new(m.prior);
    let fake = lm_fake(lm.clone());
    let prior = RemotePrior::new(fake.client(), lm.vocab_arc(), vec![]);
    let engine = Engine::new(&prior, &m.noise, InferenceConfig::default()).unwrap();
    let ws: Vec<String> = ["boy", "licked", "the", "ball"].map(String::from).to_vec();
    let out = engine.run("x", &ws, 1).unwrap().summary;
    let ids = word_ids(lm.vocabulary(), &ws).unwrap();
    let lml = sequence_logprob(lm.as_ref(), &ids).unwrap();
    assert!((out.log_marginal_likelihood - lml).abs() < 1e-9);
}

#[test]
fn unnormalized_or_short_responses_are_protocol_errors() {
    let lm = toy_lm();
    let n = lm.vocabulary().len() + 1;
    let fake = Fake::start(Box::new(move |_, _, _| {
        (200, json!({"logprobs": vec![-0.1; n]}).to_string())
    }));
    let prior = RemotePrior::new(fake.client(), lm.vocab_arc(), vec![]);
    assert!(matches!(prior.next_logprobs(&[]), Err(PriorError::Protocol(_))));

    let fake = Fake::start(Box::new(|_, _, _| (200, json!({"logprobs": [0.0]}).to_string())));
    let prior = RemotePrior::new(fake.client(), lm.vocab_arc(), vec![]);
    assert!(matches!(prior.next_logprobs(&[]), Err(PriorError::Protocol(_))));
}

#[test]
fn error_status_carries_body() {
    let fake = Fake::start(Box::new(|_, _, _| {
        let body = ErrorBody {
            error: "unknown word".into(),
            word: Some("zzz".into()),
        };
        (400, serde_json::to_string(&body).unwrap())
    }));
    let err = fake
        .client()
        .next_logprobs(&NextLogprobsRequest {
            context: vec!["zzz".into()],
            candidates: Candidates::All(AllMarker::All),
        })
        .unwrap_err();
    match err {
        ServiceError::Status { status, body, .. } => {
            assert_eq!(status, 400);
            let parsed: ErrorBody = serde_json::from_str(&body).unwrap();
            assert_eq!(parsed.word.as_deref(), Some("zzz"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_json_is_protocol_error() {
    let fake = Fake::start(Box::new(|_, _, _| (200, "not json".into())));
    let err = fake.client().span_tokens("x").unwrap_err();
    assert!(matches!(err, ServiceError::Protocol { .. }));
}

#[test]
fn unreachable_service_is_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = ServiceClient::new(&format!("http://127.0.0.1:{port}"), Duration::from_millis(500));
    assert!(matches!(client.health(), Err(ServiceError::Transport { .. })));
}

#[test]
fn health_and_span_tokens() {
    let fake = Fake::start(Box::new(|method, path, body| match (method, path) {
        ("GET", "/health") => (200, json!({"status": "ok", "fingerprints": {"lm": "gpt2"}}).to_string()),
        ("POST", "/v1/span_tokens") => {
            let req: SpanTokensRequest = serde_json::from_str(body).unwrap();
            let k = req.span.split_whitespace().count() + 1;
            (200, serde_json::to_string(&SpanTokensResponse { k }).unwrap())
        }
        _ => (404, "{}".into()),
    }));
    let c = fake.client();
    let h = c.health().unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.fingerprints["lm"], "gpt2");
    assert_eq!(c.span_tokens("into the net").unwrap().k, 4);
    let reqs = fake.requests();
    let sent: serde_json::Value = serde_json::from_str(&reqs[1].2).unwrap();
    assert_eq!(sent, json!({"span": "into the net"}));
}

/// Serves `/v1/masked` and `/v1/span_tokens` from a lookup table.
fn masked_fake(table: Arc<LookupOracle>) -> Fake {
    Fake::start(Box::new(move |_, path, body| match path {
        "/v1/masked" => {
            let req: MaskedRequest = serde_json::from_str(body).unwrap();
            if req.tokens[req.target_index] != "[MASK]" && !req.tokens[req.target_index].starts_with("[MASK]") {
                return (400, json!({"error": "target is not masked"}).to_string());
            }
            match table.masked_prob(&req.tokens, req.target_index, &req.candidate) {
                Ok(ncgp_core::pmi::MaskedProb::Prob(p)) => (200, serde_json::to_string(&MaskedResponse { prob: Some(p), multi_token: None }).unwrap()),
                Ok(ncgp_core::pmi::MaskedProb::MultiToken) => (200, json!({"multi_token": true}).to_string()),
                Err(e) => (404, json!({"error": e.to_string()}).to_string()),
            }
        }
        "/v1/span_tokens" => {
            let req: SpanTokensRequest = serde_json::from_str(body).unwrap();
            let k = table.token_count(&req.span).unwrap();
            (200, json!({ "k": k }).to_string())
        }
        _ => (404, "{}".into()),
    }))
}

#[test]
fn remote_pmi_matches_lookup_oracle() {
    let table = Arc::new(LookupOracle::load(&common::fixture("pmi/oracle.json")).unwrap());
    let fake = masked_fake(table.clone());
    let remote = RemoteMaskedOracle::new(Arc::new(fake.client()));
    let item = &common::items()[0];
    let a = score_item(item, table.as_ref()).unwrap();
    let b = score_item(item, &remote).unwrap();
    assert_eq!(a, b);
    let masked: Vec<serde_json::Value> = fake
        .requests()
        .iter()
        .filter(|r| r.1 == "/v1/masked")
        .map(|r| serde_json::from_str(&r.2).unwrap())
        .collect();
    assert_eq!(masked.len(), 8);
    let first = &masked[0];
    assert_eq!(first["target_index"], 2);
    assert_eq!(first["candidate"], "kicked");
    let tokens: Vec<String> = serde_json::from_value(first["tokens"].clone()).unwrap();
    assert_eq!(render(&tokens), "The boy [MASK] the big round ball into the net.");
}

#[test]
fn remote_multi_token_signal_excludes_item() {
    let table = Arc::new(LookupOracle::load(&common::fixture("pmi/oracle.json")).unwrap());
    let fake = masked_fake(table);
    let remote = RemoteMaskedOracle::new(Arc::new(fake.client()));
    let item = &common::items()[1];
    assert!(score_item(item, &remote).unwrap_err().is_exclusion());
}
