mod common;

use std::path::Path;

use common::*;
use pyramem_core::AnswerResult;
use serde_json::json;

const QUESTIONS: [&str; 4] = [
    "who hands over the parcel at the gate",
    "what does the courier carry",
    "where does the dog sleep",
    "when did the lights go out",
];

/// A story whose decisive fact sits two relational hops from the seeds.
fn story() -> String {
    let events = [
        json!({ "t": 2, "text": "the courier parks near the gate #van" }),
        json!({ "t": 9, "text": "a dog sleeps under the porch" }),
        json!({ "t": 33, "text": "a man in grey steps out of the van #van #grey key:marcus" }),
        json!({ "t": 47, "text": "rain starts over the yard" }),
        json!({ "t": 61, "text": "someone hands over the parcel at the gate #grey" }),
        json!({ "t": 95, "text": "the lights go out in the hall" }),
    ];
    events.iter().map(|e| format!("{e}\n")).collect()
}

fn write_stream(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn query_json_is_one_answer_result() {
    let data = tempfile::tempdir().unwrap();
    let stream = write_stream(data.path(), "s.ndjson", &story());
    stdout(&cli(data.path(), &["ingest", "--store", "s", "--stream", &stream, "--clip-len", "30"]));
    let out = stdout(&cli(data.path(), &["--json", "query", "--store", "s", "--question", QUESTIONS[0], "--k", "2"]));
    assert_eq!(out.lines().count(), 1, "{out}");
    let r: AnswerResult = serde_json::from_str(&out).unwrap();
    assert_eq!(r.answer.as_deref(), Some("marcus"));
    assert!(!r.context_final.trace.is_empty());

    let human = stdout(&cli(data.path(), &["query", "--store", "s", "--question", QUESTIONS[0], "--k", "2", "--trace"]));
    assert!(human.starts_with("answer: marcus\n"), "{human}");
    assert!(human.contains("turn 1:"), "{human}");
}

#[test]
fn exit_codes_follow_failure_class() {
    let data = tempfile::tempdir().unwrap();
    let missing = data.path().join("absent.ndjson");
    let o = cli(data.path(), &["ingest", "--store", "s", "--stream", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = cli(data.path(), &["query", "--store", "nope", "--question", "q"]);
    assert_eq!(o.status.code(), Some(4));

    stdout(&cli(data.path(), &["create", "s"]));
    let o = cli(data.path(), &["create", "s"]);
    assert_eq!(o.status.code(), Some(6));

    let o = cli(data.path(), &["query", "--store", "s", "--question", "q", "--max-turns", "0"]);
    assert_eq!(o.status.code(), Some(5));

    let bad = write_stream(data.path(), "bad.ndjson", "{\"t\": 1}\n");
    let o = cli(data.path(), &["ingest", "--store", "s", "--stream", &bad]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let ok = write_stream(data.path(), "ok.ndjson", &story());
    let o = cli(data.path(), &["ingest", "--store", "s", "--stream", &ok, "--clip-len", "12"]);
    assert_eq!(o.status.code(), Some(5));

    let o = cli(data.path(), &["bench", "--variants", "full,fancy"]);
    assert_eq!(o.status.code(), Some(5));
    let o = cli(data.path(), &["bench", "--workload", "nowhere.json"]);
    assert_eq!(o.status.code(), Some(4));

    let o = cli(data.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cli_and_http_agree_byte_for_byte() {
    let data = tempfile::tempdir().unwrap();
    let f = fixture(11, 10, 5, 6);
    let fx = write_stream(data.path(), "fx.ndjson", &f.ndjson);
    let st = write_stream(data.path(), "story.ndjson", &story());
    stdout(&cli(data.path(), &["ingest", "--store", "fx", "--stream", &fx, "--clip-len", "30"]));
    stdout(&cli(data.path(), &["ingest", "--store", "story", "--stream", &st, "--clip-len", "30"]));
    let cli_stats = stdout(&cli(data.path(), &["--json", "stats", "--store", "fx"]));
    let cli_answers: Vec<String> = QUESTIONS
        .iter()
        .map(|q| stdout(&cli(data.path(), &["--json", "query", "--store", "story", "--question", q])))
        .collect();
    let cli_node = stdout(&cli(data.path(), &["--json", "inspect", "node", "--store", "story", "c-1"]));

    let s = Server::start(data.path(), None);
    let a = agent();
    let (status, http_stats) = get(&a, &s.url("/stores/fx/graph/stats"));
    assert_eq!(status, 200);
    assert_eq!(cli_stats, format!("{http_stats}\n"));
    assert_eq!(json_of(&http_stats)["facts"], f.facts);
    for (q, expected) in QUESTIONS.iter().zip(&cli_answers) {
        let (status, body) = post(&a, &s.url("/stores/story/query"), &json!({ "question": q }).to_string());
        assert_eq!(status, 200);
        assert_eq!(*expected, format!("{body}\n"), "{q}");
    }
    assert_eq!(cli_node, format!("{}\n", get(&a, &s.url("/stores/story/nodes/c-1")).1));

    // the same stream through HTTP yields the same snapshot
    post(&a, &s.url("/stores"), &json!({ "id": "story-http", "config": { "ingest": { "clip_len": 30.0 } } }).to_string());
    assert_eq!(post(&a, &s.url("/stores/story-http/ingest"), &story()).0, 200);
    s.stop();
    let read = |id: &str| std::fs::read(data.path().join(id).join("snapshot.json")).unwrap();
    assert_eq!(read("story"), read("story-http"));
}

#[test]
fn answers_survive_restart() {
    let data = tempfile::tempdir().unwrap();
    let a = agent();
    let ask = |s: &Server| -> Vec<String> {
        QUESTIONS
            .iter()
            .map(|q| {
                let (status, body) = post(&a, &s.url("/stores/r/query"), &json!({ "question": q, "max_turns": 3 }).to_string());
                assert_eq!(status, 200);
                body
            })
            .collect()
    };
    let s = Server::start(data.path(), None);
    assert_eq!(post(&a, &s.url("/stores"), r#"{"id": "r"}"#).0, 201);
    // two uploads, so the restart replays more than one commit
    let body = story();
    let (head, tail) = body.split_at(body.match_indices('\n').nth(2).unwrap().0 + 1);
    assert_eq!(post(&a, &s.url("/stores/r/ingest"), head).0, 200);
    assert_eq!(post(&a, &s.url("/stores/r/ingest"), tail).0, 200);
    let before = ask(&s);
    let stats = get(&a, &s.url("/stores/r/graph/stats")).1;
    s.stop();

    let s = Server::start(data.path(), None);
    assert_eq!(ask(&s), before);
    assert_eq!(get(&a, &s.url("/stores/r/graph/stats")).1, stats);
    s.stop();

    // recovery also works from the log alone
    std::fs::remove_file(data.path().join("r").join("snapshot.json")).unwrap();
    let s = Server::start(data.path(), None);
    assert_eq!(ask(&s), before);
    let traces = std::fs::read_to_string(data.path().join("r").join("traces.log")).unwrap();
    assert_eq!(traces.lines().count(), 3 * QUESTIONS.len());
}

#[test]
fn config_file_and_env_set_store_defaults() {
    let data = tempfile::tempdir().unwrap();
    let cfg = data.path().join("pyramem.toml");
    std::fs::write(&cfg, "[ingest]\nclip_len = 12.5\n\n[reasoner]\nk_seed = 7\n").unwrap();
    let info = stdout(&cli(data.path(), &["--config", cfg.to_str().unwrap(), "--json", "create", "a"]));
    let info = json_of(&info);
    assert_eq!(info["config"]["ingest"]["clip_len"], 12.5);
    assert_eq!(info["config"]["reasoner"]["k_seed"], 7);

    let o = std::process::Command::new(env!("CARGO_BIN_EXE_pyramem"))
        .args(["--data-dir", data.path().to_str().unwrap(), "--json", "create", "b"])
        .env("PYRAMEM_K_SEED", "4")
        .output()
        .unwrap();
    assert_eq!(json_of(&stdout(&o))["config"]["reasoner"]["k_seed"], 4);

    std::fs::write(&cfg, "[reasoner]\nk_seed = \"lots\"\n").unwrap();
    let o = cli(data.path(), &["--config", cfg.to_str().unwrap(), "create", "c"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn bench_writes_csv() {
    let data = tempfile::tempdir().unwrap();
    let out = data.path().join("results.csv");
    let o = cli(
        data.path(),
        &["bench", "--workload", "hop2", "--tasks", "12", "--variants", "full,no-expand", "--workers", "1", "--out", out.to_str().unwrap()],
    );
    let text = stdout(&o);
    assert!(text.contains("no-expand"), "{text}");
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,accuracy,p50,p95,mean,mean_context_size");
    assert!(lines[1].starts_with("full,"));
    assert!(lines[2].starts_with("no-expand,"));
    assert_eq!(lines.len(), 3);
}
