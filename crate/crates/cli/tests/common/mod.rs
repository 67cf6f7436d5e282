#![allow(dead_code)]

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use gred_core::pipeline::identity_script;
use gred_core::schemadb::{load_examples, load_schemas, write_examples, Example};

pub fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn fixture_dataset() -> PathBuf {
    core_fixtures().join("dataset")
}

pub fn gred(args: &[&str]) -> Output {
    gred_env(args, &[])
}

pub fn gred_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gred"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn split(name: &str) -> Vec<Example> {
    let dir = fixture_dataset();
    let schemas = load_schemas(&dir.join("schemas")).unwrap();
    load_examples(&dir.join(format!("{name}.jsonl")), &schemas).unwrap()
}

/// Copies the fixture dataset, keeping only the first `train_n` training examples.
pub fn copy_dataset(dst: &Path, train_n: usize) -> PathBuf {
    let src = fixture_dataset();
    let out = dst.join("dataset");
    fs::create_dir_all(out.join("schemas")).unwrap();
    for entry in fs::read_dir(src.join("schemas")).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, out.join("schemas").join(p.file_name().unwrap())).unwrap();
    }
    let train = split("train");
    write_examples(&out.join("train.jsonl"), &train[..train_n.min(train.len())]).unwrap();
    for name in ["dev", "test"] {
        fs::copy(src.join(format!("{name}.jsonl")), out.join(format!("{name}.jsonl"))).unwrap();
    }
    out
}

/// Script that answers generation with the gold DVQ, echoes at retune and
/// debug, and returns a fixed annotation.
pub fn identity_script_file(dir: &Path, examples: &[Example]) -> PathBuf {
    let script = identity_script(examples).rule(
        gred_core::llm::Matcher::EndsWith("### Natural Language Annotations:\nA:".into()),
        gred_core::llm::Reply::Text("A:\nTable notes.".into()),
    );
    let path = dir.join("script.json");
    fs::write(&path, script.to_json()).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn count_lines(p: &Path) -> usize {
    fs::read_to_string(p).map_or(0, |t| t.lines().filter(|l| !l.trim().is_empty()).count())
}

#[derive(Debug, Clone)]
pub struct Captured {
    pub path: String,
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Minimal HTTP/1.1 server standing in for a chat-completion endpoint. Every
/// request body is captured; the reply content comes from `reply`.
pub struct FakeServer {
    pub url: String,
    pub captured: Arc<Mutex<Vec<Captured>>>,
}

impl FakeServer {
    pub fn start(reply: impl Fn(&serde_json::Value) -> String + Send + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let captured = Arc::new(Mutex::new(Vec::new()));
        let sink = captured.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).is_err() {
                    continue;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut length = 0usize;
                let mut authorization = None;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let (name, value) = line.split_once(':').unwrap_or((line, ""));
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap_or(0);
                    }
                    if name.eq_ignore_ascii_case("authorization") {
                        authorization = Some(value.trim().to_string());
                    }
                }
                let mut body = vec![0u8; length];
                reader.read_exact(&mut body).unwrap();
                let body: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                let content = reply(&body);
                sink.lock().unwrap().push(Captured {
                    path,
                    authorization,
                    body,
                });
                let payload = serde_json::json!({
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
                })
                .to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                );
            }
        });
        Self { url, captured }
    }

    pub fn bodies(&self) -> Vec<Captured> {
        self.captured.lock().unwrap().clone()
    }
}

/// Reply for the fake server: the gold DVQ for generation prompts, the
/// original for retune and debug, and a short note for annotation prompts.
pub fn gold_replier(examples: Vec<Example>) -> impl Fn(&serde_json::Value) -> String + Send + 'static {
    move |body| {
        let last = body["messages"]
            .as_array()
            .and_then(|m| m.last())
            .and_then(|m| m["content"].as_str())
            .unwrap_or("")
            .to_string();
        if last.ends_with("### Natural Language Annotations:\nA:") {
            return "Table notes.".into();
        }
        if let Some(i) = last.rfind("### Original DVQ:\n# ") {
            return last[i + 20..].lines().next().unwrap_or("").to_string();
        }
        for e in &examples {
            if last.ends_with(&format!("# “{}”\n### Data Visualization Query:", e.nlq)) {
                return format!("A: {}", e.gold_dvq);
            }
        }
        "no idea".into()
    }
}
