//! Helpers for driving the `vpsn` binary.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use vpsn_core::corpus::{synthetic_corpus, write_dataset, Aspect, CommitRecord};

pub fn vpsn() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vpsn"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    vpsn().args(args).output().expect("spawn vpsn")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "vpsn {args:?} failed: {}", stderr(&o));
    stdout(&o)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Hyperparameters that overfit the 16-record toy set in a few seconds.
pub const FAST_CONFIG: &str = r#"{
  "hidden_dim": 32, "embed_dim": 32, "num_encoder_layers": 1, "num_decoder_layers": 1,
  "seq_len": 96, "dropout_rate": 0.0, "learning_rate": 0.01, "batch_size": 8,
  "validation_fraction": 0.0, "target_train_loss": 0.01
}"#;

pub struct ToyModels {
    pub records: Vec<CommitRecord>,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub generators: PathBuf,
}

/// Eight patches and eight non-patches drawn from one synthetic corpus.
pub fn toy_records() -> Vec<CommitRecord> {
    let all = synthetic_corpus(400, 40, 3);
    let pos = all.iter().filter(|r| r.label.is_positive()).take(8);
    let neg = all.iter().filter(|r| !r.label.is_positive()).take(8);
    pos.chain(neg).cloned().collect()
}

/// Trains a transformer classifier and four seq2seq generators through
/// `vpsn train`, all sharing one vocabulary.
pub fn toy_models(dir: &Path) -> ToyModels {
    std::fs::create_dir_all(dir).unwrap();
    let records = toy_records();
    let dataset = dir.join("toy.jsonl");
    write_dataset(&records, &dataset).unwrap();
    let config = dir.join("fast.json");
    std::fs::write(&config, FAST_CONFIG).unwrap();
    let checkpoint = dir.join("model").join("classifier.ckpt");
    ok(&[
        "train", "--dataset", p(&dataset), "--task", "classify", "--arch", "transformer",
        "--config", p(&config), "--out", p(&checkpoint),
    ]);
    let generators = dir.join("model").join("generators");
    for aspect in Aspect::ALL {
        let out = generators.join(format!("{}.ckpt", aspect.name()));
        ok(&[
            "train", "--dataset", p(&dataset), "--task", "generate", "--aspect", aspect.name(),
            "--arch", "seq2seq", "--config", p(&config), "--out", p(&out),
        ]);
    }
    ToyModels { records, dataset, checkpoint, generators }
}

/// A running `vpsn serve`, terminated on drop.
pub struct Server {
    pub child: Child,
    pub addr: SocketAddr,
}

impl Server {
    pub fn start(extra: &[&str]) -> Server {
        let mut child = vpsn()
            .args(["serve", "--port", "0"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn vpsn serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on http://")
            .unwrap_or_else(|| {
                let mut err = String::new();
                let _ = child.stderr.take().unwrap().read_to_string(&mut err);
                panic!("serve did not start: {line:?} {err}")
            })
            .parse()
            .unwrap();
        Server { child, addr }
    }

    /// SIGTERM, then wait; returns whether the process exited with 0.
    pub fn stop(mut self) -> bool {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-TERM", &pid]).status().unwrap();
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                return status.success();
            }
            assert!(Instant::now() < deadline, "serve ignored SIGTERM");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn get(&self, path: &str) -> (u16, serde_json::Value) {
        http(self.addr, "GET", path, None)
    }

    pub fn post(&self, path: &str, body: &serde_json::Value) -> (u16, serde_json::Value) {
        http(self.addr, "POST", path, Some(body.to_string()))
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One HTTP/1.1 request over a fresh connection.
pub fn http(addr: SocketAddr, method: &str, path: &str, body: Option<String>) -> (u16, serde_json::Value) {
    let mut conn = TcpStream::connect(addr).unwrap();
    conn.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let body = body.unwrap_or_default();
    write!(
        conn,
        "{method} {path} HTTP/1.1\r\nhost: {addr}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    conn.read_to_string(&mut raw).unwrap();
    let (head, rest) = raw.split_once("\r\n\r\n").expect("http response");
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let payload = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(rest)
    } else {
        rest.to_string()
    };
    let value = if payload.trim().is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_str(&payload).unwrap_or_else(|e| panic!("{e}: {payload:?}"))
    };
    (status, value)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

pub fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|s| s.lines().count()).unwrap_or(0)
}
