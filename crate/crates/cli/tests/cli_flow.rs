use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mbct(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbct"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn mbct")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mbct(dir, args);
    assert!(
        out.status.success(),
        "mbct {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(stdout: &str) -> Vec<Value> {
    stdout.lines().map(|l| serde_json::from_str(l).expect("json line")).collect()
}

fn status(stdout: &str) -> Value {
    lines(stdout).pop().expect("status line")
}

fn message_bytes(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i * 37 + 11) as u8).collect()
}

struct Pair {
    dir: TempDir,
}

impl Pair {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        ok(d, &["keygen", "--out", "alice.json", "--seed", "1"]);
        ok(d, &["keygen", "--out", "bob.json", "--seed", "2"]);
        ok(d, &["export-pub", "--wallet", "alice.json", "--out", "alice.pub"]);
        ok(d, &["export-pub", "--wallet", "bob.json", "--out", "bob.pub"]);
        Pair { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn write_message(&self, bytes: &[u8]) -> PathBuf {
        let p = self.path().join("msg.bin");
        std::fs::write(&p, bytes).unwrap();
        p
    }

    fn send(&self, extra: &[&str]) -> Output {
        let mut args = vec!["send", "--wallet", "alice.json", "--to", "bob.pub", "--message", "msg.bin"];
        args.extend_from_slice(&["--chain", "chain.bin", "--seed", "5"]);
        args.extend_from_slice(extra);
        mbct(self.path(), &args)
    }

    fn receive(&self) -> Output {
        mbct(
            self.path(),
            &["receive", "--wallet", "bob.json", "--from", "alice.pub", "--chain", "chain.bin", "--seed", "6", "--out", "got.bin"],
        )
    }
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn keygen_is_deterministic_with_seed_and_fresh_without() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let a = ok(d, &["keygen", "--out", "a.json", "--seed", "42"]);
    let b = ok(d, &["keygen", "--out", "b.json", "--seed", "42"]);
    assert_eq!(a, b);
    let c = ok(d, &["keygen", "--out", "c.json"]);
    let e = ok(d, &["keygen", "--out", "e.json"]);
    assert_ne!(c, e);
    assert_ne!(a, c);
}

#[test]
fn keygen_refuses_to_overwrite_without_force() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["keygen", "--out", "a.json", "--seed", "1"]);
    let before = std::fs::read(d.join("a.json")).unwrap();
    let out = mbct(d, &["keygen", "--out", "a.json", "--seed", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("already exists"));
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), before);
    ok(d, &["keygen", "--out", "a.json", "--seed", "2", "--force"]);
    assert_ne!(std::fs::read(d.join("a.json")).unwrap(), before);
}

#[test]
fn hundred_byte_message_round_trips_over_the_chain_file() {
    let pair = Pair::new();
    let msg = message_bytes(100);
    pair.write_message(&msg);

    let first = stdout(&pair.send(&[]));
    let recs = lines(&first);
    let sends: Vec<&Value> = recs.iter().filter(|r| r["action"] == "send").collect();
    assert_eq!(sends.len(), 5);
    assert_eq!(sends[0]["stage"], "auth");
    assert!(sends[1..].iter().all(|r| r["stage"] == "trans"));
    assert_eq!(status(&first)["status"], "awaiting_feedback");

    let recv = stdout(&pair.receive());
    assert!(lines(&recv).iter().any(|r| r["action"] == "ack"));
    assert_eq!(status(&recv)["status"], "complete");
    assert_eq!(std::fs::read(pair.path().join("got.bin")).unwrap(), msg);

    let last = stdout(&pair.send(&[]));
    assert!(lines(&last).iter().any(|r| r["action"] == "done"));
    assert_eq!(status(&last)["status"], "done");

    let verify = ok(pair.path(), &["chain", "--chain", "chain.bin", "verify"]);
    assert!(verify.starts_with("ok"));
}

#[test]
fn dropped_segment_is_resent_after_nack() {
    let pair = Pair::new();
    let msg = message_bytes(100);
    pair.write_message(&msg);

    let mut transcript = String::new();
    let mut done = false;
    for _ in 0..8 {
        let out = stdout(&pair.send(&["--drop-policy", "random:0.2:1"]));
        transcript.push_str(&out);
        if status(&out)["status"] == "done" {
            done = true;
            break;
        }
        transcript.push_str(&stdout(&pair.receive()));
    }
    assert!(done, "session did not finish:\n{transcript}");
    let recs: Vec<Value> = transcript.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(recs.iter().any(|r| r["action"] == "nack"));
    assert!(recs.iter().any(|r| r["action"] == "resend"));
    assert_eq!(std::fs::read(pair.path().join("got.bin")).unwrap(), msg);
}

#[test]
fn empty_message_is_delivered() {
    let pair = Pair::new();
    pair.write_message(&[]);
    pair.send(&[]);
    let recv = stdout(&pair.receive());
    assert_eq!(status(&recv)["status"], "complete");
    assert_eq!(std::fs::read(pair.path().join("got.bin")).unwrap(), Vec::<u8>::new());
    assert_eq!(status(&stdout(&pair.send(&[])))["status"], "done");
}

#[test]
fn receiver_reports_no_session_on_chain_without_one() {
    let pair = Pair::new();
    // A chain whose only session is addressed from someone else.
    let d = pair.path();
    ok(d, &["keygen", "--out", "carol.json", "--seed", "3"]);
    std::fs::write(d.join("msg.bin"), message_bytes(20)).unwrap();
    ok(
        d,
        &["send", "--wallet", "carol.json", "--to", "bob.pub", "--message", "msg.bin", "--chain", "chain.bin", "--seed", "9"],
    );
    let out = pair.receive();
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(status(&stdout(&out))["status"], "no_session");
    assert!(!d.join("got.bin").exists());
}

#[test]
fn tampered_chain_file_is_refused() {
    let pair = Pair::new();
    pair.write_message(&message_bytes(30));
    let first = stdout(&pair.send(&[]));
    let auth_id = lines(&first)[0]["tx_id"].as_str().unwrap().to_owned();

    // Flip one byte of the AuthTx's first stealth address inside the chain file.
    let chain = pair.path().join("chain.bin");
    let export: Value = serde_json::from_str(&ok(pair.path(), &["chain", "--chain", "chain.bin", "export"])).unwrap();
    let tx = export[0]["txs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["id"] == auth_id.as_str())
        .unwrap()
        .clone();
    let key = hex::decode(tx["outputs"][0]["stealth_address"].as_str().unwrap()).unwrap();
    let mut bytes = std::fs::read(&chain).unwrap();
    let at = bytes.windows(32).position(|w| w == key.as_slice()).expect("key in chain file");
    bytes[at] ^= 0x01;
    std::fs::write(&chain, bytes).unwrap();

    let out = pair.receive();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("block id"));
    let out = mbct(pair.path(), &["chain", "--chain", "chain.bin", "verify"]);
    assert!(!out.status.success());
}

#[test]
fn send_times_out_when_feedback_never_arrives() {
    let pair = Pair::new();
    pair.write_message(&message_bytes(10));
    let mut last = None;
    for _ in 0..12 {
        let out = pair.send(&["--timeout-blocks", "3"]);
        if out.status.code() == Some(4) {
            last = Some(out);
            break;
        }
        assert!(out.status.success());
    }
    let out = last.expect("sender never timed out");
    assert_eq!(status(&stdout(&out))["status"], "timed_out");
    assert!(String::from_utf8_lossy(&out.stderr).contains("no feedback"));
}

#[test]
fn analyze_rejects_zero_group_size() {
    let dir = TempDir::new().unwrap();
    let out = mbct(dir.path(), &["analyze", "--group-size", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mbct(dir.path(), &["analyze", "--groups", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_is_deterministic_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = "[analysis]\nreference_size = 300\nks_samples = 50\nks_instances = 20\nks_corpus = 300\n";
    std::fs::write(d.join("small.toml"), cfg).unwrap();
    let args = |out: &'static str| {
        vec!["--config", "small.toml", "analyze", "--groups", "2", "--group-size", "100", "--seed", "4", "--out", out]
    };
    ok(d, &args("r1"));
    ok(d, &args("r2"));
    for f in ["report.txt", "rows.jsonl", "report.json"] {
        let a = std::fs::read(d.join("r1").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(d.join("r2").join(f)).unwrap(), "{f} differs");
    }
    let text = std::fs::read_to_string(d.join("r1/report.txt")).unwrap();
    for header in ["# KLD", "# CDF", "# KS", "# Checks"] {
        assert!(text.contains(header), "missing {header}");
    }
}

#[test]
fn simulate_drop_seq_resends_exactly_that_segment() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["simulate", "--scenario", "drop-seq-2", "--seed", "3"]);
    let recs = lines(&out);
    let resends: Vec<&Value> = recs.iter().filter(|r| r["action"] == "resend").collect();
    assert_eq!(resends.len(), 1);
    assert_eq!(resends[0]["seq"], 2);
    assert_eq!(status(&out)["status"], "integrity_ok");
}

#[test]
fn simulate_drop_all_forever_fails() {
    let dir = TempDir::new().unwrap();
    let out = mbct(dir.path(), &["simulate", "--scenario", "drop-all-forever", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(status(&stdout(&out))["status"], "integrity_failed");
    assert!(lines(&stdout(&out)).iter().any(|r| r["action"] == "timed_out"));
}

#[test]
fn simulate_random_loss_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = mbct(dir.path(), &["simulate", "--scenario", "random-20", "--seed", "7"]);
    let b = mbct(dir.path(), &["simulate", "--scenario", "random-20", "--seed", "7"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.status.code(), b.status.code());

    let ok_run = ok(dir.path(), &["simulate", "--scenario", "random-20", "--seed", "1"]);
    assert_eq!(status(&ok_run)["resends"], 1);
}

#[test]
fn unknown_scenario_is_an_error() {
    let dir = TempDir::new().unwrap();
    let out = mbct(dir.path(), &["simulate", "--scenario", "drop-some", "--seed", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}
