use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio_tungstenite::tungstenite::Message;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dualguide"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn fixture(name: &str) -> PathBuf {
    fixtures().join(format!("{name}.json"))
}

fn code(cmd: &mut Command) -> i32 {
    cmd.stdout(Stdio::null()).stderr(Stdio::null()).status().unwrap().code().unwrap()
}

#[test]
fn run_writes_log_metrics_and_cost_field() {
    let dir = tempfile::tempdir().unwrap();
    let (log, metrics, field) = (dir.path().join("a.jsonl"), dir.path().join("m.csv"), dir.path().join("c.csv"));
    let status = code(
        bin().args(["run", "--variant", "full", "--seed", "2", "--scenario"])
            .arg(fixture("chair"))
            .arg("--log")
            .arg(&log)
            .arg("--metrics")
            .arg(&metrics)
            .arg("--cost-field")
            .arg(&field),
    );
    assert_eq!(status, 0);
    let m = std::fs::read_to_string(&metrics).unwrap();
    assert!(m.starts_with("scope,task,object,approach_s"));
    assert_eq!(m.lines().count(), 3);
    let c = std::fs::read_to_string(&field).unwrap();
    assert!(c.starts_with("task,x,y,cost_c,cost_d,cost_m,total,feasible\n"));
    assert!(c.lines().skip(1).any(|l| l.ends_with(",true")));

    // the same run with and without the cost field logs identically
    let plain = dir.path().join("b.jsonl");
    let status = code(bin().args(["run", "--seed", "2", "--scenario"]).arg(fixture("chair")).arg("--log").arg(&plain));
    assert_eq!(status, 0);
    assert_eq!(std::fs::read(&log).unwrap(), std::fs::read(&plain).unwrap());
}

#[test]
fn replay_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("a.jsonl");
    assert_eq!(code(bin().args(["run", "--seed", "4", "--scenario"]).arg(fixture("door_push")).arg("--log").arg(&log)), 0);
    assert_eq!(code(bin().args(["replay", "--check", "--log"]).arg(&log)), 0);

    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let i = lines.iter().rposition(|l| l.contains("\"kind\":\"step\"")).unwrap();
    let mut v: Value = serde_json::from_str(&lines[i]).unwrap();
    v["mode"] = json!("fallback");
    lines[i] = v.to_string();
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    assert_eq!(code(bin().args(["replay", "--log"]).arg(&log)), 0);
    assert_eq!(code(bin().args(["replay", "--check", "--log"]).arg(&log)), 3);

    std::fs::write(&log, "{\"kind\":\"header\"}\n").unwrap();
    assert_eq!(code(bin().args(["replay", "--check", "--log"]).arg(&log)), 1);
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(bin().args(["validate", "--scenario"]).arg(fixture("route"))), 0);
    let bad = dir.path().join("bad.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(fixture("door_pull")).unwrap()).unwrap();
    v["config"]["apf"]["gamma"] = json!(1.0);
    std::fs::write(&bad, v.to_string()).unwrap();
    let out = bin().args(["validate", "--scenario"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config.apf.gamma"));
    assert_eq!(code(bin().args(["validate", "--scenario"]).arg(dir.path().join("missing.json"))), 2);
}

#[test]
fn compare_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let o = bin().args(["compare", "--seeds", "1..3", "--scenario"]).arg(fixture("door_pull")).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let rows = std::fs::read_to_string(&out).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 2);
    let summary = std::fs::read_to_string(dir.path().join("report_summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some("task,stage,mean_a,sd_a,mean_b,sd_b,delta,win_rate_a,n"));
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("locate"));
    assert_eq!(code(bin().args(["compare", "--seeds", "5", "--scenario"]).arg(fixture("door_pull"))), 1);
}

#[test]
fn batch_prints_one_block_per_seed() {
    let o = bin().args(["batch", "--seeds", "1..2", "--variant", "noadapt", "--scenario"]).arg(fixture("elevator")).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("seed,scope,"));
    assert_eq!(text.lines().filter(|l| l.contains(",total,")).count(), 2);
}

/// Kills the server when the test ends.
struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(static_dir: &Path) -> (Server, String) {
    let mut child = bin()
        .args(["serve", "--port", "0", "--scenario-dir"])
        .arg(fixtures())
        .arg("--static-dir")
        .arg(static_dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    (Server(child), addr)
}

#[tokio::test]
async fn live_session_over_websocket() {
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<title>playground</title>").unwrap();
    let (_server, addr) = start_server(web.path());

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    let mut send = async |msg: Value| -> Vec<Value> {
        let n = msg.get("n").and_then(Value::as_u64).unwrap_or(1) as usize;
        ws.send(Message::Text(msg.to_string().into())).await.unwrap();
        let mut frames = Vec::new();
        for _ in 0..n {
            let Some(Ok(Message::Text(t))) = ws.next().await else {
                panic!("connection closed");
            };
            let v: Value = serde_json::from_str(t.as_str()).unwrap();
            let stop = v["type"] != "state" || msg["type"] != "step";
            frames.push(v);
            if stop {
                break;
            }
        }
        frames
    };

    let f = send(json!({"type": "list_scenarios"})).await;
    assert!(f[0]["scenarios"].as_array().unwrap().contains(&json!("door_pull")));
    let f = send(json!({"type": "reset", "scenario_id": "door_pull", "seed": 7})).await;
    assert_eq!((f[0]["type"].clone(), f[0]["tick"].clone(), f[0]["mode"].clone()), (json!("state"), json!(0), json!("lead")));
    for key in ["robot", "user", "objects", "prompts", "forces", "metrics_so_far"] {
        assert!(f[0].get(key).is_some(), "state frame lacks {key}");
    }
    let f = send(json!({"type": "fly"})).await;
    assert_eq!((f[0]["type"].clone(), f[0]["code"].clone()), (json!("error"), json!("unknown_type")));
    let f = send(json!({"type": "act", "action": {"move": [0.05, 0.0], "button": "up"}})).await;
    assert_eq!(f[0]["tick"], 0);
    let f = send(json!({"type": "step", "n": 5})).await;
    assert_eq!(f.len(), 5);
    assert_eq!(f[4]["tick"], 5);
    drop(send);

    let mut tcp = tokio::net::TcpStream::connect(&addr).await.unwrap();
    tcp.write_all(b"GET /index.html HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    tcp.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"));
    assert!(body.contains("<title>playground</title>"));
}
