use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Output, Stdio};

use rollout_core::trainer::{RolloutClient, Workload};

fn rollout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rollout")).args(args).output().expect("run rollout")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Starts a long-running subcommand and reads the URL it prints first.
fn spawn_listening(args: &[&str]) -> (Child, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_rollout"))
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn rollout");
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    (child, line.trim().to_string())
}

fn terminate(mut child: Child) -> std::process::ExitStatus {
    let pid = child.id().to_string();
    Command::new("kill").args(["-TERM", &pid]).status().unwrap();
    child.wait().unwrap()
}

#[test]
fn help_lists_subcommands() {
    let o = rollout(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["serve", "mock-llm", "workload", "bench"] {
        assert!(text.contains(sub), "{text}");
    }
}

#[test]
fn zero_jobs_exits_cleanly_with_zero_throughput() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = rollout(&["bench", "scaling", "--servers", "1", "--jobs", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert_eq!(lines[0], "servers,jobs,wall_seconds,throughput");
    assert!(lines[1].starts_with("1,0,") && lines[1].ends_with(",0.0"), "{csv}");
}

#[test]
fn unreachable_server_fails_the_scaling_bench() {
    let (server, url) = spawn_listening(&["serve", "--bind", "127.0.0.1:0"]);
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let dead = format!("http://{dead}");
    let o = rollout(&["bench", "scaling", "--servers", "2", "--jobs", "4", "--connect", &url, "--connect", &dead]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains(&dead), "{}", stderr(&o));
    assert!(terminate(server).success());
}

#[test]
fn serve_answers_status_and_drains_on_sigterm() {
    let (server, url) = spawn_listening(&["serve", "--bind", "127.0.0.1:0"]);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let status = rt.block_on(RolloutClient::new(url).status()).unwrap();
    // Not started until POST /start.
    assert!(!status.running);
    assert!(terminate(server).success());
}

#[test]
fn serve_rejects_a_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "[workers]\ninit = 0\nrun = 1\neval = 1\n").unwrap();
    let o = rollout(&["serve", "--config", path.to_str().unwrap(), "--bind", "127.0.0.1:0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("worker"), "{}", stderr(&o));
}

#[test]
fn mock_llm_needs_a_script_file_in_script_mode() {
    let o = rollout(&["mock-llm", "--port", "0", "--mode", "script"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--script-file"), "{}", stderr(&o));
    let (mock, url) = spawn_listening(&["mock-llm", "--port", "0", "--seed", "3"]);
    assert!(url.starts_with("http://127.0.0.1:"), "{url}");
    assert!(terminate(mock).success());
}

#[test]
fn workload_then_dapo_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.json");
    let o = rollout(&["workload", "--seed", "2", "--prompts", "32", "--out", w.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(Workload::load(&w).unwrap().prompts.len(), 32);

    let out = dir.path().join("d.csv");
    let o = rollout(&[
        "bench",
        "dapo",
        "--workload",
        w.to_str().unwrap(),
        "--mode",
        "both",
        "--seed",
        "2",
        "--target",
        "4",
        "--cap",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("seed,mode,wall_time,rollouts_issued,idle_fraction"), "{csv}");
    assert!(lines[1].starts_with("2,batch,") && lines[2].starts_with("2,async,"), "{csv}");

    std::fs::write(&w, r#"{"rollouts_per_prompt": 4, "prompts": []}"#).unwrap();
    let o = rollout(&["bench", "dapo", "--workload", w.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no prompts"), "{}", stderr(&o));
}

#[test]
fn check_requires_both_modes() {
    let o = rollout(&["bench", "dapo", "--mode", "async", "--check"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--mode both"), "{}", stderr(&o));
}

#[test]
fn unknown_component_is_a_usage_error() {
    let o = rollout(&["bench", "ablation", "--component", "gpu"]);
    assert_eq!(o.status.code(), Some(2));
}
