//! The execution server that lives "inside" a runtime: it accepts action
//! requests on the runtime's Unix socket and carries them out.

use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::io::AsyncReadExt;
use tokio::net::{UnixListener, UnixStream};
use tokio::process::Command;
use tokio::task::JoinSet;
use tracing::{debug, warn};

use super::census;
use super::frame::{recv_json, send_json};
use super::protocol::{ActionFailure, ActionKind, ActionReply, ActionRequest, ActionResult};
use super::RuntimeFlags;

const NETWORK_COMMANDS: &[&str] = &["curl", "wget", "nc", "ncat", "ping", "ssh", "scp", "telnet", "ftp"];

#[derive(Debug)]
pub(crate) struct ExecutorEnv {
    pub runtime_id: String,
    pub scratch: PathBuf,
    pub address: Ipv4Addr,
    pub flags: RuntimeFlags,
    /// Process groups of actions currently running.
    pub action_groups: Arc<Mutex<HashSet<i32>>>,
    /// Every group ever spawned by the owning manager, for orphan scans.
    pub seen_groups: Arc<Mutex<HashSet<i32>>>,
}

pub(crate) async fn serve(listener: UnixListener, env: Arc<ExecutorEnv>, startup_delay: Duration) {
    if !startup_delay.is_zero() {
        tokio::time::sleep(startup_delay).await;
    }
    // Connections live in this set so that aborting `serve` aborts them too.
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    conns.spawn(handle_connection(stream, env.clone()));
                }
                Err(e) => {
                    warn!(runtime = %env.runtime_id, error = %e, "action channel accept failed");
                    return;
                }
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
}

async fn handle_connection(mut stream: UnixStream, env: Arc<ExecutorEnv>) {
    loop {
        let req: ActionRequest = match recv_json(&mut stream).await {
            Ok(Some(req)) => req,
            Ok(None) => return,
            Err(e) => {
                debug!(runtime = %env.runtime_id, error = %e, "bad action frame");
                return;
            }
        };
        let reply = execute(&req, &env).await;
        if send_json(&mut stream, &reply).await.is_err() {
            return;
        }
    }
}

async fn execute(req: &ActionRequest, env: &ExecutorEnv) -> ActionReply {
    let started = Instant::now();
    let done = |exit_code: i32, output: String| {
        ActionReply::Ok(ActionResult {
            action_id: req.action_id.clone(),
            exit_code,
            output,
            elapsed: started.elapsed(),
        })
    };
    match req.kind {
        ActionKind::Ping => done(0, "pong".into()),
        ActionKind::Finish => done(0, req.payload.clone()),
        ActionKind::Bash => {
            if env.flags.network_disabled && uses_network(&req.payload) {
                return done(1, "network access is disabled in this sandbox\n".into());
            }
            match run_shell(req, env).await {
                Ok(Some((code, output))) => done(code, output),
                Ok(None) => ActionReply::Failed { action_id: req.action_id.clone(), failure: ActionFailure::Timeout },
                Err(e) => ActionReply::Failed {
                    action_id: req.action_id.clone(),
                    failure: ActionFailure::Internal(e.to_string()),
                },
            }
        }
    }
}

/// Runs the payload with `sh -c` in its own process group. `Ok(None)` on timeout.
async fn run_shell(req: &ActionRequest, env: &ExecutorEnv) -> std::io::Result<Option<(i32, String)>> {
    let mut cmd = Command::new("/bin/sh");
    cmd.arg("-c")
        .arg(&req.payload)
        .current_dir(&env.scratch)
        .env("HOME", &env.scratch)
        .env("SANDBOX_ID", &env.runtime_id)
        .env("SANDBOX_ADDR", env.address.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .kill_on_drop(true);
    if env.flags.fakeroot {
        cmd.env("SANDBOX_FAKEROOT", "1");
    }
    let mut child = cmd.spawn()?;
    let pgid = child.id().map(|p| p as i32).unwrap_or(0);
    env.seen_groups.lock().unwrap_or_else(|e| e.into_inner()).insert(pgid);
    env.action_groups.lock().unwrap_or_else(|e| e.into_inner()).insert(pgid);

    let mut stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let out_reader = tokio::spawn(async move {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf).await;
        buf
    });
    let err_reader = tokio::spawn(async move {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf).await;
        buf
    });

    let waited = tokio::time::timeout(req.timeout, child.wait()).await;
    // Whatever the outcome, nothing from this action outlives it.
    census::signal_group(pgid, libc::SIGKILL);
    let status = match waited {
        Ok(status) => Some(status?),
        Err(_) => {
            let _ = child.wait().await;
            None
        }
    };
    env.action_groups.lock().unwrap_or_else(|e| e.into_inner()).remove(&pgid);

    let Some(status) = status else {
        out_reader.abort();
        err_reader.abort();
        return Ok(None);
    };
    let mut output = out_reader.await.unwrap_or_default();
    output.extend(err_reader.await.unwrap_or_default());
    let code =
        status.code().unwrap_or_else(|| 128 + std::os::unix::process::ExitStatusExt::signal(&status).unwrap_or(0));
    Ok(Some((code, String::from_utf8_lossy(&output).into_owned())))
}

fn uses_network(script: &str) -> bool {
    script
        .split(|c: char| c.is_whitespace() || matches!(c, ';' | '|' | '&' | '(' | ')' | '`'))
        .filter(|w| !w.is_empty())
        .any(|w| NETWORK_COMMANDS.contains(&w.rsplit('/').next().unwrap_or(w)))
}
