use std::collections::{HashMap, HashSet};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::net::{UnixListener, UnixStream};
use tokio::process::{Child, Command};
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;
use tracing::{debug, warn};

use super::allocator::LoopbackAllocator;
use super::cache::{CacheDecision, CacheKey, ImageBuilder};
use super::census;
use super::executor::{self, ExecutorEnv};
use super::frame::{recv_json, send_json};
use super::protocol::{ActionFailure, ActionReply, ActionRequest, ActionResult};
use super::SandboxError;

pub const DEFAULT_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeFlags {
    pub fakeroot: bool,
    pub network_disabled: bool,
}

/// How the runtime's main process reacts to a graceful stop request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum KeeperBehavior {
    #[default]
    Cooperative,
    /// Ignores SIGTERM, so only the forced kill can stop it.
    IgnoreTerm,
}

#[derive(Debug, Clone)]
pub struct RuntimeSpec {
    pub flags: RuntimeFlags,
    /// Simulated boot time before the action channel answers.
    pub startup_latency: Duration,
    pub startup_timeout: Duration,
    pub keeper: KeeperBehavior,
    /// Image to build (or reuse) before launch. Needs a manager image cache.
    pub image: Option<CacheKey>,
}

impl Default for RuntimeSpec {
    fn default() -> Self {
        Self {
            flags: RuntimeFlags::default(),
            startup_latency: Duration::ZERO,
            startup_timeout: Duration::from_secs(10),
            keeper: KeeperBehavior::Cooperative,
            image: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuntimeState {
    Starting,
    Ready,
    Stopping,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CloseReport {
    /// The graceful stop did not finish within the grace period.
    pub forced: bool,
    /// The runtime was already closed; nothing was done.
    pub already_closed: bool,
}

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    /// Where sockets and scratch directories go. A private temp dir if unset.
    pub runtime_dir: Option<PathBuf>,
    pub grace: Duration,
    pub address_capacity: u32,
    pub image_cache: Option<ImageBuilder>,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            runtime_dir: None,
            grace: DEFAULT_GRACE,
            address_capacity: super::allocator::MAX_CAPACITY,
            image_cache: None,
        }
    }
}

/// Starts runtimes and keeps the bookkeeping needed to clean all of them up.
#[derive(Debug, Clone)]
pub struct SandboxManager {
    inner: Arc<ManagerInner>,
}

#[derive(Debug)]
struct ManagerInner {
    allocator: Arc<LoopbackAllocator>,
    runtime_dir: PathBuf,
    owns_dir: bool,
    grace: Duration,
    images: Option<ImageBuilder>,
    live: Mutex<HashMap<String, Weak<SandboxRuntime>>>,
    seen_groups: Arc<Mutex<HashSet<i32>>>,
    seq: AtomicU64,
    forced_kills: AtomicU64,
}

impl Drop for ManagerInner {
    fn drop(&mut self) {
        if self.owns_dir {
            let _ = std::fs::remove_dir_all(&self.runtime_dir);
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SandboxManager {
    pub fn new(config: ManagerConfig) -> Result<Self, SandboxError> {
        let (runtime_dir, owns_dir) = match config.runtime_dir {
            Some(dir) => (dir, false),
            None => (
                std::env::temp_dir().join(format!("rollout-rt-{}-{:04x}", std::process::id(), rand::random::<u16>())),
                true,
            ),
        };
        std::fs::create_dir_all(&runtime_dir)?;
        Ok(Self {
            inner: Arc::new(ManagerInner {
                allocator: Arc::new(LoopbackAllocator::with_capacity(config.address_capacity)),
                runtime_dir,
                owns_dir,
                grace: config.grace,
                images: config.image_cache,
                live: Mutex::new(HashMap::new()),
                seen_groups: Arc::new(Mutex::new(HashSet::new())),
                seq: AtomicU64::new(0),
                forced_kills: AtomicU64::new(0),
            }),
        })
    }

    pub fn with_defaults() -> Result<Self, SandboxError> {
        Self::new(ManagerConfig::default())
    }

    pub fn allocator(&self) -> &Arc<LoopbackAllocator> {
        &self.inner.allocator
    }

    pub fn runtime_dir(&self) -> &Path {
        &self.inner.runtime_dir
    }

    pub fn grace(&self) -> Duration {
        self.inner.grace
    }

    pub fn image_cache(&self) -> Option<&ImageBuilder> {
        self.inner.images.as_ref()
    }

    pub fn forced_kills(&self) -> u64 {
        self.inner.forced_kills.load(Ordering::Relaxed)
    }

    /// Launches a runtime and waits until its action channel answers a ping.
    pub async fn start(&self, spec: RuntimeSpec) -> Result<Arc<SandboxRuntime>, SandboxError> {
        let inner = &self.inner;
        let image = match (&spec.image, &inner.images) {
            (Some(key), Some(builder)) => {
                let (builder, key) = (builder.clone(), key.clone());
                let out = tokio::task::spawn_blocking(move || builder.build(&key))
                    .await
                    .map_err(|e| SandboxError::Io(std::io::Error::other(e)))??;
                Some(out.decision)
            }
            _ => None,
        };
        let address = inner.allocator.allocate()?;
        let n = inner.seq.fetch_add(1, Ordering::Relaxed);
        let id = format!("rt{n}-{:04x}", rand::random::<u16>());
        let scratch = inner.runtime_dir.join(&id);
        let socket_path = inner.runtime_dir.join(format!("{id}.sock"));

        let launched = async {
            tokio::fs::create_dir_all(&scratch).await?;
            let keeper = spawn_keeper(&scratch, &id, address, spec.flags, spec.keeper)?;
            let listener = UnixListener::bind(&socket_path)?;
            Ok::<_, SandboxError>((keeper, listener))
        }
        .await;
        let (keeper, listener) = match launched {
            Ok(v) => v,
            Err(e) => {
                inner.allocator.release(address);
                let _ = std::fs::remove_dir_all(&scratch);
                let _ = std::fs::remove_file(&socket_path);
                return Err(e);
            }
        };
        let pgid = keeper.id().map(|p| p as i32).unwrap_or(0);
        lock(&inner.seen_groups).insert(pgid);

        let action_groups = Arc::new(Mutex::new(HashSet::new()));
        let env = Arc::new(ExecutorEnv {
            runtime_id: id.clone(),
            scratch: scratch.clone(),
            address,
            flags: spec.flags,
            action_groups: action_groups.clone(),
            seen_groups: inner.seen_groups.clone(),
        });
        let server = tokio::spawn(executor::serve(listener, env, spec.startup_latency));

        let rt = Arc::new(SandboxRuntime {
            id: id.clone(),
            address,
            socket_path,
            scratch,
            flags: spec.flags,
            image,
            pgid,
            state: Mutex::new(RuntimeState::Starting),
            keeper: tokio::sync::Mutex::new(Some(keeper)),
            server: Mutex::new(Some(server)),
            action_groups,
            closing: CancellationToken::new(),
            close_lock: tokio::sync::Mutex::new(()),
            forced: AtomicBool::new(false),
            manager: Arc::downgrade(inner),
            allocator: inner.allocator.clone(),
        });
        lock(&inner.live).insert(id, Arc::downgrade(&rt));

        match tokio::time::timeout(spec.startup_timeout, rt.round_trip(&ActionRequest::ping())).await {
            Ok(Ok(_)) => {
                *lock(&rt.state) = RuntimeState::Ready;
                Ok(rt)
            }
            Ok(Err(e)) => {
                rt.close(inner.grace).await;
                Err(e)
            }
            Err(_) => {
                rt.close(inner.grace).await;
                Err(SandboxError::StartupTimeout(spec.startup_timeout))
            }
        }
    }

    pub fn live_runtimes(&self) -> Vec<Arc<SandboxRuntime>> {
        lock(&self.inner.live)
            .values()
            .filter_map(Weak::upgrade)
            .filter(|rt| rt.state() != RuntimeState::Closed)
            .collect()
    }

    pub fn live_count(&self) -> usize {
        self.live_runtimes().len()
    }

    /// Closes every runtime this manager still has open.
    pub async fn close_all(&self, grace: Duration) {
        let mut set = tokio::task::JoinSet::new();
        for rt in self.live_runtimes() {
            set.spawn(async move { rt.close(grace).await });
        }
        while set.join_next().await.is_some() {}
    }

    /// Live (non-zombie) processes in any group this manager ever created.
    pub fn orphan_census(&self) -> Vec<i32> {
        let groups: Vec<i32> = lock(&self.inner.seen_groups).iter().copied().collect();
        let mut dead = Vec::new();
        let mut alive = Vec::new();
        for g in groups {
            let members = if census::group_alive(g) { census::group_members(g) } else { Vec::new() };
            if members.is_empty() {
                dead.push(g);
            }
            alive.extend(members);
        }
        let mut seen = lock(&self.inner.seen_groups);
        for g in dead {
            seen.remove(&g);
        }
        alive
    }

    /// SIGKILLs anything left in known groups; returns how many processes were hit.
    pub fn kill_orphans(&self) -> usize {
        let groups: Vec<i32> = lock(&self.inner.seen_groups).iter().copied().collect();
        let mut hit = 0;
        for g in groups {
            if census::group_alive(g) {
                hit += census::group_members(g).len();
                census::signal_group(g, libc::SIGKILL);
            }
        }
        hit
    }
}

fn spawn_keeper(
    scratch: &Path,
    id: &str,
    address: Ipv4Addr,
    flags: RuntimeFlags,
    behavior: KeeperBehavior,
) -> Result<Child, SandboxError> {
    let script = match behavior {
        KeeperBehavior::Cooperative => "exec sleep 1000000",
        KeeperBehavior::IgnoreTerm => "while :; do sleep 1; done",
    };
    let mut cmd = Command::new("/bin/sh");
    cmd.arg("-c")
        .arg(script)
        .current_dir(scratch)
        .env("SANDBOX_ID", id)
        .env("SANDBOX_ADDR", address.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    if flags.fakeroot {
        cmd.env("SANDBOX_FAKEROOT", "1");
    }
    let ignore_term = behavior == KeeperBehavior::IgnoreTerm;
    // SAFETY: setsid and signal are async-signal-safe and touch no parent state.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setsid() == -1 {
                return Err(std::io::Error::last_os_error());
            }
            // Set before exec so there is no window where TERM still works;
            // the disposition is inherited by the keeper's children.
            if ignore_term {
                libc::signal(libc::SIGTERM, libc::SIG_IGN);
            }
            Ok(())
        });
    }
    Ok(cmd.spawn()?)
}

/// A simulated isolated environment: a session-leader child process, a
/// loopback address, a scratch directory and a Unix-socket action channel.
#[derive(Debug)]
pub struct SandboxRuntime {
    id: String,
    address: Ipv4Addr,
    socket_path: PathBuf,
    scratch: PathBuf,
    flags: RuntimeFlags,
    image: Option<CacheDecision>,
    pgid: i32,
    state: Mutex<RuntimeState>,
    keeper: tokio::sync::Mutex<Option<Child>>,
    server: Mutex<Option<JoinHandle<()>>>,
    action_groups: Arc<Mutex<HashSet<i32>>>,
    closing: CancellationToken,
    close_lock: tokio::sync::Mutex<()>,
    forced: AtomicBool,
    manager: Weak<ManagerInner>,
    allocator: Arc<LoopbackAllocator>,
}

impl SandboxRuntime {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn address(&self) -> Ipv4Addr {
        self.address
    }

    pub fn socket_path(&self) -> &Path {
        &self.socket_path
    }

    pub fn scratch_dir(&self) -> &Path {
        &self.scratch
    }

    pub fn flags(&self) -> RuntimeFlags {
        self.flags
    }

    /// Whether the runtime's image came from the cache, if one was requested.
    pub fn image_decision(&self) -> Option<CacheDecision> {
        self.image
    }

    /// Process group of the runtime's main process.
    pub fn pgid(&self) -> i32 {
        self.pgid
    }

    pub fn state(&self) -> RuntimeState {
        *lock(&self.state)
    }

    pub fn was_force_killed(&self) -> bool {
        self.forced.load(Ordering::Relaxed)
    }

    pub async fn execute(&self, req: ActionRequest) -> Result<ActionResult, SandboxError> {
        if self.state() != RuntimeState::Ready {
            return Err(SandboxError::RuntimeClosed);
        }
        // Slack covers channel overhead; the executor enforces the real limit.
        let limit = req.timeout + Duration::from_secs(2);
        tokio::select! {
            _ = self.closing.cancelled() => Err(SandboxError::RuntimeClosed),
            r = tokio::time::timeout(limit, self.round_trip(&req)) => match r {
                Ok(res) => res,
                Err(_) => Err(SandboxError::ActionTimeout { action_id: req.action_id.clone(), timeout: req.timeout }),
            },
        }
    }

    pub async fn ping(&self) -> Result<ActionResult, SandboxError> {
        self.execute(ActionRequest::ping()).await
    }

    async fn round_trip(&self, req: &ActionRequest) -> Result<ActionResult, SandboxError> {
        let mut stream = UnixStream::connect(&self.socket_path).await.map_err(|e| {
            if self.closing.is_cancelled() {
                SandboxError::RuntimeClosed
            } else {
                SandboxError::Io(e)
            }
        })?;
        send_json(&mut stream, req).await.map_err(|_| SandboxError::RuntimeClosed)?;
        let reply: ActionReply = match recv_json(&mut stream).await {
            Ok(Some(r)) => r,
            Ok(None) | Err(_) => return Err(SandboxError::RuntimeClosed),
        };
        if reply.action_id() != req.action_id {
            return Err(SandboxError::Protocol(format!(
                "reply for {} answered request {}",
                reply.action_id(),
                req.action_id
            )));
        }
        match reply {
            ActionReply::Ok(res) => Ok(res),
            ActionReply::Failed { failure: ActionFailure::Timeout, .. } => {
                Err(SandboxError::ActionTimeout { action_id: req.action_id.clone(), timeout: req.timeout })
            }
            ActionReply::Failed { failure: ActionFailure::Internal(msg), .. } => Err(SandboxError::Protocol(msg)),
        }
    }

    fn groups(&self) -> Vec<i32> {
        let mut groups = vec![self.pgid];
        groups.extend(lock(&self.action_groups).iter().copied());
        groups
    }

    async fn reap_keeper(&self) -> bool {
        let mut keeper = self.keeper.lock().await;
        match keeper.as_mut() {
            Some(child) => match child.try_wait() {
                Ok(Some(_)) | Err(_) => {
                    *keeper = None;
                    true
                }
                Ok(None) => false,
            },
            None => true,
        }
    }

    async fn all_gone(&self, groups: &[i32]) -> bool {
        self.reap_keeper().await && groups.iter().all(|&g| !census::group_alive(g))
    }

    /// Graceful stop, escalating to SIGKILL of every group after `grace`.
    /// Idempotent; concurrent callers wait for the first to finish.
    pub async fn close(&self, grace: Duration) -> CloseReport {
        let _guard = self.close_lock.lock().await;
        {
            let mut state = lock(&self.state);
            if *state == RuntimeState::Closed {
                return CloseReport { forced: false, already_closed: true };
            }
            *state = RuntimeState::Stopping;
        }
        self.closing.cancel();
        if let Some(server) = lock(&self.server).take() {
            server.abort();
        }

        let groups = self.groups();
        for &g in &groups {
            census::signal_group(g, libc::SIGTERM);
        }
        let deadline = Instant::now() + grace;
        let mut forced = false;
        loop {
            if self.all_gone(&groups).await {
                break;
            }
            if Instant::now() >= deadline {
                forced = true;
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        if forced {
            self.forced.store(true, Ordering::Relaxed);
            warn!(runtime = %self.id, "graceful stop timed out; killing process groups");
            for &g in &groups {
                census::signal_group(g, libc::SIGKILL);
            }
            if let Some(mut child) = self.keeper.lock().await.take() {
                let _ = tokio::time::timeout(Duration::from_secs(2), child.wait()).await;
            }
            let settle = Instant::now() + Duration::from_secs(1);
            while !self.all_gone(&groups).await && Instant::now() < settle {
                tokio::time::sleep(Duration::from_millis(10)).await;
            }
        }

        let _ = tokio::fs::remove_file(&self.socket_path).await;
        let _ = tokio::fs::remove_dir_all(&self.scratch).await;
        self.allocator.release(self.address);
        if let Some(mgr) = self.manager.upgrade() {
            if forced {
                mgr.forced_kills.fetch_add(1, Ordering::Relaxed);
            }
            lock(&mgr.live).remove(&self.id);
        }
        *lock(&self.state) = RuntimeState::Closed;
        debug!(runtime = %self.id, forced, "runtime closed");
        CloseReport { forced, already_closed: false }
    }
}

impl Drop for SandboxRuntime {
    fn drop(&mut self) {
        let state = *lock(&self.state);
        if state == RuntimeState::Closed {
            return;
        }
        // Dropped without close(): no grace period is possible here.
        for g in self.groups() {
            census::signal_group(g, libc::SIGKILL);
        }
        if let Some(server) = lock(&self.server).take() {
            server.abort();
        }
        let _ = std::fs::remove_file(&self.socket_path);
        let _ = std::fs::remove_dir_all(&self.scratch);
        self.allocator.release(self.address);
        if let Some(mgr) = self.manager.upgrade() {
            lock(&mgr.live).remove(&self.id);
        }
    }
}
