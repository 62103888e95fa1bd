//! Server bootstrap: environment configuration, the scheduler loop and the
//! HTTP listener.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};

use youpi_core::cluster::{parse_inventory, NodeSpec};
use youpi_core::ingest::sink_from_spec;
use youpi_core::service::ServiceConfig;
use youpi_core::clock::SystemClock;
use youpi_core::Youpi;

pub const DEFAULT_BIND_ADDR: &str = "127.0.0.1:8642";
pub const DEFAULT_TICK_MS: u64 = 250;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub db_path: PathBuf,
    pub bind_addr: String,
    pub nodes_file: Option<PathBuf>,
    pub tick: Duration,
    pub notify_sink: String,
    pub jobs_dir: PathBuf,
    pub tools_dir: Option<PathBuf>,
    pub admin_password: Option<String>,
    pub session_ttl: chrono::Duration,
}

fn env(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

impl ServerConfig {
    /// Reads `YOUPI_*` variables. Unset values fall back to defaults.
    pub fn from_env() -> Result<Self> {
        let db_path = PathBuf::from(env("YOUPI_DB_PATH").unwrap_or_else(|| "youpi.db".into()));
        let jobs_dir = env("YOUPI_JOBS_DIR").map(PathBuf::from).unwrap_or_else(|| {
            db_path
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(|p| p.join("jobs"))
                .unwrap_or_else(|| PathBuf::from("jobs"))
        });
        let tick_ms = match env("YOUPI_TICK_MS") {
            Some(v) => v.parse().context("YOUPI_TICK_MS must be an integer")?,
            None => DEFAULT_TICK_MS,
        };
        let ttl_secs: i64 = match env("YOUPI_SESSION_TTL_SECS") {
            Some(v) => v.parse().context("YOUPI_SESSION_TTL_SECS must be an integer")?,
            None => youpi_core::service::DEFAULT_SESSION_TTL_HOURS * 3600,
        };
        let tools_dir = env("YOUPI_TOOLS_DIR")
            .map(PathBuf::from)
            .or_else(|| std::env::current_exe().ok().and_then(|p| p.parent().map(PathBuf::from)));
        Ok(ServerConfig {
            db_path,
            bind_addr: env("YOUPI_BIND_ADDR").unwrap_or_else(|| DEFAULT_BIND_ADDR.into()),
            nodes_file: env("YOUPI_NODES_FILE").map(PathBuf::from),
            tick: Duration::from_millis(tick_ms.max(1)),
            notify_sink: env("YOUPI_NOTIFY_SINK").unwrap_or_else(|| "stdout".into()),
            jobs_dir,
            tools_dir,
            admin_password: env("YOUPI_ADMIN_PASSWORD"),
            session_ttl: chrono::Duration::seconds(ttl_secs),
        })
    }
}

/// Inventory used when no nodes file is configured.
pub fn default_inventory() -> Vec<NodeSpec> {
    (1..=3).map(|i| NodeSpec::new(&format!("node{i:02}"), 2)).collect()
}

pub fn open_service(cfg: &ServerConfig) -> Result<Arc<Youpi>> {
    let inventory = match &cfg.nodes_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_inventory(&text)?
        }
        None => default_inventory(),
    };
    let mut sc = ServiceConfig::new(&cfg.jobs_dir);
    sc.db_path = Some(cfg.db_path.clone());
    sc.tools_dir = cfg.tools_dir.clone();
    sc.inventory = inventory;
    sc.session_ttl = cfg.session_ttl;
    let svc = Youpi::open_with(sc, Arc::new(SystemClock), Arc::from(sink_from_spec(&cfg.notify_sink)))?;
    if let Some(pw) = &cfg.admin_password {
        if svc.bootstrap_admin(pw)?.is_some() {
            tracing::info!("created initial admin account");
        }
    }
    Ok(Arc::new(svc))
}

/// Ticks the scheduler on a dedicated thread until `stop` is set.
pub fn spawn_scheduler(svc: Arc<Youpi>, period: Duration, stop: Arc<AtomicBool>) -> std::thread::JoinHandle<()> {
    std::thread::Builder::new()
        .name("scheduler".into())
        .spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                if let Err(e) = svc.tick() {
                    tracing::error!(error = %e, "scheduler tick failed");
                }
                std::thread::sleep(period);
            }
        })
        .expect("spawn scheduler thread")
}

/// Binds, prints `listening on <addr>` and serves until interrupted.
pub async fn run(cfg: ServerConfig) -> Result<()> {
    let svc = tokio::task::spawn_blocking({
        let cfg = cfg.clone();
        move || open_service(&cfg)
    })
    .await??;
    let stop = Arc::new(AtomicBool::new(false));
    let sched = spawn_scheduler(Arc::clone(&svc), cfg.tick, Arc::clone(&stop));

    let listener = tokio::net::TcpListener::bind(&cfg.bind_addr)
        .await
        .with_context(|| format!("binding {}", cfg.bind_addr))?;
    let addr: SocketAddr = listener.local_addr()?;
    println!("listening on {addr}");
    // Event streams never end on their own, so shutdown drops open
    // connections instead of draining them.
    tokio::select! {
        r = axum::serve(listener, crate::api::router(Arc::clone(&svc))) => r?,
        _ = tokio::signal::ctrl_c() => {}
    }
    stop.store(true, Ordering::Relaxed);
    let _ = sched.join();
    svc.cluster().kill_all();
    Ok(())
}
