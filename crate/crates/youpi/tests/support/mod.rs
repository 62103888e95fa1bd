#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use tempfile::TempDir;

use youpi::client::Client;

pub const ADMIN_PASSWORD: &str = "admin-secret";

/// A `youpi-server` child process on an ephemeral port.
pub struct Server {
    pub dir: TempDir,
    pub url: String,
    child: Child,
    pub stdout: Arc<Mutex<Vec<String>>>,
}

pub struct Options {
    pub nodes: Option<String>,
    pub tick_ms: u64,
}

impl Default for Options {
    fn default() -> Self {
        Options { nodes: None, tick_ms: 50 }
    }
}

impl Server {
    pub fn start() -> Server {
        Server::start_with(Options::default())
    }

    pub fn start_with(opts: Options) -> Server {
        let dir = tempfile::tempdir().unwrap();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_youpi-server"));
        for (k, _) in std::env::vars() {
            if k.starts_with("YOUPI_") {
                cmd.env_remove(k);
            }
        }
        cmd.env("YOUPI_DB_PATH", dir.path().join("youpi.db"))
            .env("YOUPI_BIND_ADDR", "127.0.0.1:0")
            .env("YOUPI_ADMIN_PASSWORD", ADMIN_PASSWORD)
            .env("YOUPI_TICK_MS", opts.tick_ms.to_string())
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        if let Some(text) = &opts.nodes {
            let p = dir.path().join("nodes.txt");
            std::fs::write(&p, text).unwrap();
            cmd.env("YOUPI_NODES_FILE", p);
        }
        let mut child = cmd.spawn().expect("spawn youpi-server");
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let first = lines.next().expect("server exited early").unwrap();
        let addr = first.strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected line {first:?}"));
        let url = format!("http://{addr}");
        let stdout = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&stdout);
        std::thread::spawn(move || {
            for l in lines.map_while(Result::ok) {
                sink.lock().unwrap().push(l);
            }
        });
        Server { dir, url, child, stdout }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn client(&self, token: Option<&str>) -> Client {
        Client::new(&self.url, token.map(String::from))
    }

    pub fn login(&self, login: &str, password: &str) -> String {
        let body = self.client(None).post("/api/auth", &json!({ "login": login, "password": password })).unwrap();
        serde_json::from_str::<Value>(&body).unwrap()["token"].as_str().unwrap().to_string()
    }

    pub fn admin_token(&self) -> String {
        self.login("admin", ADMIN_PASSWORD)
    }

    /// Creates a user through the API and returns a session token.
    pub fn user(&self, admin: &str, login: &str, groups: &[&str]) -> String {
        let pw = format!("{login}-pw");
        self.client(Some(admin))
            .post(
                "/api/users",
                &json!({ "login": login, "password": pw, "groups": groups, "is_admin": false }),
            )
            .unwrap();
        self.login(login, &pw)
    }

    /// Runs the `youpi` binary against this server.
    pub fn cli(&self, token: Option<&str>, args: &[&str]) -> CliOutput {
        cli(&self.url, token, args)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug)]
pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CliOutput {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {self:?}"))
    }

    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "{self:?}");
        self
    }
}

pub fn cli(url: &str, token: Option<&str>, args: &[&str]) -> CliOutput {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_youpi"));
    for (k, _) in std::env::vars() {
        if k.starts_with("YOUPI_") {
            cmd.env_remove(k);
        }
    }
    cmd.env("YOUPI_URL", url).args(args);
    if let Some(t) = token {
        cmd.env("YOUPI_TOKEN", t);
    }
    let out = cmd.output().expect("run youpi");
    CliOutput {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = std::time::Instant::now() + timeout;
    while std::time::Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    f()
}

pub fn str_path(p: &Path) -> &str {
    p.to_str().unwrap()
}
