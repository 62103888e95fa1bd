//! The `youpi` command-line client.
//!
//! Exit codes: 0 success, 1 domain or transport error (the error code is
//! printed on stderr), 2 usage error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::client::{Client, ClientError, ClientResult};

#[derive(Debug, Parser)]
#[command(name = "youpi", version, about = "Command-line client for the youpi service")]
pub struct Cli {
    /// Service base URL.
    #[arg(long, env = "YOUPI_URL", default_value = "http://127.0.0.1:8642", global = true)]
    pub url: String,
    /// Session token from `youpi login`.
    #[arg(long, env = "YOUPI_TOKEN", hide_env_values = true, global = true)]
    pub token: Option<String>,
    /// Print raw response bodies.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Open a session and print its token.
    Login {
        login: String,
        #[arg(long, env = "YOUPI_PASSWORD", hide_env_values = true)]
        password: String,
    },
    /// Ingest FITS files found under one or more directories.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value = "MEGACAM")]
        instrument: String,
        #[arg(long, short)]
        recursive: bool,
    },
    /// Query the image catalog.
    Images(QueryArgs),
    #[command(subcommand)]
    Selections(SelectionCmd),
    #[command(subcommand)]
    Tags(TagCmd),
    #[command(subcommand)]
    Paths(PathCmd),
    #[command(subcommand)]
    Plugins(PluginCmd),
    #[command(subcommand)]
    Configs(ConfigCmd),
    #[command(subcommand)]
    Cart(CartCmd),
    /// Submit a cart item as a job.
    Submit {
        #[arg(long)]
        cart_item: i64,
        /// Policy id or label.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        description: Option<String>,
    },
    #[command(subcommand)]
    Jobs(JobCmd),
    /// Follow the job event stream.
    Watch {
        #[arg(long = "from", default_value_t = 0)]
        from_seq: i64,
        #[arg(long)]
        owner: Option<String>,
        #[arg(long)]
        job: Option<i64>,
        #[arg(long)]
        state: Option<String>,
        /// Stop after this many events.
        #[arg(long)]
        max_events: Option<usize>,
    },
    /// List cluster nodes and their running jobs.
    Nodes,
    #[command(subcommand)]
    Policies(PolicyCmd),
    #[command(subcommand)]
    Users(UserCmd),
    /// Change the permission mode of an object, e.g. `rw|r-|--`.
    Chmod { kind: String, id: i64, mode: String },
    /// Change owner and/or group of an object (admin).
    Chown {
        kind: String,
        id: i64,
        #[arg(long)]
        owner: Option<String>,
        #[arg(long)]
        group: Option<String>,
    },
}

#[derive(Debug, Args, Default)]
pub struct QueryArgs {
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub instrument: Option<String>,
    #[arg(long)]
    pub grade: Option<String>,
    #[arg(long)]
    pub tag: Option<String>,
    /// Filename glob (`*`, `?`, `[...]`).
    #[arg(long)]
    pub glob: Option<String>,
    #[arg(long)]
    pub ingestion: Option<i64>,
    #[arg(long)]
    pub date_from: Option<String>,
    #[arg(long)]
    pub date_to: Option<String>,
    /// Saved selection name.
    #[arg(long)]
    pub selection: Option<String>,
}

impl QueryArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut q = Vec::new();
        let mut add = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                q.push((k, v.clone()));
            }
        };
        add("run_id", &self.run_id);
        add("filter", &self.filter);
        add("instrument", &self.instrument.as_ref().map(|s| s.to_ascii_uppercase()));
        add("grade", &self.grade);
        add("has_tag", &self.tag);
        add("filename_glob", &self.glob);
        add("ingestion_id", &self.ingestion.map(|i| i.to_string()));
        add("date_from", &self.date_from);
        add("date_to", &self.date_to);
        add("in_selection", &self.selection);
        q
    }
}

#[derive(Debug, Subcommand)]
pub enum SelectionCmd {
    List,
    Show { id: i64 },
    /// Save explicit ids, or every image matching the query flags.
    Save {
        name: String,
        #[arg(long, value_delimiter = ',')]
        ids: Vec<i64>,
        #[command(flatten)]
        query: Box<QueryArgs>,
    },
    Merge {
        target: String,
        #[arg(required = true)]
        sources: Vec<i64>,
    },
    Delete { id: i64 },
    /// Import a `filename [checksum]` text file.
    Import { name: String, file: PathBuf },
    /// Import every *.txt file of a server-side directory.
    ImportDir { dir: PathBuf },
    Export { id: i64 },
}

#[derive(Debug, Subcommand)]
pub enum TagCmd {
    List,
    /// Mark (or with --unmark, unmark) images with a tag.
    Apply {
        tag: String,
        #[arg(long, value_delimiter = ',')]
        ids: Vec<i64>,
        /// Apply to every image of this saved selection.
        #[arg(long)]
        selection: Option<String>,
        #[arg(long)]
        unmark: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum PathCmd {
    List,
    Add { path: String },
}

#[derive(Debug, Subcommand)]
pub enum PluginCmd {
    List {
        #[arg(long)]
        enabled_only: bool,
    },
    Enable { id: String },
    Disable { id: String },
}

#[derive(Debug, Subcommand)]
pub enum ConfigCmd {
    List {
        #[arg(long)]
        plugin: Option<String>,
    },
    Add {
        name: String,
        #[arg(long)]
        plugin: String,
        #[arg(long, conflicts_with = "content")]
        file: Option<PathBuf>,
        #[arg(long)]
        content: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CartCmd {
    List,
    Show { id: i64 },
    Add {
        #[arg(long)]
        plugin: String,
        #[arg(long)]
        config: i64,
        #[arg(long, conflicts_with = "ids", required_unless_present = "ids")]
        selection: Option<i64>,
        #[arg(long, value_delimiter = ',')]
        ids: Vec<i64>,
        /// `label=<saved path id>`, repeatable.
        #[arg(long = "aux")]
        aux: Vec<String>,
        #[arg(long)]
        policy: Option<i64>,
        #[arg(long)]
        output_dir: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum JobCmd {
    List {
        #[arg(long)]
        owner: Option<String>,
        #[arg(long)]
        state: Option<String>,
    },
    Show { id: i64 },
    Events { id: i64 },
    Cancel { id: i64 },
}

#[derive(Debug, Subcommand)]
pub enum PolicyCmd {
    List,
    /// Dynamic policy from --match/--nomatch criteria, or static with --nodes.
    Add {
        label: String,
        /// `Attribute=regex`, repeatable.
        #[arg(long = "match")]
        matches: Vec<String>,
        /// `Attribute=regex`, repeatable.
        #[arg(long = "nomatch")]
        nomatches: Vec<String>,
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["matches", "nomatches"])]
        nodes: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum UserCmd {
    List,
    Add {
        login: String,
        #[arg(long)]
        password: String,
        #[arg(long = "group")]
        groups: Vec<String>,
        #[arg(long)]
        admin: bool,
    },
}

/// Failure of one invocation: domain errors exit 1, usage errors exit 2.
#[derive(Debug)]
pub enum Failure {
    Client(ClientError),
    Usage(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Client(e)
    }
}

type Out = Result<(), Failure>;

fn parse(body: &str) -> Value {
    serde_json::from_str(body).unwrap_or(Value::Null)
}

fn s(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn kv(spec: &str) -> Result<(String, String), Failure> {
    spec.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| Failure::Usage(format!("expected key=value, got {spec:?}")))
}

pub struct Runner {
    client: Client,
    json: bool,
}

impl Runner {
    fn emit(&self, body: &str, human: impl FnOnce(&Value)) {
        if self.json {
            println!("{body}");
        } else {
            human(&parse(body));
        }
    }

    fn emit_list(&self, body: &str, line: impl Fn(&Value) -> String) {
        self.emit(body, |v| {
            for item in v.as_array().into_iter().flatten() {
                println!("{}", line(item));
            }
        })
    }

    fn emit_one(&self, body: &str, line: impl Fn(&Value) -> String) {
        self.emit(body, |v| println!("{}", line(v)))
    }

    fn image_ids(&self, q: &QueryArgs) -> ClientResult<Vec<i64>> {
        let body = self.client.get("/api/images", &q.pairs())?;
        Ok(parse(&body)
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|i| i["image_id"].as_i64())
            .collect())
    }

    pub fn run(&self, cmd: Command) -> Out {
        let c = &self.client;
        match cmd {
            Command::Login { login, password } => {
                let body = c.post("/api/auth", &json!({ "login": login, "password": password }))?;
                self.emit_one(&body, |v| s(&v["token"]));
            }
            Command::Ingest {
                paths,
                instrument,
                recursive,
            } => {
                let paths: Vec<String> = paths
                    .iter()
                    .map(|p| std::fs::canonicalize(p).unwrap_or_else(|_| p.clone()).to_string_lossy().into_owned())
                    .collect();
                let body = c.post(
                    "/api/ingest",
                    &json!({ "paths": paths, "instrument": instrument.to_ascii_uppercase(), "recursive": recursive }),
                )?;
                self.emit(&body, |v| {
                    println!(
                        "ingestion {} (job {}): scanned={} ingested={} skipped={} failed={}",
                        s(&v["ingestion_id"]),
                        s(&v["job_id"]),
                        s(&v["scanned"]),
                        s(&v["ingested"]),
                        s(&v["skipped_duplicates"]),
                        v["failed"].as_array().map_or(0, |a| a.len())
                    );
                    for f in v["failed"].as_array().into_iter().flatten() {
                        println!("failed\t{}\t{}", s(&f["code"]), s(&f["path"]));
                    }
                });
            }
            Command::Images(q) => {
                let body = c.get("/api/images", &q.pairs())?;
                self.emit_list(&body, |i| {
                    let tags: Vec<String> = i["tags"].as_array().into_iter().flatten().map(s).collect();
                    format!(
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        s(&i["image_id"]),
                        s(&i["filename"]),
                        s(&i["run_id"]),
                        s(&i["filter"]),
                        s(&i["object"]),
                        s(&i["grade"]),
                        if tags.is_empty() { "-".into() } else { tags.join(",") }
                    )
                });
            }
            Command::Selections(cmd) => self.selections(cmd)?,
            Command::Tags(TagCmd::List) => {
                let body = c.get("/api/tags", &[])?;
                self.emit_list(&body, |t| format!("{}\t{}\t{}", s(&t["tag_id"]), s(&t["name"]), s(&t["mode"])));
            }
            Command::Tags(TagCmd::Apply {
                tag,
                mut ids,
                selection,
                unmark,
            }) => {
                if let Some(sel) = selection {
                    ids.extend(self.image_ids(&QueryArgs {
                        selection: Some(sel),
                        ..Default::default()
                    })?);
                }
                if ids.is_empty() {
                    return Err(Failure::Usage("give --ids or --selection".into()));
                }
                let body = c.post("/api/tags/apply", &json!({ "tag": tag, "image_ids": ids, "mark": !unmark }))?;
                self.emit_one(&body, |v| format!("affected={}", s(&v["affected"])));
            }
            Command::Paths(PathCmd::List) => {
                let body = c.get("/api/paths", &[])?;
                self.emit_list(&body, |p| format!("{}\t{}", s(&p["path_id"]), s(&p["path"])));
            }
            Command::Paths(PathCmd::Add { path }) => {
                let body = c.post("/api/paths", &json!({ "path": path }))?;
                self.emit_one(&body, |p| format!("{}\t{}", s(&p["path_id"]), s(&p["path"])));
            }
            Command::Plugins(PluginCmd::List { enabled_only }) => {
                let body = c.get("/api/plugins", &[("enabled_only", enabled_only.to_string())])?;
                self.emit_list(&body, |p| {
                    format!(
                        "{}\t{}\t{}\t{}",
                        s(&p["plugin_id"]),
                        if p["enabled"].as_bool() == Some(true) { "enabled" } else { "disabled" },
                        s(&p["display_name"]),
                        s(&p["executable"])
                    )
                });
            }
            Command::Plugins(PluginCmd::Enable { id }) => self.enable(&id, true)?,
            Command::Plugins(PluginCmd::Disable { id }) => self.enable(&id, false)?,
            Command::Configs(ConfigCmd::List { plugin }) => {
                let q: Vec<(&str, String)> = plugin.map(|p| ("plugin_id", p)).into_iter().collect();
                let body = c.get("/api/configs", &q)?;
                self.emit_list(&body, |f| format!("{}\t{}\t{}", s(&f["config_id"]), s(&f["plugin_id"]), s(&f["name"])));
            }
            Command::Configs(ConfigCmd::Add {
                name,
                plugin,
                file,
                content,
            }) => {
                let content = match (file, content) {
                    (Some(f), _) => std::fs::read_to_string(&f).map_err(|e| Failure::Usage(format!("{}: {e}", f.display())))?,
                    (None, Some(c)) => c,
                    (None, None) => String::new(),
                };
                let body = c.post("/api/configs", &json!({ "name": name, "plugin_id": plugin, "content": content }))?;
                self.emit_one(&body, |f| format!("{}\t{}\t{}", s(&f["config_id"]), s(&f["plugin_id"]), s(&f["name"])));
            }
            Command::Cart(cmd) => self.cart(cmd)?,
            Command::Submit {
                cart_item,
                policy,
                description,
            } => {
                let body = c.post(
                    "/api/jobs",
                    &json!({ "cart_item_id": cart_item, "policy": policy, "description": description }),
                )?;
                self.emit_one(&body, job_line);
            }
            Command::Jobs(JobCmd::List { owner, state }) => {
                let mut q = Vec::new();
                if let Some(o) = owner {
                    q.push(("owner", o));
                }
                if let Some(st) = state {
                    q.push(("state", st.to_ascii_uppercase()));
                }
                let body = c.get("/api/jobs", &q)?;
                self.emit_list(&body, job_line);
            }
            Command::Jobs(JobCmd::Show { id }) => {
                let body = c.get(&format!("/api/jobs/{id}"), &[])?;
                self.emit(&body, |v| {
                    println!("{}", job_line(v));
                    print!("{}", v["submission_text"].as_str().unwrap_or_default());
                });
            }
            Command::Jobs(JobCmd::Events { id }) => {
                let body = c.get(&format!("/api/jobs/{id}/events"), &[])?;
                self.emit_list(&body, event_line);
            }
            Command::Jobs(JobCmd::Cancel { id }) => {
                let body = c.post(&format!("/api/jobs/{id}/cancel"), &json!({}))?;
                self.emit_one(&body, job_line);
            }
            Command::Watch {
                from_seq,
                owner,
                job,
                state,
                max_events,
            } => {
                let mut q = vec![("from_seq", from_seq.to_string())];
                if let Some(o) = owner {
                    q.push(("owner", o));
                }
                if let Some(j) = job {
                    q.push(("job_id", j.to_string()));
                }
                if let Some(st) = state {
                    q.push(("state", st.to_ascii_uppercase()));
                }
                let mut stream = c.events(&q)?;
                let mut seen = 0;
                while max_events.is_none_or(|m| seen < m) {
                    let Some((_, data)) = stream.next_frame()? else { break };
                    if self.json {
                        println!("{data}");
                    } else {
                        println!("{}", event_line(&parse(&data)));
                    }
                    seen += 1;
                }
            }
            Command::Nodes => {
                let body = c.get("/api/nodes", &[])?;
                self.emit_list(&body, |n| {
                    let running: Vec<String> = n["running_jobs"].as_array().into_iter().flatten().map(s).collect();
                    format!(
                        "{}\tslots={}\trunning={}\tMemory={}\tOpSys={}\tArch={}",
                        s(&n["name"]),
                        s(&n["slots"]),
                        if running.is_empty() { "-".into() } else { running.join(",") },
                        s(&n["attributes"]["Memory"]),
                        s(&n["attributes"]["OpSys"]),
                        s(&n["attributes"]["Arch"]),
                    )
                });
            }
            Command::Policies(PolicyCmd::List) => {
                let body = c.get("/api/policies", &[])?;
                self.emit_list(&body, policy_line);
            }
            Command::Policies(PolicyCmd::Add {
                label,
                matches,
                nomatches,
                nodes,
            }) => {
                let payload = if !nodes.is_empty() {
                    json!({ "label": label, "kind": "static", "node_names": nodes })
                } else {
                    let mut criteria = Vec::new();
                    for (op, specs) in [("MATCH", &matches), ("NOMATCH", &nomatches)] {
                        for spec in specs {
                            let (a, p) = kv(spec)?;
                            criteria.push(json!({ "attribute": a, "op": op, "pattern": p }));
                        }
                    }
                    json!({ "label": label, "kind": "dynamic", "criteria": criteria })
                };
                let body = c.post("/api/policies", &payload)?;
                self.emit_one(&body, policy_line);
            }
            Command::Users(UserCmd::List) => {
                let body = c.get("/api/users", &[])?;
                self.emit_list(&body, user_line);
            }
            Command::Users(UserCmd::Add {
                login,
                password,
                groups,
                admin,
            }) => {
                let body = c.post(
                    "/api/users",
                    &json!({ "login": login, "password": password, "groups": groups, "is_admin": admin }),
                )?;
                self.emit_one(&body, user_line);
            }
            Command::Chmod { kind, id, mode } => {
                let body = c.post("/api/chmod", &json!({ "kind": kind, "id": id, "mode": mode }))?;
                self.emit_one(&body, ownership_line);
            }
            Command::Chown { kind, id, owner, group } => {
                let body = c.post("/api/chown", &json!({ "kind": kind, "id": id, "owner": owner, "group": group }))?;
                self.emit_one(&body, ownership_line);
            }
        }
        Ok(())
    }

    fn enable(&self, id: &str, enabled: bool) -> Out {
        let body = self
            .client
            .post(&format!("/api/plugins/{id}/enable"), &json!({ "enabled": enabled }))?;
        self.emit_one(&body, |p| {
            format!(
                "{}\t{}",
                s(&p["plugin_id"]),
                if p["enabled"].as_bool() == Some(true) { "enabled" } else { "disabled" }
            )
        });
        Ok(())
    }

    fn selections(&self, cmd: SelectionCmd) -> Out {
        let c = &self.client;
        match cmd {
            SelectionCmd::List => {
                let body = c.get("/api/selections", &[])?;
                self.emit_list(&body, |x| format!("{}\t{}\t{}\t{}", s(&x["selection_id"]), s(&x["name"]), s(&x["count"]), s(&x["mode"])));
            }
            SelectionCmd::Show { id } => {
                let body = c.get(&format!("/api/selections/{id}"), &[])?;
                self.emit_one(&body, selection_line);
            }
            SelectionCmd::Save { name, ids, query } => {
                let ids = if ids.is_empty() { self.image_ids(&query)? } else { ids };
                let body = c.post("/api/selections", &json!({ "name": name, "image_ids": ids }))?;
                self.emit_one(&body, selection_line);
            }
            SelectionCmd::Merge { target, sources } => {
                let body = c.post("/api/selections/merge", &json!({ "target_name": target, "sources": sources }))?;
                self.emit_one(&body, selection_line);
            }
            SelectionCmd::Delete { id } => {
                let body = c.delete(&format!("/api/selections/{id}"))?;
                self.emit_one(&body, |v| format!("deleted {}", s(&v["deleted"])));
            }
            SelectionCmd::Import { name, file } => {
                let text = std::fs::read_to_string(&file).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
                let body = c.post("/api/selections/import", &json!({ "name": name, "text": text }))?;
                self.emit(&body, |v| {
                    println!("{}", selection_line(&v["selection"]));
                    println!("{}", report_line(&v["report"]));
                });
            }
            SelectionCmd::ImportDir { dir } => {
                let dir = std::fs::canonicalize(&dir).unwrap_or(dir);
                let body = c.post("/api/selections/import-dir", &json!({ "dir": dir }))?;
                self.emit_list(&body, |e| match e["error"].is_null() {
                    true => format!("{}\t{}\t{}", s(&e["file"]), selection_line(&e["selection"]), report_line(&e["report"])),
                    false => format!("{}\terror\t{}\t{}", s(&e["file"]), s(&e["error"]["code"]), s(&e["error"]["message"])),
                });
            }
            SelectionCmd::Export { id } => {
                let body = c.get(&format!("/api/selections/{id}/export"), &[])?;
                print!("{body}");
            }
        }
        Ok(())
    }

    fn cart(&self, cmd: CartCmd) -> Out {
        let c = &self.client;
        match cmd {
            CartCmd::List => {
                let body = c.get("/api/cart", &[])?;
                self.emit_list(&body, cart_line);
            }
            CartCmd::Show { id } => {
                let body = c.get(&format!("/api/cart/{id}"), &[])?;
                self.emit_one(&body, cart_line);
            }
            CartCmd::Add {
                plugin,
                config,
                selection,
                ids,
                aux,
                policy,
                output_dir,
            } => {
                let source = match selection {
                    Some(sid) => json!({ "selection": sid }),
                    None => json!({ "images": ids }),
                };
                let mut aux_paths = serde_json::Map::new();
                for a in &aux {
                    let (label, id) = kv(a)?;
                    let id: i64 = id
                        .parse()
                        .map_err(|_| Failure::Usage(format!("aux path id must be an integer in {a:?}")))?;
                    aux_paths.insert(label, json!(id));
                }
                let body = c.post(
                    "/api/cart",
                    &json!({
                        "plugin_id": plugin,
                        "image_source": source,
                        "config_id": config,
                        "aux_paths": aux_paths,
                        "policy_id": policy,
                        "output_dir": output_dir,
                    }),
                )?;
                self.emit_one(&body, |v| format!("{}\tinputs={}", cart_line(v), s(&v["input_count"])));
            }
        }
        Ok(())
    }
}

fn job_line(j: &Value) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        s(&j["job_id"]),
        s(&j["kind"]),
        s(&j["state"]),
        s(&j["assigned_node"]),
        s(&j["owner_login"]),
        s(&j["description"])
    )
}

/// `seq job status host running_time owner`
pub fn event_line(e: &Value) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{:.1}\t{}",
        s(&e["seq"]),
        s(&e["job_id"]),
        s(&e["status"]),
        s(&e["remote_host"]),
        e["running_time"].as_f64().unwrap_or(0.0),
        s(&e["owner"])
    )
}

fn selection_line(x: &Value) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        s(&x["selection_id"]),
        s(&x["name"]),
        x["image_ids"].as_array().map_or(0, |a| a.len()),
        s(&x["mode"])
    )
}

fn report_line(r: &Value) -> String {
    let n = |k: &str| r[k].as_array().map_or(0, |a| a.len());
    format!(
        "resolved={} unresolved={} ambiguous={} checksum_mismatch={}",
        s(&r["resolved"]),
        n("unresolved"),
        n("ambiguous"),
        n("checksum_mismatch")
    )
}

fn cart_line(v: &Value) -> String {
    format!(
        "{}\t{}\tconfig={}\tpolicy={}\t{}",
        s(&v["item_id"]),
        s(&v["plugin_id"]),
        s(&v["config_id"]),
        s(&v["policy_id"]),
        v["image_source"]
    )
}

fn policy_line(p: &Value) -> String {
    let body = match p["kind"].as_str() {
        Some("static") => p["node_names"].to_string(),
        _ => p["criteria"].to_string(),
    };
    format!("{}\t{}\t{}\t{}", s(&p["policy_id"]), s(&p["label"]), s(&p["kind"]), body)
}

fn user_line(u: &Value) -> String {
    let groups: Vec<String> = u["groups"].as_array().into_iter().flatten().map(s).collect();
    format!(
        "{}\t{}\t{}{}",
        s(&u["user_id"]),
        s(&u["login"]),
        groups.join(","),
        if u["is_admin"].as_bool() == Some(true) { "\tadmin" } else { "" }
    )
}

fn ownership_line(o: &Value) -> String {
    format!("owner={} group={} mode={}", s(&o["owner"]), s(&o["group"]), s(&o["mode"]))
}

/// Runs a parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let runner = Runner {
        client: Client::new(&cli.url, cli.token),
        json: cli.json,
    };
    match runner.run(cli.command) {
        Ok(()) => 0,
        Err(Failure::Client(e)) => {
            if runner.json {
                if let ClientError::Api(api) = &e {
                    eprintln!("{}", serde_json::to_string(api).unwrap_or_default());
                }
            }
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            2
        }
    }
}
