//! The application facade: one method per user-facing operation, each
//! taking the authenticated caller. The HTTP layer is a thin shell over it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::accounts::{self, Session, UserAccount};
use crate::authz::{Action, PermissionMode, Principal};
use crate::catalog::{self, Grade, ImageId, ImageRecord, ImportReport, Query, SavedPath, Selection, SelectionId, SelectionSummary, Tag};
use crate::clock::{Clock, SystemClock};
use crate::cluster::events::job_history;
use crate::cluster::job::{list_jobs, JobFilter};
use crate::cluster::policy::{find_policy, get_policy, list_policies, create_policy, NewPolicy};
use crate::cluster::scheduler::NodeStatus;
use crate::cluster::{
    render_requirements, Cluster, EventBus, EventFilter, Job, JobKind, JobSpec, MonitorEvent, NodeSpec, Policy, Subscription, Transition,
};
use crate::error::{Error, Result};
use crate::ingest::{self, IngestRequest, IngestionReport, NotificationSink, StdoutSink};
use crate::instrument::ProfileSet;
use crate::objects::{self, ObjectKind};
use crate::plugin::{self, BuiltCommand, CartItem, CommandInputs, ConfigFile, NewCartItem, PluginDescriptor};
use crate::store::Store;

pub const DEFAULT_SESSION_TTL_HOURS: i64 = 12;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// `None` keeps the catalog in memory.
    pub db_path: Option<PathBuf>,
    /// Root of the per-job working directories.
    pub jobs_root: PathBuf,
    /// Directory holding the `youpi-mock-*` executables.
    pub tools_dir: Option<PathBuf>,
    pub inventory: Vec<NodeSpec>,
    pub profiles: ProfileSet,
    pub session_ttl: Duration,
}

impl ServiceConfig {
    pub fn new(jobs_root: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            db_path: None,
            jobs_root: jobs_root.into(),
            tools_dir: None,
            inventory: Vec::new(),
            profiles: ProfileSet::builtin(),
            session_ttl: Duration::hours(DEFAULT_SESSION_TTL_HOURS),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewUser {
    pub login: String,
    pub password: String,
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub is_admin: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub cart_item_id: i64,
    /// Policy id or label; overrides the item's own policy.
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
}

/// One entry of a directory import: either a selection with its report, or
/// the error that stopped that file.
#[derive(Debug, Clone, Serialize)]
pub struct BatchImportEntry {
    pub file: String,
    pub selection: Option<Selection>,
    pub report: Option<ImportReport>,
    pub error: Option<BatchImportError>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchImportError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CartItemView {
    #[serde(flatten)]
    pub item: CartItem,
    pub input_count: usize,
}

pub struct Youpi {
    store: Arc<Store>,
    bus: Arc<EventBus>,
    cluster: Arc<Cluster>,
    clock: Arc<dyn Clock>,
    sink: Arc<dyn NotificationSink>,
    profiles: ProfileSet,
    session_ttl: Duration,
}

impl std::fmt::Debug for Youpi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Youpi").field("store", &self.store).finish()
    }
}

impl Youpi {
    pub fn open(cfg: ServiceConfig) -> Result<Self> {
        Self::open_with(cfg, Arc::new(SystemClock), Arc::new(StdoutSink))
    }

    pub fn open_with(cfg: ServiceConfig, clock: Arc<dyn Clock>, sink: Arc<dyn NotificationSink>) -> Result<Self> {
        let store = Arc::new(match &cfg.db_path {
            Some(p) => Store::open(p)?,
            None => Store::in_memory()?,
        });
        store.write(|tx| plugin::install_builtins(tx, cfg.tools_dir.as_deref()))?;
        let bus = Arc::new(EventBus::new(Arc::clone(&store))?);
        let cluster = Arc::new(Cluster::new(
            Arc::clone(&store),
            Arc::clone(&bus),
            cfg.jobs_root.clone(),
            cfg.inventory.clone(),
            clock.now(),
        )?);
        Ok(Youpi {
            store,
            bus,
            cluster,
            clock,
            sink,
            profiles: cfg.profiles,
            session_ttl: cfg.session_ttl,
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn cluster(&self) -> &Arc<Cluster> {
        &self.cluster
    }

    pub fn bus(&self) -> &Arc<EventBus> {
        &self.bus
    }

    pub fn now(&self) -> chrono::DateTime<chrono::Utc> {
        self.clock.now()
    }

    // ------------------------------------------------------------ accounts

    /// Creates `admin` with the given password when no account exists yet.
    pub fn bootstrap_admin(&self, password: &str) -> Result<Option<UserAccount>> {
        let now = self.now();
        self.store.write(|tx| {
            if accounts::user_count(tx)? > 0 {
                return Ok(None);
            }
            accounts::create_user(tx, "admin", password, &[], true, now).map(Some)
        })
    }

    /// Direct account creation, for bootstrapping and tests.
    pub fn create_user_unchecked(&self, u: &NewUser) -> Result<UserAccount> {
        let now = self.now();
        self.store
            .write(|tx| accounts::create_user(tx, &u.login, &u.password, &u.groups, u.is_admin, now))
    }

    pub fn create_user(&self, caller: &Principal, u: &NewUser) -> Result<UserAccount> {
        if !caller.is_admin {
            return Err(Error::PermissionDenied);
        }
        self.create_user_unchecked(u)
    }

    pub fn list_users(&self, _caller: &Principal) -> Result<Vec<UserAccount>> {
        self.store.read(accounts::list_users)
    }

    pub fn login(&self, login: &str, password: &str) -> Result<Session> {
        let now = self.now();
        self.store
            .write(|tx| accounts::authenticate(tx, login, password, now, self.session_ttl))
    }

    pub fn principal_for_token(&self, token: &str) -> Result<Principal> {
        let now = self.now();
        self.store.read(|c| accounts::resolve_token(c, token, now))
    }

    pub fn principal_for_login(&self, login: &str) -> Result<Principal> {
        self.store.read(|c| {
            let uid = accounts::user_id(c, login)?;
            accounts::principal(c, uid)
        })
    }

    // ----------------------------------------------------------- ingestion

    /// Scans, then ingests synchronously inside an INGESTION job. The report
    /// is also delivered to the notification sink.
    pub fn ingest(&self, user: &Principal, req: &IngestRequest) -> Result<IngestionReport> {
        if req.paths.is_empty() {
            return Err(Error::InvalidArgument("no paths given".into()));
        }
        let profile = self.profiles.get(req.instrument)?.clone();
        let candidates = ingest::scan_data_paths(&req.paths, req.recursive)?;
        if candidates.is_empty() {
            return Err(Error::EmptyScan);
        }
        let started = self.now();
        let ingestion_id = self
            .store
            .write(|tx| ingest::begin_ingestion(tx, user.user_id, req.instrument, &req.paths, started))?;
        let mut argv = vec![
            "youpi-ingest".to_string(),
            "--instrument".to_string(),
            req.instrument.as_str().to_string(),
        ];
        argv.extend(req.paths.iter().map(|p| p.to_string_lossy().into_owned()));
        let job = self.cluster.begin_internal(
            JobSpec {
                kind: JobKind::Ingestion,
                cart_item_id: None,
                description: format!("ingestion {ingestion_id} ({} files, {})", candidates.len(), req.instrument.as_str()),
                requirements_expr: String::new(),
            },
            user,
            argv,
            started,
        )?;
        let mut report = IngestionReport {
            ingestion_id,
            job_id: Some(job.job_id),
            instrument: req.instrument,
            requested_paths: req.paths.iter().map(|p| p.to_string_lossy().into_owned()).collect(),
            scanned: 0,
            ingested: 0,
            skipped_duplicates: 0,
            failed: Vec::new(),
            started_at: started,
            finished_at: None,
        };
        ingest::ingest_candidates(&self.store, &candidates, &profile, user, &mut report);
        let finished = self.now();
        report.finished_at = Some(finished);
        self.store.write(|tx| ingest::finish_ingestion(tx, &report))?;
        let all_failed = report.failed.len() == report.scanned;
        self.cluster.finish_internal(job.job_id, !all_failed, finished)?;
        if let Err(e) = self.sink.notify(&user.user_id.to_string(), &report) {
            tracing::warn!(error = %e, "notification sink failed");
        }
        Ok(report)
    }

    pub fn get_ingestion(&self, _user: &Principal, id: i64) -> Result<IngestionReport> {
        self.store.read(|c| ingest::get_ingestion(c, id))
    }

    // ------------------------------------------------------------- catalog

    pub fn query_images(&self, user: &Principal, q: &Query) -> Result<Vec<ImageRecord>> {
        self.store.read(|c| catalog::query_images(c, q, user))
    }

    pub fn set_grade(&self, user: &Principal, ids: &[ImageId], grade: Option<Grade>) -> Result<Vec<ImageRecord>> {
        self.store
            .write(|tx| ids.iter().map(|id| catalog::set_grade(tx, *id, grade, user)).collect())
    }

    pub fn save_selection(&self, user: &Principal, name: &str, ids: &[ImageId]) -> Result<Selection> {
        let now = self.now();
        self.store.write(|tx| catalog::save_selection(tx, name, ids, user, now))
    }

    pub fn merge_selections(&self, user: &Principal, target: &str, sources: &[SelectionId]) -> Result<Selection> {
        let now = self.now();
        self.store
            .write(|tx| catalog::merge_selections(tx, target, sources, user, now))
    }

    pub fn delete_selection(&self, user: &Principal, id: SelectionId) -> Result<()> {
        self.store.write(|tx| catalog::delete_selection(tx, id, user))
    }

    pub fn get_selection(&self, user: &Principal, id: SelectionId) -> Result<Selection> {
        self.store.read(|c| catalog::load_selection(c, id, user, Action::Read))
    }

    pub fn list_selections(&self, user: &Principal) -> Result<Vec<SelectionSummary>> {
        self.store.read(|c| catalog::list_selections(c, user))
    }

    pub fn import_selection(&self, user: &Principal, name: &str, text: &str) -> Result<(Selection, ImportReport)> {
        let now = self.now();
        self.store
            .write(|tx| catalog::import_selection_text(tx, name, text, user, now))
    }

    /// Imports every `*.txt` in `dir` in lexicographic order; each file is
    /// its own transaction and failures do not stop the batch.
    pub fn import_selection_dir(&self, user: &Principal, dir: &Path) -> Result<Vec<BatchImportEntry>> {
        let files = catalog::selection_files(dir)?;
        let mut out = Vec::with_capacity(files.len());
        for f in files {
            let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let res = std::fs::read_to_string(&f)
                .map_err(|e| Error::io(&f, e))
                .and_then(|text| self.import_selection(user, &name, &text));
            let file = f.to_string_lossy().into_owned();
            out.push(match res {
                Ok((s, r)) => BatchImportEntry {
                    file,
                    selection: Some(s),
                    report: Some(r),
                    error: None,
                },
                Err(e) => BatchImportEntry {
                    file,
                    selection: None,
                    report: None,
                    error: Some(BatchImportError {
                        code: e.code().to_string(),
                        message: e.to_string(),
                    }),
                },
            });
        }
        Ok(out)
    }

    pub fn export_selection(&self, user: &Principal, id: SelectionId) -> Result<String> {
        self.store.read(|c| catalog::export_selection_text(c, id, user))
    }

    pub fn apply_tag(&self, user: &Principal, tag: &str, ids: &[ImageId], mark: bool) -> Result<usize> {
        self.store.write(|tx| catalog::apply_tag(tx, tag, ids, mark, user))
    }

    pub fn list_tags(&self, _user: &Principal) -> Result<Vec<Tag>> {
        self.store.read(catalog::list_tags)
    }

    pub fn save_path(&self, user: &Principal, path: &str) -> Result<SavedPath> {
        let now = self.now();
        self.store.write(|tx| catalog::save_path(tx, path, user, now))
    }

    pub fn list_paths(&self, user: &Principal) -> Result<Vec<SavedPath>> {
        self.store.read(|c| catalog::list_paths(c, user))
    }

    // --------------------------------------------------------------- authz

    pub fn chmod(&self, user: &Principal, kind: ObjectKind, id: i64, mode: PermissionMode) -> Result<crate::authz::Ownership> {
        self.store.write(|tx| objects::chmod(tx, kind, id, mode, user))
    }

    pub fn chown(
        &self,
        user: &Principal,
        kind: ObjectKind,
        id: i64,
        owner: Option<&str>,
        group: Option<&str>,
    ) -> Result<crate::authz::Ownership> {
        self.store.write(|tx| objects::chown(tx, kind, id, owner, group, user))
    }

    // ------------------------------------------------------------- plugins

    pub fn list_plugins(&self, enabled_only: bool) -> Result<Vec<PluginDescriptor>> {
        self.store.read(|c| plugin::list_plugins(c, enabled_only))
    }

    pub fn register_plugin(&self, user: &Principal, d: &PluginDescriptor) -> Result<PluginDescriptor> {
        self.store.write(|tx| plugin::register_plugin(tx, d, user))
    }

    pub fn set_plugin_enabled(&self, user: &Principal, id: &str, enabled: bool) -> Result<PluginDescriptor> {
        self.store.write(|tx| plugin::set_plugin_enabled(tx, id, enabled, user))
    }

    pub fn save_config(&self, user: &Principal, name: &str, plugin_id: &str, content: &str) -> Result<ConfigFile> {
        let now = self.now();
        self.store
            .write(|tx| plugin::save_config(tx, name, plugin_id, content, user, now))
    }

    pub fn list_configs(&self, user: &Principal, plugin_id: Option<&str>) -> Result<Vec<ConfigFile>> {
        self.store.read(|c| plugin::list_configs(c, user, plugin_id))
    }

    pub fn create_cart_item(&self, user: &Principal, req: &NewCartItem) -> Result<CartItemView> {
        let now = self.now();
        let (item, input_count) = self.store.write(|tx| plugin::create_cart_item(tx, req, user, now))?;
        Ok(CartItemView { item, input_count })
    }

    pub fn list_cart(&self, user: &Principal) -> Result<Vec<CartItem>> {
        self.store.read(|c| plugin::list_cart(c, user))
    }

    pub fn get_cart_item(&self, user: &Principal, id: i64) -> Result<CartItem> {
        self.store.read(|c| plugin::load_cart_item(c, id, user))
    }

    // ------------------------------------------------------------- cluster

    pub fn create_policy(&self, user: &Principal, p: &NewPolicy) -> Result<Policy> {
        let now = self.now();
        self.store.write(|tx| create_policy(tx, p, user, now))
    }

    pub fn list_policies(&self, _user: &Principal) -> Result<Vec<Policy>> {
        self.store.read(list_policies)
    }

    pub fn nodes(&self) -> Vec<NodeStatus> {
        self.cluster.node_status()
    }

    /// Evaluates the policy now against the live inventory and returns the
    /// frozen requirements expression ("" when no policy applies).
    fn requirements_for(&self, policy: Option<&Policy>) -> Result<String> {
        match policy {
            None => Ok(String::new()),
            Some(p) => render_requirements(&p.body.resolve(&self.cluster.inventory())?),
        }
    }

    /// Turns a cart item into a QUEUED processing job. Policy evaluation,
    /// command construction and persistence either all succeed or leave no
    /// job behind.
    pub fn submit(&self, user: &Principal, req: &SubmitRequest) -> Result<Job> {
        let item = self.store.read(|c| plugin::load_cart_item(c, req.cart_item_id, user))?;
        let policy = match &req.policy {
            Some(r) => Some(self.store.read(|c| find_policy(c, r))?),
            None => match item.policy_id {
                Some(pid) => Some(self.store.read(|c| get_policy(c, pid)).map_err(|_| {
                    Error::UnknownReference(format!("policy {pid}"))
                })?),
                None => None,
            },
        };
        let plugin_desc = self.store.read(|c| plugin::get_plugin(c, &item.plugin_id)).map_err(|e| match e {
            Error::UnknownPlugin(p) => Error::UnknownReference(format!("plugin {p}")),
            other => other,
        })?;
        if !plugin_desc.enabled {
            return Err(Error::PluginDisabled(plugin_desc.plugin_id));
        }
        let requirements_expr = self.requirements_for(policy.as_ref())?;
        let description = req
            .description
            .clone()
            .unwrap_or_else(|| format!("{} cart item {}", item.plugin_id, item.item_id));
        let now = self.now();
        self.cluster.submit(
            JobSpec {
                kind: JobKind::Processing,
                cart_item_id: Some(item.item_id),
                description,
                requirements_expr,
            },
            user,
            now,
            |conn, _job_id, workdir| -> Result<BuiltCommand> {
                // Re-read inside the transaction: references may have gone.
                let item = plugin::load_cart_item(conn, item.item_id, user)?;
                let plugin_desc = plugin::get_plugin(conn, &item.plugin_id)?;
                let owner = accounts::principal(conn, item.owner)?;
                let config = plugin::get_config(conn, item.config_id)?;
                let images = plugin::resolve_images(conn, &item.image_source, &owner)?;
                let mut aux = BTreeMap::new();
                for (label, pid) in &item.aux_paths {
                    aux.insert(label.clone(), catalog::get_path(conn, *pid)?.path);
                }
                plugin::build_command(
                    &CommandInputs {
                        plugin: &plugin_desc,
                        config_content: &config.content,
                        images: &images,
                        aux_paths: &aux,
                        output_dir: item.output_dir.as_deref(),
                    },
                    workdir,
                )
            },
        )
    }

    pub fn list_jobs(&self, _user: &Principal, f: &JobFilter) -> Result<Vec<Job>> {
        self.store.read(|c| list_jobs(c, f))
    }

    pub fn get_job(&self, _user: &Principal, id: i64) -> Result<Job> {
        self.cluster.get_job(id)
    }

    pub fn job_events(&self, _user: &Principal, id: i64) -> Result<Vec<MonitorEvent>> {
        self.cluster.get_job(id)?;
        self.store.read(|c| job_history(c, id))
    }

    pub fn cancel_job(&self, user: &Principal, id: i64) -> Result<Job> {
        self.cluster.cancel(id, user, self.now())
    }

    pub fn tick(&self) -> Result<Vec<Transition>> {
        self.cluster.tick(self.now())
    }

    pub fn subscribe(&self, filter: EventFilter, from_seq: i64) -> Subscription {
        self.bus.subscribe(filter, from_seq)
    }
}
