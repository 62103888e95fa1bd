//! The embedded cluster: a FIFO matchmaker over a static node inventory
//! that runs each job as a local child process.
//!
//! Only one tick runs at a time; `cancel` and the internal-job hooks take
//! the same lock. `submit` only touches the store and can run concurrently.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use rusqlite::{Connection, Transaction};
use serde::Serialize;

use super::events::{EventBus, MonitorEvent};
use super::job::{active_jobs, get_job, insert_job, update_job_spec, update_job_state, Job, JobKind, JobState};
use super::node::NodeSpec;
use super::requirements::Requirements;
use super::submit_file::{generate_submission_file, SubmissionInputs};
use crate::authz::Principal;
use crate::clock::format_ts;
use crate::error::{Error, Result};
use crate::plugin::BuiltCommand;
use crate::store::Store;

/// What the caller knows before the job id is allocated.
#[derive(Debug, Clone)]
pub struct JobSpec {
    pub kind: JobKind,
    pub cart_item_id: Option<i64>,
    pub description: String,
    pub requirements_expr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub job_id: i64,
    pub from: JobState,
    pub to: JobState,
    pub node: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeStatus {
    #[serde(flatten)]
    pub node: NodeSpec,
    pub running_jobs: Vec<i64>,
}

struct Running {
    child: Child,
    node: String,
}

#[derive(Default)]
struct State {
    inventory: Vec<NodeSpec>,
    running: BTreeMap<i64, Running>,
    requirements: HashMap<i64, Requirements>,
}

pub struct Cluster {
    state: Mutex<State>,
    store: Arc<Store>,
    bus: Arc<EventBus>,
    jobs_root: PathBuf,
}

impl std::fmt::Debug for Cluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cluster").field("jobs_root", &self.jobs_root).finish()
    }
}

pub fn submission_file_name(job_id: i64) -> String {
    format!("job.{job_id}.sub")
}

fn log_line(job: &Job, now: &DateTime<Utc>) {
    let path = Path::new(&job.workdir).join(format!("job.{}.log", job.job_id));
    if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
        let _ = writeln!(f, "{} {} {}", format_ts(now), job.state, job.remote_host());
    }
}

impl Cluster {
    /// Opens the cluster over `store`. Jobs left RUNNING by a previous
    /// process are marked FAILED: their processes are gone.
    pub fn new(store: Arc<Store>, bus: Arc<EventBus>, jobs_root: PathBuf, inventory: Vec<NodeSpec>, now: DateTime<Utc>) -> Result<Self> {
        fs::create_dir_all(&jobs_root).map_err(|e| Error::io(&jobs_root, e))?;
        let c = Cluster {
            state: Mutex::new(State::default()),
            store,
            bus,
            jobs_root,
        };
        c.set_inventory(inventory);
        let orphans: Vec<Job> = c
            .store
            .read(active_jobs)?
            .into_iter()
            .filter(|j| j.state == JobState::Running)
            .collect();
        for mut j in orphans {
            tracing::warn!(job = j.job_id, "job was running at shutdown; marking FAILED");
            c.persist_transition(&mut j, JobState::Failed, now)?;
        }
        Ok(c)
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn bus(&self) -> &Arc<EventBus> {
        &self.bus
    }

    pub fn jobs_root(&self) -> &Path {
        &self.jobs_root
    }

    pub fn set_inventory(&self, mut nodes: Vec<NodeSpec>) {
        nodes.sort_by(|a, b| a.name.cmp(&b.name));
        self.lock().inventory = nodes;
    }

    pub fn inventory(&self) -> Vec<NodeSpec> {
        self.lock().inventory.clone()
    }

    pub fn node_status(&self) -> Vec<NodeStatus> {
        let st = self.lock();
        st.inventory
            .iter()
            .map(|n| NodeStatus {
                node: n.clone(),
                running_jobs: st.running.iter().filter(|(_, r)| r.node == n.name).map(|(id, _)| *id).collect(),
            })
            .collect()
    }

    /// Number of processes currently alive on each node.
    pub fn running_counts(&self) -> BTreeMap<String, usize> {
        let st = self.lock();
        let mut out = BTreeMap::new();
        for r in st.running.values() {
            *out.entry(r.node.clone()).or_insert(0) += 1;
        }
        out
    }

    fn transition_tx(tx: &Transaction<'_>, job: &mut Job, to: JobState, now: DateTime<Utc>) -> Result<MonitorEvent> {
        job.transition(to, now)?;
        update_job_state(tx, job)?;
        Ok(MonitorEvent::from_job(job, now))
    }

    fn persist_transition(&self, job: &mut Job, to: JobState, now: DateTime<Utc>) -> Result<()> {
        self.bus.commit(&self.store, |tx| {
            let ev = Self::transition_tx(tx, job, to, now)?;
            Ok(((), vec![ev]))
        })?;
        log_line(job, &now);
        Ok(())
    }

    fn new_job(&self, spec: &JobSpec, owner: &Principal, now: DateTime<Utc>) -> Job {
        Job {
            job_id: 0,
            kind: spec.kind,
            cart_item_id: spec.cart_item_id,
            owner: owner.user_id,
            owner_login: owner.login.clone(),
            description: spec.description.clone(),
            submission_text: String::new(),
            requirements_expr: spec.requirements_expr.clone(),
            argv: Vec::new(),
            env: BTreeMap::new(),
            workdir: String::new(),
            state: JobState::Queued,
            assigned_node: None,
            queued_at: now,
            started_at: None,
            finished_at: None,
            exit_code: None,
        }
    }

    /// Allocates the id, creates the working directory, lets `prepare` build
    /// the command there, and persists job, submission file and QUEUED event
    /// in one transaction. On error nothing is persisted.
    pub fn submit(
        &self,
        spec: JobSpec,
        owner: &Principal,
        now: DateTime<Utc>,
        prepare: impl FnOnce(&Connection, i64, &Path) -> Result<BuiltCommand>,
    ) -> Result<Job> {
        self.create(spec, owner, now, prepare, false)
    }

    fn create(
        &self,
        spec: JobSpec,
        owner: &Principal,
        now: DateTime<Utc>,
        prepare: impl FnOnce(&Connection, i64, &Path) -> Result<BuiltCommand>,
        start_immediately: bool,
    ) -> Result<Job> {
        Requirements::parse(&spec.requirements_expr)?;
        let mut job = self.new_job(&spec, owner, now);
        let mut workdir_created = None;
        let res = self.bus.commit(&self.store, |tx| {
            job.job_id = insert_job(tx, &job)?;
            let workdir = self.jobs_root.join(format!("job.{}", job.job_id));
            if workdir.exists() {
                // Left over from a rolled-back submission that reused the id.
                fs::remove_dir_all(&workdir).map_err(|e| Error::io(&workdir, e))?;
            }
            fs::create_dir_all(&workdir).map_err(|e| Error::io(&workdir, e))?;
            workdir_created = Some(workdir.clone());
            let built = prepare(tx, job.job_id, &workdir)?;
            job.argv = built.argv;
            job.env = built.env;
            job.workdir = workdir.to_string_lossy().into_owned();
            job.submission_text = generate_submission_file(&SubmissionInputs {
                job_id: job.job_id,
                argv: job.argv.clone(),
                env: job.env.clone(),
                requirements: job.requirements_expr.clone(),
                workdir: job.workdir.clone(),
            })?;
            update_job_spec(tx, &job)?;
            let sub = workdir.join(submission_file_name(job.job_id));
            fs::write(&sub, &job.submission_text).map_err(|e| Error::io(&sub, e))?;
            let mut events = vec![MonitorEvent::from_job(&job, now)];
            if start_immediately {
                events.push(Self::transition_tx(tx, &mut job, JobState::Running, now)?);
            }
            Ok(((), events))
        });
        match res {
            Ok(()) => {
                log_line(&job, &now);
                Ok(job)
            }
            Err(e) => {
                if let Some(w) = workdir_created {
                    let _ = fs::remove_dir_all(w);
                }
                Err(e)
            }
        }
    }

    /// Registers work executed in-process (ingestion) as a job that goes
    /// straight to RUNNING without occupying a node slot.
    pub fn begin_internal(&self, spec: JobSpec, owner: &Principal, argv: Vec<String>, now: DateTime<Utc>) -> Result<Job> {
        let _st = self.lock();
        self.create(
            spec,
            owner,
            now,
            |_, _, _| {
                Ok(BuiltCommand {
                    argv,
                    env: BTreeMap::new(),
                })
            },
            true,
        )
    }

    /// Closes an internal job. A job cancelled meanwhile stays CANCELLED.
    pub fn finish_internal(&self, job_id: i64, success: bool, now: DateTime<Utc>) -> Result<Job> {
        let _st = self.lock();
        let mut job = self.store.read(|c| get_job(c, job_id))?;
        if job.state.is_terminal() {
            return Ok(job);
        }
        job.exit_code = Some(if success { 0 } else { 1 });
        let to = if success { JobState::Completed } else { JobState::Failed };
        self.persist_transition(&mut job, to, now)?;
        Ok(job)
    }

    pub fn get_job(&self, job_id: i64) -> Result<Job> {
        self.store.read(|c| get_job(c, job_id))
    }

    /// One scheduling round: reap finished processes, then start queued
    /// jobs in FIFO order on the first matching node with a free slot.
    pub fn tick(&self, now: DateTime<Utc>) -> Result<Vec<Transition>> {
        let mut st = self.lock();
        let mut out = Vec::new();

        let finished: Vec<(i64, Option<i32>)> = st
            .running
            .iter_mut()
            .filter_map(|(id, r)| match r.child.try_wait() {
                Ok(Some(status)) => Some((*id, Some(status.code().unwrap_or(-1)))),
                Ok(None) => None,
                Err(_) => Some((*id, None)),
            })
            .collect();
        for (id, code) in finished {
            let r = st.running.remove(&id).expect("present");
            st.requirements.remove(&id);
            let mut job = self.store.read(|c| get_job(c, id))?;
            if job.state != JobState::Running {
                continue;
            }
            job.exit_code = code;
            let to = if code == Some(0) { JobState::Completed } else { JobState::Failed };
            self.persist_transition(&mut job, to, now)?;
            out.push(Transition {
                job_id: id,
                from: JobState::Running,
                to,
                node: Some(r.node),
            });
        }

        let mut queued: Vec<Job> = self
            .store
            .read(active_jobs)?
            .into_iter()
            .filter(|j| j.state == JobState::Queued)
            .collect();
        queued.sort_by(|a, b| a.queued_at.cmp(&b.queued_at).then(a.job_id.cmp(&b.job_id)));

        let mut load: HashMap<String, u32> = HashMap::new();
        for r in st.running.values() {
            *load.entry(r.node.clone()).or_insert(0) += 1;
        }
        for mut job in queued {
            let reqs = match st.requirements.get(&job.job_id) {
                Some(r) => r.clone(),
                None => match Requirements::parse(&job.requirements_expr) {
                    Ok(r) => {
                        st.requirements.insert(job.job_id, r.clone());
                        r
                    }
                    Err(_) => continue,
                },
            };
            let node = st
                .inventory
                .iter()
                .find(|n| load.get(&n.name).copied().unwrap_or(0) < n.slots && reqs.matches(&n.attributes))
                .cloned();
            let Some(node) = node else { continue };
            job.assigned_node = Some(node.name.clone());
            match spawn(&job) {
                Ok(child) => {
                    if let Err(e) = self.persist_transition(&mut job, JobState::Running, now) {
                        let mut child = child;
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(e);
                    }
                    *load.entry(node.name.clone()).or_insert(0) += 1;
                    st.running.insert(
                        job.job_id,
                        Running {
                            child,
                            node: node.name.clone(),
                        },
                    );
                    out.push(Transition {
                        job_id: job.job_id,
                        from: JobState::Queued,
                        to: JobState::Running,
                        node: Some(node.name),
                    });
                }
                Err(e) => {
                    tracing::warn!(job = job.job_id, error = %e, "failed to start job");
                    let _ = fs::write(Path::new(&job.workdir).join(format!("job.{}.err", job.job_id)), format!("{e}\n"));
                    self.persist_transition(&mut job, JobState::Running, now)?;
                    job.exit_code = Some(-1);
                    self.persist_transition(&mut job, JobState::Failed, now)?;
                    st.requirements.remove(&job.job_id);
                    out.push(Transition {
                        job_id: job.job_id,
                        from: JobState::Queued,
                        to: JobState::Running,
                        node: Some(node.name.clone()),
                    });
                    out.push(Transition {
                        job_id: job.job_id,
                        from: JobState::Running,
                        to: JobState::Failed,
                        node: Some(node.name),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Cancels a queued or running job. Owners and admins only.
    pub fn cancel(&self, job_id: i64, user: &Principal, now: DateTime<Utc>) -> Result<Job> {
        let mut st = self.lock();
        let mut job = self.store.read(|c| get_job(c, job_id))?;
        if job.owner != user.user_id && !user.is_admin {
            return Err(Error::PermissionDenied);
        }
        if job.state.is_terminal() {
            return Err(Error::AlreadyTerminal(job_id));
        }
        if let Some(mut r) = st.running.remove(&job_id) {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
        st.requirements.remove(&job_id);
        self.persist_transition(&mut job, JobState::Cancelled, now)?;
        Ok(job)
    }

    /// Kills every live process without recording transitions; used on
    /// shutdown so that restart recovery marks them FAILED.
    pub fn kill_all(&self) {
        let mut st = self.lock();
        for (_, mut r) in std::mem::take(&mut st.running) {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    pub fn has_running(&self) -> bool {
        !self.lock().running.is_empty()
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        self.kill_all();
    }
}

fn spawn(job: &Job) -> std::io::Result<Child> {
    let dir = Path::new(&job.workdir);
    let out = File::create(dir.join(format!("job.{}.out", job.job_id)))?;
    let err = File::create(dir.join(format!("job.{}.err", job.job_id)))?;
    let (exe, args) = job
        .argv
        .split_first()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty argv"))?;
    Command::new(exe)
        .args(args)
        .envs(&job.env)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(out)
        .stderr(err)
        .spawn()
}
