use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, Row};
use serde::{Deserialize, Serialize};

use crate::authz::UserId;
use crate::clock::{format_ts, parse_ts};
use crate::error::{Error, Result};
use crate::store::{from_json, to_json, OptionalExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobKind {
    Ingestion,
    Processing,
}

impl JobKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            JobKind::Ingestion => "INGESTION",
            JobKind::Processing => "PROCESSING",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Failed,
    Cancelled,
}

impl JobState {
    pub const ALL: [JobState; 5] = [
        JobState::Queued,
        JobState::Running,
        JobState::Completed,
        JobState::Failed,
        JobState::Cancelled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            JobState::Queued => "QUEUED",
            JobState::Running => "RUNNING",
            JobState::Completed => "COMPLETED",
            JobState::Failed => "FAILED",
            JobState::Cancelled => "CANCELLED",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed | JobState::Cancelled)
    }

    pub fn can_transition(&self, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, to),
            (Queued, Running) | (Queued, Cancelled) | (Running, Completed) | (Running, Failed) | (Running, Cancelled)
        )
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        JobState::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown job state {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Job {
    pub job_id: i64,
    pub kind: JobKind,
    pub cart_item_id: Option<i64>,
    pub owner: UserId,
    pub owner_login: String,
    pub description: String,
    pub submission_text: String,
    pub requirements_expr: String,
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub workdir: String,
    pub state: JobState,
    pub assigned_node: Option<String>,
    pub queued_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub exit_code: Option<i32>,
}

impl Job {
    /// Applies a state change, stamping `started_at`/`finished_at`.
    pub fn transition(&mut self, to: JobState, now: DateTime<Utc>) -> Result<()> {
        if self.state.is_terminal() {
            return Err(Error::AlreadyTerminal(self.job_id));
        }
        if !self.state.can_transition(to) {
            return Err(Error::IllegalTransition {
                from: self.state.to_string(),
                to: to.to_string(),
            });
        }
        if to == JobState::Running {
            self.started_at = Some(now);
        }
        if to.is_terminal() {
            self.finished_at = Some(now);
        }
        self.state = to;
        Ok(())
    }

    /// Seconds spent running: zero before start, frozen once finished.
    pub fn running_time(&self, now: DateTime<Utc>) -> f64 {
        match self.started_at {
            None => 0.0,
            Some(s) => {
                let end = self.finished_at.unwrap_or(now);
                ((end - s).num_milliseconds().max(0) as f64) / 1000.0
            }
        }
    }

    pub fn remote_host(&self) -> &str {
        self.assigned_node.as_deref().unwrap_or("-")
    }
}

const COLUMNS: &str = "id, kind, cart_item_id, owner, owner_login, description, submission_text, \
    requirements_expr, argv, env, workdir, state, assigned_node, queued_at, started_at, finished_at, exit_code";

fn opt_ts(s: Option<String>) -> Option<DateTime<Utc>> {
    s.as_deref().and_then(parse_ts)
}

fn job_from_row(r: &Row<'_>) -> rusqlite::Result<Result<Job>> {
    let kind: String = r.get(1)?;
    let argv: String = r.get(8)?;
    let env: String = r.get(9)?;
    let state: String = r.get(11)?;
    let queued: String = r.get(13)?;
    let base = (
        r.get::<_, i64>(0)?,
        r.get::<_, Option<i64>>(2)?,
        r.get::<_, i64>(3)?,
        r.get::<_, String>(4)?,
        r.get::<_, String>(5)?,
        r.get::<_, String>(6)?,
        r.get::<_, String>(7)?,
        r.get::<_, String>(10)?,
        r.get::<_, Option<String>>(12)?,
        r.get::<_, Option<String>>(14)?,
        r.get::<_, Option<String>>(15)?,
        r.get::<_, Option<i32>>(16)?,
    );
    Ok((|| {
        let (job_id, cart_item_id, owner, owner_login, description, submission_text, requirements_expr, workdir, node, started, finished, exit_code) = base;
        Ok(Job {
            job_id,
            kind: if kind == "INGESTION" { JobKind::Ingestion } else { JobKind::Processing },
            cart_item_id,
            owner,
            owner_login,
            description,
            submission_text,
            requirements_expr,
            argv: from_json(&argv)?,
            env: from_json(&env)?,
            workdir,
            state: state.parse()?,
            assigned_node: node,
            queued_at: parse_ts(&queued).unwrap_or_default(),
            started_at: opt_ts(started),
            finished_at: opt_ts(finished),
            exit_code,
        })
    })())
}

/// Inserts a job row and returns its id. `submission_text` may be filled in
/// later with [`set_submission_text`] once the id is known.
pub fn insert_job(conn: &Connection, job: &Job) -> Result<i64> {
    conn.execute(
        "INSERT INTO jobs(kind, cart_item_id, owner, owner_login, description, submission_text, requirements_expr, \
         argv, env, workdir, state, assigned_node, queued_at, started_at, finished_at, exit_code) \
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13, ?14, ?15, ?16)",
        params![
            job.kind.as_str(),
            job.cart_item_id,
            job.owner,
            job.owner_login,
            job.description,
            job.submission_text,
            job.requirements_expr,
            to_json(&job.argv),
            to_json(&job.env),
            job.workdir,
            job.state.as_str(),
            job.assigned_node,
            format_ts(&job.queued_at),
            job.started_at.as_ref().map(format_ts),
            job.finished_at.as_ref().map(format_ts),
            job.exit_code,
        ],
    )?;
    Ok(conn.last_insert_rowid())
}

/// Rewrites the fields that are only known after the id is allocated.
pub fn update_job_spec(conn: &Connection, job: &Job) -> Result<()> {
    conn.execute(
        "UPDATE jobs SET submission_text = ?2, argv = ?3, env = ?4, workdir = ?5 WHERE id = ?1",
        params![job.job_id, job.submission_text, to_json(&job.argv), to_json(&job.env), job.workdir],
    )?;
    Ok(())
}

pub fn update_job_state(conn: &Connection, job: &Job) -> Result<()> {
    conn.execute(
        "UPDATE jobs SET state = ?2, assigned_node = ?3, started_at = ?4, finished_at = ?5, exit_code = ?6 WHERE id = ?1",
        params![
            job.job_id,
            job.state.as_str(),
            job.assigned_node,
            job.started_at.as_ref().map(format_ts),
            job.finished_at.as_ref().map(format_ts),
            job.exit_code,
        ],
    )?;
    Ok(())
}

pub fn get_job(conn: &Connection, id: i64) -> Result<Job> {
    conn.query_row(&format!("SELECT {COLUMNS} FROM jobs WHERE id = ?1"), [id], job_from_row)
        .or_missing(|| Error::UnknownJob(id))?
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobFilter {
    pub owner: Option<String>,
    pub state: Option<JobState>,
    pub kind: Option<JobKind>,
}

pub fn list_jobs(conn: &Connection, f: &JobFilter) -> Result<Vec<Job>> {
    let mut stmt = conn.prepare(&format!(
        "SELECT {COLUMNS} FROM jobs WHERE (?1 IS NULL OR owner_login = ?1) AND (?2 IS NULL OR state = ?2) \
         AND (?3 IS NULL OR kind = ?3) ORDER BY id"
    ))?;
    let rows = stmt.query_map(
        params![f.owner, f.state.map(|s| s.as_str()), f.kind.map(|k| k.as_str())],
        job_from_row,
    )?;
    rows.map(|r| r?).collect()
}

/// Jobs still QUEUED or RUNNING, in id order.
pub fn active_jobs(conn: &Connection) -> Result<Vec<Job>> {
    let mut stmt = conn.prepare(&format!(
        "SELECT {COLUMNS} FROM jobs WHERE state IN ('QUEUED', 'RUNNING') ORDER BY id"
    ))?;
    let rows = stmt.query_map([], job_from_row)?;
    rows.map(|r| r?).collect()
}
