//! Directory scanning and the per-file ingestion pipeline.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::authz::{Ownership, Principal, UserId};
use crate::catalog::{insert_image, NewImage};
use crate::checksum::compute_checksum;
use crate::clock::{format_ts, parse_ts};
use crate::error::{Error, Result};
use crate::fits::read_fits_header;
use crate::instrument::{extract_image_meta, Instrument, InstrumentProfile};
use crate::store::{from_json, to_json, OptionalExt, Store};

pub fn is_fits_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".fits") || lower.ends_with(".fits.fz")
}

/// Candidate FITS files under `paths`, sorted lexicographically.
pub fn scan_data_paths(paths: &[PathBuf], recursive: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for root in paths {
        if !root.exists() {
            return Err(Error::PathNotFound(root.clone()));
        }
        if !root.is_dir() {
            return Err(Error::NotADirectory(root.clone()));
        }
        let walker = WalkDir::new(root)
            .min_depth(1)
            .max_depth(if recursive { usize::MAX } else { 1 })
            .follow_links(true);
        for entry in walker {
            let entry = entry.map_err(|e| {
                let path = e.path().unwrap_or(root).to_path_buf();
                Error::io(path, e.into())
            })?;
            if entry.file_type().is_file() && is_fits_name(&entry.file_name().to_string_lossy()) {
                out.push(entry.into_path());
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedFile {
    pub path: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestionReport {
    pub ingestion_id: i64,
    pub job_id: Option<i64>,
    pub instrument: Instrument,
    pub requested_paths: Vec<String>,
    pub scanned: usize,
    pub ingested: usize,
    pub skipped_duplicates: usize,
    pub failed: Vec<FailedFile>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl IngestionReport {
    /// The line written to notification sinks.
    pub fn notification_line(&self, user: &str) -> String {
        format!(
            "INGEST {} user={} ingested={} skipped={} failed={}",
            self.ingestion_id,
            user,
            self.ingested,
            self.skipped_duplicates,
            self.failed.len()
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    pub paths: Vec<PathBuf>,
    pub instrument: Instrument,
    #[serde(default)]
    pub recursive: bool,
}

pub fn begin_ingestion(
    conn: &Connection,
    owner: UserId,
    instrument: Instrument,
    paths: &[PathBuf],
    now: DateTime<Utc>,
) -> Result<i64> {
    let paths: Vec<String> = paths.iter().map(|p| p.to_string_lossy().into_owned()).collect();
    conn.execute(
        "INSERT INTO ingestions(owner, instrument, requested_paths, started_at) VALUES (?1, ?2, ?3, ?4)",
        params![owner, instrument.as_str(), to_json(&paths), format_ts(&now)],
    )?;
    Ok(conn.last_insert_rowid())
}

pub fn finish_ingestion(conn: &Connection, report: &IngestionReport) -> Result<()> {
    conn.execute(
        "UPDATE ingestions SET ingested = ?1, skipped_duplicates = ?2, failed = ?3, job_id = ?4, finished_at = ?5 WHERE id = ?6",
        params![
            report.ingested as i64,
            report.skipped_duplicates as i64,
            to_json(&report.failed),
            report.job_id,
            report.finished_at.as_ref().map(format_ts),
            report.ingestion_id
        ],
    )?;
    Ok(())
}

pub fn get_ingestion(conn: &Connection, id: i64) -> Result<IngestionReport> {
    conn.query_row(
        "SELECT instrument, requested_paths, ingested, skipped_duplicates, failed, job_id, started_at, finished_at \
         FROM ingestions WHERE id = ?1",
        [id],
        |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, i64>(2)?,
                r.get::<_, i64>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, Option<i64>>(5)?,
                r.get::<_, String>(6)?,
                r.get::<_, Option<String>>(7)?,
            ))
        },
    )
    .or_missing(|| Error::UnknownReference(format!("ingestion {id}")))
    .and_then(|(inst, paths, ingested, skipped, failed, job_id, started, finished)| {
        let failed: Vec<FailedFile> = from_json(&failed)?;
        Ok(IngestionReport {
            ingestion_id: id,
            job_id,
            instrument: inst.parse()?,
            requested_paths: from_json(&paths)?,
            scanned: ingested as usize + skipped as usize + failed.len(),
            ingested: ingested as usize,
            skipped_duplicates: skipped as usize,
            failed,
            started_at: parse_ts(&started).unwrap_or_default(),
            finished_at: finished.as_deref().and_then(parse_ts),
        })
    })
}

enum FileOutcome {
    Ingested,
    Duplicate,
}

fn ingest_one(
    store: &Store,
    path: &Path,
    profile: &InstrumentProfile,
    ingestion_id: i64,
    ownership: Ownership,
) -> Result<FileOutcome> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let header = read_fits_header(BufReader::new(file))?;
    let meta = extract_image_meta(&header, profile)?;
    let checksum = compute_checksum(path)?;
    let abs = std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
    let inserted = store.write(|tx| {
        insert_image(
            tx,
            &NewImage {
                path: &abs,
                checksum: &checksum,
                instrument: profile.instrument,
                meta: &meta,
                ingestion_id,
                ownership,
            },
        )
    })?;
    Ok(match inserted {
        Some(_) => FileOutcome::Ingested,
        None => FileOutcome::Duplicate,
    })
}

/// Ingests every candidate sequentially. Per-file failures are recorded in
/// the report and never abort the batch. Each insert commits on its own.
pub fn ingest_candidates(
    store: &Store,
    candidates: &[PathBuf],
    profile: &InstrumentProfile,
    user: &Principal,
    report: &mut IngestionReport,
) {
    let ownership = Ownership::new(user.user_id, user.primary_group);
    for path in candidates {
        report.scanned += 1;
        match ingest_one(store, path, profile, report.ingestion_id, ownership) {
            Ok(FileOutcome::Ingested) => report.ingested += 1,
            Ok(FileOutcome::Duplicate) => report.skipped_duplicates += 1,
            Err(e) => {
                tracing::debug!(path = %path.display(), code = e.code(), "ingestion failure");
                report.failed.push(FailedFile {
                    path: path.to_string_lossy().into_owned(),
                    code: e.code().to_string(),
                    message: e.to_string(),
                })
            }
        }
    }
}

/// Where completion reports are delivered.
pub trait NotificationSink: Send + Sync {
    fn notify(&self, user: &str, report: &IngestionReport) -> Result<()>;
}

/// Appends one line per report to a file.
#[derive(Debug)]
pub struct FileSink {
    path: PathBuf,
    lock: Mutex<()>,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileSink {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl NotificationSink for FileSink {
    fn notify(&self, user: &str, report: &IngestionReport) -> Result<()> {
        let _g = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{}", report.notification_line(user)).map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Default)]
pub struct StdoutSink;

impl NotificationSink for StdoutSink {
    fn notify(&self, user: &str, report: &IngestionReport) -> Result<()> {
        println!("{}", report.notification_line(user));
        Ok(())
    }
}

/// Keeps lines in memory; handy in tests.
#[derive(Debug, Default)]
pub struct MemorySink(pub Mutex<Vec<String>>);

impl MemorySink {
    pub fn lines(&self) -> Vec<String> {
        self.0.lock().unwrap().clone()
    }
}

impl NotificationSink for MemorySink {
    fn notify(&self, user: &str, report: &IngestionReport) -> Result<()> {
        self.0.lock().unwrap().push(report.notification_line(user));
        Ok(())
    }
}

/// Parses `YOUPI_NOTIFY_SINK`: `stdout`, or `file:<path>` / a bare path.
pub fn sink_from_spec(spec: &str) -> Box<dyn NotificationSink> {
    match spec {
        "" | "stdout" => Box::new(StdoutSink),
        s => Box::new(FileSink::new(s.strip_prefix("file:").unwrap_or(s))),
    }
}
