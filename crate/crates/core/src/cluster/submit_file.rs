//! Condor-style submission files.
//!
//! The layout is fixed, LF-terminated, one `key = value` per line:
//!
//! ```text
//! # youpi job <id>
//! universe = vanilla
//! executable = <argv[0]>
//! arguments = <argv[1..] joined by spaces>      (omitted when empty)
//! environment = <K=V;K=V>                       (omitted when empty)
//! requirements = <expr>                         (omitted when empty)
//! initialdir = <workdir>
//! output = job.<id>.out
//! error = job.<id>.err
//! log = job.<id>.log
//! queue
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionInputs {
    pub job_id: i64,
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub requirements: String,
    pub workdir: String,
}

fn invalid(field: &str, reason: &str) -> Error {
    Error::InvalidSubmission {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn check_line(field: &str, v: &str) -> Result<()> {
    if v.contains(['\n', '\r']) {
        return Err(invalid(field, "must not contain line breaks"));
    }
    Ok(())
}

impl SubmissionInputs {
    pub fn validate(&self) -> Result<()> {
        let exe = self.argv.first().ok_or_else(|| invalid("executable", "argv is empty"))?;
        if exe.is_empty() {
            return Err(invalid("executable", "must not be empty"));
        }
        for a in &self.argv {
            check_line("arguments", a)?;
        }
        for (k, v) in &self.env {
            if k.is_empty() || k.contains(['=', ';', ' ', '\t']) {
                return Err(invalid("environment", "keys must be non-empty and free of '=', ';' and blanks"));
            }
            if v.contains(';') {
                return Err(invalid("environment", "values must not contain ';'"));
            }
            check_line("environment", k)?;
            check_line("environment", v)?;
        }
        check_line("requirements", &self.requirements)?;
        check_line("initialdir", &self.workdir)?;
        Ok(())
    }
}

pub fn generate_submission_file(x: &SubmissionInputs) -> Result<String> {
    x.validate()?;
    let id = x.job_id;
    let mut out = format!("# youpi job {id}\n");
    let mut line = |k: &str, v: &str| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    };
    line("universe", "vanilla");
    line("executable", &x.argv[0]);
    if x.argv.len() > 1 {
        line("arguments", &x.argv[1..].join(" "));
    }
    if !x.env.is_empty() {
        let env: Vec<String> = x.env.iter().map(|(k, v)| format!("{k}={v}")).collect();
        line("environment", &env.join(";"));
    }
    if !x.requirements.is_empty() {
        line("requirements", &x.requirements);
    }
    line("initialdir", &x.workdir);
    line("output", &format!("job.{id}.out"));
    line("error", &format!("job.{id}.err"));
    line("log", &format!("job.{id}.log"));
    out.push_str("queue\n");
    Ok(out)
}

/// A parsed submission file: the job id from the header line and the
/// key/value entries in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionFile {
    pub job_id: i64,
    pub entries: Vec<(String, String)>,
}

impl SubmissionFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries.iter().cloned().collect()
    }

    /// Splits the `environment` entry back into pairs.
    pub fn environment(&self) -> BTreeMap<String, String> {
        self.get("environment")
            .map(|e| {
                e.split(';')
                    .filter_map(|kv| kv.split_once('='))
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect()
            })
            .unwrap_or_default()
    }
}

pub fn parse_submission_file(text: &str) -> Result<SubmissionFile> {
    let bad = |line: usize, reason: &str| Error::MalformedLine {
        line,
        reason: reason.to_string(),
    };
    let body = text.strip_suffix('\n').ok_or_else(|| bad(0, "file must end with a line feed"))?;
    let lines: Vec<&str> = body.split('\n').collect();
    let header = lines.first().copied().unwrap_or_default();
    let job_id = header
        .strip_prefix("# youpi job ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "expected `# youpi job <id>`"))?;
    if lines.last() != Some(&"queue") || lines.len() < 2 {
        return Err(bad(lines.len(), "last line must be `queue`"));
    }
    let mut entries = Vec::new();
    for (i, l) in lines[1..lines.len() - 1].iter().enumerate() {
        let (k, v) = l.split_once(" = ").ok_or_else(|| bad(i + 2, "expected `key = value`"))?;
        if k.is_empty() || k.bytes().any(|b| !b.is_ascii_lowercase()) {
            return Err(bad(i + 2, "keys are lowercase words"));
        }
        entries.push((k.to_string(), v.to_string()));
    }
    Ok(SubmissionFile { job_id, entries })
}
