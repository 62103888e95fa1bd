//! Node-targeting policies: dynamic regex criteria or a static node list.
//!
//! Criteria combine with AND. `MATCH` requires the pattern to be found
//! somewhere in the attribute value (unanchored search) and fails when the
//! attribute is missing; `NOMATCH` is its negation, so a missing attribute
//! satisfies it.

use chrono::{DateTime, Utc};
use regex::Regex;
use rusqlite::{params, Connection, Row};
use serde::{Deserialize, Serialize};

use super::node::NodeSpec;
use crate::authz::{Principal, UserId};
use crate::clock::{format_ts, parse_ts};
use crate::error::{Error, Result};
use crate::store::{from_json, is_unique_violation, to_json, OptionalExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MatchOp {
    Match,
    Nomatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub attribute: String,
    pub op: MatchOp,
    pub pattern: String,
}

impl Criterion {
    pub fn new(attribute: &str, op: MatchOp, pattern: &str) -> Self {
        Criterion {
            attribute: attribute.to_string(),
            op,
            pattern: pattern.to_string(),
        }
    }
}

pub fn compile(criteria: &[Criterion]) -> Result<Vec<Regex>> {
    criteria
        .iter()
        .enumerate()
        .map(|(index, c)| {
            Regex::new(&c.pattern).map_err(|e| Error::InvalidPattern {
                index,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Names of the nodes satisfying every criterion, sorted by name.
pub fn evaluate_policy(criteria: &[Criterion], nodes: &[NodeSpec]) -> Result<Vec<String>> {
    let compiled = compile(criteria)?;
    let mut out: Vec<String> = nodes
        .iter()
        .filter(|node| {
            criteria.iter().zip(&compiled).all(|(c, re)| {
                let found = node.attr(&c.attribute).is_some_and(|v| re.is_match(v));
                match c.op {
                    MatchOp::Match => found,
                    MatchOp::Nomatch => !found,
                }
            })
        })
        .map(|n| n.name.clone())
        .collect();
    out.sort();
    Ok(out)
}

/// Static node names still present in the inventory, in list order.
pub fn resolve_static(node_names: &[String], nodes: &[NodeSpec]) -> Vec<String> {
    node_names
        .iter()
        .filter(|n| nodes.iter().any(|node| &node.name == *n))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyBody {
    Dynamic { criteria: Vec<Criterion> },
    Static { node_names: Vec<String> },
}

impl PolicyBody {
    pub fn validate(&self) -> Result<()> {
        match self {
            PolicyBody::Dynamic { criteria } => {
                compile(criteria)?;
            }
            PolicyBody::Static { node_names } => {
                if node_names.is_empty() {
                    return Err(Error::InvalidArgument("a static selection needs at least one node".into()));
                }
                let mut seen = std::collections::HashSet::new();
                if let Some(dup) = node_names.iter().find(|n| !seen.insert(*n)) {
                    return Err(Error::InvalidArgument(format!("node {dup:?} listed twice")));
                }
            }
        }
        Ok(())
    }

    /// Target node names against the current inventory.
    pub fn resolve(&self, nodes: &[NodeSpec]) -> Result<Vec<String>> {
        match self {
            PolicyBody::Dynamic { criteria } => evaluate_policy(criteria, nodes),
            PolicyBody::Static { node_names } => Ok(resolve_static(node_names, nodes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Policy {
    pub policy_id: i64,
    pub label: String,
    #[serde(flatten)]
    pub body: PolicyBody,
    pub owner: UserId,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewPolicy {
    pub label: String,
    #[serde(flatten)]
    pub body: PolicyBody,
}

fn policy_from_row(r: &Row<'_>) -> rusqlite::Result<(i64, String, String, UserId, String)> {
    Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?))
}

fn finish((policy_id, label, body, owner, created): (i64, String, String, UserId, String)) -> Result<Policy> {
    Ok(Policy {
        policy_id,
        label,
        body: from_json(&body)?,
        owner,
        created_at: parse_ts(&created).unwrap_or_default(),
    })
}

pub fn create_policy(conn: &Connection, p: &NewPolicy, user: &Principal, now: DateTime<Utc>) -> Result<Policy> {
    if p.label.trim().is_empty() {
        return Err(Error::InvalidArgument("policy label must not be empty".into()));
    }
    if p.label.parse::<i64>().is_ok() {
        return Err(Error::InvalidArgument("policy label must not be numeric".into()));
    }
    p.body.validate()?;
    let kind = match p.body {
        PolicyBody::Dynamic { .. } => "dynamic",
        PolicyBody::Static { .. } => "static",
    };
    conn.execute(
        "INSERT INTO policies(label, kind, body, owner, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![p.label, kind, to_json(&p.body), user.user_id, format_ts(&now)],
    )
    .map_err(|e| {
        if is_unique_violation(&e) {
            Error::DuplicateName(p.label.clone())
        } else {
            e.into()
        }
    })?;
    get_policy(conn, conn.last_insert_rowid())
}

pub fn get_policy(conn: &Connection, id: i64) -> Result<Policy> {
    let row = conn
        .query_row(
            "SELECT id, label, body, owner, created_at FROM policies WHERE id = ?1",
            [id],
            policy_from_row,
        )
        .or_missing(|| Error::UnknownReference(format!("policy {id}")))?;
    finish(row)
}

/// Looks a policy up by numeric id or by label.
pub fn find_policy(conn: &Connection, reference: &str) -> Result<Policy> {
    if let Ok(id) = reference.parse::<i64>() {
        return get_policy(conn, id);
    }
    let row = conn
        .query_row(
            "SELECT id, label, body, owner, created_at FROM policies WHERE label = ?1",
            [reference],
            policy_from_row,
        )
        .or_missing(|| Error::UnknownReference(format!("policy {reference:?}")))?;
    finish(row)
}

pub fn list_policies(conn: &Connection) -> Result<Vec<Policy>> {
    let mut stmt = conn.prepare("SELECT id, label, body, owner, created_at FROM policies ORDER BY label")?;
    let rows = stmt.query_map([], policy_from_row)?;
    rows.map(|r| finish(r?)).collect()
}
