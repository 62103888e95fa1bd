//! User accounts, groups and bearer-token sessions.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use argon2::password_hash::{rand_core::OsRng, PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use rusqlite::{params, Connection, OptionalExtension};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::authz::{GroupId, Principal, UserId};
use crate::clock::{format_ts, parse_ts};
use crate::error::{Error, Result};
use crate::store::{is_unique_violation, OptionalExt};

#[derive(Debug, Clone, Serialize)]
pub struct UserAccount {
    pub user_id: UserId,
    pub login: String,
    pub groups: Vec<String>,
    pub is_admin: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

fn hash_password(password: &str) -> Result<String> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| Error::Internal(format!("password hashing failed: {e}")))
}

fn verify_password(password: &str, stored: &str) -> bool {
    PasswordHash::new(stored)
        .map(|h| Argon2::default().verify_password(password.as_bytes(), &h).is_ok())
        .unwrap_or(false)
}

/// Verified against when the login is unknown, so both failure paths cost
/// one hash verification.
fn dummy_hash() -> &'static str {
    static DUMMY: OnceLock<String> = OnceLock::new();
    DUMMY.get_or_init(|| hash_password("youpi-dummy-password").expect("hash dummy"))
}

fn token_digest(token: &str) -> String {
    Sha256::digest(token.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn ensure_group(conn: &Connection, name: &str) -> Result<GroupId> {
    if name.is_empty() {
        return Err(Error::InvalidArgument("empty group name".into()));
    }
    if let Some(id) = conn
        .query_row("SELECT id FROM groups WHERE name = ?1", [name], |r| r.get(0))
        .optional()?
    {
        return Ok(id);
    }
    conn.execute("INSERT INTO groups(name) VALUES (?1)", [name])?;
    Ok(conn.last_insert_rowid())
}

pub fn group_id(conn: &Connection, name: &str) -> Result<GroupId> {
    conn.query_row("SELECT id FROM groups WHERE name = ?1", [name], |r| r.get(0))
        .or_missing(|| Error::UnknownGroup(name.to_string()))
}

pub fn user_id(conn: &Connection, login: &str) -> Result<UserId> {
    conn.query_row("SELECT id FROM users WHERE login = ?1", [login], |r| r.get(0))
        .or_missing(|| Error::UnknownUser(login.to_string()))
}

/// Creates an account with a personal group named after the login, plus
/// membership in `extra_groups` (created on demand). New objects are
/// assigned the first extra group, or the personal group when none is given.
pub fn create_user(
    conn: &Connection,
    login: &str,
    password: &str,
    extra_groups: &[String],
    is_admin: bool,
    now: DateTime<Utc>,
) -> Result<UserAccount> {
    if login.is_empty() || login.contains(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!("invalid login {login:?}")));
    }
    if password.is_empty() {
        return Err(Error::InvalidArgument("empty password".into()));
    }
    let personal = ensure_group(conn, login)?;
    let primary = match extra_groups.first() {
        Some(g) => ensure_group(conn, g)?,
        None => personal,
    };
    let hash = hash_password(password)?;
    conn.execute(
        "INSERT INTO users(login, password_hash, primary_group, is_admin, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![login, hash, primary, is_admin, format_ts(&now)],
    )
    .map_err(|e| {
        if is_unique_violation(&e) {
            Error::DuplicateName(login.to_string())
        } else {
            e.into()
        }
    })?;
    let uid = conn.last_insert_rowid();
    conn.execute("INSERT INTO user_groups(user_id, group_id) VALUES (?1, ?2)", params![uid, personal])?;
    for g in extra_groups {
        let gid = ensure_group(conn, g)?;
        conn.execute(
            "INSERT OR IGNORE INTO user_groups(user_id, group_id) VALUES (?1, ?2)",
            params![uid, gid],
        )?;
    }
    get_user(conn, uid)
}

pub fn get_user(conn: &Connection, uid: UserId) -> Result<UserAccount> {
    let (login, is_admin): (String, bool) = conn
        .query_row("SELECT login, is_admin FROM users WHERE id = ?1", [uid], |r| {
            Ok((r.get(0)?, r.get(1)?))
        })
        .or_missing(|| Error::UnknownUser(uid.to_string()))?;
    let mut stmt = conn.prepare(
        "SELECT g.name FROM user_groups ug JOIN groups g ON g.id = ug.group_id WHERE ug.user_id = ?1 ORDER BY g.name",
    )?;
    let groups = stmt
        .query_map([uid], |r| r.get(0))?
        .collect::<rusqlite::Result<Vec<String>>>()?;
    Ok(UserAccount {
        user_id: uid,
        login,
        groups,
        is_admin,
    })
}

pub fn list_users(conn: &Connection) -> Result<Vec<UserAccount>> {
    let ids: Vec<UserId> = conn
        .prepare("SELECT id FROM users ORDER BY login")?
        .query_map([], |r| r.get(0))?
        .collect::<rusqlite::Result<_>>()?;
    ids.into_iter().map(|id| get_user(conn, id)).collect()
}

pub fn user_count(conn: &Connection) -> Result<i64> {
    Ok(conn.query_row("SELECT COUNT(*) FROM users", [], |r| r.get(0))?)
}

pub fn add_to_group(conn: &Connection, uid: UserId, group: &str) -> Result<()> {
    let gid = ensure_group(conn, group)?;
    conn.execute(
        "INSERT OR IGNORE INTO user_groups(user_id, group_id) VALUES (?1, ?2)",
        params![uid, gid],
    )?;
    Ok(())
}

pub fn principal(conn: &Connection, uid: UserId) -> Result<Principal> {
    let (login, primary_group, is_admin): (String, GroupId, bool) = conn
        .query_row(
            "SELECT login, primary_group, is_admin FROM users WHERE id = ?1",
            [uid],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
        )
        .or_missing(|| Error::UnknownUser(uid.to_string()))?;
    let groups: BTreeSet<GroupId> = conn
        .prepare("SELECT group_id FROM user_groups WHERE user_id = ?1")?
        .query_map([uid], |r| r.get(0))?
        .collect::<rusqlite::Result<_>>()?;
    Ok(Principal {
        user_id: uid,
        login,
        primary_group,
        groups,
        is_admin,
    })
}

/// Issues a fresh 256-bit token. Unknown login and wrong password produce
/// the same error.
pub fn authenticate(
    conn: &Connection,
    login: &str,
    password: &str,
    now: DateTime<Utc>,
    ttl: Duration,
) -> Result<Session> {
    let row: Option<(UserId, String)> = conn
        .query_row(
            "SELECT id, password_hash FROM users WHERE login = ?1",
            [login],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )
        .optional()?;
    let (uid, ok) = match row {
        Some((uid, hash)) => (uid, verify_password(password, &hash)),
        None => {
            verify_password(password, dummy_hash());
            (0, false)
        }
    };
    if !ok {
        return Err(Error::InvalidCredentials);
    }
    let mut raw = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut raw);
    let token: String = raw.iter().map(|b| format!("{b:02x}")).collect();
    let expires_at = now + ttl;
    conn.execute(
        "INSERT INTO sessions(token_hash, user_id, created_at, expires_at) VALUES (?1, ?2, ?3, ?4)",
        params![token_digest(&token), uid, format_ts(&now), format_ts(&expires_at)],
    )?;
    Ok(Session {
        token,
        user_id: uid,
        created_at: now,
        expires_at,
    })
}

/// Resolves a bearer token; expired or unknown tokens are rejected.
pub fn resolve_token(conn: &Connection, token: &str, now: DateTime<Utc>) -> Result<Principal> {
    let row: Option<(UserId, String)> = conn
        .query_row(
            "SELECT user_id, expires_at FROM sessions WHERE token_hash = ?1",
            [token_digest(token)],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )
        .optional()?;
    let (uid, expires) = row.ok_or(Error::Unauthenticated)?;
    let expires = parse_ts(&expires).ok_or_else(|| Error::Internal("corrupt session expiry".into()))?;
    if now >= expires {
        return Err(Error::Unauthenticated);
    }
    principal(conn, uid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Store;

    fn t0() -> DateTime<Utc> {
        parse_ts("2009-09-01T00:00:00Z").unwrap()
    }

    #[test]
    fn login_flow_and_expiry() {
        let store = Store::in_memory().unwrap();
        store
            .write(|tx| create_user(tx, "alice", "s3cret", &["terapix".into()], false, t0()))
            .unwrap();
        let s = store
            .write(|tx| authenticate(tx, "alice", "s3cret", t0(), Duration::hours(1)))
            .unwrap();
        assert_eq!(s.token.len(), 64);
        let p = store.read(|c| resolve_token(c, &s.token, t0())).unwrap();
        assert_eq!(p.login, "alice");
        assert_eq!(p.groups.len(), 2);
        let later = t0() + Duration::hours(2);
        let err = store.read(|c| resolve_token(c, &s.token, later)).unwrap_err();
        assert_eq!(err.code(), "UNAUTHENTICATED");
        assert!(store.read(|c| resolve_token(c, "nope", t0())).is_err());
    }

    #[test]
    fn bad_user_and_bad_password_are_indistinguishable() {
        let store = Store::in_memory().unwrap();
        store
            .write(|tx| create_user(tx, "alice", "s3cret", &[], false, t0()))
            .unwrap();
        let a = store
            .write(|tx| authenticate(tx, "alice", "wrong", t0(), Duration::hours(1)))
            .unwrap_err();
        let b = store
            .write(|tx| authenticate(tx, "mallory", "s3cret", t0(), Duration::hours(1)))
            .unwrap_err();
        assert_eq!(a.to_string(), b.to_string());
        assert_eq!(a.code(), "INVALID_CREDENTIALS");
    }

    #[test]
    fn duplicate_login_rejected() {
        let store = Store::in_memory().unwrap();
        store.write(|tx| create_user(tx, "bob", "x", &[], false, t0())).unwrap();
        let err = store
            .write(|tx| create_user(tx, "bob", "y", &[], false, t0()))
            .unwrap_err();
        assert_eq!(err.code(), "DUPLICATE_NAME");
    }
}
