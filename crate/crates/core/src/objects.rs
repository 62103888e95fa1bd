//! Generic owner/group/mode access to every ownable table.

use std::fmt;
use std::str::FromStr;

use rusqlite::{params, Connection};
use serde::{Deserialize, Serialize};

use crate::accounts;
use crate::authz::{change_mode, change_owner_group, GroupId, Ownership, PermissionMode, Principal, UserId};
use crate::error::{Error, Result};
use crate::store::OptionalExt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Image,
    Selection,
    Tag,
    Config,
    CartItem,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 5] = [
        ObjectKind::Image,
        ObjectKind::Selection,
        ObjectKind::Tag,
        ObjectKind::Config,
        ObjectKind::CartItem,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectKind::Image => "image",
            ObjectKind::Selection => "selection",
            ObjectKind::Tag => "tag",
            ObjectKind::Config => "config",
            ObjectKind::CartItem => "cart_item",
        }
    }

    fn table(&self) -> &'static str {
        match self {
            ObjectKind::Image => "images",
            ObjectKind::Selection => "selections",
            ObjectKind::Tag => "tags",
            ObjectKind::Config => "configs",
            ObjectKind::CartItem => "cart_items",
        }
    }

    fn missing(&self, id: i64) -> Error {
        match self {
            ObjectKind::Image => Error::UnknownImage(id),
            ObjectKind::Selection => Error::UnknownSelection(id.to_string()),
            ObjectKind::Tag => Error::UnknownTag(id.to_string()),
            ObjectKind::Config => Error::UnknownReference(format!("config {id}")),
            ObjectKind::CartItem => Error::UnknownItem(id),
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        ObjectKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm || (norm == "cart" && *k == ObjectKind::CartItem))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown object kind {s:?}")))
    }
}

pub fn ownership_of(conn: &Connection, kind: ObjectKind, id: i64) -> Result<Ownership> {
    let (owner, group, mode): (UserId, GroupId, u8) = conn
        .query_row(
            &format!("SELECT owner, grp, mode FROM {} WHERE id = ?1", kind.table()),
            [id],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
        )
        .or_missing(|| kind.missing(id))?;
    Ok(Ownership {
        owner,
        group,
        mode: PermissionMode::from_bits(mode),
    })
}

fn store_ownership(conn: &Connection, kind: ObjectKind, id: i64, o: &Ownership) -> Result<()> {
    conn.execute(
        &format!("UPDATE {} SET owner = ?2, grp = ?3, mode = ?4 WHERE id = ?1", kind.table()),
        params![id, o.owner, o.group, o.mode.bits()],
    )?;
    Ok(())
}

pub fn chmod(conn: &Connection, kind: ObjectKind, id: i64, mode: PermissionMode, user: &Principal) -> Result<Ownership> {
    let mut o = ownership_of(conn, kind, id)?;
    change_mode(user, &mut o, mode)?;
    store_ownership(conn, kind, id, &o)?;
    Ok(o)
}

/// Admin-only transfer of owner and/or group, addressed by login and group
/// name.
pub fn chown(
    conn: &Connection,
    kind: ObjectKind,
    id: i64,
    owner_login: Option<&str>,
    group_name: Option<&str>,
    caller: &Principal,
) -> Result<Ownership> {
    let mut o = ownership_of(conn, kind, id)?;
    if !caller.is_admin {
        return Err(Error::PermissionDenied);
    }
    let owner = owner_login.map(|l| accounts::user_id(conn, l)).transpose()?;
    let group = group_name.map(|g| accounts::group_id(conn, g)).transpose()?;
    change_owner_group(caller, &mut o, owner, group)?;
    store_ownership(conn, kind, id, &o)?;
    Ok(o)
}
