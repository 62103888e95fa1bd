//! Unix-like owner/group/other permissions with read and write bits.
//!
//! Evaluation follows the classic first-match rule: an admin is always
//! allowed; otherwise the owner clause applies to the owner, the group
//! clause to group members, and the other clause to everyone else. Exactly
//! one clause is consulted, so an owner with `--|rw|rw` cannot read their
//! own object.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type UserId = i64;
pub type GroupId = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Read,
    Write,
}

/// Six permission bits. Renders as `rw|r-|--`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PermissionMode {
    pub owner_r: bool,
    pub owner_w: bool,
    pub group_r: bool,
    pub group_w: bool,
    pub other_r: bool,
    pub other_w: bool,
}

impl PermissionMode {
    /// `rw|r-|--`: owner read/write, group read, nothing for others.
    pub const DEFAULT: PermissionMode = PermissionMode {
        owner_r: true,
        owner_w: true,
        group_r: true,
        group_w: false,
        other_r: false,
        other_w: false,
    };

    pub const WORLD_READABLE: PermissionMode = PermissionMode {
        owner_r: true,
        owner_w: true,
        group_r: true,
        group_w: false,
        other_r: true,
        other_w: false,
    };

    /// Packs the mode as three 2-bit digits, owner most significant,
    /// read = 2 and write = 1 within each digit.
    pub fn bits(&self) -> u8 {
        let digit = |r: bool, w: bool| ((r as u8) << 1) | (w as u8);
        (digit(self.owner_r, self.owner_w) << 4)
            | (digit(self.group_r, self.group_w) << 2)
            | digit(self.other_r, self.other_w)
    }

    pub fn from_bits(bits: u8) -> Self {
        PermissionMode {
            owner_r: bits & 0b10_00_00 != 0,
            owner_w: bits & 0b01_00_00 != 0,
            group_r: bits & 0b00_10_00 != 0,
            group_w: bits & 0b00_01_00 != 0,
            other_r: bits & 0b00_00_10 != 0,
            other_w: bits & 0b00_00_01 != 0,
        }
    }

    fn clause(&self, relation: Relation) -> (bool, bool) {
        match relation {
            Relation::Owner => (self.owner_r, self.owner_w),
            Relation::Group => (self.group_r, self.group_w),
            Relation::Other => (self.other_r, self.other_w),
        }
    }
}

impl Default for PermissionMode {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for PermissionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |b: bool, ch: char| if b { ch } else { '-' };
        write!(
            f,
            "{}{}|{}{}|{}{}",
            c(self.owner_r, 'r'),
            c(self.owner_w, 'w'),
            c(self.group_r, 'r'),
            c(self.group_w, 'w'),
            c(self.other_r, 'r'),
            c(self.other_w, 'w'),
        )
    }
}

impl FromStr for PermissionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("invalid mode string {s:?}, expected e.g. rw|r-|--"));
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut bits = [false; 6];
        for (i, part) in parts.iter().enumerate() {
            let b = part.as_bytes();
            if b.len() != 2 {
                return Err(bad());
            }
            bits[2 * i] = match b[0] {
                b'r' => true,
                b'-' => false,
                _ => return Err(bad()),
            };
            bits[2 * i + 1] = match b[1] {
                b'w' => true,
                b'-' => false,
                _ => return Err(bad()),
            };
        }
        Ok(PermissionMode {
            owner_r: bits[0],
            owner_w: bits[1],
            group_r: bits[2],
            group_w: bits[3],
            other_r: bits[4],
            other_w: bits[5],
        })
    }
}

impl Serialize for PermissionMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PermissionMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ownership triple carried by every shareable object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ownership {
    pub owner: UserId,
    pub group: GroupId,
    pub mode: PermissionMode,
}

impl Ownership {
    pub fn new(owner: UserId, group: GroupId) -> Self {
        Ownership {
            owner,
            group,
            mode: PermissionMode::DEFAULT,
        }
    }
}

/// The authenticated caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Principal {
    pub user_id: UserId,
    pub login: String,
    /// Personal group, used as the group of newly created objects.
    pub primary_group: GroupId,
    pub groups: BTreeSet<GroupId>,
    pub is_admin: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Owner,
    Group,
    Other,
}

pub fn relation(user: &Principal, obj: &Ownership) -> Relation {
    if obj.owner == user.user_id {
        Relation::Owner
    } else if user.groups.contains(&obj.group) {
        Relation::Group
    } else {
        Relation::Other
    }
}

pub fn check_access(user: &Principal, obj: &Ownership, action: Action) -> bool {
    if user.is_admin {
        return true;
    }
    let (r, w) = obj.mode.clause(relation(user, obj));
    match action {
        Action::Read => r,
        Action::Write => w,
    }
}

pub fn require(user: &Principal, obj: &Ownership, action: Action) -> Result<()> {
    if check_access(user, obj, action) {
        Ok(())
    } else {
        Err(Error::PermissionDenied)
    }
}

/// Mode changes are reserved to the owner and admins.
pub fn change_mode(user: &Principal, obj: &mut Ownership, new_mode: PermissionMode) -> Result<()> {
    if !user.is_admin && user.user_id != obj.owner {
        return Err(Error::PermissionDenied);
    }
    obj.mode = new_mode;
    Ok(())
}

pub fn change_owner_group(
    caller: &Principal,
    obj: &mut Ownership,
    new_owner: Option<UserId>,
    new_group: Option<GroupId>,
) -> Result<()> {
    if !caller.is_admin {
        return Err(Error::PermissionDenied);
    }
    if let Some(o) = new_owner {
        obj.owner = o;
    }
    if let Some(g) = new_group {
        obj.group = g;
    }
    Ok(())
}
