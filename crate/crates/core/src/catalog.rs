//! Image records, conjunctive queries, saved selections, tags and saved
//! data paths.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rusqlite::types::Value;
use rusqlite::{params, params_from_iter, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};

use crate::authz::{check_access, require, Action, GroupId, Ownership, PermissionMode, Principal, UserId};
use crate::checksum::is_checksum;
use crate::clock::{format_ts, parse_ts};
use crate::error::{Error, Result};
use crate::instrument::{ImageMeta, Instrument};
use crate::store::{is_unique_violation, OptionalExt};

pub type ImageId = i64;
pub type SelectionId = i64;
pub type TagId = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grade {
    A,
    B,
    C,
    D,
}

impl Grade {
    pub fn as_str(&self) -> &'static str {
        match self {
            Grade::A => "A",
            Grade::B => "B",
            Grade::C => "C",
            Grade::D => "D",
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grade {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Grade::A),
            "B" => Ok(Grade::B),
            "C" => Ok(Grade::C),
            "D" => Ok(Grade::D),
            _ => Err(Error::InvalidArgument(format!("grade must be one of A, B, C, D; got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub filename: String,
    pub abs_path: String,
    pub checksum: String,
    pub instrument: Instrument,
    pub run_id: Option<String>,
    pub filter: Option<String>,
    pub object: Option<String>,
    pub date_obs: Option<DateTime<Utc>>,
    pub exptime: Option<f64>,
    pub grade: Option<Grade>,
    pub tags: Vec<String>,
    pub ingestion_id: i64,
    pub owner: UserId,
    pub group: GroupId,
    pub mode: PermissionMode,
}

impl ImageRecord {
    pub fn ownership(&self) -> Ownership {
        Ownership {
            owner: self.owner,
            group: self.group,
            mode: self.mode,
        }
    }
}

/// Conjunction of optional predicates. The empty query matches everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub run_id: Option<String>,
    pub filter: Option<String>,
    pub instrument: Option<Instrument>,
    pub grade: Option<Grade>,
    pub has_tag: Option<String>,
    /// SQLite `GLOB` syntax: `*`, `?`, `[...]`, case-sensitive.
    pub filename_glob: Option<String>,
    pub ingestion_id: Option<i64>,
    pub date_from: Option<DateTime<Utc>>,
    pub date_to: Option<DateTime<Utc>>,
    pub in_selection: Option<String>,
}

const IMAGE_COLUMNS: &str = "id, filename, abs_path, checksum, instrument, run_id, filter, object, \
     date_obs, exptime, grade, ingestion_id, owner, grp, mode";

fn image_from_row(r: &Row<'_>) -> rusqlite::Result<ImageRecord> {
    let instrument: String = r.get(4)?;
    let date_obs: Option<String> = r.get(8)?;
    let grade: Option<String> = r.get(10)?;
    let conv = |idx: usize, e: Error| rusqlite::Error::FromSqlConversionFailure(idx, rusqlite::types::Type::Text, Box::new(e));
    Ok(ImageRecord {
        image_id: r.get(0)?,
        filename: r.get(1)?,
        abs_path: r.get(2)?,
        checksum: r.get(3)?,
        instrument: instrument.parse().map_err(|e| conv(4, e))?,
        run_id: r.get(5)?,
        filter: r.get(6)?,
        object: r.get(7)?,
        date_obs: date_obs.as_deref().and_then(parse_ts),
        exptime: r.get(9)?,
        grade: grade.map(|g| g.parse()).transpose().map_err(|e| conv(10, e))?,
        tags: Vec::new(),
        ingestion_id: r.get(11)?,
        owner: r.get(12)?,
        group: r.get(13)?,
        mode: PermissionMode::from_bits(r.get::<_, u8>(14)?),
    })
}

fn attach_tags(conn: &Connection, images: &mut [ImageRecord]) -> Result<()> {
    if images.is_empty() {
        return Ok(());
    }
    let wanted: HashSet<ImageId> = images.iter().map(|i| i.image_id).collect();
    let mut by_image: HashMap<ImageId, Vec<String>> = HashMap::new();
    let mut stmt = conn.prepare(
        "SELECT it.image_id, t.name FROM image_tags it JOIN tags t ON t.id = it.tag_id ORDER BY t.name",
    )?;
    let rows = stmt.query_map([], |r| Ok((r.get::<_, ImageId>(0)?, r.get::<_, String>(1)?)))?;
    for row in rows {
        let (id, name) = row?;
        if wanted.contains(&id) {
            by_image.entry(id).or_default().push(name);
        }
    }
    for img in images {
        img.tags = by_image.remove(&img.image_id).unwrap_or_default();
    }
    Ok(())
}

pub fn get_image(conn: &Connection, id: ImageId) -> Result<ImageRecord> {
    let mut img = conn
        .query_row(&format!("SELECT {IMAGE_COLUMNS} FROM images WHERE id = ?1"), [id], image_from_row)
        .or_missing(|| Error::UnknownImage(id))?;
    attach_tags(conn, std::slice::from_mut(&mut img))?;
    Ok(img)
}

pub fn all_images(conn: &Connection) -> Result<Vec<ImageRecord>> {
    let mut stmt = conn.prepare(&format!("SELECT {IMAGE_COLUMNS} FROM images ORDER BY filename, id"))?;
    let mut v = stmt.query_map([], image_from_row)?.collect::<rusqlite::Result<Vec<_>>>()?;
    attach_tags(conn, &mut v)?;
    Ok(v)
}

pub struct NewImage<'a> {
    pub path: &'a Path,
    pub checksum: &'a str,
    pub instrument: Instrument,
    pub meta: &'a ImageMeta,
    pub ingestion_id: i64,
    pub ownership: Ownership,
}

/// Inserts a record; returns `None` when an image with the same checksum
/// is already catalogued.
pub fn insert_image(conn: &Connection, img: &NewImage<'_>) -> Result<Option<ImageId>> {
    let filename = img
        .path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let n = conn.execute(
        "INSERT INTO images(filename, abs_path, checksum, instrument, run_id, filter, object, date_obs, \
         exptime, grade, ingestion_id, owner, grp, mode) \
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, NULL, ?10, ?11, ?12, ?13) \
         ON CONFLICT(checksum) DO NOTHING",
        params![
            filename,
            img.path.to_string_lossy(),
            img.checksum,
            img.instrument.as_str(),
            img.meta.run_id,
            img.meta.filter,
            img.meta.object,
            img.meta.date_obs.as_ref().map(format_ts),
            img.meta.exptime,
            img.ingestion_id,
            img.ownership.owner,
            img.ownership.group,
            img.ownership.mode.bits(),
        ],
    )?;
    Ok((n == 1).then(|| conn.last_insert_rowid()))
}

pub fn set_grade(conn: &Connection, id: ImageId, grade: Option<Grade>, user: &Principal) -> Result<ImageRecord> {
    let img = get_image(conn, id)?;
    require(user, &img.ownership(), Action::Write)?;
    conn.execute(
        "UPDATE images SET grade = ?1 WHERE id = ?2",
        params![grade.map(|g| g.as_str()), id],
    )?;
    get_image(conn, id)
}

/// Images matching every present predicate and readable by `user`, ordered
/// by filename then id.
pub fn query_images(conn: &Connection, q: &Query, user: &Principal) -> Result<Vec<ImageRecord>> {
    let mut clauses: Vec<&str> = Vec::new();
    let mut args: Vec<Value> = Vec::new();
    let mut eq = |clause: &'static str, v: Value| {
        clauses.push(clause);
        args.push(v);
    };
    if let Some(v) = &q.run_id {
        eq("run_id = ?", Value::Text(v.clone()));
    }
    if let Some(v) = &q.filter {
        eq("filter = ?", Value::Text(v.clone()));
    }
    if let Some(v) = q.instrument {
        eq("instrument = ?", Value::Text(v.as_str().into()));
    }
    if let Some(v) = q.grade {
        eq("grade = ?", Value::Text(v.as_str().into()));
    }
    if let Some(v) = &q.filename_glob {
        eq("filename GLOB ?", Value::Text(v.clone()));
    }
    if let Some(v) = q.ingestion_id {
        eq("ingestion_id = ?", Value::Integer(v));
    }
    if let Some(v) = &q.date_from {
        eq("date_obs >= ?", Value::Text(format_ts(v)));
    }
    if let Some(v) = &q.date_to {
        eq("date_obs <= ?", Value::Text(format_ts(v)));
    }
    if let Some(name) = &q.has_tag {
        let tag = tag_by_name(conn, name)?.ok_or_else(|| Error::UnknownTag(name.clone()))?;
        eq(
            "EXISTS (SELECT 1 FROM image_tags it WHERE it.image_id = images.id AND it.tag_id = ?)",
            Value::Integer(tag.tag_id),
        );
    }
    if let Some(name) = &q.in_selection {
        let sel = find_selection(conn, name, user)?;
        eq(
            "EXISTS (SELECT 1 FROM selection_items si WHERE si.image_id = images.id AND si.selection_id = ?)",
            Value::Integer(sel.selection_id),
        );
    }
    let mut sql = format!("SELECT {IMAGE_COLUMNS} FROM images");
    if !clauses.is_empty() {
        sql.push_str(" WHERE ");
        sql.push_str(&clauses.join(" AND "));
    }
    sql.push_str(" ORDER BY filename, id");
    let mut stmt = conn.prepare(&sql)?;
    let rows = stmt.query_map(params_from_iter(args), image_from_row)?;
    let mut out = Vec::new();
    for row in rows {
        let img = row?;
        if check_access(user, &img.ownership(), Action::Read) {
            out.push(img);
        }
    }
    attach_tags(conn, &mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------- selections

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub selection_id: SelectionId,
    pub name: String,
    pub image_ids: Vec<ImageId>,
    pub owner: UserId,
    pub group: GroupId,
    pub mode: PermissionMode,
    pub created_at: DateTime<Utc>,
}

impl Selection {
    pub fn ownership(&self) -> Ownership {
        Ownership {
            owner: self.owner,
            group: self.group,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub selection_id: SelectionId,
    pub name: String,
    pub count: usize,
    pub owner: UserId,
    pub group: GroupId,
    pub mode: PermissionMode,
}

/// Order-preserving deduplication; the first occurrence wins.
pub fn dedup_ids(ids: impl IntoIterator<Item = ImageId>) -> Vec<ImageId> {
    let mut seen = HashSet::new();
    ids.into_iter().filter(|id| seen.insert(*id)).collect()
}

pub fn get_selection(conn: &Connection, id: SelectionId) -> Result<Selection> {
    let (name, owner, group, mode, created_at): (String, UserId, GroupId, u8, String) = conn
        .query_row(
            "SELECT name, owner, grp, mode, created_at FROM selections WHERE id = ?1",
            [id],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)),
        )
        .or_missing(|| Error::UnknownSelection(id.to_string()))?;
    let image_ids = conn
        .prepare("SELECT image_id FROM selection_items WHERE selection_id = ?1 ORDER BY position")?
        .query_map([id], |r| r.get(0))?
        .collect::<rusqlite::Result<Vec<ImageId>>>()?;
    Ok(Selection {
        selection_id: id,
        name,
        image_ids,
        owner,
        group,
        mode: PermissionMode::from_bits(mode),
        created_at: parse_ts(&created_at).unwrap_or_default(),
    })
}

pub fn load_selection(conn: &Connection, id: SelectionId, user: &Principal, action: Action) -> Result<Selection> {
    let sel = get_selection(conn, id)?;
    require(user, &sel.ownership(), action)?;
    Ok(sel)
}

/// Resolves a selection by name: the caller's own selection first, then
/// the oldest readable one. Unreadable selections are reported as unknown.
pub fn find_selection(conn: &Connection, name: &str, user: &Principal) -> Result<Selection> {
    let ids: Vec<(SelectionId, UserId)> = conn
        .prepare("SELECT id, owner FROM selections WHERE name = ?1 ORDER BY id")?
        .query_map([name], |r| Ok((r.get(0)?, r.get(1)?)))?
        .collect::<rusqlite::Result<_>>()?;
    let own = ids.iter().find(|(_, o)| *o == user.user_id);
    let candidates = own.into_iter().chain(ids.iter().filter(|(_, o)| *o != user.user_id));
    for (id, _) in candidates {
        let sel = get_selection(conn, *id)?;
        if check_access(user, &sel.ownership(), Action::Read) {
            return Ok(sel);
        }
    }
    Err(Error::UnknownSelection(name.to_string()))
}

pub fn list_selections(conn: &Connection, user: &Principal) -> Result<Vec<SelectionSummary>> {
    let mut stmt = conn.prepare(
        "SELECT s.id, s.name, s.owner, s.grp, s.mode, \
         (SELECT COUNT(*) FROM selection_items si WHERE si.selection_id = s.id) \
         FROM selections s ORDER BY s.name, s.id",
    )?;
    let rows = stmt.query_map([], |r| {
        Ok(SelectionSummary {
            selection_id: r.get(0)?,
            name: r.get(1)?,
            owner: r.get(2)?,
            group: r.get(3)?,
            mode: PermissionMode::from_bits(r.get(4)?),
            count: r.get::<_, i64>(5)? as usize,
        })
    })?;
    let mut out = Vec::new();
    for s in rows {
        let s = s?;
        let o = Ownership {
            owner: s.owner,
            group: s.group,
            mode: s.mode,
        };
        if check_access(user, &o, Action::Read) {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn save_selection(
    conn: &Connection,
    name: &str,
    image_ids: &[ImageId],
    user: &Principal,
    now: DateTime<Utc>,
) -> Result<Selection> {
    if name.trim().is_empty() {
        return Err(Error::InvalidArgument("selection name must not be empty".into()));
    }
    let ids = dedup_ids(image_ids.iter().copied());
    let mut lookup = conn.prepare("SELECT owner, grp, mode FROM images WHERE id = ?1")?;
    for id in &ids {
        let (owner, group, mode): (UserId, GroupId, u8) = lookup
            .query_row([id], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))
            .or_missing(|| Error::UnknownImage(*id))?;
        let o = Ownership {
            owner,
            group,
            mode: PermissionMode::from_bits(mode),
        };
        require(user, &o, Action::Read)?;
    }
    let own = Ownership::new(user.user_id, user.primary_group);
    conn.execute(
        "INSERT INTO selections(name, owner, grp, mode, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![name, own.owner, own.group, own.mode.bits(), format_ts(&now)],
    )
    .map_err(|e| {
        if is_unique_violation(&e) {
            Error::DuplicateName(name.to_string())
        } else {
            e.into()
        }
    })?;
    let sid = conn.last_insert_rowid();
    let mut ins = conn.prepare("INSERT INTO selection_items(selection_id, position, image_id) VALUES (?1, ?2, ?3)")?;
    for (pos, id) in ids.iter().enumerate() {
        ins.execute(params![sid, pos as i64, id])?;
    }
    get_selection(conn, sid)
}

/// Union of the sources in source order, first occurrence wins, saved as
/// a new selection.
pub fn merge_selections(
    conn: &Connection,
    target_name: &str,
    sources: &[SelectionId],
    user: &Principal,
    now: DateTime<Utc>,
) -> Result<Selection> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("merge needs at least one source".into()));
    }
    let mut ids = Vec::new();
    for sid in sources {
        ids.extend(load_selection(conn, *sid, user, Action::Read)?.image_ids);
    }
    save_selection(conn, target_name, &ids, user, now)
}

pub fn delete_selection(conn: &Connection, id: SelectionId, user: &Principal) -> Result<()> {
    load_selection(conn, id, user, Action::Write)?;
    conn.execute("DELETE FROM selection_items WHERE selection_id = ?1", [id])?;
    conn.execute("DELETE FROM selections WHERE id = ?1", [id])?;
    Ok(())
}

// ------------------------------------------------------ selection text format

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionLine {
    pub line: usize,
    pub filename: String,
    pub checksum: Option<String>,
}

/// Parses the plain-text selection format: `#` comment lines, blank lines,
/// and data lines `filename` or `filename checksum`.
pub fn parse_selection_text(text: &str) -> Result<Vec<SelectionLine>> {
    let mut out = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| Error::MalformedLine {
            line: line_no,
            reason: reason.to_string(),
        };
        let mut parts = line.split(' ');
        let filename = parts.next().unwrap_or_default();
        if filename.is_empty() || filename.contains('\t') {
            return Err(malformed("line must start with a file name"));
        }
        let checksum = match parts.next() {
            None => None,
            Some(c) if is_checksum(c) => Some(c.to_string()),
            Some(_) => return Err(malformed("second column must be a 32-digit lowercase hex checksum")),
        };
        if parts.next().is_some() {
            return Err(malformed("too many columns"));
        }
        out.push(SelectionLine {
            line: line_no,
            filename: filename.to_string(),
            checksum,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReportLine {
    pub line: usize,
    pub filename: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub resolved: usize,
    pub unresolved: Vec<ReportLine>,
    /// Several catalog images share the name and no checksum disambiguates.
    pub ambiguous: Vec<ReportLine>,
    pub checksum_mismatch: Vec<ReportLine>,
}

impl ImportReport {
    pub fn is_clean(&self) -> bool {
        self.unresolved.is_empty() && self.ambiguous.is_empty() && self.checksum_mismatch.is_empty()
    }
}

pub fn import_selection_text(
    conn: &Connection,
    name: &str,
    text: &str,
    user: &Principal,
    now: DateTime<Utc>,
) -> Result<(Selection, ImportReport)> {
    let lines = parse_selection_text(text)?;
    let mut by_name = conn.prepare(
        "SELECT id, checksum, owner, grp, mode FROM images WHERE filename = ?1 ORDER BY id",
    )?;
    let mut report = ImportReport::default();
    let mut ids = Vec::new();
    for l in lines {
        let candidates: Vec<(ImageId, String)> = by_name
            .query_map([&l.filename], |r| {
                Ok((
                    r.get::<_, ImageId>(0)?,
                    r.get::<_, String>(1)?,
                    Ownership {
                        owner: r.get(2)?,
                        group: r.get(3)?,
                        mode: PermissionMode::from_bits(r.get(4)?),
                    },
                ))
            })?
            .filter_map(|row| match row {
                Ok((id, sum, o)) if check_access(user, &o, Action::Read) => Some(Ok((id, sum))),
                Ok(_) => None,
                Err(e) => Some(Err(e)),
            })
            .collect::<rusqlite::Result<_>>()?;
        let entry = ReportLine {
            line: l.line,
            filename: l.filename.clone(),
        };
        match (&l.checksum, candidates.as_slice()) {
            (_, []) => report.unresolved.push(entry),
            (Some(sum), c) => match c.iter().find(|(_, s)| s == sum) {
                Some((id, _)) => {
                    ids.push(*id);
                    report.resolved += 1;
                }
                None => report.checksum_mismatch.push(entry),
            },
            (None, [(id, _)]) => {
                ids.push(*id);
                report.resolved += 1;
            }
            (None, _) => report.ambiguous.push(entry),
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyResolution);
    }
    let sel = save_selection(conn, name, &ids, user, now)?;
    Ok((sel, report))
}

pub fn export_selection_text(conn: &Connection, id: SelectionId, user: &Principal) -> Result<String> {
    let sel = load_selection(conn, id, user, Action::Read)?;
    let mut out = format!("# selection {}\n", sel.name);
    let mut stmt = conn.prepare("SELECT filename, checksum FROM images WHERE id = ?1")?;
    for id in &sel.image_ids {
        let (f, c): (String, String) = stmt
            .query_row([id], |r| Ok((r.get(0)?, r.get(1)?)))
            .or_missing(|| Error::UnknownImage(*id))?;
        out.push_str(&f);
        out.push(' ');
        out.push_str(&c);
        out.push('\n');
    }
    Ok(out)
}

/// `*.txt` files directly inside `dir`, in lexicographic order.
pub fn selection_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Err(Error::PathNotFound(dir.to_path_buf()));
    }
    if !dir.is_dir() {
        return Err(Error::NotADirectory(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "txt") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

// ---------------------------------------------------------------------- tags

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tag {
    pub tag_id: TagId,
    pub name: String,
    pub style: Option<String>,
    pub owner: UserId,
    pub group: GroupId,
    pub mode: PermissionMode,
}

fn tag_from_row(r: &Row<'_>) -> rusqlite::Result<Tag> {
    Ok(Tag {
        tag_id: r.get(0)?,
        name: r.get(1)?,
        style: r.get(2)?,
        owner: r.get(3)?,
        group: r.get(4)?,
        mode: PermissionMode::from_bits(r.get(5)?),
    })
}

pub fn tag_by_name(conn: &Connection, name: &str) -> Result<Option<Tag>> {
    Ok(conn
        .query_row(
            "SELECT id, name, style, owner, grp, mode FROM tags WHERE name = ?1",
            [name],
            tag_from_row,
        )
        .optional()?)
}

pub fn list_tags(conn: &Connection) -> Result<Vec<Tag>> {
    let mut stmt = conn.prepare("SELECT id, name, style, owner, grp, mode FROM tags ORDER BY name")?;
    let v = stmt.query_map([], tag_from_row)?.collect::<rusqlite::Result<_>>()?;
    Ok(v)
}

pub fn create_tag(conn: &Connection, name: &str, style: Option<&str>, user: &Principal) -> Result<Tag> {
    if name.is_empty() {
        return Err(Error::InvalidArgument("tag name must not be empty".into()));
    }
    let o = Ownership::new(user.user_id, user.primary_group);
    conn.execute(
        "INSERT INTO tags(name, style, owner, grp, mode) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![name, style, o.owner, o.group, o.mode.bits()],
    )
    .map_err(|e| {
        if is_unique_violation(&e) {
            Error::DuplicateName(name.to_string())
        } else {
            e.into()
        }
    })?;
    tag_by_name(conn, name)?.ok_or_else(|| Error::Internal("tag vanished after insert".into()))
}

/// Marks or unmarks `image_ids` with a tag. Marking creates the tag on
/// first use. Returns the number of images whose tag set changed.
pub fn apply_tag(
    conn: &Connection,
    tag_name: &str,
    image_ids: &[ImageId],
    mark: bool,
    user: &Principal,
) -> Result<usize> {
    let tag = match (tag_by_name(conn, tag_name)?, mark) {
        (Some(t), _) => t,
        (None, true) => create_tag(conn, tag_name, None, user)?,
        (None, false) => return Err(Error::UnknownTag(tag_name.to_string())),
    };
    let ids = dedup_ids(image_ids.iter().copied());
    let mut lookup = conn.prepare("SELECT owner, grp, mode FROM images WHERE id = ?1")?;
    for id in &ids {
        let (owner, group, mode): (UserId, GroupId, u8) = lookup
            .query_row([id], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))
            .or_missing(|| Error::UnknownImage(*id))?;
        let o = Ownership {
            owner,
            group,
            mode: PermissionMode::from_bits(mode),
        };
        require(user, &o, Action::Write)?;
    }
    let sql = if mark {
        "INSERT OR IGNORE INTO image_tags(image_id, tag_id) VALUES (?1, ?2)"
    } else {
        "DELETE FROM image_tags WHERE image_id = ?1 AND tag_id = ?2"
    };
    let mut stmt = conn.prepare(sql)?;
    let mut changed = 0;
    for id in &ids {
        changed += stmt.execute(params![id, tag.tag_id])?;
    }
    Ok(changed)
}

// --------------------------------------------------------------- saved paths

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SavedPath {
    pub path_id: i64,
    pub path: String,
    pub owner: UserId,
    pub created_at: DateTime<Utc>,
}

pub fn save_path(conn: &Connection, path: &str, user: &Principal, now: DateTime<Utc>) -> Result<SavedPath> {
    if path.trim().is_empty() {
        return Err(Error::InvalidArgument("path must not be empty".into()));
    }
    conn.execute(
        "INSERT INTO saved_paths(path, owner, created_at) VALUES (?1, ?2, ?3)",
        params![path, user.user_id, format_ts(&now)],
    )?;
    get_path(conn, conn.last_insert_rowid())
}

pub fn get_path(conn: &Connection, id: i64) -> Result<SavedPath> {
    conn.query_row(
        "SELECT id, path, owner, created_at FROM saved_paths WHERE id = ?1",
        [id],
        |r| {
            Ok(SavedPath {
                path_id: r.get(0)?,
                path: r.get(1)?,
                owner: r.get(2)?,
                created_at: parse_ts(&r.get::<_, String>(3)?).unwrap_or_default(),
            })
        },
    )
    .or_missing(|| Error::UnknownReference(format!("saved path {id}")))
}

pub fn list_paths(conn: &Connection, user: &Principal) -> Result<Vec<SavedPath>> {
    let ids: Vec<i64> = conn
        .prepare("SELECT id FROM saved_paths WHERE owner = ?1 ORDER BY id")?
        .query_map([user.user_id], |r| r.get(0))?
        .collect::<rusqlite::Result<_>>()?;
    ids.into_iter().map(|id| get_path(conn, id)).collect()
}
