//! Processing plugins, configuration files, cart items and command-line
//! construction.
//!
//! A plugin is declarative: a descriptor naming an external executable and
//! a command template whose tokens may contain the placeholders
//! `{EXECUTABLE}`, `{CONFIG_PATH}`, `{IMAGE_LIST_PATH}`, `{OUTPUT_DIR}` and
//! `{EXTRA}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};

use crate::authz::{check_access, require, Action, GroupId, Ownership, PermissionMode, Principal, UserId};
use crate::catalog::{self, dedup_ids, ImageId, ImageRecord, SelectionId};
use crate::clock::{format_ts, parse_ts};
use crate::error::{Error, Result};
use crate::store::{from_json, is_unique_violation, to_json, OptionalExt};

pub const PLACEHOLDERS: [&str; 5] = ["EXECUTABLE", "CONFIG_PATH", "IMAGE_LIST_PATH", "OUTPUT_DIR", "EXTRA"];

/// Config key whose whitespace-separated value replaces `{EXTRA}`.
pub const EXTRA_ARGS_KEY: &str = "EXTRA_ARGS";

pub const IMAGE_LIST_FILE: &str = "images.lst";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigKey {
    pub key: String,
    pub default: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginDescriptor {
    pub plugin_id: String,
    pub display_name: String,
    pub enabled: bool,
    pub executable: String,
    pub config_keys: Vec<ConfigKey>,
    pub command_template: Vec<String>,
}

impl PluginDescriptor {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDescriptor(m));
        if self.plugin_id.is_empty()
            || !self
                .plugin_id
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
        {
            return bad(format!("plugin id {:?} must match [a-z0-9_-]+", self.plugin_id));
        }
        if self.executable.is_empty() {
            return bad("executable must not be empty".into());
        }
        let mut exec_count = 0;
        for tok in &self.command_template {
            for name in placeholders_in(tok)? {
                if !PLACEHOLDERS.contains(&name) {
                    return bad(format!("unknown placeholder {{{name}}}"));
                }
                if name == "EXECUTABLE" {
                    exec_count += 1;
                }
            }
        }
        if exec_count != 1 {
            return bad(format!("template must contain {{EXECUTABLE}} exactly once, found {exec_count}"));
        }
        for k in &self.config_keys {
            if k.key.is_empty() || k.key.contains(char::is_whitespace) {
                return bad(format!("invalid config key {:?}", k.key));
            }
        }
        Ok(())
    }

    /// Parses the flat descriptor file: `key value` lines with keys `id`,
    /// `name`, `executable`, `template` and `config_keys`
    /// (`KEY=default,KEY=default`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(' ').ok_or_else(|| Error::ParseError {
                line: i + 1,
                reason: "expected `key value`".into(),
            })?;
            if !matches!(k, "id" | "name" | "executable" | "template" | "config_keys") {
                return Err(Error::ParseError {
                    line: i + 1,
                    reason: format!("unknown descriptor key {k:?}"),
                });
            }
            fields.insert(k, v.trim());
        }
        let need = |k: &str| {
            fields
                .get(k)
                .map(|v| v.to_string())
                .ok_or_else(|| Error::InvalidDescriptor(format!("missing `{k}`")))
        };
        let plugin_id = need("id")?;
        let config_keys = match fields.get("config_keys") {
            None => Vec::new(),
            Some(v) => v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|pair| {
                    let (key, default) = pair.trim().split_once('=').unwrap_or((pair.trim(), ""));
                    ConfigKey {
                        key: key.to_string(),
                        default: default.to_string(),
                    }
                })
                .collect(),
        };
        let d = PluginDescriptor {
            display_name: fields.get("name").map(|s| s.to_string()).unwrap_or_else(|| plugin_id.clone()),
            plugin_id,
            enabled: true,
            executable: need("executable")?,
            config_keys,
            command_template: need("template")?.split_whitespace().map(String::from).collect(),
        };
        d.validate()?;
        Ok(d)
    }
}

fn placeholders_in(token: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let mut rest = token;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::InvalidDescriptor(format!("unclosed placeholder in {token:?}")))?;
        out.push(&after[..end]);
        rest = &after[end + 1..];
    }
    Ok(out)
}

type Builtin = (&'static str, &'static str, &'static [(&'static str, &'static str)]);

const BUILTINS: [Builtin; 4] = [
    (
        "qualityfits",
        "QualityFITS",
        &[("MOCK_SLEEP_MS", "1000"), ("MOCK_EXIT_CODE", "0"), ("PSF_SIZE", "10")],
    ),
    (
        "scamp",
        "SCAMP",
        &[("MOCK_SLEEP_MS", "1000"), ("MOCK_EXIT_CODE", "0"), ("ASTREF_CATALOG", "2MASS")],
    ),
    (
        "swarp",
        "SWarp",
        &[("MOCK_SLEEP_MS", "1000"), ("MOCK_EXIT_CODE", "0"), ("COMBINE_TYPE", "MEDIAN")],
    ),
    (
        "sextractor",
        "SExtractor",
        &[("MOCK_SLEEP_MS", "1000"), ("MOCK_EXIT_CODE", "0"), ("DETECT_THRESH", "1.5")],
    ),
];

pub const DEFAULT_TEMPLATE: &str = "{EXECUTABLE} -c {CONFIG_PATH} -o {OUTPUT_DIR} @{IMAGE_LIST_PATH} {EXTRA}";

/// Executable name of the mock tool standing in for a built-in plugin.
pub fn mock_executable_name(plugin_id: &str) -> String {
    format!("youpi-mock-{plugin_id}")
}

pub fn builtin_descriptors(tools_dir: Option<&Path>) -> Vec<PluginDescriptor> {
    BUILTINS
        .iter()
        .map(|(id, name, keys)| {
            let exe = mock_executable_name(id);
            PluginDescriptor {
                plugin_id: id.to_string(),
                display_name: name.to_string(),
                enabled: true,
                executable: match tools_dir {
                    Some(d) => d.join(&exe).to_string_lossy().into_owned(),
                    None => exe,
                },
                config_keys: keys
                    .iter()
                    .map(|(k, v)| ConfigKey {
                        key: k.to_string(),
                        default: v.to_string(),
                    })
                    .collect(),
                command_template: DEFAULT_TEMPLATE.split(' ').map(String::from).collect(),
            }
        })
        .collect()
}

fn plugin_from_row(r: &Row<'_>) -> rusqlite::Result<(PluginDescriptor, String, String)> {
    Ok((
        PluginDescriptor {
            plugin_id: r.get(0)?,
            display_name: r.get(1)?,
            enabled: r.get(2)?,
            executable: r.get(3)?,
            config_keys: Vec::new(),
            command_template: Vec::new(),
        },
        r.get(4)?,
        r.get(5)?,
    ))
}

fn finish_plugin((mut d, keys, tpl): (PluginDescriptor, String, String)) -> Result<PluginDescriptor> {
    d.config_keys = from_json(&keys)?;
    d.command_template = from_json(&tpl)?;
    Ok(d)
}

/// Installs the built-ins. Existing rows keep their enabled flag; the
/// executable path follows the current tools directory.
pub fn install_builtins(conn: &Connection, tools_dir: Option<&Path>) -> Result<()> {
    for d in builtin_descriptors(tools_dir) {
        conn.execute(
            "INSERT INTO plugins(id, display_name, enabled, executable, config_keys, command_template) \
             VALUES (?1, ?2, 1, ?3, ?4, ?5) \
             ON CONFLICT(id) DO UPDATE SET executable = excluded.executable",
            params![
                d.plugin_id,
                d.display_name,
                d.executable,
                to_json(&d.config_keys),
                to_json(&d.command_template)
            ],
        )?;
    }
    Ok(())
}

pub fn register_plugin(conn: &Connection, d: &PluginDescriptor, user: &Principal) -> Result<PluginDescriptor> {
    if !user.is_admin {
        return Err(Error::PermissionDenied);
    }
    d.validate()?;
    conn.execute(
        "INSERT INTO plugins(id, display_name, enabled, executable, config_keys, command_template) \
         VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
        params![
            d.plugin_id,
            d.display_name,
            d.enabled,
            d.executable,
            to_json(&d.config_keys),
            to_json(&d.command_template)
        ],
    )
    .map_err(|e| {
        if is_unique_violation(&e) {
            Error::DuplicateName(d.plugin_id.clone())
        } else {
            e.into()
        }
    })?;
    get_plugin(conn, &d.plugin_id)
}

pub fn get_plugin(conn: &Connection, id: &str) -> Result<PluginDescriptor> {
    let row = conn
        .query_row(
            "SELECT id, display_name, enabled, executable, config_keys, command_template FROM plugins WHERE id = ?1",
            [id],
            plugin_from_row,
        )
        .or_missing(|| Error::UnknownPlugin(id.to_string()))?;
    finish_plugin(row)
}

pub fn list_plugins(conn: &Connection, enabled_only: bool) -> Result<Vec<PluginDescriptor>> {
    let mut stmt = conn.prepare(
        "SELECT id, display_name, enabled, executable, config_keys, command_template FROM plugins ORDER BY id",
    )?;
    let rows = stmt.query_map([], plugin_from_row)?;
    let mut out = Vec::new();
    for r in rows {
        let d = finish_plugin(r?)?;
        if d.enabled || !enabled_only {
            out.push(d);
        }
    }
    Ok(out)
}

pub fn set_plugin_enabled(conn: &Connection, id: &str, enabled: bool, user: &Principal) -> Result<PluginDescriptor> {
    get_plugin(conn, id)?;
    if !user.is_admin {
        return Err(Error::PermissionDenied);
    }
    conn.execute("UPDATE plugins SET enabled = ?1 WHERE id = ?2", params![enabled, id])?;
    get_plugin(conn, id)
}

// ------------------------------------------------------------------- configs

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigFile {
    pub config_id: i64,
    pub name: String,
    pub plugin_id: String,
    pub content: String,
    pub owner: UserId,
    pub group: GroupId,
    pub mode: PermissionMode,
    pub created_at: DateTime<Utc>,
}

impl ConfigFile {
    pub fn ownership(&self) -> Ownership {
        Ownership {
            owner: self.owner,
            group: self.group,
            mode: self.mode,
        }
    }
}

/// Parses `KEY value` lines. Blank lines and `#` comments are allowed.
pub fn parse_config(content: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in content.split('\n').enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| Error::ParseError {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (k, v) = line.split_once(' ').ok_or_else(|| err("expected `KEY value`"))?;
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(err("empty or malformed key"));
        }
        if v.is_empty() || v.starts_with(char::is_whitespace) {
            return Err(err("key and value must be separated by a single space"));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn config_from_row(r: &Row<'_>) -> rusqlite::Result<ConfigFile> {
    Ok(ConfigFile {
        config_id: r.get(0)?,
        name: r.get(1)?,
        plugin_id: r.get(2)?,
        content: r.get(3)?,
        owner: r.get(4)?,
        group: r.get(5)?,
        mode: PermissionMode::from_bits(r.get(6)?),
        created_at: parse_ts(&r.get::<_, String>(7)?).unwrap_or_default(),
    })
}

const CONFIG_COLUMNS: &str = "id, name, plugin_id, content, owner, grp, mode, created_at";

pub fn save_config(
    conn: &Connection,
    name: &str,
    plugin_id: &str,
    content: &str,
    user: &Principal,
    now: DateTime<Utc>,
) -> Result<ConfigFile> {
    if name.trim().is_empty() {
        return Err(Error::InvalidArgument("config name must not be empty".into()));
    }
    get_plugin(conn, plugin_id)?;
    parse_config(content)?;
    let o = Ownership::new(user.user_id, user.primary_group);
    conn.execute(
        "INSERT INTO configs(name, plugin_id, content, owner, grp, mode, created_at) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
        params![name, plugin_id, content, o.owner, o.group, o.mode.bits(), format_ts(&now)],
    )
    .map_err(|e| {
        if is_unique_violation(&e) {
            Error::DuplicateName(name.to_string())
        } else {
            e.into()
        }
    })?;
    get_config(conn, conn.last_insert_rowid())
}

pub fn get_config(conn: &Connection, id: i64) -> Result<ConfigFile> {
    conn.query_row(
        &format!("SELECT {CONFIG_COLUMNS} FROM configs WHERE id = ?1"),
        [id],
        config_from_row,
    )
    .or_missing(|| Error::UnknownReference(format!("config {id}")))
}

pub fn load_config(conn: &Connection, id: i64, user: &Principal) -> Result<ConfigFile> {
    let c = get_config(conn, id)?;
    require(user, &c.ownership(), Action::Read)?;
    Ok(c)
}

pub fn list_configs(conn: &Connection, user: &Principal, plugin_id: Option<&str>) -> Result<Vec<ConfigFile>> {
    let mut stmt = conn.prepare(&format!("SELECT {CONFIG_COLUMNS} FROM configs ORDER BY plugin_id, name, id"))?;
    let rows = stmt.query_map([], config_from_row)?;
    let mut out = Vec::new();
    for r in rows {
        let c = r?;
        if plugin_id.is_some_and(|p| p != c.plugin_id) {
            continue;
        }
        if check_access(user, &c.ownership(), Action::Read) {
            out.push(c);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- cart items

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Selection(SelectionId),
    Images(Vec<ImageId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewCartItem {
    pub plugin_id: String,
    pub image_source: ImageSource,
    pub config_id: i64,
    #[serde(default)]
    pub aux_paths: BTreeMap<String, i64>,
    #[serde(default)]
    pub policy_id: Option<i64>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CartItem {
    pub item_id: i64,
    pub plugin_id: String,
    pub image_source: ImageSource,
    pub config_id: i64,
    /// Label to saved-path id.
    pub aux_paths: BTreeMap<String, i64>,
    pub policy_id: Option<i64>,
    pub output_dir: Option<String>,
    pub owner: UserId,
    pub group: GroupId,
    pub mode: PermissionMode,
    pub created_at: DateTime<Utc>,
}

impl CartItem {
    pub fn ownership(&self) -> Ownership {
        Ownership {
            owner: self.owner,
            group: self.group,
            mode: self.mode,
        }
    }
}

fn valid_aux_label(l: &str) -> bool {
    !l.is_empty() && l.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// Resolves a cart item's images from the point of view of `as_user`.
/// Dangling references surface as `UnknownReference`.
pub fn resolve_images(conn: &Connection, source: &ImageSource, as_user: &Principal) -> Result<Vec<ImageRecord>> {
    let ids = match source {
        ImageSource::Selection(sid) => match catalog::load_selection(conn, *sid, as_user, Action::Read) {
            Ok(s) => s.image_ids,
            Err(Error::UnknownSelection(_)) => return Err(Error::UnknownReference(format!("selection {sid}"))),
            Err(e) => return Err(e),
        },
        ImageSource::Images(ids) => dedup_ids(ids.iter().copied()),
    };
    if ids.is_empty() {
        return Err(Error::EmptyImageSource);
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let img = catalog::get_image(conn, id).map_err(|e| match e {
            Error::UnknownImage(id) => Error::UnknownReference(format!("image {id}")),
            other => other,
        })?;
        require(as_user, &img.ownership(), Action::Read)?;
        out.push(img);
    }
    Ok(out)
}

fn check_policy_exists(conn: &Connection, id: i64) -> Result<()> {
    let found: Option<i64> = conn
        .query_row("SELECT id FROM policies WHERE id = ?1", [id], |r| r.get(0))
        .optional()?;
    found.map(|_| ()).ok_or_else(|| Error::UnknownReference(format!("policy {id}")))
}

pub fn create_cart_item(
    conn: &Connection,
    req: &NewCartItem,
    user: &Principal,
    now: DateTime<Utc>,
) -> Result<(CartItem, usize)> {
    let plugin = get_plugin(conn, &req.plugin_id).map_err(|_| Error::UnknownReference(format!("plugin {}", req.plugin_id)))?;
    let config = load_config(conn, req.config_id, user)?;
    if config.plugin_id != plugin.plugin_id {
        return Err(Error::InvalidArgument(format!(
            "config {} belongs to plugin {}, not {}",
            config.config_id, config.plugin_id, plugin.plugin_id
        )));
    }
    let inputs = resolve_images(conn, &req.image_source, user)?.len();
    for (label, pid) in &req.aux_paths {
        if !valid_aux_label(label) {
            return Err(Error::InvalidArgument(format!("aux label {label:?} must match [A-Za-z0-9_]+")));
        }
        catalog::get_path(conn, *pid)?;
    }
    if let Some(pid) = req.policy_id {
        check_policy_exists(conn, pid)?;
    }
    let o = Ownership::new(user.user_id, user.primary_group);
    let (selection_id, image_ids) = match &req.image_source {
        ImageSource::Selection(s) => (Some(*s), None),
        ImageSource::Images(ids) => (None, Some(to_json(ids))),
    };
    conn.execute(
        "INSERT INTO cart_items(plugin_id, selection_id, image_ids, config_id, aux_paths, policy_id, output_dir, \
         owner, grp, mode, created_at) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
        params![
            req.plugin_id,
            selection_id,
            image_ids,
            req.config_id,
            to_json(&req.aux_paths),
            req.policy_id,
            req.output_dir,
            o.owner,
            o.group,
            o.mode.bits(),
            format_ts(&now)
        ],
    )?;
    Ok((get_cart_item(conn, conn.last_insert_rowid())?, inputs))
}

const CART_COLUMNS: &str =
    "id, plugin_id, selection_id, image_ids, config_id, aux_paths, policy_id, output_dir, owner, grp, mode, created_at";

fn cart_from_row(r: &Row<'_>) -> rusqlite::Result<(CartItem, Option<String>, String)> {
    let selection_id: Option<i64> = r.get(2)?;
    Ok((
        CartItem {
            item_id: r.get(0)?,
            plugin_id: r.get(1)?,
            image_source: ImageSource::Selection(selection_id.unwrap_or_default()),
            config_id: r.get(4)?,
            aux_paths: BTreeMap::new(),
            policy_id: r.get(6)?,
            output_dir: r.get(7)?,
            owner: r.get(8)?,
            group: r.get(9)?,
            mode: PermissionMode::from_bits(r.get(10)?),
            created_at: parse_ts(&r.get::<_, String>(11)?).unwrap_or_default(),
        },
        r.get(3)?,
        r.get(5)?,
    ))
}

fn finish_cart((mut item, ids, aux): (CartItem, Option<String>, String)) -> Result<CartItem> {
    if let Some(ids) = ids {
        item.image_source = ImageSource::Images(from_json(&ids)?);
    }
    item.aux_paths = from_json(&aux)?;
    Ok(item)
}

pub fn get_cart_item(conn: &Connection, id: i64) -> Result<CartItem> {
    let row = conn
        .query_row(&format!("SELECT {CART_COLUMNS} FROM cart_items WHERE id = ?1"), [id], cart_from_row)
        .or_missing(|| Error::UnknownItem(id))?;
    finish_cart(row)
}

pub fn load_cart_item(conn: &Connection, id: i64, user: &Principal) -> Result<CartItem> {
    let item = get_cart_item(conn, id)?;
    require(user, &item.ownership(), Action::Read)?;
    Ok(item)
}

/// Items owned by `user`.
pub fn list_cart(conn: &Connection, user: &Principal) -> Result<Vec<CartItem>> {
    let mut stmt = conn.prepare(&format!("SELECT {CART_COLUMNS} FROM cart_items WHERE owner = ?1 ORDER BY id"))?;
    let rows = stmt.query_map([user.user_id], cart_from_row)?;
    rows.map(|r| finish_cart(r?)).collect()
}

// ------------------------------------------------------- command construction

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuiltCommand {
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
}

/// Everything `build_command` needs, already resolved and authorized.
pub struct CommandInputs<'a> {
    pub plugin: &'a PluginDescriptor,
    pub config_content: &'a str,
    pub images: &'a [ImageRecord],
    /// Label to filesystem path.
    pub aux_paths: &'a BTreeMap<String, String>,
    pub output_dir: Option<&'a str>,
}

pub fn aux_env_name(label: &str) -> String {
    format!("YOUPI_AUX_{}", label.to_ascii_uppercase())
}

/// Config file content as materialized for a job: the user's content plus
/// a `KEY default` line for each descriptor key the user left out.
pub fn effective_config(plugin: &PluginDescriptor, content: &str) -> Result<String> {
    let present: Vec<String> = parse_config(content)?.into_iter().map(|(k, _)| k).collect();
    let mut out = content.to_string();
    for ck in &plugin.config_keys {
        if !present.contains(&ck.key) {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&format!("{} {}\n", ck.key, ck.default));
        }
    }
    Ok(out)
}

/// Materializes the image list and config file in `workdir` and expands
/// the plugin's template. Identical inputs give byte-identical outputs.
pub fn build_command(inputs: &CommandInputs<'_>, workdir: &Path) -> Result<BuiltCommand> {
    let plugin = inputs.plugin;
    if !plugin.enabled {
        return Err(Error::PluginDisabled(plugin.plugin_id.clone()));
    }
    if inputs.images.is_empty() {
        return Err(Error::EmptyImageSource);
    }
    fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let list_path = workdir.join(IMAGE_LIST_FILE);
    let list: String = inputs.images.iter().map(|i| format!("{}\n", i.abs_path)).collect();
    fs::write(&list_path, list).map_err(|e| Error::io(&list_path, e))?;

    let config = effective_config(plugin, inputs.config_content)?;
    let config_path = workdir.join(format!("{}.conf", plugin.plugin_id));
    fs::write(&config_path, &config).map_err(|e| Error::io(&config_path, e))?;

    let output_dir = match inputs.output_dir {
        Some(d) => PathBuf::from(d),
        None => workdir.join("output"),
    };
    fs::create_dir_all(&output_dir).map_err(|e| Error::io(&output_dir, e))?;

    let extra: Vec<String> = parse_config(&config)?
        .into_iter()
        .find(|(k, _)| k == EXTRA_ARGS_KEY)
        .map(|(_, v)| v.split_whitespace().map(String::from).collect())
        .unwrap_or_default();

    let subst = |tok: &str| {
        tok.replace("{EXECUTABLE}", &plugin.executable)
            .replace("{CONFIG_PATH}", &config_path.to_string_lossy())
            .replace("{IMAGE_LIST_PATH}", &list_path.to_string_lossy())
            .replace("{OUTPUT_DIR}", &output_dir.to_string_lossy())
            .replace("{EXTRA}", &extra.join(" "))
    };
    let mut argv = Vec::new();
    for tok in &plugin.command_template {
        if tok == "{EXTRA}" {
            argv.extend(extra.iter().cloned());
        } else {
            argv.push(subst(tok));
        }
    }
    let env = inputs
        .aux_paths
        .iter()
        .map(|(label, path)| (aux_env_name(label), path.clone()))
        .collect();
    Ok(BuiltCommand { argv, env })
}
