use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub slots: u32,
    /// Always holds `Name`, `Memory`, `OpSys` and `Arch`.
    pub attributes: BTreeMap<String, String>,
}

impl NodeSpec {
    pub fn new(name: &str, slots: u32) -> Self {
        let mut attributes = BTreeMap::new();
        attributes.insert("Name".to_string(), name.to_string());
        attributes.insert("Memory".to_string(), "8192".to_string());
        attributes.insert("OpSys".to_string(), "LINUX".to_string());
        attributes.insert("Arch".to_string(), "X86_64".to_string());
        NodeSpec {
            name: name.to_string(),
            slots,
            attributes,
        }
    }

    pub fn with_attr(mut self, key: &str, value: &str) -> Self {
        self.attributes.insert(key.to_string(), value.to_string());
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}

/// Parses the inventory file: one node per line,
/// `name slots key=value key=value ...`. `#` starts a comment line.
/// Missing `Memory`/`OpSys`/`Arch` take the defaults of [`NodeSpec::new`].
pub fn parse_inventory(text: &str) -> Result<Vec<NodeSpec>> {
    let mut nodes = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::InvalidInventory { line: i + 1, reason };
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or_default();
        let slots: u32 = parts
            .next()
            .ok_or_else(|| err("missing slot count".into()))?
            .parse()
            .map_err(|_| err("slot count must be a positive integer".into()))?;
        if slots == 0 {
            return Err(err("slot count must be at least 1".into()));
        }
        let mut node = NodeSpec::new(name, slots);
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {kv:?}")))?;
            if k.is_empty() {
                return Err(err("empty attribute name".into()));
            }
            if k == "Name" && v != name {
                return Err(err(format!("Name attribute {v:?} differs from node name {name:?}")));
            }
            node.attributes.insert(k.to_string(), v.to_string());
        }
        if !seen.insert(name.to_string()) {
            return Err(err(format!("duplicate node {name:?}")));
        }
        nodes.push(node);
    }
    Ok(nodes)
}

pub fn render_inventory(nodes: &[NodeSpec]) -> String {
    let mut out = String::new();
    for n in nodes {
        out.push_str(&format!("{} {}", n.name, n.slots));
        for (k, v) in n.attributes.iter().filter(|(k, _)| *k != "Name") {
            out.push_str(&format!(" {k}={v}"));
        }
        out.push('\n');
    }
    out
}
