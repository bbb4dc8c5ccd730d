//! Name canonicalization for column headers and solvent names.
//!
//! Both maps ship as JSON data files (`canonical -> [aliases]`) so legacy
//! spellings can be added without touching code.

use std::collections::HashMap;
use std::path::Path;

use crate::error::Result;

const HEADER_ALIASES: &str = include_str!("../data/header_aliases.json");
const SOLVENT_ALIASES: &str = include_str!("../data/solvent_aliases.json");

/// Lowercase, collapse every run of non-alphanumeric characters to `_`,
/// trim leading/trailing `_`.
pub fn normalize_key(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

/// Alias table mapping normalized spellings to one canonical name.
#[derive(Debug, Clone, Default)]
pub struct AliasMap {
    map: HashMap<String, String>,
}

impl AliasMap {
    /// Parse a `{ "canonical": ["alias", ...] }` JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: HashMap<String, Vec<String>> = serde_json::from_str(text)?;
        let mut map = AliasMap::default();
        map.extend_from(raw);
        Ok(map)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn extend_from(&mut self, raw: HashMap<String, Vec<String>>) {
        // Canonical names are inserted last so they always win over an alias
        // that happens to normalize to the same key.
        let mut raw: Vec<_> = raw.into_iter().collect();
        raw.sort();
        for (canonical, aliases) in &raw {
            for alias in aliases {
                self.map.insert(normalize_key(alias), canonical.clone());
            }
        }
        for (canonical, _) in &raw {
            self.map.insert(normalize_key(canonical), canonical.clone());
        }
    }

    /// Entries of `other` take precedence.
    pub fn merge(&mut self, other: &AliasMap) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }

    pub fn lookup(&self, raw: &str) -> Option<&str> {
        self.map.get(&normalize_key(raw)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn builtin_header_aliases() -> AliasMap {
    AliasMap::from_json(HEADER_ALIASES).expect("embedded header alias map is valid JSON")
}

pub fn builtin_solvent_aliases() -> AliasMap {
    AliasMap::from_json(SOLVENT_ALIASES).expect("embedded solvent alias map is valid JSON")
}

/// Canonical solvent spelling shared by dataset ingestion and the
/// feasibility tables.
#[derive(Debug, Clone)]
pub struct SolventCanon {
    aliases: AliasMap,
}

impl Default for SolventCanon {
    fn default() -> Self {
        SolventCanon {
            aliases: builtin_solvent_aliases(),
        }
    }
}

impl SolventCanon {
    pub fn new(aliases: AliasMap) -> Self {
        SolventCanon { aliases }
    }

    /// Known aliases map to their canonical name; anything else becomes its
    /// lowercased, whitespace-collapsed form. Returns `None` for blanks.
    pub fn canonicalize(&self, raw: &str) -> Option<String> {
        let trimmed = raw.trim();
        if is_missing_token(trimmed) {
            return None;
        }
        if let Some(c) = self.aliases.lookup(trimmed) {
            return Some(c.to_string());
        }
        Some(
            trimmed
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase(),
        )
    }
}

/// Blank and the usual NA spellings.
pub fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty()
        || ["na", "n/a", "nan", "null", "none", "-"]
            .iter()
            .any(|m| t.eq_ignore_ascii_case(m))
}
