//! Flat key=value files.
//!
//! One tiny format serves two jobs: config files that supply defaults for
//! command-line flags, and the `train.meta` record a training run leaves
//! next to its checkpoint. Lines hold `key = value` pairs; `#` starts a
//! comment; blank lines are skipped; keys may not repeat.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Parsed key=value file with sorted, unique keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvFile {
    map: BTreeMap<String, String>,
}

impl KvFile {
    pub fn new() -> KvFile {
        KvFile::default()
    }

    pub fn parse(text: &str) -> Result<KvFile> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(cut) => &raw[..cut],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::format(format!(
                    "line {} is not a key=value pair: {raw:?}",
                    idx + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::format(format!("line {} has an empty key", idx + 1)));
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::format(format!(
                    "key {key:?} appears more than once"
                )));
            }
        }
        Ok(KvFile { map })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<KvFile> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        KvFile::parse(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.map.insert(key.into(), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Renders sorted `key = value` lines; the inverse of [`KvFile::parse`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_spacing() {
        let kv = KvFile::parse("# defaults\n\n n = 100 \nsize=32 # inline\nout-dir = runs/a\n")
            .unwrap();
        assert_eq!(kv.get("n"), Some("100"));
        assert_eq!(kv.get("size"), Some("32"));
        assert_eq!(kv.get("out-dir"), Some("runs/a"));
        assert_eq!(kv.get("missing"), None);
    }

    #[test]
    fn render_round_trips() {
        let mut kv = KvFile::new();
        kv.insert("rt", 0.2);
        kv.insert("variant", "se");
        let text = kv.render();
        assert_eq!(text, "rt = 0.2\nvariant = se\n");
        assert_eq!(KvFile::parse(&text).unwrap(), kv);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvFile::parse("just words\n").is_err());
        assert!(KvFile::parse("= value\n").is_err());
        assert!(KvFile::parse("a = 1\na = 2\n").is_err());
    }
}
