//! Dataset split manifests.
//!
//! A manifest lists the cube files of a dataset directory and which split
//! each belongs to, one `split name` pair per line. File names are stored
//! relative to the manifest's own directory, so a dataset folder can be
//! moved wholesale.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Default file name inside a dataset directory.
pub const MANIFEST_NAME: &str = "manifest.txt";

/// File names of each split, in dataset order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let mut m = Manifest::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(cut) => &raw[..cut],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((split, name)) = line.split_once(char::is_whitespace) else {
                return Err(Error::format(format!(
                    "manifest line {} is not a `split file` pair: {raw:?}",
                    idx + 1
                )));
            };
            let name = name.trim();
            if !seen.insert(name.to_string()) {
                return Err(Error::format(format!(
                    "manifest lists {name:?} more than once"
                )));
            }
            match split {
                "train" => m.train.push(name.to_string()),
                "val" => m.val.push(name.to_string()),
                "test" => m.test.push(name.to_string()),
                other => {
                    return Err(Error::format(format!(
                        "manifest line {}: unknown split {other:?} (train, val or test)",
                        idx + 1
                    )))
                }
            }
        }
        Ok(m)
    }

    /// Renders the manifest; the inverse of [`Manifest::parse`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (split, names) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for name in names {
                out.push_str(split);
                out.push(' ');
                out.push_str(name);
                out.push('\n');
            }
        }
        out
    }

    /// Reads a manifest from a path, which may also name the dataset
    /// directory itself. Returns the manifest and the directory file names
    /// resolve against.
    pub fn read(path: impl AsRef<Path>) -> Result<(Manifest, PathBuf)> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| Error::io(file.display().to_string(), e))?;
        let manifest = Manifest::parse(&text)
            .map_err(|e| Error::format(format!("{}: {e}", file.display())))?;
        let base = file.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((manifest, base))
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_NAME);
        std::fs::write(&path, self.render())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}
