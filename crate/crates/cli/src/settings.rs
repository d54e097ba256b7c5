//! Flat `key = value` settings files, flag precedence and run manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::Failure;

/// Keys a manifest carries that are not settings.
const META_KEYS: [&str; 2] = ["command", "version"];

pub fn read_file(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|(line, msg)| Failure::config(format!("{}:{line}: {msg}", path.display())))
}

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, (usize, String)> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or((i + 1, format!("expected `key = value`, got {line:?}")))?;
        let key = normalize_key(key);
        if key.is_empty() {
            return Err((i + 1, "empty key".into()));
        }
        if out.insert(key.clone(), value.trim().to_owned()).is_some() {
            return Err((i + 1, format!("duplicate key {key}")));
        }
    }
    Ok(out)
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Resolves each setting as flag, then file, then default, and remembers
/// the resolved values for the manifest.
pub struct Resolver {
    command: &'static str,
    file: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
    seen: BTreeSet<String>,
}

impl Resolver {
    pub fn new(command: &'static str, file: BTreeMap<String, String>) -> Result<Self, Failure> {
        if let Some(c) = file.get("command") {
            if c != command {
                return Err(Failure::config(format!("config is for `{c}`, not `{command}`")));
            }
        }
        Ok(Self {
            command,
            file,
            used: BTreeMap::new(),
            seen: BTreeSet::new(),
        })
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, Failure> {
        self.seen.insert(key.to_owned());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Failure::config(format!("invalid value {raw:?} for {key}"))),
        }
    }

    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Failure> {
        let v = match flag {
            Some(v) => {
                self.seen.insert(key.to_owned());
                v
            }
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.used.insert(key.to_owned(), v.to_string());
        Ok(v)
    }

    pub fn flag(&mut self, key: &str, set: bool) -> Result<bool, Failure> {
        let v = set || self.file_value::<bool>(key)?.unwrap_or(false);
        self.used.insert(key.to_owned(), v.to_string());
        Ok(v)
    }

    /// Flag values win as a whole over the file's `;`-separated list.
    pub fn list(&mut self, key: &str, flag: Vec<String>, default: &[&str]) -> Result<Vec<String>, Failure> {
        let v = if !flag.is_empty() {
            self.seen.insert(key.to_owned());
            flag
        } else {
            match self.file_value::<String>(key)? {
                Some(raw) => raw.split(';').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect(),
                None => default.iter().map(|s| (*s).to_owned()).collect(),
            }
        };
        self.used.insert(key.to_owned(), v.join("; "));
        Ok(v)
    }

    /// An input file, recorded as an absolute path. A missing file is a
    /// data error.
    pub fn input(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
        let p: PathBuf = match flag {
            Some(p) => {
                self.seen.insert(key.to_owned());
                p
            }
            None => self
                .file_value::<String>(key)?
                .map(PathBuf::from)
                .ok_or_else(|| Failure::config(format!("missing required setting --{}", key.replace('_', "-"))))?,
        };
        let abs = std::fs::canonicalize(&p).map_err(|e| Failure::data(format!("input {}: {e}", p.display())))?;
        let shown = abs.to_str().ok_or_else(|| Failure::config(format!("path {} is not UTF-8", abs.display())))?;
        self.used.insert(key.to_owned(), shown.to_owned());
        Ok(abs)
    }

    /// Rejects file keys no setting asked for.
    pub fn finish(self) -> Result<Manifest, Failure> {
        let unknown: Vec<&String> = self
            .file
            .keys()
            .filter(|k| !self.seen.contains(*k) && !META_KEYS.contains(&k.as_str()))
            .collect();
        if !unknown.is_empty() {
            return Err(Failure::config(format!("unknown setting(s) for `{}`: {unknown:?}", self.command)));
        }
        Ok(Manifest {
            command: self.command,
            values: self.used,
        })
    }
}

pub struct Manifest {
    command: &'static str,
    values: BTreeMap<String, String>,
}

impl Manifest {
    /// Feeding this text back through `--config` reruns the command with
    /// identical settings.
    pub fn render(&self) -> String {
        let mut out = String::from("# sparse-mv run manifest\n");
        out.push_str(&format!("command = {}\n", self.command));
        out.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
