//! `key = value` run manifests.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};

pub const FILE_NAME: &str = "manifest.txt";
const HEADER: &str = "# adv-sdf run manifest";
/// Keys under this prefix are the command-line options of the run.
const ARG_PREFIX: &str = "arg.";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

pub fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("started_unix", unix_time());
        m
    }

    /// Replaces an existing key or appends a new one.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_arg(&mut self, flag: &str, value: impl Display) {
        self.set(&format!("{ARG_PREFIX}{flag}"), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Command-line options recorded with [`Manifest::set_arg`], in order.
    pub fn args(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().filter_map(|(k, v)| {
            k.strip_prefix(ARG_PREFIX).map(|flag| (flag, v.as_str()))
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once(" = ").or_else(|| line.split_once('=')) else {
                bail!("line {}: expected `key = value`", n + 1);
            };
            m.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        if m.get("command").is_none() {
            bail!("manifest has no `command` entry");
        }
        Ok(m)
    }

    pub fn write(&mut self, dir: &Path) -> Result<()> {
        self.set("finished_unix", unix_time());
        let path = dir.join(FILE_NAME);
        fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
