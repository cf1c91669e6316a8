//! Config echo files: one `key=value` line per effective parameter, keys
//! sorted, so a run can be reproduced from the echo and its seed.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use anyhow::{Context, Result};

pub struct Echo {
    entries: BTreeMap<String, String>,
}

impl Echo {
    pub fn new(subcommand: &str) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("subcommand".to_string(), subcommand.to_string());
        Echo { entries }
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("config.echo");
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        std::fs::write(&path, text)
            .with_context(|| format!("writing config echo {}", path.display()))
    }
}

/// Formats a list for echo values (`a,b,c`).
pub fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
