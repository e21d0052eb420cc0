use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A configuration problem, located by key path and (when known) line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Dotted key path, empty for document-level errors.
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn semantic(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), line: None, message: message.into() }
    }

    pub(crate) fn from_toml(text: &str, path: String, e: &toml::de::Error) -> Self {
        let line = e.span().map(|s| line_of(text, s.start));
        ConfigError { path, line, message: e.message().trim().to_string() }
    }

    /// Fills in the line by locating the key path in the document.
    pub(crate) fn with_line_from(mut self, text: &str) -> Self {
        if self.line.is_none() {
            self.line = locate(text, &self.path);
        }
        self
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `section.key` (or of a top-level key / section header).
fn locate(text: &str, path: &str) -> Option<usize> {
    let mut parts = path.split('.');
    let first = parts.next().filter(|p| !p.is_empty())?;
    let key = parts.next();
    let mut section: Option<&str> = None;
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim());
            if section == Some(first) {
                header_line = Some(i + 1);
            }
            continue;
        }
        let key_here = line.split('=').next().map(str::trim);
        match (section, key) {
            (None, _) if key_here == Some(first) && line.contains('=') => return Some(i + 1),
            (Some(s), Some(k)) if s == first && key_here == Some(k) && line.contains('=') => return Some(i + 1),
            _ => {}
        }
    }
    header_line
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("config error")?;
        if !self.path.is_empty() {
            write!(f, " at `{}`", self.path)?;
        }
        if let Some(l) = self.line {
            write!(f, " (line {l})")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] stno::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Experiment(String),
}
