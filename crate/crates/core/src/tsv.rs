//! Minimal tab-separated text helpers shared by every text format.
//!
//! Blank lines and lines starting with `#` are skipped by [`read_rows`];
//! formats that give `#` lines meaning read them with [`read_lines`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Row {
    path: PathBuf,
    line: usize,
    fields: Vec<String>,
}

impl Row {
    pub fn new(path: &Path, line: usize, text: &str) -> Self {
        Row {
            path: path.to_path_buf(),
            line,
            fields: text.split('\t').map(str::to_string).collect(),
        }
    }

    pub fn line(&self) -> usize {
        self.line
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, i: usize) -> &str {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(&self.path, self.line, message)
    }

    pub fn expect_fields(&self, n: usize) -> Result<()> {
        if self.fields.len() != n {
            return Err(self.error(format!("expected {n} fields, found {}", self.fields.len())));
        }
        Ok(())
    }

    pub fn parse<T: FromStr>(&self, i: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_with(i, str::parse::<T>)
    }

    pub fn parse_with<T, E: std::fmt::Display>(
        &self,
        i: usize,
        f: impl FnOnce(&str) -> std::result::Result<T, E>,
    ) -> Result<T> {
        let raw = self
            .fields
            .get(i)
            .ok_or_else(|| self.error(format!("missing field {}", i + 1)))?;
        f(raw.trim()).map_err(|e| self.error(format!("field {} (`{raw}`): {e}", i + 1)))
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// All lines with their 1-based line numbers, trailing `\r` stripped.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .collect())
}

pub fn read_rows(path: &Path) -> Result<impl Iterator<Item = Result<Row>>> {
    let lines = read_lines(path)?;
    let path = path.to_path_buf();
    Ok(lines.into_iter().filter_map(move |(n, l)| {
        if l.trim().is_empty() || l.starts_with('#') {
            None
        } else {
            Some(Ok(Row::new(&path, n, &l)))
        }
    }))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    write_bytes(path, contents.as_bytes())
}

pub fn write_bytes(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Shortest round-trippable decimal form of each value, tab separated.
pub fn join_floats<T: std::fmt::Display>(values: &[T]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        write!(out, "{v}").unwrap();
    }
    out
}
