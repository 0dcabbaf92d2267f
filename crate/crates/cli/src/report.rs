use std::path::{Path, PathBuf};

use neurodissect::tsv;

use crate::CliError;

/// Resolved settings of one run, written as `config.toml` next to its
/// reports. The output directory is left out so that reruns elsewhere are
/// byte-identical.
pub struct Echo {
    command: &'static str,
    table: toml::Table,
}

impl Echo {
    pub fn new(command: &'static str) -> Self {
        Echo {
            command,
            table: toml::Table::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) -> &mut Self {
        self.table.insert(key.to_string(), value.into());
        self
    }

    pub fn path(&mut self, key: &str, value: &Path) -> &mut Self {
        self.set(key, value.to_string_lossy().replace('\\', "/"))
    }

    pub fn list<T: Into<toml::Value> + Clone>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let arr: Vec<toml::Value> = values.iter().cloned().map(Into::into).collect();
        self.set(key, toml::Value::Array(arr))
    }

    pub fn write(&self, out: &Path) -> Result<(), CliError> {
        let body = toml::to_string(&self.table)
            .map_err(|e| CliError::compute(format!("config echo: {e}")))?;
        tsv::write_file(
            &out.join("config.toml"),
            &format!("# neurodissect {}\n{body}", self.command),
        )?;
        Ok(())
    }
}

pub struct Summary {
    title: String,
    lines: Vec<String>,
}

impl Summary {
    pub fn new(title: impl Into<String>) -> Self {
        Summary {
            title: title.into(),
            lines: Vec::new(),
        }
    }

    pub fn line(&mut self, text: impl Into<String>) -> &mut Self {
        self.lines.push(text.into());
        self
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.line(format!("{key:<24}{value}"))
    }

    pub fn block(&mut self, text: &str) -> &mut Self {
        self.lines.extend(text.lines().map(str::to_string));
        self
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{}\n{}\n",
            self.title,
            "=".repeat(self.title.chars().count())
        );
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf, CliError> {
        let path = out.join("summary.txt");
        tsv::write_file(&path, &self.render())?;
        Ok(path)
    }
}
