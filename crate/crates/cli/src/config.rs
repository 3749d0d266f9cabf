//! Flat `key = value` config files with `[section]` headers. Command-line
//! flags always override file values; file values override built-in
//! defaults. `#` starts a comment.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Default)]
pub struct ConfigFile {
    values: HashMap<(String, String), String>,
}

impl ConfigFile {
    /// Loads a config file; `None` yields an empty config.
    pub fn load(path: Option<&Path>) -> Result<ConfigFile, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut values = HashMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "{}:{}: expected `key = value` or `[section]`",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(
                (section.clone(), key.trim().to_string()),
                value.trim().to_string(),
            );
        }
        Ok(ConfigFile { values })
    }

    pub fn get_str(&self, section: &str, key: &str) -> Option<String> {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .cloned()
    }

    /// Typed lookup; unparsable values are treated as absent (the caller's
    /// default applies) after a warning.
    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Option<T> {
        let raw = self.get_str(section, key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                log::warn!("config [{section}] {key} = {raw:?} is not valid; ignoring");
                None
            }
        }
    }
}
