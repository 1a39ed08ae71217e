//! `key = value` configuration files (architecture profile, latency table, occupancy curve).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
}

/// Ordered `key = value` pairs; `#` starts a comment.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if entries.iter().any(|(key, _, _)| key == k) {
                return Err(ConfigError::Duplicate { line, key: k.to_string() });
            }
            entries.push((k.to_string(), v.to_string(), line));
        }
        Ok(KeyValues { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries.iter().map(|(k, _, l)| (k.as_str(), *l))
    }

    pub fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, v, l)| (v.as_str(), *l))
    }

    pub fn get_u32(&self, key: &str) -> Result<Option<u32>, ConfigError> {
        self.get(key)
            .map(|(v, line)| {
                v.parse::<u32>().map_err(|_| ConfigError::Invalid {
                    line,
                    message: format!("`{key}` expects an unsigned integer, got `{v}`"),
                })
            })
            .transpose()
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key)
            .map(|(v, line)| {
                v.parse::<f64>().map_err(|_| ConfigError::Invalid {
                    line,
                    message: format!("`{key}` expects a number, got `{v}`"),
                })
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = KeyValues::parse("# header\n\na = 1 # trailing\nb=2.5\n").unwrap();
        assert_eq!(kv.get_u32("a").unwrap(), Some(1));
        assert_eq!(kv.get_f64("b").unwrap(), Some(2.5));
        assert_eq!(kv.get_u32("c").unwrap(), None);
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(KeyValues::parse("novalue").unwrap_err(), ConfigError::Syntax { line: 1 });
        assert!(matches!(KeyValues::parse("a=1\na=2").unwrap_err(), ConfigError::Duplicate { line: 2, .. }));
        let kv = KeyValues::parse("a = x").unwrap();
        assert!(kv.get_u32("a").is_err());
    }
}
