//! Minimal flat key-value text format used for plant, controller, and
//! experiment configuration files, and for experiment summaries.
//!
//! One `key = value` pair per line. Keys are dotted paths
//! (`plant.a`, `mpc.horizon`). Values are either a single token or a
//! whitespace-separated list of numbers. Lines starting with `#` and blank
//! lines are ignored. Keys must be unique.

use std::collections::HashMap;
use std::fmt;

#[derive(Debug)]
pub enum TextKvError {
    Syntax { line: usize, msg: String },
    DuplicateKey { line: usize, key: String },
    MissingKey(String),
    BadValue { key: String, msg: String },
}

impl fmt::Display for TextKvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TextKvError::Syntax { line, msg } => write!(f, "line {line}: {msg}"),
            TextKvError::DuplicateKey { line, key } => {
                write!(f, "line {line}: duplicate key `{key}`")
            }
            TextKvError::MissingKey(key) => write!(f, "missing key `{key}`"),
            TextKvError::BadValue { key, msg } => write!(f, "key `{key}`: {msg}"),
        }
    }
}

impl std::error::Error for TextKvError {}

/// Ordered key-value map. Writing preserves insertion order so files
/// regenerate byte-identically.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    order: Vec<String>,
    values: HashMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, TextKvError> {
        let mut map = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(TextKvError::Syntax {
                    line: line_no,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() {
                return Err(TextKvError::Syntax {
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            if map.values.contains_key(key) {
                return Err(TextKvError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            map.order.push(key.to_string());
            map.values.insert(key.to_string(), value.to_string());
        }
        Ok(map)
    }

    pub fn insert(&mut self, key: &str, value: impl fmt::Display) {
        if !self.values.contains_key(key) {
            self.order.push(key.to_string());
        }
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn insert_f64_list(&mut self, key: &str, values: &[f64]) {
        let joined = values
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(" ");
        self.insert(key, joined);
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn keys_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.keys().filter(move |k| k.starts_with(prefix))
    }

    pub fn get_str(&self, key: &str) -> Result<&str, TextKvError> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| TextKvError::MissingKey(key.to_string()))
    }

    pub fn get_str_opt(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, TextKvError> {
        self.get_str(key)?.parse().map_err(|e| TextKvError::BadValue {
            key: key.to_string(),
            msg: format!("not a number: {e}"),
        })
    }

    pub fn get_f64_or(&self, key: &str, default: f64) -> Result<f64, TextKvError> {
        if self.contains(key) {
            self.get_f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, TextKvError> {
        self.get_str(key)?.parse().map_err(|e| TextKvError::BadValue {
            key: key.to_string(),
            msg: format!("not an unsigned integer: {e}"),
        })
    }

    pub fn get_usize_or(&self, key: &str, default: usize) -> Result<usize, TextKvError> {
        if self.contains(key) {
            self.get_usize(key)
        } else {
            Ok(default)
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, TextKvError> {
        self.get_str(key)?.parse().map_err(|e| TextKvError::BadValue {
            key: key.to_string(),
            msg: format!("not an unsigned integer: {e}"),
        })
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, TextKvError> {
        match self.get_str(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(TextKvError::BadValue {
                key: key.to_string(),
                msg: format!("expected true or false, got `{other}`"),
            }),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>, TextKvError> {
        let raw = self.get_str(key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|e| TextKvError::BadValue {
                    key: key.to_string(),
                    msg: format!("list entry `{tok}` not a number: {e}"),
                })
            })
            .collect()
    }

    /// Serializes the map in insertion order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in &self.order {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.values[key]);
            out.push('\n');
        }
        out
    }
}
