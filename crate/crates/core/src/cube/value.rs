use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The domain a dimension's values are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    String,
    Integer,
    Boolean,
}

/// A dimension value. `Null` is the missing-value sentinel and groups like any other value.
///
/// Ordering is `Null < Bool < Int < Str`, then natural order within a variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    /// Parses CSV text according to `kind`. The empty string is `Null`.
    pub fn parse(text: &str, kind: ValueKind) -> Result<Self> {
        if text.is_empty() {
            return Ok(Value::Null);
        }
        match kind {
            ValueKind::String => Ok(Value::Str(text.to_string())),
            ValueKind::Integer => text
                .trim()
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| Error::Schema(format!("`{text}` is not an integer"))),
            ValueKind::Boolean => parse_bool(text)
                .map(Value::Bool)
                .ok_or_else(|| Error::Schema(format!("`{text}` is not a boolean"))),
        }
    }

    pub fn conforms_to(&self, kind: ValueKind) -> bool {
        matches!(
            (self, kind),
            (Value::Null, _)
                | (Value::Bool(_), ValueKind::Boolean)
                | (Value::Int(_), ValueKind::Integer)
                | (Value::Str(_), ValueKind::String)
        )
    }

    /// Interprets the value as a test/control flag.
    pub fn as_flag(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            Value::Int(1) => Some(true),
            Value::Int(0) => Some(false),
            Value::Str(s) => parse_bool(s),
            _ => None,
        }
    }
}

fn parse_bool(text: &str) -> Option<bool> {
    match text.trim().to_ascii_lowercase().as_str() {
        "true" | "t" | "1" | "yes" => Some(true),
        "false" | "f" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}
