//! Structured-text helpers shared by every file schema in the crate.

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt;

/// A schema or syntax error located by field path and source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Dotted path of the offending field (`.` for the document root).
    pub path: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, column {}, field `{}`: {}",
            self.line, self.column, self.path, self.message
        )
    }
}

impl std::error::Error for ParseError {}

/// Parses a JSON document, reporting the failing field path along with line and column.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        ParseError {
            path,
            line: inner.line(),
            column: inner.column(),
            message: strip_position(&inner.to_string()),
        }
    })?;
    Ok(value)
}

/// Like [`parse`] but from an already-decoded JSON value (no source positions).
pub fn from_value<T: DeserializeOwned>(value: serde_json::Value) -> Result<T, ParseError> {
    serde_path_to_error::deserialize(value).map_err(|err| ParseError {
        path: err.path().to_string(),
        line: 0,
        column: 0,
        message: err.into_inner().to_string(),
    })
}

/// Pretty JSON with a trailing newline; stable across runs for the same value.
pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("in-memory serialization");
    text.push('\n');
    text
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(idx) => message[..idx].to_string(),
        None => message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize)]
    #[allow(dead_code)]
    struct Outer {
        inner: Inner,
    }

    #[derive(Debug, Deserialize)]
    #[allow(dead_code)]
    struct Inner {
        value: u32,
    }

    #[test]
    fn reports_field_path_and_line() {
        let err = parse::<Outer>("{\n  \"inner\": {\n    \"value\": -3\n  }\n}").unwrap_err();
        assert_eq!(err.path, "inner.value");
        assert_eq!(err.line, 3);
        assert!(!err.message.contains("at line"));
    }
}
