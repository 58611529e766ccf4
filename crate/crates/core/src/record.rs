//! Flat key/value rows for CSV or JSON-lines output.

use std::fmt;

/// A single cell. Quantities that do not exist are spelled out instead of
/// being encoded as NaN or infinity.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(u64),
    Num(f64),
    Text(String),
    Bool(bool),
    /// Conditional expectation whose conditioning event has probability 0.
    Undefined,
    /// Expected cost is infinite.
    Diverges,
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(x) => write!(f, "{x}"),
            Value::Num(x) if x.is_finite() => write!(f, "{x:e}"),
            Value::Num(_) => f.write_str("diverges"),
            Value::Text(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Undefined => f.write_str("undefined"),
            Value::Diverges => f.write_str("diverges"),
        }
    }
}

/// Ordered list of named values; column order is part of the output format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record(Vec<(&'static str, Value)>);

impl Record {
    pub fn push(&mut self, key: &'static str, value: Value) {
        self.0.push((key, value));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    pub fn keys(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.0.iter().map(|(k, _)| *k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Value)> {
        self.0.iter().map(|(k, v)| (*k, v))
    }

    pub fn extend(&mut self, other: Record) {
        self.0.extend(other.0);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
