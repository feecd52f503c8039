//! Literal tail values: quantities, dates, years and plain strings.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Kind tag of a [`LiteralValue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralKind {
    Quantity,
    Date,
    Year,
    String,
}

impl LiteralKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LiteralKind::Quantity => "quantity",
            LiteralKind::Date => "date",
            LiteralKind::Year => "year",
            LiteralKind::String => "string",
        }
    }
}

/// A literal tail of a relational triple.
#[derive(Debug, Clone)]
pub enum LiteralValue {
    Quantity { value: f64, unit: Option<String> },
    Date(NaiveDate),
    Year(i32),
    String(String),
}

/// Literals are only ordered against literals of the same class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComparableClass {
    pub kind: LiteralKind,
    pub unit: Option<String>,
}

impl LiteralValue {
    pub fn quantity(value: f64, unit: Option<&str>) -> Self {
        LiteralValue::Quantity {
            value,
            unit: unit.map(str::to_owned),
        }
    }

    pub fn kind(&self) -> LiteralKind {
        match self {
            LiteralValue::Quantity { .. } => LiteralKind::Quantity,
            LiteralValue::Date(_) => LiteralKind::Date,
            LiteralValue::Year(_) => LiteralKind::Year,
            LiteralValue::String(_) => LiteralKind::String,
        }
    }

    pub fn class(&self) -> ComparableClass {
        let unit = match self {
            LiteralValue::Quantity { unit, .. } => unit.clone(),
            _ => None,
        };
        ComparableClass {
            kind: self.kind(),
            unit,
        }
    }

    pub fn unit(&self) -> Option<&str> {
        match self {
            LiteralValue::Quantity { unit, .. } => unit.as_deref(),
            _ => None,
        }
    }

    /// Quantities, dates and years take part in LT/LE/GT/GE and superlatives.
    pub fn is_numeric(&self) -> bool {
        !matches!(self, LiteralValue::String(_))
    }

    /// Same kind and, for quantities, same unit.
    pub fn comparable_with(&self, other: &LiteralValue) -> bool {
        match (self, other) {
            (LiteralValue::Quantity { unit: a, .. }, LiteralValue::Quantity { unit: b, .. }) => {
                a == b
            }
            (a, b) => a.kind() == b.kind(),
        }
    }

    /// Ordering between two comparable values; `None` when the classes differ.
    pub fn compare(&self, other: &LiteralValue) -> Option<Ordering> {
        if !self.comparable_with(other) {
            return None;
        }
        Some(self.payload_cmp(other))
    }

    fn payload_cmp(&self, other: &LiteralValue) -> Ordering {
        match (self, other) {
            (LiteralValue::Quantity { value: a, .. }, LiteralValue::Quantity { value: b, .. }) => {
                a.total_cmp(b)
            }
            (LiteralValue::Date(a), LiteralValue::Date(b)) => a.cmp(b),
            (LiteralValue::Year(a), LiteralValue::Year(b)) => a.cmp(b),
            (LiteralValue::String(a), LiteralValue::String(b)) => a.cmp(b),
            _ => Ordering::Equal,
        }
    }

    /// Text used for answers and training corpora.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LiteralValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiteralValue::Quantity {
                value,
                unit: Some(u),
            } => write!(f, "{value} {u}"),
            LiteralValue::Quantity { value, unit: None } => write!(f, "{value}"),
            LiteralValue::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            LiteralValue::Year(y) => write!(f, "{y}"),
            LiteralValue::String(s) => f.write_str(s),
        }
    }
}

impl Ord for LiteralValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.kind()
            .cmp(&other.kind())
            .then_with(|| self.unit().cmp(&other.unit()))
            .then_with(|| self.payload_cmp(other))
    }
}

impl PartialOrd for LiteralValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for LiteralValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for LiteralValue {}

impl Hash for LiteralValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind().hash(state);
        self.unit().hash(state);
        match self {
            LiteralValue::Quantity { value, .. } => value.to_bits().hash(state),
            LiteralValue::Date(d) => d.hash(state),
            LiteralValue::Year(y) => y.hash(state),
            LiteralValue::String(s) => s.hash(state),
        }
    }
}

/// On-disk form: `{"kind": ..., "value": ..., "unit": ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawLiteral {
    pub kind: LiteralKind,
    pub value: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl RawLiteral {
    pub fn into_literal(self) -> Result<LiteralValue, String> {
        match self.kind {
            LiteralKind::Quantity => {
                let v = self.value.as_f64().ok_or_else(|| {
                    format!("quantity value must be a number, got {}", self.value)
                })?;
                if !v.is_finite() {
                    return Err(format!("quantity value must be finite, got {v}"));
                }
                Ok(LiteralValue::Quantity {
                    value: v,
                    unit: self.unit,
                })
            }
            LiteralKind::Date => {
                let s = self
                    .value
                    .as_str()
                    .ok_or_else(|| format!("date value must be a string, got {}", self.value))?;
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map(LiteralValue::Date)
                    .map_err(|e| format!("invalid date {s:?}: {e}"))
            }
            LiteralKind::Year => {
                let y = self
                    .value
                    .as_i64()
                    .and_then(|y| i32::try_from(y).ok())
                    .ok_or_else(|| format!("year value must be an integer, got {}", self.value))?;
                Ok(LiteralValue::Year(y))
            }
            LiteralKind::String => self
                .value
                .as_str()
                .map(|s| LiteralValue::String(s.to_owned()))
                .ok_or_else(|| format!("string value must be a string, got {}", self.value)),
        }
    }

    pub fn from_literal(v: &LiteralValue) -> Self {
        match v {
            LiteralValue::Quantity { value, unit } => RawLiteral {
                kind: LiteralKind::Quantity,
                value: serde_json::json!(value),
                unit: unit.clone(),
            },
            LiteralValue::Date(d) => RawLiteral {
                kind: LiteralKind::Date,
                value: serde_json::Value::String(d.format("%Y-%m-%d").to_string()),
                unit: None,
            },
            LiteralValue::Year(y) => RawLiteral {
                kind: LiteralKind::Year,
                value: serde_json::json!(y),
                unit: None,
            },
            LiteralValue::String(s) => RawLiteral {
                kind: LiteralKind::String,
                value: serde_json::Value::String(s.clone()),
                unit: None,
            },
        }
    }
}
