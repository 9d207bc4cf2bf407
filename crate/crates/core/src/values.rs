//! Storage-class aware value type shared by the profiler and the bench.
//!
//! SQLite rows surface as `SqlValue` lists. The JSON encoding keeps integer
//! and real columns distinguishable so knowledge files round-trip exactly:
//! NULL, integers, and text map to their native JSON forms, reals are wrapped
//! as `{"real": x}` and blobs as `{"blob": "<hex>"}`.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq)]
pub enum SqlValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl SqlValue {
    /// Human-readable rendering used in prompts and phrase matching.
    pub fn render(&self) -> String {
        match self {
            SqlValue::Null => "NULL".to_string(),
            SqlValue::Integer(i) => i.to_string(),
            SqlValue::Real(r) => format_real(*r),
            SqlValue::Text(s) => s.clone(),
            SqlValue::Blob(b) => format!("x'{}'", hex::encode(b)),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, SqlValue::Null)
    }

    /// Numeric view of the value, if it parses as a number. Text is included
    /// so profiles stay meaningful on BIRD's mixed-type columns.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            SqlValue::Integer(i) => Some(*i as f64),
            SqlValue::Real(r) => Some(*r),
            SqlValue::Text(s) => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()),
            _ => None,
        }
    }

    fn class_rank(&self) -> u8 {
        match self {
            SqlValue::Integer(_) | SqlValue::Real(_) => 0,
            SqlValue::Text(_) => 1,
            SqlValue::Blob(_) => 2,
            SqlValue::Null => 3,
        }
    }

    /// Total deterministic order: numbers < text < blobs < NULL, numbers
    /// compared numerically across integer/real, text and blobs bytewise.
    pub fn cmp_total(&self, other: &SqlValue) -> Ordering {
        let rank = self.class_rank().cmp(&other.class_rank());
        if rank != Ordering::Equal {
            return rank;
        }
        match (self, other) {
            (SqlValue::Integer(a), SqlValue::Integer(b)) => a.cmp(b),
            (SqlValue::Real(a), SqlValue::Real(b)) => total_f64(*a, *b),
            (SqlValue::Integer(a), SqlValue::Real(b)) => total_f64(*a as f64, *b),
            (SqlValue::Real(a), SqlValue::Integer(b)) => total_f64(*a, *b as f64),
            (SqlValue::Text(a), SqlValue::Text(b)) => a.cmp(b),
            (SqlValue::Blob(a), SqlValue::Blob(b)) => a.cmp(b),
            (SqlValue::Null, SqlValue::Null) => Ordering::Equal,
            _ => unreachable!("class ranks matched"),
        }
    }
}

fn total_f64(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

/// Shortest round-trip rendering; integral reals keep a trailing `.0` so
/// they stay visually distinct from integers.
pub fn format_real(r: f64) -> String {
    if r.is_finite() && r.fract() == 0.0 && r.abs() < 1e15 {
        format!("{r:.1}")
    } else {
        format!("{r}")
    }
}

impl fmt::Display for SqlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<rusqlite::types::Value> for SqlValue {
    fn from(v: rusqlite::types::Value) -> Self {
        use rusqlite::types::Value;
        match v {
            Value::Null => SqlValue::Null,
            Value::Integer(i) => SqlValue::Integer(i),
            Value::Real(r) => SqlValue::Real(r),
            Value::Text(s) => SqlValue::Text(s),
            Value::Blob(b) => SqlValue::Blob(b),
        }
    }
}

impl Serialize for SqlValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            SqlValue::Null => serializer.serialize_unit(),
            SqlValue::Integer(i) => serializer.serialize_i64(*i),
            SqlValue::Text(s) => serializer.serialize_str(s),
            SqlValue::Real(r) => {
                let mut m = serializer.serialize_map(Some(1))?;
                m.serialize_entry("real", r)?;
                m.end()
            }
            SqlValue::Blob(b) => {
                let mut m = serializer.serialize_map(Some(1))?;
                m.serialize_entry("blob", &hex::encode(b))?;
                m.end()
            }
        }
    }
}

struct SqlValueVisitor;

impl<'de> Visitor<'de> for SqlValueVisitor {
    type Value = SqlValue;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("null, integer, string, {\"real\": x}, or {\"blob\": hex}")
    }

    fn visit_unit<E: de::Error>(self) -> Result<SqlValue, E> {
        Ok(SqlValue::Null)
    }

    fn visit_none<E: de::Error>(self) -> Result<SqlValue, E> {
        Ok(SqlValue::Null)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<SqlValue, E> {
        Ok(SqlValue::Integer(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<SqlValue, E> {
        i64::try_from(v)
            .map(SqlValue::Integer)
            .map_err(|_| E::custom("integer out of range"))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<SqlValue, E> {
        Ok(SqlValue::Real(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<SqlValue, E> {
        Ok(SqlValue::Text(v.to_string()))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<SqlValue, A::Error> {
        let key: String = map
            .next_key()?
            .ok_or_else(|| de::Error::custom("empty value object"))?;
        let value = match key.as_str() {
            "real" => SqlValue::Real(map.next_value::<f64>()?),
            "blob" => {
                let hex_str: String = map.next_value()?;
                let bytes = hex::decode(&hex_str)
                    .map_err(|e| de::Error::custom(format!("bad blob hex: {e}")))?;
                SqlValue::Blob(bytes)
            }
            other => return Err(de::Error::custom(format!("unknown value tag `{other}`"))),
        };
        if map.next_key::<String>()?.is_some() {
            return Err(de::Error::custom("value object must have one key"));
        }
        Ok(value)
    }
}

impl<'de> Deserialize<'de> for SqlValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(SqlValueVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_keeps_storage_class() {
        let values = vec![
            SqlValue::Null,
            SqlValue::Integer(42),
            SqlValue::Real(1.0),
            SqlValue::Real(0.1),
            SqlValue::Text("1".into()),
            SqlValue::Blob(vec![0xde, 0xad]),
        ];
        let json = serde_json::to_string(&values).unwrap();
        let back: Vec<SqlValue> = serde_json::from_str(&json).unwrap();
        assert_eq!(values, back);
    }

    #[test]
    fn integer_and_real_stay_distinct_in_json() {
        assert_eq!(serde_json::to_string(&SqlValue::Integer(1)).unwrap(), "1");
        assert_eq!(
            serde_json::to_string(&SqlValue::Real(1.0)).unwrap(),
            "{\"real\":1.0}"
        );
    }

    #[test]
    fn total_order_places_null_last() {
        let mut vals = vec![
            SqlValue::Null,
            SqlValue::Text("a".into()),
            SqlValue::Integer(2),
            SqlValue::Real(1.5),
        ];
        vals.sort_by(|a, b| a.cmp_total(b));
        assert_eq!(vals.last(), Some(&SqlValue::Null));
        assert_eq!(vals[0], SqlValue::Real(1.5));
    }

    #[test]
    fn numeric_parse_covers_numeric_text() {
        assert_eq!(SqlValue::Text("12.5".into()).as_number(), Some(12.5));
        assert_eq!(SqlValue::Text("abc".into()).as_number(), None);
        assert_eq!(SqlValue::Null.as_number(), None);
    }
}
