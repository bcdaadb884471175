//! Canonical JSON encoding.
//!
//! The encoding is the byte-level contract behind every hash in the audit
//! ledger and behind report reproducibility:
//!
//! * map keys sorted lexicographically by their UTF-8 bytes;
//! * no insignificant whitespace;
//! * integers printed as integers, floats as the shortest decimal that
//!   round-trips to the same `f64`;
//! * strings escaped the way `serde_json` escapes them.
//!
//! Non-finite floats have no JSON representation. `serde_json` would quietly
//! turn them into `null`, so values are checked before conversion and a
//! [`CanonicalError::NonFinite`] is returned instead.

use serde::ser::{self, Serialize};
use serde_json::Value;
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("non-finite number at {path}")]
    NonFinite { path: String },
    #[error("value cannot be represented as JSON: {0}")]
    Unrepresentable(String),
}

/// Serialize any value into canonical JSON bytes.
pub fn canonical_serialize<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let tree = to_canonical_value(value)?;
    Ok(canonical_bytes(&tree))
}

/// Same as [`canonical_serialize`] but returns a `String`.
pub fn canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    let bytes = canonical_serialize(value)?;
    // canonical_bytes only ever emits valid UTF-8
    Ok(String::from_utf8(bytes).expect("canonical JSON is UTF-8"))
}

/// Convert to a `serde_json::Value` after rejecting non-finite floats.
pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> Result<Value, CanonicalError> {
    value.serialize(FiniteCheck { path: Path::root() })?;
    serde_json::to_value(value).map_err(|e| CanonicalError::Unrepresentable(e.to_string()))
}

/// Encode an already-built JSON tree. `Value` cannot hold NaN, so this is infallible.
pub fn canonical_bytes(value: &Value) -> Vec<u8> {
    let mut out = Vec::with_capacity(128);
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        // Number's Display is itoa for integers and ryu (shortest round trip) for floats.
        Value::Number(n) => out.extend_from_slice(n.to_string().as_bytes()),
        Value::String(s) => write_str(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_str(key, out);
                out.push(b':');
                write_value(item, out);
            }
            out.push(b'}');
        }
    }
}

fn write_str(s: &str, out: &mut Vec<u8>) {
    let escaped = serde_json::to_string(s).expect("string serialization cannot fail");
    out.extend_from_slice(escaped.as_bytes());
}

// ---------------------------------------------------------------------------
// Finite-float validation pass.

#[derive(Clone)]
struct Path(Vec<String>);

impl Path {
    fn root() -> Self {
        Path(Vec::new())
    }
    fn child(&self, seg: impl Into<String>) -> Self {
        let mut next = self.0.clone();
        next.push(seg.into());
        Path(next)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("$");
        }
        f.write_str("$")?;
        for seg in &self.0 {
            write!(f, ".{seg}")?;
        }
        Ok(())
    }
}

impl ser::Error for CanonicalError {
    fn custom<T: fmt::Display>(msg: T) -> Self {
        CanonicalError::Unrepresentable(msg.to_string())
    }
}

struct FiniteCheck {
    path: Path,
}

impl FiniteCheck {
    fn float(&self, v: f64) -> Result<(), CanonicalError> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(CanonicalError::NonFinite {
                path: self.path.to_string(),
            })
        }
    }
}

struct Seq {
    path: Path,
    index: usize,
}

impl Seq {
    fn next_path(&mut self) -> Path {
        let p = self.path.child(self.index.to_string());
        self.index += 1;
        p
    }
}

struct MapCheck {
    path: Path,
    key: Option<String>,
}

macro_rules! ok_scalar {
    ($($name:ident: $ty:ty),* $(,)?) => {
        $(fn $name(self, _v: $ty) -> Result<(), CanonicalError> { Ok(()) })*
    };
}

impl ser::Serializer for FiniteCheck {
    type Ok = ();
    type Error = CanonicalError;
    type SerializeSeq = Seq;
    type SerializeTuple = Seq;
    type SerializeTupleStruct = Seq;
    type SerializeTupleVariant = Seq;
    type SerializeMap = MapCheck;
    type SerializeStruct = MapCheck;
    type SerializeStructVariant = MapCheck;

    ok_scalar!(
        serialize_bool: bool,
        serialize_i8: i8,
        serialize_i16: i16,
        serialize_i32: i32,
        serialize_i64: i64,
        serialize_i128: i128,
        serialize_u8: u8,
        serialize_u16: u16,
        serialize_u32: u32,
        serialize_u64: u64,
        serialize_u128: u128,
        serialize_char: char,
        serialize_str: &str,
        serialize_bytes: &[u8],
    );

    fn serialize_f32(self, v: f32) -> Result<(), CanonicalError> {
        self.float(v as f64)
    }
    fn serialize_f64(self, v: f64) -> Result<(), CanonicalError> {
        self.float(v)
    }
    fn serialize_none(self) -> Result<(), CanonicalError> {
        Ok(())
    }
    fn serialize_some<T: ?Sized + Serialize>(self, value: &T) -> Result<(), CanonicalError> {
        value.serialize(self)
    }
    fn serialize_unit(self) -> Result<(), CanonicalError> {
        Ok(())
    }
    fn serialize_unit_struct(self, _name: &'static str) -> Result<(), CanonicalError> {
        Ok(())
    }
    fn serialize_unit_variant(
        self,
        _name: &'static str,
        _idx: u32,
        _variant: &'static str,
    ) -> Result<(), CanonicalError> {
        Ok(())
    }
    fn serialize_newtype_struct<T: ?Sized + Serialize>(
        self,
        _name: &'static str,
        value: &T,
    ) -> Result<(), CanonicalError> {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: ?Sized + Serialize>(
        self,
        _name: &'static str,
        _idx: u32,
        variant: &'static str,
        value: &T,
    ) -> Result<(), CanonicalError> {
        value.serialize(FiniteCheck {
            path: self.path.child(variant),
        })
    }
    fn serialize_seq(self, _len: Option<usize>) -> Result<Seq, CanonicalError> {
        Ok(Seq {
            path: self.path,
            index: 0,
        })
    }
    fn serialize_tuple(self, len: usize) -> Result<Seq, CanonicalError> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_struct(self, _name: &'static str, len: usize) -> Result<Seq, CanonicalError> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_variant(
        self,
        _name: &'static str,
        _idx: u32,
        variant: &'static str,
        _len: usize,
    ) -> Result<Seq, CanonicalError> {
        Ok(Seq {
            path: self.path.child(variant),
            index: 0,
        })
    }
    fn serialize_map(self, _len: Option<usize>) -> Result<MapCheck, CanonicalError> {
        Ok(MapCheck {
            path: self.path,
            key: None,
        })
    }
    fn serialize_struct(self, _name: &'static str, _len: usize) -> Result<MapCheck, CanonicalError> {
        self.serialize_map(None)
    }
    fn serialize_struct_variant(
        self,
        _name: &'static str,
        _idx: u32,
        variant: &'static str,
        _len: usize,
    ) -> Result<MapCheck, CanonicalError> {
        Ok(MapCheck {
            path: self.path.child(variant),
            key: None,
        })
    }
}

impl ser::SerializeSeq for Seq {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_element<T: ?Sized + Serialize>(&mut self, value: &T) -> Result<(), CanonicalError> {
        let path = self.next_path();
        value.serialize(FiniteCheck { path })
    }
    fn end(self) -> Result<(), CanonicalError> {
        Ok(())
    }
}

macro_rules! seq_like {
    ($trait:ident, $method:ident) => {
        impl ser::$trait for Seq {
            type Ok = ();
            type Error = CanonicalError;
            fn $method<T: ?Sized + Serialize>(&mut self, value: &T) -> Result<(), CanonicalError> {
                ser::SerializeSeq::serialize_element(self, value)
            }
            fn end(self) -> Result<(), CanonicalError> {
                Ok(())
            }
        }
    };
}
seq_like!(SerializeTuple, serialize_element);
seq_like!(SerializeTupleStruct, serialize_field);
seq_like!(SerializeTupleVariant, serialize_field);

impl ser::SerializeMap for MapCheck {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_key<T: ?Sized + Serialize>(&mut self, key: &T) -> Result<(), CanonicalError> {
        // Keys are rendered for error paths only.
        self.key = Some(
            serde_json::to_value(key)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_else(|| "?".to_owned()),
        );
        key.serialize(FiniteCheck {
            path: self.path.clone(),
        })
    }
    fn serialize_value<T: ?Sized + Serialize>(&mut self, value: &T) -> Result<(), CanonicalError> {
        let key = self.key.take().unwrap_or_else(|| "?".to_owned());
        value.serialize(FiniteCheck {
            path: self.path.child(key),
        })
    }
    fn end(self) -> Result<(), CanonicalError> {
        Ok(())
    }
}

impl ser::SerializeStruct for MapCheck {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_field<T: ?Sized + Serialize>(
        &mut self,
        key: &'static str,
        value: &T,
    ) -> Result<(), CanonicalError> {
        value.serialize(FiniteCheck {
            path: self.path.child(key),
        })
    }
    fn end(self) -> Result<(), CanonicalError> {
        Ok(())
    }
}

impl ser::SerializeStructVariant for MapCheck {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_field<T: ?Sized + Serialize>(
        &mut self,
        key: &'static str,
        value: &T,
    ) -> Result<(), CanonicalError> {
        ser::SerializeStruct::serialize_field(self, key, value)
    }
    fn end(self) -> Result<(), CanonicalError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::collections::HashMap;

    #[test]
    fn sorts_keys() {
        let v = json!({"b": 1, "a": 2});
        assert_eq!(canonical_string(&v).unwrap(), r#"{"a":2,"b":1}"#);
    }

    #[test]
    fn nested_and_hashmap_keys_sorted() {
        let mut m = HashMap::new();
        m.insert("zeta", vec![json!({"y": true, "x": null})]);
        m.insert("alpha", vec![]);
        assert_eq!(
            canonical_string(&m).unwrap(),
            r#"{"alpha":[],"zeta":[{"x":null,"y":true}]}"#
        );
    }

    #[test]
    fn shortest_round_trip_floats() {
        assert_eq!(canonical_string(&0.1f64).unwrap(), "0.1");
        assert_eq!(canonical_string(&(0.1f64 + 0.2)).unwrap(), "0.30000000000000004");
        assert_eq!(canonical_string(&1e-7f64).unwrap(), "1e-7");
        assert_eq!(canonical_string(&3u64).unwrap(), "3");
        for x in [0.1f64, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 123456.789] {
            let s = canonical_string(&x).unwrap();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn rejects_nan_anywhere() {
        let mut m = HashMap::new();
        m.insert("score", f64::NAN);
        let err = canonical_serialize(&m).unwrap_err();
        assert!(matches!(err, CanonicalError::NonFinite { ref path } if path == "$.score"));
        assert!(canonical_serialize(&vec![1.0, f64::INFINITY]).is_err());
        assert!(canonical_serialize(&Some(f64::NEG_INFINITY)).is_err());
    }

    #[test]
    fn escapes_strings() {
        let v = json!({"t": "a\"b\n\u{1}é"});
        assert_eq!(canonical_string(&v).unwrap(), "{\"t\":\"a\\\"b\\n\\u0001é\"}");
    }

    #[test]
    fn repeated_calls_identical() {
        let v = json!({"k": [1.5, {"q": "x", "a": [0.25]}], "b": -3});
        let a = canonical_serialize(&v).unwrap();
        let b = canonical_serialize(&v.clone()).unwrap();
        assert_eq!(a, b);
    }
}
