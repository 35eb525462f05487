//! Stable hashing and canonical JSON forms.
//!
//! Fixture lookup keys, tool-call equality, and the deterministic embedder
//! all need representations that never change across runs, platforms, or
//! standard-library versions.

use serde_json::Value;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a 64-bit over `bytes`, folded into `seed`.
pub fn fnv1a_64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Canonical minified JSON: object keys sorted, no whitespace,
/// integer-valued numbers written without a fractional part. Two values
/// that differ only in key order or in `2` vs `2.0` canonicalize
/// identically.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                let f = n.as_f64().unwrap_or(0.0);
                if f.fract() == 0.0 && f.abs() < 9.007_199_254_740_992e15 {
                    out.push_str(&format!("{}", f as i64));
                } else {
                    out.push_str(&format!("{f}"));
                }
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push(':');
                write_canonical(&map[key.as_str()], out);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_minified() {
        let v = json!({"b": 1, "a": {"z": [1, 2], "y": "s"}});
        assert_eq!(canonical_json(&v), r#"{"a":{"y":"s","z":[1,2]},"b":1}"#);
    }

    #[test]
    fn numeric_normalization() {
        assert_eq!(canonical_json(&json!(2.0)), canonical_json(&json!(2)));
        assert_eq!(canonical_json(&json!(2.5)), "2.5");
        assert_eq!(canonical_json(&json!(-0.0)), "0");
    }

    #[test]
    fn fnv_is_stable() {
        // frozen reference value for the empty input with seed 0
        assert_eq!(fnv1a_64(0, b""), 0xcbf29ce484222325);
        assert_ne!(fnv1a_64(0, b"a"), fnv1a_64(1, b"a"));
    }
}
