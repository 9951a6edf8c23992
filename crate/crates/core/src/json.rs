//! JSON emission with numbers limited to 12 significant digits.

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

/// Round `x` to 12 significant decimal digits. Non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_tree(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_tree),
        Value::Object(map) => map.values_mut().for_each(round_tree),
        _ => {}
    }
}

/// Pretty JSON text for `value` with every float rounded by [`round_sig`].
pub fn to_string(value: &impl Serialize) -> Result<String> {
    let mut tree = serde_json::to_value(value)?;
    round_tree(&mut tree);
    let mut s = serde_json::to_string_pretty(&tree)?;
    s.push('\n');
    Ok(s)
}

/// Plain-text rendering used for CSV cells.
pub fn fmt_num(x: f64) -> String {
    let r = round_sig(x);
    if r == r.trunc() && r.abs() < 1e15 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_twelve_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.234_567_890_123_456), 1.234_567_890_12);
        assert_eq!(fmt_num(3.0), "3");
        assert_eq!(fmt_num(-0.000_123_456_789_012_345), "-0.000123456789012");
    }

    #[test]
    fn nested_values_are_rounded() {
        let s = to_string(&serde_json::json!({"a": [1.0000000000001, 2], "b": {"c": 0.1 + 0.2}})).unwrap();
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["a"][0], 1.0);
        assert_eq!(v["a"][1], 2);
        assert_eq!(v["b"]["c"], 0.3);
    }
}
