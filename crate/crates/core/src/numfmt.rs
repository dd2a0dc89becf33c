//! Fixed 17-significant-digit decimal rendering.
//!
//! Seventeen significant digits are enough to round-trip any finite `f64`
//! exactly, and a fixed width keeps serialized levels and budgets stable
//! across tools that display them verbatim.

use serde::{Deserialize, Deserializer, Serializer};

/// Formats `x` with exactly 17 significant digits.
///
/// Values whose decimal exponent lies in `-7..=20` are written positionally
/// (`0.097268336296644260`); others use scientific notation
/// (`1.2345678901234567e-9`). Both are valid JSON numbers. Non-finite values
/// fall back to Rust's `Display` output.
pub fn sig17(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-7..=20).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let mut out = String::with_capacity(digits.len() + 10);
    out.push_str(sign);
    if exp < 0 {
        out.push_str("0.");
        for _ in 0..(-exp - 1) {
            out.push('0');
        }
        out.push_str(&digits);
    } else {
        let int_len = exp as usize + 1;
        if int_len >= digits.len() {
            out.push_str(&digits);
            for _ in digits.len()..int_len {
                out.push('0');
            }
            out.push_str(".0");
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    }
    out
}

/// Serde adapter: `#[serde(with = "exaddis_core::numfmt::json17")]`.
///
/// Serializes through `serde_json::value::RawValue`, so the fixed digits
/// survive only when the serializer is `serde_json`.
pub mod json17 {
    use super::*;
    use serde::ser::Error as _;
    use serde::Serialize;
    use serde_json::value::RawValue;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if !x.is_finite() {
            return Err(S::Error::custom(format!("non-finite number {x}")));
        }
        let raw = RawValue::from_string(sig17(*x)).map_err(S::Error::custom)?;
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

/// Same as [`json17`] for `Option<f64>`.
pub mod json17_opt {
    use super::*;
    use serde::Serialize;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(v) => super::json17::serialize(v, s),
            None => Option::<f64>::None.serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<f64>::deserialize(d)
    }
}
