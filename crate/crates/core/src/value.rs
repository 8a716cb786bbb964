//! Exact decimal values for numeric table cells.

use std::fmt;

use num_bigint::{BigInt, Sign};
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const CURRENCY_PREFIXES: &[&str] = &["US$", "HK$", "RMB", "$", "€", "£", "¥", "₹"];

/// A numeric cell value stored as `mantissa * 10^-scale`.
///
/// Values are kept normalized (no trailing fractional zeros, no negative
/// zero), so derived equality is exact decimal equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NumericValue {
    mantissa: BigInt,
    scale: u32,
    is_percent: bool,
}

impl NumericValue {
    pub fn new(mantissa: BigInt, scale: u32, is_percent: bool) -> Self {
        let mut v = NumericValue {
            mantissa,
            scale,
            is_percent,
        };
        v.normalize();
        v
    }

    pub fn from_i64(n: i64) -> Self {
        Self::new(BigInt::from(n), 0, false)
    }

    fn normalize(&mut self) {
        let ten = BigInt::from(10);
        while self.scale > 0 && (&self.mantissa % &ten).is_zero() {
            self.mantissa /= &ten;
            self.scale -= 1;
        }
        if self.mantissa.is_zero() {
            self.scale = 0;
        }
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mantissa
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn is_percent(&self) -> bool {
        self.is_percent
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa.sign() == Sign::Minus
    }

    /// Adds `units * 10^-scale` to the value.
    pub fn add_units(&self, units: i64, scale: u32) -> NumericValue {
        let (a, b, s) = align(&self.mantissa, self.scale, &BigInt::from(units), scale);
        NumericValue::new(a + b, s, self.is_percent)
    }

    /// Absolute value as plain digits with a decimal point, no sign or suffix.
    pub fn magnitude_string(&self) -> String {
        let digits = self.mantissa.abs().to_string();
        let scale = self.scale as usize;
        if scale == 0 {
            return digits;
        }
        let padded = if digits.len() <= scale {
            format!("{}{}", "0".repeat(scale + 1 - digits.len()), digits)
        } else {
            digits
        };
        let (int, frac) = padded.split_at(padded.len() - scale);
        format!("{int}.{frac}")
    }
}

fn align(a: &BigInt, sa: u32, b: &BigInt, sb: u32) -> (BigInt, BigInt, u32) {
    let s = sa.max(sb);
    let pa = BigInt::from(10).pow(s - sa);
    let pb = BigInt::from(10).pow(s - sb);
    (a * pa, b * pb, s)
}

impl fmt::Display for NumericValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_negative() {
            f.write_str("-")?;
        }
        f.write_str(&self.magnitude_string())?;
        if self.is_percent {
            f.write_str("%")?;
        }
        Ok(())
    }
}

impl Serialize for NumericValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NumericValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        normalize_value(&s).map_err(serde::de::Error::custom)
    }
}

/// Parses a rendered cell string into an exact value.
///
/// Accepts thousands separators (`,` and spaces), a leading currency symbol,
/// accounting negatives `(x)`, an explicit sign and a trailing `%`.
pub fn normalize_value(raw: &str) -> Result<NumericValue> {
    let fail = || Error::NotNumeric(raw.to_string());
    let mut s = raw.trim();

    let mut is_percent = strip_percent(&mut s);
    let mut negative = false;
    if let Some(inner) = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
        negative = true;
        s = inner.trim();
        if !is_percent {
            is_percent = strip_percent(&mut s);
        }
    }

    let mut signed = false;
    let mut take_sign = |s: &mut &str, negative: &mut bool| -> Result<()> {
        for (prefix, neg) in [("-", true), ("−", true), ("+", false)] {
            if let Some(rest) = s.strip_prefix(prefix) {
                if signed || *negative {
                    return Err(fail());
                }
                signed = true;
                *negative = neg;
                *s = rest.trim_start();
                break;
            }
        }
        Ok(())
    };
    take_sign(&mut s, &mut negative)?;
    for prefix in CURRENCY_PREFIXES {
        if let Some(rest) = s.strip_prefix(prefix) {
            s = rest.trim_start();
            break;
        }
    }
    take_sign(&mut s, &mut negative)?;

    let mut digits = String::with_capacity(s.len());
    let mut scale = 0u32;
    let mut seen_point = false;
    for ch in s.chars() {
        match ch {
            '0'..='9' => {
                digits.push(ch);
                if seen_point {
                    scale += 1;
                }
            }
            '.' if !seen_point => seen_point = true,
            ',' | ' ' | '\u{a0}' if !seen_point => {}
            _ => return Err(fail()),
        }
    }
    if digits.is_empty() {
        return Err(fail());
    }
    let mut mantissa: BigInt = digits.parse().map_err(|_| fail())?;
    if negative {
        mantissa = -mantissa;
    }
    Ok(NumericValue::new(mantissa, scale, is_percent))
}

fn strip_percent(s: &mut &str) -> bool {
    match s.strip_suffix('%') {
        Some(rest) => {
            *s = rest.trim_end();
            true
        }
        None => false,
    }
}
