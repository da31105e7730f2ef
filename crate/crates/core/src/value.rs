//! Typed context values and their canonical text form.
//!
//! The canonical rendering is shared by memo keys, rendered markdown and
//! substituted query text, so it must stay bit-exact:
//!
//! * datetime: `YYYY-MM-DDTHH:MM:SS.ffffffZ` (UTC, microseconds)
//! * timespan: `[-]d.hh:mm:ss.ffffff`
//! * real: shortest round-trip form, always with a `.` or exponent

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six declarable semantic types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    String,
    Long,
    Real,
    Bool,
    #[serde(rename = "datetime")]
    DateTime,
    Timespan,
}

impl ValueType {
    pub const ALL: [ValueType; 6] = [
        ValueType::String,
        ValueType::Long,
        ValueType::Real,
        ValueType::Bool,
        ValueType::DateTime,
        ValueType::Timespan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Long => "long",
            ValueType::Real => "real",
            ValueType::Bool => "bool",
            ValueType::DateTime => "datetime",
            ValueType::Timespan => "timespan",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Long | ValueType::Real)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValueType {
    type Err = UnknownType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "string" => Ok(ValueType::String),
            "long" | "int" => Ok(ValueType::Long),
            "real" | "double" => Ok(ValueType::Real),
            "bool" | "boolean" => Ok(ValueType::Bool),
            "datetime" => Ok(ValueType::DateTime),
            "timespan" => Ok(ValueType::Timespan),
            _ => Err(UnknownType(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown type '{0}' (expected one of string, long, real, bool, datetime, timespan)")]
pub struct UnknownType(pub String);

/// Signed duration with microsecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Timespan(i64);

const MICROS_PER_SECOND: i64 = 1_000_000;
const MICROS_PER_MINUTE: i64 = 60 * MICROS_PER_SECOND;
const MICROS_PER_HOUR: i64 = 60 * MICROS_PER_MINUTE;
const MICROS_PER_DAY: i64 = 24 * MICROS_PER_HOUR;

impl Timespan {
    pub const ZERO: Timespan = Timespan(0);

    pub const fn from_micros(micros: i64) -> Self {
        Timespan(micros)
    }

    pub const fn from_seconds(seconds: i64) -> Self {
        Timespan(seconds * MICROS_PER_SECOND)
    }

    pub const fn from_minutes(minutes: i64) -> Self {
        Timespan(minutes * MICROS_PER_MINUTE)
    }

    pub const fn from_hours(hours: i64) -> Self {
        Timespan(hours * MICROS_PER_HOUR)
    }

    pub const fn from_days(days: i64) -> Self {
        Timespan(days * MICROS_PER_DAY)
    }

    pub const fn as_micros(self) -> i64 {
        self.0
    }

    pub fn checked_add(self, other: Timespan) -> Option<Timespan> {
        self.0.checked_add(other.0).map(Timespan)
    }

    pub fn checked_sub(self, other: Timespan) -> Option<Timespan> {
        self.0.checked_sub(other.0).map(Timespan)
    }

    pub fn checked_mul(self, factor: i64) -> Option<Timespan> {
        self.0.checked_mul(factor).map(Timespan)
    }

    pub fn checked_neg(self) -> Option<Timespan> {
        self.0.checked_neg().map(Timespan)
    }

    pub fn to_chrono(self) -> chrono::Duration {
        chrono::Duration::microseconds(self.0)
    }

    pub fn from_chrono(d: chrono::Duration) -> Option<Timespan> {
        d.num_microseconds().map(Timespan)
    }

    /// Parses `[-][d.]hh:mm:ss[.f{1,7}]` or a compact literal such as `1h`,
    /// `30m`, `2d`, `15s`, `250ms`.
    pub fn parse(raw: &str) -> Result<Timespan, String> {
        let s = raw.trim();
        if s.is_empty() {
            return Err("empty timespan".into());
        }
        if s.contains(':') {
            parse_clock_timespan(s)
        } else {
            parse_compact_timespan(s)
        }
    }
}

fn parse_compact_timespan(s: &str) -> Result<Timespan, String> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let split = body
        .find(|c: char| !c.is_ascii_digit())
        .ok_or_else(|| format!("timespan '{s}' is missing a unit (d, h, m, s, ms)"))?;
    let (digits, unit) = body.split_at(split);
    if digits.is_empty() {
        return Err(format!("timespan '{s}' has no magnitude"));
    }
    let n: i64 = digits
        .parse()
        .map_err(|_| format!("timespan magnitude '{digits}' out of range"))?;
    let scale = match unit {
        "d" => MICROS_PER_DAY,
        "h" => MICROS_PER_HOUR,
        "m" => MICROS_PER_MINUTE,
        "s" => MICROS_PER_SECOND,
        "ms" => 1_000,
        "us" => 1,
        _ => return Err(format!("unknown timespan unit '{unit}'")),
    };
    let micros = n
        .checked_mul(scale)
        .ok_or_else(|| format!("timespan '{s}' out of range"))?;
    Ok(Timespan(if neg { -micros } else { micros }))
}

fn parse_clock_timespan(s: &str) -> Result<Timespan, String> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let parts: Vec<&str> = body.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("timespan '{s}' must look like [d.]hh:mm:ss[.ffffff]"));
    }
    let (days, hours) = match parts[0].split_once('.') {
        Some((d, h)) => (parse_digits(d, s)?, parse_digits(h, s)?),
        None => (0, parse_digits(parts[0], s)?),
    };
    let minutes = parse_digits(parts[1], s)?;
    let (seconds, frac) = match parts[2].split_once('.') {
        Some((sec, frac)) => (parse_digits(sec, s)?, frac),
        None => (parse_digits(parts[2], s)?, ""),
    };
    if minutes >= 60 || seconds >= 60 {
        return Err(format!("timespan '{s}' has minutes or seconds out of range"));
    }
    if frac.len() > 7 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("timespan '{s}' has an invalid fraction"));
    }
    // fractional seconds are truncated to microseconds
    let mut frac_micros = 0i64;
    for (i, c) in frac.chars().take(6).enumerate() {
        frac_micros += i64::from(c as u8 - b'0') * 10i64.pow(5 - i as u32);
    }
    let total = i128::from(days) * i128::from(MICROS_PER_DAY)
        + i128::from(hours) * i128::from(MICROS_PER_HOUR)
        + i128::from(minutes * MICROS_PER_MINUTE)
        + i128::from(seconds * MICROS_PER_SECOND)
        + i128::from(frac_micros);
    let signed = if neg { -total } else { total };
    i64::try_from(signed)
        .map(Timespan)
        .map_err(|_| format!("timespan '{s}' out of range"))
}

fn parse_digits(part: &str, whole: &str) -> Result<i64, String> {
    if part.is_empty() || !part.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("timespan '{whole}' has a malformed component '{part}'"));
    }
    part.parse()
        .map_err(|_| format!("timespan '{whole}' component '{part}' out of range"))
}

impl fmt::Display for Timespan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = self.0 < 0;
        let abs = self.0.unsigned_abs();
        let days = abs / MICROS_PER_DAY as u64;
        let rem = abs % MICROS_PER_DAY as u64;
        let hours = rem / MICROS_PER_HOUR as u64;
        let rem = rem % MICROS_PER_HOUR as u64;
        let minutes = rem / MICROS_PER_MINUTE as u64;
        let rem = rem % MICROS_PER_MINUTE as u64;
        let seconds = rem / MICROS_PER_SECOND as u64;
        let micros = rem % MICROS_PER_SECOND as u64;
        write!(
            f,
            "{}{}.{:02}:{:02}:{:02}.{:06}",
            if neg { "-" } else { "" },
            days,
            hours,
            minutes,
            seconds,
            micros
        )
    }
}

impl Serialize for Timespan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timespan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Timespan::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Parses an ISO-8601 timestamp into UTC, truncated to microseconds. A
/// timestamp without an offset is taken as UTC; a bare date means midnight.
pub fn parse_datetime(raw: &str) -> Result<DateTime<Utc>, String> {
    let s = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc).trunc_subsecs(6));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc().trunc_subsecs(6));
        }
    }
    if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(format!("'{s}' is not an ISO-8601 datetime"))
}

pub fn render_datetime(dt: &DateTime<Utc>) -> String {
    dt.format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string()
}

/// A typed context or table cell value.
#[derive(Debug, Clone)]
pub enum Value {
    String(String),
    Long(i64),
    Real(f64),
    Bool(bool),
    DateTime(DateTime<Utc>),
    Timespan(Timespan),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::String(_) => ValueType::String,
            Value::Long(_) => ValueType::Long,
            Value::Real(_) => ValueType::Real,
            Value::Bool(_) => ValueType::Bool,
            Value::DateTime(_) => ValueType::DateTime,
            Value::Timespan(_) => ValueType::Timespan,
        }
    }

    /// Canonical text rendering (see module docs).
    pub fn render(&self) -> String {
        match self {
            Value::String(s) => s.clone(),
            Value::Long(v) => v.to_string(),
            Value::Real(v) => format!("{v:?}"),
            Value::Bool(v) => v.to_string(),
            Value::DateTime(dt) => render_datetime(dt),
            Value::Timespan(ts) => ts.to_string(),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    /// Type-aware ordering. Longs and reals compare numerically with each
    /// other; every other pairing must share a type. Bools are not ordered.
    pub fn try_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Long(a), Value::Long(b)) => Some(a.cmp(b)),
            (Value::Real(a), Value::Real(b)) => Some(a.total_cmp(b)),
            (Value::Long(a), Value::Real(b)) => Some((*a as f64).total_cmp(b)),
            (Value::Real(a), Value::Long(b)) => Some(a.total_cmp(&(*b as f64))),
            (Value::String(a), Value::String(b)) => Some(a.cmp(b)),
            (Value::DateTime(a), Value::DateTime(b)) => Some(a.cmp(b)),
            (Value::Timespan(a), Value::Timespan(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    /// Type-aware equality used by `==` / `!=`: like [`Value::try_cmp`] but
    /// also defined for bools.
    pub fn try_eq(&self, other: &Value) -> Option<bool> {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => Some(a == b),
            _ => self.try_cmp(other).map(|o| o == Ordering::Equal),
        }
    }
}

/// Structural equality: same type and same value. `Long(5) != String("5")`
/// and `Long(1) != Real(1.0)`. Reals compare bitwise so equality is total.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::String(a), Value::String(b)) => a == b,
            (Value::Long(a), Value::Long(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => a.to_bits() == b.to_bits(),
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::DateTime(a), Value::DateTime(b)) => a == b,
            (Value::Timespan(a), Value::Timespan(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.value_type().hash(state);
        match self {
            Value::String(s) => s.hash(state),
            Value::Long(v) => v.hash(state),
            Value::Real(v) => v.to_bits().hash(state),
            Value::Bool(v) => v.hash(state),
            Value::DateTime(v) => v.hash(state),
            Value::Timespan(v) => v.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::String(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::String(s)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Long(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<Timespan> for Value {
    fn from(v: Timespan) -> Self {
        Value::Timespan(v)
    }
}

impl From<DateTime<Utc>> for Value {
    fn from(v: DateTime<Utc>) -> Self {
        Value::DateTime(v)
    }
}

/// Wire form used in JSON payloads: `{"type": "long", "value": "42"}`.
#[derive(Serialize, Deserialize)]
struct TypedValue {
    #[serde(rename = "type")]
    ty: ValueType,
    value: String,
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TypedValue {
            ty: self.value_type(),
            value: self.render(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tv = TypedValue::deserialize(deserializer)?;
        parse_value(&tv.value, tv.ty).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("cannot convert '{raw}' to {ty}: {reason}")]
pub struct ValueError {
    pub raw: String,
    pub ty: ValueType,
    pub reason: String,
}

/// Parses raw text as the declared type.
pub fn parse_value(raw: &str, ty: ValueType) -> Result<Value, ValueError> {
    let err = |reason: String| ValueError {
        raw: raw.to_string(),
        ty,
        reason,
    };
    match ty {
        ValueType::String => Ok(Value::String(raw.to_string())),
        ValueType::Long => raw
            .trim()
            .parse::<i64>()
            .map(Value::Long)
            .map_err(|e| err(e.to_string())),
        ValueType::Real => raw
            .trim()
            .parse::<f64>()
            .map(Value::Real)
            .map_err(|e| err(e.to_string())),
        ValueType::Bool => match raw.trim().to_ascii_lowercase().as_str() {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(err("expected true or false".into())),
        },
        ValueType::DateTime => parse_datetime(raw).map(Value::DateTime).map_err(err),
        ValueType::Timespan => Timespan::parse(raw).map(Value::Timespan).map_err(err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn timespan_from_clock_form() {
        assert_eq!(
            parse_value("04:00:00", ValueType::Timespan).unwrap(),
            Value::Timespan(Timespan::from_hours(4))
        );
        assert_eq!(
            Timespan::parse("1.02:03:04.5").unwrap(),
            Timespan::from_micros(
                MICROS_PER_DAY + 2 * MICROS_PER_HOUR + 3 * MICROS_PER_MINUTE + 4_500_000
            )
        );
    }

    #[test]
    fn compact_and_clock_forms_agree() {
        let pairs = [
            ("1h", "01:00:00"),
            ("30m", "00:30:00"),
            ("2d", "2.00:00:00"),
            ("45s", "00:00:45"),
            ("-20m", "-00:20:00"),
        ];
        for (compact, clock) in pairs {
            assert_eq!(
                parse_value(compact, ValueType::Timespan).unwrap(),
                parse_value(clock, ValueType::Timespan).unwrap(),
                "{compact} vs {clock}"
            );
        }
    }

    #[test]
    fn long_zero() {
        assert_eq!(parse_value("0", ValueType::Long).unwrap(), Value::Long(0));
    }

    #[test]
    fn conversion_errors_name_type_and_text() {
        let e = parse_value("abc", ValueType::Long).unwrap_err();
        assert_eq!(e.ty, ValueType::Long);
        assert_eq!(e.raw, "abc");
        assert!(parse_value("1x", ValueType::Timespan).is_err());
        assert!(parse_value("00:61:00", ValueType::Timespan).is_err());
        assert!(parse_value("maybe", ValueType::Bool).is_err());
        assert!(parse_value("yesterday", ValueType::DateTime).is_err());
    }

    #[test]
    fn bool_is_case_insensitive() {
        assert_eq!(parse_value("TRUE", ValueType::Bool).unwrap(), Value::Bool(true));
        assert_eq!(parse_value("False", ValueType::Bool).unwrap(), Value::Bool(false));
    }

    #[test]
    fn canonical_renderings() {
        let dt = parse_datetime("2024-01-01T00:00:00Z").unwrap();
        assert_eq!(render_datetime(&dt), "2024-01-01T00:00:00.000000Z");
        assert_eq!(Timespan::from_hours(4).to_string(), "0.04:00:00.000000");
        assert_eq!(Timespan::from_minutes(-90).to_string(), "-0.01:30:00.000000");
        assert_eq!(Value::Real(1.0).render(), "1.0");
        assert_eq!(Value::Real(0.25).render(), "0.25");
    }

    #[test]
    fn equality_is_type_aware() {
        assert_ne!(Value::Long(5), Value::String("5".into()));
        assert_ne!(Value::Long(1), Value::Real(1.0));
        assert_eq!(Value::Long(1).try_eq(&Value::Real(1.0)), Some(true));
        assert_eq!(Value::Long(1).try_eq(&Value::String("1".into())), None);
        assert_eq!(Value::Bool(true).try_cmp(&Value::Bool(false)), None);
    }

    #[test]
    fn datetime_offsets_normalize_to_utc() {
        let a = parse_datetime("2024-01-01T02:00:00+02:00").unwrap();
        let b = parse_datetime("2024-01-01T00:00:00Z").unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_datetime("2024-01-01").unwrap(), b);
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            ".*".prop_map(Value::String),
            any::<i64>().prop_map(Value::Long),
            any::<f64>().prop_map(Value::Real),
            any::<bool>().prop_map(Value::Bool),
            (-2_000_000_000_000i64..4_000_000_000_000i64).prop_map(|ms| {
                Value::DateTime(DateTime::from_timestamp_micros(ms * 1000 + 17).unwrap())
            }),
            any::<i64>().prop_map(|m| Value::Timespan(Timespan::from_micros(m))),
        ]
    }

    proptest! {
        #[test]
        fn canonical_rendering_round_trips(v in arb_value()) {
            let back = parse_value(&v.render(), v.value_type()).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn compact_literal_matches_clock_literal(h in 0i64..1000, m in 0i64..60, s in 0i64..60) {
            let compact = Timespan::parse(&format!("{h}h")).unwrap()
                .checked_add(Timespan::parse(&format!("{m}m")).unwrap()).unwrap()
                .checked_add(Timespan::parse(&format!("{s}s")).unwrap()).unwrap();
            let clock = Timespan::parse(&format!("{h:02}:{m:02}:{s:02}")).unwrap();
            prop_assert_eq!(compact, clock);
        }
    }
}
