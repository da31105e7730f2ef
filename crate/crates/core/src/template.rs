//! `{Key}` placeholder templates.
//!
//! Placeholders are `{Identifier}` with `Identifier = [A-Za-z_][A-Za-z0-9_]*`.
//! `{{` and `}}` are literal braces. Any other brace is kept verbatim.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::context::ExecutionContext;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Literal(&'a str),
    /// An escaped brace, already unescaped.
    Brace(char),
    Placeholder(&'a str),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("missing context keys: {}", .0.join(", "))]
pub struct MissingKeys(pub Vec<String>);

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Splits a template into literal text, escaped braces and placeholders.
pub fn segments(template: &str) -> Vec<Segment<'_>> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut lit_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                push_literal(&mut out, template, lit_start, i);
                out.push(Segment::Brace('{'));
                i += 2;
                lit_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                push_literal(&mut out, template, lit_start, i);
                out.push(Segment::Brace('}'));
                i += 2;
                lit_start = i;
            }
            b'{' if bytes.get(i + 1).copied().is_some_and(is_ident_start) => {
                let mut j = i + 2;
                while j < bytes.len() && is_ident_char(bytes[j]) {
                    j += 1;
                }
                if bytes.get(j) == Some(&b'}') {
                    push_literal(&mut out, template, lit_start, i);
                    out.push(Segment::Placeholder(&template[i + 1..j]));
                    i = j + 1;
                    lit_start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    push_literal(&mut out, template, lit_start, bytes.len());
    out
}

fn push_literal<'a>(out: &mut Vec<Segment<'a>>, template: &'a str, start: usize, end: usize) {
    if end > start {
        out.push(Segment::Literal(&template[start..end]));
    }
}

/// All placeholder names referenced by the template.
pub fn placeholders(template: &str) -> BTreeSet<String> {
    segments(template)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Placeholder(name) => Some(name.to_string()),
            _ => None,
        })
        .collect()
}

/// Replaces every placeholder with the canonical rendering of its value.
pub fn substitute(template: &str, ctx: &ExecutionContext) -> Result<String, MissingKeys> {
    let segs = segments(template);
    let missing: BTreeSet<&str> = segs
        .iter()
        .filter_map(|s| match s {
            Segment::Placeholder(name) if ctx.get(name).is_none() => Some(*name),
            _ => None,
        })
        .collect();
    if !missing.is_empty() {
        return Err(MissingKeys(missing.into_iter().map(String::from).collect()));
    }
    let mut out = String::with_capacity(template.len());
    for seg in segs {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Brace(c) => out.push(c),
            Segment::Placeholder(name) => out.push_str(&ctx.get(name).expect("checked").render()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;
    use proptest::prelude::*;

    fn ctx(pairs: &[(&str, Value)]) -> ExecutionContext {
        pairs.iter().cloned().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn substitutes_markdown() {
        let c = ctx(&[("DatabaseName", "db1".into())]);
        assert_eq!(substitute("DB **{DatabaseName}**", &c).unwrap(), "DB **db1**");
    }

    #[test]
    fn identity_without_placeholders() {
        assert_eq!(
            substitute("no placeholders", &ExecutionContext::default()).unwrap(),
            "no placeholders"
        );
    }

    #[test]
    fn repeated_placeholder() {
        let c = ctx(&[("A", Value::Long(7))]);
        assert_eq!(substitute("{A}-{A}", &c).unwrap(), "7-7");
    }

    #[test]
    fn missing_keys_are_all_listed() {
        let c = ctx(&[("A", Value::Long(1))]);
        let err = substitute("{B} {A} {C} {B}", &c).unwrap_err();
        assert_eq!(err.0, vec!["B".to_string(), "C".to_string()]);
    }

    #[test]
    fn escaped_braces() {
        let c = ctx(&[("A", Value::Long(1))]);
        assert_eq!(substitute("{{A}} = {A}", &c).unwrap(), "{A} = 1");
        assert!(placeholders("{{A}}").is_empty());
        assert_eq!(substitute("x { y } {1}", &c).unwrap(), "x { y } {1}");
    }

    #[test]
    fn snippet_query_keys() {
        let q = "ManagementOperations\n| where ServerName == \"{ServerName}\"\n| where DatabaseName == \"{DatabaseName}\"\n| where TimeStamp >= datetime({StartTime})\n| where TimeStamp <= datetime({EndTime})";
        let keys: Vec<_> = placeholders(q).into_iter().collect();
        assert_eq!(keys, ["DatabaseName", "EndTime", "ServerName", "StartTime"]);
    }

    fn arb_piece() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z =.\n]{0,6}",
            "[A-Z][a-z0-9_]{0,4}".prop_map(|k| format!("{{{k}}}")),
            Just("{{".to_string()),
            Just("}}".to_string()),
        ]
    }

    fn arb_template() -> impl Strategy<Value = String> {
        prop::collection::vec(arb_piece(), 0..6).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn keys_are_monotone_under_concatenation(a in arb_template(), b in arb_template()) {
            let joined = placeholders(&format!("{a}{b}"));
            let union: BTreeSet<String> = placeholders(&a).union(&placeholders(&b)).cloned().collect();
            prop_assert_eq!(joined, union);
        }

        #[test]
        fn substitution_depends_only_on_projection(t in arb_template(), extra in 0i64..5) {
            let keys = placeholders(&t);
            let mut full: ExecutionContext = keys.iter().map(|k| (k.clone(), Value::Long(k.len() as i64))).collect();
            full = full.with("Unrelated_zz", Value::Long(extra));
            let projected = full.project(&keys);
            prop_assert_eq!(substitute(&t, &full).unwrap(), substitute(&t, &projected).unwrap());
        }
    }
}
