use serde::{Deserialize, Serialize};

pub const NOT_RANKED: &str = "(not ranked)";
/// Edit-distance floor for fuzzy name matches; longer names allow one edit
/// per five characters.
pub const MAX_NAME_DISTANCE: usize = 2;

pub fn name_distance_limit(a: &str, b: &str) -> usize {
    MAX_NAME_DISTANCE.max(a.chars().count().max(b.chars().count()) / 5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLine {
    /// Index into the findings the completion was parsed against.
    pub index: usize,
    pub name: String,
    pub probability: f64,
    pub explanation: String,
    /// False for findings the completion left out.
    pub ranked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("ranking unavailable: no usable line in the completion")]
pub struct RankingUnavailable;

fn parse_probability(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    let (num, pct) = match raw.strip_suffix('%') {
        Some(n) => (n.trim(), true),
        None => (raw, false),
    };
    let v: f64 = num.parse().ok()?;
    if !v.is_finite() || v < 0.0 {
        return None;
    }
    let p = if pct || v > 1.0 { v / 100.0 } else { v };
    Some(p.min(1.0))
}

fn clean_name(raw: &str) -> &str {
    raw.trim()
        .trim_start_matches(['-', '*', '•'])
        .trim()
        .trim_matches(['*', '`', '"', '\''])
        .trim()
}

fn match_name(name: &str, names: &[String], taken: &[bool]) -> Option<usize> {
    let lower = name.to_lowercase();
    if let Some(i) = names.iter().position(|n| n.to_lowercase() == lower) {
        return Some(i);
    }
    let mut best: Option<(usize, usize)> = None;
    let mut tied = false;
    for (i, n) in names.iter().enumerate() {
        if taken[i] {
            continue;
        }
        let n = n.to_lowercase();
        let d = strsim::levenshtein(&lower, &n);
        if d > name_distance_limit(&lower, &n) {
            continue;
        }
        match best {
            Some((bd, _)) if d > bd => {}
            Some((bd, _)) if d == bd => tied = true,
            _ => {
                best = Some((d, i));
                tied = false;
            }
        }
    }
    best.filter(|_| !tied).map(|(_, i)| i)
}

/// Reads `name, probability, explanation` lines. Every finding comes back
/// exactly once: unmatched ones are appended at probability 0.
pub fn parse_ranking_output(completion: &str, names: &[String]) -> Result<Vec<RankLine>, RankingUnavailable> {
    let mut taken = vec![false; names.len()];
    let mut out = Vec::new();
    for line in completion.lines() {
        let mut parts = line.splitn(3, ',');
        let (Some(name), Some(prob)) = (parts.next(), parts.next()) else { continue };
        let Some(probability) = parse_probability(prob) else { continue };
        let Some(index) = match_name(clean_name(name), names, &taken) else { continue };
        if taken[index] {
            continue;
        }
        taken[index] = true;
        out.push(RankLine {
            index,
            name: names[index].clone(),
            probability,
            explanation: parts.next().unwrap_or("").trim().to_string(),
            ranked: true,
        });
    }
    if out.is_empty() {
        return Err(RankingUnavailable);
    }
    for (index, name) in names.iter().enumerate() {
        if !taken[index] {
            out.push(RankLine {
                index,
                name: name.clone(),
                probability: 0.0,
                explanation: NOT_RANKED.into(),
                ranked: false,
            });
        }
    }
    Ok(out)
}

/// The CSV shape the parser reads.
pub fn render_ranking(lines: &[(String, f64, String)]) -> String {
    lines
        .iter()
        .map(|(n, p, e)| format!("{n}, {}%, {e}\n", (p * 100.0).round() as i64))
        .collect()
}
