use serde::{Deserialize, Serialize};

use super::prompt::NO_PROBLEM_STATEMENT;

pub const HEADINGS: [&str; 4] = ["Problem Description", "Findings", "Automatic Actions", "Suggested Actions"];
pub const NO_FINDINGS: &str = "No findings matched.";
const NONE_ITEM: &str = "None.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub problem_statement: String,
    pub findings_narrative: String,
    pub automatic_actions: Vec<String>,
    pub suggested_actions: Vec<String>,
    /// False when the summary came from the template instead of the model.
    #[serde(default)]
    pub generated: bool,
}

fn list(items: &[String]) -> String {
    if items.is_empty() {
        format!("- {NONE_ITEM}")
    } else {
        items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
    }
}

impl SummaryDoc {
    pub fn to_text(&self) -> String {
        format!(
            "{}\n{}\n\n{}\n{}\n\n{}\n{}\n\n{}\n{}\n",
            HEADINGS[0],
            self.problem_statement,
            HEADINGS[1],
            self.findings_narrative,
            HEADINGS[2],
            list(&self.automatic_actions),
            HEADINGS[3],
            list(&self.suggested_actions),
        )
    }

    pub fn to_markdown(&self) -> String {
        format!(
            "### {}\n{}\n\n### {}\n{}\n\n### {}\n{}\n\n### {}\n{}\n",
            HEADINGS[0],
            self.problem_statement,
            HEADINGS[1],
            self.findings_narrative,
            HEADINGS[2],
            list(&self.automatic_actions),
            HEADINGS[3],
            list(&self.suggested_actions),
        )
    }
}

fn heading_of(line: &str) -> Option<usize> {
    let t = line
        .trim()
        .trim_start_matches('#')
        .trim_matches(|c| c == '*' || c == '_')
        .trim()
        .trim_end_matches(':')
        .trim_matches(|c| c == '*' || c == '_')
        .trim();
    HEADINGS.iter().position(|h| h.eq_ignore_ascii_case(t))
}

fn items(body: &str) -> Vec<String> {
    body.lines()
        .filter_map(|l| {
            let l = l.trim();
            l.strip_prefix("- ").or_else(|| l.strip_prefix("* ")).map(str::trim)
        })
        .filter(|i| !i.is_empty() && !i.eq_ignore_ascii_case(NONE_ITEM) && !i.eq_ignore_ascii_case("none"))
        .map(String::from)
        .collect()
}

/// Splits a completion at the four headings; `None` unless all appear once,
/// in order, with a non-empty problem and findings section.
pub fn parse_summary(text: &str) -> Option<SummaryDoc> {
    let mut sections: [Option<Vec<&str>>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some(h) = heading_of(line) {
            if sections[h].is_some() || current.is_some_and(|c| h <= c) || (current.is_none() && h != 0) {
                return None;
            }
            sections[h] = Some(Vec::new());
            current = Some(h);
            continue;
        }
        if let Some(c) = current {
            sections[c].as_mut().unwrap().push(line);
        }
    }
    let [Some(p), Some(f), Some(a), Some(s)] = sections else { return None };
    let join = |v: Vec<&str>| v.join("\n").trim().to_string();
    let (problem, findings) = (join(p), join(f));
    if problem.is_empty() || findings.is_empty() {
        return None;
    }
    Some(SummaryDoc {
        problem_statement: problem,
        findings_narrative: findings,
        automatic_actions: items(&join(a)),
        suggested_actions: items(&join(s)),
        generated: true,
    })
}

/// Template summary from (name, probability, explanation) rows, best first.
pub fn fallback_summary(
    problem: &str,
    ranked: &[(String, f64, String)],
    executed: &[String],
    proposed: &[String],
) -> SummaryDoc {
    let problem = if problem.trim().is_empty() { NO_PROBLEM_STATEMENT } else { problem.trim() };
    let findings = if ranked.is_empty() {
        NO_FINDINGS.to_string()
    } else {
        ranked
            .iter()
            .map(|(n, p, why)| format!("- {n} ({:.0}%): {why}", p * 100.0))
            .collect::<Vec<_>>()
            .join("\n")
    };
    SummaryDoc {
        problem_statement: problem.to_string(),
        findings_narrative: findings,
        automatic_actions: executed.to_vec(),
        suggested_actions: proposed.to_vec(),
        generated: false,
    }
}
