use serde::{Deserialize, Serialize};

use crate::executor::{Finding, StepStatus};
use crate::model::{StepKind, TsgType};

pub const NO_PROBLEM_STATEMENT: &str = "(no problem statement provided)";
pub const TRUNCATION_MARKER: &str = " [truncated]";

const FRAMING: &str = "INPUT:
You are given:
1. A description of a product.
2. A statement about a specific problem.
3. A list of findings about the impacted resource.

TASK:
To return a sorted list of findings given in (3) that applies to the problem in (2) based on the product (in (1)). Think of how findings relate to one another.

RULES:
- You can ONLY use the given findings.
- ALL findings need to be returned.
- Answer ONLY as a list in CSV format.
- One row per finding.
- Each row has:
 - (a) the name of the finding.
 - (c) a probability estimate that it applies.
 - (d) a one-line explanation of why it applies.
";

const EXAMPLE_PRODUCT: &str = "MageDB is an analytical database system that stores data in memory on multiple nodes. Nodes are provisioned for a specific database and billed to the customer. Nodes are deployed on Kubernetes and managed by a central control service (CCS). Customers write queries, send them to a frontend endpoint on a single node using a tabular data connection. An interpreter compiles and runs queries by sending generated scala code to each backend node. The product is updated once a week. An Upgrade causes downtime. The data is backed up in remote storage, and when a new node is provisioned for a database, the in-memory data is hydrated from it.";

const EXAMPLE_PROBLEM: &str = "The customer is complaining that they receive an error 'the interpreter cannot be instantiated'. This is new and did not occur last week when submitting the same queries.";

const EXAMPLE_FINDINGS: [(&str, &str, &str); 4] = [
    (
        "QueryFailures",
        "Availability",
        "Query <cd39> failed with error 'connection lost' after running for 2:38 minutes. All nodes returned data but the frontend (node 541) failed to merge and sort the results.\nQuery <sd31> failed to compile after 0.1 seconds.",
    ),
    (
        "ProcessCrash",
        "Availability",
        "The frontend process on node 541 crashes with an out-of-memory error trying to allocate space during a data merge operation.",
    ),
    (
        "ConnectivityFailure",
        "Availability",
        "we detected 2352 failed login attempts. All login attempts failed with 'Frontend not found.'",
    ),
    (
        "LongTransaction",
        "Performance",
        "session <26cd> is running a long transaction filling up in-memory log space. The transaction has been running for 4.53 hours, execute 26 queries and moved 10.5 GB of data.",
    ),
];

const EXAMPLE_OUTPUT: &str = "LongTransaction, 90%, transaction taking memory
ProcessCrash, 50%, lack of memory caused frontend crash
ConnevityFailure, 20%, crash caused login failures
QueryFailure, 20%, crash causes query failures
";

/// One finding as the model sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFinding {
    pub name: String,
    pub category: String,
    pub tsg_type: TsgType,
    pub topics: Vec<String>,
    pub explanation: String,
}

impl PromptFinding {
    /// Headline plus fired explanation texts; category is the declared topics,
    /// else the document type.
    pub fn from_finding(f: &Finding) -> PromptFinding {
        let mut parts: Vec<String> = Vec::new();
        let mut push = |s: &str| {
            let s = s.trim();
            if !s.is_empty() && !parts.iter().any(|p| p == s) {
                parts.push(s.to_string());
            }
        };
        if let Some(h) = &f.headline {
            push(h);
        }
        for o in &f.outcomes {
            if o.status == StepStatus::Fired && o.kind == StepKind::Explanation {
                if let Some(md) = &o.markdown {
                    push(md);
                }
            }
        }
        let category = if f.topics.is_empty() {
            f.tsg_type.to_string()
        } else {
            f.topics.join(", ")
        };
        PromptFinding {
            name: f.tsg_id.clone(),
            category,
            tsg_type: f.tsg_type,
            topics: f.topics.clone(),
            explanation: if parts.is_empty() { f.title.clone() } else { parts.join("\n") },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Ranking,
    Summary,
}

/// Prompt text plus the structured inputs it was rendered from, so offline
/// clients can answer without re-parsing the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
    pub problem_statement: String,
    pub findings: Vec<PromptFinding>,
    /// Summary prompts only: (probability, explanation) per finding, same order.
    #[serde(default)]
    pub ranking: Vec<(f64, String)>,
    #[serde(default)]
    pub executed: Vec<String>,
    #[serde(default)]
    pub proposed: Vec<String>,
}

fn cut(s: &str, max: usize) -> &str {
    let mut end = max.min(s.len());
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// `- **Name:** ...` block, kept within `budget` bytes when one is given.
pub fn render_finding(f: &PromptFinding, budget: Option<usize>) -> String {
    let head = format!("- **Name:** {}\nCategory: {}\nExplanation: ", f.name, f.category);
    let full = format!("{head}{}\n", f.explanation);
    match budget {
        Some(b) if full.len() > b => {
            let room = b.saturating_sub(head.len() + TRUNCATION_MARKER.len() + 1);
            format!("{head}{}{TRUNCATION_MARKER}\n", cut(&f.explanation, room))
        }
        _ => full,
    }
}

fn render_case(product: &str, problem: &str, findings: &[String]) -> String {
    let mut out = format!("Product: \"{product}\"\n\nProblem Statement: \"{problem}\"\n\nAuto-TSG Findings:\n\n");
    for f in findings {
        out.push_str(f);
    }
    out
}

pub fn build_ranking_prompt(
    product: &str,
    problem_statement: &str,
    findings: &[PromptFinding],
    budget: Option<usize>,
) -> Prompt {
    let problem = if problem_statement.trim().is_empty() {
        NO_PROBLEM_STATEMENT
    } else {
        problem_statement.trim()
    };
    let example: Vec<String> = EXAMPLE_FINDINGS
        .iter()
        .map(|(n, c, e)| {
            render_finding(
                &PromptFinding {
                    name: n.to_string(),
                    category: c.to_string(),
                    tsg_type: TsgType::Warning,
                    topics: vec![],
                    explanation: e.to_string(),
                },
                None,
            )
        })
        .collect();
    let real: Vec<String> = findings.iter().map(|f| render_finding(f, budget)).collect();
    let text = format!(
        "{FRAMING}\nEXAMPLE:\n\n{}\nOutput:\n\n{EXAMPLE_OUTPUT}\nQUESTION:\n\n{}\nOutput:\n",
        render_case(EXAMPLE_PRODUCT, EXAMPLE_PROBLEM, &example),
        render_case(product.trim(), problem, &real),
    );
    Prompt {
        kind: PromptKind::Ranking,
        text,
        problem_statement: problem.to_string(),
        findings: findings.to_vec(),
        ranking: vec![],
        executed: vec![],
        proposed: vec![],
    }
}

pub fn build_summary_prompt(
    product: &str,
    problem_statement: &str,
    findings: &[PromptFinding],
    ranking: &[(f64, String)],
    executed: &[String],
    proposed: &[String],
) -> Prompt {
    let problem = if problem_statement.trim().is_empty() {
        NO_PROBLEM_STATEMENT
    } else {
        problem_statement.trim()
    };
    let mut text = String::from(
        "INPUT:\nYou are given a product description, a problem statement, findings sorted by how likely they apply, and the actions taken.\n\nTASK:\nSummarize the incident for an on-call engineer who is not an expert in every component.\n\nRULES:\n- Answer with exactly four sections, in this order, each introduced by its heading on its own line: Problem Description, Findings, Automatic Actions, Suggested Actions.\n- Problem Description restates the problem clearly.\n- Findings is a list explaining how the findings relate to one another, most likely first.\n- Automatic Actions lists the actions that were taken; write \"- None.\" if there are none.\n- Suggested Actions lists what the engineer should do next.\n\n",
    );
    text.push_str(&format!("Product: \"{}\"\n\nProblem Statement: \"{problem}\"\n\nFindings:\n\n", product.trim()));
    for (f, (p, why)) in findings.iter().zip(ranking) {
        text.push_str(&format!("- {} ({:.0}%, {why})\n  {}\n", f.name, p * 100.0, f.explanation.replace('\n', "\n  ")));
    }
    let list = |items: &[String]| {
        if items.is_empty() {
            "- None.\n".to_string()
        } else {
            items.iter().map(|i| format!("- {i}\n")).collect()
        }
    };
    text.push_str(&format!("\nActions taken:\n{}\nActions proposed:\n{}\nSummary:\n", list(executed), list(proposed)));
    Prompt {
        kind: PromptKind::Summary,
        text,
        problem_statement: problem.to_string(),
        findings: findings.to_vec(),
        ranking: ranking.to_vec(),
        executed: executed.to_vec(),
        proposed: proposed.to_vec(),
    }
}
