use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::parse::render_ranking;
use super::prompt::{Prompt, PromptKind};
use super::summary::fallback_summary;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("no recorded {kind} completion for prompt {hash}")]
    Missing { kind: &'static str, hash: String },
    #[error("ranker unavailable: {0}")]
    Unavailable(String),
}

/// Anything that turns a prompt into a completion.
pub trait RankerClient: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String, ClientError>;
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn kind_name(k: PromptKind) -> &'static str {
    match k {
        PromptKind::Ranking => "rank",
        PromptKind::Summary => "summary",
    }
}

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Offline ranker: word overlap between the problem statement and each
/// finding's topics and explanation.
#[derive(Debug, Default, Clone, Copy)]
pub struct DeterministicStub;

impl DeterministicStub {
    /// (name, probability, explanation), best first.
    pub fn rank(prompt: &Prompt) -> Vec<(String, f64, String)> {
        let problem = words(&prompt.problem_statement);
        let mut scored: Vec<(f64, &super::PromptFinding, Vec<String>)> = prompt
            .findings
            .iter()
            .map(|f| {
                let mut fw = words(&f.explanation);
                for t in &f.topics {
                    fw.extend(words(t));
                }
                let shared: Vec<String> = problem.intersection(&fw).cloned().collect();
                let union = problem.union(&fw).count();
                let j = if union == 0 { 0.0 } else { shared.len() as f64 / union as f64 };
                (j, f, shared)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.tsg_type.precedence().cmp(&a.1.tsg_type.precedence()))
                .then(a.1.name.cmp(&b.1.name))
        });
        let max = scored.first().map_or(0.0, |s| s.0);
        scored
            .into_iter()
            .map(|(j, f, shared)| {
                let p = if max > 0.0 { 0.10 + 0.80 * j / max } else { 0.10 };
                let why = if shared.is_empty() {
                    "no overlap with the problem statement".to_string()
                } else {
                    let shown: Vec<&str> = shared.iter().take(5).map(String::as_str).collect();
                    format!("shares {} terms with the problem: {}", shared.len(), shown.join(" "))
                };
                (f.name.clone(), (p * 100.0).round() / 100.0, why)
            })
            .collect()
    }
}

impl RankerClient for DeterministicStub {
    fn complete(&self, prompt: &Prompt) -> Result<String, ClientError> {
        Ok(match prompt.kind {
            PromptKind::Ranking => render_ranking(&Self::rank(prompt)),
            PromptKind::Summary => fallback_summary(
                &prompt.problem_statement,
                &prompt
                    .findings
                    .iter()
                    .zip(&prompt.ranking)
                    .map(|(f, (p, why))| (f.name.clone(), *p, why.clone()))
                    .collect::<Vec<_>>(),
                &prompt.executed,
                &prompt.proposed,
            )
            .to_text(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Recording {
    kind: String,
    hash: String,
    completion: String,
}

/// Serves recorded completions keyed by prompt hash (`*` matches any prompt
/// of that kind).
///
/// ```text
/// === rank 3f2a...|*
/// LongTransaction, 90%, transaction taking memory
/// === end
/// ```
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    recordings: Vec<Recording>,
}

impl ReplayClient {
    pub fn parse(text: &str) -> Result<ReplayClient, String> {
        let mut recordings = Vec::new();
        let mut open: Option<(String, String, Vec<&str>, usize)> = None;
        for (i, line) in text.lines().enumerate() {
            if let Some((kind, hash, body, start)) = open.take() {
                if line.trim_end() == "=== end" {
                    recordings.push(Recording {
                        kind,
                        hash,
                        completion: body.join("\n") + "\n",
                    });
                } else {
                    let mut body = body;
                    body.push(line);
                    open = Some((kind, hash, body, start));
                }
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some(head) = line.strip_prefix("=== ") else {
                return Err(format!("line {}: expected '=== <kind> <hash>'", i + 1));
            };
            let mut it = head.split_whitespace();
            let (Some(kind), Some(hash), None) = (it.next(), it.next(), it.next()) else {
                return Err(format!("line {}: expected '=== <kind> <hash>'", i + 1));
            };
            if kind != "rank" && kind != "summary" {
                return Err(format!("line {}: unknown kind '{kind}'", i + 1));
            }
            open = Some((kind.to_string(), hash.to_string(), Vec::new(), i + 1));
        }
        if let Some((_, _, _, start)) = open {
            return Err(format!("line {start}: recording is not closed with '=== end'"));
        }
        Ok(ReplayClient { recordings })
    }

    pub fn load(path: &Path) -> Result<ReplayClient, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn render_entry(kind: PromptKind, hash: &str, completion: &str) -> String {
        format!("=== {} {hash}\n{}\n=== end\n", kind_name(kind), completion.trim_end())
    }
}

impl RankerClient for ReplayClient {
    fn complete(&self, prompt: &Prompt) -> Result<String, ClientError> {
        let kind = kind_name(prompt.kind);
        let hash = prompt_hash(&prompt.text);
        let of_kind = || self.recordings.iter().filter(|r| r.kind == kind);
        of_kind()
            .find(|r| r.hash == hash)
            .or_else(|| of_kind().find(|r| r.hash == "*"))
            .map(|r| r.completion.clone())
            .ok_or(ClientError::Missing { kind, hash })
    }
}
