use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Ticket severity; A is the most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    A,
    B,
    C,
}

impl Severity {
    fn rank(self) -> u8 {
        match self {
            Severity::A => 3,
            Severity::B => 2,
            Severity::C => 1,
        }
    }

    pub fn is_above(self, other: Severity) -> bool {
        self.rank() > other.rank()
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Severity::A),
            "B" => Ok(Severity::B),
            "C" => Ok(Severity::C),
            _ => Err(format!("unknown severity '{s}' (expected A, B or C)")),
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The ticket a diagnostic session runs against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: String,
    pub severity: Severity,
    pub owning_team: String,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Raises severity (never lowers it).
pub fn increase_severity(ticket: &mut Ticket, requested: Severity, by: &str) -> String {
    if requested.is_above(ticket.severity) {
        let note = format!("{by}: severity raised from {} to {requested}", ticket.severity);
        ticket.severity = requested;
        ticket.notes.push(note.clone());
        note
    } else {
        let note = format!(
            "{by}: severity {requested} requested, kept at {} (severity is only raised)",
            ticket.severity
        );
        ticket.notes.push(note.clone());
        note
    }
}

pub fn route(ticket: &mut Ticket, team: &str, by: &str) -> String {
    let note = format!("{by}: routed from {} to {team}", ticket.owning_team);
    ticket.owning_team = team.to_string();
    ticket.notes.push(note.clone());
    note
}
