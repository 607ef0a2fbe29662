//! Line-delimited JSON audit trail of a run.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::QueryStrategy;
use crate::review::{ProposalKind, ReviewAction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Init {
        cycle: u32,
        images: usize,
        boxes: u64,
    },
    Predict {
        cycle: u32,
        skill: Option<f64>,
        images: usize,
    },
    Query {
        cycle: u32,
        strategy: QueryStrategy,
        pool: usize,
    },
    Label {
        cycle: u32,
        images: usize,
        boxes: u64,
        query_budget: u64,
    },
    PoolExhausted {
        cycle: u32,
        spent: u64,
        query_budget: u64,
    },
    /// Proposals generated before review, with how many were real errors.
    Candidates {
        cycle: u32,
        kind: ProposalKind,
        total: usize,
        true_errors: usize,
    },
    Review {
        cycle: u32,
        kind: ProposalKind,
        image: u64,
        target: u64,
        was_true_error: bool,
        action: ReviewAction,
    },
    Forfeit {
        cycle: u32,
        kind: ProposalKind,
        amount: u64,
    },
    Eval {
        cycle: u32,
        map: f64,
    },
}

impl AuditEvent {
    pub fn cycle(&self) -> u32 {
        match self {
            AuditEvent::Init { cycle, .. }
            | AuditEvent::Predict { cycle, .. }
            | AuditEvent::Query { cycle, .. }
            | AuditEvent::Label { cycle, .. }
            | AuditEvent::PoolExhausted { cycle, .. }
            | AuditEvent::Candidates { cycle, .. }
            | AuditEvent::Review { cycle, .. }
            | AuditEvent::Forfeit { cycle, .. }
            | AuditEvent::Eval { cycle, .. } => *cycle,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

pub fn append_audit(path: &Path, events: &[AuditEvent]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for e in events {
        buf.push_str(&e.to_line());
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditEvent>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Drops events after `cycle`, so a resumed run can append cleanly.
pub fn truncate_audit(path: &Path, cycle: u32) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<AuditEvent> = read_audit(path)?.into_iter().filter(|e| e.cycle() <= cycle).collect();
    fs::write(path, "").map_err(|e| Error::io(path, e))?;
    append_audit(path, &kept)
}
