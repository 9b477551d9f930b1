//! Message log of a federated run and the privacy audit over it.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToSite,
    FromSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub site: usize,
    /// Position within the site's own exchange.
    pub seq: usize,
    pub direction: Direction,
    pub kind: String,
    pub line: String,
}

/// Every message exchanged, ordered by site and then by exchange order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn normalize(&mut self) {
        self.entries.sort_by_key(|e| (e.site, e.seq));
    }

    pub(crate) fn merge(parts: Vec<Vec<TranscriptEntry>>) -> Self {
        let mut t = Transcript {
            entries: parts.into_iter().flatten().collect(),
        };
        t.normalize();
        t
    }
}

/// Payload paths a source site may send. Arrays are written `[]`.
pub const ALLOWED_SOURCE_FIELDS: &[&str] = &[
    "Hello.n",
    "Hello.dim",
    "CovariateSummary.site",
    "CovariateSummary.n",
    "CovariateSummary.mean[]",
    "CovariateSummary.cov[][]",
    "AugmentationMoments.n",
    "AugmentationMoments.empty_arm[]",
    "AugmentationMoments.notes[]",
    "AugmentationMoments.cells[].j",
    "AugmentationMoments.cells[].a",
    "AugmentationMoments.cells[].full.n",
    "AugmentationMoments.cells[].full.sum",
    "AugmentationMoments.cells[].full.sum_sq",
    "AugmentationMoments.cells[].folds[].n",
    "AugmentationMoments.cells[].folds[].sum",
    "AugmentationMoments.cells[].folds[].sum_sq",
    "AugmentationMoments.cells[].boot[].n",
    "AugmentationMoments.cells[].boot[].sum",
    "AugmentationMoments.cells[].boot[].sum_sq",
    "Error.message",
];

fn leaf_paths(prefix: &str, v: &serde_json::Value, out: &mut BTreeSet<String>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, v) in m {
                leaf_paths(&format!("{prefix}.{k}"), v, out);
            }
        }
        serde_json::Value::Array(a) => {
            let p = format!("{prefix}[]");
            if a.is_empty() {
                out.insert(p.clone());
            }
            for v in a {
                leaf_paths(&p, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

/// Payload paths of every message a source site sent.
pub fn source_payload_fields(t: &Transcript) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for e in t.entries.iter().filter(|e| e.direction == Direction::FromSite) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&e.line) {
            leaf_paths(&e.kind, v.get("payload").unwrap_or(&serde_json::Value::Null), &mut out);
        }
    }
    out
}

/// Findings of the privacy audit; empty when every message from a source
/// site uses only aggregate fields and no array is as long as the site's
/// sample.
pub fn audit_transcript(t: &Transcript, source_sizes: &[(usize, usize)]) -> Vec<String> {
    let mut findings = Vec::new();
    for f in source_payload_fields(t) {
        if !ALLOWED_SOURCE_FIELDS.contains(&f.as_str()) {
            findings.push(format!("field {f} is not an aggregate field"));
        }
    }
    for e in t.entries.iter().filter(|e| e.direction == Direction::FromSite) {
        let Some(&(_, n)) = source_sizes.iter().find(|(s, _)| *s == e.site) else { continue };
        let Ok(v) = serde_json::from_str::<serde_json::Value>(&e.line) else {
            findings.push(format!("site {}: unparseable message", e.site));
            continue;
        };
        let mut stack = vec![&v];
        while let Some(x) = stack.pop() {
            match x {
                serde_json::Value::Array(a) => {
                    if a.len() == n && n > 3 && a.iter().all(|v| v.is_number()) {
                        findings.push(format!("site {}: {} message carries a numeric array of length n", e.site, e.kind));
                    }
                    stack.extend(a);
                }
                serde_json::Value::Object(m) => stack.extend(m.values()),
                _ => {}
            }
        }
    }
    findings
}
