//! Generation-input assembly and the listwise ranking exchange.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{NumeralRecord, TagDocument};
use crate::error::{Error, Result};

/// Default instruction prepended to every generation input.
pub const DEFAULT_INSTRUCTION: &str = include_str!("../templates/instruction_v1.txt");

const DEFAULT_RERANK_TEMPLATE: &str = include_str!("../templates/rerank_v1.txt");
const DEFAULT_RERANK_TEMPLATE_NAME: &str = "rerank_v1";

/// Generator input: instruction, report text and question joined by newlines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledInput {
    pub record_id: String,
    pub text: String,
}

pub fn assemble_generation_input(
    instruction: &str,
    record: &NumeralRecord,
) -> Result<AssembledInput> {
    if instruction.is_empty() {
        return Err(Error::InvalidInput("instruction prompt is empty".into()));
    }
    let mut text = String::with_capacity(
        instruction.len() + record.report_text.len() + record.question.len() + 2,
    );
    text.push_str(instruction);
    text.push('\n');
    text.push_str(&record.report_text);
    text.push('\n');
    text.push_str(&record.question);
    Ok(AssembledInput {
        record_id: record.record_id.clone(),
        text,
    })
}

/// Text template for the listwise ranking prompt.
///
/// Recognised placeholders are `{{gen_doc}}`, `{{passages}}` and `{{n}}`.
/// Substitution is single-pass, so placeholder-like text inside the
/// substituted values is never expanded again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerankTemplate {
    name: String,
    body: String,
}

impl Default for RerankTemplate {
    fn default() -> Self {
        RerankTemplate {
            name: DEFAULT_RERANK_TEMPLATE_NAME.to_string(),
            body: DEFAULT_RERANK_TEMPLATE.to_string(),
        }
    }
}

impl RerankTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        for required in ["{{gen_doc}}", "{{passages}}"] {
            if !body.contains(required) {
                return Err(Error::Config(format!(
                    "rerank template lacks placeholder {required}"
                )));
            }
        }
        Ok(RerankTemplate {
            name: name.into(),
            body,
        })
    }

    /// Loads a template file; its name is the file stem.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::new(name, body)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// `name@sha256-prefix`, recorded in run manifests.
    pub fn version(&self) -> String {
        let digest = hex::encode(Sha256::digest(self.body.as_bytes()));
        format!("{}@{}", self.name, &digest[..12])
    }

    fn render(&self, gen_doc: &str, passages: &str, n: usize) -> String {
        let n = n.to_string();
        let mut out = String::with_capacity(self.body.len() + gen_doc.len() + passages.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let tail = &rest[start..];
            let (value, len) = if tail.starts_with("{{gen_doc}}") {
                (gen_doc, "{{gen_doc}}".len())
            } else if tail.starts_with("{{passages}}") {
                (passages, "{{passages}}".len())
            } else if tail.starts_with("{{n}}") {
                (n.as_str(), "{{n}}".len())
            } else {
                ("{{", 2)
            };
            out.push_str(value);
            rest = &tail[len..];
        }
        out.push_str(rest);
        out
    }
}

/// Formats group members as `[i] <text>` lines, numbered from 1.
pub fn format_passages<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("[{}] {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_rerank_prompt(
    template: &RerankTemplate,
    gen_doc: &str,
    group: &[TagDocument],
) -> Result<String> {
    if group.is_empty() {
        return Err(Error::InvalidInput("rerank group is empty".into()));
    }
    if gen_doc.trim().is_empty() {
        return Err(Error::InvalidInput(
            "generated tag document is empty".into(),
        ));
    }
    let passages = format_passages(group.iter().map(|d| d.text.as_str()));
    Ok(template.render(gen_doc, &passages, group.len()))
}

/// Parsed ranker reply. `order` holds 1-based presented positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingReply {
    pub order: Vec<usize>,
    pub raw: String,
    /// True when the extracted identifiers needed any repair.
    pub repaired: bool,
}

impl RankingReply {
    pub fn top(&self) -> usize {
        self.order[0]
    }
}

/// Bracketed integers in order of appearance. Whitespace inside the brackets
/// is tolerated; values too large for `u64` come back as `None`.
fn bracketed_integers(raw: &str) -> Vec<Option<u64>> {
    let bytes = raw.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < bytes.len() && bytes[j] == b' ' {
            j += 1;
        }
        let digits_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        let digits_end = j;
        while j < bytes.len() && bytes[j] == b' ' {
            j += 1;
        }
        if digits_end > digits_start && j < bytes.len() && bytes[j] == b']' {
            found.push(raw[digits_start..digits_end].parse::<u64>().ok());
            i = j + 1;
        } else {
            i += 1;
        }
    }
    found
}

/// Extracts a permutation of `1..=group_len` from a free-form reply.
///
/// Out-of-range identifiers are dropped, duplicates keep their first
/// occurrence, and missing identifiers are appended in ascending order.
pub fn parse_ranking_reply(raw: &str, group_len: usize) -> Result<RankingReply> {
    if group_len == 0 {
        return Err(Error::InvalidInput("group_len must be at least 1".into()));
    }
    let extracted = bracketed_integers(raw);
    let mut seen = vec![false; group_len + 1];
    let mut order = Vec::with_capacity(group_len);
    for id in extracted.iter().flatten() {
        let id = *id;
        if id >= 1 && id <= group_len as u64 && !seen[id as usize] {
            seen[id as usize] = true;
            order.push(id as usize);
        }
    }
    if order.is_empty() {
        return Err(Error::UnparseableReply(raw.to_string()));
    }
    let clean = extracted.len() == group_len && order.len() == group_len;
    for (id, present) in seen.iter().enumerate().skip(1) {
        if !present {
            order.push(id);
        }
    }
    Ok(RankingReply {
        order,
        raw: raw.to_string(),
        repaired: !clean,
    })
}

/// Canonical reply text for a permutation: `[a] > [b] > ...`.
pub fn format_ranking(order: &[usize]) -> String {
    order
        .iter()
        .map(|i| format!("[{i}]"))
        .collect::<Vec<_>>()
        .join(" > ")
}
