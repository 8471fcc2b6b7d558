//! Taxonomy of tag documents and the dataset of numeral records.
//!
//! Both files are JSON-Lines. Blank lines are ignored; every other line
//! must hold exactly one object.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One XBRL tag and its descriptive document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDocument {
    pub tag_id: String,
    pub text: String,
}

impl TagDocument {
    pub fn new(tag_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let doc = TagDocument {
            tag_id: tag_id.into(),
            text: text.into(),
        };
        doc.validate()?;
        Ok(doc)
    }

    fn validate(&self) -> Result<()> {
        if self.tag_id.is_empty() {
            return Err(Error::InvalidInput("tag_id is empty".into()));
        }
        if self.text.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "tag {:?} has empty text",
                self.tag_id
            )));
        }
        Ok(())
    }
}

/// Ordered, id-addressable set of tag documents.
#[derive(Debug, Clone, Default)]
pub struct TaxonomyCorpus {
    docs: Vec<TagDocument>,
    index_by_id: HashMap<String, usize>,
}

impl TaxonomyCorpus {
    /// Builds a corpus from documents, rejecting duplicates and empty texts.
    /// Duplicate errors report 1-based positions.
    pub fn from_docs(docs: Vec<TagDocument>) -> Result<Self> {
        let mut index_by_id = HashMap::with_capacity(docs.len());
        for (pos, doc) in docs.iter().enumerate() {
            doc.validate()?;
            if let Some(first) = index_by_id.insert(doc.tag_id.clone(), pos) {
                return Err(Error::DuplicateTag {
                    tag_id: doc.tag_id.clone(),
                    first_line: first + 1,
                    second_line: pos + 1,
                });
            }
        }
        Ok(TaxonomyCorpus { docs, index_by_id })
    }

    pub fn docs(&self) -> &[TagDocument] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn position(&self, tag_id: &str) -> Option<usize> {
        self.index_by_id.get(tag_id).copied()
    }

    pub fn get(&self, tag_id: &str) -> Option<&TagDocument> {
        self.position(tag_id).map(|i| &self.docs[i])
    }

    pub fn contains(&self, tag_id: &str) -> bool {
        self.index_by_id.contains_key(tag_id)
    }

    /// JSON-Lines serialization, one document per line in corpus order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.docs {
            out.push_str(&serde_json::to_string(doc).expect("tag document serializes"));
            out.push('\n');
        }
        out
    }
}

/// One annotated numeral occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumeralRecord {
    pub record_id: String,
    pub report_text: String,
    pub numeral: String,
    pub question: String,
    #[serde(default)]
    pub gold_tag_id: Option<String>,
    #[serde(default)]
    pub gen_tag_doc: Option<String>,
}

impl NumeralRecord {
    /// The numeral must occur verbatim in the report text.
    pub fn check_numeral(&self) -> Result<()> {
        if self.numeral.is_empty() || !self.report_text.contains(&self.numeral) {
            return Err(Error::NumeralNotFound {
                record_id: self.record_id.clone(),
                numeral: self.numeral.clone(),
            });
        }
        Ok(())
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn jsonl_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<TaxonomyCorpus> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    parse_taxonomy(&content, path)
}

pub(crate) fn parse_taxonomy(content: &str, path: &Path) -> Result<TaxonomyCorpus> {
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line_no, line) in jsonl_lines(content) {
        let malformed = |message: String| Error::MalformedLine {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let doc: TagDocument = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        doc.validate().map_err(|e| malformed(e.to_string()))?;
        if let Some(&first) = seen.get(&doc.tag_id) {
            return Err(Error::DuplicateTag {
                tag_id: doc.tag_id,
                first_line: first,
                second_line: line_no,
            });
        }
        seen.insert(doc.tag_id.clone(), line_no);
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    TaxonomyCorpus::from_docs(docs)
}

/// Loads numeral records in file order. With a corpus, every present gold tag
/// must resolve in it.
pub fn load_dataset(
    path: impl AsRef<Path>,
    corpus: Option<&TaxonomyCorpus>,
) -> Result<Vec<NumeralRecord>> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (line_no, line) in jsonl_lines(&content) {
        let record: NumeralRecord =
            serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        record.check_numeral()?;
        if let (Some(corpus), Some(gold)) = (corpus, record.gold_tag_id.as_deref()) {
            if !corpus.contains(gold) {
                return Err(Error::UnknownGoldTag {
                    record_id: record.record_id.clone(),
                    tag_id: gold.to_string(),
                });
            }
        }
        if !ids.insert(record.record_id.clone()) {
            return Err(Error::DuplicateRecord(record.record_id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[NumeralRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
