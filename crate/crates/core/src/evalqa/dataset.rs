//! QA dataset loaders.
//!
//! * `simple`: JSON lines `{doc_id, question, options?, gold, is_hard?}` where
//!   `gold` is an option index or a list of gold answer strings, plus a
//!   sidecar JSON object `{doc_id: text}` (default `<stem>.docs.json`).
//! * `quality`: the QuALITY JSON-lines release, one article per line with its
//!   questions; `gold_label` is 1-based and `difficult` marks the HARD subset.
//! * `qasper`: the Qasper JSON release, an object keyed by paper id.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("record {index}: field `{field}`: {reason}")]
    Schema {
        index: usize,
        field: String,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Simple,
    Quality,
    Qasper,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Self::Simple),
            "quality" => Ok(Self::Quality),
            "qasper" => Ok(Self::Qasper),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Index(usize),
    Answers(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub doc_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub gold: Gold,
    #[serde(default)]
    pub is_hard: bool,
}

impl QaRecord {
    /// Check the multiple-choice constraints; `index` is used in the error.
    pub fn validate(&self, index: usize) -> Result<()> {
        let err = |field: &str, reason: String| DatasetError::Schema {
            index,
            field: field.to_string(),
            reason,
        };
        if self.doc_id.is_empty() {
            return Err(err("doc_id", "empty".into()));
        }
        if self.question.trim().is_empty() {
            return Err(err("question", "empty".into()));
        }
        match (&self.gold, &self.options) {
            (Gold::Index(i), Some(options)) => {
                if options.len() < 2 {
                    return Err(err("options", format!("{} option(s), need at least 2", options.len())));
                }
                if *i >= options.len() {
                    return Err(err("gold", format!("index {i} out of range for {} options", options.len())));
                }
            }
            (Gold::Index(_), None) => {
                return Err(err("options", "gold is an index but no options are given".into()));
            }
            (Gold::Answers(a), _) if a.is_empty() => {
                return Err(err("gold", "empty answer list".into()));
            }
            (Gold::Answers(_), _) => {}
        }
        Ok(())
    }

    pub fn is_multiple_choice(&self) -> bool {
        matches!(self.gold, Gold::Index(_))
    }

    pub fn gold_option(&self) -> Option<&str> {
        match (&self.gold, &self.options) {
            (Gold::Index(i), Some(o)) => o.get(*i).map(String::as_str),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<QaRecord>,
    /// In file order.
    pub documents: Vec<Document>,
}

impl Dataset {
    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Keep documents `range` (in file order) and their records.
    pub fn select_documents(&self, range: std::ops::Range<usize>) -> Dataset {
        let end = range.end.min(self.documents.len());
        let start = range.start.min(end);
        let documents = self.documents[start..end].to_vec();
        let keep: std::collections::HashSet<&str> =
            documents.iter().map(|d| d.doc_id.as_str()).collect();
        let records = self
            .records
            .iter()
            .filter(|r| keep.contains(r.doc_id.as_str()))
            .cloned()
            .collect();
        Dataset { records, documents }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Default sidecar for a simple-format file: `data.jsonl` → `data.docs.json`.
pub fn default_sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    path.with_file_name(format!("{stem}.docs.json"))
}

pub fn load_dataset(path: &Path, format: DatasetFormat, docs: Option<&Path>) -> Result<Dataset> {
    let text = read(path)?;
    match format {
        DatasetFormat::Simple => {
            let sidecar = docs.map(Path::to_path_buf).unwrap_or_else(|| default_sidecar(path));
            parse_simple(&text, &sidecar)
        }
        DatasetFormat::Quality => parse_quality(&text),
        DatasetFormat::Qasper => parse_qasper(&text),
    }
}

/// Non-blank lines with their 0-based line numbers.
fn json_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_simple(text: &str, sidecar: &Path) -> Result<Dataset> {
    let mut records = Vec::new();
    for (index, (_, line)) in json_lines(text).enumerate() {
        let record: QaRecord = serde_json::from_str(line).map_err(|e| DatasetError::Schema {
            index,
            field: field_from_serde(&e),
            reason: e.to_string(),
        })?;
        record.validate(index)?;
        records.push(record);
    }
    if records.is_empty() && !sidecar.exists() {
        return Ok(Dataset::default());
    }
    let documents = read_sidecar(sidecar)?;
    for (index, r) in records.iter().enumerate() {
        if !documents.iter().any(|d| d.doc_id == r.doc_id) {
            log::warn!("record {index}: no document {:?} in {}", r.doc_id, sidecar.display());
        }
    }
    Ok(Dataset { records, documents })
}

fn read_sidecar(path: &Path) -> Result<Vec<Document>> {
    let text = read(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| DatasetError::Sidecar {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(DatasetError::Sidecar {
            path: path.to_path_buf(),
            reason: "expected an object mapping doc_id to text".into(),
        });
    };
    // serde_json's map is key-sorted; that order is used as the file order
    map.into_iter()
        .map(|(doc_id, v)| match v {
            Value::String(text) => Ok(Document { doc_id, text }),
            _ => Err(DatasetError::Sidecar {
                path: path.to_path_buf(),
                reason: format!("document {doc_id:?} is not a string"),
            }),
        })
        .collect()
}

/// Best-effort field name from a serde error message ("missing field `x`").
fn field_from_serde(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<record>".to_string())
}

fn get<'a>(v: &'a Value, index: usize, field: &str) -> Result<&'a Value> {
    v.get(field).ok_or_else(|| DatasetError::Schema {
        index,
        field: field.to_string(),
        reason: "missing".into(),
    })
}

fn get_str<'a>(v: &'a Value, index: usize, field: &str) -> Result<&'a str> {
    get(v, index, field)?.as_str().ok_or_else(|| DatasetError::Schema {
        index,
        field: field.to_string(),
        reason: "expected a string".into(),
    })
}

fn parse_quality(text: &str) -> Result<Dataset> {
    let mut out = Dataset::default();
    for (line_no, line) in json_lines(text) {
        let article: Value = serde_json::from_str(line).map_err(|e| DatasetError::Schema {
            index: out.records.len(),
            field: format!("<line {}>", line_no + 1),
            reason: e.to_string(),
        })?;
        let index = out.records.len();
        let doc_id = get_str(&article, index, "article_id")?.to_string();
        if out.document(&doc_id).is_none() {
            out.documents.push(Document {
                doc_id: doc_id.clone(),
                text: get_str(&article, index, "article")?.to_string(),
            });
        }
        let questions = get(&article, index, "questions")?
            .as_array()
            .ok_or_else(|| DatasetError::Schema {
                index,
                field: "questions".into(),
                reason: "expected an array".into(),
            })?;
        for q in questions {
            let index = out.records.len();
            let options: Vec<String> = get(q, index, "options")?
                .as_array()
                .and_then(|a| a.iter().map(|o| o.as_str().map(str::to_string)).collect())
                .ok_or_else(|| DatasetError::Schema {
                    index,
                    field: "options".into(),
                    reason: "expected an array of strings".into(),
                })?;
            let label = get(q, index, "gold_label")?.as_u64().ok_or_else(|| DatasetError::Schema {
                index,
                field: "gold_label".into(),
                reason: "expected a positive integer".into(),
            })?;
            if label == 0 {
                return Err(DatasetError::Schema {
                    index,
                    field: "gold_label".into(),
                    reason: "labels are 1-based".into(),
                });
            }
            let is_hard = match q.get("difficult") {
                Some(Value::Bool(b)) => *b,
                Some(Value::Number(n)) => n.as_u64().unwrap_or(0) != 0,
                _ => false,
            };
            let record = QaRecord {
                doc_id: doc_id.clone(),
                question: get_str(q, index, "question")?.to_string(),
                options: Some(options),
                gold: Gold::Index(label as usize - 1),
                is_hard,
            };
            record.validate(index)?;
            out.records.push(record);
        }
    }
    Ok(out)
}

/// Gold answer string for one Qasper annotation.
fn qasper_answer(a: &Value) -> Option<String> {
    let a = a.get("answer").unwrap_or(a);
    if a.get("unanswerable").and_then(Value::as_bool) == Some(true) {
        return Some("unanswerable".into());
    }
    if let Some(yes) = a.get("yes_no").and_then(Value::as_bool) {
        return Some(if yes { "yes" } else { "no" }.into());
    }
    let spans: Vec<&str> = a
        .get("extractive_spans")
        .and_then(Value::as_array)
        .map(|s| s.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    if !spans.is_empty() {
        return Some(spans.join(", "));
    }
    a.get("free_form_answer")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string)
}

fn qasper_text(paper: &Value) -> String {
    let mut parts = Vec::new();
    for key in ["title", "abstract"] {
        if let Some(s) = paper.get(key).and_then(Value::as_str) {
            parts.push(s.to_string());
        }
    }
    for section in paper.get("full_text").and_then(Value::as_array).into_iter().flatten() {
        if let Some(name) = section.get("section_name").and_then(Value::as_str) {
            parts.push(name.to_string());
        }
        for p in section.get("paragraphs").and_then(Value::as_array).into_iter().flatten() {
            if let Some(p) = p.as_str() {
                parts.push(p.to_string());
            }
        }
    }
    parts.retain(|p| !p.trim().is_empty());
    parts.join("\n\n")
}

fn parse_qasper(text: &str) -> Result<Dataset> {
    let mut out = Dataset::default();
    if text.trim().is_empty() {
        return Ok(out);
    }
    let value: Value = serde_json::from_str(text).map_err(|e| DatasetError::Schema {
        index: 0,
        field: "<file>".into(),
        reason: e.to_string(),
    })?;
    let papers = value.as_object().ok_or_else(|| DatasetError::Schema {
        index: 0,
        field: "<file>".into(),
        reason: "expected an object keyed by paper id".into(),
    })?;
    for (doc_id, paper) in papers {
        out.documents.push(Document {
            doc_id: doc_id.clone(),
            text: qasper_text(paper),
        });
        for qa in paper.get("qas").and_then(Value::as_array).into_iter().flatten() {
            let index = out.records.len();
            let question = get_str(qa, index, "question")?.to_string();
            let golds: Vec<String> = get(qa, index, "answers")?
                .as_array()
                .map(|a| a.iter().filter_map(qasper_answer).collect())
                .unwrap_or_default();
            if golds.is_empty() {
                log::warn!("qasper {doc_id}: question {index} has no usable answers, skipped");
                continue;
            }
            let record = QaRecord {
                doc_id: doc_id.clone(),
                question,
                options: None,
                gold: Gold::Answers(golds),
                is_hard: false,
            };
            record.validate(index)?;
            out.records.push(record);
        }
    }
    Ok(out)
}

/// Write a simple-format dataset and its sidecar.
pub fn write_simple(path: &Path, dataset: &Dataset, docs: Option<&Path>) -> Result<()> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    let mut lines = String::new();
    for r in &dataset.records {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    }
    fs::write(path, lines).map_err(io_err(path))?;
    let sidecar = docs.map(Path::to_path_buf).unwrap_or_else(|| default_sidecar(path));
    let map: HashMap<&str, &str> = dataset
        .documents
        .iter()
        .map(|d| (d.doc_id.as_str(), d.text.as_str()))
        .collect();
    fs::write(&sidecar, serde_json::to_string(&map).expect("documents serialize"))
        .map_err(io_err(&sidecar))
}
