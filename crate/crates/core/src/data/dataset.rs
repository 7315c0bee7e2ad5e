//! JSON-Lines datasets for multiple-choice and span-extraction tasks.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mcq,
    Span,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcq" => Ok(Task::Mcq),
            "span" => Ok(Task::Span),
            other => Err(Error::invalid(
                "task",
                format!("unknown task `{other}` (expected mcq or span)"),
            )),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Mcq => "mcq",
            Task::Span => "span",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqRecord {
    pub id: String,
    pub passage: Vec<String>,
    pub question: Vec<String>,
    pub options: Vec<Vec<String>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub id: String,
    pub passage: Vec<String>,
    pub question: Vec<String>,
    pub answer_start: usize,
    pub answer_end: usize,
    /// Free-form reference answer, when it differs from the passage span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<Vec<String>>,
}

impl SpanRecord {
    /// Reference tokens: the free-form answer if present, else the gold span.
    pub fn reference(&self) -> &[String] {
        match &self.answer_text {
            Some(t) => t,
            None => &self.passage[self.answer_start..=self.answer_end],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dataset {
    Mcq(Vec<McqRecord>),
    Span(Vec<SpanRecord>),
}

impl Dataset {
    pub fn task(&self) -> Task {
        match self {
            Dataset::Mcq(_) => Task::Mcq,
            Dataset::Span(_) => Task::Span,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Mcq(r) => r.len(),
            Dataset::Span(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every token sequence of every record, in file order.
    pub fn token_sequences(&self) -> Vec<&[String]> {
        let mut out: Vec<&[String]> = Vec::new();
        match self {
            Dataset::Mcq(rs) => {
                for r in rs {
                    out.push(&r.passage);
                    out.push(&r.question);
                    out.extend(r.options.iter().map(Vec::as_slice));
                }
            }
            Dataset::Span(rs) => {
                for r in rs {
                    out.push(&r.passage);
                    out.push(&r.question);
                    if let Some(t) = &r.answer_text {
                        out.push(t);
                    }
                }
            }
        }
        out
    }
}

pub fn save_jsonl(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let line = |v: serde_json::Result<String>| v.expect("records serialize");
    let mut write = |s: String| writeln!(w, "{s}").map_err(|e| Error::io(path, e));
    match data {
        Dataset::Mcq(rs) => rs
            .iter()
            .try_for_each(|r| write(line(serde_json::to_string(r))))?,
        Dataset::Span(rs) => rs
            .iter()
            .try_for_each(|r| write(line(serde_json::to_string(r))))?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(path, &text)
}

/// Parses JSON-Lines text; `path` only labels errors. Blank lines are skipped.
pub fn parse_jsonl(path: &Path, text: &str) -> Result<Dataset> {
    let mut mcq = Vec::new();
    let mut span = Vec::new();
    let mut task: Option<Task> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        let schema = |field: &str, msg: &str| Error::Schema {
            path: path.to_path_buf(),
            line,
            field: field.to_string(),
            msg: msg.to_string(),
        };
        let obj = v
            .as_object()
            .ok_or_else(|| schema("<record>", "expected a JSON object"))?;
        let this = if obj.contains_key("options") || obj.contains_key("label") {
            Task::Mcq
        } else if obj.contains_key("answer_start") || obj.contains_key("answer_end") {
            Task::Span
        } else {
            return Err(schema(
                "options",
                "cannot tell the record type (no `options` or `answer_start`)",
            ));
        };
        match task {
            None => task = Some(this),
            Some(t) if t != this => {
                return Err(schema("<record>", &format!("{this} record in a {t} file")))
            }
            Some(_) => {}
        }
        let fields = Fields {
            obj,
            schema: &schema,
        };
        match this {
            Task::Mcq => {
                let options = fields.token_lists("options")?;
                let label = fields.index("label")?;
                if label >= options.len() {
                    return Err(schema(
                        "label",
                        &format!("{label} out of range for {} options", options.len()),
                    ));
                }
                mcq.push(McqRecord {
                    id: fields.id()?,
                    passage: fields.tokens("passage")?,
                    question: fields.tokens("question")?,
                    options,
                    label,
                });
            }
            Task::Span => {
                let passage = fields.tokens("passage")?;
                let s = fields.index("answer_start")?;
                let e = fields.index("answer_end")?;
                if s > e {
                    return Err(schema("answer_start", &format!("start {s} after end {e}")));
                }
                if e >= passage.len() {
                    return Err(schema(
                        "answer_end",
                        &format!("{e} out of range for a passage of {} tokens", passage.len()),
                    ));
                }
                let answer_text = match obj.get("answer_text") {
                    None | Some(Value::Null) => None,
                    Some(_) => Some(fields.tokens("answer_text")?),
                };
                span.push(SpanRecord {
                    id: fields.id()?,
                    passage,
                    question: fields.tokens("question")?,
                    answer_start: s,
                    answer_end: e,
                    answer_text,
                });
            }
        }
    }
    Ok(match task {
        Some(Task::Span) => Dataset::Span(span),
        _ => Dataset::Mcq(mcq),
    })
}

struct Fields<'a, F: Fn(&str, &str) -> Error> {
    obj: &'a Map<String, Value>,
    schema: &'a F,
}

impl<F: Fn(&str, &str) -> Error> Fields<'_, F> {
    fn get(&self, field: &str) -> Result<&Value> {
        self.obj
            .get(field)
            .ok_or_else(|| (self.schema)(field, "missing"))
    }

    fn id(&self) -> Result<String> {
        match self.get("id")? {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err((self.schema)("id", "expected a string")),
        }
    }

    fn index(&self, field: &str) -> Result<usize> {
        self.get(field)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| (self.schema)(field, "expected a non-negative integer"))
    }

    fn tokens_of(&self, field: &str, v: &Value) -> Result<Vec<String>> {
        let arr = v
            .as_array()
            .ok_or_else(|| (self.schema)(field, "expected an array of token strings"))?;
        if arr.is_empty() {
            return Err((self.schema)(field, "must not be empty"));
        }
        arr.iter()
            .map(|t| match t.as_str() {
                Some(s) if !s.is_empty() => Ok(s.to_string()),
                Some(_) => Err((self.schema)(field, "tokens must be non-empty strings")),
                None => Err((self.schema)(field, "tokens must be strings")),
            })
            .collect()
    }

    fn tokens(&self, field: &str) -> Result<Vec<String>> {
        self.tokens_of(field, self.get(field)?)
    }

    fn token_lists(&self, field: &str) -> Result<Vec<Vec<String>>> {
        let arr = self
            .get(field)?
            .as_array()
            .ok_or_else(|| (self.schema)(field, "expected an array of token arrays"))?;
        if arr.is_empty() {
            return Err((self.schema)(field, "must not be empty"));
        }
        arr.iter().map(|v| self.tokens_of(field, v)).collect()
    }
}
