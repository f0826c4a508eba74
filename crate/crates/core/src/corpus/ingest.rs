use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// One document per line.
    PlainLines,
    /// One JSON object per line with a required string field `text`.
    Jsonl,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain-lines" | "lines" | "txt" => Ok(InputFormat::PlainLines),
            "jsonl" => Ok(InputFormat::Jsonl),
            other => Err(Error::invalid(format!("unknown input format `{other}`"))),
        }
    }
}

pub fn ingest(path: &Path, format: InputFormat) -> Result<Corpus> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        InputFormat::PlainLines => Ok(Corpus::from_texts(split_lines(&raw))),
        InputFormat::Jsonl => parse_jsonl(&raw),
    }
}

fn split_lines(raw: &[u8]) -> Vec<&[u8]> {
    if raw.is_empty() {
        return Vec::new();
    }
    let body = raw.strip_suffix(b"\n").unwrap_or(raw);
    body.split(|&b| b == b'\n')
        .map(|line| line.strip_suffix(b"\r").unwrap_or(line))
        .collect()
}

#[derive(Deserialize)]
struct Record {
    text: Option<serde_json::Value>,
}

fn parse_jsonl(raw: &[u8]) -> Result<Corpus> {
    let mut texts = Vec::new();
    for (i, line) in split_lines(raw).into_iter().enumerate() {
        let lineno = i + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record: Record = serde_json::from_slice(line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match record.text {
            Some(serde_json::Value::String(s)) => texts.push(s.into_bytes()),
            Some(_) => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "field `text` is not a string".into(),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "missing field `text`".into(),
                })
            }
        }
    }
    Ok(Corpus::from_texts(texts))
}
