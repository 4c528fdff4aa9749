//! Case streams: one JSON `CaseRecord` per line.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, ModelError};
use crate::model::{grade, normalize_descriptor, CaseDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Detection,
    Classification,
    Localization,
    Comparison,
    Relationship,
    Characterization,
    Diagnosis,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub case_id: String,
    pub question_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub answer_key: String,
    #[serde(default)]
    pub finding_tags: Vec<String>,
    #[serde(default)]
    pub failure_mode_tags: Vec<String>,
    pub category: Category,
}

pub const DEFAULT_MODALITY: &str = "cxr";

impl CaseRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.case_id.trim().is_empty() {
            return Err(ModelError::EmptyCaseId.to_string());
        }
        if self.question_text.trim().is_empty() {
            return Err(ModelError::EmptyQuestion.to_string());
        }
        if self.answer_key.trim().is_empty() {
            return Err("answer_key must be non-empty".into());
        }
        if let Some(choices) = &self.choices {
            if choices.is_empty() {
                return Err("choices, when present, must be non-empty".into());
            }
            if !choices.iter().any(|c| grade(c, &self.answer_key)) {
                return Err(format!("answer_key `{}` is not one of the choices", self.answer_key));
            }
        }
        Ok(())
    }

    pub fn descriptor(&self) -> Result<CaseDescriptor, ModelError> {
        normalize_descriptor(&self.case_id, &self.question_text, &self.finding_tags, DEFAULT_MODALITY, None)
    }

    pub fn failure_modes(&self) -> Vec<String> {
        crate::model::normalize_tags(&self.failure_mode_tags).into_iter().collect()
    }
}

/// Parse a JSONL stream, preserving order. Blank lines are skipped; any
/// invalid record (or repeated case id) fails with its 1-based line number.
pub fn parse_case_stream<R: Read>(reader: R) -> Result<Vec<CaseRecord>, HarnessError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| HarnessError::Data { line: line_no, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaseRecord =
            serde_json::from_str(&line).map_err(|e| HarnessError::Data { line: line_no, reason: e.to_string() })?;
        rec.validate().map_err(|reason| HarnessError::Data { line: line_no, reason })?;
        if !seen.insert(rec.case_id.clone()) {
            return Err(HarnessError::Data { line: line_no, reason: format!("duplicate case_id `{}`", rec.case_id) });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_case_stream(path: &Path) -> Result<Vec<CaseRecord>, HarnessError> {
    let f = File::open(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    parse_case_stream(f)
}

pub fn write_case_stream<W: Write>(mut w: W, cases: &[CaseRecord]) -> std::io::Result<()> {
    for c in cases {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"case_id":"c1","question_text":"Is there effusion?","choices":["A","B"],"answer_key":"B","finding_tags":["Effusion"],"failure_mode_tags":["rib_spur"],"category":"diagnosis"}"#;

    #[test]
    fn empty_stream() {
        assert!(parse_case_stream("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn order_preserved() {
        let text = (1..=3)
            .map(|i| GOOD.replace("\"c1\"", &format!("\"c{i}\"")))
            .collect::<Vec<_>>()
            .join("\n");
        let cases = parse_case_stream(text.as_bytes()).unwrap();
        let ids: Vec<_> = cases.iter().map(|c| c.case_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c2", "c3"]);
        assert_eq!(cases[0].descriptor().unwrap().finding_tags.iter().next().unwrap(), "effusion");
    }

    #[test]
    fn answer_not_in_choices_reports_line() {
        let bad = GOOD.replace("\"answer_key\":\"B\"", "\"answer_key\":\"E\"").replace("c1", "c2");
        let text = format!("{GOOD}\n\n{bad}\n");
        match parse_case_stream(text.as_bytes()) {
            Err(HarnessError::Data { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("not one of the choices"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_unknown_fields_rejected() {
        let text = format!("{GOOD}\n{GOOD}\n");
        assert!(matches!(parse_case_stream(text.as_bytes()), Err(HarnessError::Data { line: 2, .. })));
        let extra = GOOD.replace("\"category\"", "\"image\":\"x.png\",\"category\"");
        assert!(matches!(parse_case_stream(extra.as_bytes()), Err(HarnessError::Data { line: 1, .. })));
    }

    #[test]
    fn write_then_parse() {
        let cases = parse_case_stream(GOOD.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_case_stream(&mut buf, &cases).unwrap();
        assert_eq!(parse_case_stream(buf.as_slice()).unwrap(), cases);
    }
}
