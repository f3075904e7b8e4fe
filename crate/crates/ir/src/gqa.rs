//! Ingestion of GQA-format program annotations.
//!
//! A record holds the question text, the "semantic" step list (operation
//! name, argument string, dependency indices), and an object table mapping
//! annotation ids to boxes. Operation names go through a configurable
//! label map; `relate` steps pick their directional label from the
//! relation phrase inside the argument. Argument parts of the form
//! `name (id)` become visual references; plain word parts are aligned to
//! the question by exact consecutive-token match, and parts that fail to
//! align are dropped with a warning.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::geometry::BBox;
use crate::program::{OperationVocab, Program, ProgramOp, VisualRef};

#[derive(Debug, Error)]
pub enum GqaError {
    #[error("malformed GQA record at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("step {step}: unmapped operation name {name:?}")]
    UnmappedOperation { step: usize, name: String },
    #[error("step {step}: unknown relation phrase {phrase:?}")]
    UnknownRelation { step: usize, phrase: String },
    #[error("step {step}: dependency {dep} points past the step list (len {len})")]
    DependencyPastEnd { step: usize, dep: usize, len: usize },
    #[error("step {step}: object id {id:?} missing from the record's object table")]
    MissingObject { step: usize, id: String },
    #[error("step {step}: mapped label {label:?} not in the operation vocabulary")]
    LabelNotInVocab { step: usize, label: String },
}

#[derive(Deserialize)]
struct GqaRecord {
    question: String,
    semantic: Vec<GqaStep>,
    #[serde(default)]
    objects: BTreeMap<String, GqaObject>,
}

#[derive(Deserialize)]
struct GqaStep {
    operation: String,
    #[serde(default)]
    argument: String,
    #[serde(default)]
    dependencies: Vec<usize>,
}

#[derive(Deserialize)]
struct GqaObject {
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

/// Result of ingesting one record.
#[derive(Debug)]
pub struct ParsedGqa {
    pub program: Program,
    /// Question tokens the q_args indices refer to.
    pub tokens: Vec<String>,
    /// Annotation object ids in dense-index order (v_args `obj` fields
    /// index this list).
    pub object_ids: Vec<String>,
    /// Word arguments that could not be aligned to the question.
    pub warnings: Vec<String>,
}

/// Operation-name mapping from GQA spellings to vocabulary labels.
/// `relate` is handled separately (directional variants).
pub type LabelMap = BTreeMap<String, String>;

/// The default mapping into the desk-scale vocabulary.
pub fn default_label_map() -> LabelMap {
    [
        ("select", "select"),
        ("filter color", "filter_color"),
        ("filter size", "filter_size"),
        ("exist", "exist"),
        ("verify color", "verify_color"),
        ("verify size", "verify_size"),
        ("verify rel", "verify_rel"),
        ("query name", "query_name"),
        ("query color", "query_color"),
        ("query size", "query_size"),
        ("choose color", "choose_color"),
        ("choose size", "choose_size"),
        ("choose name", "choose_name"),
        ("count", "count"),
        ("and", "and"),
        ("or", "or"),
        ("same color", "same_color"),
        ("same size", "same_size"),
        ("unique", "unique"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

fn relation_label(phrase: &str) -> Option<&'static str> {
    match phrase.trim() {
        "to the left of" | "left of" => Some("relate_left"),
        "to the right of" | "right of" => Some("relate_right"),
        "above" => Some("relate_above"),
        "below" => Some("relate_below"),
        _ => None,
    }
}

/// Lowercased question tokens with trailing punctuation stripped.
pub fn tokenize_question(question: &str) -> Vec<String> {
    question
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c == '?' || c == '.' || c == ',').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Splits `name (id)` into its parts, if the trailing parenthesis form is
/// present.
fn split_object_ref(part: &str) -> Option<(&str, &str)> {
    let part = part.trim();
    let open = part.rfind('(')?;
    let close = part.rfind(')')?;
    if close != part.len() - 1 || open + 1 >= close {
        return None;
    }
    Some((part[..open].trim(), part[open + 1..close].trim()))
}

/// Finds the first occurrence of `words` as consecutive tokens.
fn align_words(tokens: &[String], words: &[String]) -> Option<Vec<usize>> {
    if words.is_empty() || words.len() > tokens.len() {
        return None;
    }
    for start in 0..=tokens.len() - words.len() {
        if tokens[start..start + words.len()].iter().zip(words).all(|(a, b)| a == b) {
            return Some((start..start + words.len()).collect());
        }
    }
    None
}

/// Parses one GQA-format record into a `Program`.
pub fn parse_gqa_json(
    text: &str,
    vocab: &OperationVocab,
    label_map: &LabelMap,
) -> Result<ParsedGqa, GqaError> {
    let record: GqaRecord = serde_json::from_str(text).map_err(|e| GqaError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let tokens = tokenize_question(&record.question);
    let n_steps = record.semantic.len();
    let mut object_ids: Vec<String> = Vec::new();
    let mut warnings = Vec::new();
    let mut ops = Vec::with_capacity(n_steps);

    for (step_idx, step) in record.semantic.iter().enumerate() {
        // Argument parts: comma-separated; object refs split out first.
        let mut q_args: Vec<usize> = Vec::new();
        let mut v_args: Vec<VisualRef> = Vec::new();
        let mut relation_phrase: Option<String> = None;
        for raw_part in step.argument.split([',', '|']) {
            let part = raw_part.trim();
            if part.is_empty() {
                continue;
            }
            if let Some((name, id)) = split_object_ref(part) {
                let obj_entry = record.objects.get(id).ok_or_else(|| {
                    GqaError::MissingObject { step: step_idx, id: id.to_string() }
                })?;
                let dense = match object_ids.iter().position(|o| o == id) {
                    Some(i) => i,
                    None => {
                        object_ids.push(id.to_string());
                        object_ids.len() - 1
                    }
                };
                v_args.push(VisualRef { obj: dense, bbox: BBox::from(obj_entry.bbox) });
                // The name half also counts as a word argument when it
                // appears in the question (subject markers like "s" don't).
                let words: Vec<String> =
                    name.split_whitespace().map(|w| w.to_lowercase()).collect();
                if let Some(idx) = align_words(&tokens, &words) {
                    q_args.extend(idx);
                }
                continue;
            }
            if step.operation == "relate" && relation_label(part).is_some() {
                relation_phrase = Some(part.to_string());
                continue;
            }
            let words: Vec<String> =
                part.split_whitespace().map(|w| w.to_lowercase()).collect();
            match align_words(&tokens, &words) {
                Some(idx) => q_args.extend(idx),
                None => warnings.push(format!(
                    "step {step_idx}: argument {part:?} not found in the question; dropped"
                )),
            }
        }

        let label: String = if step.operation == "relate" {
            let phrase = relation_phrase.ok_or_else(|| GqaError::UnknownRelation {
                step: step_idx,
                phrase: step.argument.clone(),
            })?;
            relation_label(&phrase)
                .expect("phrase pre-validated")
                .to_string()
        } else {
            label_map
                .get(&step.operation)
                .cloned()
                .ok_or_else(|| GqaError::UnmappedOperation {
                    step: step_idx,
                    name: step.operation.clone(),
                })?
        };
        let op_id = vocab
            .lookup(&label)
            .ok_or_else(|| GqaError::LabelNotInVocab { step: step_idx, label: label.clone() })?;

        for &dep in &step.dependencies {
            if dep >= n_steps {
                return Err(GqaError::DependencyPastEnd { step: step_idx, dep, len: n_steps });
            }
        }

        ops.push(
            ProgramOp::new(op_id)
                .with_q_args(q_args)
                .with_v_args(v_args)
                .with_dep_args(step.dependencies.clone()),
        );
    }

    Ok(ParsedGqa { program: Program::new(ops), tokens, object_ids, warnings })
}
