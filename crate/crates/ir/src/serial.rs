//! Program JSON schema:
//! `{"ops":[{"op":"<label>","q_args":[...],"v_args":[{"box":[x1,y1,x2,y2],"obj":n}...],"dep_args":[...]}]}`

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::{OperationVocab, Program, ProgramOp, VisualRef};

#[derive(Debug, Error)]
pub enum SerialError {
    #[error("malformed program JSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unknown operation label {0:?}")]
    UnknownLabel(String),
    #[error("operation id {0} outside the vocabulary")]
    UnknownId(usize),
}

#[derive(Serialize, Deserialize)]
struct ProgramJson {
    ops: Vec<OpJson>,
}

#[derive(Serialize, Deserialize)]
struct OpJson {
    op: String,
    q_args: Vec<usize>,
    v_args: Vec<VisualRef>,
    dep_args: Vec<usize>,
}

/// Serializes a program with labels resolved through the vocabulary.
pub fn serialize(p: &Program, vocab: &OperationVocab) -> Result<String, SerialError> {
    let ops = p
        .ops
        .iter()
        .map(|op| {
            if op.op_id >= vocab.len() {
                return Err(SerialError::UnknownId(op.op_id));
            }
            Ok(OpJson {
                op: vocab.label(op.op_id).to_string(),
                q_args: op.q_args.clone(),
                v_args: op.v_args.clone(),
                dep_args: op.dep_args.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(serde_json::to_string(&ProgramJson { ops }).expect("program serialization cannot fail"))
}

/// Parses the program JSON schema, resolving labels through the vocabulary.
pub fn deserialize(text: &str, vocab: &OperationVocab) -> Result<Program, SerialError> {
    let parsed: ProgramJson = serde_json::from_str(text).map_err(|e| SerialError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let ops = parsed
        .ops
        .into_iter()
        .map(|op| {
            let op_id =
                vocab.lookup(&op.op).ok_or_else(|| SerialError::UnknownLabel(op.op.clone()))?;
            Ok(ProgramOp::new(op_id)
                .with_q_args(op.q_args)
                .with_v_args(op.v_args)
                .with_dep_args(op.dep_args))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Program::new(ops))
}
