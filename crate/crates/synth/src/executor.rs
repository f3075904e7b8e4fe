//! Bottom-up tree evaluation of programs over scene graphs.
//!
//! Conventions (fixed for determinism): attribute queries and choices over
//! a multi-object set inspect the left-most object; over an empty set they
//! fail, which rejects the realization at generation time and surfaces as
//! an execution error at runtime.

use progsup_ir::Program;
use thiserror::Error;

use crate::world::{Relation, SceneGraph, CLASSES, COLORS, SIZES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("op {op}: expected {expected} dependencies, found {found}")]
    Arity { op: usize, expected: usize, found: usize },
    #[error("op {op}: type error, {detail}")]
    Type { op: usize, detail: String },
    #[error("op {op}: empty object set where one object is required")]
    EmptySet { op: usize },
    #[error("op {op}: attribute {value:?} is not among the offered choices")]
    ChoiceMismatch { op: usize, value: String },
    #[error("op {op}: missing {what} argument in the question tokens")]
    MissingArg { op: usize, what: &'static str },
    #[error("op {op}: unsupported operation {label:?}")]
    Unsupported { op: usize, label: String },
    #[error("program root does not produce an answer")]
    NonAnswerRoot,
    #[error("empty program has no answer")]
    EmptyProgram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Objects(Vec<usize>),
    Bool(bool),
    Color(u8),
    Size(u8),
    Class(u8),
    Count(usize),
}

impl Value {
    pub fn answer_string(&self) -> Option<String> {
        match self {
            Value::Objects(_) => None,
            Value::Bool(b) => Some(if *b { "yes" } else { "no" }.to_string()),
            Value::Color(c) => Some(COLORS[*c as usize].to_string()),
            Value::Size(s) => Some(SIZES[*s as usize].to_string()),
            Value::Class(c) => Some(CLASSES[*c as usize].to_string()),
            Value::Count(n) => Some(n.to_string()),
        }
    }
}

fn find_attr(tokens: &[String], q_args: &[usize], table: &[&str]) -> Option<u8> {
    for &q in q_args {
        if let Some(tok) = tokens.get(q) {
            if let Some(i) = table.iter().position(|t| t == tok) {
                return Some(i as u8);
            }
        }
    }
    None
}

fn find_two_attrs(tokens: &[String], q_args: &[usize], table: &[&str]) -> Option<(u8, u8)> {
    let mut found = Vec::new();
    for &q in q_args {
        if let Some(tok) = tokens.get(q) {
            if let Some(i) = table.iter().position(|t| t == tok) {
                found.push(i as u8);
            }
        }
    }
    match found.len() {
        2 => Some((found[0], found[1])),
        _ => None,
    }
}

fn find_relation(tokens: &[String], q_args: &[usize]) -> Option<Relation> {
    for &q in q_args {
        match tokens.get(q).map(String::as_str) {
            Some("left") => return Some(Relation::LeftOf),
            Some("right") => return Some(Relation::RightOf),
            Some("above") => return Some(Relation::Above),
            Some("below") => return Some(Relation::Below),
            _ => {}
        }
    }
    None
}

struct Eval<'a> {
    program: &'a Program,
    scene: &'a SceneGraph,
    tokens: &'a [String],
    vocab: &'a progsup_ir::OperationVocab,
    /// Objects each op touched, recorded for visual-argument supervision.
    touched: Vec<Vec<usize>>,
}

impl<'a> Eval<'a> {
    fn dep1(&self, values: &[Value], i: usize) -> Result<Value, ExecError> {
        let deps = &self.program.ops[i].dep_args;
        if deps.len() != 1 {
            return Err(ExecError::Arity { op: i, expected: 1, found: deps.len() });
        }
        Ok(values[deps[0]].clone())
    }

    fn dep2(&self, values: &[Value], i: usize) -> Result<(Value, Value), ExecError> {
        let deps = &self.program.ops[i].dep_args;
        if deps.len() != 2 {
            return Err(ExecError::Arity { op: i, expected: 2, found: deps.len() });
        }
        Ok((values[deps[0]].clone(), values[deps[1]].clone()))
    }

    fn object_set(&self, v: Value, i: usize) -> Result<Vec<usize>, ExecError> {
        match v {
            Value::Objects(s) => Ok(s),
            other => Err(ExecError::Type {
                op: i,
                detail: format!("expected an object set, found {other:?}"),
            }),
        }
    }

    fn boolean(&self, v: Value, i: usize) -> Result<bool, ExecError> {
        match v {
            Value::Bool(b) => Ok(b),
            other => {
                Err(ExecError::Type { op: i, detail: format!("expected yes/no, found {other:?}") })
            }
        }
    }

    fn leftmost_of(&mut self, set: &[usize], i: usize) -> Result<usize, ExecError> {
        let obj = self.scene.leftmost(set).ok_or(ExecError::EmptySet { op: i })?;
        self.touched[i] = vec![obj];
        Ok(obj)
    }

    fn eval_op(&mut self, i: usize, values: &[Value]) -> Result<Value, ExecError> {
        let op = &self.program.ops[i];
        let tokens = self.tokens;
        let q_args = &op.q_args;
        let label = self.vocab.label(op.op_id).to_string();
        match label.as_str() {
            "select" => {
                let class = find_attr(tokens, q_args, &CLASSES)
                    .ok_or(ExecError::MissingArg { op: i, what: "class" })?;
                let set: Vec<usize> = self
                    .scene
                    .objects
                    .iter()
                    .filter(|o| o.class == class)
                    .map(|o| o.obj_id)
                    .collect();
                self.touched[i] = set.clone();
                Ok(Value::Objects(set))
            }
            "filter_color" => {
                let color = find_attr(tokens, q_args, &COLORS)
                    .ok_or(ExecError::MissingArg { op: i, what: "color" })?;
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let set: Vec<usize> = input
                    .into_iter()
                    .filter(|&o| self.scene.objects[o].color == color)
                    .collect();
                self.touched[i] = set.clone();
                Ok(Value::Objects(set))
            }
            "filter_size" => {
                let size = find_attr(tokens, q_args, &SIZES)
                    .ok_or(ExecError::MissingArg { op: i, what: "size" })?;
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let set: Vec<usize> =
                    input.into_iter().filter(|&o| self.scene.objects[o].size == size).collect();
                self.touched[i] = set.clone();
                Ok(Value::Objects(set))
            }
            "relate_left" | "relate_right" | "relate_above" | "relate_below" => {
                let rel = match label.as_str() {
                    "relate_left" => Relation::LeftOf,
                    "relate_right" => Relation::RightOf,
                    "relate_above" => Relation::Above,
                    _ => Relation::Below,
                };
                // Optional class constraint; absent means any class.
                let class = find_attr(tokens, q_args, &CLASSES);
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let anchor = self.scene.leftmost(&input).ok_or(ExecError::EmptySet { op: i })?;
                let set: Vec<usize> = self
                    .scene
                    .objects
                    .iter()
                    .filter(|o| {
                        o.obj_id != anchor
                            && class.map_or(true, |c| o.class == c)
                            && self.scene.relation_holds(rel, o.obj_id, anchor)
                    })
                    .map(|o| o.obj_id)
                    .collect();
                self.touched[i] = set.clone();
                Ok(Value::Objects(set))
            }
            "exist" => {
                let input = self.object_set(self.dep1(values, i)?, i)?;
                self.touched[i] = input.clone();
                Ok(Value::Bool(!input.is_empty()))
            }
            "count" => {
                let input = self.object_set(self.dep1(values, i)?, i)?;
                self.touched[i] = input.clone();
                Ok(Value::Count(input.len()))
            }
            "unique" => {
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                Ok(Value::Objects(vec![obj]))
            }
            "verify_color" => {
                let color = find_attr(tokens, q_args, &COLORS)
                    .ok_or(ExecError::MissingArg { op: i, what: "color" })?;
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                Ok(Value::Bool(self.scene.objects[obj].color == color))
            }
            "verify_size" => {
                let size = find_attr(tokens, q_args, &SIZES)
                    .ok_or(ExecError::MissingArg { op: i, what: "size" })?;
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                Ok(Value::Bool(self.scene.objects[obj].size == size))
            }
            "verify_rel" => {
                let rel = find_relation(tokens, q_args)
                    .ok_or(ExecError::MissingArg { op: i, what: "relation" })?;
                let (va, vb) = self.dep2(values, i)?;
                let sa = self.object_set(va, i)?;
                let sb = self.object_set(vb, i)?;
                let a = self.scene.leftmost(&sa).ok_or(ExecError::EmptySet { op: i })?;
                let b = self.scene.leftmost(&sb).ok_or(ExecError::EmptySet { op: i })?;
                self.touched[i] = vec![a, b];
                Ok(Value::Bool(self.scene.relation_holds(rel, a, b)))
            }
            "query_name" => {
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                Ok(Value::Class(self.scene.objects[obj].class))
            }
            "query_color" => {
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                Ok(Value::Color(self.scene.objects[obj].color))
            }
            "query_size" => {
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                Ok(Value::Size(self.scene.objects[obj].size))
            }
            "choose_color" => {
                let (c1, c2) = find_two_attrs(tokens, q_args, &COLORS)
                    .ok_or(ExecError::MissingArg { op: i, what: "two colors" })?;
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                let c = self.scene.objects[obj].color;
                if c == c1 || c == c2 {
                    Ok(Value::Color(c))
                } else {
                    Err(ExecError::ChoiceMismatch { op: i, value: COLORS[c as usize].to_string() })
                }
            }
            "choose_size" => {
                let (s1, s2) = find_two_attrs(tokens, q_args, &SIZES)
                    .ok_or(ExecError::MissingArg { op: i, what: "two sizes" })?;
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                let s = self.scene.objects[obj].size;
                if s == s1 || s == s2 {
                    Ok(Value::Size(s))
                } else {
                    Err(ExecError::ChoiceMismatch { op: i, value: SIZES[s as usize].to_string() })
                }
            }
            "choose_name" => {
                let (c1, c2) = find_two_attrs(tokens, q_args, &CLASSES)
                    .ok_or(ExecError::MissingArg { op: i, what: "two classes" })?;
                let input = self.object_set(self.dep1(values, i)?, i)?;
                let obj = self.leftmost_of(&input, i)?;
                let c = self.scene.objects[obj].class;
                if c == c1 || c == c2 {
                    Ok(Value::Class(c))
                } else {
                    Err(ExecError::ChoiceMismatch { op: i, value: CLASSES[c as usize].to_string() })
                }
            }
            "and" | "or" => {
                let (va, vb) = self.dep2(values, i)?;
                let a = self.boolean(va, i)?;
                let b = self.boolean(vb, i)?;
                Ok(Value::Bool(if label == "and" { a && b } else { a || b }))
            }
            "same_color" => {
                let (va, vb) = self.dep2(values, i)?;
                let sa = self.object_set(va, i)?;
                let sb = self.object_set(vb, i)?;
                let a = self.scene.leftmost(&sa).ok_or(ExecError::EmptySet { op: i })?;
                let b = self.scene.leftmost(&sb).ok_or(ExecError::EmptySet { op: i })?;
                self.touched[i] = vec![a, b];
                Ok(Value::Bool(self.scene.objects[a].color == self.scene.objects[b].color))
            }
            "same_size" => {
                let (va, vb) = self.dep2(values, i)?;
                let sa = self.object_set(va, i)?;
                let sb = self.object_set(vb, i)?;
                let a = self.scene.leftmost(&sa).ok_or(ExecError::EmptySet { op: i })?;
                let b = self.scene.leftmost(&sb).ok_or(ExecError::EmptySet { op: i })?;
                self.touched[i] = vec![a, b];
                Ok(Value::Bool(self.scene.objects[a].size == self.scene.objects[b].size))
            }
            other => Err(ExecError::Unsupported { op: i, label: other.to_string() }),
        }
    }
}

/// Evaluates a program and returns the answer string together with the
/// objects each operation touched (the visual-argument trace).
pub fn execute_with_trace(
    program: &Program,
    scene: &SceneGraph,
    tokens: &[String],
    vocab: &progsup_ir::OperationVocab,
) -> Result<(String, Vec<Vec<usize>>), ExecError> {
    if program.is_empty() {
        return Err(ExecError::EmptyProgram);
    }
    let mut eval = Eval {
        program,
        scene,
        tokens,
        vocab,
        touched: vec![Vec::new(); program.len()],
    };
    let mut values: Vec<Value> = Vec::with_capacity(program.len());
    for i in 0..program.len() {
        let v = eval.eval_op(i, &values)?;
        values.push(v);
    }
    let answer = values
        .last()
        .and_then(Value::answer_string)
        .ok_or(ExecError::NonAnswerRoot)?;
    Ok((answer, eval.touched))
}

/// Evaluates a program to its answer string.
pub fn execute_program(
    program: &Program,
    scene: &SceneGraph,
    tokens: &[String],
    vocab: &progsup_ir::OperationVocab,
) -> Result<String, ExecError> {
    execute_with_trace(program, scene, tokens, vocab).map(|(a, _)| a)
}
