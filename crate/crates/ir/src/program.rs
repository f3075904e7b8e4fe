//! Programs: operation sequences with question-word, visual-object, and
//! dependency arguments, plus structural validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// Ordered operation label set with a reserved terminal STOP label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationVocab {
    labels: Vec<String>,
    stop_index: usize,
}

impl OperationVocab {
    /// Builds a vocabulary; `labels` must be unique and contain "STOP".
    pub fn new(labels: Vec<String>) -> Self {
        let stop_index = labels
            .iter()
            .position(|l| l == "STOP")
            .expect("operation vocabulary must contain STOP");
        for (i, a) in labels.iter().enumerate() {
            for b in labels.iter().skip(i + 1) {
                assert_ne!(a, b, "duplicate operation label {a:?}");
            }
        }
        OperationVocab { labels, stop_index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn stop_index(&self) -> usize {
        self.stop_index
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn lookup(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// The 24-label desk-scale vocabulary, STOP at the last index.
    pub fn desk() -> Self {
        OperationVocab::new(
            [
                "select",
                "filter_color",
                "filter_size",
                "relate_left",
                "relate_right",
                "relate_above",
                "relate_below",
                "exist",
                "verify_color",
                "verify_size",
                "verify_rel",
                "query_name",
                "query_color",
                "query_size",
                "choose_color",
                "choose_size",
                "choose_name",
                "count",
                "and",
                "or",
                "same_color",
                "same_size",
                "unique",
                "STOP",
            ]
            .into_iter()
            .map(str::to_string)
            .collect(),
        )
    }
}

/// Reference to a ground-truth visual object together with its box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualRef {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub obj: usize,
}

/// One operation with its argument sets. Argument vectors are kept sorted
/// so equal programs compare and serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramOp {
    pub op_id: usize,
    pub q_args: Vec<usize>,
    pub v_args: Vec<VisualRef>,
    pub dep_args: Vec<usize>,
}

impl ProgramOp {
    pub fn new(op_id: usize) -> Self {
        ProgramOp { op_id, q_args: Vec::new(), v_args: Vec::new(), dep_args: Vec::new() }
    }

    pub fn with_q_args(mut self, mut q: Vec<usize>) -> Self {
        q.sort_unstable();
        q.dedup();
        self.q_args = q;
        self
    }

    pub fn with_v_args(mut self, mut v: Vec<VisualRef>) -> Self {
        v.sort_by_key(|r| r.obj);
        self.v_args = v;
        self
    }

    pub fn with_dep_args(mut self, mut d: Vec<usize>) -> Self {
        d.sort_unstable();
        d.dedup();
        self.dep_args = d;
        self
    }
}

/// An operation sequence in dependency order, terminal STOP implicit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Program {
    pub ops: Vec<ProgramOp>,
}

impl Program {
    pub fn new(ops: Vec<ProgramOp>) -> Self {
        Program { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Indices of operations no other operation depends on.
    pub fn roots(&self) -> Vec<usize> {
        let mut depended = vec![false; self.ops.len()];
        for op in &self.ops {
            for &d in &op.dep_args {
                if d < depended.len() {
                    depended[d] = true;
                }
            }
        }
        (0..self.ops.len()).filter(|&i| !depended[i]).collect()
    }
}

/// Bounds a program is validated against.
#[derive(Debug, Clone, Copy)]
pub struct ValidationLimits<'a> {
    pub vocab: &'a OperationVocab,
    pub n_tokens: usize,
    pub n_objects: usize,
    pub n_maxop: usize,
    /// Ground-truth programs must have exactly one root; predicted
    /// programs are allowed any root structure.
    pub require_single_root: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Length { len: usize, max: usize },
    UnknownOp { op: usize, id: usize },
    StopInBody { op: usize },
    ForwardDependency { op: usize, dep: usize },
    QArgRange { op: usize, token: usize, n_tokens: usize },
    VArgRange { op: usize, obj: usize, n_objects: usize },
    InvalidBox { op: usize },
    RootCount { count: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Length { len, max } => write!(f, "length {len} exceeds maximum {max}"),
            Violation::UnknownOp { op, id } => write!(f, "op {op}: unknown operation id {id}"),
            Violation::StopInBody { op } => write!(f, "op {op}: STOP inside program body"),
            Violation::ForwardDependency { op, dep } => {
                write!(f, "op {op}: forward dependency on {dep}")
            }
            Violation::QArgRange { op, token, n_tokens } => {
                write!(f, "op {op}: question token {token} out of {n_tokens}")
            }
            Violation::VArgRange { op, obj, n_objects } => {
                write!(f, "op {op}: object {obj} out of {n_objects}")
            }
            Violation::InvalidBox { op } => write!(f, "op {op}: invalid argument box"),
            Violation::RootCount { count } => write!(f, "expected exactly one root, found {count}"),
        }
    }
}

/// Checks every structural invariant and returns all violations, not just
/// the first. An empty program is valid.
pub fn validate_program(p: &Program, limits: &ValidationLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    if p.len() > limits.n_maxop {
        out.push(Violation::Length { len: p.len(), max: limits.n_maxop });
    }
    for (i, op) in p.ops.iter().enumerate() {
        if op.op_id >= limits.vocab.len() {
            out.push(Violation::UnknownOp { op: i, id: op.op_id });
        } else if op.op_id == limits.vocab.stop_index() {
            out.push(Violation::StopInBody { op: i });
        }
        for &d in &op.dep_args {
            if d >= i {
                out.push(Violation::ForwardDependency { op: i, dep: d });
            }
        }
        for &q in &op.q_args {
            if q >= limits.n_tokens {
                out.push(Violation::QArgRange { op: i, token: q, n_tokens: limits.n_tokens });
            }
        }
        for v in &op.v_args {
            if v.obj >= limits.n_objects {
                out.push(Violation::VArgRange { op: i, obj: v.obj, n_objects: limits.n_objects });
            }
            if !v.bbox.is_valid() {
                out.push(Violation::InvalidBox { op: i });
            }
        }
    }
    if limits.require_single_root && !p.is_empty() {
        let roots = p.roots();
        if roots.len() != 1 {
            out.push(Violation::RootCount { count: roots.len() });
        }
    }
    out
}
