//! Supervision targets for argument prediction: binary question-word and
//! dependency matrices, soft IoU-based visual matrices.

use crate::geometry::{iou, BBox};
use crate::program::Program;

/// Per-sample argument supervision matrices, all `n_ops` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgTargets {
    /// Binary, `[n_ops × n_tokens]`.
    pub a_q: Vec<Vec<f64>>,
    /// Soft in [0,1], `[n_ops × n_detections]`.
    pub a_v: Vec<Vec<f64>>,
    /// Binary and strictly lower-triangular, `[n_ops × n_maxop]`.
    pub a_d: Vec<Vec<f64>>,
}

/// Soft visual targets: entry `[i][j]` is the best IoU between detection
/// `j` and any ground-truth box in op `i`'s visual arguments; rows of ops
/// without visual arguments are all zero.
pub fn build_soft_visual_targets(program: &Program, detected: &[BBox]) -> Vec<Vec<f64>> {
    program
        .ops
        .iter()
        .map(|op| {
            detected
                .iter()
                .map(|d| {
                    op.v_args
                        .iter()
                        .map(|g| iou(d, &g.bbox))
                        .fold(0.0f64, f64::max)
                })
                .collect()
        })
        .collect()
}

/// Thresholds a soft matrix into {0,1} with the `≥` convention at the
/// boundary. `threshold` must lie strictly inside (0,1).
pub fn binarize_targets(a_v: &[Vec<f64>], threshold: f64) -> Vec<Vec<f64>> {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "binarization threshold {threshold} outside (0,1)"
    );
    a_v.iter()
        .map(|row| row.iter().map(|&x| if x >= threshold { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Assembles all three target matrices for a program over `n_tokens`
/// question tokens and the given detections.
pub fn build_targets(
    program: &Program,
    n_tokens: usize,
    detected: &[BBox],
    n_maxop: usize,
) -> ArgTargets {
    let a_q = program
        .ops
        .iter()
        .map(|op| {
            let mut row = vec![0.0; n_tokens];
            for &q in &op.q_args {
                if q < n_tokens {
                    row[q] = 1.0;
                }
            }
            row
        })
        .collect();
    let a_v = build_soft_visual_targets(program, detected);
    let a_d = program
        .ops
        .iter()
        .enumerate()
        .map(|(i, op)| {
            let mut row = vec![0.0; n_maxop];
            for &d in &op.dep_args {
                if d < i && d < n_maxop {
                    row[d] = 1.0;
                }
            }
            row
        })
        .collect();
    ArgTargets { a_q, a_v, a_d }
}
