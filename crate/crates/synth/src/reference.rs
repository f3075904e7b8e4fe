//! Reference program evaluator used by the verification suites.
//!
//! Deliberately a different implementation from the executor: object sets
//! are found by enumerating all subsets of the scene (masks over ≤ 16
//! objects) and selecting the unique subset whose membership matches the
//! operation's defining predicate. Kept simple and slow; its only job is
//! to disagree with `execute_program` if either implementation drifts.

use progsup_ir::Program;

use crate::world::{Relation, SceneGraph, CLASSES, COLORS, SIZES};

type Mask = u32;

#[derive(Debug, Clone, PartialEq)]
enum RefVal {
    Set(Mask),
    Truth(bool),
    Word(String),
}

fn word_index(tokens: &[String], q_args: &[usize], table: &[&str]) -> Option<u8> {
    q_args
        .iter()
        .filter_map(|&q| tokens.get(q))
        .find_map(|t| table.iter().position(|w| w == t).map(|i| i as u8))
}

fn words_found(tokens: &[String], q_args: &[usize], table: &[&str]) -> Vec<u8> {
    q_args
        .iter()
        .filter_map(|&q| tokens.get(q))
        .filter_map(|t| table.iter().position(|w| w == t).map(|i| i as u8))
        .collect()
}

fn relation_word(tokens: &[String], q_args: &[usize]) -> Option<Relation> {
    q_args.iter().filter_map(|&q| tokens.get(q)).find_map(|t| match t.as_str() {
        "left" => Some(Relation::LeftOf),
        "right" => Some(Relation::RightOf),
        "above" => Some(Relation::Above),
        "below" => Some(Relation::Below),
        _ => None,
    })
}

/// The unique subset where membership coincides with the predicate,
/// discovered by exhaustive enumeration.
fn subset_by_predicate(n: usize, pred: impl Fn(usize) -> bool) -> Mask {
    assert!(n <= 16, "reference evaluator handles up to 16 objects");
    'mask: for mask in 0..(1u32 << n) {
        for o in 0..n {
            let inside = mask & (1 << o) != 0;
            if inside != pred(o) {
                continue 'mask;
            }
        }
        return mask;
    }
    unreachable!("some subset always satisfies a pointwise predicate")
}

fn first_by_x(scene: &SceneGraph, mask: Mask) -> Option<usize> {
    let mut best: Option<usize> = None;
    for o in 0..scene.objects.len() {
        if mask & (1 << o) == 0 {
            continue;
        }
        best = match best {
            None => Some(o),
            Some(b) => {
                if scene.objects[o].bbox.center().0 < scene.objects[b].bbox.center().0 {
                    Some(o)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Evaluates a program by subset enumeration; any convention failure
/// (empty sets, bad choices, type mismatches) comes back as `Err(())`.
pub fn execute_reference(
    program: &Program,
    scene: &SceneGraph,
    tokens: &[String],
    vocab: &progsup_ir::OperationVocab,
) -> Result<String, ()> {
    let n = scene.objects.len();
    let mut values: Vec<RefVal> = Vec::new();

    for (i, op) in program.ops.iter().enumerate() {
        let label = vocab.label(op.op_id);
        let deps = &op.dep_args;
        let set_dep = |values: &[RefVal], k: usize| -> Result<Mask, ()> {
            match values.get(*deps.get(k).ok_or(())?) {
                Some(RefVal::Set(m)) => Ok(*m),
                _ => Err(()),
            }
        };
        let truth_dep = |values: &[RefVal], k: usize| -> Result<bool, ()> {
            match values.get(*deps.get(k).ok_or(())?) {
                Some(RefVal::Truth(b)) => Ok(*b),
                _ => Err(()),
            }
        };

        let val = match label {
            "select" => {
                let c = word_index(tokens, &op.q_args, &CLASSES).ok_or(())?;
                if deps.len() != 0 {
                    return Err(());
                }
                RefVal::Set(subset_by_predicate(n, |o| scene.objects[o].class == c))
            }
            "filter_color" => {
                let c = word_index(tokens, &op.q_args, &COLORS).ok_or(())?;
                let input = set_dep(&values, 0)?;
                if deps.len() != 1 {
                    return Err(());
                }
                RefVal::Set(subset_by_predicate(n, |o| {
                    input & (1 << o) != 0 && scene.objects[o].color == c
                }))
            }
            "filter_size" => {
                let c = word_index(tokens, &op.q_args, &SIZES).ok_or(())?;
                let input = set_dep(&values, 0)?;
                if deps.len() != 1 {
                    return Err(());
                }
                RefVal::Set(subset_by_predicate(n, |o| {
                    input & (1 << o) != 0 && scene.objects[o].size == c
                }))
            }
            "relate_left" | "relate_right" | "relate_above" | "relate_below" => {
                let rel = match label {
                    "relate_left" => Relation::LeftOf,
                    "relate_right" => Relation::RightOf,
                    "relate_above" => Relation::Above,
                    _ => Relation::Below,
                };
                let class = word_index(tokens, &op.q_args, &CLASSES);
                if deps.len() != 1 {
                    return Err(());
                }
                let anchor = first_by_x(scene, set_dep(&values, 0)?).ok_or(())?;
                RefVal::Set(subset_by_predicate(n, |o| {
                    o != anchor
                        && class.map_or(true, |c| scene.objects[o].class == c)
                        && scene.relation_holds(rel, o, anchor)
                }))
            }
            "exist" => {
                if deps.len() != 1 {
                    return Err(());
                }
                RefVal::Truth(set_dep(&values, 0)? != 0)
            }
            "count" => {
                if deps.len() != 1 {
                    return Err(());
                }
                RefVal::Word(set_dep(&values, 0)?.count_ones().to_string())
            }
            "unique" => {
                if deps.len() != 1 {
                    return Err(());
                }
                let o = first_by_x(scene, set_dep(&values, 0)?).ok_or(())?;
                RefVal::Set(1 << o)
            }
            "verify_color" => {
                let c = word_index(tokens, &op.q_args, &COLORS).ok_or(())?;
                let o = first_by_x(scene, set_dep(&values, 0)?).ok_or(())?;
                if deps.len() != 1 {
                    return Err(());
                }
                RefVal::Truth(scene.objects[o].color == c)
            }
            "verify_size" => {
                let c = word_index(tokens, &op.q_args, &SIZES).ok_or(())?;
                let o = first_by_x(scene, set_dep(&values, 0)?).ok_or(())?;
                if deps.len() != 1 {
                    return Err(());
                }
                RefVal::Truth(scene.objects[o].size == c)
            }
            "verify_rel" => {
                let rel = relation_word(tokens, &op.q_args).ok_or(())?;
                if deps.len() != 2 {
                    return Err(());
                }
                let a = first_by_x(scene, set_dep(&values, 0)?).ok_or(())?;
                let b = first_by_x(scene, set_dep(&values, 1)?).ok_or(())?;
                RefVal::Truth(scene.relation_holds(rel, a, b))
            }
            "query_name" | "query_color" | "query_size" => {
                if deps.len() != 1 {
                    return Err(());
                }
                let o = first_by_x(scene, set_dep(&values, 0)?).ok_or(())?;
                let obj = &scene.objects[o];
                RefVal::Word(match label {
                    "query_name" => CLASSES[obj.class as usize].to_string(),
                    "query_color" => COLORS[obj.color as usize].to_string(),
                    _ => SIZES[obj.size as usize].to_string(),
                })
            }
            "choose_color" | "choose_size" | "choose_name" => {
                if deps.len() != 1 {
                    return Err(());
                }
                let table: &[&str] = match label {
                    "choose_color" => &COLORS,
                    "choose_size" => &SIZES,
                    _ => &CLASSES,
                };
                let offered = words_found(tokens, &op.q_args, table);
                if offered.len() != 2 {
                    return Err(());
                }
                let o = first_by_x(scene, set_dep(&values, 0)?).ok_or(())?;
                let obj = &scene.objects[o];
                let actual = match label {
                    "choose_color" => obj.color,
                    "choose_size" => obj.size,
                    _ => obj.class,
                };
                if offered.contains(&actual) {
                    RefVal::Word(table[actual as usize].to_string())
                } else {
                    return Err(());
                }
            }
            "and" => {
                if deps.len() != 2 {
                    return Err(());
                }
                RefVal::Truth(truth_dep(&values, 0)? && truth_dep(&values, 1)?)
            }
            "or" => {
                if deps.len() != 2 {
                    return Err(());
                }
                RefVal::Truth(truth_dep(&values, 0)? || truth_dep(&values, 1)?)
            }
            "same_color" | "same_size" => {
                if deps.len() != 2 {
                    return Err(());
                }
                let a = first_by_x(scene, set_dep(&values, 0)?).ok_or(())?;
                let b = first_by_x(scene, set_dep(&values, 1)?).ok_or(())?;
                let (oa, ob) = (&scene.objects[a], &scene.objects[b]);
                RefVal::Truth(if label == "same_color" {
                    oa.color == ob.color
                } else {
                    oa.size == ob.size
                })
            }
            _ => return Err(()),
        };
        values.push(val);
        let _ = i;
    }

    match values.last() {
        Some(RefVal::Truth(b)) => Ok(if *b { "yes" } else { "no" }.to_string()),
        Some(RefVal::Word(w)) => Ok(w.clone()),
        _ => Err(()),
    }
}
