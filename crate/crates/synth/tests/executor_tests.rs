use progsup_ir::{BBox, OperationVocab, Program, ProgramOp};
use progsup_synth::{execute_program, ExecError, SceneGraph, SceneObject, CLASSES, COLORS, SIZES};

fn obj(id: usize, class: &str, color: &str, size: &str, x1: f64, y1: f64) -> SceneObject {
    SceneObject {
        obj_id: id,
        class: CLASSES.iter().position(|c| *c == class).unwrap() as u8,
        color: COLORS.iter().position(|c| *c == color).unwrap() as u8,
        size: SIZES.iter().position(|s| *s == size).unwrap() as u8,
        bbox: BBox::new(x1, y1, x1 + 0.15, y1 + 0.15),
        feature_seed: 0,
    }
}

fn toks(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

#[test]
fn exist_on_absent_class_answers_no() {
    let vocab = OperationVocab::desk();
    let scene = SceneGraph { objects: vec![obj(0, "cat", "red", "small", 0.1, 0.1)] };
    let tokens = toks(&["is", "there", "a", "plane"]);
    let program = Program::new(vec![
        ProgramOp::new(vocab.lookup("select").unwrap()).with_q_args(vec![3]),
        ProgramOp::new(vocab.lookup("exist").unwrap()).with_dep_args(vec![0]),
    ]);
    assert_eq!(execute_program(&program, &scene, &tokens, &vocab).unwrap(), "no");
}

#[test]
fn boat_left_of_flag_chain_answers_small() {
    let vocab = OperationVocab::desk();
    // a small boat well to the left of a flag
    let scene = SceneGraph {
        objects: vec![
            obj(0, "boat", "blue", "small", 0.1, 0.4),
            obj(1, "flag", "red", "large", 0.7, 0.4),
        ],
    };
    let tokens = toks(&[
        "does", "the", "boat", "to", "the", "left", "of", "the", "flag", "look", "small", "or",
        "large",
    ]);
    let program = Program::new(vec![
        ProgramOp::new(vocab.lookup("select").unwrap()).with_q_args(vec![8]),
        ProgramOp::new(vocab.lookup("relate_left").unwrap())
            .with_q_args(vec![2])
            .with_dep_args(vec![0]),
        ProgramOp::new(vocab.lookup("choose_size").unwrap())
            .with_q_args(vec![10, 12])
            .with_dep_args(vec![1]),
    ]);
    assert_eq!(execute_program(&program, &scene, &tokens, &vocab).unwrap(), "small");
}

#[test]
fn or_reproduces_the_truth_table() {
    let vocab = OperationVocab::desk();
    let tokens = toks(&["is", "there", "a", "cat", "or", "a", "dog"]);
    let program = Program::new(vec![
        ProgramOp::new(vocab.lookup("select").unwrap()).with_q_args(vec![3]),
        ProgramOp::new(vocab.lookup("exist").unwrap()).with_dep_args(vec![0]),
        ProgramOp::new(vocab.lookup("select").unwrap()).with_q_args(vec![6]),
        ProgramOp::new(vocab.lookup("exist").unwrap()).with_dep_args(vec![2]),
        ProgramOp::new(vocab.lookup("or").unwrap()).with_dep_args(vec![1, 3]),
    ]);
    let cases = [
        (true, true, "yes"),
        (true, false, "yes"),
        (false, true, "yes"),
        (false, false, "no"),
    ];
    for (has_cat, has_dog, expected) in cases {
        let mut objects = vec![obj(0, "bird", "red", "small", 0.4, 0.4)];
        if has_cat {
            objects.push(obj(objects.len(), "cat", "blue", "small", 0.1, 0.1));
        }
        if has_dog {
            objects.push(obj(objects.len(), "dog", "black", "large", 0.7, 0.7));
        }
        let scene = SceneGraph { objects };
        assert_eq!(
            execute_program(&program, &scene, &tokens, &vocab).unwrap(),
            expected,
            "cat={has_cat} dog={has_dog}"
        );
    }
}

#[test]
fn and_over_object_sets_is_a_type_error() {
    let vocab = OperationVocab::desk();
    let scene = SceneGraph { objects: vec![obj(0, "cat", "red", "small", 0.1, 0.1)] };
    let tokens = toks(&["is", "there", "a", "cat", "and", "a", "cat"]);
    let program = Program::new(vec![
        ProgramOp::new(vocab.lookup("select").unwrap()).with_q_args(vec![3]),
        ProgramOp::new(vocab.lookup("select").unwrap()).with_q_args(vec![6]),
        ProgramOp::new(vocab.lookup("and").unwrap()).with_dep_args(vec![0, 1]),
    ]);
    let err = execute_program(&program, &scene, &tokens, &vocab).unwrap_err();
    assert!(matches!(err, ExecError::Type { .. }), "{err}");
}

#[test]
fn query_over_empty_set_is_an_error() {
    let vocab = OperationVocab::desk();
    let scene = SceneGraph { objects: vec![obj(0, "cat", "red", "small", 0.1, 0.1)] };
    let tokens = toks(&["what", "color", "is", "the", "plane"]);
    let program = Program::new(vec![
        ProgramOp::new(vocab.lookup("select").unwrap()).with_q_args(vec![4]),
        ProgramOp::new(vocab.lookup("query_color").unwrap())
            .with_q_args(vec![1])
            .with_dep_args(vec![0]),
    ]);
    let err = execute_program(&program, &scene, &tokens, &vocab).unwrap_err();
    assert_eq!(err, ExecError::EmptySet { op: 1 });
}

#[test]
fn multi_object_query_takes_the_leftmost() {
    let vocab = OperationVocab::desk();
    let scene = SceneGraph {
        objects: vec![
            obj(0, "cat", "red", "small", 0.6, 0.1),
            obj(1, "cat", "blue", "small", 0.1, 0.1),
        ],
    };
    let tokens = toks(&["what", "color", "is", "the", "cat"]);
    let program = Program::new(vec![
        ProgramOp::new(vocab.lookup("select").unwrap()).with_q_args(vec![4]),
        ProgramOp::new(vocab.lookup("query_color").unwrap())
            .with_q_args(vec![1])
            .with_dep_args(vec![0]),
    ]);
    assert_eq!(execute_program(&program, &scene, &tokens, &vocab).unwrap(), "blue");
}
