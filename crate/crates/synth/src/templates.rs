//! Question templates. Each template instantiates a token sequence, the
//! matching program with exact question-token argument slots, runs the
//! executor to obtain the answer and the visual-argument trace, and
//! rejects realizations the executor conventions cannot answer.

use progsup_ir::{Program, ProgramOp, VisualRef};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::executor::execute_with_trace;
use crate::rng::rng_from;
use crate::world::{Relation, SceneGraph, CLASSES, COLORS, SIZES};

pub const N_TEMPLATES: usize = 18;

/// A realized question: tokens, program with q/v/dep arguments, answer.
#[derive(Debug, Clone)]
pub struct Realized {
    pub template_id: usize,
    pub tokens: Vec<String>,
    pub program: Program,
    pub answer: String,
}

fn s(word: &str) -> String {
    word.to_string()
}

fn class_present(rng: &mut impl Rng, scene: &SceneGraph) -> u8 {
    let classes: Vec<u8> = {
        let mut cs: Vec<u8> = scene.objects.iter().map(|o| o.class).collect();
        cs.sort_unstable();
        cs.dedup();
        cs
    };
    *classes.choose(rng).expect("scenes are never empty")
}

/// A class with exactly one instance in the scene, so "the <class>" has
/// an unambiguous referent; falls back to any present class when every
/// class repeats.
fn class_unique(rng: &mut impl Rng, scene: &SceneGraph) -> u8 {
    let mut counts = [0u8; CLASSES.len()];
    for o in &scene.objects {
        counts[o.class as usize] += 1;
    }
    let unique: Vec<u8> =
        (0..CLASSES.len() as u8).filter(|&c| counts[c as usize] == 1).collect();
    match unique.choose(rng) {
        Some(&c) => c,
        None => class_present(rng, scene),
    }
}

fn class_any(rng: &mut impl Rng) -> u8 {
    rng.gen_range(0..CLASSES.len()) as u8
}

/// Present class half the time, arbitrary class otherwise; keeps yes/no
/// answers roughly mixed for existence questions.
fn class_mixed(rng: &mut impl Rng, scene: &SceneGraph) -> u8 {
    if rng.gen_bool(0.5) {
        class_present(rng, scene)
    } else {
        class_any(rng)
    }
}

fn relation_tokens(rel: Relation) -> Vec<String> {
    match rel {
        Relation::LeftOf => vec![s("to"), s("the"), s("left"), s("of")],
        Relation::RightOf => vec![s("to"), s("the"), s("right"), s("of")],
        Relation::Above => vec![s("above")],
        Relation::Below => vec![s("below")],
    }
}

fn pick_relation(rng: &mut impl Rng) -> Relation {
    *[Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below]
        .choose(rng)
        .unwrap()
}

struct Builder<'a> {
    vocab: &'a progsup_ir::OperationVocab,
    tokens: Vec<String>,
    ops: Vec<ProgramOp>,
}

impl<'a> Builder<'a> {
    fn new(vocab: &'a progsup_ir::OperationVocab) -> Self {
        Builder { vocab, tokens: Vec::new(), ops: Vec::new() }
    }

    fn push_tokens(&mut self, words: &[String]) -> Vec<usize> {
        let start = self.tokens.len();
        self.tokens.extend_from_slice(words);
        (start..self.tokens.len()).collect()
    }

    fn word(&mut self, w: &str) -> usize {
        self.tokens.push(s(w));
        self.tokens.len() - 1
    }

    fn op(&mut self, label: &str, q_args: Vec<usize>, dep_args: Vec<usize>) -> usize {
        let id = self.vocab.lookup(label).unwrap_or_else(|| panic!("label {label} missing"));
        self.ops.push(ProgramOp::new(id).with_q_args(q_args).with_dep_args(dep_args));
        self.ops.len() - 1
    }
}

/// Instantiates `template_id` on a scene. `None` means the realization was
/// rejected (the executor could not produce an unambiguous answer) and the
/// caller should retry with a fresh seed.
pub fn realize_question(
    template_id: usize,
    scene: &SceneGraph,
    seed: u64,
    vocab: &progsup_ir::OperationVocab,
) -> Option<Realized> {
    let mut rng = rng_from(seed);
    let mut b = Builder::new(vocab);
    match template_id {
        // "is there a <C>"
        0 => {
            let c = class_mixed(&mut rng, scene);
            b.word("is");
            b.word("there");
            b.word("a");
            let ci = b.word(CLASSES[c as usize]);
            let sel = b.op("select", vec![ci], vec![]);
            b.op("exist", vec![], vec![sel]);
        }
        // "is there a <C1> or a <C2>"  /  "... and a <C2>"
        1 | 2 => {
            let c1 = class_mixed(&mut rng, scene);
            let c2 = class_mixed(&mut rng, scene);
            let join = if template_id == 1 { "or" } else { "and" };
            b.word("is");
            b.word("there");
            b.word("a");
            let c1i = b.word(CLASSES[c1 as usize]);
            b.word(join);
            b.word("a");
            let c2i = b.word(CLASSES[c2 as usize]);
            let s1 = b.op("select", vec![c1i], vec![]);
            let e1 = b.op("exist", vec![], vec![s1]);
            let s2 = b.op("select", vec![c2i], vec![]);
            let e2 = b.op("exist", vec![], vec![s2]);
            b.op(join, vec![], vec![e1, e2]);
        }
        // "what color is the <C>" / "what size is the <C>"
        3 | 4 => {
            let c = class_unique(&mut rng, scene);
            let (attr, query) =
                if template_id == 3 { ("color", "query_color") } else { ("size", "query_size") };
            b.word("what");
            let ai = b.word(attr);
            b.word("is");
            b.word("the");
            let ci = b.word(CLASSES[c as usize]);
            let sel = b.op("select", vec![ci], vec![]);
            let un = b.op("unique", vec![], vec![sel]);
            b.op(query, vec![ai], vec![un]);
        }
        // "is the <C> <col>" / "is the <C> <size>"
        5 | 6 => {
            let c = class_unique(&mut rng, scene);
            b.word("is");
            b.word("the");
            let ci = b.word(CLASSES[c as usize]);
            let sel_set: Vec<usize> =
                scene.objects.iter().filter(|o| o.class == c).map(|o| o.obj_id).collect();
            let probe = scene.leftmost(&sel_set)?;
            if template_id == 5 {
                let col = if rng.gen_bool(0.5) {
                    scene.objects[probe].color
                } else {
                    rng.gen_range(0..COLORS.len()) as u8
                };
                let coli = b.word(COLORS[col as usize]);
                let sel = b.op("select", vec![ci], vec![]);
                b.op("verify_color", vec![coli], vec![sel]);
            } else {
                let sz = if rng.gen_bool(0.5) {
                    scene.objects[probe].size
                } else {
                    rng.gen_range(0..SIZES.len()) as u8
                };
                let szi = b.word(SIZES[sz as usize]);
                let sel = b.op("select", vec![ci], vec![]);
                b.op("verify_size", vec![szi], vec![sel]);
            }
        }
        // "does the <C1> <rel> the <C2> look <s1> or <s2>"
        7 => {
            let c1 = class_unique(&mut rng, scene);
            let c2 = class_unique(&mut rng, scene);
            let rel = pick_relation(&mut rng);
            let swap = rng.gen_bool(0.5);
            let (sa, sb) = if swap { (1u8, 0u8) } else { (0u8, 1u8) };
            b.word("does");
            b.word("the");
            let c1i = b.word(CLASSES[c1 as usize]);
            b.push_tokens(&relation_tokens(rel));
            b.word("the");
            let c2i = b.word(CLASSES[c2 as usize]);
            b.word("look");
            let s1i = b.word(SIZES[sa as usize]);
            b.word("or");
            let s2i = b.word(SIZES[sb as usize]);
            let sel = b.op("select", vec![c2i], vec![]);
            let rl = b.op(&format!("relate_{}", rel.label_suffix()), vec![c1i], vec![sel]);
            b.op("choose_size", vec![s1i, s2i], vec![rl]);
        }
        // "what color is the <C1> <rel> the <C2>"
        8 => {
            let c1 = class_unique(&mut rng, scene);
            let c2 = class_unique(&mut rng, scene);
            let rel = pick_relation(&mut rng);
            b.word("what");
            let ai = b.word("color");
            b.word("is");
            b.word("the");
            let c1i = b.word(CLASSES[c1 as usize]);
            b.push_tokens(&relation_tokens(rel));
            b.word("the");
            let c2i = b.word(CLASSES[c2 as usize]);
            let sel = b.op("select", vec![c2i], vec![]);
            let rl = b.op(&format!("relate_{}", rel.label_suffix()), vec![c1i], vec![sel]);
            b.op("query_color", vec![ai], vec![rl]);
        }
        // "is the <C1> <rel> the <C2>"
        9 => {
            let c1 = class_unique(&mut rng, scene);
            let c2 = class_unique(&mut rng, scene);
            let rel = pick_relation(&mut rng);
            b.word("is");
            b.word("the");
            let c1i = b.word(CLASSES[c1 as usize]);
            let rel_slots = b.push_tokens(&match rel {
                Relation::LeftOf => vec![s("left"), s("of")],
                Relation::RightOf => vec![s("right"), s("of")],
                Relation::Above => vec![s("above")],
                Relation::Below => vec![s("below")],
            });
            b.word("the");
            let c2i = b.word(CLASSES[c2 as usize]);
            let s1 = b.op("select", vec![c1i], vec![]);
            let s2 = b.op("select", vec![c2i], vec![]);
            b.op("verify_rel", vec![rel_slots[0]], vec![s1, s2]);
        }
        // "how many <C>"
        10 => {
            let c = class_mixed(&mut rng, scene);
            b.word("how");
            b.word("many");
            let ci = b.word(CLASSES[c as usize]);
            let sel = b.op("select", vec![ci], vec![]);
            b.op("count", vec![], vec![sel]);
        }
        // "how many <col> <C>"
        11 => {
            let c = class_mixed(&mut rng, scene);
            let col = rng.gen_range(0..COLORS.len()) as u8;
            b.word("how");
            b.word("many");
            let coli = b.word(COLORS[col as usize]);
            let ci = b.word(CLASSES[c as usize]);
            let sel = b.op("select", vec![ci], vec![]);
            let fc = b.op("filter_color", vec![coli], vec![sel]);
            b.op("count", vec![], vec![fc]);
        }
        // "do the <C1> and the <C2> have the same color"
        12 => {
            let c1 = class_unique(&mut rng, scene);
            let c2 = class_unique(&mut rng, scene);
            b.word("do");
            b.word("the");
            let c1i = b.word(CLASSES[c1 as usize]);
            b.word("and");
            b.word("the");
            let c2i = b.word(CLASSES[c2 as usize]);
            b.word("have");
            b.word("the");
            b.word("same");
            b.word("color");
            let s1 = b.op("select", vec![c1i], vec![]);
            let s2 = b.op("select", vec![c2i], vec![]);
            b.op("same_color", vec![], vec![s1, s2]);
        }
        // "are the <C1> and the <C2> the same size"
        13 => {
            let c1 = class_unique(&mut rng, scene);
            let c2 = class_unique(&mut rng, scene);
            b.word("are");
            b.word("the");
            let c1i = b.word(CLASSES[c1 as usize]);
            b.word("and");
            b.word("the");
            let c2i = b.word(CLASSES[c2 as usize]);
            b.word("the");
            b.word("same");
            b.word("size");
            let s1 = b.op("select", vec![c1i], vec![]);
            let s2 = b.op("select", vec![c2i], vec![]);
            b.op("same_size", vec![], vec![s1, s2]);
        }
        // "what is the thing <rel> the <C> called"
        14 => {
            let c = class_unique(&mut rng, scene);
            let rel = pick_relation(&mut rng);
            b.word("what");
            b.word("is");
            b.word("the");
            let thing = b.word("thing");
            b.push_tokens(&relation_tokens(rel));
            b.word("the");
            let ci = b.word(CLASSES[c as usize]);
            b.word("called");
            let sel = b.op("select", vec![ci], vec![]);
            let rl = b.op(&format!("relate_{}", rel.label_suffix()), vec![thing], vec![sel]);
            b.op("query_name", vec![], vec![rl]);
        }
        // "is there a <col> <C>" / "is there a <size> <C>"
        15 | 16 => {
            let c = class_mixed(&mut rng, scene);
            b.word("is");
            b.word("there");
            b.word("a");
            if template_id == 15 {
                let col = rng.gen_range(0..COLORS.len()) as u8;
                let coli = b.word(COLORS[col as usize]);
                let ci = b.word(CLASSES[c as usize]);
                let sel = b.op("select", vec![ci], vec![]);
                let fc = b.op("filter_color", vec![coli], vec![sel]);
                b.op("exist", vec![], vec![fc]);
            } else {
                let sz = rng.gen_range(0..SIZES.len()) as u8;
                let szi = b.word(SIZES[sz as usize]);
                let ci = b.word(CLASSES[c as usize]);
                let sel = b.op("select", vec![ci], vec![]);
                let fs = b.op("filter_size", vec![szi], vec![sel]);
                b.op("exist", vec![], vec![fs]);
            }
        }
        // "what color is the <size> <C>"
        17 => {
            let c = class_unique(&mut rng, scene);
            let sz = rng.gen_range(0..SIZES.len()) as u8;
            b.word("what");
            let ai = b.word("color");
            b.word("is");
            b.word("the");
            let szi = b.word(SIZES[sz as usize]);
            let ci = b.word(CLASSES[c as usize]);
            let sel = b.op("select", vec![ci], vec![]);
            let fs = b.op("filter_size", vec![szi], vec![sel]);
            let un = b.op("unique", vec![], vec![fs]);
            b.op("query_color", vec![ai], vec![un]);
        }
        other => panic!("unknown template id {other}"),
    }

    let mut program = Program::new(b.ops);
    let (answer, trace) = execute_with_trace(&program, scene, &b.tokens, vocab).ok()?;
    for (op, touched) in program.ops.iter_mut().zip(&trace) {
        *op = op.clone().with_v_args(
            touched
                .iter()
                .map(|&id| VisualRef { obj: id, bbox: scene.objects[id].bbox })
                .collect(),
        );
    }
    Some(Realized { template_id, tokens: b.tokens, program, answer })
}
