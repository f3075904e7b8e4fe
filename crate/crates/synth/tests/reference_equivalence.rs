//! The tree executor against the subset-enumeration reference evaluator.

use progsup_ir::OperationVocab;
use progsup_synth::{
    execute_program, execute_reference, gen_scene, realize_question, WorldConfig, N_TEMPLATES,
};

#[test]
fn executor_agrees_with_subset_enumeration_on_a_thousand_pairs() {
    let vocab = OperationVocab::desk();
    let cfg = WorldConfig::default();
    let mut checked = 0usize;
    let mut seed = 0u64;
    while checked < 1000 {
        let scene = gen_scene(seed.wrapping_mul(0x2545F491), &cfg);
        assert!(scene.objects.len() <= 8);
        let template = (seed % N_TEMPLATES as u64) as usize;
        if let Some(r) = realize_question(template, &scene, seed, &vocab) {
            let fast = execute_program(&r.program, &scene, &r.tokens, &vocab)
                .expect("realized programs execute");
            let slow = execute_reference(&r.program, &scene, &r.tokens, &vocab)
                .expect("reference accepts realized programs");
            assert_eq!(fast, slow, "divergence at seed {seed} template {template}");
            checked += 1;
        }
        seed += 1;
    }
}
