mod common;

use std::time::Instant;

use common::{desk_config, pairs};
use sema::experiment::{make_synthetic_corpus, SynthOptions};
use sema::models::{objective, Family, Seq2Seq};
use sema::semantics::build_vocabularies;
use sema::tensor::gradcheck::{check_gradients, GradCheckOptions};
use sema::tensor::{ParamStore, Tensor};

/// Larger than the default step: key biases have an exactly zero gradient
/// (softmax ignores a per-row shift), and at 1e-5 the round-off of a full
/// forward pass reaches ~1e-10 there, a relative 1e-4 against the floor.
/// Entries where 1e-4 straddles a ReLU kink are retried at 1e-5.
const STEP: f64 = 1e-4;

/// Every parameter tensor of each architecture at desk dimensions, sampled
/// entries per tensor, on two-pair batches so the stacking masks are exercised.
#[test]
fn full_architectures_match_finite_differences() {
    let synth = make_synthetic_corpus(&SynthOptions { size: 100, seed: 4, ambiguity_rate: 0.5 }).unwrap();
    let mut all = pairs();
    all.extend(synth.pairs[..2].iter().cloned());
    let vocabs = build_vocabularies(&all, 1).unwrap();
    let opts = GradCheckOptions {
        step: STEP,
        fallback_step: Some(1e-5),
        max_entries_per_param: Some(8),
        sample_seed: 17,
        tape_seed: 5,
        ..Default::default()
    };
    for family in Family::ALL {
        let mut m = Seq2Seq::new(desk_config(family), vocabs.clone()).unwrap();
        for batch in [&all[..2], &all[3..]] {
            let start = Instant::now();
            let batch: Vec<_> = batch.iter().map(|p| m.encode_pair(p).unwrap()).collect();
            let net = &m.net;
            let report = check_gradients(&mut m.params, &opts, |tape| Ok(objective(tape, net, &batch, 1.0)?.0)).unwrap();
            println!(
                "{family}: max rel error {:.3e} at {}[{}] over {} entries of {} tensors in {:.1?}",
                report.max_rel_error,
                report.worst_param,
                report.worst_index,
                report.entries_checked,
                report.params_checked,
                start.elapsed()
            );
            assert_eq!(report.params_checked, m.params.len());
            assert!(report.max_rel_error < 1e-4, "{family}: {report:?}");
        }
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let reports = sema::tensor::gradcheck::check_all_ops(&GradCheckOptions::default()).unwrap();
    assert!(reports.len() >= 30);
    for (name, r) in reports {
        assert!(r.entries_checked > 0, "{name}");
        assert!(r.max_rel_error < 1e-6, "{name}: {r:?}");
    }
}

/// `sum(p * stop_gradient(p))` has derivative `2p` but the tape only sees `p`;
/// the retries must not let that through.
#[test]
fn fallback_still_rejects_a_wrong_gradient() {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.25]).unwrap());
    let opts = GradCheckOptions { step: STEP, fallback_step: Some(1e-5), ..Default::default() };
    let report = check_gradients(&mut store, &opts, |tape| {
        let p = tape.param(id);
        let detached = tape.constant(tape.value(p).clone());
        let prod = tape.mul(p, detached)?;
        Ok(tape.sum(prod))
    })
    .unwrap();
    assert!(report.max_rel_error > 0.4, "{report:?}");
}
