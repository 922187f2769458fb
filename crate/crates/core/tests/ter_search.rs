use std::collections::{HashSet, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sema::metrics::{apply_shift, edit_distance, ter_edits};

/// Fewest shifts + Levenshtein edits over every reachable block-move sequence.
fn exhaustive_min(hyp: &[u8], reference: &[u8]) -> usize {
    let mut best = edit_distance(hyp, reference);
    let mut seen = HashSet::from([hyp.to_vec()]);
    let mut queue = VecDeque::from([(hyp.to_vec(), 0usize)]);
    while let Some((cur, depth)) = queue.pop_front() {
        best = best.min(depth + edit_distance(&cur, reference));
        if depth + 1 >= best {
            continue;
        }
        for start in 0..cur.len() {
            for len in 1..=cur.len() - start {
                for dest in 0..=cur.len() - len {
                    let next = apply_shift(&cur, start, len, dest);
                    if seen.insert(next.clone()) {
                        queue.push_back((next, depth + 1));
                    }
                }
            }
        }
    }
    best
}

fn random_seq(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<u8> {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| rng.random_range(0..3u8)).collect()
}

#[test]
fn exhaustive_oracle_sanity() {
    assert_eq!(exhaustive_min(b"dabc", b"abcd"), 1);
    assert_eq!(exhaustive_min(b"abc", b"abc"), 0);
    assert_eq!(exhaustive_min(b"", b"ab"), 2);
}

#[test]
fn greedy_matches_exhaustive_on_short_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    let total = 1000;
    for _ in 0..total {
        let h = random_seq(&mut rng, 1, 6);
        let r = random_seq(&mut rng, 1, 6);
        let greedy = ter_edits(&h, &r, true);
        let exact = exhaustive_min(&h, &r);
        assert!(greedy >= exact);
        if greedy == exact {
            agree += 1;
        }
    }
    println!("greedy == exhaustive on {agree}/{total}");
    assert!(agree * 100 >= total * 95, "only {agree}/{total} agree");
}

proptest! {
    #[test]
    fn shifts_never_increase_edits(
        h in proptest::collection::vec(0u8..4, 0..9),
        r in proptest::collection::vec(0u8..4, 1..9),
    ) {
        prop_assert!(ter_edits(&h, &r, true) <= ter_edits(&h, &r, false));
        prop_assert_eq!(ter_edits(&h, &r, false), edit_distance(&h, &r));
    }

    #[test]
    fn identical_sequences_need_no_edits(h in proptest::collection::vec(0u8..5, 1..12)) {
        prop_assert_eq!(ter_edits(&h, &h, true), 0);
    }
}
