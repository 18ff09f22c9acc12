//! Iterated 5-core filtering.

use std::collections::HashMap;

use crate::data::Dataset;

/// Remove users with fewer than `k` events and items with fewer than `k`
/// occurrences, repeating until a fixpoint. Order-preserving; item ids are
/// left unchanged (re-indexing is the ingester's job).
pub fn k_core_filter(dataset: &Dataset, k: usize) -> Dataset {
    let mut user_ids = dataset.user_ids.clone();
    let mut sequences = dataset.sequences.clone();

    loop {
        let mut item_counts: HashMap<usize, usize> = HashMap::new();
        for seq in &sequences {
            for &item in seq.item_ids() {
                *item_counts.entry(item).or_insert(0) += 1;
            }
        }
        let rare_items: std::collections::HashSet<usize> = item_counts
            .iter()
            .filter(|&(_, &c)| c < k)
            .map(|(&item, _)| item)
            .collect();

        let mut changed = !rare_items.is_empty();
        if !rare_items.is_empty() {
            for seq in &mut sequences {
                let keep: Vec<usize> = (0..seq.len())
                    .filter(|&i| !rare_items.contains(&seq.item_ids()[i]))
                    .collect();
                if keep.len() != seq.len() {
                    let items: Vec<usize> = keep.iter().map(|&i| seq.item_ids()[i]).collect();
                    let stamps: Vec<i64> = keep.iter().map(|&i| seq.raw_timestamps()[i]).collect();
                    *seq = crate::rope::EventSequence::new(items, stamps, dataset.vocab_size)
                        .expect("filtering preserves ordering and id range");
                }
            }
        }

        let before = sequences.len();
        let mut kept_users = Vec::with_capacity(before);
        let mut kept_sequences = Vec::with_capacity(before);
        for (uid, seq) in user_ids.iter().zip(sequences.into_iter()) {
            if seq.len() >= k {
                kept_users.push(*uid);
                kept_sequences.push(seq);
            }
        }
        changed |= kept_users.len() != before;
        user_ids = kept_users;
        sequences = kept_sequences;

        if !changed {
            break;
        }
    }

    Dataset { user_ids, sequences, vocab_size: dataset.vocab_size }
}

/// The conventional 5-core variant.
pub fn five_core_filter(dataset: &Dataset) -> Dataset {
    k_core_filter(dataset, 5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::EventSequence;

    fn dataset(users: Vec<Vec<usize>>, vocab: usize) -> Dataset {
        let sequences = users
            .iter()
            .map(|items| {
                let stamps: Vec<i64> = (0..items.len() as i64).collect();
                EventSequence::new(items.clone(), stamps, vocab).unwrap()
            })
            .collect();
        Dataset {
            user_ids: (0..users.len() as u64).collect(),
            sequences,
            vocab_size: vocab,
        }
    }

    /// Exhaustive reference: recompute eligibility from scratch each round.
    fn brute_force_fixpoint(mut users: Vec<Vec<usize>>, k: usize) -> Vec<Vec<usize>> {
        loop {
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for u in &users {
                for &i in u {
                    *counts.entry(i).or_insert(0) += 1;
                }
            }
            let next: Vec<Vec<usize>> = users
                .iter()
                .map(|u| u.iter().copied().filter(|i| counts[i] >= k).collect::<Vec<_>>())
                .filter(|u: &Vec<usize>| u.len() >= k)
                .collect();
            if next == users {
                return users;
            }
            users = next;
        }
    }

    #[test]
    fn already_dense_is_unchanged() {
        let users: Vec<Vec<usize>> = (0..5).map(|_| vec![0, 1, 2, 3, 4]).collect();
        let ds = dataset(users, 5);
        let out = five_core_filter(&ds);
        assert_eq!(out.sequences, ds.sequences);
        assert_eq!(out.user_ids, ds.user_ids);
    }

    #[test]
    fn cascading_removal_reaches_fixpoint() {
        // Item 9 appears 5 times, but one occurrence sits with a 4-event user;
        // dropping that user drops item 9 below 5, which in turn shortens the
        // users that relied on it.
        let mut users: Vec<Vec<usize>> = (0..6).map(|_| vec![0, 1, 2, 3, 4]).collect();
        users.push(vec![9, 0, 1, 2]); // 4 events: removed immediately
        for u in users.iter_mut().take(4) {
            u.push(9);
        }
        let ds = dataset(users.clone(), 10);
        let out = five_core_filter(&ds);

        let expect = brute_force_fixpoint(users, 5);
        let got: Vec<Vec<usize>> =
            out.sequences.iter().map(|s| s.item_ids().to_vec()).collect();
        assert_eq!(got, expect);
        for seq in &out.sequences {
            assert!(seq.len() >= 5);
            assert!(!seq.item_ids().contains(&9));
        }
    }

    #[test]
    fn empty_input_empty_output() {
        let ds = dataset(vec![], 5);
        let out = five_core_filter(&ds);
        assert!(out.sequences.is_empty());
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        use rand::Rng;
        let mut rng = crate::seeding::rng_from_seed(99);
        for _ in 0..20 {
            let n_users = rng.gen_range(1..10);
            let vocab = rng.gen_range(3..8);
            let users: Vec<Vec<usize>> = (0..n_users)
                .map(|_| {
                    let len = rng.gen_range(1..12);
                    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
                })
                .collect();
            let ds = dataset(users.clone(), vocab);
            let got: Vec<Vec<usize>> = five_core_filter(&ds)
                .sequences
                .iter()
                .map(|s| s.item_ids().to_vec())
                .collect();
            assert_eq!(got, brute_force_fixpoint(users, 5));
        }
    }
}
