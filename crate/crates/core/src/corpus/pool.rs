use rand::seq::SliceRandom;

use super::{Candidate, Corpus, RetrievalExample};
use crate::error::{Error, Result};
use crate::rng::{self, STREAM_POOL};

/// Evaluation pool for one example: the positive, the semi-hard historical
/// candidate when there is one, and seeded random fillers, in shuffled order.
///
/// The fillers are a prefix of one seeded permutation, so pools drawn with the
/// same seed at increasing sizes are nested.
pub fn sample_pool<'c>(
    ex: &RetrievalExample,
    corpus: &'c Corpus,
    pool_size: usize,
    seed: u64,
) -> Result<Vec<&'c Candidate>> {
    if pool_size < 2 {
        return Err(Error::Contract(format!("pool size must be ≥ 2, got {pool_size}")));
    }
    let pool = corpus.pool(ex.task);
    if pool.len() < pool_size {
        return Err(Error::Capacity(format!(
            "{} pool has {} candidates, {pool_size} requested",
            ex.task,
            pool.len()
        )));
    }
    let missing = |id: &str| Error::Integrity {
        id: id.to_string(),
        message: format!("candidate not found in the {} pool", ex.task),
    };
    let pos = pool.position(&ex.positive_id).ok_or_else(|| missing(&ex.positive_id))?;
    let semi = match ex.semi_hard_id() {
        Some(id) => Some(pool.position(id).ok_or_else(|| missing(id))?),
        None => None,
    };

    let mut rng = rng::rng(seed, STREAM_POOL, 0);
    let mut rest: Vec<usize> = (0..pool.len())
        .filter(|&i| i != pos && Some(i) != semi)
        .collect();
    rest.shuffle(&mut rng);
    let fill = pool_size - 1 - usize::from(semi.is_some());

    let mut chosen = Vec::with_capacity(pool_size);
    chosen.push(pos);
    chosen.extend(semi);
    chosen.extend_from_slice(&rest[..fill]);
    chosen.shuffle(&mut rng);
    Ok(chosen.into_iter().map(|i| pool.get(i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Role, TaskKind};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn corpus(n: usize, historical: Vec<&str>, positive: &str) -> Corpus {
        let cands = (0..n)
            .map(|i| Candidate {
                id: format!("c{i}"),
                task: TaskKind::Persona,
                text: format!("w{i}"),
            })
            .collect();
        let d = Dialogue::from_sessions("d", vec![vec![(Role::User, "hello".into())]]);
        let ex = RetrievalExample {
            dialogue_id: "d".into(),
            query_turn: 0,
            task: TaskKind::Persona,
            positive_id: positive.into(),
            historical_ids: historical.into_iter().map(String::from).collect(),
        };
        Corpus::new(vec![d], cands, vec![ex]).unwrap()
    }

    fn ids(pool: &[&Candidate]) -> Vec<String> {
        pool.iter().map(|c| c.id.clone()).collect()
    }

    #[test]
    fn minimal_pool_without_history() {
        let c = corpus(10, vec![], "c3");
        let p = sample_pool(&c.examples()[0], &c, 2, 1).unwrap();
        assert_eq!(p.len(), 2);
        assert!(ids(&p).contains(&"c3".to_string()));
        assert_eq!(ids(&p), ids(&sample_pool(&c.examples()[0], &c, 2, 1).unwrap()));
    }

    #[test]
    fn historical_candidate_is_included() {
        let c = corpus(100, vec!["c7"], "c3");
        let p = ids(&sample_pool(&c.examples()[0], &c, 64, 9).unwrap());
        assert_eq!(p.len(), 64);
        assert!(p.contains(&"c3".into()) && p.contains(&"c7".into()));
    }

    #[test]
    fn historical_equal_to_positive_falls_back_to_random() {
        let c = corpus(100, vec!["c3"], "c3");
        let p = ids(&sample_pool(&c.examples()[0], &c, 2, 4).unwrap());
        assert_eq!(p.iter().filter(|i| *i == "c3").count(), 1);
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn capacity_and_size_errors() {
        let c = corpus(5, vec![], "c0");
        assert!(matches!(sample_pool(&c.examples()[0], &c, 6, 0), Err(Error::Capacity(_))));
        assert!(matches!(sample_pool(&c.examples()[0], &c, 1, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn pools_are_nested_across_sizes() {
        let c = corpus(300, vec!["c1", "c2"], "c0");
        let small: HashSet<String> = ids(&sample_pool(&c.examples()[0], &c, 8, 5).unwrap())
            .into_iter()
            .collect();
        let big: HashSet<String> = ids(&sample_pool(&c.examples()[0], &c, 256, 5).unwrap())
            .into_iter()
            .collect();
        assert!(small.is_subset(&big));
    }

    proptest! {
        #[test]
        fn no_duplicates_and_positive_once(n in 2usize..40, seed in any::<u64>(), pos in 0usize..40, h in proptest::option::of(0usize..40)) {
            let total = 40;
            let pos_id = format!("c{}", pos % total);
            let hist: Vec<String> = h.map(|h| format!("c{h}")).into_iter().collect();
            let c = corpus(total, hist.iter().map(String::as_str).collect(), &pos_id);
            let p = ids(&sample_pool(&c.examples()[0], &c, n, seed).unwrap());
            let set: HashSet<&String> = p.iter().collect();
            prop_assert_eq!(set.len(), n);
            prop_assert_eq!(p.iter().filter(|i| **i == pos_id).count(), 1);
            if let Some(semi) = c.examples()[0].semi_hard_id() {
                prop_assert!(p.iter().any(|i| i == semi));
            }
        }
    }
}
