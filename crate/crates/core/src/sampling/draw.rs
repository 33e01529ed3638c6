use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BatchDraw, Partition, SourceTag};
use crate::error::{Error, Result};

/// Partial Fisher-Yates over `pool`: the first `k` entries after the call are
/// a uniform `k`-subset in uniform order.
fn partial_shuffle(pool: &mut [usize], k: usize, rng: &mut impl Rng) {
    let n = pool.len();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
}

pub fn srs_draw_with(n_total: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<BatchDraw> {
    if m == 0 || m > n_total {
        return Err(Error::domain(format!("cannot draw {m} distinct rows from {n_total}")));
    }
    let mut pool: Vec<usize> = (0..n_total).collect();
    partial_shuffle(&mut pool, m, rng);
    pool.truncate(m);
    Ok(BatchDraw {
        indices: pool,
        source_tags: vec![SourceTag::Srs; m],
    })
}

/// `m` distinct indices from `0..n_total`, every subset equally likely.
pub fn srs_draw(n_total: usize, m: usize, seed: u64) -> Result<BatchDraw> {
    srs_draw_with(n_total, m, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `n1` rows from `H` then `n2` rows from `L`, consuming the generator in that
/// order. With `H = 0..N` and `n2 = 0` this is the same draw as
/// [`srs_draw_with`] on the same generator.
pub fn typicality_draw_with(partition: &Partition, rng: &mut ChaCha8Rng) -> Result<BatchDraw> {
    let (h, l) = (&partition.h_indices, &partition.l_indices);
    if partition.n1 > h.len() || partition.n2 > l.len() {
        return Err(Error::domain(format!(
            "sub-batches ({}, {}) exceed strata ({}, {})",
            partition.n1,
            partition.n2,
            h.len(),
            l.len()
        )));
    }
    let mut indices = Vec::with_capacity(partition.n1 + partition.n2);
    let mut tags = Vec::with_capacity(partition.n1 + partition.n2);
    for (stratum, k, tag) in [(h, partition.n1, SourceTag::H), (l, partition.n2, SourceTag::L)] {
        let mut pool = stratum.clone();
        partial_shuffle(&mut pool, k, rng);
        indices.extend_from_slice(&pool[..k]);
        tags.extend(std::iter::repeat_n(tag, k));
    }
    Ok(BatchDraw {
        indices,
        source_tags: tags,
    })
}

pub fn typicality_draw(partition: &Partition, seed: u64) -> Result<BatchDraw> {
    typicality_draw_with(partition, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeSet, HashMap};

    #[test]
    fn full_size_draw_is_the_whole_index_set() {
        let d = srs_draw(5, 5, 3).unwrap();
        let set: BTreeSet<usize> = d.indices.iter().copied().collect();
        assert_eq!(set, (0..5).collect());
    }

    #[test]
    fn srs_rejects_oversized_batch() {
        assert!(matches!(srs_draw(3, 4, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn srs_is_seeded() {
        assert_eq!(srs_draw(100, 10, 42).unwrap(), srs_draw(100, 10, 42).unwrap());
        assert_ne!(srs_draw(100, 10, 42).unwrap(), srs_draw(100, 10, 43).unwrap());
    }

    #[test]
    fn srs_draws_are_distinct() {
        let d = srs_draw(50, 30, 1).unwrap();
        let set: BTreeSet<usize> = d.indices.iter().copied().collect();
        assert_eq!(set.len(), 30);
    }

    #[test]
    fn srs_subsets_equiprobable() {
        // 6 subsets of size 2 from 4; each expected 1/6
        let draws = 60_000;
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for seed in 0..draws {
            let d = srs_draw(4, 2, seed).unwrap();
            let (a, b) = (d.indices[0].min(d.indices[1]), d.indices[0].max(d.indices[1]));
            *counts.entry((a, b)).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (pair, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 6.0).abs() < 0.01, "{pair:?}: {freq}");
        }
    }

    #[test]
    fn typicality_pairs_equiprobable() {
        let p = Partition::new(vec![0, 1], vec![2, 3], 1, 1).unwrap();
        let draws = 40_000;
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for seed in 0..draws {
            let d = typicality_draw(&p, seed).unwrap();
            assert_eq!(d.source_tags, vec![SourceTag::H, SourceTag::L]);
            *counts.entry((d.indices[0], d.indices[1])).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        for (pair, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.01, "{pair:?}: {freq}");
        }
    }

    #[test]
    fn n2_zero_draws_only_from_h() {
        let p = Partition::new(vec![1, 3, 5], vec![0, 2, 4], 2, 0).unwrap();
        for seed in 0..50 {
            let d = typicality_draw(&p, seed).unwrap();
            assert!(d.indices.iter().all(|i| [1, 3, 5].contains(i)));
            assert!(d.source_tags.iter().all(|&t| t == SourceTag::H));
        }
    }

    #[test]
    fn full_strata_draw_is_the_population() {
        let p = Partition::new(vec![0, 2], vec![1, 3, 4], 2, 3).unwrap();
        let a: BTreeSet<usize> = typicality_draw(&p, 1).unwrap().indices.into_iter().collect();
        let b: BTreeSet<usize> = typicality_draw(&p, 2).unwrap().indices.into_iter().collect();
        assert_eq!(a, (0..5).collect());
        assert_eq!(a, b);
    }

    #[test]
    fn whole_set_h_matches_srs_on_same_seed() {
        let p = Partition::new((0..10).collect(), vec![], 4, 0).unwrap();
        for seed in 0..20 {
            assert_eq!(
                typicality_draw(&p, seed).unwrap().indices,
                srs_draw(10, 4, seed).unwrap().indices
            );
        }
    }
}
