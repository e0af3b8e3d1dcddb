mod common;

use std::collections::BTreeSet;

use common::oracle;
use common::random_graph;
use kbc_core::kb::EntityId;
use kbc_core::paths::{enumerate_shortest_paths, random_walk_sample, SamplerConfig, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uncapped(max_hops: usize) -> SamplerConfig {
    SamplerConfig {
        max_hops,
        max_paths_per_pair: usize::MAX,
        ..Default::default()
    }
}

pub fn enumeration_matches_exhaustive_dfs_on_random_graphs() {
    let mut queries = 0;
    let mut nonempty = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(5..=30);
        let m = rng.gen_range(n..=120.min(n * (n - 1)));
        let g = random_graph(seed, n, rng.gen_range(1..=5), m);
        let max_hops = if seed % 4 == 0 { 4 } else { 3 };
        let config = uncapped(max_hops);
        let rw = SamplerConfig {
            strategy: Strategy::RandomWalk,
            walks_per_pair: 50,
            seed,
            ..config.clone()
        };
        for _ in 0..10 {
            let h = EntityId(rng.gen_range(0..n) as u32);
            let t = EntityId(rng.gen_range(0..n) as u32);
            if h == t {
                continue;
            }
            queries += 1;
            let got: BTreeSet<_> = enumerate_shortest_paths(&g, h, t, &config)
                .unwrap()
                .paths
                .into_iter()
                .map(|p| p.hops)
                .collect();
            let want = oracle::hop_sequences(&g, h, t, max_hops);
            assert_eq!(got, want, "graph {seed}, query {h}->{t}");
            nonempty += usize::from(!want.is_empty());
            let walked = random_walk_sample(&g, h, t, &rw).unwrap();
            assert!(walked.paths.iter().all(|p| want.contains(&p.hops)), "graph {seed}");
        }
    }
    assert!(
        queries > 800 && nonempty > 200,
        "{queries} queries, {nonempty} with paths"
    );
}

pub fn enumeration_is_ordered_and_capped() {
    let g = random_graph(5, 12, 3, 50);
    let config = SamplerConfig {
        max_paths_per_pair: 5,
        ..Default::default()
    };
    for h in 0..12u32 {
        for t in 0..12u32 {
            if h == t {
                continue;
            }
            let set = enumerate_shortest_paths(&g, EntityId(h), EntityId(t), &config).unwrap();
            assert!(set.paths.len() <= 5);
            let keys: Vec<_> = set.paths.iter().map(|p| (p.len(), p.hops.clone())).collect();
            assert!(keys.windows(2).all(|w| w[0] < w[1]));
            let full = oracle::hop_sequences(&g, EntityId(h), EntityId(t), 3);
            assert_eq!(set.truncated, full.len() > 5);
            // Kept paths are the smallest under (length, hops).
            let mut all: Vec<_> = full.into_iter().map(|p| (p.len(), p)).collect();
            all.sort();
            all.truncate(5);
            assert_eq!(keys, all);
        }
    }
}

/// Each walk is an independent draw, so a hop sequence with per-walk
/// probability q appears in the sampled set with probability 1 - (1 - q)^W.
pub fn random_walk_inclusion_frequencies_match_walk_probabilities() {
    let g = random_graph(42, 8, 3, 14);
    let (h, t) = (0..8u32)
        .flat_map(|h| (0..8u32).map(move |t| (EntityId(h), EntityId(t))))
        .filter(|(h, t)| h != t)
        .max_by_key(|&(h, t)| oracle::hop_sequences(&g, h, t, 3).len())
        .unwrap();
    let probs = oracle::walk_probabilities(&g, h, t, 3);
    assert!(probs.len() >= 3, "query has {} paths", probs.len());
    let walks = 4;
    let trials = 4000;
    let mut counts = std::collections::BTreeMap::new();
    for seed in 0..trials {
        let config = SamplerConfig {
            strategy: Strategy::RandomWalk,
            walks_per_pair: walks,
            seed,
            ..Default::default()
        };
        for p in random_walk_sample(&g, h, t, &config).unwrap().paths {
            *counts.entry(p.hops).or_insert(0usize) += 1;
        }
    }
    for (hops, q) in &probs {
        let expected = 1.0 - (1.0 - q).powi(walks as i32);
        let observed = counts.get(hops).copied().unwrap_or(0) as f64 / trials as f64;
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!(
            (observed - expected).abs() <= 5.0 * sigma + 1e-3,
            "{hops:?}: observed {observed}, expected {expected}"
        );
    }
    assert!(counts.keys().all(|k| probs.contains_key(k)));
}

pub fn sampling_is_deterministic_per_query() {
    let g = random_graph(9, 20, 4, 80);
    let config = SamplerConfig {
        strategy: Strategy::RandomWalk,
        seed: 17,
        ..Default::default()
    };
    for t in 1..20u32 {
        let a = random_walk_sample(&g, EntityId(0), EntityId(t), &config).unwrap();
        let b = random_walk_sample(&g, EntityId(0), EntityId(t), &config).unwrap();
        assert_eq!(a, b);
    }
}

common::test_cases!(
    enumeration_matches_exhaustive_dfs_on_random_graphs,
    enumeration_is_ordered_and_capped,
    random_walk_inclusion_frequencies_match_walk_probabilities,
    sampling_is_deterministic_per_query
);
