use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use ctdgm_core::cache_sim::{simulate, Capacity, GroupIndex, Policy, SimConfig, SizeTable, Simulator};
use ctdgm_core::chunker::{chunk_all, ChunkerConfig};
use ctdgm_core::ctf::{build_ctf, distance, CtfVector};
use ctdgm_core::extractor::{extract_transactions, ExtractionMode, ExtractorConfig, TransactionExtractor};
use ctdgm_core::grouper::{
    count_cooccurrence, group_chunks, legal_relations, GroupMerger, GrouperConfig, SortOrder,
};
use ctdgm_core::locality::{related_pair_distance_histogram, relation_strength, AccessIndex};
use ctdgm_core::trace_io::{
    read_trace, split_trace, synthesize_trace, AccessRecord, LoadOptions, Op, PlantedGroup, SyntheticSpec, Trace,
};
use proptest::prelude::*;

fn arb_trace(max_len: usize, universe: u64) -> impl Strategy<Value = Trace> {
    (
        prop::collection::vec(0..universe, 1..max_len),
        prop::collection::vec(1u64..=16, universe as usize),
        prop::collection::vec(any::<bool>(), max_len),
    )
        .prop_map(|(addrs, sizes, writes)| {
            let records = addrs
                .iter()
                .enumerate()
                .map(|(i, &a)| AccessRecord {
                    timestamp: 1000 + i as u64 * 7,
                    block_address: a * 16,
                    size: sizes[a as usize],
                    op: if writes[i] { Op::Write } else { Op::Read },
                })
                .collect();
            Trace::new(records, "prop")
        })
}

fn arb_mode() -> impl Strategy<Value = ExtractionMode> {
    prop_oneof![Just(ExtractionMode::Snapshot), Just(ExtractionMode::Cumulative)]
}

fn arb_vector(dim: usize) -> impl Strategy<Value = CtfVector> {
    prop::collection::btree_set(0..dim as u32, 0..=dim)
        .prop_map(move |s| CtfVector::new(dim, s.into_iter().collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_roundtrip(trace in arb_trace(60, 20)) {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = read_trace(buf.as_slice(), "prop", &LoadOptions::default()).unwrap().trace;
        prop_assert_eq!(back.records, trace.records);
    }

    #[test]
    fn split_is_a_partition(trace in arb_trace(60, 20), cut in 0.0f64..1.0) {
        prop_assume!(trace.len() >= 2);
        let k = 1 + (cut * (trace.len() - 1) as f64) as usize;
        prop_assume!(k < trace.len());
        let (a, b) = split_trace(&trace, k).unwrap();
        prop_assert_eq!(a.len() + b.len(), trace.len());
        let joined: Vec<_> = a.records.iter().chain(&b.records).cloned().collect();
        prop_assert_eq!(joined, trace.records);
    }

    #[test]
    fn synthesis_is_pure(seed in any::<u64>(), zipf in 0.0f64..1.5) {
        let spec = SyntheticSpec {
            num_data: 50,
            num_accesses: 300,
            group_structure: vec![PlantedGroup { size: 3, intra_probability: 1.0 }],
            zipf_exponent: zipf,
            rng_seed: seed,
            ..Default::default()
        };
        let a = synthesize_trace(&spec).unwrap();
        let b = synthesize_trace(&spec).unwrap();
        prop_assert_eq!(a.trace.records, b.trace.records);
        prop_assert_eq!(a.planted, b.planted);
    }

    #[test]
    fn snapshot_members_were_resident(trace in arb_trace(150, 30), m in 4u64..=32) {
        let mut ex = TransactionExtractor::new(ExtractorConfig::new(m, ExtractionMode::Snapshot).unwrap()).unwrap();
        for r in &trace.records {
            let mut resident: HashSet<u64> = ex.window_state().entries.iter().map(|e| e.0).collect();
            resident.insert(r.block_address);
            if ex.push(r.block_address, r.size) {
                let t = ex.emitted().last().unwrap();
                let distinct: HashSet<u64> = t.members.iter().copied().collect();
                prop_assert_eq!(distinct.len(), t.members.len());
                prop_assert!(distinct.is_subset(&resident));
            }
        }
    }

    #[test]
    fn cumulative_covers_every_address(trace in arb_trace(150, 30), m in 4u64..=32) {
        let log = extract_transactions(&trace, ExtractorConfig::new(m, ExtractionMode::Cumulative).unwrap()).unwrap();
        let covered: HashSet<u64> = log.for_features(true).iter().flat_map(|t| t.members.iter().copied()).collect();
        let accessed: HashSet<u64> = trace.records.iter().map(|r| r.block_address).collect();
        prop_assert_eq!(covered, accessed);
    }

    #[test]
    fn ctf_inverts_transactions(trace in arb_trace(150, 30), m in 4u64..=32, mode in arb_mode(), partial in any::<bool>()) {
        let log = extract_transactions(&trace, ExtractorConfig::new(m, mode).unwrap()).unwrap();
        let txns = log.for_features(partial);
        let matrix = build_ctf(txns.iter().copied());
        let rebuilt = matrix.reconstruct_transactions();
        prop_assert_eq!(rebuilt.len(), txns.len());
        for (t, r) in txns.iter().zip(&rebuilt) {
            let mut expected = t.members.clone();
            expected.sort_unstable();
            prop_assert_eq!(&expected, r);
        }
    }

    #[test]
    fn distance_is_a_metric(
        (x, y, z) in (1usize..24).prop_flat_map(|d| (arb_vector(d), arb_vector(d), arb_vector(d)))
    ) {
        let dxy = distance(&x, &y).unwrap();
        prop_assert_eq!(dxy == 0, x == y);
        prop_assert_eq!(dxy, distance(&y, &x).unwrap());
        prop_assert!(distance(&x, &z).unwrap() <= dxy + distance(&y, &z).unwrap());
    }

    #[test]
    fn strength_bounds(seqs in prop::collection::vec(0u64..6, 1..80)) {
        let mut by: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, &a) in seqs.iter().enumerate() {
            by.entry(a).or_default().push(i);
        }
        let index = AccessIndex::from_sequences(by.clone());
        for (&x, xs) in &by {
            prop_assert_eq!(relation_strength(&index, x, x).unwrap(), 0.0);
            for (&y, ys) in &by {
                let w = relation_strength(&index, x, y).unwrap();
                let worst = xs
                    .iter()
                    .map(|&s| ys.iter().map(|&t| s.abs_diff(t)).min().unwrap())
                    .max()
                    .unwrap();
                prop_assert!(w >= 0.0 && w <= worst as f64);
            }
        }
    }

    #[test]
    fn histogram_mass_matches_pairs(trace in arb_trace(200, 8), min_occ in 1usize..4) {
        let h = related_pair_distance_histogram(&trace, min_occ);
        prop_assert_eq!(h.total(), h.pairs.len());
        prop_assert_eq!(h.buckets.iter().map(|b| b.count).sum::<usize>(), h.pairs.len());
    }

    #[test]
    fn chunks_partition_and_respect_areas(
        trace in arb_trace(200, 40),
        m in 4u64..=32,
        q in 1u32..6,
        sigma in 0.0f64..=1.0,
    ) {
        let log = extract_transactions(&trace, ExtractorConfig::new(m, ExtractionMode::Cumulative).unwrap()).unwrap();
        let matrix = build_ctf(log.for_features(true));
        let cfg = ChunkerConfig { q, sigma, ..Default::default() };
        let chunks = chunk_all(&matrix, &cfg, None).unwrap();
        let mut seen = HashSet::new();
        for c in &chunks.chunks {
            for &a in &c.members {
                prop_assert!(seen.insert(a));
                prop_assert_eq!(chunks.chunk_of(a), Some(c.id));
                let key = cfg.area_key(a, matrix.get(a).unwrap().bits().len(), chunks.max_address);
                prop_assert_eq!(key, Some(c.area));
            }
        }
        prop_assert_eq!(seen.len(), matrix.len());
        prop_assert!(chunks.verify_audit(&matrix).is_ok());
    }

    #[test]
    fn grouping_invariants(
        trace in arb_trace(200, 40),
        m in 4u64..=32,
        alpha in 0.0f64..=1.0,
        mu in 0.0f64..=1.0,
        ascending in any::<bool>(),
    ) {
        let log = extract_transactions(&trace, ExtractorConfig::new(m, ExtractionMode::Cumulative).unwrap()).unwrap();
        let txns = log.for_features(true);
        let matrix = build_ctf(txns.iter().copied());
        let chunks = chunk_all(&matrix, &ChunkerConfig { q: 2, sigma: 0.3, ..Default::default() }, None).unwrap();
        let order = if ascending { SortOrder::Ascending } else { SortOrder::Descending };
        let cfg = GrouperConfig { alpha, mu, order };
        let g = group_chunks(&txns, &chunks, &cfg).unwrap();
        prop_assert!(g.is_partition());
        prop_assert_eq!(g.membership().len(), matrix.len());
        prop_assert!(g.verify_audit().is_ok());
        prop_assert_eq!(&g, &group_chunks(&txns, &chunks, &cfg).unwrap());

        let counts = count_cooccurrence(&txns, |a| chunks.chunk_of(a), chunks.len()).unwrap();
        let mut merger = GroupMerger::new(chunks.len(), mu);
        for r in legal_relations(&counts, alpha, order) {
            merger.process(&r);
            prop_assert!(merger.conservation_holds());
        }
    }

    #[test]
    fn cache_accounting(
        trace in arb_trace(200, 30),
        cap in 1u64..200,
        policy in prop::sample::select(Policy::ALL.to_vec()),
        groups in prop::collection::vec(prop::collection::vec(0u64..30, 1..5), 0..6),
    ) {
        let mut used = HashSet::new();
        let groups: Vec<Vec<u64>> = groups
            .into_iter()
            .map(|g| g.into_iter().map(|a| a * 16).filter(|a| used.insert(*a)).collect::<Vec<_>>())
            .filter(|g| !g.is_empty())
            .collect();
        let cfg = SimConfig::new(Capacity::Bytes(cap), policy).with_grouping(Arc::new(GroupIndex::new(groups)));
        let sizes = SizeTable::from_trace(&trace);
        let mut sim = Simulator::new(&cfg, &sizes).unwrap();
        for r in &trace.records {
            sim.access(r);
            prop_assert!(sim.occupied() <= sim.capacity());
        }
        let m = sim.metrics();
        prop_assert_eq!(m.hits + m.misses, m.accesses);
        prop_assert!((0.0..=1.0).contains(&m.hit_rate));
        if matches!(policy, Policy::Lru | Policy::Fifo) {
            prop_assert_eq!(m.disk_ios, m.misses);
        }
        prop_assert_eq!(&m, &simulate(&trace, &cfg, &sizes).unwrap());
    }

    #[test]
    fn unbounded_cache_sees_only_cold_misses(trace in arb_trace(200, 30), policy in prop::sample::select(Policy::ALL.to_vec())) {
        let sizes = SizeTable::from_trace(&trace);
        let distinct = trace.records.iter().map(|r| r.block_address).collect::<HashSet<_>>().len() as u64;
        let cfg = SimConfig::new(Capacity::Bytes(sizes.unique_bytes()), policy)
            .with_grouping(Arc::new(GroupIndex::default()));
        let m = simulate(&trace, &cfg, &sizes).unwrap();
        prop_assert_eq!(m.misses, distinct);
        prop_assert_eq!(m.evictions, 0);
    }
}

#[test]
fn merged_fetch_never_costs_more_than_lru_misses() {
    for seed in 0..20 {
        let spec = SyntheticSpec {
            num_data: 80,
            num_accesses: 3000,
            group_structure: vec![
                PlantedGroup { size: 4, intra_probability: 1.0 },
                PlantedGroup { size: 4, intra_probability: 1.0 },
                PlantedGroup { size: 3, intra_probability: 0.7 },
            ]
            .into_iter()
            .cycle()
            .take(18)
            .collect(),
            zipf_exponent: 0.8,
            rng_seed: seed,
            ..Default::default()
        };
        let syn = synthesize_trace(&spec).unwrap();
        let covered: HashSet<u64> = syn.planted.iter().flatten().copied().collect();
        let mut groups = syn.planted.clone();
        for r in &syn.trace.records {
            if !covered.contains(&r.block_address) && !groups.iter().any(|g| g == &[r.block_address]) {
                groups.push(vec![r.block_address]);
            }
        }
        let sizes = SizeTable::from_trace(&syn.trace);
        let index = Arc::new(GroupIndex::new(groups));
        for fraction in [0.05, 0.1, 0.25, 0.5] {
            let lru = simulate(&syn.trace, &SimConfig::new(Capacity::Fraction(fraction), Policy::Lru), &sizes).unwrap();
            let merged = simulate(
                &syn.trace,
                &SimConfig::new(Capacity::Fraction(fraction), Policy::GroupMerged).with_grouping(index.clone()),
                &sizes,
            )
            .unwrap();
            assert!(merged.disk_ios <= lru.misses, "seed {seed} fraction {fraction}: {} > {}", merged.disk_ios, lru.misses);
        }
    }
}

#[test]
fn unbounded_group_policies_miss_once_per_group() {
    let trace = Trace::new(
        [1u64, 2, 3, 1, 4, 2, 5]
            .iter()
            .map(|&a| AccessRecord { timestamp: 0, block_address: a, size: 1, op: Op::Read })
            .collect(),
        "t",
    );
    let sizes = SizeTable::from_trace(&trace);
    let index = Arc::new(GroupIndex::new(vec![vec![1, 2], vec![3, 4, 5]]));
    for policy in [Policy::GroupPrefetch, Policy::GroupMerged] {
        let cfg = SimConfig::new(Capacity::Bytes(sizes.unique_bytes()), policy).with_grouping(index.clone());
        assert_eq!(simulate(&trace, &cfg, &sizes).unwrap().misses, 2);
    }
}

/// Under a window of M bytes a datum of size M/2 leaves room for far fewer
/// companions than a unit-size datum does.
#[test]
fn larger_data_cooccur_with_fewer_data() {
    let m = 64u64;
    let big = 1_000_000u64;
    let mut rng_state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        rng_state ^= rng_state << 13;
        rng_state ^= rng_state >> 7;
        rng_state ^= rng_state << 17;
        rng_state
    };
    let records: Vec<AccessRecord> = (0..20_000)
        .map(|i| {
            let pick = next() % 200;
            let (addr, size) = if pick == 0 { (big, m / 2) } else { (pick, 1) };
            AccessRecord { timestamp: i, block_address: addr, size, op: Op::Read }
        })
        .collect();
    let trace = Trace::new(records, "sizes");
    for mode in [ExtractionMode::Cumulative, ExtractionMode::Snapshot] {
        let log = extract_transactions(&trace, ExtractorConfig::new(m, mode).unwrap()).unwrap();
        let mut co: HashMap<u64, (usize, usize)> = HashMap::new();
        for t in &log.transactions {
            for &a in &t.members {
                let e = co.entry(a).or_default();
                e.0 += t.members.len() - 1;
                e.1 += 1;
            }
        }
        let mean = |(s, n): (usize, usize)| s as f64 / n as f64;
        let big_mean = mean(co[&big]);
        let small: Vec<f64> = co.iter().filter(|(a, _)| **a != big).map(|(_, &v)| mean(v)).collect();
        let small_mean = small.iter().sum::<f64>() / small.len() as f64;
        assert!(big_mean < small_mean, "{mode}: {big_mean} vs {small_mean}");
    }
}
