//! Property tests over the codec, graph, and metrics invariants.

use std::collections::BTreeSet;

use proptest::prelude::*;
use topicpath_core::idgraph::{build_graph, edge_weight, sample_neighborhood, TopicStats};
use topicpath_core::metrics::{f1_report, level_distance};
use topicpath_core::taxonomy::{
    decode_topic_path, encode_topic_path, fixture_taxonomy, validate_partial_order,
    DisciplineTaxonomy, TopicPath,
};

fn arb_code_set() -> impl Strategy<Value = BTreeSet<String>> {
    let t = fixture_taxonomy();
    let codes: Vec<String> = t.disciplines().iter().map(|d| d.code.clone()).collect();
    proptest::sample::subsequence(codes, 1..6).prop_map(|v| v.into_iter().collect())
}

fn arb_label_paths(n: usize) -> impl Strategy<Value = Vec<TopicPath>> {
    proptest::collection::vec(arb_code_set(), n..=n).prop_map(|sets| {
        let t = fixture_taxonomy();
        sets.iter()
            .map(|s| encode_topic_path(s, &t).unwrap())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_round_trips(codes in arb_code_set()) {
        let t = fixture_taxonomy();
        let path = encode_topic_path(&codes, &t).unwrap();
        // decode returns the maximal codes: inputs that are prefixes of
        // other inputs are absorbed
        let decoded = decode_topic_path(&path, &t).unwrap();
        let maximal: BTreeSet<String> = codes
            .iter()
            .filter(|c| !codes.iter().any(|o| *o != **c && o.starts_with(*c)))
            .cloned()
            .collect();
        prop_assert_eq!(decoded.clone(), maximal);
        // a second round trip is exact
        let path2 = encode_topic_path(&decoded, &t).unwrap();
        prop_assert_eq!(decode_topic_path(&path2, &t).unwrap(), decoded);
    }

    #[test]
    fn encoded_paths_validate(codes in arb_code_set()) {
        let t = fixture_taxonomy();
        let path = encode_topic_path(&codes, &t).unwrap();
        prop_assert!(path.validate(&t).is_ok());
        // stop marker sits in the last set and only there
        let last = path.levels.len() - 1;
        prop_assert!(path.levels[last].stop);
        for set in &path.levels[..last] {
            prop_assert!(!set.stop);
        }
    }

    #[test]
    fn neighborhoods_grow_monotonically(
        edges in proptest::collection::vec((0u32..12, 0u32..12, 0.0f64..1.0), 1..50),
        hops in 0usize..4,
    ) {
        // build stats whose co-topic pairs mirror the random edge list
        let t = DisciplineTaxonomy::from_entries(
            (b'A'..=b'L').map(|c| ((c as char).to_string(), 1)),
        ).unwrap();
        let mut stats = TopicStats::new();
        for (i, (a, b, _)) in edges.iter().enumerate() {
            if a == b { continue; }
            let topic = format!("t{i}");
            stats.add(a + 1, &topic);
            stats.add(b + 1, &topic);
        }
        // every node needs at least one topic to exist in the graph
        for id in 1..=12u32 {
            stats.add(id, &format!("own{id}"));
        }
        let g = build_graph(&stats, &t, 0.5, 0.5).unwrap();
        let centrals: BTreeSet<u32> = [1u32].into_iter().collect();
        let small = sample_neighborhood(&g, &centrals, hops).unwrap();
        let large = sample_neighborhood(&g, &centrals, hops + 1).unwrap();
        let small_set: BTreeSet<u32> = small.members.iter().copied().collect();
        let large_set: BTreeSet<u32> = large.members.iter().copied().collect();
        prop_assert!(small_set.is_subset(&large_set));
    }

    #[test]
    fn edge_invariants_hold(
        counts_a in proptest::collection::vec(1u64..20, 1..8),
        counts_b in proptest::collection::vec(1u64..20, 1..8),
        overlap in 0usize..4,
    ) {
        let t = DisciplineTaxonomy::from_entries(
            [("A".to_string(), 1), ("B".to_string(), 1)],
        ).unwrap();
        let mut stats = TopicStats::new();
        for (i, c) in counts_a.iter().enumerate() {
            for _ in 0..*c { stats.add(1, &format!("a{i}")); }
        }
        for (i, c) in counts_b.iter().enumerate() {
            for _ in 0..*c { stats.add(2, &format!("b{i}")); }
        }
        for i in 0..overlap.min(counts_a.len()).min(counts_b.len()) {
            stats.add(1, &format!("shared{i}"));
            stats.add(2, &format!("shared{i}"));
        }
        let e = edge_weight(&stats, &t, 1, 2, 0.7, 0.3).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.p));
        prop_assert!((0.0..=1.0).contains(&e.d));
        prop_assert!(e.w >= 0.0);

        // adding one more citation of a shared topic never decreases p
        if overlap > 0 {
            let mut more = stats.clone();
            more.add(1, "shared0");
            let e2 = edge_weight(&more, &t, 1, 2, 0.7, 0.3).unwrap();
            prop_assert!(e2.p >= e.p - 1e-15);
        }

        // degenerate exponents force unit weight on existing co-topics
        if overlap > 0 {
            let unit = edge_weight(&stats, &t, 1, 2, 0.0, 0.0).unwrap();
            prop_assert_eq!(unit.w, 1.0);
        }
    }

    #[test]
    fn micro_f1_matches_brute_force(
        paths in arb_label_paths(6),
        other in arb_label_paths(6),
    ) {
        let t = fixture_taxonomy();
        let report = f1_report(&other, &paths, &t).unwrap();
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (p, y) in other.iter().zip(&paths) {
            for k in 1..=t.depth() as usize {
                let ps = p.level_labels(k);
                let ys = y.level_labels(k);
                tp += ps.intersection(&ys).count() as u64;
                fp += ps.difference(&ys).count() as u64;
                fn_ += ys.difference(&ps).count() as u64;
            }
        }
        let expected = if 2 * tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        prop_assert!((report.micro_f1 - expected).abs() < 1e-12);
    }

    #[test]
    fn level_distance_identity_and_superset(
        codes in proptest::sample::subsequence(
            vec!["C0101".to_string(), "C0102".to_string(), "F0101".to_string(),
                 "F0302".to_string(), "C0203".to_string()],
            1..4,
        ),
    ) {
        let t = fixture_taxonomy();
        let set: BTreeSet<String> = codes.into_iter().collect();
        prop_assert_eq!(level_distance(&set, &set, 3, &t).unwrap(), 0.0);
    }

    #[test]
    fn prefix_consistent_taxonomies_are_valid_orders(
        letters in 1usize..3,
        widths in proptest::collection::vec(1usize..4, 0..3),
    ) {
        let letter_set: Vec<char> = ('A'..).take(letters).collect();
        let t = topicpath_core::taxonomy::synthetic_taxonomy(&letter_set, &widths);
        prop_assert!(validate_partial_order(&t).is_empty());
    }
}
