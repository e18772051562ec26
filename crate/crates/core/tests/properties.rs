use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use proptest::prelude::*;

use compsplit::divergence::compound_divergence;
use compsplit::io::{parse_dataset, write_records, SplitManifest};
use compsplit::metrics::{dist_3, whitespace_tokenize, DistinctMode};
use compsplit::protocols::{
    acd_splits, fewshot_splits, holdout_splits, minimal_cover_count, AcdSearchConfig,
};
use compsplit::sampler::{allocate_records, LabeledRecord};
use compsplit::schema::{
    full_product, is_eligible_split, AttributeSchema, Combination, CombinationSet, Protocol, Split,
};

fn shape_strategy(max_product: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..=4, 2..=4).prop_filter("product bound", move |s| {
        s.iter().product::<usize>() <= max_product
    })
}

fn schema(shape: &[usize]) -> Arc<AttributeSchema> {
    Arc::new(AttributeSchema::from_shape(shape).unwrap())
}

/// Splits the full product by a membership mask (true = in-distribution).
fn partition(full: &CombinationSet, mask: &[bool]) -> (CombinationSet, CombinationSet) {
    let s = full.schema().clone();
    let (mut id, mut comp) = (CombinationSet::empty(s.clone()), CombinationSet::empty(s));
    for (c, &m) in full.iter().zip(mask.iter().cycle()) {
        if m {
            id.insert(c.clone()).unwrap();
        } else {
            comp.insert(c.clone()).unwrap();
        }
    }
    (id, comp)
}

/// Divergence computed from raw pair counts, with no shared code.
fn dense_divergence(id: &[Combination], comp: &[Combination], alpha: f64) -> f64 {
    let pairs = |set: &[Combination]| {
        let mut counts: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
        let mut total = 0.0;
        for c in set {
            let v = c.values();
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    *counts.entry((i, v[i], j, v[j])).or_default() += 1.0;
                    total += 1.0;
                }
            }
        }
        counts
            .into_iter()
            .map(|(k, n)| (k, n / total))
            .collect::<BTreeMap<_, _>>()
    };
    let (p, q) = (pairs(id), pairs(comp));
    let s: f64 = p
        .iter()
        .filter_map(|(k, &pk)| q.get(k).map(|&qk| pk.powf(alpha) * qk.powf(1.0 - alpha)))
        .sum();
    1.0 - s.clamp(0.0, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn eligibility_matches_clause_oracle(shape in shape_strategy(36), mask in prop::collection::vec(any::<bool>(), 1..40)) {
        let s = schema(&shape);
        let full = full_product(&s);
        let (id, comp) = partition(&full, &mask);
        let report = is_eligible_split(&full, &id, &comp).unwrap();
        let seen = |aspect: usize, value: usize| id.iter().any(|c| c.get(aspect) == value);
        let clause_c = comp.iter().all(|c| (0..shape.len()).all(|i| seen(i, c.get(i))));
        prop_assert_eq!(report.is_eligible(), clause_c);
        prop_assert!(report.failed_clauses().iter().all(|&c| c == 'c'));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn divergence_matches_dense_oracle(
        shape in shape_strategy(36),
        mask in prop::collection::vec(any::<bool>(), 2..40),
        alpha in 0.05f64..0.95,
    ) {
        let s = schema(&shape);
        let full = full_product(&s);
        let (id, comp) = partition(&full, &mask);
        prop_assume!(!id.is_empty() && !comp.is_empty());
        let d = compound_divergence(&id, &comp, alpha).unwrap();
        let idv: Vec<Combination> = id.iter().cloned().collect();
        let compv: Vec<Combination> = comp.iter().cloned().collect();
        prop_assert!((d - dense_divergence(&idv, &compv, alpha)).abs() < 1e-12);
    }

    #[test]
    fn divergence_invariant_under_relabeling(
        shape in shape_strategy(36),
        mask in prop::collection::vec(any::<bool>(), 2..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = schema(&shape);
        let full = full_product(&s);
        let (id, comp) = partition(&full, &mask);
        prop_assume!(!id.is_empty() && !comp.is_empty());
        let d = compound_divergence(&id, &comp, 0.5).unwrap();

        // permute aspect order and value labels within each aspect
        let mut order: Vec<usize> = (0..shape.len()).collect();
        order.shuffle(&mut rng);
        let relabel: Vec<Vec<usize>> = shape.iter().map(|&a| {
            let mut p: Vec<usize> = (0..a).collect();
            p.shuffle(&mut rng);
            p
        }).collect();
        let new_shape: Vec<usize> = order.iter().map(|&i| shape[i]).collect();
        let s2 = schema(&new_shape);
        let map = |set: &CombinationSet| {
            CombinationSet::new(s2.clone(), set.iter().map(|c| {
                Combination::new(order.iter().map(|&i| relabel[i][c.get(i)]).collect())
            })).unwrap()
        };
        let d2 = compound_divergence(&map(&id), &map(&comp), 0.5).unwrap();
        prop_assert!((d - d2).abs() < 1e-12);
    }

    #[test]
    fn holdout_single_combination_count_is_product(shape in shape_strategy(60)) {
        let s = schema(&shape);
        let bundle = holdout_splits(&full_product(&s), 1, 0.5).unwrap();
        prop_assert_eq!(bundle.len(), s.product_size());
    }

    #[test]
    fn infer_schema_is_order_insensitive(shape in shape_strategy(24), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let s = schema(&shape);
        let records: Vec<LabeledRecord> = full_product(&s).iter()
            .flat_map(|c| (0..2).map(move |i| LabeledRecord::new(c.clone(), format!("t{i}"))))
            .collect();
        let mut buf = Vec::new();
        write_records(&mut buf, &s, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled = lines.join("\n");
        let a = parse_dataset(text.as_bytes(), "a").unwrap();
        let b = parse_dataset(shuffled.as_bytes(), "b").unwrap();
        prop_assert_eq!(&a.schema, &b.schema);
        prop_assert_eq!(a.counts, b.counts);
        prop_assert_eq!(&*a.schema, &*s);
    }

    #[test]
    fn allocation_partitions_records(shape in shape_strategy(24), mask in prop::collection::vec(any::<bool>(), 1..24)) {
        let s = schema(&shape);
        let full = full_product(&s);
        let (id, comp) = partition(&full, &mask);
        let split = Split { protocol: Protocol::Random, id_set: id, comp_set: comp, divergence: None, seed: 0 };
        let records: Vec<LabeledRecord> = full.iter()
            .flat_map(|c| (0..3).map(move |i| LabeledRecord::new(c.clone(), format!("{c}{i}"))))
            .collect();
        let alloc = allocate_records(&records, &split).unwrap();
        let mut seen: Vec<String> = alloc.train.iter().chain(&alloc.id_test).chain(&alloc.comp_test).map(|r| r.text.clone()).collect();
        seen.sort();
        let mut all: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
        all.sort();
        prop_assert_eq!(seen, all);
        prop_assert!(alloc.comp_test.iter().all(|r| split.comp_set.contains(&r.combination)));
    }

    #[test]
    fn dist3_order_invariant_and_monotone(
        texts in prop::collection::vec(prop::collection::vec(0u8..4, 3..10), 1..8),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let toks: Vec<Vec<String>> = texts.iter()
            .map(|t| whitespace_tokenize(&t.iter().map(|x| format!("w{x}")).collect::<Vec<_>>().join(" ")))
            .collect();
        let base = dist_3(&toks, DistinctMode::Pooled).unwrap();
        let mut shuffled = toks.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(base, dist_3(&shuffled, DistinctMode::Pooled).unwrap());
        let mut grown = toks.clone();
        grown.push(toks[0][..3].to_vec());
        prop_assert!(dist_3(&grown, DistinctMode::Pooled).unwrap() <= base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn searched_splits_are_balanced_and_eligible(shape in shape_strategy(24), seed in any::<u64>()) {
        let s = schema(&shape);
        let full = full_product(&s);
        prop_assume!(full.len().is_multiple_of(2));
        let cfg = AcdSearchConfig { t1_restarts: 4, eta_threshold: 1e-9, rng_seed: seed, ..Default::default() };
        let bundle = acd_splits(&full, &cfg).unwrap();
        let mut ids = BTreeSet::new();
        for sp in &bundle.splits {
            prop_assert!(sp.is_balanced());
            prop_assert!(is_eligible_split(&full, &sp.id_set, &sp.comp_set).unwrap().is_eligible());
            prop_assert!(ids.insert(sp.id_set.members().clone()), "duplicate split");
            let m = SplitManifest::from_split(sp, &bundle.config);
            let json = m.to_json();
            let back: SplitManifest = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.to_json(), json);
        }
    }

    #[test]
    fn fewshot_covers_are_minimal_and_eligible(shape in shape_strategy(24)) {
        let s = schema(&shape);
        let full = full_product(&s);
        let bundle = fewshot_splits(&full, &AcdSearchConfig::default()).unwrap();
        prop_assert!(!bundle.is_empty());
        prop_assert!(minimal_cover_count(&s) >= bundle.len() as u128);
        let max_arity = *shape.iter().max().unwrap();
        for sp in &bundle.splits {
            prop_assert_eq!(sp.id_set.len(), max_arity);
            prop_assert!(is_eligible_split(&full, &sp.id_set, &sp.comp_set).unwrap().is_eligible());
        }
    }
}

#[test]
fn restart_time_scales_linearly() {
    let s = schema(&[2, 2, 5, 2]);
    let full = full_product(&s);
    let time = |t1: usize| {
        let cfg = AcdSearchConfig {
            t1_restarts: t1,
            eta_threshold: 1e-9,
            ..Default::default()
        };
        let mut runs: Vec<f64> = (0..3)
            .map(|_| {
                let start = Instant::now();
                acd_splits(&full, &cfg).unwrap();
                start.elapsed().as_secs_f64()
            })
            .collect();
        runs.sort_by(f64::total_cmp);
        runs[1]
    };
    let (one, two) = (time(16), time(32));
    assert!(
        two / one < 4.0,
        "doubling restarts took {:.2}x as long",
        two / one
    );
}
