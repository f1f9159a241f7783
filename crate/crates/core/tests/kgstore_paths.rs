use std::collections::{BTreeMap, BTreeSet};

use molrag_core::chem::FingerprintParams;
use molrag_core::kgstore::{
    ingest_records, top_k_related, two_hop_paths, EntityKind, KnowledgeGraph, TripletRecord,
    TwoHopPath,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct RandomGraph {
    kinds: Vec<EntityKind>,
    triplets: Vec<(usize, usize, usize)>,
}

const RELATIONS: [&str; 4] = ["target", "carrier", "indication", "associated_with"];

fn random_graph() -> impl Strategy<Value = RandomGraph> {
    (2usize..=30)
        .prop_flat_map(|n| {
            let kinds = proptest::collection::vec(
                prop_oneof![
                    3 => Just(EntityKind::Drug),
                    2 => Just(EntityKind::GeneProtein),
                    1 => Just(EntityKind::Disease),
                    1 => Just(EntityKind::EffectPhenotype),
                    1 => Just(EntityKind::Pathway),
                    1 => Just(EntityKind::Anatomy),
                ],
                n,
            );
            let triplets = proptest::collection::vec((0..n, 0..RELATIONS.len(), 0..n), 1..=120);
            (kinds, triplets)
        })
        .prop_map(|(kinds, triplets)| RandomGraph { kinds, triplets })
}

fn id(i: usize) -> String {
    format!("E{i:02}")
}

fn build(g: &RandomGraph) -> KnowledgeGraph {
    let records = g.triplets.iter().map(|&(h, r, t)| TripletRecord {
        head_id: id(h),
        head_kind: g.kinds[h].label().into(),
        head_name: id(h),
        relation: RELATIONS[r].into(),
        tail_id: id(t),
        tail_kind: g.kinds[t].label().into(),
        tail_name: id(t),
        head_smiles: None,
        tail_smiles: None,
    });
    ingest_records(records, FingerprintParams::default()).unwrap().0
}

/// Double loop over the undirected, deduplicated triplet list.
fn brute_force(g: &RandomGraph, anchor: usize) -> Vec<TwoHopPath> {
    let edges: BTreeSet<(usize, usize, usize)> = g
        .triplets
        .iter()
        .filter(|&&(h, _, t)| h != t)
        .map(|&(h, r, t)| (h.min(t), r, h.max(t)))
        .collect();
    let other = |e: &(usize, usize, usize), x: usize| {
        if e.0 == x {
            Some(e.2)
        } else if e.2 == x {
            Some(e.0)
        } else {
            None
        }
    };
    let mut out = BTreeSet::new();
    for e1 in &edges {
        let Some(mid) = other(e1, anchor) else { continue };
        if !matches!(
            g.kinds[mid],
            EntityKind::GeneProtein | EntityKind::EffectPhenotype | EntityKind::Disease
        ) {
            continue;
        }
        for e2 in &edges {
            let Some(drug) = other(e2, mid) else { continue };
            if drug == anchor || g.kinds[drug] != EntityKind::Drug {
                continue;
            }
            out.insert((id(drug), id(mid), RELATIONS[e1.1], RELATIONS[e2.1]));
        }
    }
    out.into_iter()
        .map(|(drug, mid, rel1, rel2)| TwoHopPath {
            anchor: id(anchor),
            rel1: rel1.into(),
            mid,
            rel2: rel2.into(),
            drug,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn two_hop_paths_match_brute_force(g in random_graph()) {
        let kg = build(&g);
        for anchor in 0..g.kinds.len() {
            if g.kinds[anchor] != EntityKind::Drug || kg.entity(&id(anchor)).is_none() {
                continue;
            }
            let paths = two_hop_paths(&kg, &id(anchor)).unwrap();
            prop_assert_eq!(&paths, &brute_force(&g, anchor));
            for p in &paths {
                prop_assert!(kg.entity(&p.mid).unwrap().kind.bridges_drugs());
                prop_assert_ne!(&p.drug, &p.anchor);
            }

            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for p in &paths {
                *counts.entry(p.drug.as_str()).or_default() += 1;
            }
            let ranked = top_k_related(&paths, usize::MAX);
            prop_assert_eq!(ranked.len(), counts.len());
            for (drug, count) in &ranked {
                prop_assert_eq!(counts[drug.as_str()], *count);
            }
            for pair in ranked.windows(2) {
                prop_assert!(pair[0].1 > pair[1].1 || (pair[0].1 == pair[1].1 && pair[0].0 < pair[1].0));
            }
            prop_assert_eq!(top_k_related(&paths, 5), ranked.into_iter().take(5).collect::<Vec<_>>());
        }
    }

    #[test]
    fn snapshot_is_a_fixed_point(g in random_graph()) {
        let kg = build(&g);
        let dir = tempfile::tempdir().unwrap();
        kg.write_snapshot(dir.path()).unwrap();
        let back = KnowledgeGraph::load_snapshot(dir.path()).unwrap();
        prop_assert_eq!(back.report(), kg.report());
        for e in kg.entities() {
            prop_assert_eq!(back.neighbors(&e.id), kg.neighbors(&e.id));
        }
    }
}
