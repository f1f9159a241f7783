//! Fingerprints and atom/bond counts checked against values frozen from a
//! reference cheminformatics toolkit (see fixtures/gen_ecfp_reference.py).

use molrag_core::chem::{environment_ids, morgan_fingerprint, parse_smiles, tanimoto};

struct Row {
    set: String,
    name: String,
    smiles: String,
    atoms: usize,
    bonds: usize,
    bits: u32,
    ids: Vec<Vec<u32>>,
}

fn rows() -> Vec<Row> {
    let text = include_str!("fixtures/ecfp_reference.tsv");
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            let ids = f[6..10]
                .iter()
                .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
                .collect();
            Row {
                set: f[0].to_string(),
                name: f[1].to_string(),
                smiles: f[2].to_string(),
                atoms: f[3].parse().unwrap(),
                bonds: f[4].parse().unwrap(),
                bits: f[5].parse().unwrap(),
                ids,
            }
        })
        .collect()
}

#[test]
fn environment_ids_match_reference() {
    let mut failures = Vec::new();
    for row in rows() {
        let g = parse_smiles(&row.smiles).unwrap();
        if g.atom_count() != row.atoms || g.bond_count() != row.bonds {
            failures.push(format!("{}: counts {} {}", row.name, g.atom_count(), g.bond_count()));
            continue;
        }
        for radius in 0..4u32 {
            let ids = environment_ids(&g, radius);
            if ids != row.ids[radius as usize] {
                failures.push(format!("{} r{radius}: got {:?} want {:?}", row.name, ids, row.ids[radius as usize]));
            }
        }
        let fp = morgan_fingerprint(&g, 2, 2048).unwrap();
        if fp.count_ones() != row.bits {
            failures.push(format!("{}: bits {} want {}", row.name, fp.count_ones(), row.bits));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn pairwise_tanimoto_matches_reference() {
    let fps: std::collections::HashMap<String, _> = rows()
        .into_iter()
        .filter(|r| r.set == "core")
        .map(|r| (r.name, morgan_fingerprint(&parse_smiles(&r.smiles).unwrap(), 2, 2048).unwrap()))
        .collect();
    let text = include_str!("fixtures/tanimoto_reference.tsv");
    let mut pairs = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let want: f64 = f[2].parse().unwrap();
        let got = tanimoto(&fps[f[0]], &fps[f[1]]).unwrap();
        assert!((got - want).abs() < 1e-9, "{} {}: {got} vs {want}", f[0], f[1]);
        pairs += 1;
    }
    assert_eq!(pairs, 190);
}
