//! Circular (Morgan/ECFP) fingerprints and Tanimoto similarity.
//!
//! Atom invariants are the connectivity invariants (atomic number, total
//! degree, total hydrogens, formal charge, mass delta, ring membership),
//! combined with a 32-bit `hash_combine` mixer. Each iteration hashes the
//! sorted (bond type, neighbor invariant) pairs; environments that cover a
//! bond set already seen are dropped. The bit for an environment is its
//! identifier modulo the width, so fingerprints agree bit-for-bit with the
//! common open-source ECFP implementation for the same graph.

use serde::{Deserialize, Serialize};

use super::graph::MolecularGraph;
use super::ChemError;

pub const DEFAULT_RADIUS: u32 = 2;
pub const DEFAULT_WIDTH: usize = 2048;

const GOLDEN: u32 = 0x9e37_79b9;

#[inline]
fn hash_combine(seed: &mut u32, value: u32) {
    *seed ^= value
        .wrapping_add(GOLDEN)
        .wrapping_add(*seed << 6)
        .wrapping_add(*seed >> 2);
}

fn hash_values(values: &[u32]) -> u32 {
    let mut seed = 0;
    for &v in values {
        hash_combine(&mut seed, v);
    }
    seed
}

/// Fixed-width bitset over environment identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    width: usize,
    radius: u32,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty(width: usize, radius: u32) -> Result<Self, ChemError> {
        if !width.is_power_of_two() || width < 64 {
            return Err(ChemError::InvalidWidth(width));
        }
        Ok(Fingerprint {
            width,
            radius,
            words: vec![0; width / 64],
        })
    }

    /// Builds a fingerprint with the given bits set.
    pub fn from_bits(
        width: usize,
        radius: u32,
        bits: impl IntoIterator<Item = usize>,
    ) -> Result<Self, ChemError> {
        let mut fp = Fingerprint::empty(width, radius)?;
        for bit in bits {
            if bit >= width {
                return Err(ChemError::BitOutOfRange { bit, width });
            }
            fp.set(bit);
        }
        Ok(fp)
    }

    fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn contains(&self, bit: usize) -> bool {
        bit < self.width && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(move |&b| self.contains(b))
    }

    pub fn intersection_count(&self, other: &Fingerprint) -> Result<u32, ChemError> {
        self.check_width(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum())
    }

    fn check_width(&self, other: &Fingerprint) -> Result<(), ChemError> {
        if self.width != other.width {
            return Err(ChemError::WidthMismatch {
                left: self.width,
                right: other.width,
            });
        }
        Ok(())
    }

    /// Lowercase hex of the words, least significant word first.
    pub fn to_hex(&self) -> String {
        self.words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn from_hex(hex: &str, radius: u32) -> Result<Self, ChemError> {
        let bytes = hex::decode(hex).map_err(|e| ChemError::InvalidGraph(e.to_string()))?;
        let width = bytes.len() * 8;
        let mut fp = Fingerprint::empty(width, radius)?;
        for (i, chunk) in bytes.chunks(8).enumerate() {
            fp.words[i] = u64::from_le_bytes(chunk.try_into().expect("8-byte chunks"));
        }
        Ok(fp)
    }
}

/// |A∩B| / |A∪B|; 0.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    a.check_width(b)?;
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(f64::from(inter) / f64::from(union))
}

fn atom_invariants(graph: &MolecularGraph) -> Vec<u32> {
    (0..graph.atom_count())
        .map(|i| {
            let atom = &graph.atoms()[i];
            let hydrogens = u32::from(atom.implicit_h);
            // mass numbers stand in for exact isotopic masses
            let delta_mass = atom
                .isotope
                .map(|iso| (f64::from(iso) - atom.element.average_weight()) as i32)
                .unwrap_or(0);
            let mut components = vec![
                u32::from(atom.element.atomic_number()),
                graph.degree(i) as u32 + hydrogens,
                hydrogens,
                atom.charge as i32 as u32,
                delta_mass as u32,
            ];
            if graph.is_ring_atom(i) {
                components.push(1);
            }
            hash_values(&components)
        })
        .collect()
}

/// Unfolded environment identifiers, one per retained (atom, iteration)
/// environment, sorted and deduplicated.
pub fn environment_ids(graph: &MolecularGraph, radius: u32) -> Vec<u32> {
    let n = graph.atom_count();
    let n_bonds = graph.bond_count();
    let words = n_bonds.div_ceil(64).max(1);
    let mut ids = Vec::new();

    let mut invariants = atom_invariants(graph);
    ids.extend_from_slice(&invariants);

    let mut neighborhoods: Vec<Vec<u64>> = vec![vec![0; words]; n];
    let mut seen: Vec<Vec<u64>> = Vec::new();
    let mut dead = vec![false; n];

    for layer in 0..radius {
        let mut round_invariants = vec![0u32; n];
        let mut round_neighborhoods = neighborhoods.clone();
        let mut this_round: Vec<(Vec<u64>, u32, usize)> = Vec::new();
        for atom in 0..n {
            if dead[atom] {
                continue;
            }
            if graph.degree(atom) == 0 {
                dead[atom] = true;
                continue;
            }
            let mut nbrs: Vec<(u32, u32)> = Vec::with_capacity(graph.degree(atom));
            for &(other, bond) in graph.neighbors(atom) {
                round_neighborhoods[atom][bond / 64] |= 1 << (bond % 64);
                for w in 0..words {
                    round_neighborhoods[atom][w] |= neighborhoods[other][w];
                }
                nbrs.push((graph.bonds()[bond].order.type_code(), invariants[other]));
            }
            nbrs.sort_unstable();
            let mut invariant = layer;
            hash_combine(&mut invariant, invariants[atom]);
            for (bond_type, nbr_invariant) in nbrs {
                hash_combine(&mut invariant, hash_values(&[bond_type, nbr_invariant]));
            }
            round_invariants[atom] = invariant;
            this_round.push((round_neighborhoods[atom].clone(), invariant, atom));
        }
        this_round.sort();
        for (hood, invariant, atom) in this_round {
            if seen.contains(&hood) {
                dead[atom] = true;
            } else {
                ids.push(invariant);
                seen.push(hood);
            }
        }
        invariants = round_invariants;
        neighborhoods = round_neighborhoods;
    }
    ids.sort_unstable();
    ids.dedup();
    ids
}

pub fn morgan_fingerprint(
    graph: &MolecularGraph,
    radius: u32,
    width: usize,
) -> Result<Fingerprint, ChemError> {
    let mut fp = Fingerprint::empty(width, radius)?;
    for id in environment_ids(graph, radius) {
        fp.set(id as usize % width);
    }
    Ok(fp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use proptest::prelude::*;

    fn popcount_oracle(a: u64, b: u64) -> f64 {
        let (mut inter, mut union) = (0, 0);
        for bit in 0..64 {
            let x = a >> bit & 1;
            let y = b >> bit & 1;
            inter += x & y;
            union += x | y;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    fn fp64(word: u64) -> Fingerprint {
        Fingerprint::from_bits(64, 0, (0..64).filter(|b| word >> b & 1 == 1)).unwrap()
    }

    #[test]
    fn tanimoto_examples() {
        let a = Fingerprint::from_bits(64, 2, [1, 2, 3]).unwrap();
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let b = Fingerprint::from_bits(64, 2, [10, 11]).unwrap();
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.0);
        let c = Fingerprint::from_bits(64, 2, [1, 2, 7]).unwrap();
        let d = Fingerprint::from_bits(64, 2, [1, 2]).unwrap();
        let e = Fingerprint::from_bits(64, 2, [1, 2, 9]).unwrap();
        // |A∩B| = 2, |A∪B| = 4
        assert_eq!(tanimoto(&c, &e).unwrap(), 0.5);
        assert!((tanimoto(&c, &d).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let empty = Fingerprint::empty(64, 2).unwrap();
        assert_eq!(tanimoto(&empty, &empty).unwrap(), 0.0);
    }

    #[test]
    fn width_checks() {
        let a = Fingerprint::empty(64, 2).unwrap();
        let b = Fingerprint::empty(128, 2).unwrap();
        assert!(matches!(
            tanimoto(&a, &b),
            Err(ChemError::WidthMismatch { left: 64, right: 128 })
        ));
        assert!(Fingerprint::empty(100, 2).is_err());
        assert!(Fingerprint::empty(32, 2).is_err());
    }

    #[test]
    fn hex_round_trip() {
        let fp = morgan_fingerprint(&parse_smiles("CCO").unwrap(), 2, 2048).unwrap();
        let back = Fingerprint::from_hex(&fp.to_hex(), 2).unwrap();
        assert_eq!(fp, back);
    }

    #[test]
    fn radius_zero_ethanol_has_three_bits_at_most() {
        let fp = morgan_fingerprint(&parse_smiles("CCO").unwrap(), 0, 2048).unwrap();
        assert!(fp.count_ones() <= 3);
        assert_eq!(environment_ids(&parse_smiles("CCO").unwrap(), 0).len(), 3);
    }

    #[test]
    fn spellings_give_identical_bits() {
        let a = morgan_fingerprint(&parse_smiles("OCC").unwrap(), 2, 2048).unwrap();
        let b = morgan_fingerprint(&parse_smiles("CCO").unwrap(), 2, 2048).unwrap();
        assert_eq!(a, b);
        let a = morgan_fingerprint(&parse_smiles("c1ccccc1O").unwrap(), 2, 2048).unwrap();
        let b = morgan_fingerprint(&parse_smiles("Oc1ccccc1").unwrap(), 2, 2048).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn tanimoto_matches_popcount_oracle(a: u64, b: u64) {
            let (fa, fb) = (fp64(a), fp64(b));
            let t = tanimoto(&fa, &fb).unwrap();
            prop_assert_eq!(t, popcount_oracle(a, b));
            prop_assert_eq!(t, tanimoto(&fb, &fa).unwrap());
            prop_assert!((0.0..=1.0).contains(&t));
            if a != 0 {
                prop_assert_eq!(tanimoto(&fa, &fa).unwrap(), 1.0);
            }
        }
    }
}
