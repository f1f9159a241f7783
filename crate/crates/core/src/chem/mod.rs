//! Molecular graphs: SMILES parsing, canonical keys, circular fingerprints
//! and Tanimoto similarity.

mod aromaticity;
mod canon;
mod elements;
mod fingerprint;
mod graph;
mod smiles;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use canon::{canonical_key, CanonicalKey};
pub use elements::Element;
pub use fingerprint::{
    environment_ids, morgan_fingerprint, tanimoto, Fingerprint, DEFAULT_RADIUS, DEFAULT_WIDTH,
};
pub use graph::{Atom, Bond, BondOrder, MolecularGraph};
pub use smiles::parse_smiles;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyntaxErrorKind {
    Empty,
    UnexpectedCharacter(char),
    UnknownElement(String),
    UnbalancedParenthesis,
    UnmatchedRingClosure,
    BadRingNumber,
    ConflictingRingBond,
    RingClosureWithoutAtom,
    BranchWithoutAtom,
    DanglingBond,
    SelfBond,
    DuplicateBond,
    AromaticBondOnAliphaticAtom,
    UnsupportedBond,
    UnclosedBracket,
    ValenceOverflow,
    Invalid(String),
}

impl fmt::Display for SyntaxErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyntaxErrorKind::Empty => write!(f, "empty SMILES"),
            SyntaxErrorKind::UnexpectedCharacter(c) => write!(f, "unexpected character '{c}'"),
            SyntaxErrorKind::UnknownElement(s) => write!(f, "unknown element '{s}'"),
            SyntaxErrorKind::UnbalancedParenthesis => write!(f, "unbalanced parenthesis"),
            SyntaxErrorKind::UnmatchedRingClosure => write!(f, "unmatched ring closure"),
            SyntaxErrorKind::BadRingNumber => write!(f, "malformed ring closure number"),
            SyntaxErrorKind::ConflictingRingBond => write!(f, "conflicting ring closure bonds"),
            SyntaxErrorKind::RingClosureWithoutAtom => write!(f, "ring closure before any atom"),
            SyntaxErrorKind::BranchWithoutAtom => write!(f, "branch before any atom"),
            SyntaxErrorKind::DanglingBond => write!(f, "bond symbol without a following atom"),
            SyntaxErrorKind::SelfBond => write!(f, "atom bonded to itself"),
            SyntaxErrorKind::DuplicateBond => write!(f, "duplicate bond"),
            SyntaxErrorKind::AromaticBondOnAliphaticAtom => {
                write!(f, "aromatic bond between non-aromatic atoms")
            }
            SyntaxErrorKind::UnsupportedBond => write!(f, "unsupported bond symbol"),
            SyntaxErrorKind::UnclosedBracket => write!(f, "unclosed bracket atom"),
            SyntaxErrorKind::ValenceOverflow => write!(f, "valence overflow"),
            SyntaxErrorKind::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("SMILES syntax error at byte {offset}: {kind}")]
pub struct SyntaxError {
    pub offset: usize,
    pub kind: SyntaxErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChemError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("invalid molecular graph: {0}")]
    InvalidGraph(String),
    #[error("fingerprint width {0} is not a power of two >= 64")]
    InvalidWidth(usize),
    #[error("bit {bit} outside fingerprint width {width}")]
    BitOutOfRange { bit: usize, width: usize },
    #[error("fingerprint widths differ ({left} vs {right})")]
    WidthMismatch { left: usize, right: usize },
}

/// Fingerprint settings shared by every molecule in one engine instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintParams {
    pub radius: u32,
    pub width: usize,
}

impl Default for FingerprintParams {
    fn default() -> Self {
        FingerprintParams {
            radius: DEFAULT_RADIUS,
            width: DEFAULT_WIDTH,
        }
    }
}

/// A parsed molecule with its canonical key and fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    graph: MolecularGraph,
    key: CanonicalKey,
    fingerprint: Fingerprint,
}

impl Molecule {
    pub fn from_smiles(smiles: &str) -> Result<Self, ChemError> {
        Self::with_params(smiles, FingerprintParams::default())
    }

    pub fn with_params(smiles: &str, params: FingerprintParams) -> Result<Self, ChemError> {
        let graph = parse_smiles(smiles)?;
        Self::from_graph(graph, params)
    }

    pub fn from_graph(graph: MolecularGraph, params: FingerprintParams) -> Result<Self, ChemError> {
        let key = canonical_key(&graph);
        let fingerprint = morgan_fingerprint(&graph, params.radius, params.width)?;
        Ok(Molecule {
            graph,
            key,
            fingerprint,
        })
    }

    pub fn smiles(&self) -> &str {
        self.graph.source_smiles()
    }

    pub fn graph(&self) -> &MolecularGraph {
        &self.graph
    }

    pub fn key(&self) -> &CanonicalKey {
        &self.key
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn similarity(&self, other: &Molecule) -> Result<f64, ChemError> {
        tanimoto(&self.fingerprint, &other.fingerprint)
    }
}

/// Canonical key of a SMILES string.
pub fn key_of(smiles: &str) -> Result<CanonicalKey, SyntaxError> {
    parse_smiles(smiles).map(|g| canonical_key(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn permuted_orders_share_a_key() {
        assert_eq!(key_of("CCO").unwrap(), key_of("OCC").unwrap());
        assert_ne!(key_of("C").unwrap(), key_of("N").unwrap());
        assert_eq!(
            key_of("c1ccccc1").unwrap(),
            key_of("C1=CC=CC=C1").unwrap()
        );
    }

    #[test]
    fn thousand_shuffles_of_a_twenty_atom_molecule_give_one_key() {
        // chloroquine analogue with 20 heavy atoms
        let graph = parse_smiles("CN(CC)CCCC(C)Nc1ccnc2ccccc12").unwrap();
        assert_eq!(graph.atom_count(), 20);
        let reference = canonical_key(&graph);
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let mut order: Vec<usize> = (0..graph.atom_count()).collect();
        let mut keys = std::collections::HashSet::new();
        for _ in 0..1000 {
            order.shuffle(&mut rng);
            // re-serialize the shuffled graph and parse it back
            let shuffled = graph.permuted(&order);
            let text = canon::write_smiles(&shuffled, &order_ranks(&shuffled));
            let reparsed = parse_smiles(&text).unwrap();
            keys.insert(canonical_key(&reparsed));
            keys.insert(canonical_key(&shuffled));
        }
        assert_eq!(keys.len(), 1);
        assert!(keys.contains(&reference));
    }

    /// Ranks equal to the atom index: writes atoms in storage order.
    fn order_ranks(g: &MolecularGraph) -> Vec<usize> {
        (0..g.atom_count()).collect()
    }

    #[test]
    fn canonical_smiles_round_trips() {
        for s in [
            "CC(=O)Oc1ccccc1C(=O)O",
            "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
            "[NH3+]CC(=O)[O-]",
            "CC(=O)[O-].[Na+]",
            "C1=CNC=C1",
            "O=[N+]([O-])c1ccccc1",
            "C12C3C4C1C5C2C3C45",
            "[13CH4]",
            "c1ccc(cc1)-c1ccccc1",
            "C1CCC2(CC1)CCCC2",
        ] {
            let g = parse_smiles(s).unwrap();
            let key = canonical_key(&g);
            let back = parse_smiles(key.as_str()).unwrap();
            assert_eq!(canonical_key(&back), key, "{s} -> {key}");
            assert_eq!(back.atom_count(), g.atom_count());
            assert_eq!(back.bond_count(), g.bond_count());
            let fp = |g: &MolecularGraph| morgan_fingerprint(g, 2, 2048).unwrap();
            assert_eq!(fp(&g), fp(&back));
        }
    }
}
