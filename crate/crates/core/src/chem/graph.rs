use std::collections::HashSet;

use super::elements::Element;
use super::ChemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer contribution to an atom's valence; aromatic bonds count as one
    /// here and receive their extra pi electron separately.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    /// Bond type code used by the circular fingerprint.
    pub(crate) fn type_code(self) -> u32 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    pub implicit_h: u8,
    pub aromatic: bool,
    pub isotope: Option<u16>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            charge: 0,
            implicit_h: 0,
            aromatic: false,
            isotope: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// A hydrogen-suppressed molecular graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    source_smiles: String,
    /// Per atom: (neighbor, bond index).
    adjacency: Vec<Vec<(usize, usize)>>,
    ring_bonds: Vec<bool>,
}

impl MolecularGraph {
    /// Builds a graph after checking the structural invariants.
    pub fn new(
        atoms: Vec<Atom>,
        bonds: Vec<Bond>,
        source_smiles: impl Into<String>,
    ) -> Result<Self, ChemError> {
        let mut seen = HashSet::new();
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (idx, bond) in bonds.iter().enumerate() {
            if bond.a >= atoms.len() || bond.b >= atoms.len() {
                return Err(ChemError::InvalidGraph(format!(
                    "bond {idx} references a missing atom"
                )));
            }
            if bond.a == bond.b {
                return Err(ChemError::InvalidGraph(format!("bond {idx} is a self loop")));
            }
            let pair = (bond.a.min(bond.b), bond.a.max(bond.b));
            if !seen.insert(pair) {
                return Err(ChemError::InvalidGraph(format!(
                    "duplicate bond between atoms {} and {}",
                    pair.0, pair.1
                )));
            }
            if bond.order == BondOrder::Aromatic
                && !(atoms[bond.a].aromatic && atoms[bond.b].aromatic)
            {
                return Err(ChemError::InvalidGraph(format!(
                    "aromatic bond {idx} touches a non-aromatic atom"
                )));
            }
            adjacency[bond.a].push((bond.b, idx));
            adjacency[bond.b].push((bond.a, idx));
        }
        let ring_bonds = find_ring_bonds(atoms.len(), &bonds, &adjacency);
        Ok(MolecularGraph {
            atoms,
            bonds,
            source_smiles: source_smiles.into(),
            adjacency,
            ring_bonds,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn source_smiles(&self) -> &str {
        &self.source_smiles
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn is_ring_bond(&self, bond: usize) -> bool {
        self.ring_bonds[bond]
    }

    pub fn is_ring_atom(&self, atom: usize) -> bool {
        self.adjacency[atom]
            .iter()
            .any(|&(_, bond)| self.ring_bonds[bond])
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, idx)| &self.bonds[idx])
    }

    /// Sum of integer bond valences around an atom.
    pub(crate) fn bond_valence_sum(&self, atom: usize) -> u8 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence())
            .sum()
    }

    /// Returns a copy with atoms renumbered so that new index `i` holds old
    /// atom `order[i]`. Bonds are re-listed in a shuffled-compatible order.
    pub fn permuted(&self, order: &[usize]) -> MolecularGraph {
        assert_eq!(order.len(), self.atoms.len());
        let mut inverse = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let atoms = order.iter().map(|&old| self.atoms[old].clone()).collect();
        let mut bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: inverse[b.b],
                b: inverse[b.a],
                order: b.order,
            })
            .collect();
        bonds.sort_by_key(|b| (b.a.min(b.b), b.a.max(b.b)));
        MolecularGraph::new(atoms, bonds, self.source_smiles.clone())
            .expect("permutation preserves validity")
    }
}

/// Marks every bond that lies on a cycle (i.e. is not a bridge).
fn find_ring_bonds(n: usize, bonds: &[Bond], adjacency: &[Vec<(usize, usize)>]) -> Vec<bool> {
    let mut ring = vec![true; bonds.len()];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // iterative Tarjan bridge search: (atom, parent bond, next neighbor slot)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (v, parent_bond, ref mut slot)) = stack.last_mut() {
            if *slot < adjacency[v].len() {
                let (w, bond) = adjacency[v][*slot];
                *slot += 1;
                if bond == parent_bond {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, bond, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(u, _, _)) = stack.last() {
                    low[u] = low[u].min(low[v]);
                    if low[v] > disc[u] {
                        ring[parent_bond] = false;
                    }
                }
            }
        }
    }
    debug_assert!(bonds.len() == ring.len());
    ring
}
