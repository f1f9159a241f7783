//! Canonical atom ranking and SMILES serialization.
//!
//! Ranks come from iterated neighborhood refinement; remaining ties are broken
//! by individualizing one atom of the lowest tied class and refining again.
//! The writer walks the graph depth-first from the lowest-ranked atom of each
//! component, visiting neighbors in rank order.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::graph::{BondOrder, MolecularGraph};
use super::smiles::default_hydrogens;

/// Order-invariant SMILES serialization of a molecular graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalKey(String);

impl CanonicalKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn canonical_key(graph: &MolecularGraph) -> CanonicalKey {
    let ranks = canonical_ranks(graph);
    CanonicalKey(write_smiles(graph, &ranks))
}

fn bond_code(order: BondOrder) -> u8 {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

/// Dense ranks of `keys`, in sorted key order.
fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    let mut rank = 0;
    for (pos, &idx) in order.iter().enumerate() {
        if pos > 0 && keys[idx] != keys[order[pos - 1]] {
            rank += 1;
        }
        ranks[idx] = rank;
    }
    ranks
}

fn class_count(ranks: &[usize]) -> usize {
    ranks.iter().collect::<BTreeSet<_>>().len()
}

fn refine(graph: &MolecularGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..graph.atom_count())
            .map(|i| {
                let mut nbrs: Vec<(usize, u8)> = graph
                    .neighbors(i)
                    .iter()
                    .map(|&(n, b)| (ranks[n], bond_code(graph.bonds()[b].order)))
                    .collect();
                nbrs.sort_unstable();
                (ranks[i], nbrs)
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_classes = class_count(&next);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

pub(crate) fn canonical_ranks(graph: &MolecularGraph) -> Vec<usize> {
    let n = graph.atom_count();
    let initial: Vec<_> = (0..n)
        .map(|i| {
            let a = &graph.atoms()[i];
            (
                a.element.atomic_number(),
                a.isotope.unwrap_or(0),
                a.charge,
                a.implicit_h,
                a.aromatic,
                graph.degree(i),
                graph.is_ring_atom(i),
            )
        })
        .collect();
    let mut ranks = refine(graph, dense_ranks(&initial));
    while class_count(&ranks) < n {
        let mut counts = vec![0usize; n];
        for &r in &ranks {
            counts[r] += 1;
        }
        let tied = (0..n).find(|&r| counts[r] > 1).expect("a tied class exists");
        let chosen = (0..n).find(|&i| ranks[i] == tied).unwrap();
        let split: Vec<usize> = (0..n)
            .map(|i| {
                if ranks[i] == tied && i != chosen {
                    2 * ranks[i] + 1
                } else {
                    2 * ranks[i]
                }
            })
            .collect();
        ranks = refine(graph, dense_ranks(&split));
    }
    ranks
}

fn atom_token(graph: &MolecularGraph, idx: usize) -> String {
    let atom = &graph.atoms()[idx];
    let symbol = if atom.aromatic {
        atom.element.symbol().to_lowercase()
    } else {
        atom.element.symbol().to_string()
    };
    let organic = atom.isotope.is_none()
        && atom.charge == 0
        && atom.element.organic_valences().is_some()
        && (!atom.aromatic || atom.element.organic_aromatic())
        && default_hydrogens(atom.element, atom.aromatic, graph.bond_valence_sum(idx))
            == Some(atom.implicit_h);
    if organic {
        return symbol;
    }
    let mut out = String::from("[");
    if let Some(iso) = atom.isotope {
        out.push_str(&iso.to_string());
    }
    out.push_str(&symbol);
    match atom.implicit_h {
        0 => {}
        1 => out.push('H'),
        h => out.push_str(&format!("H{h}")),
    }
    match atom.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    out.push(']');
    out
}

fn bond_token(graph: &MolecularGraph, bond: usize) -> &'static str {
    let b = &graph.bonds()[bond];
    match b.order {
        BondOrder::Single => {
            if graph.atoms()[b.a].aromatic && graph.atoms()[b.b].aromatic {
                "-"
            } else {
                ""
            }
        }
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => "",
    }
}

struct Writer<'g> {
    graph: &'g MolecularGraph,
    ranks: &'g [usize],
    visited: Vec<bool>,
    closures: BTreeSet<usize>,
    children: Vec<Vec<(usize, usize)>>,
    written: Vec<bool>,
    digits: Vec<Option<usize>>,
    free: BTreeSet<usize>,
    out: String,
}

impl<'g> Writer<'g> {
    fn sorted_neighbors(&self, atom: usize) -> Vec<(usize, usize)> {
        let mut nbrs = self.graph.neighbors(atom).to_vec();
        nbrs.sort_by_key(|&(n, _)| self.ranks[n]);
        nbrs
    }

    fn plan(&mut self, root: usize) {
        // (atom, parent bond) frames processed depth-first
        let mut stack = vec![(root, usize::MAX, 0usize)];
        self.visited[root] = true;
        let mut tree = BTreeSet::new();
        while let Some(frame) = stack.last_mut() {
            let (atom, parent, slot) = *frame;
            let nbrs = self.sorted_neighbors(atom);
            if slot >= nbrs.len() {
                stack.pop();
                continue;
            }
            frame.2 += 1;
            let (nbr, bond) = nbrs[slot];
            if bond == parent || tree.contains(&bond) || self.closures.contains(&bond) {
                continue;
            }
            if self.visited[nbr] {
                self.closures.insert(bond);
            } else {
                self.visited[nbr] = true;
                tree.insert(bond);
                self.children[atom].push((nbr, bond));
                stack.push((nbr, bond, 0));
            }
        }
    }

    fn emit(&mut self, atom: usize) {
        self.written[atom] = true;
        self.out.push_str(&atom_token(self.graph, atom));
        let mut closing = Vec::new();
        let mut opening = Vec::new();
        for (nbr, bond) in self.sorted_neighbors(atom) {
            if !self.closures.contains(&bond) {
                continue;
            }
            if self.digits[bond].is_some() {
                closing.push(bond);
            } else if !self.written[nbr] {
                opening.push(bond);
            }
        }
        for bond in closing {
            let digit = self.digits[bond].take().unwrap();
            self.push_digit(digit);
            self.free.insert(digit);
        }
        for bond in opening {
            let digit = *self.free.iter().next().expect("ring digits available");
            self.free.remove(&digit);
            self.digits[bond] = Some(digit);
            self.out.push_str(bond_token(self.graph, bond));
            self.push_digit(digit);
        }
        let children = std::mem::take(&mut self.children[atom]);
        let last = children.len().saturating_sub(1);
        for (i, &(child, bond)) in children.iter().enumerate() {
            if i < last {
                self.out.push('(');
            }
            self.out.push_str(bond_token(self.graph, bond));
            self.emit(child);
            if i < last {
                self.out.push(')');
            }
        }
    }

    fn push_digit(&mut self, digit: usize) {
        if digit < 10 {
            self.out.push_str(&digit.to_string());
        } else {
            self.out.push_str(&format!("%{digit:02}"));
        }
    }
}

pub(crate) fn write_smiles(graph: &MolecularGraph, ranks: &[usize]) -> String {
    let n = graph.atom_count();
    let mut writer = Writer {
        graph,
        ranks,
        visited: vec![false; n],
        closures: BTreeSet::new(),
        children: vec![Vec::new(); n],
        written: vec![false; n],
        digits: vec![None; graph.bond_count()],
        free: (1..100).collect(),
        out: String::new(),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ranks[i]);
    let mut first = true;
    for root in order {
        if writer.visited[root] {
            continue;
        }
        writer.plan(root);
        if !first {
            writer.out.push('.');
        }
        first = false;
        writer.emit(root);
    }
    writer.out
}
