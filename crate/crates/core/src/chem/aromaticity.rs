//! Hückel aromaticity perception for rings written in Kekulé form.
//!
//! Rings already written with lowercase atoms are left as given. Every
//! simple cycle of 5 to 7 atoms made of non-aromatic atoms is checked for
//! 4n+2 pi electrons; pairs of fused cycles that fail individually are then
//! checked as a combined envelope.

use std::collections::{BTreeSet, HashSet};

use super::elements::Element;
use super::graph::{Atom, Bond, BondOrder, MolecularGraph};

const MIN_RING: usize = 5;
const MAX_RING: usize = 7;

/// Pi electrons an atom donates to a ring system, `None` when it cannot be
/// part of one.
fn donated_electrons(graph: &MolecularGraph, atom: usize) -> Option<u8> {
    let a = &graph.atoms()[atom];
    if a.aromatic {
        return None;
    }
    let mut ring_doubles = 0;
    let mut exocyclic_polar_double = false;
    for &(nbr, bond) in graph.neighbors(atom) {
        match graph.bonds()[bond].order {
            BondOrder::Double if graph.is_ring_bond(bond) => ring_doubles += 1,
            BondOrder::Double => {
                let e = graph.atoms()[nbr].element;
                if matches!(e, Element::N | Element::O | Element::S) {
                    exocyclic_polar_double = true;
                } else {
                    return None;
                }
            }
            BondOrder::Triple | BondOrder::Aromatic => return None,
            BondOrder::Single => {}
        }
    }
    match ring_doubles {
        0 => {}
        1 if !exocyclic_polar_double => return Some(1),
        _ => return None,
    }
    if exocyclic_polar_double {
        return Some(0);
    }
    let connections = graph.degree(atom) + usize::from(a.implicit_h);
    match (a.element, a.charge, connections) {
        (Element::N | Element::P, 0, 3) => Some(2),
        (Element::N, -1, 2) => Some(2),
        (Element::O | Element::S, 0, 2) => Some(2),
        (Element::C, -1, 3) => Some(2),
        (Element::C, 1, 3) => Some(0),
        (Element::B, 0, 3) => Some(0),
        _ => None,
    }
}

/// Simple cycles (as atom lists) of bounded length through ring bonds.
fn small_cycles(graph: &MolecularGraph) -> Vec<Vec<usize>> {
    let mut cycles = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    for start in 0..graph.atom_count() {
        if graph.atoms()[start].aromatic || !graph.is_ring_atom(start) {
            continue;
        }
        let mut path = vec![start];
        extend(graph, start, &mut path, &mut cycles, &mut seen);
    }
    cycles
}

fn extend(
    graph: &MolecularGraph,
    start: usize,
    path: &mut Vec<usize>,
    cycles: &mut Vec<Vec<usize>>,
    seen: &mut HashSet<Vec<usize>>,
) {
    let last = *path.last().unwrap();
    for &(nbr, bond) in graph.neighbors(last) {
        if !graph.is_ring_bond(bond) || graph.atoms()[nbr].aromatic {
            continue;
        }
        if nbr == start && path.len() >= MIN_RING {
            let mut key = path.clone();
            key.sort_unstable();
            if seen.insert(key) {
                cycles.push(path.clone());
            }
            continue;
        }
        if nbr <= start || path.contains(&nbr) || path.len() == MAX_RING {
            continue;
        }
        path.push(nbr);
        extend(graph, start, path, cycles, seen);
        path.pop();
    }
}

fn cycle_bonds(graph: &MolecularGraph, cycle: &[usize]) -> BTreeSet<usize> {
    (0..cycle.len())
        .filter_map(|i| {
            let a = cycle[i];
            let b = cycle[(i + 1) % cycle.len()];
            graph
                .neighbors(a)
                .iter()
                .find(|&&(n, _)| n == b)
                .map(|&(_, bond)| bond)
        })
        .collect()
}

fn is_huckel(graph: &MolecularGraph, atoms: impl Iterator<Item = usize>) -> bool {
    let mut total = 0u32;
    for atom in atoms {
        match donated_electrons(graph, atom) {
            Some(e) => total += u32::from(e),
            None => return false,
        }
    }
    total % 4 == 2
}

pub(crate) fn perceive(atoms: Vec<Atom>, bonds: Vec<Bond>) -> (Vec<Atom>, Vec<Bond>) {
    if atoms.iter().all(|a| a.aromatic) {
        return (atoms, bonds);
    }
    let graph = match MolecularGraph::new(atoms.clone(), bonds.clone(), "") {
        Ok(g) => g,
        Err(_) => return (atoms, bonds),
    };
    let cycles = small_cycles(&graph);
    if cycles.is_empty() {
        return (atoms, bonds);
    }
    let ring_bonds: Vec<BTreeSet<usize>> =
        cycles.iter().map(|c| cycle_bonds(&graph, c)).collect();
    let mut aromatic_cycles: Vec<bool> = cycles
        .iter()
        .map(|c| is_huckel(&graph, c.iter().copied()))
        .collect();

    for i in 0..cycles.len() {
        for j in i + 1..cycles.len() {
            if aromatic_cycles[i] && aromatic_cycles[j] {
                continue;
            }
            if ring_bonds[i].intersection(&ring_bonds[j]).count() != 1 {
                continue;
            }
            let envelope: BTreeSet<usize> =
                cycles[i].iter().chain(cycles[j].iter()).copied().collect();
            if is_huckel(&graph, envelope.iter().copied()) {
                aromatic_cycles[i] = true;
                aromatic_cycles[j] = true;
            }
        }
    }

    let mut atoms = atoms;
    let mut bonds = bonds;
    for (idx, cycle) in cycles.iter().enumerate() {
        if !aromatic_cycles[idx] {
            continue;
        }
        for &a in cycle {
            atoms[a].aromatic = true;
        }
        for &b in &ring_bonds[idx] {
            bonds[b].order = BondOrder::Aromatic;
        }
    }
    (atoms, bonds)
}
