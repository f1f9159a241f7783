//! SMILES reader.
//!
//! Covers the organic subset, bracket atoms (isotope, explicit H, charge,
//! atom class), branches, ring closures including `%nn`, explicit bond
//! symbols, and lowercase aromatic atoms. Stereo markers are accepted and
//! dropped. Explicit `[H]` atoms attached to a single heavy atom are folded
//! back into that atom's hydrogen count.

use std::collections::BTreeMap;

use super::aromaticity;
use super::elements::Element;
use super::graph::{Atom, Bond, BondOrder, MolecularGraph};
use super::{SyntaxError, SyntaxErrorKind};

struct ParsedAtom {
    atom: Atom,
    bracket: bool,
    offset: usize,
}

struct OpenRing {
    atom: usize,
    order: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<ParsedAtom>,
    bonds: Vec<(usize, usize, BondOrder, usize)>,
    rings: BTreeMap<u16, OpenRing>,
    branches: Vec<(usize, usize)>,
    prev: Option<usize>,
    pending: Option<(BondOrder, usize)>,
}

fn err(offset: usize, kind: SyntaxErrorKind) -> SyntaxError {
    SyntaxError { offset, kind }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text: text.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            rings: BTreeMap::new(),
            branches: Vec::new(),
            prev: None,
            pending: None,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SyntaxError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let prev = self
                        .prev
                        .ok_or_else(|| err(start, SyntaxErrorKind::BranchWithoutAtom))?;
                    if self.pending.is_some() {
                        return Err(err(start, SyntaxErrorKind::DanglingBond));
                    }
                    self.branches.push((prev, start));
                    self.pos += 1;
                }
                b')' => {
                    if self.pending.is_some() {
                        return Err(err(start, SyntaxErrorKind::DanglingBond));
                    }
                    let (atom, _) = self
                        .branches
                        .pop()
                        .ok_or_else(|| err(start, SyntaxErrorKind::UnbalancedParenthesis))?;
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending.is_some() {
                        return Err(err(start, SyntaxErrorKind::DanglingBond));
                    }
                    if !self.branches.is_empty() {
                        return Err(err(start, SyntaxErrorKind::UnbalancedParenthesis));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    if self.pending.is_some() {
                        return Err(err(start, SyntaxErrorKind::DanglingBond));
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        b'$' => return Err(err(start, SyntaxErrorKind::UnsupportedBond)),
                        // '/' and '\' carry only double-bond stereo
                        _ => BondOrder::Single,
                    };
                    if self.prev.is_none() {
                        return Err(err(start, SyntaxErrorKind::DanglingBond));
                    }
                    self.pending = Some((order, start));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.push_atom(atom, true, start)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.push_atom(atom, false, start)?;
                }
            }
        }
        if let Some((_, offset)) = self.pending {
            return Err(err(offset, SyntaxErrorKind::DanglingBond));
        }
        if let Some(&(_, offset)) = self.branches.last() {
            return Err(err(offset, SyntaxErrorKind::UnbalancedParenthesis));
        }
        if let Some(open) = self.rings.values().next() {
            return Err(err(open.offset, SyntaxErrorKind::UnmatchedRingClosure));
        }
        if self.atoms.is_empty() {
            return Err(err(0, SyntaxErrorKind::Empty));
        }
        Ok(())
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].atom.aromatic && self.atoms[b].atom.aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        order: BondOrder,
        offset: usize,
    ) -> Result<(), SyntaxError> {
        if a == b {
            return Err(err(offset, SyntaxErrorKind::SelfBond));
        }
        if self
            .bonds
            .iter()
            .any(|&(x, y, _, _)| (x == a && y == b) || (x == b && y == a))
        {
            return Err(err(offset, SyntaxErrorKind::DuplicateBond));
        }
        if order == BondOrder::Aromatic
            && !(self.atoms[a].atom.aromatic && self.atoms[b].atom.aromatic)
        {
            return Err(err(offset, SyntaxErrorKind::AromaticBondOnAliphaticAtom));
        }
        self.bonds.push((a, b, order, offset));
        Ok(())
    }

    fn push_atom(&mut self, atom: Atom, bracket: bool, offset: usize) -> Result<(), SyntaxError> {
        let idx = self.atoms.len();
        self.atoms.push(ParsedAtom {
            atom,
            bracket,
            offset,
        });
        if let Some(prev) = self.prev {
            let (order, bond_offset) = match self.pending.take() {
                Some((order, at)) => (order, at),
                None => (self.implicit_order(prev, idx), offset),
            };
            self.add_bond(prev, idx, order, bond_offset)?;
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), SyntaxError> {
        let start = self.pos;
        let atom = self
            .prev
            .ok_or_else(|| err(start, SyntaxErrorKind::RingClosureWithoutAtom))?;
        let number = if self.peek() == Some(b'%') {
            let digits = self.text.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    u16::from(d[0] - b'0') * 10 + u16::from(d[1] - b'0')
                }
                _ => return Err(err(start, SyntaxErrorKind::BadRingNumber)),
            }
        } else {
            let d = self.text[self.pos] - b'0';
            self.pos += 1;
            u16::from(d)
        };
        let explicit = self.pending.take().map(|(order, _)| order);
        match self.rings.remove(&number) {
            None => {
                self.rings.insert(
                    number,
                    OpenRing {
                        atom,
                        order: explicit,
                        offset: start,
                    },
                );
            }
            Some(open) => {
                let order = match (open.order, explicit) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(err(start, SyntaxErrorKind::ConflictingRingBond))
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.implicit_order(open.atom, atom),
                };
                self.add_bond(open.atom, atom, order, start)?;
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SyntaxError> {
        let start = self.pos;
        let c = self.text[self.pos];
        let next = self.text.get(self.pos + 1).copied();
        let (symbol, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (std::str::from_utf8(&self.text[start..start + 1]).unwrap(), false, 1)
            }
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            (b'*', _) => ("*", false, 1),
            _ => return Err(err(start, SyntaxErrorKind::UnexpectedCharacter(c as char))),
        };
        self.pos += len;
        let mut atom = Atom::new(Element::from_symbol(symbol).expect("organic subset"));
        atom.aromatic = aromatic;
        Ok(atom)
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        (self.pos > start).then(|| {
            std::str::from_utf8(&self.text[start..self.pos])
                .unwrap()
                .parse()
                .unwrap_or(u32::MAX)
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SyntaxError> {
        let open = self.pos;
        self.pos += 1;
        let isotope = self.number();
        let sym_start = self.pos;
        let first = self
            .peek()
            .ok_or_else(|| err(open, SyntaxErrorKind::UnclosedBracket))?;
        let (element, aromatic) = if first == b'*' {
            self.pos += 1;
            (Element::WILDCARD, false)
        } else if first.is_ascii_lowercase() {
            // aromatic: se, as, te or single letter
            let two = self.text.get(self.pos..self.pos + 2);
            let (sym, len) = match two {
                Some(b"se") => ("Se", 2),
                Some(b"as") => ("As", 2),
                Some(b"te") => ("Te", 2),
                _ => match first {
                    b'b' => ("B", 1),
                    b'c' => ("C", 1),
                    b'n' => ("N", 1),
                    b'o' => ("O", 1),
                    b'p' => ("P", 1),
                    b's' => ("S", 1),
                    _ => {
                        return Err(err(sym_start, SyntaxErrorKind::UnknownElement(
                            (first as char).to_string(),
                        )))
                    }
                },
            };
            self.pos += len;
            (Element::from_symbol(sym).unwrap(), true)
        } else if first.is_ascii_uppercase() {
            let second = self.text.get(self.pos + 1).copied();
            let two = second
                .filter(u8::is_ascii_lowercase)
                .and_then(|s| {
                    let sym = [first, s];
                    Element::from_symbol(std::str::from_utf8(&sym).unwrap())
                });
            match two {
                Some(e) => {
                    self.pos += 2;
                    (e, false)
                }
                None => {
                    let sym = [first];
                    let e = Element::from_symbol(std::str::from_utf8(&sym).unwrap())
                        .ok_or_else(|| {
                            let end = if second.is_some_and(|c| c.is_ascii_lowercase()) {
                                2
                            } else {
                                1
                            };
                            let text = String::from_utf8_lossy(
                                &self.text[sym_start..(sym_start + end).min(self.text.len())],
                            );
                            err(sym_start, SyntaxErrorKind::UnknownElement(text.into_owned()))
                        })?;
                    self.pos += 1;
                    (e, false)
                }
            }
        } else {
            return Err(err(sym_start, SyntaxErrorKind::UnexpectedCharacter(first as char)));
        };

        // chirality: @, @@, @TH1, @AL2, @SP3, @TB12, @OH30
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            } else {
                let rest = &self.text[self.pos..];
                for class in [&b"TH"[..], b"AL", b"SP", b"TB", b"OH"] {
                    if rest.starts_with(class) {
                        self.pos += 2;
                        self.number();
                        break;
                    }
                }
            }
        }

        let mut hydrogens = 0u32;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hydrogens = self.number().unwrap_or(1);
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.number() {
                charge = unit * n.min(15) as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }

        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.number().is_none() {
                return Err(err(self.pos, SyntaxErrorKind::UnclosedBracket));
            }
        }

        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(c) => return Err(err(self.pos, SyntaxErrorKind::UnexpectedCharacter(c as char))),
            None => return Err(err(open, SyntaxErrorKind::UnclosedBracket)),
        }

        if aromatic && !element.can_be_aromatic() {
            return Err(err(sym_start, SyntaxErrorKind::UnknownElement(
                element.symbol().to_lowercase(),
            )));
        }
        if hydrogens > 9 || charge.abs() > 15 {
            return Err(err(open, SyntaxErrorKind::ValenceOverflow));
        }
        Ok(Atom {
            element,
            charge: charge as i8,
            implicit_h: hydrogens as u8,
            aromatic,
            isotope: isotope.map(|i| i.min(u32::from(u16::MAX)) as u16),
        })
    }
}

/// Hydrogen count an unbracketed atom receives given its bonds. `bond_sum`
/// counts aromatic bonds as one. `None` signals a valence overflow.
pub(crate) fn default_hydrogens(
    element: Element,
    aromatic: bool,
    bond_sum: u8,
) -> Option<u8> {
    let valences = element.organic_valences()?;
    if element == Element::WILDCARD {
        return Some(0);
    }
    if aromatic {
        let lowest = valences[0];
        // b, c, n and p contribute one pi electron; o and s donate a lone pair
        let pi = u8::from(
            matches!(element, Element::B | Element::C | Element::N | Element::P)
                && bond_sum < lowest,
        );
        let used = bond_sum + pi;
        if used <= lowest {
            return Some(lowest - used);
        }
        return valences
            .iter()
            .find(|&&v| v >= used)
            .map(|&v| v - used)
            .or_else(|| (bond_sum <= *valences.last().unwrap()).then_some(0));
    }
    valences
        .iter()
        .find(|&&v| v >= bond_sum)
        .map(|&v| v - bond_sum)
}

pub fn parse_smiles(smiles: &str) -> Result<MolecularGraph, SyntaxError> {
    let text = smiles.trim();
    if text.is_empty() {
        return Err(err(0, SyntaxErrorKind::Empty));
    }
    let mut parser = Parser::new(text);
    parser.run()?;
    let Parser { atoms, bonds, .. } = parser;

    let mut graph_atoms: Vec<Atom> = atoms.iter().map(|p| p.atom.clone()).collect();
    let mut graph_bonds: Vec<Bond> = bonds
        .iter()
        .map(|&(a, b, order, _)| Bond { a, b, order })
        .collect();

    // aromatic bonds outside rings (e.g. biaryl links) become single
    let provisional = MolecularGraph::new(graph_atoms.clone(), graph_bonds.clone(), text)
        .map_err(|e| err(0, SyntaxErrorKind::Invalid(e.to_string())))?;
    for (idx, bond) in graph_bonds.iter_mut().enumerate() {
        if bond.order == BondOrder::Aromatic && !provisional.is_ring_bond(idx) {
            bond.order = BondOrder::Single;
        }
    }

    let mut sums = vec![0u8; graph_atoms.len()];
    for b in &graph_bonds {
        sums[b.a] = sums[b.a].saturating_add(b.order.valence());
        sums[b.b] = sums[b.b].saturating_add(b.order.valence());
    }
    for (idx, parsed) in atoms.iter().enumerate() {
        if parsed.bracket {
            continue;
        }
        let atom = &mut graph_atoms[idx];
        atom.implicit_h = default_hydrogens(atom.element, atom.aromatic, sums[idx])
            .ok_or_else(|| err(parsed.offset, SyntaxErrorKind::ValenceOverflow))?;
    }

    let (graph_atoms, graph_bonds) = fold_explicit_hydrogens(graph_atoms, graph_bonds);
    let (graph_atoms, graph_bonds) = aromaticity::perceive(graph_atoms, graph_bonds);
    MolecularGraph::new(graph_atoms, graph_bonds, text)
        .map_err(|e| err(0, SyntaxErrorKind::Invalid(e.to_string())))
}

fn fold_explicit_hydrogens(atoms: Vec<Atom>, bonds: Vec<Bond>) -> (Vec<Atom>, Vec<Bond>) {
    let mut degree = vec![0usize; atoms.len()];
    for b in &bonds {
        degree[b.a] += 1;
        degree[b.b] += 1;
    }
    let foldable = |i: usize, atoms: &[Atom]| {
        let a = &atoms[i];
        a.element == Element::H && a.isotope.is_none() && a.charge == 0 && a.implicit_h == 0
            && degree[i] == 1
    };
    let mut remove = vec![false; atoms.len()];
    let mut atoms = atoms;
    for b in &bonds {
        if b.order != BondOrder::Single {
            continue;
        }
        for (h, heavy) in [(b.a, b.b), (b.b, b.a)] {
            if foldable(h, &atoms) && atoms[heavy].element != Element::H {
                remove[h] = true;
                atoms[heavy].implicit_h += 1;
            }
        }
    }
    if !remove.iter().any(|&r| r) {
        return (atoms, bonds);
    }
    let mut remap = vec![usize::MAX; atoms.len()];
    let mut kept = Vec::new();
    for (i, atom) in atoms.into_iter().enumerate() {
        if !remove[i] {
            remap[i] = kept.len();
            kept.push(atom);
        }
    }
    let bonds = bonds
        .into_iter()
        .filter(|b| !remove[b.a] && !remove[b.b])
        .map(|b| Bond {
            a: remap[b.a],
            b: remap[b.b],
            order: b.order,
        })
        .collect();
    (kept, bonds)
}
