use std::collections::BTreeMap;

use super::graph::{implicit_hydrogens, Atom, Bond, BondOrder, Element, MolecularGraph};
use super::SmilesError;

struct PendingAtom {
    atom: Atom,
    bracket: bool,
}

struct RingOpening {
    atom: usize,
    order: Option<BondOrder>,
    position: usize,
}

/// Parses one SMILES string into a valence-checked connected graph.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::syntax(0, "empty input"));
    }
    if let Some(pos) = text.bytes().position(|b| !b.is_ascii()) {
        return Err(SmilesError::syntax(pos, "non-ASCII character"));
    }
    Parser::new(text).run()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<PendingAtom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    pending_bond: Option<(BondOrder, usize)>,
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u32, RingOpening>,
    /// Set after '(' until the first atom of the branch; catches "()".
    branch_open: bool,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            src: text.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            prev: None,
            pending_bond: None,
            branches: Vec::new(),
            rings: BTreeMap::new(),
            branch_open: false,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn run(mut self) -> Result<MolecularGraph, SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let prev = self.prev.ok_or_else(|| {
                        SmilesError::syntax(self.pos, "branch without preceding atom")
                    })?;
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::syntax(self.pos, "bond symbol before branch"));
                    }
                    self.branches.push((prev, self.pos));
                    self.branch_open = true;
                    self.pos += 1;
                }
                b')' => {
                    let (atom, _) = self
                        .branches
                        .pop()
                        .ok_or_else(|| SmilesError::syntax(self.pos, "unbalanced ')'"))?;
                    if self.branch_open {
                        return Err(SmilesError::syntax(self.pos, "empty branch"));
                    }
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::syntax(self.pos, "dangling bond symbol"));
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' => {
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::syntax(self.pos, "consecutive bond symbols"));
                    }
                    if self.prev.is_none() {
                        return Err(SmilesError::syntax(self.pos, "bond without preceding atom"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        _ => BondOrder::Triple,
                    };
                    self.pending_bond = Some((order, self.pos));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => {
                    let start = self.pos;
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, true, start)?;
                }
                b'.' => return Err(SmilesError::unsupported(self.pos, "multi-fragment '.'")),
                b'*' => return Err(SmilesError::unsupported(self.pos, "wildcard atom")),
                b'/' | b'\\' | b'@' => {
                    return Err(SmilesError::unsupported(self.pos, "stereochemistry"))
                }
                b':' => return Err(SmilesError::unsupported(self.pos, "explicit aromatic bond")),
                _ => {
                    let start = self.pos;
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, false, start)?;
                }
            }
        }
        if let Some((order, pos)) = self.pending_bond {
            let _ = order;
            return Err(SmilesError::syntax(pos, "dangling bond symbol at end"));
        }
        if let Some(&(_, pos)) = self.branches.last() {
            return Err(SmilesError::syntax(pos, "unbalanced '('"));
        }
        if let Some((digit, opening)) = self.rings.iter().next() {
            return Err(SmilesError::syntax(
                opening.position,
                format!("unclosed ring {digit}"),
            ));
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::syntax(0, "no atoms"));
        }
        self.finish()
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let c = self.src[self.pos];
        let next = self.src.get(self.pos + 1).copied();
        let (element, aromatic, width) = match (c, next) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            (c, _) if c.is_ascii_alphabetic() => {
                return Err(SmilesError::unsupported(
                    self.pos,
                    format!("element '{}' outside the organic subset", c as char),
                ))
            }
            (c, _) => {
                return Err(SmilesError::syntax(
                    self.pos,
                    format!("unknown token '{}'", c.escape_ascii()),
                ))
            }
        };
        self.pos += width;
        Ok(Atom {
            element,
            charge: 0,
            hydrogens: 0,
            aromatic,
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        if matches!(self.peek(), Some(b'0'..=b'9')) {
            return Err(SmilesError::unsupported(self.pos, "isotope"));
        }
        let first = self
            .peek()
            .ok_or_else(|| SmilesError::syntax(open, "unterminated bracket atom"))?;
        let (element, aromatic) = if first.is_ascii_uppercase() {
            let second = self.src.get(self.pos + 1).copied();
            match second {
                Some(l) if l.is_ascii_lowercase() => {
                    let sym = [first, l];
                    let sym = std::str::from_utf8(&sym).unwrap_or("");
                    match Element::from_symbol(sym) {
                        Some(e) => {
                            self.pos += 2;
                            (e, false)
                        }
                        None => {
                            return Err(SmilesError::unsupported(
                                self.pos,
                                format!("element '{sym}'"),
                            ))
                        }
                    }
                }
                _ => {
                    let sym = (first as char).to_string();
                    match Element::from_symbol(&sym) {
                        Some(e) => {
                            self.pos += 1;
                            (e, false)
                        }
                        None if first == b'H' => {
                            return Err(SmilesError::unsupported(
                                self.pos,
                                "explicit hydrogen atom",
                            ))
                        }
                        None => {
                            return Err(SmilesError::unsupported(
                                self.pos,
                                format!("element '{sym}'"),
                            ))
                        }
                    }
                }
            }
        } else if first.is_ascii_lowercase() {
            let upper = (first.to_ascii_uppercase() as char).to_string();
            match Element::from_symbol(&upper) {
                Some(e) if e.can_be_aromatic() => {
                    self.pos += 1;
                    (e, true)
                }
                _ => {
                    return Err(SmilesError::unsupported(
                        self.pos,
                        format!("aromatic element '{}'", first as char),
                    ))
                }
            }
        } else if first == b'*' {
            return Err(SmilesError::unsupported(self.pos, "wildcard atom"));
        } else {
            return Err(SmilesError::syntax(self.pos, "expected element symbol"));
        };

        if self.peek() == Some(b'@') {
            return Err(SmilesError::unsupported(self.pos, "stereochemistry"));
        }
        let mut hydrogens = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hydrogens = 1;
            if let Some(d @ b'0'..=b'9') = self.peek() {
                hydrogens = d - b'0';
                self.pos += 1;
            }
        }
        let mut charge: i8 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit: i8 = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if let Some(d @ b'0'..=b'9') = self.peek() {
                charge = unit * (d - b'0') as i8;
                self.pos += 1;
            } else {
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(b':') => return Err(SmilesError::unsupported(self.pos, "atom class")),
            Some(c) => {
                return Err(SmilesError::syntax(
                    self.pos,
                    format!("unexpected '{}' in bracket atom", c.escape_ascii()),
                ))
            }
            None => return Err(SmilesError::syntax(open, "unterminated bracket atom")),
        }
        Ok(Atom {
            element,
            charge,
            hydrogens,
            aromatic,
        })
    }

    fn add_atom(&mut self, atom: Atom, bracket: bool, position: usize) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(PendingAtom { atom, bracket });
        if let Some(prev) = self.prev {
            let explicit = self.pending_bond.take().map(|(o, _)| o);
            self.connect(prev, idx, explicit, position)?;
        }
        self.prev = Some(idx);
        self.branch_open = false;
        Ok(())
    }

    fn connect(
        &mut self,
        a: usize,
        b: usize,
        explicit: Option<BondOrder>,
        position: usize,
    ) -> Result<(), SmilesError> {
        if a == b {
            return Err(SmilesError::syntax(
                position,
                "ring closure onto the same atom",
            ));
        }
        if self
            .bonds
            .iter()
            .any(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
        {
            return Err(SmilesError::syntax(position, "duplicate bond"));
        }
        let order = explicit.unwrap_or({
            if self.atoms[a].atom.aromatic && self.atoms[b].atom.aromatic {
                BondOrder::Aromatic
            } else {
                BondOrder::Single
            }
        });
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let position = self.pos;
        let digit = if self.src[self.pos] == b'%' {
            let d1 = self.src.get(self.pos + 1).copied();
            let d2 = self.src.get(self.pos + 2).copied();
            match (d1, d2) {
                (Some(a @ b'0'..=b'9'), Some(b @ b'0'..=b'9')) => {
                    self.pos += 3;
                    ((a - b'0') * 10 + (b - b'0')) as u32
                }
                _ => {
                    return Err(SmilesError::syntax(
                        position,
                        "'%' must be followed by two digits",
                    ))
                }
            }
        } else {
            self.pos += 1;
            (self.src[position] - b'0') as u32
        };
        let atom = self
            .prev
            .ok_or_else(|| SmilesError::syntax(position, "ring closure without preceding atom"))?;
        if self.branch_open {
            return Err(SmilesError::syntax(
                position,
                "ring closure at start of branch",
            ));
        }
        let order = self.pending_bond.take().map(|(o, _)| o);
        match self.rings.remove(&digit) {
            None => {
                self.rings.insert(
                    digit,
                    RingOpening {
                        atom,
                        order,
                        position,
                    },
                );
            }
            Some(open) => {
                let order = match (open.order, order) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(SmilesError::syntax(
                            position,
                            "conflicting ring-closure bond orders",
                        ))
                    }
                    (Some(x), _) | (None, Some(x)) => Some(x),
                    (None, None) => None,
                };
                self.connect(open.atom, atom, order, position)?;
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<MolecularGraph, SmilesError> {
        let brackets: Vec<bool> = self.atoms.iter().map(|p| p.bracket).collect();
        let atoms: Vec<Atom> = self.atoms.into_iter().map(|p| p.atom).collect();
        let mut graph = MolecularGraph::new(atoms, self.bonds);
        // An implicit bond joining two aromatic rings is single.
        let chain_aromatic: Vec<usize> = (0..graph.bonds().len())
            .filter(|&i| {
                graph.bonds()[i].order == BondOrder::Aromatic && !graph.is_bond_in_ring(i)
            })
            .collect();
        if !chain_aromatic.is_empty() {
            let mut bonds = graph.bonds().to_vec();
            for i in chain_aromatic {
                bonds[i].order = BondOrder::Single;
            }
            graph = MolecularGraph::new(graph.atoms().to_vec(), bonds);
        }
        let mut filled = graph.atoms().to_vec();
        for (i, atom) in filled.iter_mut().enumerate() {
            if atom.aromatic && !graph.is_atom_in_ring(i) {
                return Err(SmilesError::Valence {
                    atom: i,
                    message: "aromatic atom outside a ring".into(),
                });
            }
            let bond_valence = graph.bond_valence(i);
            let table = atom
                .element
                .valences(atom.charge)
                .ok_or_else(|| SmilesError::Valence {
                    atom: i,
                    message: format!(
                        "no valence entry for {} with charge {}",
                        atom.element.symbol(),
                        atom.charge
                    ),
                })?;
            let max = *table.last().unwrap_or(&0);
            if brackets[i] {
                if bond_valence + atom.hydrogens > max {
                    return Err(SmilesError::Valence {
                        atom: i,
                        message: format!(
                            "{} has valence {} (max {max})",
                            atom.element.symbol(),
                            bond_valence + atom.hydrogens
                        ),
                    });
                }
            } else {
                atom.hydrogens = implicit_hydrogens(atom.element, atom.aromatic, bond_valence)
                    .ok_or_else(|| SmilesError::Valence {
                        atom: i,
                        message: format!(
                            "{} has bond valence {bond_valence} (max {max})",
                            atom.element.symbol()
                        ),
                    })?;
            }
        }
        for (i, bond) in graph.bonds().iter().enumerate() {
            if bond.order == BondOrder::Aromatic && !graph.is_bond_in_ring(i) {
                return Err(SmilesError::Valence {
                    atom: bond.a,
                    message: "aromatic bond outside a ring".into(),
                });
            }
        }
        let bonds = graph.bonds().to_vec();
        graph = MolecularGraph::new(filled, bonds);
        Ok(graph)
    }
}
