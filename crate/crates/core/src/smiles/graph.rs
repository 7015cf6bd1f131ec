use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::P => 15,
            Element::S => 16,
            Element::F => 9,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Some(match s {
            "B" => Element::B,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "P" => Element::P,
            "S" => Element::S,
            "F" => Element::F,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            _ => return None,
        })
    }

    /// Elements that may be written in lowercase aromatic form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    /// Allowed total valences (bond orders plus hydrogens) for a formal charge,
    /// ascending. `None` when the charge state is outside the table.
    pub fn valences(self, charge: i8) -> Option<&'static [u8]> {
        use Element::*;
        Some(match (self, charge) {
            (B, 0) => &[3],
            (B, -1) => &[4],
            (C, 0) => &[4],
            (C, 1) | (C, -1) => &[3],
            (N, 0) => &[3],
            (N, 1) => &[4],
            (N, -1) => &[2],
            (O, 0) => &[2],
            (O, -1) => &[1],
            (O, 1) => &[3],
            (P, 0) => &[3, 5],
            (P, 1) => &[4],
            (S, 0) => &[2, 4, 6],
            (S, 1) => &[3],
            (S, -1) => &[1],
            (F | Cl | Br | I, 0) => &[1],
            (F | Cl | Br | I, -1) => &[0],
            _ => return None,
        })
    }

    pub fn is_hetero_nh_o(self) -> bool {
        matches!(self, Element::N | Element::O)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence sum. Aromatic bonds count as one; the
    /// extra delocalized electron is handled by the aromatic allowance.
    pub fn valence_contribution(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    /// Total attached hydrogens (explicit in brackets, implicit otherwise).
    pub hydrogens: u8,
    pub aromatic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

/// Heavy-atom molecular graph. Hydrogens are folded into [`Atom::hydrogens`].
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Per atom: (neighbor, bond index).
    adjacency: Vec<Vec<(usize, usize)>>,
    atom_in_ring: Vec<bool>,
    bond_in_ring: Vec<bool>,
}

impl MolecularGraph {
    /// Builds the graph and its derived ring flags. Callers are responsible for
    /// the endpoint and duplicate-bond invariants (the parser enforces them).
    pub(crate) fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Self {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, bond) in bonds.iter().enumerate() {
            adjacency[bond.a].push((bond.b, i));
            adjacency[bond.b].push((bond.a, i));
        }
        let bond_in_ring = non_bridge_bonds(atoms.len(), &bonds, &adjacency);
        let mut atom_in_ring = vec![false; atoms.len()];
        for (bond, &ring) in bonds.iter().zip(&bond_in_ring) {
            if ring {
                atom_in_ring[bond.a] = true;
                atom_in_ring[bond.b] = true;
            }
        }
        MolecularGraph {
            atoms,
            bonds,
            adjacency,
            atom_in_ring,
            bond_in_ring,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
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

    pub fn is_atom_in_ring(&self, atom: usize) -> bool {
        self.atom_in_ring[atom]
    }

    pub fn is_bond_in_ring(&self, bond: usize) -> bool {
        self.bond_in_ring[bond]
    }

    /// Sum of bond valence contributions around an atom (hydrogens excluded).
    pub fn bond_valence(&self, atom: usize) -> u8 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence_contribution())
            .sum()
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(a) = stack.pop() {
            for &(n, _) in &self.adjacency[a] {
                if !seen[n] {
                    seen[n] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        count == self.atoms.len()
    }

    /// Returns the same molecule with atoms renumbered: new index `perm[i]`
    /// holds old atom `i`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = self.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        MolecularGraph::new(atoms, bonds)
    }
}

/// Hydrogens an organic-subset atom receives when written without brackets,
/// or `None` when its bond valence exceeds every table entry.
pub(crate) fn implicit_hydrogens(element: Element, aromatic: bool, bond_valence: u8) -> Option<u8> {
    let table = element.valences(0)?;
    let target = *table.iter().find(|&&v| v >= bond_valence)?;
    let allowance = u8::from(aromatic);
    Some(target.saturating_sub(bond_valence + allowance))
}

/// Bridge detection by DFS low-link; every non-bridge bond lies on a cycle.
fn non_bridge_bonds(n: usize, bonds: &[Bond], adjacency: &[Vec<(usize, usize)>]) -> Vec<bool> {
    let mut in_ring = vec![true; bonds.len()];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (atom, parent bond, next neighbor slot)
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(top) = stack.last_mut() {
            let (v, parent_bond) = (top.0, top.1);
            if top.2 < adjacency[v].len() {
                let (w, b) = adjacency[v][top.2];
                top.2 += 1;
                if Some(b) == parent_bond {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, Some(b), 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(u, _, _)) = stack.last() {
                    low[u] = low[u].min(low[v]);
                    if low[v] > disc[u] {
                        if let Some(b) = parent_bond {
                            in_ring[b] = false;
                        }
                    }
                }
            }
        }
    }
    in_ring
}
