use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{implicit_hydrogens, BondOrder, MolecularGraph};

/// A canonical SMILES string: equal for every spelling of the same molecule.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalSmiles(String);

impl CanonicalSmiles {
    #[cfg(test)]
    pub(crate) fn new_unchecked(s: String) -> Self {
        CanonicalSmiles(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CanonicalSmiles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CanonicalSmiles {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

pub fn canonicalize(graph: &MolecularGraph) -> CanonicalSmiles {
    let ranks = canonical_ranks(graph);
    let root = (0..graph.atom_count())
        .min_by_key(|&i| ranks[i])
        .unwrap_or(0);
    CanonicalSmiles(write(graph, &ranks, root, &mut LowestFreeDigit))
}

/// Writes a random valid spelling of the molecule: random root, random
/// neighbor order and shuffled ring-closure labels.
pub fn write_randomized<R: Rng + ?Sized>(graph: &MolecularGraph, rng: &mut R) -> String {
    let n = graph.atom_count();
    let mut priority: Vec<usize> = (0..n).collect();
    priority.shuffle(rng);
    let root = if n == 0 { 0 } else { rng.gen_range(0..n) };
    let mut labels = RandomDigit { rng };
    write(graph, &priority, root, &mut labels)
}

/// Dense ranks from (element, degree, charge, H count, aromatic) refined by
/// neighborhoods until stable; remaining ties are broken one at a time.
pub fn canonical_ranks(graph: &MolecularGraph) -> Vec<usize> {
    let n = graph.atom_count();
    let invariants: Vec<(u8, usize, i8, u8, bool)> = (0..n)
        .map(|i| {
            let a = graph.atoms()[i];
            (
                a.element.atomic_number(),
                graph.degree(i),
                a.charge,
                a.hydrogens,
                a.aromatic,
            )
        })
        .collect();
    let mut ranks = dense_ranks(&invariants);
    ranks = refine(graph, ranks);
    loop {
        let Some(tied) = lowest_tied_class(&ranks) else {
            return ranks;
        };
        let victim = (0..n)
            .find(|&i| ranks[i] == tied)
            .expect("tied class is non-empty");
        let mut split: Vec<usize> = ranks.iter().map(|r| r * 2 + 1).collect();
        split[victim] -= 1;
        ranks = refine(graph, dense_ranks(&split));
    }
}

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key present"))
        .collect()
}

fn class_count(ranks: &[usize]) -> usize {
    let mut seen: Vec<usize> = ranks.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

fn refine(graph: &MolecularGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..graph.atom_count())
            .map(|i| {
                let mut env: Vec<(usize, u8)> = graph
                    .neighbors(i)
                    .iter()
                    .map(|&(nb, b)| (ranks[nb], graph.bonds()[b].order.code()))
                    .collect();
                env.sort_unstable();
                (ranks[i], env)
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_classes = class_count(&next);
        if next_classes == classes {
            return next;
        }
        classes = next_classes;
        ranks = next;
    }
}

fn lowest_tied_class(ranks: &[usize]) -> Option<usize> {
    let mut counts = vec![0usize; ranks.len()];
    for &r in ranks {
        counts[r] += 1;
    }
    counts.iter().position(|&c| c > 1)
}

trait DigitPolicy {
    fn pick(&mut self, in_use: &[bool]) -> usize;
}

struct LowestFreeDigit;

impl DigitPolicy for LowestFreeDigit {
    fn pick(&mut self, in_use: &[bool]) -> usize {
        (1..in_use.len())
            .find(|&d| !in_use[d])
            .expect("ring label space exhausted")
    }
}

struct RandomDigit<'r, R: Rng + ?Sized> {
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> DigitPolicy for RandomDigit<'_, R> {
    fn pick(&mut self, in_use: &[bool]) -> usize {
        // Mostly single digits, occasionally a %nn label.
        let hi = if self.rng.gen_bool(0.1) {
            in_use.len()
        } else {
            10
        };
        let free: Vec<usize> = (1..hi).filter(|&d| !in_use[d]).collect();
        match free.choose(self.rng) {
            Some(&d) => d,
            None => LowestFreeDigit.pick(in_use),
        }
    }
}

/// DFS writer. `priority` orders root choice and neighbor visits (lower
/// first); ring labels come from `digits`.
fn write(
    graph: &MolecularGraph,
    priority: &[usize],
    root: usize,
    digits: &mut dyn DigitPolicy,
) -> String {
    let n = graph.atom_count();
    if n == 0 {
        return String::new();
    }
    // Pass 1: spanning tree and ring-closure bonds.
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut ring_bonds: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut is_tree_bond = vec![false; graph.bond_count()];
    let mut is_ring_bond = vec![false; graph.bond_count()];
    let sorted_neighbors = |a: usize| {
        let mut nbs = graph.neighbors(a).to_vec();
        nbs.sort_by_key(|&(nb, _)| priority[nb]);
        nbs
    };
    let mut stack: Vec<(usize, Vec<(usize, usize)>, usize)> = Vec::new();
    visited[root] = true;
    stack.push((root, sorted_neighbors(root), 0));
    while let Some(top) = stack.last_mut() {
        let atom = top.0;
        if top.2 < top.1.len() {
            let (nb, bond) = top.1[top.2];
            top.2 += 1;
            if is_tree_bond[bond] || is_ring_bond[bond] {
                continue;
            }
            if visited[nb] {
                is_ring_bond[bond] = true;
                ring_bonds[atom].push((nb, bond));
                ring_bonds[nb].push((atom, bond));
            } else {
                is_tree_bond[bond] = true;
                visited[nb] = true;
                children[atom].push((nb, bond));
                let nbs = sorted_neighbors(nb);
                stack.push((nb, nbs, 0));
            }
        } else {
            stack.pop();
        }
    }

    // Pass 2: emit.
    let mut out = String::new();
    let mut written = vec![false; n];
    let mut open_label: Vec<Option<usize>> = vec![None; graph.bond_count()];
    let mut in_use = vec![false; 100];
    enum Step {
        Atom(usize, Option<usize>),
        Open,
        Close,
    }
    let mut work = vec![Step::Atom(root, None)];
    while let Some(step) = work.pop() {
        match step {
            Step::Close => out.push(')'),
            Step::Atom(atom, incoming) => {
                if let Some(b) = incoming {
                    out.push_str(bond_symbol(graph, b));
                }
                write_atom(graph, atom, &mut out);
                written[atom] = true;
                let mut rings = ring_bonds[atom].clone();
                rings.sort_by_key(|&(nb, _)| priority[nb]);
                for (nb, bond) in rings {
                    if written[nb] {
                        let label = open_label[bond].take().expect("ring opened at partner");
                        in_use[label] = false;
                        push_label(&mut out, label);
                    } else {
                        let label = digits.pick(&in_use);
                        in_use[label] = true;
                        open_label[bond] = Some(label);
                        out.push_str(bond_symbol(graph, bond));
                        push_label(&mut out, label);
                    }
                }
                let kids = &children[atom];
                // Pushed in reverse so the first child is emitted first; all
                // but the last child are parenthesized branches.
                for (i, &(kid, bond)) in kids.iter().enumerate().rev() {
                    if i + 1 == kids.len() {
                        work.push(Step::Atom(kid, Some(bond)));
                    } else {
                        work.push(Step::Close);
                        work.push(Step::Atom(kid, Some(bond)));
                        work.push(Step::Open);
                    }
                }
            }
            Step::Open => out.push('('),
        }
    }
    out
}

fn push_label(out: &mut String, label: usize) {
    if label < 10 {
        out.push(char::from(b'0' + label as u8));
    } else {
        out.push('%');
        out.push_str(&format!("{label:02}"));
    }
}

fn bond_symbol(graph: &MolecularGraph, bond: usize) -> &'static str {
    let b = graph.bonds()[bond];
    let atoms = graph.atoms();
    match b.order {
        BondOrder::Single if atoms[b.a].aromatic && atoms[b.b].aromatic => "-",
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

fn write_atom(graph: &MolecularGraph, atom: usize, out: &mut String) {
    let a = graph.atoms()[atom];
    let symbol = if a.aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    let implicit = implicit_hydrogens(a.element, a.aromatic, graph.bond_valence(atom));
    if a.charge == 0 && implicit == Some(a.hydrogens) {
        out.push_str(&symbol);
        return;
    }
    out.push('[');
    out.push_str(&symbol);
    match a.hydrogens {
        0 => {}
        1 => out.push('H'),
        h => {
            out.push('H');
            out.push_str(&h.to_string());
        }
    }
    match a.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    out.push(']');
}
