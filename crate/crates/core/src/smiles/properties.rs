use serde::{Deserialize, Serialize};

use super::graph::MolecularGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PropertyVector {
    /// N/O atoms carrying at least one hydrogen.
    pub hb_donors: u32,
    /// N/O atoms.
    pub hb_acceptors: u32,
    /// Cyclomatic number of the (connected) graph.
    pub ring_count: u32,
    pub heavy_atom_count: u32,
}

pub fn compute_properties(graph: &MolecularGraph) -> PropertyVector {
    let hetero = graph.atoms().iter().filter(|a| a.element.is_hetero_nh_o());
    let hb_acceptors = hetero.clone().count() as u32;
    let hb_donors = hetero.filter(|a| a.hydrogens > 0).count() as u32;
    let ring_count = (graph.bond_count() + 1).saturating_sub(graph.atom_count()) as u32;
    PropertyVector {
        hb_donors,
        hb_acceptors,
        ring_count,
        heavy_atom_count: graph.atom_count() as u32,
    }
}
