pub mod decoding;
pub mod fingerprints;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod rl;
pub mod sft;
pub mod smiles;
