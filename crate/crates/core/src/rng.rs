//! Counter-based random substreams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by the master
//! seed, with the ChaCha stream id selecting an independent substream. A
//! replicate, image or class always reads from the same substream no matter
//! which thread processes it or in what order, so parallel and serial runs
//! agree bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Name recorded in run manifests.
pub const SCHEME: &str = "chacha8(seed_from_u64(master ^ domain)).set_stream(index)";

/// Separates the substream families of different operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Bootstrap = 0x626f_6f74,
    Simulation = 0x7369_6d75,
    Sampling = 0x7361_6d70,
    Folds = 0x666f_6c64,
}

pub fn substream(master: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ domain as u64);
    rng.set_stream(index);
    rng
}

/// Stable 64-bit key for a string label (first 8 bytes of its SHA-256).
pub fn label_key(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Uniform draw from the open interval (0, 1).
pub fn open_unit(rng: &mut impl rand::Rng) -> f64 {
    // 53 random bits, shifted off zero by half an ulp.
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
