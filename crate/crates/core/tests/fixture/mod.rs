//! Dispatcher setup shared by the end-to-end tests.

#![allow(dead_code)]

use std::path::Path;

use cloudsplit::persistence::{KeyStore, ManifestStore};
use cloudsplit::policy::Policy;
use cloudsplit::router::Dispatcher;
use cloudsplit::simcloud::SimCloud;

/// Router defaults with a small homomorphic modulus and block size.
pub fn quick_policy() -> Policy {
    Policy {
        he_bits: 128,
        block_size: 64,
        ..Policy::default()
    }
}

pub fn dispatcher(cloud: &SimCloud, policy: Policy, dir: &Path, seed: u64) -> Dispatcher {
    Dispatcher::new(
        policy,
        cloud.handles(),
        ManifestStore::open(dir.join("manifest.cmf")).unwrap(),
        KeyStore::open(dir.join("keys.cmf")).unwrap(),
        seed,
    )
    .unwrap()
}

pub fn seeded_bytes(seed: u64, len: usize) -> Vec<u8> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(0..32u8) * 3).collect()
}
