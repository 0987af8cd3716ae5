//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit is keyed by a root seed plus a path of
//! labels (split, class, sample id, replicate...). Deriving child seeds from
//! the path, rather than from draw order, keeps results independent of
//! scheduling and of the order in which samples are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// A seed plus the path used to reach it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPath(u64);

impl SeedPath {
    pub fn root(seed: u64) -> Self {
        SeedPath(splitmix64(seed))
    }

    /// Child stream keyed by a text label.
    pub fn child(self, label: &str) -> Self {
        SeedPath(splitmix64(self.0 ^ fnv1a(label.as_bytes())))
    }

    /// Child stream keyed by an integer index.
    pub fn index(self, i: u64) -> Self {
        SeedPath(splitmix64(self.0.rotate_left(17) ^ splitmix64(i)))
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Shorthand for `SeedPath::root(root)` followed by text labels.
pub fn derive_seed(root: u64, labels: &[&str]) -> u64 {
    labels
        .iter()
        .fold(SeedPath::root(root), |p, l| p.child(l))
        .seed()
}
