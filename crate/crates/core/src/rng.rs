//! Seed expansion. One user-visible seed fans out into independent,
//! reproducible generators through ChaCha stream ids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

/// Stream ids reserved per pipeline stage.
pub mod streams {
    pub const SEARCH: u64 = 1;
    pub const EXPLAIN_PERTURB: u64 = 2;
    pub const EXPLAIN_VALIDATE: u64 = 3;
    pub const FINE_TUNE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const PLANT: u64 = 6;
    pub const DATASET: u64 = 7;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStream {
    pub seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Generator for stream `id`. Distinct ids never share output.
    pub fn rng(&self, id: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    /// Child seed stream; `fork(a).rng(b)` and `fork(c).rng(b)` are independent for a != c.
    pub fn fork(&self, id: u64) -> SeedStream {
        SeedStream {
            seed: splitmix64(self.seed ^ splitmix64(id.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
