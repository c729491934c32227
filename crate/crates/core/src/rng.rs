//! Seeded random streams. Each consumer draws from its own ChaCha8 stream
//! of the scenario seed so that adding draws in one place never shifts
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Topology = 0,
    Catalog = 1,
    Workload = 2,
    Churn = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
