use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams of a run. Two consumers seeded with the same
/// number still draw from disjoint ChaCha streams.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Init = 1,
    Batch = 2,
    Probe = 3,
    Data = 4,
    Split = 5,
    Power = 6,
}

pub fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
