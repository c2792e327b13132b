use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Step = 1,
    Resample = 2,
    Final = 3,
    SecondPass = 4,
    Conditional = 5,
}

/// Independent generator for `(seed, stream, a, b)`.
pub(crate) fn substream(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Generator for the `index`-th particle within a rejuvenation pass.
pub(crate) fn rejuv_stream(seed: u64, stream: Stream, pass: u64, position: u64, particle: u64) -> ChaCha8Rng {
    let mut rng = substream(seed, stream, pass, position);
    rng.set_stream(particle);
    rng
}
