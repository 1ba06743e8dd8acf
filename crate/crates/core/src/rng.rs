//! Seeded, keyed random streams.
//!
//! A stream is identified by a 64-bit seed and a key of four integers
//! `(purpose, time, index, trial)`. The seed and the first three key words
//! form the 256-bit ChaCha key and the trial word selects the ChaCha stream,
//! so the mapping from `(seed, key)` to the generated sequence is injective.
//! Deriving a substream never advances the parent.

use rand::{Error, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// What a substream is used for. Occupies the first key word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Root = 0,
    Initial = 1,
    Resample = 2,
    Propagate = 3,
    BackwardInit = 4,
    Backward = 5,
    Fallback = 6,
    Simulate = 7,
    Experiment = 8,
    Check = 9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StreamKey {
    pub purpose: u64,
    pub time: u64,
    pub index: u64,
    pub trial: u64,
}

impl StreamKey {
    pub fn new(purpose: Purpose, time: u64, index: u64, trial: u64) -> Self {
        Self {
            purpose: purpose as u64,
            time,
            index,
            trial,
        }
    }

    pub fn purpose(purpose: Purpose) -> Self {
        Self::new(purpose, 0, 0, 0)
    }
}

/// A deterministic random stream. Implements [`RngCore`], so every `rand`
/// distribution can draw from it.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    key: StreamKey,
    inner: ChaCha12Rng,
}

impl RngStream {
    /// Root stream for `seed`.
    pub fn new(seed: u64) -> Self {
        Self::with_key(seed, StreamKey::default())
    }

    pub fn with_key(seed: u64, key: StreamKey) -> Self {
        let mut material = [0u8; 32];
        for (chunk, word) in material
            .chunks_exact_mut(8)
            .zip([seed, key.purpose, key.time, key.index])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut inner = ChaCha12Rng::from_seed(material);
        inner.set_stream(key.trial);
        Self { seed, key, inner }
    }

    /// Fresh stream sharing this stream's seed. Independent of how much of
    /// `self` has been consumed.
    pub fn substream(&self, key: StreamKey) -> Self {
        Self::with_key(self.seed, key)
    }

    /// Shorthand for `substream(StreamKey::new(purpose, time, index, 0))`.
    pub fn derive(&self, purpose: Purpose, time: u64, index: u64) -> Self {
        self.substream(StreamKey::new(purpose, time, index, 0))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    #[inline]
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    #[inline]
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), Error> {
        self.inner.try_fill_bytes(dest)
    }
}
