//! Reproducible random streams.
//!
//! A stream is addressed by `(seed, stream_id)`. Each pair maps to an
//! independent ChaCha8 keystream, so parallel workers that own disjoint
//! stream ids draw identical values regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Materialize the generator at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derive a sub-stream under a different seed so that two purposes sharing
    /// a stream id do not share draws.
    pub fn derive(&self, salt: u64) -> RngStream {
        RngStream {
            seed: self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            stream_id: self.stream_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_address_same_draws() {
        let a: Vec<u64> = (0..8)
            .map({
                let mut r = RngStream::new(7, 3).rng();
                move |_| r.gen()
            })
            .collect();
        let mut r = RngStream::new(7, 3).rng();
        let b: Vec<u64> = (0..8).map(|_| r.gen()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_distinct() {
        let x: u64 = RngStream::new(7, 3).rng().gen();
        let y: u64 = RngStream::new(7, 4).rng().gen();
        let z: u64 = RngStream::new(7, 3).derive(1).rng().gen();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn first_draw_is_pinned() {
        // Guards against silent changes in the generator or seeding scheme,
        // which would break reproducibility of stored datasets. Values from
        // a separate ChaCha8 + PCG32 seed-expansion implementation.
        let v: u64 = RngStream::new(0, 0).rng().gen();
        assert_eq!(v, 13080132717333068652);
        let v: u64 = RngStream::new(7, 3).rng().gen();
        assert_eq!(v, 3348856302973006449);
    }
}
