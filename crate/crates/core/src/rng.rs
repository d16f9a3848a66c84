//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by a tuple of integer keys
//! (seed, entity, time, ...). The keys are folded with splitmix64 into a
//! ChaCha8 seed, so any stream can be regenerated without replaying the
//! draws that precede it. This is what makes traffic traces random-access and
//! the parallel candidate search independent of the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a key tuple into a single well-mixed 64-bit value.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x6a09_e667_f3bc_c909, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// A deterministic generator for the stream addressed by `keys`.
pub fn keyed(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(keys))
}

/// Serde adapter that stores a generator's exact position. The 128-bit word
/// position is written as a decimal string.
pub mod saved {
    use rand_chacha::ChaCha8Rng;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct State {
        seed: [u8; 32],
        stream: u64,
        word_pos: String,
    }

    pub fn serialize<S: Serializer>(rng: &ChaCha8Rng, s: S) -> Result<S::Ok, S::Error> {
        State {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ChaCha8Rng, D::Error> {
        use rand::SeedableRng;
        let st = State::deserialize(d)?;
        let pos: u128 = st.word_pos.parse().map_err(D::Error::custom)?;
        let mut rng = ChaCha8Rng::from_seed(st.seed);
        rng.set_stream(st.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}
