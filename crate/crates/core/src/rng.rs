//! Named random streams derived from a single master seed.
//!
//! Every stochastic component draws from its own stream so one component can
//! be varied while the others are held fixed. A stream is addressed by a name
//! plus an arbitrary index path (replicate, episode, stage, ...).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const ATB: &str = "atb";
pub const PERCEIVED: &str = "perceived";
pub const INIT: &str = "init";
pub const TRANSITION: &str = "transition";
pub const EMBED: &str = "embed";
pub const KMEANS: &str = "kmeans";
pub const TRAIN: &str = "train";
pub const EVAL: &str = "eval";
pub const POLICY: &str = "policy";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Child stream family rooted at `name/path`.
    pub fn child(&self, name: &str, path: &[u64]) -> Streams {
        Streams {
            master: self.key(name, path),
        }
    }

    pub fn rng(&self, name: &str, path: &[u64]) -> StreamRng {
        let key = self.key(name, path);
        let mut seed = [0u8; 32];
        let mut state = key;
        for chunk in seed.chunks_mut(8) {
            state = splitmix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    fn key(&self, name: &str, path: &[u64]) -> u64 {
        // FNV-1a over the name, then fold the index path through splitmix.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut k = splitmix(self.master ^ splitmix(h));
        for &p in path {
            k = splitmix(k ^ splitmix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
        }
        k
    }
}
