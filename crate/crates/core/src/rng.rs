//! Seed fan-out.
//!
//! A single master seed is expanded into independent, named streams so that
//! switching one randomness source on or off never shifts the draws of
//! another. Every stream is additionally indexed (draw number, step number,
//! agent number), which keeps Monte Carlo draws reproducible regardless of
//! how they are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const GEOMETRY: &str = "geometry";
pub const FADING: &str = "fading";
pub const AOD_ERROR: &str = "aod-error";
pub const PHASE_ERROR: &str = "phase-error";
pub const ACTION_SAMPLING: &str = "action-sampling";
pub const BUFFER_SAMPLING: &str = "buffer-sampling";
pub const NETWORK_INIT: &str = "network-init";
pub const WARMUP: &str = "warmup";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed(&self, name: &str, index: u64) -> u64 {
        let a = splitmix64(self.master ^ splitmix64(fnv1a(name)));
        splitmix64(a ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
    }

    pub fn stream(&self, name: &str, index: u64) -> SimRng {
        SimRng::seed_from_u64(self.seed(name, index))
    }

    /// A subtree, e.g. one per agent or per sweep point.
    pub fn child(&self, name: &str, index: u64) -> SeedTree {
        SeedTree::new(self.seed(name, index))
    }

    /// The four streams consumed by one simulation step.
    pub fn draw(&self, index: u64) -> DrawRngs {
        DrawRngs {
            geometry: self.stream(GEOMETRY, index),
            fading: self.stream(FADING, index),
            aod: self.stream(AOD_ERROR, index),
            phase: self.stream(PHASE_ERROR, index),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DrawRngs {
    pub geometry: SimRng,
    pub fading: SimRng,
    pub aod: SimRng,
    pub phase: SimRng,
}
