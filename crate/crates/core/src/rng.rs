//! Seeded random streams. Each subsystem draws from its own xoshiro256++
//! stream, obtained from the master generator by a fixed number of jumps, so
//! adding draws in one subsystem never perturbs another.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Perception = 1,
    User = 2,
    Pose = 3,
    Side = 4,
    Fuzz = 5,
}

pub fn stream(seed: u64, id: Stream) -> Rng {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..id as u32 {
        rng.jump();
    }
    rng
}
