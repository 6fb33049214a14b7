//! Seeded random streams.
//!
//! Each firm draws from its own ChaCha stream, so adding firms to a run or
//! changing which firms are simulated never perturbs another firm's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::network::FirmId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    InitialInventory = 0,
    Demand = 1,
}

pub fn firm_stream(seed: u64, firm: FirmId, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(firm.0 as u64 * 4 + purpose as u64);
    rng
}
