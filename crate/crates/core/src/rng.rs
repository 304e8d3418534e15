//! Seeded random streams. Each purpose gets its own ChaCha stream so that,
//! for example, the trajectory of trial t is identical across algorithms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TRAJECTORY: u64 = 1;
const FILTER: u64 = 2;
const QWS_INIT: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Initial state, process and measurement noise.
pub fn trajectory_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, TRAJECTORY)
}

/// Per-step random vectors drawn inside the filters.
pub fn filter_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, FILTER)
}

/// Initial random rows of the direct-mode covariance estimator.
pub fn qws_init_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, QWS_INIT)
}
