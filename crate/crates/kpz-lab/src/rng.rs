//! Reproducible randomness.
//!
//! Every stochastic routine takes a `u64` seed and derives independent
//! ChaCha8 streams from it: stream `p` is used for path or replica `p`.
//! Counter-mode streams make results independent of scheduling, so a
//! parallel run over paths is bit-identical to a serial one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fill a buffer with standard normals from the given stream.
pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    use rand::Rng;
    for v in out.iter_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
}
