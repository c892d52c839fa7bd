//! Seeded operands. ChaCha8 with a per-layer stream keeps every layer's
//! tensors independent of which other layers are selected.

use gatherconv::{ConvShape, FilterTensor, MapTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layer_stream(id: &str) -> u64 {
    // FNV-1a
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Uniform `[-1, 1]` map and filter bank for layer `id`.
pub fn layer_operands(shape: &ConvShape, id: &str, seed: u64) -> (MapTensor, FilterTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer_stream(id));
    let map = MapTensor::from_fn(shape.nc, shape.hi, shape.wi, shape.nb, |_, _, _, _| {
        rng.random_range(-1.0f32..=1.0)
    });
    let filters = FilterTensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0f32..=1.0));
    (map, filters)
}
