//! Counter-based Gaussian variates.
//!
//! Brownian increments are indexed by `(seed, stream, step)`: the stream
//! selects an independent path, the step selects a block of normals inside
//! that path. Any block can be produced without generating its
//! predecessors, so ensembles give identical numbers no matter how paths
//! are scheduled across threads, and a single path can be (re)generated
//! from any step onward.
//!
//! Implementation: one ChaCha12 keyed by the seed, with the cipher's 64-bit
//! stream id selecting the path and its word counter addressing the step.
//! Each step consumes a fixed number of words (Box-Muller pairs, two `u64`
//! per pair, the last normal discarded when the block size is odd), so step
//! blocks are contiguous and sequential generation matches random access
//! bit for bit.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cipher(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// `u32` words of cipher output consumed per step block of `count` normals.
fn words_per_step(count: usize) -> u128 {
    // ceil(count / 2) Box-Muller pairs, two u64 (four words) each.
    (count.div_ceil(2) * 4) as u128
}

#[inline]
fn push_pair(out: &mut Vec<f64>, rng: &mut ChaCha12Rng, want: usize) {
    // (0, 1] so the logarithm is finite; [0, 1) for the angle.
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    out.push(r * theta.cos());
    if out.len() < want {
        out.push(r * theta.sin());
    }
}

/// The `count` standard normals of one `(seed, stream, step)` block.
pub fn normals_at(seed: u64, stream: u64, step: u64, count: usize) -> Vec<f64> {
    let mut rng = cipher(seed, stream);
    rng.set_word_pos(step as u128 * words_per_step(count));
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        push_pair(&mut out, &mut rng, count);
    }
    out
}

/// All step blocks `0..steps` of a stream, concatenated row-major
/// (`steps * count` values). Identical to calling [`normals_at`] per step.
pub fn normals_matrix(seed: u64, stream: u64, steps: usize, count: usize) -> Vec<f64> {
    let mut rng = cipher(seed, stream);
    let mut out = Vec::with_capacity(steps * count);
    for _ in 0..steps {
        // Pairs never straddle a step boundary: for odd `count` the second
        // half of the last pair is drawn and dropped, keeping the word
        // counter aligned with `normals_at`.
        let want = out.len() + count;
        while out.len() < want {
            push_pair(&mut out, &mut rng, want);
        }
    }
    out
}
