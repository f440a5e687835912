//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`Stream`], a ChaCha8 generator
//! seeded from a root seed and a fixed label so that independent components
//! never share a stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Creates the stream for `label` under the root `seed`.
pub fn stream(seed: u64, label: &str) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, label))
}

/// Mixes a root seed with a label (FNV-1a over the label, then splitmix64).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)`.
pub fn unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Draws an index from the categorical distribution `probs` by inversion.
///
/// Rounding slack at the top end falls on the last index with positive mass.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u = unit(rng);
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Same as [`categorical`] over sparse `(index, prob)` pairs.
pub fn categorical_sparse<R: Rng + ?Sized>(rng: &mut R, entries: &[(usize, f64)]) -> usize {
    let u = unit(rng);
    let mut acc = 0.0;
    let mut last = entries.first().map_or(0, |e| e.0);
    for &(i, p) in entries {
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Symmetric Dirichlet(1) draw written into `out` (normalized exponentials).
pub fn flat_dirichlet<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut total = 0.0;
    for v in out.iter_mut() {
        // 1 - u lies in (0, 1], so the log is finite.
        let e = -libm::log(1.0 - unit(rng));
        *v = e;
        total += e;
    }
    if total <= 0.0 {
        let n = out.len() as f64;
        out.iter_mut().for_each(|v| *v = 1.0 / n);
    } else {
        out.iter_mut().for_each(|v| *v /= total);
    }
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: Rng + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
