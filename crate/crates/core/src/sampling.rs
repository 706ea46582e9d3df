//! Weighted sampling without replacement by exponential keys.
//!
//! Each position gets the key `ln(u) / w` with `u ~ U(0, 1]`; the `n` largest
//! keys form the sample, and their descending order is a valid sequential
//! draw order. Uniform sampling is the equal-weight case, which makes samples
//! of different sizes from the same stream nested.

use rand::Rng;

fn top_keys(mut keyed: Vec<(f64, usize)>, n: usize) -> Vec<usize> {
    let by_key = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if n < keyed.len() {
        keyed.select_nth_unstable_by(n, by_key);
        keyed.truncate(n);
    }
    keyed.sort_unstable_by(by_key);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Draws `min(n, weights.len())` distinct positions, returned in draw order.
///
/// Weights must be positive and finite.
pub fn weighted_sample<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], n: usize) -> Vec<usize> {
    debug_assert!(weights.iter().all(|w| *w > 0.0 && w.is_finite()));
    let keyed = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u = 1.0 - rng.random::<f64>();
            (u.ln() / w, i)
        })
        .collect();
    top_keys(keyed, n)
}

/// Uniform sample of `min(n, len)` distinct positions from `0..len`, in draw order.
pub fn uniform_sample<R: Rng + ?Sized>(rng: &mut R, len: usize, n: usize) -> Vec<usize> {
    let keyed = (0..len).map(|i| (rng.random::<f64>(), i)).collect();
    top_keys(keyed, n)
}
