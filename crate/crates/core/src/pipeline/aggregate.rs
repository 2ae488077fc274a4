use num_traits::Float;

use crate::error::{Error, Result};

/// Result of merging per-object foreground probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated<T> {
    /// One map per object, in input order.
    pub objects: Vec<Vec<T>>,
    pub background: Vec<T>,
    /// Per-pixel argmax over `[background, objects...]`; ties go to the lower
    /// index.
    pub labels: Vec<u8>,
}

/// Soft aggregation of independent per-object foreground maps.
///
/// Background is `prod(1 - p_m)`. Every class is converted to odds
/// `p / max(1 - p, eps)` and the odds are normalized per pixel.
pub fn soft_aggregate<T: Float>(fg_probs: &[&[T]], eps: T) -> Result<Aggregated<T>> {
    let n = fg_probs.first().map(|m| m.len()).unwrap_or(0);
    if fg_probs.iter().any(|m| m.len() != n) {
        return Err(Error::invalid_arg("object maps differ in size"));
    }
    if fg_probs.len() > u8::MAX as usize {
        return Err(Error::invalid_arg("at most 255 objects are supported"));
    }
    let one = T::one();
    let odds = |p: T| p / (one - p).max(eps);
    let mut objects = vec![Vec::with_capacity(n); fg_probs.len()];
    let mut background = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut o = vec![T::zero(); fg_probs.len()];
    for px in 0..n {
        let mut p0 = one;
        for (om, m) in o.iter_mut().zip(fg_probs) {
            let p = m[px].max(T::zero()).min(one);
            p0 = p0 * (one - p);
            *om = odds(p);
        }
        let o0 = odds(p0);
        let total = o.iter().fold(o0, |acc, &v| acc + v);
        let bg = o0 / total;
        background.push(bg);
        let (mut best, mut best_v) = (0u8, bg);
        for (k, (&om, dst)) in o.iter().zip(objects.iter_mut()).enumerate() {
            let v = om / total;
            dst.push(v);
            if v > best_v {
                best = (k + 1) as u8;
                best_v = v;
            }
        }
        labels.push(best);
    }
    Ok(Aggregated {
        objects,
        background,
        labels,
    })
}
