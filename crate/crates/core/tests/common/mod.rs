//! Brute-force reference implementations used by the integration tests.
//!
//! These deliberately materialize every reference/query pair and apply each rule
//! literally. They share no code with the crate's kernels.

#![allow(dead_code)]

use bimatch_core::embedding::ConvWeights;
use bimatch_core::{FeatureMap, MaskStack, ProbMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform features in `[-1, 1)`. With `quantized`, values come from a handful of
/// levels so exact ties are common.
pub fn random_features(
    rng: &mut ChaCha8Rng,
    c: usize,
    h: usize,
    w: usize,
    quantized: bool,
) -> FeatureMap {
    let data = (0..c * h * w)
        .map(|_| {
            if quantized {
                rng.random_range(-2i32..=2) as f32 * 0.5
            } else {
                rng.random_range(-1.0f32..1.0)
            }
        })
        .collect();
    FeatureMap::new(c, h, w, data).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, hard: bool) -> ProbMask {
    let fg = (0..h * w)
        .map(|_| {
            if hard {
                if rng.random_bool(0.4) {
                    1.0
                } else {
                    0.0
                }
            } else {
                rng.random_range(0.0f32..=1.0)
            }
        })
        .collect();
    ProbMask::from_foreground(h, w, fg).unwrap()
}

fn literal_unit(v: &[f32]) -> Vec<f64> {
    let mut sq = 0.0f64;
    for &x in v {
        sq += x as f64 * x as f64;
    }
    let norm = sq.sqrt();
    v.iter()
        .map(|&x| if norm < 1e-12 { 0.0 } else { x as f64 / norm })
        .collect()
}

/// `(N(a) . N(b) + 1) / 2`, clamped to `[0, 1]`.
pub fn literal_similarity(a: &[f32], b: &[f32]) -> f32 {
    let (ua, ub) = (literal_unit(a), literal_unit(b));
    let mut dot = 0.0f64;
    for c in 0..ua.len() {
        dot += ua[c] * ub[c];
    }
    ((dot + 1.0) * 0.5).clamp(0.0, 1.0) as f32
}

/// Full matching pipeline, one pair at a time. `k = None` means surjective.
pub fn oracle_match(
    reference: &FeatureMap,
    query: &FeatureMap,
    mask: &ProbMask,
    k: Option<usize>,
) -> (Vec<f32>, Vec<f32>) {
    let (nr, nq) = (reference.pixels(), query.pixels());
    let mut s = vec![vec![0.0f32; nq]; nr];
    for (p, row) in s.iter_mut().enumerate() {
        let a = reference.pixel_vector(p);
        for (q, v) in row.iter_mut().enumerate() {
            *v = literal_similarity(&a, &query.pixel_vector(q));
        }
    }
    if let Some(k) = k {
        for row in s.iter_mut() {
            let lowest = row.iter().copied().fold(f32::INFINITY, f32::min);
            // rank by value descending, then by query index ascending
            let mut order: Vec<usize> = (0..nq).collect();
            order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
            let kept: Vec<usize> = order.into_iter().take(k).collect();
            for (q, v) in row.iter_mut().enumerate() {
                if !kept.contains(&q) {
                    *v = lowest;
                }
            }
        }
    }
    let mut y_bg = vec![0.0f32; nq];
    let mut y_fg = vec![0.0f32; nq];
    for q in 0..nq {
        for (p, row) in s.iter().enumerate() {
            y_bg[q] = y_bg[q].max(row[q] * mask.bg()[p]);
            y_fg[q] = y_fg[q].max(row[q] * mask.fg()[p]);
        }
    }
    (y_bg, y_fg)
}

/// Direct six-loop 3x3 same-padded convolution + ReLU, four layers, in f64.
pub fn oracle_embed(stack: &MaskStack, w: &ConvWeights) -> Vec<f64> {
    let (h, wd) = (stack.height as i64, stack.width as i64);
    let mut x: Vec<f64> = stack.planes.iter().map(|&v| v as f64).collect();
    for layer in w.layers() {
        let mut out = vec![0.0f64; layer.out_channels * (h * wd) as usize];
        for o in 0..layer.out_channels {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = layer.bias[o] as f64;
                    for i in 0..layer.in_channels {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h || sx >= wd {
                                    continue;
                                }
                                let v = x[(i as i64 * h * wd + sy * wd + sx) as usize];
                                acc += layer.tap(o, i, ky as usize, kx as usize) as f64 * v;
                            }
                        }
                    }
                    out[(o as i64 * h * wd + y * wd + xx) as usize] = acc.max(0.0);
                }
            }
        }
        x = out;
    }
    x
}

/// Boundary F-measure by exhaustive distance search between boundary pixels.
pub fn oracle_f(pred: &[bool], gt: &[bool], h: usize, w: usize, radius: usize) -> f64 {
    let boundary = |m: &[bool]| -> Vec<(i64, i64)> {
        let mut out = vec![];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if !m[(y * w as i64 + x) as usize] {
                    continue;
                }
                let off = |yy: i64, xx: i64| {
                    yy < 0
                        || xx < 0
                        || yy >= h as i64
                        || xx >= w as i64
                        || !m[(yy * w as i64 + xx) as usize]
                };
                if off(y - 1, x) || off(y + 1, x) || off(y, x - 1) || off(y, x + 1) {
                    out.push((y, x));
                }
            }
        }
        out
    };
    let (bp, bg) = (boundary(pred), boundary(gt));
    if bp.is_empty() && bg.is_empty() {
        return 1.0;
    }
    let r2 = (radius * radius) as i64;
    let covered = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        if from.is_empty() {
            return 0.0;
        }
        let hits = from
            .iter()
            .filter(|&&(y, x)| {
                to.iter()
                    .any(|&(v, u)| (y - v).pow(2) + (x - u).pow(2) <= r2)
            })
            .count();
        hits as f64 / from.len() as f64
    };
    let (p, r) = (covered(&bp, &bg), covered(&bg, &bp));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
