use crate::error::{Error, Result};
use crate::matching::ScoreMapPair;
use crate::tensor::ProbMask;

use super::PipelineConfig;

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Separable 5x5 binomial blur with edge replication.
pub fn binomial_blur(src: &[f32], h: usize, w: usize) -> Vec<f64> {
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = BINOMIAL5
                .iter()
                .enumerate()
                .map(|(k, &c)| c * src[y * w + clamp(x as isize + k as isize - 2, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = BINOMIAL5
                .iter()
                .enumerate()
                .map(|(k, &c)| c * tmp[clamp(y as isize + k as isize - 2, h) * w + x])
                .sum();
        }
    }
    out
}

/// Deterministic decoder: blends global and local matching scores with a blurred
/// prior from the previous mask, then normalizes per pixel.
///
/// `score_c = alpha * global_c + (1 - alpha) * local_c + beta * blur(prev_c)`.
/// Pixels whose two scores sum below `cfg.epsilon` split evenly.
pub fn fusion_decode(
    global: &ScoreMapPair,
    local: &ScoreMapPair,
    prev: &ProbMask,
    cfg: &PipelineConfig,
) -> Result<ProbMask> {
    let dims = global.dims();
    if local.dims() != dims || prev.dims() != dims {
        return Err(Error::invalid_arg(format!(
            "fusion inputs differ in size: global {:?}, local {:?}, previous mask {:?}",
            dims,
            local.dims(),
            prev.dims()
        )));
    }
    let (h, w) = dims;
    let (alpha, beta) = (cfg.fusion_alpha, cfg.fusion_beta);
    let prior_bg = binomial_blur(prev.bg(), h, w);
    let prior_fg = binomial_blur(prev.fg(), h, w);
    let fg = (0..h * w)
        .map(|i| {
            let s_bg = alpha * global.y_bg[i] as f64
                + (1.0 - alpha) * local.y_bg[i] as f64
                + beta * prior_bg[i];
            let s_fg = alpha * global.y_fg[i] as f64
                + (1.0 - alpha) * local.y_fg[i] as f64
                + beta * prior_fg[i];
            let total = s_bg + s_fg;
            if total < cfg.epsilon {
                0.5
            } else {
                (s_fg / total).clamp(0.0, 1.0) as f32
            }
        })
        .collect();
    ProbMask::from_foreground(h, w, fg)
}
