//! Per-pixel feature maps, probability masks, label masks and the resampling
//! helpers shared by the rest of the crate.
//!
//! All grids are stored row-major. Feature maps are channel-major: the value of
//! channel `c` at `(y, x)` lives at `c * h * w + y * w + x`.

use crate::error::{Error, Result};

/// Below this norm a pixel descriptor is treated as the zero vector.
pub const NORM_EPSILON: f64 = 1e-12;

/// `C x H x W` per-pixel descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid_arg(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid_arg(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature value at flat index {i}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels, `H * W`.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Contiguous plane of channel `c`.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[c * self.pixels() + y * self.width + x]
    }

    pub(crate) fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let n = self.pixels();
        self.data[c * n + y * self.width + x] = v;
    }

    /// Descriptor of pixel `p` (flat row-major index) gathered across channels.
    pub fn pixel_vector(&self, p: usize) -> Vec<f32> {
        let n = self.pixels();
        (0..self.channels).map(|c| self.data[c * n + p]).collect()
    }
}

/// Two-class per-pixel probabilities: background and foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    height: usize,
    width: usize,
    bg: Vec<f32>,
    fg: Vec<f32>,
}

/// Tolerance on `bg + fg == 1`.
pub const PROB_SUM_TOLERANCE: f32 = 1e-6;

impl ProbMask {
    pub fn new(height: usize, width: usize, bg: Vec<f32>, fg: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid_arg("mask dims must be positive"));
        }
        let n = height * width;
        if bg.len() != n || fg.len() != n {
            return Err(Error::invalid_arg(format!(
                "mask {height}x{width} needs {n} values per channel, got bg={} fg={}",
                bg.len(),
                fg.len()
            )));
        }
        for (i, (&b, &f)) in bg.iter().zip(&fg).enumerate() {
            if !(0.0..=1.0).contains(&b) || !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidInput(format!(
                    "probability out of [0,1] at pixel {i}: bg={b} fg={f}"
                )));
            }
            if ((b + f) - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "bg+fg != 1 at pixel {i}: bg={b} fg={f}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            bg,
            fg,
        })
    }

    /// Builds a mask from foreground probabilities; background is the complement.
    pub fn from_foreground(height: usize, width: usize, fg: Vec<f32>) -> Result<Self> {
        if let Some(i) = fg.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!(
                "foreground probability out of [0,1] at pixel {i}"
            )));
        }
        let bg = fg.iter().map(|f| 1.0 - f).collect();
        Self::new(height, width, bg, fg)
    }

    /// Hard mask: 1 where `on` is true.
    pub fn from_binary(height: usize, width: usize, on: &[bool]) -> Result<Self> {
        Self::from_foreground(
            height,
            width,
            on.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn constant(height: usize, width: usize, fg: f32) -> Result<Self> {
        Self::from_foreground(height, width, vec![fg; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bg(&self) -> &[f32] {
        &self.bg
    }

    pub fn fg(&self) -> &[f32] {
        &self.fg
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Hard multi-object assignment. 0 is background, `k` is object `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid_arg(format!(
                "label mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Largest label present.
    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Checks every label is at most `objects`.
    pub fn check_bound(&self, objects: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l as usize > objects) {
            Some(i) => Err(Error::InvalidInput(format!(
                "label {} at pixel {i} exceeds object count {objects}",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    /// Binary membership of object `k`.
    pub fn object(&self, k: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == k).collect()
    }

    pub fn count(&self, k: u8) -> usize {
        self.labels.iter().filter(|&&l| l == k).count()
    }

    /// Number of non-background pixels.
    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Coordinate planes appended to the mask stack.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordChannels {
    pub height: usize,
    pub width: usize,
    pub y_norm: Vec<f32>,
    pub x_norm: Vec<f32>,
    pub center_dist: Vec<f32>,
}

/// L2-normalizes every pixel descriptor. Pixels whose norm is below
/// [`NORM_EPSILON`] become the zero vector.
pub fn normalize_channels(f: &FeatureMap) -> Result<FeatureMap> {
    if let Some(i) = f.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite feature value at flat index {i}"
        )));
    }
    let unit = unit_descriptors(f);
    Ok(FeatureMap {
        channels: f.channels,
        height: f.height,
        width: f.width,
        data: unit.into_iter().map(|v| v as f32).collect(),
    })
}

/// Channel-major unit descriptors in double precision. The similarity kernel and
/// [`normalize_channels`] share this routine.
pub(crate) fn unit_descriptors(f: &FeatureMap) -> Vec<f64> {
    let n = f.pixels();
    let mut norms = vec![0.0f64; n];
    for c in 0..f.channels {
        for (acc, &v) in norms.iter_mut().zip(f.plane(c)) {
            let v = v as f64;
            *acc += v * v;
        }
    }
    let norms: Vec<f64> = norms.into_iter().map(f64::sqrt).collect();
    let mut out = vec![0.0f64; f.data.len()];
    for c in 0..f.channels {
        let dst = &mut out[c * n..(c + 1) * n];
        for ((o, &v), &norm) in dst.iter_mut().zip(f.plane(c)).zip(&norms) {
            *o = if norm < NORM_EPSILON {
                0.0
            } else {
                v as f64 / norm
            };
        }
    }
    out
}

/// Area-average pooling of both channels onto a coarser grid.
///
/// Each target cell averages the source footprint it covers, weighting partially
/// covered source pixels by their overlap, so non-integer ratios are handled.
pub fn downsample_mask(m: &ProbMask, target_h: usize, target_w: usize) -> Result<ProbMask> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid_arg("target dims must be positive"));
    }
    if target_h > m.height || target_w > m.width {
        return Err(Error::invalid_arg(format!(
            "cannot downsample {}x{} to larger {target_h}x{target_w}",
            m.height, m.width
        )));
    }
    if (target_h, target_w) == (m.height, m.width) {
        return Ok(m.clone());
    }
    let fg = area_pool(&m.fg, m.height, m.width, target_h, target_w);
    // Recomputing bg as the complement keeps bg+fg == 1 tight.
    let fg: Vec<f32> = fg.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    ProbMask::from_foreground(target_h, target_w, fg)
}

/// Overlap weights between source cells and target cells along one axis.
fn axis_footprints(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let lo = t as f64 * scale;
            let hi = (t + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)) / scale;
                    (w > 0.0).then_some((s, w))
                })
                .collect()
        })
        .collect()
}

pub(crate) fn area_pool(src: &[f32], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let rows = axis_footprints(h, th);
    let cols = axis_footprints(w, tw);
    let mut out = Vec::with_capacity(th * tw);
    for ry in &rows {
        for rx in &cols {
            let mut acc = 0.0f64;
            for &(sy, wy) in ry {
                for &(sx, wx) in rx {
                    acc += wy * wx * src[sy * w + sx] as f64;
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Normalized coordinate planes for an `h x w` grid.
pub fn coordinate_grid(h: usize, w: usize) -> CoordChannels {
    fn axis(n: usize, i: usize) -> f32 {
        if n <= 1 {
            0.0
        } else {
            (2.0 * i as f64 / (n - 1) as f64 - 1.0) as f32
        }
    }
    let mut y_norm = Vec::with_capacity(h * w);
    let mut x_norm = Vec::with_capacity(h * w);
    let mut center_dist = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = axis(h, r);
        for c in 0..w {
            let x = axis(w, c);
            y_norm.push(y);
            x_norm.push(x);
            let d = ((y as f64).powi(2) + (x as f64).powi(2)).sqrt() / std::f64::consts::SQRT_2;
            center_dist.push(d as f32);
        }
    }
    CoordChannels {
        height: h,
        width: w,
        y_norm,
        x_norm,
        center_dist,
    }
}

/// Bilinear resize of one plane with half-pixel centers and edge clamping.
pub(crate) fn bilinear_resize(src: &[f32], h: usize, w: usize, th: usize, tw: usize) -> Vec<f32> {
    fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|t| {
                let s = ((t as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    }
    let ys = taps(h, th);
    let xs = taps(w, tw);
    let mut out = Vec::with_capacity(th * tw);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let a = src[y0 * w + x0] as f64;
            let b = src[y0 * w + x1] as f64;
            let c = src[y1 * w + x0] as f64;
            let d = src[y1 * w + x1] as f64;
            let top = a + (b - a) * fx;
            let bot = c + (d - c) * fx;
            out.push((top + (bot - top) * fy) as f32);
        }
    }
    out
}

/// Bilinear upsampling of both channels followed by per-pixel renormalization.
pub fn upsample_probmask(m: &ProbMask, target_h: usize, target_w: usize) -> Result<ProbMask> {
    if target_h < m.height || target_w < m.width {
        return Err(Error::invalid_arg(format!(
            "cannot upsample {}x{} to smaller {target_h}x{target_w}",
            m.height, m.width
        )));
    }
    let bg = bilinear_resize(&m.bg, m.height, m.width, target_h, target_w);
    let fg = bilinear_resize(&m.fg, m.height, m.width, target_h, target_w);
    let fg = bg
        .iter()
        .zip(&fg)
        .map(|(&b, &f)| {
            let s = b as f64 + f as f64;
            if s > 0.0 {
                (f as f64 / s).clamp(0.0, 1.0) as f32
            } else {
                0.5
            }
        })
        .collect();
    ProbMask::from_foreground(target_h, target_w, fg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        FeatureMap::new(c, h, w, data).unwrap()
    }

    #[test]
    fn normalizes_three_four() {
        let f = FeatureMap::new(2, 1, 1, vec![3.0, 4.0]).unwrap();
        let n = normalize_channels(&f).unwrap();
        assert_eq!(n.data(), &[0.6, 0.8]);
    }

    #[test]
    fn zero_vector_stays_zero() {
        let f = FeatureMap::new(2, 1, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(normalize_channels(&f).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn seeded_norms_are_unit_or_zero() {
        let mut f = random_map(7, 16, 5, 6);
        // plant one zero pixel
        for c in 0..16 {
            f.set(c, 2, 3, 0.0);
        }
        let n = normalize_channels(&f).unwrap();
        for p in 0..n.pixels() {
            // independent summation: pairwise over the gathered vector
            let v = n.pixel_vector(p);
            let norm: f64 = v
                .chunks(2)
                .map(|ch| ch.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            assert!(
                norm == 0.0 || (norm - 1.0).abs() < 1e-6,
                "pixel {p}: {norm}"
            );
        }
        assert!(n.pixel_vector(2 * 6 + 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_finite() {
        let f = FeatureMap {
            channels: 1,
            height: 1,
            width: 2,
            data: vec![1.0, f32::NAN],
        };
        assert!(matches!(
            normalize_channels(&f),
            Err(Error::InvalidInput(_))
        ));
        assert!(FeatureMap::new(1, 1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn downsample_constant() {
        let m = ProbMask::constant(8, 12, 0.7).unwrap();
        let d = downsample_mask(&m, 3, 5).unwrap();
        for &v in d.fg() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_checkerboard() {
        let m = ProbMask::from_foreground(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let d = downsample_mask(&m, 1, 1).unwrap();
        assert_eq!(d.fg(), &[0.5]);
        assert_eq!(d.bg(), &[0.5]);
    }

    #[test]
    fn downsample_block_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fg: Vec<f32> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = ProbMask::from_foreground(16, 16, fg.clone()).unwrap();
        let d = downsample_mask(&m, 4, 4).unwrap();
        for ty in 0..4 {
            for tx in 0..4 {
                let mut s = 0.0f64;
                for y in 4 * ty..4 * ty + 4 {
                    for x in 4 * tx..4 * tx + 4 {
                        s += fg[y * 16 + x] as f64;
                    }
                }
                let got = d.fg()[ty * 4 + tx] as f64;
                assert!((got - s / 16.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn downsample_rejects_upscale() {
        let m = ProbMask::constant(4, 4, 0.2).unwrap();
        assert!(matches!(
            downsample_mask(&m, 5, 4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn coordinate_grid_examples() {
        let g = coordinate_grid(3, 3);
        assert_eq!(
            (g.y_norm[4], g.x_norm[4], g.center_dist[4]),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(g.y_norm[0], -1.0);
        assert_eq!(g.x_norm[0], -1.0);
        assert!((g.center_dist[0] - 1.0).abs() < 1e-7);
        let g = coordinate_grid(1, 5);
        assert!(g.y_norm.iter().all(|&v| v == 0.0));
        assert_eq!(g.x_norm, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn upsample_constant_and_single_pixel() {
        let m = ProbMask::constant(3, 2, 0.3).unwrap();
        let u = upsample_probmask(&m, 7, 9).unwrap();
        assert!(u.fg().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        let m = ProbMask::constant(1, 1, 1.0).unwrap();
        let u = upsample_probmask(&m, 5, 4).unwrap();
        assert!(u.fg().iter().all(|&v| v == 1.0));
        assert!(upsample_probmask(&m, 0, 4).is_err());
    }

    /// Textbook bilinear interpolation written against continuous coordinates.
    fn oracle_bilinear(src: &[f32], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
        let at = |y: i64, x: i64| {
            let y = y.clamp(0, h as i64 - 1) as usize;
            let x = x.clamp(0, w as i64 - 1) as usize;
            src[y * w + x] as f64
        };
        let mut out = vec![];
        for ty in 0..th {
            for tx in 0..tw {
                let sy = ((ty as f64 + 0.5) * h as f64 / th as f64 - 0.5).max(0.0);
                let sx = ((tx as f64 + 0.5) * w as f64 / tw as f64 - 0.5).max(0.0);
                let (y0, x0) = (sy.floor() as i64, sx.floor() as i64);
                let (dy, dx) = (sy - y0 as f64, sx - x0 as f64);
                out.push(
                    at(y0, x0) * (1.0 - dy) * (1.0 - dx)
                        + at(y0, x0 + 1) * (1.0 - dy) * dx
                        + at(y0 + 1, x0) * dy * (1.0 - dx)
                        + at(y0 + 1, x0 + 1) * dy * dx,
                );
            }
        }
        out
    }

    #[test]
    fn upsample_matches_bilinear_oracle() {
        let m = ProbMask::from_foreground(2, 2, vec![0.1, 0.9, 0.4, 0.6]).unwrap();
        let u = upsample_probmask(&m, 4, 4).unwrap();
        let want = oracle_bilinear(m.fg(), 2, 2, 4, 4);
        for (g, w) in u.fg().iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-6, "{g} vs {w}");
        }
    }

    mod props {
        use super::random_map;
        use crate::tensor::*;
        use proptest::prelude::*;
        use rand::{Rng as _, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        proptest! {
            #[test]
            fn normalize_is_idempotent(seed in 0u64..1000, c in 1usize..12, h in 1usize..6, w in 1usize..6) {
                let f = random_map(seed, c, h, w);
                let once = normalize_channels(&f).unwrap();
                let twice = normalize_channels(&once).unwrap();
                for (a, b) in once.data().iter().zip(twice.data()) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }

            #[test]
            fn downsample_keeps_sum_and_mean(seed in 0u64..1000, th in 1usize..5, tw in 1usize..5, fy in 1usize..4, fx in 1usize..4) {
                let (h, w) = (th * fy, tw * fx);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let fg: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
                let m = ProbMask::from_foreground(h, w, fg.clone()).unwrap();
                let d = downsample_mask(&m, th, tw).unwrap();
                for (b, f) in d.bg().iter().zip(d.fg()) {
                    prop_assert!(((b + f) - 1.0).abs() <= 1e-6);
                }
                let src_mean = fg.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
                let dst_mean = d.fg().iter().map(|&v| v as f64).sum::<f64>() / (th * tw) as f64;
                prop_assert!((src_mean - dst_mean).abs() < 1e-6);
            }

            #[test]
            fn coordinate_grid_transposes(h in 1usize..9, w in 1usize..9) {
                let a = coordinate_grid(h, w);
                let b = coordinate_grid(w, h);
                for r in 0..h {
                    for c in 0..w {
                        prop_assert_eq!(a.y_norm[r * w + c], b.x_norm[c * h + r]);
                    }
                }
            }
        }
    }
}
