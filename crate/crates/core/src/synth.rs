//! Synthetic video bundles with a moving target, look-alike distractors and a
//! cell-textured background.
//!
//! Each region has a unit-norm base descriptor. On top of it sits a spatially
//! correlated Gaussian field of per-pixel standard deviation `noise_sigma`. The
//! field is attached to the region's surface, so it moves with objects and stays
//! fixed for the background. A same-appearance distractor shares its target's
//! base descriptor but carries its own field.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::SequenceBundle;
use crate::tensor::{FeatureMap, LabelMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    /// Ellipse inscribed in the `size` box.
    Disk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// `[height, width]` of the bounding box in feature cells.
    pub size: [usize; 2],
    /// Top-left corner at frame 0.
    pub position: [i64; 2],
    /// Cells per frame.
    #[serde(default)]
    pub velocity: [i64; 2],
}

fn default_true() -> bool {
    true
}

fn default_target() -> usize {
    1
}

fn default_appear() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorSpec {
    /// 1-based index of the object this distractor imitates.
    #[serde(default = "default_target")]
    pub target: usize,
    #[serde(default = "default_true")]
    pub same_appearance: bool,
    /// Frame-0 offset from the target's frame-0 position.
    pub offset: [i64; 2],
    #[serde(default)]
    pub velocity: [i64; 2],
    /// First frame in which the distractor is visible.
    #[serde(default = "default_appear")]
    pub appear_frame: usize,
}

fn default_stride() -> usize {
    16
}

fn default_cell() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub frames: usize,
    /// Feature grid size; images are `stride` times larger.
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Background texture cell size in feature cells.
    #[serde(default = "default_cell")]
    pub background_cell: usize,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub distractors: Vec<DistractorSpec>,
}

impl SceneConfig {
    /// Ten-frame 16x16 scene: a 4x4 target drifting right and a same-appearance
    /// distractor that enters at frame 1 below it.
    pub fn distractor_demo(seed: u64) -> Self {
        Self {
            frames: 10,
            height: 16,
            width: 16,
            channels: 32,
            stride: 16,
            noise_sigma: 0.05,
            seed,
            background_cell: 4,
            objects: vec![ObjectSpec {
                shape: Shape::Rectangle,
                size: [4, 4],
                position: [2, 2],
                velocity: [0, 1],
            }],
            distractors: vec![DistractorSpec {
                target: 1,
                same_appearance: true,
                offset: [7, 1],
                velocity: [0, 1],
                appear_frame: 1,
            }],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            Error::format(
                e.span().map_or(0, |s| s.start) as u64,
                e.message().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = vec![];
        if self.frames == 0 {
            p.push("frames must be at least 1".to_string());
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.stride == 0 {
            p.push("height, width, channels and stride must be positive".into());
        }
        if self.background_cell == 0 {
            p.push("background_cell must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            p.push(format!(
                "noise_sigma {} must be finite and >= 0",
                self.noise_sigma
            ));
        }
        if self.objects.is_empty() {
            p.push("scene needs at least one object".into());
        }
        if self.objects.len() > u8::MAX as usize {
            p.push("at most 255 objects".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.size[0] == 0 || o.size[1] == 0 {
                p.push(format!("object {} has an empty size", i + 1));
            }
            if o.size[0] > self.height || o.size[1] > self.width {
                p.push(format!(
                    "object {} of size {:?} cannot fit a {}x{} grid",
                    i + 1,
                    o.size,
                    self.height,
                    self.width
                ));
            }
        }
        for (i, d) in self.distractors.iter().enumerate() {
            if d.target == 0 || d.target > self.objects.len() {
                p.push(format!(
                    "distractor {} targets unknown object {}",
                    i + 1,
                    d.target
                ));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    fn grid_fits(&self, size: [usize; 2]) -> bool {
        size[0] <= self.height && size[1] <= self.width
    }
}

/// Top-left corner at frame `t`, clamped so the box stays inside the grid.
fn place(
    start: [i64; 2],
    velocity: [i64; 2],
    size: [usize; 2],
    grid: (usize, usize),
    t: usize,
) -> [usize; 2] {
    let t = t as i64;
    let y = (start[0] + velocity[0] * t).clamp(0, (grid.0 - size[0]) as i64);
    let x = (start[1] + velocity[1] * t).clamp(0, (grid.1 - size[1]) as i64);
    [y as usize, x as usize]
}

/// Whether local cell `(y, x)` of a `size` box belongs to the shape.
fn inside(shape: Shape, size: [usize; 2], y: usize, x: usize) -> bool {
    match shape {
        Shape::Rectangle => true,
        Shape::Disk => {
            let (ry, rx) = (size[0] as f64 / 2.0, size[1] as f64 / 2.0);
            let dy = (y as f64 + 0.5 - ry) / ry;
            let dx = (x as f64 + 0.5 - rx) / rx;
            dy * dy + dx * dx <= 1.0
        }
    }
}

/// Feature-grid membership of every object and visible distractor at frame `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<Vec<bool>>,
    pub distractors: Vec<Vec<bool>>,
}

struct Region {
    shape: Shape,
    size: [usize; 2],
    corner: [usize; 2],
}

impl Region {
    fn cells(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.size[0]).flat_map(move |ly| {
            (0..self.size[1])
                .filter(move |&lx| inside(self.shape, self.size, ly, lx))
                .map(move |lx| (ly, lx, self.corner[0] + ly, self.corner[1] + lx))
        })
    }
}

fn object_region(cfg: &SceneConfig, o: &ObjectSpec, t: usize) -> Region {
    Region {
        shape: o.shape,
        size: o.size,
        corner: place(o.position, o.velocity, o.size, (cfg.height, cfg.width), t),
    }
}

fn distractor_region(cfg: &SceneConfig, d: &DistractorSpec, t: usize) -> Option<Region> {
    if t < d.appear_frame {
        return None;
    }
    let target = &cfg.objects[d.target - 1];
    if !cfg.grid_fits(target.size) {
        return None;
    }
    let start = [
        target.position[0] + d.offset[0],
        target.position[1] + d.offset[1],
    ];
    Some(Region {
        shape: target.shape,
        size: target.size,
        corner: place(start, d.velocity, target.size, (cfg.height, cfg.width), t),
    })
}

/// Recomputes region membership from the configured trajectories.
pub fn scene_layout(cfg: &SceneConfig, t: usize) -> Result<SceneLayout> {
    cfg.validate()?;
    let n = cfg.height * cfg.width;
    let paint = |r: Option<Region>| {
        let mut m = vec![false; n];
        if let Some(r) = r {
            for (_, _, y, x) in r.cells() {
                m[y * cfg.width + x] = true;
            }
        }
        m
    };
    Ok(SceneLayout {
        height: cfg.height,
        width: cfg.width,
        objects: cfg
            .objects
            .iter()
            .map(|o| paint(Some(object_region(cfg, o, t))))
            .collect(),
        distractors: cfg
            .distractors
            .iter()
            .map(|d| paint(distractor_region(cfg, d, t)))
            .collect(),
    })
}

fn unit_vector(rng: &mut ChaCha8Rng, c: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Std of a unit-variance white field after the separable [1,2,1]/4 blur.
const BLUR3_STD: f64 = 0.375;

/// `C x h x w` Gaussian field, blurred by a 3x3 binomial and rescaled so each
/// value has standard deviation `sigma`.
fn smooth_field(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, sigma: f64) -> Vec<f32> {
    const K: [f64; 3] = [0.25, 0.5, 0.25];
    let (ph, pw) = (h + 2, w + 2);
    let mut out = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        let white: Vec<f64> = (0..ph * pw).map(|_| StandardNormal.sample(rng)).collect();
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (ky, wy) in K.iter().enumerate() {
                    for (kx, wx) in K.iter().enumerate() {
                        s += wy * wx * white[(y + ky) * pw + x + kx];
                    }
                }
                out.push((s * sigma / BLUR3_STD) as f32);
            }
        }
    }
    out
}

/// Builds a deterministic bundle from `cfg`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SequenceBundle> {
    cfg.validate()?;
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let object_bases: Vec<Vec<f32>> = cfg
        .objects
        .iter()
        .map(|_| unit_vector(&mut rng, c))
        .collect();
    // Own bases are drawn for every distractor so toggling `same_appearance`
    // does not shift the random stream.
    let distractor_bases: Vec<Vec<f32>> = cfg
        .distractors
        .iter()
        .map(|d| {
            let own = unit_vector(&mut rng, c);
            if d.same_appearance {
                object_bases[d.target - 1].clone()
            } else {
                own
            }
        })
        .collect();
    let cells_y = h.div_ceil(cfg.background_cell);
    let cells_x = w.div_ceil(cfg.background_cell);
    let bg_bases: Vec<Vec<f32>> = (0..cells_y * cells_x)
        .map(|_| unit_vector(&mut rng, c))
        .collect();
    let bg_field = smooth_field(&mut rng, c, h, w, cfg.noise_sigma);
    let object_fields: Vec<Vec<f32>> = cfg
        .objects
        .iter()
        .map(|o| smooth_field(&mut rng, c, o.size[0], o.size[1], cfg.noise_sigma))
        .collect();
    let distractor_fields: Vec<Vec<f32>> = cfg
        .distractors
        .iter()
        .map(|d| {
            let s = cfg.objects[d.target - 1].size;
            smooth_field(&mut rng, c, s[0], s[1], cfg.noise_sigma)
        })
        .collect();

    let (ih, iw) = (h * cfg.stride, w * cfg.stride);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut ground_truth = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let mut f = FeatureMap::zeros(c, h, w);
        for y in 0..h {
            for x in 0..w {
                let base = &bg_bases[(y / cfg.background_cell) * cells_x + x / cfg.background_cell];
                for ch in 0..c {
                    f.set(ch, y, x, base[ch] + bg_field[ch * n + y * w + x]);
                }
            }
        }
        let paint = |f: &mut FeatureMap, r: &Region, base: &[f32], field: &[f32]| {
            let ln = r.size[0] * r.size[1];
            for (ly, lx, y, x) in r.cells() {
                for ch in 0..c {
                    f.set(ch, y, x, base[ch] + field[ch * ln + ly * r.size[1] + lx]);
                }
            }
        };
        for ((d, base), field) in cfg
            .distractors
            .iter()
            .zip(&distractor_bases)
            .zip(&distractor_fields)
        {
            if let Some(r) = distractor_region(cfg, d, t) {
                paint(&mut f, &r, base, field);
            }
        }
        let mut labels = vec![0u8; n];
        for (k, ((o, base), field)) in cfg
            .objects
            .iter()
            .zip(&object_bases)
            .zip(&object_fields)
            .enumerate()
        {
            let r = object_region(cfg, o, t);
            paint(&mut f, &r, base, field);
            for (_, _, y, x) in r.cells() {
                labels[y * w + x] = (k + 1) as u8;
            }
        }
        frames.push(f);
        let full: Vec<u8> = (0..ih * iw)
            .map(|i| labels[(i / iw / cfg.stride) * w + (i % iw) / cfg.stride])
            .collect();
        ground_truth.push(Some(LabelMask::new(ih, iw, full)?));
    }
    SequenceBundle::new(frames, ground_truth, cfg.objects.len())
}
