//! Mask embedding: stacks the most recent masks with coordinate planes and runs a
//! four-layer 3x3 convolution + ReLU stack over them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::tensor_file::{read_tensor_sequence, write_tensor_sequence, Tensor};
use crate::tensor::{coordinate_grid, downsample_mask, ProbMask};

/// Number of conv layers in the embedding stack.
pub const LAYERS: usize = 4;
pub const DEFAULT_HIDDEN: [usize; 3] = [32, 32, 32];
pub const DEFAULT_POSITION_CHANNELS: usize = 32;
pub const COORD_PLANES: usize = 3;

/// Input channel count for a history of length `l`.
pub fn stack_channels(l: usize) -> usize {
    2 * l + COORD_PLANES
}

/// `2L` mask planes (oldest first, as bg/fg pairs) followed by the y, x and
/// center-distance coordinate planes.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    pub length: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-major planes, `(2L + 3) * H * W`.
    pub planes: Vec<f32>,
}

impl MaskStack {
    pub fn channels(&self) -> usize {
        self.planes.len() / (self.height * self.width)
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.planes[c * n..(c + 1) * n]
    }
}

/// Builds the embedding input from an oldest-to-newest mask history.
///
/// The newest `l` masks are used. A shorter history is padded at the front by
/// repeating its oldest mask.
pub fn stack_history(
    history: &[ProbMask],
    l: usize,
    target_h: usize,
    target_w: usize,
) -> Result<MaskStack> {
    if history.is_empty() {
        return Err(Error::invalid_arg("mask history is empty"));
    }
    if l == 0 {
        return Err(Error::invalid_arg("history length must be at least 1"));
    }
    let recent = &history[history.len().saturating_sub(l)..];
    let pad = l - recent.len();
    let n = target_h * target_w;
    let mut planes = Vec::with_capacity(stack_channels(l) * n);
    let picks = std::iter::repeat(&recent[0]).take(pad).chain(recent.iter());
    for m in picks {
        let m = downsample_mask(m, target_h, target_w)?;
        planes.extend_from_slice(m.bg());
        planes.extend_from_slice(m.fg());
    }
    let grid = coordinate_grid(target_h, target_w);
    planes.extend_from_slice(&grid.y_norm);
    planes.extend_from_slice(&grid.x_norm);
    planes.extend_from_slice(&grid.center_dist);
    Ok(MaskStack {
        length: l,
        height: target_h,
        width: target_w,
        planes,
    })
}

/// One 3x3 convolution layer. Kernel layout is `(out, in, 3, 3)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid_arg(
                "conv layer channel counts must be positive",
            ));
        }
        if kernel.len() != out_channels * in_channels * 9 || bias.len() != out_channels {
            return Err(Error::invalid_arg(format!(
                "conv layer {in_channels}->{out_channels} has kernel of {} and bias of {}",
                kernel.len(),
                bias.len()
            )));
        }
        if kernel.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite conv weight".into()));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            bias,
        })
    }

    pub fn tap(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.kernel[((o * self.in_channels + i) * 3 + ky) * 3 + kx]
    }
}

/// Weights of the four-layer embedding stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    layers: Vec<ConvLayer>,
}

impl ConvWeights {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.len() != LAYERS {
            return Err(Error::Validation(vec![format!(
                "expected {LAYERS} conv layers, got {}",
                layers.len()
            )]));
        }
        let broken: Vec<String> = layers
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].out_channels != w[1].in_channels)
            .map(|(j, w)| {
                format!(
                    "layer {} outputs {} channels but layer {} takes {}",
                    j + 1,
                    w[0].out_channels,
                    j + 2,
                    w[1].in_channels
                )
            })
            .collect();
        if !broken.is_empty() {
            return Err(Error::Validation(broken));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers[LAYERS - 1].out_channels
    }

    /// Errors unless the first layer accepts a history of length `l`.
    pub fn check_history(&self, l: usize) -> Result<()> {
        if self.in_channels() != stack_channels(l) {
            return Err(Error::Validation(vec![format!(
                "first layer takes {} channels but history length {l} needs {}",
                self.in_channels(),
                stack_channels(l)
            )]));
        }
        Ok(())
    }
}

/// Deterministic stand-in weights, uniform in `[-a, a]` with
/// `a = sqrt(1 / (in * 9))` per layer. Kernel then bias are drawn layer by layer.
pub fn init_weights(seed: u64, l: usize, widths: [usize; 3], c_pos: usize) -> Result<ConvWeights> {
    if l == 0 || widths.contains(&0) || c_pos == 0 {
        return Err(Error::invalid_arg(
            "history length and layer widths must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = [stack_channels(l), widths[0], widths[1], widths[2], c_pos];
    let layers = chain
        .windows(2)
        .map(|io| {
            let (cin, cout) = (io[0], io[1]);
            let a = (1.0 / (cin as f64 * 9.0)).sqrt() as f32;
            let kernel = (0..cout * cin * 9)
                .map(|_| rng.random_range(-a..=a))
                .collect();
            let bias = (0..cout).map(|_| rng.random_range(-a..=a)).collect();
            ConvLayer::new(cin, cout, kernel, bias)
        })
        .collect::<Result<Vec<_>>>()?;
    ConvWeights::new(layers)
}

/// Writes kernel and bias tensors of each layer, in order, into one file.
pub fn save_weights(w: &ConvWeights, path: impl AsRef<Path>) -> Result<()> {
    let tensors: Vec<Tensor> = w
        .layers
        .iter()
        .flat_map(|layer| {
            [
                Tensor::f32(
                    vec![layer.out_channels, layer.in_channels, 3, 3],
                    layer.kernel.clone(),
                ),
                Tensor::f32(vec![layer.out_channels], layer.bias.clone()),
            ]
        })
        .collect();
    write_tensor_sequence(&tensors, path)
}

/// Reads weights written by [`save_weights`] and checks them against history
/// length `l`.
pub fn load_weights(path: impl AsRef<Path>, l: usize) -> Result<ConvWeights> {
    let tensors = read_tensor_sequence(path)?;
    if tensors.len() != 2 * LAYERS {
        return Err(Error::Validation(vec![format!(
            "weights file holds {} tensors, expected {}",
            tensors.len(),
            2 * LAYERS
        )]));
    }
    let mut layers = Vec::with_capacity(LAYERS);
    for (j, pair) in tensors.chunks_exact(2).enumerate() {
        let (k, b) = (&pair[0], &pair[1]);
        let (kd, bd) = (k.dims(), b.dims());
        if kd.len() != 4 || kd[2] != 3 || kd[3] != 3 || bd.len() != 1 || bd[0] != kd[0] {
            return Err(Error::Validation(vec![format!(
                "layer {} has kernel dims {kd:?} and bias dims {bd:?}",
                j + 1
            )]));
        }
        let kernel = k.as_f32().ok_or_else(|| {
            Error::Validation(vec![format!("layer {} kernel is not float32", j + 1)])
        })?;
        let bias = b.as_f32().ok_or_else(|| {
            Error::Validation(vec![format!("layer {} bias is not float32", j + 1)])
        })?;
        layers.push(ConvLayer::new(
            kd[1],
            kd[0],
            kernel.to_vec(),
            bias.to_vec(),
        )?);
    }
    let w = ConvWeights::new(layers)?;
    w.check_history(l)?;
    Ok(w)
}

/// Non-negative position features produced by the embedding stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionFeatures {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// 3x3 same-padded convolution followed by ReLU.
fn conv3x3_relu(input: &[f32], h: usize, w: usize, layer: &ConvLayer) -> Vec<f32> {
    let n = h * w;
    let mut out = vec![0.0f32; layer.out_channels * n];
    for (o, dst) in out.chunks_exact_mut(n).enumerate() {
        dst.fill(layer.bias[o]);
        for i in 0..layer.in_channels {
            let src = &input[i * n..(i + 1) * n];
            for ky in 0..3 {
                // output row y reads input row y + ky - 1
                let (y_lo, y_hi) = (usize::from(ky == 0), h - usize::from(ky == 2));
                for kx in 0..3 {
                    let wgt = layer.tap(o, i, ky, kx);
                    if wgt == 0.0 {
                        continue;
                    }
                    let (x_lo, x_hi) = (usize::from(kx == 0), w - usize::from(kx == 2));
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * w + x_lo..y * w + x_hi];
                        let s = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                        for (dv, &sv) in d.iter_mut().zip(s) {
                            *dv += wgt * sv;
                        }
                    }
                }
            }
        }
        dst.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

/// Runs the four conv + ReLU layers over the stack.
pub fn embed_position_features(stack: &MaskStack, w: &ConvWeights) -> Result<PositionFeatures> {
    if stack.channels() != w.in_channels() {
        return Err(Error::invalid_arg(format!(
            "mask stack has {} channels, weights expect {}",
            stack.channels(),
            w.in_channels()
        )));
    }
    let (h, wd) = (stack.height, stack.width);
    let mut x = stack.planes.clone();
    for layer in &w.layers {
        x = conv3x3_relu(&x, h, wd, layer);
    }
    Ok(PositionFeatures {
        channels: w.out_channels(),
        height: h,
        width: wd,
        data: x,
    })
}
