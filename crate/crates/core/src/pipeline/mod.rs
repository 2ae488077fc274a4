//! Per-frame inference loop.
//!
//! Every frame is matched globally against frame 0 and locally against the
//! previous frame. The resulting score maps are fused with a prior from the
//! previous mask, and objects are merged by soft aggregation. Only frames 0 and
//! `i - 1` are kept as references.

mod aggregate;
mod fusion;

use std::collections::VecDeque;
use std::num::NonZeroUsize;
use std::path::PathBuf;

use rayon::prelude::*;

pub use aggregate::{soft_aggregate, Aggregated};
pub use fusion::{binomial_blur, fusion_decode};

use crate::embedding::{
    embed_position_features, init_weights, load_weights, stack_history, ConvWeights,
    PositionFeatures, DEFAULT_HIDDEN, DEFAULT_POSITION_CHANNELS,
};
use crate::error::{Error, Result};
use crate::io::SequenceBundle;
use crate::matching::{match_frames, MatchMode, ScoreMapPair, TopK};
use crate::tensor::{bilinear_resize, downsample_mask, FeatureMap, LabelMask, ProbMask};

pub const DEFAULT_K_LOCAL: usize = 4;
pub const DEFAULT_HISTORY: usize = 3;
pub const MAX_HISTORY: usize = 5;
pub const DEFAULT_FG_PIXEL_THRESHOLD: usize = 1000;
/// Shorter image side after downscaling large-object videos.
pub const DOWNSCALE_SHORT_SIDE: usize = 480;

/// Where the embedding weights come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightsSource {
    Seed(u64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Top-K for matching against frame 0.
    pub k_global: TopK,
    /// Top-K for matching against frame `i - 1`.
    pub k_local: TopK,
    pub history_l: usize,
    pub fusion_alpha: f64,
    pub fusion_beta: f64,
    pub epsilon: f64,
    pub fg_pixel_threshold: usize,
    pub weights: WeightsSource,
    pub hidden_widths: [usize; 3],
    pub position_channels: usize,
    /// Run the embedding stack each frame and attach its output to the
    /// diagnostics.
    pub position_features: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_global: TopK::Infinite,
            k_local: TopK::Finite(NonZeroUsize::new(DEFAULT_K_LOCAL).unwrap()),
            history_l: DEFAULT_HISTORY,
            fusion_alpha: 0.5,
            fusion_beta: 0.25,
            epsilon: 1e-7,
            fg_pixel_threshold: DEFAULT_FG_PIXEL_THRESHOLD,
            weights: WeightsSource::Seed(0),
            hidden_widths: DEFAULT_HIDDEN,
            position_channels: DEFAULT_POSITION_CHANNELS,
            position_features: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = vec![];
        if !(1..=MAX_HISTORY).contains(&self.history_l) {
            problems.push(format!(
                "history length {} outside 1..={MAX_HISTORY}",
                self.history_l
            ));
        }
        for (name, v) in [
            ("fusion_alpha", self.fusion_alpha),
            ("fusion_beta", self.fusion_beta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            problems.push(format!(
                "epsilon = {} must be finite and non-negative",
                self.epsilon
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Seeded or file-backed embedding weights for this configuration.
    pub fn load_weights(&self) -> Result<ConvWeights> {
        match &self.weights {
            WeightsSource::Seed(seed) => init_weights(
                *seed,
                self.history_l,
                self.hidden_widths,
                self.position_channels,
            ),
            WeightsSource::File(path) => load_weights(path, self.history_l),
        }
    }
}

/// Resolution policy from the initial annotation size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkingResolution {
    Native,
    /// Resize so the shorter side is [`DOWNSCALE_SHORT_SIDE`].
    Downscale,
}

impl WorkingResolution {
    /// Image size to process at, given the native size.
    pub fn apply(self, height: usize, width: usize) -> (usize, usize) {
        match self {
            WorkingResolution::Native => (height, width),
            WorkingResolution::Downscale => {
                let short = height.min(width).max(1) as f64;
                let s = DOWNSCALE_SHORT_SIDE as f64 / short;
                (
                    ((height as f64 * s).round() as usize).max(1),
                    ((width as f64 * s).round() as usize).max(1),
                )
            }
        }
    }
}

/// Small objects keep native resolution; anything with at least
/// `cfg.fg_pixel_threshold` foreground pixels is downscaled.
pub fn select_working_resolution(
    initial_fg_pixel_count: usize,
    cfg: &PipelineConfig,
) -> WorkingResolution {
    if initial_fg_pixel_count < cfg.fg_pixel_threshold {
        WorkingResolution::Native
    } else {
        WorkingResolution::Downscale
    }
}

/// Everything carried from one frame to the next.
#[derive(Debug, Clone, Default)]
pub struct VideoState {
    initial_features: Option<FeatureMap>,
    initial_masks: Vec<ProbMask>,
    previous_features: Option<FeatureMap>,
    history: Vec<VecDeque<ProbMask>>,
    frame_index: usize,
    image_dims: (usize, usize),
}

impl VideoState {
    /// Starts a video from frame 0 features and its ground-truth labels.
    pub fn initialize(
        features: FeatureMap,
        labels: &LabelMask,
        objects: usize,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        if objects == 0 {
            return Err(Error::Validation(vec![
                "no object annotated in frame 0".into()
            ]));
        }
        labels.check_bound(objects)?;
        let (h, w) = (features.height(), features.width());
        if labels.height() < h || labels.width() < w {
            return Err(Error::invalid_arg(format!(
                "annotation {}x{} is smaller than the feature grid {h}x{w}",
                labels.height(),
                labels.width()
            )));
        }
        let initial_masks = (1..=objects)
            .map(|k| {
                let full = ProbMask::from_binary(
                    labels.height(),
                    labels.width(),
                    &labels.object(k as u8),
                )?;
                downsample_mask(&full, h, w)
            })
            .collect::<Result<Vec<_>>>()?;
        let history = initial_masks
            .iter()
            .map(|m| {
                let mut q = VecDeque::with_capacity(cfg.history_l + 1);
                q.push_back(m.clone());
                q
            })
            .collect();
        Ok(Self {
            previous_features: Some(features.clone()),
            initial_features: Some(features),
            initial_masks,
            history,
            frame_index: 0,
            image_dims: labels.dims(),
        })
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn objects(&self) -> usize {
        self.initial_masks.len()
    }

    /// Oldest-to-newest masks of object `k` (0-based) at feature resolution.
    pub fn mask_history(&self, k: usize) -> &VecDeque<ProbMask> {
        &self.history[k]
    }

    /// Mutable history of object `k`, for replaying or editing past predictions.
    pub fn mask_history_mut(&mut self, k: usize) -> &mut VecDeque<ProbMask> {
        &mut self.history[k]
    }
}

/// Per-object intermediate results for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDiagnostics {
    pub global: ScoreMapPair,
    pub local: ScoreMapPair,
    /// Decoder output before aggregation, at feature resolution.
    pub decoded: ProbMask,
    pub position: Option<PositionFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub frame_index: usize,
    /// Aggregated per-object probabilities at image resolution.
    pub object_masks: Vec<ProbMask>,
    pub labels: LabelMask,
    /// Empty for frame 0.
    pub diagnostics: Vec<ObjectDiagnostics>,
}

/// Prediction for frame 0, which is the supplied annotation.
pub fn ground_truth_prediction(labels: &LabelMask, objects: usize) -> Result<FramePrediction> {
    let object_masks = (1..=objects)
        .map(|k| ProbMask::from_binary(labels.height(), labels.width(), &labels.object(k as u8)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FramePrediction {
        frame_index: 0,
        object_masks,
        labels: labels.clone(),
        diagnostics: vec![],
    })
}

fn process_object(
    state: &VideoState,
    k: usize,
    query: &FeatureMap,
    cfg: &PipelineConfig,
    weights: &ConvWeights,
) -> Result<ObjectDiagnostics> {
    let initial = state.initial_features.as_ref().expect("checked by step");
    let previous = state.previous_features.as_ref().expect("checked by step");
    let prev_mask = state.history[k].back().expect("history is never empty");
    let global = match_frames(
        initial,
        query,
        &state.initial_masks[k],
        MatchMode::Bijective(cfg.k_global),
    )?;
    let local = match_frames(
        previous,
        query,
        prev_mask,
        MatchMode::Bijective(cfg.k_local),
    )?;
    let position = if cfg.position_features {
        let masks: Vec<ProbMask> = state.history[k].iter().cloned().collect();
        let stack = stack_history(&masks, cfg.history_l, query.height(), query.width())?;
        Some(embed_position_features(&stack, weights)?)
    } else {
        None
    };
    let decoded = fusion_decode(&global, &local, prev_mask, cfg)?;
    Ok(ObjectDiagnostics {
        global,
        local,
        decoded,
        position,
    })
}

/// Segments one query frame and advances the state.
pub fn step(
    mut state: VideoState,
    query: &FeatureMap,
    cfg: &PipelineConfig,
    weights: &ConvWeights,
) -> Result<(FramePrediction, VideoState)> {
    let (Some(initial), Some(_)) = (&state.initial_features, &state.previous_features) else {
        return Err(Error::State("video state was never initialized".into()));
    };
    if state.history.is_empty() || state.history.iter().any(VecDeque::is_empty) {
        return Err(Error::State("video state has no mask history".into()));
    }
    if query.channels() != initial.channels() {
        return Err(Error::invalid_arg(format!(
            "query has {} channels, reference frames have {}",
            query.channels(),
            initial.channels()
        )));
    }
    let diagnostics = (0..state.objects())
        .into_par_iter()
        .map(|k| process_object(&state, k, query, cfg, weights))
        .collect::<Result<Vec<_>>>()?;

    let (h, w) = (query.height(), query.width());
    let decoded: Vec<&[f32]> = diagnostics.iter().map(|d| d.decoded.fg()).collect();
    let agg = soft_aggregate(&decoded, cfg.epsilon as f32)?;

    // Feature-resolution history entries.
    for (hist, obj) in state.history.iter_mut().zip(&agg.objects) {
        let fg = obj.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        hist.push_back(ProbMask::from_foreground(h, w, fg)?);
        while hist.len() > cfg.history_l {
            hist.pop_front();
        }
    }

    let (ih, iw) = state.image_dims;
    let up_bg = bilinear_resize(&agg.background, h, w, ih, iw);
    let up_objects: Vec<Vec<f32>> = agg
        .objects
        .iter()
        .map(|o| bilinear_resize(o, h, w, ih, iw))
        .collect();
    let labels = (0..ih * iw)
        .map(|i| {
            let mut best = (0u8, up_bg[i]);
            for (k, o) in up_objects.iter().enumerate() {
                if o[i] > best.1 {
                    best = ((k + 1) as u8, o[i]);
                }
            }
            best.0
        })
        .collect();
    let object_masks = up_objects
        .into_iter()
        .map(|o| {
            ProbMask::from_foreground(ih, iw, o.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    state.frame_index += 1;
    state.previous_features = Some(query.clone());
    let prediction = FramePrediction {
        frame_index: state.frame_index,
        object_masks,
        labels: LabelMask::new(ih, iw, labels)?,
        diagnostics,
    };
    Ok((prediction, state))
}

/// Segments a whole bundle from its frame 0 annotation.
pub fn run_sequence(bundle: &SequenceBundle, cfg: &PipelineConfig) -> Result<Vec<FramePrediction>> {
    cfg.validate()?;
    let weights = cfg.load_weights()?;
    weights.check_history(cfg.history_l)?;
    let objects = bundle.objects();
    let first = bundle
        .frames
        .first()
        .ok_or_else(|| Error::Validation(vec!["bundle has no frames".into()]))?;
    let labels = bundle.initial_labels();
    let mut state = VideoState::initialize(first.clone(), labels, objects, cfg)?;
    let mut out = Vec::with_capacity(bundle.frames.len());
    out.push(ground_truth_prediction(labels, objects)?);
    for query in &bundle.frames[1..] {
        let (pred, next) = step(state, query, cfg, &weights)?;
        out.push(pred);
        state = next;
    }
    Ok(out)
}
