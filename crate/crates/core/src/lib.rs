//! Pixel-level feature matching for semi-supervised video object segmentation.
//!
//! The crate implements the inference-time pieces of a matching-based
//! segmenter:
//!
//! - [`matching`]: cosine similarity between reference and query pixels,
//!   surjective matching (query-wise max) and bijective matching, which first
//!   keeps only each reference pixel's top-K query matches.
//! - [`embedding`]: a mask-history embedding that stacks recent masks with
//!   coordinate planes and applies four 3x3 conv + ReLU layers.
//! - [`pipeline`]: the per-frame loop with global matching against frame 0,
//!   local matching against the previous frame, a deterministic fusion decoder
//!   and soft aggregation across objects.
//! - [`eval`]: region (J), contour (F) and overall (G) accuracy.
//! - [`synth`]: synthetic scenes with look-alike distractors.
//! - [`io`]: `BMT1` tensor files, sequence bundles and mask images.
//!
//! ```
//! use bimatch_core::{generate_scene, run_sequence, PipelineConfig, SceneConfig};
//!
//! let bundle = generate_scene(&SceneConfig::distractor_demo(0)).unwrap();
//! let frames = run_sequence(&bundle, &PipelineConfig::default()).unwrap();
//! assert_eq!(frames.len(), bundle.frames.len());
//! ```

pub mod embedding;
pub mod error;
pub mod eval;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use embedding::{
    embed_position_features, init_weights, load_weights, save_weights, stack_history, ConvWeights,
    MaskStack, PositionFeatures,
};
pub use error::{Error, Result};
pub use eval::{contour_accuracy_f, evaluate_sequence, region_accuracy_j, BinaryMask, EvalReport};
pub use io::{read_bundle, validate_bundle, write_bundle, SequenceBundle};
pub use matching::{
    mask_weighted_scores, match_frames, reduce_query_max, similarity_matrix, topk_filter,
    MatchMode, ScoreMapPair, SimMatrix, TopK,
};
pub use pipeline::{
    fusion_decode, run_sequence, select_working_resolution, soft_aggregate, step, FramePrediction,
    PipelineConfig, VideoState, WeightsSource, WorkingResolution,
};
pub use synth::{generate_scene, scene_layout, SceneConfig};
pub use tensor::{
    coordinate_grid, downsample_mask, normalize_channels, upsample_probmask, CoordChannels,
    FeatureMap, LabelMask, ProbMask,
};

/// Version of the tool, reported by the CLI.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
