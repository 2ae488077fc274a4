use std::fs;
use std::path::{Path, PathBuf};

use bimatch_core::io::image::read_binary_mask;
use bimatch_core::io::{
    read_label_mask, read_tensor, render_score_map, write_label_mask, write_tensor, Tensor,
};
use bimatch_core::{
    downsample_mask, evaluate_sequence, generate_scene, match_frames, read_bundle, run_sequence,
    select_working_resolution, write_bundle, Error, FeatureMap, LabelMask, MatchMode,
    PipelineConfig, ProbMask, Result, SceneConfig, ScoreMapPair, WeightsSource, WorkingResolution,
};

use crate::{EvalArgs, MatchArgs, RunArgs, SynthArgs, VizArgs};

/// Short machine-readable name for an error, used in the stderr prefix.
pub fn category(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid-input",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Format { .. } => "format",
        Error::Validation(_) => "validation",
        Error::State(_) => "state",
        Error::Io { .. } => "io",
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn features_from_tensor(path: &Path) -> Result<FeatureMap> {
    let t = read_tensor(path)?;
    let dims = t.dims().to_vec();
    let [c, h, w] = dims[..] else {
        return Err(Error::Validation(vec![format!(
            "{}: expected a C x H x W tensor, got dims {dims:?}",
            path.display()
        )]));
    };
    let data = t
        .into_f32()
        .ok_or_else(|| Error::Validation(vec![format!("{}: not float32", path.display())]))?;
    FeatureMap::new(c, h, w, data)
}

fn score_tensor(s: &ScoreMapPair) -> Tensor {
    let mut data = s.y_bg.clone();
    data.extend_from_slice(&s.y_fg);
    Tensor::f32(vec![2, s.height, s.width], data)
}

pub fn run(a: RunArgs) -> Result<()> {
    let bundle = read_bundle(&a.bundle)?;
    let weights = match (a.weights, a.seed) {
        (Some(path), _) => WeightsSource::File(path),
        (None, Some(seed)) => WeightsSource::Seed(seed),
        (None, None) => PipelineConfig::default().weights,
    };
    let cfg = PipelineConfig {
        k_global: a.k_global,
        k_local: a.k_local,
        history_l: a.history as usize,
        weights,
        ..PipelineConfig::default()
    };
    let preds = run_sequence(&bundle, &cfg)?;

    let masks = a.out.join("masks");
    create_dir(&masks)?;
    for p in &preds {
        write_label_mask(masks.join(format!("{:04}.png", p.frame_index)), &p.labels)?;
    }
    if a.dump_scores {
        let scores = a.out.join("scores");
        create_dir(&scores)?;
        for p in &preds {
            for (k, d) in p.diagnostics.iter().enumerate() {
                let stem = format!("{:04}_obj{}", p.frame_index, k + 1);
                write_tensor(
                    &score_tensor(&d.global),
                    scores.join(format!("{stem}_global.bmt")),
                )?;
                write_tensor(
                    &score_tensor(&d.local),
                    scores.join(format!("{stem}_local.bmt")),
                )?;
                let decoded = Tensor::f32(
                    vec![d.decoded.height(), d.decoded.width()],
                    d.decoded.fg().to_vec(),
                );
                write_tensor(&decoded, scores.join(format!("{stem}_decoded.bmt")))?;
            }
        }
    }

    // The decision is reported, not applied: bundles arrive at their export
    // resolution.
    let initial = bundle.initial_labels();
    let fg = initial.foreground_count();
    let decision = select_working_resolution(fg, &cfg);
    let (ih, iw) = initial.dims();
    let (wh, ww) = decision.apply(ih, iw);
    let weights_desc = match &cfg.weights {
        WeightsSource::Seed(s) => format!("seed:{s}"),
        WeightsSource::File(p) => format!("file:{}", p.display()),
    };
    let summary = format!(
        "frames = {}\nobjects = {}\nk_global = \"{}\"\nk_local = \"{}\"\nhistory = {}\nweights = {:?}\n\n\
         [resolution]\ninitial_foreground_pixels = {fg}\nthreshold = {}\ndecision = \"{}\"\n\
         image_height = {ih}\nimage_width = {iw}\nworking_height = {wh}\nworking_width = {ww}\n",
        preds.len(),
        bundle.objects(),
        cfg.k_global,
        cfg.k_local,
        cfg.history_l,
        weights_desc,
        cfg.fg_pixel_threshold,
        match decision {
            WorkingResolution::Native => "native",
            WorkingResolution::Downscale => "downscale",
        },
    );
    write_text(&a.out.join("run.toml"), &summary)
}

pub fn match_pair(a: MatchArgs) -> Result<()> {
    let reference = features_from_tensor(&a.reference)?;
    let query = features_from_tensor(&a.query)?;
    let (mh, mw, on) = read_binary_mask(&a.mask)?;
    let mut mask = ProbMask::from_binary(mh, mw, &on)?;
    let (rh, rw) = (reference.height(), reference.width());
    if (mh, mw) != (rh, rw) {
        mask = downsample_mask(&mask, rh, rw)?;
    }
    let mode = a.k.map_or(MatchMode::Surjective, MatchMode::Bijective);
    let y = match_frames(&reference, &query, &mask, mode)?;
    create_dir(&a.out)?;
    write_tensor(
        &Tensor::f32(vec![y.height, y.width], y.y_bg),
        a.out.join("y_bg.bmt"),
    )?;
    write_tensor(
        &Tensor::f32(vec![y.height, y.width], y.y_fg),
        a.out.join("y_fg.bmt"),
    )
}

/// Predicted label maps `NNNN.png`, numbered from 0 without gaps.
fn read_predictions(dir: &Path) -> Result<Vec<LabelMask>> {
    let dir: PathBuf = if dir.join("masks").is_dir() {
        dir.join("masks")
    } else {
        dir.to_path_buf()
    };
    let mut indices = vec![];
    for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
        let name = entry.map_err(io_err(&dir))?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if stem.len() == 4 {
                if let Ok(i) = stem.parse::<usize>() {
                    indices.push(i);
                }
            }
        }
    }
    indices.sort_unstable();
    if let Some(i) = indices
        .iter()
        .enumerate()
        .find(|(pos, &i)| *pos != i)
        .map(|(pos, _)| pos)
    {
        return Err(Error::Validation(vec![format!(
            "{}: prediction {i:04}.png is missing",
            dir.display()
        )]));
    }
    indices
        .iter()
        .map(|i| read_label_mask(dir.join(format!("{i:04}.png"))))
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let preds = read_predictions(&a.pred)?;
    let bundle = read_bundle(&a.gt)?;
    if preds.len() != bundle.frames.len() {
        return Err(Error::Validation(vec![format!(
            "{} predicted frames but the bundle has {}",
            preds.len(),
            bundle.frames.len()
        )]));
    }
    let gts = bundle
        .ground_truth
        .iter()
        .enumerate()
        .map(|(t, g)| {
            g.clone().ok_or_else(|| {
                Error::Validation(vec![format!("bundle has no ground truth for frame {t:04}")])
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_sequence(&preds, &gts)?;
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(&a.report, &report.to_toml())?;
    println!(
        "J_mean = {:.4}  F_mean = {:.4}  G_mean = {:.4}",
        report.j_mean, report.f_mean, report.g_mean
    );
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => SceneConfig::load(path)?,
        None => SceneConfig::distractor_demo(0),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    write_bundle(&generate_scene(&cfg)?, &a.out)
}

pub fn viz_scores(a: VizArgs) -> Result<()> {
    let t = read_tensor(&a.input)?;
    let dims = t.dims().to_vec();
    let (h, w) = match dims[..] {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(Error::Validation(vec![format!(
                "{}: expected an H x W score map, got dims {dims:?}",
                a.input.display()
            )]))
        }
    };
    let y = t
        .into_f32()
        .ok_or_else(|| Error::Validation(vec![format!("{}: not float32", a.input.display())]))?;
    render_score_map(&y, h, w, &a.out)
}
