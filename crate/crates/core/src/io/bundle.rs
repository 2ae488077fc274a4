//! Sequence bundle directories.
//!
//! ```text
//! <bundle>/manifest.toml
//! <bundle>/frames/0000.bmt ...      C x H x W float32 features
//! <bundle>/gt/0000_obj1.png ...     initial masks, 0/255, image resolution
//! <bundle>/gt/NNNN_objK.png         optional later annotations
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{read_gray, write_binary_mask};
use super::tensor_file::{read_tensor, read_tensor_header, write_tensor, DType, Tensor};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, LabelMask};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub frames: usize,
    pub objects: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Unpadded image size when the exporter padded frames to a multiple of the
    /// feature stride.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_width: Option<usize>,
    pub frame_files: Vec<String>,
    pub mask_files: Vec<String>,
}

pub fn frame_file(i: usize) -> String {
    format!("frames/{i:04}.bmt")
}

pub fn mask_file(frame: usize, object: usize) -> String {
    format!("gt/{frame:04}_obj{object}.png")
}

/// One video's features and annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub manifest: Manifest,
    pub frames: Vec<FeatureMap>,
    /// Ground truth per frame at image resolution. Frame 0 is always present.
    pub ground_truth: Vec<Option<LabelMask>>,
}

impl SequenceBundle {
    /// Assembles a bundle and derives its manifest. Ground truth for frame 0 is
    /// required.
    pub fn new(
        frames: Vec<FeatureMap>,
        ground_truth: Vec<Option<LabelMask>>,
        objects: usize,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid_arg("bundle needs at least one frame"))?;
        let gt0 = ground_truth
            .first()
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::invalid_arg("bundle needs ground truth for frame 0"))?;
        if ground_truth.len() != frames.len() {
            return Err(Error::invalid_arg(
                "ground truth list must have one slot per frame",
            ));
        }
        let (c, h, w) = (first.channels(), first.height(), first.width());
        if frames
            .iter()
            .any(|f| (f.channels(), f.height(), f.width()) != (c, h, w))
        {
            return Err(Error::invalid_arg("all frames must share C x H x W"));
        }
        let (ih, iw) = gt0.dims();
        let mut mask_files = vec![];
        for (t, gt) in ground_truth.iter().enumerate() {
            if let Some(gt) = gt {
                if gt.dims() != (ih, iw) {
                    return Err(Error::invalid_arg(format!(
                        "ground truth for frame {t} has a different size"
                    )));
                }
                gt.check_bound(objects)?;
                mask_files.extend((1..=objects).map(|k| mask_file(t, k)));
            }
        }
        let manifest = Manifest {
            version: BUNDLE_VERSION,
            frames: frames.len(),
            objects,
            channels: c,
            height: h,
            width: w,
            image_height: ih,
            image_width: iw,
            original_height: None,
            original_width: None,
            frame_files: (0..frames.len()).map(frame_file).collect(),
            mask_files,
        };
        Ok(Self {
            manifest,
            frames,
            ground_truth,
        })
    }

    pub fn initial_labels(&self) -> &LabelMask {
        self.ground_truth[0]
            .as_ref()
            .expect("bundle invariant: frame 0 ground truth")
    }

    pub fn objects(&self) -> usize {
        self.manifest.objects
    }
}

/// Every problem found in a bundle directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }
}

fn parse_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| {
        let offset = e.span().map_or(0, |s| s.start) as u64;
        Error::format(offset, format!("{}: {}", path.display(), e.message()))
    })
}

/// Parses `frames/NNNN.bmt` into its index.
fn frame_index(name: &str) -> Option<usize> {
    let stem = name.strip_suffix(".bmt")?;
    (stem.len() == 4 && stem.bytes().all(|b| b.is_ascii_digit())).then(|| stem.parse().ok())?
}

/// Checks a bundle directory and reports every violation found.
pub fn validate_bundle(dir: impl AsRef<Path>) -> Result<ValidationReport> {
    let dir = dir.as_ref();
    let mut report = ValidationReport::default();
    if !dir.join(MANIFEST_FILE).is_file() {
        report.push(format!("missing {MANIFEST_FILE}"));
        return Ok(report);
    }
    let m = match parse_manifest(dir) {
        Ok(m) => m,
        Err(e) => {
            report.push(format!("unreadable manifest: {e}"));
            return Ok(report);
        }
    };
    if m.version != BUNDLE_VERSION {
        report.push(format!(
            "manifest version {} is not supported (expected {BUNDLE_VERSION})",
            m.version
        ));
    }
    if m.frames == 0 {
        report.push("manifest declares zero frames");
    }
    if m.objects == 0 {
        report.push("manifest declares zero objects");
    }
    if m.frame_files.len() != m.frames {
        report.push(format!(
            "manifest declares {} frames but lists {} frame files",
            m.frames,
            m.frame_files.len()
        ));
    }
    for (i, f) in m.frame_files.iter().enumerate() {
        if *f != frame_file(i) {
            report.push(format!(
                "frame entry {i} is `{f}`, expected `{}`",
                frame_file(i)
            ));
        }
    }

    // frame numbering on disk
    let present: BTreeSet<usize> = fs::read_dir(dir.join("frames"))
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter_map(|e| frame_index(&e.file_name().to_string_lossy()))
                .collect()
        })
        .unwrap_or_default();
    let last_present = present.iter().next_back().copied();
    for i in 0..m.frames {
        if present.contains(&i) {
            continue;
        }
        match last_present {
            Some(last) if last > i => report.push(format!("gap at {i:04}")),
            _ => report.push(format!("missing frame {i:04}")),
        }
    }
    if let Some(extra) = present.iter().find(|&&i| i >= m.frames) {
        report.push(format!(
            "frame {extra:04} exceeds declared frame count {}",
            m.frames
        ));
    }

    for i in present.iter().copied().filter(|&i| i < m.frames) {
        let rel = frame_file(i);
        match read_tensor_header(dir.join(&rel)) {
            Ok(h) => {
                if h.dtype != DType::F32 {
                    report.push(format!("{rel}: dtype is not float32"));
                }
                if h.dims.len() != 3 {
                    report.push(format!("{rel}: rank {} (expected 3)", h.dims.len()));
                    continue;
                }
                for (name, want, got) in [
                    ("C", m.channels, h.dims[0]),
                    ("H", m.height, h.dims[1]),
                    ("W", m.width, h.dims[2]),
                ] {
                    if want != got {
                        report.push(format!(
                            "{rel}: manifest says {name}={want}, file header says {got}"
                        ));
                    }
                }
                let expected = 6 + 12 + h.payload_len();
                if let Ok(meta) = fs::metadata(dir.join(&rel)) {
                    if meta.len() as usize != expected {
                        report.push(format!(
                            "{rel}: file is {} bytes, header implies {expected}",
                            meta.len()
                        ));
                    }
                }
            }
            Err(e) => report.push(format!("{rel}: {e}")),
        }
    }

    let listed: BTreeSet<&str> = m.mask_files.iter().map(String::as_str).collect();
    for k in 1..=m.objects {
        if !listed.contains(mask_file(0, k).as_str()) {
            report.push(format!("initial mask {} not listed", mask_file(0, k)));
        }
    }
    for rel in &m.mask_files {
        let path = dir.join(rel);
        if !path.is_file() {
            report.push(format!("missing mask {rel}"));
            continue;
        }
        match read_gray(&path) {
            Ok((h, w, px)) => {
                if (h, w) != (m.image_height, m.image_width) {
                    report.push(format!(
                        "{rel}: image is {h}x{w}, manifest says {}x{}",
                        m.image_height, m.image_width
                    ));
                }
                if px.iter().any(|&v| v != 0 && v != 255) {
                    report.push(format!("{rel}: mask values other than 0/255"));
                }
            }
            Err(e) => report.push(format!("{rel}: {e}")),
        }
    }
    Ok(report)
}

/// Parses `gt/NNNN_objK.png` into `(frame, object)`.
fn parse_mask_name(rel: &str) -> Option<(usize, usize)> {
    let stem = rel.strip_prefix("gt/")?.strip_suffix(".png")?;
    let (f, k) = stem.split_once("_obj")?;
    Some((f.parse().ok()?, k.parse().ok()?))
}

/// Reads and fully validates a bundle directory.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<SequenceBundle> {
    let dir = dir.as_ref();
    if dir.join(MANIFEST_FILE).is_file() {
        // surface syntax problems as format errors
        parse_manifest(dir)?;
    }
    let report = validate_bundle(dir)?;
    if !report.is_clean() {
        return Err(Error::Validation(report.violations));
    }
    let m = parse_manifest(dir)?;
    let frames = m
        .frame_files
        .iter()
        .map(|rel| {
            let t = read_tensor(dir.join(rel))?;
            let dims = t.dims().to_vec();
            let data = t
                .into_f32()
                .ok_or_else(|| Error::Validation(vec![format!("{rel}: not float32")]))?;
            FeatureMap::new(dims[0], dims[1], dims[2], data)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = m.image_height * m.image_width;
    let mut labels: Vec<Option<Vec<u8>>> = vec![None; m.frames];
    for rel in &m.mask_files {
        let (t, k) = parse_mask_name(rel)
            .filter(|&(t, k)| t < m.frames && (1..=m.objects).contains(&k))
            .ok_or_else(|| Error::Validation(vec![format!("unexpected mask entry `{rel}`")]))?;
        let (_, _, px) = read_gray(dir.join(rel))?;
        let slot = labels[t].get_or_insert_with(|| vec![0; n]);
        for (l, &v) in slot.iter_mut().zip(&px) {
            if v >= 128 {
                *l = k as u8;
            }
        }
    }
    let ground_truth = labels
        .into_iter()
        .map(|l| {
            l.map(|l| LabelMask::new(m.image_height, m.image_width, l))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceBundle {
        manifest: m,
        frames,
        ground_truth,
    })
}

/// Writes a bundle directory, creating it if needed.
pub fn write_bundle(bundle: &SequenceBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["frames", "gt"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let m = &bundle.manifest;
    for (rel, f) in m.frame_files.iter().zip(&bundle.frames) {
        let t = Tensor::f32(vec![f.channels(), f.height(), f.width()], f.data().to_vec());
        write_tensor(&t, dir.join(rel))?;
    }
    for rel in &m.mask_files {
        let (t, k) = parse_mask_name(rel)
            .ok_or_else(|| Error::invalid_arg(format!("bad mask entry `{rel}`")))?;
        let gt = bundle.ground_truth[t]
            .as_ref()
            .ok_or_else(|| Error::invalid_arg(format!("no ground truth for {rel}")))?;
        write_binary_mask(dir.join(rel), gt.height(), gt.width(), &gt.object(k as u8))?;
    }
    let text = toml::to_string(m).map_err(|e| Error::invalid_arg(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Path of frame `i` inside a bundle.
pub fn frame_path(dir: impl AsRef<Path>, i: usize) -> PathBuf {
    dir.as_ref().join(frame_file(i))
}
