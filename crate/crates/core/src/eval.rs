//! Region (J) and contour (F) accuracy and per-sequence reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LabelMask;

/// Boundary tolerance as a fraction of the image diagonal.
pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 0.008;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid_arg(format!(
                "binary mask {height}x{width} needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_labels(m: &LabelMask, k: u8) -> Self {
        Self {
            height: m.height(),
            width: m.width(),
            data: m.object(k),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Foreground pixels with a 4-neighbor in the background or outside the image.
    pub fn boundary(&self) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let on = |y: isize, x: isize| {
            y >= 0
                && x >= 0
                && (y as usize) < h
                && (x as usize) < w
                && self.data[y as usize * w + x as usize]
        };
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                self.data[i] && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1))
            })
            .collect()
    }
}

fn check_shapes(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::invalid_arg(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Intersection over union; 1 when both masks are empty.
pub fn region_accuracy_j(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Dilates a boolean map by a Euclidean disk of radius `r`.
fn dilate(src: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    if r == 0 {
        return src.to_vec();
    }
    let ri = r as isize;
    let offsets: Vec<(isize, isize)> = (-ri..=ri)
        .flat_map(|dy| (-ri..=ri).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy * dy + dx * dx <= ri * ri)
        .collect();
    let mut out = vec![false; h * w];
    for (i, _) in src.iter().enumerate().filter(|(_, &b)| b) {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for &(dy, dx) in &offsets {
            let (ny, nx) = (y + dy, x + dx);
            if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                out[ny as usize * w + nx as usize] = true;
            }
        }
    }
    out
}

/// Match radius in pixels for an image of the given size.
pub fn boundary_radius(h: usize, w: usize, tol_factor: f64) -> usize {
    (tol_factor * ((h * h + w * w) as f64).sqrt()).round() as usize
}

/// Boundary F-measure with a tolerance of `round(tol_factor * diagonal)` pixels.
pub fn contour_accuracy_f(pred: &BinaryMask, gt: &BinaryMask, tol_factor: f64) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (h, w) = (pred.height, pred.width);
    let pb = pred.boundary();
    let gb = gt.boundary();
    let n_pred = pb.iter().filter(|&&b| b).count();
    let n_gt = gb.iter().filter(|&&b| b).count();
    if n_pred == 0 && n_gt == 0 {
        return Ok(1.0);
    }
    if n_pred == 0 || n_gt == 0 {
        return Ok(0.0);
    }
    let r = boundary_radius(h, w, tol_factor);
    let gd = dilate(&gb, h, w, r);
    let pd = dilate(&pb, h, w, r);
    let hit_p = pb.iter().zip(&gd).filter(|&(&b, &d)| b && d).count();
    let hit_g = gb.iter().zip(&pd).filter(|&(&b, &d)| b && d).count();
    let precision = hit_p as f64 / n_pred as f64;
    let recall = hit_g as f64 / n_gt as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: usize,
    pub object: usize,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub object: usize,
    #[serde(rename = "J_mean")]
    pub j_mean: f64,
    #[serde(rename = "F_mean")]
    pub f_mean: f64,
}

/// Sequence-level J/F/G summary. Frame 0 is excluded from all means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub objects: usize,
    pub evaluated_frames: usize,
    #[serde(rename = "J_mean")]
    pub j_mean: f64,
    #[serde(rename = "F_mean")]
    pub f_mean: f64,
    #[serde(rename = "G_mean")]
    pub g_mean: f64,
    #[serde(rename = "object")]
    pub per_object: Vec<ObjectScore>,
    #[serde(rename = "frame")]
    pub per_frame: Vec<FrameScore>,
}

impl EvalReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    // no evaluated frames: the only frame is the given annotation
    if n == 0 {
        1.0
    } else {
        s / n as f64
    }
}

/// Scores predicted label maps against ground truth, object by object.
pub fn evaluate_sequence(preds: &[LabelMask], gts: &[LabelMask]) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::invalid_arg(format!(
            "{} predicted frames but {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    if let Some(t) = preds
        .iter()
        .zip(gts)
        .position(|(p, g)| p.dims() != g.dims())
    {
        return Err(Error::invalid_arg(format!(
            "frame {t}: prediction is {:?}, ground truth is {:?}",
            preds[t].dims(),
            gts[t].dims()
        )));
    }
    let objects = gts.iter().map(LabelMask::max_label).max().unwrap_or(0) as usize;
    let mut per_frame = vec![];
    for (t, (p, g)) in preds.iter().zip(gts).enumerate().skip(1) {
        for k in 1..=objects {
            let pm = BinaryMask::from_labels(p, k as u8);
            let gm = BinaryMask::from_labels(g, k as u8);
            per_frame.push(FrameScore {
                frame: t,
                object: k,
                j: region_accuracy_j(&pm, &gm)?,
                f: contour_accuracy_f(&pm, &gm, DEFAULT_BOUNDARY_TOLERANCE)?,
            });
        }
    }
    let per_object = (1..=objects)
        .map(|k| {
            let rows = || per_frame.iter().filter(move |s| s.object == k);
            ObjectScore {
                object: k,
                j_mean: mean(rows().map(|s| s.j)),
                f_mean: mean(rows().map(|s| s.f)),
            }
        })
        .collect();
    let j_mean = mean(per_frame.iter().map(|s| s.j));
    let f_mean = mean(per_frame.iter().map(|s| s.f));
    Ok(EvalReport {
        frames: preds.len(),
        objects,
        evaluated_frames: preds.len().saturating_sub(1),
        j_mean,
        f_mean,
        g_mean: (j_mean + f_mean) / 2.0,
        per_object,
        per_frame,
    })
}
