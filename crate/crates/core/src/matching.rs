//! Reference-to-query pixel matching.
//!
//! The similarity matrix is stored reference-major: row `p` holds the scores of
//! reference pixel `p` against every query pixel, so the reference-wise top-K
//! filter is a contiguous row pass.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{unit_descriptors, FeatureMap, ProbMask};

/// Cosine similarities mapped linearly into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    pub ref_h: usize,
    pub ref_w: usize,
    pub query_h: usize,
    pub query_w: usize,
    data: Vec<f32>,
}

impl SimMatrix {
    pub fn from_parts(
        (ref_h, ref_w): (usize, usize),
        (query_h, query_w): (usize, usize),
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != ref_h * ref_w * query_h * query_w {
            return Err(Error::invalid_arg(format!(
                "similarity data has {} entries, expected {}",
                data.len(),
                ref_h * ref_w * query_h * query_w
            )));
        }
        Ok(Self {
            ref_h,
            ref_w,
            query_h,
            query_w,
            data,
        })
    }

    pub fn ref_size(&self) -> usize {
        self.ref_h * self.ref_w
    }

    pub fn query_size(&self) -> usize {
        self.query_h * self.query_w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, p: usize) -> &[f32] {
        let n = self.query_size();
        &self.data[p * n..(p + 1) * n]
    }

    pub fn get(&self, p: usize, q: usize) -> f32 {
        self.data[p * self.query_size() + q]
    }

    fn same_shape(&self, other: &SimMatrix) -> bool {
        (self.ref_h, self.ref_w, self.query_h, self.query_w)
            == (other.ref_h, other.ref_w, other.query_h, other.query_w)
    }
}

/// Background and foreground matching scores on the query grid. The two maps are
/// independent max-reductions and need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMapPair {
    pub height: usize,
    pub width: usize,
    pub y_bg: Vec<f32>,
    pub y_fg: Vec<f32>,
}

impl ScoreMapPair {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Number of matches each reference pixel keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopK {
    Finite(NonZeroUsize),
    Infinite,
}

impl TopK {
    pub fn new(k: usize) -> Result<Self> {
        NonZeroUsize::new(k)
            .map(TopK::Finite)
            .ok_or_else(|| Error::invalid_arg("top-K must be at least 1"))
    }

    /// True when no entry of a row with `n` columns would be discarded.
    pub fn keeps_all(self, n: usize) -> bool {
        match self {
            TopK::Finite(k) => k.get() >= n,
            TopK::Infinite => true,
        }
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::Finite(k) => write!(f, "{k}"),
            TopK::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for TopK {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(TopK::Infinite);
        }
        let k: usize = s
            .parse()
            .map_err(|_| format!("expected a positive integer or `inf`, got `{s}`"))?;
        NonZeroUsize::new(k)
            .map(TopK::Finite)
            .ok_or_else(|| "K must be at least 1".to_string())
    }
}

/// Surjective matching lets every reference pixel be referenced any number of
/// times; bijective matching first keeps only each reference pixel's top K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Surjective,
    Bijective(TopK),
}

impl MatchMode {
    pub fn top_k(self) -> TopK {
        match self {
            MatchMode::Surjective => TopK::Infinite,
            MatchMode::Bijective(k) => k,
        }
    }
}

fn check_channels(r: &FeatureMap, q: &FeatureMap) -> Result<()> {
    if r.channels() != q.channels() {
        return Err(Error::invalid_arg(format!(
            "channel mismatch: reference has {}, query has {}",
            r.channels(),
            q.channels()
        )));
    }
    Ok(())
}

/// Reference rows computed together, so each query channel slice is read once
/// per block instead of once per row.
const ROW_BLOCK: usize = 4;

/// Computes reference rows `p0..p0 + out.len() / n_qry` of similarities into
/// `out` (at most [`ROW_BLOCK`] rows).
///
/// Each entry is accumulated in channel order in double precision, which keeps
/// the self-similarity of a unit vector at exactly 1 after rounding to `f32`.
/// Blocking only changes which entries are in flight, not the order of the
/// additions within an entry.
fn similarity_rows(
    ref_unit: &[f64],
    n_ref: usize,
    p0: usize,
    qry_unit: &[f64],
    n_qry: usize,
    acc: &mut [f64],
    out: &mut [f32],
) {
    let rows = out.len() / n_qry;
    debug_assert!(rows <= ROW_BLOCK && acc.len() >= ROW_BLOCK * n_qry);
    let acc = &mut acc[..rows * n_qry];
    acc.fill(0.0);
    let channels = qry_unit.len() / n_qry;
    if rows == ROW_BLOCK {
        let (a01, a23) = acc.split_at_mut(2 * n_qry);
        let (s0, s1) = a01.split_at_mut(n_qry);
        let (s2, s3) = a23.split_at_mut(n_qry);
        for c in 0..channels {
            let base = c * n_ref + p0;
            let (w0, w1, w2, w3) = (
                ref_unit[base],
                ref_unit[base + 1],
                ref_unit[base + 2],
                ref_unit[base + 3],
            );
            let b = &qry_unit[c * n_qry..(c + 1) * n_qry];
            for q in 0..n_qry {
                let bq = b[q];
                s0[q] += w0 * bq;
                s1[q] += w1 * bq;
                s2[q] += w2 * bq;
                s3[q] += w3 * bq;
            }
        }
    } else {
        for (r, s) in acc.chunks_exact_mut(n_qry).enumerate() {
            for c in 0..channels {
                let a = ref_unit[c * n_ref + p0 + r];
                let b = &qry_unit[c * n_qry..(c + 1) * n_qry];
                for (sq, &bq) in s.iter_mut().zip(b) {
                    *sq += a * bq;
                }
            }
        }
    }
    for (o, &d) in out.iter_mut().zip(acc.iter()) {
        *o = ((d + 1.0) * 0.5).clamp(0.0, 1.0) as f32;
    }
}

/// `S[p][q] = (N(ref_p) . N(qry_q) + 1) / 2`, clamped into `[0, 1]`.
pub fn similarity_matrix(reference: &FeatureMap, query: &FeatureMap) -> Result<SimMatrix> {
    check_channels(reference, query)?;
    let (n_ref, n_qry) = (reference.pixels(), query.pixels());
    let ref_unit = unit_descriptors(reference);
    let qry_unit = unit_descriptors(query);
    let mut data = vec![0.0f32; n_ref * n_qry];
    let mut acc = vec![0.0f64; ROW_BLOCK * n_qry];
    for (b, block) in data.chunks_mut(ROW_BLOCK * n_qry).enumerate() {
        similarity_rows(
            &ref_unit,
            n_ref,
            b * ROW_BLOCK,
            &qry_unit,
            n_qry,
            &mut acc,
            block,
        );
    }
    Ok(SimMatrix {
        ref_h: reference.height(),
        ref_w: reference.width(),
        query_h: query.height(),
        query_w: query.width(),
        data,
    })
}

/// Keeps the `k` largest entries of `row` in place and replaces every other entry
/// with the minimum of the original row. Ties at the K-th value keep the lowest
/// query indices so exactly `k` entries survive.
///
/// `scratch` is reused between calls to avoid reallocating.
pub(crate) fn filter_row(row: &mut [f32], k: usize, scratch: &mut Vec<f32>) {
    let n = row.len();
    if k >= n {
        return;
    }
    scratch.clear();
    scratch.extend_from_slice(row);
    let (_, &mut kth, _) = scratch.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let row_min = row.iter().copied().fold(f32::INFINITY, f32::min);
    let above = row.iter().filter(|&&v| v > kth).count();
    let mut ties_left = k - above;
    for v in row.iter_mut() {
        if *v > kth {
            continue;
        }
        if *v == kth && ties_left > 0 {
            ties_left -= 1;
            continue;
        }
        *v = row_min;
    }
}

/// Reference-wise top-K filter.
pub fn topk_filter(s: &SimMatrix, k: TopK) -> SimMatrix {
    let n = s.query_size();
    let mut out = s.clone();
    if let TopK::Finite(k) = k {
        if k.get() < n {
            let mut scratch = Vec::with_capacity(n);
            for row in out.data.chunks_exact_mut(n) {
                filter_row(row, k.get(), &mut scratch);
            }
        }
    }
    out
}

/// Like [`topk_filter`] but takes an integer K and rejects `k < 1`.
pub fn topk_filter_checked(s: &SimMatrix, k: usize) -> Result<SimMatrix> {
    Ok(topk_filter(s, TopK::new(k)?))
}

/// Scales each reference row by the reference mask's background and foreground
/// probability at that pixel. Returns `(S_BG, S_FG)`.
pub fn mask_weighted_scores(s: &SimMatrix, m_ref: &ProbMask) -> Result<(SimMatrix, SimMatrix)> {
    if m_ref.dims() != (s.ref_h, s.ref_w) {
        return Err(Error::invalid_arg(format!(
            "reference mask is {}x{}, similarity rows are {}x{}",
            m_ref.height(),
            m_ref.width(),
            s.ref_h,
            s.ref_w
        )));
    }
    let n = s.query_size();
    let weigh = |w: &[f32]| {
        let mut out = s.clone();
        for (row, &m) in out.data.chunks_exact_mut(n).zip(w) {
            row.iter_mut().for_each(|v| *v *= m);
        }
        out
    };
    Ok((weigh(m_ref.bg()), weigh(m_ref.fg())))
}

/// Query-wise maximum over reference pixels.
pub fn reduce_query_max(s_bg: &SimMatrix, s_fg: &SimMatrix) -> Result<ScoreMapPair> {
    if !s_bg.same_shape(s_fg) {
        return Err(Error::invalid_arg(
            "background and foreground score shapes differ",
        ));
    }
    let n = s_bg.query_size();
    let colmax = |s: &SimMatrix| {
        let mut y = vec![0.0f32; n];
        for row in s.data.chunks_exact(n) {
            for (m, &v) in y.iter_mut().zip(row) {
                *m = m.max(v);
            }
        }
        y
    };
    Ok(ScoreMapPair {
        height: s_bg.query_h,
        width: s_bg.query_w,
        y_bg: colmax(s_bg),
        y_fg: colmax(s_fg),
    })
}

/// Full matching pass: similarity, optional top-K filter on the raw scores, mask
/// weighting and query-wise max.
///
/// Rows are streamed so the full similarity matrix is never materialized; the
/// result is bit-identical to composing the individual operations.
pub fn match_frames(
    reference: &FeatureMap,
    query: &FeatureMap,
    m_ref: &ProbMask,
    mode: MatchMode,
) -> Result<ScoreMapPair> {
    check_channels(reference, query)?;
    if m_ref.dims() != (reference.height(), reference.width()) {
        return Err(Error::invalid_arg(format!(
            "reference mask is {}x{}, reference features are {}x{}",
            m_ref.height(),
            m_ref.width(),
            reference.height(),
            reference.width()
        )));
    }
    let (n_ref, n_qry) = (reference.pixels(), query.pixels());
    let ref_unit = unit_descriptors(reference);
    let qry_unit = unit_descriptors(query);
    let k = match mode.top_k() {
        TopK::Finite(k) if k.get() < n_qry => Some(k.get()),
        _ => None,
    };

    let mut acc = vec![0.0f64; ROW_BLOCK * n_qry];
    let mut block = vec![0.0f32; ROW_BLOCK * n_qry];
    let mut scratch = Vec::with_capacity(n_qry);
    let mut y_bg = vec![0.0f32; n_qry];
    let mut y_fg = vec![0.0f32; n_qry];
    for p0 in (0..n_ref).step_by(ROW_BLOCK) {
        let rows = ROW_BLOCK.min(n_ref - p0);
        let block = &mut block[..rows * n_qry];
        similarity_rows(&ref_unit, n_ref, p0, &qry_unit, n_qry, &mut acc, block);
        for (r, row) in block.chunks_exact_mut(n_qry).enumerate() {
            let (wb, wf) = (m_ref.bg()[p0 + r], m_ref.fg()[p0 + r]);
            if let Some(k) = k {
                filter_row(row, k, &mut scratch);
            }
            for ((b, f), &s) in y_bg.iter_mut().zip(y_fg.iter_mut()).zip(row.iter()) {
                *b = b.max(s * wb);
                *f = f.max(s * wf);
            }
        }
    }
    Ok(ScoreMapPair {
        height: query.height(),
        width: query.width(),
        y_bg,
        y_fg,
    })
}
