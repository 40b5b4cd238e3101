//! Cross-modality structural sparsity: a per-patch score combining the
//! cosine similarity of the two modalities' patch embeddings with the
//! inverse product of their structural variances. Low values mark
//! information-rich patches, high values flat/redundant ones.

use crate::error::{Error, Result};
use crate::patch::PatchEmbeddings;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Per-pair score map over the patch grid, min-max normalized to `[0, 1]`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CmssMap {
    pub grid_side: usize,
    /// normalized scores, row-major, in `[0, 1]`
    pub values: Vec<f64>,
    /// unnormalized scores
    pub raw_values: Vec<f64>,
    /// true when the raw range collapsed and the map was filled with 0.5
    pub degenerate: bool,
}

impl CmssMap {
    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid_side + col]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Raw score for one embedding pair:
/// `(1 + cos(a, b)) / (2 * var(a) * var(b) + eps)`,
/// with `eps`-guarded norms in the cosine and population variances across
/// embedding dimensions.
pub fn raw_cmss(a: &[f32], b: &[f32], eps: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding lengths differ");
    assert!(a.len() >= 2, "embeddings must have at least 2 dims");
    assert!(eps > 0.0);
    let n = a.len() as f64;

    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    let mut sa = 0.0f64;
    let mut sb = 0.0f64;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
        sa += x;
        sb += y;
    }
    let cos = dot / (na.sqrt().max(eps) * nb.sqrt().max(eps));
    let mean_a = sa / n;
    let mean_b = sb / n;
    // population variance: E[x^2] - mean^2, clamped against fp cancellation
    let var_a = (na / n - mean_a * mean_a).max(0.0);
    let var_b = (nb / n - mean_b * mean_b).max(0.0);
    ((1.0 + cos) / (2.0 * var_a * var_b + eps)).max(0.0)
}

/// Min-max normalize; collapses to `0.5` everywhere when the range is
/// below `eps` (degenerate map).
pub fn min_max_normalize(raw: &[f64], eps: f64) -> (Vec<f64>, bool) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in raw {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < eps {
        (vec![0.5; raw.len()], true)
    } else {
        let span = hi - lo;
        (raw.iter().map(|&v| (v - lo) / span).collect(), false)
    }
}

/// Score every patch pair and normalize per map. One map is shared by both
/// modalities' mask draws (the score is symmetric in its arguments).
pub fn cmss_map(emb_rgb: &PatchEmbeddings, emb_t: &PatchEmbeddings, eps: f64) -> Result<CmssMap> {
    if emb_rgb.grid_side != emb_t.grid_side || emb_rgb.dim != emb_t.dim {
        return Err(Error::DimensionMismatch(format!(
            "embedding grids differ: {}x{} dim {} vs {}x{} dim {}",
            emb_rgb.grid_side, emb_rgb.grid_side, emb_rgb.dim, emb_t.grid_side, emb_t.grid_side, emb_t.dim
        )));
    }
    let n = emb_rgb.grid_side * emb_rgb.grid_side;
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let a = emb_rgb.embeddings.row(i);
        let b = emb_t.embeddings.row(i);
        raw.push(raw_cmss(a.as_slice().unwrap(), b.as_slice().unwrap(), eps));
    }
    let (values, degenerate) = min_max_normalize(&raw, eps);
    Ok(CmssMap { grid_side: emb_rgb.grid_side, values, raw_values: raw, degenerate })
}
