//! Patch grids, the shared linear patch projection, and per-patch
//! normalized reconstruction targets.
//!
//! Grids are always square (`p x p`, row-major). Patch pixel vectors are
//! flattened `(y, x, channel)`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::imgio::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Modality {
    Rgb,
    Thermal,
}

/// An aligned two-modality image pair.
#[derive(Debug, Clone)]
pub struct RgbtPair {
    pub rgb: Image,
    pub thermal: Image,
    pub source_id: String,
    pub frame_index: Option<u64>,
    pub object_mask: Option<Mask>,
}

impl RgbtPair {
    pub fn validate(&self, patch_size: usize) -> Result<()> {
        if self.rgb.h != self.thermal.h || self.rgb.w != self.thermal.w {
            return Err(Error::DimensionMismatch(format!(
                "rgb {}x{} vs thermal {}x{}",
                self.rgb.h, self.rgb.w, self.thermal.h, self.thermal.w
            )));
        }
        if self.rgb.c != 3 || self.thermal.c != 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected rgb c=3, thermal c=1, got {} / {}",
                self.rgb.c, self.thermal.c
            )));
        }
        if self.rgb.h % patch_size != 0 || self.rgb.w % patch_size != 0 {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} not divisible by patch size {}",
                self.rgb.h, self.rgb.w, patch_size
            )));
        }
        if let Some(m) = &self.object_mask {
            if m.h != self.rgb.h || m.w != self.rgb.w {
                return Err(Error::DimensionMismatch("object mask shape mismatch".into()));
            }
        }
        Ok(())
    }
}

/// `p*p` rows of flattened patch pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPixels {
    pub patch_size: usize,
    pub grid_side: usize,
    pub channels: usize,
    /// shape `(p*p, patch_size^2 * channels)`
    pub patches: Array2<f32>,
}

/// Per-patch embedding vectors produced by the shared projection.
#[derive(Debug, Clone)]
pub struct PatchEmbeddings {
    pub grid_side: usize,
    pub dim: usize,
    pub modality: Modality,
    /// shape `(p*p, dim)`
    pub embeddings: Array2<f32>,
}

/// Per-patch standardized reconstruction targets.
#[derive(Debug, Clone)]
pub struct NormalizedTargets {
    pub grid_side: usize,
    /// shape `(p*p, patch_size^2 * channels)`
    pub targets: Array2<f32>,
    pub per_patch_mean: Vec<f32>,
    pub per_patch_std: Vec<f32>,
}

/// Split an image into non-overlapping patches, row-major.
pub fn patchify(img: &Image, patch_size: usize) -> Result<PatchPixels> {
    if patch_size == 0 || img.h % patch_size != 0 || img.w % patch_size != 0 {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} not divisible by patch size {}",
            img.h, img.w, patch_size
        )));
    }
    if img.h != img.w {
        return Err(Error::DimensionMismatch(format!(
            "expected square image, got {}x{}",
            img.h, img.w
        )));
    }
    let p = img.h / patch_size;
    let dim = patch_size * patch_size * img.c;
    let mut patches = Array2::<f32>::zeros((p * p, dim));
    for pr in 0..p {
        for pc in 0..p {
            let row = pr * p + pc;
            let mut k = 0;
            for y in 0..patch_size {
                for x in 0..patch_size {
                    for ch in 0..img.c {
                        patches[[row, k]] = img.get(pr * patch_size + y, pc * patch_size + x, ch);
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(PatchPixels { patch_size, grid_side: p, channels: img.c, patches })
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(px: &PatchPixels) -> Image {
    let p = px.grid_side;
    let ps = px.patch_size;
    let mut img = Image::zeros(p * ps, p * ps, px.channels);
    for pr in 0..p {
        for pc in 0..p {
            let row = pr * p + pc;
            let mut k = 0;
            for y in 0..ps {
                for x in 0..ps {
                    for ch in 0..px.channels {
                        img.set(pr * ps + y, pc * ps + x, ch, px.patches[[row, k]]);
                        k += 1;
                    }
                }
            }
        }
    }
    img
}

/// Replicate a single-channel patch grid to `n` identical channels,
/// preserving the `(y, x, channel)` flattening.
pub fn replicate_channels(px: &PatchPixels, n: usize) -> PatchPixels {
    assert_eq!(px.channels, 1, "replicate_channels expects single-channel input");
    let rows = px.grid_side * px.grid_side;
    let src_dim = px.patch_size * px.patch_size;
    let mut out = Array2::<f32>::zeros((rows, src_dim * n));
    for r in 0..rows {
        for k in 0..src_dim {
            let v = px.patches[[r, k]];
            for ch in 0..n {
                out[[r, k * n + ch]] = v;
            }
        }
    }
    PatchPixels { patch_size: px.patch_size, grid_side: px.grid_side, channels: n, patches: out }
}

/// Apply the shared linear projection `e = x W + b`.
///
/// Single-channel grids are replicated to 3 channels first so RGB and
/// thermal share one projection.
pub fn embed_patches(
    px: &PatchPixels,
    weight: &Array2<f32>,
    bias: &Array1<f32>,
    modality: Modality,
) -> Result<PatchEmbeddings> {
    let px3;
    let px = if px.channels == 1 {
        px3 = replicate_channels(px, 3);
        &px3
    } else {
        px
    };
    let in_dim = px.patch_size * px.patch_size * px.channels;
    if weight.nrows() != in_dim || bias.len() != weight.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "projection expects input {} -> [{}x{}] + [{}]",
            in_dim,
            weight.nrows(),
            weight.ncols(),
            bias.len()
        )));
    }
    let mut emb = px.patches.dot(weight);
    for mut row in emb.rows_mut() {
        row += bias;
    }
    Ok(PatchEmbeddings { grid_side: px.grid_side, dim: weight.ncols(), modality, embeddings: emb })
}

/// Standardize each patch to mean 0 / population std 1. Constant patches
/// map to all-zero targets with `eps` recorded as their std.
pub fn normalize_targets(px: &PatchPixels, eps: f32) -> NormalizedTargets {
    let rows = px.patches.nrows();
    let dim = px.patches.ncols();
    let mut targets = Array2::<f32>::zeros((rows, dim));
    let mut means = Vec::with_capacity(rows);
    let mut stds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = px.patches.row(r);
        let mean = row.sum() / dim as f32;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / dim as f32;
        let std = var.sqrt();
        means.push(mean);
        if std > eps {
            stds.push(std);
            for k in 0..dim {
                targets[[r, k]] = (row[k] - mean) / std;
            }
        } else {
            stds.push(eps);
            // leave target row at zero
        }
    }
    NormalizedTargets { grid_side: px.grid_side, targets, per_patch_mean: means, per_patch_std: stds }
}

/// Patch-level object labels: a patch is "object" iff at least half of its
/// pixels are inside the object mask.
pub fn patch_labels(mask: &Mask, patch_size: usize) -> Vec<bool> {
    assert!(mask.h % patch_size == 0 && mask.w % patch_size == 0);
    let p = mask.h / patch_size;
    let mut labels = Vec::with_capacity(p * p);
    for pr in 0..p {
        for pc in 0..p {
            labels.push(mask.coverage(pr * patch_size, pc * patch_size, patch_size, patch_size) >= 0.5);
        }
    }
    labels
}
